import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from helpers import CHICKEN, COORDINATION, PENNIES_NF, infosets_of, random_game
from medopt.encoders import encode_nf_correlated
from medopt.game import GameBuilder
from medopt.generators import kuhn3, randnf
from medopt.mediator import MediatorAugmentedGame
from medopt.oracle import (LPError, _solve_lp_mixture, count_pure_strategies, enumerate_pure_deviations,
                           enumerate_pure_strategies, simplex, solve_lp)
from medopt.solvers import certify


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2))
def test_simplex_matches_reference_solver(seed, n, m, k):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    # x0 is strictly feasible; the box keeps the program bounded
    x0 = rng.uniform(0, 0.2, size=n)
    b = A @ x0 + rng.uniform(0, 2, size=m)
    A_ub = np.vstack([A, np.eye(n)])
    b_ub = np.concatenate([b, np.full(n, 3.0)])
    A_eq = rng.normal(size=(k, n))
    b_eq = A_eq @ x0
    ours = simplex(c, A_ub, b_ub, A_eq if k else None, b_eq if k else None)
    ref = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq if k else None, b_eq=b_eq if k else None,
                  bounds=(0, None), method="highs")
    assert ref.status == 0
    assert ours.status == "optimal"
    assert ours.value == pytest.approx(-ref.fun, abs=1e-7)
    x = np.array(ours.x)
    assert np.all(A_ub @ x <= b_ub + 1e-8) and np.all(x >= -1e-12)
    if k:
        assert np.allclose(A_eq @ x, b_eq, atol=1e-8)
    # strong duality from the reported multipliers
    dual = np.dot(ours.duals_ub, b_ub) + (np.dot(ours.duals_eq, b_eq) if k else 0.0)
    assert dual == pytest.approx(ours.value, abs=1e-7)


def test_simplex_exact_and_special_cases():
    res = simplex([3, 2], [[1, 1], [1, 3]], [4, 6], exact=True)
    assert res.status == "optimal"
    assert res.value == Fraction(12) and all(isinstance(v, Fraction) for v in res.x)
    assert simplex([1, 1], [[1, 1]], [1], [[1, 1]], [2]).status == "infeasible"
    assert simplex([1, 0], [[-1, 1]], [1]).status == "unbounded"
    with pytest.raises(LPError, match="row length"):
        simplex([1, 1], [[1]], [1])


def test_simplex_degenerate_cycling_example_terminates():
    # Beale's example cycles under the largest-coefficient rule
    c = [Fraction(3, 4), -150, Fraction(1, 50), -6]
    A = [[Fraction(1, 4), -60, Fraction(-1, 25), 9],
         [Fraction(1, 2), -90, Fraction(-1, 50), 3],
         [0, 0, 1, 0]]
    for exact in (True, False):
        res = simplex(c, A, [0, 0, 1], exact=exact)
        assert res.status == "optimal"
        assert float(res.value) == pytest.approx(0.05)


def _tree(shape):
    """Single-player game from a nested spec: ("I", [children]) or None for a terminal."""
    b = GameBuilder(1)

    def grow(v, node, k=[0]):
        if node is None:
            b.terminal(v, [0, 0])
            return
        kind, kids = node
        if kind == "c":
            vs = b.chance(v, np.full(len(kids), 1 / len(kids)))
        else:
            vs = b.decision(v, 1, kind, [str(a) for a in range(len(kids))])
        for c, sub in zip(vs, kids):
            grow(c, sub)

    grow(b.root, shape)
    return b.build().treeplex(1)


def test_pure_strategy_counts():
    assert count_pure_strategies(_tree(("I", [None, None, None]))) == 3
    # two infosets on different chance branches: both always reachable
    tp = _tree(("c", [("I", [None, None]), ("J", [None, None])]))
    assert count_pure_strategies(tp) == 4
    # J only after action 0 of I: choosing 1 at I makes J irrelevant
    tp = _tree(("I", [("J", [None, None]), None]))
    assert count_pure_strategies(tp) == 3
    xs = enumerate_pure_strategies(tp)
    assert len({x.tobytes() for x in xs}) == 3
    assert all(tp.is_valid(x) for x in xs)
    with pytest.raises(LPError, match="exceed the cap"):
        enumerate_pure_strategies(tp, cap=2)


def _reach_sets(game, agent):
    keys = infosets_of(game, agent)
    names = sorted(keys)
    tp = game.treeplex(agent)
    seen = set()
    for combo in itertools.product(*[range(keys[k]) for k in names]):
        b = np.zeros(tp.num_sequences)
        b[0] = 1.0
        for k, a in zip(names, combo):
            b[tp.sequence_index(k, a)] = 1.0
        x = tp.to_sequence(b)
        seen.add(x.tobytes())
    return seen


@pytest.mark.parametrize("seed", range(8))
def test_enumeration_matches_brute_force(seed):
    g = random_game(seed, n=2, depth=5)
    for agent in (1, 2):
        tp = g.treeplex(agent)
        if tp.num_infosets > 12:
            continue
        brute = _reach_sets(g, agent)
        ours = {x.tobytes() for x in enumerate_pure_strategies(tp)}
        assert ours == brute
        assert count_pure_strategies(tp) == len(brute)


def test_kuhn_rank3_count_matches_brute_force():
    g = kuhn3(3)
    assert count_pure_strategies(g.treeplex(1)) == len(_reach_sets(g, 1))


def _classic_nf_lp(u, concept, objective):
    """Textbook correlated-equilibrium LP over joint profiles (independent of the tree encoding)."""
    n = u.shape[0]
    shape = u.shape[1:]
    profiles = list(itertools.product(*[range(k) for k in shape]))
    rows = []
    for i in range(n):
        if concept == "ce":
            pairs = [(a, b) for a in range(shape[i]) for b in range(shape[i]) if a != b]
        else:
            pairs = [(None, b) for b in range(shape[i])]
        for a, b in pairs:
            row = []
            for p in profiles:
                if a is not None and p[i] != a:
                    row.append(0.0)
                    continue
                q = list(p)
                q[i] = b
                row.append(u[i][tuple(q)] - u[i][p])
            rows.append(row)
    c = np.array([objective[p] for p in profiles])
    res = linprog(-c, A_ub=np.array(rows), b_ub=np.zeros(len(rows)), A_eq=np.ones((1, len(profiles))),
                  b_eq=[1.0], bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("concept", ["ce", "cce"])
def test_value_matches_textbook_program(seed, concept):
    a = 2 + seed % 2
    u = randnf(seed, 2, a)
    for objective in ("welfare", "p1"):
        M = encode_nf_correlated(u, concept, objective)
        ref = _classic_nf_lp(u, concept, u.sum(axis=0) if objective == "welfare" else u[0])
        assert solve_lp(M).value == pytest.approx(ref, abs=1e-8)


def test_three_by_three_seed_42():
    u = randnf(42, 2, 3)
    M = encode_nf_correlated(u, "ce")
    res = solve_lp(M)
    assert res.value == pytest.approx(_classic_nf_lp(u, "ce", u.sum(axis=0)), abs=1e-6)
    assert solve_lp(M, exact=True).value == pytest.approx(res.value, abs=1e-9)


def test_three_player_instance():
    u = randnf(3, 3, 2)
    for concept in ("ce", "cce"):
        M = encode_nf_correlated(u, concept)
        assert solve_lp(M).value == pytest.approx(_classic_nf_lp(u, concept, u.sum(axis=0)), abs=1e-8)


def test_known_values():
    assert solve_lp(encode_nf_correlated(PENNIES_NF, "cce")).value == pytest.approx(0.0, abs=1e-12)
    res = solve_lp(encode_nf_correlated(COORDINATION, "ce"), exact=True)
    assert res.value == 4.0
    assert solve_lp(encode_nf_correlated(CHICKEN, "ce")).value == pytest.approx(1.5)
    assert solve_lp(encode_nf_correlated(CHICKEN, "cce")).value == pytest.approx(1.5)
    u = np.zeros((2, 2, 3))
    target = np.array([[0.1, 0.9, 0.3], [0.2, 0.4, 0.0]])
    assert solve_lp(encode_nf_correlated(u, "ce", target)).value == pytest.approx(0.9)


def test_coordination_has_sixteen_constraints():
    # CE: two recommendations, each followed by two actions, per player
    M = encode_nf_correlated(COORDINATION, "ce")
    assert [len(enumerate_pure_deviations(M, i)) for i in (1, 2)] == [4, 4]
    assert solve_lp(M).num_constraints == 8
    res = solve_lp(M)
    assert res.mu[M.mediator_treeplex.sequence_index("rec", 0)] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(6))
def test_solution_satisfies_every_constraint(seed):
    u = randnf(100 + seed, 2, 3)
    for concept in ("ce", "cce"):
        M = encode_nf_correlated(u, concept)
        res = solve_lp(M)
        obj, gains, gap = certify(M, res.mu)
        assert obj == pytest.approx(res.value, abs=1e-8)
        assert gap <= 1e-8
        assert M.mediator_treeplex.flow_residual(res.mu) <= 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_sequence_and_mixture_forms_agree(seed):
    M = MediatorAugmentedGame.from_game(random_game(seed, n=2, depth=3))
    try:
        a = solve_lp(M)
    except LPError as e:
        # a random game need not admit a mediator that makes action 0 optimal
        assert "infeasible" in str(e)
        with pytest.raises(LPError, match="infeasible"):
            _solve_lp_mixture(M, False, 10**6)
        return
    b = _solve_lp_mixture(M, False, 10**6)
    assert a.value == pytest.approx(b.value, abs=1e-8)
    assert b.representation == "mixture"


def test_infeasible_program_is_reported():
    # the only action of interest, 0, is strictly dominated for player 1
    b = GameBuilder(1)
    kids = b.decision(b.root, 1, "k", ["a", "b"], 0)
    b.terminal(kids[0], [1, 0])
    b.terminal(kids[1], [0, 1])
    with pytest.raises(LPError, match="infeasible"):
        solve_lp(MediatorAugmentedGame.from_game(b.build()))


def _forgetful_mediator():
    """The mediator picks a signal, forgets it, then picks again; player 1 sees the signal."""
    b = GameBuilder(1)
    u = {(0, 0, 0): (3, 0), (0, 0, 1): (0, 2), (0, 1, 0): (1, 1), (0, 1, 1): (2, 0),
         (1, 0, 0): (0, 1), (1, 0, 1): (4, 0), (1, 1, 0): (2, 2), (1, 1, 1): (0, 3)}
    for s, v in enumerate(b.decision(b.root, 0, "signal", ["a", "b"])):
        for a, w in enumerate(b.decision(v, 1, f"P1:{s}", ["x", "y"], s)):
            for m, t in enumerate(b.decision(w, 0, "again", ["l", "r"])):
                b.terminal(t, u[(s, a, m)])
    return MediatorAugmentedGame.from_game(b.build()), u


def test_imperfect_recall_mediator_uses_mixtures():
    M, u = _forgetful_mediator()
    res = solve_lp(M)
    assert res.representation == "mixture"
    # independent program: mixtures over the 4 mediator pure strategies,
    # one constraint per deviation of player 1 (a map signal -> action)
    pures = list(itertools.product(range(2), repeat=2))
    c = [sum(0.0 + u[(s, s, m)][0] for s in [sig]) for sig, m in pures]
    rows = []
    for dev in itertools.product(range(2), repeat=2):
        rows.append([u[(s, dev[s], m)][1] - u[(s, s, m)][1] for s, m in pures])
    ref = linprog(-np.array(c), A_ub=rows, b_ub=np.zeros(4), A_eq=np.ones((1, 4)), b_eq=[1.0],
                  bounds=(0, None), method="highs")
    assert res.value == pytest.approx(-ref.fun, abs=1e-9)


def test_constraint_cap():
    M = encode_nf_correlated(randnf(1, 2, 3), "ce")
    with pytest.raises(LPError, match="cap|more than"):
        solve_lp(M, cap=10)


def _l1_value(M, lam):
    """max over mu of u0(mu, d) - lam * sum_i max_x gain, as a program in (mu, t)."""
    tp = M.mediator_treeplex
    ns = tp.num_sequences
    base = M.base
    obj = np.zeros(ns)
    np.add.at(obj, M.mediator_map(base), np.bincount(
        base.treeplex(0).terminal_seq, weights=base.chance_reach * base.utilities[:, 0],
        minlength=base.treeplex(0).num_sequences))
    n = M.num_players
    rows = []
    for i in range(1, n + 1):
        g = M.deviation_game(i)
        t0, ti = g.treeplex(0), g.treeplex(i)
        d = M.direct_strategy(i)
        for x in enumerate_pure_deviations(M, i):
            w = (x - d)[ti.terminal_seq] * g.chance_reach * g.utilities[:, i]
            local = np.bincount(t0.terminal_seq, weights=w, minlength=t0.num_sequences)
            row = np.zeros(ns + n)
            np.add.at(row, M.mediator_map(g), local)
            row[ns + i - 1] = -1.0
            rows.append(row)
    A_eq = np.zeros((tp.num_infosets + 1, ns + n))
    A_eq[0, 0] = 1.0
    for I in range(tp.num_infosets):
        s = tp.seq_start[I]
        A_eq[I + 1, s:s + tp.num_actions[I]] = 1.0
        A_eq[I + 1, tp.parent_seq[I]] -= 1.0
    b_eq = np.zeros(len(A_eq))
    b_eq[0] = 1.0
    c = np.concatenate([obj, -lam * np.ones(n)])
    res = linprog(-c, A_ub=np.array(rows), b_ub=np.zeros(len(rows)), A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("concept", ["ce", "cce"])
def test_multipliers_above_the_critical_value_are_exact(seed, concept):
    u = randnf(200 + seed, 2, 2)
    M = encode_nf_correlated(u, concept)
    res = solve_lp(M)
    lam = res.critical_lambda
    for factor in (1.0001, 1.5, 4.0):
        assert _l1_value(M, factor * lam + 1e-9) == pytest.approx(res.value, abs=1e-8)
    if lam > 1e-6:
        # strictly below the multiplier, the relaxation is loose
        assert _l1_value(M, 0.5 * lam) > res.value + 1e-9


def test_chicken_critical_multiplier():
    res = solve_lp(encode_nf_correlated(CHICKEN, "ce"))
    assert res.critical_lambda == pytest.approx(0.75)
