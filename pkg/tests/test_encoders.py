import itertools
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import CHICKEN, COORDINATION, PENNIES_NF, random_game, to_sequence
from medopt.encoders import (default_payment_step, encode_nf_correlated, encode_sequential_auction,
                             fixed_mechanism, parse_mechanism)
from medopt.game import GameError
from medopt.mediator import MediatorAugmentedGame
from medopt.solvers import certify, free_item_rate

QUARTERS = [F(k, 4) for k in range(5)]


def _point_mass(M, profile):
    tp = M.mediator_treeplex
    j = tp.keys.index("rec")
    k = tp.actions[j].index(",".join(map(str, profile)))
    b = np.zeros(tp.num_sequences)
    b[0] = 1.0
    b[tp.seq_start[j] + k] = 1.0
    return b


def _random_mu(tp, rng):
    b = tp.uniform_behavioral()
    for j in range(tp.num_infosets):
        s = tp.seq_start[j]
        b[s:s + tp.num_actions[j]] = rng.dirichlet(np.ones(tp.num_actions[j]))
    return tp.to_sequence(b)


def test_ce_mediator_has_one_pure_strategy_per_profile():
    M = encode_nf_correlated(np.zeros((2, 2, 2)), "ce")
    tp = M.mediator_treeplex
    assert tp.num_infosets == 1 and tp.num_sequences == 5
    rng = np.random.default_rng(0)
    for _ in range(100):
        mu = _random_mu(tp, rng)
        assert M.deviation_gain(mu, 1) == 0.0 and M.deviation_gain(mu, 2) == 0.0


@pytest.mark.parametrize("concept", ["ce", "cce"])
def test_direct_strategy_is_neutral(concept):
    rng = np.random.default_rng(5)
    M = encode_nf_correlated(rng.random((3, 2, 3, 2)), concept)
    base = M.base
    for _ in range(50):
        mu = _random_mu(M.mediator_treeplex, rng)
        reach = base.chance_reach * M.restrict_mediator(mu, base)[base.treeplex(0).terminal_seq]
        for i in (1, 2, 3):
            assert M.player_value(mu, i) == pytest.approx(float(reach @ base.utilities[:, i]), abs=1e-12)
            assert M.deviation_gain(mu, i) >= -1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_deviation_gain_nonnegative_on_random_games(seed):
    M = MediatorAugmentedGame.from_game(random_game(seed, n=2, depth=4))
    mu = _random_mu(M.mediator_treeplex, np.random.default_rng(seed))
    for i in (1, 2):
        assert M.deviation_gain(mu, i) >= -1e-9


def test_matching_pennies_point_mass_gains():
    M = encode_nf_correlated(PENNIES_NF, "ce")
    for profile in itertools.product(range(2), repeat=2):
        mu = _point_mass(M, profile)
        gains = [M.deviation_gain(mu, i) for i in (1, 2)]
        # brute force over both unilateral deviations
        brute = []
        for i in (0, 1):
            base = PENNIES_NF[i][profile]
            alt = []
            for a in range(2):
                q = list(profile)
                q[i] = a
                alt.append(PENNIES_NF[i][tuple(q)])
            brute.append(max(alt) - base)
        assert gains == pytest.approx(brute)
        assert sorted(gains) == [0.0, 2.0]


def test_strict_nash_point_mass_has_zero_gain():
    # prisoner's dilemma: (1, 1) is a strict dominant-strategy equilibrium
    u = np.array([[[3, 0], [4, 1]], [[3, 4], [0, 1]]], dtype=float)
    M = encode_nf_correlated(u, "ce")
    mu = _point_mass(M, (1, 1))
    assert [M.deviation_gain(mu, i) for i in (1, 2)] == [0.0, 0.0]
    mu = _point_mass(M, (0, 0))
    assert [M.deviation_gain(mu, i) for i in (1, 2)] == [1.0, 1.0]


def test_payoff_independent_of_own_action_gives_zero_gain():
    u = np.zeros((2, 2, 2))
    u[0] = [[1, 2], [1, 2]]  # player 1's payoff depends only on player 2
    u[1] = [[0, 1], [3, 2]]
    M = encode_nf_correlated(u, "ce")
    mu = _random_mu(M.mediator_treeplex, np.random.default_rng(1))
    assert M.deviation_gain(mu, 1) == pytest.approx(0.0, abs=1e-12)


def test_cce_deviator_does_not_see_recommendation():
    M = encode_nf_correlated(COORDINATION, "cce")
    g = M.deviation_game(1)
    keys = [k for k in g.infoset_keys if k.startswith("P1")]
    assert sorted(keys) == ["P1:commit", "P1:play"]


def test_nf_errors():
    with pytest.raises(GameError, match="shape mismatch"):
        encode_nf_correlated(np.zeros((3, 2, 2)))
    with pytest.raises(GameError, match="empty action set"):
        encode_nf_correlated(np.zeros((2, 0, 2)))
    with pytest.raises(GameError, match="objective"):
        encode_nf_correlated(CHICKEN, objective="p3")


def test_objective_variants():
    M = encode_nf_correlated(CHICKEN, "ce", objective="p1")
    mu = _point_mass(M, (1, 0))
    assert M.objective(mu) == pytest.approx(1.0)
    M = encode_nf_correlated(CHICKEN, "ce", objective=np.array([[0, 1], [2, 3]]))
    assert M.objective(_point_mass(M, (1, 1))) == 3.0


@pytest.mark.parametrize("ir", [True, False])
def test_single_round_terminal_count(ir):
    M = encode_sequential_auction(1, [0, 1], 1, payment_step=F(1, 2), ir=ir)
    grid = [F(0), F(1, 2), F(1)]
    V = [F(0), F(1)]
    count = 0
    for vals in itertools.product(V, repeat=2):
        for reports in itertools.product(V, repeat=2):
            outcomes = 1 + sum(1 for r in reports for p in grid if p <= (min(r, 1) if ir else 1))
            count += outcomes
    assert M.game.num_terminals == count
    assert count == (80 if ir else 112)


def test_payment_step_default():
    assert default_payment_step(QUARTERS, 1) == F(1, 4)
    assert default_payment_step([0, F(1, 3)], 1) == F(1, 3)
    with pytest.raises(GameError, match="budget"):
        encode_sequential_auction(1, [0, 1], -1)
    with pytest.raises(GameError, match="valuations"):
        encode_sequential_auction(1, [1], 1)


def _outcome_probs(M, mu, reports):
    tp = M.mediator_treeplex
    contexts = M.metadata["mediator_context"]
    beh = tp.to_behavioral(mu)
    for j, key in enumerate(tp.keys):
        reps, budgets, outs = contexts[key]
        if reps == reports and budgets == (1, 1):
            p = beh[tp.seq_start[j]:tp.seq_start[j] + tp.num_actions[j]]
            return {o: float(q) for o, q in zip(outs, p) if q > 0}
    raise KeyError(reports)


def test_fixed_mechanism_rules():
    M = encode_sequential_auction(1, QUARTERS, 1)
    sp = fixed_mechanism("second-price", M)
    assert _outcome_probs(M, sp, (4, 2)) == {(1, F(1, 2)): 1.0}
    fp = fixed_mechanism("fp", M)
    assert _outcome_probs(M, fp, (1, 3)) == {(2, F(3, 4)): 1.0}
    r = fixed_mechanism("sp-reserve", M, reserve=F(3, 4))
    assert _outcome_probs(M, r, (2, 2)) == {None: 1.0}
    assert _outcome_probs(M, r, (4, 1)) == {(1, F(3, 4)): 1.0}
    assert _outcome_probs(M, sp, (2, 2)) == {(1, F(1, 2)): 0.5, (2, F(1, 2)): 0.5}
    low = fixed_mechanism("sp", M, tie_break="lowest")
    assert _outcome_probs(M, low, (2, 2)) == {(1, F(1, 2)): 1.0}


def test_fixed_mechanism_errors():
    M = encode_sequential_auction(1, QUARTERS, 1)
    with pytest.raises(GameError, match="reserve 1/3 outside the payment grid"):
        fixed_mechanism("sp-reserve", M, reserve=F(1, 3))
    with pytest.raises(GameError, match="unknown mechanism"):
        fixed_mechanism("vickrey-clarke", M)
    with pytest.raises(GameError, match="auction"):
        fixed_mechanism("sp", encode_nf_correlated(CHICKEN))
    assert parse_mechanism("r0.5") == ("sp-reserve", F(1, 2))
    assert parse_mechanism("R3/4") == ("sp-reserve", F(3, 4))
    with pytest.raises(GameError):
        parse_mechanism("x")


def _simulate(kind, reserve, rounds=2, V=QUARTERS, budget=F(1)):
    """Exact truthful revenue and per-play free-item probability of a standard auction."""

    def rec(r, budgets):
        if r == rounds:
            return F(0), F(0)
        revenue = free = F(0)
        w = F(1, len(V) ** 2)
        for vals in itertools.product(V, repeat=2):
            bids = [min(v, b) for v, b in zip(vals, budgets)]
            top = max(bids)
            if kind != "fp" and top < reserve:
                rv, fr = rec(r + 1, budgets)
                revenue += w * rv
                free += w * fr
                continue
            winners = [i for i in range(2) if bids[i] == top]
            for i in winners:
                price = top if kind == "fp" else max(min(bids), reserve)
                nb = list(budgets)
                nb[i] -= price
                rv, fr = rec(r + 1, tuple(nb))
                q = w / len(winners)
                revenue += q * (price + rv)
                free += q * (1 if price == 0 else fr)
        return revenue, free

    return rec(0, (budget, budget))


@pytest.fixture(scope="module")
def auction():
    return encode_sequential_auction(2, QUARTERS, 1)


@pytest.mark.parametrize("label,kind,reserve", [
    ("fp", "fp", None), ("sp", "sp", None), ("r1/4", "sp-reserve", F(1, 4)),
    ("r1/2", "sp-reserve", F(1, 2)), ("r3/4", "sp-reserve", F(3, 4))])
def test_baseline_revenue_and_free_rate_match_simulation(auction, label, kind, reserve):
    mu = fixed_mechanism(kind, auction, reserve)
    revenue, free = _simulate(kind, reserve or F(0))
    assert auction.objective(mu) == pytest.approx(float(revenue), abs=1e-12)
    assert free_item_rate(auction, mu) == pytest.approx(float(free), abs=1e-12)


def test_single_round_second_price_free_rate_closed_form():
    M = encode_sequential_auction(1, QUARTERS, 1)
    mu = fixed_mechanism("sp", M)
    # free iff the lower bid is 0
    assert free_item_rate(M, mu) == pytest.approx(1 - (4 / 5) ** 2, abs=1e-12)


def test_never_allocating_mechanism_has_no_free_items():
    M = encode_sequential_auction(1, QUARTERS, 1)
    mu = fixed_mechanism("sp-reserve", M, reserve=1)
    assert free_item_rate(M, mu) == 0.0
    tp = M.mediator_treeplex
    b = np.zeros(tp.num_sequences)
    b[0] = 1.0
    b[tp.seq_start] = 1.0  # outcome "none" everywhere
    assert free_item_rate(M, tp.to_sequence(b)) == 0.0
    assert M.objective(tp.to_sequence(b)) == 0.0


def test_free_item_rate_needs_auction():
    with pytest.raises(ValueError, match="auction"):
        free_item_rate(encode_nf_correlated(CHICKEN), np.ones(5))


@pytest.mark.parametrize("label,revenue,exploit", [
    ("fp", 1.2584, 0.5376), ("sp", 0.5584, 0.0432), ("r1/2", 0.8788, 0.0190)])
def test_baseline_points(auction, label, revenue, exploit):
    kind, reserve = parse_mechanism(label)
    obj, gains, _ = certify(auction, fixed_mechanism(kind, auction, reserve))
    assert obj == pytest.approx(revenue, abs=1e-4)
    assert sum(gains) == pytest.approx(exploit, abs=1e-4)


def test_truthful_report_is_the_direct_strategy(auction):
    g = auction.deviation_game(1)
    x = auction.direct_strategy(1)
    tp = g.treeplex(1)
    beh = tp.to_behavioral(x)
    reached = 0
    for j, key in enumerate(tp.keys):
        if x[tp.parent_seq[j]] == 0:
            continue
        reached += 1
        # key "b1|..." ends with this round's valuations "v<a>,<b>"
        own = int(key.rsplit("v", 1)[1].split(",")[0])
        assert beh[tp.seq_start[j] + own] == 1.0
    # 25 public valuation profiles per round; truthful profile (i, j) leaves
    # 1 + (i + 1) + (j + 1) outcomes under the IR cap
    outcomes = sum(3 + i + j for i in range(5) for j in range(5))
    assert reached == 25 + outcomes * 25


def test_direct_strategies_only_needed_where_reached():
    M = encode_nf_correlated(COORDINATION, "cce")
    x = M.direct_strategy(1)
    tp = M.deviation_game(1).treeplex(1)
    assert tp.is_valid(x)
    assert to_sequence(tp, {"P1:commit": np.array([1.0, 0.0])})[1] == 1.0
