"""Exact optimal equilibria of small games by linear programming.

The program maximizes u0(mu, d) over mediator strategies subject to one
constraint u_i(mu, x, d_-i) - u_i(mu, d) <= 0 per player i and pure
strategy x of i.  It is solved with a dense two-phase tableau simplex using
Bland's rule, in floating point or exact rationals.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .game import DECISION, GameError
from .treeplex import RecallError


class LPError(GameError):
    pass


@dataclass
class LPResult:
    status: str
    x: list
    value: object
    duals_ub: list = field(default_factory=list)
    duals_eq: list = field(default_factory=list)
    pivots: int = 0


def simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, exact=False, tol=1e-9,
            max_pivots=100_000):
    """Maximize c.x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0.

    Returns an LPResult with status "optimal", "infeasible" or "unbounded".
    Duals are the multipliers of the rows (nonnegative for A_ub at a maximum).
    With exact=True every number is a Fraction and tol is ignored.
    """
    num = Fraction if exact else float
    tol = 0 if exact else tol
    c = [num(v) for v in c]
    n = len(c)
    rows, rhs, kinds = [], [], []
    for A, b, kind in ((A_ub, b_ub, "ub"), (A_eq, b_eq, "eq")):
        if A is None:
            continue
        for r, v in zip(A, b):
            r = [num(a) for a in r]
            if len(r) != n:
                raise LPError("constraint row length does not match the objective")
            rows.append(r)
            rhs.append(num(v))
            kinds.append(kind)
    m = len(rows)
    # columns: x (n), slacks for ub rows, artificials for every row needing one
    ub_rows = [k for k in range(m) if kinds[k] == "ub"]
    slack_col = {k: n + j for j, k in enumerate(ub_rows)}
    ncol = n + len(ub_rows)
    sign = [1] * m
    for k in range(m):
        if rhs[k] < 0:
            sign[k] = -1
    art_col = {}
    basis = [None] * m
    for k in range(m):
        if kinds[k] == "ub" and sign[k] == 1:
            basis[k] = slack_col[k]
        else:
            art_col[k] = ncol
            ncol += 1
            basis[k] = art_col[k]
    T = []
    for k in range(m):
        row = [num(0)] * (ncol + 1)
        for j in range(n):
            row[j] = rows[k][j] * sign[k]
        if k in slack_col:
            row[slack_col[k]] = num(sign[k])
        if k in art_col:
            row[art_col[k]] = num(1)
        row[-1] = rhs[k] * sign[k]
        T.append(row)
    if not exact:
        T = np.array(T, dtype=np.float64) if m else np.zeros((0, ncol + 1))
    artificial = set(art_col.values())
    pivots = 0

    def pivot(r, s):
        nonlocal pivots
        pivots += 1
        if pivots > max_pivots:
            raise LPError("pivot limit reached")
        if exact:
            pr = T[r]
            pv = pr[s]
            T[r] = pr = [v / pv for v in pr]
            for k in range(m):
                if k != r and T[k][s] != 0:
                    f = T[k][s]
                    T[k] = [a - f * b for a, b in zip(T[k], pr)]
        else:
            T[r] /= T[r, s]
            col = T[:, s].copy()
            col[r] = 0.0
            T[:] -= np.outer(col, T[r])
        basis[r] = s

    def reduced(cost, allowed):
        # reduced cost of column j: cost_j - sum_k cost_basis(k) * T[k][j]
        cb = [cost[b] for b in basis]
        if exact:
            red = []
            for j in range(ncol):
                red.append(cost[j] - sum(cb[k] * T[k][j] for k in range(m)) if allowed[j] else None)
            return red
        red = np.asarray(cost, dtype=np.float64)[:ncol] - np.asarray(cb) @ T[:, :ncol] if m else \
            np.asarray(cost, dtype=np.float64)[:ncol]
        return [red[j] if allowed[j] else None for j in range(ncol)]

    def run(cost, allowed):
        while True:
            red = reduced(cost, allowed)
            enter = next((j for j in range(ncol) if red[j] is not None and red[j] > tol), None)
            if enter is None:
                return "optimal"
            best, leave = None, None
            for k in range(m):
                a = T[k][enter]
                if a > tol:
                    ratio = T[k][-1] / a
                    if best is None or ratio < best - tol or (abs(ratio - best) <= tol and basis[k] < basis[leave]):
                        best, leave = ratio, k
            if leave is None:
                return "unbounded"
            pivot(leave, enter)

    if artificial:
        cost1 = [num(0)] * ncol
        for j in artificial:
            cost1[j] = num(-1)
        run(cost1, [True] * ncol)
        infeas = sum(T[k][-1] for k in range(m) if basis[k] in artificial)
        if infeas > (tol * 10 if not exact else 0):
            return LPResult("infeasible", [], None, pivots=pivots)
        # drive remaining artificials out of the basis
        for k in range(m):
            if basis[k] in artificial:
                s = next((j for j in range(ncol) if j not in artificial and abs(T[k][j]) > tol), None)
                if s is not None:
                    pivot(k, s)
    cost2 = list(c) + [num(0)] * (ncol - n)
    allowed = [j not in artificial for j in range(ncol)]
    status = run(cost2, allowed)
    if status != "optimal":
        return LPResult(status, [], None, pivots=pivots)
    x = [num(0)] * n
    for k in range(m):
        if basis[k] < n:
            x[basis[k]] = T[k][-1]
    value = sum(ci * xi for ci, xi in zip(c, x))
    # duals y = c_B B^-1; B^-1 sits in the initial-basis columns
    cb = [cost2[b] if b not in artificial else num(0) for b in basis]
    duals = []
    for k in range(m):
        col = slack_col[k] if (k in slack_col and k not in art_col) else art_col.get(k, slack_col.get(k))
        y = sum(cb[r] * T[r][col] for r in range(m))
        duals.append(y * sign[k])
    y_ub = [duals[k] for k in range(m) if kinds[k] == "ub"]
    y_eq = [duals[k] for k in range(m) if kinds[k] == "eq"]
    return LPResult("optimal", x, value, y_ub, y_eq, pivots)


def count_pure_strategies(tp):
    """Number of reachability-pruned pure strategies on a treeplex."""
    children = _children_by_sequence(tp)

    def count(seq):
        total = 1
        for I in children.get(seq, ()):
            total *= sum(count(int(tp.seq_start[I] + a)) for a in range(tp.num_actions[I]))
        return total

    return count(0)


def _children_by_sequence(tp):
    out = {}
    for I in range(tp.num_infosets):
        out.setdefault(int(tp.parent_seq[I]), []).append(I)
    return out


def enumerate_pure_strategies(tp, cap=10**6):
    """All pure sequence-form strategies of a treeplex, only choosing actions at reached infosets."""
    total = count_pure_strategies(tp)
    if total > cap:
        raise LPError(f"{total} pure strategies exceed the cap {cap}")
    children = _children_by_sequence(tp)

    def expand(seq):
        # list of tuples of chosen sequences below seq
        parts = []
        for I in children.get(seq, ()):
            options = []
            for a in range(tp.num_actions[I]):
                s = int(tp.seq_start[I] + a)
                options.extend((s,) + rest for rest in expand(s))
            parts.append(options)
        return [sum(combo, ()) for combo in itertools.product(*parts)]

    out = []
    for chosen in expand(0):
        x = np.zeros(tp.num_sequences)
        x[0] = 1.0
        x[list(chosen)] = 1.0
        out.append(x)
    return out


def enumerate_pure_deviations(M, i, cap=10**6):
    """Pure strategies of player i in its deviation game."""
    return enumerate_pure_strategies(M.deviation_game(i).treeplex(i), cap)


def _bilinear(g, agent, player):
    """Dense matrix B with u_player = x_agent^T B x_player on game g."""
    ta, tb = g.treeplex(agent), g.treeplex(player)
    B = np.zeros((ta.num_sequences, tb.num_sequences))
    np.add.at(B, (ta.terminal_seq, tb.terminal_seq), g.chance_reach * g.utilities[:, player])
    return B


@dataclass
class OracleResult:
    value: float
    mu: np.ndarray
    critical_lambda: float
    duals: list
    num_constraints: int
    representation: str
    strategies: list = None  # mediator pure strategies when the mixture form is used

    def to_dict(self):
        return {"value": self.value, "critical_lambda": self.critical_lambda,
                "num_constraints": self.num_constraints,
                "representation": self.representation}


def _constraint_rows(M, cap, mediator_rows):
    """Yield (player, coefficient row) for every pure deviation.

    mediator_rows(g, vec) maps a vector over g's local mediator treeplex (or
    pure strategies) to LP variables.
    """
    out = []
    total = 0
    for i in range(1, M.num_players + 1):
        g = M.deviation_game(i)
        devs = enumerate_pure_deviations(M, i, cap)
        total += len(devs)
        if total > cap:
            raise LPError(f"more than {cap} deviation constraints")
        d = M.direct_strategy(i)
        for x in devs:
            out.append((i, mediator_rows(g, i, x - d)))
    return out


def solve_lp(M, exact=False, cap=10**6):
    """Optimal value and mediator strategy of the optimal-equilibrium program."""
    try:
        tp0 = M.mediator_treeplex
    except RecallError:
        return _solve_lp_mixture(M, exact, cap)
    ns = tp0.num_sequences

    def rows_for(g, i, diff):
        B = _bilinear(g, 0, i)
        local = B @ diff
        row = np.zeros(ns)
        np.add.at(row, M.mediator_map(g), local)
        return row

    cons = _constraint_rows(M, cap, rows_for)
    base = M.base
    obj = np.zeros(ns)
    np.add.at(obj, M.mediator_map(base), np.bincount(
        base.treeplex(0).terminal_seq, weights=base.chance_reach * base.utilities[:, 0],
        minlength=base.treeplex(0).num_sequences))
    A_eq = np.zeros((tp0.num_infosets + 1, ns))
    b_eq = np.zeros(tp0.num_infosets + 1)
    A_eq[0, 0] = 1.0
    b_eq[0] = 1.0
    for I in range(tp0.num_infosets):
        s = tp0.seq_start[I]
        A_eq[I + 1, s:s + tp0.num_actions[I]] = 1.0
        A_eq[I + 1, tp0.parent_seq[I]] -= 1.0
    A_ub = np.array([r for _, r in cons]) if cons else np.zeros((0, ns))
    res = _run(obj, A_ub, A_eq, b_eq, exact)
    mu = np.array([float(v) for v in res.x])
    return OracleResult(float(res.value), mu, _critical(cons, res), res.duals_ub,
                        len(cons), "sequence-form")


def _run(obj, A_ub, A_eq, b_eq, exact):
    if exact:
        conv = lambda a: [[Fraction(v).limit_denominator(10**12) for v in r] for r in a]
        res = simplex([Fraction(v).limit_denominator(10**12) for v in obj], conv(A_ub),
                      [0] * len(A_ub), conv(A_eq), [Fraction(v).limit_denominator(10**12) for v in b_eq],
                      exact=True)
    else:
        res = simplex(obj, A_ub, np.zeros(len(A_ub)), A_eq, b_eq)
    if res.status == "infeasible":
        # happens when some direct strategy is strictly worse than a deviation
        # whatever the mediator does (the game does not fit the revelation principle)
        raise LPError("program infeasible: no mediator strategy makes the direct strategies "
                      f"optimal (constraint magnitude range {_cond(A_ub):.3g})")
    if res.status != "optimal":
        raise LPError(f"program reported {res.status}; "
                      f"constraint magnitude range {_cond(A_ub):.3g}")
    return res


def _cond(A):
    a = np.abs(np.asarray(A, dtype=np.float64))
    nz = a[a > 0]
    return float(nz.max() / nz.min()) if len(nz) else 1.0


def _critical(cons, res):
    # a multiplier at least max_i sum_x y_(i,x) makes the max-form relaxation tight
    per = {}
    for (i, _), y in zip(cons, res.duals_ub):
        per[i] = per.get(i, 0.0) + max(float(y), 0.0)
    return max(per.values(), default=0.0)


def _mediator_infosets(M):
    keys = {}
    for g in [M.base] + [M.deviation_game(i) for i in range(1, M.num_players + 1)]:
        for I, k in enumerate(g.infoset_keys):
            if g.infoset_owner[I] == 0:
                keys.setdefault(k, len(g.infoset_actions[I]))
    return keys


def _pure_reach(g, choice):
    """Terminal indicator of a pure mediator strategy (infoset key -> action)."""
    ok = np.ones(g.num_nodes, dtype=bool)
    med = (g.kind == DECISION) & (g.owner == 0)
    chosen = np.array([choice.get(k, -1) for k in g.infoset_keys], dtype=np.int64)
    pa = g.parent_action
    for lev in g.levels[1:]:
        p = g.parent[lev]
        bad = med[p] & (chosen[g.infoset[p]] != pa[lev])
        ok[lev] = ok[p] & ~bad
    return ok[g.terminals].astype(np.float64)


def _solve_lp_mixture(M, exact, cap):
    keys = _mediator_infosets(M)
    names = sorted(keys)
    total = 1
    for k in names:
        total *= keys[k]
        if total > cap:
            raise LPError(f"more than {cap} mediator pure strategies")
    pures = [dict(zip(names, combo)) for combo in itertools.product(*[range(keys[k]) for k in names])]
    reach_cache = {}

    def reach(g, j):
        key = (id(g), j)
        if key not in reach_cache:
            reach_cache[key] = g.chance_reach * _pure_reach(g, pures[j])
        return reach_cache[key]

    def rows_for(g, i, diff):
        tp = g.treeplex(i)
        w = diff[tp.terminal_seq] * g.utilities[:, i]
        return np.array([reach(g, j) @ w for j in range(len(pures))])

    cons = _constraint_rows(M, cap, rows_for)
    base = M.base
    obj = np.array([reach(base, j) @ base.utilities[:, 0] for j in range(len(pures))])
    A_eq = np.ones((1, len(pures)))
    A_ub = np.array([r for _, r in cons]) if cons else np.zeros((0, len(pures)))
    res = _run(obj, A_ub, A_eq, np.ones(1), exact)
    w = np.array([float(v) for v in res.x])
    return OracleResult(float(res.value), w, _critical(cons, res), res.duals_ub,
                        len(cons), "mixture", pures)
