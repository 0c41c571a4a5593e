"""Encoders from domain descriptions to mediator-augmented games."""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from .game import GameBuilder, GameError
from .mediator import MediatorAugmentedGame


def encode_nf_correlated(utilities, concept="ce", objective="welfare"):
    """Correlated (CE) or coarse correlated (CCE) equilibria of a normal-form game.

    utilities has shape (n, |A_1|, ..., |A_n|).  The mediator draws a pure
    profile.  Under CE each player sees its own recommendation and picks an
    action; under CCE each player first commits to follow or not, and a
    non-follower picks an action without seeing the recommendation.
    objective is "welfare", "p<i>" or an explicit tensor of shape A.
    """
    u = np.asarray(utilities, dtype=np.float64)
    if u.ndim < 2:
        raise GameError("utility tensor needs a player axis and action axes")
    n = u.shape[0]
    shape = u.shape[1:]
    if len(shape) != n:
        raise GameError(f"tensor shape mismatch: {n} players but {len(shape)} action axes")
    if n < 2:
        raise GameError("need at least two players")
    if any(k == 0 for k in shape):
        raise GameError("empty action set")
    concept = concept.lower()
    if concept not in ("ce", "cce"):
        raise GameError(f"unknown concept {concept!r}")
    u0 = objective_tensor(u, objective)
    profiles = list(itertools.product(*[range(k) for k in shape]))
    labels = [",".join(map(str, a)) for a in profiles]

    b = GameBuilder(n)
    kids = b.decision(b.root, 0, "rec", labels)
    for node, rec in zip(kids, profiles):
        _nf_players(b, node, 1, rec, [], u, u0, shape, concept)
    game = b.build()
    return MediatorAugmentedGame.from_game(
        game, {"kind": "normal-form", "concept": concept, "tensor": u, "objective": u0})


def _nf_players(b, node, i, rec, played, u, u0, shape, concept):
    n = len(shape)
    if i > n:
        a = tuple(played)
        b.terminal(node, [u0[a]] + [u[j][a] for j in range(n)])
        return
    acts = [str(k) for k in range(shape[i - 1])]
    if concept == "ce":
        kids = b.decision(node, i, f"P{i}:rec={rec[i - 1]}", acts, rec[i - 1])
        for k, c in enumerate(kids):
            _nf_players(b, c, i + 1, rec, played + [k], u, u0, shape, concept)
    else:
        follow, deviate = b.decision(node, i, f"P{i}:commit", ("follow", "deviate"), 0)
        _nf_players(b, follow, i + 1, rec, played + [rec[i - 1]], u, u0, shape, concept)
        kids = b.decision(deviate, i, f"P{i}:play", acts)
        for k, c in enumerate(kids):
            _nf_players(b, c, i + 1, rec, played + [k], u, u0, shape, concept)


def objective_tensor(u, objective):
    if isinstance(objective, str):
        if objective == "welfare":
            return u.sum(axis=0)
        if objective.startswith("p") and objective[1:].isdigit():
            i = int(objective[1:])
            if not 1 <= i <= u.shape[0]:
                raise GameError(f"objective names player {i}, game has {u.shape[0]}")
            return u[i - 1].copy()
        raise GameError(f"unknown objective {objective!r}")
    t = np.asarray(objective, dtype=np.float64)
    if t.shape != u.shape[1:]:
        raise GameError("objective tensor shape mismatch")
    return t


def _frac(x):
    return Fraction(x).limit_denominator(10**6) if not isinstance(x, Fraction) else x


def default_payment_step(valuations, budget):
    vals = [_frac(v) for v in valuations] + [_frac(budget)]
    den = math.lcm(*[v.denominator for v in vals])
    num = 0
    for v in vals:
        num = math.gcd(num, int(v * den))
    return Fraction(num, den) if num else Fraction(1, den)


def _fmt(q):
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


class AuctionSpec:
    """Sequential single-item auction with budgets.

    visibility "public": each bidder sees every bidder's current and past
    valuations; "private": only its own.  Outcomes (winner, payment) are
    public.  Payments lie on the grid {0, step, ..., budget}; with
    ir=True a winner is never charged more than its report.
    """

    def __init__(self, rounds, valuations, budget, bidders=2, payment_step=None,
                 visibility="public", ir=True):
        if rounds < 1:
            raise GameError("rounds must be at least 1")
        if len(valuations) < 2:
            raise GameError("need at least two valuations")
        if bidders < 2:
            raise GameError("need at least two bidders")
        if _frac(budget) < 0:
            raise GameError("budget < 0")
        if visibility not in ("public", "private"):
            raise GameError(f"unknown visibility {visibility!r}")
        self.rounds = rounds
        self.valuations = sorted(_frac(v) for v in valuations)
        self.budget = _frac(budget)
        self.bidders = bidders
        self.step = _frac(payment_step) if payment_step is not None else \
            default_payment_step(self.valuations, self.budget)
        if self.step <= 0:
            raise GameError("payment grid empty")
        k = int(self.budget / self.step)
        self.grid = [self.step * j for j in range(k + 1)]
        if not self.grid:
            raise GameError("payment grid empty")
        self.visibility = visibility
        self.ir = ir

    def as_dict(self):
        return {"rounds": self.rounds, "valuations": [_fmt(v) for v in self.valuations],
                "budget": _fmt(self.budget), "bidders": self.bidders,
                "payment_step": _fmt(self.step), "visibility": self.visibility, "ir": self.ir}

    def outcomes(self, reports, budgets):
        """Mediator actions: None or (winner, payment)."""
        out = [None]
        for w in range(self.bidders):
            cap = budgets[w]
            if self.ir:
                cap = min(cap, self.valuations[reports[w]])
            out.extend((w + 1, p) for p in self.grid if p <= cap)
        return out


def encode_sequential_auction(rounds, valuations, budget, bidders=2, payment_step=None,
                              visibility="public", ir=True):
    spec = AuctionSpec(rounds, valuations, budget, bidders, payment_step, visibility, ir)
    contexts = {}
    mag = MediatorAugmentedGame(
        bidders, lambda free: _build_auction(spec, free, contexts),
        {"kind": "auction", "spec": spec, "mediator_context": contexts})
    return mag


def _build_auction(spec, free, contexts):
    n = spec.bidders
    V = spec.valuations
    m = len(V)
    profiles = list(itertools.product(range(m), repeat=n))
    vlabels = [",".join(map(str, p)) for p in profiles]
    probs = np.full(len(profiles), 1.0 / len(profiles))
    report_actions = tuple(_fmt(v) for v in V)
    action_cache = {}
    b = GameBuilder(n)
    free_items = []
    term_order = []

    def actions_for(reports, budgets):
        key = (reports, budgets)
        hit = action_cache.get(key)
        if hit is None:
            outs = spec.outcomes(reports, budgets)
            labels = tuple("none" if o is None else f"{o[0]}@{_fmt(o[1])}" for o in outs)
            hit = action_cache[key] = (outs, labels)
        return hit

    def round_(node, r, budgets, med_hist, obs, totals, nfree):
        if r == spec.rounds:
            b.terminal(node, totals)
            term_order.append(node)
            free_items.append(nfree)
            return
        kids = b.chance(node, probs, vlabels if r == 0 else None)
        for c, vals in zip(kids, profiles):
            if spec.visibility == "public":
                tag = "v" + ",".join(map(str, vals))
                seen = tuple(o + tag for o in obs)
            else:
                seen = tuple(o + f"v{vals[i]}" for i, o in enumerate(obs))
            report(c, 0, [], vals, r, budgets, med_hist, seen, totals, nfree)

    def report(node, i, reps, vals, r, budgets, med_hist, obs, totals, nfree):
        if i == n:
            mediate(node, tuple(reps), vals, r, budgets, med_hist, obs, totals, nfree)
            return
        if i + 1 in free:
            kids = b.decision(node, i + 1, f"b{i + 1}|{obs[i]}", report_actions, vals[i])
            for a, c in enumerate(kids):
                o = obs[:i] + (obs[i] + f"r{a}",) + obs[i + 1:]
                report(c, i + 1, reps + [a], vals, r, budgets, med_hist, o, totals, nfree)
        else:
            o = obs[:i] + (obs[i] + f"r{vals[i]}",) + obs[i + 1:]
            report(node, i + 1, reps + [vals[i]], vals, r, budgets, med_hist, o, totals, nfree)

    def mediate(node, reps, vals, r, budgets, med_hist, obs, totals, nfree):
        outs, labels = actions_for(reps, budgets)
        rtag = ",".join(map(str, reps))
        key = f"m|{med_hist}{rtag}"
        if key not in contexts:
            contexts[key] = (reps, budgets, outs)
        kids = b.decision(node, 0, key, labels)
        for c, o, lab in zip(kids, outs, labels):
            if o is None:
                nb, t, nf = budgets, totals, nfree
            else:
                w, p = o
                nb = budgets[:w - 1] + (budgets[w - 1] - p,) + budgets[w:]
                t = list(totals)
                t[0] += float(p)
                t[w] += float(V[vals[w - 1]] - p)
                nf = nfree + (p == 0)
            tag = f">{lab};"
            round_(c, r + 1, nb, f"{med_hist}{rtag}{tag}", tuple(x + tag for x in obs), t, nf)

    round_(b.root, 0, (spec.budget,) * n, "", ("",) * n, [0.0] * (n + 1), 0)
    game = b.build()
    order = np.argsort(np.asarray(term_order), kind="stable")
    game.free_items = np.asarray(free_items, dtype=np.int64)[order]
    return game


MECHANISMS = ("fp", "sp", "sp-reserve")


def _mechanism_outcome(kind, reserve, reports, budgets, spec, tie_break):
    """Distribution over outcomes as {(winner, payment) or None: prob}."""
    V = spec.valuations
    eff = [min(V[r], b) for r, b in zip(reports, budgets)]
    hi = max(eff)
    winners = [w for w, e in enumerate(eff) if e == hi]
    if tie_break == "lowest":
        winners = winners[:1]
    rest = sorted(eff, reverse=True)
    second = rest[1]
    if kind != "fp" and hi < reserve:
        return {None: 1.0}
    out = {}
    for w in winners:
        p = hi if kind == "fp" else max(second, reserve)
        key = (w + 1, min(p, budgets[w]))
        out[key] = out.get(key, 0.0) + 1.0 / len(winners)
    return out


def fixed_mechanism(kind, M, reserve=None, tie_break="uniform"):
    """Mediator strategy (canonical sequence form) running a standard auction each round.

    kind: "fp" (first price), "sp" (second price) or "sp-reserve" with a
    reserve price on the payment grid.  Bids are reports capped at the
    remaining budget; a second-price winner pays max(second bid, reserve),
    and nothing is sold when the top bid is below the reserve.  Ties go to
    a uniformly random top bidder, or to the lowest index with
    tie_break="lowest".
    """
    if M.metadata.get("kind") != "auction":
        raise GameError("fixed mechanisms need an auction game")
    kind = {"first-price": "fp", "second-price": "sp", "reserve": "sp-reserve",
            "second-price-with-reserve": "sp-reserve"}.get(kind, kind)
    if kind not in MECHANISMS:
        raise GameError(f"unknown mechanism {kind!r}")
    if tie_break not in ("uniform", "lowest"):
        raise GameError(f"unknown tie-break rule {tie_break!r}")
    spec = M.metadata["spec"]
    if kind == "sp-reserve":
        if reserve is None:
            raise GameError("reserve price required")
        reserve = _frac(reserve)
        if reserve not in spec.grid:
            raise GameError(f"reserve {_fmt(reserve)} outside the payment grid")
    else:
        reserve = Fraction(0)
    tp = M.mediator_treeplex
    contexts = M.metadata["mediator_context"]
    b = np.zeros(tp.num_sequences)
    b[0] = 1.0
    for j, key in enumerate(tp.keys):
        reps, budgets, outs = contexts[key]
        dist = _mechanism_outcome(kind, reserve, reps, budgets, spec, tie_break)
        index = {o: a for a, o in enumerate(outs)}
        for o, q in dist.items():
            if o not in index:
                raise GameError(f"outcome {o} not available at {key}")
            b[tp.seq_start[j] + index[o]] += q
    return tp.to_sequence(b)


def parse_mechanism(label):
    """'fp' | 'sp' | 'r<p>' (second price, reserve p) -> (kind, reserve)."""
    label = label.strip().lower()
    if label in ("fp", "first-price"):
        return "fp", None
    if label in ("sp", "second-price"):
        return "sp", None
    if label.startswith("r") and len(label) > 1:
        try:
            return "sp-reserve", Fraction(label[1:])
        except (ValueError, ZeroDivisionError):
            pass
    raise GameError(f"unknown mechanism {label!r}")
