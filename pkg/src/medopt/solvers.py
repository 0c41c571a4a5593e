"""Top-level solvers: direct Lagrangian self-play and the threshold bisection."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lagrangian import build_L1, build_L2
from .regret import canonical_algo, default_alternating
from .selfplay import SelfPlay, selfplay


class BudgetExhausted(RuntimeError):
    """The inner solver ran out of iterations before either certificate held."""

    def __init__(self, message, bracket, history):
        super().__init__(message)
        self.bracket = bracket
        self.history = history


SCHEDULES = {
    "sqrt4": lambda T: T ** 0.25,
    "sqrt2": lambda T: T ** 0.5,
}


def resolve_lambda(lam, T):
    if isinstance(lam, str):
        if lam not in SCHEDULES:
            try:
                return float(lam)
            except ValueError:
                raise ValueError(f"unknown multiplier schedule {lam!r}") from None
        return float(SCHEDULES[lam](T))
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise ValueError(f"multiplier must be finite and >= 0, got {lam}")
    return lam


@dataclass
class SolveReport:
    method: str
    objective: float
    equilibrium_gap: float
    per_player_gains: list
    strategy: np.ndarray
    strategy_last: np.ndarray
    iterations: int
    wall_ms: float
    algo: str
    lambda_or_bracket: object
    saddle_gap: float = float("nan")
    bounds: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "method": self.method,
            "algo": self.algo,
            "objective": self.objective,
            "equilibrium_gap": self.equilibrium_gap,
            "per_player_gains": list(self.per_player_gains),
            "saddle_gap": self.saddle_gap,
            "iterations": self.iterations,
            "wall_ms": self.wall_ms,
            "lambda_or_bracket": self.lambda_or_bracket,
            "bounds": self.bounds,
            "strategy_ref": "strategy.npy",
        }
        if self.history:
            out["history"] = self.history
        out.update(self.extra)
        return out


def certify(M, mu):
    """(objective, per-player deviation gains, equilibrium gap) of mediator strategy mu."""
    gains = [M.deviation_gain(mu, i) for i in range(1, M.num_players + 1)]
    return M.objective(mu), gains, max(gains)


def solve_direct(M, lam=25.0, algo="cfr+", T=1000, eps_target=None, alternating=None,
                 eval_every=None, algo_min=None):
    """Self-play on the direct Lagrangian game with a fixed multiplier.

    lam is a number or a schedule name ("sqrt4": T^(1/4), "sqrt2": T^(1/2)).
    With eps_target the run stops once both the saddle gap and the
    equilibrium gap of the average mediator strategy are below it.
    Updates alternate for "cfr+" and are simultaneous otherwise, unless
    alternating is given.
    """
    if alternating is None:
        alternating = default_alternating(algo)
    algo = canonical_algo(algo)
    algo_min = canonical_algo(algo_min or algo)
    value = resolve_lambda(lam, T)
    zs = build_L1(M, value)

    def on_eval(runner, point):
        mu = zs.canonical_mediator(runner.max_state.average())
        obj, gains, gap = certify(M, mu)
        point.extra.update(objective=obj, max_dev_gain=gap)

    def stop(point):
        return (eps_target is not None and point.saddle_gap <= eps_target
                and point.extra["max_dev_gain"] <= eps_target)

    res = selfplay(zs, algo, algo_min, T, eval_every, alternating, on_eval, stop)
    mu = zs.canonical_mediator(res.x_avg)
    mu_last = zs.canonical_mediator(res.x_last)
    obj, gains, gap = certify(M, mu)
    lo, hi = M.objective_extremes()
    bounds = {
        "optimality_shortfall": res.saddle_gap,
        "equilibrium_gap": (hi - lo + res.saddle_gap) / value if value > 0 else float("inf"),
        "objective_span": hi - lo,
    }
    _, gains_last, gap_last = certify(M, mu_last)
    return SolveReport(
        "direct", obj, gap, gains, mu, mu_last, res.iterations, res.wall_ms, algo,
        value if not isinstance(lam, str) else {"schedule": lam, "lambda": value},
        res.saddle_gap, bounds, res.trace,
        extra={"last_iterate": {"objective": M.objective(mu_last), "equilibrium_gap": gap_last},
               "value_bracket": [res.lower, res.upper]})


def solve_binary_search(M, eps=None, algo="cfr+", inner_budget=100_000, check_every=10,
                        warm_start=True, algo_min=None, alternating=None, certificate_eps=None):
    """Bisection on the threshold of the thresholded Lagrangian game.

    eps is in original utility units (default: 1% of the largest utility
    span): the result has equilibrium gap <= eps
    and objective >= v* - 2 eps.  Internally the game is rescaled to [0, 1]
    and the bisection runs with eps / (largest utility span).
    certificate_eps (same units as eps, default eps) is the slack allowed
    in the lower certificate; a smaller value returns a mechanism that is
    closer to exactly incentive compatible at the cost of longer inner solves.
    """
    if alternating is None:
        alternating = default_alternating(algo)
    algo = canonical_algo(algo)
    algo_min = canonical_algo(algo_min or algo)
    start = time.perf_counter()
    zs = build_L2(M, 0.5)
    rs = zs.rescale
    if eps is None:
        eps = 0.01 * float(np.max(rs.scale))
    if not eps > 0:
        raise ValueError("eps must be positive")
    eps_int = eps / float(np.max(rs.scale))
    cert_int = eps_int if certificate_eps is None else certificate_eps / float(np.max(rs.scale))
    lo_t, hi_t = 0.0, 1.0
    runner = None
    history = []
    best = None
    total = 0
    trace = []

    def solve_at(tau):
        nonlocal runner, total
        game = zs.with_parameter(tau)
        if runner is None or not warm_start:
            runner = SelfPlay(game, algo, algo_min, alternating)
        else:
            runner.set_game(game)
            runner.reset_averages()
        used = 0
        while used < inner_budget:
            step = min(check_every, inner_budget - used)
            for _ in range(step):
                runner.step()
            used += step
            gap, upper, lower = runner.gap()
            if lower >= -cert_int:
                return 1, upper, lower, used
            if upper < 0:
                return 2, upper, lower, used
        total += used
        raise BudgetExhausted(
            f"inner budget exhausted at threshold {tau:g} (bracket [{lo_t:g}, {hi_t:g}])",
            (lo_t, hi_t), history)

    while hi_t - lo_t > eps_int:
        tau = 0.5 * (lo_t + hi_t)
        case, upper, lower, used = solve_at(tau)
        total += used
        history.append({"tau": tau, "case": case, "upper": upper, "lower": lower,
                        "iterations": used})
        obj, _, dev = certify(M, zs.canonical_mediator(runner.max_state.average()))
        trace.append({"iter": total, "lambda_or_tau": tau, "objective": obj, "max_dev_gain": dev,
                      "saddle_gap": upper - lower, "last_iter_gap": runner.last_gap(),
                      "wall_ms": (time.perf_counter() - start) * 1e3})
        if case == 1:
            lo_t = tau
            best = zs.canonical_mediator(runner.max_state.average())
        else:
            hi_t = tau
    if best is None:
        case, upper, lower, used = solve_at(lo_t)
        total += used
        history.append({"tau": lo_t, "case": case, "upper": upper, "lower": lower,
                        "iterations": used, "final": True})
        best = zs.canonical_mediator(runner.max_state.average())
    obj, gains, gap = certify(M, best)
    last = zs.canonical_mediator(runner.max_state.current)
    return SolveReport(
        "binsearch", obj, gap, gains, best, last, total,
        (time.perf_counter() - start) * 1e3, algo, [lo_t, hi_t],
        saddle_gap=history[-1]["upper"] - history[-1]["lower"],
        trace=trace, history=history,
        extra={"eps": eps, "eps_internal": eps_int,
               "outer_iterations": sum(1 for h in history if not h.get("final"))})


def free_item_rate(M, mu, per="play"):
    """How often the mechanism hands an item to a winner at price 0 under (mu, d).

    per="play": probability that a play contains at least one such item;
    per="item": expected share of the items (rounds) given away.
    """
    if M.metadata.get("kind") != "auction":
        raise ValueError("free_item_rate needs an auction game")
    g = M.base
    reach = g.chance_reach * M.restrict_mediator(mu, g)[g.treeplex(0).terminal_seq]
    if per == "play":
        return float(reach @ (g.free_items > 0))
    if per == "item":
        return float(reach @ g.free_items) / M.metadata["spec"].rounds
    raise ValueError(f"unknown unit {per!r}")
