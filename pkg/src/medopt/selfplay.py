"""Self-play on a zero-sum game in sequence form.

The game is reduced to its bilinear form: A[s0, s1] sums chance reach times
mediator payoff over terminals whose mediator sequence is s0 and deviator
sequence is s1.  The mediator maximizes x^T A y, the deviator minimizes it.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .regret import RegretState


class BilinearForm:
    def __init__(self, zs):
        g = zs.game
        self.zs = zs
        self.tp_max = g.treeplex(0)
        self.tp_min = g.treeplex(1)
        rows = self.tp_max.terminal_seq
        cols = self.tp_min.terminal_seq
        ncols = self.tp_min.num_sequences
        pair, self.inverse = np.unique(rows * ncols + cols, return_inverse=True)
        self.rows = pair // ncols
        self.cols = pair % ncols
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(
            self.rows, minlength=self.tp_max.num_sequences))])
        self.reach = g.chance_reach
        self.shape = (self.tp_max.num_sequences, ncols)

    def matrix(self, parameter=None):
        zs = self.zs
        p = zs.payoff if parameter is None else zs.base + float(parameter) * zs.coef
        data = np.bincount(self.inverse, weights=self.reach * p, minlength=len(self.rows))
        return sparse.csr_matrix((data, self.cols, self.indptr), shape=self.shape)


def saddle_gap(form, A, x, y):
    """(gap, upper, lower): best-response values bracketing the game value."""
    _, upper = form.tp_max.best_response(A @ y)
    _, neg_lower = form.tp_min.best_response(-(A.T @ x))
    return upper + neg_lower, upper, -neg_lower


@dataclass
class TracePoint:
    iteration: int
    parameter: float
    saddle_gap: float
    last_iter_gap: float
    upper: float
    lower: float
    wall_ms: float
    extra: dict = field(default_factory=dict)


@dataclass
class SelfPlayResult:
    x_avg: np.ndarray
    y_avg: np.ndarray
    x_last: np.ndarray
    y_last: np.ndarray
    iterations: int
    trace: list
    saddle_gap: float
    upper: float
    lower: float
    wall_ms: float
    stopped_early: bool = False


def eval_cadence(T):
    return max(T // 100, 1)


class SelfPlay:
    """Resumable self-play between two regret minimizers."""

    def __init__(self, zs, algo_max="rm+", algo_min="rm+", alternating=False, form=None):
        self.form = form if form is not None else BilinearForm(zs)
        self.zs = zs
        self.A = self.form.matrix()
        self.AT = self.A.T.tocsr()
        self.max_state = RegretState(self.form.tp_max, algo_max)
        self.min_state = RegretState(self.form.tp_min, algo_min)
        self.alternating = alternating
        self.t = 0
        self._x_next = None

    def set_game(self, zs):
        """Switch to a game with the same tree (keeps regrets: a warm start)."""
        self.zs = zs
        self.form.zs = zs
        self.A = self.form.matrix()
        self.AT = self.A.T.tocsr()

    def reset_averages(self):
        for s in (self.max_state, self.min_state):
            s.strategy_sum[:] = 0.0
            s.weight_sum = 0.0

    def step(self):
        A = self.A
        if self._x_next is None:
            x = self.max_state.next_strategy()
        else:
            x = self._x_next
        y = self.min_state.next_strategy()
        self.max_state.observe(A @ y)
        if self.alternating:
            x = self.max_state.next_strategy()
            self._x_next = x
        self.min_state.observe(-(self.AT @ x))
        self.t += 1
        return x, y

    def averages(self):
        return self.max_state.average(), self.min_state.average()

    def gap(self):
        x, y = self.averages()
        return saddle_gap(self.form, self.A, x, y)

    def last_gap(self):
        return saddle_gap(self.form, self.A, self.max_state.current, self.min_state.current)[0]


def selfplay(zs, algo_max="rm+", algo_min="rm+", T=1000, eval_every=None,
             alternating=False, callback=None, stop=None):
    """Run T iterations, logging a trace point every eval_every iterations.

    callback(runner, point) may add entries to point.extra; stop(point)
    returning True ends the run early.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    k = eval_every or eval_cadence(T)
    runner = SelfPlay(zs, algo_max, algo_min, alternating)
    trace = []
    start = time.perf_counter()
    stopped = False
    gap = upper = lower = float("nan")
    for t in range(1, T + 1):
        runner.step()
        if t % k == 0 or t == T:
            gap, upper, lower = runner.gap()
            point = TracePoint(t, zs.parameter, gap, runner.last_gap(), upper, lower,
                               (time.perf_counter() - start) * 1e3)
            if callback is not None:
                callback(runner, point)
            trace.append(point)
            if stop is not None and stop(point):
                stopped = t < T
                break
    x, y = runner.averages()
    return SelfPlayResult(x, y, runner.max_state.current.copy(), runner.min_state.current.copy(),
                          runner.t, trace, gap, upper, lower,
                          (time.perf_counter() - start) * 1e3, stopped)
