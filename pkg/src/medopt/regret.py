"""Regret minimizers: CFR variants over a treeplex, an interval learner, and
the conic-hull composition of the two."""
from __future__ import annotations

import numpy as np

ALGOS = ("rm", "rm+", "dcfr", "pcfr+")
ALIASES = {"cfr": "rm", "cfr+": "rm+", "rmplus": "rm+", "pcfr": "pcfr+", "pcfrplus": "pcfr+"}
# names whose conventional definition includes alternating updates
ALTERNATING_BY_DEFAULT = {"cfr+"}

DCFR_ALPHA, DCFR_BETA, DCFR_GAMMA = 1.5, 0.0, 2.0


def canonical_algo(name):
    key = name.lower()
    key = ALIASES.get(key, key)
    if key not in ALGOS:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGOS)}")
    return key


def default_alternating(name):
    return name.lower() in ALTERNATING_BY_DEFAULT


def dcfr_factors(t):
    """(positive-regret discount, negative-regret discount, averaging discount) at t."""
    return (t ** DCFR_ALPHA / (t ** DCFR_ALPHA + 1.0),
            t ** DCFR_BETA / (t ** DCFR_BETA + 1.0),
            (t / (t + 1.0)) ** DCFR_GAMMA)


class RegretState:
    """Counterfactual regret minimizer over one treeplex (utilities are maximized).

    rm: plain regret matching.  rm+: regrets clamped at 0.  Both average linearly.
    dcfr: discounted regrets (alpha=1.5, beta=0) and (t/(t+1))^2 averaging.
    pcfr+: predictive rm+ with the last gradient as prediction, quadratic
    averaging.
    """

    def __init__(self, treeplex, algo="rm+"):
        self.treeplex = treeplex
        self.algo = canonical_algo(algo)
        s = treeplex.num_sequences
        self.regret = np.zeros(s)
        self.strategy_sum = np.zeros(s)
        self.weight_sum = 0.0
        self.t = 0
        self.prediction = np.zeros(s)
        self.behavioral = treeplex.uniform_behavioral()
        self.current = treeplex.to_sequence(self.behavioral)

    def _match(self, r):
        tp = self.treeplex
        pos = np.maximum(r, 0.0)
        pos[0] = 0.0
        b = tp.uniform_behavioral()
        if tp.num_infosets == 0:
            return b
        sums = np.add.reduceat(pos[1:], tp.seq_start - 1)
        ok = sums[tp.seq_infoset[1:]] > 0
        b[1:][ok] = pos[1:][ok] / sums[tp.seq_infoset[1:]][ok]
        return b

    def next_strategy(self):
        """Sequence-form strategy to play at the next iteration."""
        if self.algo == "pcfr+":
            self.behavioral = self._predictive_match()
        else:
            self.behavioral = self._match(self.regret)
        self.current = self.treeplex.to_sequence(self.behavioral)
        return self.current

    def _predictive_match(self):
        tp = self.treeplex
        cv = self.prediction.copy()
        prev = self.behavioral
        b = tp.uniform_behavioral()
        for lv in reversed(tp.levels):
            sl = slice(lv.s_lo, lv.s_hi)
            m = cv[sl]
            base = np.add.reduceat(m * prev[sl], lv.starts)
            theta = np.maximum(self.regret[sl] + m - base[lv.rel_infoset], 0.0)
            sums = np.add.reduceat(theta, lv.starts)
            ok = sums[lv.rel_infoset] > 0
            seg = b[sl]
            seg[ok] = theta[ok] / sums[lv.rel_infoset][ok]
            b[sl] = seg
            val = np.add.reduceat(m * seg, lv.starts)
            cv[lv.parents] += np.add.reduceat(val, lv.parent_starts)
        return b

    def observe(self, gradient):
        """Feed the utility gradient for the strategy returned by next_strategy."""
        g = np.asarray(gradient, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite utility")
        tp = self.treeplex
        self.t += 1
        t = self.t
        cv, ival = tp.counterfactual(g, self.behavioral)
        r = cv - np.concatenate([[0.0], ival[tp.seq_infoset[1:]]])
        r[0] = 0.0
        if self.algo == "rm":
            self.regret += r
            w = float(t)
        elif self.algo == "rm+":
            self.regret = np.maximum(self.regret + r, 0.0)
            w = float(t)
        elif self.algo == "pcfr+":
            self.regret = np.maximum(self.regret + r, 0.0)
            self.prediction = g.copy()
            w = float(t) ** 2
        else:
            R = self.regret + r
            pos, neg, d = dcfr_factors(t)
            self.regret = np.where(R > 0, R * pos, R * neg)
            self.strategy_sum = (self.strategy_sum + self.current) * d
            self.weight_sum = (self.weight_sum + 1.0) * d
            return
        self.strategy_sum += w * self.current
        self.weight_sum += w

    def average(self):
        if self.weight_sum == 0:
            return self.current.copy()
        return self.strategy_sum / self.weight_sum


class IntervalLearner:
    """Projected (optionally optimistic) gradient steps on [0, K].

    A maximizer moves along the gradient, a minimizer against it.  The
    optimistic step uses 2 g_t - g_{t-1}.
    """

    def __init__(self, K, eta=None, T=None, maximize=True, optimistic=True, value=None):
        if K <= 0:
            raise ValueError("K must be positive")
        self.K = float(K)
        if eta is None:
            eta = K / np.sqrt(T) if T else 0.1 * K
        self.eta = float(eta)
        self.sign = 1.0 if maximize else -1.0
        self.optimistic = optimistic
        self.value = self.K / 2 if value is None else float(value)
        self.prev_gradient = 0.0

    def next(self):
        return self.value

    def step(self, gradient):
        g = float(gradient)
        if not np.isfinite(g):
            raise ValueError("non-finite gradient")
        d = 2.0 * g - self.prev_gradient if self.optimistic else g
        self.value = min(max(self.value + self.sign * self.eta * d, 0.0), self.K)
        self.prev_gradient = g
        return self.value


def interval_step(state, gradient):
    return state.step(gradient)


class ConicHullMinimizer:
    """No-regret play over {lam * x : lam in [0, K], x in X} (utilities maximized).

    Composes a treeplex learner R_X with an interval learner R_plus: the
    emitted point is lam * x; an observed utility u goes to R_X unchanged and
    to R_plus as the scalar <u, x>.
    """

    def __init__(self, treeplex, K, algo="rm+", eta=None, T=None, optimistic=True):
        self.inner = RegretState(treeplex, algo)
        self.scale = IntervalLearner(K, eta=eta, T=T, maximize=True, optimistic=optimistic)
        self.K = float(K)
        self._x = None
        self._lam = None

    def next(self):
        self._x = self.inner.next_strategy()
        self._lam = self.scale.next()
        return self._lam * self._x

    def observe(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self._x is None:
            self.next()
        self.inner.observe(u)
        self.scale.step(float(u @ self._x))
        self._x = None


def conic_next(m):
    return m.next()


def conic_observe(m, u):
    m.observe(u)
