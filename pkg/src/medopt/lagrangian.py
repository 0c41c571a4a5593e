"""Zero-sum games whose saddle points relax the optimal-equilibrium program.

In both constructions agent 0 is the mediator (maximizer) and agent 1 the
deviator (minimizer).  The deviator's infosets for player i are renamed
"p<i>:<key>"; mediator infosets keep their keys, so the mediator cannot tell
the branches apart.

Payoffs are affine in the construction parameter: payoff = base + param * coef
per terminal (param is the multiplier for the direct relaxation and the
threshold for the thresholded one), which lets solvers change the parameter
without rebuilding the tree.
"""
from __future__ import annotations

import numpy as np

from .game import GameError, compose, relabel, with_utilities


class ZeroSumGame:
    def __init__(self, game, construction, parameter, source, base, coef, mediator_map,
                 rescale=None, branch=None):
        self.game = game
        self.construction = construction
        self.parameter = float(parameter)
        self.source = source
        self.base = base
        self.coef = coef
        self.mediator_map = mediator_map  # canonical mediator sequence for each local one
        self.rescale = rescale
        self.branch = branch

    @classmethod
    def from_game(cls, game):
        """Wrap a game between agent 0 (maximizer) and agent 1 with u1 = -u0."""
        if game.num_players != 1:
            raise GameError("a zero-sum game has exactly agents 0 and 1")
        u = game.utilities
        if not np.allclose(u[:, 1], -u[:, 0], atol=1e-12, rtol=0):
            raise GameError("payoffs are not zero-sum")
        tp = game.treeplex(0)
        return cls(game, "plain", 0.0, None, u[:, 0].copy(), np.zeros(len(u)),
                   np.arange(tp.num_sequences))

    @property
    def payoff(self):
        return self.base + self.parameter * self.coef

    @property
    def reward_range(self):
        p = self.payoff
        return float(p.min()), float(p.max())

    def with_parameter(self, parameter):
        p = self.base + float(parameter) * self.coef
        game = with_utilities(self.game, np.stack([p, -p], axis=1), 1)
        return ZeroSumGame(game, self.construction, parameter, self.source, self.base,
                           self.coef, self.mediator_map, self.rescale, self.branch)

    def mediator_strategy(self, mu_canonical):
        """Canonical mediator vector -> this game's mediator treeplex."""
        return np.asarray(mu_canonical)[self.mediator_map]

    def canonical_mediator(self, mu_local):
        """This game's mediator vector -> canonical mediator treeplex."""
        out = np.zeros(self.source.mediator_treeplex.num_sequences)
        out[self.mediator_map] = mu_local
        return out

    def __repr__(self):
        return (f"ZeroSumGame({self.construction}, parameter={self.parameter:g}, "
                f"terminals={self.game.num_terminals})")


def _deviator_key(key, owner):
    return key if owner == 0 else f"p{owner}:{key}"


def _l1_structure(M):
    cache = M._cache
    if "l1" not in cache:
        union, branch = M.union
        n = M.num_players
        game = relabel(union, 1, np.array([0] + [1] * n), _deviator_key,
                       np.zeros((union.num_terminals, 2)))
        u = union.utilities
        nodev = branch == 0
        base = np.where(nodev, 2.0 * u[:, 0], 0.0)
        coef = np.where(nodev, 2.0 * u[:, 1:].sum(axis=1),
                        -2.0 * n * u[np.arange(len(branch)), np.maximum(branch, 0)])
        cache["l1"] = (game, base, coef, branch)
    return cache["l1"]


def build_L1(M, lam):
    """Direct Lagrangian relaxation with multiplier lam.

    Root chance: no deviator w.p. 1/2, else a uniform player i.  Mediator
    payoff: 2 u0 + 2 lam sum_i u_i without deviator, -2 lam n u_i with
    deviator i.  Expected mediator utility equals
    u0(mu, d) - lam * sum_i [u_i(mu, x_i, d_-i) - u_i(mu, d)].
    """
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise GameError(f"multiplier must be finite and >= 0, got {lam}")
    game, base, coef, branch = _l1_structure(M)
    for i in range(1, M.num_players + 1):
        M.direct_strategy(i)  # fails early if a direct action is missing
    p = base + lam * coef
    g = with_utilities(game, np.stack([p, -p], axis=1), 1)
    if "_treeplexes" not in game.__dict__:
        game._treeplexes = {}
    g._treeplexes = game._treeplexes
    mm = _map_to_canonical(M, g)
    return ZeroSumGame(g, "L1", lam, M, base, coef, mm, branch=branch)


def _map_to_canonical(M, game):
    from .treeplex import sequence_map
    m = sequence_map(M.mediator_treeplex, game.treeplex(0))
    if np.any(m < 0):
        raise GameError("mediator infoset missing from the canonical treeplex")
    return m


class Rescale:
    """Per-agent affine map u -> (u - lo) / (hi - lo) onto [0, 1]."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        span = np.asarray(hi, dtype=np.float64) - self.lo
        self.scale = np.where(span > 0, span, 1.0)

    def forward(self, u):
        return (u - self.lo) / self.scale

    def objective_back(self, v):
        return float(v * self.scale[0] + self.lo[0])

    def gain_back(self, g, i):
        return float(g * self.scale[i])

    @classmethod
    def of(cls, M):
        u = M.union_game.utilities
        return cls(u.min(axis=0), u.max(axis=0))


def _l2_structure(M):
    cache = M._cache
    if "l2" not in cache:
        n = M.num_players
        rs = Rescale.of(M)
        owner_map = np.array([0] + [1] * n)
        base_g = M.base
        subs, utils, kmaps, omaps = [base_g], [np.zeros((base_g.num_terminals, 2))], [None], [owner_map]
        for i in range(1, n + 1):
            dev = M.deviation_game(i)
            coin, _ = compose([dev, base_g], ("chance", [0.5, 0.5]), n)
            subs.append(coin)
            utils.append(np.zeros((coin.num_terminals, 2)))
            kmaps.append(_deviator_key)
            omaps.append(owner_map)
        actions = [str(i) for i in range(n + 1)]
        game, branch = compose(subs, ("decision", 1, "deviator:pick", actions), 1,
                               utilities=utils, owner_maps=omaps, key_maps=kmaps)
        # branch 0: objective; for i > 0 the coin decides deviate (+) or not (-)
        base = np.zeros(game.num_terminals)
        coef = np.zeros(game.num_terminals)
        signed = np.zeros(game.num_terminals, dtype=np.int64)
        for j, sub in enumerate(subs):
            sl = branch == j
            if j == 0:
                base[sl] = rs.forward(base_g.utilities)[:, 0]
                coef[sl] = -1.0
            else:
                side = _coin_side(sub)
                uj = rs.forward(sub.utilities)[:, j]
                base[sl] = np.where(side == 0, -2.0 * uj, 2.0 * uj)
                signed[sl] = np.where(side == 0, j, -j)
        cache["l2"] = (game, base, coef, rs, signed)
    return cache["l2"]


def _coin_side(coin):
    top = np.arange(coin.num_nodes)
    for lev in coin.levels[2:]:
        top[lev] = top[coin.parent[lev]]
    return top[coin.terminals] - 1


def build_L2(M, tau):
    """Thresholded Lagrangian relaxation with threshold tau in [0, 1].

    Utilities are first mapped affinely onto [0, 1] per agent.  The deviator
    picks i in {0..n}; i = 0 pays u0 - tau, otherwise a fair coin decides
    whether player i may deviate (payoff -2 u_i) or not (payoff +2 u_i).
    """
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise GameError(f"threshold must lie in [0, 1], got {tau}")
    game, base, coef, rs, signed = _l2_structure(M)
    p = base + tau * coef
    g = with_utilities(game, np.stack([p, -p], axis=1), 1)
    if "_treeplexes" not in game.__dict__:
        game._treeplexes = {}
    g._treeplexes = game._treeplexes
    return ZeroSumGame(g, "L2", tau, M, base, coef, _map_to_canonical(M, g),
                       rescale=rs, branch=signed)
