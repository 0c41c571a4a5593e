"""Mediator-augmented games: a game plus a direct strategy for every player.

Encoders describe a game by a function ``build(free)`` returning the game in
which only the players in ``free`` (and the mediator) act, everyone else
being hard-wired to their direct strategy.  The full game is ``build`` of
all players; the solvers only ever need the all-pinned game and the
single-deviator games, which for auctions are far smaller than the full tree.
"""
from __future__ import annotations

import numpy as np

from .game import DECISION, GameBuilder, GameError, compose
from .treeplex import sequence_map


class MediatorAugmentedGame:
    def __init__(self, num_players, build, metadata=None):
        if num_players < 1:
            raise GameError("need at least one player")
        self.num_players = num_players
        self._build = build
        self.metadata = dict(metadata or {})
        self._cache = {}

    @classmethod
    def from_game(cls, game, metadata=None):
        """Wrap a full game whose infosets carry direct actions."""
        return cls(game.num_players, lambda free: pin_players(game, free), metadata)

    def restricted(self, free=()):
        free = frozenset(free)
        key = ("restricted", free)
        if key not in self._cache:
            g = self._build(free)
            if g.num_players != self.num_players:
                raise GameError("restricted game has the wrong number of players")
            acting = set(np.unique(g.owner[g.kind == DECISION]).tolist()) - {0}
            if not acting <= free:
                raise GameError(f"pinned players {sorted(acting - free)} still act")
            self._cache[key] = g
        return self._cache[key]

    @property
    def base(self):
        """Game with every player following the direct strategy."""
        return self.restricted(())

    def deviation_game(self, i):
        if not 1 <= i <= self.num_players:
            raise GameError(f"no player {i}")
        return self.restricted((i,))

    @property
    def game(self):
        return self.restricted(range(1, self.num_players + 1))

    @property
    def union(self):
        """The no-deviator branch and every single-deviator branch under one root.

        Root: no deviator with probability 1/2, otherwise a uniformly chosen
        deviator.  Its mediator treeplex is the canonical mediator decision
        space of this object.
        """
        if "union" not in self._cache:
            n = self.num_players
            devs, _ = compose([self.deviation_game(i) for i in range(1, n + 1)],
                              ("chance", np.full(n, 1.0 / n)), n)
            game, branch = compose([self.base, devs], ("chance", [0.5, 0.5]), n)
            # branch: 0 for no deviator, i for deviator i
            dev_branch = np.zeros(game.num_terminals, dtype=np.int64)
            inner = _inner_branch(devs)
            dev_branch[branch == 1] = inner + 1
            self._cache["union"] = (game, dev_branch)
        return self._cache["union"]

    @property
    def union_game(self):
        return self.union[0]

    @property
    def terminal_branch(self):
        return self.union[1]

    @property
    def mediator_treeplex(self):
        return self.union_game.treeplex(0)

    def mediator_map(self, game):
        """Index map taking canonical mediator vectors to game's mediator treeplex."""
        key = ("map", id(game))
        if key not in self._cache:
            m = sequence_map(self.mediator_treeplex, game.treeplex(0))
            if np.any(m < 0):
                raise GameError("mediator infoset missing from the canonical treeplex")
            self._cache[key] = (game, m)
        return self._cache[key][1]

    def restrict_mediator(self, mu, game):
        return np.asarray(mu)[self.mediator_map(game)]

    def direct_strategy(self, i):
        """Player i's direct strategy on the treeplex of its deviation game."""
        key = ("direct", i)
        if key not in self._cache:
            g = self.deviation_game(i)
            tp = g.treeplex(i)
            b = np.zeros(tp.num_sequences)
            idx = {k: j for j, k in enumerate(g.infoset_keys)}
            d = np.array([g.infoset_direct[idx[k]] for k in tp.keys], dtype=np.int64)
            b[tp.seq_start + np.maximum(d, 0)] = 1.0
            x = tp.to_sequence(b)
            # infosets the direct strategy never reaches need no direct action
            missing = np.flatnonzero((d < 0) & (x[tp.parent_seq] > 0))
            if len(missing):
                raise GameError(f"missing direct strategies: infoset {tp.keys[int(missing[0])]}")
            self._cache[key] = x
        return self._cache[key]

    def utility_range(self, agent):
        u = self.union_game.utilities[:, agent]
        return float(u.min()), float(u.max())

    @property
    def objective_range(self):
        return self.utility_range(0)

    def objective(self, mu):
        """u0(mu, d)."""
        g = self.base
        reach = g.chance_reach * self.restrict_mediator(mu, g)[g.treeplex(0).terminal_seq]
        return float(reach @ g.utilities[:, 0])

    def objective_extremes(self):
        """(min, max) of u0(mu, d) over all mediator strategies."""
        g = self.base
        tp = g.treeplex(0)
        grad = np.bincount(tp.terminal_seq, weights=g.chance_reach * g.utilities[:, 0],
                           minlength=tp.num_sequences)
        _, hi = tp.best_response(grad)
        _, lo = tp.best_response(-grad)
        return -lo, hi

    def deviation_gradient(self, mu, i):
        g = self.deviation_game(i)
        tp = g.treeplex(i)
        reach = g.chance_reach * self.restrict_mediator(mu, g)[g.treeplex(0).terminal_seq]
        return np.bincount(tp.terminal_seq, weights=reach * g.utilities[:, i],
                           minlength=tp.num_sequences)

    def deviation_gain(self, mu, i):
        """max over x_i of u_i(mu, x_i, d_-i) minus u_i(mu, d)."""
        grad = self.deviation_gradient(mu, i)
        tp = self.deviation_game(i).treeplex(i)
        _, best = tp.best_response(grad)
        return best - float(grad @ self.direct_strategy(i))

    def player_value(self, mu, i):
        return float(self.deviation_gradient(mu, i) @ self.direct_strategy(i))


def _inner_branch(game):
    """Index of the root child above each terminal."""
    top = np.arange(game.num_nodes)
    for lev in game.levels[2:]:
        top[lev] = top[game.parent[lev]]
    return top[game.terminals] - 1


def pin_players(game, free):
    """Copy of game where players outside free always take their direct action."""
    free = set(free)
    b = GameBuilder(game.num_players)
    stack = [(0, 0)]
    while stack:
        src, dst = stack.pop()
        # skip through pinned decisions
        while game.kind[src] == DECISION and game.owner[src] not in free and game.owner[src] != 0:
            i = game.infoset[src]
            a = game.infoset_direct[i]
            if a < 0:
                raise GameError(f"missing direct strategies: infoset {game.infoset_keys[i]}")
            src = game.first_child[src] + a
        kind = game.kind[src]
        if kind == 2:
            b.terminal(dst, game.utilities[game.terminal_position[src]])
            continue
        kids = list(game.children(src))
        if kind == 0:
            new = b.chance(dst, game.prob[kids], game.chance_labels.get(src), where=game.node_label(src))
        else:
            i = game.infoset[src]
            new = b.decision(dst, int(game.owner[src]), game.infoset_keys[i],
                             game.infoset_actions[i], int(game.infoset_direct[i]))
        stack.extend(zip(kids, new))
    return b.build()
