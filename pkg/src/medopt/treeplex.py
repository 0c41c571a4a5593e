"""Sequence-form decision spaces and exact best responses.

Infosets are laid out level by level (a level is the number of the agent's
own earlier decisions), and within a level grouped by parent sequence, so
every per-level operation is a contiguous numpy slice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import DECISION, GameError


class RecallError(GameError):
    pass


class Level:
    __slots__ = ("i_lo", "i_hi", "s_lo", "s_hi", "starts", "rel_infoset",
                 "parents", "parent_starts")

    def __init__(self, i_lo, i_hi, s_lo, s_hi, starts, rel_infoset, parents, parent_starts):
        self.i_lo, self.i_hi, self.s_lo, self.s_hi = i_lo, i_hi, s_lo, s_hi
        self.starts = starts
        self.rel_infoset = rel_infoset
        self.parents = parents
        self.parent_starts = parent_starts


class Treeplex:
    def __init__(self, agent, keys, actions, parent_seq, num_actions, level_of, terminal_seq):
        self.agent = agent
        self.keys = keys
        self.actions = actions
        self.parent_seq = parent_seq
        self.num_actions = num_actions
        self.num_infosets = len(keys)
        self.seq_start = 1 + np.concatenate([[0], np.cumsum(num_actions)]).astype(np.int64)[:len(keys)]
        self.num_sequences = 1 + int(num_actions.sum())
        self.seq_infoset = np.full(self.num_sequences, -1, dtype=np.int64)
        self.seq_infoset[1:] = np.repeat(np.arange(self.num_infosets), num_actions)
        self.seq_action = np.zeros(self.num_sequences, dtype=np.int64)
        self.seq_action[1:] = np.arange(self.num_sequences - 1) - np.repeat(self.seq_start - 1, num_actions)
        self.seq_parent = np.zeros(self.num_sequences, dtype=np.int64)
        self.seq_parent[1:] = parent_seq[self.seq_infoset[1:]]
        self.terminal_seq = terminal_seq
        self.key_index = {k: i for i, k in enumerate(keys)}
        self.levels = []
        bounds = np.searchsorted(level_of, np.arange(level_of.max() + 2 if len(level_of) else 1))
        for lv in range(len(bounds) - 1):
            i_lo, i_hi = int(bounds[lv]), int(bounds[lv + 1])
            if i_lo == i_hi:
                continue
            s_lo = int(self.seq_start[i_lo])
            s_hi = int(self.seq_start[i_hi - 1] + num_actions[i_hi - 1])
            starts = self.seq_start[i_lo:i_hi] - s_lo
            rel = self.seq_infoset[s_lo:s_hi] - i_lo
            par = parent_seq[i_lo:i_hi]
            change = np.concatenate([[True], par[1:] != par[:-1]])
            self.levels.append(Level(i_lo, i_hi, s_lo, s_hi, starts, rel,
                                     par[change], np.flatnonzero(change)))

    def __repr__(self):
        return (f"Treeplex(agent={self.agent}, sequences={self.num_sequences}, "
                f"infosets={self.num_infosets})")

    def sequence_index(self, key, action):
        return int(self.seq_start[self.key_index[key]] + action)

    def sequence_keys(self):
        out = [None]
        for i, k in enumerate(self.keys):
            out.extend((k, a) for a in range(self.num_actions[i]))
        return out

    def uniform_behavioral(self):
        if "_uniform_b" not in self.__dict__:
            b = np.ones(self.num_sequences)
            b[1:] = 1.0 / np.repeat(self.num_actions, self.num_actions)
            self._uniform_b = b
        return self._uniform_b.copy()

    def uniform(self):
        return self.to_sequence(self.uniform_behavioral())

    def to_sequence(self, behavioral):
        x = np.asarray(behavioral, dtype=np.float64).copy()
        x[0] = 1.0
        for lv in self.levels:
            sl = slice(lv.s_lo, lv.s_hi)
            x[sl] *= x[self.seq_parent[sl]]
        return x

    def to_behavioral(self, x):
        x = np.asarray(x, dtype=np.float64)
        par = x[self.seq_parent]
        b = self.uniform_behavioral()
        ok = par > 0
        ok[0] = False
        b[ok] = x[ok] / par[ok]
        b[0] = 1.0
        return b

    def flow_residual(self, x):
        """Largest violation of the sequence-form flow constraints."""
        x = np.asarray(x, dtype=np.float64)
        if len(x) != self.num_sequences:
            raise ValueError("strategy length does not match treeplex")
        err = abs(x[0] - 1.0)
        if self.num_infosets:
            sums = np.add.reduceat(x[1:], self.seq_start - 1)
            err = max(err, float(np.max(np.abs(sums - x[self.parent_seq]))))
        return err

    def is_valid(self, x, tol=1e-9):
        x = np.asarray(x)
        return bool(np.all(x >= -tol) and np.all(x <= 1 + tol) and self.flow_residual(x) <= tol)

    def best_response(self, gradient):
        """Maximize <x, gradient> over the treeplex; returns (pure x, value).

        Ties go to the lowest action index.
        """
        cv = np.array(gradient, dtype=np.float64)
        choice = np.zeros(self.num_infosets, dtype=np.int64)
        for lv in reversed(self.levels):
            seg = cv[lv.s_lo:lv.s_hi]
            val = np.maximum.reduceat(seg, lv.starts)
            pos = np.arange(lv.s_hi - lv.s_lo)
            first = np.minimum.reduceat(np.where(seg >= val[lv.rel_infoset], pos, len(pos)), lv.starts)
            choice[lv.i_lo:lv.i_hi] = first - lv.starts
            cv[lv.parents] += np.add.reduceat(val, lv.parent_starts)
        b = np.zeros(self.num_sequences)
        b[self.seq_start + choice] = 1.0
        return self.to_sequence(b), float(cv[0])

    def counterfactual(self, gradient, behavioral):
        """Bottom-up pass: per-sequence counterfactual values and per-infoset values.

        Returns (cv, infoset_value) where cv[s] includes the values of all
        infosets below s under the given behavioral strategy.
        """
        cv = np.array(gradient, dtype=np.float64)
        ival = np.zeros(self.num_infosets)
        for lv in reversed(self.levels):
            sl = slice(lv.s_lo, lv.s_hi)
            val = np.add.reduceat(cv[sl] * behavioral[sl], lv.starts)
            ival[lv.i_lo:lv.i_hi] = val
            cv[lv.parents] += np.add.reduceat(val, lv.parent_starts)
        return cv, ival

    def value(self, x, gradient):
        return float(np.dot(x, gradient))


@dataclass
class SequenceFormStrategy:
    treeplex: Treeplex
    values: np.ndarray

    @property
    def owner(self):
        return self.treeplex.agent

    def is_pure(self, tol=0.0):
        v = self.values
        return bool(np.all((np.abs(v) <= tol) | (np.abs(v - 1) <= tol)))

    def validate(self, tol=1e-9):
        if not self.treeplex.is_valid(self.values, tol):
            raise ValueError("sequence-form constraints violated")
        return self


def build_treeplex(game, agent):
    dec = np.flatnonzero((game.kind == DECISION) & (game.owner == agent))
    code = game.last_action_codes(agent)
    term_code = code[game.terminals]
    isets, first_pos = np.unique(game.infoset[dec], return_index=True)
    if len(isets) == 0:
        return Treeplex(agent, [], [], np.zeros(0, np.int64), np.zeros(0, np.int64),
                        np.zeros(0, np.int64), np.zeros(game.num_terminals, np.int64))
    if game.recall_violation(agent) is not None:
        raise RecallError("agent has imperfect recall — treeplex undefined")
    first_node = dec[first_pos]
    parent_code = code[first_node]
    off = game.action_offset
    nact = np.array([len(game.infoset_actions[i]) for i in isets], dtype=np.int64)

    # a parent infoset always has an earlier first node, so this order is topological
    order = np.argsort(first_node, kind="stable")
    local_of_global = {int(g): k for k, g in enumerate(isets)}
    parent_local = np.full(len(isets), -1, dtype=np.int64)
    nz = parent_code > 0
    parent_global = np.searchsorted(off, parent_code[nz] - 1, side="right") - 1
    parent_local[nz] = [local_of_global[int(g)] for g in parent_global]
    parent_action = np.zeros(len(isets), dtype=np.int64)
    parent_action[nz] = parent_code[nz] - 1 - off[parent_global]
    level = np.zeros(len(isets), dtype=np.int64)
    pl = parent_local.tolist()
    lvl = level.tolist()
    for k in order.tolist():
        if pl[k] >= 0:
            lvl[k] = lvl[pl[k]] + 1
    level = np.array(lvl, dtype=np.int64)

    # assign sequence blocks level by level, grouping infosets by parent sequence
    rank = np.empty(len(isets), dtype=np.int64)
    seq_start = np.zeros(len(isets), dtype=np.int64)
    parent_seq = np.zeros(len(isets), dtype=np.int64)
    next_seq = 1
    next_rank = 0
    for lv in range(int(level.max()) + 1):
        members = np.flatnonzero(level == lv)
        pseq = np.where(parent_local[members] >= 0,
                        seq_start[np.maximum(parent_local[members], 0)] + parent_action[members], 0)
        members_order = np.lexsort((first_node[members], pseq))
        members = members[members_order]
        pseq = pseq[members_order]
        k = len(members)
        rank[members] = np.arange(next_rank, next_rank + k)
        parent_seq[members] = pseq
        sizes = nact[members]
        seq_start[members] = next_seq + np.concatenate([[0], np.cumsum(sizes)[:-1]])
        next_seq += int(sizes.sum())
        next_rank += k
    inv = np.argsort(rank)
    keys = [game.infoset_keys[int(isets[k])] for k in inv]
    actions = [game.infoset_actions[int(isets[k])] for k in inv]

    # map action codes to local sequence ids
    code_to_seq = np.zeros(int(off[-1]) + 1, dtype=np.int64)
    for k in range(len(isets)):
        g = int(isets[k])
        code_to_seq[off[g] + 1: off[g + 1] + 1] = seq_start[k] + np.arange(nact[k])
    return Treeplex(agent, keys, actions, parent_seq[inv], nact[inv], level[inv],
                    code_to_seq[term_code])


def sequence_map(src, dst):
    """For every sequence of dst, its index in src (or -1 if absent)."""
    out = np.full(dst.num_sequences, -1, dtype=np.int64)
    out[0] = 0
    for k, key in enumerate(dst.keys):
        j = src.key_index.get(key)
        if j is None:
            continue
        if src.num_actions[j] != dst.num_actions[k]:
            raise GameError(f"infoset {key}: action sets differ")
        s = dst.seq_start[k]
        out[s:s + dst.num_actions[k]] = src.seq_start[j] + np.arange(dst.num_actions[k])
    return out


def transfer(x, src, dst, fill=None):
    """Carry a sequence-form vector across treeplexes sharing infoset keys.

    Infosets of dst missing from src are played uniformly (or by fill).
    """
    m = sequence_map(src, dst)
    if np.all(m >= 0):
        return np.asarray(x)[m]
    bsrc = src.to_behavioral(x)
    b = dst.uniform_behavioral() if fill is None else np.array(fill, dtype=np.float64)
    ok = m >= 0
    b[ok] = bsrc[m[ok]]
    return dst.to_sequence(b)


def _values(s):
    return s.values if isinstance(s, SequenceFormStrategy) else np.asarray(s, dtype=np.float64)


def terminal_reach(game, profile, skip=None):
    """Chance reach times every agent's sequence-form reach, per terminal."""
    if len(profile) != game.num_players + 1:
        raise ValueError(f"profile has {len(profile)} strategies, game has "
                         f"{game.num_players + 1} agents")
    reach = game.chance_reach.copy()
    for agent, s in enumerate(profile):
        if agent == skip:
            continue
        tp = game.treeplex(agent)
        if s is None:
            if tp.num_sequences != 1:
                raise ValueError(f"agent {agent}: strategy missing")
            continue
        x = _values(s)
        if len(x) != tp.num_sequences:
            raise ValueError(f"agent {agent}: strategy has {len(x)} entries, "
                             f"treeplex has {tp.num_sequences}")
        reach *= x[tp.terminal_seq]
    return reach


def expected_utilities(game, profile):
    """Expected utility vector (index 0 = mediator) under a sequence-form profile."""
    return game.utilities.T @ terminal_reach(game, profile)


def utility_gradient(game, agent, profile, weights=None):
    """Gradient of agent's utility (or of weights per terminal) w.r.t. its sequences."""
    tp = game.treeplex(agent)
    reach = terminal_reach(game, profile, skip=agent)
    u = game.utilities[:, agent] if weights is None else weights
    return np.bincount(tp.terminal_seq, weights=reach * u, minlength=tp.num_sequences)


def best_response(game, agent, others):
    """Pure best response of agent against the other agents' strategies.

    others is a full profile (the agent's own entry is ignored) or a dict
    {agent: strategy}.
    """
    if isinstance(others, dict):
        profile = [others.get(a) for a in range(game.num_players + 1)]
        profile[agent] = np.ones(1)
    else:
        profile = list(others)
    tp = game.treeplex(agent)
    g = utility_gradient(game, agent, profile)
    x, value = tp.best_response(g)
    return SequenceFormStrategy(tp, x), value
