"""Shared fixtures for the tests: small games, random games and a
straight-line evaluator that walks the tree with behavioral strategies."""
import itertools
import zlib

import numpy as np

from medopt.game import CHANCE, TERMINAL, GameBuilder

MATCHING_PENNIES = {
    "num_players": 2,
    "root": "r",
    "nodes": [
        {"id": "r", "kind": "agent", "owner": 1, "infoset": "P1", "actions": ["H", "T"],
         "children": ["h", "t"]},
        {"id": "h", "kind": "agent", "owner": 2, "infoset": "P2", "actions": ["H", "T"],
         "children": ["hh", "ht"]},
        {"id": "t", "kind": "agent", "owner": 2, "infoset": "P2", "actions": ["H", "T"],
         "children": ["th", "tt"]},
        {"id": "hh", "kind": "terminal", "utilities": [0, 1, -1]},
        {"id": "ht", "kind": "terminal", "utilities": [0, -1, 1]},
        {"id": "th", "kind": "terminal", "utilities": [0, -1, 1]},
        {"id": "tt", "kind": "terminal", "utilities": [0, 1, -1]},
    ],
}

# Chicken scaled into [0, 1]: (6,6) (2,7) / (7,2) (0,0)
CHICKEN = np.array([[[6, 2], [7, 0]], [[6, 7], [2, 0]]]) / 7.0
PENNIES_NF = np.array([[[1, -1], [-1, 1]], [[-1, 1], [1, -1]]], dtype=float)
COORDINATION = np.array([[[2, 0], [0, 1]], [[2, 0], [0, 1]]], dtype=float)


def random_game(seed, n=2, depth=3, mediator=True, chance=True, lo=0.0, hi=1.0):
    """Random perfect-recall game; every player's direct action is 0.

    Infoset keys are the owner's own observation history, so recall is
    perfect by construction; others observe an action half of the time.
    """
    rng = np.random.default_rng(seed)
    b = GameBuilder(n)
    owners = list(range(0 if mediator else 1, n + 1))

    def grow(v, d, hist):
        if d == depth or (d > 1 and rng.random() < 0.2):
            b.terminal(v, rng.uniform(lo, hi, n + 1))
            return
        if chance and rng.random() < 0.25:
            k = int(rng.integers(2, 4))
            kids = b.chance(v, rng.dirichlet(np.ones(k)))
            seen = rng.random(n + 1) < 0.5
            for j, c in enumerate(kids):
                grow(c, d + 1, tuple(h + f"c{j}." if seen[a] else h for a, h in enumerate(hist)))
            return
        owner = int(rng.choice(owners))
        key = f"{owner}:{hist[owner]}"
        k = 2 + zlib.crc32(key.encode()) % 2
        kids = b.decision(v, owner, key, [str(a) for a in range(k)], 0 if owner else -1)
        seen = rng.random(n + 1) < 0.5
        for a, c in enumerate(kids):
            grow(c, d + 1, tuple(h + f"[{key}]{a}." if (p == owner or seen[p]) else h
                                 for p, h in enumerate(hist)))

    grow(b.root, 0, ("",) * (n + 1))
    return b.build()


def infosets_of(game, agent):
    return {game.infoset_keys[i]: len(game.infoset_actions[i])
            for i in range(game.num_infosets) if game.infoset_owner[i] == agent}


def random_behavioral(keys, rng, pure=False):
    """{key: probability vector} for a dict {key: number of actions}."""
    out = {}
    for k, m in sorted(keys.items()):
        if pure:
            p = np.zeros(m)
            p[rng.integers(m)] = 1.0
        else:
            p = rng.dirichlet(np.ones(m))
        out[k] = p
    return out


def walk(game, behavioral, v=0):
    """Expected utility vector from node v; behavioral[agent][key] -> probs."""
    kind = game.kind[v]
    if kind == TERMINAL:
        return game.utilities[game.terminal_position[v]].copy()
    kids = game.children(v)
    if kind == CHANCE:
        return sum(game.prob[c] * walk(game, behavioral, c) for c in kids)
    i = game.infoset[v]
    p = behavioral[int(game.owner[v])][game.infoset_keys[i]]
    return sum(p[a] * walk(game, behavioral, c) for a, c in enumerate(kids) if p[a] > 0)


def to_sequence(tp, behavioral, key=lambda k: k):
    """Sequence form on tp of a behavioral dict, looking infosets up through key()."""
    b = tp.uniform_behavioral()
    for j, k in enumerate(tp.keys):
        p = behavioral.get(key(k))
        if p is not None:
            b[tp.seq_start[j]:tp.seq_start[j] + tp.num_actions[j]] = p
    return tp.to_sequence(b)


def all_pure(keys):
    names = sorted(keys)
    for combo in itertools.product(*[range(keys[k]) for k in names]):
        out = {}
        for k, a in zip(names, combo):
            p = np.zeros(keys[k])
            p[a] = 1.0
            out[k] = p
        yield out


def direct_behavioral(game, agent):
    return {game.infoset_keys[i]: np.eye(len(game.infoset_actions[i]))[max(game.infoset_direct[i], 0)]
            for i in range(game.num_infosets) if game.infoset_owner[i] == agent}


def lagrangian_terms(M, mu, xs):
    """(u0(mu, d), [u_i(mu, d)], [u_i(mu, x_i, d_-i)]) by walking the full game."""
    g = M.game
    direct = {i: direct_behavioral(g, i) for i in range(1, M.num_players + 1)}
    base = walk(g, {0: mu, **direct})
    dev = [walk(g, {0: mu, **direct, i: xs[i]})[i] for i in range(1, M.num_players + 1)]
    return base[0], list(base[1:]), dev


def deviator_sequence(zs, xs, pick=None):
    """Deviator sequence form in a Lagrangian game from per-player behaviorals."""
    flat = {}
    for i, beh in xs.items():
        flat.update({f"p{i}:{k}": v for k, v in beh.items()})
    if pick is not None:
        flat["deviator:pick"] = pick
    return to_sequence(zs.game.treeplex(1), flat)


# one line per acceptance criterion, printed at the end of the session by conftest
ACCEPTANCE = {}


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[number] = (ok, line)
    print(line)
    return ok
