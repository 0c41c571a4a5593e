"""Benchmark instances: three-player Kuhn poker, Sheriff, random normal-form
games and sequential auctions, plus the ``name:key=value,...`` spec parser."""
from __future__ import annotations

import itertools
import re
from fractions import Fraction

import numpy as np

from .encoders import encode_nf_correlated, encode_sequential_auction
from .game import GameBuilder, GameError

SHERIFF_V, SHERIFF_P, SHERIFF_S = 5, 1, 1


def kuhn3(r=4):
    """Three-player Kuhn poker with r ranks; agent 0 does not act and u0 = 0.

    Everyone antes 1 and gets one card.  Players act in turn: check or bet
    while nobody has bet; once someone bets, every other player gets one
    chance to call or fold.  The highest card among non-folders takes the pot.
    """
    if not isinstance(r, int) or r < 3:
        raise GameError("kuhn3 needs r >= 3 ranks")
    b = GameBuilder(3)
    deals = list(itertools.permutations(range(r), 3))
    labels = ["".join(f"{c}," for c in d)[:-1] for d in deals]
    kids = b.chance(b.root, np.full(len(deals), 1.0 / len(deals)), labels, where="deal")
    for node, cards in zip(kids, deals):
        _kuhn_betting(b, node, cards, "", 0, None, [1, 1, 1], set())
    return b.build()


def _kuhn_betting(b, node, cards, hist, turn, bettor, paid, folded):
    if bettor is None:
        if turn == 3:
            return _kuhn_showdown(b, node, cards, paid, folded)
        p = turn
        check, bet = b.decision(node, p + 1, f"P{p + 1}:{cards[p]}:{hist}", ("check", "bet"))
        _kuhn_betting(b, check, cards, hist + "c", turn + 1, None, paid, folded)
        paid2 = list(paid)
        paid2[p] += 1
        _kuhn_betting(b, bet, cards, hist + "b", 1, p, paid2, folded)
        return
    # responders after a bet: bettor+1, bettor+2 (mod 3), in order
    if turn == 3:
        return _kuhn_showdown(b, node, cards, paid, folded)
    p = (bettor + turn) % 3
    fold, call = b.decision(node, p + 1, f"P{p + 1}:{cards[p]}:{hist}", ("fold", "call"))
    _kuhn_betting(b, fold, cards, hist + "f", turn + 1, bettor, paid, folded | {p})
    paid2 = list(paid)
    paid2[p] += 1
    _kuhn_betting(b, call, cards, hist + "k", turn + 1, bettor, paid2, folded)


def _kuhn_showdown(b, node, cards, paid, folded):
    live = [p for p in range(3) if p not in folded]
    win = max(live, key=lambda p: cards[p])
    pot = sum(paid)
    u = [-float(x) for x in paid]
    u[win] += pot
    b.terminal(node, [0.0] + u)


def sheriff(N=1, B=2, r=1):
    """Sheriff game: player 1 smuggles, player 2 inspects; u0 = welfare.

    The smuggler loads n in {0..N} items, then r bargaining rounds follow
    (bribe in {0..B}, accept or decline); only the last round counts.  If
    the last bribe was declined the sheriff inspects or not.
    """
    for name, v, lo in (("N", N, 0), ("B", B, 0), ("r", r, 1)):
        if not isinstance(v, int) or v < lo:
            raise GameError(f"sheriff parameter {name} must be an integer >= {lo}")
    b = GameBuilder(2)
    loads = b.decision(b.root, 1, "S:load", tuple(str(n) for n in range(N + 1)))
    for n, node in enumerate(loads):
        _sheriff_round(b, node, n, N, B, r, 0, "", None)
    return b.build()


def _sheriff_round(b, node, n, N, B, r, k, hist, last):
    if k == r:
        bribe, accepted = last
        if accepted:
            u1, u2 = SHERIFF_V * n - bribe, bribe
            b.terminal(node, [u1 + u2, u1, u2])
            return
        skip, inspect = b.decision(node, 2, f"H:{hist}", ("pass", "inspect"))
        b.terminal(skip, [SHERIFF_V * n, SHERIFF_V * n, 0])
        if n > 0:
            b.terminal(inspect, [0, -SHERIFF_P * n, SHERIFF_P * n])
        else:
            b.terminal(inspect, [0, SHERIFF_S, -SHERIFF_S])
        return
    offers = b.decision(node, 1, f"S:{n}:{hist}", tuple(str(x) for x in range(B + 1)))
    for x, o in enumerate(offers):
        h = f"{hist}{x}"
        decline, accept = b.decision(o, 2, f"H:{h}", ("decline", "accept"))
        _sheriff_round(b, decline, n, N, B, r, k + 1, h + "d", (x, False))
        _sheriff_round(b, accept, n, N, B, r, k + 1, h + "a", (x, True))


def randnf(seed=0, p=2, a=2):
    """Random normal-form utility tensor of shape (p, a, ..., a) in [0, 1)."""
    if p < 2 or a < 1:
        raise GameError("randnf needs p >= 2 players and a >= 1 actions")
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.random((p,) + (a,) * p)


def reduced_normal_form(game, cap=10**5):
    """Utility tensor (n, |X_1|, ..., |X_n|) over reduced pure strategies.

    Agent 0 must not act.  Returns (tensor, strategies per player).
    """
    from .oracle import enumerate_pure_strategies
    from .treeplex import terminal_reach

    if np.any((game.kind == 1) & (game.owner == 0)):
        raise GameError("the mediator must not act in a game to be normalized")
    n = game.num_players
    strats = [enumerate_pure_strategies(game.treeplex(i), cap) for i in range(1, n + 1)]
    shape = tuple(len(s) for s in strats)
    if int(np.prod(shape)) > cap:
        raise GameError(f"{int(np.prod(shape))} strategy profiles exceed the cap {cap}")
    out = np.zeros((n,) + shape)
    for idx in itertools.product(*[range(k) for k in shape]):
        prof = [None] + [strats[i][j] for i, j in enumerate(idx)]
        reach = terminal_reach(game, prof)
        out[(slice(None),) + idx] = reach @ game.utilities[:, 1:]
    return out, strats


UNICODE_FRACTIONS = {"¼": "1/4", "½": "1/2", "¾": "3/4"}


def _number(text):
    t = text.strip()
    for k, v in UNICODE_FRACTIONS.items():
        t = t.replace(k, v)
    try:
        return Fraction(t)
    except (ValueError, ZeroDivisionError):
        raise GameError(f"not a number: {text!r}") from None


def parse_spec(text):
    """'auction:R=2,V={0,1/4},B=1' -> ('auction', {'R': '2', 'V': '{0,1/4}', 'B': '1'})."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    params = {}
    for item in re.findall(r"[^,{]+(?:\{[^}]*\})?[^,]*", rest):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise GameError(f"parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        params[k.strip()] = v.strip()
    return name, params


def _int(params, key, default):
    v = params.pop(key, None)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError:
        raise GameError(f"{key} must be an integer, got {v!r}") from None


def _valuations(v):
    if v.startswith("{"):
        if not v.endswith("}"):
            raise GameError(f"unterminated list {v!r}")
        return [_number(x) for x in v[1:-1].split(",") if x.strip()]
    k = int(v)
    if k < 2:
        raise GameError("need at least two valuations")
    return [Fraction(j, k - 1) for j in range(k)]


def generate(text, concept="ce", objective="welfare"):
    """Instance from a spec string.  kuhn3 and sheriff give plain games; auction
    and randnf give mediator-augmented games (randnf under concept/objective)."""
    name, params = parse_spec(text)
    if name == "kuhn3":
        out = kuhn3(_int(params, "r", 4))
    elif name == "sheriff":
        out = sheriff(_int(params, "N", 1), _int(params, "B", 2), _int(params, "r", 1))
    elif name == "randnf":
        seed, p, a = _int(params, "seed", 0), _int(params, "p", 2), _int(params, "a", 2)
        out = encode_nf_correlated(randnf(seed, p, a), concept, objective)
        out.metadata["generator"] = {"seed": seed, "p": p, "a": a}
    elif name == "auction":
        rounds = _int(params, "R", 2)
        vals = _valuations(params.pop("V", "5"))
        budget = _number(params.pop("B", "1"))
        bidders = _int(params, "n", 2)
        step = params.pop("step", None)
        vis = params.pop("vis", "public")
        ir = params.pop("ir", "1") not in ("0", "false", "no")
        out = encode_sequential_auction(rounds, vals, budget, bidders,
                                        _number(step) if step else None, vis, ir)
    else:
        raise GameError(f"unknown generator {name!r}")
    if params:
        raise GameError(f"unknown parameters for {name}: {', '.join(sorted(params))}")
    return out
