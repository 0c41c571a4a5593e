"""Extensive-form games stored as flat arrays indexed by node id.

Node ids are allocated so that every parent precedes its children and the
children of a node occupy a contiguous id range.  Agent 0 is the mediator,
agents 1..n are the players.
"""
from __future__ import annotations

import json
import math
from array import array
from functools import cached_property

import numpy as np

CHANCE, DECISION, TERMINAL = 0, 1, 2
KIND_NAMES = {CHANCE: "chance", DECISION: "agent", TERMINAL: "terminal"}

PROB_CLAMP = 1e-12
MASS_TOL = 1e-9


class GameError(ValueError):
    """Raised when a game document or construction violates an invariant."""


class ExtensiveFormGame:
    def __init__(self, num_players, kind, owner, infoset, parent, first_child,
                 num_children, prob, depth, utilities, infoset_keys,
                 infoset_owner, infoset_actions, infoset_direct=None,
                 node_ids=None, chance_labels=None, validate=True):
        self.num_players = int(num_players)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.owner = np.asarray(owner, dtype=np.int32)
        self.infoset = np.asarray(infoset, dtype=np.int32)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.first_child = np.asarray(first_child, dtype=np.int64)
        self.num_children = np.asarray(num_children, dtype=np.int32)
        self.prob = np.asarray(prob, dtype=np.float64)
        self.depth = np.asarray(depth, dtype=np.int32)
        self.terminals = np.flatnonzero(self.kind == TERMINAL)
        self.utilities = np.asarray(utilities, dtype=np.float64).reshape(
            len(self.terminals), self.num_players + 1)
        self.infoset_keys = list(infoset_keys)
        self.infoset_owner = np.asarray(infoset_owner, dtype=np.int32)
        self.infoset_actions = [tuple(a) for a in infoset_actions]
        if infoset_direct is None:
            infoset_direct = np.full(len(self.infoset_keys), -1)
        self.infoset_direct = np.asarray(infoset_direct, dtype=np.int32)
        self.node_ids = node_ids
        self.chance_labels = chance_labels or {}
        if validate:
            self.validate()

    @property
    def num_nodes(self):
        return len(self.kind)

    @property
    def num_terminals(self):
        return len(self.terminals)

    @property
    def num_infosets(self):
        return len(self.infoset_keys)

    def node_label(self, v):
        return self.node_ids[v] if self.node_ids is not None else str(v)

    def children(self, v):
        f = self.first_child[v]
        return range(f, f + self.num_children[v])

    @cached_property
    def parent_action(self):
        pa = np.zeros(self.num_nodes, dtype=np.int32)
        nz = self.parent >= 0
        pa[nz] = np.arange(self.num_nodes)[nz] - self.first_child[self.parent[nz]]
        return pa

    @cached_property
    def levels(self):
        """Node ids grouped by depth, shallowest first."""
        order = np.argsort(self.depth, kind="stable")
        bounds = np.searchsorted(self.depth[order],
                                 np.arange(self.depth.max() + 2))
        return [order[bounds[d]:bounds[d + 1]] for d in range(len(bounds) - 1)]

    @cached_property
    def action_offset(self):
        sizes = np.array([len(a) for a in self.infoset_actions], dtype=np.int64)
        return np.concatenate([[0], np.cumsum(sizes)])

    @cached_property
    def chance_reach(self):
        """Product of chance probabilities on the path to each terminal."""
        reach = np.ones(self.num_nodes)
        for lev in self.levels[1:]:
            reach[lev] = reach[self.parent[lev]] * self.prob[lev]
        return reach[self.terminals]

    @cached_property
    def terminal_position(self):
        pos = np.full(self.num_nodes, -1, dtype=np.int64)
        pos[self.terminals] = np.arange(len(self.terminals))
        return pos

    def last_action_codes(self, agent):
        """For every node, the code of the agent's last action on its path.

        Code 0 is the empty sequence; action a at infoset I has code
        action_offset[I] + a + 1.
        """
        code = np.zeros(self.num_nodes, dtype=np.int64)
        mine = (self.kind == DECISION) & (self.owner == agent)
        off = self.action_offset
        pa = self.parent_action
        for lev in self.levels[1:]:
            p = self.parent[lev]
            own = mine[p]
            code[lev] = np.where(own, off[self.infoset[p]] + pa[lev] + 1, code[p])
        return code

    def recall_violation(self, agent):
        """Return a node whose infoset breaks perfect recall for agent, or None."""
        dec = np.flatnonzero((self.kind == DECISION) & (self.owner == agent))
        if len(dec) == 0:
            return None
        code = self.last_action_codes(agent)[dec]
        iset = self.infoset[dec]
        ref = np.zeros(self.num_infosets, dtype=np.int64)
        first_iset, first_pos = np.unique(iset, return_index=True)
        ref[first_iset] = code[first_pos]
        bad = np.flatnonzero(code != ref[iset])
        return int(dec[bad[0]]) if len(bad) else None

    def validate(self):
        n = self.num_players
        if self.kind[0] == TERMINAL and self.num_nodes > 1:
            raise GameError("root is terminal but the game has other nodes")
        dec = self.kind == DECISION
        if np.any((self.owner[dec] < 0) | (self.owner[dec] > n)):
            bad = int(np.flatnonzero(dec & ((self.owner < 0) | (self.owner > n)))[0])
            raise GameError(f"node {self.node_label(bad)}: owner out of range")
        if np.any(self.num_children[dec | (self.kind == CHANCE)] == 0):
            bad = int(np.flatnonzero((self.kind != TERMINAL) & (self.num_children == 0))[0])
            raise GameError(f"node {self.node_label(bad)}: no actions")
        if not np.all(np.isfinite(self.utilities)):
            raise GameError("terminal utilities must be finite")
        if np.any(self.infoset_owner[self.infoset[dec]] != self.owner[dec]):
            raise GameError("infoset shared by nodes of different agents")
        for player in range(1, n + 1):
            v = self.recall_violation(player)
            if v is not None:
                raise GameError(
                    f"player {player} lacks perfect recall at node {self.node_label(v)}")

    def treeplex(self, agent):
        from .treeplex import build_treeplex
        cache = self.__dict__.setdefault("_treeplexes", {})
        if agent not in cache:
            cache[agent] = build_treeplex(self, agent)
        return cache[agent]


class GameBuilder:
    """Incremental construction of an ExtensiveFormGame.

    The root is node 0.  Expanding a node allocates its children as a
    contiguous block of fresh ids, which are returned for further expansion.
    """

    def __init__(self, num_players):
        self.num_players = num_players
        self.kind = array("b", [-1])
        self.owner = array("i", [-1])
        self.infoset = array("i", [-1])
        self.parent = array("q", [-1])
        self.first_child = array("q", [0])
        self.num_children = array("i", [0])
        self.prob = array("d", [1.0])
        self.depth = array("i", [0])
        self.utils = array("d")
        self.keys = []
        self.key_index = {}
        self.isets_owner = []
        self.isets_actions = []
        self.isets_direct = []
        self.chance_labels = {}
        self.term_ids = array("q")

    root = 0

    def _expand(self, v, k):
        if self.kind[v] != -1:
            raise GameError(f"node {v} already defined")
        first = len(self.kind)
        d = self.depth[v] + 1
        self.kind.extend([-1] * k)
        self.owner.extend([-1] * k)
        self.infoset.extend([-1] * k)
        self.parent.extend([v] * k)
        self.first_child.extend([0] * k)
        self.num_children.extend([0] * k)
        self.prob.extend([1.0] * k)
        self.depth.extend([d] * k)
        self.first_child[v] = first
        self.num_children[v] = k
        return range(first, first + k)

    def chance(self, v, probs, labels=None, where=None):
        probs = normalize_chance(probs, where if where is not None else v)
        kids = self._expand(v, len(probs))
        self.kind[v] = CHANCE
        for c, p in zip(kids, probs):
            self.prob[c] = p
        if labels is not None:
            self.chance_labels[v] = list(labels)
        return kids

    def decision(self, v, owner, key, actions, direct=-1):
        actions = tuple(actions)
        idx = self.key_index.get(key)
        if idx is None:
            idx = len(self.keys)
            self.key_index[key] = idx
            self.keys.append(key)
            self.isets_owner.append(owner)
            self.isets_actions.append(actions)
            self.isets_direct.append(direct)
        elif self.isets_actions[idx] != actions:
            raise GameError(f"infoset {key}: action sets differ")
        elif self.isets_owner[idx] != owner:
            raise GameError(f"infoset {key}: owners differ")
        kids = self._expand(v, len(actions))
        self.kind[v] = DECISION
        self.owner[v] = owner
        self.infoset[v] = idx
        return kids

    def terminal(self, v, utilities):
        if self.kind[v] != -1:
            raise GameError(f"node {v} already defined")
        if len(utilities) != self.num_players + 1:
            raise GameError(f"node {v}: expected {self.num_players + 1} utilities")
        self.kind[v] = TERMINAL
        self.term_ids.append(v)
        self.utils.extend(utilities)

    def build(self, node_ids=None, validate=True):
        kind = np.frombuffer(self.kind, dtype=np.int8)
        if np.any(kind < 0):
            raise GameError(f"node {int(np.flatnonzero(kind < 0)[0])} left undefined")
        # utilities were appended in definition order, not id order
        order = np.argsort(np.frombuffer(self.term_ids, dtype=np.int64), kind="stable")
        utils = np.frombuffer(self.utils, dtype=np.float64).reshape(-1, self.num_players + 1)
        return ExtensiveFormGame(
            self.num_players, kind.copy(), _copy(self.owner, np.int32),
            _copy(self.infoset, np.int32),
            _copy(self.parent, np.int64),
            _copy(self.first_child, np.int64),
            _copy(self.num_children, np.int32),
            _copy(self.prob, np.float64),
            _copy(self.depth, np.int32),
            utils[order], self.keys, self.isets_owner, self.isets_actions,
            self.isets_direct, node_ids=node_ids, chance_labels=self.chance_labels,
            validate=validate)


def _copy(buf, dtype):
    return np.frombuffer(buf, dtype=dtype).copy()


def normalize_chance(probs, where):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise GameError(f"chance node {where}: empty distribution")
    if np.any(p < -PROB_CLAMP):
        raise GameError(f"chance node {where}: negative mass")
    tiny = np.abs(p) < PROB_CLAMP
    p = np.where(tiny, 0.0, p)
    total = p.sum()
    if not math.isfinite(total) or abs(total - 1.0) > MASS_TOL:
        raise GameError(f"chance node {where}: mass {total:.12g}")
    # leave already-normalized input bit-for-bit intact
    if tiny.any() or abs(total - 1.0) > 1e-15:
        p = p / total
    return p


def load_game(document):
    """Parse and validate a game from its JSON text (or an already-parsed dict)."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    try:
        n = int(doc["num_players"])
        nodes = {str(nd["id"]): nd for nd in doc["nodes"]}
        root = str(doc["root"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GameError(f"malformed game document: {exc}") from exc
    if len(nodes) != len(doc["nodes"]):
        raise GameError("duplicate node ids")
    declared = {}
    for iset in doc.get("infosets", []):
        declared[str(iset["id"])] = iset
    direct = {}
    for player, mapping in (doc.get("direct_strategy") or {}).items():
        for key, a in mapping.items():
            direct[str(key)] = int(a)

    b = GameBuilder(n)
    ids = [root]
    seen = set()
    stack = [(0, root, root)]
    while stack:
        v, nid, path = stack.pop()
        if nid not in nodes:
            raise GameError(f"{path}: unknown node id {nid!r}")
        if nid in seen:
            raise GameError(f"{path}: node {nid!r} reached twice (not a tree)")
        seen.add(nid)
        nd = nodes[nid]
        kind = nd.get("kind")
        if kind == "terminal":
            utils = nd.get("utilities")
            if utils is None or len(utils) != n + 1:
                raise GameError(f"{path}: terminal needs {n + 1} utilities")
            b.terminal(v, [float(u) for u in utils])
            continue
        children = [str(c) for c in nd.get("children", [])]
        if kind == "chance":
            probs = nd.get("chance_probs")
            if probs is None or len(probs) != len(children):
                raise GameError(f"{path}: chance_probs must match children")
            kids = b.chance(v, [float(p) for p in probs], nd.get("actions"), where=nid)
        elif kind in ("agent", "decision", "player"):
            if "owner" not in nd or "infoset" not in nd:
                raise GameError(f"{path}: agent node needs owner and infoset")
            key = str(nd["infoset"])
            actions = nd.get("actions")
            if key in declared:
                decl = declared[key]
                if actions is None:
                    actions = decl.get("actions")
                elif decl.get("actions") is not None and list(decl["actions"]) != list(actions):
                    raise GameError(f"infoset {key}: action sets differ")
            if actions is None:
                actions = [str(k) for k in range(len(children))]
            if len(actions) != len(children):
                raise GameError(f"{path}: {len(actions)} actions but {len(children)} children")
            kids = b.decision(v, int(nd["owner"]), key, [str(a) for a in actions],
                              direct.get(key, -1))
        else:
            raise GameError(f"{path}: unknown node kind {kind!r}")
        ids.extend(children)
        for c, cid in zip(kids, children):
            stack.append((c, cid, f"{path}/{cid}"))
    unreachable = set(nodes) - seen
    if unreachable:
        raise GameError(f"node {sorted(unreachable)[0]!r} is not reachable from the root")
    game = b.build(node_ids=ids)
    for key, a in direct.items():
        idx = b.key_index.get(key)
        if idx is None:
            raise GameError(f"direct_strategy names unknown infoset {key}")
        if not 0 <= a < len(game.infoset_actions[idx]):
            raise GameError(f"direct_strategy: infoset {key}: action {a} out of range")
    return game


def game_to_dict(game):
    n = game.num_players
    nodes = []
    for v in range(game.num_nodes):
        k = int(game.kind[v])
        nd = {"id": game.node_label(v), "kind": KIND_NAMES[k]}
        if k == TERMINAL:
            t = game.terminal_position[v]
            nd["utilities"] = [float(u) for u in game.utilities[t]]
        else:
            kids = list(game.children(v))
            nd["children"] = [game.node_label(c) for c in kids]
            if k == CHANCE:
                nd["chance_probs"] = [float(game.prob[c]) for c in kids]
                if v in game.chance_labels:
                    nd["actions"] = list(game.chance_labels[v])
            else:
                i = game.infoset[v]
                nd["owner"] = int(game.owner[v])
                nd["infoset"] = game.infoset_keys[i]
                nd["actions"] = list(game.infoset_actions[i])
        nodes.append(nd)
    infosets = [{"id": key, "owner": int(game.infoset_owner[i]),
                 "actions": list(game.infoset_actions[i])}
                for i, key in enumerate(game.infoset_keys)]
    direct = {}
    for i, key in enumerate(game.infoset_keys):
        if game.infoset_direct[i] >= 0:
            direct.setdefault(str(int(game.infoset_owner[i])), {})[key] = int(game.infoset_direct[i])
    doc = {"num_players": n, "root": game.node_label(0), "nodes": nodes, "infosets": infosets}
    if direct:
        doc["direct_strategy"] = direct
    return doc


def dump_game(game, indent=None):
    return json.dumps(game_to_dict(game), indent=indent)


def compose(subgames, root, num_players, utilities=None, owner_maps=None, key_maps=None):
    """Hang several games below a fresh root node.

    root is ("chance", probs) or ("decision", owner, key, actions).  Infosets
    with equal (mapped) keys are merged across subgames.  owner_maps[j] is an
    array mapping subgame j's agent ids to the new ones, key_maps[j] a
    function on (key, old_owner).  Returns (game, branch) where branch[t] is
    the subgame index of terminal t.
    """
    k = len(subgames)
    sizes = [g.num_nodes for g in subgames]
    base = np.concatenate([[k + 1], k + 1 + np.cumsum([s - 1 for s in sizes])])
    keys, owners, actions, direct = [], [], [], []
    key_index = {}
    if root[0] == "decision":
        _, r_owner, r_key, r_actions = root
        key_index[r_key] = 0
        keys.append(r_key)
        owners.append(r_owner)
        actions.append(tuple(r_actions))
        direct.append(-1)
    parts = {name: [] for name in ("kind", "owner", "infoset", "parent", "first_child",
                                   "num_children", "prob", "depth", "tnode", "tutil", "tbranch")}
    for j, g in enumerate(subgames):
        omap = None if owner_maps is None else np.asarray(owner_maps[j])
        kmap = None if key_maps is None else key_maps[j]
        remap = np.empty(g.num_infosets, dtype=np.int32)
        for i, key in enumerate(g.infoset_keys):
            old_owner = int(g.infoset_owner[i])
            new_owner = old_owner if omap is None else int(omap[old_owner])
            nk = key if kmap is None else kmap(key, old_owner)
            idx = key_index.get(nk)
            if idx is None:
                idx = key_index[nk] = len(keys)
                keys.append(nk)
                owners.append(new_owner)
                actions.append(g.infoset_actions[i])
                direct.append(int(g.infoset_direct[i]))
            elif actions[idx] != g.infoset_actions[i]:
                raise GameError(f"infoset {nk}: action sets differ")
            elif owners[idx] != new_owner:
                raise GameError(f"infoset {nk}: owners differ")
            remap[i] = idx
        ids = np.arange(g.num_nodes, dtype=np.int64)
        new_id = np.where(ids == 0, j + 1, base[j] + ids - 1)
        par = np.where(g.parent >= 0, new_id[np.maximum(g.parent, 0)], 0)
        fc = np.where(g.num_children > 0, new_id[np.minimum(g.first_child, g.num_nodes - 1)], 0)
        own = g.owner if omap is None else np.where(g.owner >= 0, omap[np.maximum(g.owner, 0)], -1)
        iset = np.full(g.num_nodes, -1, dtype=np.int64)
        has = g.infoset >= 0
        iset[has] = remap[g.infoset[has]]
        parts["kind"].append(g.kind)
        parts["owner"].append(own)
        parts["infoset"].append(iset)
        parts["parent"].append(par)
        parts["first_child"].append(fc)
        parts["num_children"].append(g.num_children)
        parts["prob"].append(g.prob)
        parts["depth"].append(g.depth + 1)
        parts["tnode"].append(new_id[g.terminals])
        tu = g.utilities if utilities is None else utilities[j]
        parts["tutil"].append(np.asarray(tu, dtype=np.float64).reshape(g.num_terminals, num_players + 1))
        parts["tbranch"].append(np.full(g.num_terminals, j))

    total = int(base[-1])
    arrays = {}
    for name, dt in (("kind", np.int8), ("owner", np.int32), ("infoset", np.int32),
                     ("parent", np.int64), ("first_child", np.int64),
                     ("num_children", np.int32), ("prob", np.float64), ("depth", np.int32)):
        a = np.empty(total, dtype=dt)
        for j, g in enumerate(subgames):
            src = parts[name][j]
            a[j + 1] = src[0]
            a[base[j]:base[j + 1]] = src[1:]
        arrays[name] = a
    if root[0] == "chance":
        probs = normalize_chance(root[1], "root")
        if len(probs) != k:
            raise GameError("root distribution does not match the number of subgames")
        arrays["kind"][0] = CHANCE
        arrays["owner"][0] = -1
        arrays["infoset"][0] = -1
        arrays["prob"][1:k + 1] = probs
    else:
        if len(root[3]) != k:
            raise GameError("root actions do not match the number of subgames")
        arrays["kind"][0] = DECISION
        arrays["owner"][0] = root[1]
        arrays["infoset"][0] = 0
        arrays["prob"][1:k + 1] = 1.0
    arrays["parent"][0] = -1
    arrays["parent"][1:k + 1] = 0
    arrays["first_child"][0] = 1
    arrays["num_children"][0] = k
    arrays["prob"][0] = 1.0
    arrays["depth"][0] = 0
    tnode = np.concatenate(parts["tnode"])
    order = np.argsort(tnode, kind="stable")
    game = ExtensiveFormGame(
        num_players, arrays["kind"], arrays["owner"], arrays["infoset"], arrays["parent"],
        arrays["first_child"], arrays["num_children"], arrays["prob"], arrays["depth"],
        np.concatenate(parts["tutil"])[order], keys, owners, actions, direct, validate=False)
    return game, np.concatenate(parts["tbranch"])[order]


def with_utilities(game, utilities, num_players=None):
    """Same tree, new terminal utilities (arrays are shared, not copied)."""
    g = ExtensiveFormGame.__new__(ExtensiveFormGame)
    g.__dict__.update({k: v for k, v in game.__dict__.items() if k not in ("utilities", "_treeplexes")})
    if num_players is not None:
        g.num_players = num_players
    g.utilities = np.asarray(utilities, dtype=np.float64).reshape(game.num_terminals, g.num_players + 1)
    if "_treeplexes" in game.__dict__:
        g._treeplexes = game._treeplexes
    return g


def relabel(game, num_players, owner_map, key_map, utilities):
    """Same tree with agents renamed by owner_map and infoset keys by key_map.

    Infosets whose new keys coincide are merged.
    """
    owner_map = np.asarray(owner_map)
    keys, owners, actions, direct = [], [], [], []
    index = {}
    remap = np.empty(game.num_infosets, dtype=np.int32)
    for i, key in enumerate(game.infoset_keys):
        old = int(game.infoset_owner[i])
        nk = key_map(key, old)
        j = index.get(nk)
        if j is None:
            j = index[nk] = len(keys)
            keys.append(nk)
            owners.append(int(owner_map[old]))
            actions.append(game.infoset_actions[i])
            direct.append(int(game.infoset_direct[i]))
        elif actions[j] != game.infoset_actions[i]:
            raise GameError(f"infoset {nk}: action sets differ")
        remap[i] = j
    g = ExtensiveFormGame.__new__(ExtensiveFormGame)
    g.__dict__.update({k: v for k, v in game.__dict__.items() if k != "_treeplexes"})
    g.num_players = num_players
    g.owner = np.where(game.owner >= 0, owner_map[np.maximum(game.owner, 0)], -1).astype(np.int32)
    g.infoset = np.full(game.num_nodes, -1, dtype=np.int32)
    has = game.infoset >= 0
    g.infoset[has] = remap[game.infoset[has]]
    g.infoset_keys = keys
    g.infoset_owner = np.asarray(owners, dtype=np.int32)
    g.infoset_actions = actions
    g.infoset_direct = np.asarray(direct, dtype=np.int32)
    g.utilities = np.asarray(utilities, dtype=np.float64).reshape(game.num_terminals, num_players + 1)
    g.__dict__.pop("action_offset", None)
    return g
