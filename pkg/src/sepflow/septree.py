"""Separator tree: recursive balanced edge partition by small vertex cuts.

A node H owns a region (a set of edge ids).  Its boundary dH is the set of
region vertices shared with the rest of the graph, S(H) is the separator the
oracle chose, and F_H = S(H) \\ dH are the vertices eliminated at H (for a
leaf, everything not on the boundary).  The F_H sets partition V(G).

Auxiliary vertices (the circulation s/t) are forced into the root separator
so they land in F at the root and on the boundary of every node below.
"""

import itertools
import json

import numpy as np


class SeparatorOracle:
    """Wraps a region-splitting callable plus its contract constants.

    fn(eids, tails, heads, force) -> (S, E1, E2): S a vertex set containing
    `force`, E1/E2 a partition of eids with V(E1) ∩ V(E2) ⊆ S.
    """

    def __init__(self, fn, alpha=0.5, b=0.75, c=4.0):
        self.fn = fn
        self.alpha = float(alpha)
        self.b = float(b)
        self.c = float(c)

    def limit(self, nedges):
        return self.c * np.ceil(nedges ** self.alpha)

    def split(self, eids, tails, heads, force):
        S, E1, E2 = self.fn(eids, tails, heads, force, self)
        check_split_contract(self, eids, tails, heads, force, S, E1, E2)
        return S, E1, E2


class OracleContractError(ValueError):
    pass


def check_split_contract(oracle, eids, tails, heads, force, S, E1, E2):
    S = set(S)
    if not set(force) <= S:
        raise OracleContractError("forced vertices missing from separator")
    if len(S) > oracle.limit(len(eids)) + len(force):
        raise OracleContractError(
            "separator too large: %d > %g on %d edges"
            % (len(S), oracle.limit(len(eids)), len(eids)))
    e1, e2 = set(E1), set(E2)
    if e1 | e2 != set(eids) or e1 & e2:
        raise OracleContractError("edge sides do not partition the region")
    if max(len(e1), len(e2)) > oracle.b * len(eids):
        raise OracleContractError("unbalanced split: %d/%d of %d"
                                  % (len(e1), len(e2), len(eids)))
    ends = {}
    for part, side in ((e1, 1), (e2, 2)):
        for e in part:
            for v in (int(tails[e]), int(heads[e])):
                if v in S:
                    continue
                if ends.setdefault(v, side) != side:
                    raise OracleContractError(
                        "vertex %d on both sides but not in S" % v)


# --------------------------------------------------------------------------
# default separator oracle
# --------------------------------------------------------------------------

def _components(verts, adj, removed):
    comp = {}
    cid = 0
    for v in verts:
        if v in removed or v in comp:
            continue
        stack = [v]
        comp[v] = cid
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in removed and y not in comp:
                    comp[y] = cid
                    stack.append(y)
        cid += 1
    return comp, cid


def _try_separator(S, eids, tails, heads, verts, adj, b):
    """Pack the post-removal components into two sides; None if unbalanced."""
    comp, ncomp = _components(verts, adj, S)
    groups = [[] for _ in range(ncomp)]
    free = []
    for e in eids:
        tu, tv = int(tails[e]), int(heads[e])
        cu = comp.get(tu)
        cv = comp.get(tv)
        if cu is None and cv is None:
            free.append(e)
        elif cu is not None:
            groups[cu].append(e)
        else:
            groups[cv].append(e)
    groups.sort(key=len, reverse=True)
    sides = [[], []]
    for g in groups:
        sides[0 if len(sides[0]) <= len(sides[1]) else 1].extend(g)
    for e in free:  # separator-separator edges: whichever side has fewer
        sides[0 if len(sides[0]) <= len(sides[1]) else 1].append(e)
    cap = b * len(eids)
    if max(len(sides[0]), len(sides[1])) > cap:
        return None
    return sides[0], sides[1]


def _bfs_levels(root, adj, removed):
    level = {root: 0}
    frontier = [root]
    order = [root]
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj[v]:
                if w not in removed and w not in level:
                    level[w] = level[v] + 1
                    nxt.append(w)
                    order.append(w)
        frontier = nxt
    return level


def _generic_split(eids, tails, heads, force, oracle):
    """Candidate-based balanced separator search.

    Tries BFS level cuts from several roots (the grid median-line case),
    fundamental cycles of a BFS tree, then exhaustive small subsets for tiny
    regions.  Each candidate is certified by the packing check.
    """
    force = set(int(v) for v in force)
    verts = sorted({int(tails[e]) for e in eids}
                   | {int(heads[e]) for e in eids})
    adj = {v: set() for v in verts}
    for e in eids:
        a, bb = int(tails[e]), int(heads[e])
        if a != bb:
            adj[a].add(bb)
            adj[bb].add(a)
    limit = oracle.limit(len(eids))
    inner = [v for v in verts if v not in force]

    def attempt(cand):
        if len(cand) > limit:
            return None
        S = set(cand) | force
        packed = _try_separator(S, eids, tails, heads, verts, adj, oracle.b)
        if packed is None:
            return None
        return S, packed[0], packed[1]

    candidates = []
    # BFS level cuts from a few deterministic roots
    deg = {v: len(adj[v]) for v in inner}
    roots = []
    if inner:
        roots.append(min(inner, key=lambda v: (deg[v], v)))
        roots.append(max(inner, key=lambda v: (deg[v], -v)))
        roots.append(inner[len(inner) // 2])
    seen_roots = set()
    for r in roots:
        if r in seen_roots:
            continue
        seen_roots.add(r)
        level = _bfs_levels(r, adj, force)
        maxl = max(level.values())
        buckets = [[] for _ in range(maxl + 1)]
        for v, l in level.items():
            buckets[l].append(v)
        # count edges strictly below each level to pick balanced cuts first
        below = np.zeros(maxl + 2)
        for e in eids:
            la = level.get(int(tails[e]))
            lb = level.get(int(heads[e]))
            if la is None or lb is None:
                continue
            below[max(la, lb) + 1] += 1
        order = sorted(range(maxl + 1),
                       key=lambda l: abs(below[l] - len(eids) / 2))
        for l in order[:8]:
            candidates.append(sorted(buckets[l]))
        # fundamental cycles: BFS-tree paths closing a non-tree edge
        parent = {r: None}
        for v in sorted(level, key=lambda v: level[v]):
            for w in adj[v]:
                if w not in parent and w in level and level[w] == level[v] + 1:
                    parent[w] = v
        tree_pairs = {(min(v, p), max(v, p))
                      for v, p in parent.items() if p is not None}
        added = 0
        for v in sorted(level):
            for w in sorted(adj[v]):
                if w <= v or (v, w) in tree_pairs or w not in level:
                    continue
                cyc = set()
                a_walk, b_walk = v, w
                while a_walk is not None:
                    cyc.add(a_walk)
                    a_walk = parent.get(a_walk)
                while b_walk is not None:
                    cyc.add(b_walk)
                    b_walk = parent.get(b_walk)
                candidates.append(sorted(cyc))
                added += 1
                if added >= 6:
                    break
            if added >= 6:
                break
    # exhaustive fallback for tiny regions
    if len(eids) <= 16:
        for size in (1, 2, 3):
            for cand in itertools.combinations(inner, size):
                candidates.append(list(cand))
    candidates.sort(key=len)
    for cand in candidates:
        got = attempt(cand)
        if got is not None:
            return got
    raise OracleContractError(
        "no balanced separator found for region with %d edges" % len(eids))


def default_oracle(alpha=0.5, b=0.75, c=4.0):
    """The stock separator oracle (planar use: alpha = 1/2)."""
    return SeparatorOracle(_generic_split, alpha=alpha, b=b, c=c)


def planar_separator(eids, tails, heads, force=(), oracle=None):
    """Convenience wrapper exposing the default split on one region."""
    if oracle is None:
        oracle = default_oracle()
    return oracle.split(np.asarray(eids), tails, heads, force)


# --------------------------------------------------------------------------
# the tree
# --------------------------------------------------------------------------

class SepNode:
    __slots__ = ("id", "parent", "children", "eids", "verts", "boundary",
                 "sep", "elim", "level", "leaf")

    def __init__(self, nid, eids, boundary):
        self.id = nid
        self.parent = -1
        self.children = []
        self.eids = np.asarray(sorted(eids), dtype=np.int64)
        self.boundary = np.asarray(sorted(boundary), dtype=np.int64)
        self.verts = None
        self.sep = np.empty(0, dtype=np.int64)
        self.elim = np.empty(0, dtype=np.int64)
        self.level = 0
        self.leaf = False

    @property
    def support(self):
        """dH ∪ F_H — the vertex support of this node's Laplacian."""
        return np.union1d(self.boundary, self.elim)


class SeparatorTree:
    def __init__(self, nv, tails, heads):
        self.nv = nv
        self.tails = np.asarray(tails, dtype=np.int64)
        self.heads = np.asarray(heads, dtype=np.int64)
        self.m = len(self.tails)
        self.nodes = []
        self.root = None
        self.leaves = []
        self.leaf_of_edge = np.full(self.m, -1, dtype=np.int64)
        self.height = 0
        self.aux = ()
        self.leaf_size = 4

    def node(self, nid):
        return self.nodes[nid]

    def path_union(self, nids):
        """All ancestors of the given nodes (inclusive), children first."""
        seen = set()
        for nid in nids:
            while nid != -1 and nid not in seen:
                seen.add(nid)
                nid = self.nodes[nid].parent
        out = sorted(seen, key=lambda i: (self.nodes[i].level, i))
        return out

    def path_union_of_edges(self, eids):
        return self.path_union({int(self.leaf_of_edge[e]) for e in eids})

    def touched_cost(self, nids):
        pu = self.path_union(nids)
        return int(sum(len(self.nodes[i].boundary) + len(self.nodes[i].elim)
                       for i in pu))

    def levels(self):
        """Nodes grouped by level index."""
        out = [[] for _ in range(self.height + 1)]
        for nd in self.nodes:
            out[nd.level].append(nd.id)
        return out

    def validate(self):
        root = self.nodes[self.root]
        assert len(root.boundary) == 0, "root must have empty boundary"
        elim_seen = np.zeros(self.nv, dtype=np.int64)
        leaf_edges = []
        for nd in self.nodes:
            assert len(nd.children) in (0, 2)
            vset = set(nd.verts.tolist())
            bset = set(nd.boundary.tolist())
            assert bset <= vset
            if nd.leaf:
                assert len(nd.eids) <= self.leaf_size
                assert set(nd.elim.tolist()) == vset - bset
                leaf_edges.extend(nd.eids.tolist())
            else:
                sset = set(nd.sep.tolist())
                assert set(nd.elim.tolist()) == sset - bset
                d1, d2 = (self.nodes[c] for c in nd.children)
                assert nd.level > max(d1.level, d2.level)
                e1, e2 = set(d1.eids.tolist()), set(d2.eids.tolist())
                assert e1 | e2 == set(nd.eids.tolist()) and not (e1 & e2)
                for ch in (d1, d2):
                    expect = (bset | sset) & set(ch.verts.tolist())
                    assert set(ch.boundary.tolist()) == expect
                assert (set(d1.boundary.tolist()) | set(d2.boundary.tolist())
                        == bset | set(nd.elim.tolist()))
                shared = set(d1.verts.tolist()) & set(d2.verts.tolist())
                assert shared <= sset
            np.add.at(elim_seen, nd.elim, 1)
            # boundary is covered by ancestors' eliminated sets
            anc_elim = set()
            p = nd.parent
            while p != -1:
                anc_elim |= set(self.nodes[p].elim.tolist())
                p = self.nodes[p].parent
            assert bset <= anc_elim
        used = np.zeros(self.nv, dtype=bool)
        used[self.tails] = True
        used[self.heads] = True
        assert np.all(elim_seen[used] == 1), "F_H sets must partition V(G)"
        assert sorted(leaf_edges) == list(range(self.m))
        for a in self.aux:
            assert a in set(root.elim.tolist())
        return True

    def to_json(self):
        out = []
        for nd in self.nodes:
            out.append({
                "id": nd.id, "level": nd.level, "leaf": nd.leaf,
                "children": list(nd.children),
                "boundary": nd.boundary.tolist(),
                "elim": nd.elim.tolist(),
                "sep": nd.sep.tolist(),
                "edges": nd.eids.tolist() if nd.leaf else len(nd.eids),
            })
        return json.dumps({"height": self.height, "root": self.root,
                           "nodes": out}, sort_keys=True)


def build(nv, tails, heads, oracle=None, aux=(), leaf_size=4, validate=False):
    """Build the separator tree of the graph given by (tails, heads)."""
    if oracle is None:
        oracle = default_oracle()
    tree = SeparatorTree(nv, tails, heads)
    tree.aux = tuple(int(a) for a in aux)
    tree.leaf_size = leaf_size
    all_eids = np.arange(tree.m, dtype=np.int64)

    def region_verts(eids):
        return np.unique(np.concatenate(
            [tree.tails[eids], tree.heads[eids]])) if len(eids) else \
            np.empty(0, dtype=np.int64)

    def rec(eids, boundary, force):
        nd = SepNode(len(tree.nodes), eids, boundary)
        tree.nodes.append(nd)
        nd.verts = region_verts(nd.eids)
        vset = set(nd.verts.tolist())
        # a leaf root still eliminates every vertex, forced ones included
        if len(nd.eids) <= leaf_size and (not force or len(boundary) == 0):
            nd.leaf = True
            nd.elim = np.asarray(sorted(vset - set(nd.boundary.tolist())),
                                 dtype=np.int64)
            tree.leaves.append(nd.id)
            tree.leaf_of_edge[nd.eids] = nd.id
            return nd
        S, E1, E2 = oracle.split(nd.eids, tree.tails, tree.heads,
                                 sorted(set(force) & vset))
        nd.sep = np.asarray(sorted(S), dtype=np.int64)
        bset = set(nd.boundary.tolist())
        nd.elim = np.asarray(sorted(set(nd.sep.tolist()) - bset),
                             dtype=np.int64)
        for Ei in (E1, E2):
            cv = region_verts(np.asarray(sorted(Ei), dtype=np.int64))
            cb = sorted((bset | set(nd.sep.tolist())) & set(cv.tolist()))
            child = rec(np.asarray(sorted(Ei), dtype=np.int64), cb, ())
            child.parent = nd.id
            nd.children.append(child.id)
        nd.level = 1 + max(tree.nodes[c].level for c in nd.children)
        return nd

    root = rec(all_eids, (), tree.aux)
    tree.root = root.id
    tree.height = root.level
    if validate:
        tree.validate()
    return tree
