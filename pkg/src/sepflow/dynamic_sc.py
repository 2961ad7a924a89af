"""Per-node approximate Schur complements kept current under weight changes.

Each tree node H stores two Laplacians:

* ``L[H]`` on dH ∪ F_H: exact edge Laplacian at a leaf, and the sum of the
  children's boundary complements at an internal node;
* ``tsc[H]`` = (approximate) Schur complement of L[H] onto dH.

A weight change on K edges rebuilds both matrices only on the root paths of
the K owning leaves, bottom-up.  Every rebuild of a node draws a fresh
sub-seed keyed by (node id, per-node rebuild counter), so replaying the same
update sequence from scratch reproduces the state bit for bit while no
sampled sparsifier is ever reused against weights chosen after it was drawn.
"""

import numpy as np

from .laplacian import (
    WeightedLaplacian, lap_add, approx_schur, SchurParams)


class DynamicScState:
    """Separator-tree Schur complement hierarchy over live edge weights."""

    def __init__(self, tree, tails, heads, w, eps_p, seed=0,
                 sample_const=None):
        w = np.asarray(w, dtype=np.float64)
        if np.any(w <= 0):
            raise ValueError("edge weights must be positive")
        self.tree = tree
        self.tails = np.asarray(tails, dtype=np.int64)
        self.heads = np.asarray(heads, dtype=np.int64)
        self.w = w.copy()
        self.eps_p = float(eps_p)
        self.eta = tree.height
        self.delta_sc = self.eps_p / (self.eta + 1)
        self._entropy = seed
        self.sample_const = sample_const
        self.rebuild_counter = np.zeros(len(tree.nodes), dtype=np.int64)
        self.version = np.zeros(len(tree.nodes), dtype=np.int64)
        self.L = [None] * len(tree.nodes)
        self.tsc = [None] * len(tree.nodes)
        # instrumentation
        self.nodes_rebuilt = 0
        self.touched_total = 0
        self.last_rebuilt = []
        for nid in self._bottom_up(range(len(tree.nodes))):
            self._rebuild_node(nid)
        self.nodes_rebuilt = 0
        self.touched_total = 0

    # -- internals ---------------------------------------------------------

    def _bottom_up(self, nids):
        return sorted(set(nids),
                      key=lambda i: (self.tree.nodes[i].level, i))

    def _node_seed(self, nid):
        ss = np.random.SeedSequence(
            self._entropy, spawn_key=(int(nid), int(self.rebuild_counter[nid])))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def _rebuild_node(self, nid):
        nd = self.tree.nodes[nid]
        if nd.leaf:
            eids = nd.eids
            L = WeightedLaplacian.from_edges(
                nd.support, self.tails[eids], self.heads[eids], self.w[eids])
        else:
            c1, c2 = nd.children
            L = lap_add(self.tsc[c1], self.tsc[c2])
            # children with disconnected pieces can miss support vertices;
            # pad to the full dH ∪ F_H so restriction indices always resolve
            sup = nd.support
            if L.n != len(sup):
                pad = np.zeros((len(sup), len(sup)))
                if L.n:
                    pos = {int(v): i for i, v in enumerate(sup)}
                    idx = np.array([pos[int(v)] for v in L.verts])
                    pad[np.ix_(idx, idx)] = L.A
                L = WeightedLaplacian(sup, pad)
        if self.sample_const is None:
            params = SchurParams(self.delta_sc, seed=self._node_seed(nid))
        else:
            params = SchurParams(self.delta_sc, seed=self._node_seed(nid),
                                 sample_const=self.sample_const)
        self.L[nid] = L
        self.tsc[nid] = approx_schur(L, nd.boundary, params)
        self.rebuild_counter[nid] += 1
        self.version[nid] += 1
        self.nodes_rebuilt += 1
        self.touched_total += len(nd.boundary) + len(nd.elim)

    # -- public API --------------------------------------------------------

    def reweight(self, eids, w_new):
        """Set w[eids] = w_new and rebuild the affected root paths."""
        eids = np.asarray(eids, dtype=np.int64)
        w_new = np.asarray(w_new, dtype=np.float64)
        if len(eids) == 0:
            self.last_rebuilt = []
            return []
        if np.any(w_new <= 0):
            raise ValueError("edge weights must be positive")
        self.w[eids] = w_new
        path = self.tree.path_union_of_edges(eids)
        for nid in path:
            self._rebuild_node(nid)
        self.last_rebuilt = list(path)
        return list(path)

    def get_L(self, nid):
        return self.L[nid]

    def get_tsc(self, nid):
        return self.tsc[nid]

    def snapshot(self):
        """Frozen references to the current per-node matrices.

        Laplacians are immutable, so capturing the lists is enough for
        evaluating operators against the pre-reweight state later.
        """
        return {"L": list(self.L), "tsc": list(self.tsc),
                "version": self.version.copy(), "w": self.w.copy()}
