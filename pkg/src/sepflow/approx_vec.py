"""Sketched change detection and lazy approximate-vector maintenance.

SketchState keeps, per tree node H, the JL sketch of the node's subtree
operator, of the subtree's accumulated output, and of the offset restricted
to the subtree's edges, so that Phi * (y + Mz) restricted to any subtree is
available in O(height) work and single coordinates can be read exactly.

find_large_coordinates locates coordinates of q = scale*(y + Mz) above a
threshold by repeated random root-to-leaf descents biased by sketched
subtree norms, with an exact threshold test on every returned candidate —
sampling can only miss, never fabricate.

ApproxState runs the dyadic update schedule: at step k every window length
2^l dividing k is scanned for coordinates that drifted by more than
delta/(2*ceil(log2 m)) since step k-2^l and still carry their old value;
those snap to the current exact value.  A full refresh happens every
2^ceil(log2 m) steps.
"""

import math

import numpy as np


def sketch_dim(eta, m, rho):
    """Sketch rows needed for (1 +- 1/(9*eta))-accurate subtree norms."""
    return int(math.ceil(9.0 * max(eta, 1) ** 2
                         * math.log(max(m, 2) / rho)))


def make_phi(dim, m, rng):
    return rng.normal(0.0, 1.0 / math.sqrt(dim), size=(dim, m))


class SketchState:
    """Per-node sketches of one tree operator and its (z, y) vectors."""

    def __init__(self, op, phi, z=None, y=None, scale=None):
        self.op = op
        self.tree = op.tree
        self.phi = phi
        self.m = op.m
        self.scale = np.ones(self.m) if scale is None else \
            np.asarray(scale, dtype=np.float64)
        self.z = np.zeros(op.nv) if z is None else \
            np.asarray(z, dtype=np.float64).copy()
        self.y = np.zeros(op.m) if y is None else \
            np.asarray(y, dtype=np.float64).copy()
        n = len(self.tree.nodes)
        self.SM = [None] * n   # phi * M^(H), columns = support(H)
        self.bar = [None] * n  # phi * Mbar^(H) z
        self.Sy = [None] * n   # phi * y|E(subtree of H)
        self.update(range(n))

    def _zf(self, nd):
        out = np.zeros(len(nd.support))
        if len(nd.elim):
            spos = {int(v): i for i, v in enumerate(nd.support)}
            for v in nd.elim:
                out[spos[int(v)]] = self.z[int(v)]
        return out

    def _leaf_block(self, nd):
        lop = self.op.leaf_ops.get(nd.id)
        if lop is None:
            return np.zeros((len(nd.eids), len(nd.support)))
        J = lop.dense(nd)
        if self.op.left_diag is not None:
            J = self.op._diag(nd.eids)[:, None] * J
        return self.scale[nd.eids, None] * J

    def _refresh_node(self, nd):
        if nd.leaf:
            cols = self.phi[:, nd.eids]
            J = self._leaf_block(nd)
            self.SM[nd.id] = cols @ J
            self.bar[nd.id] = self.SM[nd.id] @ self._zf(nd)
            self.Sy[nd.id] = cols @ (self.scale[nd.eids] * self.y[nd.eids])
            return
        dim = self.phi.shape[0]
        SM = np.zeros((dim, len(nd.support)))
        bar = np.zeros(dim)
        Sy = np.zeros(dim)
        for cid in nd.children:
            child = self.tree.nodes[cid]
            eop = self.op.edge_ops.get(cid)
            if eop is not None:
                SM += self.SM[cid] @ eop.dense(nd, child)
            bar += self.bar[cid]
            Sy += self.Sy[cid]
        self.SM[nd.id] = SM
        self.bar[nd.id] = SM @ self._zf(nd) + bar
        self.Sy[nd.id] = Sy

    def update(self, changed_nodes, z=None, y=None):
        """Refresh sketches along the root paths of the changed nodes."""
        if z is not None:
            self.z = np.asarray(z, dtype=np.float64).copy()
        if y is not None:
            self.y = np.asarray(y, dtype=np.float64).copy()
        path = self.tree.path_union(changed_nodes)
        for nid in path:
            self._refresh_node(self.tree.nodes[nid])
        return path

    def sum_ancestors(self, nid):
        """The vector arriving at H from strict ancestors' F-contributions."""
        nd = self.tree.nodes[nid]
        if nd.parent == -1:
            return np.zeros(len(nd.support))
        parent = self.tree.nodes[nd.parent]
        vp = self._zf(parent) + self.sum_ancestors(nd.parent)
        return self.op.apply_edge_op(nid, vp)

    def estimate(self, nid):
        """phi restricted to E(subtree of H) times (y + Mz)."""
        return (self.bar[nid] + self.SM[nid] @ self.sum_ancestors(nid)
                + self.Sy[nid])

    def query(self, leaf_id):
        """Exact scale*(y + Mz) on the edges of one leaf."""
        nd = self.tree.nodes[leaf_id]
        v = self._zf(nd) + self.sum_ancestors(leaf_id)
        return self._leaf_block(nd) @ v + self.scale[nd.eids] * self.y[nd.eids]

    def all_estimates(self):
        """estimate() for every node in one top-down sweep."""
        out = [None] * len(self.tree.nodes)
        sa = [None] * len(self.tree.nodes)

        def down(nid):
            nd = self.tree.nodes[nid]
            if nd.parent == -1:
                sa[nid] = np.zeros(len(nd.support))
            out[nid] = self.bar[nid] + self.SM[nid] @ sa[nid] + self.Sy[nid]
            if not nd.leaf:
                vp = self._zf(nd) + sa[nid]
                for cid in nd.children:
                    sa[cid] = self.op.apply_edge_op(cid, vp)
                    down(cid)

        down(self.tree.root)
        return out


class DiffSketch:
    """Sketch view of q = q_a - q_b for two SketchStates sharing one phi.

    This evaluates the stacked two-bank difference operator blockwise: every
    estimate/query is the difference of the banks' values.
    """

    def __init__(self, a, b):
        assert a.phi is b.phi and a.m == b.m
        self.a = a
        self.b = b
        self.tree = a.tree
        self.m = a.m

    def estimate(self, nid):
        return self.a.estimate(nid) - self.b.estimate(nid)

    def query(self, leaf_id):
        return self.a.query(leaf_id) - self.b.query(leaf_id)

    def all_estimates(self):
        ea = self.a.all_estimates()
        eb = self.b.all_estimates()
        return [x - y for x, y in zip(ea, eb)]


def find_large_coordinates(sk, theta, rho=1e-3, rng=None, max_descents=None):
    """Coordinates of q with |q_i| >= theta, by sketch-guided sampling.

    Returns (set of edge ids, stats).  Every candidate is verified against
    the exactly-queried value, so false positives cannot occur; misses
    happen with probability <= rho given the descent budget.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    tree = sk.tree
    est = sk.all_estimates()
    phi_q2 = float(est[tree.root] @ est[tree.root])
    stats = {"descents": 0, "accepts": 0, "dead_ends": 0, "candidates": 0}
    found = set()
    if phi_q2 <= 0.0 or theta <= 0.0:
        return found, stats
    n = int(math.ceil(4.0 * phi_q2 / theta ** 2
                      * math.log(max(sk.m, 2) / rho)))
    if max_descents is not None:
        n = min(n, int(max_descents))
    norms = [float(e @ e) for e in est]
    queried = {}
    for _ in range(n):
        stats["descents"] += 1
        nid = tree.root
        p = 1.0
        while not tree.nodes[nid].leaf:
            kids = tree.nodes[nid].children
            wts = np.array([norms[c] for c in kids])
            s = wts.sum()
            if s <= 0.0:
                nid = -1
                break
            probs = wts / s
            j = int(rng.choice(len(kids), p=probs))
            p *= probs[j]
            nid = kids[j]
        if nid < 0:
            stats["dead_ends"] += 1
            continue
        q_leaf = queried.get(nid)
        if q_leaf is None:
            q_leaf = sk.query(nid)
            queried[nid] = q_leaf
        qn2 = float(q_leaf @ q_leaf)
        p_acc = min(1.0, qn2 / (2.0 * p * phi_q2)) if p > 0 else 1.0
        if rng.random() < p_acc:
            stats["accepts"] += 1
            eids = tree.nodes[nid].eids
            for i, e in enumerate(eids):
                if abs(q_leaf[i]) >= theta:
                    found.add(int(e))
            stats["candidates"] += len(eids)
    return found, stats


class ApproxState:
    """Dyadic-schedule maintenance of x_bar with ||D^{1/2}(x-x_bar)||_inf <= delta.

    The caller supplies the exact vector x and the diagonal D at every step;
    `detector` may be swapped for a sketch-backed one (same contract: given
    the window index and the masked scaled difference vector, return
    candidate coordinates; misses allowed, extras are filtered exactly).
    """

    def __init__(self, m, delta, rho=1e-3, beta=None, seed=0,
                 detector=None):
        self.m = m
        self.delta = float(delta)
        self.rho = rho
        self.beta = beta
        self.logm = max(1, int(math.ceil(math.log2(max(m, 2)))))
        self.theta = self.delta / (2.0 * self.logm)
        self.period = 2 ** self.logm
        self.k = 0
        self.xbar = None
        self.hist = {}
        self.last_update = np.zeros(m, dtype=np.int64)
        self.metrics = []
        self.rng = np.random.default_rng(seed)
        self.detector = detector or self._direct_detector

    def _direct_detector(self, ell, q):
        return set(np.nonzero(np.abs(q) >= self.theta)[0].tolist())

    def initialize(self, x0):
        self.k = 0
        self.xbar = np.asarray(x0, dtype=np.float64).copy()
        self.hist = {0: self.xbar.copy()}
        self.last_update[:] = 0
        self.metrics = []
        return self.xbar

    def step(self, x, D, d_changed=()):
        """Advance to step k+1 with exact vector x and scaling diag D."""
        x = np.asarray(x, dtype=np.float64).copy()
        D = np.asarray(D, dtype=np.float64)
        self.k += 1
        k = self.k
        rec = {"k": k, "d_snaps": 0, "updated": 0, "ell_max": -1,
               "full_reset": False, "windows": []}
        d_changed = np.asarray(d_changed, dtype=np.int64)
        if len(d_changed):
            prev = self.hist[k - 1]
            self.xbar[d_changed] = prev[d_changed]
            self.last_update[d_changed] = k - 1
            rec["d_snaps"] = int(len(d_changed))
        if k % self.period == 0:
            self.xbar = x.copy()
            self.last_update[:] = k
            rec["full_reset"] = True
            rec["updated"] = self.m
            rec["ell_max"] = self.logm
        else:
            ell = 0
            sd = np.sqrt(D)
            direct = self.detector == self._direct_detector
            hmin = min(self.hist)
            parts = []
            while k % (2 ** ell) == 0 and ell <= self.logm:
                j = k - 2 ** ell
                if j < hmin:
                    break
                rec["ell_max"] = ell
                xold = self.hist[j]
                mask = self.last_update <= j
                q = np.where(mask, sd * (x - xold), 0.0)
                if direct:
                    hits = np.nonzero(np.abs(q) >= self.theta)[0]
                else:
                    cand = self.detector(ell, q)
                    hits = np.array(
                        [i for i in cand
                         if mask[i] and abs(q[i]) >= self.theta],
                        dtype=np.int64)
                rec["windows"].append({"ell": ell, "hits": len(hits)})
                if len(hits):
                    parts.append(hits)
                ell += 1
            if parts:
                upd = parts[0] if len(parts) == 1 else \
                    np.unique(np.concatenate(parts))
                self.xbar[upd] = x[upd]
                self.last_update[upd] = k
                rec["updated"] = int(len(upd))
        self.hist[k] = x
        self.hist.pop(k - self.period - 1, None)
        self.metrics.append(rec)
        return self.xbar
