"""Implicit maintenance of z = c*z_step + z_sum and x = y + M z.

The vertex vector z accumulates the per-step projected directions without
ever being touched in full: each step updates u (the forward-eliminated
right-hand side), refreshes z_step = block-diag solve of u, folds the change
into z_sum, and bumps the scalar coefficient c.  Weight changes re-derive u
under the new elimination operators by un-applying the old ones along the
affected root paths only.

RepState wraps a ZState together with an offset y and a tree operator M and
keeps the exposed value x = y + M(c*z_step + z_sum) constant across
reweights by charging the operator change to y.
"""

import numpy as np
import scipy.linalg

from .dynamic_sc import DynamicScState
from .laplacian import sdd_solve


class SnapshotProvider:
    """Frozen view of a DynamicScState (matrices + weights at capture)."""

    def __init__(self, dsc):
        snap = dsc.snapshot()
        self._L = snap["L"]
        self._tsc = snap["tsc"]
        self.w = snap["w"]
        self.tree = dsc.tree
        self.eps_p = dsc.eps_p

    def get_L(self, nid):
        return self._L[nid]

    def get_tsc(self, nid):
        return self._tsc[nid]


class _BlockSolver:
    """Factorization of one F-block of a node Laplacian.

    The block is PSD with non-positive off-diagonals; connected components
    with (numerically) zero row sums are genuinely singular and solved in
    the grounded pseudo-inverse sense, everything else by Cholesky.
    """

    def __init__(self, M):
        M = np.asarray(M, dtype=np.float64)
        n = M.shape[0]
        self.n = n
        self.parts = []
        if n == 0:
            return
        # connected components over nonzero off-diagonal structure
        scale = max(np.abs(M).max(), 1e-300)
        adjm = np.abs(M) > 1e-14 * scale
        np.fill_diagonal(adjm, False)
        label = -np.ones(n, dtype=int)
        nc = 0
        for v in range(n):
            if label[v] >= 0:
                continue
            stack = [v]
            label[v] = nc
            while stack:
                x = stack.pop()
                for y in np.nonzero(adjm[x])[0]:
                    if label[y] < 0:
                        label[y] = nc
                        stack.append(y)
            nc += 1
        for c in range(nc):
            idx = np.nonzero(label == c)[0]
            sub = M[np.ix_(idx, idx)]
            rs = np.abs(sub.sum(axis=1)).max()
            singular = rs <= 1e-12 * max(np.abs(sub).max(), 1e-300)
            if singular and len(idx) > 1:
                cho = scipy.linalg.cho_factor(sub[1:, 1:], lower=True,
                                              check_finite=False)
                self.parts.append((idx, cho, True))
            elif singular:
                self.parts.append((idx, None, True))
            else:
                cho = scipy.linalg.cho_factor(sub, lower=True,
                                              check_finite=False)
                self.parts.append((idx, cho, False))

    def solve(self, b):
        x = np.zeros(self.n)
        for idx, cho, singular in self.parts:
            bb = b[idx]
            if singular:
                bb = bb - bb.mean()
                if cho is not None:
                    xi = np.zeros(len(idx))
                    xi[1:] = scipy.linalg.cho_solve(cho, bb[1:],
                                                    check_finite=False)
                    xi -= xi.mean()
                else:
                    xi = np.zeros(len(idx))
                x[idx] = xi
            else:
                x[idx] = scipy.linalg.cho_solve(cho, bb, check_finite=False)
        return x


_FF_CACHE_MAX = 8192


class FfSolveCache:
    """Per-(node Laplacian object) factorizations of the F_H blocks.

    Keyed by matrix object identity; entries hold a reference to the matrix
    so ids can never be recycled while cached.
    """

    def __init__(self):
        self._d = {}

    def solver(self, L, nd):
        key = (id(L), len(nd.elim))
        hit = self._d.get(key)
        if hit is not None and hit[0] is L:
            return hit[1]
        if len(self._d) >= _FF_CACHE_MAX:
            self._d.clear()
        M = L.restrict(nd.elim) if len(nd.elim) else np.zeros((0, 0))
        s = _BlockSolver(M)
        self._d[key] = (L, s)
        return s


def ff_solve(cache, provider, nd, rhs):
    """(L^(H)_{F,F})^{-1} rhs for one node (pseudo-solve if singular)."""
    L = provider.get_L(nd.id)
    return cache.solver(L, nd).solve(rhs)


class ZState:
    """The vertex-side representation z = c*z_step + z_sum."""

    def __init__(self, dsc, tails, heads, v):
        self.dsc = dsc
        self.tree = dsc.tree
        self.nv = dsc.tree.nv
        self.tails = np.asarray(tails, dtype=np.int64)
        self.heads = np.asarray(heads, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.float64).copy()
        self.cache = FfSolveCache()
        self.c = 0.0
        self.z_sum = np.zeros(self.nv)
        all_nodes = range(len(self.tree.nodes))
        self.u = self.partial_project(self._btwv(self.v), all_nodes)
        self.z_step = np.zeros(self.nv)
        self._refresh_z_step(all_nodes, offset=False)

    # -- small helpers -----------------------------------------------------

    def _btwv(self, vec):
        """B^T W^{1/2} vec as a dense vertex vector."""
        d = np.zeros(self.nv)
        sw = np.sqrt(self.dsc.w) * vec
        np.add.at(d, self.heads, sw)
        np.add.at(d, self.tails, -sw)
        return d

    def _ordered(self, nids, ascending=True):
        out = sorted(set(int(i) for i in nids),
                     key=lambda i: (self.tree.nodes[i].level, i))
        return out if ascending else out[::-1]

    def value(self):
        return self.c * self.z_step + self.z_sum

    # -- projections -------------------------------------------------------

    def partial_project(self, d, nids, provider=None):
        """Forward elimination of d through the nodes in nids, bottom-up."""
        if provider is None:
            provider = self.dsc
        u = np.asarray(d, dtype=np.float64).copy()
        for nid in self._ordered(nids):
            nd = self.tree.nodes[nid]
            if len(nd.elim) == 0 or len(nd.boundary) == 0:
                continue
            L = provider.get_L(nid)
            x = ff_solve(self.cache, provider, nd, u[nd.elim])
            fb = L.A[np.ix_(L.indices_of(nd.boundary),
                            L.indices_of(nd.elim))]
            u[nd.boundary] -= fb @ x
        return u

    def inverse_partial_project(self, u, nids, provider=None):
        """Exact inverse of partial_project over the same node set."""
        if provider is None:
            provider = self.dsc
        d = np.asarray(u, dtype=np.float64).copy()
        for nid in self._ordered(nids, ascending=False):
            nd = self.tree.nodes[nid]
            if len(nd.elim) == 0 or len(nd.boundary) == 0:
                continue
            L = provider.get_L(nid)
            x = ff_solve(self.cache, provider, nd, d[nd.elim])
            fb = L.A[np.ix_(L.indices_of(nd.boundary),
                            L.indices_of(nd.elim))]
            d[nd.boundary] += fb @ x
        return d

    def _node_step(self, nd, provider=None):
        if provider is None:
            provider = self.dsc
        if len(nd.elim) == 0:
            return np.zeros(0)
        if len(nd.boundary) == 0:
            # root block: the full node Laplacian, pseudo-inverse sense
            return sdd_solve(provider.get_L(nd.id), self.u[nd.elim])
        return ff_solve(self.cache, provider, nd, self.u[nd.elim])

    def _refresh_z_step(self, nids, offset=True):
        """Recompute z_step on the F-sets of nids; optionally keep the
        value c*z_step + z_sum unchanged by countering through z_sum."""
        for nid in self._ordered(nids):
            nd = self.tree.nodes[nid]
            if len(nd.elim) == 0:
                continue
            new = self._node_step(nd)
            if offset:
                self.z_sum[nd.elim] -= self.c * (new - self.z_step[nd.elim])
            self.z_step[nd.elim] = new

    # -- the two mutators ---------------------------------------------------

    def move(self, alpha, eids=(), v_new=()):
        """Switch direction to v (sparse diff) and advance by alpha."""
        eids = np.asarray(eids, dtype=np.int64)
        if len(eids):
            v_new = np.asarray(v_new, dtype=np.float64)
            dv = np.zeros_like(self.v)
            dv[eids] = v_new - self.v[eids]
            self.v[eids] = v_new
            path = self.tree.path_union_of_edges(eids)
            self.u += self.partial_project(self._btwv(dv), path)
            self._refresh_z_step(path)
        self.c += alpha

    def reweight(self, eids, w_new):
        """Change edge weights (sparse diff); the value of z is unchanged."""
        eids = np.asarray(eids, dtype=np.int64)
        w_new = np.asarray(w_new, dtype=np.float64)
        changed = w_new != self.dsc.w[eids]
        eids, w_new = eids[changed], w_new[changed]
        if len(eids) == 0:
            return
        path = self.tree.path_union_of_edges(eids)
        ubar = self.inverse_partial_project(self.u, path)
        # demand change from the re-scaled edges
        delta = (np.sqrt(w_new) - np.sqrt(self.dsc.w[eids])) * self.v[eids]
        np.add.at(ubar, self.heads[eids], delta)
        np.add.at(ubar, self.tails[eids], -delta)
        self.dsc.reweight(eids, w_new)
        self.u = self.partial_project(ubar, path)
        self._refresh_z_step(path)


class RepState:
    """x = y + M z with value-preserving reweights.

    operator_factory(provider) must build the tree operator whose
    instructions read matrices and weights from `provider`; called once on
    the live DynamicScState and again on snapshots during reweight.
    """

    def __init__(self, zstate, operator_factory, y0):
        self.z = zstate
        self.make_op = operator_factory
        self.op = operator_factory(zstate.dsc)
        self.y = np.asarray(y0, dtype=np.float64).copy()
        self.x_init = self.exact()

    def exact(self):
        return self.y + self.op.compute_Mz(self.z.value())

    def move(self, alpha, eids=(), v_new=()):
        self.z.move(alpha, eids, v_new)

    def reweight(self, eids, w_new):
        eids = np.asarray(eids, dtype=np.int64)
        if len(eids) == 0:
            return
        old_op = self.make_op(SnapshotProvider(self.z.dsc))
        z_old = self.z.value()
        self.z.reweight(eids, w_new)
        z_new = self.z.value()
        self.y += old_op.compute_Mz(z_old) - self.op.compute_Mz(z_new)
