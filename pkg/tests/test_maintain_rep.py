import numpy as np
import pytest

from sepflow import septree
from sepflow.dynamic_sc import DynamicScState
from sepflow.maintain_rep import ZState, RepState
from sepflow.treeop import TreeOperator, IdentityEdgeOp, LeafOp

from helpers import grid_edges


def make_setup(rows, cols, seed=0, eps_p=0.0):
    edges = grid_edges(rows, cols)
    tails = np.array([e[0] for e in edges], dtype=np.int64)
    heads = np.array([e[1] for e in edges], dtype=np.int64)
    nv = rows * cols
    tree = septree.build(nv, tails, heads, validate=True)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.5, 2.0, len(tails))
    v = rng.normal(size=len(tails))
    dsc = DynamicScState(tree, tails, heads, w, eps_p=eps_p, seed=seed)
    return tree, tails, heads, nv, dsc, v, rng


# ---- dense oracles ---------------------------------------------------------

def dense_forward(zs, provider=None, nids=None):
    """The elimination operator of partial_project as an nv x nv matrix."""
    provider = provider or zs.dsc
    tree = zs.tree
    if nids is None:
        nids = range(len(tree.nodes))
    U = np.eye(zs.nv)
    for nid in sorted(set(nids), key=lambda i: (tree.nodes[i].level, i)):
        nd = tree.nodes[nid]
        if len(nd.elim) == 0 or len(nd.boundary) == 0:
            continue
        L = provider.get_L(nid)
        ff = np.linalg.pinv(L.restrict(nd.elim), hermitian=True)
        fb = L.A[np.ix_(L.indices_of(nd.boundary), L.indices_of(nd.elim))]
        X = np.zeros((zs.nv, zs.nv))
        X[np.ix_(nd.boundary, nd.elim)] = fb @ ff
        U = (np.eye(zs.nv) - X) @ U
    return U


def dense_gamma(zs, provider=None):
    """Block-diagonal F-solve operator as an nv x nv matrix."""
    provider = provider or zs.dsc
    G = np.zeros((zs.nv, zs.nv))
    for nd in zs.tree.nodes:
        if len(nd.elim) == 0:
            continue
        L = provider.get_L(nd.id)
        blk = np.linalg.pinv(L.restrict(nd.elim), hermitian=True)
        G[np.ix_(nd.elim, nd.elim)] = blk
    return G


def dense_btw(zs, vec):
    d = np.zeros(zs.nv)
    sw = np.sqrt(zs.dsc.w) * vec
    np.add.at(d, zs.heads, sw)
    np.add.at(d, zs.tails, -sw)
    return d


class LiveWBLeafOp(LeafOp):
    """J_H = W^{1/2} B[H] reading live weights from a provider."""

    def __init__(self, provider, tails, heads):
        self.provider = provider
        self.tails = tails
        self.heads = heads

    def apply(self, x, leaf):
        pos = {int(v): i for i, v in enumerate(leaf.support)}
        out = np.zeros(len(leaf.eids))
        for k, e in enumerate(leaf.eids):
            out[k] = np.sqrt(self.provider.w[e]) * (
                x[pos[int(self.heads[e])]] - x[pos[int(self.tails[e])]])
        return out

    def rapply(self, y, leaf):
        pos = {int(v): i for i, v in enumerate(leaf.support)}
        out = np.zeros(len(leaf.support))
        for k, e in enumerate(leaf.eids):
            s = np.sqrt(self.provider.w[e]) * y[k]
            out[pos[int(self.heads[e])]] += s
            out[pos[int(self.tails[e])]] -= s
        return out


def wb_factory(tree, tails, heads, m):
    def make(provider):
        edge_ops = {nd.id: IdentityEdgeOp() for nd in tree.nodes
                    if nd.parent != -1}
        leaf_ops = {lid: LiveWBLeafOp(provider, tails, heads)
                    for lid in tree.leaves}
        return TreeOperator(tree, tree.nv, m, edge_ops, leaf_ops)
    return make


# ---- partial projections ---------------------------------------------------

class TestPartialProject:
    def test_zero(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        out = zs.partial_project(np.zeros(nv), range(len(tree.nodes)))
        np.testing.assert_array_equal(out, np.zeros(nv))

    def test_root_supported_unchanged(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        root = tree.nodes[tree.root]
        d = np.zeros(nv)
        d[root.elim] = rng.normal(size=len(root.elim))
        out = zs.partial_project(d, range(len(tree.nodes)))
        np.testing.assert_allclose(out, d, atol=1e-12)

    def test_matches_dense(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        U = dense_forward(zs)
        for _ in range(5):
            d = rng.normal(size=nv)
            got = zs.partial_project(d, range(len(tree.nodes)))
            np.testing.assert_allclose(got, U @ d, atol=1e-9)

    def test_round_trip(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(5, 5)
        zs = ZState(dsc, tails, heads, v)
        nids = list(range(len(tree.nodes)))
        for _ in range(5):
            d = rng.normal(size=nv)
            u = zs.partial_project(d, nids)
            back = zs.inverse_partial_project(u, nids)
            np.testing.assert_allclose(back, d, atol=1e-9)

    def test_empty_node_set_identity(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(3, 3)
        zs = ZState(dsc, tails, heads, v)
        u = rng.normal(size=nv)
        np.testing.assert_array_equal(zs.inverse_partial_project(u, []), u)
        np.testing.assert_array_equal(
            zs.inverse_partial_project(np.zeros(nv),
                                       range(len(tree.nodes))),
            np.zeros(nv))

    def test_factor_order_commutes(self):
        # unrelated same-level nodes may be applied in any order
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        nids = list(range(len(tree.nodes)))
        d = rng.normal(size=nv)
        ref = zs.partial_project(d, nids)
        # permute within levels by reversing the id tiebreak
        order = sorted(nids, key=lambda i: (tree.nodes[i].level, -i))
        u = d.copy()
        for nid in order:
            nd = tree.nodes[nid]
            if len(nd.elim) == 0 or len(nd.boundary) == 0:
                continue
            L = zs.dsc.get_L(nid)
            ff = np.linalg.pinv(L.restrict(nd.elim), hermitian=True)
            fb = L.A[np.ix_(L.indices_of(nd.boundary),
                            L.indices_of(nd.elim))]
            u[nd.boundary] -= fb @ (ff @ u[nd.elim])
        np.testing.assert_allclose(ref, u, atol=1e-9)


# ---- ZState move / reweight -------------------------------------------------

class TestZMove:
    def test_invariants_at_init(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        U = dense_forward(zs)
        G = dense_gamma(zs)
        np.testing.assert_allclose(zs.u, U @ dense_btw(zs, v), atol=1e-9)
        np.testing.assert_allclose(zs.z_step, G @ zs.u, atol=1e-9)
        assert zs.c == 0.0 and not zs.z_sum.any()

    def test_move_without_direction_change(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        before = zs.value()
        step = zs.z_step.copy()
        zs.move(0.5)
        np.testing.assert_allclose(zs.value(), before + 0.5 * step,
                                   atol=1e-12)

    def test_sparse_move_matches_dense(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        eids = np.array([3, 10])
        vnew = rng.normal(size=2)
        zs.move(0.7, eids, vnew)
        v2 = v.copy()
        v2[eids] = vnew
        U = dense_forward(zs)
        G = dense_gamma(zs)
        np.testing.assert_allclose(zs.u, U @ dense_btw(zs, v2), atol=1e-9)
        np.testing.assert_allclose(zs.value(), 0.7 * G @ zs.u, atol=1e-9)

    def test_two_moves_combine(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        a = ZState(dsc, tails, heads, v)
        b = ZState(dsc, tails, heads, v)
        a.move(0.3)
        a.move(0.4)
        b.move(0.7)
        np.testing.assert_allclose(a.value(), b.value(), atol=1e-12)


class TestZReweight:
    def test_noop(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(4, 4)
        zs = ZState(dsc, tails, heads, v)
        zs.move(1.0)
        before = zs.value()
        zs.reweight(np.array([2, 5]), zs.dsc.w[[2, 5]])
        np.testing.assert_array_equal(zs.value(), before)
        assert dsc.nodes_rebuilt == 0

    def test_value_preserved_and_invariants_restored(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(5, 5)
        zs = ZState(dsc, tails, heads, v)
        zs.move(1.3)
        before = zs.value()
        eids = np.array([0, 7, 19])
        zs.reweight(eids, rng.uniform(0.5, 2.0, 3))
        after = zs.value()
        np.testing.assert_allclose(after, before,
                                   atol=1e-9 * max(1, np.abs(before).max()))
        # invariants under the new weights
        U = dense_forward(zs)
        G = dense_gamma(zs)
        np.testing.assert_allclose(zs.u, U @ dense_btw(zs, zs.v), atol=1e-8)
        np.testing.assert_allclose(zs.z_step, G @ zs.u, atol=1e-8)

    def test_z_step_matches_from_scratch(self):
        tree, tails, heads, nv, dsc, v, rng = make_setup(5, 5)
        zs = ZState(dsc, tails, heads, v)
        eids = np.array([1, 4, 9])
        wnew = rng.uniform(0.5, 3.0, 3)
        zs.reweight(eids, wnew)
        fresh = ZState(dsc, tails, heads, v)
        np.testing.assert_allclose(zs.z_step, fresh.z_step, atol=1e-8)
        np.testing.assert_allclose(zs.u, fresh.u, atol=1e-8)


# ---- RepState ---------------------------------------------------------------

class TestRepState:
    def setup_rep(self, rows=4, cols=4, seed=3):
        tree, tails, heads, nv, dsc, v, rng = make_setup(rows, cols, seed)
        m = len(tails)
        zs = ZState(dsc, tails, heads, v)
        y0 = rng.normal(size=m)
        rep = RepState(zs, wb_factory(tree, tails, heads, m), y0)
        return rep, rng, y0

    def test_fresh_init(self):
        rep, rng, y0 = self.setup_rep()
        np.testing.assert_allclose(rep.exact(), y0, atol=1e-12)

    def test_reweight_preserves_value(self):
        rep, rng, y0 = self.setup_rep()
        rep.move(0.9)
        before = rep.exact()
        eids = np.array([2, 6, 11, 17])
        rep.reweight(eids, rng.uniform(0.5, 2.0, 4))
        after = rep.exact()
        np.testing.assert_allclose(
            after, before, atol=1e-8 * max(1.0, np.abs(before).max()))

    def test_reweights_only_keep_x_init(self):
        rep, rng, y0 = self.setup_rep()
        for _ in range(5):
            k = int(rng.integers(1, 4))
            eids = rng.choice(rep.op.m, size=k, replace=False)
            rep.reweight(eids, rng.uniform(0.5, 2.0, k))
        np.testing.assert_allclose(rep.exact(), rep.x_init, atol=1e-8)

    def test_hundred_step_schedule_matches_dense(self):
        rep, rng, y0 = self.setup_rep(4, 4, seed=5)
        zs = rep.z
        acc = y0.copy()
        for step in range(100):
            if step % 3 == 0:
                k = int(rng.integers(1, 11))
                eids = rng.choice(rep.op.m, size=k, replace=False)
                rep.reweight(eids, rng.uniform(0.5, 2.0, k))
            alpha = float(rng.normal(scale=0.1))
            k = int(rng.integers(0, 4))
            eids = rng.choice(rep.op.m, size=k, replace=False) if k else []
            vnew = rng.normal(size=k)
            rep.move(alpha, eids, vnew)
            # dense bookkeeping of this step's contribution
            U = dense_forward(zs)
            G = dense_gamma(zs)
            M = rep.op.dense()
            zstep = G @ (U @ dense_btw(zs, zs.v))
            acc += alpha * (M @ zstep)
        got = rep.exact()
        np.testing.assert_allclose(
            got, acc, atol=1e-8 * max(1.0, np.abs(acc).max()))
