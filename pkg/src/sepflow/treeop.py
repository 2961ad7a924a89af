"""Tree operators: linear maps assembled from per-tree-edge instructions.

A tree operator M maps a vertex vector z to an edge vector.  Each tree edge
(child H, parent P) carries an edge-operator instruction taking vectors on
support(P) = dP ∪ F_P to vectors on support(H); each leaf carries a leaf
instruction mapping support(H) to the leaf's own edges.  Evaluation descends
the tree once, accumulating

    v_root = z|F_root,   v_H = z|F_H + M_(H,P) v_P,   out|E(H) = J_H v_H.

Instructions hold references (typically into a DynamicScState) and build
whatever they need at apply time — the operator object never stores a dense
matrix for the whole map.  A missing instruction acts as zero.
"""

import numpy as np


class EdgeOp:
    """Instruction for one tree edge; subclasses define the actual map."""

    def apply(self, x, parent, child):
        """x on support(parent) -> vector on support(child)."""
        raise NotImplementedError

    def rapply(self, y, parent, child):
        """Transpose action: y on support(child) -> support(parent)."""
        raise NotImplementedError

    def dense(self, parent, child):
        """Materialized local block, for oracles and transposes."""
        n = len(parent.support)
        cols = [self.apply(e, parent, child) for e in np.eye(n)]
        return np.array(cols).T if n else \
            np.zeros((len(child.support), 0))


class ZeroEdgeOp(EdgeOp):
    def apply(self, x, parent, child):
        return np.zeros(len(child.support))

    def rapply(self, y, parent, child):
        return np.zeros(len(parent.support))


class IdentityEdgeOp(EdgeOp):
    """Restriction by matching global vertex ids (shared support copies)."""

    def apply(self, x, parent, child):
        out = np.zeros(len(child.support))
        ppos = {int(v): i for i, v in enumerate(parent.support)}
        for i, v in enumerate(child.support):
            j = ppos.get(int(v))
            if j is not None:
                out[i] = x[j]
        return out

    def rapply(self, y, parent, child):
        out = np.zeros(len(parent.support))
        ppos = {int(v): i for i, v in enumerate(parent.support)}
        for i, v in enumerate(child.support):
            j = ppos.get(int(v))
            if j is not None:
                out[j] += y[i]
        return out


class DenseEdgeOp(EdgeOp):
    """Explicit local matrix (test / small-operator use)."""

    def __init__(self, M):
        self.M = np.asarray(M, dtype=np.float64)

    def apply(self, x, parent, child):
        return self.M @ x

    def rapply(self, y, parent, child):
        return self.M.T @ y

    def dense(self, parent, child):
        return self.M


class LeafOp:
    def apply(self, x, leaf):
        """x on support(leaf) -> values for leaf.eids (in that order)."""
        raise NotImplementedError

    def rapply(self, y, leaf):
        raise NotImplementedError

    def dense(self, leaf):
        n = len(leaf.support)
        cols = [self.apply(e, leaf) for e in np.eye(n)]
        return np.array(cols).T if n else np.zeros((len(leaf.eids), 0))


class ZeroLeafOp(LeafOp):
    def apply(self, x, leaf):
        return np.zeros(len(leaf.eids))

    def rapply(self, y, leaf):
        return np.zeros(len(leaf.support))


class DenseLeafOp(LeafOp):
    def __init__(self, J):
        self.J = np.asarray(J, dtype=np.float64)

    def apply(self, x, leaf):
        return self.J @ x

    def rapply(self, y, leaf):
        return self.J.T @ y

    def dense(self, leaf):
        return self.J


class TreeOperator:
    """Composable map z (vertices) -> edge vector, stored as instructions.

    edge_ops: dict child-node-id -> EdgeOp (the op on tree edge (child,
    parent)); leaf_ops: dict leaf-node-id -> LeafOp; left_diag: optional
    per-edge scaling applied to the output (diagonal wrapper).
    """

    def __init__(self, tree, nv, m, edge_ops=None, leaf_ops=None,
                 left_diag=None):
        self.tree = tree
        self.nv = nv
        self.m = m
        self.edge_ops = dict(edge_ops or {})
        self.leaf_ops = dict(leaf_ops or {})
        self.left_diag = left_diag
        self.ops_applied = 0
        self.nodes_touched = 0

    def _diag(self, eids):
        """Current diagonal entries for the given edges (live or static)."""
        if callable(self.left_diag):
            return self.left_diag(eids)
        return np.asarray(self.left_diag)[eids]

    # -- evaluation --------------------------------------------------------

    def _zf(self, z, nd):
        """z|F_H embedded in support(H) coordinates."""
        out = np.zeros(len(nd.support))
        if len(nd.elim):
            spos = {int(v): i for i, v in enumerate(nd.support)}
            for v in nd.elim:
                out[spos[int(v)]] = z[int(v)]
        return out

    def apply_edge_op(self, child_id, vec, side="left"):
        """Apply the instruction on tree edge (child, parent) to vec."""
        child = self.tree.nodes[child_id]
        parent = self.tree.nodes[child.parent]
        op = self.edge_ops.get(child_id)
        self.ops_applied += 1
        if op is None:
            n = len(child.support) if side == "left" else len(parent.support)
            return np.zeros(n)
        if side == "left":
            return op.apply(vec, parent, child)
        return op.rapply(vec, parent, child)

    def apply_leaf_op(self, leaf_id, vec, side="left"):
        leaf = self.tree.nodes[leaf_id]
        op = self.leaf_ops.get(leaf_id)
        self.ops_applied += 1
        if op is None:
            n = len(leaf.eids) if side == "left" else len(leaf.support)
            return np.zeros(n)
        if side == "left":
            return op.apply(vec, leaf)
        return op.rapply(vec, leaf)

    def _descend(self, nid, vec, z, out):
        nd = self.tree.nodes[nid]
        self.nodes_touched += 1
        if nd.leaf:
            vals = self.apply_leaf_op(nid, vec)
            if self.left_diag is not None:
                vals = vals * self._diag(nd.eids)
            out[nd.eids] += vals
            return
        for cid in nd.children:
            child = self.tree.nodes[cid]
            cvec = self.apply_edge_op(cid, vec)
            if z is not None:
                cvec = cvec + self._zf(z, child)
            self._descend(cid, cvec, z, out)

    def compute_Mz(self, z):
        """Full evaluation of M z for a vertex-indexed vector z."""
        z = np.asarray(z, dtype=np.float64)
        out = np.zeros(self.m)
        root = self.tree.nodes[self.tree.root]
        self._descend(self.tree.root, self._zf(z, root), z, out)
        return out

    def subtree_apply(self, nid, x, with_f=False, z=None):
        """M^(H) x (and with_f: also pick up z|F inside the subtree).

        x is given on support(H).  with_f=True at the root with x = z|F_root
        reproduces compute_Mz.
        """
        out = np.zeros(self.m)
        self._descend(nid, np.asarray(x, dtype=np.float64),
                      np.asarray(z, dtype=np.float64) if with_f else None,
                      out)
        return out

    def apply_transpose(self, y):
        """M^T y: edge vector back to a vertex vector (exact, full sweep)."""
        y = np.asarray(y, dtype=np.float64)
        if self.left_diag is not None:
            y = y * self._diag(np.arange(self.m))
        z = np.zeros(self.nv)

        def up(nid):
            nd = self.tree.nodes[nid]
            if nd.leaf:
                acc = self.apply_leaf_op(nid, y[nd.eids], side="right")
            else:
                acc = np.zeros(len(nd.support))
                for cid in nd.children:
                    acc += self.apply_edge_op(cid, up(cid), side="right")
            # the F_H rows of the accumulated vector are this node's share
            spos = {int(v): i for i, v in enumerate(nd.support)}
            for v in nd.elim:
                z[int(v)] += acc[spos[int(v)]]
            return acc

        up(self.tree.root)
        return z

    def dense(self):
        """Assemble the full m x nv matrix from per-path products.

        Built edge-by-edge from materialized local blocks along each
        leaf-to-ancestor path — an independent cross-check of compute_Mz's
        shared-accumulation recursion.
        """
        M = np.zeros((self.m, self.nv))
        for lid in self.tree.leaves:
            leaf = self.tree.nodes[lid]
            lop = self.leaf_ops.get(lid)
            if lop is None:
                continue
            J = lop.dense(leaf)
            if self.left_diag is not None:
                J = self._diag(leaf.eids)[:, None] * J
            # walk up: block maps support(ancestor) -> E(leaf)
            block = J
            nid = lid
            while True:
                nd = self.tree.nodes[nid]
                # contribution picked up at this ancestor: I_{F_nd}
                spos = {int(v): i for i, v in enumerate(nd.support)}
                for v in nd.elim:
                    M[leaf.eids, int(v)] += block[:, spos[int(v)]]
                if nd.parent == -1:
                    break
                op = self.edge_ops.get(nid)
                if op is None:
                    break
                parent = self.tree.nodes[nd.parent]
                block = block @ op.dense(parent, nd)
                nid = nd.parent
        return M
