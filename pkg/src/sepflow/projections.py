"""Concrete slack and flow projection operators plus their maintainers.

Both maintainers track a vector that moves by a projected direction each
step:

* slack:  s += alpha * W^{-1/2} * (W^{1/2} B L~^{-1} B^T W^{1/2} v)
* flow:   f += alpha * W^{1/2} v - alpha * W^{1/2} ftilde,
          ftilde routing the same weighted demand as v exactly.

The projection is realized as a tree operator over the separator-tree
elimination: slack edge ops apply I - X^T (back-substitution transposes),
flow edge ops push boundary demands down through (L^(H))^{-1} tsc, and both
use the weighted incidence W^{1/2} B[H] at the leaves.  All instructions
read matrices from a DynamicScState (or a frozen snapshot of one), so a
reweight updates every operator implicitly.
"""

import numpy as np

from .dynamic_sc import DynamicScState
from .laplacian import sdd_solve
from .maintain_rep import ZState, RepState, FfSolveCache
from .treeop import TreeOperator, EdgeOp, LeafOp


def _match_positions(child_support, parent_support):
    ppos = {int(v): i for i, v in enumerate(parent_support)}
    rows, cols = [], []
    for i, v in enumerate(child_support):
        j = ppos.get(int(v))
        if j is not None:
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp)


class SlackEdgeOp(EdgeOp):
    """I - X^(H)^T: copy shared coordinates, back-substitute into F_H."""

    def __init__(self, provider, child_id, cache):
        self.provider = provider
        self.child_id = child_id
        self.cache = cache

    def apply(self, x, parent, child):
        out = np.zeros(len(child.support))
        rows, cols = _match_positions(child.support, parent.support)
        out[rows] = x[cols]
        if len(child.elim) and len(child.boundary):
            L = self.provider.get_L(self.child_id)
            fi = L.indices_of(child.elim)
            bi = L.indices_of(child.boundary)
            rhs = L.A[np.ix_(fi, bi)] @ out[
                _match_positions(child.boundary, child.support)[1]]
            sol = self.cache.solver(L, child).solve(rhs)
            spos = {int(v): i for i, v in enumerate(child.support)}
            fidx = np.array([spos[int(v)] for v in child.elim],
                            dtype=np.intp)
            out[fidx] -= sol
        return out

    def rapply(self, y, parent, child):
        out = np.zeros(len(parent.support))
        y = np.asarray(y, dtype=np.float64).copy()
        if len(child.elim) and len(child.boundary):
            L = self.provider.get_L(self.child_id)
            fi = L.indices_of(child.elim)
            bi = L.indices_of(child.boundary)
            spos = {int(v): i for i, v in enumerate(child.support)}
            fidx = np.array([spos[int(v)] for v in child.elim],
                            dtype=np.intp)
            bidx = np.array([spos[int(v)] for v in child.boundary],
                            dtype=np.intp)
            sol = self.cache.solver(L, child).solve(y[fidx])
            y[bidx] -= L.A[np.ix_(fi, bi)].T @ sol
        rows, cols = _match_positions(child.support, parent.support)
        out[cols] = y[rows]
        return out


class FlowEdgeOp(EdgeOp):
    """(L^(H))^{-1} tsc(L^(H), dH): spread a boundary demand into H."""

    def __init__(self, provider, child_id, solve_tol=1e-10):
        self.provider = provider
        self.child_id = child_id
        self.solve_tol = solve_tol

    def apply(self, x, parent, child):
        tsc = self.provider.get_tsc(self.child_id)
        if tsc.n == 0:
            return np.zeros(len(child.support))
        rows, cols = _match_positions(tsc.verts, parent.support)
        xv = np.zeros(tsc.n)
        xv[rows] = x[cols]
        d = tsc.A @ xv
        L = self.provider.get_L(self.child_id)
        rhs = np.zeros(L.n)
        rhs[L.indices_of(tsc.verts)] = d
        sol = sdd_solve(L, rhs, tol=self.solve_tol)
        out = np.zeros(len(child.support))
        crows, lcols = _match_positions(child.support, L.verts)
        out[crows] = sol[lcols]
        return out

    def rapply(self, y, parent, child):
        tsc = self.provider.get_tsc(self.child_id)
        out = np.zeros(len(parent.support))
        if tsc.n == 0:
            return out
        L = self.provider.get_L(self.child_id)
        yl = np.zeros(L.n)
        crows, lcols = _match_positions(child.support, L.verts)
        yl[lcols] = y[crows]
        sol = sdd_solve(L, yl, tol=self.solve_tol)
        d = tsc.A @ sol[L.indices_of(tsc.verts)]
        rows, cols = _match_positions(tsc.verts, parent.support)
        out[cols] = d[rows]
        return out


class WeightedIncidenceLeafOp(LeafOp):
    """J_H = W^{1/2} B[H] with live weights."""

    def __init__(self, provider, tails, heads):
        self.provider = provider
        self.tails = tails
        self.heads = heads

    def apply(self, x, leaf):
        pos = {int(v): i for i, v in enumerate(leaf.support)}
        out = np.zeros(len(leaf.eids))
        sw = np.sqrt(self.provider.w[leaf.eids])
        for k, e in enumerate(leaf.eids):
            out[k] = sw[k] * (x[pos[int(self.heads[e])]]
                              - x[pos[int(self.tails[e])]])
        return out

    def rapply(self, y, leaf):
        pos = {int(v): i for i, v in enumerate(leaf.support)}
        out = np.zeros(len(leaf.support))
        sw = np.sqrt(self.provider.w[leaf.eids])
        for k, e in enumerate(leaf.eids):
            s = sw[k] * y[k]
            out[pos[int(self.heads[e])]] += s
            out[pos[int(self.tails[e])]] -= s
        return out


class LiveDiag:
    """Callable diagonal w^power reading live weights from a provider."""

    def __init__(self, provider, power):
        self.provider = provider
        self.power = power

    def __call__(self, eids):
        return self.provider.w[eids] ** self.power


def flow_solve_tol(eps_p):
    return 1e-10 if eps_p == 0.0 else min(1e-10, eps_p * 1e-4)


def make_slack_operator(tree, tails, heads, cache):
    m = len(tails)

    def factory(provider):
        edge_ops = {nd.id: SlackEdgeOp(provider, nd.id, cache)
                    for nd in tree.nodes if nd.parent != -1}
        leaf_ops = {lid: WeightedIncidenceLeafOp(provider, tails, heads)
                    for lid in tree.leaves}
        return TreeOperator(tree, tree.nv, m, edge_ops, leaf_ops,
                            left_diag=LiveDiag(provider, -0.5))
    return factory


def make_flow_operator(tree, tails, heads, eps_p, with_diag=True):
    m = len(tails)
    tol = flow_solve_tol(eps_p)

    def factory(provider):
        edge_ops = {nd.id: FlowEdgeOp(provider, nd.id, tol)
                    for nd in tree.nodes if nd.parent != -1}
        leaf_ops = {lid: WeightedIncidenceLeafOp(provider, tails, heads)
                    for lid in tree.leaves}
        diag = LiveDiag(provider, 0.5) if with_diag else None
        return TreeOperator(tree, tree.nv, m, edge_ops, leaf_ops,
                            left_diag=diag)
    return factory


class MaintainSlack:
    """s = s0 + sum of alpha * W^{-1/2} Ptilde_w v steps, held implicitly."""

    def __init__(self, tree, tails, heads, w, v, s0, eps_p, seed=0):
        self.tree = tree
        self.tails = np.asarray(tails, dtype=np.int64)
        self.heads = np.asarray(heads, dtype=np.int64)
        self.dsc = DynamicScState(tree, tails, heads, w, eps_p, seed=seed)
        self.z = ZState(self.dsc, tails, heads, v)
        factory = make_slack_operator(tree, self.tails, self.heads,
                                      self.z.cache)
        self.rep = RepState(self.z, factory, s0)
        # the same operator without the W^{-1/2} wrapper, for P~ v itself
        self._plain = TreeOperator(
            tree, tree.nv, len(self.tails),
            self.rep.op.edge_ops, self.rep.op.leaf_ops)

    @property
    def w(self):
        return self.dsc.w

    def reweight(self, eids, w_new):
        self.rep.reweight(eids, w_new)

    def move(self, alpha, eids=(), v_new=()):
        self.rep.move(alpha, eids, v_new)

    def projected_direction(self):
        """Ptilde_w v for the current direction (in Range(W^{1/2}B))."""
        return self._plain.compute_Mz(self.z.z_step)

    def exact(self):
        return self.rep.exact()


class MaintainFlow:
    """f = uf0 + c_hat*W^{1/2} v - (accumulated W^{1/2} ftilde terms)."""

    def __init__(self, tree, tails, heads, w, v, f0, eps_p, seed=0):
        self.tree = tree
        self.tails = np.asarray(tails, dtype=np.int64)
        self.heads = np.asarray(heads, dtype=np.int64)
        self.dsc = DynamicScState(tree, tails, heads, w, eps_p, seed=seed)
        self.z = ZState(self.dsc, tails, heads, v)
        factory = make_flow_operator(tree, self.tails, self.heads, eps_p)
        self.rep = RepState(self.z, factory, np.zeros(len(self.tails)))
        self._plain = TreeOperator(
            tree, tree.nv, len(self.tails),
            self.rep.op.edge_ops, self.rep.op.leaf_ops)
        self.c_hat = 0.0
        self.uf0 = np.asarray(f0, dtype=np.float64).copy()

    @property
    def w(self):
        return self.dsc.w

    def reweight(self, eids, w_new):
        eids = np.asarray(eids, dtype=np.int64)
        if len(eids) == 0:
            return
        w_new = np.asarray(w_new, dtype=np.float64)
        dv = (np.sqrt(self.dsc.w[eids]) - np.sqrt(w_new)) * self.z.v[eids]
        self.uf0[eids] += self.c_hat * dv
        self.rep.reweight(eids, w_new)

    def move(self, alpha, eids=(), v_new=()):
        eids = np.asarray(eids, dtype=np.int64)
        if len(eids):
            v_new = np.asarray(v_new, dtype=np.float64)
            dv = self.z.v[eids] - v_new
            self.uf0[eids] += self.c_hat * np.sqrt(self.dsc.w[eids]) * dv
        self.c_hat += alpha
        self.rep.move(alpha, eids, v_new)

    def ftilde(self):
        """The routing flow for the current direction (no W^{1/2} wrapper)."""
        return self._plain.compute_Mz(self.z.z_step)

    def exact(self):
        uf = self.uf0 + self.c_hat * np.sqrt(self.dsc.w) * self.z.v
        return uf - self.rep.exact()


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

def demand_decomposition_check(maintainer, v=None, tol=1e-8):
    """Per-node demands d^(H) = L^(H) z|F_H must sum to B^T W^{1/2} v,
    and routing flows of leaf-disjoint nodes must be orthogonal."""
    z = maintainer.z
    tree = z.tree
    zval = z.z_step
    total = np.zeros(z.nv)
    for nd in tree.nodes:
        if len(nd.elim) == 0:
            continue
        L = z.dsc.get_L(nd.id)
        xv = np.zeros(L.n)
        xv[L.indices_of(nd.elim)] = zval[nd.elim]
        d = L.A @ xv
        for i, gv in enumerate(L.verts):
            total[int(gv)] += d[i]
    target = z._btwv(z.v if v is None else v)
    scale = max(np.linalg.norm(target), 1.0)
    if np.linalg.norm(total - target) > tol * scale:
        return False
    # orthogonality of flows from subtree-disjoint nodes: their edge
    # supports are disjoint, so check exact zero inner products on a sample
    plain = maintainer._plain
    flows = []
    for nd in tree.nodes[:8]:
        if len(nd.elim) == 0:
            continue
        x = np.zeros(len(nd.support))
        spos = {int(u): i for i, u in enumerate(nd.support)}
        for u in nd.elim:
            x[spos[int(u)]] = zval[int(u)]
        flows.append((nd.id, plain.subtree_apply(nd.id, x)))
    for i in range(len(flows)):
        for j in range(i + 1, len(flows)):
            a, fa = flows[i]
            b, fb = flows[j]
            anc = set(tree.path_union([a]))
            if b in anc or a in set(tree.path_union([b])):
                continue
            if abs(float(fa @ fb)) > tol * max(
                    np.linalg.norm(fa) * np.linalg.norm(fb), 1.0):
                return False
    return True


def energy_audit(maintainer, tol=1e-9):
    """Energy bookkeeping for the current routing flow.

    Returns a report with the total demand energy, the per-node split, the
    routed flow's energy, and the distance to the exact electrical flow.
    At eps_p = 0 the split is exact and ftilde equals the electrical flow.
    """
    z = maintainer.z
    nv = z.nv
    w = maintainer.w
    # dense ground truth
    B = np.zeros((len(z.tails), nv))
    B[np.arange(len(z.tails)), z.tails] = -1.0
    B[np.arange(len(z.heads)), z.heads] += 1.0
    Lfull = B.T @ (w[:, None] * B)
    d = z._btwv(z.v)
    Lp = np.linalg.pinv(Lfull, hermitian=True)
    total_energy = float(d @ Lp @ d)
    fstar = np.sqrt(w) * (B @ (Lp @ d))
    ft = maintainer.ftilde()
    node_energy = 0.0
    for nd in z.tree.nodes:
        if len(nd.elim) == 0:
            continue
        L = z.dsc.get_L(nd.id)
        xv = np.zeros(L.n)
        xv[L.indices_of(nd.elim)] = z.z_step[nd.elim]
        dh = L.A @ xv
        node_energy += float(dh @ np.linalg.pinv(L.A, hermitian=True) @ dh)
    report = {
        "total_energy": total_energy,
        "node_energy_sum": node_energy,
        "ftilde_energy": float(ft @ ft),
        "fstar_energy": float(fstar @ fstar),
        "ftilde_minus_fstar_sq": float((ft - fstar) @ (ft - fstar)),
        "eps_p": z.dsc.eps_p,
    }
    report["decomposition_exact"] = (
        abs(node_energy - total_energy) <= tol * max(total_energy, 1.0))
    report["matches_electrical"] = (
        report["ftilde_minus_fstar_sq"] <= tol * max(total_energy, 1.0))
    return report
