"""Independent brute-force references for testing.

Nothing in this module may call into the incremental solver paths; oracles
are assembled straight from definitions so that bugs cannot correlate.
"""

import heapq

import numpy as np
import scipy.optimize

INFEASIBLE = "infeasible"
OPTIMAL = "optimal"


# --------------------------------------------------------------------------
# exact min-cost flow by successive shortest paths with potentials
# --------------------------------------------------------------------------

class _Residual:
    def __init__(self, n):
        self.n = n
        self.head = [[] for _ in range(n)]  # per-vertex list of arc ids
        self.to = []
        self.cap = []
        self.cost = []

    def add(self, u, v, cap, cost):
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(float(cap))
        self.cost.append(float(cost))
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(0.0)
        self.cost.append(float(-cost))
        return len(self.to) - 2


def _bellman_ford(res, src):
    dist = [float("inf")] * res.n
    dist[src] = 0.0
    for _ in range(res.n):
        changed = False
        for u in range(res.n):
            du = dist[u]
            if du == float("inf"):
                continue
            for a in res.head[u]:
                if res.cap[a] > 1e-9 and du + res.cost[a] < dist[res.to[a]] - 1e-12:
                    dist[res.to[a]] = du + res.cost[a]
                    changed = True
        if not changed:
            break
    return dist


def _dijkstra(res, src, pot):
    dist = [float("inf")] * res.n
    prev_arc = [-1] * res.n
    dist[src] = 0.0
    pq = [(0.0, src)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u] + 1e-12:
            continue
        for a in res.head[u]:
            if res.cap[a] <= 1e-9:
                continue
            v = res.to[a]
            if pot[u] == float("inf"):
                continue
            rc = res.cost[a] + pot[u] - pot[v]
            nd = d + rc
            if nd < dist[v] - 1e-12:
                dist[v] = nd
                prev_arc[v] = a
                heapq.heappush(pq, (nd, v))
    return dist, prev_arc


def exact_mcf(inst):
    """Optimal integral min-cost flow via successive shortest paths.

    Negative-cost arcs are saturated up front (so the residual network has
    nonnegative costs), then residual demands are routed from a super-source
    with Dijkstra + potentials, Bellman-Ford bootstrapping the potentials.

    Returns (status, flow, cost); flow is None when infeasible.
    """
    n, m = inst.n, inst.m
    f0 = np.where(inst.costs < 0, inst.caps, 0).astype(np.float64)
    imbalance = np.zeros(n)
    np.add.at(imbalance, inst.heads, f0)
    np.add.at(imbalance, inst.tails, -f0)
    dprime = inst.demands - imbalance  # extra inflow still required per vertex

    res = _Residual(n + 2)
    S, T = n, n + 1
    arc_of_edge = []
    for e in range(m):
        a = res.add(int(inst.tails[e]), int(inst.heads[e]),
                    inst.caps[e] - f0[e], inst.costs[e])
        arc_of_edge.append(a)
        # leftover backward capacity from the pre-saturation
        res.cap[a + 1] = f0[e]
    need = 0.0
    for v in range(n):
        if dprime[v] < 0:
            res.add(S, v, -dprime[v], 0.0)
            need += -dprime[v]
        elif dprime[v] > 0:
            res.add(v, T, dprime[v], 0.0)

    pot = _bellman_ford(res, S)
    routed = 0.0
    while routed < need - 1e-9:
        dist, prev_arc = _dijkstra(res, S, pot)
        if dist[T] == float("inf"):
            return INFEASIBLE, None, None
        # walk the path, find bottleneck
        push = float("inf")
        v = T
        while v != S:
            a = prev_arc[v]
            push = min(push, res.cap[a])
            v = res.to[a ^ 1]
        v = T
        while v != S:
            a = prev_arc[v]
            res.cap[a] -= push
            res.cap[a ^ 1] += push
            v = res.to[a ^ 1]
        routed += push
        for v in range(res.n):
            if dist[v] < float("inf") and pot[v] < float("inf"):
                pot[v] += dist[v]

    flow = np.empty(m)
    for e in range(m):
        a = arc_of_edge[e]
        flow[e] = inst.caps[e] - res.cap[a]
    flow = np.round(flow)
    cost = float(np.dot(flow, inst.costs))
    return OPTIMAL, flow, cost


def lp_mcf(inst):
    """Second, independent oracle: the raw LP solved by HiGHS.

    Total unimodularity makes the LP optimum equal the integral optimum.
    Returns (status, cost).
    """
    n, m = inst.n, inst.m
    A = np.zeros((n, m))
    for e in range(m):
        A[inst.tails[e], e] -= 1.0
        A[inst.heads[e], e] += 1.0
    r = scipy.optimize.linprog(
        c=inst.costs.astype(float), A_eq=A, b_eq=inst.demands.astype(float),
        bounds=list(zip(np.zeros(m), inst.caps.astype(float))),
        method="highs")
    if r.status == 2:
        return INFEASIBLE, None
    if not r.success:
        raise ArithmeticError("LP oracle failed: %s" % r.message)
    return OPTIMAL, float(r.fun)


# --------------------------------------------------------------------------
# dense nested-dissection inverse assembled from definitions
# --------------------------------------------------------------------------

def _support_pos(verts):
    return {int(v): i for i, v in enumerate(verts)}


def _bottom_up(tree):
    return sorted(range(len(tree.nodes)),
                  key=lambda i: (tree.nodes[i].level, i))


def _dense_pi_gamma(state):
    """Dense elimination operator Pi and block-inverse Gamma.

    Assembled node by node straight from the node Laplacians of a (frozen)
    Schur-complement state: Pi applies, bottom-up, the forward elimination
    u[dH] -= L_{dH,F} X^{-1} u[F]; Gamma is block-diagonal with the
    F-block (pseudo)inverses.  The implied inverse is Pi^T Gamma Pi.
    """
    tree = state.tree
    nv = tree.nv
    Pi = np.eye(nv)
    Gamma = np.zeros((nv, nv))
    for nid in _bottom_up(tree):
        nd = tree.nodes[nid]
        if len(nd.elim) == 0:
            continue
        L = state.get_L(nid)
        iF = L.indices_of(nd.elim)
        Xinv = np.linalg.pinv(L.A[np.ix_(iF, iF)], hermitian=True)
        Gamma[np.ix_(nd.elim, nd.elim)] = Xinv
        if len(nd.boundary):
            iB = L.indices_of(nd.boundary)
            T = -L.A[np.ix_(iB, iF)] @ Xinv
            # left-multiply Pi by (I + e_B T e_F^T) without forming it
            Pi[nd.boundary, :] += T @ Pi[nd.elim, :]
    return Pi, Gamma


def dense_linv_check(state):
    """Max spectral deviation of Pi^T Gamma Pi from the true L^{-1}.

    Measured as max |log lambda| over the generalized eigenvalues on the
    complement of the Laplacian kernel; exact states give ~0, sampled
    states stay within (#levels) * eps_p.
    """
    nv = state.tree.nv
    tails = np.asarray(state.tails, dtype=np.int64)
    heads = np.asarray(state.heads, dtype=np.int64)
    w = np.asarray(state.w, dtype=np.float64)
    Ld = np.zeros((nv, nv))
    np.add.at(Ld, (tails, tails), w)
    np.add.at(Ld, (heads, heads), w)
    np.add.at(Ld, (tails, heads), -w)
    np.add.at(Ld, (heads, tails), -w)
    Pi, Gamma = _dense_pi_gamma(state)
    Q = Pi.T @ Gamma @ Pi
    mu, U = np.linalg.eigh(Ld)
    pos = mu > 1e-9 * max(float(mu.max(initial=0.0)), 1.0)
    S = U[:, pos] * np.sqrt(mu[pos])
    M = S.T @ Q @ S
    ev = np.linalg.eigvalsh((M + M.T) / 2.0)
    ev = np.clip(ev, 1e-300, None)
    return float(np.max(np.abs(np.log(ev)), initial=0.0))


def _edge_apply_flow(state, child, x_parent, parent):
    """Dense flow edge instruction: spread a boundary demand into child."""
    tsc = state.get_tsc(child.id)
    out = np.zeros(len(child.support))
    if tsc.n == 0:
        return out
    ppos = _support_pos(parent.support)
    xv = np.zeros(tsc.n)
    for i, gv in enumerate(tsc.verts):
        j = ppos.get(int(gv))
        if j is not None:
            xv[i] = x_parent[j]
    d = tsc.A @ xv
    L = state.get_L(child.id)
    rhs = np.zeros(L.n)
    rhs[L.indices_of(tsc.verts)] = d
    sol = np.linalg.pinv(L.A, hermitian=True) @ rhs
    lpos = _support_pos(L.verts)
    for i, gv in enumerate(child.support):
        j = lpos.get(int(gv))
        if j is not None:
            out[i] = sol[j]
    return out


def _edge_apply_slack(state, child, x_parent, parent):
    """Dense slack edge instruction: copy shared, back-substitute into F."""
    out = np.zeros(len(child.support))
    ppos = _support_pos(parent.support)
    for i, gv in enumerate(child.support):
        j = ppos.get(int(gv))
        if j is not None:
            out[i] = x_parent[j]
    if len(child.elim) and len(child.boundary):
        L = state.get_L(child.id)
        fi = L.indices_of(child.elim)
        bi = L.indices_of(child.boundary)
        spos = _support_pos(child.support)
        bvals = np.array([out[spos[int(v)]] for v in child.boundary])
        rhs = L.A[np.ix_(fi, bi)] @ bvals
        sol = np.linalg.pinv(L.A[np.ix_(fi, fi)], hermitian=True) @ rhs
        for v, s in zip(child.elim, sol):
            out[spos[int(v)]] -= s
    return out


def _dense_route(state, tails, heads, z, kind):
    """Dense top-down evaluation of the routing operator applied to z.

    kind "flow" gives the routing flow ftilde; kind "slack" gives the
    projected direction Ptilde v.  Both end with W^{1/2} B at the leaves.
    """
    tree = state.tree
    m = len(tails)
    out = np.zeros(m)
    edge_apply = _edge_apply_flow if kind == "flow" else _edge_apply_slack

    def zf(nd):
        v = np.zeros(len(nd.support))
        spos = _support_pos(nd.support)
        for u in nd.elim:
            v[spos[int(u)]] = z[int(u)]
        return v

    def down(nid, inherited):
        nd = tree.nodes[nid]
        total = zf(nd) + inherited
        if nd.leaf:
            spos = _support_pos(nd.support)
            sw = np.sqrt(state.w[nd.eids])
            for k, e in enumerate(nd.eids):
                out[e] = sw[k] * (total[spos[int(heads[e])]]
                                  - total[spos[int(tails[e])]])
            return
        for cid in nd.children:
            down(cid, edge_apply(state, tree.nodes[cid], total, nd))

    down(tree.root, np.zeros(len(tree.nodes[tree.root].support)))
    return out


def from_scratch_rebuild(snapshot):
    """Batch recomputation of every quantity a maintainer tracks.

    snapshot keys: tree, tails, heads, w0, v0, x0, eps_p, seed, kind
    ("flow" | "slack"), schedule — a list of ("move", alpha, eids, v_new)
    and ("reweight", eids, w_new) records.  The sampled node Laplacians are
    reproduced by replaying the reweights into a fresh state with the same
    seed; everything else is dense linear algebra from the definitions.
    Returns {u, c, z_step, z_sum, z_value, x}.
    """
    from .dynamic_sc import DynamicScState

    tree = snapshot["tree"]
    tails = np.asarray(snapshot["tails"], dtype=np.int64)
    heads = np.asarray(snapshot["heads"], dtype=np.int64)
    kind = snapshot.get("kind", "flow")
    w = np.asarray(snapshot["w0"], dtype=np.float64).copy()
    v = np.asarray(snapshot["v0"], dtype=np.float64).copy()
    x = np.asarray(snapshot["x0"], dtype=np.float64).copy()
    state = DynamicScState(tree, tails, heads, w, snapshot["eps_p"],
                           seed=snapshot["seed"])
    nv = tree.nv

    def demand():
        d = np.zeros(nv)
        swv = np.sqrt(w) * v
        np.add.at(d, heads, swv)
        np.add.at(d, tails, -swv)
        return d

    def z_quantities():
        Pi, Gamma = _dense_pi_gamma(state)
        u = Pi @ demand()
        return u, Gamma @ u

    c = 0.0
    z_value = np.zeros(nv)
    for op in snapshot["schedule"]:
        if op[0] == "reweight":
            _, eids, w_new = op
            eids = np.asarray(eids, dtype=np.int64)
            w[eids] = w_new
            state.reweight(eids, np.asarray(w_new, dtype=np.float64))
        else:
            _, alpha, eids, v_new = op
            eids = np.asarray(eids, dtype=np.int64)
            if len(eids):
                v[eids] = v_new
            _, z_step = z_quantities()
            route = _dense_route(state, tails, heads, z_step, kind)
            if kind == "flow":
                x += alpha * np.sqrt(w) * (v - route)
            else:
                x += alpha * route / np.sqrt(w)
            c += alpha
            z_value += alpha * z_step
    u, z_step = z_quantities()
    return {"u": u, "c": c, "z_step": z_step,
            "z_sum": z_value - c * z_step, "z_value": z_value, "x": x}
