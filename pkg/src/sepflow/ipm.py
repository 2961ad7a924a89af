"""Two-phase robust interior point driver producing exact integral flows.

Phase 1 centers a tripled feasibility LP from an exactly-central start down
to t = L*R, where the combination f1+f2-f3 becomes strictly feasible for
the original circulation LP; phase 2 centers that LP down to a path
parameter small enough that rounding plus negative-cycle canceling yields
the exact integral optimum.

Each centering step follows the robust scheme: directions v = sinh(lam *
gamma) with step h = -alpha/||cosh(lam gamma)||_2 measured at lazily
maintained approximations (fbar, sbar) and a stale path parameter tbar that
is reset when it drifts a budgeted fraction away from t.  The t-decay rate
is chosen adaptively from the measured per-coordinate drift so the
centrality measure stays inside 1/(C log m) at every recorded step.

Two execution modes:
* light: the exact (f, s) pair is advanced by dense weighted-projection
  updates (mathematically the same update the implicit maintainers apply);
  requires eps_p = 0.
* audit: the separator-tree flow/slack maintainers run every step, their
  routing flow drives the update, and per-step agreement checks can be
  attached via the monitor hook.
"""

import json
import math

import numpy as np
import scipy.linalg

from . import septree
from .instance import (
    build_circulation_lp, phase1_t_start, triple_for_phase1, untriple,
    InteriorPoint, LpProblem, TAG_DEMAND)
from .projections import MaintainFlow, MaintainSlack

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


class IpmParams:
    """Step-size and tolerance profile for the centering loop."""

    def __init__(self, C=10.0, c_alpha=0.75, eps_p=0.0, seed=0,
                 mode="light", max_steps=2_000_000, window=6,
                 t_start_mode="adaptive", t_end_floor=True,
                 collect_trace=True):
        self.C = float(C)
        self.c_alpha = float(c_alpha)
        self.eps_p = float(eps_p)
        self.seed = int(seed)
        self.mode = mode
        self.max_steps = int(max_steps)
        self.window = int(window)
        self.t_start_mode = t_start_mode
        self.t_end_floor = bool(t_end_floor)
        self.collect_trace = collect_trace
        if mode == "light" and eps_p != 0.0:
            raise ValueError("light mode requires eps_p = 0")

    def lam(self, m):
        return 64.0 * math.log(256.0 * max(m, 2) ** 2)

    def budget(self, m):
        """Centrality budget 1/(C log m)."""
        return 1.0 / (self.C * math.log(max(m, 3)))

    def alpha(self, m):
        return self.c_alpha * self.budget(m)

    def alpha_conservative(self, m):
        """Worst-case-analysis step size; far too timid in practice."""
        return 1.0 / (2.0 ** 20 * self.lam(m))


class Trace:
    """Columnar per-step record of one centering run."""

    FIELDS = ("t", "tbar", "gamma_inf", "h", "kappa", "K_w", "K_v",
              "updated_f", "updated_s", "ell_f", "ell_s", "reset",
              "nodes_touched", "hnorm_v")

    def __init__(self):
        self.cols = {f: [] for f in self.FIELDS}
        self.audits = []

    def add(self, **kw):
        for f in self.FIELDS:
            self.cols[f].append(kw.get(f, 0))

    def __len__(self):
        return len(self.cols["t"])

    def to_jsonl(self):
        lines = []
        n = len(self)
        for i in range(n):
            lines.append(json.dumps(
                {f: self.cols[f][i] for f in self.FIELDS}, sort_keys=True))
        return "\n".join(lines)


class _DenseProjector:
    """Grounded QR projection onto Range(W^{1/2}B) for the exact-step
    fast path."""

    def __init__(self, nv, tails, heads):
        self.nv = nv
        self.tails = tails
        self.heads = heads
        m = len(tails)
        # component labels over the undirected support
        adj = [[] for _ in range(nv)]
        for e in range(m):
            adj[tails[e]].append(heads[e])
            adj[heads[e]].append(tails[e])
        label = -np.ones(nv, dtype=np.int64)
        nc = 0
        for v in range(nv):
            if label[v] >= 0 or not adj[v]:
                continue
            stack = [v]
            label[v] = nc
            while stack:
                x = stack.pop()
                for u in adj[x]:
                    if label[u] < 0:
                        label[u] = nc
                        stack.append(u)
            nc += 1
        self.label = label
        keep = np.ones(nv, dtype=bool)
        keep[label < 0] = False
        for c in range(nc):
            keep[np.nonzero(label == c)[0][0]] = False
        self.keep = np.nonzero(keep)[0]
        self.kpos = -np.ones(nv, dtype=np.int64)
        self.kpos[self.keep] = np.arange(len(self.keep))
        kt = self.kpos[tails]
        kh = self.kpos[heads]
        self.kt, self.kh = kt, kh
        loop = tails == heads
        self._mt = np.nonzero((kt >= 0) & ~loop)[0]
        self._mh = np.nonzero((kh >= 0) & ~loop)[0]

    def project(self, w, v):
        """P_w v = W^{1/2} B (B^T W B)^+ B^T W^{1/2} v.

        QR on the scaled incidence matrix, not a Cholesky solve of the
        normal equations: the weight spread late in a run reaches ~1e14,
        and squaring it in B^T W B costs about six digits of forward
        accuracy in the projected direction.
        """
        k = len(self.keep)
        if k == 0:
            return np.zeros_like(v)
        sw = np.sqrt(w)
        A = np.zeros((len(sw), k))
        A[self._mt, self.kt[self._mt]] = -sw[self._mt]
        A[self._mh, self.kh[self._mh]] = sw[self._mh]
        Q, R = np.linalg.qr(A)
        y = scipy.linalg.solve_triangular(R, Q.T @ v, check_finite=False)
        # one refinement pass in the least-squares residual
        r = v - A @ y
        y += scipy.linalg.solve_triangular(R, Q.T @ r, check_finite=False)
        return A @ y


class CenteringState:
    """Mutable state for one centering run on one LP."""

    def __init__(self, lp, f, s, t, params, tree=None):
        self.lp = lp
        self.params = params
        self.m = lp.m
        self.f = np.asarray(f, dtype=np.float64).copy()
        self.s = np.asarray(s, dtype=np.float64).copy()
        self.t = float(t)
        self.tbar = float(t)
        self.tree = tree
        self.trace = Trace()
        self.flow = None
        self.slack = None


def _build_tree(lp, oracle=None):
    aux = []
    used = np.zeros(lp.nv, dtype=bool)
    used[lp.tails] = True
    used[lp.heads] = True
    for a in (lp.s_idx, lp.t_idx):
        if a is not None and used[a]:
            aux.append(int(a))
    return septree.build(lp.nv, lp.tails, lp.heads, oracle=oracle,
                         aux=tuple(aux), leaf_size=4)


def _sinh_clip(x):
    return np.sinh(np.clip(x, -350.0, 350.0))


def _cosh_clip(x):
    return np.cosh(np.clip(x, -350.0, 350.0))


def centering(lp, f, s, t_start, t_end, params, tree=None, monitor=None):
    """Run robust centering from (f, s, t_start) down to t_end.

    Returns the final CenteringState (exact f, s inside), with the per-step
    trace attached.  `monitor`, if given, is called once per step with the
    state and a dict of the step's intermediates (audit hooks).
    """
    from .approx_vec import ApproxState

    st = CenteringState(lp, f, s, t_start, params, tree=tree)
    m = lp.m
    lam = params.lam(m)
    budget = params.budget(m)
    alpha = params.alpha(m)
    audit = params.mode == "audit"

    proj = None if audit else _DenseProjector(lp.nv, lp.tails, lp.heads)

    # lazily maintained approximations of f and s; per-vector tolerance
    # alpha/4 keeps the combined centrality-measurement error <= alpha/2
    delta = alpha / 4.0
    af = ApproxState(m, delta=delta, seed=params.seed + 11)
    asx = ApproxState(m, delta=delta, seed=params.seed + 13)
    af.initialize(st.f)
    asx.initialize(st.s)
    fbar = af.xbar
    sbar = asx.xbar

    w_cur = 1.0 / lp.barrier_hess(fbar)
    if audit:
        if st.tree is None:
            st.tree = _build_tree(lp)
        gamma0 = (sbar / st.tbar + lp.barrier_grad(fbar)) * np.sqrt(w_cur)
        v_cur = _sinh_clip(lam * gamma0)
        st.flow = MaintainFlow(st.tree, lp.tails, lp.heads, w_cur, v_cur,
                               st.f, params.eps_p, seed=params.seed + 17)
        st.slack = MaintainSlack(st.tree, lp.tails, lp.heads, w_cur, v_cur,
                                 st.s, params.eps_p, seed=params.seed + 19)
        v_prev = v_cur
    else:
        v_prev = None
    steps_since_reset = 0
    touched_before = 0
    # multiplicative rate controller: ride gamma near `target`, hard-stop
    # decay above `hard`, and only reset tbar when the pending jump fits
    target = 0.75 * budget
    hard = 0.83 * budget
    gate = 0.88 * budget
    kappa_state = 1e-3

    def maintainer_touched():
        if st.flow is None:
            return 0
        return st.flow.dsc.touched_total + st.slack.dsc.touched_total

    # the one-sided -log x barrier is the box barrier with l=0, u=inf, so a
    # single pair of formulas covers both coordinate kinds
    lo = lp.l
    hi = lp.u

    k = 0
    while True:
        k += 1
        if k > params.max_steps:
            raise ArithmeticError(
                "centering exceeded max_steps at t=%g (t_end=%g)"
                % (st.t, t_end))
        reset = False
        a_up = 1.0 / (hi - fbar)
        b_lo = 1.0 / (fbar - lo)
        grad = a_up - b_lo
        w_new = 1.0 / (a_up * a_up + b_lo * b_lo)
        wchg = np.nonzero(w_new != w_cur)[0]
        sw = np.sqrt(w_new)
        gamma = (sbar / st.tbar + grad) * sw
        ginf = float(np.abs(gamma).max(initial=0.0))
        # ---- tbar reset -----------------------------------------------------
        drift = np.abs(sbar) * sw / st.tbar
        dmax = float(drift.max(initial=0.0))
        pending = (st.tbar / st.t - 1.0) * dmax
        if st.tbar != st.t and steps_since_reset >= params.window \
                and ginf + pending <= gate:
            st.tbar = st.t
            reset = True
            steps_since_reset = 0
            # re-anchor the slack approximation exactly at the new tbar
            asx.initialize(st.s)
            sbar = asx.xbar
            gamma = (sbar / st.tbar + grad) * sw
            ginf = float(np.abs(gamma).max(initial=0.0))
            pending = 0.0
        if not ginf <= 1.0 or not (st.f > lo).all() \
                or not (st.f < hi).all():
            raise ArithmeticError(
                "centrality blow-up: ||gamma||_inf=%g at step %d (t=%g)"
                % (ginf, k, st.t))
        if st.t == t_end and st.tbar == st.t and ginf <= 0.5 * budget:
            break
        # ---- direction -------------------------------------------------------
        arg = np.clip(lam * gamma, -350.0, 350.0)
        v = np.sinh(arg)
        ca = np.cosh(arg)
        coshn = math.sqrt(float(ca @ ca))
        # cap the per-step movement of the extreme coordinate below its own
        # magnitude; a full-size step past zero sustains a limit cycle
        alpha_eff = min(alpha, 0.85 * ginf) if ginf > 0 else alpha
        h = -min(alpha_eff / coshn, 1.0 / (2.0 * lam))
        # ---- adaptive t decay -------------------------------------------------
        load = max(ginf, pending)
        kappa_state *= math.exp(0.2 * (target - load) / budget)
        kappa_state = min(kappa_state, 0.2)
        # never decay past the point where the eventual tbar jump would
        # break the reset gate
        kappa = min(kappa_state,
                    0.5 * max(0.0, min(gate - ginf - pending,
                                       0.6 * gate - pending))
                    / max(dmax, 1e-12))
        if load > hard or st.t <= t_end:
            kappa = 0.0
        t_new = max(st.t * (1.0 - kappa), t_end)
        kappa_eff = 1.0 - t_new / st.t if st.t > 0 else 0.0
        st.t = t_new
        # ---- reweight + move ---------------------------------------------------
        if v_prev is None or (reset and not audit):
            vchg = np.arange(m)
        else:
            vchg = np.nonzero(v != v_prev)[0]
        if audit:
            if len(wchg):
                st.flow.reweight(wchg, w_new[wchg])
                st.slack.reweight(wchg, w_new[wchg])
            st.flow.move(h, vchg, v[vchg])
            st.slack.move(st.tbar * h, vchg, v[vchg])
            ftilde = st.flow.ftilde()
            ptv = st.slack.projected_direction()
        else:
            ftilde = proj.project(w_new, v)
            ptv = ftilde
        w_cur = w_new
        v_prev = v
        st.f = st.f + h * sw * (v - ftilde)
        st.s = st.s + st.tbar * h * ptv / sw
        # ---- lazy approximations ------------------------------------------------
        af.step(st.f, 1.0 / w_cur, d_changed=wchg)
        # s is tracked in the scaled metric W^{1/2}/tbar so the tolerance is
        # a constant while ||W^{1/2}(sbar-s)||_inf <= tbar*alpha holds
        asx.step(st.s, w_cur / st.tbar ** 2, d_changed=wchg)
        fbar = af.xbar
        sbar = asx.xbar
        steps_since_reset += 1
        # ---- record ----------------------------------------------------------
        touched_now = maintainer_touched()
        if params.collect_trace:
            st.trace.add(
                t=st.t, tbar=st.tbar, gamma_inf=ginf, h=h, kappa=kappa_eff,
                K_w=int(len(wchg)), K_v=int(len(vchg)),
                updated_f=af.metrics[-1]["updated"],
                updated_s=asx.metrics[-1]["updated"],
                ell_f=af.metrics[-1]["ell_max"],
                ell_s=asx.metrics[-1]["ell_max"],
                reset=bool(reset or af.metrics[-1]["full_reset"]),
                nodes_touched=touched_now - touched_before,
                hnorm_v=abs(h) * float(np.linalg.norm(v)))
        touched_before = touched_now
        if monitor is not None:
            monitor(st, {"k": k, "gamma": gamma, "v": v, "h": h,
                         "ftilde": ftilde, "ptv": ptv, "w": w_cur,
                         "fbar": fbar, "sbar": sbar, "reset": reset})
    return st


# ---------------------------------------------------------------------------
# rounding
# ---------------------------------------------------------------------------

def _residual_adj(m, tails, heads, x, lo, hi, cost):
    """Adjacency of the residual graph: (to, edge, dir, rescost)."""
    adj = {}
    for e in range(m):
        if x[e] < hi[e] - 1e-9:
            adj.setdefault(int(tails[e]), []).append(
                (int(heads[e]), e, 1, cost[e]))
        if x[e] > lo[e] + 1e-9:
            adj.setdefault(int(heads[e]), []).append(
                (int(tails[e]), e, -1, -cost[e]))
    return adj


def _cancel_negative_cycles(nv, tails, heads, x, lo, hi, cost,
                            max_rounds=10000):
    """Bellman-Ford negative-cycle canceling to exact optimality."""
    for _ in range(max_rounds):
        adj = _residual_adj(len(x), tails, heads, x, lo, hi, cost)
        dist = np.zeros(nv)
        pred = [None] * nv
        marked = None
        for it in range(nv):
            changed = False
            for u, lst in adj.items():
                du = dist[u]
                for (to, e, dr, rc) in lst:
                    if du + rc < dist[to] - 1e-9:
                        dist[to] = du + rc
                        pred[to] = (u, e, dr)
                        changed = True
                        if it == nv - 1:
                            marked = to
            if not changed:
                break
        if marked is None:
            return x
        # walk predecessor pointers until they revisit: that is the cycle
        cyc = None
        seen = {}
        v = marked
        while v not in seen and pred[v] is not None:
            seen[v] = True
            v = pred[v][0]
        if pred[v] is not None:
            cyc = []
            u = v
            while True:
                pu, e, dr = pred[u]
                cyc.append((e, dr))
                u = pu
                if u == v:
                    break
        if cyc is None:
            raise ArithmeticError("negative cycle detected but not recovered")
        # max augmentation along the cycle
        amt = np.inf
        for e, dr in cyc:
            room = (hi[e] - x[e]) if dr > 0 else (x[e] - lo[e])
            amt = min(amt, room)
        amt = math.floor(amt + 1e-9)
        if amt < 1:
            raise ArithmeticError("non-integral residual capacity in cycle")
        for e, dr in cyc:
            x[e] += dr * amt
    raise ArithmeticError("cycle canceling did not terminate")


def round_integral(lp, f, cancel=True):
    """Round a feasible fractional circulation to an integral one.

    Floors the flow, then restores zero divergence by unit augmentations in
    the residual graph, then (by default) cancels negative residual cycles,
    which drives the result to the exact optimal circulation.
    """
    f = np.asarray(f, dtype=np.float64)
    lo, hi, cost = lp.l, lp.u, lp.c
    x = np.floor(f + 1e-9)
    x = np.maximum(x, lo)
    div = np.zeros(lp.nv)
    np.add.at(div, lp.heads, x)
    np.add.at(div, lp.tails, -x)
    div = np.round(div).astype(np.int64)
    # route surplus -> deficit along residual paths, unit by unit
    guard = 0
    while div.any():
        guard += 1
        if guard > 10 * lp.m * max(int(np.abs(div).sum()), 1) + 100:
            raise ArithmeticError("rounding failed to rebalance divergence")
        src = int(np.nonzero(div > 0)[0][0])
        adj = _residual_adj(lp.m, lp.tails, lp.heads, x, lo, hi, cost)
        # BFS from src to any deficit vertex
        prev = {src: None}
        queue = [src]
        goal = None
        while queue and goal is None:
            u = queue.pop(0)
            for (to, e, dr, _rc) in adj.get(u, ()):  # noqa: B007
                if to not in prev:
                    prev[to] = (u, e, dr)
                    if div[to] < 0:
                        goal = to
                        break
                    queue.append(to)
        if goal is None:
            raise ArithmeticError(
                "rounding precondition violated: divergence not routable")
        u = goal
        while prev[u] is not None:
            pu, e, dr = prev[u]
            x[e] += dr
            u = pu
        div[src] -= 1
        div[goal] += 1
    if cancel:
        x = _cancel_negative_cycles(lp.nv, lp.tails, lp.heads, x, lo, hi,
                                    cost)
    return x


# ---------------------------------------------------------------------------
# the solve pipeline
# ---------------------------------------------------------------------------

def prune_to_cycles(lp):
    """Keep exactly the edges lying on some directed cycle (SCC rule).

    The t->s closing edge turns every s->...->t path into a cycle, so this
    keeps everything the reachability rule keeps plus cycles that never
    touch s/t (profitable negative cycles in zero-demand regions).
    """
    import scipy.sparse
    import scipy.sparse.csgraph as csgraph
    if lp.m == 0:
        return lp
    g = scipy.sparse.coo_matrix(
        (np.ones(lp.m), (lp.tails, lp.heads)), shape=(lp.nv, lp.nv))
    ncomp, label = csgraph.connected_components(g, directed=True,
                                                connection="strong")
    keep = label[lp.tails] == label[lp.heads]
    k = np.nonzero(keep)[0]
    return LpProblem(lp.nv, lp.tails[k], lp.heads[k], lp.l[k], lp.u[k],
                     lp.c[k], [lp.tags[i] for i in k], lp.orig_idx[k],
                     lp.s_idx, lp.t_idx, lp.barrier_kind[k])


def adaptive_t_start(lp, params):
    """Phase-1 start parameter: big enough that the untripled end point is
    comfortably interior, small enough not to waste centering work."""
    from .instance import _newton_fc
    from .laplacian import WeightedLaplacian, sdd_solve
    L = float(np.linalg.norm(lp.c))
    R = float(np.linalg.norm(lp.u - lp.l))
    LR = max(L * R, 1.0)
    if params.t_start_mode == "conservative":
        return phase1_t_start(lp), LR
    fc = _newton_fc(lp, LR)
    Lap = WeightedLaplacian.from_edges(
        np.arange(lp.nv), lp.tails, lp.heads, np.ones(lp.m))
    B = lp.incidence()
    y = sdd_solve(Lap, np.asarray(B.T @ fc).ravel())
    delta = np.abs(B @ y)  # |f_c - f_o|
    scale = float(np.max(delta * np.sqrt(lp.barrier_hess(fc)), initial=0.0))
    budget = params.budget(3 * lp.m)
    q = max(64.0, 16.0 * scale / budget)
    t0 = min(LR * q, phase1_t_start(lp))
    return t0, LR


class SolveResult:
    def __init__(self, status, flow, cost, stats):
        self.status = status
        self.flow = flow
        self.cost = cost
        self.stats = stats


def solve(inst, params=None, monitor=None):
    """End-to-end exact integral min-cost flow via the two-phase IPM."""
    if params is None:
        params = IpmParams()
    stats = {"phase1_steps": 0, "phase2_steps": 0, "traces": []}

    lp_full = build_circulation_lp(inst)
    lp = prune_to_cycles(lp_full)
    n_demand_edges = sum(1 for t in lp_full.tags if t == TAG_DEMAND)
    if sum(1 for t in lp.tags if t == TAG_DEMAND) < n_demand_edges:
        return SolveResult(INFEASIBLE, None, None, stats)

    if lp.m == 0:
        flow = np.zeros(inst.m, dtype=np.int64)
        return SolveResult(OPTIMAL, flow, 0, stats)

    # ---- phase 1 ----------------------------------------------------------
    t0, LR = adaptive_t_start(lp, params)
    budget2 = params.budget(lp.m)
    point = None
    for attempt in range(4):
        lp3, pt3 = triple_for_phase1(lp, t0)
        st1 = centering(lp3, pt3.f, pt3.s, t0, LR, params, monitor=monitor)
        stats["phase1_steps"] += len(st1.trace)
        stats["traces"].append(("phase1", st1.trace))
        cand = untriple(lp, InteriorPoint(st1.f, st1.s, LR),
                        require_interior=False)
        if lp.interior(cand.f):
            w2 = 1.0 / lp.barrier_hess(cand.f)
            g2 = (cand.s / LR + lp.barrier_grad(cand.f)) * np.sqrt(w2)
            if float(np.abs(g2).max(initial=0.0)) <= 0.66 * budget2:
                point = cand
                break
        cons_t0 = phase1_t_start(lp)
        if t0 >= cons_t0:
            break
        t0 = min(t0 * 2.0 ** 8, cons_t0)
    if point is None:
        raise ArithmeticError("phase 1 failed to produce an interior point")

    # ---- phase 2 ----------------------------------------------------------
    M2 = max(inst.M, 1)
    eps = 1.0 / (params.C * M2 ** 2 * max(lp.m, 1) ** 2)
    t_end = eps / (4.0 * lp.m)
    if params.t_end_floor:
        t_end = max(t_end, 1.0 / (8.0 * lp.m))
    st2 = centering(lp, point.f, point.s, LR, t_end, params, monitor=monitor)
    stats["phase2_steps"] += len(st2.trace)
    stats["traces"].append(("phase2", st2.trace))

    # ---- rounding -----------------------------------------------------------
    x = round_integral(lp, st2.f)
    # demand edges must be saturated for the routing to be feasible
    for e in range(lp.m):
        if lp.tags[e] == TAG_DEMAND and x[e] < lp.u[e] - 0.5:
            return SolveResult(INFEASIBLE, None, None, stats)
    flow = np.zeros(inst.m, dtype=np.int64)
    for e in range(lp.m):
        if lp.orig_idx[e] >= 0:
            flow[lp.orig_idx[e]] = int(round(x[e]))
    cost = int(np.dot(inst.costs, flow))
    stats["fractional"] = st2.f
    stats["lp"] = lp
    return SolveResult(OPTIMAL, flow, cost, stats)


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

def step_change_audit(trace, m):
    """Check K_w/K_v growth against the dyadic window sizes.

    Returns a report with the smallest constant Cfit such that
    K(k) <= Cfit * (2^{2*ell_{k-1}} + 2^{2*ell_k}) * log^2 m over all
    non-reset steps, plus the raw series.
    """
    logm2 = math.log(max(m, 2)) ** 2
    worst = 0.0
    n = len(trace)
    rows = []
    for k in range(1, n):
        if trace.cols["reset"][k] or trace.cols["reset"][k - 1]:
            continue
        ell_prev = max(trace.cols["ell_f"][k - 1], 0)
        ell_cur = max(trace.cols["ell_f"][k], 0)
        bound = (4.0 ** ell_prev + 4.0 ** ell_cur) * logm2
        kk = max(trace.cols["K_w"][k], trace.cols["K_v"][k])
        rows.append((kk, bound))
        if kk > 0:
            worst = max(worst, kk / bound)
    return {"C_fit": worst, "samples": len(rows)}
