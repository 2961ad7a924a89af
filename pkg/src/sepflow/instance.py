"""Min-cost-flow instances, their circulation LP, and phase-1 construction.

The circulation form adds auxiliary vertices s and t:
  * every vertex with demand d_v < 0 (a net producer) gets an s->v edge of
    capacity -d_v and cost 0,
  * every vertex with d_v > 0 (a net consumer) gets a v->t edge of capacity
    d_v and cost 0,
  * one closing t->s edge of capacity 4nM and cost -4nM.
A feasible demand routing exists iff the min-cost circulation saturates all
demand edges.  Sign convention: (B^T f)_v = inflow - outflow = d_v.
"""

import numpy as np
import scipy.sparse

from .laplacian import WeightedLaplacian, sdd_solve

TAG_ORIGINAL = "original"
TAG_DEMAND = "demand-edge"
TAG_TS = "ts-edge"
TAG_COPY2 = "phase1-copy2"
TAG_COPY3 = "phase1-copy3"

BOX = 0      # barrier -log(u-x) - log(x-l)
LOGONLY = 1  # barrier -log(x)


class McfInstance:
    """Directed min-cost-flow instance with integer data."""

    def __init__(self, n, edges, demands):
        """edges: list of (tail, head, capacity, cost); demands: length-n ints."""
        self.n = int(n)
        self.tails = np.array([e[0] for e in edges], dtype=np.int64)
        self.heads = np.array([e[1] for e in edges], dtype=np.int64)
        self.caps = np.array([e[2] for e in edges], dtype=np.int64)
        self.costs = np.array([e[3] for e in edges], dtype=np.int64)
        self.demands = np.asarray(demands, dtype=np.int64)
        self.m = len(edges)
        self.M = int(max(
            np.abs(self.costs).max(initial=0),
            self.caps.max(initial=0),
            np.abs(self.demands).max(initial=0), 1))
        self.validate()

    def validate(self):
        if len(self.demands) != self.n:
            raise ValueError("demand vector length != n")
        if int(self.demands.sum()) != 0:
            raise ValueError("demands do not sum to zero")
        if (self.caps < 1).any():
            raise ValueError("capacities must be >= 1")
        if self.m and (np.minimum(self.tails, self.heads).min() < 0
                       or np.maximum(self.tails, self.heads).max() >= self.n):
            raise ValueError("edge endpoint out of range")


class LpProblem:
    """Circulation-form LP: min c.f subject to B^T f = 0, l <= f <= u."""

    def __init__(self, nv, tails, heads, lo, hi, cost, tags, orig_idx,
                 s_idx, t_idx, barrier_kind=None):
        self.nv = int(nv)
        self.tails = np.asarray(tails, dtype=np.int64)
        self.heads = np.asarray(heads, dtype=np.int64)
        self.l = np.asarray(lo, dtype=np.float64)
        self.u = np.asarray(hi, dtype=np.float64)
        self.c = np.asarray(cost, dtype=np.float64)
        self.tags = list(tags)
        self.orig_idx = np.asarray(orig_idx, dtype=np.int64)  # -1 if none
        self.s_idx = s_idx
        self.t_idx = t_idx
        self.m = len(self.tails)
        if barrier_kind is None:
            barrier_kind = np.full(self.m, BOX, dtype=np.int64)
        self.barrier_kind = np.asarray(barrier_kind, dtype=np.int64)
        finite = self.barrier_kind == BOX
        if np.any(self.l[finite] >= self.u[finite]):
            raise ValueError("need l < u on every box edge")

    def incidence(self):
        """Sparse m x nv incidence: row e has -1 at tail, +1 at head."""
        rows = np.repeat(np.arange(self.m), 2)
        cols = np.empty(2 * self.m, dtype=np.int64)
        vals = np.empty(2 * self.m)
        cols[0::2] = self.tails
        cols[1::2] = self.heads
        vals[0::2] = -1.0
        vals[1::2] = 1.0
        return scipy.sparse.csr_matrix(
            (vals, (rows, cols)), shape=(self.m, self.nv))

    # ---- separable barrier -------------------------------------------------
    def barrier_value(self, f):
        box = self.barrier_kind == BOX
        out = np.zeros(self.m)
        out[box] = -np.log(self.u[box] - f[box]) - np.log(f[box] - self.l[box])
        out[~box] = -np.log(f[~box])
        return out

    def barrier_grad(self, f):
        box = self.barrier_kind == BOX
        g = np.empty(self.m)
        g[box] = 1.0 / (self.u[box] - f[box]) - 1.0 / (f[box] - self.l[box])
        g[~box] = -1.0 / f[~box]
        return g

    def barrier_hess(self, f):
        box = self.barrier_kind == BOX
        h = np.empty(self.m)
        h[box] = 1.0 / (self.u[box] - f[box]) ** 2 \
            + 1.0 / (f[box] - self.l[box]) ** 2
        h[~box] = 1.0 / f[~box] ** 2
        return h

    def interior(self, f, slack=0.0):
        box = self.barrier_kind == BOX
        ok = np.all(f[box] > self.l[box] + slack) \
            and np.all(f[box] < self.u[box] - slack)
        return bool(ok and np.all(f[~box] > slack))


class InteriorPoint:
    """A strictly feasible primal/dual pair on the central path scale t."""

    def __init__(self, f, s, t):
        self.f = np.asarray(f, dtype=np.float64)
        self.s = np.asarray(s, dtype=np.float64)
        self.t = float(t)


def dual_residual(lp, s):
    """Least-squares residual of fitting s = c - B y (dual representability)."""
    B = lp.incidence().toarray()
    r = s - lp.c
    y, *_ = np.linalg.lstsq(B, r, rcond=None)
    return float(np.linalg.norm(B @ y - r))


def build_circulation_lp(inst):
    """Fold demands into the s/t gadget; returns the circulation LP."""
    inst.validate()
    n_aug = inst.n + 2
    s_idx, t_idx = inst.n, inst.n + 1
    big = 4 * n_aug * inst.M

    tails = list(inst.tails)
    heads = list(inst.heads)
    lo = [0.0] * inst.m
    hi = [float(u) for u in inst.caps]
    cost = [float(c) for c in inst.costs]
    tags = [TAG_ORIGINAL] * inst.m
    orig = list(range(inst.m))

    for v in range(inst.n):
        d = int(inst.demands[v])
        if d < 0:
            tails.append(s_idx)
            heads.append(v)
            hi.append(float(-d))
        elif d > 0:
            tails.append(v)
            heads.append(t_idx)
            hi.append(float(d))
        else:
            continue
        lo.append(0.0)
        cost.append(0.0)
        tags.append(TAG_DEMAND)
        orig.append(-1)

    tails.append(t_idx)
    heads.append(s_idx)
    lo.append(0.0)
    hi.append(float(big))
    cost.append(float(-big))
    tags.append(TAG_TS)
    orig.append(-1)

    return LpProblem(n_aug, tails, heads, lo, hi, cost, tags, orig,
                     s_idx, t_idx)


def prune_dead_edges(lp):
    """Drop every edge (v1,v2) with v1 unreachable from s or t unreachable
    from v2 (directed BFS forward from s, backward to t)."""
    fwd = [[] for _ in range(lp.nv)]
    bwd = [[] for _ in range(lp.nv)]
    for e in range(lp.m):
        fwd[lp.tails[e]].append(lp.heads[e])
        bwd[lp.heads[e]].append(lp.tails[e])

    def bfs(start, adj):
        seen = np.zeros(lp.nv, dtype=bool)
        seen[start] = True
        stack = [start]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return seen

    from_s = bfs(lp.s_idx, fwd)
    to_t = bfs(lp.t_idx, bwd)
    keep = from_s[lp.tails] & to_t[lp.heads]
    k = np.nonzero(keep)[0]
    return LpProblem(lp.nv, lp.tails[k], lp.heads[k], lp.l[k], lp.u[k],
                     lp.c[k], [lp.tags[i] for i in k], lp.orig_idx[k],
                     lp.s_idx, lp.t_idx, lp.barrier_kind[k])


def phase1_t_start(lp):
    """Initial path parameter for phase 1."""
    m = lp.m
    L = float(np.linalg.norm(lp.c))
    R = float(np.linalg.norm(lp.u - lp.l))
    r = 1.0 / (4.0 * m)
    return 2.0 ** 21 * m ** 5 * (L * R / 128.0) * (R / r)


def _newton_fc(lp, t, tol=1e-12, maxit=100):
    """Separable argmin of c^T f + t*phi(f): per-coordinate safeguarded Newton."""
    lo, hi, c = lp.l, lp.u, lp.c
    x = (lo + hi) / 2.0
    a = lo.copy()
    b = hi.copy()
    for _ in range(maxit):
        gu = 1.0 / (hi - x)
        gl = 1.0 / (x - lo)
        g = c + t * (gu - gl)
        h = t * (gu ** 2 + gl ** 2)
        # maintain a bracket: g is increasing in x
        a = np.where(g < 0, np.maximum(a, x), a)
        b = np.where(g > 0, np.minimum(b, x), b)
        step = g / h
        xn = x - step
        bad = (xn <= a) | (xn >= b)
        xn = np.where(bad, (a + b) / 2.0, xn)
        done = np.abs(xn - x) <= tol * (1.0 + np.abs(x))
        x = xn
        if done.all():
            return x
    gu = 1.0 / (hi - x)
    gl = 1.0 / (x - lo)
    g = c + t * (gu - gl)
    if np.abs(g / (t * (gu ** 2 + gl ** 2) ** 0.5)).max() > 1e-8:
        raise ArithmeticError("per-coordinate Newton failed to converge")
    return x


def triple_for_phase1(lp, t_start):
    """Build the tripled phase-1 LP [B; B; -B] and its exactly-central point.

    Copies 2 and 3 carry one-sided -log x barriers; the returned point has
    mu^t(f, s) = 0 in every coordinate at t = t_start.
    """
    m = lp.m
    R = float(np.linalg.norm(lp.u - lp.l))
    f_c = _newton_fc(lp, t_start)

    # f_o: Euclidean projection of f_c onto {B^T f = 0} via one Laplacian solve
    ones = np.ones(m)
    Lap = WeightedLaplacian.from_edges(
        np.arange(lp.nv), lp.tails, lp.heads, ones)
    B = lp.incidence()
    resid = B.T @ f_c                       # = B^T f_c - b with b = 0
    y = sdd_solve(Lap, np.asarray(resid).ravel())
    f_o = f_c - (B @ y)

    f2 = 3.0 * R + f_o - f_c
    if np.any(f2 <= 0):
        raise ArithmeticError("phase-1 copy 2 left its domain; R too small?")
    # Initial slack: -t*phi'(f_c) equals c exactly at the separable minimizer
    # (up to Newton tolerance), and t/x cancels the -log x gradients.  The
    # phase-1 LP uses this slack as its own cost vector, so the start point
    # is exactly central and dual-feasible with potentials y = 0.
    s3 = np.concatenate([lp.c, t_start / f2, np.full(m, t_start / (3.0 * R))])

    inf = np.inf
    tails = np.concatenate([lp.tails, lp.tails, lp.heads])
    heads = np.concatenate([lp.heads, lp.heads, lp.tails])
    lo = np.concatenate([lp.l, np.zeros(m), np.zeros(m)])
    hi = np.concatenate([lp.u, np.full(m, inf), np.full(m, inf)])
    tags = list(lp.tags) + [TAG_COPY2] * m + [TAG_COPY3] * m
    orig = np.concatenate([lp.orig_idx, -np.ones(m), -np.ones(m)])
    kind = np.concatenate([lp.barrier_kind,
                           np.full(m, LOGONLY), np.full(m, LOGONLY)])
    lp3 = LpProblem(lp.nv, tails, heads, lo, hi, s3.copy(), tags, orig,
                    lp.s_idx, lp.t_idx, kind)

    f3 = np.concatenate([f_c, f2, np.full(m, 3.0 * R)])
    return lp3, InteriorPoint(f3, s3, t_start)


def untriple(lp, point3, require_interior=True):
    """Collapse a phase-1 iterate back to the original LP: f1+f2-f3, s1.

    Strict interiority only holds once phase 1 has centered down to its
    final path parameter; pass require_interior=False to inspect raw
    combinations (e.g. the zero-step round trip, which returns f_o).
    """
    m = lp.m
    f = point3.f[:m] + point3.f[m:2 * m] - point3.f[2 * m:]
    s = point3.s[:m]
    if require_interior and not lp.interior(f):
        raise ArithmeticError("untripled point is not strictly feasible")
    return InteriorPoint(f, s, point3.t)
