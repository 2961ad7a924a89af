"""Weighted graph Laplacians, SDD solves, and Schur complement utilities.

Everything in here works on small vertex supports (desk scale), so Laplacians
carry a dense matrix over their local support next to the defining edge list.
Vertex ids are global integers; `verts` maps local row/col -> global id.
"""

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

# weights smaller than this (relative to the max weight) are treated as zero
# when canonicalizing a near-Laplacian matrix back to an edge list
_WEIGHT_CLIP_REL = 1e-12

# default number of resistance samples per unit of eps^-2 * |C| * log n
DEFAULT_SAMPLE_CONST = 4.0

DIRECT_SOLVE_MAX = 2000
DENSE_SOLVE_MAX = 220


class WeightedLaplacian:
    """Symmetric weighted Laplacian on an explicit vertex support.

    Immutable after construction; factorizations and component labels are
    cached lazily.  Rows/columns outside `verts` are implicitly zero.
    """

    __slots__ = ("verts", "A", "_pos", "_comp", "_solver")

    def __init__(self, verts, A):
        self.verts = np.asarray(verts, dtype=np.int64)
        self.A = np.asarray(A, dtype=np.float64)
        assert self.A.shape == (len(self.verts), len(self.verts))
        self._pos = None
        self._comp = None
        self._solver = None

    @classmethod
    def from_edges(cls, verts, eu, ev, ew):
        """Build from global edge endpoints and positive weights."""
        verts = np.asarray(verts, dtype=np.int64)
        pos = {int(v): i for i, v in enumerate(verts)}
        n = len(verts)
        A = np.zeros((n, n))
        for u, v, w in zip(eu, ev, ew):
            iu, iv = pos[int(u)], pos[int(v)]
            A[iu, iv] -= w
            A[iv, iu] -= w
            A[iu, iu] += w
            A[iv, iv] += w
        L = cls(verts, A)
        L._pos = pos
        return L

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=np.int64), np.zeros((0, 0)))

    @property
    def n(self):
        return len(self.verts)

    def pos(self):
        if self._pos is None:
            self._pos = {int(v): i for i, v in enumerate(self.verts)}
        return self._pos

    def edges(self):
        """Extract (iu, iv, w) local-index edge arrays from the matrix."""
        n = self.n
        if n == 0:
            return (np.empty(0, dtype=np.intp),) * 2 + (np.empty(0),)
        W = -self.A.copy()
        np.fill_diagonal(W, 0.0)
        thresh = _WEIGHT_CLIP_REL * max(W.max(initial=0.0), 1e-300)
        iu, iv = np.nonzero(np.triu(W > thresh, k=1))
        return iu, iv, W[iu, iv]

    def components(self):
        """Component label per local vertex (cached)."""
        if self._comp is None:
            if self.n == 0:
                self._comp = np.empty(0, dtype=np.int64)
            else:
                iu, iv, w = self.edges()
                g = scipy.sparse.coo_matrix(
                    (np.ones(len(w)), (iu, iv)), shape=(self.n, self.n))
                _, labels = scipy.sparse.csgraph.connected_components(
                    g, directed=False)
                self._comp = labels
        return self._comp

    def restrict(self, vs):
        """Sub-Laplacian matrix block (not re-canonicalized) on global ids vs."""
        idx = np.array([self.pos()[int(v)] for v in vs], dtype=np.intp)
        return self.A[np.ix_(idx, idx)]

    def indices_of(self, vs):
        p = self.pos()
        return np.array([p[int(v)] for v in vs], dtype=np.intp)


def lap_add(L1, L2):
    """Sum of two Laplacians on the union support."""
    if L1.n == 0:
        return L2
    if L2.n == 0:
        return L1
    verts = np.union1d(L1.verts, L2.verts)
    pos = {int(v): i for i, v in enumerate(verts)}
    A = np.zeros((len(verts), len(verts)))
    for L in (L1, L2):
        idx = np.array([pos[int(v)] for v in L.verts], dtype=np.intp)
        A[np.ix_(idx, idx)] += L.A
    out = WeightedLaplacian(verts, A)
    out._pos = pos
    return out


class _GroundedSolver:
    """Factorization of L with one vertex per component grounded."""

    def __init__(self, L):
        comp = L.components()
        n = L.n
        keep = np.ones(n, dtype=bool)
        for c in np.unique(comp):
            keep[np.nonzero(comp == c)[0][0]] = False
        self.keep = np.nonzero(keep)[0]
        self.comp = comp
        self.n = n
        k = len(self.keep)
        if k == 0:
            self.kind = "trivial"
        elif n <= DENSE_SOLVE_MAX:
            self.kind = "dense"
            M = L.A[np.ix_(self.keep, self.keep)]
            self.cho = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
        elif n <= DIRECT_SOLVE_MAX:
            self.kind = "splu"
            M = scipy.sparse.csc_matrix(L.A[np.ix_(self.keep, self.keep)])
            self.lu = scipy.sparse.linalg.splu(M, permc_spec="MMD_AT_PLUS_A")
        else:
            self.kind = "pcg"
            self.M = scipy.sparse.csr_matrix(L.A[np.ix_(self.keep, self.keep)])
            d = self.M.diagonal()
            d[d <= 0] = 1.0
            self.pre = scipy.sparse.diags(1.0 / d)

    def solve(self, b, tol):
        """Pseudo-solve; b projected per component, x recentered per component."""
        b = np.asarray(b, dtype=np.float64).copy()
        # project out per-component means of b
        for c in np.unique(self.comp):
            mask = self.comp == c
            b[mask] -= b[mask].mean()
        x = np.zeros(self.n)
        if self.kind == "trivial":
            return x
        bk = b[self.keep]
        if self.kind == "dense":
            x[self.keep] = scipy.linalg.cho_solve(self.cho, bk, check_finite=False)
        elif self.kind == "splu":
            x[self.keep] = self.lu.solve(bk)
        else:
            xk, info = scipy.sparse.linalg.cg(
                self.M, bk, rtol=max(tol, 1e-14), maxiter=20 * self.n, M=self.pre)
            if info != 0:
                raise ArithmeticError(
                    "iterative SDD solve failed to converge (info=%d)" % info)
            x[self.keep] = xk
        for c in np.unique(self.comp):
            mask = self.comp == c
            x[mask] -= x[mask].mean()
        return x


def sdd_solve(L, b, tol=1e-10):
    """Solve L x = b in the pseudo-inverse sense.

    b is indexed like L.verts.  b is projected onto the range of L (per
    connected component) and the returned x is orthogonal to each component's
    all-ones vector.
    """
    if L.n == 0:
        return np.zeros(0)
    if L._solver is None:
        L._solver = _GroundedSolver(L)
    return L._solver.solve(b, tol)


def _canonical_from_dense(verts, S):
    """Snap a numerically-Laplacian dense matrix to an exact Laplacian."""
    W = -(S + S.T) / 2.0
    np.fill_diagonal(W, 0.0)
    mx = max(W.max(initial=0.0), 0.0)
    if mx > 0:
        W[W < _WEIGHT_CLIP_REL * mx] = 0.0
    else:
        W[:] = 0.0
    A = -W
    np.fill_diagonal(A, W.sum(axis=1))
    out = WeightedLaplacian(np.asarray(verts, dtype=np.int64), A)
    return out


def schur_exact(L, C):
    """Exact Schur complement of L onto the vertex set C (global ids).

    Connected components of L that avoid C vanish.  Result is canonicalized
    to a true Laplacian supported on exactly C.
    """
    C = np.asarray(sorted(set(int(v) for v in C)), dtype=np.int64)
    if L.n == 0 or len(C) == 0:
        return WeightedLaplacian(C, np.zeros((len(C), len(C))))
    pos = L.pos()
    cset = set(int(v) for v in C)
    assert all(v in pos for v in cset), "C must be inside support(L)"
    comp = L.components()
    cpos = {int(v): i for i, v in enumerate(C)}
    S = np.zeros((len(C), len(C)))
    cidx_all = L.indices_of(C)
    ccomp = set(comp[cidx_all])
    for c in ccomp:
        members = np.nonzero(comp == c)[0]
        in_c = np.array([int(L.verts[i]) in cset for i in members])
        ci = members[in_c]
        fi = members[~in_c]
        Acc = L.A[np.ix_(ci, ci)]
        if len(fi):
            Acf = L.A[np.ix_(ci, fi)]
            Aff = L.A[np.ix_(fi, fi)]
            Scc = Acc - Acf @ np.linalg.solve(Aff, Acf.T)
        else:
            Scc = Acc
        rows = np.array([cpos[int(L.verts[i])] for i in ci], dtype=np.intp)
        S[np.ix_(rows, rows)] += Scc
    return _canonical_from_dense(C, S)


class SchurParams:
    """Parameters for approx_schur: target eps, failure budget gamma, seed."""

    def __init__(self, eps, seed=0, gamma=None, sample_const=DEFAULT_SAMPLE_CONST):
        assert eps >= 0.0
        self.eps = float(eps)
        self.seed = seed
        self.gamma = gamma
        self.sample_const = sample_const


def approx_schur(L, C, params):
    """eps-approximate Schur complement onto C by resistance sampling.

    eps = 0 returns the exact Schur complement.  Otherwise the exact Schur
    complement is sparsified with q = ceil(c_s * eps^-2 * |C| * log n)
    weighted-resistance samples; if that is no sparser than the exact result
    the exact result is returned (it is trivially a 0-approximation).
    """
    Sc = schur_exact(L, C)
    if params.eps == 0.0 or Sc.n <= 2:
        return Sc
    iu, iv, w = Sc.edges()
    nedges = len(w)
    nn = max(L.n, 2)
    q = int(np.ceil(params.sample_const * params.eps ** -2 * Sc.n * np.log(nn)))
    if nedges == 0 or q >= 2 * nedges:
        return Sc
    # leverage scores via dense pseudo-inverse of the (small) Schur complement
    Lp = np.linalg.pinv(Sc.A, hermitian=True)
    dv = Lp[iu, iu] + Lp[iv, iv] - 2 * Lp[iu, iv]
    lev = np.maximum(w * dv, 1e-15)
    p = lev / lev.sum()
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    target_comp = Sc.components()
    for _ in range(20):
        counts = rng.multinomial(q, p)
        sel = counts > 0
        new_w = counts[sel] * w[sel] / (q * p[sel])
        H = WeightedLaplacian.from_edges(
            Sc.verts, Sc.verts[iu[sel]], Sc.verts[iv[sel]], new_w)
        if _same_components(target_comp, H.components()):
            return H
    raise ArithmeticError("approx_schur: sampled approximation stayed "
                          "disconnected after 20 retries")


def _same_components(c1, c2):
    if len(c1) != len(c2):
        return False
    # identical partitions iff the label pairs are in bijection
    pairs = set(zip(c1.tolist(), c2.tolist()))
    return len(pairs) == len(set(c1.tolist())) == len(set(c2.tolist()))


def spectral_approx_check(L1, L2, eps, tol=1e-9):
    """True iff e^-eps L1 <= L2 <= e^eps L1 (PSD order), up to tol.

    Dense generalized-eigenvalue test, intended for n <= 500 test use only.
    Kernel mismatch (different component structure) returns False.
    """
    verts = np.union1d(L1.verts, L2.verts)
    n = len(verts)
    pos = {int(v): i for i, v in enumerate(verts)}
    A1 = np.zeros((n, n))
    A2 = np.zeros((n, n))
    i1 = np.array([pos[int(v)] for v in L1.verts], dtype=np.intp)
    i2 = np.array([pos[int(v)] for v in L2.verts], dtype=np.intp)
    A1[np.ix_(i1, i1)] = L1.A
    A2[np.ix_(i2, i2)] = L2.A
    lam1, U = np.linalg.eigh(A1)
    scale = max(lam1.max(initial=0.0), 1e-300)
    kth = 1e-9 * scale
    pos_mask = lam1 > kth
    ker = U[:, ~pos_mask]
    # kernel of L1 must also be killed by L2 and ranks must agree
    if np.abs(A2 @ ker).max(initial=0.0) > max(tol, 1e-8) * max(
            np.abs(A2).max(initial=0.0), 1.0):
        return False
    lam2 = np.linalg.eigvalsh(A2)
    if np.count_nonzero(lam2 > 1e-9 * max(lam2.max(initial=0.0), 1e-300)) \
            != np.count_nonzero(pos_mask):
        return False
    Up = U[:, pos_mask] / np.sqrt(lam1[pos_mask])
    B = Up.T @ A2 @ Up
    mu = np.linalg.eigvalsh((B + B.T) / 2.0)
    return bool(mu.min(initial=1.0) >= np.exp(-eps) - tol
                and mu.max(initial=1.0) <= np.exp(eps) + tol)


def schur_decomposition_identity_check(L1, L2, C, tol=1e-9):
    """Check Sc(L1+L2, C) == Sc(L1, C∩V1) + Sc(L2, C∩V2).

    Requires V1 ∩ V2 ⊆ C; returns False when the precondition fails.
    """
    shared = np.intersect1d(L1.verts, L2.verts)
    cset = set(int(v) for v in C)
    if any(int(v) not in cset for v in shared):
        return False
    L = lap_add(L1, L2)
    left = schur_exact(L, [v for v in C if int(v) in L.pos()])
    r1 = schur_exact(L1, [v for v in C if int(v) in L1.pos()])
    r2 = schur_exact(L2, [v for v in C if int(v) in L2.pos()])
    right = lap_add(r1, r2)
    verts = np.union1d(left.verts, right.verts)
    n = len(verts)
    pos = {int(v): i for i, v in enumerate(verts)}
    D = np.zeros((n, n))
    il = np.array([pos[int(v)] for v in left.verts], dtype=np.intp)
    ir = np.array([pos[int(v)] for v in right.verts], dtype=np.intp)
    D[np.ix_(il, il)] += left.A
    D[np.ix_(ir, ir)] -= right.A
    scale = max(np.abs(left.A).max(initial=0.0),
                np.abs(right.A).max(initial=0.0), 1.0)
    return bool(np.abs(D).max(initial=0.0) <= tol * scale)
