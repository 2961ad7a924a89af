import numpy as np
import pytest
import scipy.optimize

from sepflow.instance import (
    McfInstance, TAG_DEMAND, TAG_TS, TAG_ORIGINAL, build_circulation_lp,
    prune_dead_edges, phase1_t_start, triple_for_phase1, untriple,
    dual_residual)
from sepflow.oracle import exact_mcf, OPTIMAL

from helpers import grid_instance


def circ_lp_optimum(lp):
    """Reference optimum of a circulation LP by HiGHS (test-only)."""
    if lp.m == 0:
        return 0.0
    A = lp.incidence().toarray().T
    r = scipy.optimize.linprog(
        c=lp.c, A_eq=A, b_eq=np.zeros(lp.nv),
        bounds=list(zip(lp.l, lp.u)), method="highs")
    assert r.success
    return r.fun


class TestBuildCirculation:
    def test_single_edge_example(self):
        inst = McfInstance(2, [(0, 1, 5, 2)], [-3, 3])
        lp = build_circulation_lp(inst)
        assert lp.nv == 4 and lp.m == 4
        assert lp.tags == [TAG_ORIGINAL, TAG_DEMAND, TAG_DEMAND, TAG_TS]
        # s->a cap 3 (a produces), b->t cap 3, t->s cap 4*4*5=80 cost -80
        assert (lp.tails[1], lp.heads[1], lp.u[1]) == (lp.s_idx, 0, 3.0)
        assert (lp.tails[2], lp.heads[2], lp.u[2]) == (1, lp.t_idx, 3.0)
        assert (lp.tails[3], lp.heads[3]) == (lp.t_idx, lp.s_idx)
        assert lp.u[3] == 80.0 and lp.c[3] == -80.0

    def test_zero_demand(self):
        inst = McfInstance(3, [(0, 1, 2, 1), (1, 2, 2, 1)], [0, 0, 0])
        lp = build_circulation_lp(inst)
        assert lp.tags.count(TAG_DEMAND) == 0
        assert lp.tags[-1] == TAG_TS
        # nothing can circulate: optimum 0
        assert abs(circ_lp_optimum(prune_dead_edges(lp))) < 1e-9

    def test_imbalanced_demand_rejected(self):
        with pytest.raises(ValueError):
            McfInstance(2, [(0, 1, 1, 1)], [-1, 2])

    def test_grid_lp_matches_oracle(self):
        rng = np.random.default_rng(0)
        inst = grid_instance(2, 2, rng)
        lp = prune_dead_edges(build_circulation_lp(inst))
        status, _, cost = exact_mcf(inst)
        assert status == OPTIMAL
        D = sum(d for d in inst.demands if d > 0)
        big = 4 * (inst.n + 2) * inst.M
        assert abs(circ_lp_optimum(lp) - (cost - big * D)) < 1e-6


class TestPrune:
    def test_dangling_edge_removed(self):
        inst = McfInstance(4, [(0, 1, 2, 1), (2, 3, 1, 1)], [-1, 1, 0, 0])
        lp = build_circulation_lp(inst)
        pruned = prune_dead_edges(lp)
        kept = set(zip(pruned.tails.tolist(), pruned.heads.tolist()))
        assert (2, 3) not in kept
        assert (0, 1) in kept

    def test_st_dag_unchanged(self):
        inst = McfInstance(3, [(0, 1, 2, 1), (1, 2, 2, 1)], [-2, 0, 2])
        lp = build_circulation_lp(inst)
        assert prune_dead_edges(lp).m == lp.m

    def test_prune_preserves_optimum(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            inst = grid_instance(3, 3, rng)
            lp = build_circulation_lp(inst)
            a = circ_lp_optimum(lp)
            b = circ_lp_optimum(prune_dead_edges(lp))
            assert abs(a - b) < 1e-6


class TestPhase1:
    def test_one_edge_center(self):
        # l=0, u=2, c=0: barrier minimizer is the midpoint
        inst = McfInstance(2, [(0, 1, 2, 0)], [0, 0])
        lp = build_circulation_lp(inst)
        lp3, pt = triple_for_phase1(lp, phase1_t_start(lp))
        f1 = pt.f[:lp.m]
        assert abs(f1[0] - 1.0) < 1e-8

    def test_copies_exactly_central(self):
        rng = np.random.default_rng(1)
        inst = grid_instance(2, 3, rng)
        lp = prune_dead_edges(build_circulation_lp(inst))
        t0 = phase1_t_start(lp)
        lp3, pt = triple_for_phase1(lp, t0)
        m = lp.m
        # mu = s/t + phi'(f) vanishes identically on copies 2 and 3
        mu = pt.s / t0 + lp3.barrier_grad(pt.f)
        assert np.abs(mu[m:]).max() < 1e-12 * np.abs(pt.s[m:] / t0).max()

    def test_gamma_small_at_start(self):
        rng = np.random.default_rng(2)
        inst = grid_instance(3, 3, rng)
        lp = prune_dead_edges(build_circulation_lp(inst))
        t0 = phase1_t_start(lp)
        lp3, pt = triple_for_phase1(lp, t0)
        mu = pt.s / t0 + lp3.barrier_grad(pt.f)
        gamma = mu / np.sqrt(lp3.barrier_hess(pt.f))
        assert np.abs(gamma).max() < 1.0 / (10 * np.log(lp3.m))

    def test_dual_representable(self):
        rng = np.random.default_rng(3)
        inst = grid_instance(2, 2, rng)
        lp = prune_dead_edges(build_circulation_lp(inst))
        lp3, pt = triple_for_phase1(lp, phase1_t_start(lp))
        res = dual_residual(lp3, pt.s)
        assert res <= 1e-8 * max(np.linalg.norm(lp3.c), 1.0)

    def test_untriple_roundtrip(self):
        rng = np.random.default_rng(4)
        inst = grid_instance(2, 2, rng)
        lp = prune_dead_edges(build_circulation_lp(inst))
        lp3, pt = triple_for_phase1(lp, phase1_t_start(lp))
        point = untriple(lp, pt, require_interior=False)
        B = lp.incidence()
        resid = np.asarray(B.T @ point.f).ravel()
        assert np.abs(resid).max() < 1e-8 * max(point.f.max(), 1.0)
        # zero steps: slack round-trips to the original cost vector
        np.testing.assert_array_equal(point.s, lp.c)
