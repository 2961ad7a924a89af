import numpy as np
import pytest

from sepflow import septree
from sepflow.projections import (
    MaintainSlack, MaintainFlow, demand_decomposition_check, energy_audit)

from helpers import grid_edges


def setup_graph(rows, cols, seed=0):
    edges = grid_edges(rows, cols)
    tails = np.array([e[0] for e in edges], dtype=np.int64)
    heads = np.array([e[1] for e in edges], dtype=np.int64)
    nv = rows * cols
    tree = septree.build(nv, tails, heads, validate=True)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.5, 2.0, len(tails))
    v = rng.normal(size=len(tails))
    return tree, tails, heads, nv, w, v, rng


def dense_projection(tails, heads, nv, w):
    m = len(tails)
    B = np.zeros((m, nv))
    B[np.arange(m), tails] = -1.0
    B[np.arange(m), heads] += 1.0
    L = B.T @ (w[:, None] * B)
    Lp = np.linalg.pinv(L, hermitian=True)
    WB = np.sqrt(w)[:, None] * B
    return WB @ Lp @ WB.T, B


class TestSlack:
    def test_zero_alpha_keeps_value(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4)
        s0 = rng.normal(size=len(tails))
        ms = MaintainSlack(tree, tails, heads, w, v, s0, eps_p=0.0)
        ms.move(0.0)
        np.testing.assert_allclose(ms.exact(), s0, atol=1e-10)

    def test_exact_mode_matches_dense_projection(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=1)
        s0 = np.zeros(len(tails))
        ms = MaintainSlack(tree, tails, heads, w, v, s0, eps_p=0.0)
        P, B = dense_projection(tails, heads, nv, w)
        alpha = 0.8
        ms.move(alpha)
        ds = ms.exact() - s0
        want = alpha / np.sqrt(w) * (P @ v)
        np.testing.assert_allclose(ds, want,
                                   atol=1e-8 * max(1, np.abs(want).max()))

    def test_step_stays_in_incidence_range(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(5, 5, seed=2)
        ms = MaintainSlack(tree, tails, heads, w, v,
                           np.zeros(len(tails)), eps_p=0.2, seed=3)
        ms.move(1.0)
        ds = ms.exact()
        _, B = dense_projection(tails, heads, nv, w)
        # W^{1/2} ds must be a (weighted) potential difference: fit W^{1/2}B y
        target = np.sqrt(w) * ds
        A = np.sqrt(w)[:, None] * B
        y, *_ = np.linalg.lstsq(A, target, rcond=None)
        resid = np.linalg.norm(A @ y - target)
        assert resid <= 1e-8 * max(np.linalg.norm(ds), 1.0)

    def test_reweight_preserves_value(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=4)
        ms = MaintainSlack(tree, tails, heads, w, v,
                           rng.normal(size=len(tails)), eps_p=0.1, seed=5)
        ms.move(0.5)
        before = ms.exact()
        eids = np.array([1, 8, 14, 20])
        ms.reweight(eids, rng.uniform(0.5, 2.0, 4))
        np.testing.assert_allclose(
            ms.exact(), before, atol=1e-8 * max(1, np.abs(before).max()))
        ms.reweight(eids, ms.w[eids])  # idempotent on same weights
        np.testing.assert_allclose(
            ms.exact(), before, atol=1e-8 * max(1, np.abs(before).max()))


class TestFlow:
    def test_feasibility_exact_any_eps(self):
        for eps_p, seed in ((0.0, 0), (0.25, 1)):
            tree, tails, heads, nv, w, v, rng = setup_graph(5, 5, seed=seed)
            mf = MaintainFlow(tree, tails, heads, w, v,
                              np.zeros(len(tails)), eps_p, seed=seed)
            ft = mf.ftilde()
            _, B = dense_projection(tails, heads, nv, w)
            lhs = B.T @ (np.sqrt(w) * ft)
            rhs = B.T @ (np.sqrt(w) * v)
            assert np.linalg.norm(lhs - rhs) <= 1e-6 * max(
                np.linalg.norm(v), 1.0)

    def test_exact_mode_matches_dense_projection(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=6)
        mf = MaintainFlow(tree, tails, heads, w, v,
                          np.zeros(len(tails)), eps_p=0.0)
        P, _ = dense_projection(tails, heads, nv, w)
        np.testing.assert_allclose(
            mf.ftilde(), P @ v, atol=1e-8 * max(1, np.abs(v).max()))

    def test_zero_demand_direction(self):
        # v a weighted circulation: B^T W^{1/2} v = 0 -> ftilde routes nothing
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=7)
        P, B = dense_projection(tails, heads, nv, w)
        v0 = v - P @ v  # kernel part: weighted circulation
        mf = MaintainFlow(tree, tails, heads, w, v0,
                          np.zeros(len(tails)), eps_p=0.0)
        ft = mf.ftilde()
        assert np.linalg.norm(np.sqrt(w) * ft) <= 1e-7 * max(
            np.linalg.norm(v0), 1.0)

    def test_move_updates_flow_value(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=8)
        f0 = rng.normal(size=len(tails))
        mf = MaintainFlow(tree, tails, heads, w, v, f0, eps_p=0.0)
        alpha = 0.4
        mf.move(alpha)
        want = f0 + alpha * np.sqrt(w) * v - alpha * np.sqrt(w) * mf.ftilde()
        np.testing.assert_allclose(
            mf.exact(), want, atol=1e-8 * max(1, np.abs(want).max()))
        # demand balance of the increment: B^T(f - f0) = 0
        _, B = dense_projection(tails, heads, nv, w)
        net = B.T @ (mf.exact() - f0)
        assert np.abs(net).max() <= 1e-6 * max(np.abs(f0).max(), 1.0)

    def test_reweight_preserves_value(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=9)
        mf = MaintainFlow(tree, tails, heads, w, v,
                          rng.normal(size=len(tails)), eps_p=0.15, seed=2)
        mf.move(0.6)
        before = mf.exact()
        eids = np.array([0, 3, 12, 18])
        mf.reweight(eids, rng.uniform(0.5, 2.0, 4))
        np.testing.assert_allclose(
            mf.exact(), before, atol=1e-8 * max(1, np.abs(before).max()))

    def test_sparse_direction_change(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=10)
        mf = MaintainFlow(tree, tails, heads, w, v,
                          np.zeros(len(tails)), eps_p=0.0)
        mf.move(0.3)
        eids = np.array([2, 5])
        vnew = rng.normal(size=2)
        mf.move(0.2, eids, vnew)
        # from-scratch: replay the same two steps densely
        P, _ = dense_projection(tails, heads, nv, w)
        v2 = v.copy()
        v2[eids] = vnew
        want = (0.3 * np.sqrt(w) * (v - P @ v)
                + 0.2 * np.sqrt(w) * (v2 - P @ v2))
        np.testing.assert_allclose(
            mf.exact(), want, atol=1e-7 * max(1, np.abs(want).max()))


class TestAudits:
    def test_demand_decomposition(self):
        for eps_p, seed in ((0.0, 0), (0.3, 5)):
            tree, tails, heads, nv, w, v, rng = setup_graph(5, 5, seed=seed)
            mf = MaintainFlow(tree, tails, heads, w, v,
                              np.zeros(len(tails)), eps_p, seed=seed)
            assert demand_decomposition_check(mf)

    def test_demand_decomposition_zero_direction(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(3, 3)
        mf = MaintainFlow(tree, tails, heads, w, np.zeros(len(tails)),
                          np.zeros(len(tails)), 0.0)
        assert demand_decomposition_check(mf)

    def test_energy_audit_exact_mode(self):
        tree, tails, heads, nv, w, v, rng = setup_graph(4, 4, seed=3)
        mf = MaintainFlow(tree, tails, heads, w, v,
                          np.zeros(len(tails)), eps_p=0.0)
        rep = energy_audit(mf)
        assert rep["decomposition_exact"]
        assert rep["matches_electrical"]

    def test_triangle_energy(self):
        # unit triangle, demand (1,-1,0): effective resistance 2/3
        tails = np.array([0, 1, 2])
        heads = np.array([1, 2, 0])
        tree = septree.build(3, tails, heads, validate=True)
        w = np.ones(3)
        # direction whose weighted demand is (1,-1,0): v on edge (0,1)
        # gives d = B^T v = (-1, 1, 0), so flip the sign
        v = np.array([-1.0, 0.0, 0.0])
        mf = MaintainFlow(tree, tails, heads, w, v, np.zeros(3), 0.0)
        rep = energy_audit(mf)
        assert abs(rep["total_energy"] - 2.0 / 3.0) < 1e-9
        assert abs(rep["ftilde_energy"] - 2.0 / 3.0) < 1e-9
