import json

import numpy as np
import pytest

from sepflow import septree
from sepflow.septree import (
    build, default_oracle, planar_separator, OracleContractError)

from helpers import grid_edges


def edge_arrays(edges):
    tails = np.array([e[0] for e in edges], dtype=np.int64)
    heads = np.array([e[1] for e in edges], dtype=np.int64)
    return tails, heads


class TestSeparatorOracle:
    def test_grid_middle_column(self):
        # 3x3 grid: a 3-vertex cut must exist and split near-evenly
        edges = grid_edges(3, 3)
        tails, heads = edge_arrays(edges)
        S, E1, E2 = planar_separator(np.arange(len(edges)), tails, heads)
        assert len(S) <= 4.0 * np.ceil(np.sqrt(len(edges)))
        assert max(len(E1), len(E2)) <= 0.75 * len(edges)

    def test_path_graph(self):
        edges = [(i, i + 1) for i in range(20)]
        tails, heads = edge_arrays(edges)
        S, E1, E2 = planar_separator(np.arange(20), tails, heads)
        assert len(S) >= 1
        assert max(len(E1), len(E2)) <= 15

    def test_forced_vertices_kept(self):
        edges = grid_edges(3, 3)
        tails, heads = edge_arrays(edges)
        S, E1, E2 = planar_separator(np.arange(len(edges)), tails, heads,
                                     force=(0, 8))
        assert {0, 8} <= set(S)

    def test_alpha_separable_path(self):
        # long path is 0.1-separable: one cut vertex regardless of size
        edges = [(i, i + 1) for i in range(64)]
        tails, heads = edge_arrays(edges)
        orc = default_oracle(alpha=0.1, c=3.0)
        S, E1, E2 = orc.split(np.arange(64), tails, heads, ())
        assert len(S) <= 3.0 * np.ceil(64 ** 0.1)


class TestBuild:
    def test_single_edge_is_leaf_root(self):
        tree = build(2, [0], [1], validate=True)
        assert tree.root == 0 and tree.nodes[0].leaf
        assert tree.height == 0
        assert set(tree.nodes[0].elim.tolist()) == {0, 1}

    def test_seven_path(self):
        edges = [(i, i + 1) for i in range(6)]
        tails, heads = edge_arrays(edges)
        tree = build(7, tails, heads, validate=True)
        root = tree.nodes[tree.root]
        assert not root.leaf and len(root.boundary) == 0
        # two children partition the six edges
        kids = [tree.nodes[c] for c in root.children]
        assert sorted(kids[0].eids.tolist() + kids[1].eids.tolist()) == \
            list(range(6))

    @pytest.mark.parametrize("rows,cols", [(3, 3), (4, 5), (6, 6)])
    def test_grid_valid(self, rows, cols):
        edges = grid_edges(rows, cols)
        tails, heads = edge_arrays(edges)
        tree = build(rows * cols, tails, heads, validate=True)
        assert tree.height >= 1
        # every vertex eliminated exactly once (validate checks it, but
        # assert the partition explicitly as the headline invariant)
        elim = np.concatenate([nd.elim for nd in tree.nodes])
        assert sorted(elim.tolist()) == list(range(rows * cols))

    def test_aux_in_root(self):
        edges = grid_edges(3, 3) + [(9, 0), (8, 10), (10, 9)]
        tails, heads = edge_arrays(edges)
        tree = build(11, tails, heads, aux=(9, 10), validate=True)
        root_elim = set(tree.nodes[tree.root].elim.tolist())
        assert {9, 10} <= root_elim

    def test_levels_are_heights(self):
        edges = grid_edges(4, 4)
        tails, heads = edge_arrays(edges)
        tree = build(16, tails, heads, validate=True)
        for nd in tree.nodes:
            if nd.leaf:
                assert nd.level == 0
            else:
                assert nd.level == 1 + max(tree.nodes[c].level
                                           for c in nd.children)


class TestPathUnion:
    def make(self):
        edges = grid_edges(4, 4)
        tails, heads = edge_arrays(edges)
        return build(16, tails, heads, validate=True)

    def naive_union(self, tree, nids):
        out = set()
        for nid in nids:
            while nid != -1:
                out.add(nid)
                nid = tree.nodes[nid].parent
        return out

    def test_matches_naive(self):
        tree = self.make()
        rng = np.random.default_rng(7)
        for _ in range(20):
            k = int(rng.integers(1, 5))
            nids = rng.choice(len(tree.nodes), size=k, replace=False)
            pu = tree.path_union(int(i) for i in nids)
            assert set(pu) == self.naive_union(tree, nids.tolist())
            # children-first ordering
            levels = [tree.nodes[i].level for i in pu]
            assert levels == sorted(levels)

    def test_edges_route_through_their_leaves(self):
        tree = self.make()
        pu = tree.path_union_of_edges([0])
        leaf = int(tree.leaf_of_edge[0])
        assert pu[0] == leaf or tree.nodes[pu[0]].level == 0
        assert leaf in pu and tree.root == pu[-1]

    def test_touched_cost(self):
        tree = self.make()
        pu = tree.path_union([tree.root])
        expect = len(tree.nodes[tree.root].boundary) + \
            len(tree.nodes[tree.root].elim)
        assert tree.touched_cost([tree.root]) == expect
        full = tree.touched_cost(range(len(tree.nodes)))
        assert full == sum(len(nd.boundary) + len(nd.elim)
                           for nd in tree.nodes)


def test_json_dump_parses():
    edges = grid_edges(3, 3)
    tails = np.array([e[0] for e in edges])
    heads = np.array([e[1] for e in edges])
    tree = build(9, tails, heads, validate=True)
    doc = json.loads(tree.to_json())
    assert doc["root"] == tree.root
    assert len(doc["nodes"]) == len(tree.nodes)


def test_contract_violation_raised():
    # an oracle that returns an oversized separator must be rejected
    def bad(eids, tails, heads, force, orc):
        verts = sorted({int(tails[e]) for e in eids}
                       | {int(heads[e]) for e in eids})
        half = len(eids) // 2
        return verts, list(eids[:half]), list(eids[half:])

    edges = grid_edges(4, 4)
    tails = np.array([e[0] for e in edges])
    heads = np.array([e[1] for e in edges])
    orc = septree.SeparatorOracle(bad, c=0.5)
    with pytest.raises(OracleContractError):
        build(16, tails, heads, oracle=orc)
