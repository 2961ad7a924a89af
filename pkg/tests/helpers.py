"""Shared random-instance generators for the test suite."""

import numpy as np

from sepflow.instance import McfInstance


def grid_edges(rows, cols):
    """Undirected grid edges as (a, b) pairs, row-major vertex ids."""
    out = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                out.append((v, v + 1))
            if r + 1 < rows:
                out.append((v, v + cols))
    return out


def grid_instance(rows, cols, rng, maxval=20, allow_negative=True):
    """Random feasible grid instance: demands induced by a random flow."""
    pairs = grid_edges(rows, cols)
    return _randomize(rows * cols, pairs, rng, maxval, allow_negative)


def triangulated_instance(n, rng, maxval=20, allow_negative=True):
    """Random Delaunay-triangulated planar instance on n points."""
    import scipy.spatial
    while True:
        pts = rng.random((n, 2))
        tri = scipy.spatial.Delaunay(pts)
        pairs = set()
        for simplex in tri.simplices:
            for i in range(3):
                a, b = int(simplex[i]), int(simplex[(i + 1) % 3])
                pairs.add((min(a, b), max(a, b)))
        pairs = sorted(pairs)
        # Delaunay on random points is connected; double-check anyway
        seen = {0}
        frontier = [0]
        adj = {v: [] for v in range(n)}
        for a, b in pairs:
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            v = frontier.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        if len(seen) == n:
            return _randomize(n, pairs, rng, maxval, allow_negative)


def _randomize(n, pairs, rng, maxval, allow_negative):
    edges = []
    for a, b in pairs:
        if rng.random() < 0.5:
            a, b = b, a
        cap = int(rng.integers(1, maxval + 1))
        lo = -maxval if allow_negative else 0
        cost = int(rng.integers(lo, maxval + 1))
        edges.append((a, b, cap, cost))
    # feasible demands: the divergence of a random sub-capacity flow
    demands = np.zeros(n, dtype=np.int64)
    for a, b, cap, _ in edges:
        fe = int(rng.integers(0, cap + 1))
        demands[b] += fe
        demands[a] -= fe
    return McfInstance(n, edges, demands)
