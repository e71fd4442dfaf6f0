"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools

import numpy as np

from decaflow.graph import CausalGraph


def all_paths(g: CausalGraph, a: str, b: str):
    """Every simple path between ``a`` and ``b`` in the skeleton."""
    nbrs = {v: set(g.parents(v)) | set(g.children(v)) for v in g.nodes}
    out = []

    def walk(path):
        v = path[-1]
        if v == b:
            out.append(list(path))
            return
        for w in sorted(nbrs[v]):
            if w not in path:
                path.append(w)
                walk(path)
                path.pop()

    walk([a])
    return out


def descendants_of(g: CausalGraph, v: str) -> set[str]:
    seen, stack = set(), [v]
    while stack:
        for c in g.children(stack.pop()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return seen


def path_blocked(g: CausalGraph, path, C: set[str]) -> bool:
    for prev, mid, nxt in zip(path, path[1:], path[2:]):
        collider = prev in g.parents(mid) and nxt in g.parents(mid)
        if collider:
            if mid not in C and not (descendants_of(g, mid) & C):
                return True
        elif mid in C:
            return True
    return False


def brute_d_separated(g: CausalGraph, A, B, C) -> bool:
    C = set(C)
    for a in A:
        for b in B:
            for p in all_paths(g, a, b):
                if not path_blocked(g, p, C):
                    return False
    return True


def random_dag(rng: np.random.Generator, n_obs: int, n_hidden: int, p: float = 0.4) -> CausalGraph:
    """Random DAG; hidden nodes come first in the order so they only get hidden parents."""
    hidden = [f"z{i}" for i in range(n_hidden)]
    observed = [f"x{i}" for i in range(n_obs)]
    order = hidden + observed
    edges = []
    for i, j in itertools.combinations(range(len(order)), 2):
        if rng.random() < p:
            edges.append((order[i], order[j]))
    perm = rng.permutation(n_obs)
    return CausalGraph(tuple(observed[k] for k in perm), tuple(hidden), tuple(edges))


def numerical_jacobian(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        d = np.zeros_like(x)
        d[k] = eps
        J[:, k] = (np.asarray(f(x + d)) - np.asarray(f(x - d))) / (2 * eps)
    return J
