"""Independent reference implementations used as test oracles.

Everything here is deliberately written without the library under test:
finite differences for gradients, straight-line numpy math for the MLP,
dense linear algebra for fixed points, brute force for graph questions.
"""

from __future__ import annotations

import numpy as np


def central_fd(f, x: np.ndarray, i: int, h: float = 1e-5) -> float:
    """Central finite-difference derivative of scalar f along component i."""
    xp, xm = x.copy(), x.copy()
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2 * h)


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    return np.array([central_fd(f, x, i, h) for i in range(x.size)])


def fd_jacobian(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Dense finite-difference Jacobian of a vector function."""
    cols = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h))
    return np.stack(cols, axis=1)


def grad_close(g_auto: np.ndarray, g_fd: np.ndarray,
               rel: float = 1e-4, abs_tol: float = 1e-6) -> bool:
    """Spec tolerance: |auto - fd| <= max(rel * |auto|, abs_tol) elementwise."""
    g_auto = np.asarray(g_auto, dtype=float)
    g_fd = np.asarray(g_fd, dtype=float)
    return bool(np.all(np.abs(g_auto - g_fd)
                       <= np.maximum(rel * np.abs(g_auto), abs_tol)))


def reference_mlp_forward(params: dict, mu_in, sigma_in, pinned_in,
                          mu_out, sigma_out, pinned_out, x: np.ndarray) -> np.ndarray:
    """Straight-line MLP evaluation: normalize, 2x softplus layers, linear
    output + skip, reverse-normalize. Written independently of nn.py."""
    inv = np.where(pinned_in, 0.0, 1.0 / sigma_in)
    xn = (x - mu_in) * inv
    a1 = np.logaddexp(0.0, xn @ params["w1"] + params["b1"])
    a2 = np.logaddexp(0.0, a1 @ params["w2"] + params["b2"])
    z = a2 @ params["w_out"] + params["b_out"] + xn @ params["w_skip"]
    return z * np.where(pinned_out, 0.0, sigma_out) + mu_out


def affine_fixed_point(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unique fixed point of x -> A x + b when I - A is invertible."""
    n = len(b)
    return np.linalg.solve(np.eye(n) - a, b)


def random_affine_map(rng: np.random.Generator, dim: int, radius: float):
    """Random affine map with spectral radius scaled to `radius` exactly."""
    a = rng.normal(size=(dim, dim))
    rho = max(abs(np.linalg.eigvals(a)))
    a *= radius / rho
    b = rng.normal(size=dim)
    return a, b


def brute_force_sccs(nodes: list[str], edges: list[tuple[str, str]]) -> list[frozenset]:
    """SCCs from pairwise reachability (Floyd-Warshall style closure)."""
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    reach = np.zeros((n, n), dtype=bool)
    for u, v in edges:
        reach[idx[u], idx[v]] = True
    for k in range(n):
        for i in range(n):
            if reach[i, k]:
                reach[i] |= reach[k]
    comps = {}
    for i, u in enumerate(nodes):
        key = frozenset(v for j, v in enumerate(nodes)
                        if (reach[i, j] and reach[j, i]) or i == j)
        comps[key] = True
    return list(comps)


def exhaustive_min_tears(cycles: list[frozenset[str]]) -> int:
    """Smallest number of streams whose removal cuts every cycle."""
    from itertools import combinations
    streams = sorted(set().union(*cycles)) if cycles else []
    for size in range(0, len(streams) + 1):
        for combo in combinations(streams, size):
            chosen = set(combo)
            if all(c & chosen for c in cycles):
                return size
    return 0
