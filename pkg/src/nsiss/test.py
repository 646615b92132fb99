import numpy as np
import scipy.linalg

from .nonsmooth import EMPTY, interval


def norm(x):
    return np.linalg.norm(np.asarray(x, dtype=np.float64).reshape(-1))


def err_rel(x, y, ε=1e-10):
    """ Relative error of y with respect to x. """
    return norm(np.asarray(x) - np.asarray(y)) / (norm(x) + ε)


def gradh(f, x, h=1e-6):
    """ Empirical gradient of a scalar function f at x by central differences. """
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for index in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[index] += h
        xm[index] -= h
        grad[index] = (float(f(xp)) - float(f(xm))) / (2 * h)
    return grad


def simplex_grid(m, step=1e-3):
    """ Points of the unit simplex in ℝᵐ (m ≤ 3) whose coordinates are multiples of step. """
    k = int(round(1 / step))
    if m == 1:
        return np.ones((1, 1))
    if m == 2:
        a = np.arange(k + 1) / k
        return np.stack([a, 1 - a], axis=1)
    if m == 3:
        i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing='ij')
        keep = i + j <= k
        i, j = i[keep] / k, j[keep] / k
        return np.stack([i, j, 1 - i - j], axis=1)
    raise ValueError("Simplex grid only for up to 3 vertices, got {}.".format(m))


def simplex_edges(m, step=1e-5):
    """ Points on the edges of the unit simplex in ℝᵐ, step apart. """
    a = np.arange(int(round(1 / step)) + 1) * step
    points = []
    for i in range(m):
        for j in range(i + 1, m):
            e = np.zeros((len(a), m))
            e[:, i], e[:, j] = a, 1 - a
            points.append(e)
    return np.vstack(points) if points else np.ones((1, 1))


def lie_interval_oracle(G, F, step=1e-3, tol=1e-9, edge_step=1e-5):
    """ Brute-force Lie interval from gradient vertices G and field vertices F.

    Every point of a λ-grid on the simplex, and of a finer grid on its edges, is projected on the affine set
    {Eλ = 0, Σλ = 1} through its null space; projections with λ ≥ −tol are feasible and ⟨∇V_0, Fᵀλ⟩ ranges over them.

    :return: (interval, best grid residual max_j |⟨∇V_j − ∇V_0, Fᵀλ⟩| relative to max|G|·max|F|)
    """
    G, F = np.atleast_2d(G), np.atleast_2d(F)
    c = G[0] @ F.T
    if len(G) == 1:
        return interval(c.min(), c.max()), 0.
    scale = max(np.abs(G).max() * np.abs(F).max(), 1e-300)
    E = (G[1:] - G[0]) @ F.T / scale
    L = np.vstack([simplex_grid(len(F), step), simplex_edges(len(F), edge_step)])
    best = float(np.abs(L @ E.T).max(axis=1).min())

    A = np.vstack([E, np.ones((1, len(F)))])
    b = np.zeros(len(A))
    b[-1] = 1.
    lam0 = np.linalg.lstsq(A, b, rcond=None)[0]
    if np.abs(A @ lam0 - b).max() > tol:
        return EMPTY, best
    N = scipy.linalg.null_space(A)
    proj = lam0 + (L - lam0) @ N @ N.T
    ok = proj.min(axis=1) >= -tol
    if not ok.any():
        return EMPTY, best
    values = proj[ok] @ c
    return interval(values.min(), values.max()), best


def small_gain_oracle(chi1, chi2, grid):
    """ sup_r χ₁(χ₂(r)) / r on grid; the loop is contracting iff it is < 1. """
    grid = np.asarray(grid, dtype=np.float64)
    return float(np.max(chi1(chi2(grid)) / grid))
