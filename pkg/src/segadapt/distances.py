"""Empirical transport distances between point sets.

``wasserstein_1d`` is the sorted/quantile closed form, ``sliced_wasserstein``
averages it over random unit projections (differentiable through the sorted
matching via :mod:`segadapt.autodiff`), and ``exact_wasserstein`` solves the
assignment problem outright for small instances so the estimators can be
checked against ground truth.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .errors import InvalidInputError, UnsupportedInstanceError
from .numerics import sample_unit_directions
from .validation import check_point_set

EXACT_MAX_POINTS = 64


def _quantile_indices(n: int, grid: int) -> np.ndarray:
    """Indices of the step inverse-CDF of an n-sample at grid midpoints.

    The left-continuous convention ceil(t*n) - 1 evaluated at t = (j+0.5)/grid,
    in exact integer arithmetic so jump alignment is platform independent.
    Reduces to the identity when grid == n.
    """
    j = np.arange(grid, dtype=np.int64)
    return np.asarray(((2 * j + 1) * n + 2 * grid - 1) // (2 * grid) - 1, dtype=np.intp)


def _canonicalize_directions(directions: np.ndarray) -> np.ndarray:
    """Flip each direction so its first nonzero coordinate is positive.

    The 1-D transport cost is invariant under negating a projection, so
    restricting to a half-sphere leaves the estimator unchanged while making
    the 1-D reduction agree with wasserstein_1d bit for bit.
    """
    first = directions[np.arange(directions.shape[0]), (directions != 0.0).argmax(axis=1)]
    return directions * np.sign(first)[:, None]


def wasserstein_1d(a, b, order: int = 2) -> float:
    """Order-``order`` Wasserstein distance between 1-D empirical samples.

    Equal sizes match sorted values directly. Unequal sizes are both
    resampled at the max(|a|, |b|)-point quantile grid via step
    interpolation of the inverse CDF, then matched.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("wasserstein_1d requires non-empty samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("wasserstein_1d requires finite samples")
    if order < 1:
        raise InvalidInputError(f"order must be >= 1, got {order}")
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    grid = max(a.size, b.size)
    if a.size != b.size:
        a_sorted = a_sorted[_quantile_indices(a.size, grid)]
        b_sorted = b_sorted[_quantile_indices(b.size, grid)]
    cost = np.mean(np.abs(a_sorted - b_sorted) ** order)
    return float(cost ** (1.0 / order))


def swd_loss(p: ad.Var, q: ad.Var, directions: np.ndarray, order: int = 2) -> ad.Var:
    """Differentiable sliced Wasserstein distance for fixed projections.

    Computes ``(mean_j W_order^order(dirs_j . p, dirs_j . q)) ** (1/order)``
    with the per-projection sort permutations held constant, so gradients
    flow to both point sets through the matched pairs.
    """
    directions = _canonicalize_directions(np.asarray(directions, dtype=np.float64))
    n, m = p.value.shape[0], q.value.shape[0]
    proj_p = ad.matmul(p, ad.Var(directions.T))
    proj_q = ad.matmul(q, ad.Var(directions.T))

    perm_p = np.argsort(proj_p.value, axis=0)
    perm_q = np.argsort(proj_q.value, axis=0)
    if n != m:
        grid = max(n, m)
        perm_p = perm_p[_quantile_indices(n, grid)]
        perm_q = perm_q[_quantile_indices(m, grid)]
    matched_p = ad.take_along(proj_p, perm_p, axis=0)
    matched_q = ad.take_along(proj_q, perm_q, axis=0)

    diff = ad.absolute(ad.sub(matched_p, matched_q))
    cost = ad.mean(ad.power(diff, order)) if order != 1 else ad.mean(diff)
    if order == 1:
        return cost
    if float(cost.value) == 0.0:
        # identical matched sets; the root's one-sided derivative blows up,
        # so return an exact zero with zero subgradient
        return ad.mul(cost, 0.0)
    return ad.power(cost, 1.0 / order)


def sliced_wasserstein(
    p,
    q,
    n_projections: int = 100,
    order: int = 2,
    rng: np.random.Generator | int | None = None,
) -> float:
    """Monte-Carlo sliced Wasserstein distance between two point sets."""
    p = check_point_set(p, "p")
    q = check_point_set(q, "q")
    if p.shape[1] != q.shape[1]:
        raise InvalidInputError(
            f"dimension mismatch: p has dim {p.shape[1]}, q has dim {q.shape[1]}"
        )
    if n_projections < 1 or order < 1:
        raise InvalidInputError("n_projections and order must be >= 1")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(0 if rng is None else int(rng))
    directions = sample_unit_directions(n_projections, p.shape[1], rng)
    return float(swd_loss(ad.Var(p), ad.Var(q), directions, order=order).value)


def exact_wasserstein(p, q, order: int = 2) -> float:
    """Exact Wasserstein distance between equal-size uniform point sets.

    Solves the n x n assignment problem on the cost matrix
    ``C[i, j] = ||p_i - q_j||^order`` and returns ``(min_cost / n)**(1/order)``.
    Limited to n <= 64 points; this is the oracle, not the estimator.
    """
    p = check_point_set(p, "p")
    q = check_point_set(q, "q")
    if p.shape[0] != q.shape[0]:
        raise UnsupportedInstanceError(
            f"exact_wasserstein requires equal sizes, got {p.shape[0]} and {q.shape[0]}"
        )
    if p.shape[0] > EXACT_MAX_POINTS:
        raise UnsupportedInstanceError(
            f"exact_wasserstein supports up to {EXACT_MAX_POINTS} points, got {p.shape[0]}"
        )
    if p.shape[1] != q.shape[1]:
        raise InvalidInputError("dimension mismatch between point sets")
    if order < 1:
        raise InvalidInputError(f"order must be >= 1, got {order}")
    diff = p[:, None, :] - q[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** order
    rows, cols = linear_sum_assignment(cost)
    return float((cost[rows, cols].sum() / p.shape[0]) ** (1.0 / order))
