"""Gauss-Legendre-Jacobi quadrature collapsed onto reference simplices.

One-dimensional rules are computed by Golub-Welsch on the Jacobi recurrence
(symmetric tridiagonal eigenproblem) for the weight (1-x)^alpha on [0, 1].
Simplex rules are Duffy-collapsed tensor products with the collapse Jacobian
absorbed into the Jacobi weights, so an m-point-per-direction rule is exact
for total degree 2m - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import ReferenceCell


class NonConvergence(RuntimeError):
    """Eigen-solve for the quadrature nodes failed to converge."""


@dataclass(eq=False)
class QuadratureRule:
    cell: ReferenceCell
    points: np.ndarray  # (N, dim)
    weights: np.ndarray  # (N,)
    degree: int  # exactness: integrates total degree <= degree
    points_per_direction: int

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def gauss_jacobi_1d(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss rule on [0, 1] for the weight (1 - x)^alpha.

    Exact for polynomials of degree <= 2n - 1 against the weight.
    """
    if n < 1:
        raise ValueError("need at least one point")
    if alpha not in (0, 1, 2):
        raise ValueError("alpha must be 0, 1 or 2")
    # Monic Jacobi (alpha, 0) recurrence on [-1, 1].
    k = np.arange(n, dtype=float)
    diag = np.empty(n)
    diag[0] = -alpha / (alpha + 2.0)
    if n > 1:
        kk = k[1:]
        diag[1:] = -(alpha * alpha) / ((2 * kk + alpha) * (2 * kk + alpha + 2))
    if n > 1:
        kk = k[1:]
        b = (4 * kk * kk * (kk + alpha) ** 2) / (
            (2 * kk + alpha) ** 2 * (2 * kk + alpha + 1) * (2 * kk + alpha - 1)
        )
        off = np.sqrt(b)
    else:
        off = np.zeros(0)
    J = np.diag(diag)
    if n > 1:
        J += np.diag(off, 1) + np.diag(off, -1)
    try:
        vals, vecs = np.linalg.eigh(J)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK converges here
        raise NonConvergence(f"eigen-solve failed for n={n}, alpha={alpha}") from exc
    mu0 = 2.0 ** (alpha + 1) / (alpha + 1)  # total weight mass on [-1, 1]
    w = mu0 * vecs[0, :] ** 2
    x = 0.5 * (vals + 1.0)
    return x, w / 2.0 ** (alpha + 1)


def simplex_rule_by_points(cell: ReferenceCell, m: int) -> QuadratureRule:
    """Collapsed product rule with m points per direction (m^dim total)."""
    if m < 1:
        raise ValueError("need at least one point per direction")
    d = cell.dim
    if d == 2:
        x1, w1 = gauss_jacobi_1d(m, 1)
        x2, w2 = gauss_jacobi_1d(m, 0)
        pts = np.empty((m * m, 2))
        wts = np.empty(m * m)
        idx = 0
        for i in range(m):
            for j in range(m):
                pts[idx, 0] = x1[i]
                pts[idx, 1] = x2[j] * (1.0 - x1[i])
                wts[idx] = w1[i] * w2[j]
                idx += 1
    else:
        x1, w1 = gauss_jacobi_1d(m, 2)
        x2, w2 = gauss_jacobi_1d(m, 1)
        x3, w3 = gauss_jacobi_1d(m, 0)
        pts = np.empty((m * m * m, 3))
        wts = np.empty(m * m * m)
        idx = 0
        for i in range(m):
            for j in range(m):
                for k in range(m):
                    pts[idx, 0] = x1[i]
                    pts[idx, 1] = x2[j] * (1.0 - x1[i])
                    pts[idx, 2] = x3[k] * (1.0 - x1[i]) * (1.0 - x2[j])
                    wts[idx] = w1[i] * w2[j] * w3[k]
                    idx += 1
    return QuadratureRule(cell, pts, wts, 2 * m - 1, m)


def simplex_rule(cell: ReferenceCell, degree: int) -> QuadratureRule:
    """Rule exact for all polynomials of total degree <= degree."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    m = degree // 2 + 1
    return simplex_rule_by_points(cell, m)


def rule_for_form(
    cell: ReferenceCell, estimated_degree: int, points_override: int | None = None
) -> QuadratureRule:
    """Rule at the estimated form degree, unless an explicit m is requested."""
    if points_override is not None:
        return simplex_rule_by_points(cell, points_override)
    return simplex_rule(cell, estimated_degree)
