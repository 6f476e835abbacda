"""Dense symmetric-matrix kernels: Jacobi eigendecomposition, Cholesky
factorization, and three interchangeable inverse-square-root solvers.

Everything here operates on small dense float64 matrices (dimensions up to
a few hundred) and is pure: inputs are never modified and identical inputs
produce bitwise-identical outputs. Each solver reports the residual
``||M A M^T - I||_F`` it actually achieved, measured against the
*unregularized* input, so shrinkage and truncation error stay visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    Diverged,
    NonConvergence,
    NotPositiveDefinite,
    ValidationError,
)

# Elementwise symmetry tolerance: |A[i,j] - A[j,i]| <= RTOL * max(1, |A[i,j]|).
SYMMETRY_RTOL = 1e-12

# Off-diagonal norm target and sweep budget for the Jacobi eigensolver.
JACOBI_TOL_FACTOR = 1e-12
JACOBI_MAX_SWEEPS = 100

# Frobenius-norm guard for the Newton-Schulz iterates.
NEWTON_SCHULZ_DIVERGENCE_LIMIT = 1e6


class Method(str, Enum):
    """Inverse-square-root solver selector."""

    ZCA = "zca"
    CHOLESKY = "cholesky"
    NEWTON_SCHULZ = "newton_schulz"


_METHOD_ALIASES = {
    "zca": Method.ZCA,
    "cholesky": Method.CHOLESKY,
    "cd": Method.CHOLESKY,
    "newton_schulz": Method.NEWTON_SCHULZ,
    "newton-schulz": Method.NEWTON_SCHULZ,
    "cns": Method.NEWTON_SCHULZ,
    "ns": Method.NEWTON_SCHULZ,
}


def parse_method(name: str | Method) -> Method:
    """Resolve a solver name (accepts the short aliases cd/cns/ns)."""
    if isinstance(name, Method):
        return name
    key = str(name).strip().lower()
    if key not in _METHOD_ALIASES:
        raise ValidationError(
            f"unknown solver {name!r}; expected one of "
            f"{sorted(set(_METHOD_ALIASES))}"
        )
    return _METHOD_ALIASES[key]


@dataclass(frozen=True)
class InvSqrtResult:
    """An inverse square root together with how it was obtained.

    ``matrix`` satisfies matrix @ A @ matrix.T ~= I. For ZCA and
    Newton-Schulz it is symmetric; for Cholesky it is lower triangular and
    generally not symmetric. ``residual`` is always computed on the returned
    matrix, never assumed.
    """

    matrix: np.ndarray
    method: Method
    iterations_used: int
    residual: float


def as_sym_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a float64 copy of a dense symmetric matrix."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise DimensionMismatch(f"{name} must be square and non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    asym = np.abs(arr - arr.T)
    bound = SYMMETRY_RTOL * np.maximum(1.0, np.abs(arr))
    if np.any(asym > bound):
        worst = float(asym.max())
        raise ValidationError(f"{name} is not symmetric (max |A - A^T| entry {worst:.3e})")
    return arr.copy()


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or eps < 0.0:
        raise ValidationError(f"eps must be a finite nonnegative real, got {eps!r}")
    return eps


def _off_diagonal_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def _tournament_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Round-robin schedule: each round pairs all indices disjointly, and one
    # full cycle of rounds visits every (p, q) pair exactly once.
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a != -1 and b != -1:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[m - 1]] + players[1 : m - 1]
    return rounds


def sym_eig(a, max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with eigenvalues ``w`` sorted descending and the
    columns of the orthogonal matrix ``V`` paired with them, so that
    ``a == V @ diag(w) @ V.T`` up to rounding. One sweep visits every pivot
    pair once, in round-robin rounds whose pairs are disjoint: rotations in
    a round act on disjoint planes, so applying them as one block is exactly
    the sequential cyclic iteration. Sweeps stop once the off-diagonal
    Frobenius norm falls below ``1e-12 * ||a||_F``.

    Raises:
        NonConvergence: the sweep budget was exhausted before reaching
            tolerance (reports sweeps attempted).
    """
    work = as_sym_matrix(a)
    n = work.shape[0]
    vecs = np.eye(n)
    if n == 1:
        return np.diag(work).copy(), vecs
    tol = JACOBI_TOL_FACTOR * float(np.linalg.norm(work))
    # Pivots this small cannot keep the off-diagonal norm above tol even if
    # every off-diagonal entry shared their magnitude, so rotating on them
    # is wasted work; the outer loop still re-checks the true norm.
    skip = tol / np.sqrt(n * (n - 1))
    rounds = _tournament_rounds(n)

    sweeps = 0
    while _off_diagonal_norm(work) > tol:
        if sweeps >= max_sweeps:
            raise NonConvergence(sweeps, _off_diagonal_norm(work), tol)
        for p_all, q_all in rounds:
            apq = work[p_all, q_all]
            keep = np.abs(apq) > skip
            if not keep.any():
                continue
            p, q, apq = p_all[keep], q_all[keep], apq[keep]
            # Rotation angle choice that zeroes each (p, q) entry and keeps
            # |t| <= 1 for numerical stability.
            tau = (work[q, q] - work[p, p]) / (2.0 * apq)
            root = np.sqrt(1.0 + tau * tau)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + root)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            col_p = work[:, p]
            col_q = work[:, q]
            work[:, p] = c * col_p - s * col_q
            work[:, q] = s * col_p + c * col_q
            row_p = work[p, :]
            row_q = work[q, :]
            work[p, :] = c[:, None] * row_p - s[:, None] * row_q
            work[q, :] = s[:, None] * row_p + c[:, None] * row_q
            work[p, q] = 0.0
            work[q, p] = 0.0
            vec_p = vecs[:, p]
            vec_q = vecs[:, q]
            vecs[:, p] = c * vec_p - s * vec_q
            vecs[:, q] = s * vec_p + c * vec_q
        sweeps += 1

    w = np.diag(work).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], vecs[:, order]


def frobenius_residual(m, a) -> float:
    """``||M A M^T - I||_F`` for a candidate inverse square root ``M`` of ``A``."""
    mat = np.asarray(m, dtype=np.float64)
    sym = as_sym_matrix(a, name="a")
    if mat.ndim != 2 or mat.shape[1] != sym.shape[0]:
        raise DimensionMismatch(
            f"m has shape {mat.shape}, not conformable with a of shape {sym.shape}"
        )
    k = mat.shape[0]
    return float(np.linalg.norm(mat @ sym @ mat.T - np.eye(k)))


def cholesky_lower(a) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix.

    Raises:
        NotPositiveDefinite: a pivot during factorization is <= 0
            (reports its index and value).
    """
    work = as_sym_matrix(a)
    n = work.shape[0]
    lower = np.zeros_like(work)
    for j in range(n):
        d = work[j, j] - lower[j, :j] @ lower[j, :j]
        if not np.isfinite(d) or d <= 0.0:
            raise NotPositiveDefinite(
                f"Cholesky pivot {j} is {d:.6g} (must be positive)"
            )
        lower[j, j] = np.sqrt(d)
        if j + 1 < n:
            lower[j + 1 :, j] = (work[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def _solve_lower_identity(lower: np.ndarray) -> np.ndarray:
    # Forward substitution L X = I; keeps the result exactly lower triangular.
    n = lower.shape[0]
    out = np.zeros_like(lower)
    eye = np.eye(n)
    for i in range(n):
        out[i, :] = (eye[i, :] - lower[i, :i] @ out[:i, :]) / lower[i, i]
    return out


def inv_sqrt_zca(a, eps: float = 0.0) -> InvSqrtResult:
    """Symmetric (principal) inverse square root via eigendecomposition.

    Computes ``V diag((w + eps)^(-1/2)) V^T`` from the Jacobi eigenpairs of
    ``a``. The result is the unique symmetric inverse square root of
    ``a + eps*I``.

    Raises:
        NotPositiveDefinite: some eigenvalue of ``a + eps*I`` is <= 0
            (reports the offending eigenvalue).
    """
    sym = as_sym_matrix(a)
    eps = _check_eps(eps)
    w, vecs = sym_eig(sym)
    shifted = w + eps
    if np.any(shifted <= 0.0):
        raise NotPositiveDefinite(
            f"eigenvalue {float(shifted.min()):.6g} of a + eps*I is not positive"
        )
    mat = (vecs * shifted**-0.5) @ vecs.T
    mat = 0.5 * (mat + mat.T)
    return InvSqrtResult(
        matrix=mat,
        method=Method.ZCA,
        iterations_used=0,
        residual=frobenius_residual(mat, sym),
    )


def inv_sqrt_cholesky(a, eps: float = 0.0) -> InvSqrtResult:
    """Inverse square root ``L^(-1)`` from ``a + eps*I = L L^T``.

    The result is lower triangular, not symmetric; it still satisfies
    ``L^(-1) a L^(-T) = I`` exactly when ``eps = 0``.
    """
    sym = as_sym_matrix(a)
    eps = _check_eps(eps)
    lower = cholesky_lower(sym + eps * np.eye(sym.shape[0]))
    mat = _solve_lower_identity(lower)
    return InvSqrtResult(
        matrix=mat,
        method=Method.CHOLESKY,
        iterations_used=0,
        residual=frobenius_residual(mat, sym),
    )


def inv_sqrt_newton_schulz(a, iterations: int = 5, eps: float = 0.0) -> InvSqrtResult:
    """Coupled Newton-Schulz iteration for the principal inverse square root.

    The input (plus ``eps*I``) is divided by its trace, which bounds the
    spectrum of the normalized matrix in (0, 1] and therefore guarantees the
    iteration's convergence condition for any SPD input. With
    ``A' = B / tr(B)`` the coupled recurrence is::

        Y_0 = A',  Z_0 = I
        Y_{k+1} = Y_k (3I - Z_k Y_k) / 2
        Z_{k+1} = (3I - Z_k Y_k) Z_k / 2

    and ``Z_T / sqrt(tr(B))`` approaches ``B^(-1/2)``. The result is
    symmetrized as ``(M + M^T)/2`` to remove floating-point drift.

    Raises:
        NotPositiveDefinite: trace or a diagonal entry of ``a + eps*I``
            is <= 0 (cheap positivity proxies; the iteration itself guards
            the rest via the divergence check).
        Diverged: ``||Y_k||_F`` exceeded 1e6, signalling a violated
            positive-definiteness precondition.
    """
    sym = as_sym_matrix(a)
    eps = _check_eps(eps)
    iterations = int(iterations)
    if iterations < 1:
        raise ValidationError(f"iterations must be a positive integer, got {iterations}")
    n = sym.shape[0]
    shifted = sym + eps * np.eye(n)
    trace = float(np.trace(shifted))
    diag_min = float(np.diag(shifted).min())
    if trace <= 0.0 or diag_min <= 0.0:
        raise NotPositiveDefinite(
            f"trace ({trace:.6g}) or smallest diagonal entry ({diag_min:.6g}) "
            "of a + eps*I is not positive"
        )
    y = shifted / trace
    z = np.eye(n)
    three_eye = 3.0 * np.eye(n)
    for k in range(iterations):
        half_t = 0.5 * (three_eye - z @ y)
        y = y @ half_t
        z = half_t @ z
        y_norm = float(np.linalg.norm(y))
        if not np.isfinite(y_norm) or y_norm > NEWTON_SCHULZ_DIVERGENCE_LIMIT:
            raise Diverged(
                f"||Y||_F = {y_norm:.3e} exceeded {NEWTON_SCHULZ_DIVERGENCE_LIMIT:.0e} "
                f"at iteration {k + 1}; input is likely not positive definite"
            )
    mat = z / np.sqrt(trace)
    mat = 0.5 * (mat + mat.T)
    return InvSqrtResult(
        matrix=mat,
        method=Method.NEWTON_SCHULZ,
        iterations_used=iterations,
        residual=frobenius_residual(mat, sym),
    )


def inv_sqrt(a, method: Method | str, iterations: int = 5, eps: float = 0.0) -> InvSqrtResult:
    """Dispatch to one of the three inverse-square-root solvers."""
    method = parse_method(method)
    if method is Method.ZCA:
        return inv_sqrt_zca(a, eps)
    if method is Method.CHOLESKY:
        return inv_sqrt_cholesky(a, eps)
    return inv_sqrt_newton_schulz(a, iterations=iterations, eps=eps)
