import numpy as np
import pytest

from fairwhiten import matops
from fairwhiten.errors import (
    DimensionMismatch,
    Diverged,
    NonConvergence,
    NotPositiveDefinite,
    ValidationError,
)
from fairwhiten.matops import Method

from conftest import random_spd


def sym_eig_3x3_oracle(a: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of a symmetric 3x3 via the characteristic
    cubic (trigonometric solution), independent of the Jacobi path."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(a))[::-1]
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.array([e1, 3.0 * q - e1 - e3, e3])


class TestSymEig:
    def test_identity(self):
        w, v = matops.sym_eig(np.eye(3))
        assert np.array_equal(w, np.ones(3))
        assert np.linalg.norm(v.T @ v - np.eye(3)) <= 1e-10

    def test_diagonal_is_axis_permutation(self):
        w, v = matops.sym_eig(np.diag([9.0, 4.0, 1.0]))
        assert np.array_equal(w, np.array([9.0, 4.0, 1.0]))
        assert np.array_equal(v, np.eye(3))
        # unsorted diagonal comes back descending with permuted axes
        w, v = matops.sym_eig(np.diag([1.0, 9.0, 4.0]))
        assert np.array_equal(w, np.array([9.0, 4.0, 1.0]))
        assert np.array_equal(np.abs(v), np.eye(3)[:, [1, 2, 0]])

    def test_cubic_oracle_3x3(self, rng):
        for _ in range(20):
            a = random_spd(3, float(rng.uniform(2.0, 50.0)), rng)
            w, _ = matops.sym_eig(a)
            expected = sym_eig_3x3_oracle(a)
            assert np.abs(w - expected).max() <= 1e-9 * max(1.0, np.abs(expected).max())

    def test_reconstruction_8x8(self, rng):
        a = random_spd(8, 30.0, rng)
        w, v = matops.sym_eig(a)
        assert np.linalg.norm(a - (v * w) @ v.T) <= 1e-9 * np.linalg.norm(a)
        assert np.linalg.norm(v.T @ v - np.eye(8)) <= 1e-10

    def test_matches_lapack_eigenvalues(self, rng):
        for n in (2, 5, 17, 40):
            a = random_spd(n, 200.0, rng)
            w, _ = matops.sym_eig(a)
            expected = np.sort(np.linalg.eigvalsh(a))[::-1]
            assert np.abs(w - expected).max() <= 1e-9 * np.abs(expected).max()

    def test_eigenvalues_sorted_descending(self, rng):
        w, _ = matops.sym_eig(random_spd(12, 80.0, rng))
        assert np.all(np.diff(w) <= 0.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            matops.sym_eig(np.array([[1.0, 2.0], [0.5, 1.0]]))

    def test_rejects_nonsquare_and_nonfinite(self):
        with pytest.raises(DimensionMismatch):
            matops.sym_eig(np.ones((2, 3)))
        with pytest.raises(ValidationError):
            matops.sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_sweep_budget_exhaustion(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        with pytest.raises(NonConvergence) as excinfo:
            matops.sym_eig(a, max_sweeps=0)
        assert excinfo.value.sweeps == 0

    def test_deterministic(self, rng):
        a = random_spd(9, 25.0, rng)
        w1, v1 = matops.sym_eig(a)
        w2, v2 = matops.sym_eig(a)
        assert np.array_equal(w1, w2) and np.array_equal(v1, v2)


class TestInvSqrtZca:
    def test_identity(self):
        res = matops.inv_sqrt_zca(np.eye(4), eps=0.0)
        assert np.abs(res.matrix - np.eye(4)).max() <= 1e-12
        assert res.method is Method.ZCA
        assert res.iterations_used == 0
        assert res.residual <= 1e-12

    def test_analytic_diagonal(self):
        res = matops.inv_sqrt_zca(np.diag([4.0, 9.0]), eps=0.0)
        assert np.abs(res.matrix - np.diag([0.5, 1.0 / 3.0])).max() <= 1e-12

    def test_hand_2x2(self):
        # eigenpairs (3, 1) with vectors (1,1)/sqrt2 and (1,-1)/sqrt2
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        lo = 1.0 / np.sqrt(3.0)
        expected = np.array([[(lo + 1) / 2, (lo - 1) / 2], [(lo - 1) / 2, (lo + 1) / 2]])
        res = matops.inv_sqrt_zca(a, eps=0.0)
        assert np.abs(res.matrix - expected).max() <= 1e-10
        assert matops.frobenius_residual(res.matrix, a) <= 1e-10

    def test_symmetric_output(self, rng):
        res = matops.inv_sqrt_zca(random_spd(7, 90.0, rng))
        assert np.abs(res.matrix - res.matrix.T).max() <= 1e-10

    def test_not_positive_definite_reports_eigenvalue(self):
        with pytest.raises(NotPositiveDefinite) as excinfo:
            matops.inv_sqrt_zca(np.diag([1.0, -2.0]), eps=0.0)
        assert "-2" in str(excinfo.value)
        # shrinkage rescues it
        res = matops.inv_sqrt_zca(np.diag([1.0, -2.0]), eps=3.0)
        assert np.isfinite(res.matrix).all()


class TestInvSqrtCholesky:
    def test_identity(self):
        res = matops.inv_sqrt_cholesky(np.eye(3), eps=0.0)
        assert np.abs(res.matrix - np.eye(3)).max() <= 1e-12
        assert res.iterations_used == 0

    def test_analytic_diagonal(self):
        res = matops.inv_sqrt_cholesky(np.diag([4.0, 25.0]), eps=0.0)
        assert np.abs(res.matrix - np.diag([0.5, 0.2])).max() <= 1e-12

    def test_hand_2x2(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        lower = matops.cholesky_lower(a)
        assert np.abs(lower - np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])).max() <= 1e-12
        res = matops.inv_sqrt_cholesky(a, eps=0.0)
        expected = np.array([[0.5, 0.0], [-1.0 / (2.0 * np.sqrt(2.0)), 1.0 / np.sqrt(2.0)]])
        assert np.abs(res.matrix - expected).max() <= 1e-12
        assert matops.frobenius_residual(res.matrix, a) <= 1e-10

    def test_output_is_lower_triangular_not_symmetric(self, rng):
        res = matops.inv_sqrt_cholesky(random_spd(6, 50.0, rng))
        assert np.array_equal(res.matrix, np.tril(res.matrix))

    def test_bad_pivot_reported(self):
        with pytest.raises(NotPositiveDefinite) as excinfo:
            matops.inv_sqrt_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), eps=0.0)
        assert "pivot 1" in str(excinfo.value)


class TestInvSqrtNewtonSchulz:
    def test_identity_matches_scalar_recursion(self):
        # Trace normalization maps I(4) to I/4, so T=5 lands near but not at
        # the fixed point; the scalar recursion is the exact oracle.
        y, z = 0.25, 1.0
        for _ in range(5):
            t = (3.0 - z * y) / 2.0
            y, z = y * t, t * z
        res = matops.inv_sqrt_newton_schulz(np.eye(4), iterations=5, eps=0.0)
        assert np.abs(res.matrix - (z / 2.0) * np.eye(4)).max() <= 1e-14
        assert np.abs(res.matrix - np.eye(4)).max() <= 5e-6
        assert res.iterations_used == 5

    def test_identity_converged(self):
        res = matops.inv_sqrt_newton_schulz(np.eye(4), iterations=20, eps=0.0)
        assert np.abs(res.matrix - np.eye(4)).max() <= 1e-12

    def test_analytic_diagonal_limit(self):
        res = matops.inv_sqrt_newton_schulz(np.diag([4.0, 9.0]), iterations=20, eps=0.0)
        assert np.abs(res.matrix - np.diag([0.5, 1.0 / 3.0])).max() <= 1e-10

    def test_agrees_with_zca(self, rng):
        a = random_spd(16, 100.0, rng)
        ns = matops.inv_sqrt_newton_schulz(a, iterations=20)
        zca = matops.inv_sqrt_zca(a)
        rel = np.linalg.norm(ns.matrix - zca.matrix) / np.linalg.norm(zca.matrix)
        assert rel <= 1e-6

    def test_symmetrized_output(self, rng):
        res = matops.inv_sqrt_newton_schulz(random_spd(9, 40.0, rng), iterations=7)
        assert np.array_equal(res.matrix, res.matrix.T)

    def test_nonpositive_diagonal_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            matops.inv_sqrt_newton_schulz(np.diag([1.0, -0.5]), iterations=5, eps=0.0)

    def test_indefinite_input_diverges(self):
        # positive diagonal and trace, but an eigenvalue is negative
        with pytest.raises(Diverged):
            matops.inv_sqrt_newton_schulz(np.array([[1.0, 2.0], [2.0, 1.0]]), iterations=30, eps=0.0)

    def test_iterations_validated(self):
        with pytest.raises(ValidationError):
            matops.inv_sqrt_newton_schulz(np.eye(2), iterations=0)


class TestFrobeniusResidual:
    def test_trivial_cases(self):
        assert matops.frobenius_residual(np.eye(2), np.eye(2)) == 0.0
        assert matops.frobenius_residual(np.array([[0.5]]), np.array([[4.0]])) == 0.0

    def test_direct_arithmetic(self):
        val = matops.frobenius_residual(np.eye(2), np.diag([4.0, 9.0]))
        assert abs(val - np.sqrt(73.0)) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            matops.frobenius_residual(np.eye(3), np.eye(2))


class TestSolverInvariants:
    def test_whitening_identity_all_solvers(self, rng):
        solvers = [
            lambda a: matops.inv_sqrt_zca(a, eps=0.0),
            lambda a: matops.inv_sqrt_cholesky(a, eps=0.0),
            lambda a: matops.inv_sqrt_newton_schulz(a, iterations=20, eps=0.0),
        ]
        for cond in (2.0, 100.0, 1e4):
            a = random_spd(10, cond, rng)
            for solve in solvers:
                res = solve(a)
                assert res.residual <= 1e-6
                assert abs(res.residual - matops.frobenius_residual(res.matrix, a)) <= 1e-12

    def test_scale_covariance(self, rng):
        a = random_spd(6, 30.0, rng)
        for solve in (
            lambda m: matops.inv_sqrt_zca(m, eps=0.0),
            lambda m: matops.inv_sqrt_newton_schulz(m, iterations=25, eps=0.0),
        ):
            for c in (0.5, 4.0, 37.0):
                scaled = solve(c * a).matrix
                assert np.abs(scaled - solve(a).matrix / np.sqrt(c)).max() <= 1e-8

    def test_newton_schulz_monotone_residual(self, rng):
        # Residual decreases with T until it hits the float64 floor, where
        # ulp-level jitter is allowed.
        floor = 1e-12
        for _ in range(3):
            a = random_spd(12, 100.0, rng)
            residuals = [
                matops.inv_sqrt_newton_schulz(a, iterations=t).residual for t in range(1, 17)
            ]
            for t in range(len(residuals) - 1):
                assert (
                    residuals[t + 1] <= residuals[t]
                    or (residuals[t] <= floor and residuals[t + 1] <= floor)
                )

    def test_dispatch_and_aliases(self):
        a = np.diag([2.0, 5.0])
        for name, method in (
            ("zca", Method.ZCA),
            ("cd", Method.CHOLESKY),
            ("cns", Method.NEWTON_SCHULZ),
            ("newton_schulz", Method.NEWTON_SCHULZ),
        ):
            assert matops.inv_sqrt(a, name, iterations=20).method is method
        with pytest.raises(ValidationError):
            matops.parse_method("qr")
