"""
Unit tests for linalg/utils.py
"""

import numpy as np
import pytest
from scipy import sparse

from linalg.utils import BreakdownError, ConvergenceError, assemble_csr, cg_solve


def poisson_1d(n):
    return sparse.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format='csr')


def neumann_1d(n):
    A = poisson_1d(n).tolil()
    A[0, 0] = A[n - 1, n - 1] = 1.0
    return A.tocsr()


class TestAssembleCsr:

    def test_duplicates_summed(self):
        """Test repeated triplets are summed and indices sorted"""
        A = assemble_csr([0, 0, 1, 0], [1, 0, 1, 1], [1.0, 2.0, 3.0, 4.0], (2, 2))
        np.testing.assert_array_equal(A.toarray(), [[2.0, 5.0], [0.0, 3.0]])
        assert A.has_sorted_indices
        assert A.nnz == 3


class TestCgSolve:

    def test_identity(self):
        """Test A = I returns b after one iteration"""
        b = np.array([1.0, -2.0, 3.0])
        seen = []
        x = cg_solve(sparse.identity(3, format='csr'), b, callback=lambda it, norms, x: seen.append(it))
        np.testing.assert_allclose(x, b)
        assert seen == [1]

    def test_poisson_matches_dense(self):
        """Test the 5-point 1D Poisson solve against a dense solve"""
        A = poisson_1d(5)
        b = np.ones(5)
        x = cg_solve(A, b, precond=A.diagonal(), rel_tol=1e-12)
        np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-10)

    def test_random_spd(self):
        """Test random SPD systems up to size 50 against a dense oracle"""
        rng = np.random.default_rng(4)
        for n in (5, 20, 50):
            Q = rng.standard_normal((n, n))
            A = sparse.csr_matrix(Q @ Q.T + n * np.eye(n))
            b = rng.standard_normal(n)
            x = cg_solve(A, b, precond=A.diagonal(), rel_tol=1e-13)
            np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-9)

    def test_singular_neumann(self):
        """Test a pure Neumann Laplacian with mean-zero data gives the mean-zero pseudo-inverse solution"""
        A = neumann_1d(6)
        rng = np.random.default_rng(1)
        b = rng.standard_normal(6)
        b -= b.mean()
        x = cg_solve(A, b, rel_tol=1e-12, project_mean=True)
        assert abs(x.mean()) <= 1e-12
        np.testing.assert_allclose(x, np.linalg.pinv(A.toarray()) @ b, atol=1e-9)
        assert np.linalg.norm(A @ x - b) <= 1e-9

    def test_energy_error_monotone(self):
        """Test the A-norm of the error does not grow between iterations"""
        A = poisson_1d(30)
        b = np.sin(np.arange(30.0))
        exact = np.linalg.solve(A.toarray(), b)
        energies = []

        def record(iteration, norms, x):
            e = x - exact
            energies.append(float(e @ (A @ e)))

        cg_solve(A, b, precond=A.diagonal(), rel_tol=1e-12, callback=record)
        assert len(energies) > 1
        assert all(later <= earlier * (1.0 + 1e-12) + 1e-28 for earlier, later in zip(energies, energies[1:]))

    def test_several_columns(self):
        """Test every column of a block right-hand side is solved"""
        A = poisson_1d(8)
        B = np.column_stack([np.ones(8), np.arange(8.0), np.zeros(8)])
        X = cg_solve(A, B, precond=A.diagonal(), rel_tol=1e-12)
        assert X.shape == (8, 3)
        np.testing.assert_allclose(X, np.linalg.solve(A.toarray(), B), atol=1e-9)

    def test_deterministic(self):
        """Test repeated solves are bitwise identical"""
        A = poisson_1d(12)
        b = np.linspace(-1.0, 1.0, 12)
        np.testing.assert_array_equal(cg_solve(A, b, rel_tol=1e-10), cg_solve(A, b, rel_tol=1e-10))

    def test_non_convergence(self):
        """Test max_iter exhaustion reports iterations and the final residual"""
        with pytest.raises(ConvergenceError) as info:
            cg_solve(poisson_1d(20), np.ones(20), rel_tol=1e-14, max_iter=1)
        assert info.value.iterations == 1
        assert info.value.residual > 0.0

    def test_breakdown(self):
        """Test an indefinite matrix is reported"""
        A = sparse.diags([1.0, -1.0], format='csr')
        with pytest.raises(BreakdownError):
            cg_solve(A, np.array([1.0, 1.0]))

    def test_default_tolerance_from_settings(self, settings):
        """Test the default tolerance comes from the settings"""
        settings.SOLVER_MASS_RTOL = 1.0
        seen = []
        x = cg_solve(poisson_1d(10), np.ones(10), callback=lambda it, norms, x: seen.append(it))
        assert seen == []
        np.testing.assert_array_equal(x, np.zeros(10))

    def test_default_iteration_cap_from_settings(self, settings):
        """Test the iteration cap comes from the settings"""
        settings.SOLVER_CG_MAX_ITER = 2
        with pytest.raises(ConvergenceError) as info:
            cg_solve(poisson_1d(20), np.ones(20), rel_tol=1e-12)
        assert info.value.iterations == 2
