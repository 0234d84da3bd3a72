"""
Unit tests for physics/utils.py
"""

import math

import numpy as np
import pytest

from mesh.utils import PatchTable, interval_mesh
from physics.utils import (
    IdealMHD,
    InvalidStateError,
    LinearAdvection,
    conserved_from_primitive,
    fast_speed,
    flux,
    flux_divergence,
    lambda_max_node,
    max_wave_speed,
    pressure,
    primitive_from_conserved,
    validate_states,
    wave_speeds,
)


def state(rho, u, p, B, gamma):
    return conserved_from_primitive(np.asarray(rho), np.asarray(u), np.asarray(p), np.asarray(B), gamma)


@pytest.fixture
def random_states():
    rng = np.random.default_rng(11)
    n = 1000
    return state(
        rng.uniform(0.1, 5.0, n), rng.uniform(-2.0, 2.0, (n, 2)), rng.uniform(0.05, 5.0, n),
        rng.uniform(-3.0, 3.0, (n, 2)), 5.0 / 3.0,
    )


# ============================================================================
# TEST: equation of state
# ============================================================================

class TestPressure:

    def test_static_gas(self):
        """Test p = (gamma - 1) E without motion or field"""
        U = np.array([1.0, 0.0, 0.0, 2.5, 0.0, 0.0])
        assert pressure(U, 1.4) == pytest.approx(1.0)

    def test_brio_wu_left_state(self):
        """Test E = 1.78125 for the Brio-Wu left state and back to p = 1"""
        U = state(1.0, [0.0, 0.0], 1.0, [0.75, 1.0], 2.0)
        assert U[3] == pytest.approx(1.78125)
        assert pressure(U, 2.0) == pytest.approx(1.0)

    def test_field_sign(self):
        """Test flipping B leaves the pressure unchanged"""
        U = state(1.3, [0.2, -0.4], 0.7, [0.5, -1.2], 5.0 / 3.0)
        flipped = U.copy()
        flipped[4:] *= -1.0
        assert pressure(flipped, 5.0 / 3.0) == pytest.approx(pressure(U, 5.0 / 3.0), rel=1e-15)

    def test_round_trip(self, random_states):
        """Test primitive -> conserved -> primitive is the identity"""
        rho, u, p, B = primitive_from_conserved(random_states, 5.0 / 3.0)
        again = conserved_from_primitive(rho, u, p, B, 5.0 / 3.0)
        np.testing.assert_allclose(again, random_states, rtol=1e-13, atol=1e-13)

    def test_vacuum(self):
        """Test a zero density is rejected"""
        with pytest.raises(InvalidStateError):
            pressure(np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]]), 1.4)


class TestValidation:

    def test_reports_first_bad_node(self):
        """Test the offending node index is carried by the error"""
        U = np.tile(state(1.0, [0.0, 0.0], 1.0, [0.0, 0.0], 1.4), (4, 1))
        U[2, 3] = -1.0
        with pytest.raises(InvalidStateError) as info:
            validate_states(U, 'node')
        assert info.value.index == 2
        assert 'node 2' in str(info.value)

    def test_reports_cell(self):
        """Test quadrature-point arrays report the cell"""
        U = np.tile(state(1.0, [0.0, 0.0], 1.0, [0.0, 0.0], 1.4), (3, 2, 1))
        U[1, 1, 0] = -0.5
        with pytest.raises(InvalidStateError) as info:
            validate_states(U, 'cell')
        assert info.value.index == 1

    def test_valid_states_pass(self, random_states):
        """Test valid states raise nothing"""
        validate_states(random_states)


# ============================================================================
# TEST: flux
# ============================================================================

class TestFlux:

    def test_static_gas(self):
        """Test only the pressure term survives without motion or field"""
        F = flux(state(1.0, [0.0, 0.0], 0.8, [0.0, 0.0], 1.4), 1.4)
        np.testing.assert_allclose(F[0], 0.0)
        np.testing.assert_allclose(F[1:3], 0.8 * np.eye(2))
        np.testing.assert_allclose(F[3], 0.0)
        np.testing.assert_allclose(F[4:], 0.0)

    def test_maxwell_stress(self):
        """Test u = 0, B = (1, 0) gives diag(p - 1/2, p + 1/2) and no induction flux"""
        p = 0.6
        F = flux(state(1.0, [0.0, 0.0], p, [1.0, 0.0], 2.0), 2.0)
        np.testing.assert_allclose(F[1:3], np.diag([p - 0.5, p + 0.5]), atol=1e-15)
        np.testing.assert_allclose(F[4:], 0.0)

    def test_induction_antisymmetry(self):
        """Test swapping u and B negates the induction block"""
        a, b = np.array([0.3, -1.1]), np.array([0.7, 0.4])
        F = flux(state(1.0, a, 1.0, b, 1.4), 1.4)
        G = flux(state(1.0, b, 1.0, a, 1.4), 1.4)
        np.testing.assert_allclose(G[4:], -F[4:], atol=1e-15)

    def test_chain_rule_divergence(self):
        """Test the chain-rule divergence against central differences of the flux"""
        gamma = 5.0 / 3.0
        base = state(1.2, [0.3, -0.2], 0.9, [0.4, 0.7], gamma)
        grad = np.random.default_rng(5).uniform(-0.1, 0.1, (6, 2))

        def U_at(x):
            return base + grad @ x

        h = 1e-6
        expected = sum(
            (flux(U_at(h * e), gamma)[:, a] - flux(U_at(-h * e), gamma)[:, a]) / (2.0 * h)
            for a, e in enumerate(np.eye(2))
        )
        np.testing.assert_allclose(flux_divergence(base, grad, gamma), expected, atol=1e-7)

    def test_model_wraps_functions(self):
        """Test IdealMHD forwards to the module functions"""
        U = state(1.0, [0.1, 0.2], 1.0, [0.3, 0.4], 1.4)
        model = IdealMHD(1.4)
        assert model.n_components(2) == 6
        np.testing.assert_array_equal(model.flux(U), flux(U, 1.4))
        assert model.max_speed(U) == max_wave_speed(U, 1.4)


# ============================================================================
# TEST: wave speeds
# ============================================================================

class TestWaveSpeeds:

    def test_sound_speed(self):
        """Test B = 0 reduces c_f to the sound speed"""
        U = state(1.0, [0.0, 0.0], 1.0, [0.0, 0.0], 1.4)
        assert fast_speed(U, 1.4, [1.0, 0.0]) == pytest.approx(1.18322, abs=1e-5)

    def test_perpendicular_field(self):
        """Test B perpendicular to e gives c_f = sqrt(a^2 + |B|^2/rho) = sqrt(3)"""
        U = state(1.0, [0.0, 0.0], 1.0, [0.0, 1.0], 2.0)
        assert fast_speed(U, 2.0, [1.0, 0.0]) == pytest.approx(math.sqrt(3.0))

    def test_entropy_eigenvalues(self, random_states):
        """Test lambda_4 = lambda_5 = u.e"""
        e = np.array([0.6, 0.8])
        speeds = wave_speeds(random_states, 5.0 / 3.0, e)
        un = (random_states[:, 1:3] / random_states[:, :1]) @ e
        np.testing.assert_allclose(speeds.eigenvalues[:, 3], un)
        np.testing.assert_allclose(speeds.eigenvalues[:, 4], un)

    def test_ordering(self, random_states):
        """Test c_s <= |b| <= c_f"""
        speeds = wave_speeds(random_states, 5.0 / 3.0, [1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)])
        assert np.all(speeds.slow <= speeds.alfven * (1.0 + 1e-12) + 1e-12)
        assert np.all(speeds.alfven <= speeds.fast * (1.0 + 1e-12) + 1e-12)
        assert np.all(np.diff(speeds.eigenvalues, axis=1) >= -1e-12)

    def test_direction_free_bound(self, random_states):
        """Test |u| + sqrt(a^2 + |B|^2/rho) bounds |u.e| + c_f(e) over 64 directions"""
        gamma = 5.0 / 3.0
        bound = max_wave_speed(random_states, gamma)
        u = random_states[:, 1:3] / random_states[:, :1]
        for angle in np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False):
            e = np.array([math.cos(angle), math.sin(angle)])
            c_f = fast_speed(random_states, gamma, e)
            assert np.all(np.abs(u @ e) + c_f <= bound * (1.0 + 1e-12))

    def test_fast_speed_equality(self):
        """Test c_f(e) = sqrt(a^2 + |B|^2/rho) when B.e = 0"""
        gamma = 5.0 / 3.0
        U = state(2.0, [0.0, 0.0], 0.5, [0.3, -0.4], gamma)
        e = np.array([0.8, 0.6])
        expected = math.sqrt(gamma * 0.5 / 2.0 + 0.25 / 2.0)
        assert fast_speed(U, gamma, e) == pytest.approx(expected, rel=1e-13)

    def test_negative_pressure(self):
        """Test wave speeds reject negative pressure"""
        U = state(1.0, [0.0, 0.0], 1.0, [0.0, 0.0], 1.4)
        U[3] = -0.1
        with pytest.raises(InvalidStateError):
            max_wave_speed(U, 1.4)


class TestLambdaMax:

    def test_single_static_node(self):
        """Test the static gas value c_f = 1.18322 on every patch"""
        U = np.tile(state(1.0, [0.0, 0.0], 1.0, [0.0, 0.0], 1.4), (5, 1))
        lam = lambda_max_node(U, PatchTable.from_mesh(interval_mesh(4)), 1.4)
        np.testing.assert_allclose(lam, math.sqrt(1.4))

    def test_brute_force(self):
        """Test lambda_max,i against enumeration over the patch nodes"""
        rng = np.random.default_rng(2)
        patch = PatchTable.from_mesh(interval_mesh(6))
        U = state(rng.uniform(0.5, 2.0, 7), rng.uniform(-1, 1, (7, 2)), rng.uniform(0.5, 2.0, 7),
                  rng.uniform(-1, 1, (7, 2)), 1.4)
        speeds = max_wave_speed(U, 1.4)
        lam = lambda_max_node(U, patch, 1.4)
        for i in range(7):
            assert lam[i] == speeds[patch.neighbors_of(i)].max()


class TestLinearAdvection:

    def test_divergence(self):
        """Test div F = v . grad u componentwise"""
        model = LinearAdvection([2.0, -1.0], components=2)
        grad = np.array([[[1.0, 3.0], [0.5, 0.5]]])
        np.testing.assert_allclose(model.divergence(np.zeros((1, 2)), grad), [[-1.0, 0.5]])
        np.testing.assert_allclose(model.max_speed(np.zeros((3, 2))), math.sqrt(5.0))
