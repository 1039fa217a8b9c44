import math

import numpy as np
import pytest

from holomodel.backward_model import (
    BackwardOrbit,
    backward_orbit,
    backward_rate_mu,
    backward_step_sigma,
    canonical_pre_model,
    orbits_equivalent,
    stable_membership,
    verify_pre_model,
)
from holomodel.errors import NotRepelling, OrbitTooShort
from holomodel.forward_model import ModelKind
from holomodel.geometry import BoundaryPoint, check_special_restricted

ATANH_HALF = 0.54930614433405485
ATANH_THIRD = 0.34657359027997265
ONE = BoundaryPoint([1.0])
MINUS_ONE = BoundaryPoint([-1.0])


@pytest.fixture(scope="module")
def auto_orbit(auto_map):
    return backward_orbit(auto_map, [0], MINUS_ONE)


@pytest.fixture(scope="module")
def square_orbit(square_map):
    return backward_orbit(square_map, [0.5], ONE)


@pytest.fixture(scope="module")
def square_pre_model(square_map, square_orbit):
    return canonical_pre_model(square_map, square_orbit)


class TestBackwardOrbit:
    def test_automorphism_inverse(self, auto_orbit):
        pts = np.concatenate(auto_orbit.points[:3])
        np.testing.assert_allclose(pts, [0, -0.5, -0.8], atol=1e-12)
        assert len(auto_orbit) == 41

    def test_square_roots(self, square_orbit, square_map):
        pts = square_orbit.interior_points()
        for n in range(0, 30, 5):
            np.testing.assert_allclose(pts[n], [0.5 ** (2.0 ** -n)], rtol=1e-12)
        for a, b in zip(pts[1:], pts[:-1]):
            np.testing.assert_allclose(square_map(a), b, atol=1e-10)

    def test_radial_orbit_is_special_and_restricted(self, square_orbit):
        flags = check_special_restricted(square_orbit.interior_points(), ONE)
        assert flags.restricted and flags.special

    def test_not_repelling(self, half_map):
        with pytest.raises(NotRepelling):
            backward_orbit(half_map, [0], ONE)

    def test_bounded_steps(self, square_orbit):
        assert square_orbit.bound <= square_orbit.step_cap

    def test_csv(self, auto_orbit):
        lines = auto_orbit.to_csv().splitlines()
        assert lines[0] == "n,re0,im0,k_next"
        assert len(lines) == len(auto_orbit) + 1
        assert float(lines[1].split(",")[-1]) == pytest.approx(ATANH_HALF, abs=1e-12)
        assert lines[-1].endswith(",")


class TestSteps:
    def test_sigma_automorphism(self, auto_orbit):
        assert backward_step_sigma(auto_orbit, 1).value == pytest.approx(ATANH_HALF, abs=1e-9)

    def test_sigma_square(self, square_orbit):
        est = backward_step_sigma(square_orbit, 1)
        assert est.converged
        assert est.value == pytest.approx(ATANH_THIRD, abs=1e-4)

    def test_sigma_zero(self, square_orbit):
        assert backward_step_sigma(square_orbit, 0).value == 0.0

    def test_sigma_non_decreasing(self, square_orbit):
        seq = np.array([square_orbit.distance(n, n + 2) for n in range(len(square_orbit) - 2)])
        assert np.all(np.diff(seq) >= -1e-9)

    def test_too_short(self, square_map):
        orbit = BackwardOrbit.from_points(square_map, [[0.5], [0.5 ** 0.5]], ONE)
        with pytest.raises(OrbitTooShort):
            backward_step_sigma(orbit, 1)


class TestRate:
    def test_automorphism(self, auto_orbit):
        assert backward_rate_mu(auto_orbit).value == pytest.approx(3, abs=1e-3)

    def test_square(self, square_orbit):
        assert backward_rate_mu(square_orbit).value == pytest.approx(2, abs=1e-2)

    def test_constant_orbit(self, shrink_map):
        orbit = BackwardOrbit.from_points(shrink_map, [[0.0]] * 10)
        assert backward_rate_mu(orbit).value == pytest.approx(1.0)


class TestPreModel:
    def test_automorphism(self, auto_map, auto_orbit):
        model = canonical_pre_model(auto_map, auto_orbit)
        assert model.retract_dim == 1 and model.kind is ModelKind.HYPERBOLIC
        assert model.mu == pytest.approx(3, abs=1e-3)
        assert model.residuals["commutation"] <= 1e-9
        chk = verify_pre_model(auto_map, model)
        assert chk.commutation <= 1e-9
        assert max(r for _, r in chk.pullback) <= 1e-9
        assert chk.mu_ge_lambda

    def test_square(self, square_pre_model):
        assert square_pre_model.retract_dim == 1
        assert square_pre_model.mu == pytest.approx(2, abs=1e-2)
        assert square_pre_model.residuals["commutation"] <= 1e-4

    def test_square_verification(self, square_map, square_pre_model):
        chk = verify_pre_model(square_map, square_pre_model, m=30)
        assert chk.pullback[-1][0] == 30 and chk.pullback[-1][1] <= 1e-3
        assert chk.pullback_monotone
        assert chk.boundary_ok and chk.boundary_distance <= 1e-3
        assert chk.mu >= chk.lam - 1e-6

    def test_point_pre_model(self, shrink_map):
        orbit = BackwardOrbit.from_points(shrink_map, [[0.0]] * 10)
        model = canonical_pre_model(shrink_map, orbit)
        assert model.kind is ModelKind.POINT and model.retract_dim == 0
        assert model.warnings
        assert verify_pre_model(shrink_map, model).point_model

    def test_json(self, square_pre_model):
        js = square_pre_model.to_json()
        assert js["k"] == 1 and js["dilation"] == pytest.approx(2, abs=1e-6)


class TestMembership:
    def test_member(self, square_map):
        res = stable_membership(square_map, ONE, [0.5])
        assert res.member and res.certificate is not None

    def test_fixed_point_is_not_member(self, square_map):
        assert not stable_membership(square_map, ONE, [0.0]).member

    @pytest.mark.parametrize("z", [0.3j, -0.6, 0.1 + 0.7j])
    def test_automorphism_everything(self, auto_map, z):
        assert stable_membership(auto_map, MINUS_ONE, [z]).member


class TestEquivalence:
    def test_same_orbit(self, auto_orbit):
        assert orbits_equivalent(auto_orbit, auto_orbit, 1e-12)

    def test_neighbouring_orbits(self, auto_map, auto_orbit):
        other = backward_orbit(auto_map, [0.1], MINUS_ONE, N=20)
        d0 = auto_orbit.distance(0, 0)
        assert orbits_equivalent(auto_orbit, other, math.atanh(0.1) + 1e-9 + d0)
        assert not orbits_equivalent(auto_orbit, other, 0.05)
