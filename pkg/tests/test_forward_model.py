import numpy as np
import pytest
from scipy.stats import unitary_group

from holomodel.errors import ModelNotConverged, WrongKind
from holomodel.forward_model import (
    ModelKind,
    build_renormalized_system,
    canonical_semi_model,
    default_grid,
    direct_limit_map,
    normal_form_map,
    retract_rank,
    siegel_normal_form,
    valiron_map,
    verify_semi_model,
)
from holomodel.geometry import AffineMap, heisenberg_translation, siegel_dilation, siegel_distance


def siegel_affine(q, seed):
    """A generic automorphism of H^q fixing infinity."""
    rng = np.random.default_rng(seed)
    Q = np.eye(q, dtype=complex)
    if q > 1:
        Q[1:, 1:] = unitary_group.rvs(q - 1, random_state=seed) if q > 2 else np.exp(1j * rng.uniform(0, 6, (1, 1)))
    b = rng.normal(size=q - 1) + 1j * rng.normal(size=q - 1)
    return heisenberg_translation(rng.normal(), b).compose(siegel_dilation(rng.uniform(0.5, 3), q)).compose(
        AffineMap(Q, np.zeros(q))
    )


@pytest.fixture(scope="module")
def auto_model(auto_map):
    return canonical_semi_model(auto_map)


@pytest.fixture(scope="module")
def half_model(half_map):
    return canonical_semi_model(half_map)


class TestRenormalizedSystem:
    def test_elliptic_frames_are_trivial(self, shrink_map):
        sys = build_renormalized_system(shrink_map, [0], 20)
        for n in (0, 3, 10):
            np.testing.assert_allclose(sys.automorphism(n)(np.array([0.3 + 0.1j])), [0.3 + 0.1j], atol=1e-15)

    def test_frames_center_the_orbit(self, half_map):
        sys = build_renormalized_system(half_map, [0], 50)
        for n in (0, 2, 7):
            np.testing.assert_allclose(sys.automorphism(n)(np.array([1 - 2.0 ** -n])), [0], atol=1e-12)


class TestLimitMap:
    def test_affine_converges(self, half_map):
        sys = build_renormalized_system(half_map, [0], 200)
        alpha, rep = direct_limit_map(sys, 0, default_grid(half_map), 1e-10)
        assert rep.converged and rep.horizon_used <= 60
        assert rep.sup_residual <= 1e-8

    def test_automorphism_stabilizes_immediately(self, auto_map):
        sys = build_renormalized_system(auto_map, [0], 50)
        alpha, rep = direct_limit_map(sys, 0, default_grid(auto_map))
        assert rep.horizon_used <= 2
        # alpha_0 is the Cayley map to the half-plane
        z = 0.3 - 0.2j
        np.testing.assert_allclose(alpha(np.array([z])), [1j * (1 + z) / (1 - z)], rtol=1e-12)

    def test_unconverged_horizon(self, half_map):
        sys = build_renormalized_system(half_map, [0], 5)
        _, rep = direct_limit_map(sys, 0, default_grid(half_map), 1e-10)
        assert not rep.converged


class TestRetractRank:
    def test_disc(self, half_map):
        sys = build_renormalized_system(half_map, [0], 200)
        alpha, _ = direct_limit_map(sys, 0, default_grid(half_map))
        assert retract_rank(alpha) == 1

    def test_polydisc_collapse(self, poly_map):
        sys = build_renormalized_system(poly_map, [0, 0], 200)
        alpha, _ = direct_limit_map(sys, 0, default_grid(poly_map))
        k, votes = retract_rank(alpha, np.zeros(2), return_votes=True)
        assert k == 1 and votes == [1, 1, 1]

    def test_ball_automorphism_full(self, ball_auto_map):
        sys = build_renormalized_system(ball_auto_map, [0, 0], 50)
        alpha, _ = direct_limit_map(sys, 0, default_grid(ball_auto_map))
        assert retract_rank(alpha, np.zeros(2)) == 2


class TestNormalForm:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_hyperbolic(self, seed):
        phi = normal_form_map(ModelKind.HYPERBOLIC, 3, scale=0.25, angles=[-1.1, 0.3])
        g = siegel_affine(3, seed)
        nf = siegel_normal_form(g.inverse().compose(phi).compose(g))
        assert nf.kind is ModelKind.HYPERBOLIC
        assert nf.scale == pytest.approx(0.25, rel=1e-12)
        np.testing.assert_allclose(nf.angles, [-1.1, 0.3], atol=1e-12)
        assert nf.residual < 1e-12

    @pytest.mark.parametrize("sign", [1, -1])
    def test_abelian(self, sign):
        phi = normal_form_map(ModelKind.PARABOLIC_ABELIAN, 3, sign=sign, angles=[0.7, 2.0])
        g = siegel_affine(3, 5)
        nf = siegel_normal_form(g.inverse().compose(phi).compose(g))
        assert nf.kind is ModelKind.PARABOLIC_ABELIAN and nf.sign == sign
        np.testing.assert_allclose(nf.angles, [0.7, 2.0], atol=1e-12)
        assert nf.residual < 1e-12

    def test_heisenberg(self):
        phi = normal_form_map(ModelKind.PARABOLIC_HEISENBERG, 3, angles=[0.4])
        g = siegel_affine(3, 9)
        tau = g.inverse().compose(phi).compose(g)
        nf = siegel_normal_form(tau)
        assert nf.kind is ModelKind.PARABOLIC_HEISENBERG
        np.testing.assert_allclose(nf.angles, [0.4], atol=1e-12)
        x = np.array([0.2 + 3j, 0.5, 0.1j])
        np.testing.assert_allclose(nf.gamma(tau(x)), nf.phi(nf.gamma(x)), atol=1e-12)

    def test_normal_forms_are_isometries(self):
        p, q = np.array([0.1 + 2j, 0.3]), np.array([1 + 4j, -0.2j])
        d = siegel_distance(p, q)
        for kind in (ModelKind.HYPERBOLIC, ModelKind.PARABOLIC_ABELIAN, ModelKind.PARABOLIC_HEISENBERG):
            phi = normal_form_map(kind, 2, scale=2.0, angles=[0.5] if kind is not ModelKind.PARABOLIC_HEISENBERG else [])
            assert siegel_distance(phi(p), phi(q)) == pytest.approx(d, rel=1e-12)


class TestSemiModel:
    def test_automorphism(self, auto_model):
        assert auto_model.retract_dim == 1
        assert auto_model.kind is ModelKind.HYPERBOLIC
        assert auto_model.lam == pytest.approx(1 / 3, abs=1e-9)
        assert auto_model.residuals["commutation"] <= 1e-12

    def test_affine(self, half_model):
        assert half_model.retract_dim == 1
        assert half_model.lam == pytest.approx(0.5, abs=1e-6)
        assert half_model.residuals["commutation"] <= 1e-6

    def test_parabolic(self, para_map):
        model = canonical_semi_model(para_map)
        assert model.kind is ModelKind.PARABOLIC_ABELIAN and model.sign == 1
        assert model.residuals["commutation"] <= 1e-5

    def test_polydisc(self, poly_map):
        model = canonical_semi_model(poly_map)
        assert model.retract_dim == 1 and model.lam == pytest.approx(1 / 3, abs=1e-6)

    def test_ball(self, ball_auto_map):
        model = canonical_semi_model(ball_auto_map)
        assert model.retract_dim == 2
        np.testing.assert_allclose(model.angles, [0.0], atol=1e-9)
        assert model.residuals["commutation"] <= 1e-9

    def test_elliptic_point_model(self, shrink_map):
        model = canonical_semi_model(shrink_map)
        assert model.retract_dim == 0 and model.kind is ModelKind.POINT
        assert model.warnings
        assert verify_semi_model(shrink_map, model).point_model

    def test_short_horizon_raises(self, half_map):
        with pytest.raises(ModelNotConverged):
            canonical_semi_model(half_map, N=5)

    def test_json(self, half_model):
        js = half_model.to_json()
        assert js["k"] == 1 and js["kind"] == "hyperbolic"
        assert js["residuals"]["convergence"]["converged"] is True


class TestValiron:
    def test_automorphism_is_scaled_cayley(self, auto_model):
        theta = valiron_map(auto_model)
        t0 = theta(np.array([0j]))
        c = t0.imag
        assert c > 0 and abs(t0.real) < 1e-12
        np.testing.assert_allclose(theta(np.array([0.5 + 0j])), 3 * c * 1j, atol=1e-12)
        z = 0.2 + 0.4j
        np.testing.assert_allclose(theta(np.array([z])), c * 1j * (1 + z) / (1 - z), rtol=1e-12)

    def test_affine_residual(self, half_model, half_map):
        theta = valiron_map(half_model)
        grid = default_grid(half_map)
        assert theta.residual(half_map, grid) <= 1e-5
        assert min(theta(x).imag for x in grid) > 0

    def test_wrong_kind(self, para_map):
        with pytest.raises(WrongKind):
            valiron_map(canonical_semi_model(para_map))


class TestVerify:
    def test_automorphism(self, auto_map, auto_model):
        chk = verify_semi_model(auto_map, auto_model)
        assert chk.commutation <= 1e-12
        assert chk.cover_ok and chk.pullback_monotone
        assert chk.pullback[-1][1] <= 1e-9
        assert chk.retraction_defect <= 1e-9

    def test_affine_pullback(self, half_map, half_model):
        chk = verify_semi_model(half_map, half_model, m=50, n_pairs=50)
        assert chk.pullback[-1][0] == 50
        assert chk.pullback[-1][1] <= 1e-4
        assert chk.pullback_monotone
