"""End-to-end acceptance checks.

Each check prints a single ``PASS``/``FAIL`` line with the measured numbers
and then asserts.  The expected values are exact: the automorphism and the
squaring map have closed-form dilations, distances and rates.
"""
import json
import subprocess
import sys

import numpy as np

import conftest
from conftest import AUTO, HALF, PARA, SQUARE
from holomodel.backward_model import (
    backward_orbit,
    backward_step_sigma,
    canonical_pre_model,
    verify_pre_model,
)
from holomodel.dynamics import MapKind, classify_map
from holomodel.forward_model import (
    ModelKind,
    build_renormalized_system,
    canonical_semi_model,
    default_grid,
    direct_limit_map,
    retract_rank,
    valiron_map,
)
from holomodel.geometry import BoundaryPoint, DomainSpec, siegel_distance
from holomodel.holomap import map_from_strings

LOG3 = 1.0986122886681098
ATANH_THIRD = 0.34657359027997265


def announce(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'}  {label}: {detail}")


def close(x, target, tol):
    return x is not None and abs(x - target) <= tol


class TestHyperbolicAutomorphism:
    def test_oracle(self, capsys, auto_map):
        rep = classify_map(auto_map)
        model = canonical_semi_model(auto_map)
        theta = valiron_map(model)
        residual = theta.residual(auto_map, default_grid(auto_map, n=200))
        dw = rep.dw_point
        checks = {
            "kind": rep.kind is MapKind.HYPERBOLIC,
            "dw=1": isinstance(dw, BoundaryPoint) and np.allclose(dw.direction, [1], atol=1e-9),
            "lambda": close(rep.dilation, 1 / 3, 1e-6),
            "c": close(rep.divergence_rate, LOG3, 1e-3),
            "k": model.retract_dim == 1,
            "rate": model.kind is ModelKind.HYPERBOLIC and close(model.lam, 1 / 3, 1e-6),
            "valiron": residual <= 1e-9,
        }
        ok = all(checks.values())
        announce(capsys, "hyperbolic automorphism", ok,
                 f"lambda={rep.dilation:.12g} c={rep.divergence_rate:.9g} k={model.retract_dim} "
                 f"rate={model.lam:.12g} valiron={residual:.3g} failed={[k for k, v in checks.items() if not v]}")
        assert ok, checks


class TestHyperbolicAffine:
    def test_oracle(self, capsys, half_map):
        rep = classify_map(half_map)
        model = canonical_semi_model(half_map)
        theta = valiron_map(model)
        grid = default_grid(half_map, n=200)
        residual = theta.residual(half_map, grid)
        # 50 pairs of distinct grid points; 1 - f^m(z) = (1 - z)/2^m is exact in floating point
        rng = np.random.default_rng(50)
        i = rng.integers(0, len(grid), 50)
        j = (i + rng.integers(1, len(grid), 50)) % len(grid)
        h = model.intertwiner
        worst = 0.0
        for a, b in zip(i, j):
            u, v = (1 - grid[a][0]) / 2 ** 50, (1 - grid[b][0]) / 2 ** 50
            pushed = np.arctanh(abs(u - v) / abs(np.conj(u) + v - np.conj(u) * v))
            worst = max(worst, abs(pushed - siegel_distance(h(grid[a]), h(grid[b]))))
        checks = {
            "lambda": close(rep.dilation, 0.5, 1e-6),
            "k": model.retract_dim == 1,
            "valiron": residual <= 1e-5,
            "pullback": worst <= 1e-4,
        }
        ok = all(checks.values())
        announce(capsys, "hyperbolic non-automorphism", ok,
                 f"lambda={rep.dilation:.12g} k={model.retract_dim} valiron={residual:.3g} "
                 f"pullback@50={worst:.3g} failed={[k for k, v in checks.items() if not v]}")
        assert ok, checks


class TestParabolic:
    def test_oracle(self, capsys, para_map):
        rep = classify_map(para_map)
        model = canonical_semi_model(para_map)
        comm = model.residuals["commutation"]
        checks = {
            "kind": rep.kind is MapKind.PARABOLIC,
            "lambda": close(rep.dilation, 1.0, 1e-4),
            "c": rep.divergence_rate <= 1e-2,
            "nonzero_step": rep.nonzero_step,
            "normal_form": model.kind is ModelKind.PARABOLIC_ABELIAN,
            "commutation": comm <= 1e-5,
        }
        ok = all(checks.values())
        announce(capsys, "parabolic translation", ok,
                 f"lambda={rep.dilation:.9g} c={rep.divergence_rate:.3g} nonzero_step={rep.nonzero_step} "
                 f"form={model.kind.value} commutation={comm:.3g} failed={[k for k, v in checks.items() if not v]}")
        assert ok, checks


class TestRankCollapse:
    def test_oracle(self, capsys, poly_map):
        sys_ = build_renormalized_system(poly_map, [0, 0], 200)
        alpha, _ = direct_limit_map(sys_, 0, default_grid(poly_map))
        k, votes = retract_rank(alpha, np.zeros(2), return_votes=True)
        ok = k == 1 and votes == [1, 1, 1]
        announce(capsys, "rank collapse on the bidisc", ok, f"k={k} votes={votes}")
        assert ok


class TestBackwardSquare:
    def test_oracle(self, capsys, square_map):
        orbit = backward_orbit(square_map, [0.5], BoundaryPoint([1.0]))
        sigma = backward_step_sigma(orbit, 1)
        model = canonical_pre_model(square_map, orbit)
        chk = verify_pre_model(square_map, model, T=1e6)
        comm = model.residuals["commutation"]
        checks = {
            "sigma_1": close(sigma.value, ATANH_THIRD, 1e-4),
            "mu": close(model.mu, 2.0, 1e-2),
            "lambda": close(orbit.lam, 2.0, 1e-6),
            "k": model.retract_dim == 1,
            "commutation": comm <= 1e-4,
            "boundary": chk.boundary_distance <= 1e-3,
        }
        ok = all(checks.values())
        announce(capsys, "backward orbit of z^2", ok,
                 f"sigma_1={sigma.value:.12g} mu={model.mu:.9g} lambda={orbit.lam:.12g} k={model.retract_dim} "
                 f"commutation={comm:.3g} |h(iT)-1|={chk.boundary_distance:.3g} "
                 f"failed={[k for k, v in checks.items() if not v]}")
        assert ok, checks


BLASCHKE = "z0*(z0 + 0.5)/(1 + 0.5*z0)"
PRE_MODEL_CORPUS = [
    # expressions, domain, orbit start, target, orbit length
    ([SQUARE], 1, [0.5], [1], 40),
    ([AUTO], 1, [0], [-1], 40),
    (["z0**3"], 1, [0.2 + 0.1j], [1], 40),
    ([AUTO, "sqrt(3)*z1/(z0 + 2)"], 2, [0, 0], [-1, 0], 40),
    ([BLASCHKE], 1, [0.3], [1], 100),
]


class TestRateInequality:
    def test_corpus(self, capsys):
        rows = []
        for exprs, q, y0, zeta, N in PRE_MODEL_CORPUS:
            f = map_from_strings(exprs, DomainSpec.ball(q))
            model = canonical_pre_model(f, backward_orbit(f, y0, BoundaryPoint(zeta), N=N))
            rows.append((exprs[0], model.mu, model.lam, model.mu >= model.lam - 1e-6))
        ok = all(r[3] for r in rows)
        detail = "; ".join(f"{e}: mu={mu:.9g} lambda={lam:.9g}" for e, mu, lam, _ in rows)
        announce(capsys, "mu >= lambda over the pre-model corpus", ok, detail)
        assert ok, rows


PROPERTY_SUITES = {
    "distance contraction": ["TestDistanceContraction::test_contraction"],
    "forward/backward step monotonicity": [
        "TestStepMonotonicity::test_forward_non_increasing",
        "TestStepMonotonicity::test_backward_non_decreasing",
    ],
    "step subadditivity": ["TestSubadditivity::test_steps"],
    "rate base-point independence": ["TestRateIndependence::test_two_base_points"],
    "Mobius isometry": ["TestMobiusIsometry::test_isometry"],
    "Cayley round trip": ["TestCayleyRoundTrip::test_round_trip"],
}


def _run_property(nodeid):
    """Outcome recorded earlier in this session, or a direct run when the suite was not collected."""
    if nodeid in conftest.PROPERTY_OUTCOMES:
        return conftest.PROPERTY_OUTCOMES[nodeid]
    import test_properties

    cls_name, meth = nodeid.split("::")
    try:
        getattr(getattr(test_properties, cls_name)(), meth)()
    except Exception:
        return "failed"
    return "passed"


class TestPropertySuites:
    def test_all_pass(self, capsys):
        outcomes = {name: [_run_property(n) for n in ids] for name, ids in PROPERTY_SUITES.items()}
        ok = all(o == "passed" for v in outcomes.values() for o in v)
        bad = [name for name, v in outcomes.items() if any(o != "passed" for o in v)]
        announce(capsys, "property suites (100 cases each)", ok, f"{len(outcomes)} suites, failing={bad}")
        assert ok, outcomes


DISC = {"kind": "ball", "dim": 1}
CLI_RUNS = [
    ("classify", {"map": {"domain": DISC, "expressions": [AUTO]}}),
    ("valiron", {"map": {"domain": DISC, "expressions": [AUTO]}}),
    ("forward", {"map": {"domain": DISC, "expressions": [HALF]}}),
    ("forward", {"map": {"domain": DISC, "expressions": [PARA]}}),
    ("forward", {"map": {"domain": {"kind": "polydisc", "dim": 2}, "expressions": [AUTO, "z1/2"]}}),
    ("backward", {"map": {"domain": DISC, "expressions": [SQUARE]}, "zeta": [1], "orbit_start": [0.5]}),
    ("verify", {"map": {"domain": DISC, "expressions": [SQUARE]}, "zeta": [1], "orbit_start": [0.5]}),
]


def _cli(tmp_path, tag, index, command, body):
    work = tmp_path / f"{tag}{index}"
    work.mkdir()
    cfg = work / "job.json"
    cfg.write_text(json.dumps(body))
    out = work / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "holomodel.cli", command, "--config", str(cfg), "--out", str(out)],
        capture_output=True, timeout=120,
    )
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir())} if out.exists() else {}
    return proc.returncode, files


class TestDeterminism:
    def test_cli_repeat(self, capsys, tmp_path):
        mismatched, statuses = [], []
        for i, (command, body) in enumerate(CLI_RUNS):
            first = _cli(tmp_path, "a", i, command, body)
            second = _cli(tmp_path, "b", i, command, body)
            statuses.append(first[0])
            if first != second or not first[1]:
                mismatched.append(f"{command}#{i}")
        ok = not mismatched and all(s == 0 for s in statuses)
        announce(capsys, "byte-identical CLI reports", ok,
                 f"{len(CLI_RUNS)} runs twice, exit={statuses}, mismatched={mismatched}")
        assert ok

