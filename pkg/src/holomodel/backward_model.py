"""Backward orbits toward boundary repelling fixed points and canonical pre-models.

Orbits are computed in the chart at the target boundary point, where the
repelling fixed point sits at infinity and preimages are found by Newton's
method seeded with the linearized backward step.  The pre-model is built
from the normalizing frames ``A_n`` of the orbit:
``alpha_0(u) = lim_m F^m(A_m^-1 u)`` and ``tau = lim_m A_(m+1) o A_m^-1``,
so that ``F o alpha_0 = alpha_0 o tau``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .charts import Chart, ProductChart, SiegelChart, chart_for
from .dynamics import RATE_SCALE, Estimate, boundary_dilation
from .errors import (
    ModelNotConverged,
    NewtonFailed,
    NormalFormUnavailable,
    NotRepelling,
    OrbitTooShort,
    PoleHit,
    StepUnbounded,
)
from .forward_model import (
    ConvergenceReport,
    ModelKind,
    OSCILLATION_WINDOW,
    Slice,
    _pairs,
    siegel_normal_form,
)
from .geometry import AffineMap, BoundaryPoint, DomainSpec, siegel_distance
from .holomap import MapExpr, sample_domain

log = logging.getLogger(__name__)


@dataclass(eq=False)
class BackwardOrbit:
    """Points ``y_0, ..., y_N`` with ``f(y_(n+1)) = y_n``, stored in chart coordinates."""

    f: MapExpr
    chart: Chart
    chart_points: list
    target: BoundaryPoint | None
    lam: float | None
    step_cap: float = 10.0
    _steps: list | None = field(default=None, repr=False)

    @classmethod
    def from_points(cls, f: MapExpr, points, zeta=None, lam=None, step_cap: float = 10.0) -> "BackwardOrbit":
        chart = chart_for(f, zeta)
        target = None if zeta is None else (zeta if isinstance(zeta, BoundaryPoint) else BoundaryPoint(zeta))
        pts = [chart.to_chart(f.domain.check(p)) for p in points]
        return cls(f, chart, pts, target, lam, step_cap)

    @property
    def domain(self) -> DomainSpec:
        return self.f.domain

    @property
    def points(self) -> list:
        """Domain coordinates; very deep points may round onto the boundary."""
        return [self.chart.from_chart(Y) for Y in self.chart_points]

    def interior_points(self) -> list:
        """The longest prefix of ``points`` that is strictly inside the domain."""
        out = []
        for y in self.points:
            if not self.domain.defect(y) > 0:
                break
            out.append(y)
        return out

    def __len__(self):
        return len(self.chart_points)

    @property
    def steps(self) -> list:
        """``k(y_n, y_(n+1))`` for every consecutive pair."""
        if self._steps is None:
            P = self.chart_points
            self._steps = [self.chart.distance(P[n], P[n + 1]) for n in range(len(P) - 1)]
        return self._steps

    @property
    def bound(self) -> float:
        return float(max(self.steps, default=0.0))

    def distance(self, n: int, m: int) -> float:
        return self.chart.distance(self.chart_points[n], self.chart_points[m])

    def to_csv(self, fh=None) -> str:
        """One row per point: ``n``, real and imaginary part of each coordinate, ``k(y_n, y_(n+1))``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        q = self.f.dim
        header = ["n"]
        for j in range(q):
            header += [f"re{j}", f"im{j}"]
        w.writerow(header + ["k_next"])
        steps = self.steps
        for n, y in enumerate(self.points):
            row = [str(n)]
            for c in y:
                row += [format(float(c.real), ".17g"), format(float(c.imag), ".17g")]
            row.append(format(steps[n], ".17g") if n < len(steps) else "")
            w.writerow(row)
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _newton(F: MapExpr, target, seed, iters: int):
    Y = np.asarray(seed, dtype=np.complex128)
    for _ in range(iters):
        try:
            g = F(Y) - target
            step = np.linalg.solve(F.jacobian(Y), g)
        except (PoleHit, np.linalg.LinAlgError):
            return None
        Y = Y - step
        if not np.all(np.isfinite(Y)):
            return None
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(Y)):
            break
    return Y


def _polish_critical(F: MapExpr, target, Y, iters: int = 30):
    """Refine a root of ``F(Y) = target`` that sits at a critical point of ``F``.

    Plain Newton only resolves a double root to about ``sqrt(eps)``.  Here
    Gauss-Newton is run on the overdetermined system ``F(Y) - target = 0,
    det J(Y) = 0``, whose root is simple.
    """
    q = Y.size

    def g(X):
        return np.concatenate([F(X) - target, [np.linalg.det(F.jacobian(X))]])

    for _ in range(iters):
        J = F.jacobian(Y)
        h = 1e-7 * max(1.0, float(np.linalg.norm(Y)))
        ddet = np.array([
            (np.linalg.det(F.jacobian(Y + h * e)) - np.linalg.det(F.jacobian(Y - h * e))) / (2 * h)
            for e in np.eye(q)
        ])
        step = np.linalg.lstsq(np.vstack([J, ddet]), g(Y), rcond=None)[0]
        Y = Y - step
        if not np.all(np.isfinite(Y)):
            return None
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(Y)):
            break
    return Y


def _near_critical(F: MapExpr, Y) -> bool:
    s = np.linalg.svd(F.jacobian(Y), compute_uv=False)
    return bool(s[-1] <= 1e-6 * max(1.0, s[0]))


def _preimage(f: MapExpr, chart: Chart, Yn, lam: float, iters: int, tol: float):
    seed = chart.linear_seed(Yn, lam)
    best, best_d = None, np.inf
    yn_ball = chart.from_chart(Yn)
    for start in (seed, Yn, 0.5 * (seed + Yn)):
        Y = _newton(chart.F, Yn, start, iters)
        if Y is not None and _near_critical(chart.F, Y):
            Y = _polish_critical(chart.F, Yn, Y)
        if Y is None or not chart.contains(Y):
            continue
        y = chart.from_chart(Y)
        try:
            if np.linalg.norm(f(y) - yn_ball) > tol:
                continue
        except PoleHit:
            continue
        d = chart.distance(Y, seed) if chart.contains(seed) else float(np.linalg.norm(Y - seed))
        if d < best_d:
            best, best_d = Y, d
    return best


def backward_orbit(f: MapExpr, y0, zeta, N: int = 40, newton_iters: int = 100, step_cap: float = 10.0,
                   tol: float = 1e-10, lam: float | None = None) -> BackwardOrbit:
    """Backward orbit of ``y0`` of length ``N + 1`` converging to the repelling point ``zeta``."""
    y0 = f.domain.check(y0)
    zeta = zeta if isinstance(zeta, BoundaryPoint) else BoundaryPoint(zeta)
    if lam is None:
        lam = float(boundary_dilation(f, zeta))
    if not lam > 1.0:
        raise NotRepelling(f"dilation {lam} at {zeta.direction} is not > 1")
    chart = chart_for(f, zeta)
    pts = [chart.to_chart(y0)]
    steps = []
    for n in range(N):
        Y = _preimage(f, chart, pts[-1], lam, newton_iters, tol)
        if Y is None:
            raise NewtonFailed(n)
        d = chart.distance(pts[-1], Y)
        if d > step_cap:
            raise StepUnbounded(f"step {n}: k(y_n, y_(n+1)) = {d:.6g} exceeds {step_cap}")
        pts.append(Y)
        steps.append(d)
    return BackwardOrbit(f, chart, pts, zeta, lam, step_cap, steps)


def backward_step_sigma(orbit: BackwardOrbit, m: int, step_tol: float = 1e-9, window: int = 2) -> Estimate:
    """``sigma_m = lim_n k(y_n, y_(n+m))`` at the first index where the increase drops below ``step_tol``."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return Estimate(0.0, 0, True, (0.0,))
    if len(orbit) <= m + window:
        raise OrbitTooShort(f"orbit of {len(orbit)} points is too short for m = {m}")
    seq = [orbit.distance(0, m)]
    for n in range(1, len(orbit) - m):
        seq.append(orbit.distance(n, n + m))
        if seq[-1] - seq[-2] < step_tol:
            return Estimate(seq[-1], n, True, tuple(seq))
    return Estimate(seq[-1], len(seq) - 1, False, tuple(seq))


@dataclass(frozen=True)
class RateEstimate:
    value: float
    m_used: int
    tail: tuple

    def __float__(self):
        return float(self.value)


def backward_rate_mu(orbit: BackwardOrbit, m_max: int = 16, window: int = 2) -> RateEstimate:
    """``exp(RATE_SCALE * min_m sigma_m / m)`` over ``m <= m_max``."""
    m_top = min(m_max, len(orbit) - window - 1)
    if m_top < 1:
        raise OrbitTooShort(f"orbit of {len(orbit)} points is too short")
    ratios = [float(backward_step_sigma(orbit, m)) / m for m in range(1, m_top + 1)]
    return RateEstimate(float(np.exp(RATE_SCALE * min(ratios))), m_top, tuple(ratios[-3:]))


# ---------------------------------------------------------------- pre-model


@dataclass(eq=False)
class BackwardLimitMap:
    """``alpha_0(u) = F^M(A_M^-1 u)`` on normalized coordinates, output in chart coordinates."""

    orbit: BackwardOrbit
    M: int

    def frame(self, n: int):
        return self.orbit.chart.normalizer(self.orbit.chart_points[n])

    def chart_eval(self, u):
        X = self.frame(self.M).inv(np.asarray(u, dtype=np.complex128))
        for _ in range(self.M):
            X = self.orbit.chart.F(X)
        return X

    def jacobian(self, u, rel_step: float = 1e-6) -> np.ndarray:
        u = np.asarray(u, dtype=np.complex128)
        q = u.size
        h = rel_step * max(1.0, float(np.max(np.abs(u))))
        J = np.empty((q, q), dtype=np.complex128)
        for j in range(q):
            e = np.zeros(q, dtype=np.complex128)
            e[j] = h
            J[:, j] = (self.chart_eval(u + e) - self.chart_eval(u - e)) / (2 * h)
        return J


def backward_limit_map(orbit: BackwardOrbit, grid, tol: float = 1e-10):
    """First horizon at which ``F^m(A_m^-1 u)`` stops moving on the normalized grid."""
    chart = orbit.chart
    best, best_at, disp = np.inf, 0, np.inf
    oscillating = False
    prev = None
    m = 0
    for m in range(1, len(orbit)):
        cur = [BackwardLimitMap(orbit, m).chart_eval(u) for u in grid]
        if prev is not None:
            disp = float(max(chart.distance(a, b) for a, b in zip(cur, prev)))
            if disp < best:
                best, best_at = disp, m
            if disp < tol:
                break
            if m - best_at >= OSCILLATION_WINDOW:
                oscillating = True
                break
        prev = cur
    return BackwardLimitMap(orbit, m), ConvergenceReport(m, float(disp), bool(disp < tol), oscillating, tol)


def _row_space_slice(J: np.ndarray, k: int) -> Slice:
    q = J.shape[0]
    V = np.linalg.svd(J)[2].conj().T[:, :k]
    e1 = np.zeros(q)
    e1[0] = 1.0
    if np.linalg.norm(e1 - V @ (V.conj().T @ e1)) > 1e-6:
        raise NormalFormUnavailable("the retract does not contain the boundary direction")
    if k == 1:
        return Slice(np.zeros((q - 1, 0), dtype=np.complex128))
    return Slice(np.linalg.svd(V[1:, :])[0][:, : k - 1])


@dataclass(eq=False)
class PreIntertwiner:
    """``h(w) = alpha_0(lift(gamma^-1 w))``: from ``H^k`` into the domain."""

    alpha: BackwardLimitMap
    slice: Slice
    gamma: AffineMap
    _ginv: AffineMap = field(init=False, repr=False)

    def __post_init__(self):
        self._ginv = self.gamma.inverse()

    def _lift(self, w):
        u = self._ginv(np.asarray(w, dtype=np.complex128))
        if self.slice.coordinate is not None:
            full = self.alpha.orbit.chart.base.copy()
            full[self.slice.coordinate] = u[0]
            return full
        return self.slice.lift(u)

    def chart_eval(self, w):
        return self.alpha.chart_eval(self._lift(w))

    def __call__(self, w):
        return self.alpha.orbit.chart.from_chart(self.chart_eval(w))


@dataclass(eq=False)
class PreModel:
    retract_dim: int
    mu: float
    kind: ModelKind
    angles: tuple
    intertwiner: PreIntertwiner | None
    phi: AffineMap | None
    residuals: dict
    convergence: ConvergenceReport | None
    horizon: int
    lam: float | None
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        res = dict(self.residuals)
        if self.convergence is not None:
            res["convergence"] = self.convergence.to_json()
        out = {"k": self.retract_dim, "kind": self.kind.value, "mu": self.mu, "angles": list(self.angles),
               "horizon": self.horizon, "residuals": res, "warnings": list(self.warnings)}
        if self.lam is not None:
            out["dilation"] = self.lam
        return out


def pre_commutation_residual(f: MapExpr, model: PreModel, grid) -> float:
    h = model.intertwiner
    chart = h.alpha.orbit.chart
    return float(max(chart.distance(chart.F(h.chart_eval(w)), h.chart_eval(model.phi(w))) for w in grid))


def _model_grid(k: int, n: int, seed: int) -> list:
    return sample_domain(DomainSpec.siegel(k), n, seed=seed, radius=0.8)


def canonical_pre_model(f: MapExpr, orbit: BackwardOrbit, tol: float = 1e-10, svd_tol: float = 1e-4,
                        grid_size: int = 64, seed: int = 0, spot_checks: int = 8) -> PreModel:
    """Canonical pre-model attached to ``orbit``, with ``tau`` in the normal form ``(z / mu, ...)``."""
    if orbit.target is None or not isinstance(orbit.chart, (SiegelChart, ProductChart)):
        log.warning("interior backward orbit: returning the point pre-model")
        return PreModel(0, 1.0, ModelKind.POINT, (), None, None, {}, None, 0, None,
                        ["interior backward orbit: point pre-model"])
    q = f.dim
    rate = backward_rate_mu(orbit)
    ugrid = _model_grid(q, grid_size, seed)
    if isinstance(orbit.chart, ProductChart):
        ugrid = [np.where(orbit.chart.halfplane, u, 0.5 * (u - 1j) / (u + 1j)) for u in ugrid]
    alpha, conv = backward_limit_map(orbit, ugrid, tol)
    if not conv.converged:
        raise ModelNotConverged("backward limit maps did not converge", conv)
    M = alpha.M
    if M + 1 >= len(orbit):
        raise ModelNotConverged("backward orbit ends at the convergence horizon; tau needs one more point", conv)
    J = alpha.jacobian(orbit.chart.base)
    s = np.linalg.svd(J, compute_uv=False)
    k = int(np.sum(s > svd_tol * s[0]))
    warnings = []
    chart = orbit.chart
    if isinstance(chart, ProductChart):
        if k != 1:
            raise NormalFormUnavailable("normal forms for polydisc retracts of rank > 1 are not available")
        hp = np.flatnonzero(chart.halfplane)
        j = int(hp[np.argmax(np.linalg.norm(J[:, hp], axis=0))])
        sl = Slice(np.zeros((0, 0)), coordinate=j)
        bM = chart.normalizer(orbit.chart_points[M])
        bN = chart.normalizer(orbit.chart_points[M + 1])
        tau_r = _product_backward_tau(bM, bN, j)
        leak = 0.0
    else:
        sl = _row_space_slice(J, k)
        a = chart.normalizer(orbit.chart_points[M]).affine
        b = chart.normalizer(orbit.chart_points[M + 1]).affine
        tau = b.compose(a.inverse())
        leak = sl.leakage(tau)
        tau_r = sl.restrict(tau)
    if leak > 1e-6:
        warnings.append(f"tau leaves the retract slice by {leak:.3g}")
    nf = siegel_normal_form(tau_r)
    if nf.kind is not ModelKind.HYPERBOLIC:
        warnings.append(f"normal form is {nf.kind.value}, expected hyperbolic")
    mu_nf = None if nf.scale is None else 1.0 / nf.scale
    h = PreIntertwiner(alpha, sl, nf.gamma)
    model = PreModel(k, rate.value, nf.kind, nf.angles, h, nf.phi, {}, conv, M, orbit.lam, warnings)
    mgrid = _model_grid(k, grid_size, seed + 1)
    model.residuals.update({
        "commutation": pre_commutation_residual(f, model, mgrid),
        "normal_form": nf.residual,
        "mu_normal_form": mu_nf,
        "mu_tail": list(rate.tail),
        "slice_leakage": leak,
        "grid_size": len(mgrid),
    })
    if orbit.lam is not None and rate.value < orbit.lam - 1e-6:
        warnings.append("mu is below the dilation at the target")
    stable = 0
    for w in mgrid[:spot_checks]:
        try:
            res = stable_membership(f, orbit.target, h(w), N=20, lam=orbit.lam)
        except Exception as exc:  # report-only spot check
            log.debug("spot check failed: %s", exc)
            continue
        stable += bool(res.member)
    model.residuals["stable_spot_checks"] = [stable, min(spot_checks, len(mgrid))]
    return model


def _product_backward_tau(frame_m, frame_n, j: int) -> AffineMap:
    bM, aM = frame_m.coordinate_affine(j)
    bN, aN = frame_n.coordinate_affine(j)
    return AffineMap(np.array([[bM / bN]], dtype=np.complex128), np.array([(aM - aN) / bN], dtype=np.complex128))


@dataclass(frozen=True)
class PreModelCheck:
    point_model: bool
    commutation: float
    pullback: tuple
    pullback_monotone: bool
    boundary_distance: float
    boundary_ok: bool
    mu: float
    lam: float | None
    mu_ge_lambda: bool

    def to_json(self) -> dict:
        return {
            "point_model": self.point_model,
            "commutation": self.commutation,
            "pullback": [[m, r] for m, r in self.pullback],
            "pullback_monotone": self.pullback_monotone,
            "boundary_distance": self.boundary_distance,
            "boundary_ok": self.boundary_ok,
            "mu": self.mu,
            "lambda": self.lam,
            "mu_ge_lambda": self.mu_ge_lambda,
        }


def verify_pre_model(f: MapExpr, model: PreModel, grid=None, m: int = 30, n_pairs: int = 30,
                     T: float = 1e6, boundary_tol: float = 1e-3, seed: int = 0) -> PreModelCheck:
    """Commutation, distance pullback along ``phi^-m`` and the boundary limit of ``h(iT)``."""
    if model.kind is ModelKind.POINT:
        return PreModelCheck(True, 0.0, (), True, 0.0, True, model.mu, model.lam, True)
    k = model.retract_dim
    grid = _model_grid(k, 64, seed + 1) if grid is None else grid
    comm = pre_commutation_residual(f, model, grid)
    h = model.intertwiner
    chart = h.alpha.orbit.chart
    phi_inv = model.phi.inverse()
    pairs = _pairs(grid, n_pairs, seed + 7)
    dw = [siegel_distance(a, b) for a, b in pairs]
    cur = list(pairs)
    pull, signed = [], []
    for step in range(1, m + 1):
        cur = [(phi_inv(a), phi_inv(b)) for a, b in cur]
        dev = [d - chart.distance(h.chart_eval(a), h.chart_eval(b)) for (a, b), d in zip(cur, dw)]
        pull.append((step, float(max(abs(v) for v in dev))))
        signed.append(max(dev))
    monotone = bool(np.all(np.diff(signed) <= 1e-12))
    top = np.zeros(k, dtype=np.complex128)
    top[0] = 1j * T
    target = model.intertwiner.alpha.orbit.target.direction
    bdist = float(np.linalg.norm(h(top) - target))
    lam = model.lam
    ok = True if lam is None else bool(model.mu >= lam - 1e-6)
    return PreModelCheck(False, comm, tuple(pull), monotone, bdist, bdist <= boundary_tol, model.mu, lam, ok)


@dataclass(frozen=True)
class Membership:
    member: bool
    certificate: BackwardOrbit | None
    reason: str


def stable_membership(f: MapExpr, zeta, z, N: int = 40, approach_tol: float = 1e-3,
                      lam: float | None = None, step_cap: float = 10.0) -> Membership:
    """Whether ``z`` starts a bounded-step backward orbit converging to ``zeta``."""
    zeta = zeta if isinstance(zeta, BoundaryPoint) else BoundaryPoint(zeta)
    try:
        orbit = backward_orbit(f, z, zeta, N=N, lam=lam, step_cap=step_cap)
    except (NewtonFailed, StepUnbounded, NotRepelling) as exc:
        return Membership(False, None, f"{type(exc).__name__}: {exc}")
    gap = float(np.linalg.norm(orbit.points[-1] - zeta.direction))
    if gap >= approach_tol:
        return Membership(False, orbit, f"y_N is {gap:.3g} away from the target")
    return Membership(True, orbit, "bounded-step orbit reaches the target")


def orbits_equivalent(a: BackwardOrbit, b: BackwardOrbit, bound: float) -> bool:
    """Operational equivalence: ``k(y_n, y'_n) <= bound`` over the common range."""
    if a.chart is not b.chart:
        raise ValueError("orbits must be computed in the same chart")
    n = min(len(a), len(b))
    return all(a.chart.distance(a.chart_points[i], b.chart_points[i]) <= bound for i in range(n))


__all__ = [
    "BackwardOrbit",
    "backward_orbit",
    "backward_step_sigma",
    "backward_rate_mu",
    "RateEstimate",
    "PreModel",
    "canonical_pre_model",
    "verify_pre_model",
    "stable_membership",
    "Membership",
    "orbits_equivalent",
]
