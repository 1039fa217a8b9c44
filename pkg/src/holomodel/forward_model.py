"""Canonical semi-models for forward iteration.

The orbit of a base point is followed in the chart adapted to the
Denjoy-Wolff point.  Each orbit point ``X_n`` is sent back to the chart base
point by a normalizing automorphism ``A_n``, and the limit maps
``alpha_n = lim_m A_m o F^(m-n)`` are evaluated at the first horizon where
they stop moving on a sample grid.  The automorphism ``tau`` of the retract
satisfies ``tau o alpha_n = alpha_n o F`` and equals ``lim_m A_m o A_(m+1)^-1``.
It is finally conjugated to an affine normal form on the Siegel half-space
``H^k``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import polar, schur

from .charts import Chart, ProductChart, SiegelChart
from .dynamics import (
    DEFAULT_TOL,
    MapKind,
    OVERFLOW_CAP,
    RATE_SCALE,
    Tolerances,
    classify_map,
    map_chart,
)
from .errors import (
    ModelNotConverged,
    NormalFormUnavailable,
    OrbitEscapedDomain,
    RankUnstable,
    WrongKind,
)
from .geometry import (
    AffineMap,
    BallAutomorphism,
    CayleyDirection,
    DomainKind,
    ball_mobius,
    cayley_transform,
    heisenberg_translation,
    siegel_dilation,
    siegel_distance,
)
from .holomap import MapExpr, sample_domain

log = logging.getLogger(__name__)

OSCILLATION_WINDOW = 32
HEISENBERG_THRESHOLD = 1e-6


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class ConvergenceReport:
    horizon_used: int
    sup_residual: float
    converged: bool
    oscillation_detected: bool
    tol: float

    def to_json(self) -> dict:
        return {
            "horizon_used": self.horizon_used,
            "sup_residual": self.sup_residual,
            "converged": self.converged,
            "oscillation_detected": self.oscillation_detected,
            "tol": self.tol,
        }


def _to_ball(chart: Chart, U) -> np.ndarray:
    """Normalized chart coordinates (base point -> origin) to ball/polydisc coordinates."""
    U = np.asarray(U, dtype=np.complex128)
    if isinstance(chart, SiegelChart):
        return cayley_transform(U, CayleyDirection.SIEGEL_TO_BALL)
    if isinstance(chart, ProductChart):
        out = U.copy()
        hp = chart.halfplane
        out[hp] = (U[hp] - 1j) / (U[hp] + 1j)
        return out
    return U


def _from_ball(chart: Chart, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    if isinstance(chart, SiegelChart):
        return cayley_transform(z, CayleyDirection.BALL_TO_SIEGEL)
    if isinstance(chart, ProductChart):
        out = z.copy()
        hp = chart.halfplane
        out[hp] = 1j * (1 + z[hp]) / (1 - z[hp])
        return out
    return z


def frame_automorphism(chart: Chart, frame, center) -> BallAutomorphism:
    """The ball automorphism ``x -> frame(chart(x))`` written as ``V o phi_center``.

    ``V`` is read off as the derivative at 0 of ``g o phi_center`` and cleaned
    to an exact unitary by polar decomposition.
    """
    center = np.asarray(center, dtype=np.complex128)
    q = center.size
    dom = chart.domain

    def g(x):
        return _to_ball(chart, frame(chart.to_chart(x)))

    def phi(z):
        if dom.kind is DomainKind.POLYDISC:
            return (center - z) / (1.0 - np.conj(center) * z)
        return ball_mobius(center, z)

    h = 1e-7
    J = np.empty((q, q), dtype=np.complex128)
    for j in range(q):
        e = np.zeros(q, dtype=np.complex128)
        e[j] = h
        J[:, j] = (g(phi(e)) - g(phi(-e))) / (2 * h)
    V, _ = polar(J)
    if dom.kind is DomainKind.POLYDISC:
        d = np.diag(V)
        V = np.diag(d / np.abs(d))
    return BallAutomorphism(center, V, dom)


@dataclass(eq=False)
class RenormalizedSystem:
    """Orbit of ``x0`` in chart coordinates together with its normalizing frames."""

    f: MapExpr
    base: np.ndarray
    chart: Chart
    orbit: list
    horizon: int
    _frames: dict = field(default_factory=dict, repr=False)

    def frame(self, n: int):
        """Normalizer ``A_n`` in chart coordinates, ``A_n(X_n) = chart.base``."""
        if n not in self._frames:
            self._frames[n] = self.chart.normalizer(self.orbit[n])
        return self._frames[n]

    def automorphism(self, n: int) -> BallAutomorphism:
        """``h_n`` as a ball (or polydisc) automorphism with ``h_n(f^n(x0)) = 0``."""
        y = self.chart.from_chart(self.orbit[n])
        return frame_automorphism(self.chart, self.frame(n), y)

    @property
    def autos(self) -> list:
        return [self.automorphism(n) for n in range(self.horizon + 1)]

    def renormalized(self, n: int, m: int, u):
        """``f~_{n,m} = A_m o F^(m-n) o A_n^-1`` in normalized coordinates."""
        X = self.frame(n).inv(u)
        for _ in range(m - n):
            X = self.chart.F(X)
        return self.frame(m)(X)


def build_renormalized_system(f: MapExpr, x0, N: int = 1000) -> RenormalizedSystem:
    """Chart orbit of ``x0`` up to ``N`` steps, truncated before floating overflow."""
    x0 = f.domain.check(x0)
    chart = map_chart(f)
    X = chart.to_chart(x0)
    orbit = [X]
    for n in range(N):
        X = chart.F(X)
        if not np.all(np.isfinite(X)) or chart.magnitude(X) > OVERFLOW_CAP / 1e6:
            break
        if not chart.contains(X):
            raise OrbitEscapedDomain(f"iterate {n + 1} left the domain")
        orbit.append(X)
    return RenormalizedSystem(f, x0, chart, orbit, len(orbit) - 1)


@dataclass(eq=False)
class LimitMap:
    """``alpha_n(X) = A_M(F^(M-n)(X))`` at the convergence horizon ``M`` (chart coordinates)."""

    system: RenormalizedSystem
    n: int
    M: int

    def chart_eval(self, X):
        X = np.asarray(X, dtype=np.complex128)
        for _ in range(self.M - self.n):
            X = self.system.chart.F(X)
        return self.system.frame(self.M)(X)

    def __call__(self, x):
        return self.chart_eval(self.system.chart.to_chart(x))

    def jacobian(self, X, rel_step: float = 1e-6) -> np.ndarray:
        X = np.asarray(X, dtype=np.complex128)
        q = X.size
        h = rel_step * max(1.0, float(np.max(np.abs(X))))
        J = np.empty((q, q), dtype=np.complex128)
        for j in range(q):
            e = np.zeros(q, dtype=np.complex128)
            e[j] = h
            J[:, j] = (self.chart_eval(X + e) - self.chart_eval(X - e)) / (2 * h)
        return J


def default_grid(f: MapExpr, n: int = 64, seed: int = 0, radius: float = 0.9) -> list:
    return sample_domain(f.domain, n, seed=seed, radius=radius)


def direct_limit_map(sys: RenormalizedSystem, n: int = 0, grid=None, tol: float = 1e-10):
    """Limit evaluator ``alpha_n`` and its convergence report.

    ``grid`` holds domain points at time ``n``.  The horizon is the first
    ``m`` at which the sup-grid displacement between consecutive
    approximations falls below ``tol``; if no new minimum of the displacement
    appears within ``OSCILLATION_WINDOW`` steps the sequence is reported as
    oscillating.
    """
    if n > sys.horizon:
        raise ValueError("n exceeds the system horizon")
    chart = sys.chart
    grid = default_grid(sys.f) if grid is None else grid
    Xs = [chart.to_chart(x) for x in grid]
    cur = [sys.frame(n)(X) for X in Xs]
    best, best_at, disp = np.inf, n, np.inf
    oscillating = False
    m = n
    while m < sys.horizon:
        Xs = [chart.F(X) for X in Xs]
        m += 1
        nxt = [sys.frame(m)(X) for X in Xs]
        disp = float(max(np.max(np.abs(a - b)) for a, b in zip(nxt, cur)))
        cur = nxt
        if not np.isfinite(disp):
            break
        if disp < best:
            best, best_at = disp, m
        if disp < tol:
            break
        if m - best_at >= OSCILLATION_WINDOW:
            oscillating = True
            break
    converged = bool(disp < tol)
    report = ConvergenceReport(m, float(disp), converged, oscillating, tol)
    return LimitMap(sys, n, m), report


def retract_rank(alpha0: LimitMap, probe=None, svd_tol: float = 1e-4, n_probes: int = 3,
                 return_votes: bool = False):
    """Number of singular values of the Jacobian of ``alpha0`` above ``svd_tol`` times the largest.

    Evaluated at ``probe`` and at further deterministic probes; the majority
    answer is returned.
    """
    sys = alpha0.system
    probes = [sys.base if probe is None else sys.f.domain.check(probe)]
    probes += sample_domain(sys.f.domain, n_probes - 1, seed=11, radius=0.5)
    votes = []
    for p in probes:
        s = np.linalg.svd(alpha0.jacobian(sys.chart.to_chart(p)), compute_uv=False)
        votes.append(int(np.sum(s > svd_tol * s[0])) if s[0] > 0 else 0)
    values, counts = np.unique(votes, return_counts=True)
    if counts.max() * 2 <= len(votes):
        raise RankUnstable(f"probes disagree on the retract dimension: {votes}")
    k = int(values[np.argmax(counts)])
    if len(set(votes)) > 1:
        log.warning("retract dimension probes disagree: %s", votes)
    return (k, votes) if return_votes else k


# --------------------------------------------------------------- normal form


class ModelKind(str, enum.Enum):
    POINT = "point"
    HYPERBOLIC = "hyperbolic"
    PARABOLIC_ABELIAN = "parabolic_abelian"
    PARABOLIC_HEISENBERG = "parabolic_heisenberg"


@dataclass(frozen=True, eq=False)
class NormalForm:
    """``phi = gamma o tau o gamma^-1`` in one of the affine normal forms on ``H^k``."""

    kind: ModelKind
    scale: float | None  # z-multiplier of phi in the hyperbolic case
    sign: int | None
    angles: tuple
    gamma: AffineMap
    phi: AffineMap
    residual: float


def normal_form_map(kind: ModelKind, k: int, scale: float = 1.0, sign: int = 1, angles=()) -> AffineMap:
    """The exact normal-form automorphism of ``H^k``.

    Hyperbolic: ``(z, w) -> (s z, sqrt(s) e^{it_j} w_j)``; abelian parabolic:
    ``(z +- 1, e^{it_j} w_j)``; Heisenberg parabolic:
    ``(z - 2 w_1 + i, w_1 - i, e^{it_j} w_j)``.
    """
    angles = np.asarray(angles, dtype=float)
    rot = np.exp(1j * angles)
    m = np.zeros((k, k), dtype=np.complex128)
    off = np.zeros(k, dtype=np.complex128)
    if kind is ModelKind.HYPERBOLIC:
        m[0, 0] = scale
        m[1:, 1:] = np.diag(np.sqrt(scale) * rot)
    elif kind is ModelKind.PARABOLIC_ABELIAN:
        m[0, 0] = 1.0
        m[1:, 1:] = np.diag(rot)
        off[0] = sign
    elif kind is ModelKind.PARABOLIC_HEISENBERG:
        m[0, 0] = 1.0
        m[0, 1] = -2.0
        m[1, 1] = 1.0
        m[2:, 2:] = np.diag(rot)
        off[0] = 1j
        off[1] = -1j
    else:
        m = np.eye(k, dtype=np.complex128)
    return AffineMap(m, off)


def _sorted_schur(U: np.ndarray):
    """Unitary ``Q`` and angles with ``Q^H U Q = diag(e^{i angles})``, sorted by angle."""
    if U.size == 0:
        return np.zeros((0, 0), dtype=np.complex128), ()
    T, Q = schur(U, output="complex")
    ang = np.angle(np.diag(T))
    ang = np.where(np.abs(ang) < 1e-12, 0.0, ang)
    order = np.argsort(ang, kind="stable")
    return Q[:, order], tuple(float(a) for a in ang[order])


def _block(Q: np.ndarray) -> AffineMap:
    k = Q.shape[0] + 1
    m = np.eye(k, dtype=np.complex128)
    m[1:, 1:] = Q.conj().T
    return AffineMap(m, np.zeros(k, dtype=np.complex128))


def _conj(gamma: AffineMap, tau: AffineMap) -> AffineMap:
    return gamma.compose(tau).compose(gamma.inverse())


def _affine_dist(a: AffineMap, b: AffineMap) -> float:
    return float(max(np.max(np.abs(a.matrix - b.matrix)), np.max(np.abs(a.offset - b.offset))))


def siegel_normal_form(tau: AffineMap, parabolic_tol: float = 1e-6) -> NormalForm:
    """Conjugate an affine automorphism of ``H^k`` fixing infinity to its normal form."""
    M, c = tau.matrix, tau.offset
    k = M.shape[0]
    s = M[0, 0]
    if abs(s - 1.0) > parabolic_tol:
        scale = float(s.real)
        # the second boundary fixed point, then move it to the origin
        X = np.linalg.solve(np.eye(k) - M, c)
        T = heisenberg_translation(float(X[0].real), X[1:])
        t1 = _conj(T.inverse(), tau)
        Q, angles = _sorted_schur(t1.matrix[1:, 1:] / np.sqrt(scale))
        gamma = _block(Q).compose(T.inverse())
        phi = normal_form_map(ModelKind.HYPERBOLIC, k, scale, angles=angles)
        return NormalForm(ModelKind.HYPERBOLIC, scale, None, angles, gamma, phi,
                          _affine_dist(_conj(gamma, tau), phi))
    U = M[1:, 1:]
    g = c[1:]
    if k > 1:
        b0 = np.linalg.pinv(np.eye(k - 1) - U, rcond=1e-8) @ g
    else:
        b0 = np.zeros(0, dtype=np.complex128)
    Tb = heisenberg_translation(0.0, b0)
    t1 = _conj(Tb.inverse(), tau)
    g_perp = t1.offset[1:]
    if np.linalg.norm(g_perp) <= HEISENBERG_THRESHOLD:
        a = float(t1.offset[0].real)
        if abs(a) < 1e-300:
            raise NormalFormUnavailable("parabolic automorphism with vanishing translation")
        Q, angles = _sorted_schur(U)
        gamma = _block(Q).compose(siegel_dilation(1.0 / abs(a), k)).compose(Tb.inverse())
        sign = 1 if a > 0 else -1
        phi = normal_form_map(ModelKind.PARABOLIC_ABELIAN, k, sign=sign, angles=angles)
        return NormalForm(ModelKind.PARABOLIC_ABELIAN, None, sign, angles, gamma, phi,
                          _affine_dist(_conj(gamma, tau), phi))
    # Heisenberg type: rotate g_perp to -i e1 and normalize its length
    v1 = g_perp / np.linalg.norm(g_perp)
    proj = np.eye(k - 1) - np.outer(v1, v1.conj())
    rest = np.linalg.svd(proj)[0][:, : k - 2]
    Ur = rest.conj().T @ t1.matrix[1:, 1:] @ rest
    Qr, angles = _sorted_schur(Ur)
    Q = np.column_stack([v1, rest @ Qr]) if k > 2 else v1.reshape(-1, 1)
    R = np.eye(k, dtype=np.complex128)
    R[1:, 1:] = Q.conj().T
    R[1, :] *= -1j
    rot = AffineMap(R, np.zeros(k, dtype=np.complex128))
    dil = siegel_dilation(1.0 / float(np.linalg.norm(g_perp)) ** 2, k)
    pre = dil.compose(rot).compose(Tb.inverse())
    t2 = _conj(pre, tau)
    # a real Heisenberg shift along e1 removes the remaining real z-offset
    e1 = np.zeros(k - 1, dtype=np.complex128)
    e1[0] = 1.0

    def z_offset(sv):
        S = heisenberg_translation(0.0, sv * e1)
        return float(_conj(S.inverse(), t2).offset[0].real)

    o0, o1 = z_offset(0.0), z_offset(1.0)
    sv = -o0 / (o1 - o0) if o1 != o0 else 0.0
    gamma = heisenberg_translation(0.0, sv * e1).inverse().compose(pre)
    phi = normal_form_map(ModelKind.PARABOLIC_HEISENBERG, k, angles=angles)
    return NormalForm(ModelKind.PARABOLIC_HEISENBERG, None, None, angles, gamma, phi,
                      _affine_dist(_conj(gamma, tau), phi))


def limit_tau(sys: RenormalizedSystem, M: int, forward: bool = True) -> AffineMap:
    """``A_M o A_(M+1)^-1`` (forward) or ``A_(M+1) o A_M^-1`` (backward) as an affine map."""
    a, b = sys.frame(M).affine, sys.frame(M + 1).affine
    if a is None or b is None:
        raise NormalFormUnavailable("frames are not affine in this chart")
    return a.compose(b.inverse()) if forward else b.compose(a.inverse())


@dataclass(frozen=True, eq=False)
class Slice:
    """Linear coordinates ``(z, B^H w)`` on the slice ``{w in range(B)}`` of ``H^q``."""

    basis: np.ndarray  # (q-1) x (k-1), orthonormal columns
    coordinate: int | None = None  # product charts: the retained half-plane coordinate

    def project(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.complex128)
        if self.coordinate is not None:
            return X[[self.coordinate]]
        return np.concatenate([X[:1], self.basis.conj().T @ X[1:]])

    def lift(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.complex128)
        return np.concatenate([u[:1], self.basis @ u[1:]])

    def restrict(self, tau: AffineMap) -> AffineMap:
        q = tau.matrix.shape[0]
        k = self.basis.shape[1] + 1
        S = np.zeros((k, q), dtype=np.complex128)
        S[0, 0] = 1.0
        S[1:, 1:] = self.basis.conj().T
        return AffineMap(S @ tau.matrix @ S.conj().T, S @ tau.offset)

    def leakage(self, tau: AffineMap) -> float:
        """How far ``tau`` is from preserving the slice."""
        B = self.basis
        P = np.eye(B.shape[0]) - B @ B.conj().T
        Mw = tau.matrix[1:, :]
        cols = np.column_stack([Mw[:, :1], Mw[:, 1:] @ B]) if B.size else Mw[:, :1]
        return float(max(np.max(np.abs(P @ cols), initial=0.0), np.max(np.abs(P @ tau.offset[1:]), initial=0.0)))


def siegel_slice(J: np.ndarray, k: int) -> Slice:
    """Slice spanned by the top-``k`` column space of ``J``; it must contain the z-axis."""
    q = J.shape[0]
    C = np.linalg.svd(J)[0][:, :k]
    e1 = np.zeros(q)
    e1[0] = 1.0
    if np.linalg.norm(e1 - C @ (C.conj().T @ e1)) > 1e-6:
        raise NormalFormUnavailable("the retract does not contain the boundary direction")
    if k == 1:
        return Slice(np.zeros((q - 1, 0), dtype=np.complex128))
    B = np.linalg.svd(C[1:, :])[0][:, : k - 1]
    return Slice(B)


@dataclass(eq=False)
class Intertwiner:
    """``h = gamma o slice o alpha``, a map into ``H^k``."""

    alpha: LimitMap
    slice: Slice
    gamma: AffineMap

    def chart_eval(self, X):
        return self.gamma(self.slice.project(self.alpha.chart_eval(X)))

    def __call__(self, x):
        return self.chart_eval(self.alpha.system.chart.to_chart(x))


def product_tau(sys: RenormalizedSystem, M: int, j: int, forward: bool = True) -> AffineMap:
    """Affine map of the half-plane coordinate ``j`` induced by consecutive product frames."""
    bM, aM = sys.frame(M).coordinate_affine(j)
    bN, aN = sys.frame(M + 1).coordinate_affine(j)
    if forward:
        m, o = bN / bM, (aN - aM) / bM
    else:
        m, o = bM / bN, (aM - aN) / bN
    return AffineMap(np.array([[m]], dtype=np.complex128), np.array([o], dtype=np.complex128))


def model_slice_and_tau(alpha: LimitMap, k: int, forward: bool = True):
    """Slice coordinates on the retract and ``tau`` restricted to them."""
    sys = alpha.system
    chart = sys.chart
    J = alpha.jacobian(chart.to_chart(sys.base))
    if isinstance(chart, ProductChart):
        if k != 1:
            raise NormalFormUnavailable("normal forms for polydisc retracts of rank > 1 are not available")
        hp = np.flatnonzero(chart.halfplane)
        j = int(hp[np.argmax(np.linalg.norm(J[hp, :], axis=1))])
        return Slice(np.zeros((0, 0)), coordinate=j), product_tau(sys, alpha.M, j, forward), 0.0
    if not isinstance(chart, SiegelChart):
        raise NormalFormUnavailable("no boundary chart")
    sl = siegel_slice(J, k)
    tau = limit_tau(sys, alpha.M, forward)
    return sl, sl.restrict(tau), sl.leakage(tau)


# --------------------------------------------------------------- semi-model


@dataclass(eq=False)
class SemiModel:
    retract_dim: int
    kind: ModelKind
    lam: float | None
    sign: int | None
    angles: tuple
    intertwiner: Intertwiner | None
    normal_form: NormalForm | None
    residuals: dict
    convergence: ConvergenceReport | None
    horizon: int
    x0: np.ndarray
    classification: object = None
    warnings: list = field(default_factory=list)

    @property
    def phi(self) -> AffineMap | None:
        return None if self.normal_form is None else self.normal_form.phi

    def to_json(self) -> dict:
        out = {"k": self.retract_dim, "kind": self.kind.value}
        if self.lam is not None:
            out["lambda"] = self.lam
        if self.sign is not None:
            out["sign"] = self.sign
        out["angles"] = list(self.angles)
        out["horizon"] = self.horizon
        res = dict(self.residuals)
        if self.convergence is not None:
            res["convergence"] = self.convergence.to_json()
        out["residuals"] = res
        out["warnings"] = list(self.warnings)
        return out


def commutation_residual(f: MapExpr, h: Intertwiner, phi: AffineMap, grid) -> float:
    chart = h.alpha.system.chart
    worst = 0.0
    for x in grid:
        X = chart.to_chart(x)
        worst = max(worst, siegel_distance(h.chart_eval(chart.F(X)), phi(h.chart_eval(X))))
    return float(worst)


def _point_model(f, x0, warnings, classification=None) -> SemiModel:
    warnings = list(warnings) + ["elliptic map: point model"]
    return SemiModel(0, ModelKind.POINT, None, None, (), None, None, {}, None, 0,
                     np.asarray(x0), classification, warnings)


def canonical_semi_model(f: MapExpr, x0=None, tol: float = 1e-10, N: int = 1000,
                         tolerances: Tolerances = DEFAULT_TOL, grid=None, svd_tol: float = 1e-4,
                         seed: int = 0) -> SemiModel:
    """Canonical semi-model of ``f`` with ``tau`` in affine normal form on ``H^k``."""
    x0 = np.zeros(f.dim, dtype=np.complex128) if x0 is None else f.domain.check(x0)
    report = classify_map(f, tolerances, seed=seed)
    if report.kind is MapKind.ELLIPTIC:
        log.warning("elliptic map: returning the point model")
        return _point_model(f, x0, [], report)
    sys = build_renormalized_system(f, x0, N)
    grid = default_grid(f, seed=seed) if grid is None else grid
    alpha, conv = direct_limit_map(sys, 0, grid, tol)
    if not conv.converged:
        raise ModelNotConverged("limit maps did not converge", conv)
    k = retract_rank(alpha, x0, svd_tol)
    warnings = []
    sl, tau, leak = model_slice_and_tau(alpha, k, forward=True)
    if leak > 1e-6:
        warnings.append(f"tau leaves the retract slice by {leak:.3g}")
    nf = siegel_normal_form(tau, tolerances.dilation_tol)
    h = Intertwiner(alpha, sl, nf.gamma)
    lam = None if nf.scale is None else 1.0 / nf.scale
    if lam is not None and report.dilation is not None and abs(lam - report.dilation) > tolerances.dilation_tol:
        warnings.append("normal-form rate differs from the dilation of f")
    if (nf.kind is ModelKind.HYPERBOLIC) != (report.kind is MapKind.HYPERBOLIC):
        warnings.append("normal-form type differs from the classification of f")
    c_nf = float(np.log(nf.scale)) if nf.scale is not None else 0.0
    residuals = {
        "commutation": commutation_residual(f, h, nf.phi, grid),
        "normal_form": nf.residual,
        "slice_leakage": leak,
        "rate_transfer": abs(c_nf - report.divergence_rate),
        "grid_size": len(grid),
    }
    return SemiModel(k, nf.kind, lam, nf.sign, nf.angles, h, nf, residuals, conv, alpha.M,
                     x0, report, warnings)


@dataclass(eq=False)
class ValironMap:
    """``theta = pi_1 o h``, solving ``theta o f = theta / lambda`` with values in the upper half-plane."""

    h: Intertwiner
    lam: float

    def __call__(self, x) -> complex:
        return complex(self.h(x)[0])

    def chart_eval(self, X) -> complex:
        return complex(self.h.chart_eval(X)[0])

    def residual(self, f: MapExpr, grid, scale: float = 1.0) -> float:
        chart = self.h.alpha.system.chart
        worst = 0.0
        for x in grid:
            X = chart.to_chart(x)
            t = scale * self.chart_eval(X)
            tf = scale * self.chart_eval(chart.F(X))
            worst = max(worst, abs(tf - t / self.lam) / abs(t))
        return float(worst)


def valiron_map(model: SemiModel) -> ValironMap:
    if model.kind is not ModelKind.HYPERBOLIC:
        raise WrongKind(f"the Valiron equation needs a hyperbolic model, got {model.kind.value}")
    return ValironMap(model.intertwiner, model.lam)


@dataclass(frozen=True)
class SemiModelCheck:
    point_model: bool
    commutation: float
    cover: float
    cover_ok: bool
    pullback: tuple  # (m, residual) pairs
    pullback_monotone: bool
    retraction_defect: float

    def to_json(self) -> dict:
        return {
            "point_model": self.point_model,
            "commutation": self.commutation,
            "cover": self.cover,
            "cover_ok": self.cover_ok,
            "pullback": [[m, r] for m, r in self.pullback],
            "pullback_monotone": self.pullback_monotone,
            "retraction_defect": self.retraction_defect,
        }


def _pairs(grid, n_pairs: int, seed: int):
    """Exactly ``n_pairs`` pairs of distinct grid points."""
    rng = np.random.default_rng(seed)
    n = len(grid)
    first = rng.integers(0, n, n_pairs)
    second = (first + rng.integers(1, n, n_pairs)) % n
    return [(grid[i], grid[j]) for i, j in zip(first, second)]


def verify_semi_model(f: MapExpr, model: SemiModel, grid=None, m: int = 50, n_pairs: int = 50,
                      cover_tol: float = 1.5, n_cover: int = 32, seed: int = 0) -> SemiModelCheck:
    """Commutation, exhaustion surrogate, distance pullback and retraction checks."""
    if model.kind is ModelKind.POINT:
        return SemiModelCheck(True, 0.0, 0.0, True, (), True, 0.0)
    h = model.intertwiner
    chart = h.alpha.system.chart
    grid = default_grid(f, seed=seed) if grid is None else grid
    comm = commutation_residual(f, h, model.phi, grid)
    # exhaustion: targets in H^k reached by phi^-n of the image grid
    k = model.retract_dim
    images = [h(x) for x in grid]
    phi_inv = model.phi.inverse()
    targets = sample_domain(type(f.domain).siegel(k), n_cover, seed=seed + 3, radius=0.9)
    best = np.full(len(targets), np.inf)
    pts = images
    stale = 0
    for _ in range(64):
        prev = best.copy()
        for t_i, w in enumerate(targets):
            best[t_i] = min(best[t_i], min(siegel_distance(p, w) for p in pts))
        stale = stale + 1 if np.all(best >= prev - 1e-12) else 0
        if stale >= 4:
            break
        pts = [phi_inv(p) for p in pts]
        if not all(np.isfinite(p).all() and p[0].imag - np.vdot(p[1:], p[1:]).real > 0 for p in pts):
            break
    cover = float(best.max())
    # pullback of the Kobayashi distance
    pairs = _pairs(grid, n_pairs, seed + 5)
    dh = [siegel_distance(h(x), h(y)) for x, y in pairs]
    cur = [(chart.to_chart(x), chart.to_chart(y)) for x, y in pairs]
    pull, signed = [], []
    for step in range(1, m + 1):
        cur = [(chart.F(X), chart.F(Y)) for X, Y in cur]
        dev = [chart.distance(X, Y) - d for (X, Y), d in zip(cur, dh)]
        pull.append((step, float(max(abs(v) for v in dev))))
        signed.append(max(dev))
    # k(f^m x, f^m y) is non-increasing, hence so is the signed deviation
    monotone = bool(np.all(np.diff(signed) <= 1e-12))
    # retraction: r = alpha_M o A_M^-1 on normalized coordinates should be idempotent
    sys = h.alpha.system
    M = h.alpha.M
    late = LimitMap(sys, M, min(sys.horizon, 2 * M))

    def r(u):
        return late.chart_eval(sys.frame(M).inv(u))

    defect = 0.0
    for x in grid[:16]:
        u = sys.frame(0)(chart.to_chart(x))
        ru = r(u)
        defect = max(defect, float(np.max(np.abs(r(ru) - ru))))
    return SemiModelCheck(False, comm, cover, cover <= cover_tol, tuple(pull), monotone, defect)


__all__ = [
    "ConvergenceReport",
    "RenormalizedSystem",
    "LimitMap",
    "build_renormalized_system",
    "direct_limit_map",
    "retract_rank",
    "ModelKind",
    "NormalForm",
    "normal_form_map",
    "siegel_normal_form",
    "SemiModel",
    "canonical_semi_model",
    "valiron_map",
    "verify_semi_model",
    "frame_automorphism",
    "RATE_SCALE",
]
