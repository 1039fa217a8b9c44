"""Classification of self-maps and their forward invariants.

Rates (divergence rate, and the backward rate in ``backward_model``) are
reported for the curvature -1 normalization of the Kobayashi distance, that
is ``RATE_SCALE`` times the growth of the ``atanh`` distance used by
``geometry``.  With this convention the divergence rate of a hyperbolic map
equals ``-log(dilation)``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .charts import Chart, chart_for
from .errors import NoConvergence, NotAFixedDirection, PoleHit
from .geometry import BoundaryPoint, DomainKind, as_vec
from .holomap import COMPENSATED_AFTER, MapExpr, sample_domain

log = logging.getLogger(__name__)

RATE_SCALE = 2.0
OVERFLOW_CAP = 1e300


@dataclass(frozen=True)
class Tolerances:
    fixed_tol: float = 1e-12
    boundary_cut: float = 1e-9
    interior_margin: float = 1e-6
    dilation_tol: float = 1e-4
    rate_tol: float = 1e-3
    step_tol: float = 1e-9
    step_positive_tol: float = 1e-6
    max_iter: int = 10 ** 6
    rate_horizon: int = 32768

    def replace(self, **kw) -> "Tolerances":
        vals = {**self.__dict__, **kw}
        return Tolerances(**vals)


DEFAULT_TOL = Tolerances()


class MapKind(str, enum.Enum):
    ELLIPTIC = "elliptic"
    PARABOLIC = "parabolic"
    HYPERBOLIC = "hyperbolic"


@dataclass(frozen=True)
class Estimate:
    """A numerical limit together with how it was obtained."""

    value: float
    index: int
    converged: bool
    history: tuple = field(default=(), repr=False)

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class DilationEstimate:
    value: float
    depth: int
    ratios: tuple
    method: str = "radial estimate"
    oscillating: bool = False

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class ClassificationReport:
    kind: MapKind
    dw_point: object  # interior ndarray or BoundaryPoint
    dilation: float | None
    divergence_rate: float
    nonzero_step: bool
    diagnostics: dict

    def to_json(self) -> dict:
        if isinstance(self.dw_point, BoundaryPoint):
            dw = {"boundary": True, "point": _cjson(self.dw_point.direction)}
        else:
            dw = {"boundary": False, "point": _cjson(self.dw_point)}
        return {
            "kind": self.kind.value,
            "dw": dw,
            "lambda": self.dilation,
            "c": self.divergence_rate,
            "nonzero_step": self.nonzero_step,
            "diagnostics": self.diagnostics,
        }


def _cjson(v):
    return [[float(c.real), float(c.imag)] for c in np.asarray(v).ravel()]


# ------------------------------------------------------------ Denjoy-Wolff


def _origin(f: MapExpr) -> np.ndarray:
    return np.zeros(f.dim, dtype=np.complex128)


def _snap(p: np.ndarray, f: MapExpr, tol: float) -> np.ndarray | None:
    """Round ``p`` to six decimals; keep it only if ``f`` fixes it to ``tol``."""
    cand = np.round(p.real, 6) + 1j * np.round(p.imag, 6)
    if f.domain.kind is DomainKind.BALL:
        n = np.linalg.norm(cand)
        if n == 0:
            return None
        cand = cand / n if abs(n - 1.0) > 1e-15 else cand
    try:
        ok = np.linalg.norm(f(cand) - cand) <= tol
    except (PoleHit, ZeroDivisionError, FloatingPointError):
        return None
    return cand if ok else None


def _newton_fixed(f: MapExpr, z0, iters: int = 60):
    z = np.asarray(z0, dtype=np.complex128)
    eye = np.eye(f.dim)
    for _ in range(iters):
        try:
            g = f(z) - z
            step = np.linalg.solve(f.jacobian(z) - eye, g)
        except (PoleHit, np.linalg.LinAlgError):
            return None
        z = z - step
        if not np.all(np.isfinite(z)):
            return None
        if np.linalg.norm(step) < 1e-15:
            break
    return z


def _boundary_limit(f: MapExpr, x: np.ndarray, tol: Tolerances):
    if f.domain.kind is DomainKind.BALL:
        p = x / np.linalg.norm(x)
    else:
        mod = np.abs(x)
        near = 1.0 - mod < np.sqrt(tol.boundary_cut)
        p = np.where(near, x / np.where(mod == 0, 1, mod), x)
    polished = _newton_fixed(f, p, 60)
    for cand in (p, polished):
        if cand is None:
            continue
        snapped = _snap(cand, f, tol.fixed_tol)
        if snapped is not None:
            return snapped
    # parabolic fixed points are double roots: Newton reaches only ~sqrt(eps)
    if polished is not None and np.linalg.norm(f(polished) - polished) <= 1e-12:
        if f.domain.kind is DomainKind.BALL and abs(np.linalg.norm(polished) - 1) < 1e-7:
            return polished / np.linalg.norm(polished)
    return p


@dataclass(frozen=True)
class DenjoyWolffInfo:
    point: object
    iterations: int
    method: str


def denjoy_wolff(f: MapExpr, tol: float = DEFAULT_TOL.fixed_tol, max_iter: int = 200_000,
                 boundary_cut: float = DEFAULT_TOL.boundary_cut, return_info: bool = False):
    """Interior attracting fixed point, or the boundary Denjoy-Wolff point of ``f``.

    Iterates from the origin.  A boundary limit is snapped to a nearby point
    with six-decimal coordinates when ``f`` fixes that point to ``tol``, and
    otherwise polished by Newton's method on ``f(z) = z``.
    """
    info = _denjoy_wolff_cached(f, float(tol), int(max_iter), float(boundary_cut))
    return info if return_info else info.point


@lru_cache(maxsize=128)
def _denjoy_wolff_cached(f: MapExpr, tol: float, max_iter: int, boundary_cut: float) -> DenjoyWolffInfo:
    tols = DEFAULT_TOL.replace(fixed_tol=tol, boundary_cut=boundary_cut)
    x = _origin(f)
    dom = f.domain
    if dom.kind is DomainKind.SIEGEL:
        raise NoConvergence("Denjoy-Wolff detection works on ball or polydisc maps")
    hit_at = None
    for n in range(1, max_iter + 1):
        y = f(x, n > COMPENSATED_AFTER)
        step = np.linalg.norm(y - x)
        defect = dom.defect(y)
        x = y
        if hit_at is None and step <= tol and defect > tols.interior_margin:
            return DenjoyWolffInfo(y, n, "iteration")
        if dom.kind is DomainKind.BALL:
            if defect < boundary_cut:
                return DenjoyWolffInfo(BoundaryPoint(_boundary_limit(f, y, tols)), n, "iteration")
        elif defect < boundary_cut:
            # remaining coordinates may still be converging inside the disc
            if hit_at is None:
                hit_at = n
            interior = np.abs(y) < 1.0 - np.sqrt(boundary_cut)
            if not interior.any() or step <= tol or n - hit_at > 10_000:
                return DenjoyWolffInfo(BoundaryPoint(_boundary_limit(f, y, tols)), n, "iteration")
    # rotation-type elliptic maps never settle; look for an interior fixed point instead
    for start in [_origin(f)] + sample_domain(dom, 32, seed=7, radius=0.95):
        z = _newton_fixed(f, start)
        if z is not None and dom.contains(z) and np.linalg.norm(f(z) - z) <= max(tol, 1e-12):
            return DenjoyWolffInfo(z, max_iter, "newton")
    raise NoConvergence(f"no limit detected within {max_iter} iterations", tail=[x])


# -------------------------------------------------------------- dilation


def boundary_dilation(f: MapExpr, zeta, depth: int = 40, tail_fraction: float = 0.25) -> DilationEstimate:
    """Radial estimate of the dilation of ``f`` at the boundary point ``zeta``.

    Samples ``(1 - 2^-j) zeta`` for ``j = 4..depth`` in the chart at ``zeta``
    and returns the smallest ratio ``(1 - |f(z)|) / (1 - |z|)`` over the
    deepest ``tail_fraction`` of the samples.
    """
    chart = chart_for(f, zeta)
    direction = np.asarray(getattr(zeta, "direction", zeta), dtype=np.complex128).ravel()
    ratios, gaps = [], []
    for j in range(4, depth + 1):
        eps = 2.0 ** -j
        Z = chart.radial_point(eps)
        FZ = chart.F(Z)
        ratios.append(chart.defect(FZ) / chart.defect(Z))
        gaps.append(float(np.linalg.norm(chart.from_chart(FZ) - direction)))
    if not (gaps[-1] < 1e-6 and gaps[-1] < gaps[0]):
        raise NotAFixedDirection(f"f does not fix {direction} radially (gap {gaps[-1]:.3g})")
    ratios = np.array(ratios)
    n_tail = max(2, int(np.ceil(ratios.size * tail_fraction)))
    tail = ratios[-n_tail:]
    if tail[-1] > 1e12 or (np.all(np.diff(tail) > 0) and tail[-1] > 2 * tail[0] > 0 and tail[-1] > 1e6):
        return DilationEstimate(float("inf"), depth, tuple(ratios))
    d = np.diff(tail)
    oscillating = bool(np.any(d > 1e-12) and np.any(d < -1e-12) and np.ptp(tail) > 1e-8)
    if oscillating:
        log.warning("radial dilation samples oscillate at %s", direction)
    return DilationEstimate(float(tail.min()), depth, tuple(ratios), oscillating=oscillating)


# ---------------------------------------------------------- steps and rate


def _chart_of(f: MapExpr) -> Chart:
    dw = denjoy_wolff(f)
    if isinstance(dw, BoundaryPoint):
        return chart_for(f, dw)
    return chart_for(f, None)


def chart_orbit(chart: Chart, X0, n: int) -> list:
    """Up to ``n`` forward iterates in chart coordinates, stopping before overflow."""
    pts = [np.asarray(X0, dtype=np.complex128)]
    X = pts[0]
    for _ in range(n):
        X = chart.F(X)
        if not np.all(np.isfinite(X)) or chart.magnitude(X) > OVERFLOW_CAP:
            break
        pts.append(X)
    return pts


def forward_step(f: MapExpr, x, m: int, n_max: int = 10_000, step_tol: float = DEFAULT_TOL.step_tol) -> Estimate:
    """The m-step ``lim_n k(f^n x, f^(n+m) x)`` at its plateau index."""
    if m < 0:
        raise ValueError("m must be non-negative")
    x = f.domain.check(x)
    if m == 0:
        return Estimate(0.0, 0, True, (0.0,))
    chart = _chart_of(f)
    X = chart.to_chart(x)
    window = [X]
    for _ in range(m):
        window.append(chart.F(window[-1]))
    seq = [chart.distance(window[0], window[m])]
    for n in range(1, n_max + 1):
        nxt = chart.F(window[-1])
        if not np.all(np.isfinite(nxt)) or chart.magnitude(nxt) > OVERFLOW_CAP:
            return Estimate(seq[-1], n - 1, False, tuple(seq))
        window = window[1:] + [nxt]
        seq.append(chart.distance(window[0], window[m]))
        if seq[-2] - seq[-1] < step_tol:
            return Estimate(seq[-1], n, True, tuple(seq))
    return Estimate(seq[-1], n_max, False, tuple(seq))


def divergence_rate(f: MapExpr, x=None, m_max: int = 2048) -> Estimate:
    """``min_m RATE_SCALE * k(f^m x, x) / m`` over ``m <= m_max``.

    Iterates that would overflow the chart stop the scan early; the index
    of the last usable iterate is reported.
    """
    x = _origin(f) if x is None else f.domain.check(x)
    chart = _chart_of(f)
    pts = chart_orbit(chart, chart.to_chart(x), m_max)
    vals = [RATE_SCALE * chart.distance(pts[m], pts[0]) / m for m in range(1, len(pts))]
    if not vals:
        return Estimate(0.0, 0, False, ())
    best = float(min(vals))
    return Estimate(best, len(vals), len(vals) == m_max, tuple(vals[-3:]))


def classify_map(f: MapExpr, tol: Tolerances = DEFAULT_TOL, seed: int = 0, n_base: int = 8) -> ClassificationReport:
    """Elliptic / parabolic / hyperbolic type, Denjoy-Wolff point, dilation, rate and step positivity."""
    info = denjoy_wolff(f, tol.fixed_tol, min(tol.max_iter, 200_000), tol.boundary_cut, return_info=True)
    dw = info.point
    rate = divergence_rate(f, m_max=tol.rate_horizon)
    bases = [0.5 * b for b in sample_domain(f.domain, n_base, seed=seed)]
    steps = [float(forward_step(f, b, 1, step_tol=tol.step_tol)) for b in bases]
    diag = {
        "dw_iterations": info.iterations,
        "dw_method": info.method,
        "rate_horizon": rate.index,
        "rate_tail": list(rate.history),
        "min_step": float(min(steps)),
        "tolerances": dict(tol.__dict__),
        "warnings": [],
    }
    nonzero = bool(min(steps) > tol.step_positive_tol)
    if not isinstance(dw, BoundaryPoint):
        resid = float(np.linalg.norm(f(dw) - dw))
        diag["fixed_residual"] = resid
        if resid > max(tol.fixed_tol, 1e-12):
            diag["warnings"].append("interior fixed point residual above fixed_tol")
        return ClassificationReport(MapKind.ELLIPTIC, dw, None, float(rate), nonzero, diag)
    dil = boundary_dilation(f, dw)
    lam = float(dil)
    diag["dilation_method"] = dil.method
    if dil.oscillating:
        diag["warnings"].append("radial dilation samples oscillate")
    if abs(lam - 1.0) <= tol.dilation_tol:
        kind = MapKind.PARABOLIC
        if float(rate) > tol.rate_tol:
            diag["warnings"].append("parabolic map with divergence rate above rate_tol")
    else:
        kind = MapKind.HYPERBOLIC
        gap = abs(float(rate) + np.log(lam))
        diag["rate_identity_gap"] = float(gap)
        if gap > tol.rate_tol:
            diag["warnings"].append("divergence rate differs from -log(dilation) by more than rate_tol")
    return ClassificationReport(kind, dw, lam, float(rate), nonzero, diag)


def map_chart(f: MapExpr) -> Chart:
    """The chart used for orbit computations of ``f`` (adapted to its Denjoy-Wolff point)."""
    return _chart_of(f)


__all__ = [
    "RATE_SCALE",
    "Tolerances",
    "MapKind",
    "Estimate",
    "DilationEstimate",
    "ClassificationReport",
    "denjoy_wolff",
    "boundary_dilation",
    "forward_step",
    "divergence_rate",
    "classify_map",
    "chart_orbit",
    "map_chart",
    "as_vec",
]
