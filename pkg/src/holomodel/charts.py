"""Coordinate charts adapted to a boundary point.

Iterates that converge to the boundary lose all relative precision in ball
coordinates after a few dozen steps.  A ``SiegelChart`` rotates the boundary
point to (1, 0, ..., 0) and applies the Cayley transform; the conjugated map
is formed symbolically with exact rational arithmetic, so orbits near the
boundary point become orbits near infinity in the Siegel half-space, where
floating point keeps full relative accuracy.  On the polydisc a
``ProductChart`` does the same coordinate by coordinate.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

from .errors import DomainMismatch, PointOutsideDomain
from .geometry import (
    AffineMap,
    BallAutomorphism,
    DomainKind,
    DomainSpec,
    ball_defect_from_siegel,
    ball_distance,
    disc_distance,
    halfplane_distance,
    siegel_distance,
    siegel_height,
    siegel_normalizer,
)
from .holomap import MapExpr, Polynomial, RationalFunction

_PHASES = (1, -1, 1j, -1j)
# conjugated coefficients this far below the largest one are rounding residue
CHOP_REL = 1e-13


def _exact(c: complex):
    return sp.Rational(float(np.real(c))) + sp.I * sp.Rational(float(np.imag(c)))


def rotation_to_e1(zeta: np.ndarray) -> np.ndarray:
    """Unitary ``U`` with ``U @ zeta = e1``; exact when ``zeta`` is a phased basis vector."""
    q = zeta.size
    nz = np.flatnonzero(zeta)
    if nz.size == 1 and complex(zeta[nz[0]]) in _PHASES:
        k = nz[0]
        perm = list(range(q))
        perm[0], perm[k] = perm[k], perm[0]
        u = np.zeros((q, q), dtype=np.complex128)
        for row, col in enumerate(perm):
            u[row, col] = 1.0
        u[0, k] = np.conj(zeta[k])
        return u
    # Householder-type reflection composed with a phase
    phase = zeta[0] / abs(zeta[0]) if zeta[0] != 0 else 1.0
    v = zeta / phase
    e1 = np.zeros(q, dtype=np.complex128)
    e1[0] = 1.0
    w = v - e1
    if np.linalg.norm(w) < 1e-15:
        h = np.eye(q, dtype=np.complex128)
    else:
        w = w / np.linalg.norm(w)
        h = np.eye(q) - 2.0 * np.outer(w, np.conj(w))
    return h / phase


class Chart:
    """Base class; the identity chart on the ball or polydisc."""

    kind = "identity"

    def __init__(self, f: MapExpr):
        self.f = f
        self.F = f
        self.domain = f.domain
        self.q = f.domain.dim

    @property
    def base(self) -> np.ndarray:
        return np.zeros(self.q, dtype=np.complex128)

    def to_chart(self, x):
        return np.asarray(x, dtype=np.complex128)

    def from_chart(self, X):
        return np.asarray(X, dtype=np.complex128)

    def contains(self, X) -> bool:
        X = np.asarray(X)
        return bool(np.all(np.isfinite(X))) and self.domain.defect(X) > 0

    def distance(self, X, Y) -> float:
        if self.domain.kind is DomainKind.POLYDISC:
            return max(disc_distance(a, b) for a, b in zip(X, Y))
        return ball_distance(X, Y)

    def defect(self, X) -> float:
        """``1 - |x|`` of the original point (sup norm on the polydisc)."""
        return self.domain.defect(X)

    def normalizer(self, X):
        """Automorphism of chart coordinates sending ``X`` to ``base``, in a fixed gauge."""
        X = np.asarray(X, dtype=np.complex128)
        u = -np.eye(self.q, dtype=np.complex128)
        return _Frame(BallAutomorphism(X, u, self.domain))

    def linear_seed(self, Y, lam: float):
        return np.asarray(Y, dtype=np.complex128)

    def radial_point(self, eps: float) -> np.ndarray:
        raise DomainMismatch("the identity chart has no boundary point")

    def magnitude(self, X) -> float:
        return float(np.max(np.abs(X)))


class _Frame:
    """Uniform callable/inverse wrapper around a normalizing automorphism."""

    def __init__(self, auto):
        self.auto = auto
        self._inv = None

    def __call__(self, x):
        return self.auto(x)

    def inv(self, u):
        if isinstance(self.auto, AffineMap):
            if self._inv is None:
                self._inv = self.auto.inverse()
            return self._inv(u)
        return self.auto.inverse(u)

    @property
    def affine(self) -> AffineMap | None:
        return self.auto if isinstance(self.auto, AffineMap) else None


class SiegelChart(Chart):
    """Ball chart ``x -> Cayley(U x)`` with ``U zeta = e1``."""

    kind = "siegel"

    def __init__(self, f: MapExpr, zeta: np.ndarray):
        super().__init__(f)
        if f.domain.kind is not DomainKind.BALL:
            raise DomainMismatch("Siegel charts are defined on the ball")
        self.zeta = np.asarray(zeta, dtype=np.complex128)
        self.U = rotation_to_e1(self.zeta)
        self.F = _conjugate_ball(f, tuple(self.U.ravel()))

    @property
    def base(self):
        b = np.zeros(self.q, dtype=np.complex128)
        b[0] = 1j
        return b

    def to_chart(self, x):
        v = self.U @ np.asarray(x, dtype=np.complex128)
        one_minus = 1.0 - v[0]
        out = np.empty_like(v)
        out[0] = 1j * (1.0 + v[0]) / one_minus
        out[1:] = v[1:] / one_minus
        return out

    def from_chart(self, X):
        X = np.asarray(X, dtype=np.complex128)
        den = X[0] + 1j
        v = np.empty_like(X)
        v[0] = (X[0] - 1j) / den
        v[1:] = 2j * X[1:] / den
        return self.U.conj().T @ v

    def contains(self, X) -> bool:
        X = np.asarray(X)
        return bool(np.all(np.isfinite(X))) and siegel_height(X) > 0

    def distance(self, X, Y) -> float:
        return siegel_distance(X, Y)

    def defect(self, X) -> float:
        d = ball_defect_from_siegel(X)
        return d / (1.0 + np.sqrt(max(1.0 - d, 0.0)))

    def normalizer(self, X):
        return _Frame(siegel_normalizer(X))

    def linear_seed(self, Y, lam: float):
        Y = np.asarray(Y, dtype=np.complex128)
        out = Y * np.sqrt(lam)
        out[0] = Y[0] * lam
        return out

    def radial_point(self, eps: float) -> np.ndarray:
        X = np.zeros(self.q, dtype=np.complex128)
        X[0] = 1j * (2.0 - eps) / eps
        return X


class ProductChart(Chart):
    """Polydisc chart: Cayley transform in every coordinate where ``p`` is unimodular."""

    kind = "product"

    def __init__(self, f: MapExpr, p: np.ndarray):
        super().__init__(f)
        if f.domain.kind is not DomainKind.POLYDISC:
            raise DomainMismatch("product charts are defined on the polydisc")
        self.p = np.asarray(p, dtype=np.complex128)
        self.halfplane = np.isclose(np.abs(self.p), 1.0, rtol=0, atol=1e-12)
        if not self.halfplane.any():
            raise DomainMismatch("product chart needs a unimodular coordinate")
        self.F = _conjugate_polydisc(f, tuple(self.p), tuple(self.halfplane))

    @property
    def base(self):
        return np.where(self.halfplane, 1j, 0).astype(np.complex128)

    def to_chart(self, x):
        x = np.asarray(x, dtype=np.complex128)
        out = x.copy()
        for j in np.flatnonzero(self.halfplane):
            v = np.conj(self.p[j]) * x[j]
            out[j] = 1j * (1.0 + v) / (1.0 - v)
        return out

    def from_chart(self, X):
        X = np.asarray(X, dtype=np.complex128)
        out = X.copy()
        for j in np.flatnonzero(self.halfplane):
            out[j] = self.p[j] * (X[j] - 1j) / (X[j] + 1j)
        return out

    def contains(self, X) -> bool:
        X = np.asarray(X)
        if not np.all(np.isfinite(X)):
            return False
        hp = X[self.halfplane].imag > 0
        dd = np.abs(X[~self.halfplane]) < 1
        return bool(hp.all() and dd.all())

    def distance(self, X, Y) -> float:
        out = 0.0
        for j in range(self.q):
            if self.halfplane[j]:
                out = max(out, halfplane_distance(X[j], Y[j]))
            else:
                out = max(out, disc_distance(X[j], Y[j]))
        return out

    def defect(self, X) -> float:
        vals = []
        for j in range(self.q):
            if self.halfplane[j]:
                d = 4.0 * X[j].imag / abs(X[j] + 1j) ** 2
                vals.append(d / (1.0 + np.sqrt(max(1.0 - d, 0.0))))
            else:
                vals.append(1.0 - abs(X[j]))
        return float(min(vals))

    def normalizer(self, X):
        return _ProductFrame(np.asarray(X, dtype=np.complex128), self.halfplane)

    def linear_seed(self, Y, lam: float):
        Y = np.asarray(Y, dtype=np.complex128).copy()
        Y[self.halfplane] *= lam
        return Y

    def radial_point(self, eps: float) -> np.ndarray:
        X = (1.0 - eps) * self.p
        X[self.halfplane] = 1j * (2.0 - eps) / eps
        return X

    def magnitude(self, X) -> float:
        return float(np.max(np.abs(np.asarray(X)[self.halfplane])))


class _ProductFrame:
    """Coordinatewise normalizer: real affine on half-planes, Mobius on discs."""

    def __init__(self, X, halfplane):
        self.X = X
        self.halfplane = halfplane

    def __call__(self, x):
        x = np.asarray(x, dtype=np.complex128)
        out = np.empty_like(x)
        for j, a in enumerate(self.X):
            if self.halfplane[j]:
                out[j] = (x[j] - a.real) / a.imag
            else:
                out[j] = (x[j] - a) / (1.0 - np.conj(a) * x[j])
        return out

    def inv(self, u):
        u = np.asarray(u, dtype=np.complex128)
        out = np.empty_like(u)
        for j, a in enumerate(self.X):
            if self.halfplane[j]:
                out[j] = u[j] * a.imag + a.real
            else:
                out[j] = (u[j] + a) / (1.0 + np.conj(a) * u[j])
        return out

    def coordinate_affine(self, j: int) -> tuple[float, float]:
        """(scale, shift) of the half-plane coordinate ``j``: u = (x - shift) / scale."""
        a = self.X[j]
        return a.imag, a.real

    affine = None


# ------------------------------------------------------ symbolic conjugation


def _chop_poly(p: Polynomial, rel: float) -> Polynomial:
    if not p.terms:
        return p
    cut = rel * max(abs(c) for c, _ in p.terms)

    def part(x):
        return x if abs(x) > cut else 0.0

    return Polynomial(tuple((complex(part(c.real), part(c.imag)), idx) for c, idx in p.terms), p.nvars)


def _chop(m: MapExpr, rel: float = CHOP_REL) -> MapExpr:
    """Drop coefficient parts at rounding level.

    The map coefficients are doubles, so a boundary point fixed exactly by the
    intended map may be fixed only to ~1e-16 by the stored one.  Conjugation
    then leaves tiny top-degree terms that dominate near infinity.
    """
    comps = tuple(RationalFunction(_chop_poly(c.num, rel), _chop_poly(c.den, rel)) for c in m.components)
    return MapExpr(comps, m.domain, m.label)


@lru_cache(maxsize=64)
def _conjugate_ball(f: MapExpr, u_flat: tuple) -> MapExpr:
    q = f.dim
    exprs, zs = f.to_sympy(exact=True)
    W = sp.symbols(f"Z0:{q}")
    U = sp.Matrix(q, q, [_exact(c) for c in u_flat])
    den = W[0] + sp.I
    v = sp.Matrix([(W[0] - sp.I) / den] + [2 * sp.I * W[k] / den for k in range(1, q)])
    z = U.H * v
    subs = dict(zip(zs, list(z)))
    y = sp.Matrix([e.subs(subs, simultaneous=True) for e in exprs])
    y = U * y
    one_minus = 1 - y[0]
    out = [sp.I * (1 + y[0]) / one_minus] + [y[k] / one_minus for k in range(1, q)]
    return _chop(MapExpr.from_sympy(out, W, DomainSpec.siegel(q), label="siegel chart"))


@lru_cache(maxsize=64)
def _conjugate_polydisc(f: MapExpr, p: tuple, halfplane: tuple) -> MapExpr:
    q = f.dim
    exprs, zs = f.to_sympy(exact=True)
    W = sp.symbols(f"Z0:{q}")
    z = []
    for j in range(q):
        if halfplane[j]:
            z.append(_exact(p[j]) * (W[j] - sp.I) / (W[j] + sp.I))
        else:
            z.append(W[j])
    y = [e.subs(dict(zip(zs, z)), simultaneous=True) for e in exprs]
    out = []
    for j in range(q):
        if halfplane[j]:
            v = sp.conjugate(_exact(p[j])) * y[j]
            out.append(sp.I * (1 + v) / (1 - v))
        else:
            out.append(y[j])
    # the product chart is not itself a DomainSpec; the nominal domain is never used for checks
    return _chop(MapExpr.from_sympy(out, W, DomainSpec.polydisc(q), label="product chart"))


@lru_cache(maxsize=128)
def _chart_cached(f: MapExpr, point: tuple | None) -> Chart:
    if point is None:
        return Chart(f)
    p = np.array(point, dtype=np.complex128)
    if f.domain.kind is DomainKind.BALL:
        return SiegelChart(f, p)
    if f.domain.kind is DomainKind.POLYDISC:
        return ProductChart(f, p)
    raise DomainMismatch("charts are only built for ball and polydisc maps")


def chart_for(f: MapExpr, point=None) -> Chart:
    """Chart adapted to the boundary point ``point`` (identity chart when ``None``)."""
    if point is None:
        return _chart_cached(f, None)
    direction = getattr(point, "direction", point)
    p = np.asarray(direction, dtype=np.complex128).ravel()
    if p.size != f.dim:
        raise PointOutsideDomain("boundary point has the wrong dimension")
    return _chart_cached(f, tuple(complex(c) for c in p))
