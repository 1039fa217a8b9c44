"""Hyperbolic geometry of the ball, the polydisc and the Siegel half-space.

Distances use the normalization in which the Poincare distance from 0 to r
in the disc is ``atanh(r)`` and the infinitesimal metric at the origin is the
Euclidean norm.  Points are 1-D ``complex128`` numpy arrays.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmplitudeOutOfRange,
    DomainMismatch,
    PointOutsideDomain,
    SequenceTooShort,
    SingularAtBoundary,
)

ComplexVec = np.ndarray


def as_vec(p) -> ComplexVec:
    """Coerce a scalar, list or array into a finite 1-D complex vector."""
    v = np.atleast_1d(np.asarray(p, dtype=np.complex128)).ravel()
    if v.size == 0:
        raise ValueError("empty point")
    if not np.all(np.isfinite(v)):
        raise PointOutsideDomain(f"non-finite coordinates: {v}")
    return v


def hdot(a, b) -> complex:
    """Hermitian product <a, b> = sum a_j conj(b_j)."""
    return complex(np.dot(a, np.conj(b)))


class DomainKind(str, enum.Enum):
    BALL = "ball"
    POLYDISC = "polydisc"
    SIEGEL = "siegel"


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if int(self.dim) < 1:
            raise ValueError("dimension must be positive")
        object.__setattr__(self, "dim", int(self.dim))

    @classmethod
    def ball(cls, q: int = 1) -> "DomainSpec":
        return cls(DomainKind.BALL, q)

    @classmethod
    def polydisc(cls, q: int) -> "DomainSpec":
        return cls(DomainKind.POLYDISC, q)

    @classmethod
    def siegel(cls, q: int = 1) -> "DomainSpec":
        return cls(DomainKind.SIEGEL, q)

    def defect(self, p) -> float:
        """Signed margin to the boundary; positive exactly on the domain."""
        p = np.asarray(p, dtype=np.complex128)
        if self.kind is DomainKind.BALL:
            return 1.0 - float(np.linalg.norm(p))
        if self.kind is DomainKind.POLYDISC:
            return 1.0 - float(np.max(np.abs(p)))
        return siegel_height(p)

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=np.complex128).ravel()
        if p.size != self.dim or not np.all(np.isfinite(p)):
            return False
        return self.defect(p) > -tol

    def check(self, p) -> ComplexVec:
        v = as_vec(p)
        if v.size != self.dim:
            raise DomainMismatch(f"expected a point of C^{self.dim}, got C^{v.size}")
        if not self.defect(v) > 0:
            raise PointOutsideDomain(f"{v} is not in {self.kind.value}({self.dim})")
        return v

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "dim": self.dim}


class _Infinity:
    """The boundary point at infinity of the Siegel half-space."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY"

    def __reduce__(self):
        return (_Infinity, ())


INFINITY = _Infinity()


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """A boundary point: a unit direction, or ``INFINITY`` for the Siegel domain."""

    direction: object

    def __post_init__(self):
        if self.direction is INFINITY:
            return
        v = as_vec(self.direction)
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-12 and not np.isclose(np.max(np.abs(v)), 1.0, atol=1e-12):
            raise ValueError(f"boundary direction must have unit norm, got {n}")
        v.setflags(write=False)
        object.__setattr__(self, "direction", v)

    @property
    def is_infinite(self) -> bool:
        return self.direction is INFINITY

    @property
    def dim(self) -> int:
        return int(self.direction.size)

    def __eq__(self, other):
        if not isinstance(other, BoundaryPoint):
            return NotImplemented
        if self.is_infinite or other.is_infinite:
            return self.is_infinite and other.is_infinite
        return self.dim == other.dim and bool(np.all(self.direction == other.direction))

    def __hash__(self):
        if self.is_infinite:
            return hash("inf")
        return hash(self.direction.tobytes())


# ---------------------------------------------------------------- distances


def _atanh_from(s: float, one_minus_s2: float) -> float:
    s = min(max(s, 0.0), 1.0)
    if one_minus_s2 <= 0.0:
        return float("inf")
    # atanh(s) = log(1+s) - log(1-s^2)/2, accurate at both ends
    return float(np.log1p(s) - 0.5 * np.log(one_minus_s2))


def ball_mobius(a, z):
    """Involutive ball automorphism exchanging ``a`` and 0."""
    a = np.asarray(a, dtype=np.complex128)
    z = np.asarray(z, dtype=np.complex128)
    aa = float(np.real(hdot(a, a)))
    if aa == 0.0:
        return -z
    za = hdot(z, a)
    proj = (za / aa) * a
    sa = np.sqrt(1.0 - aa)
    return (a - proj - sa * (z - proj)) / (1.0 - za)


def ball_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.complex128)
    q = np.asarray(q, dtype=np.complex128)
    s = float(np.linalg.norm(ball_mobius(p, q)))
    pp = 1.0 - float(np.real(hdot(p, p)))
    qq = 1.0 - float(np.real(hdot(q, q)))
    den = abs(1.0 - hdot(q, p))
    one_minus = (pp / den) * (qq / den)
    return _atanh_from(s, one_minus)


def disc_distance(p: complex, q: complex) -> float:
    p, q = complex(p), complex(q)
    s = abs(p - q) / abs(1.0 - np.conj(p) * q)
    one_minus = (1.0 - abs(p) ** 2) * (1.0 - abs(q) ** 2) / abs(1.0 - np.conj(p) * q) ** 2
    return _atanh_from(s, one_minus)


def halfplane_distance(p: complex, q: complex) -> float:
    p, q = complex(p), complex(q)
    num = abs(p - q)
    den = abs(p - np.conj(q))
    s = num / den
    one_minus = (4.0 * p.imag / den) * (q.imag / den)
    return _atanh_from(s, one_minus)


def siegel_height(p) -> float:
    """Im(z) - |w|^2, positive exactly on the Siegel domain."""
    p = np.asarray(p, dtype=np.complex128)
    return float(p[0].imag - np.real(np.vdot(p[1:], p[1:])))


def siegel_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.complex128)
    q = np.asarray(q, dtype=np.complex128)
    if p.size == 1:
        return halfplane_distance(p[0], q[0])
    qn = siegel_normalizer(p)(q)
    a, b = qn[0].real, qn[0].imag
    ww = float(np.real(np.vdot(qn[1:], qn[1:])))
    num = np.sqrt(a * a + (1.0 - b) ** 2 + 4.0 * ww)
    den = np.hypot(a, 1.0 + b)
    rho = b - ww
    s = num / den
    return _atanh_from(s, (4.0 * rho / den) / den)


def kobayashi_distance(domain: DomainSpec, p, q) -> float:
    """Kobayashi distance between two points of ``domain``."""
    p = domain.check(p)
    q = domain.check(q)
    if domain.kind is DomainKind.BALL:
        return ball_distance(p, q)
    if domain.kind is DomainKind.POLYDISC:
        return max(disc_distance(a, b) for a, b in zip(p, q))
    return siegel_distance(p, q)


def kobayashi_metric(domain: DomainSpec, p, v) -> float:
    """Kobayashi-Royden length of the tangent vector ``v`` at ``p``."""
    p = domain.check(p)
    v = as_vec(v)
    if v.size != domain.dim:
        raise DomainMismatch("tangent vector has wrong dimension")
    if domain.kind is DomainKind.BALL:
        return _ball_metric(p, v)
    if domain.kind is DomainKind.POLYDISC:
        return float(np.max(np.abs(v) / (1.0 - np.abs(p) ** 2)))
    z = cayley_transform(p, CayleyDirection.SIEGEL_TO_BALL)
    return _ball_metric(z, _cayley_inverse_jacobian(p) @ v)


def _ball_metric(p, v) -> float:
    d = 1.0 - float(np.real(hdot(p, p)))
    return float(np.sqrt(np.real(hdot(v, v)) / d + abs(hdot(v, p)) ** 2 / d ** 2))


# ------------------------------------------------------------- automorphisms


@dataclass(frozen=True, eq=False)
class BallAutomorphism:
    """``z -> unitary @ phi_center(z)`` with ``phi_center`` the involution at ``center``.

    On the polydisc ``phi_center`` acts coordinatewise and ``unitary`` must be
    diagonal.
    """

    center: np.ndarray
    unitary: np.ndarray
    domain: DomainSpec

    def __post_init__(self):
        c = as_vec(self.center)
        u = np.asarray(self.unitary, dtype=np.complex128).reshape(c.size, c.size)
        if np.max(np.abs(u.conj().T @ u - np.eye(c.size))) > 1e-12:
            raise ValueError("unitary part is not unitary to 1e-12")
        if self.domain.kind is DomainKind.POLYDISC and np.count_nonzero(u - np.diag(np.diag(u))):
            raise ValueError("polydisc automorphisms need a diagonal unitary part")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "unitary", u)

    def _phi(self, z):
        if self.domain.kind is DomainKind.POLYDISC:
            a = self.center
            return (a - z) / (1.0 - np.conj(a) * z)
        return ball_mobius(self.center, z)

    def __call__(self, z):
        return self.unitary @ self._phi(np.asarray(z, dtype=np.complex128))

    def inverse(self, w):
        return self._phi(self.unitary.conj().T @ np.asarray(w, dtype=np.complex128))


def mobius_to_origin(domain: DomainSpec, a) -> BallAutomorphism:
    """Automorphism sending ``a`` to the origin.

    For ``a != 0`` this is the involution exchanging ``a`` and 0; at ``a == 0``
    it is the identity.
    """
    if domain.kind is DomainKind.SIEGEL:
        raise DomainMismatch("use siegel_normalizer on the Siegel domain")
    a = domain.check(a)
    q = domain.dim
    if domain.kind is DomainKind.BALL:
        u = -np.eye(q) if not np.any(a) else np.eye(q)
    else:
        u = np.diag(np.where(a == 0, -1.0, 1.0)).astype(np.complex128)
    return BallAutomorphism(a, u, domain)


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``X -> matrix @ X + offset``; Siegel automorphisms fixing infinity are of this form."""

    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, x):
        return self.matrix @ np.asarray(x, dtype=np.complex128) + self.offset

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """Return ``self o inner``."""
        return AffineMap(self.matrix @ inner.matrix, self.matrix @ inner.offset + self.offset)

    def inverse(self) -> "AffineMap":
        mi = np.linalg.inv(self.matrix)
        return AffineMap(mi, -mi @ self.offset)

    @classmethod
    def identity(cls, q: int) -> "AffineMap":
        return cls(np.eye(q, dtype=np.complex128), np.zeros(q, dtype=np.complex128))


def heisenberg_translation(a: float, b) -> AffineMap:
    """Siegel automorphism (z, w) -> (z + a + 2i<w, b> + i|b|^2, w + b), sending 0 to (a + i|b|^2, b)."""
    b = np.asarray(b, dtype=np.complex128).ravel()
    q = b.size + 1
    m = np.eye(q, dtype=np.complex128)
    m[0, 1:] = 2j * np.conj(b)
    off = np.zeros(q, dtype=np.complex128)
    off[0] = a + 1j * float(np.real(np.vdot(b, b)))
    off[1:] = b
    return AffineMap(m, off)


def siegel_dilation(t: float, q: int) -> AffineMap:
    """(z, w) -> (t z, sqrt(t) w)."""
    d = np.full(q, np.sqrt(t), dtype=np.complex128)
    d[0] = t
    return AffineMap(np.diag(d), np.zeros(q, dtype=np.complex128))


def siegel_normalizer(p) -> AffineMap:
    """Canonical Siegel automorphism fixing infinity and sending ``p`` to (i, 0, ..., 0)."""
    p = np.asarray(p, dtype=np.complex128)
    q = p.size
    w = p[1:]
    rho = siegel_height(p)
    if not rho > 0:
        raise PointOutsideDomain(f"{p} is not in the Siegel domain")
    ww = float(np.real(np.vdot(w, w)))
    # translation by (-Re z, -w) sends p to (i rho, 0)
    m = np.eye(q, dtype=np.complex128)
    m[0, 1:] = -2j * np.conj(w)
    off = np.zeros(q, dtype=np.complex128)
    off[0] = -p[0].real + 1j * ww
    off[1:] = -w
    return siegel_dilation(1.0 / rho, q).compose(AffineMap(m, off))


# ------------------------------------------------------------------ Cayley


class CayleyDirection(str, enum.Enum):
    BALL_TO_SIEGEL = "ball_to_siegel"
    SIEGEL_TO_BALL = "siegel_to_ball"


def cayley_transform(p, direction, dim: int = 1):
    """Cayley transform between the ball and the Siegel half-space.

    ``BallToSiegel`` sends the boundary point (1, 0, ..., 0) to ``INFINITY``;
    ``SiegelToBall`` sends ``INFINITY`` back to it (``dim`` fixes its size).
    """
    direction = CayleyDirection(direction)
    if direction is CayleyDirection.SIEGEL_TO_BALL:
        if p is INFINITY or (isinstance(p, BoundaryPoint) and p.is_infinite):
            return cayley_inverse_infinity(dim)
        p = as_vec(p)
        den = p[0] + 1j
        out = np.empty_like(p)
        out[0] = (p[0] - 1j) / den
        out[1:] = 2j * p[1:] / den
        return out
    p = as_vec(p)
    one_minus = 1.0 - p[0]
    if one_minus == 0:
        if np.any(p[1:]):
            raise SingularAtBoundary(f"{p} lies on the singular hyperplane z = 1")
        return INFINITY
    out = np.empty_like(p)
    out[0] = 1j * (1.0 + p[0]) / one_minus
    out[1:] = p[1:] / one_minus
    return out


def cayley_inverse_infinity(q: int) -> ComplexVec:
    e = np.zeros(q, dtype=np.complex128)
    e[0] = 1.0
    return e


def _cayley_inverse_jacobian(p) -> np.ndarray:
    q = p.size
    den = p[0] + 1j
    j = np.zeros((q, q), dtype=np.complex128)
    j[0, 0] = 2j / den ** 2
    j[1:, 0] = -2j * p[1:] / den ** 2
    j[1:, 1:] = np.eye(q - 1) * (2j / den)
    return j


def ball_defect_from_siegel(p) -> float:
    """1 - ||Cayley^{-1}(p)||^2, computed without cancellation."""
    p = np.asarray(p, dtype=np.complex128)
    return 4.0 * siegel_height(p) / abs(p[0] + 1j) ** 2


# ---------------------------------------------------------- Koranyi regions


def _direction(zeta) -> np.ndarray:
    if isinstance(zeta, BoundaryPoint):
        if zeta.is_infinite:
            raise ValueError("Koranyi regions need a finite vertex")
        return zeta.direction
    v = as_vec(zeta)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("vertex must have unit norm")
    return v


def koranyi_contains(zeta, R: float, z) -> bool:
    """Membership of ``z`` in the Koranyi region of vertex ``zeta`` and amplitude ``R``."""
    if not R > 1:
        raise AmplitudeOutOfRange(f"amplitude must exceed 1, got {R}")
    zeta = _direction(zeta)
    z = as_vec(z)
    return bool(abs(1.0 - hdot(z, zeta)) < R * (1.0 - np.linalg.norm(z)))


@dataclass(frozen=True)
class SequenceFlags:
    restricted: bool
    special: bool
    aperture: float
    tol: float
    tail_length: int
    max_stolz_ratio: float = field(default=float("nan"))


def _slope(y: np.ndarray) -> float:
    x = np.arange(y.size, dtype=float)
    return float(np.polyfit(x, y, 1)[0])


def check_special_restricted(
    seq,
    zeta,
    tol: float = 1e-6,
    aperture: float = 4.0,
    tail_fraction: float = 0.5,
    min_tail: int = 16,
    approach_tol: float = 1e-3,
) -> SequenceFlags:
    """Finite-sample test of the restricted and special approach conditions at ``zeta``.

    Only the last ``tail_fraction`` of ``seq`` is inspected.  Both flags also
    require that the tail actually approaches ``zeta``: ``|1 - <z_n, zeta>|``
    must shrink (negative log-slope) and fall below ``approach_tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    zeta = _direction(zeta)
    ball = DomainSpec.ball(zeta.size)
    pts = [ball.check(z) for z in seq]
    n_tail = int(np.ceil(len(pts) * tail_fraction))
    if n_tail < min_tail:
        raise SequenceTooShort(f"tail of {n_tail} points, need at least {min_tail}")
    tail = pts[-n_tail:]
    w = np.array([hdot(z, zeta) for z in tail])
    gap = np.abs(1.0 - w)
    with np.errstate(divide="ignore"):
        approaching = bool(gap.min() < approach_tol and _slope(np.log(np.maximum(gap, 1e-300))) < 0)
        stolz = gap / (1.0 - np.abs(w))
    stolz_max = float(np.max(stolz))
    restricted = approaching and stolz_max <= aperture
    offs = np.array([ball_distance(z, hdot(z, zeta) * zeta) for z in tail])
    special = approaching and bool(offs[-1] < tol) and _slope(offs) <= 0
    return SequenceFlags(restricted, special, aperture, tol, n_tail, stolz_max)
