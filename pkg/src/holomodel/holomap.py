"""Holomorphic self-maps with rational components.

Each component is a quotient of two polynomials stored as sparse
``(coefficient, multi-index)`` term lists, so Jacobians are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp
from scipy.stats import norm, qmc

from .errors import DomainMismatch, OrbitEscapedDomain, PoleHit, PointOutsideDomain
from .geometry import CayleyDirection, DomainKind, DomainSpec, as_vec, cayley_transform

POLE_TOL = 1e-14
MAX_ITERATES = 10 ** 6
COMPENSATED_AFTER = 10 ** 4


@dataclass(frozen=True)
class Polynomial:
    terms: tuple  # ((complex, (e_1, ..., e_q)), ...)
    nvars: int

    def __post_init__(self):
        merged: dict = {}
        for c, idx in self.terms:
            idx = tuple(int(e) for e in idx)
            if len(idx) != self.nvars or min(idx, default=0) < 0:
                raise ValueError(f"bad multi-index {idx} for {self.nvars} variables")
            merged[idx] = merged.get(idx, 0j) + complex(c)
        terms = tuple((c, idx) for idx, c in sorted(merged.items()) if c != 0)
        object.__setattr__(self, "terms", terms)

    def __call__(self, x, compensated: bool = False) -> complex:
        if not self.terms:
            return 0j
        xs = x if isinstance(x, tuple) else tuple(complex(v) for v in np.ravel(x))
        vals = []
        for c, idx in self.terms:
            v = c
            for xj, e in zip(xs, idx):
                # repeated products overflow to inf instead of raising
                for _ in range(e):
                    v *= xj
            vals.append(v)
        if compensated:
            return complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))
        return sum(vals, 0j)

    def derivative(self, j: int) -> "Polynomial":
        out = []
        for c, idx in self.terms:
            if idx[j]:
                new = list(idx)
                new[j] -= 1
                out.append((c * idx[j], tuple(new)))
        return Polynomial(tuple(out), self.nvars)

    def to_json(self) -> list:
        return [[[c.real, c.imag], list(idx)] for c, idx in self.terms]

    @classmethod
    def from_json(cls, data, nvars: int) -> "Polynomial":
        return cls(tuple((complex(c[0], c[1]), tuple(idx)) for c, idx in data), nvars)

    @classmethod
    def constant(cls, c, nvars: int) -> "Polynomial":
        return cls(((complex(c), (0,) * nvars),), nvars)


@dataclass(frozen=True)
class RationalFunction:
    num: Polynomial
    den: Polynomial

    def __call__(self, x, compensated: bool = False) -> complex:
        d = self.den(x, compensated)
        if abs(d) < POLE_TOL:
            raise PoleHit(f"denominator vanishes at {x}")
        return self.num(x, compensated) / d

    @cached_property
    def _grads(self):
        n = self.num.nvars
        return [(self.num.derivative(j), self.den.derivative(j)) for j in range(n)]

    def gradient(self, x) -> np.ndarray:
        d = self.den(x)
        if abs(d) < POLE_TOL:
            raise PoleHit(f"denominator vanishes at {x}")
        n = self.num(x)
        return np.array([(dn(x) * d - n * dd(x)) / (d * d) for dn, dd in self._grads])


@dataclass(frozen=True, eq=False)
class MapExpr:
    """A holomorphic map ``domain -> domain`` with rational components."""

    components: tuple
    domain: DomainSpec
    label: str | None = field(default=None)

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.domain.dim:
            raise DomainMismatch(f"{len(comps)} components for a domain of dimension {self.domain.dim}")
        for c in comps:
            if c.num.nvars != self.domain.dim or c.den.nvars != self.domain.dim:
                raise DomainMismatch("component variable count differs from the domain dimension")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, p, compensated: bool = False) -> np.ndarray:
        x = tuple(complex(v) for v in np.ravel(p))
        return np.array([c(x, compensated) for c in self.components], dtype=np.complex128)

    def jacobian(self, p) -> np.ndarray:
        x = tuple(complex(v) for v in np.ravel(p))
        return np.array([c.gradient(x) for c in self.components], dtype=np.complex128)

    # identity of a map is its serialized form
    @cached_property
    def _key(self) -> str:
        return dumps_map(self)

    def __eq__(self, other):
        return isinstance(other, MapExpr) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def to_json(self) -> dict:
        out = {
            "domain": self.domain.to_json(),
            "components": [{"num": c.num.to_json(), "den": c.den.to_json()} for c in self.components],
        }
        if self.label is not None:
            out["label"] = self.label
        return out

    @classmethod
    def from_json(cls, data: dict) -> "MapExpr":
        dom = data["domain"]
        domain = DomainSpec(dom["kind"], dom["dim"])
        q = domain.dim
        comps = []
        for i, comp in enumerate(data["components"]):
            if "num" not in comp or "den" not in comp:
                raise KeyError(f"components[{i}] needs 'num' and 'den'")
            comps.append(
                RationalFunction(Polynomial.from_json(comp["num"], q), Polynomial.from_json(comp["den"], q))
            )
        return cls(tuple(comps), domain, data.get("label"))

    # -------------------------------------------------------------- sympy

    def symbols(self):
        return sp.symbols(f"z0:{self.dim}")

    def to_sympy(self, exact: bool = True):
        syms = self.symbols()

        def conv(c):
            if exact:
                return sp.Rational(c.real) + sp.I * sp.Rational(c.imag)
            return sp.Float(c.real) + sp.I * sp.Float(c.imag)

        def poly(p):
            return sp.Add(*[conv(c) * sp.Mul(*[s ** e for s, e in zip(syms, idx)]) for c, idx in p.terms])

        return [poly(c.num) / poly(c.den) for c in self.components], syms

    @classmethod
    def from_sympy(cls, exprs, syms, domain: DomainSpec, label=None) -> "MapExpr":
        comps = []
        for e in exprs:
            num, den = sp.fraction(sp.cancel(sp.together(e)))
            pn, pd = sp.Poly(sp.expand(num), *syms), sp.Poly(sp.expand(den), *syms)
            # exact rescaling keeps every coefficient in double range
            scale = max(abs(part) for c in pn.coeffs() + pd.coeffs() for part in c.as_real_imag())
            comps.append(RationalFunction(_poly_from_sympy(pn, scale), _poly_from_sympy(pd, scale)))
        return cls(tuple(comps), domain, label)


def _to_float(x) -> float:
    if isinstance(x, sp.Rational):
        # int / int is correctly rounded for any size and underflows cleanly
        return int(x.p) / int(x.q)
    return float(sp.N(x, 30))


def _to_complex(c) -> complex:
    re, im = sp.expand(c).as_real_imag()
    return complex(_to_float(re), _to_float(im))


def _poly_from_sympy(p: sp.Poly, scale=1) -> Polynomial:
    return Polynomial(tuple((_to_complex(c / scale), idx) for idx, c in p.terms()), len(p.gens))


def map_from_strings(exprs, domain: DomainSpec, label=None) -> MapExpr:
    """Build a map from component formulas in the variables ``z0, z1, ...``.

    Numeric literals are read as exact decimals before cancellation, so
    identities that hold for the written coefficients hold exactly.
    """
    syms = sp.symbols(f"z0:{domain.dim}")
    local = {str(s): s for s in syms}
    local["I"] = sp.I
    parsed = [sp.sympify(e, locals=local, rational=True) for e in exprs]
    return MapExpr.from_sympy(parsed, syms, domain, label)


def dumps_map(f: MapExpr) -> str:
    return json.dumps(f.to_json(), sort_keys=False)


def loads_map(text: str) -> MapExpr:
    return MapExpr.from_json(json.loads(text))


def identity_map(domain: DomainSpec) -> MapExpr:
    q = domain.dim
    comps = []
    for j in range(q):
        idx = [0] * q
        idx[j] = 1
        comps.append(RationalFunction(Polynomial(((1.0, tuple(idx)),), q), Polynomial.constant(1.0, q)))
    return MapExpr(tuple(comps), domain, "identity")


def eval_map(f: MapExpr, p) -> np.ndarray:
    """Evaluate ``f`` at a point of its domain."""
    x = f.domain.check(p)
    out = f(x)
    if not np.all(np.isfinite(out)):
        raise PoleHit(f"non-finite value at {x}")
    return out


def jacobian(f: MapExpr, p) -> np.ndarray:
    return f.jacobian(f.domain.check(p))


# ---------------------------------------------------------------- composition


class ComposedMap:
    """Lazy composite ``outer o inner`` of maps or limit evaluators."""

    def __init__(self, outer, inner):
        self.outer = outer
        self.inner = inner
        self.domain = getattr(inner, "domain", None)

    def __call__(self, p):
        return self.outer(self.inner(p))

    def jacobian(self, p):
        x = self.inner(p)
        return _jac(self.outer, x) @ _jac(self.inner, p)


def _jac(g, p, step: float = 1e-6):
    if hasattr(g, "jacobian"):
        return g.jacobian(p)
    p = np.asarray(p, dtype=np.complex128)
    cols = []
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = step
        cols.append((np.asarray(g(p + e)) - np.asarray(g(p - e))) / (2 * step))
    return np.array(cols).T


def compose_maps(g, f, samples: int = 64, seed: int = 0) -> ComposedMap:
    """Return the evaluator of ``g o f`` after checking by sampling that ``f`` lands in ``g``'s domain."""
    dom_f = getattr(f, "domain", None)
    dom_g = getattr(g, "domain", None)
    if dom_f is not None and dom_g is not None:
        if dom_f.dim != dom_g.dim:
            raise DomainMismatch(f"cannot compose maps on C^{dom_g.dim} and C^{dom_f.dim}")
        for x in sample_domain(dom_f, samples, seed=seed):
            if not dom_g.contains(f(x)):
                raise DomainMismatch(f"f({x}) leaves the domain of g")
    return ComposedMap(g, f)


# ------------------------------------------------------------------ orbits


@dataclass(frozen=True, eq=False)
class Orbit:
    base: np.ndarray
    points: list
    domain: DomainSpec

    def __len__(self):
        return len(self.points)

    def __getitem__(self, n):
        return self.points[n]


def iterate(f: MapExpr, n: int, p, tol: float = 1e-12, max_n: int = MAX_ITERATES) -> Orbit:
    """Forward orbit ``p, f(p), ..., f^n(p)``.

    Points may reach the boundary to within ``tol`` through rounding; leaving
    the closed domain by more than ``tol`` raises ``OrbitEscapedDomain``.
    """
    if n < 0 or n > max_n:
        raise ValueError(f"iterate count must lie in [0, {max_n}]")
    x = f.domain.check(p)
    compensated = n > COMPENSATED_AFTER
    pts = [x]
    for k in range(n):
        x = f(x, compensated)
        if not f.domain.contains(x, tol):
            raise OrbitEscapedDomain(f"iterate {k + 1} = {x} left the domain")
        pts.append(x)
    return Orbit(pts[0], pts, f.domain)


# -------------------------------------------------------------- validation


def sample_domain(domain: DomainSpec, n: int, seed: int = 0, radius: float = 1.0) -> list:
    """Quasi-random interior points (scrambled Halton), scaled by ``radius``."""
    q = domain.dim
    if n <= 0:
        return []
    eng = qmc.Halton(d=2 * q, seed=seed)
    out = []
    while len(out) < n:
        u = eng.random(max(2 * n, 16))
        for row in u:
            if domain.kind is DomainKind.POLYDISC:
                r = np.sqrt(row[:q]) * radius
                z = r * np.exp(2j * np.pi * row[q:])
            else:
                c = 2.0 * row - 1.0
                z = (c[:q] + 1j * c[q:]) * radius
                if np.linalg.norm(z) >= radius:
                    continue
            if domain.kind is DomainKind.SIEGEL:
                z = cayley_transform(z, CayleyDirection.BALL_TO_SIEGEL)
            out.append(np.asarray(z, dtype=np.complex128))
            if len(out) == n:
                break
    return out


def sample_shell(domain: DomainSpec, n: int, radius: float, seed: int = 0) -> list:
    q = domain.dim
    eng = qmc.Halton(d=2 * q, seed=seed + 1)
    out = []
    for row in eng.random(n):
        if domain.kind is DomainKind.POLYDISC:
            # a distinguished-boundary point plus one coordinate at full radius
            z = np.sqrt(row[:q]) * np.exp(2j * np.pi * row[q:])
            j = int(row[0] * q) % q
            z[j] = radius * np.exp(2j * np.pi * row[q + j])
        else:
            g = np.clip(row, 1e-12, 1 - 1e-12)
            v = norm.ppf(g)
            z = v[:q] + 1j * v[q:]
            z = radius * z / np.linalg.norm(z)
        if domain.kind is DomainKind.SIEGEL:
            z = cayley_transform(z, CayleyDirection.BALL_TO_SIEGEL)
        out.append(np.asarray(z, dtype=np.complex128))
    return out


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    max_value: float
    witness: list | None
    samples: int
    shell_radius: float

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "max_value": self.max_value,
            "witness": None if self.witness is None else [[c.real, c.imag] for c in self.witness],
            "samples": self.samples,
            "shell_radius": self.shell_radius,
        }


def _size(domain: DomainSpec, w) -> float:
    if domain.kind is DomainKind.POLYDISC:
        return float(np.max(np.abs(w)))
    if domain.kind is DomainKind.SIEGEL:
        if not np.all(np.isfinite(w)):
            return float("inf")
        return float(np.linalg.norm(cayley_transform(w, CayleyDirection.SIEGEL_TO_BALL)))
    return float(np.linalg.norm(w))


def validate_self_map(f: MapExpr, samples: int = 1000, shell_radius: float = 1 - 1e-4, seed: int = 0) -> ValidationReport:
    """Sampling check that ``f`` maps its domain into itself.

    The size of ``f(x)`` is the Euclidean norm for the ball, the largest
    coordinate modulus for the polydisc, and the norm of the Cayley preimage
    for the Siegel domain.  Passes iff every sampled value is below 1.
    """
    pts = sample_domain(f.domain, samples, seed=seed) + sample_shell(f.domain, max(samples // 4, 16), shell_radius, seed)
    worst, witness = -1.0, None
    for x in pts:
        try:
            v = _size(f.domain, f(x))
        except (PoleHit, ZeroDivisionError, PointOutsideDomain):
            v = float("inf")
        if not np.isfinite(v) or v > worst:
            worst, witness = v, x
            if not np.isfinite(v):
                break
    passed = bool(np.isfinite(worst) and worst < 1.0)
    return ValidationReport(passed, worst, None if passed else list(witness), len(pts), shell_radius)
