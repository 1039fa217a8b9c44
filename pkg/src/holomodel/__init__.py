"""Canonical models for forward and backward iteration of holomorphic self-maps."""
from .errors import HolomodelError
from .geometry import BoundaryPoint, DomainKind, DomainSpec, INFINITY, kobayashi_distance
from .holomap import MapExpr, iterate, map_from_strings

__all__ = [
    "HolomodelError",
    "BoundaryPoint",
    "DomainKind",
    "DomainSpec",
    "INFINITY",
    "kobayashi_distance",
    "MapExpr",
    "iterate",
    "map_from_strings",
]
__version__ = "0.1.0"
