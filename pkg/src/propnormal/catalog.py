"""Built-in test surfaces, each with a tube half-width known to lie below its reach."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .surface import ImplicitSurface
from .tubular import TubularNeighborhood


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    psi: str
    dim: int
    box: tuple
    epsilon: float


# Reach notes: ellipse min curvature radius b^2/a = 0.5; ellipsoid c^2/a = 1/3;
# torus minor radius 0.3.
CATALOG = {
    e.name: e
    for e in (
        CatalogEntry("ellipse", "x1^2 + 2*x2^2 - 1", 2, (-1.5, 1.5, -1.5, 1.5), 0.2),
        CatalogEntry("circle", "x1^2 + x2^2 - 1", 2, (-2, 2, -2, 2), 0.5),
        CatalogEntry("sphere", "x1^2 + x2^2 + x3^2 - 1", 3, (-1.6, 1.6) * 3, 0.5),
        CatalogEntry("ellipsoid", "x1^2 + 2*x2^2 + 3*x3^2 - 1", 3, (-1.4, 1.4) * 3, 0.15),
        CatalogEntry("torus", "(sqrt(x1^2 + x2^2) - 1)^2 + x3^2 - 0.09", 3,
                     (-1.6, 1.6, -1.6, 1.6, -0.6, 0.6), 0.15),
        CatalogEntry("hyperplane", "x2", 2, (-1, 1, -1, 1), 0.5),
    )
}

SUITE = tuple(CATALOG)


@lru_cache(maxsize=None)
def builtin_surface(name: str) -> ImplicitSurface:
    try:
        e = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown built-in surface {name!r}; choose from {', '.join(CATALOG)}") from None
    return ImplicitSurface.from_text(e.psi, e.dim, e.box, name=e.name)


@lru_cache(maxsize=None)
def builtin_tube(name: str) -> TubularNeighborhood:
    return TubularNeighborhood(builtin_surface(name), CATALOG[name].epsilon)
