"""First-order fast marching for |grad phi| = 1 on a uniform Cartesian grid.

The front is seeded with exact signed distances in a thin band around the
surface (taken from the tubular projection) and marched outwards on |phi|.
Each node's sign is inherited from its upwind neighbour, so the inside and
outside fronts stay separate.  The per-node update solves the Godunov upwind
quadratic

    sum_i max(D-_i phi, -D+_i phi, 0)^2 = 1,

dropping the largest neighbour values when they are not upwind.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import GridError
from .tubular import Status, TubularNeighborhood, project_points

FAR, BAND, ACCEPTED = 0, 1, 2


@dataclass
class Grid:
    """Node values on ``origin + h * index``; arrays are indexed ``[i1, ..., in]`` (C order)."""

    origin: np.ndarray
    spacing: float
    counts: tuple
    values: np.ndarray = None
    state: np.ndarray = None
    seeded: np.ndarray = None
    unreached: int = 0
    accept_order: list = field(default=None, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.counts = tuple(int(c) for c in self.counts)
        if len(self.counts) != len(self.origin) or min(self.counts) < 2:
            raise GridError(f"bad grid counts {self.counts}")
        if not self.spacing > 0:
            raise GridError("grid spacing must be positive")
        if self.values is None:
            self.values = np.full(self.counts, np.inf)
        if self.state is None:
            self.state = np.zeros(self.counts, dtype=np.uint8)
        if self.seeded is None:
            self.seeded = np.zeros(self.counts, dtype=bool)

    @classmethod
    def from_box(cls, lo, hi, h):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        counts = np.floor((hi - lo) / h + 1e-9).astype(int) + 1
        return cls(lo, float(h), tuple(counts))

    @property
    def dim(self):
        return len(self.counts)

    def coords(self):
        """Node coordinates, shape ``counts + (dim,)``."""
        axes = [self.origin[i] + self.spacing * np.arange(c) for i, c in enumerate(self.counts)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def copy(self):
        return replace(self, values=self.values.copy(), state=self.state.copy(),
                       seeded=self.seeded.copy(),
                       accept_order=None if self.accept_order is None else list(self.accept_order))


@dataclass(frozen=True)
class LevelSetSlice:
    """Edge crossings of ``phi = level``; ``edges`` holds flat node index pairs."""

    level: float
    points: np.ndarray
    edges: np.ndarray
    weights: np.ndarray


def _distance_estimate(surface, X):
    v, g, _, bad = surface.jets(X)
    gn = np.sqrt(np.sum(g * g, axis=1))
    est = np.abs(v) / np.where(gn > 0, gn, np.nan)
    return np.where(bad | (gn < surface.floor), np.inf, est)


def initialize_band(g: Grid, tn: TubularNeighborhood, band_width: float) -> Grid:
    """Seed every node within ``band_width`` of the surface with its exact signed distance.

    Candidates are pre-selected by the first-order estimate
    ``|psi| / |grad psi| <= 2 * band_width`` and then projected.
    """
    h = g.spacing
    if band_width < 2 * h:
        raise GridError(f"band width {band_width} thinner than 2h = {2 * h}")
    if band_width > tn.epsilon / 2:
        raise GridError(f"band width {band_width} exceeds epsilon/2 = {tn.epsilon / 2}")
    if g.dim != tn.dim:
        raise GridError("grid and surface dimensions differ")
    out = g.copy()
    X = out.coords().reshape(-1, g.dim)
    est = _distance_estimate(tn.surface, X)
    cand = np.flatnonzero(est <= 2.0 * band_width)
    res = project_points(tn.surface, tn.epsilon, X[cand]) if cand.size else None
    values = out.values.reshape(-1)
    state = out.state.reshape(-1)
    seeded = out.seeded.reshape(-1)
    if res is not None:
        hard = (res.status == Status.NO_CONVERGENCE) | (res.status == Status.REGULARITY)
        hard &= est[cand] <= band_width
        if np.any(hard):
            i = cand[np.flatnonzero(hard)[0]]
            raise GridError(f"projection failed at seed node {X[i].tolist()}")
        inside = res.ok & (np.abs(res.offset) <= band_width)
        seeds = cand[inside]
        values[seeds] = res.offset[inside]
        state[seeds] = ACCEPTED
        seeded[seeds] = True
    if not seeded.any():
        raise GridError("no grid node lies within the band: the surface misses the grid box")
    return out


def solve(g: Grid) -> Grid:
    """Fast-march |phi| outward from the seeded band; unreachable nodes stay +inf.

    Nodes are accepted in non-decreasing order of |phi| (checked as the march
    runs); heap ties break on flat node index.
    """
    if not g.seeded.any():
        raise GridError("grid has no seeded band; call initialize_band first")
    out = g.copy()
    h = out.spacing
    counts = out.counts
    n = len(counts)
    size = int(np.prod(counts))
    strides = [int(np.prod(counts[i + 1:])) for i in range(n)]
    flat_vals = out.values.reshape(-1)
    mag = np.abs(flat_vals).tolist()
    sign = np.where(flat_vals < 0, -1.0, 1.0).tolist()
    state = bytearray(out.state.reshape(-1).tobytes())
    pos = [p.reshape(-1).tolist() for p in np.indices(counts)]
    last = [c - 1 for c in counts]
    inf = math.inf
    hh = h * h

    def neighbours(idx):
        for ax in range(n):
            p = pos[ax][idx]
            s = strides[ax]
            if p > 0:
                yield idx - s
            if p < last[ax]:
                yield idx + s

    def update(idx):
        """Godunov solution at ``idx`` from accepted neighbours, with upwind sign."""
        a = []
        best, best_sign = inf, 1.0
        for ax in range(n):
            p = pos[ax][idx]
            s = strides[ax]
            m_ax = inf
            if p > 0 and state[idx - s] == ACCEPTED:
                m_ax = mag[idx - s]
                if m_ax < best:
                    best, best_sign = m_ax, sign[idx - s]
            if p < last[ax] and state[idx + s] == ACCEPTED:
                v = mag[idx + s]
                if v < m_ax:
                    m_ax = v
                if v < best:
                    best, best_sign = v, sign[idx + s]
            if m_ax < inf:
                a.append(m_ax)
        if not a:
            return inf, 1.0
        a.sort()
        # solve relative to the smallest value to avoid cancellation
        a0 = a[0]
        w = h
        S = Q = 0.0
        for k in range(1, len(a)):
            b = a[k] - a0
            if w <= b:
                break
            S += b
            Q += b * b
            m = k + 1
            disc = S * S - m * (Q - hh)
            if disc < 0:
                break
            w = (S + math.sqrt(disc)) / m
        return a0 + w, best_sign

    heap = []
    for idx in range(size):
        if state[idx] != ACCEPTED:
            continue
        for nb in neighbours(idx):
            if state[nb] != ACCEPTED:
                u, sg = update(nb)
                if u < mag[nb]:
                    mag[nb] = u
                    sign[nb] = sg
                    state[nb] = BAND
                    heapq.heappush(heap, (u, nb))

    order = []
    prev = 0.0
    while heap:
        u, idx = heapq.heappop(heap)
        if state[idx] == ACCEPTED or u != mag[idx]:
            continue
        if u < prev - 1e-12 * (1.0 + prev):
            raise RuntimeError(f"fast marching lost causality: accepted {u!r} after {prev!r}")
        prev = u
        state[idx] = ACCEPTED
        order.append(idx)
        for nb in neighbours(idx):
            if state[nb] != ACCEPTED:
                unew, sg = update(nb)
                if unew < mag[nb]:
                    mag[nb] = unew
                    sign[nb] = sg
                    state[nb] = BAND
                    heapq.heappush(heap, (unew, nb))

    st = np.frombuffer(bytes(state), dtype=np.uint8).reshape(counts).copy()
    m_arr = np.array(mag).reshape(counts)
    s_arr = np.array(sign).reshape(counts)
    vals = np.where(st == ACCEPTED, s_arr * m_arr, np.inf)
    vals = np.where(out.seeded, out.values, vals)
    out.values = vals
    out.state = np.where(st == ACCEPTED, ACCEPTED, FAR).astype(np.uint8)
    out.unreached = int(np.sum(out.state != ACCEPTED))
    out.accept_order = order
    return out


def upwind_residual(g: Grid) -> float:
    """Max |sum_i max(D-_i, -D+_i, 0)^2 - 1| over accepted, non-seeded nodes."""
    u = np.where(g.state == ACCEPTED, np.abs(g.values), np.inf)
    total = np.zeros(g.counts)
    for ax in range(g.dim):
        pad = [(0, 0)] * g.dim
        pad[ax] = (1, 1)
        up = np.pad(u, pad, constant_values=np.inf)
        lo_sl = [slice(None)] * g.dim
        hi_sl = [slice(None)] * g.dim
        lo_sl[ax] = slice(0, -2)
        hi_sl[ax] = slice(2, None)
        nbr = np.minimum(up[tuple(lo_sl)], up[tuple(hi_sl)])
        with np.errstate(invalid="ignore"):
            d = np.maximum(u - nbr, 0.0) / g.spacing
        total += np.where(np.isfinite(d), d, 0.0) ** 2
    mask = (g.state == ACCEPTED) & ~g.seeded
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(total[mask] - 1.0)))


def gradient_field(g: Grid) -> np.ndarray:
    """Central-difference gradient at interior accepted nodes; NaN elsewhere."""
    grad = np.full(g.counts + (g.dim,), np.nan)
    ok = g.state == ACCEPTED
    v = np.where(ok, g.values, np.nan)
    valid = ok.copy()
    for ax in range(g.dim):
        fwd = np.roll(v, -1, axis=ax)
        bwd = np.roll(v, 1, axis=ax)
        comp = (fwd - bwd) / (2.0 * g.spacing)
        edge = [slice(None)] * g.dim
        edge[ax] = [0, -1]
        comp[tuple(edge)] = np.nan
        grad[..., ax] = comp
        valid &= np.isfinite(comp)
    grad[~valid] = np.nan
    return grad


def extract_level_set(g: Grid, t: float) -> LevelSetSlice:
    """Linear interpolation of ``phi = t`` along grid edges with finite end values."""
    coords = g.coords().reshape(-1, g.dim)
    flat = np.arange(int(np.prod(g.counts))).reshape(g.counts)
    vals = np.where(g.state == ACCEPTED, g.values, np.nan)
    pts, edges, weights = [], [], []
    for ax in range(g.dim):
        lo_sl = [slice(None)] * g.dim
        hi_sl = [slice(None)] * g.dim
        lo_sl[ax] = slice(0, -1)
        hi_sl[ax] = slice(1, None)
        a = vals[tuple(lo_sl)].reshape(-1) - t
        b = vals[tuple(hi_sl)].reshape(-1) - t
        ia = flat[tuple(lo_sl)].reshape(-1)
        ib = flat[tuple(hi_sl)].reshape(-1)
        with np.errstate(invalid="ignore"):
            cross = ((a <= 0) & (b > 0)) | ((b <= 0) & (a > 0))
        w = a[cross] / (a[cross] - b[cross])
        pa, pb = coords[ia[cross]], coords[ib[cross]]
        pts.append(pa + w[:, None] * (pb - pa))
        edges.append(np.stack([ia[cross], ib[cross]], axis=1))
        weights.append(w)
    return LevelSetSlice(float(t), np.concatenate(pts), np.concatenate(edges), np.concatenate(weights))


def sdf_grid(g: Grid, tn: TubularNeighborhood) -> Grid:
    """Exact signed distance at nodes inside the tube; +inf elsewhere."""
    out = g.copy()
    X = out.coords().reshape(-1, g.dim)
    est = _distance_estimate(tn.surface, X)
    cand = np.flatnonzero(est < 2.0 * tn.epsilon)
    values = np.full(X.shape[0], np.inf)
    if cand.size:
        res = project_points(tn.surface, tn.epsilon, X[cand])
        values[cand[res.ok]] = res.offset[res.ok]
    out.values = values.reshape(g.counts)
    out.state = np.where(np.isfinite(out.values), ACCEPTED, FAR).astype(np.uint8)
    out.unreached = int(np.sum(~np.isfinite(out.values)))
    return out


# --------------------------------------------------------------------------
# grid files
# --------------------------------------------------------------------------

def _g17(x):
    return format(float(x), ".17g")


def format_grid(g: Grid) -> str:
    lines = [
        f"dim {g.dim}",
        "origin " + " ".join(_g17(o) for o in g.origin),
        f"spacing {_g17(g.spacing)}",
        "counts " + " ".join(str(c) for c in g.counts),
    ]
    vals = np.where(g.state == ACCEPTED, g.values, np.inf).reshape(-1)
    lines.extend(_g17(v) for v in vals)
    return "\n".join(lines) + "\n"


def write_grid(g: Grid, path):
    Path(path).write_text(format_grid(g), encoding="utf-8")


def parse_grid(text: str) -> Grid:
    lines = text.splitlines()
    try:
        header = {}
        for line in lines[:4]:
            key, _, rest = line.partition(" ")
            header[key] = rest.split()
        dim = int(header["dim"][0])
        origin = [float(v) for v in header["origin"]]
        spacing = float(header["spacing"][0])
        counts = tuple(int(v) for v in header["counts"])
    except (KeyError, IndexError, ValueError) as err:
        raise GridError(f"malformed grid header: {err}") from None
    if len(origin) != dim or len(counts) != dim:
        raise GridError("grid header dimension mismatch")
    vals = np.array([float(v) for v in lines[4:]])
    if vals.size != int(np.prod(counts)):
        raise GridError(f"expected {int(np.prod(counts))} values, found {vals.size}")
    g = Grid(origin, spacing, counts)
    g.values = vals.reshape(counts)
    g.state = np.where(np.isfinite(g.values), ACCEPTED, FAR).astype(np.uint8)
    g.unreached = int(np.sum(~np.isfinite(g.values)))
    return g


def read_grid(path) -> Grid:
    return parse_grid(Path(path).read_text(encoding="utf-8"))
