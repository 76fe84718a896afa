"""Implicit hypersurfaces {psi = 0}, their unit normal, and the naive extension.

The naive extension ``grad psi / |grad psi|`` is a unit field defined off the
surface too, but in general its Jacobian is not symmetric, so it is not the
gradient of anything.  Its Jacobian is assembled from the exact jet of psi::

    d_j N_k = H_jk / |g| - g_k (H g)_j / |g|^3

Orientation: the normal is always ``+grad psi / |grad psi|``; negating psi
flips it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as ex
from .errors import NotOnSurfaceError, OutsideDomainError, RegularityError


@dataclass(frozen=True)
class VectorFieldSample:
    """A vector field N at one point, with its Jacobian ``jacobian[j][k] = d_j N_k``.

    Derived on construction:

    * ``unit_norm_defect`` = |N| - 1
    * ``asym`` = J - J^T
    * ``autoparallel`` = (d_N N)_j = sum_k N_k d_k N_j, i.e. ``value @ jacobian``
    """

    point: np.ndarray
    value: np.ndarray
    jacobian: np.ndarray
    unit_norm_defect: float = field(init=False)
    asym: np.ndarray = field(init=False)
    autoparallel: np.ndarray = field(init=False)

    def __post_init__(self):
        J = np.asarray(self.jacobian, dtype=float)
        v = np.asarray(self.value, dtype=float)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "jacobian", J)
        object.__setattr__(self, "unit_norm_defect", float(np.sqrt(np.sum(v * v)) - 1.0))
        object.__setattr__(self, "asym", J - J.T)
        object.__setattr__(self, "autoparallel", (v[:, None] * J).sum(axis=0))

    @property
    def dim(self):
        return self.value.shape[0]

    def identity_defect(self):
        """|d_N N - asym^T N|_inf; zero for any unit field."""
        return float(np.max(np.abs(self.autoparallel - (self.value[:, None] * self.asym).sum(axis=0))))


def naive_jacobian(g, H):
    """Batched Jacobian of ``g/|g|`` given gradients (m, n) and Hessians (m, n, n)."""
    r = np.sqrt(np.sum(g * g, axis=1))
    Hg = (H * g[:, None, :]).sum(axis=2)
    return H / r[:, None, None] - Hg[:, :, None] * g[:, None, :] / (r ** 3)[:, None, None]


@dataclass(frozen=True)
class ImplicitSurface:
    """The zero set of ``psi`` inside an axis-aligned box.

    Construction checks that the zero set meets the box (lattice sampling
    plus bisection, for dim <= 4).
    """

    psi: ex.Expr
    dim: int
    box_lo: tuple
    box_hi: tuple
    floor: float = 1e-12
    name: str = ""

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be at least 2, got {self.dim}")
        lo = tuple(float(v) for v in self.box_lo)
        hi = tuple(float(v) for v in self.box_hi)
        if len(lo) != self.dim or len(hi) != self.dim:
            raise ValueError(f"box must have {self.dim} intervals")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} .. {hi}")
        bad_vars = [i for i in ex.variables(self.psi) if i > self.dim]
        if bad_vars:
            raise ValueError(f"psi uses x{max(bad_vars)} but dim={self.dim}")
        if self.floor <= 0:
            raise ValueError("regularity floor must be positive")
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        if not self.name:
            object.__setattr__(self, "name", ex.unparse(self.psi))
        self._check_nonempty()

    @classmethod
    def from_text(cls, psi: str, dim: int, box, floor=1e-12, name=""):
        box = list(box)
        return cls(ex.parse(psi, dim), dim, box[0::2], box[1::2], floor, name)

    @property
    def lo(self):
        return np.array(self.box_lo)

    @property
    def hi(self):
        return np.array(self.box_hi)

    # -- evaluation --------------------------------------------------------

    def jets(self, X):
        """``(value, gradient, hessian, bad)`` of psi at the rows of X."""
        return ex.jet2_batch(self.psi, X)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def _point_jet(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point in R^{self.dim}, got shape {x.shape}")
        if not self.contains(x):
            raise OutsideDomainError(f"point {x.tolist()} outside the domain box")
        j = ex.eval_jet2(self.psi, x)
        gn = float(np.linalg.norm(j.gradient))
        if gn < self.floor:
            raise RegularityError(f"|grad psi| = {gn:.3e} below floor {self.floor:.1e} at {x.tolist()}")
        return j, gn

    def on_surface(self, x, tol=1e-12) -> bool:
        j, gn = self._point_jet(x)
        return abs(j.value) <= tol * (1.0 + gn)

    def normal(self, x) -> np.ndarray:
        """Unit normal ``grad psi / |grad psi|`` at a surface point."""
        j, gn = self._point_jet(x)
        if abs(j.value) > 1e-9 * (1.0 + gn):
            raise NotOnSurfaceError(f"psi = {j.value:.3e} at {np.asarray(x).tolist()}")
        return j.gradient / gn

    def naive_sample(self, x) -> VectorFieldSample:
        j, _ = self._point_jet(x)
        J = naive_jacobian(j.gradient[None, :], j.hessian[None, :, :])[0]
        return VectorFieldSample(np.asarray(x, dtype=float), j.gradient / np.linalg.norm(j.gradient), J)

    def naive_samples(self, X):
        """Naive-extension samples at each row of X (same arithmetic as naive_sample)."""
        X = np.asarray(X, dtype=float)
        _, g, H, bad = self.jets(X)
        gn = np.sqrt(np.sum(g * g, axis=1))
        outside = ~np.all((X >= self.lo) & (X <= self.hi), axis=1)
        for i in np.flatnonzero(bad | (gn < self.floor) | outside):
            self._point_jet(X[i])  # raises the specific error
        J = naive_jacobian(g, H)
        return [VectorFieldSample(X[i], g[i] / np.linalg.norm(g[i]), J[i]) for i in range(len(X))]

    # -- surface sampling --------------------------------------------------

    def root_points(self, X, max_iter=60):
        """Drive each row of X onto {psi = 0} by Newton steps along grad psi.

        Returns ``(points, ok)``.  These are surface points, not closest points.
        """
        Y = np.array(X, dtype=float)
        m = Y.shape[0]
        cap = 0.25 * float(np.linalg.norm(self.hi - self.lo))
        ok = np.zeros(m, dtype=bool)
        active = np.ones(m, dtype=bool)
        polish = np.zeros(m, dtype=bool)
        for _ in range(max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            v, g, _, bad = self.jets(Y[idx])
            gg = np.sum(g * g, axis=1)
            gn = np.sqrt(gg)
            dead = bad | (gn < self.floor)
            done = ~dead & (np.abs(v) <= 1e-13 * (1.0 + gn))
            finished = done & polish[idx]
            ok[idx[finished]] = True
            active[idx[dead | finished]] = False
            polish[idx[done]] = True
            step = (v / np.where(dead, 1.0, gg))[:, None] * g
            sn = np.sqrt(np.sum(step * step, axis=1))
            scale = np.minimum(1.0, cap / np.maximum(sn, 1e-300))
            move = ~dead & ~finished
            Y[idx[move]] -= scale[move, None] * step[move]
        inside = np.all((Y >= self.lo) & (Y <= self.hi), axis=1)
        return Y, ok & inside

    def sample_points(self, count, rng, spacing=1e-3, max_rounds=50):
        """``count`` distinct surface points: uniform box samples driven onto S.

        Points closer than ``spacing`` to an earlier one are discarded.
        """
        kept = np.empty((0, self.dim))
        for _ in range(max_rounds):
            need = count - len(kept)
            if need <= 0:
                break
            cand = rng.uniform(self.lo, self.hi, size=(max(4 * need, 64), self.dim))
            pts, ok = self.root_points(cand)
            for p in pts[ok]:
                if len(kept) and np.min(np.sum((kept - p) ** 2, axis=1)) < spacing ** 2:
                    continue
                kept = np.vstack([kept, p])
                if len(kept) == count:
                    break
        if len(kept) < count:
            raise RuntimeError(f"could only sample {len(kept)} of {count} points on {self.name}")
        return kept

    # -- construction check ------------------------------------------------

    def _check_nonempty(self):
        n = self.dim
        if n > 4:
            warnings.warn(f"surface non-emptiness check skipped for dim={n} > 4", stacklevel=3)
            return
        axes = [np.linspace(a, b, 9) for a, b in zip(self.box_lo, self.box_hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        v, bad = ex.evaluate_batch(self.psi, grid.reshape(-1, n))
        v = np.where(bad, np.nan, v).reshape(grid.shape[:-1])
        if np.any(v == 0):
            return
        a_pts, b_pts = [], []
        for axis in range(n):
            lo_sl = [slice(None)] * n
            hi_sl = [slice(None)] * n
            lo_sl[axis] = slice(0, -1)
            hi_sl[axis] = slice(1, None)
            va, vb = v[tuple(lo_sl)], v[tuple(hi_sl)]
            flip = np.isfinite(va) & np.isfinite(vb) & (va * vb < 0)
            a_pts.append(grid[tuple(lo_sl)][flip])
            b_pts.append(grid[tuple(hi_sl)][flip])
        A = np.concatenate(a_pts)
        B = np.concatenate(b_pts)
        if len(A) == 0:
            raise ValueError(f"surface {self.name!r} does not meet the box (no sign change found)")
        va, _ = ex.evaluate_batch(self.psi, A)
        scale = np.maximum(1.0, np.abs(va))
        for _ in range(80):
            M = 0.5 * (A + B)
            vm, bm = ex.evaluate_batch(self.psi, M)
            left = (np.sign(vm) == np.sign(va)) & ~bm
            A = np.where(left[:, None], M, A)
            va = np.where(left, vm, va)
            B = np.where(left[:, None], B, M)
        vm, bm = ex.evaluate_batch(self.psi, 0.5 * (A + B))
        if not np.any(~bm & (np.abs(vm) <= 1e-6 * scale)):
            raise ValueError(f"surface {self.name!r}: sign changes in the box are not roots")


def parse_surface_spec(text: str, name="") -> ImplicitSurface:
    """Build a surface from the ``dim = / psi = / box = / floor =`` text format."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in ("dim", "psi", "box", "floor"):
            raise ValueError(f"line {lineno}: expected 'dim|psi|box|floor = ...', got {raw!r}")
        if key in entries:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    missing = [k for k in ("dim", "psi", "box") if k not in entries]
    if missing:
        raise ValueError(f"surface file missing {', '.join(missing)}")
    try:
        dim = int(entries["dim"])
        box = [float(t) for t in entries["box"].split()]
        floor = float(entries.get("floor", 1e-12))
    except ValueError as err:
        raise ValueError(f"bad number in surface file: {err}") from None
    if len(box) != 2 * dim:
        raise ValueError(f"box needs {2 * dim} numbers, got {len(box)}")
    return ImplicitSurface.from_text(entries["psi"], dim, box, floor, name)


def load_surface(path) -> ImplicitSurface:
    path = Path(path)
    return parse_surface_spec(path.read_text(encoding="utf-8"), name=path.stem)
