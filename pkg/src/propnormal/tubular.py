"""Tubular coordinates around an implicit surface.

Every point of the tube is written ``x = foot + t * nu(foot)`` with ``foot`` the
closest surface point and ``|t| < epsilon``.  In these coordinates the signed
distance is simply ``t`` and the unique unit gradient field extending the
normal is ``nu(foot)``; both are computed here by closest-point projection.

Projection solves the Lagrange system

    y - x + lam * grad psi(y) = 0,    psi(y) = 0

by Newton's method with exact Hessians, after five damped steps of
``y <- y - psi(y) grad psi(y) / |grad psi(y)|^2``.  Rows that fail restart from
32 perturbed copies of ``x``.  All work is batched over rows; every row
follows exactly the iteration it would follow alone, so batched and
one-at-a-time results are bit-identical.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EpsilonValidationError,
    MarginError,
    NoConvergence,
    NotOnSurfaceError,
    OutsideTube,
    PreconditionError,
    RegularityError,
)
from .surface import ImplicitSurface, VectorFieldSample

MAX_ITER = 50
PRE_STEPS = 5
FALLBACK_STARTS = 32


class Status(enum.IntEnum):
    OK = 0
    NO_CONVERGENCE = 1
    OUTSIDE_TUBE = 2
    REGULARITY = 3


@dataclass(frozen=True)
class TubularCoord:
    foot: np.ndarray
    offset: float
    nu_at_foot: np.ndarray

    def point(self):
        return self.foot + self.offset * self.nu_at_foot


@dataclass(frozen=True)
class ProjectionResult:
    """Row-wise projection output; rows with ``status != OK`` hold NaN."""

    foot: np.ndarray
    offset: np.ndarray
    nu: np.ndarray
    status: np.ndarray

    @property
    def ok(self):
        return self.status == Status.OK

    def raise_for_status(self, X=None):
        bad = np.flatnonzero(~self.ok)
        if bad.size == 0:
            return
        i = bad[0]
        where = f" at {np.asarray(X)[i].tolist()}" if X is not None else ""
        st = Status(int(self.status[i]))
        if st == Status.OUTSIDE_TUBE:
            raise OutsideTube(f"|offset| = {abs(self.offset[i]):.6g} not inside the tube{where}")
        if st == Status.REGULARITY:
            raise RegularityError(f"grad psi vanishes near the projection{where}")
        raise NoConvergence(f"closest-point Newton failed from all starts{where}")


def _newton(surface, X, Y0, max_step):
    """Closest-point Newton from starts ``Y0`` towards targets ``X``.

    Returns ``(Y, ok, regular)``: ``regular`` is False for rows abandoned
    because |grad psi| fell below the floor.
    """
    m, n = X.shape
    Y = np.array(Y0, dtype=float)
    alive = np.ones(m, dtype=bool)
    regular = np.ones(m, dtype=bool)
    floor = surface.floor

    for _ in range(PRE_STEPS):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        v, g, _, bad = surface.jets(Y[idx])
        gg = np.sum(g * g, axis=1)
        weak = np.sqrt(gg) < floor
        dead = bad | weak
        regular[idx[weak & ~bad]] = False
        alive[idx[dead]] = False
        step = (v / np.where(dead, 1.0, gg))[:, None] * g
        sn = np.sqrt(np.sum(step * step, axis=1))
        scale = np.minimum(1.0, max_step / np.maximum(sn, 1e-300))
        live = ~dead
        Y[idx[live]] -= scale[live, None] * step[live]

    lam = np.zeros(m)
    idx = np.flatnonzero(alive)
    if idx.size:
        _, g, _, bad = surface.jets(Y[idx])
        gg = np.sum(g * g, axis=1)
        dead = bad | (np.sqrt(gg) < floor)
        alive[idx[dead]] = False
        lam[idx] = np.where(dead, 0.0, np.sum((X[idx] - Y[idx]) * g, axis=1) / np.where(dead, 1.0, gg))

    ok = np.zeros(m, dtype=bool)
    polish = np.zeros(m, dtype=bool)
    eye = np.eye(n)
    xscale = 1.0 + np.sqrt(np.sum(X * X, axis=1))
    for _ in range(MAX_ITER + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        v, g, H, bad = surface.jets(Y[idx])
        gn = np.sqrt(np.sum(g * g, axis=1))
        weak = ~bad & (gn < floor)
        dead = bad | weak
        regular[idx[weak]] = False
        r1 = np.where(dead[:, None], 0.0, Y[idx] - X[idx] + lam[idx, None] * g)
        r1n = np.sqrt(np.sum(r1 * r1, axis=1))
        done = ~dead & (r1n <= 1e-12 * xscale[idx]) & (np.abs(v) <= 1e-13 * (1.0 + gn))
        finished = done & polish[idx]
        if np.any(finished):
            fin = idx[finished]
            ok[fin] = _is_local_min(g[finished], H[finished], lam[fin])
        alive[idx[dead | finished]] = False
        polish[idx[done]] = True
        move = ~dead & ~finished
        if not np.any(move):
            continue
        mi = idx[move]
        k = mi.size
        K = np.zeros((k, n + 1, n + 1))
        K[:, :n, :n] = eye + lam[mi, None, None] * H[move]
        K[:, :n, n] = g[move]
        K[:, n, :n] = g[move]
        rhs = -np.concatenate([r1[move], v[move, None]], axis=1)
        delta, solved = _solve(K, rhs)
        alive[mi[~solved]] = False
        good = mi[solved]
        Y[good] += delta[solved, :n]
        lam[good] += delta[solved, n]
    return Y, ok, regular


def _solve(K, rhs):
    try:
        return np.linalg.solve(K, rhs[:, :, None])[:, :, 0], np.ones(len(K), dtype=bool)
    except np.linalg.LinAlgError:
        out = np.zeros_like(rhs)
        solved = np.ones(len(K), dtype=bool)
        for i in range(len(K)):
            try:
                out[i] = np.linalg.solve(K[i:i + 1], rhs[i:i + 1, :, None])[0, :, 0]
            except np.linalg.LinAlgError:
                solved[i] = False
        return out, solved


def _is_local_min(g, H, lam):
    """Second-order check: I + lam*H is positive definite on the tangent space."""
    n = g.shape[1]
    nu = g / np.sqrt(np.sum(g * g, axis=1))[:, None]
    P = np.eye(n) - nu[:, :, None] * nu[:, None, :]
    L = np.eye(n) + lam[:, None, None] * H
    M = np.matmul(np.matmul(P, L), P) + nu[:, :, None] * nu[:, None, :]
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    return np.linalg.eigvalsh(M)[:, 0] > 1e-9


def _fallback_starts(x, epsilon):
    seed = zlib.crc32(np.ascontiguousarray(x, dtype=float).tobytes())
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(FALLBACK_STARTS, x.shape[0]))
    d /= np.sqrt(np.sum(d * d, axis=1))[:, None]
    return x + 0.25 * epsilon * d


def closest_points(surface: ImplicitSurface, X, epsilon: float):
    """Closest surface points to the rows of X, assuming they are within ``epsilon``.

    Returns ``(foot, ok, regular)``; no tube check is applied.
    """
    X = np.asarray(X, dtype=float)
    Y, ok, regular = _newton(surface, X, X, epsilon)
    failed = np.flatnonzero(~ok)
    if failed.size:
        starts = np.concatenate([_fallback_starts(X[i], epsilon) for i in failed])
        targets = np.repeat(X[failed], FALLBACK_STARTS, axis=0)
        Yf, okf, _ = _newton(surface, targets, starts, epsilon)
        dist = np.where(okf, np.sum((Yf - targets) ** 2, axis=1), np.inf).reshape(-1, FALLBACK_STARTS)
        best = np.argmin(dist, axis=1)
        for row, i in enumerate(failed):
            if np.isfinite(dist[row, best[row]]):
                Y[i] = Yf[row * FALLBACK_STARTS + best[row]]
                ok[i] = True
    return Y, ok, regular


def project_points(surface: ImplicitSurface, epsilon: float, X) -> ProjectionResult:
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    Y, ok, regular = closest_points(surface, X, epsilon)
    status = np.where(ok, Status.OK, np.where(regular, Status.NO_CONVERGENCE, Status.REGULARITY)).astype(int)
    foot = np.full((m, n), np.nan)
    nu = np.full((m, n), np.nan)
    offset = np.full(m, np.nan)
    idx = np.flatnonzero(ok)
    if idx.size:
        _, g, _, _ = surface.jets(Y[idx])
        gn = np.sqrt(np.sum(g * g, axis=1))
        nus = g / gn[:, None]
        d = X[idx] - Y[idx]
        dist = np.sqrt(np.sum(d * d, axis=1))
        t = np.where(np.sum(d * nus, axis=1) < 0, -dist, dist)
        foot[idx], nu[idx], offset[idx] = Y[idx], nus, t
        outside = np.abs(t) >= epsilon
        status[idx[outside]] = Status.OUTSIDE_TUBE
    return ProjectionResult(foot, offset, nu, status)


# --------------------------------------------------------------------------
# epsilon validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonReport:
    epsilon: float
    samples: int
    max_foot_defect: float
    max_offset_defect: float
    failures: int
    passed: bool

    def summary(self):
        return (f"samples={self.samples} failures={self.failures} "
                f"max_foot_defect={self.max_foot_defect:.3e} max_offset_defect={self.max_offset_defect:.3e}")


def surface_normals(surface, P):
    _, g, _, bad = surface.jets(P)
    if bad.any():
        raise NotOnSurfaceError("normal undefined at a sampled point")
    return g / np.sqrt(np.sum(g * g, axis=1))[:, None]


def validate_epsilon(surface: ImplicitSurface, epsilon: float, samples: int = 200, seed: int = 0,
                     foot_tol=1e-6, offset_tol=1e-8) -> EpsilonReport:
    """Check that points ``xhat + t nu(xhat)``, |t| < epsilon, project back to ``(xhat, t)``.

    Projection failures count as validation failures; nothing is raised.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    P = surface.sample_points(samples, rng)
    nu = surface_normals(surface, P)
    t = rng.uniform(-epsilon, epsilon, size=samples)
    res = project_points(surface, epsilon, P + t[:, None] * nu)
    ok = res.ok
    foot_def = np.where(ok, np.sqrt(np.sum((res.foot - P) ** 2, axis=1)), np.inf)
    off_def = np.where(ok, np.abs(res.offset - t), np.inf)
    failures = int(np.sum(~ok | (foot_def > foot_tol) | (off_def > offset_tol)))
    return EpsilonReport(float(epsilon), samples, float(foot_def.max()), float(off_def.max()),
                         failures, failures == 0)


# --------------------------------------------------------------------------
# the neighbourhood
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TubularNeighborhood:
    """The tube ``{xhat + t nu(xhat) : |t| < epsilon}``, validated on construction."""

    surface: ImplicitSurface
    epsilon: float
    validation_samples: int = 200
    seed: int = 0
    validate: bool = True
    report: EpsilonReport | None = field(default=None, init=False, compare=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.validate:
            rep = validate_epsilon(self.surface, self.epsilon, self.validation_samples, self.seed)
            object.__setattr__(self, "report", rep)
            if not rep.passed:
                raise EpsilonValidationError(rep)

    @property
    def dim(self):
        return self.surface.dim

    # -- projection ---------------------------------------------------------

    def project_many(self, X) -> ProjectionResult:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return project_points(self.surface, self.epsilon, X)

    def project(self, x) -> TubularCoord:
        x = np.asarray(x, dtype=float)
        res = self.project_many(x[None, :])
        res.raise_for_status(x[None, :])
        return TubularCoord(res.foot[0], float(res.offset[0]), res.nu[0])

    def _checked(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        res = self.project_many(X)
        res.raise_for_status(X)
        return res

    def signed_distance(self, x) -> float:
        return float(self._checked(x).offset[0])

    def signed_distances(self, X):
        return self._checked(X).offset

    def proper_extension(self, x) -> np.ndarray:
        return self._checked(x).nu[0]

    def proper_extensions(self, X):
        return self._checked(X).nu

    # -- derivatives --------------------------------------------------------

    def proper_samples(self, X, fd_step=None):
        """Proper-extension samples with fourth-order central-difference Jacobians.

        ``fd_step`` defaults to ``1e-5 * (1 + |x|)`` per point.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m, n = X.shape
        centre = self._checked(X)
        if fd_step is None:
            h = 1e-5 * (1.0 + np.sqrt(np.sum(X * X, axis=1)))
        else:
            h = np.full(m, float(fd_step))
        tight = np.abs(centre.offset) > self.epsilon - 2.0 * h
        if np.any(tight):
            i = np.flatnonzero(tight)[0]
            raise MarginError(f"offset {centre.offset[i]:.6g} leaves no room for step {h[i]:.1e} inside the tube")
        # five-point central stencil x +- h e_k, x +- 2h e_k
        E = h[:, None, None] * np.eye(n)
        Xc = X[:, None, :]
        stencil = np.concatenate([Xc + E, Xc - E, Xc + 2 * E, Xc - 2 * E], axis=1)
        nus = self._checked(stencil.reshape(-1, n)).nu.reshape(m, 4, n, n)
        J = (8.0 * (nus[:, 0] - nus[:, 1]) - (nus[:, 2] - nus[:, 3])) / (12.0 * h)[:, None, None]
        return [VectorFieldSample(X[i], centre.nu[i], J[i]) for i in range(m)]

    def proper_extension_sample(self, x, fd_step=None) -> VectorFieldSample:
        return self.proper_samples(np.asarray(x, dtype=float)[None, :], fd_step)[0]

    # -- checks from the existence/uniqueness argument -----------------------

    def integral_curve_deviations(self, starts, tau_max, steps):
        """RK4 integral curves of the proper extension, one per start.

        Returns each curve's maximum distance from its straight normal line.
        """
        P = np.atleast_2d(np.asarray(starts, dtype=float))
        if not tau_max < self.epsilon:
            raise PreconditionError("tau_max must be smaller than epsilon")
        nu0 = np.array([self.surface.normal(p) for p in P])
        gamma = P.copy()
        dt = tau_max / steps
        worst = np.zeros(len(P))
        field_ = self.proper_extensions
        for _ in range(steps):
            k1 = field_(gamma)
            k2 = field_(gamma + 0.5 * dt * k1)
            k3 = field_(gamma + 0.5 * dt * k2)
            k4 = field_(gamma + dt * k3)
            gamma = gamma + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            d = gamma - P
            perp = d - np.sum(d * nu0, axis=1)[:, None] * nu0
            worst = np.maximum(worst, np.sqrt(np.sum(perp * perp, axis=1)))
        return worst

    def integral_curve_straightness(self, xhat, tau_max, steps) -> float:
        return float(self.integral_curve_deviations(np.asarray(xhat)[None, :], tau_max, steps)[0])

    def level_set_orthogonality(self, xhat, t, tangent_probe_count, s=1e-4) -> float:
        """Max normalised component of ``nu(xhat)`` along tangents of the offset
        surface ``{foot + t nu(foot)}`` at ``xhat + t nu(xhat)``.

        Tangents are central differences of ``c(s) + t nu(c(s))`` for curves
        ``c`` on the surface through ``xhat``.
        """
        xhat = np.asarray(xhat, dtype=float)
        if not abs(t) < self.epsilon:
            raise PreconditionError("|t| must be smaller than epsilon")
        nu0 = self.surface.normal(xhat)
        n = xhat.shape[0]
        basis = np.linalg.svd(nu0[None, :])[2][1:]  # orthonormal tangent basis
        dirs = []
        for i in range(tangent_probe_count):
            if i < n - 1:
                dirs.append(basis[i])
            else:
                c = np.random.default_rng(i).normal(size=n - 1)
                dirs.append(c @ basis / np.linalg.norm(c))
        D = np.array(dirs)
        probes = np.concatenate([xhat + s * D, xhat - s * D])
        res = project_points(self.surface, self.epsilon, probes)
        res.raise_for_status(probes)
        on_t = res.foot + t * res.nu
        k = len(D)
        tangents = (on_t[:k] - on_t[k:]) / (2.0 * s)
        lengths = np.sqrt(np.sum(tangents * tangents, axis=1))
        if np.any(lengths < 1e-12):
            raise PreconditionError("degenerate tangent on the offset surface")
        return float(np.max(np.abs(tangents @ nu0) / lengths))
