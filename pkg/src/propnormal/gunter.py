"""Gunter (tangential) derivatives and the properness checks built on them.

For a unit field N with Jacobian ``J[k][j] = d_k N_j`` the extended Gunter
derivative ``D_k = d_k - N_k d_N`` applied to N's own components is::

    D[k][j] = J[k][j] - N_k (d_N N)_j

A *sampler* below is any callable mapping an ``(m, n)`` array of points to a
list of ``VectorFieldSample`` -- e.g. ``ImplicitSurface.naive_samples`` or
``TubularNeighborhood.proper_samples``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NotOnSurfaceError, PreconditionError
from .surface import ImplicitSurface, VectorFieldSample
from .tubular import TubularNeighborhood, surface_normals


@dataclass(frozen=True)
class GunterMatrix:
    point: np.ndarray
    d: np.ndarray
    field_tag: str = "custom"

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.d - self.d.T)))


def gunter_matrix(sample: VectorFieldSample, field_tag="custom") -> GunterMatrix:
    d = sample.jacobian - sample.value[:, None] * sample.autoparallel[None, :]
    return GunterMatrix(sample.point, d, field_tag)


def _require_on_surface(s, points, tol=1e-9):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    for p in points:
        if not s.on_surface(p, tol):
            raise NotOnSurfaceError(f"{p.tolist()} is not on {s.name}")
    return points


def check_gunter_symmetry_on_surface(s: ImplicitSurface, points) -> float:
    """Max ``|D_k nu_j - D_j nu_k|`` over surface points, using the exact naive Jacobian."""
    points = _require_on_surface(s, points)
    return max(gunter_matrix(smp, "naive").asymmetry() for smp in s.naive_samples(points))


# --------------------------------------------------------------------------
# (i) autoparallel on S  <=>  (ii) symmetric Jacobian on S
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    """Per-point defects of the two equivalent conditions at surface points.

    ``a`` is |d_N N| (condition (i)), ``b`` is max|J - J^T| (condition (ii)).
    The checked implication is ``b <= tol  =>  a <= n*tol``; ``mixed`` counts
    points where exactly one condition passes at ``tol``.
    """

    tol: float
    a: np.ndarray
    b: np.ndarray
    both_hold: int
    both_fail: int
    mixed: int
    implication_violations: int
    max_identity_defect: float
    identity_ok: bool

    @property
    def holds(self):
        return self.implication_violations == 0 and self.identity_ok


def _unitary(samples, limit=1e-10):
    worst = max(abs(smp.unit_norm_defect) for smp in samples)
    if worst > limit:
        raise PreconditionError(f"extension is not unitary: | |N| - 1 | = {worst:.3e}")


def identity_defect_bound(sample: VectorFieldSample) -> float:
    """Tolerance for the unit-field identity at this sample."""
    return 1e-8 * (1.0 + float(np.max(np.abs(sample.jacobian))))


def check_autoparallel_equivalence(s: ImplicitSurface, extension, points, tol=1e-6) -> EquivalenceReport:
    points = _require_on_surface(s, points)
    samples = extension(points)
    _unitary(samples)
    n = s.dim
    a = np.array([np.linalg.norm(smp.autoparallel) for smp in samples])
    b = np.array([np.max(np.abs(smp.asym)) for smp in samples])
    ident = np.array([smp.identity_defect() for smp in samples])
    bounds = np.array([identity_defect_bound(smp) for smp in samples])
    i_ok, ii_ok = a <= tol, b <= tol
    return EquivalenceReport(
        tol=tol, a=a, b=b,
        both_hold=int(np.sum(i_ok & ii_ok)),
        both_fail=int(np.sum(~i_ok & ~ii_ok)),
        mixed=int(np.sum(i_ok != ii_ok)),
        implication_violations=int(np.sum(ii_ok & (a > n * tol))),
        max_identity_defect=float(ident.max()),
        identity_ok=bool(np.all(ident <= bounds)),
    )


def check_derivative_agreement(s: ImplicitSurface, extension, points, tol=1e-5) -> float:
    """Largest spread among D_k N_j, d_k N_j, d_j N_k, D_j N_k over surface points.

    Raises PreconditionError unless both equivalent conditions hold at every point.
    """
    rep = check_autoparallel_equivalence(s, extension, points, tol)
    if rep.both_hold != len(rep.a):
        raise PreconditionError(
            f"conditions (i)/(ii) fail at {len(rep.a) - rep.both_hold} of {len(rep.a)} points")
    worst = 0.0
    for smp in extension(np.atleast_2d(points)):
        J = smp.jacobian
        D = gunter_matrix(smp).d
        quads = np.stack([D, J, J.T, D.T])
        worst = max(worst, float(np.max(quads.max(axis=0) - quads.min(axis=0))))
    return worst


# --------------------------------------------------------------------------
# properness over the whole tube
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    unit: float = 1e-10
    asym: float = 1e-5
    autoparallel: float = 1e-5
    gunter: float = 1e-5

    def __post_init__(self):
        for name in ("unit", "asym", "autoparallel", "gunter"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive")


@dataclass(frozen=True)
class Witness:
    point: tuple
    unit_defect: float
    asym: float
    autoparallel: float
    gunter_asym: float


@dataclass(frozen=True)
class PropernessReport:
    field_tag: str
    points_checked: int
    projection_failures: int
    max_unit_defect: float
    max_asym: float
    max_autoparallel: float
    max_gunter_asym: float
    max_identity_defect: float
    tolerances: Tolerances
    witnesses: list = field(default_factory=list)

    @property
    def verdict(self):
        t = self.tolerances
        ok = (self.max_unit_defect < t.unit and self.max_asym < t.asym
              and self.max_autoparallel < t.autoparallel and self.max_gunter_asym < t.gunter)
        return "proper" if ok else "not_proper"

    def render(self) -> str:
        lines = [
            f"field: {self.field_tag}",
            f"points checked: {self.points_checked} (projection failures: {self.projection_failures})",
            f"max | |N|-1 |        {self.max_unit_defect:.6e}  (tol {self.tolerances.unit:.1e})",
            f"max |dN - dN^T|      {self.max_asym:.6e}  (tol {self.tolerances.asym:.1e})",
            f"max |d_N N|          {self.max_autoparallel:.6e}  (tol {self.tolerances.autoparallel:.1e})",
            f"max |D - D^T|        {self.max_gunter_asym:.6e}  (tol {self.tolerances.gunter:.1e})",
            f"verdict: {self.verdict}",
        ]
        for w in self.witnesses:
            pt = ", ".join(f"{c:.17g}" for c in w.point)
            lines.append(f"  witness ({pt}): unit={w.unit_defect:.3e} asym={w.asym:.3e} "
                         f"autoparallel={w.autoparallel:.3e} gunter={w.gunter_asym:.3e}")
        return "\n".join(lines)

    def key_values(self) -> str:
        rows = [
            ("field", self.field_tag),
            ("points_checked", self.points_checked),
            ("projection_failures", self.projection_failures),
            ("max_unit_defect", f"{self.max_unit_defect:.17g}"),
            ("max_asym", f"{self.max_asym:.17g}"),
            ("max_autoparallel", f"{self.max_autoparallel:.17g}"),
            ("max_gunter_asym", f"{self.max_gunter_asym:.17g}"),
            ("max_identity_defect", f"{self.max_identity_defect:.17g}"),
            ("verdict", self.verdict),
        ]
        return "\n".join(f"{k}={v}" for k, v in rows)


def tube_points(tn: TubularNeighborhood, count, rng, margin=None):
    """Points ``xhat + t nu(xhat)`` with surface-sampled xhat and uniform t."""
    if margin is None:
        margin = 0.05 * tn.epsilon
    P = tn.surface.sample_points(count, rng)
    nu = surface_normals(tn.surface, P)
    t = rng.uniform(-tn.epsilon + margin, tn.epsilon - margin, size=count)
    return P, t, P + t[:, None] * nu


def _robust_samples(sampler, X):
    try:
        return sampler(X), 0
    except (ArithmeticError, ValueError):
        out, failures = [], 0
        for x in X:
            try:
                out.extend(sampler(x[None, :]))
            except (ArithmeticError, ValueError):
                failures += 1
        return out, failures


def verify_properness(tn: TubularNeighborhood, sample_count=500, tolerances=None,
                      field_kind="proper", seed=0) -> PropernessReport:
    """Sample the tube and measure how far a unit field is from being a proper extension.

    ``field_kind`` is ``"proper"`` (the tubular extension) or ``"naive"``
    (``grad psi / |grad psi|``).
    """
    tolerances = tolerances or Tolerances()
    if field_kind == "proper":
        sampler = tn.proper_samples
    elif field_kind == "naive":
        sampler = tn.surface.naive_samples
    else:
        raise ValueError(f"unknown field {field_kind!r}")
    rng = np.random.default_rng(seed)
    _, _, X = tube_points(tn, sample_count, rng)
    samples, failures = _robust_samples(sampler, X)
    if failures > 0.01 * sample_count:
        raise NoConvergence(f"{failures} of {sample_count} samples failed")

    rows = []
    for smp in samples:
        gm = gunter_matrix(smp, field_kind)
        rows.append((abs(smp.unit_norm_defect), float(np.max(np.abs(smp.asym))),
                     float(np.linalg.norm(smp.autoparallel)), gm.asymmetry(), smp.identity_defect()))
    R = np.array(rows)
    tol = np.array([tolerances.unit, tolerances.asym, tolerances.autoparallel, tolerances.gunter])
    score = (R[:, :4] / tol).max(axis=1)
    order = sorted(range(len(samples)), key=lambda i: (-score[i], tuple(samples[i].point)))
    witnesses = [Witness(tuple(float(c) for c in samples[i].point), *map(float, R[i, :4]))
                 for i in order[:5] if score[i] >= 1.0]
    return PropernessReport(
        field_tag=field_kind,
        points_checked=len(samples),
        projection_failures=failures,
        max_unit_defect=float(R[:, 0].max()),
        max_asym=float(R[:, 1].max()),
        max_autoparallel=float(R[:, 2].max()),
        max_gunter_asym=float(R[:, 3].max()),
        max_identity_defect=float(R[:, 4].max()),
        tolerances=tolerances,
        witnesses=witnesses,
    )
