"""The built-in verification suite run by ``propnormal suite``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gunter
from .catalog import CATALOG, SUITE, builtin_surface, builtin_tube
from .eikonal_grid import Grid, initialize_band, solve, upwind_residual
from .tubular import surface_normals


@dataclass(frozen=True)
class CheckResult:
    scope: str
    name: str
    value: float
    tol: float
    passed: bool

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.scope:<11} {self.name:<24} value={self.value:.6e}  tol={self.tol:.1e}"


def _check(scope, name, value, tol):
    value = float(value)
    return CheckResult(scope, name, value, tol, bool(value <= tol))


def surface_checks(name, tolerances=None, samples=200, seed=42):
    """All per-surface identity checks for one catalog surface."""
    tolerances = tolerances or gunter.Tolerances()
    tn = builtin_tube(name)
    s = tn.surface
    eps = tn.epsilon
    rng = np.random.default_rng(seed)
    out = []

    P = s.sample_points(samples, rng)
    out.append(_check(name, "gunter_symmetry_on_S", gunter.check_gunter_symmetry_on_surface(s, P), 1e-8))

    rep = gunter.verify_properness(tn, samples, tolerances, "proper", seed)
    worst = max(rep.max_unit_defect / tolerances.unit, rep.max_asym / tolerances.asym,
                rep.max_autoparallel / tolerances.autoparallel, rep.max_gunter_asym / tolerances.gunter)
    out.append(CheckResult(name, "properness", worst, 1.0, rep.verdict == "proper"))
    ident = max(rep.max_identity_defect, gunter.check_autoparallel_equivalence(s, s.naive_samples, P).max_identity_defect)
    out.append(_check(name, "unit_field_identity", ident, 1e-8))

    eq = gunter.check_autoparallel_equivalence(s, tn.proper_samples, P[:50], 1e-6)
    out.append(_check(name, "equivalence_on_S", 0.0 if eq.holds and eq.both_hold == 50 else 1.0, 0.5))
    out.append(_check(name, "derivative_agreement_on_S", gunter.check_derivative_agreement(s, tn.proper_samples, P[:50]), 1e-5))

    nu = surface_normals(s, P)
    t = rng.uniform(-0.9 * eps, 0.9 * eps, size=len(P))
    X = P + t[:, None] * nu
    res = tn.project_many(X)
    out.append(_check(name, "round_trip_offset", np.max(np.abs(res.offset - t)), 1e-8))
    out.append(_check(name, "extension_constant", np.max(np.abs(res.nu - nu)), 1e-10))

    Xg = X[:50]
    h = 1e-5
    E = np.eye(s.dim) * h
    grad = np.stack([(tn.signed_distances(Xg + E[k]) - tn.signed_distances(Xg - E[k])) / (2 * h)
                     for k in range(s.dim)], axis=1)
    out.append(_check(name, "eikonal_unit_gradient", np.max(np.abs(np.linalg.norm(grad, axis=1) - 1)), 1e-5))
    out.append(_check(name, "gradient_is_extension", np.max(np.abs(grad - res.nu[:50])), 1e-5))

    dev = tn.integral_curve_deviations(P[:20], 0.9 * eps, 40)
    out.append(_check(name, "integral_curve_straight", dev.max(), 1e-8))
    lso = max(tn.level_set_orthogonality(P[i], t[i], s.dim) for i in range(20))
    out.append(_check(name, "level_set_orthogonality", lso, 1e-5))
    return out


def global_checks(seed=42):
    """Checks that are not tied to one catalog surface."""
    out = []
    ell = builtin_surface("ellipse")
    rep = gunter.verify_properness(builtin_tube("ellipse"), 200, None, "naive", seed)
    out.append(CheckResult("ellipse", "naive_not_proper", rep.max_asym, 0.0, rep.verdict == "not_proper"))

    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.5, 1.5, size=(100, 2))
    X = X[np.abs(X[:, 0] * X[:, 1]) > 1e-3]
    worst = 0.0
    for smp in ell.naive_samples(X):
        x1, x2 = smp.point
        q = (x1 ** 2 + 4 * x2 ** 2) ** 1.5
        worst = max(worst, abs(smp.jacobian[0, 1] + 2 * x2 * x1 / q), abs(smp.jacobian[1, 0] + 4 * x1 * x2 / q))
    out.append(_check("ellipse", "counterexample_formulas", worst, 1e-10))

    tn = builtin_tube("circle")
    errs = []
    for h in (0.04, 0.02):
        g = solve(initialize_band(Grid.from_box([-2, -2], [2, 2], h), tn, max(0.06, 2 * h)))
        r = np.linalg.norm(g.coords(), axis=-1)
        errs.append(float(np.max(np.abs(g.values - (r - 1)))))
        out.append(_check("circle", f"fmm_linf_h{h:g}", errs[-1] / h, 2.0))
        out.append(_check("circle", f"fmm_residual_h{h:g}", upwind_residual(g), 1e-10))
    ratio = errs[0] / errs[1]
    out.append(CheckResult("circle", "fmm_error_ratio", ratio, 2.4, bool(1.6 <= ratio <= 2.4)))
    return out


def thread_cap():
    try:
        return max(1, int(os.environ.get("PROPNORMAL_THREADS", "1")))
    except ValueError:
        return 1


def run_suite(names=None, tolerances=None, samples=200, seed=42):
    """Run the suite; results come back in catalog order regardless of threading."""
    names = list(names or SUITE)
    for n in names:
        if n not in CATALOG:
            raise KeyError(f"unknown built-in surface {n!r}")
    # build tubes up front so worker threads share validated instances
    for n in names:
        builtin_tube(n)
    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(names))) as pool:
        per_surface = list(pool.map(lambda n: surface_checks(n, tolerances, samples, seed), names))
    results = [r for rs in per_surface for r in rs]
    if len(names) == len(SUITE):
        results.extend(global_checks(seed))
    return results

