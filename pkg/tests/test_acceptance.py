"""Acceptance gate: each test checks one criterion at its stated tolerance and
records a PASS/FAIL line (shown in the terminal summary)."""

import subprocess
import sys

import numpy as np
import pytest

from propnormal import gunter
from propnormal.catalog import SUITE, builtin_surface, builtin_tube
from propnormal.eikonal_grid import Grid, gradient_field, initialize_band, solve
from propnormal.tubular import surface_normals

SEED = 42


def tube_pairs(tn, count, rng, frac=0.9):
    P = tn.surface.sample_points(count, rng)
    nu = surface_normals(tn.surface, P)
    t = rng.uniform(-frac, frac, size=count) * tn.epsilon
    return P, nu, t, P + t[:, None] * nu


def closed_forms(X):
    x1, x2 = X[:, 0], X[:, 1]
    q = (x1 ** 2 + 4 * x2 ** 2) ** 1.5
    return -2 * x2 * x1 / q, -4 * x1 * x2 / q


def test_naive_counterexample(acceptance):
    s = builtin_surface("ellipse")
    rng = np.random.default_rng(SEED)
    on = s.sample_points(50, rng)
    off = rng.uniform(-1.5, 1.5, size=(400, 2))
    off = off[(np.abs(off[:, 0] * off[:, 1]) > 1e-3) & (np.abs(s.jets(off)[0]) > 1e-3)][:50]
    X = np.vstack([on[np.abs(on[:, 0] * on[:, 1]) > 1e-3][:50], off])
    assert len(X) == 100
    samples = s.naive_samples(X)
    J = np.array([smp.jacobian for smp in samples])
    c12, c21 = closed_forms(X)
    match = max(np.max(np.abs(J[:, 0, 1] - c12)), np.max(np.abs(J[:, 1, 0] - c21)))
    min_diff = np.min(np.abs(J[:, 0, 1] - J[:, 1, 0]))

    axis = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1 / np.sqrt(2)], [0.0, -0.3], [0.7, 0.0], [0.0, 1.2]])
    axis_diff = max(abs(smp.jacobian[0, 1] - smp.jacobian[1, 0]) for smp in s.naive_samples(axis))
    ok = match <= 1e-10 and min_diff > 0 and axis_diff <= 1e-12
    acceptance("naive_field_counterexample", ok,
               f"max|AD-closed|={match:.2e} (<=1e-10) min|d1N2-d2N1|={min_diff:.2e} (>0) "
               f"axis diff={axis_diff:.2e} (<=1e-12)")
    assert ok


def test_gunter_symmetry_on_surfaces(acceptance):
    worst = {}
    for name in ("ellipse", "sphere", "ellipsoid", "torus"):
        s = builtin_surface(name)
        worst[name] = gunter.check_gunter_symmetry_on_surface(s, s.sample_points(200, np.random.default_rng(SEED)))
    ok = max(worst.values()) <= 1e-8
    acceptance("gunter_symmetry_on_surface", ok,
               " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " (<=1e-8)")
    assert ok


def test_properness_verdicts(acceptance):
    tol = gunter.Tolerances(unit=1e-10, asym=1e-5, autoparallel=1e-5, gunter=1e-5)
    verdicts = {name: gunter.verify_properness(builtin_tube(name), 500, tol, "proper", SEED).verdict
                for name in SUITE}
    naive = gunter.verify_properness(builtin_tube("ellipse"), 500, tol, "naive", SEED).verdict
    ok = all(v == "proper" for v in verdicts.values()) and naive == "not_proper"
    acceptance("tubular_extension_is_proper", ok,
               f"proper on {sum(v == 'proper' for v in verdicts.values())}/{len(SUITE)} surfaces; "
               f"naive ellipse: {naive}")
    assert ok


def test_round_trip_and_eikonal(acceptance):
    off_worst = norm_worst = grad_worst = 0.0
    h = 1e-5
    for name in SUITE:
        tn = builtin_tube(name)
        _, _, t, X = tube_pairs(tn, 500, np.random.default_rng(SEED), frac=0.99)
        off_worst = max(off_worst, float(np.max(np.abs(tn.signed_distances(X) - t))))
        n = tn.dim
        grad = np.empty_like(X)
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            grad[:, k] = (tn.signed_distances(X + e) - tn.signed_distances(X - e)) / (2 * h)
        norm_worst = max(norm_worst, float(np.max(np.abs(np.linalg.norm(grad, axis=1) - 1))))
        grad_worst = max(grad_worst, float(np.max(np.abs(grad - tn.proper_extensions(X)))))
    ok = off_worst <= 1e-8 and norm_worst <= 1e-5 and grad_worst <= 1e-5
    acceptance("signed_distance_round_trip", ok,
               f"|phi-t|={off_worst:.1e} (<=1e-8) ||grad|-1|={norm_worst:.1e} (<=1e-5) "
               f"|grad-N|={grad_worst:.1e} (<=1e-5)")
    assert ok


def test_integral_curves_and_constancy(acceptance):
    dev_worst = const_worst = 0.0
    for name in SUITE:
        tn = builtin_tube(name)
        P, nu, t, X = tube_pairs(tn, 50, np.random.default_rng(SEED))
        dev_worst = max(dev_worst, float(tn.integral_curve_deviations(P, 0.9 * tn.epsilon, 50).max()))
        for frac in (-0.9, -0.5, 0.5, 0.9):
            N = tn.proper_extensions(P + frac * tn.epsilon * nu)
            const_worst = max(const_worst, float(np.max(np.abs(N - nu))))
        const_worst = max(const_worst, float(np.max(np.abs(tn.proper_extensions(X) - nu))))
    ok = dev_worst <= 1e-8 and const_worst <= 1e-10
    acceptance("integral_curves_are_straight", ok,
               f"deviation={dev_worst:.1e} (<=1e-8) |N(x+t nu)-nu|={const_worst:.1e} (<=1e-10)")
    assert ok


def test_level_set_orthogonality(acceptance):
    worst = 0.0
    for name in SUITE:
        tn = builtin_tube(name)
        P, _, t, _ = tube_pairs(tn, 100, np.random.default_rng(SEED))
        worst = max(worst, max(tn.level_set_orthogonality(P[i], t[i], tn.dim) for i in range(100)))
    ok = worst <= 1e-5
    acceptance("level_set_orthogonality", ok, f"tangency defect={worst:.1e} (<=1e-5)")
    assert ok


def test_fast_marching_convergence(acceptance):
    tn = builtin_tube("circle")
    errs = {}
    grad_err = None
    for h in (0.04, 0.02, 0.01):
        g = solve(initialize_band(Grid.from_box([-2, -2], [2, 2], h), tn, max(0.06, 2 * h)))
        r = np.linalg.norm(g.coords(), axis=-1)
        errs[h] = float(np.max(np.abs(g.values - (r - 1))))
        if h == 0.01:
            G = gradient_field(g).reshape(-1, 2)
            X = g.coords().reshape(-1, 2)
            inside = np.flatnonzero(np.isfinite(G[:, 0]) & (np.abs(np.linalg.norm(X, axis=1) - 1) < tn.epsilon))
            pick = np.random.default_rng(SEED).choice(inside, 200, replace=False)
            grad_err = float(np.max(np.linalg.norm(G[pick] - tn.proper_extensions(X[pick]), axis=1)))
    ratios = [errs[0.04] / errs[0.02], errs[0.02] / errs[0.01]]

    hp = builtin_tube("hyperplane")
    g = solve(initialize_band(Grid.from_box([-1, -1], [1, 1], 0.02), hp, 0.1))
    hp_err = float(np.max(np.abs(g.values - g.coords()[..., 1])))

    ok = (all(errs[h] <= 2 * h for h in errs) and all(1.6 <= q <= 2.4 for q in ratios)
          and hp_err <= 1e-9 and grad_err <= 10 * 0.01)
    acceptance("fast_marching_convergence", ok,
               " ".join(f"err(h={h:g})={e / h:.3f}h" for h, e in errs.items())
               + f" ratios={ratios[0]:.3f},{ratios[1]:.3f} (in [1.6,2.4]) hyperplane={hp_err:.1e}"
               f" |grad-N|={grad_err / 0.01:.2f}h (<=10h)")
    assert ok


def test_unit_field_identity(acceptance):
    worst = 0.0
    count = 0
    for name in SUITE:
        tn = builtin_tube(name)
        _, _, _, X = tube_pairs(tn, 200, np.random.default_rng(SEED))
        P = tn.surface.sample_points(100, np.random.default_rng(SEED + 1))
        for smp in tn.proper_samples(X) + tn.proper_samples(P) + tn.surface.naive_samples(X) + tn.surface.naive_samples(P):
            if abs(smp.unit_norm_defect) > 1e-10:
                continue
            count += 1
            worst = max(worst, smp.identity_defect())
    ok = count > 0 and worst <= 1e-8
    acceptance("unit_field_identity", ok, f"{count} unit samples, max defect={worst:.1e} (<=1e-8)")
    assert ok


def test_suite_is_deterministic(acceptance):
    cmd = [sys.executable, "-m", "propnormal.cli", "suite", "--seed", "42"]
    a = subprocess.run(cmd, capture_output=True, check=False)
    b = subprocess.run(cmd, capture_output=True, check=False)
    ok = a.stdout == b.stdout and a.returncode == b.returncode == 0 and len(a.stdout) > 0
    acceptance("suite_output_deterministic", ok,
               f"{len(a.stdout)} bytes, identical={a.stdout == b.stdout}, exit={a.returncode},{b.returncode}")
    assert ok
