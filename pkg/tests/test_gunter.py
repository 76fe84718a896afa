import math

import numpy as np
import pytest

from propnormal import gunter
from propnormal.catalog import SUITE, builtin_surface, builtin_tube
from propnormal.errors import NotOnSurfaceError, PreconditionError
from propnormal.surface import VectorFieldSample

POINT = np.array([1 / math.sqrt(2), 0.5])  # on the ellipse, x1 x2 != 0


def fd_gunter(s, x, h=1e-6):
    """Gunter matrix of the naive field from finite-difference Jacobians."""
    n = len(x)
    nu = s.naive_sample(x).value
    J = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[k] = (s.naive_sample(x + e).value - s.naive_sample(x - e).value) / (2 * h)
    # D_k = d_k - nu_k d_nu
    return J - nu[:, None] * (nu @ J)[None, :]


def test_proper_sample_gunter_equals_jacobian():
    tn = builtin_tube("ellipse")
    smp = tn.proper_extension_sample([1.05, 0.1])
    np.testing.assert_allclose(gunter.gunter_matrix(smp, "proper").d, smp.jacobian, atol=1e-5)


def test_naive_ellipse_gunter_symmetric_on_surface():
    s = builtin_surface("ellipse")
    smp = s.naive_sample(POINT)
    assert abs(smp.jacobian[0, 1] - smp.jacobian[1, 0]) > 0.1
    d = gunter.gunter_matrix(smp, "naive").d
    assert abs(d[0, 1] - d[1, 0]) <= 1e-8
    np.testing.assert_allclose(fd_gunter(s, POINT), d, atol=1e-6)


def test_constant_field_has_zero_gunter_matrix():
    smp = VectorFieldSample(np.zeros(3), np.array([1.0, 0.0, 0.0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(gunter.gunter_matrix(smp).d, np.zeros((3, 3)))


@pytest.mark.parametrize("name, bound", [("ellipse", 1e-8), ("sphere", 1e-10), ("ellipsoid", 1e-8),
                                         ("torus", 1e-8), ("circle", 1e-10)])
def test_symmetry_on_surface(name, bound):
    s = builtin_surface(name)
    P = s.sample_points(100, np.random.default_rng(0))
    assert gunter.check_gunter_symmetry_on_surface(s, P) <= bound


def test_sphere_gunter_matrix_is_tangential_projector():
    s = builtin_surface("sphere")
    for p in s.sample_points(20, np.random.default_rng(1)):
        d = gunter.gunter_matrix(s.naive_sample(p)).d
        np.testing.assert_allclose(d, np.eye(3) - np.outer(p, p), atol=1e-12)


def test_hyperplane_symmetry_exactly_zero():
    s = builtin_surface("hyperplane")
    P = np.array([[x, 0.0] for x in np.linspace(-0.9, 0.9, 10)])
    assert gunter.check_gunter_symmetry_on_surface(s, P) == 0.0


def test_symmetry_check_requires_surface_points():
    s = builtin_surface("ellipse")
    with pytest.raises(NotOnSurfaceError):
        gunter.check_gunter_symmetry_on_surface(s, [[0.5, 0.5]])


def test_restriction_consistency():
    s = builtin_surface("ellipse")
    tn = builtin_tube("ellipse")
    P = s.sample_points(50, np.random.default_rng(2))
    for a, b in zip(s.naive_samples(P), tn.proper_samples(P)):
        np.testing.assert_allclose(gunter.gunter_matrix(a).d, gunter.gunter_matrix(b).d, atol=1e-5)


def test_equivalence_proper_ellipse():
    s = builtin_surface("ellipse")
    tn = builtin_tube("ellipse")
    P = s.sample_points(50, np.random.default_rng(3))
    rep = gunter.check_autoparallel_equivalence(s, tn.proper_samples, P, 1e-6)
    assert rep.holds and rep.both_hold == 50


def test_equivalence_naive_ellipse_fails_jointly():
    s = builtin_surface("ellipse")
    rep = gunter.check_autoparallel_equivalence(s, s.naive_samples, [POINT], 1e-6)
    assert rep.both_fail == 1 and rep.mixed == 0
    assert rep.holds
    # a = |asym^T nu| recovered from b through the unit-field identity
    smp = s.naive_sample(POINT)
    assert rep.a[0] == pytest.approx(np.linalg.norm(smp.asym.T @ smp.value), rel=1e-10)


def test_equivalence_naive_circle_holds():
    s = builtin_surface("circle")
    P = s.sample_points(30, np.random.default_rng(4))
    rep = gunter.check_autoparallel_equivalence(s, s.naive_samples, P, 1e-10)
    assert rep.both_hold == 30
    assert rep.a.max() <= 1e-10 and rep.b.max() <= 1e-10


def test_equivalence_rejects_non_unit_field():
    s = builtin_surface("circle")

    def doubled(X):
        return [VectorFieldSample(smp.point, 2 * smp.value, 2 * smp.jacobian) for smp in s.naive_samples(X)]

    with pytest.raises(PreconditionError):
        gunter.check_autoparallel_equivalence(s, doubled, [[1.0, 0.0]])


def test_implication_violation_is_detected():
    s = builtin_surface("circle")

    def skewed(X):
        # symmetric Jacobian, but not autoparallel: (ii) holds, (i) fails
        return [VectorFieldSample(smp.point, smp.value, np.eye(2)) for smp in s.naive_samples(X)]

    rep = gunter.check_autoparallel_equivalence(s, skewed, [[1.0, 0.0]], 1e-6)
    assert rep.implication_violations == 1
    assert not rep.holds


def test_derivative_agreement():
    ell = builtin_surface("ellipse")
    P = ell.sample_points(100, np.random.default_rng(5))
    assert gunter.check_derivative_agreement(ell, builtin_tube("ellipse").proper_samples, P) <= 1e-5
    circ = builtin_surface("circle")
    assert gunter.check_derivative_agreement(circ, circ.naive_samples, circ.sample_points(30, np.random.default_rng(6))) <= 1e-8
    hp = builtin_surface("hyperplane")
    assert gunter.check_derivative_agreement(hp, hp.naive_samples, [[0.3, 0.0], [-0.5, 0.0]]) == 0.0
    with pytest.raises(PreconditionError):
        gunter.check_derivative_agreement(ell, ell.naive_samples, [POINT])


@pytest.mark.parametrize("name", SUITE)
def test_verify_properness_proper(name):
    rep = gunter.verify_properness(builtin_tube(name), 300, seed=1)
    assert rep.verdict == "proper"
    assert rep.witnesses == []
    assert rep.projection_failures == 0
    assert rep.max_identity_defect <= 1e-8


def test_verify_naive_ellipse_not_proper():
    rep = gunter.verify_properness(builtin_tube("ellipse"), 300, field_kind="naive", seed=1)
    assert rep.verdict == "not_proper"
    assert 1 <= len(rep.witnesses) <= 5
    for w in rep.witnesses:
        assert abs(w.point[0] * w.point[1]) > 0
    scores = [w.asym for w in rep.witnesses]
    assert scores == sorted(scores, reverse=True)


def test_verify_naive_circle_proper():
    assert gunter.verify_properness(builtin_tube("circle"), 200, field_kind="naive").verdict == "proper"


def test_verdict_respects_tolerances():
    tight = gunter.Tolerances(asym=1e-16)
    rep = gunter.verify_properness(builtin_tube("ellipse"), 50, tight)
    assert rep.verdict == "not_proper"
    assert rep.witnesses


def test_tolerances_must_be_positive():
    with pytest.raises(ValueError):
        gunter.Tolerances(unit=0.0)


def test_report_rendering_is_deterministic():
    tn = builtin_tube("ellipsoid")
    a = gunter.verify_properness(tn, 100, seed=3)
    b = gunter.verify_properness(tn, 100, seed=3)
    assert a.render() == b.render()
    assert a.key_values() == b.key_values()
    kv = dict(line.split("=", 1) for line in a.key_values().splitlines())
    assert kv["verdict"] == "proper" and kv["points_checked"] == "100"
