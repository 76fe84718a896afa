import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propnormal.catalog import builtin_surface
from propnormal.errors import NotOnSurfaceError, OutsideDomainError, RegularityError
from propnormal.surface import ImplicitSurface, VectorFieldSample, load_surface, parse_surface_spec


@pytest.fixture(scope="module")
def ellipse():
    return builtin_surface("ellipse")


@pytest.fixture(scope="module")
def circle():
    return builtin_surface("circle")


def closed_forms(x1, x2):
    q = (x1 ** 2 + 4 * x2 ** 2) ** 1.5
    return -2 * x2 * x1 / q, -4 * x1 * x2 / q


def fd_naive_jacobian(s, x, h=1e-6):
    """Central differences of grad psi / |grad psi|, J[j][k] = d_j N_k."""
    n = len(x)
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[j] = (s.naive_sample(x + e).value - s.naive_sample(x - e).value) / (2 * h)
    return J


def test_on_surface(ellipse, circle):
    assert ellipse.on_surface([1.0, 0.0], 1e-12)
    assert not ellipse.on_surface([1.0, 1.0], 1e-12)
    assert circle.on_surface([math.cos(0.3), math.sin(0.3)], 1e-12)


def test_on_surface_rejects_singular_point():
    s = builtin_surface("circle")
    with pytest.raises(RegularityError):
        s.on_surface([0.0, 0.0])


def test_outside_box(ellipse):
    with pytest.raises(OutsideDomainError):
        ellipse.on_surface([3.0, 0.0])


def test_normals(ellipse):
    np.testing.assert_array_equal(ellipse.normal([1.0, 0.0]), [1.0, 0.0])
    nu = ellipse.normal([0.0, 1 / math.sqrt(2)])
    assert nu == pytest.approx([0.0, 1.0], abs=1e-15)
    with pytest.raises(NotOnSurfaceError):
        ellipse.normal([0.5, 0.5])


def test_sphere_normal_is_the_point():
    s = builtin_surface("sphere")
    rng = np.random.default_rng(3)
    for p in s.sample_points(20, rng):
        nu = s.normal(p)
        assert np.linalg.norm(nu) == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(nu, p, atol=1e-12)


def test_counterexample_entries_at_one_one(ellipse):
    smp = ellipse.naive_sample([1.0, 1.0])
    assert smp.jacobian[0, 1] == pytest.approx(-2 / 5 ** 1.5, abs=1e-15)
    assert smp.jacobian[1, 0] == pytest.approx(-4 / 5 ** 1.5, abs=1e-15)
    assert smp.asym[0, 1] != 0.0


def test_axis_points_have_symmetric_jacobian(ellipse):
    np.testing.assert_array_equal(ellipse.naive_sample([1.0, 0.0]).asym, np.zeros((2, 2)))
    np.testing.assert_array_equal(ellipse.naive_sample([0.0, 0.5]).asym, np.zeros((2, 2)))


def test_circle_naive_field_is_symmetric(circle):
    rng = np.random.default_rng(0)
    for x in rng.uniform(-1.9, 1.9, size=(50, 2)):
        if np.linalg.norm(x) < 0.1:
            continue
        smp = circle.naive_sample(x)
        r = np.linalg.norm(x)
        expect = np.eye(2) / r - np.outer(x, x) / r ** 3
        np.testing.assert_allclose(smp.jacobian, expect, atol=1e-12)
        np.testing.assert_allclose(fd_naive_jacobian(circle, x), expect, atol=1e-6)
        assert np.max(np.abs(smp.asym)) <= 1e-14


def test_random_points_match_closed_forms(ellipse):
    rng = np.random.default_rng(7)
    X = rng.uniform(-1.5, 1.5, size=(100, 2))
    X = X[np.abs(X[:, 0] * X[:, 1]) > 1e-3]
    for smp in ellipse.naive_samples(X):
        c12, c21 = closed_forms(*smp.point)
        assert abs(smp.jacobian[0, 1] - c12) <= 1e-10
        assert abs(smp.jacobian[1, 0] - c21) <= 1e-10
        assert smp.asym[0, 1] != 0.0


def test_batch_and_single_samples_agree(ellipse):
    X = np.array([[1.0, 1.0], [0.3, -0.2], [-1.2, 0.7]])
    for a, x in zip(ellipse.naive_samples(X), X):
        b = ellipse.naive_sample(x)
        np.testing.assert_array_equal(a.value, b.value)
        np.testing.assert_array_equal(a.jacobian, b.jacobian)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["ellipse", "ellipsoid", "torus", "sphere"]), st.integers(0, 10 ** 6))
def test_naive_sample_invariants(name, seed):
    s = builtin_surface(name)
    x = np.random.default_rng(seed).uniform(s.lo * 0.9, s.hi * 0.9)
    try:
        smp = s.naive_sample(x)
    except (RegularityError, ArithmeticError):
        return
    np.testing.assert_array_equal(smp.asym, -smp.asym.T)
    assert abs(smp.unit_norm_defect) <= 1e-14
    scale = 1 + np.max(np.abs(smp.jacobian))
    if scale < 1e3:
        np.testing.assert_allclose(fd_naive_jacobian(s, x), smp.jacobian, atol=1e-5 * scale)
    # unit-field identity
    assert smp.identity_defect() <= 1e-10 * scale


def test_normal_equals_naive_value_on_surface(ellipse):
    rng = np.random.default_rng(11)
    for p in ellipse.sample_points(30, rng):
        np.testing.assert_array_equal(ellipse.normal(p), ellipse.naive_sample(p).value)


def test_sample_points_are_on_surface_and_spaced():
    s = builtin_surface("torus")
    P = s.sample_points(100, np.random.default_rng(5))
    assert P.shape == (100, 3)
    assert all(s.on_surface(p, 1e-12) for p in P)
    d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 1e-3


def test_vector_field_sample_derived_fields():
    J = np.array([[1.0, 2.0], [3.0, 4.0]])
    smp = VectorFieldSample([0.0, 0.0], [0.6, 0.8], J)
    np.testing.assert_array_equal(smp.asym, [[0.0, -1.0], [1.0, 0.0]])
    # (d_N N)_j = sum_k N_k J[k][j]
    np.testing.assert_allclose(smp.autoparallel, [0.6 * 1 + 0.8 * 3, 0.6 * 2 + 0.8 * 4])
    assert smp.unit_norm_defect == pytest.approx(0.0, abs=1e-16)


def test_empty_surface_is_rejected():
    with pytest.raises(ValueError):
        ImplicitSurface.from_text("x1^2 + x2^2 + 1", 2, (-1, 1, -1, 1))
    with pytest.raises(ValueError):
        ImplicitSurface.from_text("x1^2 + x2^2 - 1", 2, (3, 4, 3, 4))


def test_high_dimension_skips_emptiness_check():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ImplicitSurface.from_text("x5", 5, (-1, 1) * 5)
    assert any("skipped" in str(w.message) for w in caught)


def test_spec_file_parsing(tmp_path):
    text = "# unit circle\ndim = 2\npsi = x1^2 + x2^2 - 1\nbox = -2 2 -2 2\nfloor = 1e-8\n"
    s = parse_surface_spec(text)
    assert s.dim == 2 and s.floor == 1e-8
    np.testing.assert_array_equal(s.lo, [-2, -2])
    path = tmp_path / "round.txt"
    path.write_text(text, encoding="utf-8")
    assert load_surface(path).name == "round"


@pytest.mark.parametrize("text", [
    "dim = 2\npsi = x1\n",
    "dim = 2\npsi = x1\nbox = -1 1\n",
    "dim = two\npsi = x1\nbox = -1 1 -1 1\n",
    "dim = 2\npsi = x1\nbox = -1 1 -1 1\ncolour = red\n",
    "dim = 2\ndim = 2\npsi = x1\nbox = -1 1 -1 1\n",
])
def test_bad_spec_files(text):
    with pytest.raises(ValueError):
        parse_surface_spec(text)
