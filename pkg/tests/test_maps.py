import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nuelab.maps import (
    CIRCLE,
    TORUS,
    BatchOrbit,
    DegenerateMapError,
    ExampleFamilyConfig,
    PhaseSpace,
    build_example_family,
    certify_amplitude,
    chebyshev,
    counting_residual,
    doubling,
    example_base,
    identity,
    jet,
    lambda_from_theta,
    map_from_name,
    tent,
    theta_from_counting,
    truncated_crit_distance,
    validate_nondegeneracy,
    verify_example_conditions,
)

unit = st.floats(0, 1, exclude_max=True)
torus_pt = st.tuples(unit, unit)


# --- phase spaces -----------------------------------------------------------


@given(torus_pt, torus_pt, torus_pt)
def test_torus_metric(x, y, z):
    x, y, z = (np.array([v]) for v in (x, y, z))
    dxy = TORUS.distance(x, y)[0]
    assert dxy == pytest.approx(TORUS.distance(y, x)[0])
    assert dxy <= TORUS.distance(x, z)[0] + TORUS.distance(z, y)[0] + 1e-12
    # min over integer translates
    shifts = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)])
    brute = np.min(np.linalg.norm(y[0] + shifts - x[0], axis=1))
    assert dxy == pytest.approx(brute, abs=1e-12)
    assert dxy <= TORUS.diameter + 1e-12


@given(st.floats(-10, 10, allow_nan=False))
def test_circle_wrap(x):
    w = CIRCLE.wrap(np.array([[x]]))[0, 0]
    assert 0.0 <= w < 1.0
    assert CIRCLE.distance(np.array([[x]]), np.array([[w]]))[0] < 1e-9


def test_interval_space():
    I = PhaseSpace("interval", -1.0, 1.0)
    assert I.volume == 2.0 and I.dim == 1 and not I.periodic
    with pytest.raises(ValueError):
        PhaseSpace("sphere")
    with pytest.raises(ValueError):
        PhaseSpace("interval", 1.0, 0.0)


# --- jets -------------------------------------------------------------------


@given(unit)
def test_doubling_jet(x):
    j = jet(doubling(), x)
    assert j.log_inv_norm == pytest.approx(-math.log(2))
    assert j.log_det == pytest.approx(math.log(2))
    assert j.crit_dist == math.inf


def test_chebyshev_jet():
    j = jet(chebyshev(), 0.5)
    assert j.jac[0, 0] == pytest.approx(-2.0)
    assert j.log_inv_norm == pytest.approx(-math.log(2))
    assert j.crit_dist == pytest.approx(0.5)
    assert j.image[0] == pytest.approx(0.5)


def test_jet_on_critical_point_is_flagged():
    j = jet(chebyshev(), 0.0)
    assert j.singular
    assert j.log_det == -math.inf and j.log_inv_norm == math.inf


@given(torus_pt)
def test_example_base_jet(x):
    j = jet(example_base(3), np.array(x))
    assert np.array_equal(j.jac, np.diag([3.0, 3.0]))
    assert j.log_det == pytest.approx(2 * math.log(3))


@given(torus_pt)
def test_det_closed_form(x):
    m = build_example_family(ExampleFamilyConfig(a=0.1))
    j = jet(m, np.array(x))
    assert math.exp(j.log_det) == pytest.approx(abs(np.linalg.det(j.jac)), rel=1e-12)
    assert math.exp(j.log_inv_norm) == pytest.approx(np.linalg.norm(np.linalg.inv(j.jac), 2), rel=1e-10)


@given(st.tuples(st.floats(0.36, 0.64), st.floats(0.36, 0.64)))
def test_example_jacobian_matches_central_differences(x):
    m = build_example_family(ExampleFamilyConfig(a=0.1))
    x = np.array(x)
    h = 1e-6
    J = m.jacobian(x)[0]
    num = np.empty((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        num[:, i] = (m.f((x + e)[None]) - m.f((x - e)[None]))[0] / (2 * h)
    assert np.allclose(num, J, rtol=1e-4, atol=1e-4 * np.abs(J).max())


@given(st.floats(-0.99, 0.99).filter(lambda v: abs(v) > 1e-3))
def test_chebyshev_jacobian_matches_central_differences(x):
    m = chebyshev()
    h = 1e-6
    num = (m.f(np.array([[x + h]])) - m.f(np.array([[x - h]])))[0, 0] / (2 * h)
    assert num == pytest.approx(m.jacobian(x)[0, 0, 0], rel=1e-4)


@given(torus_pt)
def test_jet_image_is_eval(x):
    m = build_example_family(ExampleFamilyConfig(a=0.05))
    assert np.allclose(jet(m, np.array(x)).image, m(np.array(x))[0])


# --- truncated distance ------------------------------------------------------


def test_truncated_distance_examples():
    assert truncated_crit_distance(doubling(), 0.3, 0.1) == 1.0
    assert truncated_crit_distance(chebyshev(), 0.05, 0.1) == pytest.approx(0.05)
    assert truncated_crit_distance(chebyshev(), 0.5, 0.1) == 1.0


@given(st.floats(-1, 1), st.floats(0.001, 1.5))
def test_truncated_distance_range(x, delta):
    v = truncated_crit_distance(chebyshev(), x, delta)
    assert v == 1.0 or v < delta


# --- lattice orbits ------------------------------------------------------------


def test_lattice_doubling_does_not_collapse():
    orbit = BatchOrbit(doubling(), np.array([[0.1], [0.3], [0.7]]))
    for _ in range(500):
        orbit.step()
    assert np.all(orbit.points > 0)
    # the float orbit of the same points collapses onto 0 within 60 steps
    x = np.array([0.1, 0.3, 0.7])
    for _ in range(60):
        x = (2 * x) % 1.0
    assert np.all(x == 0)


# --- non-degeneracy -----------------------------------------------------------


def test_nondegeneracy_doubling():
    r = validate_nondegeneracy(doubling(), 2000, 0, B=4, beta=1)
    assert r.passed
    assert all(row.margin > 0 for row in r.rows)


def test_nondegeneracy_chebyshev():
    assert validate_nondegeneracy(chebyshev(), 5000, 0, B=8, beta=1).passed
    bad = validate_nondegeneracy(chebyshev(), 5000, 0, B=1.01, beta=1)
    assert not bad.passed
    assert bad.violations[0].worst_point


# --- example family -------------------------------------------------------------


def test_zero_amplitude_is_base_map():
    g = (np.arange(100) + 0.5) / 100
    P = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    m = build_example_family(ExampleFamilyConfig(a=0.0))
    assert np.abs(m(P) - TORUS.wrap(3 * P)).max() <= 1e-15


def test_large_radius_refused():
    with pytest.raises(DegenerateMapError):
        build_example_family(ExampleFamilyConfig(k=3, r_V=0.2))


def test_degenerate_amplitude_reports_point():
    with pytest.raises(DegenerateMapError) as e:
        build_example_family(ExampleFamilyConfig(a=0.5))
    assert e.value.point is not None and e.value.value <= 0


def test_conditions_at_zero_amplitude():
    m = example_base(3)
    assert verify_example_conditions(m, (0.5, 0.5), 0.15, 2.9, 8.9, 0.05, 64).passed
    r = verify_example_conditions(m, (0.5, 0.5), 0.15, 2.9, 10.0, 0.05, 64)
    assert not r.passed
    assert [v.condition for v in r.violations] == ["volume_expanding"]


def _amplitude_oracle(k, r_V, sigma1, delta_V):
    """Largest amplitude from the gradient range of the bump.

    The bump's gradient takes every value g (cos t, sin t) with
    0 <= g <= g_max; both conditions are checked on that set.
    """
    rho = np.linspace(0, 1, 200001)
    g_max = 6 * np.max(rho * (1 - rho**2) ** 2) / r_V
    g = np.linspace(0, g_max, 401)
    t = np.linspace(0, 2 * np.pi, 721)
    G, Tt = np.meshgrid(g, t)
    gx, gy = (G * np.cos(Tt)).ravel(), (G * np.sin(Tt)).ravel()

    def ok(a):
        J = np.zeros((len(gx), 2, 2))
        J[:, 0, 0] = k + a * gx
        J[:, 0, 1] = a * gy
        J[:, 1, 1] = k
        det = np.linalg.det(J)
        smin = np.linalg.svd(J, compute_uv=False)[:, -1]
        return det.min() > sigma1 and (1 / smin).max() < 1 + delta_V

    lo, hi = 0.0, k / g_max
    for _ in range(50):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def test_certified_amplitude_against_gradient_oracle():
    a_star = certify_amplitude(ExampleFamilyConfig(), 2.0, 4.0, 0.05, grid=512)
    a_c = _amplitude_oracle(3, 0.15, 4.0, 0.05)
    assert a_c == pytest.approx(0.145576, abs=2e-6)
    assert 0.98 * a_c <= a_star <= a_c
    m = build_example_family(ExampleFamilyConfig(a=a_star))
    assert verify_example_conditions(m, (0.5, 0.5), 0.15, 2.0, 4.0, 0.05, 512).passed


# --- counting constants -----------------------------------------------------------


def test_theta_examples():
    assert theta_from_counting(1, 4.0) > 0
    th = theta_from_counting(4, 9.0)
    assert counting_residual(th, 4, 9.0) > 0
    assert counting_residual(th + 1e-9, 4, 9.0) <= 1e-12
    tiny = theta_from_counting(4, 1.0001)
    assert 0 < tiny < 1e-3
    with pytest.raises(ValueError):
        theta_from_counting(1, 1.0)


def test_theta_against_brentq():
    from scipy.optimize import brentq

    for p, s1 in [(2, 3.0), (4, 9.0), (3, 5.0)]:
        root = brentq(lambda t: counting_residual(t, p, s1), 1e-6, 0.5 - 1e-12)
        assert theta_from_counting(p, s1) == pytest.approx(root, abs=1e-12)


def test_theta_monotone_on_lattice():
    for p in (1, 2, 3, 5):
        vals = [theta_from_counting(p, s) for s in (1.5, 2, 3, 5, 9)]
        assert vals == sorted(vals)
    for s in (1.5, 3.0, 9.0):
        vals = [theta_from_counting(p, s) for p in (1, 2, 3, 5, 8)]
        assert vals == sorted(vals, reverse=True)


def test_lambda_from_theta():
    assert lambda_from_theta(2.0, 0.0, 0.5) == pytest.approx(0.5 * math.log(2))
    assert lambda_from_theta(2.0, 0.1, 0.5) == pytest.approx(0.2989, abs=5e-5)
    assert lambda_from_theta(1.05, 0.5, 0.1) is None


def test_map_registry():
    assert map_from_name("doubling").name == "doubling"
    assert map_from_name("tent").space.kind == "interval"
    assert map_from_name("identity", {"space": "torus"}).dim == 2
    assert map_from_name("example", {"a": 0.01}).params["a"] == 0.01
    with pytest.raises(ValueError):
        map_from_name("henon")
