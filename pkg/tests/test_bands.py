import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpdisp.asymptotics import kn_ln_asymptotic
from kpdisp.bands import (
    NoInflectionError,
    band_edge,
    build_band,
    critical_point,
    get_band,
    inflection_candidates,
    inflection_point,
    k_of_theta,
    lambda_jet,
    max_group_velocity,
)
from kpdisp.discriminant import d_prime, discriminant, discriminant_derivs


def test_l0_convention_and_free_limit():
    assert critical_point(0, 1.0) == 0.0
    assert critical_point(3, 0.0) == pytest.approx(3 * np.pi)
    assert band_edge(4, 0.0) == pytest.approx(4 * np.pi)
    # small V: the roots of D' approach those of -2 sin k
    assert critical_point(3, 1e-6) == pytest.approx(3 * np.pi, abs=1e-6)


@pytest.mark.parametrize("V", [0.5, 1.0, 4.0])
@pytest.mark.parametrize("n", [1, 2, 5, 30])
def test_ordering_positive_V(n, V):
    l_n, k_n = critical_point(n, V), band_edge(n, V)
    assert n * np.pi < l_n < k_n < (n + 1) * np.pi
    d2 = abs(float(discriminant_derivs(l_n, V, 2)[2]))
    assert abs(float(d_prime(l_n, V))) < 1e-12 * max(1.0, d2)
    assert float(discriminant(k_n, V)) == pytest.approx(2.0 * (-1) ** n, abs=1e-11)


@pytest.mark.parametrize("n", [2, 3, 7])
def test_ordering_negative_V(n):
    V = -1.0
    l_n, k_n = critical_point(n, V), band_edge(n, V)
    assert (n - 1) * np.pi < k_n < l_n < n * np.pi
    assert float(discriminant(k_n, V)) == pytest.approx(2.0 * (-1) ** n, abs=1e-11)


def test_first_critical_point_is_unique_root_in_pi_2pi():
    ks = np.linspace(np.pi, 2 * np.pi, 20001)
    vals = d_prime(ks, 1.0)
    crossings = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    assert crossings.size == 1
    assert ks[crossings[0]] <= critical_point(1, 1.0) <= ks[crossings[0] + 1]


def test_edge_by_fixed_point_iteration():
    # h = arcsin((1 + cos h)/2 * V/(n pi + h)) has k_n - n pi as its fixed point
    n, V = 5, 1.0
    h = 0.0
    for _ in range(200):
        h = np.arcsin((1 + np.cos(h)) / 2 * V / (n * np.pi + h))
    assert band_edge(n, V) - n * np.pi == pytest.approx(h, abs=1e-13)


@pytest.mark.parametrize("n", [100, 1000])
def test_large_n_against_asymptotic_series(n):
    k_as, l_as = kn_ln_asymptotic(n, 1.0)
    bound = 10 * (n * np.pi) ** -5
    assert abs(band_edge(n, 1.0) - k_as) <= max(bound, 1e-13 * n)
    assert abs(critical_point(n, 1.0) - l_as) <= max(bound, 1e-13 * n)


def test_band_one_interval():
    b = build_band(1, 1.0)
    k0 = band_edge(0, 1.0)
    assert 0 < k0 < np.pi
    assert float(discriminant(k0, 1.0)) == pytest.approx(2.0, abs=1e-12)
    assert b.interval == pytest.approx((k0**2, np.pi**2))


def test_gap_nonempty_and_gap_width_limit():
    assert band_edge(3, 1.0) > 3 * np.pi
    g = band_edge(200, 1.0) ** 2 - (200 * np.pi) ** 2
    assert g == pytest.approx(2.0, rel=0.05)


def test_band_index_validation():
    with pytest.raises(ValueError):
        build_band(0, 1.0)
    with pytest.raises(ValueError):
        build_band(1, -1.0)


def test_free_band_inverse_is_abs_theta():
    b = build_band(1, 0.0)
    th = np.linspace(-np.pi, np.pi, 101)
    assert np.allclose(k_of_theta(b, th), np.abs(th), atol=1e-12)


@pytest.mark.parametrize("n,V", [(1, 1.0), (2, 1.0), (7, 4.0), (20, 0.5), (100, 1.0), (3, -1.0)])
def test_inverse_residual_on_dense_grid(n, V):
    b = get_band(n, V)
    th = np.linspace(-np.pi, np.pi, 10_000)
    k = k_of_theta(b, th)
    assert np.max(np.abs(discriminant(k, V) - 2 * np.cos(th))) < 1e-12
    assert np.all((k >= b.l_lo) & (k <= b.l_hi))
    # evenness is exact by construction
    assert np.array_equal(k, k_of_theta(b, -th))


@pytest.mark.parametrize("n,V", [(1, 1.0), (4, 1.0), (9, 4.0), (2, -1.0)])
def test_band_range_matches_edges(n, V):
    b = get_band(n, V)
    k = k_of_theta(b, np.array([0.0, np.pi]))
    assert sorted(k) == pytest.approx([b.k_lo, b.k_hi], abs=1e-13)


def test_bands_are_ordered_with_gaps():
    for V in (1.0, -1.0):
        ns = range(2, 12) if V < 0 else range(1, 12)
        bands = [get_band(n, V) for n in ns]
        for a, b in zip(bands, bands[1:]):
            assert a.k_hi < b.k_lo


@pytest.mark.parametrize("n", [1, 2, 3, 6])
def test_dk_sign_follows_parity(n):
    b = get_band(n, 1.0)
    th = np.linspace(0.01, np.pi - 0.01, 200)
    k1 = lambda_jet(b, th).dk_dtheta
    assert np.all(np.sign(k1) == (1 if n % 2 else -1))
    assert b.increasing == (n % 2 == 1)


@pytest.mark.parametrize("V", [0.5, 1.0, 4.0])
@pytest.mark.parametrize("n", [1, 5, 20])
def test_edge_identity(n, V):
    b = get_band(n, V)
    s = lambda_jet(b, b.top_theta)
    assert s.d2 == pytest.approx(-4 * (n * np.pi) ** 2 / V, rel=1e-8)
    assert s.d1 == 0.0 and s.d3 == 0.0
    assert s.lam == pytest.approx((n * np.pi) ** 2, rel=1e-15)


def _fd5(f, x, h, order):
    v = [f(x + j * h) for j in (-2, -1, 0, 1, 2)]
    if order == 1:
        return (v[0] - 8 * v[1] + 8 * v[3] - v[4]) / (12 * h)
    if order == 2:
        return (-v[0] + 16 * v[1] - 30 * v[2] + 16 * v[3] - v[4]) / (12 * h**2)
    return (-v[0] + 2 * v[1] - 2 * v[3] + v[4]) / (2 * h**3)


def test_jet_matches_finite_differences_n3():
    b = get_band(3, 1.0)
    lam = lambda th: lambda_jet(b, th).lam
    s = lambda_jet(b, 2.0)
    assert s.d1 == pytest.approx(_fd5(lam, 2.0, 1e-4, 1), rel=1e-5)
    assert s.d2 == pytest.approx(_fd5(lam, 2.0, 1e-4, 2), rel=1e-5)
    # third derivative: rounding eps*lam/h^3 needs a wider step plus one
    # Richardson step to cancel the h^2 truncation term
    rich = (4 * _fd5(lam, 2.0, 2e-3, 3) - _fd5(lam, 2.0, 4e-3, 3)) / 3
    assert s.d3 == pytest.approx(rich, rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0.05, np.pi - 0.05))
def test_jet_derivative_consistency_property(n, theta):
    # d1 and d2 are the derivatives of lam and d1 (checked by central differences)
    b = get_band(n, 1.0)
    if abs(np.sin(theta)) < 1e-2:
        return
    h = 1e-5
    j0, jm, jp = lambda_jet(b, theta), lambda_jet(b, theta - h), lambda_jet(b, theta + h)
    scale1 = max(abs(j0.d1), 1.0) * max(1.0, abs(j0.d2) / max(abs(j0.d1), 1.0))
    assert abs((jp.lam - jm.lam) / (2 * h) - j0.d1) <= 1e-5 * scale1 + 1e-6 * j0.lam
    assert abs((jp.d1 - jm.d1) / (2 * h) - j0.d2) <= 1e-5 * max(abs(j0.d2), abs(j0.d3) * h, 1.0) + 1e-4


def test_inflection_n1000_in_bracket_and_simple():
    b = get_band(1000, 1.0)
    th0 = inflection_point(b)
    d = (1 / (4 * 1000 * np.pi)) ** (1 / 3)
    assert 1000 * np.pi - 2 * d <= th0 <= 1000 * np.pi - d / 2
    assert abs(lambda_jet(b, th0).d2) < 1e-6 * 4 * (1000 * np.pi) ** 2
    assert lambda_jet(b, th0 - 1e-3).d2 * lambda_jet(b, th0 + 1e-3).d2 < 0


def test_inflection_candidates_small_n():
    # small n: all sign changes are reported; one per half period near the top edge
    for n in (1, 2, 3):
        c = inflection_candidates(get_band(n, 1.0))
        assert c.size == 1
        assert (n - 1) * np.pi < c[0] < n * np.pi


def test_no_inflection_error_carries_candidates():
    err = NoInflectionError("x", candidates=[1.0, 2.0])
    assert err.candidates == (1.0, 2.0)


def test_max_group_velocity_n50_and_grid_oracle():
    b = get_band(50, 1.0)
    ratio = max_group_velocity(b) / (2 * 50 * np.pi)
    assert abs(ratio - 1) <= 5 * 50 ** (-2 / 3)
    b = get_band(10, 1.0)
    th = np.linspace(9 * np.pi, 10 * np.pi, 100_000)
    grid_max = np.max(np.abs(lambda_jet(b, th).d1))
    vmax = max_group_velocity(b)
    assert vmax >= grid_max * (1 - 1e-12)
    assert vmax == pytest.approx(grid_max, rel=1e-4)


def test_band_is_immutable():
    b = get_band(2, 1.0)
    with pytest.raises(ValueError):
        b._k_tab[0] = 1.0
