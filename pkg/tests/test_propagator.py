import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import fresnel

from kpdisp.bands import get_band, inflection_point, lambda_jet, max_group_velocity
from kpdisp.propagator import (
    KernelQuery,
    QuadratureSpec,
    ResolutionRefused,
    ThetaInterval,
    VdCInput,
    amplitude_l1,
    best_band_bound,
    certified_band_bound,
    floquet_multipliers,
    kernel,
    kernel_direct,
    kernel_grid,
    kernel_oracle_eigen,
    kernel_via_stone,
    monotone_partition,
    node_count,
    panel_edges,
    resolvent_kernel,
    resonant_partition,
    van_der_corput_bound,
    vdc_constant,
)


def test_query_derived_fields():
    q = KernelQuery(3, 2.0, 4.25, -0.5)
    assert (q.jx, q.jy, q.offset) == (4, -1, 5)
    assert q.xp == pytest.approx(0.25) and q.yp == pytest.approx(0.5)
    assert q.s == pytest.approx(2.5)
    with pytest.raises(ValueError):
        KernelQuery(1, 1.0, 2.0, 0.5)
    with pytest.raises(ValueError):
        KernelQuery(0, 1.0, 0.2, 0.5)
    with pytest.raises(ValueError):  # x' = 1 - 1e-109 rounds to 1
        KernelQuery(1, 1.0, 0.5, -1e-109)


def test_hermitian_symmetry_via_direct_quadrature():
    q = KernelQuery(2, 5.0, 0.3, 1.7)
    lhs = kernel_direct(q)
    rhs = np.conj(kernel_direct(KernelQuery(2, -5.0, 1.7, 0.3)))
    assert abs(lhs - rhs) < 1e-8
    assert abs(kernel(KernelQuery(2, -5.0, 1.7, 0.3)) - np.conj(lhs)) < 1e-15


def test_t0_projection_against_oracle():
    q = KernelQuery(2, 0.0, 0.3, 0.8)
    assert abs(kernel(q) - kernel_oracle_eigen(q)) < 1e-6
    diag = kernel_oracle_eigen(KernelQuery(3, 0.0, 0.4, 0.4))
    assert diag.real > 0 and abs(diag.imag) < 1e-12
    assert abs(kernel(KernelQuery(3, 0.0, 0.4, 0.4)) - diag) < 1e-6


@pytest.mark.parametrize("n,t,x,y", [(1, 3.0, 0.2, 0.7), (4, 20.0, 2.5, 0.1), (10, 100.0, 3.3, 0.6)])
def test_doubling_self_convergence(n, t, x, y):
    q = KernelQuery(n, t, x, y)
    spec = QuadratureSpec()
    a, b = kernel(q, spec), kernel(q, spec.doubled())
    assert abs(a - b) <= 1e-8 * max(abs(b), 1e-6)


def test_oracle_agreement_reference_point():
    q = KernelQuery(1, 2.0, 0.4, 0.9)
    assert abs(kernel(q) - kernel_oracle_eigen(q, 10_000)) < 1e-5


def test_stone_agreement_reference_point():
    q = KernelQuery(2, 1.0, 0.25, 0.75)
    assert abs(kernel(q) - kernel_via_stone(q)) < 1e-4


def test_stone_diagonal_projection_and_sign_factor():
    q = KernelQuery(1, 0.0, 0.35, 0.35)
    assert kernel_via_stone(q).real == pytest.approx(kernel_oracle_eigen(q).real, abs=1e-6)
    # the (-1)^(n-1) factor compensates the orientation of theta(lambda) in band 2
    for n in (1, 2):
        q = KernelQuery(n, 0.7, 0.3, 1.6)
        assert abs(kernel_via_stone(q) - kernel(q)) < 1e-6


def test_stone_excluded_mass_reported():
    q = KernelQuery(2, 1.0, 0.25, 0.75)
    res = kernel_via_stone(q, eps=1e-6, with_excluded=True)
    assert res.excluded_mass > 0
    # the estimate accounts for the whole discrepancy with the full-range integral
    assert abs(res.value - kernel_via_stone(q)) < 3 * res.excluded_mass


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 5), st.floats(-10.0, 10.0), st.floats(-2.9, 2.9), st.floats(-2.9, 2.9))
def test_three_routes_agree_property(n, t, x, y):
    try:
        q = KernelQuery(n, t, x, y)
    except ValueError:  # integer positions, including ones that round onto a cell edge
        return
    k = kernel(q)
    assert abs(k - kernel_oracle_eigen(q)) < 1e-4
    assert abs(k - kernel_via_stone(q)) < 1e-4


@pytest.mark.parametrize("n,t", [(1, 0.5), (5, 10.0), (10, 300.0)])
def test_kernel_below_amplitude_l1(n, t):
    band = get_band(n, 1.0)
    q = KernelQuery(n, t, 0.3, 1.9)
    mean_abs, max_abs = amplitude_l1(band, q.xp, q.yp)
    assert abs(kernel(q)) <= mean_abs * (1 + 1e-6) <= max_abs * (1 + 1e-6)


def test_kernel_grid_matches_pointwise():
    band = get_band(3, 1.0)
    xs = np.linspace(0.1, 0.9, 5)
    ys = np.array([0.2, 0.5, 0.65])
    g = kernel_grid(band, 7.0, 2, xs, ys)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            assert abs(g.values[i, j] - kernel(KernelQuery(3, 7.0, 2 + x, y))) < 1e-12
    with pytest.raises(ValueError):
        kernel_grid(band, 1.0, 0, [0.0], [0.5])


def test_node_budget_and_refusal():
    band = get_band(10, 1.0)
    spec = QuadratureSpec()
    width = band.interval[1] - band.interval[0]
    for t in (1e2, 1e3):
        need = node_count(band, t, 0, spec)
        assert need >= spec.nodes_per_oscillation * t * width / (2 * np.pi)
        assert need >= spec.min_nodes
    edges = panel_edges(band, 10.0, 0, spec)
    for b in (-np.pi, 0.0, np.pi):
        assert np.min(np.abs(edges - b)) == 0
    with pytest.raises(ResolutionRefused) as err:
        kernel(KernelQuery(10, 1e5, 0.3, 0.6), QuadratureSpec(max_nodes=10_000))
    assert err.value.needed > err.value.cap == 10_000
    with pytest.raises(ValueError):
        QuadratureSpec(nodes_per_oscillation=2)


# --- resolvent ----------------------------------------------------------------

@pytest.mark.parametrize("lam", [-1.0, 20.0 + 3.0j, 30.0 - 0.5j])
def test_floquet_roots(lam):
    z, w = floquet_multipliers(lam, 1.0)
    assert z * w == pytest.approx(1.0, abs=1e-12)
    assert abs(z) < 1 < abs(w)


def test_resolvent_free_limit():
    from kpdisp.discriminant import PotentialStrength

    V0 = PotentialStrength(0.0, allow_zero=True)
    assert resolvent_kernel(-1.0, 0.3, 1.7, V0) == pytest.approx(np.exp(-1.4) / 2, rel=1e-12)


def test_resolvent_rejects_spectrum_and_is_symmetric():
    band = get_band(2, 1.0)
    with pytest.raises(ValueError):
        resolvent_kernel(sum(band.interval) / 2, 0.3, 0.6, 1.0)
    lam = 12.0 + 2.0j
    assert resolvent_kernel(lam, 0.3, 2.6, 1.0) == pytest.approx(resolvent_kernel(lam, 2.6, 0.3, 1.0))


def _apply_resolvent(lam, xs, f, a, b, V, order=120):
    gx, gw = np.polynomial.legendre.leggauss(order)
    out = np.empty(xs.size, complex)
    for i, x in enumerate(xs):
        total = 0.0
        # split at y = x (kink of the Green's function) and at the integers
        cuts = sorted({a, b, min(max(x, a), b), *[c for c in range(int(np.ceil(a)), int(b) + 1)]})
        for lo, hi in zip(cuts, cuts[1:]):
            if hi - lo < 1e-14:
                continue
            y = 0.5 * (hi + lo) + 0.5 * (hi - lo) * gx
            g = np.array([resolvent_kernel(lam, x, yy, V) for yy in y])
            total += 0.5 * (hi - lo) * np.sum(gw * g * f(y))
        out[i] = total
    return out


@pytest.mark.parametrize("lam", [-2.0, 15.0 + 4.0j])
def test_resolvent_identity(lam):
    V = 1.0
    f = lambda y: np.exp(-((y - 0.5) / 0.06) ** 2)
    a, b = 0.0 + 1e-9, 1.0 - 1e-9
    h = 2e-3
    xs = np.concatenate([np.linspace(-0.9, -0.1, 9), np.linspace(0.1, 0.9, 41), np.linspace(1.1, 1.9, 9)])
    u0 = _apply_resolvent(lam, xs, f, a, b, V)
    up = _apply_resolvent(lam, xs + h, f, a, b, V)
    um = _apply_resolvent(lam, xs - h, f, a, b, V)
    Hu = -(up - 2 * u0 + um) / h**2 - lam * u0
    err = np.sqrt(np.sum(np.abs(Hu - f(xs)) ** 2) / np.sum(np.abs(f(xs)) ** 2))
    assert err < 1e-3
    # jump condition at x = 1 and x = 0: u'(j+) - u'(j-) = V u(j)
    for j in (0.0, 1.0):
        e = 1e-6
        pts = np.array([j - 2 * e, j - e, j, j + e, j + 2 * e])
        u = _apply_resolvent(lam, pts, f, a, b, V)
        right = (-3 * u[2] + 4 * u[3] - u[4]) / (2 * e)
        left = (3 * u[2] - 4 * u[1] + u[0]) / (2 * e)
        assert abs(right - left - V * u[2]) < 1e-4 * max(1.0, abs(right))


# --- van der Corput -----------------------------------------------------------

def test_vdc_constants_and_validation():
    assert [vdc_constant(k) for k in (1, 2, 3)] == [3, 8, 18]
    with pytest.raises(ValueError):
        VdCInput(2, 0.0, 1.0, 0.0, 10.0)
    with pytest.raises(ValueError):
        VdCInput(2, -1.0, 1.0, 0.0, 10.0)
    with pytest.raises(ValueError):
        VdCInput(4, 1.0, 1.0, 0.0, 10.0)


@pytest.mark.parametrize("t", [10.0, 100.0, 1000.0])
def test_fresnel_bound(t):
    z = np.sqrt(2 * t / np.pi)
    S, C = fresnel(z)
    exact = abs(np.sqrt(np.pi / (2 * t)) * (C + 1j * S))
    assert exact <= van_der_corput_bound(VdCInput(2, 2.0, 1.0, 0.0, t))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.floats(0.01, 100.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0),
       st.floats(0.1, 1e4))
def test_bound_decreases_in_t(k, m, e, l1, t):
    a = van_der_corput_bound(VdCInput(k, m, e, l1, t))
    b = van_der_corput_bound(VdCInput(k, m, e, l1, 2 * t))
    assert b <= a


def _mode_offset(band, mode, t):
    if mode == "generic":
        return 0
    if mode == "resonant":
        return int(round(float(lambda_jet(band, inflection_point(band)).d1) * t))
    return int(round((max_group_velocity(band) + 1) * t))


@pytest.mark.parametrize("mode", ["resonant", "generic", "super"])
def test_bound_soundness_across_modes(mode):
    band = get_band(10, 1.0)
    for t in (100.0, 300.0):
        off = _mode_offset(band, mode, t)
        for xp, yp in [(0.3, 0.6), (0.8, 0.1)]:
            q = KernelQuery(10, t, off + xp, yp)
            bb = best_band_bound(band, q)
            assert bb.available and bb.label == "grid-certified"
            assert abs(kernel(q)) <= bb.total


def test_super_mode_bound_decays_like_one_over_t():
    band = get_band(10, 1.0)
    vals = []
    for t in (1e2, 1e3, 1e4):
        q = KernelQuery(10, t, _mode_offset(band, "super", t) + 0.3, 0.6)
        bb = certified_band_bound(band, q, monotone_partition(band))
        assert bb.available
        vals.append(bb.total * t)
    assert max(vals) / min(vals) < 1.5


def test_resonant_bound_t13_independent_of_n():
    ratios = []
    for n in (20, 40, 80):
        band = get_band(n, 1.0)
        t = 1e3
        q = KernelQuery(n, t, _mode_offset(band, "resonant", t) + 0.3, 0.6)
        bb = certified_band_bound(band, q, resonant_partition(band))
        assert bb.available
        ratios.append(bb.total * t ** (1 / 3))
    assert max(ratios) / min(ratios) < 1.5


def test_zero_infimum_marks_piece_unavailable():
    band = get_band(10, 1.0)
    # order 1 across the top edge at s = 0: lambda' vanishes at n pi
    iv = ThetaInterval(10 * np.pi - 0.5, 10 * np.pi + 0.5, 1)
    bb = certified_band_bound(band, KernelQuery(10, 100.0, 0.3, 0.6), [iv])
    assert not bb.available and bb.total == np.inf
    assert bb.pieces[0].bound is None and bb.pieces[0].note
