import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefocus.grid import (
    FOUR_PI,
    Ball,
    ComplexField,
    FarField,
    SphereGrid,
    VolumePotential,
    WaveContext,
    apply_volume_potential,
    assemble_volume_matrix,
    ball_self_integral,
    build_domain_grid,
    build_sphere_grid,
    equivalent_radius,
    far_field_adjoint,
    far_field_map,
)


def ball_potential_exact(r, radius, k):
    """Exact interior value of int_{|y|<R} g(x, y) dy at |x| = r.

    Solves (Laplace + k^2) u = -1 inside with the value at the origin fixed
    by direct integration in spherical coordinates.
    """
    at_origin = np.exp(1j * k * radius) * (1 - 1j * k * radius)
    return (at_origin * np.sinc(k * r / np.pi) - 1.0) / k**2


def random_field(grid, rng):
    return ComplexField(grid, rng.standard_normal(grid.n_masked) + 1j * rng.standard_normal(grid.n_masked))


# ---------------------------------------------------------------------------
# DomainGrid
# ---------------------------------------------------------------------------
def test_unit_box_grid():
    g = build_domain_grid(([0, 0, 0], [1, 1, 1]), (4, 4, 4))
    assert g.n_masked == 64
    assert g.voxel_volume == pytest.approx(1 / 64, abs=1e-15)
    assert g.volume == pytest.approx(1.0, abs=1e-14)


def test_ball_grid_volume():
    g = build_domain_grid(([-1] * 3, [1] * 3), (20, 20, 20), Ball((0, 0, 0), 1.0))
    assert abs(g.volume / (4 * np.pi / 3) - 1) < 0.02


@pytest.mark.parametrize("shape", [(1, 1, 1), (2, 2, 1), (4, 1, 4)])
def test_too_few_voxels_rejected(shape):
    with pytest.raises(ValueError):
        build_domain_grid(([0] * 3, [1] * 3), shape)


def test_degenerate_box_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        build_domain_grid(([0, 0, 0], [1, 0, 1]), (4, 4, 4))


def test_ball_must_fit():
    with pytest.raises(ValueError):
        build_domain_grid(([0] * 3, [1] * 3), (4, 4, 4), Ball((0.5, 0.5, 0.5), 0.6))


def test_grid_invariants():
    lower, upper = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 3.0, 2.5])
    g = build_domain_grid((lower, upper), (5, 6, 7), Ball((0, 1.5, 2.25), 0.25))
    assert np.allclose(g.spacing, (upper - lower) / np.array([5, 6, 7]), rtol=0, atol=1e-15)
    c = g.centers
    assert np.all(c > lower) and np.all(c < upper)
    g2 = build_domain_grid((lower, upper), (5, 6, 7), Ball((0, 1.5, 2.25), 0.25))
    assert g.same_as(g2) and np.array_equal(g.centers, g2.centers)


def test_masked_order_is_ix_fastest():
    g = build_domain_grid(([0] * 3, [1] * 3), (3, 2, 2))
    idx = g.indices
    assert idx[:4].tolist() == [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]]
    full = g.scatter(np.arange(g.n_masked))
    assert np.array_equal(g.gather(full), np.arange(g.n_masked))


# ---------------------------------------------------------------------------
# SphereGrid
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("n_polar,n_az", [(2, 4), (7, 9), (16, 32), (31, 64)])
def test_sphere_weights_and_directions(n_polar, n_az):
    s = build_sphere_grid(n_polar, n_az)
    assert abs(np.sum(s.weights) - FOUR_PI) < 1e-12
    assert np.all(s.weights > 0)
    assert np.max(np.abs(np.linalg.norm(s.directions, axis=1) - 1)) < 1e-14
    assert abs(np.sum(s.weights * s.directions[:, 0])) < 1e-12


def test_sphere_grid_rejects_small_sizes():
    with pytest.raises(ValueError):
        build_sphere_grid(1, 8)
    with pytest.raises(ValueError):
        build_sphere_grid(4, 3)


def test_plane_wave_identity():
    s = build_sphere_grid(16, 32)
    rng = np.random.default_rng(7)
    k = 1.0
    for _ in range(50):
        d = rng.standard_normal(3)
        x = d / np.linalg.norm(d) * rng.uniform(0.05, 5.0)
        kr = k * np.linalg.norm(x)
        got = np.sum(s.weights * np.exp(1j * k * s.directions @ x))
        expected = FOUR_PI * np.sin(kr) / kr
        assert abs(got - expected) <= 1e-8 * abs(expected)


def test_from_directions_equal_weights():
    s = SphereGrid.from_directions([[0, 0, 2.0], [1, 0, 0]])
    assert np.allclose(s.directions, [[0, 0, 1], [1, 0, 0]], atol=1e-15)
    assert np.allclose(s.weights, 2 * np.pi)


# ---------------------------------------------------------------------------
# Volume potential
# ---------------------------------------------------------------------------
def test_volume_potential_of_zero():
    g = build_domain_grid(([0] * 3, [1] * 3), (5, 5, 5))
    out = apply_volume_potential(g, 2.0, ComplexField.zeros(g))
    assert np.all(out.values == 0)


def test_self_term_small_k_limit():
    g = build_domain_grid(([0] * 3, [0.1] * 3), (2, 2, 2))
    R = equivalent_radius(g.voxel_volume)
    for k in (1e-2, 1e-4, 1e-6):
        val = ball_self_integral(R, k)
        assert abs(val - R**2 / 2) <= 2 * k * R**3
    # both sides of the series/closed-form switch against extended precision
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    for k in (1e-3 / R, 0.0999 / R, 0.1001 / R, 0.5 / R):
        x = mpmath.mpf(k * R)
        ref = (mpmath.exp(1j * x) * (1 - 1j * x) - 1) / mpmath.mpf(k) ** 2
        assert abs(ball_self_integral(R, k) - complex(ref)) <= 1e-12 * R**2


def test_self_term_matches_quadrature():
    from scipy.integrate import quad

    R, k = 0.3, 2.5
    re = quad(lambda r: r * np.cos(k * r), 0, R)[0]
    im = quad(lambda r: r * np.sin(k * r), 0, R)[0]
    assert abs(ball_self_integral(R, k) - (re + 1j * im)) < 1e-13


def test_ball_potential_at_center():
    R, k = 0.5, 1.0
    g = build_domain_grid(([-R] * 3, [R] * 3), (20, 20, 20), Ball((0, 0, 0), R))
    out = VolumePotential(g, k).apply(np.ones(g.n_masked))
    r = np.linalg.norm(g.centers, axis=1)
    i = np.argmin(r)
    assert abs(out[i] - ball_potential_exact(r[i], R, k)) <= 0.02 * abs(ball_potential_exact(0, R, k))
    assert abs(out[i] - ball_potential_exact(0.0, R, k)) <= 0.02 * abs(ball_potential_exact(0, R, k))


def test_ball_potential_converges():
    R, k = 0.5, 1.0
    errors = []
    for n in (10, 20, 40):
        g = build_domain_grid(([-R] * 3, [R] * 3), (n, n, n), Ball((0, 0, 0), R))
        out = VolumePotential(g, k).apply(np.ones(g.n_masked))
        exact = ball_potential_exact(np.linalg.norm(g.centers, axis=1), R, k)
        errors.append(np.linalg.norm(out - exact) / np.linalg.norm(exact))
    assert errors[0] / errors[1] >= 1.8
    assert errors[1] / errors[2] >= 1.8


def test_dense_and_fft_agree():
    g = build_domain_grid(([-1, -0.5, 0], [1, 0.5, 0.7]), (9, 6, 5), Ball((0, 0, 0.35), 0.35))
    h = random_field(g, np.random.default_rng(3))
    for k in (0.5, 3.0):
        dense = apply_volume_potential(g, k, h, method="dense").values
        fft = apply_volume_potential(g, k, h, method="fft").values
        assert np.linalg.norm(dense - fft) <= 1e-10 * np.linalg.norm(dense)


def test_green_matrix_exactly_symmetric():
    g = build_domain_grid(([0, 0, 0], [1, 2, 3]), (4, 5, 6), Ball((0.5, 1, 1.5), 0.5))
    m = assemble_volume_matrix(g, 1.7)
    assert np.array_equal(m, m.T)


def test_volume_potential_rejects_other_grid():
    g1 = build_domain_grid(([0] * 3, [1] * 3), (4, 4, 4))
    g2 = build_domain_grid(([0] * 3, [1] * 3), (5, 5, 5))
    with pytest.raises(ValueError):
        apply_volume_potential(g1, 1.0, ComplexField.zeros(g2))


# ---------------------------------------------------------------------------
# Far-field operator
# ---------------------------------------------------------------------------
def test_far_field_of_zero():
    g = build_domain_grid(([0] * 3, [1] * 3), (4, 4, 4))
    s = build_sphere_grid(4, 8)
    assert np.all(far_field_map(g, s, 1.0, ComplexField.zeros(g)).values == 0)
    assert np.all(far_field_adjoint(g, s, 1.0, FarField.zeros(s)).values == 0)


def test_far_field_constant_ball():
    R, k, c = 1.0, 2.0, 0.7 - 0.2j
    g = build_domain_grid(([-R] * 3, [R] * 3), (20, 20, 20), Ball((0, 0, 0), R))
    s = build_sphere_grid(8, 16)
    ff = far_field_map(g, s, k, ComplexField(g, np.full(g.n_masked, c)))
    exact = -(c / FOUR_PI) * FOUR_PI * (np.sin(k * R) - k * R * np.cos(k * R)) / k**3
    assert np.max(np.abs(ff.values - exact)) <= 0.02 * abs(exact)


def _adjoint_defect(g, s, k, rng):
    h = random_field(g, rng)
    f = FarField(s, rng.standard_normal(len(s)) + 1j * rng.standard_normal(len(s)))
    lhs = far_field_map(g, s, k, h).inner(f)
    bstar = far_field_adjoint(g, s, k, f)
    rhs = g.voxel_volume * np.sum(h.values * np.conj(bstar.values))
    return abs(lhs - rhs) / abs(lhs)


def test_adjoint_identity_ten_pairs():
    g = build_domain_grid(([-1] * 3, [1] * 3), (8, 7, 6), Ball((0, 0, 0), 0.9))
    s = build_sphere_grid(10, 20)
    rng = np.random.default_rng(11)
    for _ in range(10):
        assert _adjoint_defect(g, s, 3.3, rng) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(k=st.floats(0.1, 20.0), seed=st.integers(0, 2**31 - 1))
def test_adjoint_identity_property(k, seed):
    g = build_domain_grid(([0] * 3, [1] * 3), (4, 5, 3))
    s = build_sphere_grid(5, 8)
    assert _adjoint_defect(g, s, k, np.random.default_rng(seed)) <= 1e-12


def test_adjoint_single_direction():
    g = build_domain_grid(([0] * 3, [1] * 3), (4, 4, 4))
    beta = np.array([[0.6, 0.0, 0.8]])
    s = SphereGrid.from_directions(beta, weights=[FOUR_PI])
    k = 2.0
    out = far_field_adjoint(g, s, k, FarField(s, [1.0]))
    plane = np.exp(1j * k * g.centers @ beta[0])
    ratio = out.values / plane
    assert np.allclose(ratio, ratio[0], rtol=0, atol=1e-14)
    assert ratio[0] == pytest.approx(-1.0)


def test_wave_context_validation():
    with pytest.raises(ValueError):
        WaveContext(0.0)
    with pytest.raises(ValueError):
        WaveContext(1.0, np.array([1.0, 1.0, 0.0]))
    ctx = WaveContext.from_direction(1.0, [0, 3, 4])
    assert np.allclose(ctx.alpha, [0, 0.6, 0.8])
