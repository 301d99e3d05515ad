import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefocus.grid import Ball, ComplexField, FarField, RealField, build_domain_grid, build_sphere_grid
from wavefocus.io import (
    FormatError,
    read_cloud,
    read_far_field,
    read_field,
    read_json,
    write_cloud,
    write_far_field,
    write_field,
    write_json,
    write_singular_values,
)
from wavefocus.particles import ParticleCloud

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@pytest.fixture
def ball_grid():
    return build_domain_grid(([-0.3, 0.1, -1.0], [0.7, 1.1, 0.0]), (5, 6, 7), Ball((0.2, 0.6, -0.5), 0.45))


def test_complex_field_round_trip(tmp_path, ball_grid):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(ball_grid.n_masked) * 1e3 + 1j * rng.standard_normal(ball_grid.n_masked) / 3
    path = tmp_path / "f.field"
    write_field(path, ComplexField(ball_grid, vals))
    back = read_field(path)
    assert back.grid.same_as(ball_grid)
    assert np.array_equal(back.values, vals)
    assert np.array_equal(back.grid.lower, ball_grid.lower)
    assert np.array_equal(back.grid.spacing, ball_grid.spacing)


def test_real_field_round_trip(tmp_path, ball_grid):
    vals = np.linspace(-1, 1, ball_grid.n_masked) ** 3
    path = tmp_path / "n.field"
    write_field(path, RealField(ball_grid, vals))
    back = read_field(path, real=True)
    assert isinstance(back, RealField)
    assert np.array_equal(back.values, vals)


@settings(max_examples=25, deadline=None)
@given(st.lists(finite, min_size=16, max_size=16), st.lists(finite, min_size=16, max_size=16))
def test_field_round_trip_property(tmp_path_factory, re, im):
    grid = build_domain_grid(([0.0] * 3, [1.0] * 3), (4, 2, 2))
    vals = np.array(re) + 1j * np.array(im)
    path = tmp_path_factory.mktemp("p") / "x.field"
    write_field(path, ComplexField(grid, vals))
    assert np.array_equal(read_field(path).values, vals)


def test_shuffled_rows_read_canonically(tmp_path, ball_grid):
    vals = np.arange(ball_grid.n_masked) + 0.5j
    path = tmp_path / "f.field"
    write_field(path, ComplexField(ball_grid, vals))
    lines = path.read_text().splitlines()
    body = lines[1:]
    np.random.default_rng(1).shuffle(body)
    path.write_text("\n".join([lines[0], *body]) + "\n")
    assert np.array_equal(read_field(path).values, vals)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda t: t.replace("wavefield", "wavefeld", 1),
        lambda t: t.replace(" v1 ", " v2 ", 1),
        lambda t: "\n".join([t.splitlines()[0].rsplit(" ", 1)[0], *t.splitlines()[1:]]),
        lambda t: t.replace(",", ";", 3),
        lambda t: t + "0,0,0,1.0,0.0\n",
        lambda t: t + "99,0,0,1.0,0.0\n",
        lambda t: "",
    ],
    ids=["magic", "version", "short-header", "columns", "duplicate", "out-of-range", "empty"],
)
def test_corrupt_field_rejected(tmp_path, mutate):
    grid = build_domain_grid(([0.0] * 3, [1.0] * 3), (2, 2, 2))
    path = tmp_path / "f.field"
    write_field(path, ComplexField(grid, np.ones(8, dtype=complex)))
    path.write_text(mutate(path.read_text()))
    with pytest.raises(FormatError):
        read_field(path)


def test_far_field_round_trip(tmp_path):
    s = build_sphere_grid(7, 10)
    rng = np.random.default_rng(3)
    ff = FarField(s, rng.standard_normal(len(s)) + 1j * rng.standard_normal(len(s)))
    path = tmp_path / "a.farfield"
    write_far_field(path, ff)
    back = read_far_field(path)
    assert back.sphere.same_as(s)
    assert np.array_equal(back.values, ff.values)
    assert np.array_equal(back.sphere.weights, s.weights)


def test_far_field_bad_rows(tmp_path):
    path = tmp_path / "a.farfield"
    path.write_text("0.1,0.2,0.3,1.0\n")
    with pytest.raises(FormatError):
        read_far_field(path)
    path.write_text("0.1,0.2,-0.3,1.0,0.0\n")
    with pytest.raises(FormatError):
        read_far_field(path)


def test_cloud_round_trip(tmp_path):
    pos = np.random.default_rng(4).random((17, 3)) * np.pi
    cloud = ParticleCloud(pos, 0.0123, seed=42)
    path = tmp_path / "c.csv"
    write_cloud(path, cloud)
    assert path.read_text().splitlines()[0] == "# particles M=17 a=0.0123 seed=42"
    back = read_cloud(path)
    assert np.array_equal(back.positions, pos)
    assert back.radius == cloud.radius and back.seed == 42


def test_cloud_count_mismatch(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("# particles M=2 a=0.01 seed=1\n0,0,0\n")
    with pytest.raises(FormatError):
        read_cloud(path)
    path.write_text("x,y,z\n0,0,0\n")
    with pytest.raises(FormatError):
        read_cloud(path)


def test_json_deterministic(tmp_path):
    data = {"b": np.float64(0.1), "a": [np.int64(3), np.bool_(True)], "c": float("inf"), "d": np.array([1.5, 2.5])}
    p1, p2 = tmp_path / "1.json", tmp_path / "2.json"
    write_json(p1, data)
    write_json(p2, dict(reversed(list(data.items()))))
    assert p1.read_bytes() == p2.read_bytes()
    assert read_json(p1) == {"a": [3, True], "b": 0.1, "c": "inf", "d": [1.5, 2.5]}


def test_singular_values_csv(tmp_path):
    path = tmp_path / "s.csv"
    vals = np.array([3.0, 1.0 / 3.0, 1e-17])
    write_singular_values(path, vals)
    rows = path.read_text().splitlines()
    assert rows[0] == "index,singular_value"
    assert np.array_equal([float(r.split(",")[1]) for r in rows[1:]], vals)
