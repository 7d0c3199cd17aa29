import numpy as np
import pytest

from nlfilt.grid import Field, Grid, GridMismatch, field_from_bytes, field_from_csv, load_field


def test_coordinates():
    g = Grid(1, 0.5, 2.0)
    assert np.allclose(g.axis, [-2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2])
    p = Grid.periodic(8)
    assert p.n_axis == 8 and p.axis[0] == pytest.approx(-np.pi)


def test_invalid_grids():
    with pytest.raises(ValueError):
        Grid(1, 0.3, 1.0)
    with pytest.raises(ValueError):
        Grid(3, 0.1, 1.0)
    with pytest.raises(ValueError):
        Grid(1, 1e-6, 100.0, memory_budget=1000)


def test_field_checks():
    g = Grid(1, 0.5, 1.0)
    with pytest.raises(ValueError):
        Field(g, np.ones(3))
    with pytest.raises(ValueError):
        Field(g, np.array([1, 2, np.nan, 4, 5.0]))
    with pytest.raises(GridMismatch):
        g.zeros().check_grid(Grid(1, 0.25, 1.0))


@pytest.mark.parametrize("dim", [1, 2])
def test_binary_round_trip(tmp_path, dim):
    g = Grid(dim, 0.25, 1.0)
    rng = np.random.default_rng(0)
    f = g.field(rng.normal(size=g.size), time=0.125)
    assert field_from_bytes(f.to_bytes()).values.tobytes() == f.values.tobytes()
    f.save(tmp_path / "f.bin")
    h = load_field(tmp_path / "f.bin")
    assert h.time == 0.125 and h.grid.same_as(g) and np.array_equal(h.values, f.values)


def test_binary_header_little_endian():
    f = Grid(1, 0.5, 1.0).field(np.arange(5.0))
    raw = f.to_bytes()
    assert np.frombuffer(raw[-40:], dtype="<f8").tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_csv_round_trip():
    g = Grid(2, 0.5, 1.0)
    f = g.sample(lambda x, y: x + 2 * y)
    text = f.to_csv()
    assert text.splitlines()[0].endswith("value")
    assert np.array_equal(field_from_csv(text, g).values, f.values)
