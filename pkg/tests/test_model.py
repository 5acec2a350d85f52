from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravcont import (
    LayerDensity,
    NoiseSpec,
    ObservationSet,
    PointSource,
    Rectangle,
    make_continuation_grid,
    make_regular_observation_grid,
)
from gravcont.exceptions import (
    DataError,
    InvalidDepthError,
    InvalidGeometryError,
    ShapeError,
)

SQUARE = (-1, 1, -1, 1)


def test_unit_lattice_is_the_four_corners():
    obs = make_regular_observation_grid(SQUARE, 1, 1)
    expected = {(-1.0, -1.0, 0.0), (1.0, -1.0, 0.0), (-1.0, 1.0, 0.0), (1.0, 1.0, 0.0)}
    assert {tuple(p) for p in obs.points} == expected
    assert obs.values is None


def test_observation_grid_sizes_and_spacing():
    assert len(make_regular_observation_grid(SQUARE, 40, 40)) == 1681
    obs = make_regular_observation_grid((0, 2, 0, 1), 2, 1)
    assert len(obs) == 6
    np.testing.assert_array_equal(np.unique(obs.points[:, 0]), [0, 1, 2])
    np.testing.assert_array_equal(np.unique(obs.points[:, 1]), [0, 1])


def test_node_order_is_x1_fastest():
    obs = make_regular_observation_grid((0, 2, 0, 1), 2, 1, elevation=0.5)
    np.testing.assert_array_equal(
        obs.points,
        [[0, 0, 0.5], [1, 0, 0.5], [2, 0, 0.5], [0, 1, 0.5], [1, 1, 0.5], [2, 1, 0.5]],
    )


def test_continuation_grid_equal_areas():
    g = make_continuation_grid(SQUARE, 40, 40, 0.3)
    assert g.n_nodes == 1681
    np.testing.assert_allclose(g.cell_areas, 4 / 1681, rtol=0, atol=1e-15)
    assert np.all(g.nodes[:, 2] == -0.3)


def test_continuation_grid_unit():
    g = make_continuation_grid(SQUARE, 1, 1, 0.5)
    assert {tuple(p) for p in g.nodes} == {
        (-1.0, -1.0, -0.5), (1.0, -1.0, -0.5), (-1.0, 1.0, -0.5), (1.0, 1.0, -0.5)
    }
    np.testing.assert_array_equal(g.cell_areas, [1, 1, 1, 1])
    assert g.spacing == (2.0, 2.0)


@pytest.mark.parametrize("m1,m2", [(0, 4), (4, 0), (-1, 3), (2.5, 2), (True, 2)])
def test_bad_subdivisions(m1, m2):
    with pytest.raises(InvalidGeometryError):
        make_continuation_grid(SQUARE, m1, m2, 0.3)
    with pytest.raises(InvalidGeometryError):
        make_regular_observation_grid(SQUARE, m1, m2)


@pytest.mark.parametrize("h", [0.0, -0.1, float("nan")])
def test_bad_depth(h):
    with pytest.raises(InvalidDepthError):
        make_continuation_grid(SQUARE, 4, 4, h)


@pytest.mark.parametrize("bounds", [(0, 0, 0, 1), (1, 0, 0, 1), (0, 1, 2, 2), (0, np.inf, 0, 1)])
def test_degenerate_extent(bounds):
    with pytest.raises(InvalidGeometryError):
        Rectangle.from_bounds(bounds)


def test_rectangle_needs_four_values():
    with pytest.raises(InvalidGeometryError):
        Rectangle.from_bounds((0, 1, 0))


def test_grids_are_deterministic_and_read_only():
    a = make_continuation_grid((-1, 2, -0.5, 0.7), 17, 9, 0.25)
    b = make_continuation_grid((-1, 2, -0.5, 0.7), 17, 9, 0.25)
    assert a.nodes.tobytes() == b.nodes.tobytes()
    with pytest.raises(ValueError):
        a.nodes[0, 0] = 5.0


def test_lattice_pins_extent_corners():
    g = make_continuation_grid((-0.3, 0.7, 0.1, 0.9), 7, 3, 1.0)
    assert g.nodes[0, 0] == -0.3 and g.nodes[-1, 0] == 0.7
    assert g.nodes[0, 1] == 0.1 and g.nodes[-1, 1] == 0.9


@settings(max_examples=60, deadline=None)
@given(
    x0=st.floats(-10, 10),
    y0=st.floats(-10, 10),
    w=st.floats(0.01, 20),
    hgt=st.floats(0.01, 20),
    m1=st.integers(1, 30),
    m2=st.integers(1, 30),
)
def test_cell_areas_sum_to_extent_area(x0, y0, w, hgt, m1, m2):
    ext = Rectangle(x0, x0 + w, y0, y0 + hgt)
    g = make_continuation_grid(ext, m1, m2, 0.5)
    assert g.n_nodes == (m1 + 1) * (m2 + 1)
    assert np.isclose(g.cell_areas.sum(), ext.area, rtol=1e-12)


def test_point_source_validation():
    with pytest.raises(DataError):
        PointSource(0.0, (0, 0, -1))
    with pytest.raises(DataError):
        PointSource(-1.0, (0, 0, -1))
    with pytest.raises(DataError):
        PointSource(1.0, (0, np.nan, -1))
    with pytest.raises(DataError):
        PointSource(1.0, (0, 0))


def test_observation_set_validation():
    with pytest.raises(ShapeError):
        ObservationSet(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        ObservationSet(np.zeros((3, 3)), np.zeros(2))
    with pytest.raises(DataError):
        ObservationSet(np.zeros((3, 3)), [0, np.inf, 0])


def test_layer_density_validation():
    g = make_continuation_grid(SQUARE, 1, 1, 0.5)
    with pytest.raises(DataError):
        LayerDensity(g, [0, 0, -1e-3, 0])
    with pytest.raises(ShapeError):
        LayerDensity(g, [0, 0, 0])
    d = LayerDensity(g, [1, 0, 2, 0])
    np.testing.assert_array_equal(d.masses, [1, 0, 2, 0])
    assert d.total_mass == 3.0


def test_noise_spec_validation():
    with pytest.raises(DataError):
        NoiseSpec(-0.01, 1)
    with pytest.raises(DataError):
        NoiseSpec(0.01, -1)
    with pytest.raises(DataError):
        NoiseSpec(0.01, 2**64)
    NoiseSpec(0.01, 2**64 - 1)
