import math

import numpy as np
import pytest

from ddelm.geometry import UNIT_SQUARE, Rect, decompose, generate_points, sample_collar


def expected_interface(nx, ny, k):
    # lines x = i/Nx and y = j/Ny without the outer boundary, cross points counted once
    M = 2**k
    return (nx - 1) * (M - 1) + (ny - 1) * (M - 1) - (nx - 1) * (ny - 1)


def test_rect_validation_and_measures():
    with pytest.raises(ValueError):
        Rect((0, 0), (0, 1))
    r = Rect((0, 0), (3, 4))
    assert r.diam == 5.0
    assert r.area == 12.0
    d = r.distance([[1, 1], [6, 8], [-1, 2]])
    np.testing.assert_allclose(d, [0.0, 5.0, 1.0])


def test_decompose_is_row_major():
    tiles = decompose(UNIT_SQUARE, (2, 3))
    assert len(tiles) == 6
    assert tiles[1].lo == (0.5, 0.0)
    assert tiles[2].lo == (0.0, pytest.approx(1 / 3))
    assert sum(t.area for t in tiles) == pytest.approx(1.0)


@pytest.mark.parametrize("grid", [(0, 1), (1, -2)])
def test_decompose_rejects_empty_grid(grid):
    with pytest.raises(ValueError):
        decompose(UNIT_SQUARE, grid)


@pytest.mark.parametrize("grid,k", [((1, 1), 3), ((1, 2), 3), ((2, 2), 4), ((4, 2), 4), ((4, 4), 5)])
def test_lattice_classification_counts(grid, k):
    layout = generate_points(UNIT_SQUARE, grid, k)
    M = 2**k
    assert layout.lattice_size == (M + 1) ** 2
    assert layout.n_interface == expected_interface(*grid, k)
    # every lattice point is covered, interior points exactly once
    allpts = np.vstack([np.vstack([sd.interior, sd.boundary, sd.interface]) for sd in layout.subdomains])
    uniq = np.unique(np.round(allpts * M).astype(int), axis=0)
    assert len(uniq) == (M + 1) ** 2
    n_interior = sum(sd.m_i for sd in layout.subdomains)
    px, py = M // grid[0], M // grid[1]
    assert n_interior == grid[0] * grid[1] * (px - 1) * (py - 1)


def test_two_by_two_corner_subdomain():
    layout = generate_points(UNIT_SQUARE, (2, 2), 4)
    sd = layout.subdomains[0]
    assert layout.n_interface == 29
    assert sd.m_gamma == 15  # 8 + 8 points on its two interface edges, cross point once
    assert sd.m_i == 49
    assert sd.m_b == 17
    assert len(sd.flux_points) == 16  # cross point once per incident face


def test_one_by_two_toy_counts():
    layout = generate_points(UNIT_SQUARE, (1, 2), 3)
    assert layout.n_interface == 7
    for sd in layout.subdomains:
        assert sd.m_gamma == 7
        assert sd.m_i == 7 * 3


def test_flux_rows_pair_up_with_opposite_normals():
    layout = generate_points(UNIT_SQUARE, (4, 2), 4)
    total = np.zeros((layout.n_flux_rows, 2))
    hits = np.zeros(layout.n_flux_rows, int)
    for sd in layout.subdomains:
        np.add.at(total, sd.flux_index, sd.flux_normals)
        np.add.at(hits, sd.flux_index, 1)
    assert np.all(hits == 2)
    np.testing.assert_array_equal(total, 0.0)


def test_flux_row_index_and_face_normals():
    layout = generate_points(UNIT_SQUARE, (2, 2), 4)
    f = layout.faces[0]
    assert f.axis == 0 and (f.minus, f.plus) == (0, 1)
    np.testing.assert_array_equal(f.normal(0), [1, 0])
    np.testing.assert_array_equal(f.normal(1), [-1, 0])
    with pytest.raises(ValueError):
        f.normal(3)
    assert layout.flux_row(1, 0) == layout.faces[1].flux_offset
    with pytest.raises(IndexError):
        layout.flux_row(0, len(f.points))


def test_interface_points_are_lexicographic():
    layout = generate_points(UNIT_SQUARE, (2, 2), 3)
    ij = np.round(layout.interface_points * 8).astype(int)
    order = np.lexsort((ij[:, 1], ij[:, 0]))
    np.testing.assert_array_equal(order, np.arange(len(ij)))


def test_grid_must_divide_lattice():
    with pytest.raises(ValueError):
        generate_points(UNIT_SQUARE, (3, 1), 4)
    with pytest.raises(ValueError):
        generate_points(UNIT_SQUARE, (1, 1), 0)


def test_owner_ties_go_to_lower_tile():
    layout = generate_points(UNIT_SQUARE, (2, 2), 3)
    own = layout.owner([[0.25, 0.25], [0.5, 0.25], [0.75, 0.5], [0.5, 0.5], [1.0, 1.0]])
    np.testing.assert_array_equal(own, [0, 0, 1, 0, 3])


def test_collar_samples_respect_radius():
    rng = np.random.default_rng(3)
    rect = Rect((0.0, 0.0), (0.5, 0.5))
    pts = sample_collar(rect, 0.3, rng, size=4000)
    assert pts.shape == (4000, 2)
    assert np.all(rect.distance(pts) <= 0.3 + 1e-15)
    assert sample_collar(rect, 0.0, rng).shape == (2,)
    with pytest.raises(ValueError):
        sample_collar(rect, -1.0, rng)


def test_collar_is_uniform():
    # P(inside rect) = area / (area + perimeter r + pi r^2) for a uniform collar sample
    rng = np.random.default_rng(11)
    rect = Rect((0.0, 0.0), (0.5, 0.5))
    r = 0.25
    n = 40000
    pts = sample_collar(rect, r, rng, size=n)
    p = rect.area / (rect.area + 2.0 * r + math.pi * r * r)
    frac = rect.contains(pts).mean()
    assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / n)
