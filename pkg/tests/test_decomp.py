import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_radon import ExponentPair, GridFunction, circle_measure, make_grid
from sparse_radon.decomp import (D_FLOOR, MAX_SLICE, Box, DyadicCube, cz_decompose,
                                 exceptional_profile, exceptional_set, level_slice, level_slices,
                                 local_p_average, plus_average, rle_decode, rle_encode, root_cube,
                                 select_D, slice_indices, whitney)
from sparse_radon.lattice import GridSpec

from oracles import brute_distance_to_complement


def random_blob_set(rng, spec, count=3, lo=8, hi=24, margin=4):
    E = np.zeros(spec.shape, dtype=bool)
    for _ in range(count):
        w = rng.integers(lo, hi, spec.n)
        c = [rng.integers(margin, spec.N - margin - x) for x in w]
        E[tuple(slice(a, a + x) for a, x in zip(c, w))] = True
    return E


# -- DyadicCube ------------------------------------------------------------------

def test_cube_geometry(grid2d):
    Q = DyadicCube(grid2d, 1, (256, 256))
    assert Q.side_cells == 64 and Q.side == 2.0 and Q.volume == 4.0
    assert Q.box(3).lo == (192, 192) and Q.box(3).hi == (384, 384)
    assert Q.mask(3).sum() == 192 ** 2
    assert Q.parent() == DyadicCube(grid2d, 2, (256, 256))
    assert Q.contains(DyadicCube(grid2d, -1, (272, 304)))
    assert not Q.contains(DyadicCube(grid2d, -1, (240, 304)))


def test_cube_alignment_checked(grid2d):
    with pytest.raises(ValueError):
        DyadicCube(grid2d, 0, (16, 0))
    with pytest.raises(ValueError):
        DyadicCube(grid2d, -6, (0, 0))


def test_root_cube_fits(grid2d):
    assert root_cube(grid2d, 1).corner == (256, 256)
    with pytest.raises(ValueError):
        root_cube(grid2d, 2)


def test_box_outside_domain(grid2d):
    with pytest.raises(ValueError):
        Box(grid2d, (-1, 0), (3, 3)).slices


# -- local_p_average -----------------------------------------------------------------

def test_average_of_constant(grid2d):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, np.full(grid2d.shape, -3.0))
    for p in (1, 1.5, 2, 7):
        assert local_p_average(f, Q, p) == pytest.approx(3.0, rel=1e-14)


def test_average_half_cube():
    spec = make_grid(2, 9, 5)
    Q = DyadicCube(spec, 0, (256, 256))
    a = np.zeros(spec.shape)
    a[256:272, 256:288] = 1.0
    f = GridFunction(spec, a)
    assert local_p_average(f, Q, 1) == pytest.approx(0.5, abs=1e-15)
    assert local_p_average(f, Q, 2) == pytest.approx(1 / np.sqrt(2), abs=1e-15)


def test_average_monotone_in_p(grid2d, rng):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, rng.standard_normal(grid2d.shape) ** 3)
    vals = [local_p_average(f, Q, p) for p in (1, 1.5, 2, 3, 6)]
    assert all(a <= b * (1 + 1e-14) for a, b in zip(vals, vals[1:]))


# -- level slices ------------------------------------------------------------------

def test_slice_indices_hand_cases():
    v = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 2.0001, 4.0, 8.0, 9.0])
    assert slice_indices(v, 1.0).tolist() == [0, 0, 0, 1, 1, 2, 2, 3, 4]


def test_slice_index_cap():
    with pytest.raises(ValueError):
        slice_indices(np.array([2.0 ** (MAX_SLICE + 2)]), 1.0)


def test_slices_of_constant(grid2d):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, 2.0 * Q.mask())
    sl = level_slices(f, Q, 1.5)
    assert list(sl) == [0]
    assert np.array_equal(sl[0].samples, f.samples)
    assert not level_slice(f, Q, 1.5, 1).function.samples.any()


def test_slices_disjoint_and_sum_back(grid2d, rng):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, Q.mask() * rng.standard_normal(grid2d.shape) ** 5)
    sl = level_slices(f, Q, 1.5)
    stack = np.array([g.samples for g in sl.values()])
    assert np.all((stack != 0).sum(axis=0) <= 1)
    assert np.array_equal(stack.sum(axis=0), f.samples)
    avg = local_p_average(f, Q, 1.5)
    top = np.log2(np.abs(f.samples).max() / avg) + 1
    assert max(sl) <= top


def test_slices_of_zero(grid2d):
    Q = DyadicCube(grid2d, 0, (256, 256))
    assert level_slices(GridFunction.zeros(grid2d), Q, 2) == {}


def test_slice_bands(grid2d, rng):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, Q.mask() * rng.exponential(1.0, grid2d.shape) ** 4)
    avg = local_p_average(f, Q, 2)
    for m, g in level_slices(f, Q, 2).items():
        v = np.abs(g.samples[g.samples != 0])
        if m == 0:
            assert np.all(v <= avg)
        else:
            assert np.all((v > 2.0 ** (m - 1) * avg) & (v <= 2.0 ** m * avg))


# -- plus_average ----------------------------------------------------------------------

def test_plus_average_constant(grid2d):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, 1.3 * Q.mask())
    assert plus_average(f, Q, 1.5) == pytest.approx(1.3, rel=1e-15)


@pytest.mark.parametrize("c", [0.1, 1 / 3, 4.0, 7.3, 1e-7, 123456.789])
@pytest.mark.parametrize("p", [1, 1.5, 3])
def test_plus_average_constant_rounding(grid2d, c, p):
    # the computed average may sit an ulp below c; the value must stay in slice 0
    Q = DyadicCube(grid2d, 1, (256, 256))
    for scale in (1, 3):
        f = GridFunction(grid2d, c * Q.mask(scale))
        assert plus_average(f, Q.box(scale), p) == pytest.approx(c, rel=1e-11)


def test_plus_average_matches_slice_sum(grid2d, rng):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, Q.mask() * rng.standard_normal(grid2d.shape) ** 5)
    ref = sum((m + 1) ** 4 * local_p_average(g, Q, 1.5) for m, g in level_slices(f, Q, 1.5).items())
    assert plus_average(f, Q, 1.5) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100))
def test_plus_average_homogeneous_and_dominating(seed, t):
    spec = GridSpec(2, 6, 3)
    rng = np.random.default_rng(seed)
    Q = DyadicCube(spec, 1, (16, 16))
    f = GridFunction(spec, Q.mask() * rng.standard_normal(spec.shape) ** 3)
    a = plus_average(f, Q, 2)
    assert plus_average(t * f, Q, 2) == pytest.approx(t * a, rel=1e-12)
    assert local_p_average(f, Q, 2) <= a * (1 + 1e-14)


def test_plus_average_larger_exponent_dominates(grid2d, rng):
    Q = DyadicCube(grid2d, 0, (256, 256))
    f = GridFunction(grid2d, Q.mask() * rng.standard_normal(grid2d.shape) ** 5)
    assert plus_average(f, Q, 1.5, 5) >= plus_average(f, Q, 1.5, 4)


# -- exceptional set ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def setup2d():
    spec = make_grid(2, 9, 5)
    return spec, circle_measure(spec), ExponentPair(1.5, 3.0), root_cube(spec, 1)


def test_exceptional_set_empty_for_constants(setup2d):
    spec, sigma, exps, Q0 = setup2d
    for c1, c2 in [(1.0, 1.0), (0.2, 7.0), (9.0, 0.5)]:
        f1 = GridFunction(spec, c1 * Q0.mask())
        f2 = GridFunction(spec, c2 * Q0.mask(3))
        assert not exceptional_set(f1, f2, sigma, exps, D_FLOOR, Q0).any()
        assert select_D(exceptional_profile(f1, f2, sigma, exps, Q0))[0] == D_FLOOR


def test_exceptional_set_rejects_bad_support(setup2d):
    spec, sigma, exps, Q0 = setup2d
    f1 = GridFunction(spec, Q0.mask(3).astype(float))
    f2 = GridFunction(spec, Q0.mask(3).astype(float))
    with pytest.raises(ValueError):
        exceptional_profile(f1, f2, sigma, exps, Q0)


def test_exceptional_set_catches_a_spike(setup2d):
    spec, sigma, exps, Q0 = setup2d
    a = Q0.mask().astype(float)
    a[300:304, 300:304] = 500.0
    f1 = GridFunction(spec, a)
    f2 = GridFunction(spec, Q0.mask(3).astype(float))
    D, E = select_D(exceptional_profile(f1, f2, sigma, exps, Q0))
    assert E[301, 301]
    assert E.sum() <= Q0.box().ncells / 2 and not np.any(E & ~Q0.mask(6))
    # the previous power of two fails one of the two conditions
    if D > D_FLOOR:
        prof = exceptional_profile(f1, f2, sigma, exps, Q0)
        Eh = prof.mask(D / 2)
        assert Eh.sum() > Q0.box().ncells / 2 or np.any(Eh & ~Q0.mask(6))


def test_exceptional_set_monotone_in_D(setup2d, rng):
    spec, sigma, exps, Q0 = setup2d
    f1 = GridFunction(spec, Q0.mask() * rng.exponential(1, spec.shape) ** 3)
    f2 = GridFunction(spec, Q0.mask(3) * rng.exponential(1, spec.shape))
    prof = exceptional_profile(f1, f2, sigma, exps, Q0)
    assert np.all(prof.mask(8) <= prof.mask(4))


# -- Whitney ---------------------------------------------------------------------------------

def test_whitney_empty():
    spec = GridSpec(2, 6, 3)
    cover = whitney(np.zeros(spec.shape, dtype=bool), spec)
    assert len(cover) == 0 and not cover.union().any()


def test_whitney_whole_domain_rejected():
    spec = GridSpec(2, 6, 3)
    with pytest.raises(ValueError):
        whitney(np.ones(spec.shape, dtype=bool), spec)


def test_whitney_single_cube_exhaustive():
    """E = one dyadic cube of side 64 cells: cubes of side <= 4 cells, the
    largest ones in the middle, every interior cube inside the window."""
    spec = GridSpec(2, 8, 3)
    E = np.zeros(spec.shape, dtype=bool)
    E[64:128, 64:128] = True
    cover = whitney(E, spec)
    sides = cover.side_cells()
    assert np.array_equal(cover.union(), E)
    assert sides.max() <= 4
    centre = [i for i, c in enumerate(cover.corners) if np.all((c >= 92) & (c < 100))]
    # the centre is 28 cells from E^c, short of 5 sqrt(2) * 4, so 2-cell cubes
    # are the largest that fit; they sit in the middle, single cells at the rim
    assert all(sides[i] == sides.max() == 2 for i in centre)
    assert cover.boundary.any() and np.all(sides[cover.boundary] == 1)
    sq = np.sqrt(2)
    for c, s, b in zip(cover.corners, sides, cover.boundary):
        d = brute_distance_to_complement(E, c, s)
        if not b:
            assert 5 * sq * s <= d < 11 * sq * s
        else:
            assert d < 5 * sq
    assert cover.wreg_ok()


def test_whitney_distances_match_brute_force(rng):
    spec = GridSpec(2, 7, 3)
    E = random_blob_set(rng, spec, count=4, lo=10, hi=40)
    cover = whitney(E, spec)
    for c, s, d in zip(cover.corners, cover.side_cells(), cover.distances):
        assert d == pytest.approx(brute_distance_to_complement(E, c, s), abs=1e-9)


def test_whitney_1d():
    spec = GridSpec(1, 9, 3)
    E = np.zeros(spec.shape, dtype=bool)
    E[100:300] = True
    cover = whitney(E, spec)
    assert np.array_equal(cover.union(), E)
    assert cover.wreg_ok()
    assert cover.side_cells().max() >= 8


def test_whitney_statistics_and_serialization(rng):
    spec = GridSpec(2, 7, 3)
    E = random_blob_set(rng, spec)
    cover = whitney(E, spec)
    assert cover.overlap_3q() >= 1
    assert sum(cover.adjacency().values()) > 0
    doc = cover.to_dict()
    assert len(doc["cubes"]) == len(cover)
    assert np.array_equal(rle_decode(doc["E_RLE"], spec.shape), E)


# -- CZ decomposition ---------------------------------------------------------------------------

def test_cz_empty_cover(rng):
    spec = GridSpec(2, 6, 3)
    f = GridFunction(spec, rng.standard_normal(spec.shape))
    cz = cz_decompose(f, whitney(np.zeros(spec.shape, dtype=bool), spec))
    assert np.array_equal(cz.good.samples, f.samples)
    assert len(cz.means) == 0 and not cz.bad_total().samples.any()


def test_cz_constant_has_no_bad_part(rng):
    spec = GridSpec(2, 7, 3)
    cover = whitney(random_blob_set(rng, spec), spec)
    cz = cz_decompose(GridFunction(spec, np.full(spec.shape, 2.0)), cover)
    assert np.max(np.abs(cz.bad_total().samples)) == 0
    assert np.array_equal(cz.good.samples, np.full(spec.shape, 2.0))


def test_cz_structure(rng):
    spec = GridSpec(2, 7, 3)
    cover = whitney(random_blob_set(rng, spec), spec)
    f = GridFunction(spec, rng.standard_normal(spec.shape) * 10)
    cz = cz_decompose(f, cover)
    assert np.max(np.abs((cz.good + cz.bad_total()).samples - f.samples)) <= 1e-12
    for i in range(0, len(cover), 5):
        b = cz.bad_part(i)
        Q = cover.cubes[i]
        assert not b.samples[~Q.mask()].any()
        assert abs(b.samples.sum()) / Q.box().ncells <= 1e-12
        assert np.all(cz.good.samples[Q.mask()] == cz.means[i])
    outside = ~cover.union()
    assert np.array_equal(cz.good.samples[outside], f.samples[outside])


def test_cz_grid_mismatch(rng):
    spec = GridSpec(2, 6, 3)
    cover = whitney(np.zeros(spec.shape, dtype=bool), spec)
    with pytest.raises(ValueError):
        cz_decompose(GridFunction.zeros(GridSpec(2, 6, 2)), cover)


# -- RLE --------------------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 1))
def test_rle_round_trip(seed, density):
    mask = np.random.default_rng(seed).random((16, 16)) < density
    runs = rle_encode(mask)
    assert np.array_equal(rle_decode(runs, mask.shape), mask)
    assert sum(r[1] for r in runs) == mask.sum()
