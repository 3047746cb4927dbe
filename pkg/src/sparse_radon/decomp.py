"""
Dyadic cubes, local averages with level slices, the exceptional set, Whitney
covers and Calderon-Zygmund decompositions on a periodic grid.

Cube levels are in physical units: a cube of level ``l`` has side ``2**l``,
i.e. ``2**l * u`` cells, and its corner (in cells) is a multiple of that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .lattice import GridFunction, GridSpec
from .measures import DiscreteMeasure
from .operators import ExponentPair, high_T_star, maximal_fn

MAX_SLICE = 64
SLICE_RTOL = 1e-12
WHITNEY_LOWER = 5.0
WHITNEY_UPPER = 11.0
# D at which indicator-type inputs have an empty exceptional set.
D_FLOOR = 2.0


@dataclass(frozen=True)
class Box:
    """Half-open cell box ``[lo, hi)``; must not wrap around the torus."""

    spec: GridSpec
    lo: Tuple[int, ...]
    hi: Tuple[int, ...]

    def in_domain(self) -> bool:
        return all(0 <= a and b <= self.spec.N for a, b in zip(self.lo, self.hi))

    @property
    def slices(self) -> Tuple[slice, ...]:
        if not self.in_domain():
            raise ValueError(f"box {self.lo}..{self.hi} leaves the domain")
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))

    @property
    def ncells(self) -> int:
        return int(np.prod([b - a for a, b in zip(self.lo, self.hi)]))

    @property
    def volume(self) -> float:
        return self.ncells * self.spec.cell_volume

    def mask(self) -> np.ndarray:
        m = np.zeros(self.spec.shape, dtype=bool)
        m[self.slices] = True
        return m


@dataclass(frozen=True)
class DyadicCube:
    spec: GridSpec
    level: int
    corner: Tuple[int, ...]

    def __post_init__(self):
        c = self.side_cells
        if c < 1 or c != int(c):
            raise ValueError(f"level {self.level} is finer than one cell")
        corner = tuple(int(x) for x in self.corner)
        if len(corner) != self.spec.n or any(x % int(c) for x in corner):
            raise ValueError(f"corner {corner} not aligned to side {c}")
        object.__setattr__(self, "corner", corner)

    @property
    def side_cells(self) -> int:
        c = 2.0 ** self.level * self.spec.u
        return int(c) if c >= 1 else 0

    @property
    def side(self) -> float:
        return 2.0 ** self.level

    @property
    def volume(self) -> float:
        return self.side ** self.spec.n

    def box(self, scale: float = 1.0) -> Box:
        """Cells whose centres lie in the concentric dilate ``scale * Q``."""
        c = self.side_cells
        if scale == 1:
            return Box(self.spec, self.corner, tuple(x + c for x in self.corner))
        lo, hi = [], []
        for x in self.corner:
            mid = x + c / 2
            lo.append(int(np.ceil(mid - scale * c / 2 - 0.5)))
            hi.append(int(np.ceil(mid + scale * c / 2 - 0.5)))
        return Box(self.spec, tuple(lo), tuple(hi))

    @property
    def slices(self) -> Tuple[slice, ...]:
        return self.box().slices

    def mask(self, scale: float = 1.0) -> np.ndarray:
        return self.box(scale).mask()

    def contains(self, other: "DyadicCube") -> bool:
        if other.level > self.level:
            return False
        c, oc = self.side_cells, other.side_cells
        return all(a <= b and b + oc <= a + c for a, b in zip(self.corner, other.corner))

    def parent(self) -> "DyadicCube":
        c2 = 2 * self.side_cells
        return DyadicCube(self.spec, self.level + 1, tuple(x - x % c2 for x in self.corner))

    def to_dict(self) -> dict:
        return {"level": self.level, "corner": list(self.corner)}


def root_cube(spec: GridSpec, level: int) -> DyadicCube:
    """Dyadic cube of the given level with corner at the grid centre.

    Raises if ``6 Q`` would not fit in the domain.
    """
    Q = DyadicCube(spec, level, (spec.N // 2,) * spec.n)
    if not Q.box(6).in_domain():
        raise ValueError(f"6Q of a level-{level} cube does not fit in the domain")
    return Q


def _region(R):
    return R.box() if isinstance(R, DyadicCube) else R


def local_p_average(f: GridFunction, Q, p: float) -> float:
    """``(|Q|^-1 int_Q |f|^p)^(1/p)``; ``Q`` a cube or a box."""
    if p < 1:
        raise ValueError("p must be >= 1")
    vals = np.abs(f.samples[_region(Q).slices])
    return float(np.mean(vals ** p) ** (1.0 / p))


# -- level slices --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelSlice:
    cube: object
    p: float
    m: int
    function: GridFunction


def slice_indices(values: np.ndarray, avg: float) -> np.ndarray:
    """Slice index of each magnitude: 0 if ``v <= avg``, else the ``m`` with
    ``2**(m-1) avg < v <= 2**m avg``.

    Band edges carry a relative slack of ``SLICE_RTOL`` so that the rounding
    in a computed average cannot push a value equal to it (for instance a
    constant function) into the next band.
    """
    v = np.abs(values)
    if avg == 0:
        return np.zeros(v.shape, dtype=np.int64)
    a = avg * (1.0 + SLICE_RTOL)
    with np.errstate(divide="ignore"):
        m = np.ceil(np.log2(np.maximum(v, np.finfo(float).tiny) / a))
    m = np.maximum(m, 0).astype(np.int64)
    m = np.where(v > np.ldexp(a, m), m + 1, m)
    m = np.where((m > 0) & (v <= np.ldexp(a, np.maximum(m - 1, 0))), m - 1, m)
    m[v <= a] = 0
    if m.size and m.max() > MAX_SLICE:
        raise ValueError(f"dynamic range exceeds 2**{MAX_SLICE}")
    return m


def level_slices(f: GridFunction, Q, p: float) -> Dict[int, GridFunction]:
    """All nonempty slices ``f^m_Q`` keyed by ``m``."""
    box = _region(Q)
    avg = local_p_average(f, box, p)
    inside = box.mask()
    if avg == 0:
        return {}
    m = slice_indices(f.samples, avg)
    out = {}
    nz = inside & (f.samples != 0)
    for k in np.unique(m[nz]):
        sel = nz & (m == k)
        out[int(k)] = f.with_samples(np.where(sel, f.samples, 0.0))
    return out


def level_slice(f: GridFunction, Q, p: float, m: int) -> LevelSlice:
    if m < 0:
        raise ValueError("slice index must be >= 0")
    sl = level_slices(f, Q, p).get(int(m))
    if sl is None:
        sl = GridFunction.zeros(f.spec)
    return LevelSlice(Q, p, int(m), sl)


def plus_average(f: GridFunction, Q, p: float, weight_exponent: float = 4.0) -> float:
    """``sum_m (m+1)**w <|f^m_Q|>_{Q,p}``."""
    box = _region(Q)
    avg = local_p_average(f, box, p)
    if avg == 0:
        return 0.0
    vals = f.samples[box.slices]
    m = slice_indices(vals, avg)
    a = np.abs(vals) ** p
    sums = np.bincount(m.ravel(), weights=a.ravel())
    slice_avgs = (sums / box.ncells) ** (1.0 / p)
    weights = (np.arange(len(sums)) + 1.0) ** weight_exponent
    return float(np.dot(weights, slice_avgs))


# -- exceptional set -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExceptionalProfile:
    """``ratio(x) = max_i F_i(x) / c_i`` so that ``E(D) = {ratio > D}``."""

    spec: GridSpec
    Q0: DyadicCube
    ratio: np.ndarray
    members: int

    def mask(self, D: float) -> np.ndarray:
        return self.ratio > D


def _family_ratio(f: GridFunction, region, p: float, sigma, Q0, j_min, max_radius, strict):
    ratio = np.zeros(f.spec.shape)
    count = 0
    base = local_p_average(f, region, p)
    if base == 0:
        return ratio, count
    count += 2
    np.maximum(ratio, maximal_fn(f, p, max_radius).samples / base, out=ratio)
    high = high_T_star(f, sigma, Q0, j_min=j_min, strict=strict)
    np.maximum(ratio, maximal_fn(high, 1.0, max_radius).samples / base, out=ratio)
    for m, fm in level_slices(f, region, p).items():
        c = (m + 1) * local_p_average(fm, region, p)
        np.maximum(ratio, maximal_fn(fm, p, max_radius).samples / c, out=ratio)
        count += 1
    return ratio, count


def _check_support(f: GridFunction, mask: np.ndarray, what: str) -> None:
    if np.any(f.samples[~mask] != 0):
        raise ValueError(f"{what} is not supported where required")


def exceptional_profile(f1: GridFunction, f2: GridFunction, sigma: DiscreteMeasure,
                        exps: ExponentPair, Q0: DyadicCube, *, j_min: Optional[int] = None,
                        max_radius: Optional[float] = None, strict: bool = True) -> ExceptionalProfile:
    """Maximal-function data of both families defining ``E``.

    ``f1`` uses ``Q0`` and ``p``; ``f2`` uses ``3 Q0`` and ``q'``.  The radius
    cap defaults to ``min(side/4, 4 l(Q0))`` so that the result does not
    depend on how far the grid extends beyond ``6 Q0``.
    """
    _check_support(f1, Q0.mask(), "f1")
    _check_support(f2, Q0.mask(3), "f2")
    if max_radius is None:
        max_radius = min(f1.spec.side / 4, 4 * Q0.side)
    r1, c1 = _family_ratio(f1, Q0.box(), exps.p, sigma, Q0, j_min, max_radius, strict)
    r2, c2 = _family_ratio(f2, Q0.box(3), exps.q_conj, sigma, Q0, j_min, max_radius, strict)
    return ExceptionalProfile(f1.spec, Q0, np.maximum(r1, r2), c1 + c2)


def exceptional_set(f1, f2, sigma, exps, D: float, Q0, **kw) -> np.ndarray:
    return exceptional_profile(f1, f2, sigma, exps, Q0, **kw).mask(D)


def select_D(profile: ExceptionalProfile, D_start: float = D_FLOOR, D_max: float = 2.0 ** 80):
    """Smallest power of two ``D >= D_start`` with ``|E| <= |Q0|/2`` and ``E`` in ``6 Q0``."""
    Q0 = profile.Q0
    outside = ~Q0.mask(6)
    limit = Q0.box().ncells / 2
    D = D_start
    while D <= D_max:
        E = profile.mask(D)
        if E.sum() <= limit and not np.any(E & outside):
            return D, E
        D *= 2
    raise RuntimeError("no admissible D found")


# -- Whitney cover -------------------------------------------------------

def _vertex_distance(E: np.ndarray) -> np.ndarray:
    """Distance (cells) from each closed cell of ``E`` to the closed cells of ``E^c``.

    Box-to-box distance between lattice cells is attained at their corners,
    so it is a Euclidean distance transform on the vertex lattice.
    """
    n, N = E.ndim, E.shape[0]
    touches = any(np.any(np.take(E, [0, N - 1], axis=d)) for d in range(n))
    pad = N // 2 if touches else 0
    Ep = np.pad(E, pad, mode="wrap") if pad else E
    comp = np.pad(~Ep, 1, mode="constant", constant_values=True)
    # vertex v (of the padded grid) touches cells v-1 and v along each axis
    vert = np.zeros(tuple(s - 1 for s in comp.shape), dtype=bool)
    for corner in np.ndindex(*([2] * n)):
        sl = tuple(slice(c, c + vert.shape[d]) for d, c in enumerate(corner))
        vert |= comp[sl]
    vdist = ndimage.distance_transform_edt(~vert)
    cell = np.full(Ep.shape, np.inf)
    for corner in np.ndindex(*([2] * n)):
        sl = tuple(slice(c, c + Ep.shape[d]) for d, c in enumerate(corner))
        np.minimum(cell, vdist[sl], out=cell)
    if pad:
        cell = cell[tuple(slice(pad, pad + N) for _ in range(n))]
    return np.where(E, cell, 0.0)


def _block_min(a: np.ndarray, b: int) -> np.ndarray:
    n, N = a.ndim, a.shape[0]
    shape = []
    for _ in range(n):
        shape += [N // b, b]
    return a.reshape(shape).min(axis=tuple(range(1, 2 * n, 2)))


def _upsample(a: np.ndarray, f: int) -> np.ndarray:
    for d in range(a.ndim):
        a = np.repeat(a, f, axis=d)
    return a


@dataclass(frozen=True, eq=False)
class WhitneyCover:
    spec: GridSpec
    E: np.ndarray
    levels: np.ndarray
    corners: np.ndarray
    boundary: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def cubes(self) -> List[DyadicCube]:
        return [DyadicCube(self.spec, int(l), tuple(int(x) for x in c))
                for l, c in zip(self.levels, self.corners)]

    def side_cells(self) -> np.ndarray:
        return np.rint(2.0 ** self.levels * self.spec.u).astype(np.int64)

    def labels(self) -> np.ndarray:
        """Index of the covering cube for each cell (-1 outside); raises on overlap."""
        lab = np.full(self.spec.shape, -1, dtype=np.int64)
        for i, (c, s) in enumerate(zip(self.corners, self.side_cells())):
            sl = tuple(slice(x, x + s) for x in c)
            if np.any(lab[sl] >= 0):
                raise ValueError("cover cubes overlap")
            lab[sl] = i
        return lab

    def union(self) -> np.ndarray:
        return self.labels() >= 0

    def wreg_ratios(self) -> np.ndarray:
        """``dist(Q, E^c) / l(Q)`` for every cube."""
        return self.distances / self.side_cells()

    def wreg_ok(self) -> bool:
        r = self.wreg_ratios()[~self.boundary]
        sq = np.sqrt(self.spec.n)
        return bool(np.all((r >= WHITNEY_LOWER * sq) & (r < WHITNEY_UPPER * sq)))

    def overlap_3q(self) -> int:
        """Maximum number of the ``3Q`` dilates containing a single cell."""
        cnt = np.zeros(self.spec.shape, dtype=np.int64)
        N = self.spec.N
        for c, s in zip(self.corners, self.side_cells()):
            idx = np.ix_(*[np.arange(x - s, x + 2 * s) % N for x in c])
            cnt[idx] += 1
        return int(cnt.max()) if cnt.size else 0

    def adjacency(self) -> Dict[int, int]:
        """Counts of touching cube pairs keyed by level difference."""
        lab = self.labels()
        pairs = set()
        for d in range(self.spec.n):
            a = lab
            b = np.roll(lab, -1, axis=d)
            sel = (a >= 0) & (b >= 0) & (a != b)
            for x, y in zip(a[sel], b[sel]):
                pairs.add((min(x, y), max(x, y)))
        out: Dict[int, int] = {}
        for x, y in sorted(pairs):
            k = int(abs(self.levels[x] - self.levels[y]))
            out[k] = out.get(k, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "grid": self.spec.to_dict(),
            "cubes": [{"level": int(l), "corner": [int(x) for x in c], "boundary": bool(b)}
                      for l, c, b in zip(self.levels, self.corners, self.boundary)],
            "E_RLE": rle_encode(self.E),
        }


def whitney(E: np.ndarray, spec: GridSpec) -> WhitneyCover:
    """Top-down dyadic Whitney cover of the cell set ``E``.

    A cube is accepted when ``dist(Q, E^c) >= 5 sqrt(n) l(Q)`` while its parent
    fails that test; the parent bound then forces ``dist < 11 sqrt(n) l(Q)``.
    Cells that fail at the single-cell level form the boundary layer and are
    covered by flagged one-cell cubes.
    """
    E = np.asarray(E, dtype=bool).reshape(spec.shape)
    n = spec.n
    empty = np.zeros((0,), dtype=np.int64)
    if not E.any():
        return WhitneyCover(spec, E, empty, np.zeros((0, n), dtype=np.int64),
                            np.zeros(0, dtype=bool), np.zeros(0))
    if E.all():
        raise ValueError("E is the whole domain")
    dist = _vertex_distance(E)
    sq = np.sqrt(n)
    by_level = [dist]
    b = 1
    while b < spec.N:
        b *= 2
        by_level.append(_block_min(dist, b))
    covered = np.zeros(spec.shape, dtype=bool)
    levels, corners, dists = [], [], []
    for L in range(len(by_level) - 1, -1, -1):
        b = 2 ** L
        dl = by_level[L]
        ok = dl >= WHITNEY_LOWER * sq * b
        if L + 1 < len(by_level):
            parent_fail = _upsample(by_level[L + 1] < WHITNEY_LOWER * sq * 2 * b, 2)
            ok &= parent_fail
        for idx in np.argwhere(ok):
            corners.append(idx * b)
            levels.append(L)
            dists.append(dl[tuple(idx)])
        covered |= _upsample(ok, b)
    rest = np.argwhere(E & ~covered)
    order = {}
    for c, L, d in zip(corners, levels, dists):
        order[tuple(int(x) for x in c)] = (L, d, False)
    for c in rest:
        order[tuple(int(x) for x in c)] = (0, dist[tuple(c)], True)
    keys = sorted(order)
    cells_level = np.array([order[k][0] for k in keys], dtype=np.int64)
    return WhitneyCover(
        spec, E,
        levels=cells_level - spec.s,
        corners=np.array(keys, dtype=np.int64).reshape(-1, n),
        boundary=np.array([order[k][2] for k in keys], dtype=bool),
        distances=np.array([order[k][1] for k in keys], dtype=np.float64),
    )


# -- Calderon-Zygmund decomposition --------------------------------------

@dataclass(frozen=True, eq=False)
class CZDecomposition:
    """``f = g + sum_Q b_Q`` with ``b_Q = 1_Q (f - <f>_{Q,1})``."""

    f: GridFunction
    cover: WhitneyCover
    good: GridFunction
    means: np.ndarray
    labels: np.ndarray

    def bad_part(self, i: int) -> GridFunction:
        sel = self.labels == i
        return self.f.with_samples(np.where(sel, self.f.samples - self.means[i], 0.0))

    def bad_total(self) -> GridFunction:
        inside = self.labels >= 0
        if not inside.any():
            return GridFunction.zeros(self.f.spec)
        mean_map = np.where(inside, self.means[np.maximum(self.labels, 0)], 0.0)
        return self.f.with_samples(np.where(inside, self.f.samples - mean_map, 0.0))

    def bad_sums(self) -> np.ndarray:
        """Cell sums of each ``b_Q`` (zero up to rounding)."""
        inside = self.labels >= 0
        if not inside.any():
            return np.zeros(len(self.means))
        resid = self.f.samples - np.where(inside, self.means[np.maximum(self.labels, 0)], 0.0)
        return np.bincount(self.labels[inside], weights=resid[inside], minlength=len(self.means))


def cz_decompose(f: GridFunction, cover: WhitneyCover) -> CZDecomposition:
    if f.spec != cover.spec:
        raise ValueError("grid mismatch")
    lab = cover.labels()
    inside = lab >= 0
    k = len(cover)
    if k == 0:
        return CZDecomposition(f, cover, f, np.zeros(0), lab)
    counts = np.bincount(lab[inside], minlength=k)
    sums = np.bincount(lab[inside], weights=f.samples[inside], minlength=k)
    means = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    g = np.where(inside, means[np.maximum(lab, 0)], f.samples)
    return CZDecomposition(f, cover, f.with_samples(g), means, lab)


# -- run-length encoding of masks ----------------------------------------

def rle_encode(mask: np.ndarray) -> List[List[int]]:
    """``[[start, length], ...]`` runs of True in the C-order flattening."""
    flat = np.asarray(mask, dtype=np.int8).ravel()
    d = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [[int(a), int(b - a)] for a, b in zip(starts, ends)]


def rle_decode(runs, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for a, ln in runs:
        flat[a:a + ln] = True
    return flat.reshape(shape)
