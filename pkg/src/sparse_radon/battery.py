"""
Deterministic test batteries.

Random inputs are defined physically: they are piecewise constant on blocks
of side ``1/8`` unit, with block values drawn from a generator seeded per
pair.  The same seed therefore yields the same functions on ``(K, s)`` and
on the refined grid ``(K+1, s+1)``, which is what refinement checks compare.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .decomp import DyadicCube, cz_decompose, whitney
from .lattice import GridFunction, GridSpec

BLOCKS_PER_UNIT = 8
VARIANTS = ("uniform", "heavy", "spikes", "signed")


@dataclass(frozen=True, eq=False)
class TestPair:
    label: str
    f1: GridFunction
    f2: GridFunction


def _block_field(spec: GridSpec, box, values: np.ndarray) -> np.ndarray:
    blk = spec.u // BLOCKS_PER_UNIT
    if blk < 1:
        raise ValueError("grid is coarser than the battery blocks")
    a = np.zeros(spec.shape)
    a[box.slices] = np.kron(values, np.ones((blk,) * spec.n))
    return a


def _block_shape(spec: GridSpec, box) -> tuple:
    blk = spec.u // BLOCKS_PER_UNIT
    return tuple((h - l) // blk for l, h in zip(box.lo, box.hi))


def _values(rng: np.random.Generator, shape, variant: str, nonneg: bool) -> np.ndarray:
    if variant == "uniform":
        v = rng.uniform(0.0, 1.0, shape)
    elif variant == "heavy":
        v = rng.exponential(1.0, shape) ** 3
    elif variant == "spikes":
        v = rng.uniform(0.0, 0.1, shape)
        hits = rng.random(shape) < 0.02
        v = v + hits * rng.uniform(50.0, 500.0, shape)
    elif variant == "signed":
        v = rng.standard_normal(shape)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return np.abs(v) if nonneg else v


def random_pair(spec: GridSpec, Q0: DyadicCube, seed: int, variant: Optional[str] = None,
                nonneg_f2: bool = True) -> TestPair:
    """``f1`` on ``Q0`` and ``f2 >= 0`` on ``3 Q0``, both block-constant."""
    rng = np.random.default_rng(seed)
    if variant is None:
        variant = VARIANTS[int(rng.integers(len(VARIANTS)))]
    b1, b3 = Q0.box(), Q0.box(3)
    v1 = _values(rng, _block_shape(spec, b1), variant, nonneg=False)
    v2 = _values(rng, _block_shape(spec, b3), variant, nonneg=nonneg_f2)
    return TestPair(f"{variant}-{seed}", GridFunction(spec, _block_field(spec, b1, v1)),
                    GridFunction(spec, _block_field(spec, b3, v2)))


def constant_pair(spec: GridSpec, Q0: DyadicCube, c1: float = 1.0, c2: float = 1.0) -> TestPair:
    return TestPair(f"constant-{c1:g}-{c2:g}", GridFunction(spec, c1 * Q0.mask()),
                    GridFunction(spec, c2 * Q0.mask(3)))


def constants_battery(spec: GridSpec, Q0: DyadicCube, seed: int, count: int = 5) -> List[TestPair]:
    rng = np.random.default_rng(seed)
    return [constant_pair(spec, Q0, float(rng.uniform(0.1, 10)), float(rng.uniform(0.1, 10)))
            for _ in range(count)]


def standard_battery(spec: GridSpec, Q0: DyadicCube, seed: int = 0, count: int = 50) -> List[TestPair]:
    """``count`` random pairs cycling through the variants, plus nothing else.

    Pair ``i`` uses the generator seeded with ``(seed, i)`` so that adding
    pairs never changes earlier ones.
    """
    out = []
    for i in range(count):
        s = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        out.append(random_pair(spec, Q0, s, VARIANTS[i % len(VARIANTS)]))
    return out


def nested_spikes_1d(spec: GridSpec, Q0: DyadicCube, seed: int, depth: int = 3) -> TestPair:
    """1D input with spikes inside spikes so that the recursion goes several levels deep."""
    if spec.n != 1:
        raise ValueError("one-dimensional battery")
    rng = np.random.default_rng(seed)
    x = spec.coordinates()[..., 0]
    lo = Q0.corner[0] / spec.u
    f = np.ones(spec.shape)
    width, start = Q0.side / 4, lo + Q0.side * rng.uniform(0.2, 0.6)
    amp = 1.0
    for _ in range(depth):
        amp *= 30.0
        f = f + amp * ((x >= start) & (x < start + width))
        start = start + width * rng.uniform(0.2, 0.6)
        width /= 8
    f1 = GridFunction(spec, f * Q0.mask())
    g = np.abs(rng.standard_normal(spec.shape)) * Q0.mask(3)
    return TestPair(f"nested-{seed}", f1, GridFunction(spec, g))


# -- L^1 test functions ----------------------------------------------------------

def unit_square(spec: GridSpec, side: float = 1 / 8, centre=None) -> GridFunction:
    """Indicator of a physical cube of the given side, normalised to mass 1."""
    if centre is None:
        centre = (spec.side / 2,) * spec.n
    x = spec.coordinates()
    inside = np.ones(spec.shape, dtype=bool)
    for d in range(spec.n):
        inside &= (x[..., d] >= centre[d] - side / 2) & (x[..., d] < centre[d] + side / 2)
    f = inside.astype(float)
    return GridFunction(spec, f / (f.sum() * spec.cell_volume))


def single_cell(spec: GridSpec) -> GridFunction:
    f = np.zeros(spec.shape)
    f[(spec.N // 2,) * spec.n] = 1.0 / spec.cell_volume
    return GridFunction(spec, f)


def bad_part_stack(spec: GridSpec, seed: int, region: float = 1.0, blobs: int = 4) -> GridFunction:
    """Sum of the Calderon-Zygmund bad parts of a rough function over a Whitney
    cover of a few random squares, normalised in L^1."""
    rng = np.random.default_rng(seed)
    x = spec.coordinates()
    c = spec.side / 2
    # blobs need at least 32 cells across to contain interior Whitney cubes
    w = max(region / 4, 32 / spec.u)
    region = max(region, 4 * w)
    near = np.all(np.abs(x - c) < region / 2, axis=-1)
    f = near * rng.exponential(1.0, spec.shape) ** 4
    E = np.zeros(spec.shape, dtype=bool)
    for centre in rng.uniform(c - region / 2 + w / 2, c + region / 2 - w / 2, (blobs, spec.n)):
        E |= np.all(np.abs(x - centre) < w / 2, axis=-1)
    cz = cz_decompose(GridFunction(spec, f), whitney(E, spec))
    b = cz.bad_total()
    return b * (1.0 / b.norm(1))


def l1_battery(spec: GridSpec, seed: int = 0) -> List[GridFunction]:
    return [single_cell(spec), unit_square(spec), bad_part_stack(spec, seed)]
