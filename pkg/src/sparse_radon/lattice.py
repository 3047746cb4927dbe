"""
Periodic dyadic grids and the functions that live on them.

A grid has ``N = 2**K`` cells per axis and ``u = 2**s`` cells per unit of
physical length, so the torus has side ``N / u``.  Cell ``i`` occupies the
physical interval ``[i/u, (i+1)/u)`` along each axis.  Every integral is a
cell-volume weighted sum.

Fourier coefficients use the physical normalisation

    f_hat(xi) = sum_x f(x) exp(-2 pi i xi . x) u**-n,   xi = k u / N,

which is what the continuum transform of a compactly supported function
reduces to on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sfft

from .errors import GridError, GuardError

MAX_K_2D = 14


@dataclass(frozen=True)
class GridSpec:
    """Shape of a periodic dyadic grid.

    ``make_grid`` is the guarded constructor for experiments; building a
    ``GridSpec`` directly skips the padding guard, which oracle tests on very
    small grids and local windows rely on.
    """

    n: int
    K: int
    s: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.n}")
        if self.K < 1 or self.s < 0:
            raise GridError(f"bad exponents K={self.K}, s={self.s}")

    @property
    def N(self) -> int:
        return 2 ** self.K

    @property
    def u(self) -> int:
        return 2 ** self.s

    @property
    def side(self) -> float:
        return self.N / self.u

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def cell_volume(self) -> float:
        return float(self.u) ** (-self.n)

    @property
    def size(self) -> int:
        return self.N ** self.n

    def axis_frequencies(self, real: bool = False) -> list:
        """Physical frequencies per axis (cycles per unit length)."""
        scale = self.u / self.N
        axes = [sfft.fftfreq(self.N, 1.0 / self.N) * scale for _ in range(self.n)]
        if real:
            axes[-1] = sfft.rfftfreq(self.N, 1.0 / self.N) * scale
        return axes

    def radial_frequency(self, real: bool = False) -> np.ndarray:
        return _radial_frequency(self, real)

    def coordinates(self) -> np.ndarray:
        """Cell-centre physical coordinates, shape ``shape + (n,)``."""
        c = (np.arange(self.N) + 0.5) / self.u
        grids = np.meshgrid(*([c] * self.n), indexing="ij")
        return np.stack(grids, axis=-1)

    def to_dict(self) -> dict:
        return {"n": self.n, "K": self.K, "s": self.s}


@lru_cache(maxsize=16)
def _radial_frequency(spec: GridSpec, real: bool) -> np.ndarray:
    axes = spec.axis_frequencies(real)
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    r = np.sqrt(sum(g * g for g in grids))
    r.setflags(write=False)
    return r


def make_grid(n: int, K: int, s: int) -> GridSpec:
    """Guarded grid constructor: ``3 <= s <= K - 4`` so that ``u <= N/16``."""
    if n not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {n}")
    if n == 2 and K > MAX_K_2D:
        raise GuardError(f"K={K} exceeds the 2D memory guard K <= {MAX_K_2D}")
    if s < 3:
        raise GuardError(f"s={s} below the minimum resolution s >= 3")
    if s > K - 4:
        raise GuardError(f"padding guard needs s <= K - 4, got s={s}, K={K}")
    return GridSpec(n, K, s)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real samples on a grid, one per cell."""

    spec: GridSpec
    samples: np.ndarray
    support: Optional[Tuple[Tuple[int, int], ...]] = field(default=None)

    def __post_init__(self):
        a = np.array(self.samples, dtype=np.float64)
        if a.size != self.spec.size:
            raise GridError(f"expected {self.spec.size} samples, got {a.size}")
        a = a.reshape(self.spec.shape)
        if not np.all(np.isfinite(a)):
            raise ValueError("grid function has non-finite samples")
        a.setflags(write=False)
        object.__setattr__(self, "samples", a)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "GridFunction":
        """Sample ``fn`` (taking an ``(..., n)`` coordinate array) at cell centres."""
        return cls(spec, fn(spec.coordinates()))

    def with_samples(self, samples: np.ndarray) -> "GridFunction":
        return GridFunction(self.spec, samples)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _same_spec(self, other)
        return self.with_samples(self.samples + other.samples)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _same_spec(self, other)
        return self.with_samples(self.samples - other.samples)

    def __mul__(self, scalar: float) -> "GridFunction":
        return self.with_samples(self.samples * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return self.with_samples(-self.samples)

    def __abs__(self) -> "GridFunction":
        return self.with_samples(np.abs(self.samples))

    def masked(self, mask: np.ndarray) -> "GridFunction":
        return self.with_samples(np.where(mask, self.samples, 0.0))

    def integral(self) -> float:
        return float(self.samples.sum() * self.spec.cell_volume)

    def norm(self, p: float = 2.0) -> float:
        a = np.abs(self.samples)
        if np.isinf(p):
            return float(a.max())
        return float((np.sum(a ** p) * self.spec.cell_volume) ** (1.0 / p))


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    """Fourier coefficients on the full (two-sided) frequency grid."""

    spec: GridSpec
    coefficients: np.ndarray

    def frequencies(self) -> list:
        return self.spec.axis_frequencies()

    def at_zero(self) -> complex:
        return complex(self.coefficients[(0,) * self.spec.n])


def _same_spec(f, g) -> None:
    if f.spec != g.spec:
        raise GridError(f"grid mismatch: {f.spec} vs {g.spec}")


def pairing(f: GridFunction, g: GridFunction) -> float:
    """The bilinear form <f, g> = integral of f g."""
    _same_spec(f, g)
    return float(np.vdot(f.samples.ravel(), g.samples.ravel()) * f.spec.cell_volume)


def spectrum(f: GridFunction) -> SpectralFunction:
    return SpectralFunction(f.spec, sfft.fftn(f.samples) * f.spec.cell_volume)


def inverse_spectrum(F: SpectralFunction) -> GridFunction:
    x = sfft.ifftn(F.coefficients / F.spec.cell_volume)
    return GridFunction(F.spec, x.real)


def atom_grid(spec: GridSpec, atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Deposit weights at integer lattice offsets (wrapped onto the torus)."""
    g = np.zeros(spec.shape)
    idx = tuple((atoms[:, d] % spec.N) for d in range(spec.n))
    np.add.at(g, idx, weights)
    return g


def transfer(spec: GridSpec, atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Real-FFT multiplier of convolution with the given atoms."""
    return sfft.rfftn(atom_grid(spec, atoms, weights))


def apply_multiplier(f: GridFunction, H: np.ndarray) -> GridFunction:
    out = sfft.irfftn(sfft.rfftn(f.samples) * H, s=f.spec.shape)
    return GridFunction(f.spec, out)


def convolve(f: GridFunction, m) -> GridFunction:
    """Circular convolution ``sum_a w_a f(x - a)`` with a discrete measure."""
    check_measure_grid(f.spec, m)
    return apply_multiplier(f, transfer(f.spec, m.atoms, m.weights))


def check_measure_grid(spec: GridSpec, m) -> None:
    if m.n != spec.n or m.u != spec.u:
        raise GridError(f"measure lattice (n={m.n}, u={m.u}) does not match grid {spec}")
