"""
The multi-scale operators: the singular Radon transform, the maximal
averaging operator, their truncated variants, ball averages and the
associated maximal functions.

Every per-scale convolution is evaluated spectrally.  Scale sums are
accumulated in increasing ``j`` so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from .lattice import (GridFunction, GridSpec, apply_multiplier, check_measure_grid,
                      transfer)
from .measures import DiscreteMeasure, dilate, resolution_floor


@dataclass(frozen=True)
class EpsilonSigns:
    """Coefficients ``eps_j`` for ``N1 <= j <= N2``; zero elsewhere."""

    N1: int
    N2: int
    values: Tuple[float, ...]

    def __post_init__(self):
        if self.N1 > self.N2:
            raise ValueError(f"N1={self.N1} > N2={self.N2}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) != self.N2 - self.N1 + 1:
            raise ValueError("need one coefficient per scale")
        if any(abs(v) > 1 for v in vals):
            raise ValueError("coefficients must satisfy |eps_j| <= 1")
        object.__setattr__(self, "values", vals)

    @classmethod
    def alternating(cls, N1: int, N2: int) -> "EpsilonSigns":
        return cls(N1, N2, tuple((-1.0) ** (j - N1) for j in range(N1, N2 + 1)))

    @classmethod
    def constant(cls, N1: int, N2: int, value: float = 1.0) -> "EpsilonSigns":
        return cls(N1, N2, (value,) * (N2 - N1 + 1))

    @classmethod
    def random(cls, N1: int, N2: int, seed: int) -> "EpsilonSigns":
        rng = np.random.default_rng(seed)
        return cls(N1, N2, tuple(rng.uniform(-1.0, 1.0, N2 - N1 + 1)))

    def items(self):
        return zip(range(self.N1, self.N2 + 1), self.values)

    def __getitem__(self, j: int) -> float:
        if self.N1 <= j <= self.N2:
            return self.values[j - self.N1]
        return 0.0

    def truncated(self, top: int) -> Optional["EpsilonSigns"]:
        """Scales ``j <= top`` only; ``None`` when nothing is left."""
        if top < self.N1:
            return None
        top = min(top, self.N2)
        return EpsilonSigns(self.N1, top, self.values[: top - self.N1 + 1])

    def negated(self) -> "EpsilonSigns":
        return EpsilonSigns(self.N1, self.N2, tuple(-v for v in self.values))

    def to_dict(self) -> dict:
        return {"N1": self.N1, "N2": self.N2, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "EpsilonSigns":
        return cls(int(d["N1"]), int(d["N2"]), tuple(d["values"]))


@dataclass(frozen=True)
class ExponentPair:
    p: float
    q: float

    def __post_init__(self):
        if not (1 < self.p < self.q < np.inf):
            raise ValueError(f"need 1 < p < q < inf, got p={self.p}, q={self.q}")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1)

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1)


def theta_exponents(p: float, q: float, theta: float):
    """Interpolated exponents ``(p_theta, q_theta, q_theta')``."""
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    if not 1 < p < q:
        raise ValueError("need 1 < p < q")
    inv_p = (1 - theta) / p + theta / 2
    inv_q = (1 - theta) / q + theta / 2
    return 1 / inv_p, 1 / inv_q, 1 / (1 - inv_q)


# -- ball averages and maximal functions ---------------------------------

@lru_cache(maxsize=64)
def ball_offsets(n: int, u: int, r: float) -> np.ndarray:
    """Integer offsets within physical distance ``r`` (inclusive)."""
    R = int(np.floor(r * u + 1e-9))
    ax = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    keep = (grid.astype(np.float64) ** 2).sum(axis=1) <= (r * u) ** 2 * (1 + 1e-12)
    out = grid[keep]
    out.setflags(write=False)
    return out


def local_average(f: GridFunction, x: Sequence[int], r: float, p: float) -> float:
    """p-average of ``|f|`` over the lattice ball of radius ``r`` at cell ``x``."""
    if r < 0 or p < 1:
        raise ValueError("need r >= 0 and p >= 1")
    offs = ball_offsets(f.spec.n, f.spec.u, float(r))
    if len(offs) == 0:
        raise ValueError("ball contains no lattice point")
    idx = tuple((np.asarray(x)[d] + offs[:, d]) % f.spec.N for d in range(f.spec.n))
    vals = np.abs(f.samples[idx]) ** p
    return float(vals.mean() ** (1.0 / p))


def dyadic_radii(spec: GridSpec, max_radius: Optional[float] = None) -> list:
    """``[0] + [2**i / u]`` up to ``max_radius`` (default ``side / 4``)."""
    if max_radius is None:
        max_radius = spec.side / 4
    radii = [0.0]
    c = 1
    while c / spec.u <= max_radius * (1 + 1e-12):
        radii.append(c / spec.u)
        c *= 2
    return radii


@lru_cache(maxsize=128)
def _ball_transfer(spec: GridSpec, r: float) -> np.ndarray:
    offs = ball_offsets(spec.n, spec.u, r)
    H = transfer(spec, offs, np.full(len(offs), 1.0 / len(offs)))
    H.setflags(write=False)
    return H


def maximal_fn(f: GridFunction, p: float = 1.0, max_radius: Optional[float] = None) -> GridFunction:
    """``sup_r A_p^r f`` over the dyadic radius set (radius 0 is the cell itself)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    a = np.abs(f.samples)
    if not np.any(a):
        return f.with_samples(a)
    ap = a if p == 1 else a ** p
    out = ap.copy()
    F = sfft.rfftn(ap)
    for r in dyadic_radii(f.spec, max_radius)[1:]:
        np.maximum(out, sfft.irfftn(F * _ball_transfer(f.spec, r), s=f.spec.shape), out=out)
    return f.with_samples(out if p == 1 else out ** (1.0 / p))


# -- multi-scale operators -----------------------------------------------

def _scale_transfer(spec: GridSpec, m: DiscreteMeasure, j: int, strict: bool) -> np.ndarray:
    mj = dilate(m, j, spec, strict=strict)
    return transfer(spec, mj.atoms, mj.weights)


def radon_T(f: GridFunction, mu: DiscreteMeasure, eps: EpsilonSigns,
            strict: bool = True) -> GridFunction:
    """``T f = sum_j eps_j mu_j * f``."""
    check_measure_grid(f.spec, mu)
    if strict and not mu.mean_zero:
        raise ValueError("the singular transform needs a mean-zero measure")
    H = None
    for j, e in eps.items():
        if e == 0:
            continue
        term = e * _scale_transfer(f.spec, mu, j, strict)
        H = term if H is None else H + term
    if H is None:
        return GridFunction.zeros(f.spec)
    return apply_multiplier(f, H)


def maximal_T_star(f: GridFunction, sigma: DiscreteMeasure, j_range: Iterable[int],
                   strict: bool = True) -> GridFunction:
    """``T* f = sup_j sigma_j * |f|`` over the given scales."""
    check_measure_grid(f.spec, sigma)
    if strict and not sigma.positive:
        raise ValueError("the maximal operator needs a positive measure")
    js = sorted(set(int(j) for j in j_range))
    out = np.zeros(f.spec.shape)
    if not js:
        return f.with_samples(out)
    F = sfft.rfftn(np.abs(f.samples))
    for k, j in enumerate(js):
        g = sfft.irfftn(F * _scale_transfer(f.spec, sigma, j, strict), s=f.spec.shape)
        out = g if k == 0 else np.maximum(out, g)
    return f.with_samples(out)


def truncated_T_Q(f: GridFunction, Q, mu: DiscreteMeasure, eps: EpsilonSigns,
                  strict: bool = True) -> GridFunction:
    """``T_Q f = sum_{2**j <= l(Q)} eps_j mu_j * (1_Q f)``."""
    sub = eps.truncated(Q.level)
    if sub is None:
        return GridFunction.zeros(f.spec)
    return radon_T(f.masked(Q.mask()), mu, sub, strict=strict)


def high_T_star(f: GridFunction, sigma: DiscreteMeasure, Q0, j_min: Optional[int] = None,
                strict: bool = True) -> GridFunction:
    """``sup_{2**j <= l(Q0)} sigma_j * |f|``, from ``j_min`` (default: resolution floor)."""
    lo = resolution_floor(sigma) if j_min is None else int(j_min)
    return maximal_T_star(f, sigma, range(lo, Q0.level + 1), strict=strict)


# -- L^p improving probe -------------------------------------------------

def _trial_functions(spec: GridSpec, trials: int, rng: np.random.Generator, family: str):
    """The documented trial family.

    ``standard``: tensor bumps of widths 1/8, 1/4, 1/2, single cells, and
    axis-aligned rectangles with aspect ratios 1, sqrt(u), u.
    ``unit_area``: indicators of unit-volume rectangles (aspect 1, sqrt(u), u)
    placed at random, for comparisons across exponents.
    """
    n, u, N = spec.n, spec.u, spec.N
    centre = spec.side / 2
    x = spec.coordinates()
    out = []
    for t in range(trials):
        shift = rng.uniform(-0.5, 0.5, n)
        kind = t % 3 if family == "standard" else 2
        if kind == 0:
            w = (1 / 8, 1 / 4, 1 / 2)[(t // 3) % 3]
            d = (x - centre - shift) / w
            f = np.prod(np.where(np.abs(d) < 1, np.exp(-1 / np.maximum(1 - d * d, 1e-300)), 0.0),
                        axis=-1)
        elif kind == 1:
            f = np.zeros(spec.shape)
            f[tuple(int((centre + shift[d]) * u) % N for d in range(n))] = 1.0
        else:
            aspect = (1.0, np.sqrt(u), float(u))[(t // 3) % 3]
            if family == "unit_area":
                short = aspect ** (-1 / n) if n > 1 else 1.0
            else:
                short = max(1.0 / u, 1.0 / aspect)
            sides = [short] + [short * aspect] * (n - 1) if n > 1 else [short]
            axes = rng.permutation(n)
            f = np.ones(spec.shape)
            for d, ax in enumerate(axes):
                lo = centre + shift[ax] - sides[d] / 2
                c = x[..., ax]
                f = f * ((c >= lo) & (c < lo + sides[d]))
            if not f.any():
                f[tuple(int((centre + shift[d]) * u) % N for d in range(n))] = 1.0
        out.append(GridFunction(spec, f))
    return out


def improving_norm_estimate(m: DiscreteMeasure, spec: GridSpec, p: float, q: float,
                            trials: int = 30, seed: int = 0, family: str = "standard") -> float:
    """Lower bound for the ``L^p -> L^q`` norm of convolution with ``m``.

    Maximum of ``||m * f||_q / ||f||_p`` over a deterministic trial family.
    """
    if trials < 10:
        raise ValueError("need at least 10 trials")
    if family not in ("standard", "unit_area"):
        raise ValueError(f"unknown trial family {family!r}")
    check_measure_grid(spec, m)
    rng = np.random.default_rng(seed)
    H = transfer(spec, m.atoms, m.weights)
    best = 0.0
    for f in _trial_functions(spec, trials, rng, family):
        g = apply_multiplier(f, H)
        best = max(best, g.norm(q) / f.norm(p))
    return best
