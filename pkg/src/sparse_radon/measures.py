"""
Discrete measures supported in the unit ball, their dyadic dilates, and a
numerical estimate of their Fourier decay exponent.

Atoms are stored as integer lattice offsets (multiples of ``1/u``), so a
dilation by ``2**j`` with ``j >= 0`` is exact and never moves mass off the
lattice.  Dilations with ``j < 0`` snap to the nearest lattice point inside
the dilated ball.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import GuardError, LatticeError
from .lattice import GridSpec, atom_grid

# Minimum dilated support radius, in cells.
RESOLUTION_FLOOR_CELLS = 8
MEAN_ZERO_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atoms at integer lattice offsets from the origin."""

    n: int
    u: int
    atoms: np.ndarray
    weights: np.ndarray
    radius: float = 1.0
    mean_zero: bool = False

    def __post_init__(self):
        raw = np.asarray(self.atoms, dtype=np.float64).reshape(-1, self.n)
        if not np.all(raw == np.rint(raw)):
            raise LatticeError("atoms must be integer lattice offsets")
        atoms = raw.astype(np.int64)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(w) != len(atoms):
            raise ValueError("one weight per atom required")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if len(atoms):
            far = np.sqrt((atoms.astype(np.float64) ** 2).sum(axis=1)).max() / self.u
            if far > self.radius * (1 + 1e-12):
                raise ValueError(f"atom at distance {far} outside radius {self.radius}")
        if self.mean_zero and abs(w.sum()) > MEAN_ZERO_TOL:
            raise ValueError(f"flagged mean-zero but total mass is {w.sum()}")
        atoms.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.weights).sum())

    @property
    def positive(self) -> bool:
        return bool(np.all(self.weights >= 0))

    def positions(self) -> np.ndarray:
        """Physical atom positions."""
        return self.atoms / float(self.u)

    def reflect(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.n, self.u, -self.atoms, self.weights, self.radius, self.mean_zero)

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.n, self.u, self.atoms, self.weights * c, self.radius,
                               self.mean_zero)

    def to_json(self) -> str:
        doc = {
            "dimension": self.n,
            "unit_cells": self.u,
            "radius": self.radius,
            "mean_zero": self.mean_zero,
            "atoms": [[list(map(int, a)), float(w)] for a, w in zip(self.atoms, self.weights)],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        doc = json.loads(text)
        n = int(doc["dimension"])
        atoms = np.array([a for a, _ in doc["atoms"]], dtype=np.int64).reshape(-1, n)
        weights = np.array([w for _, w in doc["atoms"]], dtype=np.float64)
        return cls(n, int(doc["unit_cells"]), atoms, weights,
                   float(doc.get("radius", 1.0)), bool(doc["mean_zero"]))


def unit_atom(n: int, u: int, weight: float = 1.0) -> DiscreteMeasure:
    return DiscreteMeasure(n, u, np.zeros((1, n), dtype=np.int64), [weight], radius=1.0)


def _snap_inside(points: np.ndarray, rad_cells: float) -> np.ndarray:
    """Nearest lattice point to each row of ``points`` within the closed ball."""
    best = np.rint(points)
    inside = (best ** 2).sum(axis=1) <= rad_cells ** 2 * (1 + 1e-12)
    if np.all(inside):
        return best.astype(np.int64)
    n = points.shape[1]
    lo = np.floor(points)
    corners = np.array(np.meshgrid(*([[0, 1]] * n), indexing="ij")).reshape(n, -1).T
    cand = lo[:, None, :] + corners[None, :, :]
    ok = (cand ** 2).sum(axis=2) <= rad_cells ** 2 * (1 + 1e-12)
    d2 = ((cand - points[:, None, :]) ** 2).sum(axis=2)
    d2 = np.where(ok, d2, np.inf)
    pick = cand[np.arange(len(points)), d2.argmin(axis=1)]
    return np.where(inside[:, None], best, pick).astype(np.int64)


def circle_sample_radius(spec: GridSpec, radius: float = 1.0) -> float:
    """Physical radius of the circle whose points ``circle_measure`` rounds.

    It sits half a cell diagonal inside ``radius``, so plain nearest-point
    rounding can never leave the closed ball.
    """
    return radius - np.sqrt(0.5) / spec.u


def circle_measure(spec: GridSpec, radius: float = 1.0, M: Optional[int] = None) -> DiscreteMeasure:
    """Arc-length measure on the circle, ``M`` equal atoms snapped to the lattice.

    The equispaced points lie on the circle of radius
    ``circle_sample_radius(spec, radius)`` and are rounded to the nearest
    lattice point.  Points in the first quadrant are rounded and the other
    three quadrants are exact 90 degree rotations, so the atom multiset has
    the full lattice rotation symmetry.
    """
    if spec.n != 2:
        raise ValueError("circle measure needs a 2D grid")
    if M is None:
        M = 16 * spec.u
    if M < 16 * spec.u or M % 4:
        raise ValueError(f"need M >= 16*u = {16 * spec.u} and divisible by 4, got {M}")
    q = M // 4
    t = 2 * np.pi * np.arange(q) / M
    r = circle_sample_radius(spec, radius) * spec.u
    first = _snap_inside(np.stack([r * np.cos(t), r * np.sin(t)], axis=1), radius * spec.u)
    quads = [first]
    for _ in range(3):
        prev = quads[-1]
        quads.append(np.stack([-prev[:, 1], prev[:, 0]], axis=1))
    atoms = np.concatenate(quads)
    return DiscreteMeasure(2, spec.u, atoms, np.full(M, 1.0 / M), radius=radius)


def smooth_bump(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def interval_bump_measure(spec: GridSpec, profile: Callable = smooth_bump) -> DiscreteMeasure:
    """Positive measure with density ``profile`` on [-1, 1], normalised to mass 1."""
    if spec.n != 1:
        raise ValueError("interval bump measure needs a 1D grid")
    a = np.arange(-spec.u, spec.u + 1)
    w = np.asarray(profile(a / spec.u), dtype=np.float64)
    keep = w != 0
    w = w[keep]
    if np.any(w < 0):
        raise ValueError("profile must be nonnegative")
    return DiscreteMeasure(1, spec.u, a[keep, None], w / w.sum(), radius=1.0)


def modulate_mean_zero(sigma: DiscreteMeasure, rho: Callable) -> DiscreteMeasure:
    """``d mu = (rho - c) d sigma`` with ``c`` the sigma-mean of ``rho``."""
    mass = sigma.weights.sum()
    if mass == 0:
        raise ValueError("sigma has zero mass")
    r = np.asarray(rho(sigma.positions()), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(r)):
        raise ValueError("density is not bounded on the atoms")
    c = (r * sigma.weights).sum() / mass
    w = (r - c) * sigma.weights
    return DiscreteMeasure(sigma.n, sigma.u, sigma.atoms, w, sigma.radius, mean_zero=True)


def resolution_floor(m: DiscreteMeasure) -> int:
    """Smallest j with ``2**j * radius * u >= 8`` cells."""
    return int(np.ceil(np.log2(RESOLUTION_FLOOR_CELLS / (m.radius * m.u)) - 1e-12))


def padding_ceiling(m: DiscreteMeasure, spec: GridSpec) -> int:
    """Largest j with ``2**j * radius <= side / 8``."""
    return int(np.floor(np.log2(spec.side / (8 * m.radius)) + 1e-12))


def dilate(m: DiscreteMeasure, j: int, spec: Optional[GridSpec] = None,
           strict: bool = True) -> DiscreteMeasure:
    """``mu_j`` with ``int f d mu_j = int f(2**j x) d mu(x)``.

    With ``strict`` the resolution floor is enforced, and the padding guard
    as well when ``spec`` is given.
    """
    j = int(j)
    if strict:
        if j < resolution_floor(m):
            raise GuardError(f"scale j={j} below resolution floor {resolution_floor(m)}")
        if spec is not None and j > padding_ceiling(m, spec):
            raise GuardError(f"scale j={j} exceeds padding guard {padding_ceiling(m, spec)}")
    if j == 0:
        return m
    rad = m.radius * 2.0 ** j
    if j > 0:
        atoms = m.atoms * (2 ** j)
    else:
        atoms = _snap_inside(m.atoms * 2.0 ** j, rad * m.u)
    return DiscreteMeasure(m.n, m.u, atoms, m.weights, rad, m.mean_zero)


def measure_spectrum(m: DiscreteMeasure, xi: np.ndarray) -> np.ndarray:
    """Exact ``sum_i w_i exp(-2 pi i xi . x_i)`` at physical frequencies ``xi``."""
    xi = np.asarray(xi, dtype=np.float64)
    flat = xi.reshape(-1, m.n)
    x = m.positions()
    out = np.empty(len(flat), dtype=np.complex128)
    step = max(1, 2 ** 22 // max(len(x), 1))
    for i in range(0, len(flat), step):
        phase = flat[i:i + step] @ x.T
        out[i:i + step] = np.exp(-2j * np.pi * phase) @ m.weights
    return out.reshape(xi.shape[:-1])


@dataclass(frozen=True)
class DecayFit:
    alpha_hat: float
    xi_min: float
    xi_max: float
    annuli: tuple
    maxima: tuple
    residual: float
    intercept: float

    def fitted(self) -> np.ndarray:
        return 2.0 ** (self.intercept - self.alpha_hat * np.log2(self.annuli))


def annulus_maxima(m: DiscreteMeasure, spec: GridSpec, xi_min: float, xi_max: float):
    """Max of ``|m_hat|`` over each dyadic annulus ``2**a <= |xi| < 2**(a+1)``."""
    if m.n != spec.n or m.u != spec.u:
        raise ValueError("measure and grid lattices differ")
    H = np.abs(sfft.rfftn(atom_grid(spec, m.atoms, m.weights)))
    R = spec.radial_frequency(real=True)
    lowers, maxima = [], []
    a = int(np.floor(np.log2(xi_min) + 1e-12))
    while 2.0 ** (a + 1) <= xi_max * (1 + 1e-12):
        sel = (R >= 2.0 ** a) & (R < 2.0 ** (a + 1))
        lowers.append(2.0 ** a)
        maxima.append(float(np.broadcast_to(H, R.shape)[sel].max()) if sel.any() else 0.0)
        a += 1
    return lowers, maxima


def estimate_decay(m: DiscreteMeasure, spec: GridSpec,
                   fit_range: Optional[Sequence[float]] = None) -> DecayFit:
    """Least-squares log-log slope of the annulus maxima of ``|m_hat|``.

    The default window is ``[min(1, u/64), u/4]``; above ``u/4`` lattice
    snapping visibly damps the discrete spectrum.
    """
    if fit_range is None:
        fit_range = (min(1.0, spec.u / 64), spec.u / 4)
    lo, hi = float(fit_range[0]), float(fit_range[1])
    lowers, maxima = annulus_maxima(m, spec, lo, hi)
    if len(lowers) < 4:
        raise ValueError(f"fit range [{lo}, {hi}] spans {len(lowers)} dyadic annuli, need 4")
    x = np.log2(lowers)
    y = np.log2(np.maximum(maxima, 1e-300))
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((slope * x + intercept - y) ** 2)))
    return DecayFit(float(-slope), lo, hi, tuple(lowers), tuple(maxima), residual, float(intercept))
