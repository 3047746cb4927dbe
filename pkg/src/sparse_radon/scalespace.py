"""
Frequency partition ``eta_tilde + sum_k eta_k`` and the regularised pieces
``T^k`` of the singular transform, together with the empirical scaling
curves they are meant to satisfy.

The low-pass profile is ``1 - psi(|xi| - 1)`` where ``psi`` is the standard
C-infinity smoothstep (0 below 0, 1 above 1).  With
``eta_hat(xi) = eta_tilde_hat(xi/2) - eta_tilde_hat(xi)`` and
``eta_k_hat(xi) = eta_hat(2**k xi)`` the partial sums telescope:

    eta_tilde_hat + sum_{k_min <= k <= 0} eta_k_hat = eta_tilde_hat(2**(k_min-1) xi),

and the remainder multiplier is one minus the right-hand side.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import GuardError
from .lattice import GridFunction, GridSpec, SpectralFunction, check_measure_grid, transfer
from .measures import DiscreteMeasure, dilate
from .operators import EpsilonSigns


def smoothstep(t):
    """C-infinity transition: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=np.float64)
    out = np.where(t >= 1, 1.0, 0.0)
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    a = np.exp(-1.0 / tm)
    b = np.exp(-1.0 / (1.0 - tm))
    out[mid] = a / (a + b)
    return out


def eta_tilde_hat(r):
    """Radial low-pass profile: 1 on ``|xi| <= 1``, 0 on ``|xi| >= 2``."""
    return 1.0 - smoothstep(np.asarray(r, dtype=np.float64) - 1.0)


def eta_hat(r):
    r = np.asarray(r, dtype=np.float64)
    return eta_tilde_hat(r / 2) - eta_tilde_hat(r)


@dataclass(frozen=True, eq=False)
class RegularizerFamily:
    """The partition on one grid, truncated at ``k_min``."""

    spec: GridSpec
    k_min: int

    def __post_init__(self):
        if self.k_min > -1:
            raise ValueError("k_min must be <= -1")
        if 2.0 ** (-self.k_min) > self.spec.u / 4:
            raise GuardError(f"k_min={self.k_min} needs 2**{-self.k_min} <= u/4 = {self.spec.u / 4}")

    @property
    def ks(self) -> List[int]:
        return list(range(self.k_min, 1))

    @property
    def eta_tilde(self) -> SpectralFunction:
        return SpectralFunction(self.spec, eta_tilde_hat(self.spec.radial_frequency()).astype(complex))

    @property
    def etas(self) -> List[SpectralFunction]:
        R = self.spec.radial_frequency()
        return [SpectralFunction(self.spec, eta_hat(2.0 ** k * R).astype(complex)) for k in self.ks]

    def partition_sum(self, r) -> np.ndarray:
        """``eta_tilde_hat + sum_k eta_k_hat`` summed term by term."""
        r = np.asarray(r, dtype=np.float64)
        total = eta_tilde_hat(r)
        for k in self.ks:
            total = total + eta_hat(2.0 ** k * r)
        return total

    def exact_radius(self) -> float:
        """The partition sum is exactly 1 on ``|xi| <= 2**(1 - k_min)``."""
        return 2.0 ** (1 - self.k_min)

    # multipliers on the real-FFT grid, already composed with the scale-j dilation
    def tilde_multiplier(self, j: int) -> np.ndarray:
        return eta_tilde_hat(2.0 ** j * self.spec.radial_frequency(real=True))

    def piece_multiplier(self, k: int, j: int) -> np.ndarray:
        return eta_hat(2.0 ** (k + j) * self.spec.radial_frequency(real=True))

    def remainder_multiplier(self, j: int) -> np.ndarray:
        return 1.0 - eta_tilde_hat(2.0 ** (j + self.k_min - 1) * self.spec.radial_frequency(real=True))


def build_regularizers(spec: GridSpec, k_min: int) -> RegularizerFamily:
    return RegularizerFamily(spec, int(k_min))


# -- pieces of the singular transform ----------------------------------------

def scale_transfers(mu: DiscreteMeasure, eps: EpsilonSigns, spec: GridSpec,
                    strict: bool = True) -> dict:
    """``{j: eps_j * mu_j_hat}`` on the real-FFT grid for every active scale."""
    check_measure_grid(spec, mu)
    out = {}
    for j, e in eps.items():
        if e == 0:
            continue
        mj = dilate(mu, j, spec, strict=strict)
        out[j] = e * transfer(spec, mj.atoms, mj.weights)
    return out


def piece_multiplier(mu, eps, fam: RegularizerFamily, k, strict: bool = True,
                     transfers: Optional[dict] = None) -> np.ndarray:
    """Real-FFT multiplier of ``T^k`` (``k`` an integer, ``"tilde"`` or ``"remainder"``).

    ``transfers`` may carry precomputed ``scale_transfers`` output.
    """
    if k == "tilde":
        win = fam.tilde_multiplier
    elif k == "remainder":
        win = fam.remainder_multiplier
    else:
        k = int(k)
        if not fam.k_min <= k <= 0:
            raise ValueError(f"k={k} outside [{fam.k_min}, 0]")
        win = lambda j: fam.piece_multiplier(k, j)
    if transfers is None:
        transfers = scale_transfers(mu, eps, fam.spec, strict)
    H = None
    for j in sorted(transfers):
        term = transfers[j] * win(j)
        H = term if H is None else H + term
    if H is None:
        N = fam.spec.N
        return np.zeros(fam.spec.shape[:-1] + (N // 2 + 1,), dtype=complex)
    return H


def _apply(f: GridFunction, H: np.ndarray) -> GridFunction:
    return f.with_samples(sfft.irfftn(sfft.rfftn(f.samples) * H, s=f.spec.shape))


def piece_operator_Tk(f: GridFunction, mu, eps, fam, k, strict: bool = True) -> GridFunction:
    """``T^k f = sum_j eps_j (mu * eta_k)_j * f``."""
    return _apply(f, piece_multiplier(mu, eps, fam, k, strict))


def tilde_operator(f, mu, eps, fam, strict: bool = True) -> GridFunction:
    return _apply(f, piece_multiplier(mu, eps, fam, "tilde", strict))


def remainder_operator(f, mu, eps, fam, strict: bool = True) -> GridFunction:
    return _apply(f, piece_multiplier(mu, eps, fam, "remainder", strict))


# -- L^2 decay -----------------------------------------------------------------

@dataclass(frozen=True)
class PowerResult:
    norm: float
    iterations: int
    converged: bool
    exact: float


def power_norm(H: np.ndarray, spec: GridSpec, tol: float = 1e-3, max_iter: int = 500,
               seed: int = 0) -> PowerResult:
    """L^2 operator norm of a real-FFT multiplier by power iteration on ``T T*``.

    The start vector is a seeded Gaussian sample minus its mean (the constant
    mode is in the kernel when the measure has mean zero).  Because ``T T*``
    is diagonal in frequency, the iterate is tracked through its spectral
    energy ``|v_hat|**2``, which gives the same Rayleigh quotients as the
    full complex iteration.  ``exact`` is the multiplier supremum, i.e. the
    true norm, reported as a cross-check.
    """
    W = np.abs(H) ** 2
    exact = float(np.sqrt(W.max())) if W.size else 0.0
    if exact == 0:
        return PowerResult(0.0, 0, True, 0.0)
    v0 = np.random.default_rng(seed).standard_normal(spec.shape)
    v = sfft.rfftn(v0 - v0.mean())
    # half-spectrum weights so that sums equal full-spectrum sums
    energy = 2.0 * (v.real ** 2 + v.imag ** 2)
    energy[..., 0] *= 0.5
    if spec.N % 2 == 0:
        energy[..., -1] *= 0.5
    energy /= energy.sum()
    est = 0.0
    for it in range(1, max_iter + 1):
        new = float(np.sqrt(max(np.dot(energy.ravel(), W.ravel()), 0.0)))
        energy *= W * W
        total = energy.sum()
        if total == 0 or new == 0:
            return PowerResult(0.0, it, True, exact)
        energy /= total
        if it > 1 and abs(new - est) <= tol * new:
            return PowerResult(new, it, True, exact)
        est = new
    raise RuntimeError(f"power iteration did not converge in {max_iter} steps")


@dataclass(frozen=True)
class CurveRow:
    k: int
    value: float
    fit_residual: float


@dataclass(frozen=True)
class ScalingCurve:
    name: str
    rows: tuple
    slope: float
    intercept: float
    extras: dict

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "value", "fit_residual"])
        for r in self.rows:
            w.writerow([r.k, f"{r.value:.17g}", f"{r.fit_residual:.17g}"])
        return buf.getvalue()


def _log_fit(ks, values):
    ks = np.asarray(ks, dtype=np.float64)
    y = np.log2(np.maximum(values, 1e-300))
    if len(ks) < 2 or not np.all(np.asarray(values) > 0):
        return 0.0, 0.0, np.zeros(len(ks))
    slope, intercept = np.polyfit(ks, y, 1)
    return float(slope), float(intercept), y - (slope * ks + intercept)


def l2_decay_curve(mu, eps, fam: RegularizerFamily, k_range: Optional[Iterable[int]] = None,
                   tol: float = 1e-3, max_iter: int = 500, seed: int = 0,
                   strict: bool = True) -> ScalingCurve:
    """``||T^k||_{2->2}`` per ``k`` and the fitted log2-slope in ``k``.

    For a measure with Fourier decay of order ``alpha`` the slope should be
    close to ``alpha``.
    """
    ks = sorted(fam.ks if k_range is None else k_range)
    norms, exact, iters = [], [], []
    tr = scale_transfers(mu, eps, fam.spec, strict)
    for k in ks:
        res = power_norm(piece_multiplier(mu, eps, fam, k, transfers=tr), fam.spec, tol,
                         max_iter, seed)
        norms.append(res.norm)
        exact.append(res.exact)
        iters.append(res.iterations)
    slope, intercept, resid = _log_fit(ks, norms)
    rows = tuple(CurveRow(k, v, float(r)) for k, v, r in zip(ks, norms, resid))
    return ScalingCurve("l2_decay", rows, slope, intercept,
                        {"exact": exact, "iterations": iters})


# -- weak type (1,1) growth ------------------------------------------------------

def lambda_grid(top: float, octaves: int = 20, density: int = 4) -> np.ndarray:
    """Dyadic grid ``top * 2**(-i/density)`` for ``0 <= i <= octaves*density``."""
    if top <= 0:
        return np.zeros(0)
    i = np.arange(octaves * density + 1)
    return top * 2.0 ** (-i / density)


def weak_quasinorm(g: GridFunction, lambdas: np.ndarray) -> float:
    """``max_lambda lambda |{|g| > lambda}|`` over the given grid."""
    a = np.sort(np.abs(g.samples).ravel())
    counts = a.size - np.searchsorted(a, lambdas, side="right")
    return float(np.max(lambdas * counts, initial=0.0) * g.spec.cell_volume)


def weak_l1_growth_curve(mu, eps, fam: RegularizerFamily, battery: Sequence[GridFunction],
                         k_range: Optional[Iterable[int]] = None, octaves: int = 20,
                         density: int = 4, strict: bool = True) -> ScalingCurve:
    """Per ``k``, the sup over the battery of ``||T^k f||_{1,inf} / ||f||_1``.

    The extras hold the least-squares affine fit ``a + b (1 - k)`` and the
    largest ratio of a measured value to that fit.
    """
    ks = sorted(fam.ks if k_range is None else k_range)
    F = [(sfft.rfftn(f.samples), f.norm(1)) for f in battery if f.norm(1) > 0]
    vals = []
    tr = scale_transfers(mu, eps, fam.spec, strict)
    for k in ks:
        H = piece_multiplier(mu, eps, fam, k, transfers=tr)
        best = 0.0
        for Fh, l1 in F:
            g = GridFunction(fam.spec, sfft.irfftn(Fh * H, s=fam.spec.shape))
            top = float(np.abs(g.samples).max())
            best = max(best, weak_quasinorm(g, lambda_grid(top, octaves, density)) / l1)
        vals.append(best)
    x = 1.0 - np.asarray(ks, dtype=np.float64)
    y = np.asarray(vals)
    if len(ks) >= 2 and np.any(y > 0):
        b, a = np.polyfit(x, y, 1)
    else:
        a, b = float(y.mean()) if len(y) else 0.0, 0.0
    fit = a + b * x
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(fit > 0, y / fit, np.where(y > 0, np.inf, 1.0))
    rows = tuple(CurveRow(k, float(v), float(r - 1.0)) for k, v, r in zip(ks, vals, rel))
    return ScalingCurve("weak_l1_growth", rows, float(b), float(a),
                        {"envelope_ratio": float(rel.max()) if len(rel) else 0.0,
                         "c_over_1_minus_k": float(np.max(y / x)) if len(y) else 0.0})


def affine_envelope_ok(curve: ScalingCurve, slack: float = 0.2) -> bool:
    return curve.extras["envelope_ratio"] <= 1.0 + slack


# -- weak L log L ----------------------------------------------------------------

@dataclass(frozen=True)
class LlogLResult:
    lambdas: tuple
    ratios: tuple
    r: float

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=0.0)


def weak_llogl_check(Tf: GridFunction, f: GridFunction, lambdas: Sequence[float],
                     r: float) -> LlogLResult:
    """``|{|Tf| > lambda}| / int (|f|/lambda) log(e + |f|/lambda)**r`` for each ``lambda``."""
    if r <= 4:
        raise ValueError("the logarithmic power must exceed 4")
    a = np.abs(f.samples)
    t = np.sort(np.abs(Tf.samples).ravel())
    cv = f.spec.cell_volume
    out = []
    for lam in lambdas:
        lam = float(lam)
        level = (t.size - np.searchsorted(t, lam, side="right")) * cv
        x = a / lam
        denom = float(np.sum(x * np.log(np.e + x) ** r) * cv)
        if level == 0:
            out.append(0.0)
        else:
            out.append(level / denom if denom > 0 else float("inf"))
    return LlogLResult(tuple(float(l) for l in lambdas), tuple(out), float(r))
