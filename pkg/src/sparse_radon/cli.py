"""
Command-line experiment runner.

    sparse-radon run --config exp.cfg [--out DIR] [--seed N] [--threads N]
    sparse-radon reverify CERTIFICATE INPUTS
    sparse-radon list-experiments

Configs are flat ``section.key = value`` text with ``#`` comments.  Exit
codes: 0 success, 2 invalid config, 3 guard violation, 4 failed check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy
from scipy import fft as sfft

from . import __version__
from .battery import constants_battery, l1_battery, nested_spikes_1d, standard_battery, unit_square
from .decomp import root_cube
from .errors import GridError, GuardError
from .lattice import GridSpec, make_grid
from .measures import (DiscreteMeasure, circle_measure, estimate_decay, interval_bump_measure,
                       modulate_mean_zero, padding_ceiling, resolution_floor)
from .operators import EpsilonSigns, ExponentPair, improving_norm_estimate, radon_T
from .scalespace import (build_regularizers, l2_decay_curve, piece_operator_Tk, remainder_operator,
                         tilde_operator, weak_l1_growth_curve, weak_llogl_check)
from .sparse import certify_bound, inputs_to_dict, reverify_certificate

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_CHECK = 0, 2, 3, 4

EXPERIMENTS = {
    "decay": "Fourier decay exponent of the base measure (annulus maxima and log-log fit)",
    "improving": "lower bound for the L^p -> L^q norm of convolution with the base measure",
    "sparse-certify": "sparse collections and bound certificates over a test battery",
    "scalespace": "L^2 decay and weak (1,1) growth of the regularised pieces, telescoping check",
    "llogl": "weak L log L ratio table for a normalised square",
}

DENSITIES: Dict[str, Callable] = {
    "x1": lambda x: x[:, 0],
    "x2": lambda x: x[:, -1],
    "one": lambda x: np.ones(len(x)),
    "cos": lambda x: np.cos(2 * np.pi * x[:, 0]),
}


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    pass


# key -> (parser, default); a default of ``None`` means optional
_SCHEMA: Dict[str, tuple] = {
    "experiment": (str, ...),
    "seed": (int, 0),
    "kind": (str, "singular"),
    "grid.n": (int, ...),
    "grid.K": (int, ...),
    "grid.s": (int, ...),
    "measure.kind": (str, "circle"),
    "measure.density": (str, "x1"),
    "measure.file": (str, None),
    "measure.atoms_per_unit": (int, 16),
    "exponents.p": (float, 1.5),
    "exponents.q": (float, 3.0),
    "epsilon.N1": (int, None),
    "epsilon.N2": (int, None),
    "epsilon.pattern": (str, "alternating"),
    "epsilon.values": (str, None),
    "epsilon.seed": (int, None),
    "battery.kind": (str, "standard"),
    "battery.count": (int, 10),
    "battery.seed": (int, None),
    "form.weight_exponent": (float, 4.0),
    "output.dir": (str, None),
    "decay.fit_min": (float, None),
    "decay.fit_max": (float, None),
    "decay.alpha_min": (float, None),
    "decay.alpha_max": (float, None),
    "decay.residual_max": (float, None),
    "improving.trials": (int, 30),
    "scalespace.k_min": (int, -3),
    "scalespace.slope_tolerance": (float, 0.3),
    "scalespace.envelope_slack": (float, 0.2),
    "scalespace.lambda_density": (int, 4),
    "scalespace.telescoping_tol": (float, 1e-8),
    "llogl.r": (float, 5.0),
    "llogl.square_side": (float, 0.125),
    "llogl.lambda_min_exp": (int, -10),
    "llogl.lambda_max_exp": (int, 10),
}


def parse_config_text(text: str) -> Dict[str, object]:
    """Parse flat ``key = value`` lines against the schema; raises ``ConfigError``."""
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    cfg: Dict[str, object] = {}
    for key, (typ, default) in _SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = typ(raw[key])
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw[key]!r} as {typ.__name__}") from None
        elif default is ...:
            raise ConfigError(f"missing required key {key!r}")
        else:
            cfg[key] = default
    return cfg


@dataclass
class Experiment:
    """A validated config with every derived object built (no output written yet)."""

    cfg: Dict[str, object]
    spec: GridSpec
    sigma: DiscreteMeasure
    mu: DiscreteMeasure
    exps: ExponentPair
    eps: Optional[EpsilonSigns] = None
    extras: dict = field(default_factory=dict)


def _load_measure(cfg, spec: GridSpec) -> DiscreteMeasure:
    kind = cfg["measure.kind"]
    if kind == "circle":
        return circle_measure(spec, M=cfg["measure.atoms_per_unit"] * spec.u)
    if kind == "bump":
        return interval_bump_measure(spec)
    if kind == "custom-file":
        if not cfg["measure.file"]:
            raise ConfigError("measure.kind = custom-file needs measure.file")
        try:
            with open(cfg["measure.file"], encoding="utf-8") as fh:
                m = DiscreteMeasure.from_json(fh.read())
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"measure.file: {exc}") from None
        if m.n != spec.n or m.u != spec.u:
            raise ConfigError("measure.file lattice does not match the grid")
        return m
    raise ConfigError(f"measure.kind must be circle, bump or custom-file, got {kind!r}")


def _epsilon(cfg, N1: int, N2: int) -> EpsilonSigns:
    pat = cfg["epsilon.pattern"]
    if pat == "alternating":
        return EpsilonSigns.alternating(N1, N2)
    if pat == "constant":
        return EpsilonSigns.constant(N1, N2)
    if pat == "random":
        seed = cfg["epsilon.seed"] if cfg["epsilon.seed"] is not None else cfg["seed"]
        return EpsilonSigns.random(N1, N2, seed)
    if pat == "custom":
        if not cfg["epsilon.values"]:
            raise ConfigError("epsilon.pattern = custom needs epsilon.values")
        try:
            vals = tuple(float(v) for v in cfg["epsilon.values"].split(","))
        except ValueError:
            raise ConfigError("epsilon.values must be comma-separated numbers") from None
        try:
            return EpsilonSigns(N1, N2, vals)
        except ValueError as exc:
            raise ConfigError(f"epsilon.values: {exc}") from None
    raise ConfigError(f"epsilon.pattern must be alternating, constant, random or custom, got {pat!r}")


def prepare(cfg: Dict[str, object]) -> Experiment:
    """Validate everything; raises ``ConfigError`` or ``GuardError``."""
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}")
    if cfg["kind"] not in ("singular", "maximal"):
        raise ConfigError("kind must be singular or maximal")
    p, q = cfg["exponents.p"], cfg["exponents.q"]
    if not 1 < p < q:
        raise ConfigError(f"need 1 < p < q, got p={p}, q={q}")
    if cfg["battery.kind"] not in ("standard", "constants", "nested"):
        raise ConfigError("battery.kind must be standard, constants or nested")
    if cfg["battery.count"] < 1:
        raise ConfigError("battery.count must be positive")
    if cfg["measure.density"] not in DENSITIES:
        raise ConfigError(f"measure.density must be one of {sorted(DENSITIES)}")
    if cfg["llogl.r"] <= 4:
        raise ConfigError("llogl.r must exceed 4")
    if cfg["grid.n"] not in (1, 2):
        raise ConfigError("grid.n must be 1 or 2")
    try:
        spec = make_grid(cfg["grid.n"], cfg["grid.K"], cfg["grid.s"])
    except GridError as exc:
        raise ConfigError(str(exc)) from None
    sigma = _load_measure(cfg, spec)
    if not sigma.positive:
        raise ConfigError("the base measure must be positive")
    mu = modulate_mean_zero(sigma, DENSITIES[cfg["measure.density"]])
    exp = Experiment(cfg, spec, sigma, mu, ExponentPair(p, q))
    name = cfg["experiment"]
    if name in ("sparse-certify", "scalespace", "llogl"):
        N2 = cfg["epsilon.N2"] if cfg["epsilon.N2"] is not None else padding_ceiling(sigma, spec)
        N1 = cfg["epsilon.N1"] if cfg["epsilon.N1"] is not None else resolution_floor(sigma)
        if N1 > N2:
            raise ConfigError(f"epsilon.N1={N1} exceeds epsilon.N2={N2}")
        if N1 < resolution_floor(sigma):
            raise GuardError(f"epsilon.N1={N1} below the resolution floor {resolution_floor(sigma)}")
        if N2 > padding_ceiling(sigma, spec):
            raise GuardError(f"epsilon.N2={N2} above the padding ceiling {padding_ceiling(sigma, spec)}")
        exp.eps = _epsilon(cfg, N1, N2)
    if name == "sparse-certify":
        try:
            exp.extras["Q0"] = root_cube(spec, exp.eps.N2)
        except ValueError as exc:
            raise GuardError(str(exc)) from None
        if cfg["battery.kind"] == "nested" and spec.n != 1:
            raise ConfigError("the nested battery is one-dimensional")
    if name == "scalespace":
        exp.extras["family"] = build_regularizers(spec, cfg["scalespace.k_min"])
    if name == "decay":
        lo, hi = cfg["decay.fit_min"], cfg["decay.fit_max"]
        if (lo is None) != (hi is None):
            raise ConfigError("set both decay.fit_min and decay.fit_max or neither")
    return exp


# -- output helpers ------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(rows, header=("k", "value", "fit_residual")) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.17g}"
                              for v in r))
    return "\n".join(lines) + "\n"


class Run:
    """Collects outputs and checks; the first failed check is reported."""

    def __init__(self):
        self.files: Dict[str, str] = {}
        self.checks: List[dict] = []
        self.summary: dict = {}

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append({"name": name, "ok": bool(ok), "detail": detail})

    def first_failure(self) -> Optional[dict]:
        return next((c for c in self.checks if not c["ok"]), None)


# -- experiments -----------------------------------------------------------------------

def _exp_decay(exp: Experiment, run: Run) -> None:
    cfg = exp.cfg
    rng = None if cfg["decay.fit_min"] is None else (cfg["decay.fit_min"], cfg["decay.fit_max"])
    fit = estimate_decay(exp.sigma, exp.spec, rng)
    fitted = fit.fitted()
    rows = [(int(np.log2(a)), m, float(np.log2(m) - np.log2(f)) if m > 0 else 0.0)
            for a, m, f in zip(fit.annuli, fit.maxima, fitted)]
    run.files["decay.csv"] = _csv(rows)
    run.summary.update(alpha_hat=fit.alpha_hat, residual=fit.residual,
                       fit_range=[fit.xi_min, fit.xi_max])
    if cfg["decay.alpha_min"] is not None:
        run.check("alpha_hat >= alpha_min", fit.alpha_hat >= cfg["decay.alpha_min"],
                  f"alpha_hat={fit.alpha_hat:.6g}")
    if cfg["decay.alpha_max"] is not None:
        run.check("alpha_hat <= alpha_max", fit.alpha_hat <= cfg["decay.alpha_max"],
                  f"alpha_hat={fit.alpha_hat:.6g}")
    if cfg["decay.residual_max"] is not None:
        run.check("residual <= residual_max", fit.residual <= cfg["decay.residual_max"],
                  f"residual={fit.residual:.6g}")


def _exp_improving(exp: Experiment, run: Run) -> None:
    p, q = exp.exps.p, exp.exps.q
    est = improving_norm_estimate(exp.sigma, exp.spec, p, q, trials=exp.cfg["improving.trials"],
                                  seed=exp.cfg["seed"])
    run.files["improving.csv"] = _csv([(0, est, 0.0)])
    run.summary.update(norm_lower_bound=est, p=p, q=q)
    run.check("estimate finite", bool(np.isfinite(est)), f"estimate={est!r}")


def _battery(exp: Experiment):
    cfg, spec, Q0 = exp.cfg, exp.spec, exp.extras["Q0"]
    seed = cfg["battery.seed"] if cfg["battery.seed"] is not None else cfg["seed"]
    if cfg["battery.kind"] == "constants":
        return constants_battery(spec, Q0, seed, cfg["battery.count"])
    if cfg["battery.kind"] == "nested":
        return [nested_spikes_1d(spec, Q0, seed + i) for i in range(cfg["battery.count"])]
    return standard_battery(spec, Q0, seed, cfg["battery.count"])


def _exp_sparse(exp: Experiment, run: Run) -> None:
    cfg, Q0 = exp.cfg, exp.extras["Q0"]
    kind = cfg["kind"]
    w = cfg["form.weight_exponent"]
    alpha = estimate_decay(exp.sigma, exp.spec).alpha_hat if exp.spec.n == 2 else None
    rows, d_trace = [], []
    for i, pair in enumerate(_battery(exp)):
        f2 = pair.f2 if kind == "singular" else abs(pair.f2)
        cert = certify_bound(pair.f1, f2, exp.mu, exp.sigma, exp.eps, exp.exps, Q0, kind,
                             weight_exponent=w, alpha_hat=alpha)
        inputs = inputs_to_dict(pair.f1, f2, exp.mu, exp.sigma, exp.eps, exp.exps, Q0, kind, w)
        run.files[f"certificate_{i:03d}.json"] = cert.to_json() + "\n"
        run.files[f"inputs_{i:03d}.json"] = _dump(inputs)
        rows.append((i, cert.ratio, 0.0))
        d_trace.append({"pair": pair.label, "D": [t.D for t in cert.traces if t.depth == 0][0],
                        "depth": cert.collection.max_depth(), "cubes": len(cert.collection)})
        run.check(f"pair {i} sparsity", cert.sparsity.ok, str(cert.sparsity.violation))
        run.check(f"pair {i} union", cert.union_ok)
        run.check(f"pair {i} form_plus >= form_plain", cert.form >= cert.form_plain * (1 - 1e-12),
                  f"{cert.form!r} vs {cert.form_plain!r}")
        run.check(f"pair {i} ratio finite", bool(np.isfinite(cert.ratio)))
    run.files["ratios.csv"] = _csv(rows)
    ratios = [r[1] for r in rows]
    run.summary.update(C_max=max(ratios), alpha_hat=alpha, D_trace=d_trace)


def _exp_scalespace(exp: Experiment, run: Run) -> None:
    cfg, fam, spec = exp.cfg, exp.extras["family"], exp.spec
    alpha = estimate_decay(exp.sigma, spec).alpha_hat
    l2 = l2_decay_curve(exp.mu, exp.eps, fam, seed=cfg["seed"])
    run.files["l2_decay.csv"] = l2.to_csv()
    battery = l1_battery(spec, cfg["seed"])
    wk = weak_l1_growth_curve(exp.mu, exp.eps, fam, battery, density=cfg["scalespace.lambda_density"])
    run.files["weak_l1_growth.csv"] = wk.to_csv()
    f = battery[2]
    total = tilde_operator(f, exp.mu, exp.eps, fam) + remainder_operator(f, exp.mu, exp.eps, fam)
    for k in fam.ks:
        total = total + piece_operator_Tk(f, exp.mu, exp.eps, fam, k)
    tele = float(np.abs(total.samples - radon_T(f, exp.mu, exp.eps).samples).max())
    run.summary.update(alpha_hat=alpha, l2_slope=l2.slope, weak_envelope_ratio=wk.extras["envelope_ratio"],
                       telescoping_error=tele, l2_exact=l2.extras["exact"])
    tol = cfg["scalespace.slope_tolerance"]
    run.check("l2 slope within tolerance of alpha_hat",
              alpha > 0 and abs(l2.slope - alpha) <= tol * alpha,
              f"slope={l2.slope:.6g}, alpha_hat={alpha:.6g}")
    run.check("weak (1,1) affine envelope", wk.extras["envelope_ratio"] <= 1 + cfg["scalespace.envelope_slack"],
              f"envelope ratio={wk.extras['envelope_ratio']:.6g}")
    run.check("telescoping identity", tele <= cfg["scalespace.telescoping_tol"], f"max error={tele:.3g}")


def _exp_llogl(exp: Experiment, run: Run) -> None:
    cfg = exp.cfg
    f = unit_square(exp.spec, cfg["llogl.square_side"])
    Tf = radon_T(f, exp.mu, exp.eps)
    exps_ = list(range(cfg["llogl.lambda_min_exp"], cfg["llogl.lambda_max_exp"] + 1))
    res = weak_llogl_check(Tf, f, [2.0 ** e for e in exps_], cfg["llogl.r"])
    run.files["llogl.csv"] = _csv([(e, r, 0.0) for e, r in zip(exps_, res.ratios)])
    run.summary.update(max_ratio=res.max_ratio, r=res.r)
    run.check("ratios finite", all(np.isfinite(res.ratios)))


RUNNERS = {"decay": _exp_decay, "improving": _exp_improving, "sparse-certify": _exp_sparse,
           "scalespace": _exp_scalespace, "llogl": _exp_llogl}


def _versions() -> dict:
    return {"package": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def execute(cfg_text: str, out_dir: Optional[str], seed: Optional[int] = None,
            threads: int = 1, stderr=sys.stderr) -> int:
    try:
        cfg = parse_config_text(cfg_text)
        if seed is not None:
            cfg["seed"] = seed
        out_dir = out_dir or cfg["output.dir"]
        if not out_dir:
            raise ConfigError("no output directory (use --out or output.dir)")
        exp = prepare(cfg)
    except ConfigError as exc:
        print(f"config invalid: {exc}", file=stderr)
        return EXIT_CONFIG
    except GuardError as exc:
        print(f"guard violation: {exc}", file=stderr)
        return EXIT_GUARD
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    run = Run()
    t0 = time.perf_counter()
    try:
        with sfft.set_workers(workers):
            RUNNERS[cfg["experiment"]](exp, run)
    except GuardError as exc:
        print(f"guard violation: {exc}", file=stderr)
        return EXIT_GUARD
    wall = time.perf_counter() - t0
    os.makedirs(out_dir, exist_ok=True)
    hashes = {}
    for name in sorted(run.files):
        write_atomic(os.path.join(out_dir, name), run.files[name])
        hashes[name] = hashlib.sha256(run.files[name].encode("utf-8")).hexdigest()
    manifest = {
        "experiment": cfg["experiment"],
        "config": {k: cfg[k] for k in sorted(cfg)},
        "config_sha256": hashlib.sha256(cfg_text.encode("utf-8")).hexdigest(),
        "seed": cfg["seed"],
        "generator": "numpy PCG64 via numpy.random.default_rng / SeedSequence",
        "versions": _versions(),
        "summary": run.summary,
        "checks": run.checks,
        "outputs": hashes,
    }
    write_atomic(os.path.join(out_dir, "manifest.json"), _dump(manifest))
    write_atomic(os.path.join(out_dir, "timing.json"), _dump({"wall_seconds": wall}))
    fail = run.first_failure()
    if fail:
        print(f"check failed: {fail['name']} {fail['detail']}".rstrip(), file=stderr)
        return EXIT_CHECK
    return EXIT_OK


def reverify(cert_path: str, inputs_path: str, stderr=sys.stderr) -> int:
    try:
        with open(cert_path, encoding="utf-8") as fh:
            cert = json.load(fh)
        with open(inputs_path, encoding="utf-8") as fh:
            inputs = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read inputs: {exc}", file=stderr)
        return EXIT_CONFIG
    try:
        problems = reverify_certificate(cert, inputs)
    except (KeyError, ValueError, TypeError) as exc:
        problems = [f"malformed certificate or inputs: {exc}"]
    if problems:
        for p in problems:
            print(f"mismatch: {p}", file=stderr)
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparse-radon", description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=1, help="FFT workers (0 = all cores)")
    v = sub.add_parser("reverify", help="recompute a certificate from its serialized inputs")
    v.add_argument("certificate")
    v.add_argument("inputs")
    sub.add_parser("list-experiments", help="print the available experiments")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in sorted(EXPERIMENTS):
            print(f"{name}: {EXPERIMENTS[name]}")
        return EXIT_OK
    if args.command == "reverify":
        return reverify(args.certificate, args.inputs)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(text, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
