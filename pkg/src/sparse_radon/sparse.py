"""
Constructive sparse bounds: the exceptional-set recursion that produces a
sparse collection, the sparse form, and self-contained certificates.

Each recursion node works on a local periodic window of side ``16 l(Q)``
with its cube at corner ``8 l(Q)``, so that ``6Q`` and every convolution and
maximal-function footprint fit without wraparound.  Emitted cubes and
witness sets are translated back to the global grid.
"""

from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .decomp import (DyadicCube, cz_decompose, exceptional_profile, local_p_average,
                     plus_average, rle_decode, rle_encode, select_D, whitney)
from .lattice import GridFunction, GridSpec, pairing
from .measures import DiscreteMeasure
from .operators import EpsilonSigns, ExponentPair, maximal_T_star, radon_T

KINDS = ("singular", "maximal")


@dataclass(frozen=True, eq=False)
class SparseEntry:
    """A cube with its witness set, given as sorted flat cell indices of the global grid."""

    cube: DyadicCube
    F: np.ndarray
    depth: int

    def F_mask(self) -> np.ndarray:
        m = np.zeros(self.cube.spec.size, dtype=bool)
        m[self.F] = True
        return m.reshape(self.cube.spec.shape)


@dataclass(frozen=True, eq=False)
class SparseCollection:
    spec: GridSpec
    entries: Tuple[SparseEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def cubes(self) -> List[DyadicCube]:
        return [e.cube for e in self.entries]

    def max_depth(self) -> int:
        return max((e.depth for e in self.entries), default=-1)


@dataclass
class NodeTrace:
    depth: int
    level: int
    corner: Tuple[int, ...]
    D: float
    E_cells: int
    whitney_cubes: int
    boundary_cubes: int
    dropped_outside: int
    null_children: int
    wreg_ok: bool
    union_ok: bool
    overlap_3q: int
    adjacency: Dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["corner"] = list(self.corner)
        d["adjacency"] = {str(k): v for k, v in sorted(self.adjacency.items())}
        return d


@dataclass
class SparsityReport:
    ok: bool
    entries: int
    violation: Optional[str] = None


def _window(a: np.ndarray, origin: Tuple[int, ...], W: int) -> np.ndarray:
    N = a.shape[0]
    return a[np.ix_(*[(o + np.arange(W)) % N for o in origin])]


def _check_inputs(f1, f2, Q0, eps):
    if f1.spec != f2.spec or Q0.spec != f1.spec:
        raise ValueError("inputs live on different grids")
    if eps.N2 != Q0.level:
        raise ValueError(f"top scale N2={eps.N2} must equal the level of Q0 ({Q0.level})")
    if np.any(f1.samples[~Q0.mask()] != 0):
        raise ValueError("f1 must be supported in Q0")
    if np.any(f2.samples[~Q0.mask(3)] != 0):
        raise ValueError("f2 must be supported in 3Q0")


def build_sparse(f1: GridFunction, f2: GridFunction, mu: DiscreteMeasure, sigma: DiscreteMeasure,
                 eps: EpsilonSigns, exps: ExponentPair, Q0: DyadicCube, kind: str = "singular",
                 j_min: Optional[int] = None):
    """Run the exceptional-set recursion from ``Q0``.

    Returns ``(collection, traces, root_data)`` where ``traces`` has one
    ``NodeTrace`` per visited node in visiting order and ``root_data`` holds
    the root exceptional set and Whitney cover.  The construction depends on
    ``f1``, ``f2``, ``sigma`` and the scale range; ``mu`` and ``kind`` only
    matter for the pairing.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    _check_inputs(f1, f2, Q0, eps)
    gspec = f1.spec
    entries: List[SparseEntry] = []
    traces: List[NodeTrace] = []
    root: dict = {}

    def node(g1: GridFunction, g2: GridFunction, Q: DyadicCube, origin, scales, depth):
        spec = g1.spec
        prof = exceptional_profile(g1, g2, sigma, exps, Q, j_min=j_min)
        D, E = select_D(prof)
        cover = whitney(E, spec)
        qbox = Q.box()
        F_local = ~E[qbox.slices]
        gcorner = tuple((o + c) % gspec.N for o, c in zip(origin, Q.corner))
        gcube = DyadicCube(gspec, Q.level, gcorner)
        idx = np.nonzero(F_local)
        gidx = tuple(gcorner[d] + idx[d] for d in range(spec.n))
        F_flat = np.sort(np.ravel_multi_index(gidx, gspec.shape)) if len(idx[0]) else \
            np.zeros(0, dtype=np.int64)
        entries.append(SparseEntry(gcube, F_flat, depth))
        dropped = null = 0
        children = []
        for cube in cover.cubes:
            if not Q.contains(cube):
                dropped += 1
                continue
            sub = scales.truncated(cube.level)
            if sub is None:
                null += 1
                continue
            children.append((cube, sub))
        traces.append(NodeTrace(
            depth=depth, level=Q.level, corner=gcorner, D=float(D), E_cells=int(E.sum()),
            whitney_cubes=len(cover), boundary_cubes=int(cover.boundary.sum()),
            dropped_outside=dropped, null_children=null, wreg_ok=cover.wreg_ok(),
            union_ok=bool(np.array_equal(cover.union(), E)) if len(cover) else not E.any(),
            overlap_3q=cover.overlap_3q(), adjacency=cover.adjacency()))
        if depth == 0:
            root.update(E=E, cover=cover, D=D)
        for cube, sub in children:
            c = cube.side_cells
            W = 16 * c
            if W > spec.N:
                raise ValueError("child window exceeds the parent grid")
            lo = tuple(x - 8 * c for x in cube.corner)
            h1 = _window(np.where(cube.mask(), g1.samples, 0.0), lo, W)
            h2 = _window(np.where(cube.mask(3), g2.samples, 0.0), lo, W)
            cspec = GridSpec(spec.n, int(np.log2(W)), spec.s)
            cQ = DyadicCube(cspec, cube.level, (8 * c,) * spec.n)
            corigin = tuple((o + x) % gspec.N for o, x in zip(origin, lo))
            node(GridFunction(cspec, h1), GridFunction(cspec, h2), cQ, corigin, sub, depth + 1)

    node(f1, f2, Q0, (0,) * gspec.n, eps, 0)
    order = sorted(range(len(entries)),
                   key=lambda i: (entries[i].depth, entries[i].cube.corner, -entries[i].cube.level))
    coll = SparseCollection(gspec, tuple(entries[i] for i in order))
    return coll, traces, root


def verify_sparsity(c: SparseCollection) -> SparsityReport:
    """``F_Q`` inside ``Q``, pairwise disjoint, and ``2|F_Q| >= |Q|`` (cell counts)."""
    owner = np.full(c.spec.size, -1, dtype=np.int64)
    for i, e in enumerate(c.entries):
        F = np.asarray(e.F, dtype=np.int64)
        if F.size and (F.min() < 0 or F.max() >= c.spec.size):
            return SparsityReport(False, len(c), f"entry {i}: witness index out of range")
        if len(np.unique(F)) != len(F):
            return SparsityReport(False, len(c), f"entry {i}: repeated witness cells")
        qmask = e.cube.mask().ravel()
        if not np.all(qmask[F]):
            return SparsityReport(False, len(c), f"entry {i}: F_Q not contained in Q")
        if 2 * len(F) < e.cube.box().ncells:
            return SparsityReport(False, len(c),
                                  f"entry {i}: |F_Q| = {len(F)} cells < half of {e.cube.box().ncells}")
        taken = owner[F]
        if np.any(taken >= 0):
            j = int(taken[taken >= 0][0])
            return SparsityReport(False, len(c), f"entries {j} and {i}: witness sets overlap")
        owner[F] = i
    return SparsityReport(True, len(c))


def cube_averages(c: SparseCollection, f1: GridFunction, f2: GridFunction, exps: ExponentPair,
                  weight_exponent: float = 4.0, plain: bool = False) -> np.ndarray:
    """Per-cube ``(<f1>_{Q,p+}, <f2>_{3Q,q'+})``, or the plain p-averages."""
    out = np.zeros((len(c), 2))
    for i, e in enumerate(c.entries):
        b3 = e.cube.box(3)
        if not b3.in_domain():
            raise ValueError(f"3Q of entry {i} leaves the domain")
        if plain:
            out[i] = (local_p_average(f1, e.cube, exps.p), local_p_average(f2, b3, exps.q_conj))
        else:
            out[i] = (plus_average(f1, e.cube, exps.p, weight_exponent),
                      plus_average(f2, b3, exps.q_conj, weight_exponent))
    return out


def evaluate_form(c: SparseCollection, f1: GridFunction, f2: GridFunction, exps: ExponentPair,
                  weight_exponent: float = 4.0, plain: bool = False) -> float:
    """``sum_Q |Q| <f1>_{Q,p+} <f2>_{3Q,q'+}`` (plain averages with ``plain=True``)."""
    avg = cube_averages(c, f1, f2, exps, weight_exponent, plain)
    vols = np.array([e.cube.volume for e in c.entries])
    return float(np.sum(vols * avg[:, 0] * avg[:, 1]))


def evaluate_pairing(f1, f2, mu, sigma, eps: EpsilonSigns, kind: str) -> float:
    if kind == "singular":
        return abs(pairing(radon_T(f1, mu, eps), f2))
    if kind == "maximal":
        if np.any(f2.samples < 0):
            raise ValueError("the maximal pairing needs f2 >= 0")
        return pairing(maximal_T_star(f1, sigma, range(eps.N1, eps.N2 + 1)), f2)
    raise ValueError(f"kind must be one of {KINDS}")


# -- certificates ----------------------------------------------------------

@dataclass
class SparseCertificate:
    kind: str
    exps: ExponentPair
    spec: GridSpec
    eps: EpsilonSigns
    collection: SparseCollection
    traces: List[NodeTrace]
    averages: np.ndarray
    pairing: float
    form: float
    form_plain: float
    weight_exponent: float
    sparsity: SparsityReport
    union_ok: bool
    cz: dict
    alpha_hat: Optional[float] = None

    @property
    def ratio(self) -> float:
        if self.form > 0:
            return self.pairing / self.form
        return 0.0 if self.pairing <= 1e-10 else float("inf")

    def slice_thresholds(self, k_range=range(-6, 1)) -> list:
        """The ``m1 + m2 <= -k alpha / 2`` cut-offs for the recorded decay exponent."""
        if self.alpha_hat is None:
            return []
        return [{"k": int(k), "bound": -k * self.alpha_hat / 2} for k in k_range]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.exps.p,
            "q": self.exps.q,
            "grid": self.spec.to_dict(),
            "epsilon": self.eps.to_dict(),
            "weight_exponent": self.weight_exponent,
            "D_trace": [t.to_dict() for t in self.traces],
            "cubes": [{"level": e.cube.level, "corner": list(e.cube.corner), "depth": e.depth,
                       "F_RLE": rle_encode(e.F_mask()),
                       "avg1": float(a[0]), "avg2": float(a[1])}
                      for e, a in zip(self.collection.entries, self.averages)],
            "pairing": self.pairing,
            "form": self.form,
            "form_plain": self.form_plain,
            "ratio": self.ratio,
            "alpha_hat": self.alpha_hat,
            "slice_thresholds": self.slice_thresholds(),
            "checks": {"sparsity": self.sparsity.ok, "sparsity_violation": self.sparsity.violation,
                       "union": self.union_ok, "cz": self.cz},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def collection_from_dict(doc: dict) -> SparseCollection:
    g = doc["grid"]
    spec = GridSpec(int(g["n"]), int(g["K"]), int(g["s"]))
    entries = []
    for c in doc["cubes"]:
        cube = DyadicCube(spec, int(c["level"]), tuple(c["corner"]))
        F = np.flatnonzero(rle_decode(c["F_RLE"], spec.shape).ravel())
        entries.append(SparseEntry(cube, F, int(c.get("depth", 0))))
    return SparseCollection(spec, tuple(entries))


def _cz_checks(f1: GridFunction, root: dict, Q0: DyadicCube, p: float) -> dict:
    cover = root["cover"]
    cz = cz_decompose(f1, cover)
    recon = cz.good + cz.bad_total()
    base = root["D"] * local_p_average(f1, Q0, p)
    return {
        "cubes": len(cover),
        "reconstruction_error": float(np.abs(recon.samples - f1.samples).max()),
        "max_bad_sum": float(np.abs(cz.bad_sums()).max()) if len(cover) else 0.0,
        "good_sup_over_D_avg": float(np.abs(cz.good.samples).max() / base) if base > 0 else 0.0,
    }


def certify_bound(f1, f2, mu, sigma, eps, exps, Q0, kind="singular", *,
                  weight_exponent: float = 4.0, alpha_hat: Optional[float] = None,
                  j_min: Optional[int] = None) -> SparseCertificate:
    coll, traces, root = build_sparse(f1, f2, mu, sigma, eps, exps, Q0, kind, j_min=j_min)
    report = verify_sparsity(coll)
    if not report.ok:
        raise RuntimeError(f"sparsity verification failed: {report.violation}; "
                           f"trace: {[t.to_dict() for t in traces]}")
    avgs = cube_averages(coll, f1, f2, exps, weight_exponent)
    vols = np.array([e.cube.volume for e in coll.entries])
    form = float(np.sum(vols * avgs[:, 0] * avgs[:, 1]))
    form_plain = evaluate_form(coll, f1, f2, exps, plain=True)
    pair = evaluate_pairing(f1, f2, mu, sigma, eps, kind)
    union_ok = all(t.union_ok for t in traces) and all(Q0.contains(c) for c in coll.cubes)
    return SparseCertificate(kind, exps, f1.spec, eps, coll, traces, avgs, pair, form, form_plain,
                             weight_exponent, report, union_ok, _cz_checks(f1, root, Q0, exps.p),
                             alpha_hat)


# -- serialized inputs -------------------------------------------------------

def _encode_box(f: GridFunction, box) -> dict:
    """Samples inside ``box`` as zlib-compressed little-endian float64, base64 text.

    The function must vanish outside the box.
    """
    if np.any(f.samples[~box.mask()] != 0):
        raise ValueError("function does not vanish outside its stored box")
    raw = np.ascontiguousarray(f.samples[box.slices], dtype="<f8").tobytes()
    return {"lo": list(box.lo), "hi": list(box.hi),
            "data": base64.b64encode(zlib.compress(raw, 9)).decode("ascii")}


def _decode_box(doc: dict, spec: GridSpec) -> GridFunction:
    lo, hi = doc["lo"], doc["hi"]
    shape = tuple(h - l for l, h in zip(lo, hi))
    vals = np.frombuffer(zlib.decompress(base64.b64decode(doc["data"])), dtype="<f8")
    a = np.zeros(spec.shape)
    a[tuple(slice(l, h) for l, h in zip(lo, hi))] = vals.reshape(shape)
    return GridFunction(spec, a)


def inputs_to_dict(f1, f2, mu, sigma, eps, exps, Q0, kind, weight_exponent=4.0,
                   j_min: Optional[int] = None) -> dict:
    return {
        "grid": f1.spec.to_dict(),
        "f1": _encode_box(f1, Q0.box()),
        "f2": _encode_box(f2, Q0.box(3)),
        "mu": json.loads(mu.to_json()),
        "sigma": json.loads(sigma.to_json()),
        "epsilon": eps.to_dict(),
        "p": exps.p,
        "q": exps.q,
        "Q0": Q0.to_dict(),
        "kind": kind,
        "weight_exponent": weight_exponent,
        "j_min": j_min,
    }


def inputs_from_dict(doc: dict) -> dict:
    g = doc["grid"]
    spec = GridSpec(int(g["n"]), int(g["K"]), int(g["s"]))
    return {
        "f1": _decode_box(doc["f1"], spec),
        "f2": _decode_box(doc["f2"], spec),
        "mu": DiscreteMeasure.from_json(json.dumps(doc["mu"])),
        "sigma": DiscreteMeasure.from_json(json.dumps(doc["sigma"])),
        "eps": EpsilonSigns.from_dict(doc["epsilon"]),
        "exps": ExponentPair(float(doc["p"]), float(doc["q"])),
        "Q0": DyadicCube(spec, int(doc["Q0"]["level"]), tuple(doc["Q0"]["corner"])),
        "kind": doc["kind"],
        "weight_exponent": float(doc.get("weight_exponent", 4.0)),
        "j_min": doc.get("j_min"),
    }


def _rel_close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300) or (a == b)


def reverify_certificate(cert: dict, inputs: dict, tol: float = 1e-8) -> List[str]:
    """Recompute everything in ``cert`` from ``inputs``; returns the list of mismatches."""
    problems: List[str] = []
    inp = inputs_from_dict(inputs)
    try:
        claimed = collection_from_dict(cert)
    except (ValueError, KeyError) as exc:
        return [f"certificate collection does not parse: {exc}"]
    rep = verify_sparsity(claimed)
    if not rep.ok:
        problems.append(f"sparsity: {rep.violation}")
    for key, want in (("kind", inp["kind"]), ("p", inp["exps"].p), ("q", inp["exps"].q),
                      ("epsilon", inp["eps"].to_dict()), ("grid", inp["f1"].spec.to_dict())):
        if cert.get(key) != want:
            problems.append(f"{key}: certificate has {cert.get(key)!r}, inputs have {want!r}")
    coll, traces, root = build_sparse(inp["f1"], inp["f2"], inp["mu"], inp["sigma"], inp["eps"],
                                      inp["exps"], inp["Q0"], inp["kind"], j_min=inp["j_min"])
    if len(coll) != len(claimed):
        problems.append(f"union: {len(claimed)} cubes claimed, {len(coll)} rebuilt")
    else:
        for i, (a, b) in enumerate(zip(claimed.entries, coll.entries)):
            if a.cube.level != b.cube.level or a.cube.corner != b.cube.corner:
                problems.append(f"union: cube {i} differs from the rebuilt collection")
                break
            if not np.array_equal(a.F, b.F):
                problems.append(f"union: witness set of cube {i} differs from the rebuilt one")
                break
    w = inp["weight_exponent"]
    form = evaluate_form(coll, inp["f1"], inp["f2"], inp["exps"], w)
    pair = evaluate_pairing(inp["f1"], inp["f2"], inp["mu"], inp["sigma"], inp["eps"], inp["kind"])
    if not _rel_close(form, float(cert["form"]), tol):
        problems.append(f"form: certificate {cert['form']!r}, recomputed {form!r}")
    if not (_rel_close(pair, float(cert["pairing"]), tol) or max(pair, abs(cert["pairing"])) <= 1e-10):
        problems.append(f"pairing: certificate {cert['pairing']!r}, recomputed {pair!r}")
    ratio = pair / form if form > 0 else 0.0
    if not _rel_close(ratio, float(cert["ratio"]), tol):
        problems.append(f"ratio: certificate {cert['ratio']!r}, recomputed {ratio!r}")
    return problems
