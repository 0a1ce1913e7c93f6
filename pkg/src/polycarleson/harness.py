"""Instance generation, verification suites, fitted-constant regressions and reports."""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import stats

from .grid import GridCube, WorkingBox
from .operator import (OperatorKit, get_kernel, hl_maximal, maximal_operator_apply, op_norm,
                       vdc_bound, weak_lorentz_norm)
from .polyspace import PolyClass, dim_q, multi_indices, norms, parent_growth_ratio
from .selection import (Decomposition, SelectionParams, achieved_separation, compute_densities,
                        convexity_violations, decompose, forest_top_multiplicity, is_antichain,
                        is_down_subset, separation_target)
from .stopping import StoppingForest, StoppingParams, build_stopping_forest, whitney_violations
from .tiles import LinearizingData, SampleIndex, TileLattice, TileParams, build_tile_lattice, sample_grid

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
PRESETS = ("uniform", "clustered", "single-phase", "heavy-chain", "tree", "two-phase")
SUITES = ("structure", "decay", "appendix")


# ---- configuration -----------------------------------------------------------
@dataclass
class ExperimentConfig:
    ds: int = 1
    d: int = 1
    D: int = 8
    s_min: int = 0
    s_max: int = 2
    kappa_sep: float = 4.0
    delta_stop: float = 0.5
    C_count: float = 1.0
    C0: float = 2.0
    C_sep: float = 1.0
    lambda_max: float = 2.0
    phase_radius: float = 32.0
    n_phases: int = 6
    kernel: str = "hilbert"
    resolution: int = 2
    seed: int = 0
    preset: str = "uniform"
    tree_fraction: float = 0.5
    set_fraction: float = 1 / 16
    suites: tuple = SUITES
    max_scales: int = 6
    max_samples: int = 4096
    n_seeds: int = 5
    threads: int = 1

    def __post_init__(self):
        self.suites = tuple(self.suites)

    @property
    def n_scales(self) -> int:
        return self.s_max - self.s_min + 1

    @property
    def box(self) -> WorkingBox:
        return WorkingBox(self.D, self.ds, self.s_min, self.s_max)

    @property
    def n_samples(self) -> int:
        return (self.D ** (self.s_max - self.s_min) * self.resolution) ** self.ds

    def validate(self, check_growth: bool = True) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.n_scales > self.max_scales:
            raise ValueError(f"{self.n_scales} scales exceed the desk-scale cap {self.max_scales}")
        if self.n_samples > self.max_samples:
            raise ValueError(f"{self.n_samples} samples exceed the cap {self.max_samples}")
        unknown = set(self.suites) - set(SUITES)
        if unknown:
            raise ValueError(f"unknown suites {sorted(unknown)}")
        if check_growth:
            worst = parent_growth_check(self.ds, self.d, self.D, 100, seed=self.seed)
            if worst < self.kappa_sep * (1 - 1e-9):
                raise ValueError(f"D={self.D} gives parent growth {worst:.3f} < kappa_sep={self.kappa_sep}")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["suites"] = list(self.suites)
        return d

    @property
    def tile_params(self) -> TileParams:
        return TileParams(lambda_max=self.lambda_max)

    @property
    def stopping_params(self) -> StoppingParams:
        return StoppingParams(C_count=self.C_count, delta_stop=self.delta_stop)

    @property
    def selection_params(self) -> SelectionParams:
        return SelectionParams(C0=self.C0, C_sep=self.C_sep, kappa_sep=self.kappa_sep)


def load_config(path: str | os.PathLike | None = None, **overrides) -> ExperimentConfig:
    """TOML or JSON config; POLYCARLESON_SEED and POLYCARLESON_THREADS override."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if p.suffix == ".toml":
            import tomli

            doc = tomli.loads(p.read_text())
        else:
            doc = json.loads(p.read_text())
        doc = doc.get("experiment", doc)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if "POLYCARLESON_SEED" in os.environ:
        doc["seed"] = int(os.environ["POLYCARLESON_SEED"])
    if "POLYCARLESON_THREADS" in os.environ:
        doc["threads"] = int(os.environ["POLYCARLESON_THREADS"])
    return ExperimentConfig(**doc)


# ---- parent growth calibration ----------------------------------------------------
def parent_growth_check(ds: int, d: int, D: int, n: int = 1000, seed: int = 0) -> float:
    """Smallest rigorous_lower ||Q||_parent / rigorous_upper ||Q||_child over random Q and children."""
    rng = np.random.default_rng(seed)
    k = dim_q(ds, d)
    coeffs = rng.standard_normal((n, k))
    corners = rng.integers(0, D, (n, ds))
    worst = np.inf
    for c in np.unique(corners, axis=0):
        rows = np.all(corners == c, axis=1)
        child = GridCube(0, tuple(int(v) for v in c), D)
        worst = min(worst, float(parent_growth_ratio(coeffs[rows], child).min()))
    return worst


def calibrate(ds: int, d: int, kappa_sep: float = 4.0, n: int = 1000, D_max: int = 64, seed: int = 0) -> dict:
    """Smallest D whose rigorous parent growth reaches kappa_sep on n random classes."""
    tried = []
    for D in range(2, D_max + 1):
        worst = parent_growth_check(ds, d, D, n, seed)
        tried.append({"D": D, "min_ratio": worst})
        if worst >= kappa_sep * (1 - 1e-9):
            return {"D": D, "min_ratio": worst, "kappa_sep": kappa_sep, "n": n, "tried": tried}
    raise RuntimeError(f"no D <= {D_max} reaches parent growth {kappa_sep}")


# ---- instances ---------------------------------------------------------------------
@dataclass
class Instance:
    config: ExperimentConfig
    seed: int
    box: WorkingBox
    data: LinearizingData
    F: np.ndarray
    G: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def fingerprint(self) -> bytes:
        parts = [self.data.points, self.data.sigma_lo, self.data.sigma_hi, self.data.phase_idx,
                 self.data.phases, self.F, self.G, self.f, self.g]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


def random_phases(rng, box: WorkingBox, d: int, n: int, radius: float) -> np.ndarray:
    """Classes with top-cube norm at most ``radius``: each monomial gets radius/dimQ of budget."""
    k = dim_q(box.ds, d)
    mono = norms(np.eye(k), box.top, "rigorous_upper")
    u = rng.uniform(-1, 1, (n, k))
    return u * radius / k / mono


def _cluster_mask(points: np.ndarray, box: WorkingBox, frac: float, center) -> np.ndarray:
    L = float(box.D) ** box.s_max
    half = 0.5 * frac * L
    c = np.asarray(center, float)
    return np.all(np.abs(points - c) < half, axis=1)


def generate_instance(config: ExperimentConfig, seed: int | None = None) -> Instance:
    """Deterministic instance for the preset; seed defaults to config.seed."""
    seed = config.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    box = config.box
    pts, w = sample_grid(box, config.resolution)
    n = len(pts)
    S = np.arange(box.s_min, box.s_max + 1)
    K = max(config.n_phases, 1)
    L = float(box.D) ** box.s_max
    preset = config.preset
    if preset == "uniform":
        phases = random_phases(rng, box, config.d, K, config.phase_radius)
        idx = rng.integers(0, K, n)
        lo = rng.choice(S, n)
        hi = np.maximum(lo, rng.choice(S, n))
    elif preset == "clustered":
        phases = random_phases(rng, box, config.d, K, config.phase_radius)
        idx = rng.integers(0, K, n)
        lo = rng.choice(S, n)
        hi = np.maximum(lo, rng.choice(S, n))
        # a few dense spots sharing one phase with full windows stress the counting functions
        for _ in range(2):
            frac = float(box.D) ** (box.s_min + 1 - box.s_max) * rng.integers(1, 3)
            c = rng.uniform(0, L, box.ds)
            m = _cluster_mask(pts, box, frac, c)
            idx[m] = rng.integers(0, K)
            lo[m], hi[m] = box.s_min, box.s_max
    elif preset == "single-phase":
        phases = random_phases(rng, box, config.d, 1, config.phase_radius)
        idx = np.zeros(n, np.int64)
        lo = np.full(n, box.s_min)
        hi = np.full(n, box.s_max)
    elif preset == "heavy-chain":
        phases = random_phases(rng, box, config.d, K, config.phase_radius)
        idx = rng.integers(0, K, n)
        lo = rng.choice(S, n)
        hi = np.maximum(lo, rng.choice(S, n))
        # half of the box along the first axis, aligned to scale s_max - 1 cubes, so the
        # block cubes and the top cube all reach ratio 1/2
        side = float(box.D) ** (box.s_max - 1)
        half = int(math.ceil(box.D / 2)) * side
        start = rng.integers(0, 2) * (L - half)
        m = (pts[:, 0] >= start) & (pts[:, 0] < start + half)
        idx[m] = 0
        lo[m], hi[m] = box.s_min, box.s_max
    elif preset == "tree":
        # one phase; a stratified fraction of points carries the scales above s_min
        phases = np.zeros((1, dim_q(box.ds, config.d)))
        idx = np.zeros(n, np.int64)
        lo = np.full(n, box.s_min)
        hi = np.full(n, box.s_min)
        cell = np.floor(pts / float(box.D) ** (box.s_min + 1)).astype(np.int64)
        _, groups = np.unique(cell, axis=0, return_inverse=True)
        for gi in np.unique(groups):
            members = np.flatnonzero(groups == gi)
            m = max(1, int(round(config.tree_fraction * len(members))))
            act = rng.choice(members, m, replace=False)
            lo[act], hi[act] = box.s_min + 1, box.s_max
    elif preset == "two-phase":
        # two far-apart phases spread over the whole box: parallel trees over the same cubes
        k = dim_q(box.ds, config.d)
        mono = norms(np.eye(k), box.top, "rigorous_upper")
        base = np.zeros((2, k))
        base[0, 0] = -config.phase_radius / mono[0]
        base[1, 0] = config.phase_radius / mono[0]
        phases = base
        idx = rng.integers(0, 2, n)
        lo = np.full(n, box.s_min)
        hi = np.full(n, box.s_max)
    else:
        raise ValueError(f"unknown preset {preset!r}")
    data = LinearizingData(pts, w, lo, hi, idx, phases, box.ds, config.d)
    Fc = rng.uniform(0, L, box.ds)
    Gc = rng.uniform(0, L, box.ds)
    F = _cluster_mask(pts, box, config.set_fraction, Fc)
    G = _cluster_mask(pts, box, config.set_fraction, Gc)
    if not F.any():
        F[rng.integers(n)] = True
    if not G.any():
        G[rng.integers(n)] = True
    f = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    g = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return Instance(config, seed, box, data, F, G, f, g)


def heavy_chain(pipeline: "Pipeline", n: int = 1) -> list[int]:
    """Longest nested chain of tiles with |E-bar|/|I| >= 2^-n (witness for the preset)."""
    from .selection import longest_chain

    lat = pipeline.lattice
    q = np.flatnonzero(pipeline.index.Ebar_ratio >= 2.0**-n)
    return longest_chain(lat, q) if len(q) else []


# ---- pipeline -----------------------------------------------------------------------
@dataclass
class Pipeline:
    instance: Instance
    lattice: TileLattice
    index: SampleIndex
    forest: StoppingForest
    decomposition: Decomposition
    timings: dict = field(default_factory=dict)

    @property
    def config(self) -> ExperimentConfig:
        return self.instance.config

    @cached_property
    def kit(self) -> OperatorKit:
        return OperatorKit(self.index, get_kernel(self.config.kernel, self.config.ds))


def build_pipeline(instance: Instance) -> Pipeline:
    cfg = instance.config
    t = {}
    t0 = time.perf_counter()
    lat = build_tile_lattice(instance.box, instance.data, cfg.tile_params)
    t["lattice"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    index = lat.bind(instance.data)
    forest = build_stopping_forest(lat, index, cfg.stopping_params)
    t["stopping"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    dec = decompose(forest, cfg.selection_params)
    t["selection"] = time.perf_counter() - t0
    return Pipeline(instance, lat, index, forest, dec, t)


# ---- reports ----------------------------------------------------------------------------
@dataclass
class CheckRecord:
    check_id: str
    claim: str
    status: str
    hard: bool
    value: object = None
    fitted: object = None
    witness: object = None

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Report:
    records: list[CheckRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, check_id: str, claim: str, ok: bool, hard: bool = True, value=None, fitted=None, witness=None):
        status = "pass" if ok else ("fail" if hard else "soft-fail")
        rec = CheckRecord(check_id, claim, status, hard, value, fitted, witness)
        self.records.append(rec)
        return rec

    def skip(self, check_id: str, claim: str, reason: str):
        self.records.append(CheckRecord(check_id, claim, "skip", False, reason))

    def extend(self, other: "Report") -> "Report":
        self.records.extend(other.records)
        return self

    def hard_failures(self) -> list[CheckRecord]:
        return [r for r in self.records if r.status == "fail"]

    def failures(self) -> list[CheckRecord]:
        return [r for r in self.records if r.status in ("fail", "soft-fail")]

    def get(self, check_id: str) -> CheckRecord:
        for r in self.records:
            if r.check_id == check_id:
                return r
        raise KeyError(check_id)

    @property
    def ok(self) -> bool:
        return not self.hard_failures()

    def to_dict(self, timestamp: bool = False) -> dict:
        doc = {"schema": SCHEMA_VERSION, "meta": _jsonable(self.meta),
               "records": [r.to_dict() for r in self.records]}
        if timestamp:
            doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        return doc

    def to_json(self, timestamp: bool = False) -> str:
        return json.dumps(self.to_dict(timestamp), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Report":
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {doc.get('schema')}")
        recs = [CheckRecord(**r) for r in doc["records"]]
        return cls(recs, doc.get("meta", {}))


def fit_positive(x, y, floor: float = 1e-14) -> dict:
    """Log-log fit over the points with y above ``floor``; a sweep that drops to zero earlier
    than two points decays faster than any power and reports slope inf."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    keep = y > floor
    if keep.sum() < 2:
        return {"slope": float("inf"), "intercept": float("nan"), "ci": [float("inf")] * 2, "points": int(keep.sum())}
    out = fit_loglog(x[keep], y[keep])
    out["points"] = int(keep.sum())
    return out


def fit_loglog(x, y) -> dict:
    """Least-squares slope of log y against log x with a 95% interval."""
    x = np.log(np.asarray(x, float))
    y = np.log(np.asarray(y, float))
    if len(x) < 2 or np.ptp(x) == 0:
        return {"slope": float("nan"), "intercept": float("nan"), "ci": [float("nan")] * 2}
    r = stats.linregress(x, y)
    half = 1.96 * r.stderr if len(x) > 2 else 0.0
    return {"slope": float(r.slope), "intercept": float(r.intercept),
            "ci": [float(r.slope - half), float(r.slope + half)]}


# ---- structure suite ---------------------------------------------------------------------
def _region_matrix(lat: TileLattice) -> np.ndarray:
    lab = np.stack([lat.labels[c] for c in lat.tile_cube])
    return lab == lat.tile_center[:, None]


def check_sandwich(lat: TileLattice, n_tiles: int = 100, n_phase: int = 1000, seed: int = 0,
                   inner: float = 0.2, outer: float = 1.0) -> dict:
    """Sample phases around tile centres inside the declared region; count sandwich violations."""
    rng = np.random.default_rng(seed)
    T = len(lat)
    pick = rng.choice(T, min(n_tiles, T), replace=False) if T else np.zeros(0, int)
    viol_in = viol_out = tested = n_inner = n_outer = 0
    witness = None
    for t in pick:
        I = lat.cubes[lat.tile_cube[t]]
        dirs = rng.standard_normal((n_phase, lat.dimq))
        dirs /= norms(dirs, I, "rigorous_upper")[:, None]
        rad = rng.uniform(0, 1.3, n_phase)
        Q = lat.tile_coeffs[t] + dirs * rad[:, None]
        ok = lat.in_declared_region(Q)
        Q = Q[ok]
        if not len(Q):
            continue
        mem = lat.membership_batch(Q, t)
        up = norms(Q - lat.tile_coeffs[t], I, "rigorous_upper")
        low = norms(Q - lat.tile_coeffs[t], I, "rigorous_lower")
        a = (up <= inner) & ~mem
        b = (low > outer) & mem
        n_inner += int((up <= inner).sum())
        n_outer += int((low > outer).sum())
        tested += len(Q)
        viol_in += int(a.sum())
        viol_out += int(b.sum())
        if witness is None and (a.any() or b.any()):
            j = int(np.flatnonzero(a | b)[0])
            witness = {"tile": int(t), "phase": Q[j].tolist(), "upper": float(up[j]), "lower": float(low[j])}
    return {"tiles": int(len(pick)), "tested": tested, "inner_tested": n_inner, "outer_tested": n_outer,
            "inner_violations": viol_in, "outer_violations": viol_out, "witness": witness}


def counting_fit(forest: StoppingForest) -> dict:
    """max over (n, k) of multiplicity(M_{n,k}) / (2^n log(n+1))."""
    best, arg = 0.0, None
    for k in range(forest.n_generations):
        for n in range(1, forest.n_max + 1):
            m = forest.max_multiplicity(forest.maximal_tiles(n, k))
            r = m / (2.0**n * math.log(n + 1))
            if r > best:
                best, arg = r, {"n": n, "k": k, "multiplicity": m}
    return {"C_fit": best, "at": arg}


def forest_counting_fit(dec: Decomposition) -> dict:
    best, arg = 0.0, None
    for (n, k, j), trees in dec.forests().items():
        m = forest_top_multiplicity(dec.forest, trees)
        r = m / (2.0**n * math.log(n + 1))
        if r > best:
            best, arg = r, {"n": n, "k": k, "j": j, "multiplicity": m}
    return {"C_fit": best, "at": arg}


def level_band_violations(dec: Decomposition) -> list[dict]:
    """Tiles whose density or generation disagrees with the label of their piece."""
    C0 = dec.params.C0
    dens = dec.dens
    gen = dec.forest.tile_gen
    out = []
    for kind, pieces in (("tree", dec.trees), ("antichain", dec.antichains)):
        for p in pieces:
            n, k = p["n"], p["k"]
            lo = C0 * 2.0**-n
            hi = C0 * 2.0 ** -(n - 1) if n > 1 else np.inf
            for t in np.asarray(p["members"], np.int64):
                if not (lo < dens[t] <= hi) or gen[t] != k:
                    out.append({"kind": kind, "piece": p["id"], "tile": int(t), "n": n, "k": k,
                                "dens": float(dens[t]), "gen": int(gen[t])})
    for t in dec.residual:
        if dens[t] > C0 * 2.0**-dec.forest.n_max:
            out.append({"kind": "residual", "tile": int(t), "dens": float(dens[t])})
    return out


def run_structure_suite(pipe: Pipeline, decomposition: Decomposition | None = None,
                        sandwich_tiles: int = 40, sandwich_phases: int = 100) -> Report:
    """Every structural invariant of the lattice, stopping forest and decomposition."""
    lat, idx, forest = pipe.lattice, pipe.index, pipe.forest
    dec = decomposition or pipe.decomposition
    rep = Report(meta={"suite": "structure", "seed": pipe.instance.seed, "tiles": len(lat),
                       "trees": len(dec.trees), "antichains": len(dec.antichains)})
    T = len(lat)

    # tiles
    missing = np.argwhere(idx.tile_of < 0)
    rep.add("tiles.partition", "per-cube partition of phase space", len(missing) == 0,
            witness=None if not len(missing) else {"sample": int(missing[0, 0]), "scale_index": int(missing[0, 1])})
    if T:
        R = _region_matrix(lat).astype(np.int64)
        inter = R @ R.T
        size = R.sum(axis=1)
        bad = lat.contain & ~((inter == 0) | (inter == size[None, :]))
        w = np.argwhere(bad)
        rep.add("tiles.nestedness", "regions over nested cubes are nested or disjoint", not bad.any(),
                witness=None if not len(w) else w[0].tolist())
        lt = lat.lt_matrix
        irreflexive = not np.diag(lt).any()
        trans = ((lt.astype(np.int64) @ lt.astype(np.int64)) > 0) & ~lt
        rep.add("tiles.order", "strict tile order is a strict partial order", irreflexive and not trans.any(),
                witness=None if not trans.any() else np.argwhere(trans)[0].tolist())
        cnt = np.zeros((len(idx.data), len(lat.cubes)), np.int64)
        for t in range(T):
            Ex = idx.compute_E(t)
            cnt[Ex, lat.tile_cube[t]] += 1
        rep.add("tiles.E-disjoint", "E sets of one cube are disjoint", cnt.max(initial=0) <= 1)
    rep.add("tiles.assignment", "0.3/0.7 assignment rule", len(lat.assign_violations) == 0, hard=False,
            value=lat.assign_max_dist, witness=lat.assign_violations[:3] or None)
    sw = check_sandwich(lat, sandwich_tiles, sandwich_phases, seed=pipe.instance.seed)
    rep.add("tiles.sandwich", "0.2/1 ball sandwich", sw["inner_violations"] + sw["outer_violations"] == 0,
            hard=False, value=sw, witness=sw["witness"])

    # stopping
    wv = [v for mask in forest.tilde for v in whitney_violations(lat, mask)[:1]]
    rep.add("stopping.whitney", "Whitney property of stopping classes", not wv, witness=wv[:1] or None)
    worst = max((d["ratio"] for d in forest.decay), default=0.0)
    rep.add("stopping.support-decay", "stopping children support decay", worst <= forest.params.delta_stop,
            value=worst, fitted={"C_count": forest.C_count, "attempts": forest.attempts})
    gen_ok = bool(np.all(forest.cube_gen >= 0))
    parent_ok = True
    for k in range(1, forest.n_generations):
        for F in forest.generations[k]:
            if not any(lat.cubes[P].contains(lat.cubes[F]) and P != F for P in forest.generations[k - 1]):
                parent_ok = False
    rep.add("stopping.generations", "generations partition the cubes; stopping parents exist", gen_ok and parent_ok)
    bad_max = None
    for k in range(forest.n_generations):
        for n in range(1, forest.n_max + 1):
            M = forest.maximal_tiles(n, k)
            ok, wit = is_antichain(lat, M)
            if not ok or np.any(idx.Ebar_ratio[M] < 2.0**-n * (1 - 1e-12)):
                bad_max = {"n": n, "k": k, "pair": wit}
                break
    rep.add("stopping.maximal", "maximal tile sets are antichains above the ratio", bad_max is None, witness=bad_max)
    cf = counting_fit(forest)
    rep.add("stopping.counting", "maximal-tile counting function", True, hard=False, fitted=cf)

    # selection
    le = lat.le_matrix & (forest.tile_gen[:, None] == forest.tile_gen[None, :])
    mono = np.argwhere(le & (dec.dens[:, None] < dec.dens[None, :] - 1e-15))
    rep.add("selection.density-monotone", "density is monotone along the order", not len(mono),
            witness=None if not len(mono) else mono[0].tolist())
    down_bad = None
    for k in range(forest.n_generations):
        P = forest.P(k)
        for n in range(1, forest.n_max + 1):
            H = P[dec.dens[P] > dec.params.C0 * 2.0**-n]
            ok, wit = is_down_subset(lat, H, P)
            if not ok:
                down_bad = {"n": n, "k": k, "pair": wit}
                break
    rep.add("selection.heavy-down", "heavy sets are down subsets", down_bad is None, witness=down_bad)
    ok, wit = dec.check_partition()
    rep.add("selection.partition", "tree/antichain/residual partition", ok, witness=wit)
    anti_bad = None
    for a in dec.antichains:
        ok, wit = is_antichain(lat, a["members"])
        if not ok:
            anti_bad = {"antichain": a["id"], "pair": wit}
            break
    rep.add("selection.antichains", "antichains are <-incomparable", anti_bad is None, witness=anti_bad)
    conv_bad = top_bad = None
    four_lt = lat.dilated_matrix(4, None, strict=True) if T else np.zeros((0, 0), bool)
    for tr in dec.trees:
        v = convexity_violations(lat, tr["members"], forest.P(tr["k"]))
        if len(v) and conv_bad is None:
            conv_bad = {"tree": tr["id"], "tile": int(v[0])}
        m = np.asarray(tr["members"], np.int64)
        bad = m[~four_lt[m, tr["top"]]]
        if len(bad) and top_bad is None:
            top_bad = {"tree": tr["id"], "tile": int(bad[0]), "top": tr["top"]}
    rep.add("selection.trees-convex", "trees are convex", conv_bad is None, witness=conv_bad)
    rep.add("selection.trees-top", "4p < top for every tree member", top_bad is None, witness=top_bad)
    lb = level_band_violations(dec)
    rep.add("selection.labels", "piece labels agree with density level and generation", not lb,
            witness=lb[0] if lb else None)
    fc = forest_counting_fit(dec)
    rep.add("selection.forest-counting", "forest top counting function", True, hard=False, fitted=fc)
    sep_bad = None
    achieved = []
    for (n, k, j), trees in dec.forests().items():
        target = separation_target(n, dec.params)
        for a in range(len(trees)):
            for b in range(a + 1, len(trees)):
                val = achieved_separation(lat, trees[a], trees[b])
                achieved.append(val if math.isfinite(val) else None)
                if val <= target and sep_bad is None:
                    sep_bad = {"trees": [trees[a]["id"], trees[b]["id"]], "Delta": val, "target": target}
    rep.add("selection.separation", "trees of a forest are Delta(n)-separated", sep_bad is None, hard=False,
            value=achieved[:20], witness=sep_bad)
    bd_bad = None
    for tr in dec.trees:
        bd = np.asarray(tr.get("bd", []), np.int64)
        rest = np.setdiff1d(tr["members"], bd)
        if len(bd) and len(rest):
            hit = np.argwhere(lat.lt_matrix[np.ix_(bd, rest)])
            if len(hit):
                bd_bad = {"tree": tr["id"], "pair": [int(bd[hit[0, 0]]), int(rest[hit[0, 1]])]}
    rep.add("selection.boundary", "boundary parts are up-sets", bd_bad is None, witness=bd_bad)
    row_bad = None
    for key, rows in dec.rows.items():
        trees = {t["id"]: t for t in dec.forests()[key]}
        seen = [tid for row in rows for tid in row]
        if sorted(seen) != sorted(trees):
            row_bad = {"forest": key, "reason": "trees not covered exactly once"}
        for r, row in enumerate(rows):
            cubes = [lat.cubes[lat.tile_cube[trees[tid]["top"]]] for tid in row if tid in trees]
            for a in range(len(cubes)):
                for b in range(a + 1, len(cubes)):
                    if cubes[a].contains(cubes[b]) or cubes[b].contains(cubes[a]):
                        row_bad = row_bad or {"forest": key, "row": r, "trees": [row[a], row[b]]}
    rep.add("selection.rows", "row tops are pairwise disjoint", row_bad is None, witness=row_bad)
    replay = decompose(forest, dec.params)
    mine, ref = dec.labels(), replay.labels()
    diff = [t for t in range(T) if mine[t] != ref[t]]
    rep.add("selection.replay", "decomposition replays from the stopping forest", not diff,
            witness=None if not diff else {"tile": diff[0], "stored": mine[diff[0]], "replayed": ref[diff[0]]})
    for d in dec.diagnostics:
        rep.add(f"selection.diagnostic.{d['check']}", "proof-step guard", False, hard=False, witness=d)
    return rep


# ---- fault injection -------------------------------------------------------------------
def inject_moved_tile(dec: Decomposition, rng) -> tuple[Decomposition, dict]:
    """Move one tile into a piece carrying a different label."""
    bad = copy.deepcopy(dec)
    pieces = [("tree", p) for p in bad.trees] + [("antichain", p) for p in bad.antichains]
    pieces = [(k, p) for k, p in pieces if len(p["members"])]
    src_kind, src = pieces[rng.integers(len(pieces))]
    others = [(k, p) for k, p in pieces if p is not src and (p["n"], p["k"]) != (src["n"], src["k"])]
    if not others:
        others = [(k, p) for k, p in pieces if p is not src]
    if not others:
        raise ValueError("need two pieces to move a tile")
    dst_kind, dst = others[rng.integers(len(others))]
    t = int(src["members"][rng.integers(len(src["members"]))])
    src["members"] = np.setdiff1d(src["members"], [t])
    dst["members"] = np.union1d(dst["members"], [t])
    return bad, {"fault": "moved-tile", "tile": t, "from": (src_kind, src["id"]), "to": (dst_kind, dst["id"])}


def inject_merged_rows(dec: Decomposition, rng) -> tuple[Decomposition, dict]:
    bad = copy.deepcopy(dec)
    keys = [k for k, rows in bad.rows.items() if len(rows) >= 2]
    if not keys:
        raise ValueError("no forest with two rows")
    key = keys[rng.integers(len(keys))]
    rows = bad.rows[key]
    a, b = sorted(rng.choice(len(rows), 2, replace=False))
    rows[a] = rows[a] + rows[b]
    del rows[b]
    return bad, {"fault": "merged-rows", "forest": key, "rows": [int(a), int(b)]}


def inject_broken_antichain(dec: Decomposition, rng) -> tuple[Decomposition, dict]:
    """Move into an antichain a tile comparable with one of its members."""
    bad = copy.deepcopy(dec)
    lat = bad.lattice
    lt = lat.lt_matrix
    order = rng.permutation(len(bad.antichains))
    for ai in order:
        A = bad.antichains[ai]
        mem = np.asarray(A["members"], np.int64)
        if not len(mem):
            continue
        comp = np.flatnonzero((lt[mem].any(axis=0) | lt[:, mem].any(axis=1)))
        comp = np.setdiff1d(comp, mem)
        if not len(comp):
            continue
        t = int(comp[rng.integers(len(comp))])
        for p in bad.trees + bad.antichains:
            if t in p["members"]:
                p["members"] = np.setdiff1d(p["members"], [t])
        bad.residual = np.setdiff1d(bad.residual, [t])
        A["members"] = np.union1d(mem, [t])
        return bad, {"fault": "broken-antichain", "antichain": int(A["id"]), "tile": t}
    raise ValueError("no antichain has a comparable outside tile")


FAULTS = {"moved-tile": inject_moved_tile, "merged-rows": inject_merged_rows,
          "broken-antichain": inject_broken_antichain}


# ---- decay suite -----------------------------------------------------------------------
def g_tilde(mask: np.ndarray, nu: float, ds: int) -> np.ndarray:
    return hl_maximal(mask.astype(float), ds) > nu


def localized_norm(kit: OperatorKit, A: np.ndarray, out_mask: np.ndarray, in_mask: np.ndarray) -> float:
    sub = A[np.ix_(out_mask, in_mask)]
    if not sub.size:
        return 0.0
    return op_norm(sub, "svd")


def localization_sweep(pipe: Pipeline, nus=(0.5, 0.25, 0.125, 0.0625)) -> dict:
    """||1_G T 1_{not G~}|| and ||1_{not F~} T 1_F|| for the linearized operator along the sweep."""
    kit = pipe.kit
    A = kit.linearized_matrix().data
    ds = pipe.config.ds
    G, F = pipe.instance.G, pipe.instance.F
    g_vals, f_vals = [], []
    for nu in nus:
        g_vals.append(localized_norm(kit, A, G, ~g_tilde(G, nu, ds)))
        f_vals.append(localized_norm(kit, A, ~g_tilde(F, nu, ds), F))
    return {"nu": list(nus), "G": g_vals, "F": f_vals, "full": op_norm(A, "svd"),
            "fit_G": fit_positive(nus, g_vals), "fit_F": fit_positive(nus, f_vals)}


def _window_means(f: np.ndarray) -> np.ndarray:
    """means[i, j] = mean of f over cells i..j (j >= i), 1D."""
    c = np.concatenate([[0.0], np.cumsum(f)])
    n = len(f)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    with np.errstate(invalid="ignore", divide="ignore"):
        m = (c[j + 1] - c[i]) / (j - i + 1)
    m[j < i] = -np.inf
    return m


def _linearized_rows(f: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Averaging rows of the windows attaining Mf at each listed point."""
    m = _window_means(f)
    A = np.zeros((len(rows), len(f)))
    for r, x in enumerate(rows):
        cover = m[: x + 1, x:]
        i, j = np.unravel_index(np.argmax(cover), cover.shape)
        A[r, i:x + j + 1] = 1.0 / (x + j - i + 1)
    return A


def maximal_restricted_norm(out_mask: np.ndarray, in_mask: np.ndarray, n_iter: int = 30, seed: int = 0) -> float:
    """Lower estimate of ||1_out M 1_in||_{2->2} (1D) by alternating window linearization.

    Starts from blocks of dyadic lengths at both ends of every run of the
    input set, plus one random start; each start alternates between the
    attaining windows and the top singular vector of the averaging matrix.
    """
    n = len(out_mask)
    rows = np.flatnonzero(out_mask)
    cols = np.flatnonzero(in_mask)
    if not len(rows) or not len(cols):
        return 0.0
    rng = np.random.default_rng(seed)
    starts = [rng.uniform(0.5, 1.0, len(cols))]
    breaks = np.flatnonzero(np.diff(cols) > 1)
    runs = np.split(cols, breaks + 1)
    for run in runs:
        m = 1
        while m <= len(run):
            for block in (run[:m], run[-m:]):
                v = np.isin(cols, block).astype(float)
                starts.append(v)
            m *= 2
    best = 0.0
    for v in starts:
        cur = 0.0
        for _ in range(n_iter):
            f = np.zeros(n)
            f[cols] = v
            A = _linearized_rows(f, rows)[:, cols]
            _, sv, vt = np.linalg.svd(A, full_matrices=False)
            if sv[0] <= cur * (1 + 1e-12):
                break
            cur = float(sv[0])
            v = np.abs(vt[0])
        best = max(best, cur)
    return best


def maximal_localization_sweep(pipe: Pipeline, nus=(0.5, 0.25, 0.125, 0.0625)) -> dict:
    if pipe.config.ds != 1:
        return {"skipped": "maximal-function localization is implemented in one dimension"}
    G = pipe.instance.G
    a, b = [], []
    for nu in nus:
        out = ~g_tilde(G, nu, 1)
        a.append(maximal_restricted_norm(G, out))
        b.append(maximal_restricted_norm(out, G))
    return {"nu": list(nus), "G_M_out": a, "out_M_G": b,
            "fit_G_M_out": fit_positive(nus, a), "fit_out_M_G": fit_positive(nus, b)}


def tree_operator_points(pipe: Pipeline) -> list[tuple[float, float]]:
    """(density, ||T_tree||) for every tree of the decomposition."""
    kit = pipe.kit
    out = []
    for tr in pipe.decomposition.trees:
        mem = tr["members"]
        if len(mem):
            out.append((float(pipe.decomposition.dens[mem].max()), op_norm(kit.set_matrix(mem), "svd")))
    return out


def phase_tree(pipe: Pipeline) -> dict:
    """Tree under the top tile of the first phase: members p with 4p < top above s_min."""
    lat, forest = pipe.lattice, pipe.forest
    q0 = pipe.instance.data.phases[0]
    box = lat.box
    top_cube = int(np.flatnonzero(lat.cube_scale == box.s_max)[0])
    k0 = int(lat.labels[top_cube][lat.top_nearest(q0)[0]])
    top = lat.tile_lookup[(top_cube, k0)]
    k = int(forest.tile_gen[top])
    four = lat.dilated_matrix(4, None, strict=True)[:, top]
    P = forest.P(k)
    mem = P[four[P] & (lat.tile_scale[P] > box.s_min)]
    extra = convexity_violations(lat, mem, P)
    mem = np.union1d(mem, extra)
    return {"top": top, "k": k, "members": mem, "closure_added": len(extra)}


def tree_trend_experiment(config: ExperimentConfig, fractions, seeds) -> dict:
    """Norm of a constructed tree operator against its density over a sweep of E fractions."""
    pts = []
    for seed in seeds:
        for rho in fractions:
            cfg = config.replace(preset="tree", tree_fraction=float(rho))
            inst = generate_instance(cfg, seed)
            lat = build_tile_lattice(inst.box, inst.data, cfg.tile_params)
            idx = lat.bind(inst.data)
            forest = build_stopping_forest(lat, idx, cfg.stopping_params)
            dens = compute_densities(forest, cfg.selection_params)
            pipe = Pipeline(inst, lat, idx, forest, None)  # type: ignore[arg-type]
            tr = phase_tree(pipe)
            if not len(tr["members"]):
                continue
            A = pipe.kit.set_matrix(tr["members"])
            convex = not len(convexity_violations(lat, tr["members"], forest.P(tr["k"])))
            four = lat.dilated_matrix(4, None, strict=True)
            pts.append({"seed": seed, "fraction": float(rho), "density": float(dens[tr["members"]].max()),
                        "norm": op_norm(A, "svd"), "size": int(len(tr["members"])), "convex": convex,
                        "top_ok": bool(four[tr["members"], tr["top"]].all())})
    fit = fit_loglog([p["density"] for p in pts], [p["norm"] for p in pts]) if len(pts) > 1 else None
    return {"points": pts, "fit": fit}


def tt_star_fit(pipe: Pipeline, n_pairs: int = 50, seed: int = 0) -> dict:
    """C_fit with |<T1* g1, T2* g2>| <= C Delta^(-tau/d) |I_2|^-1 int_E1 |g1| int_E2 |g2|."""
    lat, kit = pipe.lattice, pipe.kit
    rng = np.random.default_rng(seed)
    T = len(lat)
    w = pipe.instance.data.weight
    tau = kit.kernel.tau
    best = 0.0
    used = 0
    for _ in range(n_pairs * 5):
        if used >= n_pairs or T < 2:
            break
        a, b = rng.choice(T, 2, replace=False)
        if lat.tile_side[a] > lat.tile_side[b]:
            a, b = b, a
        E1, E2 = pipe.index.compute_E(a), pipe.index.compute_E(b)
        if not len(E1) or not len(E2):
            continue
        g1 = np.zeros(kit.n, complex)
        g2 = np.zeros(kit.n, complex)
        g1[E1] = rng.standard_normal(len(E1)) + 1j * rng.standard_normal(len(E1))
        g2[E2] = rng.standard_normal(len(E2)) + 1j * rng.standard_normal(len(E2))
        u = kit.tile_matrix(a).data.conj().T @ g1
        v = kit.tile_matrix(b).data.conj().T @ g2
        lhs = abs(np.vdot(v, u)) * w
        Ia = lat.cubes[lat.tile_cube[a]]
        delta = float(norms(lat.tile_coeffs[a] - lat.tile_coeffs[b], Ia, "rigorous_upper")) + 1
        rhs = delta ** (-tau / lat.d) / lat.cubes[lat.tile_cube[b]].volume * np.abs(g1).sum() * w * np.abs(g2).sum() * w
        used += 1
        if rhs > 0:
            best = max(best, lhs / rhs)
    return {"C_fit": best, "pairs": used}


def adjoint_error(kit: OperatorKit, tiles) -> float:
    """max |(sum T_p)^H - sum T_p^*| with each adjoint assembled entrywise."""
    tiles = [int(t) for t in tiles]
    if not tiles:
        return 0.0
    S = kit.set_matrix(tiles).data
    adj = sum((kit.tile_adjoint_matrix(t).data for t in tiles), np.zeros((kit.n, kit.n), complex))
    return float(np.abs(S.conj().T - adj).max())


def row_orthogonality(kit: OperatorKit, dec: Decomposition) -> tuple[float, int]:
    """Largest ||T_R^* T_R'|| over pairs of distinct rows of every forest, and the pair count."""
    worst, pairs = 0.0, 0
    for key, rows in dec.rows.items():
        trees = {t["id"]: t for t in dec.forests()[key]}
        mats = [kit.set_matrix(np.concatenate([trees[i]["normal"] for i in row] or [np.zeros(0, np.int64)])).data
                for row in rows]
        for a in range(len(mats)):
            for b in range(a + 1, len(mats)):
                prod = mats[a].conj().T @ mats[b]
                worst = max(worst, op_norm(prod, "svd") if prod.any() else 0.0)
                pairs += 1
    return worst, pairs


def run_decay_suite(pipe: Pipeline) -> Report:
    """Exact operator identities plus fitted decay exponents."""
    kit, lat, dec = pipe.kit, pipe.lattice, pipe.decomposition
    rep = Report(meta={"suite": "decay", "seed": pipe.instance.seed})
    T = len(lat)
    rng = np.random.default_rng(pipe.instance.seed)
    sub = rng.choice(T, min(T, 12), replace=False) if T else []
    S = kit.set_matrix(sub)
    err = adjoint_error(kit, sub)
    rep.add("operator.adjoint", "tile adjoint equals conjugate transpose", err <= 1e-12, value=err)
    full = kit.set_matrix(range(T)).data
    lin = kit.linearized_matrix().data
    err = float(np.abs(full - lin).max())
    rep.add("operator.tile-sum", "sum of all tile operators is the linearized operator", err <= 1e-12, value=err)
    mask = np.zeros(kit.n, bool)
    for t in sub:
        mask[pipe.index.compute_E(int(t))] = True
    off = float(np.abs(S.data[~mask]).max()) if (~mask).any() else 0.0
    rep.add("operator.support", "tile operator rows vanish off E", off == 0.0, value=off)
    worst, pairs = row_orthogonality(kit, dec)
    rep.add("operator.rows-orthogonal", "distinct rows are orthogonal", worst <= 1e-12,
            value={"max": worst, "pairs": pairs})
    tp = tree_operator_points(pipe)
    rep.add("decay.tree", "tree norm against density^(1/2)", True, hard=False, value=tp,
            fitted=fit_loglog([p[0] for p in tp], [p[1] for p in tp]) if len(tp) > 2 else None)
    levels = {}
    for a in dec.antichains:
        levels.setdefault(a["n"], []).append(a["members"])
    anti = []
    for n, parts in sorted(levels.items()):
        anti.append((n, op_norm(kit.set_matrix(np.concatenate(parts)), "svd")))
    slope = None
    if len(anti) > 2:
        slope = stats.linregress([a[0] for a in anti], np.log2([max(a[1], 1e-300) for a in anti])).slope
    rep.add("decay.antichain", "antichain norms decay in the level", slope is None or slope <= 0, hard=False,
            value=anti, fitted={"log2_slope": slope})
    loc = localization_sweep(pipe)
    ok = all(np.diff(loc["G"]) <= 1e-12) and all(np.diff(loc["F"]) <= 1e-12)
    slopes = [f["slope"] for f in (loc["fit_G"], loc["fit_F"]) if f]
    rep.add("decay.localization", "localized linearized-operator norms", ok and all(s >= 0.2 for s in slopes),
            hard=False, value=loc)
    tt = tt_star_fit(pipe)
    rep.add("decay.tt-star", "tile pair almost-orthogonality", True, hard=False, fitted=tt)
    gens = []
    for k in range(pipe.forest.n_generations):
        P = pipe.forest.P(k)
        gens.append((k, op_norm(kit.set_matrix(P), "svd") if len(P) else 0.0))
    rep.add("decay.generations", "operators by stopping generation", True, hard=False, value=gens)
    return rep


# ---- appendix suite ------------------------------------------------------------------
def random_profile(rng, n: int) -> np.ndarray:
    """Random amplitude on [0, 1): a mix of bumps, ramps and steps."""
    x = (np.arange(n) + 0.5) / n
    kind = rng.integers(3)
    if kind == 0:
        c, wdt = rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3)
        return np.exp(-((x - c) / wdt) ** 2)
    if kind == 1:
        return x ** rng.uniform(0.5, 2.0)
    a, b = np.sort(rng.uniform(0, 1, 2))
    return ((x >= a) & (x < b)).astype(float) + 0.1


def vdc_sweep(deltas=(1, 4, 16, 64), n_pairs: int = 100, n: int = 4096, seed: int = 0, d: int = 1) -> dict:
    """Ratios lhs/rhs over random (psi, Q) per Delta, plus the ramp and bump decay families."""
    rng = np.random.default_rng(seed)
    J = GridCube(0, (0,), 2)
    ratios = {}
    for D in deltas:
        r = []
        for _ in range(n_pairs):
            psi = random_profile(rng, n)
            c = rng.standard_normal(d)
            Q = PolyClass.from_vec(c, 1, d)
            nq = float(norms(Q.vec, J, "rigorous_upper"))
            Q = Q * ((D - 1) / nq) if nq > 0 and D > 1 else PolyClass.zero(1, d)
            r.append(vdc_bound(psi, J, Q).ratio)
        ratios[D] = r
    x = (np.arange(100_000) + 0.5) / 100_000
    ramp, bump = [], []
    bump_psi = np.exp(-1.0 / np.clip(x * (1 - x), 1e-300, None))
    for D in deltas:
        N = max(D - 1, 0)
        Q = PolyClass.from_vec([float(N)] + [0.0] * (d - 1), 1, d)
        ramp.append(vdc_bound(x, J, Q, n_radii=16).lhs)
        bump.append(vdc_bound(bump_psi, J, Q, n_radii=16).lhs)
    return {"deltas": list(deltas), "ratios": ratios, "ramp_lhs": ramp, "bump_lhs": bump,
            "C_fit": max(max(v) for v in ratios.values())}


def extrapolation_check(g: np.ndarray, p: float = 1.5, q: float = 2.0, weight: float = 1.0) -> dict:
    """Halving chains G_{n+1} = top half of |g| on G_n; report ||g||_{p,inf} / A."""
    a = np.abs(np.asarray(g, float))
    n = len(a)
    starts = [np.ones(n, bool)] + [a >= v for v in np.unique(a[a > 0])]
    A = 0.0
    for G0 in starts:
        G = G0.copy()
        while G.sum() > 0:
            ids = np.flatnonzero(G)
            order = ids[np.argsort(-a[ids], kind="stable")]
            top = np.zeros(n, bool)
            top[order[: len(ids) // 2]] = True
            part = G & ~top
            mu = G.sum() * weight
            A = max(A, weak_lorentz_norm(a * part, q, weight) / mu ** (1 / q - 1 / p))
            G = top
    lhs = weak_lorentz_norm(a, p, weight)
    return {"weak_p": lhs, "A": A, "C_fit": lhs / A if A > 0 else 0.0}


def run_appendix_suite(pipe: Pipeline | None = None, seed: int = 0) -> Report:
    rep = Report(meta={"suite": "appendix", "seed": seed})
    rng = np.random.default_rng(seed)
    J = GridCube(0, (0,), 2)
    zero = [vdc_bound(random_profile(rng, 2048), J, PolyClass.zero(1, 1)).ratio for _ in range(100)]
    rep.add("appendix.vdc-zero", "oscillatory estimate at zero phase", max(zero) <= 10, hard=False,
            value=max(zero))
    sw = vdc_sweep(seed=seed)
    ramp_scaled = [l * D for l, D in zip(sw["ramp_lhs"], sw["deltas"])]
    band = max(ramp_scaled[1:]) / min(ramp_scaled[1:])
    bump_ok = all(b <= 3 * r for b, r in zip(sw["bump_lhs"][1:], sw["ramp_lhs"][1:]))
    rep.add("appendix.vdc-sweep", "oscillatory estimate with Delta sweep", band <= 3 and bump_ok, hard=False,
            value={"ramp_times_delta": ramp_scaled, "bump": sw["bump_lhs"]}, fitted={"C_fit": sw["C_fit"]})
    A = np.zeros(256)
    A[rng.choice(256, 40, replace=False)] = 1
    ex = extrapolation_check(A)
    rep.add("appendix.extrapolation", "weak-norm extrapolation", ex["C_fit"] <= 10, hard=False, value=ex)
    if pipe is not None:
        ml = maximal_localization_sweep(pipe)
        fits = [f for f in (ml.get("fit_G_M_out"), ml.get("fit_out_M_G")) if f]
        mono = all(np.all(np.diff(ml.get(k, [0])) <= 1e-12) for k in ("G_M_out", "out_M_G"))
        rep.add("appendix.maximal-localization", "localized maximal function", mono and all(f["slope"] >= 0.2 for f in fits),
                hard=False, value=ml)
    return rep


# ---- drivers --------------------------------------------------------------------------
def sharp_smooth_fit(pipe: Pipeline, n_f: int = 10, seed: int = 0, phases=None) -> dict:
    """max_x |T_sharp f - T_smooth f| / Mf over random f."""
    rng = np.random.default_rng(seed)
    kit = pipe.kit
    phases = phases if phases is not None else pipe.instance.data.phases
    best = 0.0
    for _ in range(n_f):
        f = rng.standard_normal(kit.n) + 1j * rng.standard_normal(kit.n)
        a, _ = maximal_operator_apply(kit, f, "sharp", phases)
        b, _ = maximal_operator_apply(kit, f, "smooth", phases)
        Mf = hl_maximal(f, pipe.config.ds)
        best = max(best, float(np.max(np.abs(a - b) / Mf)))
    return {"C_fit": best}


def run_suites(config: ExperimentConfig, seed: int | None = None, suites=None) -> tuple[Report, Pipeline]:
    suites = tuple(suites or config.suites)
    inst = generate_instance(config, seed)
    pipe = build_pipeline(inst)
    rep = Report(meta={"config": config.to_dict(), "seed": inst.seed})
    if "structure" in suites:
        rep.extend(run_structure_suite(pipe))
    if "decay" in suites:
        rep.extend(run_decay_suite(pipe))
    if "appendix" in suites:
        rep.extend(run_appendix_suite(pipe, inst.seed))
    return rep, pipe


def run_seeds(config: ExperimentConfig, seeds, fn):
    """Map fn(config, seed) over seeds, threaded when config.threads > 1."""
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            return list(ex.map(lambda s: fn(config, s), seeds))
    return [fn(config, s) for s in seeds]


def bench(config: ExperimentConfig, seed: int | None = None) -> dict:
    inst = generate_instance(config, seed)
    pipe = build_pipeline(inst)
    t0 = time.perf_counter()
    run_structure_suite(pipe)
    t = dict(pipe.timings)
    t["structure_suite"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    pipe.kit.linearized_matrix()
    t["operator_assembly"] = time.perf_counter() - t0
    return {"samples": len(inst.data), "tiles": len(pipe.lattice), "timings": t}


def stable_within(values, rel: float = 0.5) -> bool:
    """All values within +-rel of their median."""
    v = np.asarray(values, float)
    med = np.median(v)
    if med == 0:
        return bool(np.all(v == 0))
    return bool(np.all(np.abs(v - med) <= rel * med))


def all_claims() -> list[str]:
    """Claim names covered by the suites."""
    return sorted({
        "per-cube partition of phase space", "regions over nested cubes are nested or disjoint",
        "strict tile order is a strict partial order", "E sets of one cube are disjoint",
        "0.3/0.7 assignment rule", "0.2/1 ball sandwich", "Whitney property of stopping classes",
        "stopping children support decay", "generations partition the cubes; stopping parents exist",
        "maximal tile sets are antichains above the ratio", "maximal-tile counting function",
        "density is monotone along the order", "heavy sets are down subsets",
        "tree/antichain/residual partition", "antichains are <-incomparable", "trees are convex",
        "4p < top for every tree member", "forest top counting function",
        "trees of a forest are Delta(n)-separated", "boundary parts are up-sets",
        "row tops are pairwise disjoint", "tile adjoint equals conjugate transpose",
        "distinct rows are orthogonal", "tree norm against density^(1/2)",
        "localized linearized-operator norms", "tile pair almost-orthogonality",
        "oscillatory estimate with Delta sweep", "weak-norm extrapolation", "localized maximal function",
    })


__all__ = [name for name in dir() if not name.startswith("_")]
_ = multi_indices
