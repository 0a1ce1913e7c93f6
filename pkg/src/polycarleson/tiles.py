"""Tile lattice: per-cube separated nets linked by parent-to-child assignment maps.

Every region Q(I, Q) is a union of top-scale nearest-center cells, so a region
is represented exactly by the set of top-net indices feeding it.  The label
table ``labels[c][j]`` records which center of cube ``c`` the top cell ``j``
descends to; membership, order and the partition properties all reduce to
lookups in these tables.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .grid import GridCube, WorkingBox
from .polyspace import PolyClass, PolyMismatchError, build_net, dim_q, norms

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


class RegionError(ValueError):
    """A phase lies outside every declared top cell."""


@dataclass
class LinearizingData:
    """Sample points with scale windows and phases drawn from a finite phase set."""

    points: np.ndarray
    weight: float
    sigma_lo: np.ndarray
    sigma_hi: np.ndarray
    phase_idx: np.ndarray
    phases: np.ndarray
    ds: int
    d: int

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, self.ds)
        self.sigma_lo = np.asarray(self.sigma_lo, np.int64)
        self.sigma_hi = np.asarray(self.sigma_hi, np.int64)
        self.phase_idx = np.asarray(self.phase_idx, np.int64)
        self.phases = np.asarray(self.phases, float).reshape(-1, dim_q(self.ds, self.d))
        n = len(self.points)
        if not (len(self.sigma_lo) == len(self.sigma_hi) == len(self.phase_idx) == n):
            raise ValueError("per-sample arrays must have one entry per point")
        if np.any(self.sigma_lo > self.sigma_hi):
            raise ValueError("sigma_lo must not exceed sigma_hi")
        if n and (self.phase_idx.min() < 0 or self.phase_idx.max() >= len(self.phases)):
            raise ValueError("phase index out of range")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def Qx(self) -> np.ndarray:
        return self.phases[self.phase_idx]

    def phase(self, i: int) -> PolyClass:
        return PolyClass.from_vec(self.Qx[i], self.ds, self.d)

    def check_box(self, box: WorkingBox) -> None:
        if np.any(self.sigma_lo < box.s_min) or np.any(self.sigma_hi > box.s_max):
            raise ValueError("scale window outside [s_min, s_max]")
        if len(self) and not np.all(box.box.contains_points(self.points)):
            raise ValueError("sample outside the working box")


def sample_grid(box: WorkingBox, resolution: int) -> tuple[np.ndarray, float]:
    """Centers of the cells of side D^s_min / resolution, and the cell volume."""
    h = float(box.D) ** box.s_min / resolution
    n = box.n_side(box.s_min) * resolution
    ax = (np.arange(n) + 0.5) * h
    pts = np.stack([g.ravel() for g in np.meshgrid(*([ax] * box.ds), indexing="ij")], axis=1)
    return pts, h**box.ds


def empty_data(box: WorkingBox, d: int) -> LinearizingData:
    k = dim_q(box.ds, d)
    return LinearizingData(np.zeros((0, box.ds)), 1.0, [], [], [], np.zeros((1, k)), box.ds, d)


@dataclass(frozen=True)
class Tile:
    cube: GridCube
    center_idx: int
    central: PolyClass
    index: int = -1

    @property
    def s(self) -> int:
        return self.cube.s


@dataclass
class TileParams:
    sep: float = 0.7
    inner: float = 0.3
    outer: float = 0.7
    lambda_max: float = 2.0
    child_lattice: bool = True

    @property
    def region_radius(self) -> float:
        return self.lambda_max + 1.0


def kernel_rho(ds: int, d: int, ell_small: np.ndarray, ell_big: np.ndarray) -> np.ndarray:
    """Upper bound on sup{||S||_I : ||S||_J <= 1} for nested cubes I in J.

    Degree one is exact (the norm is ell * sum |c_i|); otherwise Markov's
    inequality along coordinate lines gives ds d^2 ell_I / ell_J, capped at 1.
    """
    r = np.asarray(ell_small, float) / np.asarray(ell_big, float)
    if d == 1:
        return r
    return np.minimum(1.0, ds * d * d * r)


@dataclass
class TileLattice:
    box: WorkingBox
    d: int
    params: TileParams
    cubes: list[GridCube]
    nets: list[np.ndarray]
    ch: list[np.ndarray | None]
    labels: list[np.ndarray]
    parent_id: np.ndarray
    tile_cube: np.ndarray
    tile_center: np.ndarray
    phases: np.ndarray
    assign_max_dist: float = 0.0
    assign_violations: list = field(default_factory=list)

    # ---- basic lookups ---------------------------------------------------
    @property
    def ds(self) -> int:
        return self.box.ds

    @property
    def dimq(self) -> int:
        return dim_q(self.ds, self.d)

    def __len__(self) -> int:
        return len(self.tile_cube)

    @cached_property
    def cube_index(self) -> dict[tuple[int, tuple[int, ...]], int]:
        return {(c.s, c.corner): i for i, c in enumerate(self.cubes)}

    @cached_property
    def cube_scale(self) -> np.ndarray:
        return np.array([c.s for c in self.cubes], np.int64)

    @cached_property
    def cube_side(self) -> np.ndarray:
        return np.array([c.side for c in self.cubes])

    def cube_id(self, cube: GridCube) -> int:
        return self.cube_index[(cube.s, cube.corner)]

    @cached_property
    def ancestors(self) -> np.ndarray:
        """anc[c, s - s_min] = id of the scale-s ancestor of cube c (-1 below s(c))."""
        n_s = self.box.s_max - self.box.s_min + 1
        anc = -np.ones((len(self.cubes), n_s), np.int64)
        for i, c in enumerate(self.cubes):
            j = i
            while j >= 0:
                anc[i, self.cubes[j].s - self.box.s_min] = j
                j = int(self.parent_id[j])
        return anc

    @cached_property
    def tile_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(c), int(k)): t for t, (c, k) in enumerate(zip(self.tile_cube, self.tile_center))}

    @cached_property
    def tile_coeffs(self) -> np.ndarray:
        if not len(self):
            return np.zeros((0, self.dimq))
        return np.stack([self.nets[c][k] for c, k in zip(self.tile_cube, self.tile_center)])

    @cached_property
    def tile_scale(self) -> np.ndarray:
        return self.cube_scale[self.tile_cube]

    @cached_property
    def tile_side(self) -> np.ndarray:
        return self.cube_side[self.tile_cube]

    @cached_property
    def tile_rep(self) -> np.ndarray:
        """One top-net index inside each tile region."""
        rep = np.empty(len(self), np.int64)
        for t, (c, k) in enumerate(zip(self.tile_cube, self.tile_center)):
            rep[t] = int(np.flatnonzero(self.labels[c] == k)[0])
        return rep

    def tile(self, t: int) -> Tile:
        c = int(self.tile_cube[t])
        k = int(self.tile_center[t])
        return Tile(self.cubes[c], k, PolyClass.from_vec(self.nets[c][k], self.ds, self.d), t)

    def tiles(self) -> list[Tile]:
        return [self.tile(t) for t in range(len(self))]

    def tile_index(self, p: Tile | int) -> int:
        if isinstance(p, (int, np.integer)):
            return int(p)
        if p.index >= 0:
            return p.index
        return self.tile_lookup[(self.cube_id(p.cube), p.center_idx)]

    def tiles_at_cube(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.tile_cube == c)

    def region_cells(self, t: int) -> np.ndarray:
        """Top-net indices whose cells make up the region of tile t."""
        return np.flatnonzero(self.labels[self.tile_cube[t]] == self.tile_center[t])

    # ---- membership --------------------------------------------------------
    def top_nearest(self, coeffs) -> np.ndarray:
        """Index of the nearest top-net center (lowest index on ties)."""
        c = np.asarray(coeffs, float).reshape(-1, self.dimq)
        top = self.nets[0]
        dist = norms(c[:, None, :] - top[None, :, :], self.cubes[0], "rigorous_upper")
        return np.argmin(dist, axis=1)

    def locate(self, Q: PolyClass, cube: GridCube) -> int:
        """Net index at ``cube`` whose region contains Q."""
        self._check(Q)
        j = int(self.top_nearest(Q.vec)[0])
        return int(self.labels[self.cube_id(cube)][j])

    def tile_membership(self, Q: PolyClass, p: Tile | int) -> bool:
        t = self.tile_index(p)
        self._check(Q)
        j = int(self.top_nearest(Q.vec)[0])
        return bool(self.labels[self.tile_cube[t]][j] == self.tile_center[t])

    def membership_batch(self, coeffs, t: int) -> np.ndarray:
        j = self.top_nearest(coeffs)
        return self.labels[self.tile_cube[t]][j] == self.tile_center[t]

    def in_declared_region(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, float).reshape(-1, self.dimq)
        dist = norms(c[:, None, :] - self.phases[None, :, :], self.cubes[0], "rigorous_upper")
        return dist.min(axis=1) <= self.params.region_radius

    def _check(self, Q: PolyClass) -> None:
        if (Q.ds, Q.d) != (self.ds, self.d):
            raise PolyMismatchError("phase does not match the lattice polynomial space")

    # ---- order -------------------------------------------------------------
    @cached_property
    def contain(self) -> np.ndarray:
        """contain[a, b] = I_a subset of I_b."""
        sa = self.tile_scale - self.box.s_min
        anc_at_b = self.ancestors[self.tile_cube][:, sa]  # anc_at_b[a, b] = ancestor of I_a at s(b)
        return anc_at_b == self.tile_cube[None, :]

    @cached_property
    def le_matrix(self) -> np.ndarray:
        """le[a, b] = (a <= b): I_a within I_b and Q(b) within Q(a)."""
        lab = np.stack([self.labels[c] for c in self.tile_cube]) if len(self) else np.zeros((0, 0), int)
        hit = lab[:, self.tile_rep] == self.tile_center[:, None] if len(self) else lab
        return self.contain & hit

    @cached_property
    def lt_matrix(self) -> np.ndarray:
        strict = self.tile_scale[:, None] < self.tile_scale[None, :]
        return self.le_matrix & strict

    def order_le(self, p1, p2) -> bool:
        return bool(self.le_matrix[self.tile_index(p1), self.tile_index(p2)])

    def order_lt(self, p1, p2) -> bool:
        return bool(self.lt_matrix[self.tile_index(p1), self.tile_index(p2)])

    # ---- dilated tiles -----------------------------------------------------
    @cached_property
    def pair_dist(self) -> np.ndarray:
        """dist[a, b] = rigorous upper ||Q_b - Q_a||_{I_a} where I_a within I_b, else inf."""
        n = len(self)
        out = np.full((n, n), np.inf)
        C = self.tile_coeffs
        for c in np.unique(self.tile_cube):
            rows = np.flatnonzero(self.tile_cube == c)
            cols = np.flatnonzero(self.contain[rows[0]])
            diff = C[cols][None, :, :] - C[rows][:, None, :]
            out[np.ix_(rows, cols)] = norms(diff, self.cubes[c], "rigorous_upper")
        return out

    @cached_property
    def pair_rho(self) -> np.ndarray:
        return kernel_rho(self.ds, self.d, self.tile_side[:, None], self.tile_side[None, :])

    def dilated_matrix(self, a: float, b: float | None, strict: bool = False) -> np.ndarray:
        """Certified-true matrix for ``a p1 <= b p2`` (``<`` when strict).

        b = None stands for the tile region itself, which sits inside the
        radius-1 ball.  Certificate: ||Q_2 - Q_1||_{I_1} + b rho <= a.
        """
        bb = 1.0 if b is None else float(b)
        ok = self.contain & (self.pair_dist + bb * self.pair_rho <= a)
        if strict:
            ok &= self.tile_scale[:, None] < self.tile_scale[None, :]
        return ok

    def ball_intersect_matrix(self, radius: float) -> np.ndarray:
        """Certified B_{I_a}(Q_a, r) meets B_{I_b}(Q_b, r) for I_a within I_b.

        Searches the segment from Q_b to Q_a: a point t of the way is inside
        both balls when t ||D||_{I_b} <= r and (1 - t) ||D||_{I_a} <= r.
        """
        n = len(self)
        dist_a = self.pair_dist
        out = np.zeros((n, n), bool)
        C = self.tile_coeffs
        for cb in np.unique(self.tile_cube):
            cols = np.flatnonzero(self.tile_cube == cb)
            rows = np.flatnonzero(self.contain[:, cols[0]])
            diff = C[cols][None, :, :] - C[rows][:, None, :]
            dist_b = norms(diff, self.cubes[cb], "rigorous_upper")
            da = dist_a[np.ix_(rows, cols)]
            with np.errstate(divide="ignore"):
                ok = radius / np.maximum(dist_b, 1e-300) + radius / np.maximum(da, 1e-300) >= 1
            out[np.ix_(rows, cols)] = ok
        return out

    def dilated_le(self, lam: float, p1, p2, *, explain: bool = False):
        """Decide ``lam p1 <= lam p2``; undecided answers resolve to False.

        With ``explain`` returns (decision, flag) where flag is one of
        'certified-true', 'certified-false' or 'undecided'.
        """
        if lam < 1:
            raise ValueError("dilation factor must be at least 1")
        a, b = self.tile_index(p1), self.tile_index(p2)
        flag = self._dilated_flag(lam, a, lam, b)
        ok = flag == "certified-true"
        return (ok, flag) if explain else ok

    def _dilated_flag(self, a_fac: float, a: int, b_fac: float, b: int, n_dirs: int = 64) -> str:
        if not self.contain[a, b]:
            return "certified-false"
        if self.pair_dist[a, b] + b_fac * self.pair_rho[a, b] <= a_fac:
            return "certified-true"
        # refutation: points of the outer ball must lie in the inner one
        rng = np.random.default_rng(1234 + 7 * a + 13 * b)
        dirs = np.concatenate([np.eye(self.dimq), -np.eye(self.dimq), rng.standard_normal((n_dirs, self.dimq))])
        I1, I2 = self.cubes[self.tile_cube[a]], self.cubes[self.tile_cube[b]]
        dirs = dirs / norms(dirs, I2, "rigorous_upper")[:, None]
        pts = self.tile_coeffs[b] + b_fac * dirs
        far = norms(pts - self.tile_coeffs[a], I1, "rigorous_lower") > a_fac
        return "certified-false" if far.any() else "undecided"

    # ---- sample sets -------------------------------------------------------
    def bind(self, data: LinearizingData) -> "SampleIndex":
        return SampleIndex(self, data)

    # ---- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "box": {"D": self.box.D, "ds": self.ds, "s_min": self.box.s_min, "s_max": self.box.s_max},
            "d": self.d,
            "params": vars(self.params),
            "cubes": [[c.s, list(c.corner)] for c in self.cubes],
            "parent_id": self.parent_id.tolist(),
            "nets": [n.tolist() for n in self.nets],
            "ch": [None if m is None else m.tolist() for m in self.ch],
            "tiles": [[int(c), int(k)] for c, k in zip(self.tile_cube, self.tile_center)],
            "phases": self.phases.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TileLattice":
        if doc.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported lattice snapshot version {doc.get('version')}")
        box = WorkingBox(**doc["box"])
        d = doc["d"]
        k = dim_q(box.ds, d)
        cubes = [GridCube(s, tuple(c), box.D) for s, c in doc["cubes"]]
        nets = [np.asarray(n, float).reshape(-1, k) for n in doc["nets"]]
        ch = [None if m is None else np.asarray(m, np.int64) for m in doc["ch"]]
        parent_id = np.asarray(doc["parent_id"], np.int64)
        labels = _labels_from_ch(nets, ch, parent_id)
        tiles = np.asarray(doc["tiles"], np.int64).reshape(-1, 2)
        return cls(box, d, TileParams(**doc["params"]), cubes, nets, ch, labels, parent_id,
                   tiles[:, 0], tiles[:, 1], np.asarray(doc["phases"], float).reshape(-1, k))


def _labels_from_ch(nets, ch, parent_id) -> list[np.ndarray]:
    labels = [np.arange(len(nets[0]))]
    for c in range(1, len(nets)):
        labels.append(ch[c][labels[parent_id[c]]])
    return labels


def assign_children(parent_centers: np.ndarray, child_net: np.ndarray, cube: GridCube,
                    inner: float = 0.3, outer: float = 0.7) -> tuple[np.ndarray, float, list[int]]:
    """The map ch(I, .): parent-net center -> child-net center.

    A child center within ``inner`` of the parent center wins outright;
    otherwise the nearest child center is taken (lowest index on ties).
    Returns the map, the largest assigned distance and the parents that ended
    farther than ``outer`` from their child center.
    """
    dist = norms(parent_centers[:, None, :] - child_net[None, :, :], cube, "rigorous_upper")
    near = np.argmin(dist, axis=1)
    close = dist <= inner
    has_close = close.any(axis=1)
    first_close = np.argmax(close, axis=1)
    assign = np.where(has_close, first_close, near)
    d_assigned = dist[np.arange(len(assign)), assign]
    bad = np.flatnonzero(d_assigned > outer).tolist()
    return assign, float(d_assigned.max()) if len(assign) else 0.0, bad


def build_tile_lattice(box: WorkingBox, data: LinearizingData, params: TileParams | None = None) -> TileLattice:
    """Top-down construction of nets, assignment maps and the lazily restricted tile set."""
    params = params or TileParams()
    data.check_box(box)
    ds, d = data.ds, data.d
    if ds != box.ds:
        raise PolyMismatchError("data and box dimensions differ")
    phases = np.unique(data.phases, axis=0)
    phase_polys = [PolyClass.from_vec(v, ds, d) for v in phases]
    R = params.region_radius

    cubes = box.all_cubes()  # top first, then scale by scale
    index = {(c.s, c.corner): i for i, c in enumerate(cubes)}
    parent_id = np.array([-1 if c.s == box.s_max else index[(c.s + 1, c.parent().corner)] for c in cubes], np.int64)

    nets: list[np.ndarray] = []
    chs: list[np.ndarray | None] = []
    worst = 0.0
    violations = []
    for i, c in enumerate(cubes):
        if parent_id[i] < 0:
            net = build_net(c, phase_polys, R, params.sep)
            nets.append(net.centers)
            chs.append(None)
            continue
        pc = nets[parent_id[i]]
        if params.child_lattice:
            net = build_net(c, phase_polys, R, params.sep, extra_candidates=pc)
        else:
            net = build_net(c, phase_polys, 0.0, params.sep, extra_candidates=pc)
        assign, dmax, bad = assign_children(pc, net.centers, c, params.inner, params.outer)
        worst = max(worst, dmax)
        violations.extend((i, b) for b in bad)
        nets.append(net.centers)
        chs.append(assign)
    labels = _labels_from_ch(nets, chs, parent_id)

    # lazy restriction: nonempty regions near some phase
    tc, tk = [], []
    for i, c in enumerate(cubes):
        used = np.unique(labels[i])
        dist = norms(nets[i][used][:, None, :] - phases[None, :, :], c, "rigorous_upper")
        keep = used[dist.min(axis=1) <= R]
        tc.extend([i] * len(keep))
        tk.extend(keep.tolist())
    if violations:
        log.warning("%d parent centers assigned farther than %.2f", len(violations), params.outer)
    lat = TileLattice(box, d, params, cubes, nets, chs, labels, parent_id,
                      np.asarray(tc, np.int64), np.asarray(tk, np.int64), phases, worst, violations)
    return lat


class SampleIndex:
    """Per-sample tile memberships of a lattice bound to linearizing data."""

    def __init__(self, lattice: TileLattice, data: LinearizingData):
        if (data.ds, data.d) != (lattice.ds, lattice.d):
            raise PolyMismatchError("data and lattice spaces differ")
        self.lattice = lattice
        self.data = data
        box = lattice.box
        n = len(data)
        self.scales = np.arange(box.s_min, box.s_max + 1)
        top_of_phase = lattice.top_nearest(data.phases) if len(data.phases) else np.zeros(0, np.int64)
        self.top_cell = top_of_phase[data.phase_idx] if n else np.zeros(0, np.int64)
        cube_of = np.zeros((n, len(self.scales)), np.int64)
        tile_of = -np.ones((n, len(self.scales)), np.int64)
        for si, s in enumerate(self.scales):
            ell = float(box.D) ** s
            corners = np.floor(data.points / ell).astype(np.int64)
            ids = np.array([lattice.cube_index[(int(s), tuple(cn))] for cn in corners], np.int64) if n else np.zeros(0, np.int64)
            cube_of[:, si] = ids
            for x in range(n):
                c = ids[x]
                k = int(lattice.labels[c][self.top_cell[x]])
                tile_of[x, si] = lattice.tile_lookup.get((int(c), k), -1)
        self.cube_of = cube_of
        self.tile_of = tile_of

    def _si(self, s: int) -> int:
        return int(s - self.lattice.box.s_min)

    def compute_E(self, p) -> np.ndarray:
        t = self.lattice.tile_index(p)
        s = int(self.lattice.tile_scale[t])
        dt = self.data
        m = (self.tile_of[:, self._si(s)] == t) & (dt.sigma_lo <= s) & (s <= dt.sigma_hi)
        return np.flatnonzero(m)

    def compute_Ebar(self, p) -> np.ndarray:
        t = self.lattice.tile_index(p)
        s = int(self.lattice.tile_scale[t])
        m = (self.tile_of[:, self._si(s)] == t) & (s <= self.data.sigma_hi)
        return np.flatnonzero(m)

    def compute_E_dilated(self, lam: float, p, lower_scale: bool = False) -> np.ndarray:
        """Samples in I_p, with ||Q_x - Q_p||_{I_p} <= lam and s(p) <= sigma_hi(x).

        ``lower_scale`` additionally imposes sigma_lo(x) <= s(p).
        """
        lat = self.lattice
        t = lat.tile_index(p)
        s = int(lat.tile_scale[t])
        c = int(lat.tile_cube[t])
        inside = self.cube_of[:, self._si(s)] == c
        dist = norms(self.data.phases - lat.tile_coeffs[t], lat.cubes[c], "rigorous_upper")
        m = inside & (dist[self.data.phase_idx] <= lam) & (s <= self.data.sigma_hi)
        if lower_scale:
            m &= self.data.sigma_lo <= s
        return np.flatnonzero(m)

    @cached_property
    def E_mask(self) -> np.ndarray:
        """E_mask[x, si]: x lies in E of the tile tile_of[x, si]."""
        s = self.scales[None, :]
        return (self.tile_of >= 0) & (self.data.sigma_lo[:, None] <= s) & (s <= self.data.sigma_hi[:, None])

    @cached_property
    def Ebar_mask(self) -> np.ndarray:
        s = self.scales[None, :]
        return (self.tile_of >= 0) & (s <= self.data.sigma_hi[:, None])

    @cached_property
    def E_counts(self) -> np.ndarray:
        return self._count(self.E_mask)

    @cached_property
    def Ebar_counts(self) -> np.ndarray:
        return self._count(self.Ebar_mask)

    def _count(self, mask) -> np.ndarray:
        cnt = np.zeros(len(self.lattice), np.int64)
        t = self.tile_of[mask]
        np.add.at(cnt, t, 1)
        return cnt

    @cached_property
    def Ebar_ratio(self) -> np.ndarray:
        """|E-bar(p)| / |I_p|."""
        lat = self.lattice
        return self.Ebar_counts * self.data.weight / lat.tile_side**lat.ds

    @cached_property
    def phase_counts(self) -> np.ndarray:
        """cnt[t, k] = #samples in I_t with phase k and s(t) <= sigma_hi."""
        lat = self.lattice
        K = len(self.data.phases)
        cnt = np.zeros((len(lat), K), np.int64)
        cube_to_tiles: dict[int, np.ndarray] = {}
        for c in np.unique(lat.tile_cube):
            cube_to_tiles[int(c)] = np.flatnonzero(lat.tile_cube == c)
        for si, s in enumerate(self.scales):
            ok = s <= self.data.sigma_hi
            per_cube = np.zeros((len(lat.cubes), K), np.int64)
            np.add.at(per_cube, (self.cube_of[ok, si], self.data.phase_idx[ok]), 1)
            for c, ts in cube_to_tiles.items():
                if lat.cubes[c].s == s:
                    cnt[ts] = per_cube[c]
        return cnt

    @cached_property
    def phase_dist(self) -> np.ndarray:
        """dist[t, k] = rigorous upper ||phase_k - Q_t||_{I_t}."""
        lat = self.lattice
        out = np.zeros((len(lat), len(self.data.phases)))
        for c in np.unique(lat.tile_cube):
            ts = np.flatnonzero(lat.tile_cube == c)
            diff = self.data.phases[None, :, :] - lat.tile_coeffs[ts][:, None, :]
            out[ts] = norms(diff, lat.cubes[c], "rigorous_upper")
        return out

    def Ebar_dilated_counts(self, lam: float) -> np.ndarray:
        """|E-bar(lam p)| as sample counts, for every tile."""
        return np.sum(self.phase_counts * (self.phase_dist <= lam), axis=1)
