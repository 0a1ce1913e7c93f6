"""Stopping collections: generations of exceptional cubes and the tile generations they induce."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .tiles import SampleIndex, TileLattice

log = logging.getLogger(__name__)


class SupportDecayError(RuntimeError):
    """Stopping children of some F take up more than delta_stop of |F|."""

    def __init__(self, msg: str, cube: int, ratio: float):
        super().__init__(msg)
        self.cube = cube
        self.ratio = ratio


@dataclass
class StoppingParams:
    C_count: float = 1.0
    n_max: int | None = None
    delta_stop: float = 0.5
    max_doublings: int = 24


def default_n_max(n_samples: int) -> int:
    return int(math.ceil(math.log2(max(n_samples, 1)))) + 1


def count_threshold(C_count: float, n) -> np.ndarray:
    n = np.asarray(n, float)
    return C_count * 2.0**n * np.log(n + 1)


class CubeGeometry:
    """Finest-cell bookkeeping for the cubes of a lattice."""

    def __init__(self, lattice: TileLattice):
        self.lattice = lattice
        box = lattice.box
        self.cells = np.flatnonzero(lattice.cube_scale == box.s_min)
        anc = lattice.ancestors[self.cells]  # (n_cells, n_scales)
        self.cell_anc = anc
        self.cell_pos = -np.ones(len(lattice.cubes), np.int64)
        self.cell_pos[self.cells] = np.arange(len(self.cells))
        self.cells_of = [np.flatnonzero(anc[:, lattice.cubes[c].s - box.s_min] == c) for c in range(len(lattice.cubes))]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def multiplicity(self, cube_ids) -> np.ndarray:
        """Per finest cell, the number of listed cubes (with repetition) containing it."""
        cnt = np.zeros(self.n_cells, np.int64)
        for c in cube_ids:
            cnt[self.cells_of[int(c)]] += 1
        return cnt

    def cubes_inside(self, cell_mask: np.ndarray) -> np.ndarray:
        """Ids of all cubes whose every finest cell is flagged."""
        return np.array([c for c in range(len(self.lattice.cubes)) if cell_mask[self.cells_of[c]].all()], np.int64)

    def volume(self, c: int) -> float:
        return self.lattice.cubes[c].volume


def whitney_closure(lattice: TileLattice, cubes) -> np.ndarray:
    """Minimal superset closed under: I in set, I' within 3I, s(I') < s(I) => I' in set.

    Scale-descending sweep adding the scale s-1 cubes inside 3I suffices:
    every lower-scale cube inside 3I has its scale s-1 ancestor inside 3I.
    """
    box = lattice.box
    inset = np.zeros(len(lattice.cubes), bool)
    inset[np.asarray(list(cubes), np.int64)] = True
    for s in range(box.s_max, box.s_min, -1):
        for c in np.flatnonzero(inset & (lattice.cube_scale == s)):
            region = lattice.cubes[c].dilate(3)
            for sub in box.cubes_inside(region, s - 1):
                inset[lattice.cube_id(sub)] = True
    return np.flatnonzero(inset)


def whitney_violations(lattice: TileLattice, cube_mask: np.ndarray) -> list[tuple[int, int]]:
    """Pairs (I, I') breaking the Whitney rule for the flagged cube set."""
    box = lattice.box
    out = []
    for c in np.flatnonzero(cube_mask):
        s = lattice.cubes[c].s
        region = lattice.cubes[c].dilate(3)
        for s2 in range(box.s_min, s):
            for sub in box.cubes_inside(region, s2):
                j = lattice.cube_id(sub)
                if not cube_mask[j]:
                    out.append((int(c), j))
    return out


def maximal_cubes(lattice: TileLattice, cube_ids) -> np.ndarray:
    ids = set(int(c) for c in cube_ids)
    keep = []
    for c in sorted(ids):
        p = int(lattice.parent_id[c])
        covered = False
        while p >= 0:
            if p in ids:
                covered = True
                break
            p = int(lattice.parent_id[p])
        if not covered:
            keep.append(c)
    return np.asarray(keep, np.int64)


def maximal_among(lattice: TileLattice, tiles) -> np.ndarray:
    """<-maximal members of a tile set, by pairwise filtering."""
    t = np.asarray(tiles, np.int64)
    if not len(t):
        return t
    sub = lattice.lt_matrix[np.ix_(t, t)]
    return t[~sub.any(axis=1)]


def counting_function(lattice: TileLattice, tiles, point) -> int:
    """Number of listed tiles whose cube contains the point."""
    pt = np.asarray(point, float).reshape(1, -1)
    return int(sum(bool(lattice.cubes[lattice.tile_cube[t]].contains_points(pt)[0]) for t in tiles))


@dataclass
class StoppingForest:
    lattice: TileLattice
    index: SampleIndex
    params: StoppingParams
    n_max: int
    C_count: float
    generations: list[np.ndarray]
    tilde: list[np.ndarray]
    decay: list[dict] = field(default_factory=list)
    attempts: list[float] = field(default_factory=list)

    @cached_property
    def geometry(self) -> CubeGeometry:
        return CubeGeometry(self.lattice)

    @property
    def n_generations(self) -> int:
        return len(self.generations)

    @cached_property
    def cube_gen(self) -> np.ndarray:
        g = -np.ones(len(self.lattice.cubes), np.int64)
        for k, mask in enumerate(self.tilde):
            g[mask] = k
        return g

    @cached_property
    def tile_gen(self) -> np.ndarray:
        return self.cube_gen[self.lattice.tile_cube]

    def P(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.tile_gen == k)

    def C(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.cube_gen == k)

    def qualifying(self, n: int, tiles) -> np.ndarray:
        t = np.asarray(tiles, np.int64)
        return t[self.index.Ebar_ratio[t] >= 2.0**-n * (1 - 1e-12)]

    def maximal_tiles(self, n: int, k: int) -> np.ndarray:
        """M_{n,k}: <-maximal tiles of P_k with |E-bar(p)|/|I_p| >= 2^-n."""
        if not 0 <= k < self.n_generations:
            return np.zeros(0, np.int64)
        return maximal_among(self.lattice, self.qualifying(n, self.P(k)))

    def max_multiplicity(self, tiles) -> int:
        if not len(tiles):
            return 0
        return int(self.geometry.multiplicity(self.lattice.tile_cube[np.asarray(tiles)]).max())

    def children_of(self, k: int, F: int) -> np.ndarray:
        if k + 1 >= self.n_generations:
            return np.zeros(0, np.int64)
        nxt = self.generations[k + 1]
        return np.array([c for c in nxt if self.lattice.cubes[F].contains(self.lattice.cubes[c])], np.int64)

    def to_dict(self) -> dict:
        return {
            "C_count": self.C_count,
            "n_max": self.n_max,
            "delta_stop": self.params.delta_stop,
            "generations": [g.tolist() for g in self.generations],
            "cube_gen": self.cube_gen.tolist(),
            "attempts": self.attempts,
            "decay": self.decay,
        }


def _build_once(lattice: TileLattice, index: SampleIndex, params: StoppingParams, n_max: int, C_count: float):
    geo = CubeGeometry(lattice)
    box = lattice.box
    top_ids = np.flatnonzero(lattice.cube_scale == box.s_max)
    generations = [top_ids]
    tilde = [np.ones(len(lattice.cubes), bool)]
    decay = []
    ratio = index.Ebar_ratio
    lt = lattice.lt_matrix
    ns = np.arange(1, n_max + 1)
    thr = count_threshold(C_count, ns)
    while True:
        k = len(generations) - 1
        in_tilde = tilde[k][lattice.tile_cube]
        m_tilde = []
        for n in ns:
            cand = np.flatnonzero(in_tilde & (ratio >= 2.0**-n * (1 - 1e-12)))
            m_tilde.append(cand[~lt[np.ix_(cand, cand)].any(axis=1)] if len(cand) else cand)
        anc_at = lattice.ancestors[lattice.tile_cube]
        per_F_bad = {}
        for F in generations[k]:
            sF = lattice.cubes[F].s - box.s_min
            inF = anc_at[:, sF] == F
            counts = np.stack([geo.multiplicity(lattice.tile_cube[Mt[inF[Mt]]]) for Mt in m_tilde])
            per_F_bad[int(F)] = (counts >= thr[:, None]).any(axis=0)
        J = {}
        for F, flag in per_F_bad.items():
            J[F] = geo.cubes_inside(flag) if flag.any() else np.zeros(0, np.int64)
        union = np.unique(np.concatenate([whitney_closure(lattice, j) for j in J.values() if len(j)] or [np.zeros(0, np.int64)]))
        nxt_tilde = np.zeros(len(lattice.cubes), bool)
        nxt_tilde[union] = True
        nxt_F = maximal_cubes(lattice, np.flatnonzero(nxt_tilde))
        Fk = set(int(c) for c in generations[k])
        for F in generations[k]:
            kids = [c for c in nxt_F if lattice.cubes[F].contains(lattice.cubes[c])]
            vol = sum(lattice.cubes[c].volume for c in kids)
            r = vol / lattice.cubes[F].volume
            decay.append({"k": k, "F": int(F), "ratio": r, "n_children": len(kids)})
            if any(int(c) in Fk for c in kids) or r > params.delta_stop:
                raise SupportDecayError(
                    f"stopping children of cube {F} at generation {k} cover {r:.3f} of it", int(F), r)
        if not len(nxt_F):
            return generations, tilde, decay
        generations.append(nxt_F)
        tilde.append(nxt_tilde)


def build_stopping_forest(lattice: TileLattice, index: SampleIndex, params: StoppingParams | None = None,
                          calibrate: bool = True) -> StoppingForest:
    """Generation loop with thresholded counting functions and Whitney closure.

    With ``calibrate`` the count constant is doubled until support decay holds.
    """
    params = params or StoppingParams()
    n_max = params.n_max or default_n_max(len(index.data))
    C = params.C_count
    attempts = []
    for _ in range(params.max_doublings + 1):
        attempts.append(C)
        try:
            gens, tilde, decay = _build_once(lattice, index, params, n_max, C)
            return StoppingForest(lattice, index, params, n_max, C, gens, tilde, decay, attempts)
        except SupportDecayError as err:
            if not calibrate:
                raise
            log.info("support decay failed at C_count=%g (%s); doubling", C, err)
            C *= 2
    raise SupportDecayError("count constant calibration did not converge", -1, float("nan"))
