"""Densities, heavy tiles, forest selection and the labeled tree/antichain decomposition."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .stopping import StoppingForest, maximal_among
from .tiles import TileLattice

log = logging.getLogger(__name__)


class PartitionError(RuntimeError):
    """A tile is missing from, or duplicated in, the decomposition."""


@dataclass
class SelectionParams:
    C0: float = 2.0
    C_sep: float = 1.0
    kappa_sep: float = 4.0
    lambda_steps_per_octave: int = 4


def lambda_grid(n_max: int, steps: int = 4) -> np.ndarray:
    """Dilation factors 2^(j/steps) from 2 up to 2^n_max."""
    j = np.arange(steps, steps * max(n_max, 1) + 1)
    return 2.0 ** (j / steps)


def mirsky_layers(lattice: TileLattice, tiles) -> np.ndarray:
    """Length of the longest <-chain below each tile inside the set (0 = minimal)."""
    t = np.asarray(tiles, np.int64)
    if not len(t):
        return np.zeros(0, np.int64)
    lt = lattice.lt_matrix[np.ix_(t, t)]
    order = np.argsort(lattice.tile_scale[t], kind="stable")
    layer = np.zeros(len(t), np.int64)
    for i in order:
        below = np.flatnonzero(lt[:, i])
        if len(below):
            layer[i] = layer[below].max() + 1
    return layer


def longest_chain(lattice: TileLattice, tiles) -> list[int]:
    """A witness chain of maximal length inside the set."""
    t = np.asarray(tiles, np.int64)
    if not len(t):
        return []
    layer = mirsky_layers(lattice, t)
    lt = lattice.lt_matrix[np.ix_(t, t)]
    i = int(np.argmax(layer))
    chain = [int(t[i])]
    while layer[i] > 0:
        below = np.flatnonzero(lt[:, i] & (layer == layer[i] - 1))
        i = int(below[0])
        chain.append(int(t[i]))
    return chain[::-1]


def is_antichain(lattice: TileLattice, tiles) -> tuple[bool, tuple[int, int] | None]:
    t = np.asarray(tiles, np.int64)
    if len(t) < 2:
        return True, None
    lt = lattice.lt_matrix[np.ix_(t, t)]
    if not lt.any():
        return True, None
    a, b = np.argwhere(lt)[0]
    return False, (int(t[a]), int(t[b]))


def convexity_violations(lattice: TileLattice, members, universe) -> np.ndarray:
    """Tiles p of the universe outside the set with p1 < p < p2 for members p1, p2."""
    m = np.asarray(members, np.int64)
    u = np.asarray(universe, np.int64)
    if not len(m) or not len(u):
        return np.zeros(0, np.int64)
    lt = lattice.lt_matrix
    below = lt[np.ix_(m, u)].any(axis=0)
    above = lt[np.ix_(u, m)].any(axis=1)
    out = below & above & ~np.isin(u, m)
    return u[out]


def is_down_subset(lattice: TileLattice, subset, universe) -> tuple[bool, tuple[int, int] | None]:
    s = np.asarray(subset, np.int64)
    u = np.setdiff1d(np.asarray(universe, np.int64), s)
    if not len(s) or not len(u):
        return True, None
    lt = lattice.lt_matrix[np.ix_(u, s)]
    if not lt.any():
        return True, None
    a, b = np.argwhere(lt)[0]
    return False, (int(u[a]), int(s[b]))


# ---- density --------------------------------------------------------------
def compute_densities(forest: StoppingForest, params: SelectionParams | None = None,
                      monotone: bool = True) -> np.ndarray:
    """dens_k(p) for every tile, k being the tile's own generation.

    Certified lower bound: the sup runs over a finite lambda grid and over the
    pairs certified by the dilated-order certificate.  The monotone pass then
    takes dens(a) = max over a <= b in the same generation.
    """
    params = params or SelectionParams()
    lat = forest.lattice
    idx = forest.index
    n = len(lat)
    dens = np.zeros(n)
    if not n:
        return dens
    gen = forest.tile_gen
    same_gen = gen[:, None] == gen[None, :]
    base = lat.contain & same_gen
    slack = lat.pair_dist
    rho = lat.pair_rho
    vol = lat.tile_side**lat.ds
    for lam in lambda_grid(forest.n_max, params.lambda_steps_per_octave):
        ratio = idx.Ebar_dilated_counts(lam) * idx.data.weight / vol
        ok = base & (slack + lam * rho <= lam)
        cand = np.where(ok, ratio[None, :], 0.0).max(axis=1)
        dens = np.maximum(dens, lam ** -lat.dimq * cand)
    if monotone:
        le = lat.le_matrix & same_gen
        dens = np.where(le, dens[None, :], 0.0).max(axis=1)
    return dens


def heavy_tiles(dens: np.ndarray, forest: StoppingForest, n: int, k: int, C0: float) -> np.ndarray:
    """H_{n,k} = {p in P_k : dens > C0 2^-n}."""
    P = forest.P(k)
    return P[dens[P] > C0 * 2.0**-n]


# ---- per-level selection ----------------------------------------------------
@dataclass
class LevelSelection:
    n: int
    k: int
    heavy: np.ndarray
    maximal: np.ndarray
    C: np.ndarray
    antichains: list[dict] = field(default_factory=list)
    trees: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)


def _tile_key(lat: TileLattice, t: int):
    c = lat.cubes[lat.tile_cube[t]]
    return (c.s, c.corner, int(lat.tile_center[t]))


def select_forests(forest: StoppingForest, dens: np.ndarray, n: int, k: int,
                   params: SelectionParams | None = None) -> LevelSelection:
    """One level of the forest selection, every step replayed on certified relations."""
    params = params or SelectionParams()
    lat = forest.lattice
    P = forest.P(k)
    H = heavy_tiles(dens, forest, n, k, params.C0)
    M = forest.maximal_tiles(n, k)
    out = LevelSelection(n, k, H, M, np.zeros(0, np.int64))
    if not len(H):
        return out

    two_lt_100 = lat.dilated_matrix(100, 2, strict=True)  # [p, m]: 2p < 100m
    C = P[two_lt_100[np.ix_(P, M)].any(axis=1)] if len(M) else np.zeros(0, np.int64)
    out.C = C

    # H \ C: at most n antichains by the chain argument
    rest = np.setdiff1d(H, C)
    if len(rest):
        layer = mirsky_layers(lat, rest)
        height = int(layer.max()) + 1
        if height > n:
            out.diagnostics.append({"check": "chain-guard", "level": n, "height": height,
                                    "witness": longest_chain(lat, rest)})
        for l in range(height):
            out.antichains.append({"source": "outside-C", "j": None, "l": l, "members": rest[layer == l]})

    if not len(C):
        return out
    hundred_le = lat.dilated_matrix(100, None)  # [p, m]: 100p <= m
    B = hundred_le[np.ix_(C, M)].sum(axis=1)
    empty_B = C[B == 0]
    if len(empty_B):
        out.diagnostics.append({"check": "empty-B", "count": int(len(empty_B)), "witness": empty_B[:5].tolist()})
        part = np.intersect1d(empty_B, H)
        layer = mirsky_layers(lat, part)
        for l in range(int(layer.max()) + 1 if len(part) else 0):
            out.antichains.append({"source": "empty-B", "j": None, "l": l, "members": part[layer == l]})
    j_of = np.full(len(C), -1)
    j_of[B > 0] = np.floor(np.log2(B[B > 0])).astype(int)

    meets100 = lat.ball_intersect_matrix(100)
    two_lt_tile = lat.dilated_matrix(2, None, strict=True)
    ten_le_tile = lat.dilated_matrix(10, None)
    four_lt_tile = lat.dilated_matrix(4, None, strict=True)
    L_sep = int(math.ceil(params.C_sep * n))
    for j in sorted(set(j_of[j_of >= 0].tolist())):
        Cj = C[j_of == j]
        # tree-top candidates
        strict_nest = lat.contain[np.ix_(Cj, Cj)] & (lat.tile_scale[Cj][:, None] < lat.tile_scale[Cj][None, :])
        blocked = (strict_nest & meets100[np.ix_(Cj, Cj)]).any(axis=1)
        U = Cj[~blocked]
        D = {int(u): Cj[two_lt_tile[np.ix_(Cj, [u])][:, 0]] for u in U}
        covered = np.unique(np.concatenate([v for v in D.values()] or [np.zeros(0, np.int64)]))
        A_prime = np.setdiff1d(Cj, covered)
        ok, wit = is_antichain(lat, A_prime)
        if ok:
            layers_A = [A_prime]
        else:
            out.diagnostics.append({"check": "A'-antichain", "j": j, "witness": wit})
            lay = mirsky_layers(lat, A_prime)
            layers_A = [A_prime[lay == l] for l in range(int(lay.max()) + 1)]
        for l, part in enumerate(layers_A):
            out.antichains.append({"source": "A'", "j": j, "l": l, "members": np.intersect1d(part, H)})

        U1 = [u for u in U if len(D[int(u)])]
        if not U1:
            continue
        m = len(U1)
        rel = np.zeros((m, m), bool)
        for a, u in enumerate(U1):
            Du = D[int(u)]
            rel[a] = ten_le_tile[np.ix_(Du, U1)].any(axis=0)
        closure = _transitive_closure(rel | rel.T | np.eye(m, dtype=bool))
        equivalence = np.array_equal(rel, closure)
        if not equivalence:
            out.diagnostics.append({"check": "propto-equivalence", "j": j,
                                    "mismatches": int((rel != closure).sum())})
        for a in range(m):
            for b in range(m):
                if rel[a, b]:
                    ua, ub = U1[a], U1[b]
                    if lat.tile_cube[ua] != lat.tile_cube[ub] or not (meets100[ua, ub] or meets100[ub, ua]):
                        out.diagnostics.append({"check": "propto-claim", "j": j, "witness": (int(ua), int(ub))})
        classes = _components(closure)
        trees_j = []
        for cls in classes:
            members_u = [U1[a] for a in cls]
            top = min(members_u, key=lambda t: _tile_key(lat, t))
            T = np.unique(np.concatenate([D[int(u)] for u in members_u]))
            trees_j.append({"top": int(top), "members": T})
        union = np.unique(np.concatenate([t["members"] for t in trees_j]))
        layer = mirsky_layers(lat, union)
        for l in range(L_sep):
            part = union[layer == l]
            if len(part):
                out.antichains.append({"source": "peeled", "j": j, "l": l, "members": np.intersect1d(part, H)})
        keep = union[layer >= L_sep]
        for l, tr in enumerate(trees_j):
            mem = np.intersect1d(np.intersect1d(tr["members"], keep), H)
            bad_top = mem[~four_lt_tile[mem, tr["top"]]] if len(mem) else mem
            if len(bad_top):
                out.diagnostics.append({"check": "tree-top", "j": j, "top": tr["top"],
                                        "witness": bad_top[:5].tolist()})
            out.trees.append({"j": j, "l": l, "top": tr["top"], "members": mem})
    return out


def _transitive_closure(rel: np.ndarray) -> np.ndarray:
    r = rel.copy()
    while True:
        nxt = r | ((r.astype(np.int64) @ r.astype(np.int64)) > 0)
        if np.array_equal(nxt, r):
            return r
        r = nxt


def _components(sym: np.ndarray) -> list[list[int]]:
    seen = np.zeros(len(sym), bool)
    out = []
    for i in range(len(sym)):
        if not seen[i]:
            cls = np.flatnonzero(sym[i])
            seen[cls] = True
            out.append(cls.tolist())
    return out


# ---- assembled decomposition -----------------------------------------------
@dataclass
class Decomposition:
    lattice: TileLattice
    forest: StoppingForest
    dens: np.ndarray
    params: SelectionParams
    trees: list[dict]
    antichains: list[dict]
    residual: np.ndarray
    diagnostics: list[dict]
    rows: dict = field(default_factory=dict)

    @property
    def n_tiles(self) -> int:
        return len(self.lattice)

    def labels(self) -> list[dict]:
        """Per-tile label: kind plus the (n, k, j, l) or antichain id."""
        out: list[dict | None] = [None] * self.n_tiles
        for tr in self.trees:
            for t in tr["members"]:
                out[int(t)] = {"kind": "tree", "tree": tr["id"], "n": tr["n"], "k": tr["k"], "j": tr["j"], "l": tr["l"]}
        for a in self.antichains:
            for t in a["members"]:
                out[int(t)] = {"kind": "antichain", "antichain": a["id"], "n": a["n"], "k": a["k"], "source": a["source"]}
        for t in self.residual:
            out[int(t)] = {"kind": "residual"}
        return out

    def membership_counts(self) -> np.ndarray:
        cnt = np.zeros(self.n_tiles, np.int64)
        for tr in self.trees:
            np.add.at(cnt, tr["members"], 1)
        for a in self.antichains:
            np.add.at(cnt, a["members"], 1)
        np.add.at(cnt, self.residual, 1)
        return cnt

    def check_partition(self) -> tuple[bool, dict | None]:
        cnt = self.membership_counts()
        bad = np.flatnonzero(cnt != 1)
        if len(bad):
            t = int(bad[0])
            return False, {"tile": t, "count": int(cnt[t])}
        return True, None

    def forests(self) -> dict[tuple[int, int, int], list[dict]]:
        out: dict[tuple[int, int, int], list[dict]] = {}
        for tr in self.trees:
            out.setdefault((tr["n"], tr["k"], tr["j"]), []).append(tr)
        return out

    def tree(self, tree_id: int) -> dict:
        return self.trees[tree_id]

    def to_dict(self) -> dict:
        return {
            "trees": [{**{k: v for k, v in t.items() if k not in ("members", "bd", "normal")},
                       "members": np.asarray(t["members"]).tolist(),
                       "bd": np.asarray(t.get("bd", [])).tolist()} for t in self.trees],
            "antichains": [{**{k: v for k, v in a.items() if k != "members"},
                            "members": np.asarray(a["members"]).tolist()} for a in self.antichains],
            "residual": self.residual.tolist(),
            "rows": {f"{n},{k},{j}": rows for (n, k, j), rows in self.rows.items()},
            "density": self.dens.tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def disjointify(forest: StoppingForest, dens: np.ndarray, levels: dict[tuple[int, int], LevelSelection],
                params: SelectionParams) -> Decomposition:
    """Subtract H_{n-1,k} from every level-n piece and assemble the partition."""
    lat = forest.lattice
    trees, antichains, diags = [], [], []
    for (n, k), sel in sorted(levels.items()):
        prev = heavy_tiles(dens, forest, n - 1, k, params.C0) if n > 1 else np.zeros(0, np.int64)
        for d in sel.diagnostics:
            diags.append({"n": n, "k": k, **d})
        for tr in sel.trees:
            mem = np.setdiff1d(tr["members"], prev)
            if len(mem):
                trees.append({"id": len(trees), "n": n, "k": k, "j": tr["j"], "l": tr["l"],
                              "top": tr["top"], "members": mem})
        for a in sel.antichains:
            mem = np.setdiff1d(a["members"], prev)
            if len(mem):
                antichains.append({"id": len(antichains), "n": n, "k": k, "j": a["j"], "l": a["l"],
                                   "source": a["source"], "members": mem})
    residual = []
    n_max = forest.n_max
    for k in range(forest.n_generations):
        P = forest.P(k)
        residual.append(P[dens[P] <= params.C0 * 2.0**-n_max])
    residual = np.concatenate(residual) if residual else np.zeros(0, np.int64)
    dec = Decomposition(lat, forest, dens, params, trees, antichains, np.sort(residual), diags)
    ok, wit = dec.check_partition()
    if not ok:
        raise PartitionError(f"tile decomposition is not a partition: {wit}")
    for tr in dec.trees:
        tr["bd"], tr["normal"] = boundary_split(lat, tr)
    dec.rows = {key: rows_of_forest(lat, trs) for key, trs in dec.forests().items()}
    return dec


def decompose(forest: StoppingForest, params: SelectionParams | None = None) -> Decomposition:
    params = params or SelectionParams()
    dens = compute_densities(forest, params)
    levels = {}
    for k in range(forest.n_generations):
        for n in range(1, forest.n_max + 1):
            levels[(n, k)] = select_forests(forest, dens, n, k, params)
    return disjointify(forest, dens, levels, params)


# ---- boundary, rows, separation -------------------------------------------
def boundary_split(lat: TileLattice, tree: dict) -> tuple[np.ndarray, np.ndarray]:
    """bd = members whose doubled cube leaves the top cube; the rest is normal."""
    top_box = lat.cubes[lat.tile_cube[tree["top"]]].box
    mem = np.asarray(tree["members"], np.int64)
    inside = np.array([top_box.contains_box(lat.cubes[lat.tile_cube[t]].dilate(2)) for t in mem], bool)
    return mem[~inside], mem[inside]


def rows_of_forest(lat: TileLattice, trees: list[dict]) -> list[list[int]]:
    """Greedy rows: repeatedly take a maximal set of disjoint, largest remaining tops."""
    remaining = sorted(trees, key=lambda t: (-lat.tile_scale[t["top"]], _tile_key(lat, t["top"]), t["id"]))
    rows = []
    while remaining:
        row, used, rest = [], [], []
        for t in remaining:
            cube = lat.cubes[lat.tile_cube[t["top"]]]
            if all(not (cube.contains(u) or u.contains(cube)) for u in used):
                row.append(t["id"])
                used.append(cube)
            else:
                rest.append(t)
        rows.append(row)
        remaining = rest
    return rows


def separation_check(lat: TileLattice, tree1: dict, tree2: dict, delta: float):
    """Both clauses of Delta-separation on rigorous lower norms; returns (ok, witness)."""
    from .polyspace import norms

    for a, b in ((tree1, tree2), (tree2, tree1)):
        top = b["top"]
        Itop = lat.cubes[lat.tile_cube[top]]
        for p in np.asarray(a["members"], np.int64):
            Ip = lat.cubes[lat.tile_cube[p]]
            if not Itop.contains(Ip):
                continue
            dist = norms(lat.tile_coeffs[p] - lat.tile_coeffs[top], Ip, "rigorous_lower")
            if dist + 1 <= delta:
                return False, {"tile": int(p), "top": int(top), "Delta": float(dist + 1)}
    return True, None


def achieved_separation(lat: TileLattice, tree1: dict, tree2: dict) -> float:
    """Largest Delta for which the pair is separated (inf when no clause applies)."""
    from .polyspace import norms

    best = np.inf
    for a, b in ((tree1, tree2), (tree2, tree1)):
        top = b["top"]
        Itop = lat.cubes[lat.tile_cube[top]]
        for p in np.asarray(a["members"], np.int64):
            Ip = lat.cubes[lat.tile_cube[p]]
            if Itop.contains(Ip):
                best = min(best, float(norms(lat.tile_coeffs[p] - lat.tile_coeffs[top], Ip, "rigorous_lower")) + 1)
    return best


def separation_target(n: int, params: SelectionParams) -> float:
    return params.kappa_sep ** math.ceil(params.C_sep * n) * 9


def forest_top_multiplicity(forest: StoppingForest, trees: list[dict]) -> int:
    return forest.max_multiplicity([t["top"] for t in trees])


def maximal_tiles(forest: StoppingForest, n: int, k: int) -> np.ndarray:
    return forest.maximal_tiles(n, k)


__all__ = [
    "SelectionParams", "PartitionError", "LevelSelection", "Decomposition", "lambda_grid",
    "mirsky_layers", "longest_chain", "is_antichain", "convexity_violations", "is_down_subset",
    "compute_densities", "heavy_tiles", "select_forests", "disjointify", "decompose",
    "boundary_split", "rows_of_forest", "separation_check", "achieved_separation",
    "separation_target", "forest_top_multiplicity", "maximal_among", "maximal_tiles",
]
