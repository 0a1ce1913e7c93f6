"""Polynomials modulo constants, cube oscillation norms, Bernstein range enclosures and separated nets.

A class Q is stored by its non-constant coefficients in the monomial basis
x^alpha, 0 < |alpha| <= d.  All norms below are oscillations ``max - min``
over a box, so the pinned-to-zero constant never matters.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .grid import Box, GridCube

log = logging.getLogger(__name__)

MODES = ("sampled", "rigorous_upper", "rigorous_lower")
# relative slack added to floating-point Bernstein enclosures
_ROUND = 1e-12


class PolyMismatchError(ValueError):
    """Degree or dimension of a class does not match the configured (ds, d)."""


class NetCoverageError(RuntimeError):
    """The candidate lattice was too coarse to certify the covering radius."""


@lru_cache(maxsize=None)
def multi_indices(ds: int, d: int) -> tuple[tuple[int, ...], ...]:
    """Exponents 0 < |alpha| <= d, graded then lexicographic (x_1 first)."""
    idx = [a for a in itertools.product(range(d + 1), repeat=ds) if 0 < sum(a) <= d]
    return tuple(sorted(idx, key=lambda a: (sum(a), tuple(-x for x in a))))


def dim_q(ds: int, d: int) -> int:
    return comb(ds + d, d) - 1


@dataclass(frozen=True)
class PolyClass:
    """A real polynomial of degree <= d in ds variables, modulo constants."""

    ds: int
    d: int
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) != dim_q(self.ds, self.d):
            raise PolyMismatchError(
                f"expected {dim_q(self.ds, self.d)} coefficients for ds={self.ds}, d={self.d}, "
                f"got {len(self.coeffs)}"
            )

    @classmethod
    def from_vec(cls, vec, ds: int, d: int) -> "PolyClass":
        return cls(ds, d, tuple(float(v) for v in np.asarray(vec, float).ravel()))

    @classmethod
    def zero(cls, ds: int, d: int) -> "PolyClass":
        return cls(ds, d, (0.0,) * dim_q(ds, d))

    @classmethod
    def monomial(cls, alpha: Sequence[int], scale: float = 1.0) -> "PolyClass":
        alpha = tuple(alpha)
        ds, d = len(alpha), sum(alpha)
        idx = multi_indices(ds, d)
        vec = np.zeros(len(idx))
        vec[idx.index(alpha)] = scale
        return cls.from_vec(vec, ds, d)

    @classmethod
    def from_dict(cls, terms: dict, ds: int, d: int) -> "PolyClass":
        """Build from ``{alpha: coeff}``; a constant term is dropped."""
        idx = multi_indices(ds, d)
        vec = np.zeros(len(idx))
        for alpha, c in terms.items():
            alpha = tuple(alpha) if not isinstance(alpha, int) else (alpha,)
            if sum(alpha) == 0:
                continue
            if len(alpha) != ds or sum(alpha) > d:
                raise PolyMismatchError(f"monomial {alpha} not in degree-{d} space of dim {ds}")
            vec[idx.index(alpha)] += c
        return cls.from_vec(vec, ds, d)

    @property
    def vec(self) -> np.ndarray:
        return np.asarray(self.coeffs, float)

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(zip(multi_indices(self.ds, self.d), self.coeffs))

    def is_zero(self) -> bool:
        return not any(self.coeffs)

    def _check(self, other: "PolyClass") -> None:
        if (self.ds, self.d) != (other.ds, other.d):
            raise PolyMismatchError("classes live in different spaces")

    def __add__(self, other: "PolyClass") -> "PolyClass":
        self._check(other)
        return PolyClass.from_vec(self.vec + other.vec, self.ds, self.d)

    def __sub__(self, other: "PolyClass") -> "PolyClass":
        self._check(other)
        return PolyClass.from_vec(self.vec - other.vec, self.ds, self.d)

    def __neg__(self) -> "PolyClass":
        return PolyClass.from_vec(-self.vec, self.ds, self.d)

    def __mul__(self, a: float) -> "PolyClass":
        return PolyClass.from_vec(a * self.vec, self.ds, self.d)

    __rmul__ = __mul__

    def __call__(self, pts) -> np.ndarray:
        return evaluate(self.vec, pts, self.ds, self.d)


def monomial_values(pts, ds: int, d: int) -> np.ndarray:
    """Matrix V with V[i, k] = pts[i] ** alpha_k."""
    pts = np.asarray(pts, float).reshape(-1, ds)
    idx = multi_indices(ds, d)
    powers = pts[:, :, None] ** np.arange(d + 1)[None, None, :]
    cols = [np.prod([powers[:, i, a[i]] for i in range(ds)], axis=0) for a in idx]
    return np.stack(cols, axis=1) if cols else np.zeros((len(pts), 0))


def evaluate(coeffs, pts, ds: int, d: int) -> np.ndarray:
    """Values of one class (coeffs shape (dimQ,)) or many (shape (m, dimQ)) at points."""
    V = monomial_values(pts, ds, d)
    c = np.asarray(coeffs, float)
    return V @ c.T


# ---------------------------------------------------------------------------
# Bernstein machinery


def _as_box(region) -> Box:
    if isinstance(region, GridCube):
        return region.box
    if isinstance(region, Box):
        return region
    raise TypeError(f"expected GridCube or Box, got {type(region).__name__}")


@lru_cache(maxsize=64)
def _bernstein_change(ds: int, d: int) -> np.ndarray:
    """B[j, k]: Bernstein coefficient k of the tensor monomial t^j on [0,1]^ds."""
    grid = list(itertools.product(range(d + 1), repeat=ds))
    B = np.zeros((len(grid), len(grid)))
    for a, j in enumerate(grid):
        for b, k in enumerate(grid):
            if all(ji <= ki for ji, ki in zip(j, k)):
                B[a, b] = np.prod([comb(ki, ji) / comb(d, ji) for ji, ki in zip(j, k)])
    return B


def _shift_matrix(lo: np.ndarray, w: np.ndarray, d: int) -> np.ndarray:
    """M[alpha, j]: power coefficient of t^j in (lo + w t)^alpha, tensor j in [0, d]^ds."""
    ds = len(lo)
    idx = multi_indices(ds, d)
    grid = list(itertools.product(range(d + 1), repeat=ds))
    M = np.zeros((len(idx), len(grid)))
    for r, alpha in enumerate(idx):
        for c, j in enumerate(grid):
            if all(ji <= ai for ji, ai in zip(j, alpha)):
                M[r, c] = np.prod(
                    [comb(ai, ji) * lo[i] ** (ai - ji) * w[i] ** ji for i, (ai, ji) in enumerate(zip(alpha, j))]
                )
    return M


def _subboxes(box: Box, depth: int) -> list[tuple[np.ndarray, np.ndarray]]:
    lo = np.asarray(box.lo, float)
    w = box.widths
    n = 2**depth
    out = []
    for off in itertools.product(range(n), repeat=box.ds):
        o = np.asarray(off, float)
        out.append((lo + o * w / n, w / n))
    return out


@lru_cache(maxsize=4096)
def _enclosure_matrix(lo: tuple, hi: tuple, d: int, depth: int) -> np.ndarray:
    box = Box(lo, hi)
    B = _bernstein_change(box.ds, d)
    mats = [_shift_matrix(l, w, d) @ B for l, w in _subboxes(box, depth)]
    return np.concatenate(mats, axis=1)


@lru_cache(maxsize=4096)
def _grid_matrix(lo: tuple, hi: tuple, d: int, n: int) -> np.ndarray:
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return monomial_values(pts, len(lo), d).T


@dataclass(frozen=True)
class RangeBound:
    lo: float
    hi: float
    rigorous: bool = True

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("lo must not exceed hi")

    @property
    def width(self) -> float:
        return self.hi - self.lo


def bernstein_range(Q: PolyClass, I, depth: int = 0) -> RangeBound:
    """Tensor-product Bernstein enclosure of the range of Q (constant pinned to 0) over I.

    ``depth`` dyadic subdivisions are applied per axis; the enclosure only shrinks.
    """
    box = _as_box(I)
    if box.ds != Q.ds:
        raise PolyMismatchError("cube and polynomial dimensions differ")
    if Q.d == 0 or Q.is_zero():
        return RangeBound(0.0, 0.0)
    M = _enclosure_matrix(tuple(box.lo), tuple(box.hi), Q.d, depth)
    b = Q.vec @ M
    lo, hi = float(b.min()), float(b.max())
    slack = _ROUND * max(abs(lo), abs(hi), 1e-300)
    return RangeBound(lo - slack, hi + slack)


def default_depth(d: int) -> int:
    return 0 if d <= 1 else 3


def sampled_resolution(ds: int) -> int:
    return {1: 257, 2: 41}.get(ds, 9)


def norms(coeffs, I, mode: str = "rigorous_upper", *, depth: int | None = None, n_sample: int | None = None) -> np.ndarray:
    """Cube norms of a batch of classes; ``coeffs`` has shape (..., dimQ).

    Degree one is handled exactly: ||sum c_i x_i||_box = sum |c_i| w_i.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    box = _as_box(I)
    c = np.asarray(coeffs, float)
    ds = box.ds
    k = c.shape[-1]
    d = _degree_for(ds, k)
    if d == 1:
        return np.abs(c) @ box.widths
    lo, hi = tuple(box.lo), tuple(box.hi)
    if mode == "rigorous_upper":
        depth = default_depth(d) if depth is None else depth
        vals = c @ _enclosure_matrix(lo, hi, d, depth)
        width = vals.max(axis=-1) - vals.min(axis=-1)
        scale = np.abs(vals).max(axis=-1)
        return width * (1 + _ROUND) + _ROUND * scale
    if mode == "rigorous_lower":
        depth = default_depth(d) if depth is None else depth
        vals = c @ _grid_matrix(lo, hi, d, 2**depth + 1)
        width = vals.max(axis=-1) - vals.min(axis=-1)
        scale = np.abs(vals).max(axis=-1)
        return np.maximum(width * (1 - _ROUND) - _ROUND * scale, 0.0)
    n = sampled_resolution(ds) if n_sample is None else n_sample
    vals = c @ _grid_matrix(lo, hi, d, n)
    return vals.max(axis=-1) - vals.min(axis=-1)


@lru_cache(maxsize=None)
def _degree_table(ds: int) -> dict[int, int]:
    return {dim_q(ds, d): d for d in range(0, 12)}


def _degree_for(ds: int, k: int) -> int:
    try:
        return _degree_table(ds)[k]
    except KeyError:
        raise PolyMismatchError(f"{k} coefficients do not form a full degree space in {ds} variables") from None


def cube_norm(Q: PolyClass, I, mode: str = "rigorous_upper", *, ds: int | None = None, d: int | None = None, **kw) -> float:
    """Oscillation max - min of Q over I under the chosen evaluation mode."""
    box = _as_box(I)
    if ds is not None and Q.ds != ds or d is not None and Q.d != d or Q.ds != box.ds:
        raise PolyMismatchError(f"class has (ds, d) = ({Q.ds}, {Q.d})")
    return float(norms(Q.vec, box, mode, **kw))


def ball_norm(Q: PolyClass, x, r: float, n: int | None = None) -> float:
    """Sampled oscillation over the Euclidean ball B(x, r)."""
    x = np.asarray(x, float).reshape(Q.ds)
    if Q.ds == 1:
        n = n or 4097
        pts = np.linspace(x[0] - r, x[0] + r, n)[:, None]
    else:
        n = n or 201
        axes = [np.linspace(xi - r, xi + r, n) for xi in x]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        pts = pts[np.sum((pts - x) ** 2, axis=1) <= r * r * (1 + 1e-12)]
    v = Q(pts)
    return float(v.max() - v.min())


def norm_scaling_ratio(Q: PolyClass, x, r: float, R: float) -> tuple[float, float]:
    """(||Q||_{B(x,R)} / ||Q||_{B(x,r)}, (R/r)^d).

    The second entry is the polynomial-growth envelope; the ratio is also
    bounded below by a constant times R/r.
    """
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    if Q.is_zero():
        raise ValueError("ratio undefined for the zero class")
    small = ball_norm(Q, x, r)
    if small == 0:
        raise ValueError("class is constant on the small ball")
    return ball_norm(Q, x, R) / small, (R / r) ** Q.d


# ---------------------------------------------------------------------------
# separated nets


@dataclass
class PolyNet:
    cube: GridCube
    centers: np.ndarray
    sep: float = 0.7
    covering_radius: float = 0.0
    mesh: float = 0.0
    n_candidates: int = 0
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def ds(self) -> int:
        return self.cube.ds

    @property
    def d(self) -> int:
        return _degree_for(self.cube.ds, self.centers.shape[1])

    def center(self, i: int) -> PolyClass:
        return PolyClass.from_vec(self.centers[i], self.cube.ds, self.d)

    def min_separation(self) -> float:
        """Smallest rigorous lower bound on pairwise distances (inf for < 2 centers)."""
        best = np.inf
        for i in range(len(self.centers) - 1):
            dist = norms(self.centers[i + 1 :] - self.centers[i], self.cube, "rigorous_lower")
            best = min(best, float(dist.min()))
        return best


def lattice_steps(I, dimq: int, d: int, sep: float, mesh_fraction: float = 0.125) -> np.ndarray:
    """Per-coefficient steps with h_alpha ||x^alpha||_I = sep * mesh_fraction * (1 + 1e-9).

    For mesh_fraction = 1/m an axis move of m steps lands (just) beyond sep, so
    greedy nets along a coefficient axis are as dense as a 1D greedy net allows.
    """
    box = _as_box(I)
    mono = norms(np.eye(dimq), box, "rigorous_upper")
    return mesh_fraction * sep * (1 + 1e-9) / mono


def _lattice_in_balls(centers: np.ndarray, radius: float, box: Box, steps: np.ndarray, slack: float, cap: int) -> np.ndarray:
    """Integer lattice points k with ||k*steps - c||_box <= radius for some center c.

    Flood fill along unit steps through points within radius + slack, which keeps
    the visited region connected for convex balls.
    """
    dimq = len(steps)
    found: set[tuple[int, ...]] = set()
    moves = np.concatenate([np.eye(dimq, dtype=np.int64), -np.eye(dimq, dtype=np.int64)])
    for c in centers:
        start = np.round(c / steps).astype(np.int64)
        seen = {tuple(start)}
        frontier = start[None, :]
        while len(frontier):
            cand = (frontier[:, None, :] + moves[None, :, :]).reshape(-1, dimq)
            cand = np.unique(cand, axis=0)
            fresh = np.array([k for k in map(tuple, cand) if k not in seen], dtype=np.int64).reshape(-1, dimq)
            if not len(fresh):
                break
            seen.update(map(tuple, fresh))
            dist = norms(fresh * steps - c, box, "rigorous_lower")
            frontier = fresh[dist <= radius + slack]
            if len(seen) > cap:
                raise NetCoverageError(f"candidate lattice exceeds {cap} points; reduce the region or sep")
        pts = np.array(sorted(seen), dtype=np.int64).reshape(-1, dimq)
        keep = norms(pts * steps - c, box, "rigorous_upper") <= radius
        found.update(map(tuple, pts[keep]))
    return np.array(sorted(found), dtype=np.int64).reshape(-1, dimq)


def build_net(
    I: GridCube,
    region_center: PolyClass | Iterable[PolyClass],
    region_radius: float,
    sep: float = 0.7,
    *,
    extra_candidates: np.ndarray | None = None,
    mesh_fraction: float = 0.125,
    max_candidates: int = 400_000,
) -> PolyNet:
    """Greedy sep-separated net over a candidate lattice in B_I(center, radius).

    Several region centers may be given; the region is then the union of the
    balls.  ``extra_candidates`` (coefficient rows) are merged into the
    candidate set, which is how parent-net centers are guaranteed to lie
    within sep of the child net.  Candidates are visited in lexicographic
    coefficient order; a candidate is accepted when its rigorous lower distance
    to every accepted center is at least sep.
    """
    if region_radius < 0:
        raise ValueError("region_radius must be non-negative")
    if sep <= 0:
        raise ValueError("sep must be positive")
    centers_in = [region_center] if isinstance(region_center, PolyClass) else list(region_center)
    if not centers_in:
        raise ValueError("need at least one region center")
    ds, d = centers_in[0].ds, centers_in[0].d
    if ds != I.ds:
        raise PolyMismatchError("cube and polynomial dimensions differ")
    dimq = dim_q(ds, d)
    C = np.array([q.vec for q in centers_in], float).reshape(-1, dimq)
    steps = lattice_steps(I, dimq, d, sep, mesh_fraction)
    step_norm = float(np.sum(steps * norms(np.eye(dimq), I, "rigorous_upper")))
    if region_radius == 0:
        cand = C.copy()
    else:
        lat = _lattice_in_balls(C, region_radius, I.box, steps, slack=step_norm, cap=max_candidates)
        cand = np.concatenate([lat * steps, C])
    if extra_candidates is not None and len(extra_candidates):
        cand = np.concatenate([cand, np.asarray(extra_candidates, float).reshape(-1, dimq)])
    cand = np.unique(cand, axis=0)  # sorted lexicographically
    accepted: list[np.ndarray] = []
    acc = np.zeros((0, dimq))
    for v in cand:
        if len(acc):
            dist = norms(acc - v, I, "rigorous_lower")
            if dist.min() < sep:
                continue
        accepted.append(v)
        acc = np.asarray(accepted)
    cover = 0.0
    for chunk in np.array_split(cand, max(1, len(cand) // 2048 + 1)):
        if len(chunk):
            dmat = norms(chunk[:, None, :] - acc[None, :, :], I, "rigorous_upper")
            cover = max(cover, float(dmat.min(axis=1).max()))
    mesh = 0.5 * step_norm
    if cover > sep + mesh:
        raise NetCoverageError(f"covering radius {cover:.4f} exceeds {sep} + mesh {mesh:.4f}")
    return PolyNet(I, acc, sep, cover, mesh, len(cand), steps)


def parent_growth_ratio(coeffs: np.ndarray, child: GridCube) -> np.ndarray:
    """rigorous_lower ||Q||_parent / rigorous_upper ||Q||_child for a batch of classes."""
    par = child.parent()
    return norms(coeffs, par, "rigorous_lower") / norms(coeffs, child, "rigorous_upper")
