"""Kernels, scale slices, tile/tree/row operator matrices, maximal operators and norm estimation."""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import ndimage

from .polyspace import PolyClass, monomial_values, norms

# ---- partition of unity -----------------------------------------------------
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _bump(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    m = (v > 0) & (v < 1)
    out[m] = np.exp(-1.0 / (v[m] * (1 - v[m])))
    return out


def _bump_integral(u: np.ndarray) -> np.ndarray:
    """int_0^u exp(-1/(v(1-v))) dv by 64-point Gauss-Legendre on [0, u]."""
    u = np.asarray(u, float)
    v = 0.5 * u[..., None] * (_GL_NODES + 1)
    return 0.5 * u * np.sum(_GL_WEIGHTS * _bump(v), axis=-1)


_BUMP_TOTAL = float(_bump_integral(np.array(1.0)))


def smooth_step(u) -> np.ndarray:
    """0 for u <= 0, 1 for u >= 1, smooth monotone in between."""
    u = np.clip(np.asarray(u, float), 0.0, 1.0)
    flat = np.atleast_1d(u).ravel()
    out = (flat >= 1).astype(float)
    m = (flat > 0) & (flat < 1)
    if m.any():
        # grids repeat distances, so integrate once per distinct value
        vals, inv = np.unique(flat[m], return_inverse=True)
        out[m] = (_bump_integral(vals) / _BUMP_TOTAL)[inv.ravel()]
    return out.reshape(u.shape)


def eta(t) -> np.ndarray:
    """Cutoff equal to 1 on (-inf, 1/4] and 0 on [1/2, inf)."""
    return 1.0 - smooth_step(4.0 * np.asarray(t, float) - 1.0)


@dataclass(frozen=True)
class PartitionOfUnity:
    """psi(t) = eta(t) - eta(D t); sum_s psi(D^-s t) telescopes to 1 on (0, inf)."""

    D: int

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        # clipping removes rounding-level excursions of the quadrature
        return np.clip(eta(t) - eta(self.D * t), 0.0, 1.0)

    @property
    def support(self) -> tuple[float, float]:
        return 1.0 / (4 * self.D), 0.5

    def partial_sum(self, t, s_lo: int, s_hi: int) -> np.ndarray:
        return sum(self(float(self.D) ** -s * np.asarray(t, float)) for s in range(s_lo, s_hi + 1))


def build_partition_of_unity(D: int) -> PartitionOfUnity:
    if D < 2:
        raise ValueError("D must be at least 2")
    return PartitionOfUnity(int(D))


# ---- kernels ------------------------------------------------------------------
@dataclass(frozen=True)
class Kernel:
    name: str
    ds: int
    tau: float
    size_const: float
    _fn: Callable[[np.ndarray], np.ndarray]

    def from_diff(self, diff: np.ndarray) -> np.ndarray:
        """K as a function of x - y (shape (..., ds)); zero on the diagonal."""
        diff = np.asarray(diff, float)
        r = np.linalg.norm(diff, axis=-1)
        out = np.zeros(r.shape)
        m = r > 0
        out[m] = self._fn(diff[m])
        return out

    def __call__(self, x, y) -> np.ndarray:
        return self.from_diff(np.asarray(x, float) - np.asarray(y, float))


def _riesz(diff: np.ndarray) -> np.ndarray:
    ds = diff.shape[-1]
    return diff[..., 0] / np.linalg.norm(diff, axis=-1) ** (ds + 1)


def hilbert_kernel() -> Kernel:
    return Kernel("hilbert", 1, 1.0, 1.0, _riesz)


def riesz_kernel(ds: int) -> Kernel:
    return Kernel("riesz", ds, 1.0, 1.0, _riesz)


def get_kernel(name: str, ds: int) -> Kernel:
    if name == "hilbert":
        if ds != 1:
            raise ValueError("the Hilbert kernel is one-dimensional")
        return hilbert_kernel()
    if name == "riesz":
        return riesz_kernel(ds)
    raise ValueError(f"unknown kernel {name!r}")


def check_kernel_bounds(kernel: Kernel, n: int = 10_000, seed: int = 0) -> dict:
    """Sampled size and Hoelder constants: sup |K||x-y|^ds and the regularity quotient."""
    rng = np.random.default_rng(seed)
    ds = kernel.ds
    x = rng.uniform(-1, 1, (n, ds))
    y = rng.uniform(-1, 1, (n, ds))
    r = np.linalg.norm(x - y, axis=1)
    size = np.abs(kernel(x, y)) * r**ds
    # perturbation with |x - x'| <= |x - y| / 2
    u = rng.standard_normal((n, ds))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    xp = x + u * (0.5 * r * rng.uniform(0, 1, n))[:, None]
    dx = np.linalg.norm(x - xp, axis=1)
    num = np.abs(kernel(x, y) - kernel(xp, y)) + np.abs(kernel(y, x) - kernel(y, xp))
    holder = num * r ** (ds + kernel.tau) / np.maximum(dx, 1e-300) ** kernel.tau
    return {"size": float(size.max()), "holder": float(holder[dx > 0].max())}


@dataclass(frozen=True)
class ScaleSlice:
    kernel: Kernel
    psi: PartitionOfUnity
    s: int

    def from_diff(self, diff) -> np.ndarray:
        diff = np.asarray(diff, float)
        r = np.linalg.norm(diff, axis=-1)
        return self.kernel.from_diff(diff) * self.psi(float(self.psi.D) ** -self.s * r)

    def __call__(self, x, y) -> np.ndarray:
        return self.from_diff(np.asarray(x, float) - np.asarray(y, float))

    @property
    def support(self) -> tuple[float, float]:
        D = float(self.psi.D)
        return D ** (self.s - 1) / 4, D**self.s / 2


# ---- operator matrices ---------------------------------------------------------
@dataclass
class OperatorMatrix:
    data: np.ndarray
    provenance: str

    @property
    def H(self) -> "OperatorMatrix":
        return OperatorMatrix(self.data.conj().T, f"adjoint({self.provenance})")

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.data @ other.data, f"{self.provenance}*{other.provenance}")
        return self.data @ other

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.data + other.data, f"{self.provenance}+{other.provenance}")


def e(t) -> np.ndarray:
    return np.exp(2j * np.pi * np.asarray(t, float))


class OperatorKit:
    """Dense discretized operators on the samples of bound linearizing data.

    Entry (x, y) of every operator carries the quadrature weight of y, so the
    matrices act on sample vectors and the discrete L2 norm is sqrt(weight) |f|.
    """

    def __init__(self, index, kernel: Kernel):
        self.index = index
        self.data = index.data
        self.lattice = index.lattice
        self.kernel = kernel
        if kernel.ds != self.data.ds:
            raise ValueError("kernel dimension differs from the data")
        self.D = self.lattice.box.D
        self.psi = build_partition_of_unity(self.D)
        self.scales = list(range(self.lattice.box.s_min, self.lattice.box.s_max + 1))

    @property
    def n(self) -> int:
        return len(self.data)

    @cached_property
    def diff(self) -> np.ndarray:
        p = self.data.points
        return p[:, None, :] - p[None, :, :]

    @cached_property
    def dist(self) -> np.ndarray:
        return np.linalg.norm(self.diff, axis=-1)

    @cached_property
    def kernel_matrix(self) -> np.ndarray:
        return self.kernel.from_diff(self.diff)

    def scale_matrix(self, s: int) -> np.ndarray:
        return self._scale_cache[s]

    @cached_property
    def _scale_cache(self) -> dict[int, np.ndarray]:
        K = self.kernel_matrix
        return {s: K * self.psi(float(self.D) ** -s * self.dist) * self.data.weight for s in self.scales}

    @cached_property
    def phase_values(self) -> np.ndarray:
        """Q_x evaluated at every sample y: out[x, y] = Q_x(y)."""
        mono = monomial_values(self.data.points, self.data.ds, self.data.d)  # (N, dimQ)
        return self.data.Qx @ mono.T

    @cached_property
    def phase_matrix(self) -> np.ndarray:
        v = self.phase_values
        return e(np.diag(v)[:, None] - v)

    def _rows(self, mask_by_scale: dict[int, np.ndarray]) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for s, mask in mask_by_scale.items():
            if mask.any():
                out[mask] += self.scale_matrix(s)[mask]
        return out

    def tile_matrix(self, t: int) -> OperatorMatrix:
        lat = self.lattice
        s = int(lat.tile_scale[t])
        mask = np.zeros(self.n, bool)
        mask[self.index.compute_E(t)] = True
        return OperatorMatrix(self.phase_matrix * self._rows({s: mask}), f"tile:{t}")

    def tile_adjoint_matrix(self, t: int) -> OperatorMatrix:
        """T_p^* assembled entrywise: (y, x) -> 1_E(x) conj(e(Q_x(x)-Q_x(y)) K_s(x, y)) weight."""
        lat = self.lattice
        s = int(lat.tile_scale[t])
        out = np.zeros((self.n, self.n), complex)
        v = self.phase_values
        for x in self.index.compute_E(t):
            ks = ScaleSlice(self.kernel, self.psi, s).from_diff(self.data.points[x] - self.data.points)
            out[:, x] = np.conj(e(v[x, x] - v[x]) * ks) * self.data.weight
        return OperatorMatrix(out, f"tile*:{t}")

    def masks_for(self, tiles) -> dict[int, np.ndarray]:
        """Per scale, the samples lying in E(p) for some p of the set."""
        lat = self.lattice
        sel = np.zeros(len(lat) + 1, bool)
        sel[np.asarray(list(tiles), np.int64)] = True
        tile_of = self.index.tile_of
        E = self.index.E_mask
        out = {}
        for si, s in enumerate(self.scales):
            out[s] = E[:, si] & sel[tile_of[:, si]]
        return out

    def set_matrix(self, tiles, label: str = "set") -> OperatorMatrix:
        return OperatorMatrix(self.phase_matrix * self._rows(self.masks_for(tiles)), label)

    def linearized_matrix(self) -> OperatorMatrix:
        """The linearized operator summed over each sample's scale window."""
        dt = self.data
        masks = {s: (dt.sigma_lo <= s) & (s <= dt.sigma_hi) for s in self.scales}
        return OperatorMatrix(self.phase_matrix * self._rows(masks), "linearized")

    def truncated_matrix(self, s_lo: int, s_hi: int, phase: PolyClass | None = None) -> np.ndarray:
        """sum_{s_lo..s_hi} K_s, modulated by e(Q(y)) when a phase is given."""
        out = np.zeros((self.n, self.n), complex)
        for s in range(s_lo, s_hi + 1):
            if s in self._scale_cache:
                out += self.scale_matrix(s)
        if phase is not None:
            out = out * e(phase(self.data.points))[None, :]
        return out


def apply(M, f) -> np.ndarray:
    A = M.data if isinstance(M, OperatorMatrix) else np.asarray(M)
    f = np.asarray(f)
    if A.shape[1] != f.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {f.shape}")
    return A @ f


def linearized_oracle(kit: OperatorKit, f) -> np.ndarray:
    """Pointwise double sum over scales and samples (no matrix assembly)."""
    dt = kit.data
    out = np.zeros(kit.n, complex)
    mono = monomial_values(dt.points, dt.ds, dt.d)
    for x in range(kit.n):
        qx = mono @ dt.Qx[x]
        for s in range(dt.sigma_lo[x], dt.sigma_hi[x] + 1):
            ks = ScaleSlice(kit.kernel, kit.psi, s).from_diff(dt.points[x] - dt.points)
            out[x] += np.sum(e(qx[x] - qx) * ks * f) * dt.weight
    return out


# ---- maximal operators ----------------------------------------------------------
def _phase_list(phases, ds: int, d: int) -> list[PolyClass]:
    if phases is None:
        return [PolyClass.zero(ds, d)]
    out = []
    for q in phases:
        out.append(q if isinstance(q, PolyClass) else PolyClass.from_vec(q, ds, d))
    return out


def sharp_radii(D: int, s_lo: int, s_hi: int) -> np.ndarray:
    """Truncation radii on the half-power grid D^(j/2) covering the scale window."""
    j = np.arange(2 * (s_lo - 1) - 4, 2 * s_hi + 2)
    return np.concatenate([[0.0], float(D) ** (j / 2)])


def maximal_operator_apply(kit: OperatorKit, f, mode: str = "smooth", phases=None,
                           window: tuple[int, int] | None = None):
    """sup over a finite phase set and all truncations; returns (values, witness).

    ``smooth`` sums K_s over scale intervals inside the window; ``sharp`` uses
    hard cutoffs r <= |x - y| <= R with r, R on the half-power grid.  The
    witness rows are (phase index, lower, upper) with scales or radii.
    """
    f = np.asarray(f, complex)
    dt = kit.data
    lo, hi = window or (kit.scales[0], kit.scales[-1])
    best = np.zeros(kit.n)
    wit = np.zeros((kit.n, 3))
    for qi, Q in enumerate(_phase_list(phases, dt.ds, dt.d)):
        g = e(Q(dt.points)) * f * dt.weight
        if mode == "smooth":
            parts = np.stack([(kit.kernel_matrix * kit.psi(float(kit.D) ** -s * kit.dist)) @ g
                              for s in range(lo, hi + 1)])
            edges = [float(s) for s in range(lo, hi + 1)]
        elif mode == "sharp":
            radii = sharp_radii(kit.D, lo, hi)
            K = kit.kernel_matrix
            r = kit.dist
            parts = []
            for a, b in zip(radii[:-1], radii[1:]):
                band = (r > a) & (r <= b) if a > 0 else (r > 0) & (r <= b)
                parts.append((K * band) @ g)
            parts = np.stack(parts)
            edges = radii[1:].tolist()
        else:
            raise ValueError(f"unknown mode {mode!r}")
        cs = np.concatenate([np.zeros((1, kit.n), complex), np.cumsum(parts, axis=0)])
        m = len(parts)
        for a in range(m):
            for b in range(a, m):
                val = np.abs(cs[b + 1] - cs[a])
                upd = val > best
                best[upd] = val[upd]
                wit[upd] = (qi, edges[a] if mode == "smooth" else ([0.0] + edges)[a], edges[b])
    return best, wit


def _grid_shape(n: int, ds: int) -> tuple[int, ...]:
    side = int(round(n ** (1.0 / ds)))
    if side**ds != n:
        raise ValueError("samples do not form a full square grid")
    return (side,) * ds


def hl_maximal(f, ds: int = 1, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """sup over all grid-aligned cubes of s cells containing x of the mean of |f|."""
    a = np.abs(np.asarray(f, float) if not np.iscomplexobj(f) else np.abs(f))
    shape = shape or _grid_shape(a.size, ds)
    a = a.reshape(shape)
    side = min(shape)
    best = np.zeros(shape)
    nd = a.ndim
    last = tuple(range(nd, 2 * nd))
    for m in range(1, side + 1):
        # win[i] = mean over the window of m cells starting at i
        win = np.lib.stride_tricks.sliding_window_view(a, (m,) * nd).mean(axis=last)
        # x is covered by windows starting in [x - m + 1, x]
        b = np.pad(win, [(m - 1, m - 1)] * nd, constant_values=-np.inf)
        cover = np.lib.stride_tricks.sliding_window_view(b, (m,) * nd).max(axis=last)
        best = np.maximum(best, cover[tuple(slice(0, s) for s in shape)])
    return best.ravel()


def hl_maximal_q(f, q: float, ds: int = 1, shape=None) -> np.ndarray:
    if q < 1:
        raise ValueError("q must be at least 1")
    return hl_maximal(np.abs(f) ** q, ds, shape) ** (1.0 / q)


def nontangential_truncated(kit: OperatorKit, f, C_nt: float = 1.0,
                            window: tuple[int, int] | None = None) -> np.ndarray:
    """sup over scale intervals sigma and x' with |x - x'| <= C D^min(sigma) of |T_sigma f(x')|."""
    f = np.asarray(f, complex)
    lo, hi = window or (kit.scales[0], kit.scales[-1])
    parts = np.stack([kit.scale_matrix(s) @ f for s in range(lo, hi + 1)])
    cs = np.concatenate([np.zeros((1, kit.n), complex), np.cumsum(parts, axis=0)])
    best = np.zeros(kit.n)
    for a in range(len(parts)):
        near = kit.dist <= C_nt * float(kit.D) ** (lo + a)
        for b in range(a, len(parts)):
            val = np.abs(cs[b + 1] - cs[a])
            best = np.maximum(best, np.where(near, val[None, :], 0.0).max(axis=1))
    return best


def truncated_apply(kit: OperatorKit, f, s_lo: int, s_hi: int) -> np.ndarray:
    return kit.truncated_matrix(s_lo, s_hi) @ np.asarray(f, complex)


def projection_PJ(cubes, points: np.ndarray, f) -> np.ndarray:
    """Average f over each cube of a disjoint family; zero off the union."""
    f = np.asarray(f)
    cubes = list(cubes)
    for i, a in enumerate(cubes):
        for b in cubes[i + 1:]:
            if a.contains(b) or b.contains(a) or (a.s == b.s and a.corner == b.corner):
                raise ValueError(f"cubes {a} and {b} overlap")
    out = np.zeros_like(f, dtype=np.result_type(f, float))
    for c in cubes:
        m = c.contains_points(points)
        if m.any():
            out[m] = f[m].mean()
    return out


# ---- norms ------------------------------------------------------------------------
class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float, value: float):
        super().__init__(msg)
        self.residual = residual
        self.value = value


def op_norm(M, method: str = "power_iteration", tol: float = 1e-8, max_iter: int = 1000,
            seed: int = 0, strict: bool = True) -> float:
    """Largest singular value by power iteration on A^*A or by full SVD."""
    A = M.data if isinstance(M, OperatorMatrix) else np.asarray(M)
    if A.size == 0 or not np.any(A):
        return 0.0
    if method == "svd":
        return float(np.linalg.svd(A, compute_uv=False)[0])
    if method != "power_iteration":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1]) + (1j * rng.standard_normal(A.shape[1]) if np.iscomplexobj(A) else 0)
    v /= np.linalg.norm(v)
    sigma = 0.0
    AH = A.conj().T
    for _ in range(max_iter):
        w = AH @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = float(np.sqrt(nw))
        v = w / nw
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    residual = float(np.linalg.norm(AH @ (A @ v) - sigma**2 * v))
    if strict:
        raise ConvergenceError(f"power iteration did not converge (residual {residual:.3e})", residual, sigma)
    return sigma


def l2_weighted_norm(f, weight: float) -> float:
    return float(np.sqrt(weight) * np.linalg.norm(f))


def weak_lorentz_norm(g, p: float, weight: float = 1.0) -> float:
    """sup over levels of lambda mu(|g| > lambda)^(1/p), mu = weight x counting."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    a = np.abs(np.asarray(g)).ravel()
    if not a.size or not a.any():
        return 0.0
    levels = np.unique(a[a > 0])
    srt = np.sort(a)
    count_ge = a.size - np.searchsorted(srt, levels, side="left")
    return float(np.max(levels * (count_ge * weight) ** (1.0 / p)))


# ---- van der Corput ------------------------------------------------------------------
@dataclass(frozen=True)
class VdcResult:
    lhs: float
    rhs: float
    Delta: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else np.inf)


def _shifted(psi: np.ndarray, shift_cells: np.ndarray) -> np.ndarray:
    """psi(x - y) on the same grid, linear interpolation, zero outside the cube."""
    return ndimage.shift(psi, shift_cells, order=1, mode="constant", cval=0.0, prefilter=False)


def vdc_bound(psi, J, Q: PolyClass, n_dirs: int = 64, n_radii: int = 16) -> VdcResult:
    """(|int e(Q) psi|, sup_{|y| < Delta^(-1/d) l(J)} int |psi - psi(. - y)|, Delta).

    ``psi`` holds samples at the cell centres of a regular grid on the cube J.
    """
    psi = np.asarray(psi, complex)
    box = J.box if hasattr(J, "box") else J
    ds = box.ds
    shape = psi.shape if psi.ndim == ds else _grid_shape(psi.size, ds)
    psi = psi.reshape(shape)
    ell = float(box.widths[0])
    h = ell / shape[0]
    w = h**ds
    axes = [np.asarray(box.lo)[i] + (np.arange(shape[i]) + 0.5) * h for i in range(ds)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    lhs = float(abs(np.sum(e(Q(pts)) * psi.ravel()) * w))
    Delta = float(norms(Q.vec, box, "rigorous_upper")) + 1.0
    ymax = Delta ** (-1.0 / Q.d) * ell
    if ds == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)] + [np.zeros(n_dirs)] * (ds - 2), axis=1)
    radii = ymax * np.arange(1, n_radii + 1) / (n_radii + 1)  # strictly inside the ball
    rhs = 0.0
    re, im = psi.real, psi.imag
    for u in dirs:
        for r in radii:
            shift = u * r / h
            moved = _shifted(re, shift) + 1j * _shifted(im, shift)
            # the shifted copy can leave the sampled window; count the escaped mass
            lost = max(0.0, np.sum(np.abs(psi)) - np.sum(np.abs(moved))) * w
            rhs = max(rhs, float(np.sum(np.abs(psi - moved)) * w) + lost)
    return VdcResult(lhs, rhs, Delta)


# ---- export -----------------------------------------------------------------------
_MAGIC = b"PCOPMAT1"


def export_matrix(M: OperatorMatrix, path) -> None:
    """Binary layout: magic, uint64 rows, uint64 cols, uint32 label length, label, row-major (re, im) float64."""
    A = np.ascontiguousarray(M.data, dtype=np.complex128)
    label = M.provenance.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQI", A.shape[0], A.shape[1], len(label)))
        fh.write(label)
        fh.write(A.view(np.float64).tobytes())


def load_matrix(path) -> OperatorMatrix:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not an operator matrix file")
        rows, cols, nl = struct.unpack("<QQI", fh.read(20))
        label = fh.read(nl).decode()
        raw = np.frombuffer(fh.read(), np.float64)
    return OperatorMatrix(raw.view(np.complex128).reshape(rows, cols).copy(), label)


def export_matrix_json(M: OperatorMatrix, path) -> None:
    doc = {"provenance": M.provenance, "shape": list(M.data.shape),
           "re": M.data.real.ravel().tolist(), "im": M.data.imag.ravel().tolist()}
    with gzip.open(path, "wt") as fh:
        json.dump(doc, fh)


def load_matrix_json(path) -> OperatorMatrix:
    with gzip.open(path, "rt") as fh:
        doc = json.load(fh)
    A = (np.asarray(doc["re"]) + 1j * np.asarray(doc["im"])).reshape(doc["shape"])
    return OperatorMatrix(A, doc["provenance"])
