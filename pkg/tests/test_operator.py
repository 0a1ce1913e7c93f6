from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycarleson.grid import GridCube
from polycarleson.operator import (ConvergenceError, apply, build_partition_of_unity, check_kernel_bounds, e,
                                   export_matrix, export_matrix_json, get_kernel, hl_maximal, hl_maximal_q,
                                   linearized_oracle, load_matrix, load_matrix_json, maximal_operator_apply,
                                   nontangential_truncated, op_norm, projection_PJ, vdc_bound, weak_lorentz_norm)
from polycarleson.polyspace import PolyClass

UNIT = GridCube(0, (0,), 2)


@pytest.mark.parametrize("D", [4, 8, 16])
def test_partition_of_unity(D):
    psi = build_partition_of_unity(D)
    assert psi.partial_sum(1 / 3, -6, 6) == pytest.approx(1.0, abs=1e-12)
    lo, hi = psi.support
    t = np.concatenate([np.linspace(0, lo, 50), np.linspace(hi, 3, 50)])
    assert np.all(psi(t) == 0)
    grid = np.linspace(0, 1, 10_000)
    v = psi(grid)
    assert np.all(v >= 0) and np.all(v <= 1)


def test_kernel_bounds():
    b = check_kernel_bounds(get_kernel("hilbert", 1))
    assert b["size"] == pytest.approx(1.0, rel=1e-9)
    assert np.isfinite(b["holder"])
    with pytest.raises(ValueError):
        get_kernel("hilbert", 2)


def test_tile_matrix_basics(default_pipe):
    kit, lat, idx = default_pipe.kit, default_pipe.lattice, default_pipe.index
    empty = [t for t in range(len(lat)) if len(idx.compute_E(t)) == 0]
    assert not np.any(kit.tile_matrix(empty[0]).data)
    rng = np.random.default_rng(0)
    for t in rng.choice(len(lat), 10, replace=False):
        A = kit.tile_matrix(int(t)).data
        assert np.array_equal(kit.tile_adjoint_matrix(int(t)).data, A.conj().T) or \
            np.abs(kit.tile_adjoint_matrix(int(t)).data - A.conj().T).max() <= 1e-15
        assert np.array_equal(kit.set_matrix([int(t)]).data, A)


def test_single_scale_hilbert_quadrature(default_pipe):
    # independent summation: sum_y K(x - y) psi(D^-s |x - y|) e(Q_x(x) - Q_x(y)) f(y) w
    kit, lat, idx = default_pipe.kit, default_pipe.lattice, default_pipe.index
    data = default_pipe.instance.data
    t = next(t for t in range(len(lat)) if len(idx.compute_E(t)) > 0 and lat.tile_scale[t] == 1)
    s = 1
    f = (data.points[:, 0] < 20).astype(float)
    psi = build_partition_of_unity(lat.box.D)
    out = np.zeros(len(data), complex)
    for x in idx.compute_E(t):
        Q = data.phase(int(x))
        for y in range(len(data)):
            dxy = data.points[x, 0] - data.points[y, 0]
            if dxy == 0:
                continue
            K = 1.0 / dxy * float(psi(lat.box.D ** -s * abs(dxy)))
            out[x] += K * e(Q(data.points[x:x + 1])[0] - Q(data.points[y:y + 1])[0]) * f[y] * data.weight
    assert np.abs(apply(kit.tile_matrix(t), f) - out).max() <= 1e-10


def test_set_matrix_additivity_and_linearized(default_pipe):
    kit, lat = default_pipe.kit, default_pipe.lattice
    rng = np.random.default_rng(1)
    perm = rng.permutation(len(lat))
    a, b = perm[:30], perm[30:60]
    assert np.abs(kit.set_matrix(np.concatenate([a, b])).data
                  - kit.set_matrix(a).data - kit.set_matrix(b).data).max() <= 1e-13
    f = rng.standard_normal(kit.n) + 1j * rng.standard_normal(kit.n)
    full = apply(kit.set_matrix(range(len(lat))), f)
    assert np.abs(full - linearized_oracle(kit, f)).max() <= 1e-10


def test_maximal_operator(default_pipe):
    kit = default_pipe.kit
    vals, _ = maximal_operator_apply(kit, np.zeros(kit.n))
    assert np.all(vals == 0)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(kit.n)
    vals, wit = maximal_operator_apply(kit, f, "smooth", phases=None, window=(1, 1))
    assert np.allclose(vals, np.abs(kit.scale_matrix(1) @ f), atol=1e-13)
    assert np.all(wit[:, 1] == 1) and np.all(wit[:, 2] == 1)


def test_sharp_minus_smooth_controlled_by_maximal(default_pipe):
    from polycarleson.harness import sharp_smooth_fit

    fit = sharp_smooth_fit(default_pipe, n_f=3)
    assert 0 < fit["C_fit"] < 10


def test_hardy_littlewood():
    assert np.allclose(hl_maximal(np.full(32, 2.5)), 2.5)
    rng = np.random.default_rng(3)
    f = rng.uniform(0, 1, 40)
    assert np.allclose(hl_maximal_q(f, 1.0), hl_maximal(f))
    # single-cell indicator at i0: best window covering x has length |x - i0| + 1
    n, i0 = 33, 10
    g = np.zeros(n)
    g[i0] = 1
    brute = np.array([max(g[a:b + 1].mean() for a in range(0, x + 1) for b in range(x, n))
                      for x in range(n)])
    assert np.allclose(hl_maximal(g), brute)
    assert np.allclose(brute, 1.0 / (np.abs(np.arange(n) - i0) + 1))


def test_hardy_littlewood_2d():
    g = np.zeros((6, 6))
    g[2, 3] = 1
    M = hl_maximal(g.ravel(), 2).reshape(6, 6)
    assert M[2, 3] == 1 and M[0, 0] == pytest.approx(1 / 16)


def test_nontangential(default_pipe):
    kit = default_pipe.kit
    assert np.all(nontangential_truncated(kit, np.zeros(kit.n)) == 0)
    rng = np.random.default_rng(4)
    f = rng.standard_normal(kit.n)
    one = nontangential_truncated(kit, f, C_nt=0.0, window=(1, 1))
    assert np.allclose(one, np.abs(kit.scale_matrix(1) @ f))
    nt = nontangential_truncated(kit, f, C_nt=1.0)
    S = kit.scales
    for _ in range(100):
        lo = int(rng.integers(S[0], S[-1] + 1))
        hi = int(rng.integers(lo, S[-1] + 1))
        val = np.abs(sum(kit.scale_matrix(s) for s in range(lo, hi + 1)) @ f)
        assert np.all(val <= nt + 1e-12)


def test_projection(default_pipe):
    pts = default_pipe.instance.data.points
    box = default_pipe.lattice.box
    cubes = [box.cube(1, (0,)), box.cube(0, (9,)), box.cube(1, (3,))]
    union = np.any([c.contains_points(pts) for c in cubes], axis=0)
    P = projection_PJ(cubes, pts, np.full(len(pts), 3.0))
    assert np.all(P[union] == 3.0) and np.all(P[~union] == 0)
    rng = np.random.default_rng(5)
    f = rng.standard_normal(len(pts))
    Pf = projection_PJ(cubes, pts, f)
    assert np.allclose(projection_PJ(cubes, pts, Pf), Pf)
    assert np.linalg.norm(Pf) <= np.linalg.norm(f) + 1e-12
    with pytest.raises(ValueError):
        projection_PJ([box.cube(1, (0,)), box.cube(0, (3,))], pts, f)


def test_op_norm():
    assert op_norm(np.eye(7)) == pytest.approx(1.0, abs=1e-8)
    assert op_norm(np.zeros((4, 3))) == 0.0
    rng = np.random.default_rng(6)
    for _ in range(5):
        A = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        assert op_norm(A) == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], abs=1e-6)
    with pytest.raises(ConvergenceError):
        op_norm(np.diag([1.0, 1.0 - 1e-9]) @ rng.standard_normal((2, 2)), max_iter=1, tol=1e-16)


def test_vdc_zero_phase():
    rng = np.random.default_rng(7)
    psi = rng.uniform(0, 1, 1000)
    r = vdc_bound(psi, UNIT, PolyClass.zero(1, 1))
    assert r.Delta == 1.0
    assert r.lhs <= np.abs(psi).mean() + 1e-15 and math.isfinite(r.ratio)
    ind = vdc_bound(np.ones(1000), UNIT, PolyClass.zero(1, 1))
    assert ind.lhs == pytest.approx(1.0) and ind.rhs >= 1.0 and ind.ratio <= 1.0


def test_vdc_bump_with_growing_frequency():
    n = 100_000
    x = (np.arange(n) + 0.5) / n
    bump = np.exp(-1.0 / np.clip(x * (1 - x), 1e-300, None))
    ratios = []
    for N in (1, 4, 16, 64):
        r = vdc_bound(bump, UNIT, PolyClass.from_vec([float(N)], 1, 1), n_radii=8)
        ratios.append(r.ratio)
    assert max(ratios) <= 1.0


def test_weak_lorentz():
    A = np.zeros(50)
    A[:12] = 1
    assert weak_lorentz_norm(A, 2, 0.5) == pytest.approx((12 * 0.5) ** 0.5)
    assert weak_lorentz_norm(np.zeros(5), 2) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30), st.floats(1.1, 4))
def test_weak_lorentz_brute_levels(g, p):
    a = np.abs(np.array(g))
    brute = max((lev * np.sum(a >= lev) ** (1 / p) for lev in a if lev > 0), default=0.0)
    assert weak_lorentz_norm(a, p) == pytest.approx(brute, rel=1e-12)


def test_export_round_trip(default_pipe, tmp_path):
    M = default_pipe.kit.tile_matrix(3)
    export_matrix(M, tmp_path / "m.bin")
    back = load_matrix(tmp_path / "m.bin")
    assert back.provenance == M.provenance and np.array_equal(back.data, M.data)
    export_matrix_json(M, tmp_path / "m.json.gz")
    assert np.array_equal(load_matrix_json(tmp_path / "m.json.gz").data, M.data)
