from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycarleson import harness
from polycarleson.grid import WorkingBox
from polycarleson.selection import (SelectionParams, boundary_split, compute_densities, decompose, heavy_tiles,
                                    is_antichain, lambda_grid, longest_chain, mirsky_layers, rows_of_forest,
                                    select_forests, separation_check, separation_target)
from polycarleson.stopping import StoppingParams, build_stopping_forest
from polycarleson.tiles import LinearizingData, build_tile_lattice, empty_data, sample_grid


def test_lambda_grid_starts_at_two():
    g = lambda_grid(3)
    assert g[0] == 2.0 and g[-1] == 8.0 and np.all(np.diff(g) > 0)


def test_density_zero_without_samples():
    box = WorkingBox(8, 1, 0, 2)
    data = empty_data(box, 1)
    lat = build_tile_lattice(box, data)
    forest = build_stopping_forest(lat, lat.bind(data))
    assert np.all(compute_densities(forest) == 0)


def test_density_bounds(default_pipe):
    dens = default_pipe.decomposition.dens
    lat = default_pipe.lattice
    assert np.all(dens >= 0) and np.all(dens <= 2.0**-lat.dimq + 1e-15)


def test_density_of_full_tile():
    # all samples share one phase with full windows: the lambda=2, p'=p term
    cfg = harness.ExperimentConfig(preset="single-phase")
    pipe = harness.build_pipeline(harness.generate_instance(cfg, 0))
    lat, idx = pipe.lattice, pipe.index
    w = pipe.instance.data.weight
    for t in range(len(lat)):
        inside = lat.cubes[lat.tile_cube[t]].contains_points(pipe.instance.data.points)
        if lat.membership_batch(pipe.instance.data.phases[0], t)[0]:
            bound = 2.0**-lat.dimq * inside.sum() * w / lat.cubes[lat.tile_cube[t]].volume
            assert pipe.decomposition.dens[t] >= bound * (1 - 1e-12)


def test_heavy_tiles_threshold_scan(default_pipe):
    forest, dens = default_pipe.forest, default_pipe.decomposition.dens
    C0 = default_pipe.decomposition.params.C0
    assert len(heavy_tiles(dens, forest, 1, 0, C0)) == 0  # C0/2 = 1 exceeds every density
    for n in range(1, forest.n_max + 1):
        brute = [t for t in range(len(dens)) if forest.tile_gen[t] == 0 and dens[t] > C0 * 2.0**-n]
        assert heavy_tiles(dens, forest, n, 0, C0).tolist() == brute
    top = heavy_tiles(dens, forest, forest.n_max, 0, C0)
    assert set(top.tolist()) == set(np.flatnonzero(dens > 0).tolist())


def test_empty_heavy_set_gives_empty_selection(default_pipe):
    sel = select_forests(default_pipe.forest, default_pipe.decomposition.dens, 1, 0, SelectionParams())
    assert len(sel.heavy) == 0 and not sel.trees and not sel.antichains


def test_single_sample_heavy_set():
    # one sample with ratio 1 at its finest cube; with C0 = 1/2 the heavy set sits on that
    # cube only (a neighbouring centre sees the sample through its 2-dilate), and it is
    # selected at level 1 as a whole
    box = WorkingBox(8, 1, 0, 1)
    pts, w = sample_grid(box, 1)
    data = LinearizingData(pts[:1], w, np.zeros(1, np.int64), np.ones(1, np.int64), np.zeros(1, np.int64),
                           np.zeros((1, 1)), 1, 1)
    lat = build_tile_lattice(box, data)
    idx = lat.bind(data)
    forest = build_stopping_forest(lat, idx)
    dec = decompose(forest, SelectionParams(C0=0.5))
    heavy = heavy_tiles(dec.dens, forest, 1, 0, 0.5)
    assert idx.tile_of[0, 0] in heavy
    assert set(lat.tile_cube[heavy].tolist()) == {idx.cube_of[0, 0]}
    assert is_antichain(lat, heavy)[0]
    chosen = sorted(int(t) for p in dec.trees + dec.antichains if p["n"] == 1 for t in p["members"])
    assert chosen == sorted(heavy.tolist())


def test_no_chain_guard_on_valid_inputs(default_pipe, rows_pipe):
    for pipe in (default_pipe, rows_pipe):
        assert not [d for d in pipe.decomposition.diagnostics if d["check"] == "chain-guard"]


def test_single_level_decomposition_equals_selection(default_pipe):
    lat, idx = default_pipe.lattice, default_pipe.index
    forest = build_stopping_forest(lat, idx, StoppingParams(n_max=1))
    dec = decompose(forest)
    sel = select_forests(forest, dec.dens, 1, 0, dec.params)
    got = sorted(tuple(p["members"].tolist()) for p in dec.trees + dec.antichains)
    want = sorted(tuple(np.asarray(p["members"]).tolist()) for p in sel.trees + sel.antichains if len(p["members"]))
    assert got == want


@pytest.mark.parametrize("fixture", ["default_pipe", "rows_pipe"])
def test_partition_is_exact(fixture, request):
    dec = request.getfixturevalue(fixture).decomposition
    cnt = np.zeros(dec.n_tiles, np.int64)
    for p in dec.trees + dec.antichains:
        for t in p["members"]:
            cnt[t] += 1
    for t in dec.residual:
        cnt[t] += 1
    assert np.all(cnt == 1)


def test_lower_level_tiles_removed(rows_pipe):
    dec = rows_pipe.decomposition
    for tr in dec.trees:
        if tr["n"] > 1:
            prev = heavy_tiles(dec.dens, dec.forest, tr["n"] - 1, tr["k"], dec.params.C0)
            assert not set(prev.tolist()) & set(tr["members"].tolist())


def test_boundary_split(rows_pipe):
    lat = rows_pipe.lattice
    top = int(np.flatnonzero(lat.tile_scale == lat.box.s_max)[0])
    inner = [t for t in np.flatnonzero(lat.tile_scale == 0)
             if lat.cubes[0].box.contains_box(lat.cubes[lat.tile_cube[t]].dilate(2))]
    bd, normal = boundary_split(lat, {"top": top, "members": np.array(inner[:5])})
    assert len(bd) == 0 and len(normal) == 5
    edge = [t for t in np.flatnonzero(lat.tile_scale == 0) if lat.cubes[lat.tile_cube[t]].corner == (0,)]
    bd, _ = boundary_split(lat, {"top": top, "members": np.array(edge[:1])})
    assert list(bd) == edge[:1]
    # up-set property against the pairwise order
    for tr in rows_pipe.decomposition.trees:
        bd = set(tr["bd"].tolist())
        for a in bd:
            for b in tr["members"]:
                if lat.order_lt(a, b):
                    assert b in bd


def min_rows_bruteforce(lat, tops) -> int:
    cubes = [lat.cubes[lat.tile_cube[t]] for t in tops]
    clash = lambda i, j: cubes[i].contains(cubes[j]) or cubes[j].contains(cubes[i])
    for k in range(1, len(tops) + 1):
        for colour in itertools.product(range(k), repeat=len(tops)):
            if all(colour[i] != colour[j] or not clash(i, j) for i in range(len(tops)) for j in range(i)):
                return k
    return 0


def test_rows(rows_pipe):
    lat = rows_pipe.lattice
    fine = np.flatnonzero(lat.tile_scale == 0)
    distinct = []
    seen = set()
    for t in fine:
        if lat.tile_cube[t] not in seen:
            seen.add(lat.tile_cube[t])
            distinct.append(int(t))
    trees = [{"id": i, "top": t} for i, t in enumerate(distinct[:4])]
    assert len(rows_of_forest(lat, trees)) == 1
    same = [int(t) for t in np.flatnonzero(lat.tile_cube == lat.tile_cube[fine[0]])][:2]
    assert len(same) == 2
    assert len(rows_of_forest(lat, [{"id": i, "top": t} for i, t in enumerate(same)])) == 2
    rng = np.random.default_rng(0)
    for _ in range(10):
        tops = rng.choice(len(lat), rng.integers(2, 8), replace=False)
        trees = [{"id": i, "top": int(t)} for i, t in enumerate(tops)]
        rows = rows_of_forest(lat, trees)
        assert sorted(i for r in rows for i in r) == list(range(len(tops)))
        assert len(rows) == min_rows_bruteforce(lat, tops)


def test_separation(rows_pipe):
    lat, dec = rows_pipe.lattice, rows_pipe.decomposition
    fine = np.flatnonzero(lat.tile_scale == 0)
    a = int(fine[0])
    b = int(fine[lat.tile_cube[fine] != lat.tile_cube[a]][0])
    ok, _ = separation_check(lat, {"top": a, "members": [a]}, {"top": b, "members": [b]}, 1e9)
    assert ok
    top = int(np.flatnonzero(lat.tile_scale == lat.box.s_max)[0])
    ok, wit = separation_check(lat, {"top": top, "members": [top]}, {"top": top, "members": [top]}, 1.0)
    assert not ok and wit["Delta"] == pytest.approx(1.0)
    for (n, k, j), trees in dec.forests().items():
        for t1, t2 in itertools.combinations(trees, 2):
            ok, wit = separation_check(lat, t1, t2, separation_target(n, dec.params))
            assert ok, wit


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=40, unique=True))
def test_mirsky_layers_are_antichains(picks):
    from conftest import DEFAULT

    lat = _lattice_cache(DEFAULT)
    tiles = np.array(sorted({p % len(lat) for p in picks}))
    layers = mirsky_layers(lat, tiles)
    for l in np.unique(layers):
        assert is_antichain(lat, tiles[layers == l])[0]
    chain = longest_chain(lat, tiles)
    assert len(chain) == layers.max() + 1
    assert all(lat.order_lt(a, b) for a, b in zip(chain, chain[1:]))


_CACHE = {}


def _lattice_cache(cfg):
    if "lat" not in _CACHE:
        _CACHE["lat"] = harness.build_pipeline(harness.generate_instance(cfg, 0)).lattice
    return _CACHE["lat"]
