from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycarleson import harness
from polycarleson.grid import WorkingBox
from polycarleson.stopping import (StoppingParams, SupportDecayError, build_stopping_forest, count_threshold,
                                   counting_function, maximal_cubes, whitney_closure, whitney_violations)
from polycarleson.tiles import LinearizingData, build_tile_lattice, empty_data, sample_grid


def forest_for(data, box, **kw):
    lat = build_tile_lattice(box, data)
    idx = lat.bind(data)
    return build_stopping_forest(lat, idx, StoppingParams(**kw), calibrate=False)


def test_single_phase_full_window_has_one_generation():
    cfg = harness.ExperimentConfig(preset="single-phase")
    inst = harness.generate_instance(cfg, 0)
    d = inst.data
    assert np.all(d.phase_idx == 0) and len(d.phases) == 1
    assert np.all(d.sigma_lo == cfg.s_min) and np.all(d.sigma_hi == cfg.s_max)
    forest = forest_for(d, inst.box)
    assert forest.n_generations == 1
    assert list(forest.generations[0]) == [0]
    assert np.all(forest.cube_gen == 0)


def test_empty_data_single_generation():
    box = WorkingBox(8, 1, 0, 2)
    forest = forest_for(empty_data(box, 1), box)
    assert forest.n_generations == 1
    for n in range(1, forest.n_max + 1):
        assert len(forest.maximal_tiles(n, 0)) == 0


def heavy_instance():
    """Four far-apart phases crowd one scale-1 cube; phase 0 fills the rest."""
    box = WorkingBox(8, 1, 0, 2)
    pts, w = sample_grid(box, 1)
    n = len(pts)
    idx = np.zeros(n, np.int64)
    heavy = np.flatnonzero(pts[:, 0] < 8)
    idx[heavy] = 1 + np.arange(len(heavy)) % 4
    phases = np.array([[0.0], [300.0], [600.0], [900.0], [1200.0]])
    data = LinearizingData(pts, w, np.zeros(n, np.int64), np.full(n, 2), idx, phases, 1, 1)
    return box, data


def test_heavy_cube_enters_next_generation():
    box, data = heavy_instance()
    forest = forest_for(data, box)
    lat, index = forest.lattice, forest.index
    heavy_cube = lat.cube_id(box.cube(1, (0,)))
    # brute-force replay of the threshold rule at generation 0
    flagged = set()
    for n in range(1, forest.n_max + 1):
        q = [t for t in range(len(lat)) if index.Ebar_ratio[t] >= 2.0**-n]
        top = [t for t in q if not any(lat.order_lt(t, u) for u in q)]
        thr = float(count_threshold(forest.C_count, n))
        for x in data.points:
            if counting_function(lat, top, x) >= thr:
                flagged.add(float(x[0]))
    assert flagged and max(flagged) < 8
    assert forest.n_generations >= 2
    assert heavy_cube in set(forest.generations[1].tolist())
    for c in range(len(lat.cubes)):
        if lat.cubes[c].s < 2 and lat.cubes[heavy_cube].contains(lat.cubes[c]):
            assert forest.cube_gen[c] >= 1


def test_support_decay_error_reports_cube():
    box, data = heavy_instance()
    lat = build_tile_lattice(box, data)
    with pytest.raises(SupportDecayError) as err:
        build_stopping_forest(lat, lat.bind(data), StoppingParams(C_count=0.05), calibrate=False)
    assert err.value.cube >= 0


def test_calibration_doubles_count_constant():
    box, data = heavy_instance()
    lat = build_tile_lattice(box, data)
    forest = build_stopping_forest(lat, lat.bind(data), StoppingParams(C_count=0.05))
    assert forest.attempts[0] == 0.05 and len(forest.attempts) > 1
    assert forest.C_count == pytest.approx(0.05 * 2 ** (len(forest.attempts) - 1))
    assert all(d["ratio"] <= 0.5 for d in forest.decay)


def test_maximal_tiles():
    cfg = harness.ExperimentConfig(preset="heavy-chain", seed=3)
    pipe = harness.build_pipeline(harness.generate_instance(cfg))
    chain = harness.heavy_chain(pipe, 1)
    assert len(chain) >= 3
    lat, forest = pipe.lattice, pipe.forest
    M = forest.maximal_tiles(1, 0)
    # pairwise-comparison oracle
    q = forest.qualifying(1, forest.P(0))
    oracle = [t for t in q if not any(lat.order_lt(t, u) for u in q)]
    assert sorted(M.tolist()) == sorted(oracle)
    tops = [t for t in chain if t in set(M.tolist())]
    assert tops == [max(chain, key=lambda t: lat.tile_scale[t])]
    # far above the ratio floor nothing qualifies
    assert len(forest.maximal_tiles(1, 5)) == 0


def test_counting_function(default_pipe):
    lat, forest = default_pipe.lattice, default_pipe.forest
    pts = default_pipe.instance.data.points
    assert counting_function(lat, [], pts[0]) == 0
    t = int(np.flatnonzero(lat.tile_scale == 0)[0])
    inside = lat.cubes[lat.tile_cube[t]].box.lo[0] + 0.25
    assert counting_function(lat, [t], [inside]) == 1
    for n in (1, 3):
        M = forest.maximal_tiles(n, 0)
        brute = max(counting_function(lat, M, x) for x in pts)
        assert brute == forest.max_multiplicity(M)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=6))
def test_whitney_closure_properties(ids):
    box = WorkingBox(4, 1, 0, 2)
    lat = build_tile_lattice(box, empty_data(box, 1))
    ids = [i % len(lat.cubes) for i in ids]
    closed = whitney_closure(lat, ids)
    mask = np.zeros(len(lat.cubes), bool)
    mask[closed] = True
    assert set(ids) <= set(closed.tolist())
    assert whitney_violations(lat, mask) == []
    assert np.array_equal(whitney_closure(lat, closed), closed)
    top = maximal_cubes(lat, closed)
    for a in top:
        for b in top:
            assert a == b or not lat.cubes[a].contains(lat.cubes[b])
