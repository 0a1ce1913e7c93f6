from __future__ import annotations

import gzip
import json

import numpy as np
import pytest
from click.testing import CliRunner
from conftest import DEFAULT

from polycarleson import harness
from polycarleson.cli import main
from polycarleson.grid import WorkingBox
from polycarleson.selection import decompose
from polycarleson.stopping import build_stopping_forest
from polycarleson.tiles import build_tile_lattice, empty_data

SMALL = harness.ExperimentConfig(D=4, s_min=0, s_max=2, resolution=1)


def test_instances_are_deterministic():
    a = harness.generate_instance(DEFAULT, 3)
    b = harness.generate_instance(DEFAULT, 3)
    c = harness.generate_instance(DEFAULT, 4)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_report_json_is_deterministic():
    r1, _ = harness.run_suites(SMALL, 0, ("structure",))
    r2, _ = harness.run_suites(SMALL, 0, ("structure",))
    assert r1.to_json() == r2.to_json()
    assert "timestamp" in r1.to_dict(timestamp=True)
    back = harness.Report.from_dict(json.loads(r1.to_json()))
    assert [r.check_id for r in back.records] == [r.check_id for r in r1.records]


def test_report_rejects_unknown_schema():
    with pytest.raises(ValueError):
        harness.Report.from_dict({"schema": "0.0", "records": []})


def test_report_statuses():
    rep = harness.Report()
    rep.add("a", "x", True)
    rep.add("b", "x", False, hard=False)
    rep.add("c", "x", False)
    rep.skip("d", "x", "not applicable")
    assert [r.status for r in rep.records] == ["pass", "soft-fail", "fail", "skip"]
    assert [r.check_id for r in rep.hard_failures()] == ["c"]
    assert not rep.ok


def test_single_phase_preset():
    cfg = SMALL.replace(preset="single-phase")
    inst = harness.generate_instance(cfg)
    assert len(np.unique(inst.data.phase_idx)) == 1
    assert np.all(inst.data.sigma_lo == cfg.s_min) and np.all(inst.data.sigma_hi == cfg.s_max)
    rep, _ = harness.run_suites(cfg, suites=("structure",))
    assert rep.ok, [r.check_id for r in rep.hard_failures()]


def test_heavy_chain_preset_has_long_chain():
    cfg = DEFAULT.replace(preset="heavy-chain")
    pipe = harness.build_pipeline(harness.generate_instance(cfg, 3))
    chain = harness.heavy_chain(pipe, 1)
    assert len(chain) >= 3
    lat = pipe.lattice
    for a, b in zip(chain, chain[1:]):
        assert lat.le_matrix[a, b] or lat.le_matrix[b, a]


@pytest.mark.parametrize("preset", harness.PRESETS)
def test_every_preset_passes_hard_structure_checks(preset):
    rep, _ = harness.run_suites(SMALL.replace(preset=preset), 1, ("structure",))
    assert rep.ok, [r.check_id for r in rep.hard_failures()]


def test_empty_data_structure_suite():
    box = WorkingBox(4, 1, 0, 1)
    data = empty_data(box, 1)
    lat = build_tile_lattice(box, data)
    idx = lat.bind(data)
    forest = build_stopping_forest(lat, idx)
    dec = decompose(forest)
    cfg = harness.ExperimentConfig(D=4, s_min=0, s_max=1)
    z = np.zeros(0, bool)
    inst = harness.Instance(cfg, 0, box, data, z, z, np.zeros(0, complex), np.zeros(0, complex))
    pipe = harness.Pipeline(inst, lat, idx, forest, dec)
    rep = harness.run_structure_suite(pipe)
    assert rep.ok, [r.check_id for r in rep.hard_failures()]
    assert len(dec.trees) == len(dec.antichains) == 0


def test_load_config_toml_json_and_env(tmp_path, monkeypatch):
    toml = tmp_path / "c.toml"
    toml.write_text('[experiment]\nD = 4\ns_max = 3\npreset = "clustered"\n')
    cfg = harness.load_config(toml)
    assert (cfg.D, cfg.s_max, cfg.preset) == (4, 3, "clustered")
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"D": 16, "seed": 9}))
    assert harness.load_config(js).D == 16
    assert harness.load_config(js, seed=2).seed == 2
    monkeypatch.setenv("POLYCARLESON_SEED", "11")
    monkeypatch.setenv("POLYCARLESON_THREADS", "3")
    cfg = harness.load_config(js)
    assert (cfg.seed, cfg.threads) == (11, 3)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(ValueError):
        harness.load_config(bad)


def test_config_guards():
    with pytest.raises(ValueError):
        harness.ExperimentConfig(s_max=9).validate()
    with pytest.raises(ValueError):
        harness.ExperimentConfig(D=16, s_max=3).validate()  # 4096 * 2 samples
    with pytest.raises(ValueError):
        harness.ExperimentConfig(D=2).validate()  # parent growth below kappa_sep
    with pytest.raises(ValueError):
        harness.ExperimentConfig(preset="nope").validate()
    DEFAULT.validate()


def test_calibrate_one_dimensional_linear():
    res = harness.calibrate(1, 1, 4.0, 200)
    assert res["D"] == 4 and res["min_ratio"] >= 4.0 - 1e-9


def test_threaded_seeds_match_serial():
    fn = lambda cfg, s: harness.generate_instance(cfg, s).fingerprint()
    serial = harness.run_seeds(SMALL, range(4), fn)
    threaded = harness.run_seeds(SMALL.replace(threads=3), range(4), fn)
    assert serial == threaded


def test_stable_within():
    assert harness.stable_within([1.0, 1.2, 0.8])
    assert not harness.stable_within([1.0, 2.0, 0.5])
    assert harness.stable_within([0.0, 0.0])


def test_fit_positive_handles_zeros():
    assert harness.fit_positive([1, 2, 4], [0, 0, 1])["slope"] == float("inf")
    fit = harness.fit_positive([1, 2, 4, 8], [0, 2, 4, 8])
    assert fit["points"] == 3 and abs(fit["slope"] - 1) < 1e-12


# ---- CLI ---------------------------------------------------------------------------
@pytest.fixture()
def small_json(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL.to_dict()))
    return p


def test_cli_calibrate():
    res = CliRunner().invoke(main, ["calibrate", "--samples", "100"])
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["D"] == 4


def test_cli_build_snapshot(tmp_path, small_json):
    out = tmp_path / "snap.json.gz"
    res = CliRunner().invoke(main, ["build", "--config", str(small_json), "-o", str(out)])
    assert res.exit_code == 0, res.output
    with gzip.open(out, "rt") as fh:
        doc = json.load(fh)
    assert doc["schema"] == harness.SCHEMA_VERSION and "lattice" in doc


def test_cli_verify_and_report(tmp_path, small_json):
    out = tmp_path / "rep.json"
    res = CliRunner().invoke(main, ["verify", "--config", str(small_json), "--suite", "structure", "-o", str(out)])
    assert res.exit_code == 0, res.output
    assert "0 hard failures" in res.output
    csv_path, svg_path = tmp_path / "r.csv", tmp_path / "r.svg"
    res = CliRunner().invoke(main, ["report", str(out), "--csv", str(csv_path), "--svg", str(svg_path)])
    assert res.exit_code == 0, res.output
    assert csv_path.read_text().startswith("check_id,claim,status")
    assert "<svg" in svg_path.read_text()


def test_cli_verify_exit_code_on_hard_failure(monkeypatch, small_json):
    def failing(config, seed=None, suites=None):
        rep = harness.Report()
        rep.add("x.broken", "a claim", False)
        return rep, None

    monkeypatch.setattr(harness, "run_suites", failing)
    res = CliRunner().invoke(main, ["verify", "--config", str(small_json)])
    assert res.exit_code == 1
    assert "1 hard failures" in res.output


def test_cli_rejects_invalid_config(tmp_path):
    p = tmp_path / "big.json"
    p.write_text(json.dumps({"s_max": 9}))
    res = CliRunner().invoke(main, ["verify", "--config", str(p)])
    assert res.exit_code != 0
