import dataclasses
import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from angloc.harness import metrics
from angloc.harness.config import (
    CONFIG_TYPES,
    ConfigError,
    config_hash,
    load_config,
    load_schema,
    make_config,
)
from angloc.harness.experiments import e2e_tags
from angloc.harness.report import run_experiment
from angloc.harness.runner import rows_to_csv, to_json, trial_rng, write_atomic
from angloc.harness.scenes import image_sources, local_direction, separated_directions, trajectory
from angloc.loc import Pose
from angloc.sim import spherical_distance

SMALL = {
    "resolution": {"geometries": ["Nested", "Coprime"], "K": [2], "trials": 3, "snapshots": 256},
    "variance": {"families": ["sine", "SC-ZC"], "snr_db": [10.0], "trials": 3, "chunk": 1024, "pad": 200},
    "identification": {"conditions": [{"snr_db": 0.0, "separation_deg": None}], "K": 3, "P": 5, "trials": 2},
    "e2e": {"geometries": ["URA", "Nested"], "steps": 2, "moving_ids": [1], "static_ids": [2], "P": 5},
}


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.sampled_from([0.0, 50.0, 95.0, 100.0, 37.5]))
def test_percentile_matches_sorted_oracle(values, q):
    assert metrics.percentiles(values, (q,))[0] == pytest.approx(metrics.percentile_sorted(values, q), abs=1e-6)


def test_percentiles_empty():
    assert all(math.isnan(v) for v in metrics.percentiles([]))


@given(st.integers(0, 200), st.integers(1, 200))
def test_wilson_contains_estimate(k, n):
    k = min(k, n)
    lo, hi = metrics.wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_tangent_errors_small_offsets():
    az, el = 0.3, 0.8
    d = math.radians(0.5)
    e = metrics.tangent_errors(az, el, az, el + d)
    assert e[0] == pytest.approx(0.5, rel=1e-3) and abs(e[1]) < 1e-6
    e = metrics.tangent_errors(az, el, az + d / math.sin(el), el)
    assert e[1] == pytest.approx(0.5, rel=1e-3)


def test_direction_variance_is_trace():
    rng = np.random.default_rng(0)
    e = rng.standard_normal((5000, 2)) * [1.0, 2.0]
    assert metrics.direction_variance(e) == pytest.approx(5.0, rel=0.05)


def test_matched_errors():
    err = metrics.matched_errors([0.0, 1.0], [0.5, 0.5], [1.0, 0.0], [0.5, 0.5])
    assert np.allclose(err, 0.0, atol=1e-6)
    err = metrics.matched_errors([0.0, 1.0], [0.5, 0.5], [1.0], [0.5])
    assert np.isinf(err[0]) and err[1] < 1e-6


def test_trial_rng_depends_only_on_keys():
    a = trial_rng(3, 1, 2).random(4)
    assert np.array_equal(a, trial_rng(3, 1, 2).random(4))
    assert not np.array_equal(a, trial_rng(3, 2, 1).random(4))


def test_config_validation():
    with pytest.raises(ConfigError):
        make_config("resolution", trials=0)
    with pytest.raises(ConfigError):
        make_config("resolution", geometrys=["URA"])
    with pytest.raises(ConfigError):
        make_config("resolution", geometries=["Hex"])
    with pytest.raises(ConfigError):
        make_config("identification", K=21)
    with pytest.raises(ConfigError):
        make_config("e2e", moving_ids=[1], static_ids=[1])
    with pytest.raises(ConfigError):
        make_config("e2e", mode="perfect")
    with pytest.raises(ConfigError):
        make_config("variance", families=["chirp"])
    with pytest.raises(ConfigError):
        make_config("bogus")


def test_schema_matches_dataclasses():
    schema = load_schema()
    branches = {b["properties"]["kind"]["const"]: b for b in schema["oneOf"]}
    for kind, cls in CONFIG_TYPES.items():
        fields = {f.name for f in dataclasses.fields(cls)}
        assert set(branches[kind]["properties"]) == fields, kind
        jsonschema.validate(dataclasses.asdict(make_config(kind)), schema)


def test_schema_rejects_unknown_key():
    doc = dataclasses.asdict(make_config("variance"))
    doc["chunks"] = 3
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, load_schema())


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"kind": "variance", "trials": 5}))
    cfg = load_config(p, seed=9)
    assert cfg.trials == 5 and cfg.seed == 9
    assert config_hash(cfg) == config_hash(load_config(p, seed=9))
    assert config_hash(cfg) != config_hash(load_config(p, seed=8))
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)


def test_csv_and_json_formatting(tmp_path):
    rows = [{"a": 0.1, "b": float("nan"), "c": True, "d": np.int64(3)}]
    assert rows_to_csv(rows, ["a", "b", "c", "d"]) == "a,b,c,d\n0.1,nan,1,3\n"
    assert json.loads(to_json({"x": float("nan"), "y": np.float32(2.0)})) == {"x": None, "y": 2.0}
    write_atomic(tmp_path / "sub" / "f.txt", "hello")
    assert (tmp_path / "sub" / "f.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


def test_trajectory_stays_in_box():
    box = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 1.5]])
    x = trajectory(np.random.default_rng(0), 300, box, hop=0.05)
    assert x.shape == (300, 3)
    assert np.all(x >= box[:, 0] - 1e-9) and np.all(x <= box[:, 1] + 1e-9)
    assert np.max(np.linalg.norm(np.diff(x, axis=0), axis=1)) < 0.5


def test_image_sources_mirror_walls():
    room = [[0.0, 4.0], [0.0, 3.0], [0.0, 2.5]]
    imgs = image_sources(np.array([1.0, 1.0, 1.0]), room, 0.9)
    pos = np.array([p for p, _ in imgs])
    # direct path first, then one image per wall
    assert len(imgs) == 7
    assert np.allclose(pos[0], [1.0, 1.0, 1.0]) and imgs[0][1] == 1.0
    assert any(np.allclose(p, [-1.0, 1.0, 1.0]) for p in pos)
    assert any(np.allclose(p, [7.0, 1.0, 1.0]) for p in pos)
    assert all(a == pytest.approx(0.9) for _, a in imgs[1:])


def test_local_direction_of_pose():
    pose = Pose(np.eye(3), np.zeros(3))
    az, el, r = local_direction(pose, np.array([0.0, 1.0, 1.0]))
    assert az == pytest.approx(math.pi / 2) and el == pytest.approx(math.pi / 4) and r == pytest.approx(math.sqrt(2))


def test_separated_directions_closest_pair():
    rng = np.random.default_rng(5)
    sep = math.radians(5)
    az, el = separated_directions(rng, 15, sep, min_elevation=math.radians(10), max_elevation=math.radians(70))
    d = spherical_distance(az[:, None], el[:, None], az[None, :], el[None, :])
    d[np.diag_indices(15)] = np.inf
    assert d.min() == pytest.approx(sep, abs=1e-9)


def test_e2e_tags_layout():
    cfg = make_config("e2e", steps=10, moving_ids=[1, 2], static_ids=[3])
    tags = e2e_tags(cfg)
    assert tags.shape == (10, 3, 3)
    assert np.allclose(tags[:, 2], tags[0, 2])


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_experiment_outputs(kind, tmp_path):
    cfg = make_config(kind, SMALL[kind])
    res = run_experiment(cfg, tmp_path, "csv")
    header = (tmp_path / f"{kind}.csv").read_text().splitlines()[0]
    assert header.split(",") == res.columns
    summary = json.loads((tmp_path / f"{kind}.summary.json").read_text())
    assert summary["config_hash"] == config_hash(cfg)
    assert summary["seed"] == cfg.seed and summary["experiment"] == kind
    run_experiment(cfg, tmp_path, "json")
    assert len(json.loads((tmp_path / f"{kind}.json").read_text())) == len(res.rows)


def test_worker_count_does_not_change_results():
    cfg = make_config("resolution", SMALL["resolution"], trials=4)
    a = run_experiment(cfg, jobs=1)
    b = run_experiment(cfg, jobs=2)
    assert a.rows == b.rows


@pytest.mark.parametrize("mode", ["exact", "noisy"])
def test_e2e_ideal_modes(mode):
    cfg = make_config("e2e", mode=mode, steps=20, angular_noise_deg=0.5)
    res = run_experiment(cfg)
    rows = {r["divergence_limit_mm"]: r for r in res.rows}
    assert {r["geometry"] for r in res.rows} == {"ideal"}
    if mode == "exact":
        assert rows[1.0]["valid_fraction"] == 1.0
        assert rows[1.0]["error_p100_mm"] < 1e-6
    else:
        assert rows[100.0]["valid_fraction"] >= rows[1.0]["valid_fraction"]


@pytest.mark.parametrize("name", ["resolution", "variance", "identification", "e2e_divergence", "e2e_geometry"])
def test_shipped_configs_load(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.json"
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, load_schema())
    cfg = load_config(path)
    assert dataclasses.asdict(cfg) == doc
