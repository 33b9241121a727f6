import csv
import io
import json
import math

import numpy as np
import pytest

from angloc.cli import main
from angloc.rotation import exp_so3
from angloc.sim import angles_from_vector


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_geometry_inspect(capsys):
    code, out, _ = run(capsys, "geometry", "inspect", "--kind", "Nested")
    info = json.loads(out)
    assert code == 0
    assert info["elements"] == 16 and info["window"] == [6, 6] and info["virtual_extent"] == [11, 11]


def test_geometry_roundtrip_file(capsys, tmp_path):
    run(capsys, "geometry", "generate", "--kind", "Open-Box", "--out", str(tmp_path))
    code, out, _ = run(capsys, "geometry", "coarray", "--geometry-file", str(tmp_path / "geometry.json"))
    assert code == 0
    assert {"mx", "my", "hole_free"} == set(rows(out)[0])


def test_waveform_correlate(capsys):
    code, out, _ = run(capsys, "waveform", "correlate", "--family", "zc", "--n", "13", "--q1", "1", "--q2", "2")
    mags = [float(r["abs"]) for r in rows(out)]
    assert code == 0 and np.allclose(mags, 1 / math.sqrt(13))


def test_waveform_generate_and_modulate(capsys, tmp_path):
    code, out, _ = run(capsys, "waveform", "generate", "--family", "ms-zc", "--n", "13", "--q", "2", "--format", "json")
    seq = json.loads(out)
    assert code == 0 and len(seq) == 25 and all(abs(r["im"]) < 1e-12 for r in seq)
    code, out, _ = run(capsys, "waveform", "modulate", "--family", "sc-zc", "--out", str(tmp_path))
    meta = json.loads((tmp_path / "passband.f32.json").read_text())
    assert code == 0 and meta["samples"] == 24414 and meta["carrier_hz"] == 18000.0


def test_simulate_doa_identify(capsys, tmp_path):
    src = ["--source=-100,20,1,3", "--source=40,35,1,5"]
    code, _, _ = run(capsys, "simulate", *src, "--seed", "4", "--out", str(tmp_path / "sim"))
    assert code == 0
    scene = str(tmp_path / "sim" / "scene.json")
    code, out, _ = run(capsys, "doa", "--scene", scene, "--K", "2", "--format", "json")
    est = sorted(json.loads(out), key=lambda r: r["phi_deg"])
    assert code == 0
    assert abs(est[0]["phi_deg"] + 100) < 2 and abs(est[1]["phi_deg"] - 40) < 2
    code, out, _ = run(capsys, "identify", "--scene", scene, "--P", "6", "--format", "json")
    ident = json.loads(out)
    assert [r["candidate_id"] for r in ident["assignment"]] == [3, 5]


def test_doa_passband(capsys):
    code, out, _ = run(capsys, "doa", "--source", "30,40", "--model", "passband", "--K", "1", "--seed", "1")
    r = rows(out)[0]
    assert code == 0 and abs(float(r["phi_deg"]) - 30) < 2 and abs(float(r["theta_deg"]) - 40) < 2


def test_localize(capsys, tmp_path):
    poses = {"A": {"R": np.eye(3).ravel().tolist(), "p": [0, 0, 0]},
             "B": {"R": np.eye(3).ravel().tolist(), "p": [3, 0, 0]}}
    recs = []
    for t in range(3):
        x = np.array([1.0 + 0.1 * t, 1.0, 2.0])
        for dev, origin in (("A", np.zeros(3)), ("B", np.array([3.0, 0, 0]))):
            az, el = angles_from_vector(x - origin)
            recs.append({"device": dev, "t": 0.01 * t, "phi_deg": math.degrees(az),
                         "theta_deg": math.degrees(el), "id": 7})
    (tmp_path / "poses.json").write_text(json.dumps(poses))
    (tmp_path / "doas.json").write_text(json.dumps(recs))
    code, out, _ = run(capsys, "localize", "--poses", str(tmp_path / "poses.json"),
                       "--doas", str(tmp_path / "doas.json"))
    fixes = rows(out)
    assert code == 0 and len(fixes) == 3
    assert float(fixes[2]["x"]) == pytest.approx(1.2)


def test_calibrate_pnp(capsys, tmp_path):
    rng = np.random.default_rng(0)
    R, p = exp_so3([0.1, -0.2, 0.3]), np.array([1.0, 2.0, 0.5])
    obs = []
    for x in rng.uniform(-2, 2, (8, 3)) + [0, 0, 3]:
        az, el = angles_from_vector(R.T @ (x - p))
        obs.append({"tag": x.tolist(), "phi_deg": math.degrees(az), "theta_deg": math.degrees(el)})
    (tmp_path / "pnp.json").write_text(json.dumps({"observations": obs}))
    code, out, _ = run(capsys, "calibrate", "pnp", "--scene", str(tmp_path / "pnp.json"))
    res = json.loads(out)
    assert code == 0 and np.allclose(res["pose"]["p"], p, atol=1e-6)


def test_experiment_with_config(capsys, tmp_path):
    cfg = {"kind": "identification", "conditions": [{"snr_db": 0.0, "separation_deg": None}],
           "K": 2, "P": 4, "trials": 2}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "experiment", "identification", "--config", str(tmp_path / "c.json"),
                       "--out", str(tmp_path / "o"))
    assert code == 0
    data = rows((tmp_path / "o" / "identification.csv").read_text())
    assert data[0]["trials"] == "2"


def test_config_fills_options(capsys, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"kind": "Coprime"}))
    code, out, _ = run(capsys, "geometry", "inspect", "--config", str(tmp_path / "c.json"))
    assert code == 0 and json.loads(out)["name"] == "Coprime"
    (tmp_path / "bad.json").write_text(json.dumps({"colour": 1}))
    code, _, err = run(capsys, "geometry", "inspect", "--config", str(tmp_path / "bad.json"))
    assert code == 2 and json.loads(err)["error"] == "UsageError"


def test_errors_are_json(capsys):
    code, _, err = run(capsys, "geometry", "inspect", "--kind", "Hexagon")
    assert code == 2 and json.loads(err)["error"] == "UsageError"
    code, _, err = run(capsys, "waveform", "generate", "--n", "12")
    rec = json.loads(err)
    assert code == 1 and rec["error"] == "WaveformError" and rec["command"] == "waveform"
    code, _, err = run(capsys, "doa")
    assert code == 2
