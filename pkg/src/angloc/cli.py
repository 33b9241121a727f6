"""Command line entry point (``angloc``).

Every subcommand prints its result to stdout, or writes it under ``--out``
when given. Failures print a one-line JSON error record to stderr and exit
nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import waveforms as wf
from .doa import (
    DoaEstimate,
    covariance_spectrum,
    estimate_source_count,
    pick_peaks,
    sample_covariance,
)
from .geometry import GEOMETRY_KINDS, difference_coarray, make_geometry, smoothing_plan, GridArray
from .harness.config import EXPERIMENT_KINDS, load_config, make_config
from .harness.report import write_report
from .harness.experiments import EXPERIMENTS
from .harness.runner import rows_to_csv, to_json, write_atomic
from .ident import CandidatePool, identify_block
from .loc import Pose, Ray, associate, filter_fixes, pnp_calibrate, self_calibrate, triangulate
from .sim import (
    Scenario,
    SnapshotMatrix,
    Source,
    WaveformSpec,
    chunk_and_convert,
    load_scenario,
    save_block,
    scenario_to_dict,
    synth_snapshots,
    synth_timedomain,
    unit_vector,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


FAMILY_NAMES = {"zc": "ZC", "ms-zc": "MS-ZC", "sc-zc": "SC-ZC", "ms": "MS-ZC", "sc": "SC-ZC"}


def _family(name: str) -> str:
    key = name.lower()
    if key not in FAMILY_NAMES:
        raise UsageError(f"unknown family {name!r}; use zc, ms-zc or sc-zc")
    return FAMILY_NAMES[key]


# --- output ---------------------------------------------------------------------


def _emit(args, name: str, rows=None, columns=None, obj=None):
    """Write rows (CSV or JSON per --format) or a JSON object to --out/name, else stdout."""
    if obj is not None:
        text = to_json(obj)
        suffix = ".json"
    elif args.format == "json":
        text = to_json(rows)
        suffix = ".json"
    else:
        text = rows_to_csv(rows, columns)
        suffix = ".csv"
    if args.out:
        path = Path(args.out) / f"{name}{suffix}"
        write_atomic(path, text)
        print(str(path))
    else:
        sys.stdout.write(text)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _array_from_args(args) -> GridArray:
    if getattr(args, "geometry_file", None):
        return GridArray.from_dict(_load_json(args.geometry_file))
    params = {}
    if args.kind == "Random":
        params = {"count": args.count, "seed": args.seed if args.seed is not None else 0}
    return make_geometry(args.kind, args.pitch, **params)


# --- geometry ---------------------------------------------------------------------


def cmd_geometry(args):
    arr = _array_from_args(args)
    if args.action == "generate":
        _emit(args, "geometry", obj=arr.to_dict())
        return
    ca = difference_coarray(arr)
    if args.action == "inspect":
        plan = smoothing_plan(ca)
        _emit(args, "geometry_info", obj={
            "name": arr.name, "elements": arr.size, "pitch_m": arr.pitch,
            "coarray_size": len(ca.differences), "hole_free_size": len(ca.hole_free),
            "virtual_extent": list(plan.virtual_extent), "window": list(plan.window),
            "offsets": len(plan.offsets),
        })
        return
    rows = [{"mx": int(m[0]), "my": int(m[1]), "hole_free": m in ca.hole_free} for m in sorted(ca.differences)]
    _emit(args, "coarray", rows, ["mx", "my", "hole_free"])


# --- waveform ---------------------------------------------------------------------


def cmd_waveform(args):
    fam = _family(args.family)
    if args.action == "generate":
        seq = wf.make_sequence(fam, args.n, args.q)
        s = np.asarray(seq.samples, dtype=complex)
        rows = [{"index": i, "re": float(v.real), "im": float(v.imag)} for i, v in enumerate(s)]
        _emit(args, "sequence", rows, ["index", "re", "im"])
    elif args.action == "correlate":
        a = wf.make_sequence(fam, args.n, args.q1).samples
        b = wf.make_sequence(fam, args.n, args.q2).samples
        r = wf.normalized_correlation(a, b) if not args.raw else wf.cyclic_correlation(a, b)
        rows = [{"lag": k, "re": float(v.real), "im": float(v.imag), "abs": float(abs(v))} for k, v in enumerate(r)]
        _emit(args, "correlation", rows, ["lag", "re", "im", "abs"])
    else:
        cfg = wf.PassbandConfig()
        seq = wf.make_sequence(fam, args.n or wf.default_length(fam), args.q)
        sig = wf.modulate(seq, cfg, symbols=args.symbols)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        path = out / "passband.f32"
        wf.save_passband(sig, path)
        print(str(path))


# --- simulate / doa / identify ------------------------------------------------------


def _scene(args) -> Scenario:
    if args.scene:
        scn = load_scenario(args.scene)
    else:
        if not args.source:
            raise UsageError("give --scene or at least one --source AZ,EL")
        arr = make_geometry(args.kind)
        srcs = []
        for i, text in enumerate(args.source):
            parts = text.split(",")
            if len(parts) < 2:
                raise UsageError(f"--source wants AZ,EL[,POWER[,Q]], got {text!r}")
            az, el = math.radians(float(parts[0])), math.radians(float(parts[1]))
            power = float(parts[2]) if len(parts) > 2 else 1.0
            q = int(parts[3]) if len(parts) > 3 else i + 1
            srcs.append(Source(az, el, power, WaveformSpec(_family(args.family), q=q)))
        scn = Scenario(arr, tuple(srcs), snr_db=args.snr)
    if args.seed is not None:
        scn = Scenario(scn.array, scn.sources, scn.snr_db, scn.snapshots, scn.sound_speed, scn.passband, args.seed)
    return scn


def cmd_simulate(args):
    scn = _scene(args)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "scene.json", json.dumps(scenario_to_dict(scn), indent=2) + "\n")
    if args.model == "passband":
        x = synth_timedomain(scn, args.samples)
        save_block(x, out / "block.f32", scn.passband.sample_rate)
        print(str(out / "block.f32"))
    else:
        X = synth_snapshots(scn).data
        # complex snapshots: real parts of all channels, then imaginary parts
        save_block(np.concatenate([X.real, X.imag]), out / "snapshots.f32", 0.0)
        print(str(out / "snapshots.f32"))


def _estimate(scn: Scenario, K, method, model):
    if model == "passband":
        x = synth_timedomain(scn, scn.passband.symbol_samples)
        ch = next(iter(chunk_and_convert(x, scn.array, sample_rate=scn.passband.sample_rate)))
        X, lam = ch.snapshots.data, scn.sound_speed / ch.center_frequency
    else:
        X, lam = synth_snapshots(scn).data, scn.wavelength
    if K is None:
        K = estimate_source_count(X)
    if K == 0:
        return []
    spec = covariance_spectrum(sample_covariance(X), scn.array, K, method=method, wavelength=lam)
    return pick_peaks(spec, K)


def cmd_doa(args):
    scn = _scene(args)
    est = _estimate(scn, args.K, args.method, args.model)
    rows = [{"device": args.device, "t": 0.0, "phi_deg": math.degrees(e.azimuth), "theta_deg": math.degrees(e.elevation)}
            for e in est]
    _emit(args, "doas", rows, ["device", "t", "phi_deg", "theta_deg"])


def cmd_identify(args):
    scn = _scene(args)
    if args.doas:
        doas = [DoaEstimate(math.radians(r["phi_deg"]), math.radians(r["theta_deg"])) for r in _load_json(args.doas)]
    else:
        doas = [DoaEstimate(s.azimuth, s.elevation) for s in scn.sources]
    fams = {s.waveform.family for s in scn.sources}
    family = fams.pop() if len(fams) == 1 else "SC-ZC"
    pool = CandidatePool(P=args.P, family=family, cfg=scn.passband)
    x = synth_timedomain(scn, scn.passband.symbol_samples)
    res = identify_block(x, scn.array, doas, pool, sound_speed=scn.sound_speed)
    rows = [{"beam_index": k, "candidate_id": int(res.confidence.ids[c]), "score": float(res.confidence.data[k, c])}
            for k, c in enumerate(res.assignment.columns)]
    if args.format == "json":
        _emit(args, "identification", obj={"assignment": rows, "confidence": res.confidence.data,
                                           "ids": list(res.confidence.ids)})
    else:
        conf = [{"beam": k, **{f"q{q}": float(v) for q, v in zip(res.confidence.ids, row)}}
                for k, row in enumerate(res.confidence.data)]
        _emit(args, "confidence", conf, ["beam"] + [f"q{q}" for q in res.confidence.ids])
        if args.out:
            write_atomic(Path(args.out) / "assignment.json", to_json(rows))


# --- localize / calibrate --------------------------------------------------------------


def cmd_localize(args):
    poses = {str(k): Pose.from_dict(v) for k, v in _load_json(args.poses).items()}
    recs = _load_json(args.doas)
    if len(poses) < 2:
        raise UsageError("need poses for at least two devices")
    groups: dict = {}
    for r in recs:
        groups.setdefault(r.get("id"), {}).setdefault(str(r["device"]), []).append(r)
    rows, fixes = [], []
    for tag, per_dev in sorted(groups.items(), key=lambda kv: str(kv[0])):
        devs = [d for d in sorted(per_dev) if d in poses]
        if len(devs) < 2:
            continue
        ref = sorted(per_dev[devs[0]], key=lambda r: r["t"])
        matches = {devs[0]: {i: i for i in range(len(ref))}}
        for d in devs[1:]:
            other = sorted(per_dev[d], key=lambda r: r["t"])
            pairs = associate([r["t"] for r in ref], [r["t"] for r in other], args.tolerance)
            matches[d] = {i: j for i, j in pairs}
            per_dev[d] = other
        per_dev[devs[0]] = ref
        for i, r0 in enumerate(ref):
            rays = []
            used = []
            for d in devs:
                if i not in matches[d]:
                    continue
                r = per_dev[d][matches[d][i]]
                u = unit_vector(math.radians(r["phi_deg"]), math.radians(r["theta_deg"]))
                rays.append(Ray(poses[d].translation, poses[d].rotation @ u))
                used.append(d)
            if len(rays) < 2:
                continue
            fx = triangulate(rays, devices=tuple(used), t=r0["t"])
            fixes.append((tag, fx))
    kept = filter_fixes([f for _, f in fixes], args.limit / 1000.0).retained if fixes else []
    keep_ids = {id(f) for f in kept}
    for tag, f in fixes:
        if id(f) in keep_ids:
            rows.append({"t": f.t, "id": tag, "x": f.position[0], "y": f.position[1], "z": f.position[2],
                         "divergence_m": f.divergence, "device_count": len(f.devices)})
    _emit(args, "fixes", rows, ["t", "id", "x", "y", "z", "divergence_m", "device_count"])


def cmd_calibrate(args):
    doc = _load_json(args.scene)
    seed = args.seed if args.seed is not None else 0
    if args.method == "pnp":
        obs = doc["observations"] if isinstance(doc, dict) else doc
        tags = np.array([o["tag"] for o in obs], dtype=float)
        dirs = np.array([unit_vector(math.radians(o["phi_deg"]), math.radians(o["theta_deg"])) for o in obs])
        res = pnp_calibrate(tags, dirs, seed=seed)
        extra = {}
    else:
        d1 = np.array([p["d1"] for p in doc["pairs"]], dtype=float)
        d2 = np.array([p["d2"] for p in doc["pairs"]], dtype=float)
        res = self_calibrate(d1, d2, float(doc["distance"]), prior=doc.get("prior"), seed=seed)
        extra = {"ranges1": res.extra["ranges1"], "ranges2": res.extra["ranges2"],
                 "data_cost": res.extra["data_cost"]}
    _emit(args, "pose", obj={"pose": res.pose.to_dict(), "residual": res.cost, "residual_rms": res.residual_rms,
                             "iterations": res.iterations, "converged": res.converged, **extra})


# --- experiment ---------------------------------------------------------------------


def cmd_experiment(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials" if args.name != "e2e" else "steps"] = args.trials
    if args.config:
        cfg = load_config(args.config, args.name, **overrides)
    else:
        cfg = make_config(args.name, **overrides)
    result = EXPERIMENTS[cfg.kind](cfg, jobs=args.jobs)
    if args.out:
        paths = write_report(result, cfg, args.out, args.format)
        for p in paths.values():
            print(str(p))
    elif args.format == "json":
        sys.stdout.write(to_json(result.rows))
    else:
        sys.stdout.write(rows_to_csv(result.rows, result.columns))


# --- parser ---------------------------------------------------------------------------


def _globals(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON config (experiment settings or option defaults)")
    p.add_argument("--seed", type=int, default=d(None), help="RNG seed (unsigned 64-bit)")
    p.add_argument("--out", default=d(None), help="output directory (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"))
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes for experiments")


def _scene_args(p):
    p.add_argument("--scene", help="scenario JSON")
    p.add_argument("--kind", default="URA", choices=GEOMETRY_KINDS, help="geometry when no scene is given")
    p.add_argument("--source", action="append", help="AZ,EL[,POWER[,Q]] in degrees (repeatable)")
    p.add_argument("--family", default="sc-zc")
    p.add_argument("--snr", type=float, default=20.0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="angloc", description="Sparse-array acoustic direction finding and localization.")
    ap.add_argument("--version", action="version", version=__version__)
    _globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("geometry", help="generate or inspect array layouts")
    _globals(g, True)
    g.add_argument("action", choices=("generate", "inspect", "coarray"))
    g.add_argument("--kind", default="URA", choices=GEOMETRY_KINDS)
    g.add_argument("--geometry-file", help="geometry JSON instead of --kind")
    g.add_argument("--pitch", type=float, default=None)
    g.add_argument("--count", type=int, default=16, help="element count for Random")
    g.set_defaults(func=cmd_geometry)

    w = sub.add_parser("waveform", help="Zadoff-Chu family sequences")
    _globals(w, True)
    w.add_argument("action", choices=("generate", "correlate", "modulate"))
    w.add_argument("--family", default="zc")
    w.add_argument("--n", type=int, default=None)
    w.add_argument("--q", type=int, default=1)
    w.add_argument("--q1", type=int, default=1)
    w.add_argument("--q2", type=int, default=2)
    w.add_argument("--raw", action="store_true", help="unnormalized correlation")
    w.add_argument("--symbols", type=int, default=1)
    w.set_defaults(func=cmd_waveform)

    s = sub.add_parser("simulate", help="synthesize a scene")
    _globals(s, True)
    _scene_args(s)
    s.add_argument("--model", choices=("narrowband", "passband"), default="narrowband")
    s.add_argument("--samples", type=int, default=None, help="passband block length")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("doa", help="estimate directions from a scene")
    _globals(d, True)
    _scene_args(d)
    d.add_argument("--K", type=int, default=None, help="source count (default: estimated)")
    d.add_argument("--method", choices=("music", "ss-music"), default="music")
    d.add_argument("--model", choices=("narrowband", "passband"), default="narrowband")
    d.add_argument("--device", default="0")
    d.set_defaults(func=cmd_doa)

    i = sub.add_parser("identify", help="beamform and assign sequence roots")
    _globals(i, True)
    _scene_args(i)
    i.add_argument("--doas", help="DoA records JSON (default: true scene directions)")
    i.add_argument("--P", type=int, default=20)
    i.set_defaults(func=cmd_identify)

    lo = sub.add_parser("localize", help="triangulate DoA records from posed devices")
    _globals(lo, True)
    lo.add_argument("--poses", required=True, help='JSON {"device": {"R": [...9], "p": [...3]}}')
    lo.add_argument("--doas", required=True, help="JSON list of {device, t, phi_deg, theta_deg[, id]}")
    lo.add_argument("--limit", type=float, default=100.0, help="divergence limit (mm)")
    lo.add_argument("--tolerance", type=float, default=0.01, help="time association tolerance (s)")
    lo.set_defaults(func=cmd_localize)

    c = sub.add_parser("calibrate", help="device pose from known tags or paired directions")
    _globals(c, True)
    c.add_argument("method", choices=("pnp", "self"))
    c.add_argument("--scene", required=True, help="observations JSON")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("experiment", help="run a Monte-Carlo sweep")
    _globals(e, True)
    e.add_argument("name", choices=EXPERIMENT_KINDS)
    e.add_argument("--trials", type=int, default=None, help="override trials (steps for e2e)")
    e.set_defaults(func=cmd_experiment)
    return ap


def _apply_config_defaults(parser, args, argv):
    """For non-experiment commands, keys of --config fill options not given on the command line."""
    if args.command == "experiment" or not args.config:
        return
    doc = _load_json(args.config)
    if not isinstance(doc, dict):
        raise UsageError("--config must hold a JSON object")
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, val in doc.items():
        k = key.replace("-", "_")
        if not hasattr(args, k):
            raise UsageError(f"config key {key!r} is not an option of {args.command}")
        if k not in given:
            setattr(args, k, val)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        _apply_config_defaults(parser, args, argv)
        args.func(args)
        return 0
    except UsageError as exc:
        _error(command, "UsageError", str(exc))
        return 2
    except Exception as exc:  # every failure becomes a machine-readable record
        _error(command, type(exc).__name__, str(exc))
        return 1


def _error(command, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "command": command}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
