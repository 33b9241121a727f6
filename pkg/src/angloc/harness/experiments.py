"""The four Monte-Carlo sweeps.

Every sweep returns an :class:`ExperimentResult`: a list of flat rows (one per
condition) plus the column order for CSV output. Trials draw from
:func:`~angloc.harness.runner.trial_rng` keyed by condition and trial index,
so a run is reproducible for a given config and independent of ``jobs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache, partial

import numpy as np

from .. import waveforms as wf
from ..doa import DoaError, DoaEstimate, covariance_spectrum, music_spectrum, pick_peaks, sample_covariance
from ..geometry import difference_coarray, make_geometry, smoothing_plan
from ..ident import CandidatePool, IdentError, identify_spectrum
from ..loc import GeometryDegenerateError, Ray, triangulate
from ..sim import (
    Scenario,
    Source,
    WaveformSpec,
    random_directions,
    synth_snapshots,
    synth_spectrum,
    synth_timedomain,
    unit_vector,
)
from . import metrics
from .config import E2EConfig, IdentificationConfig, ResolutionConfig, VarianceConfig
from .runner import run_trials, trial_rng
from .scenes import device_poses, device_sources, local_direction, separated_directions, trajectory


@dataclass
class ExperimentResult:
    kind: str
    columns: list
    rows: list


def _method(geometry: str, plain) -> str:
    return "music" if geometry in plain else "ss-music"


@lru_cache(maxsize=None)
def _masked(geometry: str):
    full = make_geometry("URA")
    arr = make_geometry(geometry)
    return arr, full.mask_indices(arr)


@lru_cache(maxsize=None)
def _capacity(geometry: str, method: str) -> int:
    """Dimension of the covariance MUSIC works on."""
    arr = make_geometry(geometry)
    if method == "music":
        return arr.size
    return smoothing_plan(difference_coarray(arr)).window_size


@lru_cache(maxsize=None)
def _pool(P: int, family: str) -> CandidatePool:
    return CandidatePool(P=P, family=family)


# --- resolution -----------------------------------------------------------------


def _resolution_trial(task, cfg: ResolutionConfig):
    ki, si, t = task
    K = int(cfg.K[ki])
    snr = float(cfg.snr_db[si])
    rng = trial_rng(cfg.seed, ki, si, t)
    if K == 0:
        return [True] * len(cfg.geometries)
    az, el = random_directions(rng, K, max_elevation=math.radians(cfg.max_elevation_deg),
                               min_separation=math.radians(cfg.min_separation_deg))
    full = make_geometry("URA")
    scn = Scenario(full, tuple(Source(a, e) for a, e in zip(az, el)), snr_db=snr,
                   snapshots=cfg.snapshots, seed=int(rng.integers(2**63)))
    X = synth_snapshots(scn).data
    out = []
    for g in cfg.geometries:
        arr, mi = _masked(g)
        try:
            spec = covariance_spectrum(sample_covariance(X[mi]), arr, K, method=_method(g, cfg.plain_music))
        except DoaError:
            out.append(False)
            continue
        est = pick_peaks(spec, K)
        err = metrics.matched_errors(az, el, [e.azimuth for e in est], [e.elevation for e in est])
        out.append(bool(np.all(err < cfg.criterion_deg)))
    return out


def run_resolution_sweep(cfg: ResolutionConfig, jobs: int = 1) -> ExperimentResult:
    """Probability of resolving all K sources per (geometry, K, SNR).

    Scenes are synthesized on the full URA and every geometry sees its own
    channel subset of the same data.
    """
    tasks = [(ki, si, t) for ki in range(len(cfg.K)) for si in range(len(cfg.snr_db)) for t in range(cfg.trials)]
    res = run_trials(partial(_resolution_trial, cfg=cfg), tasks, jobs)
    res = np.asarray(res, dtype=bool).reshape(len(cfg.K), len(cfg.snr_db), cfg.trials, len(cfg.geometries))
    rows = []
    for gi, g in enumerate(cfg.geometries):
        for ki, K in enumerate(cfg.K):
            for si, snr in enumerate(cfg.snr_db):
                ok = res[ki, si, :, gi]
                rows.append({"geometry": g, "K": int(K), "snr_db": float(snr),
                             "prob_resolution": metrics.probability(ok), "trials": cfg.trials})
    return ExperimentResult("resolution", ["geometry", "K", "snr_db", "prob_resolution", "trials"], rows)


# --- variance -------------------------------------------------------------------


def _variance_trial(task, cfg: VarianceConfig):
    ei, si, t = task
    el = math.radians(cfg.elevation_deg[ei])
    snr = float(cfg.snr_db[si])
    # common random numbers: the same draws for every family
    rng = trial_rng(cfg.seed, ei, si, t)
    az = float(rng.uniform(-np.pi, np.pi))
    pcfg = wf.PassbandConfig()
    start = int(rng.integers(pcfg.symbol_samples))
    phase = float(rng.uniform(0, 2 * np.pi))
    noise_seed = int(rng.integers(2**63))
    arr = make_geometry(cfg.geometry)
    lam = 343.0 / pcfg.carrier
    out = []
    for fam in cfg.families:
        spec = WaveformSpec(fam, q=cfg.root)
        scn = Scenario(arr, (Source(az, el, 1.0, spec, offset=0, phase=phase),), snr_db=snr, seed=noise_seed)
        x = synth_timedomain(scn, cfg.chunk + 2 * cfg.pad, start - cfg.pad)
        y = wf.bandpass(x, pcfg.sample_rate, pcfg.band)[:, cfg.pad:cfg.pad + cfg.chunk]
        z = wf.analytic_signal(y)
        est = pick_peaks(music_spectrum(sample_covariance(z), arr, 1, wavelength=lam), 1)[0]
        out.append(metrics.tangent_errors(az, el, est.azimuth, est.elevation))
    return out


def run_variance_sweep(cfg: VarianceConfig, jobs: int = 1) -> ExperimentResult:
    """DoA variance of single-source partial-symbol chunks per family, SNR and elevation.

    Each trial picks a random azimuth, chunk start and carrier phase; the
    chunk is band-filtered, made analytic and fed to MUSIC with the nominal
    carrier wavelength. The variance is the trace of the tangent-plane error
    covariance in deg^2; ``bias_deg`` is the norm of the mean tangent error.
    """
    tasks = [(ei, si, t) for ei in range(len(cfg.elevation_deg)) for si in range(len(cfg.snr_db))
             for t in range(cfg.trials)]
    res = run_trials(partial(_variance_trial, cfg=cfg), tasks, jobs)
    res = np.asarray(res).reshape(len(cfg.elevation_deg), len(cfg.snr_db), cfg.trials, len(cfg.families), 2)
    rows = []
    for fi, fam in enumerate(cfg.families):
        for ei, el in enumerate(cfg.elevation_deg):
            for si, snr in enumerate(cfg.snr_db):
                e = res[ei, si, :, fi]
                rows.append({"family": fam, "snr_db": float(snr), "elevation_deg": float(el),
                             "variance_deg2": metrics.direction_variance(e),
                             "bias_deg": float(np.linalg.norm(e.mean(axis=0))), "trials": cfg.trials})
    return ExperimentResult("variance", ["family", "snr_db", "elevation_deg", "variance_deg2", "bias_deg", "trials"],
                            rows)


# --- identification ---------------------------------------------------------------


def _identification_trial(task, cfg: IdentificationConfig):
    ci, t = task
    cond = cfg.conditions[ci]
    if cfg.K == 0:
        return True
    rng = trial_rng(cfg.seed, ci, t)
    lo, hi = math.radians(cfg.min_elevation_deg), math.radians(cfg.max_elevation_deg)
    if cond["separation_deg"] is None:
        az, el = random_directions(rng, cfg.K, min_elevation=lo, max_elevation=hi,
                                   min_separation=math.radians(cfg.wide_separation_deg))
    else:
        az, el = separated_directions(rng, cfg.K, math.radians(cond["separation_deg"]),
                                      min_elevation=lo, max_elevation=hi)
    pool = _pool(cfg.P, cfg.family)
    ids = [int(q) for q in rng.permutation(pool.ids)[:cfg.K]]
    arr = make_geometry(cfg.geometry)
    srcs = tuple(Source(a, e, 1.0, pool.spec(q)) for a, e, q in zip(az, el, ids))
    scn = Scenario(arr, srcs, snr_db=float(cond["snr_db"]), seed=int(rng.integers(2**63)))
    Xb, bins = synth_spectrum(scn)
    # beams are steered at the true directions, isolating identification from DoA errors
    res = identify_spectrum(Xb, bins, arr, [DoaEstimate(a, e) for a, e in zip(az, el)], pool)
    return list(res.ids) == ids


def run_identification_sweep(cfg: IdentificationConfig, jobs: int = 1) -> ExperimentResult:
    """Fraction of trials where every source gets its own root."""
    tasks = [(ci, t) for ci in range(len(cfg.conditions)) for t in range(cfg.trials)]
    res = np.asarray(run_trials(partial(_identification_trial, cfg=cfg), tasks, jobs), dtype=bool)
    res = res.reshape(len(cfg.conditions), cfg.trials)
    rows = []
    for ci, c in enumerate(cfg.conditions):
        sep = "wide" if c["separation_deg"] is None else float(c["separation_deg"])
        rows.append({"snr_db": float(c["snr_db"]), "separation_deg": sep, "K": cfg.K, "P": cfg.P,
                     "family": cfg.family, "prob_identification": metrics.probability(res[ci]),
                     "trials": cfg.trials})
    return ExperimentResult("identification",
                            ["snr_db", "separation_deg", "K", "P", "family", "prob_identification", "trials"], rows)


# --- end to end -------------------------------------------------------------------


def e2e_tags(cfg: E2EConfig) -> np.ndarray:
    """Tag positions per step, shape (steps, n_tags, 3); moving tags first."""
    rng = trial_rng(cfg.seed, 0xE2E)
    box = np.asarray(cfg.tag_box, dtype=float)
    moving = [trajectory(rng, cfg.steps, box, speed=cfg.speed, hop=cfg.hop_s) for _ in cfg.moving_ids]
    static = [np.repeat(rng.uniform(box[:, 0], box[:, 1])[None], cfg.steps, axis=0) for _ in cfg.static_ids]
    return np.stack(moving + static, axis=1)


def _perturb(rng, u, sigma):
    """Unit vector ``u`` rotated by an isotropic Gaussian tangent error of std ``sigma`` per axis."""
    e = rng.standard_normal(3) * sigma
    e -= (e @ u) * u
    v = u + e
    return v / np.linalg.norm(v)


def _e2e_trial(step, cfg: E2EConfig, tags_all):
    """Per geometry and tag: (divergence m, position error m, mean ray angle error deg) or None."""
    rng = trial_rng(cfg.seed, 1, step)
    poses = device_poses(cfg.devices)
    tags = tags_all[step]
    ids = list(cfg.moving_ids) + list(cfg.static_ids)
    truth = [[local_direction(P, x)[:2] for x in tags] for P in poses]
    if cfg.mode in ("exact", "noisy"):
        per_dev = []
        for d, P in enumerate(poses):
            found = {}
            for q, (a, e) in zip(ids, truth[d]):
                u = unit_vector(a, e)
                if cfg.mode == "noisy":
                    u = _perturb(rng, u, math.radians(cfg.angular_noise_deg))
                found[q] = u
            per_dev.append(found)
        return {"ideal": _fixes(poses, per_dev, ids, tags, truth)}
    pool = _pool(cfg.P, cfg.family)
    pcfg = pool.cfg
    full = make_geometry("URA")
    specs = [pool.spec(q) for q in ids]
    data = []
    for P in poses:
        srcs = device_sources(P, tags, specs, rng, room=cfg.room, reflection=cfg.reflection,
                              sample_rate=pcfg.sample_rate, symbol_samples=pcfg.symbol_samples)
        scn = Scenario(full, tuple(srcs), snr_db=cfg.snr_db, seed=int(rng.integers(2**63)))
        data.append(synth_spectrum(scn))
    K = len(ids)
    lam = 343.0 / pcfg.carrier
    out = {}
    for g in cfg.geometries:
        arr, mi = _masked(g)
        per_dev = []
        for Xb, bins in data:
            Xg = Xb[mi]
            R = Xg @ Xg.conj().T / Xg.shape[1]
            try:
                method = _method(g, cfg.plain_music)
                dim = K if cfg.subspace_dim is None else max(K, min(cfg.subspace_dim, _capacity(g, method) - 1))
                spec = covariance_spectrum(R, arr, dim, method=method, wavelength=lam)
                est = pick_peaks(spec, K)
                res = identify_spectrum(Xg, bins, arr, est, pool)
            except (DoaError, IdentError):
                per_dev.append({})
                continue
            per_dev.append({q: unit_vector(e.azimuth, e.elevation) for q, e in zip(res.ids, est)})
        out[g] = _fixes(poses, per_dev, ids, tags, truth)
    return out


def _fixes(poses, per_dev, ids, tags, truth):
    rows = []
    for j, q in enumerate(ids):
        if not all(q in found for found in per_dev):
            rows.append(None)
            continue
        rays, ang = [], []
        for d, P in enumerate(poses):
            u = per_dev[d][q]
            rays.append(Ray(P.translation, P.rotation @ u))
            ut = unit_vector(*truth[d][j])
            ang.append(math.degrees(math.acos(min(1.0, max(-1.0, float(u @ ut))))))
        try:
            fix = triangulate(rays)
        except GeometryDegenerateError:
            rows.append(None)
            continue
        rows.append((fix.divergence, float(np.linalg.norm(fix.position - tags[j])), float(np.mean(ang))))
    return rows


E2E_COLUMNS = ["geometry", "divergence_limit_mm", "valid_fraction", "error_p50_mm", "error_p95_mm",
               "error_p100_mm", "angle_p50_deg", "angle_p95_deg", "angle_p100_deg", "fixes", "samples"]


def run_e2e_localization(cfg: E2EConfig, jobs: int = 1) -> ExperimentResult:
    """Two-device localization of a moving tag and static tags.

    Each step triangulates every tag identified on both devices; a fix is
    valid if its divergence is within the limit. Errors are percentiles
    over valid fixes; ``valid_fraction`` counts valid fixes over all
    (step, tag) samples, so missed identifications count as invalid.
    """
    tags = e2e_tags(cfg)
    res = run_trials(partial(_e2e_trial, cfg=cfg, tags_all=tags), range(cfg.steps), jobs)
    labels = list(res[0]) if res else []
    n_samples = cfg.steps * tags.shape[1]
    rows = []
    for g in labels:
        fx = np.array([r for step in res for r in step[g] if r is not None]).reshape(-1, 3)
        for lim in cfg.divergence_limits_mm:
            kept = fx[fx[:, 0] <= lim / 1000.0]
            pe = metrics.percentiles(kept[:, 1] * 1000.0)
            pa = metrics.percentiles(kept[:, 2])
            rows.append({"geometry": g, "divergence_limit_mm": float(lim),
                         "valid_fraction": len(kept) / n_samples,
                         "error_p50_mm": pe[0], "error_p95_mm": pe[1], "error_p100_mm": pe[2],
                         "angle_p50_deg": pa[0], "angle_p95_deg": pa[1], "angle_p100_deg": pa[2],
                         "fixes": len(kept), "samples": n_samples})
    return ExperimentResult("e2e", E2E_COLUMNS, rows)


EXPERIMENTS = {
    "resolution": run_resolution_sweep,
    "variance": run_variance_sweep,
    "identification": run_identification_sweep,
    "e2e": run_e2e_localization,
}
