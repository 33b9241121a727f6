"""Experiment output: data table plus a summary with provenance."""

from __future__ import annotations

from pathlib import Path

from .. import __version__
from .config import config_dict, config_hash
from .experiments import EXPERIMENTS, ExperimentResult
from .runner import rows_to_csv, to_json, write_atomic


def summary(result: ExperimentResult, cfg) -> dict:
    return {
        "experiment": result.kind,
        "version": __version__,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "config": config_dict(cfg),
        "columns": result.columns,
        "rows": result.rows,
    }


def write_report(result: ExperimentResult, cfg, out_dir, fmt: str = "csv") -> dict:
    """Write ``<kind>.csv`` (or ``<kind>.json``) and ``<kind>.summary.json``.

    Contents depend only on the config, so reruns give identical bytes.
    Returns the written paths.
    """
    out = Path(out_dir)
    paths = {}
    if fmt == "csv":
        paths["data"] = out / f"{result.kind}.csv"
        write_atomic(paths["data"], rows_to_csv(result.rows, result.columns))
    elif fmt == "json":
        paths["data"] = out / f"{result.kind}.json"
        write_atomic(paths["data"], to_json(result.rows))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    paths["summary"] = out / f"{result.kind}.summary.json"
    write_atomic(paths["summary"], to_json(summary(result, cfg)))
    return paths


def run_experiment(cfg, out_dir=None, fmt: str = "csv", jobs: int = 1) -> ExperimentResult:
    result = EXPERIMENTS[cfg.kind](cfg, jobs=jobs)
    if out_dir is not None:
        write_report(result, cfg, out_dir, fmt)
    return result
