"""Experiment configurations.

One dataclass per experiment kind. JSON documents map onto them field by
field; unknown keys are rejected so typos do not silently fall back to a
default. The JSON schema shipped next to this module (``schema.json``)
describes the same documents for external tooling.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..geometry import GEOMETRY_KINDS

EXPERIMENT_KINDS = ("resolution", "variance", "identification", "e2e")
SCHEMA_PATH = Path(__file__).with_name("schema.json")


class ConfigError(ValueError):
    pass


def _nonempty(name, seq):
    if len(seq) == 0:
        raise ConfigError(f"{name} must be nonempty")


def _geometries(names):
    for g in names:
        if g not in GEOMETRY_KINDS:
            raise ConfigError(f"unknown geometry {g!r}")


@dataclass
class ResolutionConfig:
    """Probability that all K sources are found within ``criterion_deg``.

    The grid is the product ``geometries x K x snr_db``; scenes are shared
    across geometries (common random numbers).
    """

    geometries: list = field(default_factory=lambda: ["URA", "Nested", "Billboard", "Open-Box", "Coprime", "Random", "URA-5x5"])
    K: list = field(default_factory=lambda: [1, 5, 10, 15, 20, 25])
    snr_db: list = field(default_factory=lambda: [20.0])
    trials: int = 200
    seed: int = 0
    snapshots: int = 4096
    max_elevation_deg: float = 60.0
    min_separation_deg: float = 15.0
    criterion_deg: float = 10.0
    # geometries listed here use plain MUSIC, the rest co-array smoothed MUSIC
    plain_music: list = field(default_factory=lambda: ["URA"])
    kind: str = "resolution"

    def validate(self):
        _nonempty("geometries", self.geometries)
        _nonempty("K", self.K)
        _nonempty("snr_db", self.snr_db)
        _geometries(self.geometries)
        if any(int(k) < 0 for k in self.K):
            raise ConfigError("K must be >= 0")
        if self.snapshots < 1:
            raise ConfigError("snapshots must be >= 1")


@dataclass
class VarianceConfig:
    """DoA variance of partial-symbol chunks per waveform family and SNR."""

    families: list = field(default_factory=lambda: ["sine", "ZC", "MS-ZC", "SC-ZC"])
    snr_db: list = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0])
    elevation_deg: list = field(default_factory=lambda: [60.0])
    trials: int = 200
    seed: int = 0
    geometry: str = "URA"
    chunk: int = 4096
    pad: int = 400
    root: int = 1
    kind: str = "variance"

    def validate(self):
        _nonempty("families", self.families)
        _nonempty("snr_db", self.snr_db)
        _nonempty("elevation_deg", self.elevation_deg)
        _geometries([self.geometry])
        for f in self.families:
            if f not in ("sine", "ZC", "MS-ZC", "SC-ZC"):
                raise ConfigError(f"unknown family {f!r}")
        if self.chunk < 16 or self.pad < 0:
            raise ConfigError("chunk must be >= 16 and pad >= 0")


@dataclass
class IdentificationConfig:
    """Full-assignment accuracy of K sources against a pool of P roots.

    Each condition is ``{"snr_db": float, "separation_deg": float | null}``.
    ``null`` draws all sources at least ``wide_separation_deg`` apart; a
    number places one pair of sources exactly that far apart with every
    other pair at least that far apart.
    """

    conditions: list = field(default_factory=lambda: (
        [{"snr_db": s, "separation_deg": None} for s in (10.0, 0.0, -10.0, -20.0)]
        + [{"snr_db": -20.0, "separation_deg": s} for s in (2.0, 5.0, 10.0)]
    ))
    K: int = 15
    P: int = 20
    family: str = "SC-ZC"
    trials: int = 200
    seed: int = 0
    geometry: str = "URA"
    wide_separation_deg: float = 15.0
    min_elevation_deg: float = 10.0
    max_elevation_deg: float = 70.0
    kind: str = "identification"

    def validate(self):
        _nonempty("conditions", self.conditions)
        _geometries([self.geometry])
        if not 0 <= self.K <= self.P:
            raise ConfigError(f"need 0 <= K <= P, got K={self.K}, P={self.P}")
        for c in self.conditions:
            if set(c) != {"snr_db", "separation_deg"}:
                raise ConfigError(f"condition needs snr_db and separation_deg: {c}")
            if c["separation_deg"] is not None and not c["separation_deg"] > 0:
                raise ConfigError("separation_deg must be positive or null")
        if self.family not in ("ZC", "MS-ZC", "SC-ZC"):
            raise ConfigError(f"unknown family {self.family!r}")


@dataclass
class E2EConfig:
    """Two-device localization of moving and static tags.

    ``mode`` selects where directions come from: ``exact`` (true directions),
    ``noisy`` (true directions with Gaussian angular noise of
    ``angular_noise_deg``) or ``chain`` (synthesized recordings through
    MUSIC and identification). In chain mode every geometry is masked out of
    the same full-URA recordings.
    """

    mode: str = "chain"
    geometries: list = field(default_factory=lambda: ["URA", "Billboard", "Nested", "Open-Box", "Coprime", "Random", "URA-5x5"])
    steps: int = 200
    seed: int = 0
    snr_db: float = 0.0
    reflection: float = 0.9
    angular_noise_deg: float = 1.0
    divergence_limits_mm: list = field(default_factory=lambda: [100.0, 50.0, 10.0, 1.0])
    moving_ids: list = field(default_factory=lambda: [12])
    static_ids: list = field(default_factory=lambda: [13, 14])
    P: int = 20
    family: str = "SC-ZC"
    room: list = field(default_factory=lambda: [[-1.5, 5.0], [-3.0, 3.0], [0.0, 3.0]])
    tag_box: list = field(default_factory=lambda: [[0.3, 3.2], [-1.8, 1.8], [0.8, 1.6]])
    # device poses, rotation as axis-angle (rad), translation (m); both
    # defaults hang from the ceiling facing down with a small tilt
    devices: list = field(default_factory=lambda: [
        {"rotation": [-2.987902, 0.0, 0.149801], "translation": [0.0, 0.0, 2.6]},
        {"rotation": [2.932982, 0.752144, 0.300858], "translation": [3.5, 0.5, 2.6]},
    ])
    speed: float = 1.0
    hop_s: float = 0.01
    plain_music: list = field(default_factory=lambda: ["URA"])
    # MUSIC signal-subspace dimension; None uses the tag count. Larger values
    # absorb reflections; it is capped per geometry at (virtual) size - 1
    subspace_dim: int | None = 20
    kind: str = "e2e"

    def validate(self):
        if self.mode not in ("exact", "noisy", "chain"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        _nonempty("geometries", self.geometries)
        _nonempty("divergence_limits_mm", self.divergence_limits_mm)
        _geometries(self.geometries)
        if len(self.devices) < 2:
            raise ConfigError("need at least two devices")
        for d in self.devices:
            if set(d) != {"rotation", "translation"} or len(d["rotation"]) != 3 or len(d["translation"]) != 3:
                raise ConfigError("each device needs 3-vector rotation and translation")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.moving_ids and not self.static_ids:
            raise ConfigError("need at least one tag")
        ids = list(self.moving_ids) + list(self.static_ids)
        if len(set(ids)) != len(ids) or any(not 1 <= q <= self.P for q in ids):
            raise ConfigError("tag ids must be distinct roots in 1..P")
        if any(not v > 0 for v in self.divergence_limits_mm):
            raise ConfigError("divergence limits must be positive")
        if not 0 <= self.reflection < 1:
            raise ConfigError("reflection must lie in [0, 1)")


CONFIG_TYPES = {
    "resolution": ResolutionConfig,
    "variance": VarianceConfig,
    "identification": IdentificationConfig,
    "e2e": E2EConfig,
}


def make_config(kind: str, data: dict | None = None, **overrides):
    """Build and validate a config of ``kind`` from a JSON-like dict."""
    if kind not in CONFIG_TYPES:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    data = dict(data or {})
    data.update(overrides)
    if data.get("kind", kind) != kind:
        raise ConfigError(f"config is for {data['kind']!r}, not {kind!r}")
    data["kind"] = kind
    cls = CONFIG_TYPES[kind]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {kind} config keys: {sorted(unknown)}")
    cfg = cls(**data)
    if getattr(cfg, "trials", 1) < 1:
        raise ConfigError("trials must be >= 1")
    cfg.validate()
    return cfg


def load_config(path, kind: str | None = None, **overrides):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    kind = kind or data.get("kind")
    if kind is None:
        raise ConfigError("config has no 'kind' and none was given")
    return make_config(kind, data, **overrides)


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg) -> str:
    """SHA-256 of the canonical JSON form of the config."""
    text = json.dumps(config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_schema() -> dict:
    with open(SCHEMA_PATH) as fh:
        return json.load(fh)
