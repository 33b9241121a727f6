"""Scene synthesis: narrowband snapshots and sampled passband recordings.

Sign convention: a plane wave arriving from unit direction ``u`` reaches
sensor ``j`` at position ``p_j`` earlier by ``tau_j = p_j . u / c`` than at the
origin, so the recording is ``x_j(t) = s(t + tau_j)``. For a narrowband
analytic signal this gives the phase factor ``exp(+j 2 pi f tau_j)``, which is
exactly the steering vector entry ``exp(j 2 pi (m_x tb + m_y pb))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np

from . import waveforms as wf
from .geometry import GridArray

SOUND_SPEED = 343.0


class SceneError(ValueError):
    pass


def unit_vector(azimuth, elevation) -> np.ndarray:
    """Unit direction(s) for azimuth ``phi`` and elevation ``theta`` measured from zenith."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    st = np.sin(el)
    return np.stack([st * np.cos(az), st * np.sin(az), np.cos(el)], axis=-1)


def wrap_azimuth(az):
    """Map to [-pi, pi)."""
    return (np.asarray(az) + np.pi) % (2 * np.pi) - np.pi


def angles_from_vector(u) -> tuple[float, float]:
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    el = math.acos(min(1.0, max(-1.0, u[2])))
    az = float(wrap_azimuth(math.atan2(u[1], u[0])))
    return az, el


def spherical_distance(az1, el1, az2, el2):
    """Great-circle angle between two directions (radians)."""
    u1 = unit_vector(az1, el1)
    u2 = unit_vector(az2, el2)
    dot = np.clip(np.sum(u1 * u2, axis=-1), -1.0, 1.0)
    # atan2 form keeps precision for tiny angles
    cross = np.linalg.norm(np.cross(u1, u2), axis=-1)
    return np.arctan2(cross, dot)


@dataclass(frozen=True)
class DirectionCosines:
    azimuth: float
    elevation: float
    wavelength: float
    pitch: float

    def __post_init__(self):
        if not -np.pi <= self.azimuth < np.pi:
            raise SceneError(f"azimuth {self.azimuth} outside [-pi, pi)")
        if not 0 <= self.elevation < np.pi / 2:
            raise SceneError(f"elevation {self.elevation} outside [0, pi/2)")
        if self.wavelength <= 0 or self.pitch <= 0:
            raise SceneError("wavelength and pitch must be positive")

    @property
    def ratio(self) -> float:
        return self.pitch / self.wavelength

    @property
    def theta_bar(self) -> float:
        return self.ratio * math.sin(self.elevation) * math.cos(self.azimuth)

    @property
    def phi_bar(self) -> float:
        return self.ratio * math.sin(self.elevation) * math.sin(self.azimuth)

    @classmethod
    def from_cosines(cls, theta_bar: float, phi_bar: float, wavelength: float, pitch: float):
        ratio = pitch / wavelength
        r = math.hypot(theta_bar, phi_bar) / ratio
        if r > 1 + 1e-12:
            raise SceneError("direction cosines outside the visible region")
        el = math.asin(min(r, 1.0))
        az = float(wrap_azimuth(math.atan2(phi_bar, theta_bar))) if r > 0 else 0.0
        return cls(az, el, wavelength, pitch)


def steering_matrix(indices, theta_bar, phi_bar) -> np.ndarray:
    """Steering vectors as columns, shape (M, K), for grid ``indices`` (M, 2)."""
    idx = np.asarray(indices, dtype=float)
    tb = np.atleast_1d(np.asarray(theta_bar, dtype=float))
    pb = np.atleast_1d(np.asarray(phi_bar, dtype=float))
    return np.exp(2j * np.pi * (np.outer(idx[:, 0], tb) + np.outer(idx[:, 1], pb)))


def steering_vector(array: GridArray, direction: DirectionCosines) -> np.ndarray:
    return steering_matrix(array.indices, direction.theta_bar, direction.phi_bar)[:, 0]


@dataclass(frozen=True)
class WaveformSpec:
    """Emitted waveform: ``family`` in {"sine", "ZC", "MS-ZC", "SC-ZC"} with length ``N`` and root ``q``."""

    family: str = "SC-ZC"
    N: int | None = None
    q: int = 1

    def length(self, cfg: wf.PassbandConfig) -> int:
        return self.N if self.N is not None else wf.default_length(self.family, cfg.bandwidth, cfg.symbol_time)

    def sequence(self, cfg: wf.PassbandConfig) -> wf.Sequence:
        if self.family == "sine":
            raise SceneError("sine has no chip sequence")
        return wf.make_sequence(self.family, self.length(cfg), self.q)


@dataclass(frozen=True)
class Source:
    azimuth: float
    elevation: float
    power: float = 1.0
    waveform: WaveformSpec = field(default_factory=WaveformSpec)
    # emission start within the symbol (samples) and carrier phase; None draws from the scene RNG
    offset: int | None = None
    phase: float | None = None


@dataclass(frozen=True)
class Scenario:
    array: GridArray
    sources: tuple[Source, ...]
    snr_db: float = 20.0
    snapshots: int = 4096
    sound_speed: float = SOUND_SPEED
    passband: wf.PassbandConfig = field(default_factory=wf.PassbandConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not math.isfinite(self.snr_db):
            raise SceneError("snr must be finite")
        if self.sound_speed <= 0:
            raise SceneError("sound speed must be positive")
        dirs = [tuple(np.round(unit_vector(s.azimuth, s.elevation), 12)) for s in self.sources]
        if len(set(dirs)) != len(dirs):
            raise SceneError("source directions must be distinct")
        for s in self.sources:
            if s.power <= 0:
                raise SceneError("source power must be positive")

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.passband.carrier

    @property
    def noise_power(self) -> float:
        total = sum(s.power for s in self.sources) if self.sources else 1.0
        return total / 10 ** (self.snr_db / 10)

    def cosines(self, wavelength: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        lam = self.wavelength if wavelength is None else wavelength
        ratio = self.array.pitch / lam
        az = np.array([s.azimuth for s in self.sources])
        el = np.array([s.elevation for s in self.sources])
        return ratio * np.sin(el) * np.cos(az), ratio * np.sin(el) * np.sin(az)


@dataclass
class SnapshotMatrix:
    data: np.ndarray
    array: GridArray
    start: int = 0
    center_frequency: float | None = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.array.size:
            raise SceneError(f"data shape {self.data.shape} does not match {self.array.size} sensors")

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


def _complex_gaussian(rng, shape, var):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synth_snapshots(scn: Scenario) -> SnapshotMatrix:
    """Narrowband model ``x = A s + n`` with circular Gaussian amplitudes and noise."""
    rng = np.random.default_rng(scn.seed)
    M, N = scn.array.size, scn.snapshots
    x = _complex_gaussian(rng, (M, N), scn.noise_power)
    if scn.sources:
        tb, pb = scn.cosines()
        A = steering_matrix(scn.array.indices, tb, pb)
        powers = np.array([s.power for s in scn.sources])
        S = _complex_gaussian(rng, (len(powers), N), 1.0) * np.sqrt(powers)[:, None]
        x = x + A @ S
    return SnapshotMatrix(x, scn.array)


# --- time domain ----------------------------------------------------------------


def geometric_delays(positions, azimuth, elevation, sound_speed: float = SOUND_SPEED) -> np.ndarray:
    """Arrival advance ``tau_j = p_j . u / c`` (seconds), one per sensor."""
    if sound_speed <= 0:
        raise SceneError("sound speed must be positive")
    return np.asarray(positions, dtype=float) @ unit_vector(azimuth, elevation) / sound_speed


def fractional_advance(x, tau, sample_rate: float) -> np.ndarray:
    """Circularly advance ``x`` (last axis) by ``tau`` seconds: y(t) = x(t + tau).

    ``tau`` broadcasts against the leading axes. Exact for periodic band-limited
    input; pad the input when that does not hold.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    tau = np.asarray(tau, dtype=float)[..., None]
    if np.isrealobj(x):
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        ph = np.exp(2j * np.pi * f * tau)
        if n % 2 == 0:
            # keep the Nyquist bin real so the output stays real and shift-consistent
            ph[..., -1] = np.cos(2 * np.pi * f[-1] * tau[..., 0])
        return np.fft.irfft(np.fft.rfft(x, axis=-1) * ph, n=n, axis=-1)
    f = np.fft.fftfreq(n, 1.0 / sample_rate)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.exp(2j * np.pi * f * tau), axis=-1)


@dataclass(frozen=True)
class EmittedSymbol:
    """One period of a source's passband emission, scaled to unit in-band power."""

    samples: np.ndarray
    in_band_fraction: float


@lru_cache(maxsize=64)
def _quadrature_spectra(spec: WaveformSpec, cfg: wf.PassbandConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided spectra of the symbol at carrier phase 0 and pi/2, plus the in-band mask."""
    ns = cfg.symbol_samples
    out = []
    for ph in (0.0, np.pi / 2):
        if spec.family == "sine":
            s = wf.sine_waveform(cfg, ns, phase=ph)
        else:
            s = wf.modulate(spec.sequence(cfg), cfg, phase=ph).samples
        out.append(np.fft.rfft(s))
    f = np.fft.rfftfreq(ns, 1.0 / cfg.sample_rate)
    lo, hi = cfg.band
    mask = (f >= lo) & (f <= hi)
    for a in out:
        a.setflags(write=False)
    return out[0], out[1], mask


def symbol_spectrum(spec: WaveformSpec, cfg: wf.PassbandConfig, phase: float = 0.0) -> tuple[np.ndarray, float]:
    """One-sided spectrum of one emitted period scaled to unit in-band power, and its in-band fraction."""
    S0, S1, mask = _quadrature_spectra(spec, cfg)
    S = math.cos(phase) * S0 + math.sin(phase) * S1
    ns = cfg.symbol_samples
    p = np.abs(S) ** 2
    inband = p[mask].sum()
    # mean-square power of the in-band part of a real periodic signal (Parseval)
    p_in = 2 * inband / ns**2
    return S / np.sqrt(p_in), float(inband / p.sum())


def emitted_symbol(spec: WaveformSpec, cfg: wf.PassbandConfig, phase: float = 0.0) -> EmittedSymbol:
    S, frac = symbol_spectrum(spec, cfg, phase)
    return EmittedSymbol(np.fft.irfft(S, n=cfg.symbol_samples), frac)


def source_spectra(scn: Scenario, offsets, phases) -> np.ndarray:
    """Per-sensor one-sided spectra (M, ns//2 + 1) of one emission period at every sensor.

    Geometric delay and emission offset are both applied as linear phase, so
    the result is the exact periodic recording.
    """
    cfg = scn.passband
    ns = cfg.symbol_samples
    f = np.fft.rfftfreq(ns, 1.0 / cfg.sample_rate)
    idx = scn.array.indices
    ux, uy = np.unique(idx[:, 0], return_inverse=True), np.unique(idx[:, 1], return_inverse=True)
    X = np.zeros((scn.array.size, len(f)), dtype=complex)
    tmp = np.empty_like(X)
    for s, off, ph in zip(scn.sources, offsets, phases):
        S, _ = symbol_spectrum(s.waveform, cfg, ph)
        S = S * math.sqrt(s.power) * np.exp(2j * np.pi * f * off / cfg.sample_rate)
        u = unit_vector(s.azimuth, s.elevation)
        step = scn.array.pitch / scn.sound_speed
        # delay is separable on the grid: tau = step * (mx * u_x + my * u_y)
        ex = np.exp(2j * np.pi * np.outer(ux[0] * step * u[0], f))
        ey = np.exp(2j * np.pi * np.outer(uy[0] * step * u[1], f))
        np.multiply(ex[ux[1]], ey[uy[1]], out=tmp)
        tmp *= S[None, :]
        X += tmp
    if ns % 2 == 0:
        X[:, -1] = X[:, -1].real
    return X


def analysis_bins(cfg: wf.PassbandConfig, n: int | None = None, margin: float = 600.0) -> np.ndarray:
    """One-sided DFT bins (length ``n`` block) within ``bandwidth/2 + margin`` of the carrier."""
    n = cfg.symbol_samples if n is None else n
    f = np.fft.rfftfreq(n, 1.0 / cfg.sample_rate)
    return np.where(np.abs(f - cfg.carrier) <= cfg.bandwidth / 2 + margin)[0]


def synth_spectrum(scn: Scenario, bins: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """DFT of a one-symbol cyclic recording restricted to ``bins``, with noise.

    Statistically identical to ``np.fft.rfft(synth_timedomain(scn))[:, bins]``:
    the rfft of white real noise with variance ``v`` has independent circular
    Gaussian bins of variance ``n * v``. Returns (spectra (M, nb), bins).
    """
    cfg = scn.passband
    ns = cfg.symbol_samples
    bins = analysis_bins(cfg) if bins is None else np.asarray(bins)
    if np.any(bins <= 0) or np.any(2 * bins >= ns):
        raise SceneError("bins must exclude DC and Nyquist")
    rng = np.random.default_rng(scn.seed)
    offsets, phases = draw_emission(scn, rng)
    f = bins * cfg.sample_rate / ns
    idx = scn.array.indices
    ux, uy = np.unique(idx[:, 0], return_inverse=True), np.unique(idx[:, 1], return_inverse=True)
    step = scn.array.pitch / scn.sound_speed
    X = np.zeros((scn.array.size, len(bins)), dtype=complex)
    for s, off, ph in zip(scn.sources, offsets, phases):
        S, _ = symbol_spectrum(s.waveform, cfg, ph)
        S = S[bins] * math.sqrt(s.power) * np.exp(2j * np.pi * f * off / cfg.sample_rate)
        u = unit_vector(s.azimuth, s.elevation)
        ex = np.exp(2j * np.pi * np.outer(ux[0] * step * u[0], f))
        ey = np.exp(2j * np.pi * np.outer(uy[0] * step * u[1], f))
        X += S[None, :] * ex[ux[1]] * ey[uy[1]]
    var = scn.noise_power * (cfg.sample_rate / 2) / cfg.bandwidth
    X += _complex_gaussian(rng, X.shape, ns * var)
    return X, bins


def draw_emission(scn: Scenario, rng) -> tuple[list[int], list[float]]:
    """Emission offsets (samples) and carrier phases, drawn where the source leaves them open."""
    ns = scn.passband.symbol_samples
    offsets, phases = [], []
    for s in scn.sources:
        offsets.append(int(rng.integers(ns)) if s.offset is None else int(s.offset))
        phases.append(float(rng.uniform(0, 2 * np.pi)) if s.phase is None else float(s.phase))
    return offsets, phases


def synth_timedomain(scn: Scenario, n_samples: int | None = None, start: int = 0,
                     *, noise: bool = True, return_offsets: bool = False):
    """Real (M, n_samples) recording of all sources with exact fractional delays plus noise.

    Sources emit their symbol periodically and without gaps, so a recording is
    a window onto a periodic signal. Delays are applied as linear phase over one
    full period, which makes them exact. ``start`` is the absolute sample index
    of the first output sample (a source with offset ``o`` emits sample
    ``(t + o) mod ns`` of its symbol at time ``t``).
    """
    cfg = scn.passband
    ns = cfg.symbol_samples
    n_samples = ns if n_samples is None else int(n_samples)
    rng = np.random.default_rng(scn.seed)
    offsets, phases = draw_emission(scn, rng)
    M = scn.array.size
    if scn.sources:
        period = np.fft.irfft(source_spectra(scn, offsets, phases), n=ns, axis=-1)
        x = period[:, np.arange(start, start + n_samples) % ns]
    else:
        x = np.zeros((M, n_samples))
    if noise:
        var = scn.noise_power * (cfg.sample_rate / 2) / cfg.bandwidth
        x = x + np.sqrt(var) * rng.standard_normal((M, n_samples))
    if return_offsets:
        return x, offsets, phases
    return x


def n_chunks(n_samples: int, chunk: int, hop: int) -> int:
    if chunk > n_samples:
        return 0
    return (n_samples - chunk) // hop + 1


@dataclass
class Chunk:
    snapshots: SnapshotMatrix
    start: int
    center_frequency: float


def chunk_and_convert(x, array: GridArray, *, sample_rate: float = 48828.0, chunk: int = 4096, hop: int = 488,
                      band: tuple[float, float] = (17.25e3, 18.75e3), prefiltered: bool = False) -> Iterator[Chunk]:
    """Band-pass the block, cut chunks, convert each to its analytic form.

    Each chunk carries a centre-frequency estimate taken from the band-passed
    samples.
    """
    x = np.asarray(x, dtype=float)
    if not 0 < band[0] < band[1] < sample_rate / 2:
        raise SceneError(f"band {band} empty or beyond Nyquist")
    if chunk > x.shape[-1]:
        raise SceneError("chunk longer than the block")
    y = x if prefiltered else wf.bandpass(x, sample_rate, band)
    for k in range(n_chunks(x.shape[-1], chunk, hop)):
        seg = y[:, k * hop: k * hop + chunk]
        fc = wf.estimate_center_frequency(seg, sample_rate, band)
        z = wf.analytic_signal(seg)
        yield Chunk(SnapshotMatrix(z, array, k * hop, fc), k * hop, fc)


# --- io -------------------------------------------------------------------------


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "array": scn.array.to_dict(),
        "sources": [
            {
                "azimuth_deg": math.degrees(s.azimuth),
                "elevation_deg": math.degrees(s.elevation),
                "power": s.power,
                "waveform": asdict(s.waveform),
                "offset": s.offset,
                "phase": s.phase,
            }
            for s in scn.sources
        ],
        "snr_db": scn.snr_db,
        "snapshots": scn.snapshots,
        "sound_speed": scn.sound_speed,
        "passband": asdict(scn.passband),
        "seed": scn.seed,
    }


def scenario_from_dict(d: dict) -> Scenario:
    sources = tuple(
        Source(
            math.radians(s["azimuth_deg"]),
            math.radians(s["elevation_deg"]),
            float(s.get("power", 1.0)),
            WaveformSpec(**s.get("waveform", {})),
            s.get("offset"),
            s.get("phase"),
        )
        for s in d.get("sources", [])
    )
    array = GridArray.from_dict(d["array"]) if "array" in d else None
    if array is None:
        raise SceneError("scenario needs an array")
    return Scenario(
        array,
        sources,
        float(d.get("snr_db", 20.0)),
        int(d.get("snapshots", 4096)),
        float(d.get("sound_speed", SOUND_SPEED)),
        wf.PassbandConfig(**d.get("passband", {})),
        int(d.get("seed", 0)),
    )


def save_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scn), indent=2) + "\n")


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def save_block(x, path, sample_rate: float) -> None:
    """Multichannel block as raw little-endian float32 (channel-major) plus a JSON sidecar."""
    path = Path(path)
    x = np.atleast_2d(np.asarray(x, dtype="<f4"))
    x.tofile(path)
    meta = {"channels": int(x.shape[0]), "samples": int(x.shape[1]), "sample_rate_hz": sample_rate, "dtype": "float32"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_block(path) -> tuple[np.ndarray, float]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    x = np.fromfile(path, dtype="<f4").reshape(meta["channels"], meta["samples"]).astype(float)
    return x, meta["sample_rate_hz"]


def random_directions(rng, K: int, *, max_elevation: float = math.radians(60), min_elevation: float = 0.0,
                      min_separation: float = 0.0, max_tries: int = 10000) -> tuple[np.ndarray, np.ndarray]:
    """K directions uniform on the spherical cap band, rejection-sampled for pairwise separation."""
    az, el = [], []
    c_lo, c_hi = math.cos(max_elevation), math.cos(min_elevation)
    tries = 0
    while len(az) < K:
        tries += 1
        if tries > max_tries:
            raise SceneError(f"could not place {K} sources with separation {math.degrees(min_separation):.1f} deg")
        a = rng.uniform(-np.pi, np.pi)
        e = math.acos(rng.uniform(c_lo, c_hi))
        if az and np.min(spherical_distance(np.array(az), np.array(el), a, e)) < min_separation:
            continue
        az.append(a)
        el.append(e)
    return np.array(az), np.array(el)


def with_seed(scn: Scenario, seed: int) -> Scenario:
    return replace(scn, seed=seed)
