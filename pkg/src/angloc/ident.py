"""Source identification: delay-and-sum beams, code correlation, optimal assignment.

Each estimated direction is turned into one beam. The beam is mixed down to
complex baseband and correlated cyclically, over one full symbol of lags,
against every candidate code. Scores are normalised by sqrt(E_y * E_s), so a
clean, perfectly aligned match scores 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import waveforms as wf
from .assignment import Assignment, maximize
from .geometry import GridArray
from .sim import SOUND_SPEED, WaveformSpec, analysis_bins, geometric_delays


class IdentError(ValueError):
    pass


def delays(array: GridArray, doa, sound_speed: float = SOUND_SPEED) -> np.ndarray:
    """Arrival advance per sensor (s) for a direction estimate, ``p_j . u / c``."""
    return geometric_delays(array.positions, doa.azimuth, doa.elevation, sound_speed)


def das_beamform(X, tau, sample_rate: float) -> np.ndarray:
    """Delay-and-sum over the rows of ``X`` treated as one period of a periodic block.

    Channel ``m`` is retarded by ``tau[m]`` (undoing the arrival advance) in the
    frequency domain and the channels are summed, so a source from the steered
    direction adds coherently with gain ``M``.
    """
    X = np.asarray(X)
    tau = np.asarray(tau, dtype=float)
    if X.ndim != 2 or X.shape[0] != tau.shape[0]:
        raise IdentError(f"block {X.shape} does not match {tau.shape[0]} delays")
    n = X.shape[1]
    if np.max(np.abs(tau)) * sample_rate >= n:
        raise IdentError("delay exceeds the block length")
    if np.isrealobj(X):
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        Y = np.sum(np.fft.rfft(X, axis=-1) * np.exp(-2j * np.pi * np.outer(tau, f)), axis=0)
        if n % 2 == 0:
            Y[-1] = Y[-1].real
        return np.fft.irfft(Y, n=n)
    f = np.fft.fftfreq(n, 1.0 / sample_rate)
    Y = np.sum(np.fft.fft(X, axis=-1) * np.exp(-2j * np.pi * np.outer(tau, f)), axis=0)
    return np.fft.ifft(Y)


def downmix(y, carrier: float, sample_rate: float, start: int = 0) -> np.ndarray:
    """Shift an analytic signal down by ``carrier`` Hz."""
    t = (start + np.arange(np.asarray(y).shape[-1])) / sample_rate
    return np.asarray(y) * np.exp(-2j * np.pi * carrier * t)


class CandidatePool:
    """Baseband chip waveforms of the candidate codes over one symbol.

    Parameters
    ----------
    ids : sequence of int
        Root indices; ``None`` takes the first ``P`` admissible roots.
    family : str
        ``ZC``, ``MS-ZC`` or ``SC-ZC``.
    """

    def __init__(self, ids=None, family: str = "SC-ZC", cfg: wf.PassbandConfig = wf.PassbandConfig(),
                 N: int | None = None, P: int = 20):
        self.family = family
        self.cfg = cfg
        self.N = wf.default_length(family, cfg.bandwidth, cfg.symbol_time) if N is None else N
        self.ids = tuple(wf.root_pool(P, self.N) if ids is None else ids)
        if not self.ids:
            raise IdentError("empty candidate pool")
        refs = np.array([wf.chip_baseband(wf.make_sequence(family, self.N, q), cfg) for q in self.ids],
                        dtype=complex)
        self.references = refs
        self.energies = np.sum(np.abs(refs) ** 2, axis=1)
        self._conj_spectra = np.conj(np.fft.fft(refs, axis=-1))

    def __len__(self):
        return len(self.ids)

    def spec(self, q: int) -> WaveformSpec:
        return WaveformSpec(self.family, self.N, q)

    def scores_from_spectrum(self, Y: np.ndarray, energy: np.ndarray) -> np.ndarray:
        """Exact scores over all integer lags for full-length beam spectra ``Y`` (K, ns)."""
        R = np.fft.ifft(Y[:, None, :] * self._conj_spectra[None, :, :], axis=-1)
        peak = np.max(np.abs(R), axis=-1)
        den = np.sqrt(np.maximum(energy, 1e-300)[:, None] * self.energies[None, :])
        return peak / den

    def scores_banded(self, Y: np.ndarray, offsets: np.ndarray, energy: np.ndarray,
                      lag_points: int = 4096) -> np.ndarray:
        """Scores for band-limited baseband beams given on DFT ``offsets`` only.

        The cross-correlation of band-limited signals is itself band-limited,
        so it is sampled exactly on ``lag_points`` equally spaced (fractional)
        lags covering the whole symbol.
        """
        offsets = np.asarray(offsets)
        ns = self.references.shape[1]
        if lag_points < len(offsets):
            raise IdentError("lag grid coarser than the analysis band")
        Z = np.zeros((Y.shape[0], len(self), lag_points), dtype=complex)
        Z[:, :, offsets % lag_points] = Y[:, None, :] * self._conj_spectra[None, :, offsets % ns]
        R = np.fft.ifft(Z, axis=-1) * (lag_points / ns)
        peak = np.max(np.abs(R), axis=-1)
        den = np.sqrt(np.maximum(energy, 1e-300)[:, None] * self.energies[None, :])
        return peak / den


def correlate_candidates(y, pool: CandidatePool) -> np.ndarray:
    """Per-candidate ``max_lag |sum_t y(t) conj(s(t - lag))| / sqrt(E_y E_s)``, cyclic over one symbol."""
    y = np.asarray(y, dtype=complex)
    ns = pool.references.shape[1]
    if len(pool) == 0:
        raise IdentError("empty candidate pool")
    if y.shape[-1] < ns:
        raise IdentError(f"beam has {y.shape[-1]} samples, one symbol needs {ns}")
    y = y[..., :ns]
    return pool.scores_from_spectrum(np.fft.fft(y)[None, :], np.array([np.vdot(y, y).real]))[0]


@dataclass
class ConfidenceMatrix:
    data: np.ndarray
    ids: tuple[int, ...]

    def __post_init__(self):
        K, P = self.data.shape
        if K > P:
            raise IdentError(f"K={K} beams exceed P={P} candidates")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise IdentError("confidence entries must be finite and nonnegative")


def build_confidence(beams, pool: CandidatePool) -> ConfidenceMatrix:
    beams = np.atleast_2d(np.asarray(beams, dtype=complex))
    if beams.shape[0] > len(pool):
        raise IdentError(f"K={beams.shape[0]} beams exceed P={len(pool)} candidates")
    ns = pool.references.shape[1]
    if beams.shape[1] < ns:
        raise IdentError("beams shorter than one symbol")
    beams = beams[:, :ns]
    Y = np.fft.fft(beams, axis=-1)
    C = pool.scores_from_spectrum(Y, np.sum(np.abs(beams) ** 2, axis=-1))
    return ConfidenceMatrix(C, pool.ids)


def assign(C: ConfidenceMatrix) -> Assignment:
    data = C.data if isinstance(C, ConfidenceMatrix) else np.asarray(C)
    return maximize(data)


@dataclass
class Identification:
    confidence: ConfidenceMatrix
    assignment: Assignment

    @property
    def ids(self) -> list[int]:
        return [self.confidence.ids[c] for c in self.assignment.columns]


def bandpass_response(cfg: wf.PassbandConfig, n: int) -> np.ndarray:
    """DFT of the zero-phase band-pass filter wrapped onto an ``n``-sample cycle."""
    taps = wf.bandpass_taps(float(cfg.sample_rate), *map(float, cfg.band))
    half = len(taps) // 2
    h = np.zeros(n)
    h[: half + 1] = taps[half:]
    h[n - half:] = taps[:half]
    return np.fft.rfft(h)


def beam_spectra(Xb, bins, n: int, array: GridArray, doas, *, cfg: wf.PassbandConfig = wf.PassbandConfig(),
                 sound_speed: float = SOUND_SPEED) -> np.ndarray:
    """Analytic, band-passed delay-and-sum beams on the given one-sided ``bins``.

    ``Xb`` holds the rfft of the real (M, n) block at ``bins``. Returns (K, nb).
    """
    bins = np.asarray(bins)
    f = bins * cfg.sample_rate / n
    H = bandpass_response(cfg, n)[bins]
    Xa = np.asarray(Xb) * (2 * H)[None, :]
    pos = array.positions
    out = np.empty((len(doas), len(bins)), dtype=complex)
    for k, d in enumerate(doas):
        tau = geometric_delays(pos, d.azimuth, d.elevation, sound_speed)
        out[k] = np.einsum("mf,mf->f", Xa, np.exp(-2j * np.pi * np.outer(tau, f)))
    return out


def beam_block(x, array: GridArray, doas, *, cfg: wf.PassbandConfig = wf.PassbandConfig(),
               sound_speed: float = SOUND_SPEED, carrier: float | None = None, start: int = 0,
               margin: float = 600.0) -> np.ndarray:
    """Baseband beams (K, n) from a real (M, n) block treated as one period.

    The block is band-passed and made analytic cyclically, each beam is formed
    in the frequency domain, and the result is mixed down by ``carrier``
    (default: the nominal carrier).
    """
    x = np.asarray(x, dtype=float)
    M, n = x.shape
    if M != array.size:
        raise IdentError(f"block has {M} channels, array has {array.size}")
    fs = cfg.sample_rate
    carrier = cfg.carrier if carrier is None else carrier
    bins = analysis_bins(cfg, n, margin)
    Y = beam_spectra(np.fft.rfft(x, axis=-1)[:, bins], bins, n, array, doas, cfg=cfg, sound_speed=sound_speed)
    spec = np.zeros((len(doas), n), dtype=complex)
    spec[:, bins] = Y
    return downmix(np.fft.ifft(spec, axis=-1), carrier, fs, start)


def _carrier_bin(cfg: wf.PassbandConfig, n: int, carrier: float) -> int:
    shift = carrier * n / cfg.sample_rate
    if abs(shift - round(shift)) > 1e-9:
        raise IdentError(f"carrier {carrier} Hz is not on the DFT grid of a {n}-sample block")
    return int(round(shift))


def identify_spectrum(Xb, bins, array: GridArray, doas, pool: CandidatePool, *,
                      sound_speed: float = SOUND_SPEED, carrier: float | None = None,
                      lag_points: int = 4096) -> Identification:
    """Identification from the one-sided spectrum of a one-symbol block at ``bins``.

    Equivalent to :func:`identify_block` without leaving the frequency domain;
    the down-mix is an exact bin shift, which needs the carrier on the DFT grid.
    """
    cfg = pool.cfg
    n = pool.references.shape[1]
    if len(doas) > len(pool):
        raise IdentError(f"K={len(doas)} exceeds P={len(pool)}")
    if len(doas) == 0:
        return Identification(ConfidenceMatrix(np.zeros((0, len(pool))), pool.ids), Assignment((), 0.0))
    carrier = cfg.carrier if carrier is None else carrier
    Y = beam_spectra(Xb, bins, n, array, doas, cfg=cfg, sound_speed=sound_speed)
    offsets = np.asarray(bins) - _carrier_bin(cfg, n, carrier)
    energy = np.sum(np.abs(Y) ** 2, axis=-1) / n
    C = ConfidenceMatrix(pool.scores_banded(Y, offsets, energy, lag_points), pool.ids)
    return Identification(C, assign(C))


def identify_block(x, array: GridArray, doas, pool: CandidatePool, *, sound_speed: float = SOUND_SPEED,
                   carrier: float | None = None, exact_lags: bool = False) -> Identification:
    """Beams, confidence matrix and assignment for a one-symbol block.

    ``exact_lags`` evaluates every integer lag (slow reference); otherwise the
    band-limited lag grid of :meth:`CandidatePool.scores_banded` is used.
    """
    x = np.asarray(x, dtype=float)
    if len(doas) > len(pool):
        raise IdentError(f"K={len(doas)} exceeds P={len(pool)}")
    if len(doas) == 0:
        return Identification(ConfidenceMatrix(np.zeros((0, len(pool))), pool.ids), Assignment((), 0.0))
    if exact_lags:
        beams = beam_block(x, array, doas, cfg=pool.cfg, sound_speed=sound_speed, carrier=carrier)
        C = build_confidence(beams, pool)
        return Identification(C, assign(C))
    n = pool.references.shape[1]
    if x.shape[1] != n:
        raise IdentError(f"block has {x.shape[1]} samples, one symbol is {n}")
    bins = analysis_bins(pool.cfg, n)
    return identify_spectrum(np.fft.rfft(x, axis=-1)[:, bins], bins, array, doas, pool,
                             sound_speed=sound_speed, carrier=carrier)


def save_confidence_csv(C: ConfidenceMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beam"] + [f"q{q}" for q in C.ids])
        for k, row in enumerate(C.data):
            w.writerow([k] + [repr(float(v)) for v in row])


def assignment_to_json(ident: Identification) -> str:
    recs = [
        {"beam_index": k, "candidate_id": int(ident.confidence.ids[c]),
         "score": float(ident.confidence.data[k, c])}
        for k, c in enumerate(ident.assignment.columns)
    ]
    return json.dumps(recs, indent=2)
