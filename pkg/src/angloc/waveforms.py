"""Zadoff-Chu sequences, their real-valued balanced variants, and passband handling.

Three families share one parameterisation (prime length ``N``, root ``q``):

* ``ZC``    x[n] = exp(-j*pi*q*n*(n+1)/N), unit modulus.
* ``SC-ZC`` the real part of ZC, cos(pi*q*n*(n+1)/N); positive and negative
  frequency halves overlap.
* ``MS-ZC`` built in the frequency domain: the ZC spectrum X[1..N-1] and its
  conjugate mirror on a (2N-1)-point grid with an empty DC bin, then a
  1/(2N-1)-normalised inverse DFT. With |X[k]|^2 = N the cyclic
  autocorrelation is exactly N(2N-2)/(2N-1) at lag 0 and -N/(2N-1) elsewhere,
  i.e. -1/(2N-2) after dividing by the zero-lag value.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

FAMILIES = ("ZC", "MS-ZC", "SC-ZC")


class WaveformError(ValueError):
    pass


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    return all(n % k for k in range(3, int(math.isqrt(n)) + 1, 2))


def largest_prime_at_most(n: int) -> int:
    for k in range(int(n), 1, -1):
        if is_prime(k):
            return k
    raise WaveformError(f"no prime <= {n}")


@dataclass(frozen=True)
class ZcParams:
    N: int
    q: int

    def __post_init__(self):
        if not is_prime(self.N):
            raise WaveformError(f"N={self.N} is not prime")
        if not 1 <= self.q < self.N:
            raise WaveformError(f"root q={self.q} outside 1..{self.N - 1}")
        if math.gcd(self.q, self.N) != 1:
            raise WaveformError(f"gcd(q={self.q}, N={self.N}) != 1")


@dataclass(frozen=True)
class Sequence:
    samples: np.ndarray
    family: str
    params: ZcParams | None = None

    def __len__(self):
        return len(self.samples)


def root_pool(P: int, N: int) -> list[int]:
    """First ``P`` admissible roots, scanning q = 1, 2, ... and skipping gcd(q, N) != 1."""
    roots = [q for q in range(1, N) if math.gcd(q, N) == 1][:P]
    if len(roots) < P:
        raise WaveformError(f"only {len(roots)} roots available for N={N}")
    return roots


def _zc_samples(N: int, q: int) -> np.ndarray:
    n = np.arange(N, dtype=np.int64)
    # reduce the phase index modulo 2N before scaling to keep precision for large N
    k = (q * n * (n + 1)) % (2 * N)
    return np.exp(-1j * np.pi * k / N)


def zc(params: ZcParams) -> Sequence:
    return Sequence(_zc_samples(params.N, params.q), "ZC", params)


def sc_zc(params: ZcParams) -> Sequence:
    x = _zc_samples(params.N, params.q)
    return Sequence(x.real.copy(), "SC-ZC", params)


def ms_spectrum(params: ZcParams) -> np.ndarray:
    """(2N-1)-point Hermitian spectrum with the ZC spectrum on bins 1..N-1."""
    N = params.N
    X = np.fft.fft(_zc_samples(N, params.q))
    L = 2 * N - 1
    spec = np.zeros(L, dtype=complex)
    spec[1:N] = X[1:N]
    spec[N:] = np.conj(X[1:N][::-1])
    return spec


def ms_zc(params: ZcParams) -> Sequence:
    spec = ms_spectrum(params)
    x = np.fft.ifft(spec)
    if np.max(np.abs(x.imag)) > 1e-9 * max(1.0, np.max(np.abs(x.real))):
        raise WaveformError("mirror-symmetric construction did not yield a real sequence")
    return Sequence(x.real.copy(), "MS-ZC", params)


def ms_zc_closed_form(params: ZcParams) -> np.ndarray:
    """Cosine-sum form of MS-ZC, derived from the DFT of ZC.

    For odd prime N the ZC DFT is itself a chirp,
    X[k] = X[0] * exp(j*pi*(qinv*k^2 + k)/N), with qinv the odd representative
    of the inverse of q mod N (odd so that qinv*q = 1 mod 2N holds up to the
    parity term), hence
    x[n] = (2/(2N-1)) * sum_k |X0| cos(2*pi*k*n/(2N-1) + arg X[k]).
    Used only as a diagnostic against :func:`ms_zc`.
    """
    N, q = params.N, params.q
    L = 2 * N - 1
    X0 = np.sum(_zc_samples(N, q))
    qinv = pow(q, -1, N)
    if qinv % 2 == 0:
        qinv += N
    k = np.arange(1, N)
    phase = np.angle(X0) + np.pi * ((qinv * k * k + k) % (2 * N)) / N
    n = np.arange(L)[:, None]
    return (2 * abs(X0) / L) * np.cos(2 * np.pi * k[None, :] * n / L + phase[None, :]).sum(axis=1)


FAMILY_BUILDERS = {"ZC": zc, "MS-ZC": ms_zc, "SC-ZC": sc_zc}


def make_sequence(family: str, N: int, q: int) -> Sequence:
    try:
        builder = FAMILY_BUILDERS[family]
    except KeyError:
        raise WaveformError(f"unknown family {family!r}") from None
    return builder(ZcParams(N, q))


def sequence_length(family: str, N: int) -> int:
    return 2 * N - 1 if family == "MS-ZC" else N


def default_length(family: str, bandwidth: float = 1.5e3, symbol_time: float = 0.5) -> int:
    """Largest prime N whose sequence fits ``bandwidth * symbol_time`` chips."""
    chips = int(math.floor(bandwidth * symbol_time + 1e-9))
    if family == "MS-ZC":
        return largest_prime_at_most((chips + 1) // 2)
    return largest_prime_at_most(chips)


def cyclic_correlation(a, b) -> np.ndarray:
    """R[tau] = sum_n a[n] * conj(b[(n + tau) mod N])."""
    a = np.asarray(getattr(a, "samples", a))
    b = np.asarray(getattr(b, "samples", b))
    if a.shape != b.shape or a.ndim != 1:
        raise WaveformError(f"length mismatch {a.shape} vs {b.shape}")
    r = np.fft.ifft(np.conj(np.fft.fft(a)) * np.fft.fft(b))
    r = np.conj(r)
    if np.isrealobj(a) and np.isrealobj(b):
        return r.real
    return r


def cyclic_correlation_direct(a, b) -> np.ndarray:
    """O(N^2) reference for :func:`cyclic_correlation`."""
    a = np.asarray(getattr(a, "samples", a))
    b = np.asarray(getattr(b, "samples", b))
    N = len(a)
    out = np.zeros(N, dtype=complex)
    for tau in range(N):
        acc = 0j
        for n in range(N):
            acc += a[n] * np.conj(b[(n + tau) % N])
        out[tau] = acc
    return out


def normalized_correlation(a, b) -> np.ndarray:
    """Cyclic correlation divided by sqrt(E_a * E_b)."""
    a = np.asarray(getattr(a, "samples", a))
    b = np.asarray(getattr(b, "samples", b))
    return cyclic_correlation(a, b) / np.sqrt(np.vdot(a, a).real * np.vdot(b, b).real)


# --- passband -----------------------------------------------------------------


@dataclass(frozen=True)
class PassbandConfig:
    sample_rate: float = 48828.0
    carrier: float = 18e3
    bandwidth: float = 1.5e3
    symbol_time: float = 0.5

    def __post_init__(self):
        if self.carrier + self.bandwidth / 2 >= self.sample_rate / 2:
            raise WaveformError("carrier + bandwidth/2 exceeds Nyquist")

    @property
    def symbol_samples(self) -> int:
        return int(round(self.sample_rate * self.symbol_time))

    @property
    def band(self) -> tuple[float, float]:
        return self.carrier - self.bandwidth / 2, self.carrier + self.bandwidth / 2


@dataclass(frozen=True)
class PassbandSignal:
    samples: np.ndarray
    sample_rate: float
    carrier: float
    bandwidth: float
    symbol_time: float

    def to_meta(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate,
            "carrier_hz": self.carrier,
            "bandwidth_hz": self.bandwidth,
            "symbol_time_s": self.symbol_time,
            "samples": int(len(self.samples)),
            "dtype": "float32",
        }


def chip_baseband(seq, cfg: PassbandConfig, n_samples: int | None = None, start: int = 0) -> np.ndarray:
    """Sample-and-hold a sequence so that one period fills ``symbol_time``.

    Returns ``n_samples`` baseband samples starting ``start`` samples into the
    periodic emission (defaults to exactly one symbol).
    """
    chips = np.asarray(getattr(seq, "samples", seq))
    L = len(chips)
    if L > cfg.bandwidth * cfg.symbol_time + 1e-9:
        raise WaveformError(f"{L} chips do not fit symbol_time * bandwidth")
    ns = cfg.symbol_samples
    n_samples = ns if n_samples is None else n_samples
    t = (start + np.arange(n_samples)) % ns
    idx = np.minimum((t * L) // ns, L - 1)
    return chips[idx]


def modulate(seq, cfg: PassbandConfig = PassbandConfig(), *, symbols: int = 1, phase: float = 0.0,
             start: int = 0, n_samples: int | None = None) -> PassbandSignal:
    """IQ up-conversion of a chipped sequence to ``cfg.carrier``.

    ``s(t) = Re{b(t) exp(j(2 pi f_c t + phase))}`` with ``b`` the
    sample-and-hold chip waveform; the result is tiled for ``symbols`` periods
    unless ``n_samples`` is given.
    """
    ns = cfg.symbol_samples
    n_samples = symbols * ns if n_samples is None else n_samples
    b = chip_baseband(seq, cfg, n_samples, start)
    t = (start + np.arange(n_samples)) / cfg.sample_rate
    s = np.real(b * np.exp(1j * (2 * np.pi * cfg.carrier * t + phase)))
    return PassbandSignal(s, cfg.sample_rate, cfg.carrier, cfg.bandwidth, cfg.symbol_time)


def sine_waveform(cfg: PassbandConfig, n_samples: int, start: int = 0, phase: float = 0.0) -> np.ndarray:
    """Narrowband reference: a plain carrier, scaled to the same power as SC/MS signals."""
    t = (start + np.arange(n_samples)) / cfg.sample_rate
    return np.cos(2 * np.pi * cfg.carrier * t + phase)


def analytic_signal(x, axis: int = -1) -> np.ndarray:
    """FFT-based analytic signal; negative-frequency bins are zeroed, real part is ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[axis] == 0:
        raise WaveformError("empty input")
    return sps.hilbert(x, axis=axis)


@lru_cache(maxsize=32)
def bandpass_taps(sample_rate: float, f_lo: float, f_hi: float,
                  transition: float = 300.0, atten_db: float = 60.0) -> np.ndarray:
    """Kaiser-window linear-phase FIR band-pass, odd length, passband [f_lo, f_hi]."""
    if not 0 < f_lo < f_hi < sample_rate / 2:
        raise WaveformError(f"band ({f_lo}, {f_hi}) invalid for fs={sample_rate}")
    numtaps, beta = sps.kaiserord(atten_db, transition / (sample_rate / 2))
    numtaps |= 1
    edges = [max(f_lo - transition / 2, 1.0), min(f_hi + transition / 2, sample_rate / 2 - 1.0)]
    taps = sps.firwin(numtaps, edges, window=("kaiser", beta), pass_zero=False, fs=sample_rate)
    taps.setflags(write=False)
    return taps


def bandpass(x, sample_rate: float, band: tuple[float, float], *, cyclic: bool = False,
             transition: float = 300.0, atten_db: float = 60.0, axis: int = -1) -> np.ndarray:
    """Zero-delay linear-phase band-pass along ``axis``.

    ``cyclic=True`` treats the block as one period of a periodic signal
    (circular convolution), otherwise the output is the centred part of the
    linear convolution.
    """
    taps = bandpass_taps(float(sample_rate), float(band[0]), float(band[1]), transition, atten_db)
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    n = x.shape[-1]
    half = len(taps) // 2
    if cyclic:
        h = np.zeros(n)
        if len(taps) > n:
            raise WaveformError("block shorter than the filter")
        h[: half + 1] = taps[half:]
        h[n - half:] = taps[:half]
        y = np.fft.irfft(np.fft.rfft(x, axis=-1) * np.fft.rfft(h), n=n, axis=-1)
    else:
        y = sps.fftconvolve(x, taps.reshape((1,) * (x.ndim - 1) + (-1,)), mode="full", axes=-1)
        y = y[..., half: half + n]
    return np.moveaxis(y, -1, axis)


def estimate_center_frequency(x, sample_rate: float, band: tuple[float, float] | None = None) -> float:
    """Power-weighted spectral centroid of a Hann-windowed chunk.

    Multichannel input (channels along axis 0) pools the power spectra.
    ``band`` restricts the centroid to that frequency range.
    """
    x = np.asarray(x)
    if x.shape[-1] < 64:
        raise WaveformError("chunk shorter than 64 samples")
    x2 = np.atleast_2d(x)
    w = np.hanning(x2.shape[-1])
    if np.iscomplexobj(x2):
        spec = np.fft.fft(x2 * w, axis=-1)
        freqs = np.fft.fftfreq(x2.shape[-1], 1.0 / sample_rate)
        keep = freqs >= 0
        spec, freqs = spec[:, keep], freqs[keep]
    else:
        spec = np.fft.rfft(x2 * w, axis=-1)
        freqs = np.fft.rfftfreq(x2.shape[-1], 1.0 / sample_rate)
    power = np.sum(np.abs(spec) ** 2, axis=0)
    if band is not None:
        sel = (freqs >= band[0]) & (freqs <= band[1])
        power, freqs = power[sel], freqs[sel]
    total = power.sum()
    if not total > 0:
        raise WaveformError("all-zero input")
    return float(np.sum(power * freqs) / total)


def band_energy_split(x, sample_rate: float, center: float, half_width: float) -> tuple[float, float]:
    """Energy below and above ``center`` within ``center +- half_width``."""
    spec = np.abs(np.fft.rfft(np.asarray(x, dtype=float))) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / sample_rate)
    lower = spec[(freqs >= center - half_width) & (freqs < center)].sum()
    upper = spec[(freqs > center) & (freqs <= center + half_width)].sum()
    return float(lower), float(upper)


# --- export -------------------------------------------------------------------


def save_sequence_csv(seq: Sequence, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "re", "im"])
        for i, v in enumerate(np.asarray(seq.samples, dtype=complex)):
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))])


def load_sequence_csv(path, family: str = "ZC", params: ZcParams | None = None) -> Sequence:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    vals = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    if family != "ZC":
        vals = vals.real
    return Sequence(vals, family, params)


def save_passband(sig: PassbandSignal, path) -> None:
    """Raw little-endian float32 samples plus a ``.json`` sidecar."""
    path = Path(path)
    np.asarray(sig.samples, dtype="<f4").tofile(path)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sig.to_meta(), indent=2) + "\n")


def load_passband(path) -> PassbandSignal:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    samples = np.fromfile(path, dtype="<f4").astype(float)
    return PassbandSignal(samples, meta["sample_rate_hz"], meta["carrier_hz"],
                          meta["bandwidth_hz"], meta["symbol_time_s"])
