import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from angloc import waveforms as wf

PRIMES = (13, 31, 127)


def roots(N):
    return range(1, N)


@st.composite
def prime_root(draw, primes=(5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43)):
    N = draw(st.sampled_from(primes))
    return N, draw(st.integers(1, N - 1))


def test_primes():
    assert [n for n in range(20) if wf.is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19]
    assert wf.largest_prime_at_most(750) == 743
    assert wf.default_length("ZC") == 743
    assert wf.default_length("MS-ZC") == 373
    assert wf.sequence_length("MS-ZC", 373) == 745 <= 750


def test_params_validation():
    with pytest.raises(wf.WaveformError):
        wf.ZcParams(12, 1)
    with pytest.raises(wf.WaveformError):
        wf.ZcParams(13, 0)
    with pytest.raises(wf.WaveformError):
        wf.ZcParams(13, 13)
    with pytest.raises(wf.WaveformError):
        wf.make_sequence("chirp", 13, 1)


def test_root_pool():
    assert wf.root_pool(5, 13) == [1, 2, 3, 4, 5]
    assert len(set(wf.root_pool(20, 743))) == 20
    with pytest.raises(wf.WaveformError):
        wf.root_pool(13, 13)


@given(prime_root())
def test_zc_constant_amplitude(nq):
    z = wf.zc(wf.ZcParams(*nq)).samples
    assert np.allclose(np.abs(z), 1.0, atol=1e-12)


@given(prime_root())
def test_zc_autocorrelation_is_delta(nq):
    N, q = nq
    z = wf.zc(wf.ZcParams(N, q)).samples
    r = wf.cyclic_correlation(z, z)
    assert abs(r[0] - N) < 1e-9 * N
    assert np.max(np.abs(r[1:])) < 1e-9 * N


@given(prime_root(), st.integers(1, 42))
def test_zc_cross_correlation_flat(nq, q2):
    N, q1 = nq
    q2 = 1 + (q2 - 1) % (N - 1)
    if q2 == q1:
        return
    r = wf.normalized_correlation(wf.zc(wf.ZcParams(N, q1)), wf.zc(wf.ZcParams(N, q2)))
    assert np.allclose(np.abs(r), 1 / math.sqrt(N), atol=1e-9)


@given(prime_root(), st.integers(0, 50))
def test_cyclic_shift_moves_peak(nq, shift):
    N, q = nq
    z = wf.zc(wf.ZcParams(N, q)).samples
    r = wf.cyclic_correlation(z, np.roll(z, shift))
    assert int(np.argmax(np.abs(r))) == shift % N


@given(prime_root())
def test_fft_correlation_matches_direct(nq):
    N, q = nq
    rng = np.random.default_rng(N * 100 + q)
    a = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    b = wf.zc(wf.ZcParams(N, q)).samples
    assert np.allclose(wf.cyclic_correlation(a, b), wf.cyclic_correlation_direct(a, b), atol=1e-9)


@given(prime_root())
def test_ms_zc_real_and_flat(nq):
    N, q = nq
    m = wf.ms_zc(wf.ZcParams(N, q)).samples
    assert m.dtype.kind == "f"
    assert len(m) == 2 * N - 1
    r = wf.normalized_correlation(m, m)
    assert np.allclose(r[1:], -1 / (2 * N - 2), atol=1e-12)
    # unnormalised peak N(2N-2)/(2N-1)
    assert wf.cyclic_correlation(m, m)[0] == pytest.approx(N * (2 * N - 2) / (2 * N - 1), rel=1e-12)


@given(prime_root())
def test_ms_zc_closed_form(nq):
    p = wf.ZcParams(*nq)
    assert np.allclose(wf.ms_zc(p).samples, wf.ms_zc_closed_form(p), atol=1e-10)


def test_ms_spectrum_hermitian_without_dc():
    S = wf.ms_spectrum(wf.ZcParams(13, 2))
    assert S[0] == 0
    assert np.allclose(S[1:], np.conj(S[1:][::-1]))


@given(prime_root())
def test_sc_zc_is_real_part(nq):
    p = wf.ZcParams(*nq)
    s = wf.sc_zc(p).samples
    assert np.isrealobj(s)
    assert np.array_equal(s, wf.zc(p).samples.real)


def test_sc_autocorrelation_peak_scales_with_half_length():
    # zero-lag energy of Re(zc) is N/2 plus a Gauss-sum term of size sqrt(N)/2
    for N in PRIMES:
        for q in roots(N):
            s = wf.sc_zc(wf.ZcParams(N, q)).samples
            assert abs(np.dot(s, s) - N / 2) <= math.sqrt(N) / 2 + 1e-9


def test_passband_chip_rate():
    cfg = wf.PassbandConfig()
    assert cfg.symbol_samples == 24414
    seq = wf.make_sequence("SC-ZC", 743, 1)
    b = wf.chip_baseband(seq, cfg)
    assert len(b) == cfg.symbol_samples
    # every chip is held for floor or ceil of ns / L samples
    runs = np.diff(np.flatnonzero(np.diff(b) != 0))
    assert runs.min() >= cfg.symbol_samples // 743 - 1
    with pytest.raises(wf.WaveformError):
        wf.chip_baseband(np.ones(800), cfg)
    with pytest.raises(wf.WaveformError):
        wf.PassbandConfig(sample_rate=36e3)


def test_modulate_is_periodic_and_in_band():
    cfg = wf.PassbandConfig()
    seq = wf.make_sequence("MS-ZC", 373, 3)
    two = wf.modulate(seq, cfg, symbols=2).samples
    ns = cfg.symbol_samples
    # carrier phase advances 2 pi fc T per symbol; fc T is an integer number of cycles here
    assert np.allclose(two[:ns], two[ns:], atol=1e-9)
    f = np.fft.rfftfreq(ns, 1 / cfg.sample_rate)
    p = np.abs(np.fft.rfft(two[:ns])) ** 2
    lo, hi = cfg.band
    # sample-and-hold leaves sinc sidelobes outside the band
    assert p[(f > lo - 300) & (f < hi + 300)].sum() / p.sum() > 0.85


def test_sc_spectrum_symmetric_about_carrier():
    cfg = wf.PassbandConfig()
    s = wf.modulate(wf.make_sequence("SC-ZC", 743, 1), cfg).samples
    lower, upper = wf.band_energy_split(s, cfg.sample_rate, cfg.carrier, cfg.bandwidth / 2)
    assert lower == pytest.approx(upper, rel=0.05)


def test_bandpass_keeps_band_and_rejects_outside():
    fs = 48828.0
    t = np.arange(8192) / fs
    inside = np.cos(2 * np.pi * 18e3 * t)
    outside = np.cos(2 * np.pi * 12e3 * t)
    y = wf.bandpass(inside + outside, fs, (17.25e3, 18.75e3))
    mid = slice(1000, -1000)
    assert np.allclose(y[mid], inside[mid], atol=2e-3)


def test_analytic_signal_real_part_and_envelope():
    fs = 48828.0
    t = np.arange(4096) / fs
    x = np.cos(2 * np.pi * 18e3 * t)
    z = wf.analytic_signal(x)
    assert np.allclose(z.real, x)
    assert np.allclose(np.abs(z[200:-200]), 1.0, atol=0.02)


def test_center_frequency_of_tone():
    fs = 48828.0
    t = np.arange(4096) / fs
    assert wf.estimate_center_frequency(np.sin(2 * np.pi * 18.2e3 * t), fs) == pytest.approx(18.2e3, abs=5)
    with pytest.raises(wf.WaveformError):
        wf.estimate_center_frequency(np.zeros(4096), fs)


def test_io_roundtrip(tmp_path):
    seq = wf.make_sequence("ZC", 13, 2)
    wf.save_sequence_csv(seq, tmp_path / "z.csv")
    back = wf.load_sequence_csv(tmp_path / "z.csv")
    assert np.allclose(back.samples, seq.samples)
    sig = wf.modulate(wf.make_sequence("SC-ZC", 743, 1))
    wf.save_passband(sig, tmp_path / "s.f32")
    got = wf.load_passband(tmp_path / "s.f32")
    assert np.allclose(got.samples, sig.samples, atol=1e-6)
    assert got.carrier == sig.carrier
