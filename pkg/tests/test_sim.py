import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from angloc import waveforms as wf
from angloc.geometry import make_geometry
from angloc.sim import (
    DirectionCosines,
    SceneError,
    Scenario,
    Source,
    WaveformSpec,
    analysis_bins,
    angles_from_vector,
    chunk_and_convert,
    fractional_advance,
    geometric_delays,
    load_block,
    load_scenario,
    random_directions,
    save_block,
    save_scenario,
    spherical_distance,
    steering_vector,
    synth_snapshots,
    synth_spectrum,
    synth_timedomain,
    unit_vector,
)

az_st = st.floats(-math.pi, math.pi - 1e-9)
el_st = st.floats(0.01, math.radians(85))


@given(az_st, el_st)
def test_angles_roundtrip(az, el):
    a, e = angles_from_vector(unit_vector(az, el))
    assert spherical_distance(a, e, az, el) < 1e-9


@given(az_st, el_st, az_st, el_st)
def test_spherical_distance_symmetric_and_bounded(a1, e1, a2, e2):
    d = spherical_distance(a1, e1, a2, e2)
    assert d == pytest.approx(spherical_distance(a2, e2, a1, e1), abs=1e-12)
    assert 0 <= d <= math.pi


def test_direction_cosines_inverse():
    d = DirectionCosines(0.7, 0.4, 343 / 18e3, 0.009)
    back = DirectionCosines.from_cosines(d.theta_bar, d.phi_bar, d.wavelength, d.pitch)
    assert back.azimuth == pytest.approx(0.7)
    assert back.elevation == pytest.approx(0.4)
    with pytest.raises(SceneError):
        DirectionCosines(0.0, 2.0, 1.0, 1.0)


@given(az_st, el_st)
def test_steering_matches_delay_phase(az, el):
    # x_j(t) = s(t + tau_j) gives exp(+j 2 pi f tau_j) at the carrier
    arr = make_geometry("Nested")
    lam = 343.0 / 18e3
    a = steering_vector(arr, DirectionCosines(az, el, lam, arr.pitch))
    tau = geometric_delays(arr.positions, az, el)
    assert np.allclose(a, np.exp(2j * np.pi * 18e3 * tau), atol=1e-9)


def test_fractional_advance_integer_is_roll(rng):
    x = rng.standard_normal((3, 256))
    y = fractional_advance(x, np.array([2, 0, -5]) / 1000.0, 1000.0)
    for row, k in zip(range(3), (2, 0, -5)):
        assert np.allclose(y[row], np.roll(x[row], -k), atol=1e-12)


def test_fractional_advance_composes(rng):
    t = np.arange(512)
    x = np.cos(2 * np.pi * 17 * t / 512) + 0.3 * np.sin(2 * np.pi * 40 * t / 512)
    y = fractional_advance(fractional_advance(x, 0.3, 1.0), 0.45, 1.0)
    assert np.allclose(y, fractional_advance(x, 0.75, 1.0), atol=1e-10)


def _scene(**kw):
    arr = make_geometry("Nested")
    srcs = (Source(0.3, 0.5, 1.0, WaveformSpec("SC-ZC", q=1)),
            Source(-2.0, 0.9, 0.5, WaveformSpec("MS-ZC", q=4)))
    return Scenario(arr, srcs, **kw)


def test_spectrum_equals_timedomain_rfft():
    scn = _scene(snr_db=20.0, seed=7)
    X, bins = synth_spectrum(scn)
    x = synth_timedomain(scn, noise=False)
    ref = np.fft.rfft(x, axis=-1)[:, bins]
    noise = X - ref
    signal_power = np.mean(np.abs(ref) ** 2)
    # the difference is pure noise at the requested SNR, spread over the analysis bins
    assert np.mean(np.abs(noise) ** 2) < signal_power
    quiet = _scene(snr_db=250.0, seed=7)
    Xq, _ = synth_spectrum(quiet)
    assert np.allclose(Xq, np.fft.rfft(synth_timedomain(quiet, noise=False), axis=-1)[:, bins],
                       atol=1e-6 * np.abs(ref).max())


def test_in_band_snr_per_sensor():
    cfg = wf.PassbandConfig()
    arr = make_geometry("URA", shape=(2, 1))
    scn = Scenario(arr, (Source(0.0, 0.3, 1.0, WaveformSpec("SC-ZC")),), snr_db=0.0, seed=3)
    x = synth_timedomain(scn, noise=False)
    noisy = synth_timedomain(scn)
    f = np.fft.rfftfreq(x.shape[1], 1 / cfg.sample_rate)
    band = (f >= cfg.band[0]) & (f <= cfg.band[1])
    ns = x.shape[1]
    ps = 2 * np.sum(np.abs(np.fft.rfft(x[0])[band]) ** 2) / ns**2
    pn = 2 * np.sum(np.abs(np.fft.rfft(noisy[0] - x[0])[band]) ** 2) / ns**2
    assert ps == pytest.approx(1.0, rel=1e-6)
    assert pn == pytest.approx(1.0, rel=0.1)


def test_timedomain_window_is_periodic():
    scn = _scene(seed=2)
    ns = scn.passband.symbol_samples
    a = synth_timedomain(scn, 1000, start=ns - 500, noise=False)
    b = synth_timedomain(scn, 1000, start=-500, noise=False)
    assert np.allclose(a, b)


def test_snapshots_shape_and_power():
    scn = Scenario(make_geometry("URA-5x5"), (Source(0.1, 0.2),), snr_db=10.0, snapshots=20000, seed=0)
    X = synth_snapshots(scn).data
    assert X.shape == (25, 20000)
    assert np.mean(np.abs(X) ** 2) == pytest.approx(1.1, rel=0.05)


def test_scene_validation():
    arr = make_geometry("URA")
    with pytest.raises(SceneError):
        Scenario(arr, (Source(0.1, 0.2), Source(0.1, 0.2)))
    with pytest.raises(SceneError):
        Scenario(arr, (Source(0.1, 0.2, power=0.0),))
    with pytest.raises(SceneError):
        Scenario(arr, (), snr_db=float("nan"))


def test_chunks_carry_center_frequency():
    scn = _scene(seed=1)
    x = synth_timedomain(scn, 8192)
    chunks = list(chunk_and_convert(x, scn.array, chunk=4096, hop=2048))
    assert len(chunks) == 3
    for ch in chunks:
        assert ch.snapshots.data.shape == (16, 4096)
        assert abs(ch.center_frequency - 18e3) < 300


def test_analysis_bins_cover_band():
    cfg = wf.PassbandConfig()
    bins = analysis_bins(cfg)
    f = bins * cfg.sample_rate / cfg.symbol_samples
    assert f.min() <= cfg.band[0] and f.max() >= cfg.band[1]


def test_random_directions_respect_separation(rng):
    az, el = random_directions(rng, 10, min_separation=math.radians(15))
    for i in range(10):
        for j in range(i):
            assert spherical_distance(az[i], el[i], az[j], el[j]) >= math.radians(15) - 1e-12
    assert np.all(el <= math.radians(60))


def test_io_roundtrip(tmp_path):
    scn = _scene(seed=5)
    save_scenario(scn, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert back.array == scn.array and back.seed == 5
    assert [s.waveform for s in back.sources] == [s.waveform for s in scn.sources]
    x = synth_timedomain(scn, 512)
    save_block(x, tmp_path / "b.f32", 48828.0)
    y, fs = load_block(tmp_path / "b.f32")
    assert fs == 48828.0 and np.allclose(x, y, atol=1e-5 * np.abs(x).max())
