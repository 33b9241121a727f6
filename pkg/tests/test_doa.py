import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from angloc.doa import (
    AngleGrid,
    DoaError,
    coarray_signal,
    coarray_smoothed_covariance,
    covariance_spectrum,
    estimate_doas,
    estimate_source_count,
    local_maxima,
    music_spectrum,
    pick_peaks,
    sample_covariance,
    subspaces,
)
from angloc.geometry import difference_coarray, make_geometry, smoothing_plan
from angloc.sim import Scenario, Source, random_directions, spherical_distance, steering_matrix, synth_snapshots


def _noiseless_cov(arr, az, el, powers=None):
    ratio = 0.5
    tb = ratio * np.sin(el) * np.cos(az)
    pb = ratio * np.sin(el) * np.sin(az)
    A = steering_matrix(arr.indices, tb, pb)
    P = np.diag(np.ones(len(az)) if powers is None else powers)
    return A @ P @ A.conj().T, A


def test_single_source_on_grid_is_exact():
    arr = make_geometry("URA")
    az, el = np.radians([37.0]), np.radians([22.0])
    R, _ = _noiseless_cov(arr, az, el)
    spec = music_spectrum(R + 1e-9 * np.eye(64), arr, 1)
    assert spec.argmax() == (37.0, 22.0)


@given(st.floats(-math.pi, math.pi - 1e-6), st.floats(0.05, math.radians(80)))
def test_single_source_within_one_cell(az, el):
    arr = make_geometry("URA")
    R, _ = _noiseless_cov(arr, np.array([az]), np.array([el]))
    est = pick_peaks(music_spectrum(R, arr, 1), 1)[0]
    assert math.degrees(spherical_distance(est.azimuth, est.elevation, az, el)) < math.sqrt(2)


def test_noise_subspace_orthogonal(rng):
    arr = make_geometry("URA-5x5")
    az, el = random_directions(rng, 4, min_separation=math.radians(10))
    R, A = _noiseless_cov(arr, az, el, powers=[1.0, 2.0, 0.5, 3.0])
    _, _, En = subspaces(R, 4)
    assert np.abs(En.conj().T @ A).max() < 1e-6


def test_subspace_dimensions():
    R = np.eye(6)
    w, Es, En = subspaces(R, 2)
    assert Es.shape == (6, 2) and En.shape == (6, 4)
    with pytest.raises(DoaError):
        subspaces(np.array([[1, 2j], [0, 1]]), 1)


def test_source_count(rng):
    scn = Scenario(make_geometry("URA"), tuple(Source(a, e) for a, e in zip(*random_directions(rng, 3))),
                   snr_db=20.0, seed=1)
    assert estimate_source_count(synth_snapshots(scn).data) == 3
    noise = rng.standard_normal((8, 4096)) + 1j * rng.standard_normal((8, 4096))
    assert estimate_source_count(noise) == 0


def test_music_rejects_bad_k():
    arr = make_geometry("URA-5x5")
    with pytest.raises(DoaError):
        music_spectrum(np.eye(25), arr, 25)
    with pytest.raises(DoaError):
        music_spectrum(np.eye(24), arr, 1)


def test_coarray_signal_is_exact_for_noiseless_scene(rng):
    arr = make_geometry("Nested")
    az, el = random_directions(rng, 5)
    R, _ = _noiseless_cov(arr, az, el)
    z = coarray_signal(R, arr)
    ca = difference_coarray(arr)
    ax, ay = ca.half_extent
    dx, dy = np.meshgrid(np.arange(-ax, ax + 1), np.arange(-ay, ay + 1), indexing="ij")
    tb = 0.5 * np.sin(el) * np.cos(az)
    pb = 0.5 * np.sin(el) * np.sin(az)
    ref = np.exp(2j * np.pi * (dx[..., None] * tb + dy[..., None] * pb)).sum(-1)
    assert np.allclose(z, ref, atol=1e-10)


def test_smoothed_covariance_equals_virtual_ura(rng):
    arr = make_geometry("Nested")
    az, el = random_directions(rng, 3, min_separation=math.radians(15))
    R, _ = _noiseless_cov(arr, az, el)
    plan = smoothing_plan(difference_coarray(arr))
    Rss = coarray_smoothed_covariance(R, arr, plan)
    virt = plan.window_array(arr.pitch)
    Rv, _ = _noiseless_cov(virt, az, el)
    # smoothed matrix is the square of the virtual covariance up to scale
    assert np.allclose(Rss, Rv @ Rv / Rv.shape[0], atol=1e-8)


def test_nested_resolves_more_sources_than_sensors(rng):
    arr = make_geometry("URA")
    nested = make_geometry("Nested")
    mi = arr.mask_indices(nested)
    az, el = random_directions(rng, 18, min_separation=math.radians(15))
    scn = Scenario(arr, tuple(Source(a, e) for a, e in zip(az, el)), snr_db=30.0, snapshots=8192, seed=2)
    X = synth_snapshots(scn).data[mi]
    spec = covariance_spectrum(sample_covariance(X), nested, 18, method="ss-music")
    est = pick_peaks(spec, 18)
    assert len(est) == 18
    worst = max(min(spherical_distance(e.azimuth, e.elevation, az, el)) for e in est)
    assert math.degrees(worst) < 10


def test_ss_music_capacity():
    with pytest.raises(DoaError):
        covariance_spectrum(np.eye(16), make_geometry("Coprime"), 25, method="ss-music")
    with pytest.raises(DoaError):
        covariance_spectrum(np.eye(16), make_geometry("Coprime"), 1, method="esprit")


def test_local_maxima_wrap_azimuth():
    grid = AngleGrid()
    v = np.zeros(grid.shape)
    v[30, 0] = 5.0
    v[30, -1] = 4.0
    v[0, 10] = 3.0
    peaks = {tuple(p) for p in local_maxima(v)}
    assert (30, 0) in peaks and (30, 359) not in peaks
    # zenith row neighbours its own opposite azimuth
    assert (0, 10) in peaks


def test_pick_peaks_order_and_separation():
    arr = make_geometry("URA")
    az, el = np.radians([10.0, 100.0, -120.0]), np.radians([20.0, 40.0, 55.0])
    R, _ = _noiseless_cov(arr, az, el, powers=[3.0, 2.0, 1.0])
    est = pick_peaks(music_spectrum(R + 1e-6 * np.eye(64), arr, 3), 3, min_separation=5.0)
    assert len(est) == 3
    for e in est:
        assert math.degrees(min(spherical_distance(e.azimuth, e.elevation, az, el))) < 1.0
    with pytest.raises(DoaError):
        pick_peaks(music_spectrum(R, arr, 3), 0)


def test_estimate_doas_end_to_end():
    scn = Scenario(make_geometry("URA"), (Source(0.5, 0.6), Source(-1.5, 0.3)), snr_db=20.0, seed=4)
    est = estimate_doas(synth_snapshots(scn))
    assert len(est) == 2
    for e in est:
        d = spherical_distance(e.azimuth, e.elevation, np.array([0.5, -1.5]), np.array([0.6, 0.3]))
        assert math.degrees(d.min()) < 1.0


def test_sample_covariance_hermitian(rng):
    X = rng.standard_normal((5, 100)) + 1j * rng.standard_normal((5, 100))
    R = sample_covariance(X)
    assert np.array_equal(R, R.conj().T)
    assert np.all(np.linalg.eigvalsh(R) >= -1e-12)
    with pytest.raises(DoaError):
        sample_covariance(np.zeros((3, 0)))
