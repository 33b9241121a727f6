"""Subspace direction finding on planar arrays.

The pseudospectrum is evaluated on an azimuth/elevation lattice. The noise
projection uses the identity ``v^H En En^H v = |v|^2 - |Es^H v|^2`` so only
the smaller of the two subspaces is touched.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import CoArray, GridArray, SmoothingPlan, difference_coarray, smoothing_plan
from .sim import DirectionCosines, SnapshotMatrix, spherical_distance, steering_matrix, wrap_azimuth


class DoaError(ValueError):
    pass


def sample_covariance(X) -> np.ndarray:
    """``X X^H / N`` for an (M, N) snapshot block, symmetrised to be exactly Hermitian."""
    X = np.asarray(getattr(X, "data", X))
    if X.ndim != 2 or X.size == 0:
        raise DoaError("empty snapshot matrix")
    R = X @ X.conj().T / X.shape[1]
    return (R + R.conj().T) / 2


def successive_ratios(X) -> np.ndarray:
    X = np.asarray(getattr(X, "data", X))
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] <= 0:
        raise DoaError("all-zero data matrix")
    s = np.maximum(s, s[0] * 1e-15)
    return s[:-1] / s[1:]


def estimate_source_count(X, threshold: float = 3.0) -> int:
    """Position of the largest successive singular-value ratio if it exceeds ``threshold``.

    Returns 0 when no ratio clears the threshold.
    """
    ratios = successive_ratios(X)
    if ratios.size == 0:
        return 0
    k = int(np.argmax(ratios))
    return k + 1 if ratios[k] > threshold else 0


@dataclass(frozen=True)
class AngleGrid:
    """Lattice in degrees: azimuth rows wrap, elevation measured from zenith."""

    az_step: float = 1.0
    el_step: float = 1.0
    el_max: float = 89.0

    @property
    def azimuths(self) -> np.ndarray:
        n = int(round(360.0 / self.az_step))
        return -180.0 + self.az_step * np.arange(n)

    @property
    def elevations(self) -> np.ndarray:
        return np.arange(0.0, self.el_max + 1e-9, self.el_step)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.elevations), len(self.azimuths)


DEFAULT_GRID = AngleGrid()

_steer_cache: dict = {}


def _grid_steering(indices: np.ndarray, ratio: float, grid: AngleGrid) -> np.ndarray:
    key = (indices.tobytes(), indices.shape, round(ratio, 12), grid)
    A = _steer_cache.get(key)
    if A is None:
        az = np.radians(grid.azimuths)
        el = np.radians(grid.elevations)
        st = np.sin(el)[:, None]
        tb = (ratio * st * np.cos(az)[None, :]).ravel()
        pb = (ratio * st * np.sin(az)[None, :]).ravel()
        A = steering_matrix(indices, tb, pb)
        if len(_steer_cache) > 16:
            _steer_cache.clear()
        _steer_cache[key] = A
    return A


@dataclass
class Pseudospectrum:
    azimuths: np.ndarray  # degrees
    elevations: np.ndarray  # degrees
    values: np.ndarray  # (n_el, n_az), 1 / null
    null: np.ndarray  # noise-subspace projection |En^H v|^2 / |v|^2

    def argmax(self) -> tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.azimuths[j]), float(self.elevations[i])


def _check_hermitian(R):
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DoaError("covariance must be square")
    scale = max(np.abs(R).max(), 1e-300)
    if np.abs(R - R.conj().T).max() > 1e-10 * scale:
        raise DoaError("covariance is not Hermitian")
    return R


def subspaces(R, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenvalues (descending), signal subspace (M, K) and noise subspace (M, M-K)."""
    R = _check_hermitian(R)
    w, V = np.linalg.eigh(R)
    w, V = w[::-1], V[:, ::-1]
    return w, V[:, :K], V[:, K:]


def music_spectrum(R, array: GridArray, K: int, grid: AngleGrid = DEFAULT_GRID, *,
                   wavelength: float | None = None, ratio: float | None = None) -> Pseudospectrum:
    """MUSIC pseudospectrum of ``R`` for the sensor layout ``array``.

    Either ``ratio`` (pitch / wavelength) or ``wavelength`` fixes the
    direction-cosine scale; the default is half a wavelength.
    """
    R = _check_hermitian(R)
    M = array.size
    if R.shape[0] != M:
        raise DoaError(f"covariance is {R.shape[0]}x{R.shape[0]}, array has {M} sensors")
    if not 0 <= K < M:
        raise DoaError(f"need 0 <= K < M, got K={K}, M={M}")
    if ratio is None:
        ratio = 0.5 if wavelength is None else array.pitch / wavelength
    A = _grid_steering(array.indices, ratio, grid)
    _, Es, En = subspaces(R, K)
    if K <= M - K:
        proj = M - np.sum(np.abs(Es.conj().T @ A) ** 2, axis=0)
    else:
        proj = np.sum(np.abs(En.conj().T @ A) ** 2, axis=0)
    null = np.maximum(proj / M, 1e-15).reshape(grid.shape)
    return Pseudospectrum(grid.azimuths, grid.elevations, 1.0 / null, null)


# --- co-array smoothing ---------------------------------------------------------


def coarray_signal(R, array: GridArray, coarray: CoArray | None = None) -> np.ndarray:
    """Virtual-array signal on the hole-free rectangle, shape (2a+1, 2b+1), indexed [dx + a, dy + b].

    Each entry averages all covariance entries ``R[i, j]`` whose element
    difference ``e_i - e_j`` equals that virtual position.
    """
    R = np.asarray(R)
    coarray = difference_coarray(array) if coarray is None else coarray
    ax, ay = coarray.half_extent
    idx = array.indices
    d = (idx[:, None, :] - idx[None, :, :]).reshape(-1, 2)
    vals = R.reshape(-1)
    keep = (np.abs(d[:, 0]) <= ax) & (np.abs(d[:, 1]) <= ay)
    acc = np.zeros((2 * ax + 1, 2 * ay + 1), dtype=complex)
    cnt = np.zeros((2 * ax + 1, 2 * ay + 1))
    np.add.at(acc, (d[keep, 0] + ax, d[keep, 1] + ay), vals[keep])
    np.add.at(cnt, (d[keep, 0] + ax, d[keep, 1] + ay), 1)
    if np.any(cnt == 0):
        raise DoaError("hole-free rectangle has an empty lag; co-array does not match the array")
    return acc / cnt


def coarray_smoothed_covariance(R, array: GridArray, plan: SmoothingPlan | None = None,
                                coarray: CoArray | None = None) -> np.ndarray:
    """Spatially smoothed covariance of the virtual URA, size ``Lx*Ly`` square.

    Element order follows ``plan.window_array`` (x fastest).
    """
    coarray = difference_coarray(array) if coarray is None else coarray
    plan = smoothing_plan(coarray) if plan is None else plan
    if tuple(plan.virtual_extent) != coarray.extent:
        raise DoaError(f"plan extent {plan.virtual_extent} does not match co-array {coarray.extent}")
    z = coarray_signal(R, array, coarray)
    lx, ly = plan.window
    ii, jj = np.meshgrid(np.arange(lx), np.arange(ly), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()  # x fastest
    off = np.asarray(plan.offsets)
    Z = z[ii[:, None] + off[None, :, 0], jj[:, None] + off[None, :, 1]]
    Rss = Z @ Z.conj().T / len(plan.offsets)
    return (Rss + Rss.conj().T) / 2


# --- peaks ----------------------------------------------------------------------


@dataclass(frozen=True)
class DoaEstimate:
    azimuth: float  # rad, [-pi, pi)
    elevation: float  # rad, [0, pi/2)
    value: float = float("nan")
    device: str | None = None
    t: float | None = None

    def cosines(self, wavelength: float, pitch: float) -> DirectionCosines:
        return DirectionCosines(self.azimuth, self.elevation, wavelength, pitch)

    def to_record(self) -> dict:
        return {"device": self.device, "t": self.t,
                "phi_deg": math.degrees(self.azimuth), "theta_deg": math.degrees(self.elevation)}


def _padded(values: np.ndarray, az_step: float) -> np.ndarray:
    """Pad azimuth cyclically and reflect elevation through the zenith."""
    n_el, n_az = values.shape
    half = int(round(180.0 / az_step))
    top = np.roll(values[1:2], half, axis=1) if n_el > 1 else np.full((1, n_az), -np.inf)
    bottom = np.full((1, n_az), -np.inf)
    v = np.vstack([top, values, bottom])
    return np.hstack([v[:, -1:], v, v[:, :1]])


def local_maxima(values: np.ndarray, az_step: float = 1.0) -> np.ndarray:
    """(i_el, j_az) of cells not exceeded by any of their 8 neighbours."""
    P = _padded(values, az_step)
    c = P[1:-1, 1:-1]
    mask = np.ones_like(c, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            mask &= c >= P[1 + di: P.shape[0] - 1 + di, 1 + dj: P.shape[1] - 1 + dj]
    return np.argwhere(mask)


def _refine(null: np.ndarray, i: int, j: int) -> tuple[float, float]:
    """Sub-cell offset (d_el, d_az) in cells from a quadratic fit of the null spectrum."""
    n_el, n_az = null.shape
    if i == 0 or i == n_el - 1:
        return 0.0, _parabola(null[i, (j - 1) % n_az], null[i, j], null[i, (j + 1) % n_az])
    rows = null[i - 1: i + 2][:, [(j - 1) % n_az, j, (j + 1) % n_az]]
    y, x = np.mgrid[-1:2, -1:2]
    x, y, f = x.ravel(), y.ravel(), rows.ravel()
    G = np.column_stack([np.ones(9), x, y, x * x, x * y, y * y])
    c = np.linalg.lstsq(G, f, rcond=None)[0]
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    if np.linalg.det(H) > 0 and H[0, 0] > 0:
        dx, dy = np.linalg.solve(H, -c[1:3])
        if abs(dx) <= 1 and abs(dy) <= 1:
            return float(dy), float(dx)
    return (_parabola(rows[0, 1], rows[1, 1], rows[2, 1]), _parabola(rows[1, 0], rows[1, 1], rows[1, 2]))


def _parabola(a: float, b: float, c: float) -> float:
    den = a - 2 * b + c
    if den <= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def pick_peaks(spec: Pseudospectrum, K: int, min_separation: float = 4.0, *, refine: bool = True,
               device: str | None = None, t: float | None = None) -> list[DoaEstimate]:
    """Up to ``K`` strongest local maxima, greedily separated by ``min_separation`` degrees.

    Returned in decreasing pseudospectrum order; fewer than ``K`` are returned
    when the spectrum does not have enough separated maxima.
    """
    if K < 1:
        raise DoaError("K must be at least 1")
    az_step = float(spec.azimuths[1] - spec.azimuths[0]) if len(spec.azimuths) > 1 else 360.0
    el_step = float(spec.elevations[1] - spec.elevations[0]) if len(spec.elevations) > 1 else 1.0
    cand = local_maxima(spec.values, az_step)
    order = np.argsort(-spec.values[cand[:, 0], cand[:, 1]], kind="stable")
    sep = math.radians(min_separation)
    chosen: list[tuple[float, float, float]] = []
    for ci in order:
        i, j = cand[ci]
        az = math.radians(spec.azimuths[j])
        el = math.radians(spec.elevations[i])
        if chosen:
            a0 = np.array([c[0] for c in chosen])
            e0 = np.array([c[1] for c in chosen])
            if np.min(spherical_distance(a0, e0, az, el)) < sep:
                continue
        if refine:
            d_el, d_az = _refine(spec.null, i, j)
            el = math.radians(spec.elevations[i] + d_el * el_step)
            az = math.radians(spec.azimuths[j] + d_az * az_step)
            if el < 0:
                el, az = -el, az + math.pi
        chosen.append((float(wrap_azimuth(az)), min(max(el, 0.0), math.pi / 2 - 1e-9), float(spec.values[i, j])))
        if len(chosen) == K:
            break
    return [DoaEstimate(a, e, v, device, t) for a, e, v in chosen]


def covariance_spectrum(R, array: GridArray, K: int, *, method: str = "music",
                        wavelength: float | None = None, grid: AngleGrid = DEFAULT_GRID) -> Pseudospectrum:
    """MUSIC pseudospectrum of a physical-array covariance, plain or co-array smoothed."""
    if method == "music":
        return music_spectrum(R, array, K, grid, wavelength=wavelength)
    if method == "ss-music":
        ca = difference_coarray(array)
        plan = smoothing_plan(ca)
        Rss = coarray_smoothed_covariance(R, array, plan, ca)
        virt = plan.window_array(array.pitch)
        if K >= virt.size:
            raise DoaError(f"K={K} needs a window larger than {plan.window}")
        return music_spectrum(Rss, virt, K, grid, wavelength=wavelength)
    raise DoaError(f"unknown method {method!r}")


def estimate_doas(snap: SnapshotMatrix, K: int | None = None, *, method: str = "music",
                  wavelength: float | None = None, grid: AngleGrid = DEFAULT_GRID,
                  min_separation: float = 4.0, threshold: float = 3.0,
                  device: str | None = None, t: float | None = None) -> list[DoaEstimate]:
    """Covariance, optional source count, MUSIC (plain or co-array smoothed), peaks."""
    X = snap.data
    if K is None:
        K = estimate_source_count(X, threshold)
    if K == 0:
        return []
    spec = covariance_spectrum(sample_covariance(X), snap.array, K, method=method,
                               wavelength=wavelength, grid=grid)
    return pick_peaks(spec, K, min_separation, device=device, t=t)


def save_spectrum_csv(spec: Pseudospectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phi_deg", "theta_deg", "value"])
        for i, el in enumerate(spec.elevations):
            for j, az in enumerate(spec.azimuths):
                w.writerow([f"{az:g}", f"{el:g}", repr(float(spec.values[i, j]))])


def estimates_to_json(estimates) -> str:
    return json.dumps([e.to_record() for e in estimates], indent=2)
