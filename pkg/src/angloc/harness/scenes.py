"""Synthetic rooms, trajectories and multi-device scenes for the sweeps."""

from __future__ import annotations

import math

import numpy as np

from ..loc import Pose
from ..rotation import exp_so3
from ..sim import SOUND_SPEED, SceneError, Source, angles_from_vector, spherical_distance, unit_vector

# sources from behind the array plane are treated as shielded by the housing
MAX_LOCAL_ELEVATION = math.radians(89.5)


def device_poses(devices) -> list[Pose]:
    return [Pose(exp_so3(d["rotation"]), d["translation"]) for d in devices]


def trajectory(rng, steps: int, box, *, speed: float = 1.0, hop: float = 0.01, smooth: float = 0.5) -> np.ndarray:
    """Smoothed random-waypoint path sampled every ``hop`` seconds, shape (steps, 3).

    Legs between uniform waypoints in ``box`` are walked at a log-normal
    speed with median ``speed``; a moving average over ``smooth`` seconds
    rounds the corners.
    """
    box = np.asarray(box, dtype=float)
    win = max(1, int(round(smooth / hop)))
    need = steps + win
    pts = [rng.uniform(box[:, 0], box[:, 1])]
    path = []
    while len(path) < need:
        nxt = rng.uniform(box[:, 0], box[:, 1])
        v = speed * math.exp(0.5 * rng.standard_normal())
        n = max(1, int(np.linalg.norm(nxt - pts[-1]) / (v * hop)))
        a = np.linspace(0, 1, n, endpoint=False)[:, None]
        path.extend(pts[-1] + a * (nxt - pts[-1]))
        pts.append(nxt)
    path = np.asarray(path[:need])
    kernel = np.ones(win) / win
    out = np.column_stack([np.convolve(path[:, i], kernel, mode="valid") for i in range(3)])
    return out[:steps]


def image_sources(x, room, reflection: float) -> list[tuple[np.ndarray, float]]:
    """Direct path plus first-order shoebox images as (position, amplitude factor)."""
    x = np.asarray(x, dtype=float)
    out = [(x, 1.0)]
    if reflection <= 0:
        return out
    for ax in range(3):
        for wall in room[ax]:
            y = x.copy()
            y[ax] = 2 * wall - x[ax]
            out.append((y, reflection))
    return out


def local_direction(pose: Pose, x) -> tuple[float, float, float]:
    """Azimuth, elevation and range of a global point seen from a device."""
    v = pose.rotation.T @ (np.asarray(x, dtype=float) - pose.translation)
    az, el = angles_from_vector(v)
    return az, el, float(np.linalg.norm(v))


def device_sources(pose: Pose, tags, specs, rng, *, room, reflection: float, sample_rate: float,
                   symbol_samples: int, sound_speed: float = SOUND_SPEED) -> list[Source]:
    """Sources one device hears: each tag's direct path and its wall images.

    Image power follows the amplitude factor and spherical spreading
    relative to the direct path; the image delay shifts the emission offset.
    All paths of one tag share the carrier phase.
    """
    out = []
    for x, spec in zip(tags, specs):
        offset = int(rng.integers(symbol_samples))
        phase = float(rng.uniform(0, 2 * np.pi))
        _, _, r0 = local_direction(pose, x)
        for y, beta in image_sources(x, room, reflection):
            az, el, r = local_direction(pose, y)
            if el > MAX_LOCAL_ELEVATION:
                continue
            lag = int(round((r - r0) / sound_speed * sample_rate))
            out.append(Source(az, el, (beta * r0 / r) ** 2, spec, offset=(offset - lag) % symbol_samples, phase=phase))
    return out


def separated_directions(rng, K: int, separation: float, *, min_elevation: float, max_elevation: float,
                         max_tries: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """K directions with one pair exactly ``separation`` apart and all pairs at least that.

    ``K - 1`` directions are rejection-sampled at the minimum separation;
    the last is placed on the circle of radius ``separation`` around the
    first, at a random bearing that keeps it inside the elevation band and
    clear of the others.
    """
    from ..sim import random_directions

    if K < 2:
        return random_directions(rng, K, min_elevation=min_elevation, max_elevation=max_elevation,
                                 min_separation=separation)
    for _ in range(max_tries):
        az, el = random_directions(rng, K - 1, min_elevation=min_elevation, max_elevation=max_elevation,
                                   min_separation=separation)
        u = unit_vector(az[0], el[0])
        for _ in range(100):
            w = rng.standard_normal(3)
            w -= (w @ u) * u
            w /= np.linalg.norm(w)
            v = math.cos(separation) * u + math.sin(separation) * w
            a2, e2 = angles_from_vector(v)
            if not min_elevation <= e2 <= max_elevation:
                continue
            if K > 2 and np.min(spherical_distance(az[1:], el[1:], a2, e2)) < separation:
                continue
            return np.append(az, a2), np.append(el, e2)
    raise SceneError(f"could not place {K} sources with a pair at {math.degrees(separation):.1f} deg")
