"""Summary statistics for the experiment reports."""

from __future__ import annotations

import math

import numpy as np

QUANTILES = (50.0, 95.0, 100.0)


def percentiles(values, qs=QUANTILES) -> list[float]:
    """Linear-interpolation percentiles; NaN for an empty sample."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return [math.nan] * len(qs)
    return [float(x) for x in np.percentile(v, qs)]


def percentile_sorted(values, q: float) -> float:
    """Reference percentile straight from the sorted sample (same interpolation)."""
    v = sorted(float(x) for x in values)
    if not v:
        return math.nan
    pos = (len(v) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def probability(successes) -> float:
    s = np.asarray(successes, dtype=bool)
    return float(s.mean()) if s.size else math.nan


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the exact bounds at k = 0 and k = n are 0 and 1; avoid rounding just inside
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return (lo, hi)


def tangent_errors(azimuth, elevation, est_azimuth, est_elevation) -> np.ndarray:
    """Estimate errors projected on the local (elevation, azimuth) tangent axes, degrees.

    For small errors the two components are the angular deviations along
    the unit vectors of increasing elevation and increasing azimuth.
    """
    az, el = float(azimuth), float(elevation)
    e_el = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), -math.sin(el)])
    e_az = np.array([-math.sin(az), math.cos(az), 0.0])
    ea = np.asarray(est_azimuth, dtype=float)
    ee = np.asarray(est_elevation, dtype=float)
    u = np.stack([np.sin(ee) * np.cos(ea), np.sin(ee) * np.sin(ea), np.cos(ee)], axis=-1)
    return np.degrees(np.stack([u @ e_el, u @ e_az], axis=-1))


def direction_variance(errors) -> float:
    """Trace of the sample covariance of 2-D tangent errors (deg^2)."""
    e = np.asarray(errors, dtype=float).reshape(-1, 2)
    if len(e) < 2:
        return math.nan
    return float(np.sum(np.var(e, axis=0, ddof=1)))


def matched_errors(true_az, true_el, est_az, est_el):
    """Optimal one-to-one matching of estimates to truth by spherical distance.

    Returns the per-truth matched distances (degrees); truths left without an
    estimate get ``inf``.
    """
    from ..assignment import linear_sum_assignment_min
    from ..sim import spherical_distance

    ta = np.asarray(true_az, dtype=float)
    te = np.asarray(true_el, dtype=float)
    ea = np.asarray(est_az, dtype=float)
    ee = np.asarray(est_el, dtype=float)
    out = np.full(len(ta), np.inf)
    if len(ta) == 0 or len(ea) == 0:
        return out
    D = np.degrees(spherical_distance(ta[:, None], te[:, None], ea[None, :], ee[None, :]))
    if len(ta) <= len(ea):
        cols = linear_sum_assignment_min(D)
        out[:] = D[np.arange(len(ta)), cols]
    else:
        rows = linear_sum_assignment_min(D.T)
        out[rows] = D[rows, np.arange(len(ea))]
    return out
