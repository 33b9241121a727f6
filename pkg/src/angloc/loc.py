"""Ray fusion, fix quality gating and device pose estimation.

Rotations are optimised in axis-angle form. Angular residuals use
``r = (a - b) * h(|a - b|)`` with ``h(s) = 2 asin(s/2) / s`` for unit vectors
``a`` and ``b``, so ``|r|`` is exactly the angle between them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lm import ConvergenceError, LMResult, levenberg_marquardt
from .rotation import d_exp_so3, exp_so3, log_so3, random_rotation, rotation_angle
from .sim import unit_vector


class GeometryDegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        p = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"R": [float(v) for v in self.rotation.ravel()], "p": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["R"], dtype=float).reshape(3, 3), np.asarray(d["p"], dtype=float))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d / n)


@dataclass(frozen=True)
class Fix:
    position: np.ndarray
    divergence: float
    devices: tuple = ()
    t: float | None = None


def to_global(pose: Pose, doa) -> Ray:
    """Global ray of a local direction estimate (any object with azimuth/elevation)."""
    u = unit_vector(doa.azimuth, doa.elevation)
    return Ray(pose.translation, pose.rotation @ u)


def divergence(x, rays) -> float:
    """Mean orthogonal distance from ``x`` to the rays."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for r in rays:
        v = x - r.origin
        total += np.linalg.norm(v - (v @ r.direction) * r.direction)
    return total / len(rays)


def triangulate(rays, *, max_condition: float = 1e8, devices=(), t=None) -> Fix:
    """Least-squares point closest to all rays, with its divergence."""
    rays = list(rays)
    if len(rays) < 2:
        raise GeometryDegenerateError("need at least two rays")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for r in rays:
        P = np.eye(3) - np.outer(r.direction, r.direction)
        A += P
        b += P @ r.origin
    if np.linalg.cond(A) > max_condition:
        raise GeometryDegenerateError("rays are (nearly) parallel")
    x = np.linalg.solve(A, b)
    return Fix(x, divergence(x, rays), tuple(devices), t)


@dataclass
class FilterResult:
    retained: list
    fraction: float


def filter_fixes(fixes, limit: float) -> FilterResult:
    """Keep fixes whose divergence does not exceed ``limit`` (meters)."""
    if not limit > 0:
        raise ValueError("divergence limit must be positive")
    fixes = list(fixes)
    kept = [f for f in fixes if f.divergence <= limit]
    return FilterResult(kept, len(kept) / len(fixes) if fixes else 1.0)


def associate(times1, times2, tolerance: float = 0.01) -> list[tuple[int, int]]:
    """Nearest-timestamp pairs (i, j) with ``|t1 - t2| <= tolerance``; each index used once."""
    t1 = np.asarray(times1, dtype=float)
    t2 = np.asarray(times2, dtype=float)
    if t2.size == 0:
        return []
    order = np.argsort(t2, kind="stable")
    s2 = t2[order]
    pairs, used = [], set()
    for i, t in enumerate(t1):
        k = np.searchsorted(s2, t)
        best = None
        for c in (k - 1, k):
            if 0 <= c < len(s2):
                if best is None or abs(s2[c] - t) < abs(s2[best] - t):
                    best = c
        if best is not None and abs(s2[best] - t) <= tolerance and order[best] not in used:
            used.add(order[best])
            pairs.append((i, int(order[best])))
    return pairs


# --- angular residual ----------------------------------------------------------


def _h(s):
    """2 asin(s/2) / s and (dh/ds) / s, with series near zero."""
    s = np.asarray(s, dtype=float)
    small = s < 1e-4
    ss = np.where(small, 1.0, np.minimum(s, 2.0 - 1e-12))
    h = np.where(small, 1 + s**2 / 24, 2 * np.arcsin(ss / 2) / ss)
    dh = (ss / np.sqrt(1 - ss**2 / 4) - 2 * np.arcsin(ss / 2)) / ss**3
    dh = np.where(small, 1 / 12 + 3 * s**2 / 160, dh)
    return h, dh


def angular_residual(a, b) -> np.ndarray:
    """Residual vectors whose norms are the angles between unit rows of ``a`` and ``b``."""
    diff = np.asarray(a) - np.asarray(b)
    h, _ = _h(np.linalg.norm(diff, axis=-1))
    return diff * h[..., None]


def _angular_residual_jac(diff):
    """d r / d diff per row, shape (n, 3, 3)."""
    s = np.linalg.norm(diff, axis=-1)
    h, dh = _h(s)
    return h[:, None, None] * np.eye(3)[None] + dh[:, None, None] * diff[:, :, None] * diff[:, None, :]


# --- PnP -------------------------------------------------------------------------


@dataclass
class CalibrationResult:
    pose: Pose
    cost: float
    residual_rms: float
    iterations: int
    converged: bool
    extra: dict = field(default_factory=dict)


class PnPProblem:
    """Angles between rotated measured directions and directions to known tags.

    Parameters are ``[w (axis-angle, 3), p (3)]``.
    """

    def __init__(self, tags, directions):
        self.x = np.asarray(tags, dtype=float).reshape(-1, 3)
        self.u = np.asarray(directions, dtype=float).reshape(-1, 3)
        self.u = self.u / np.linalg.norm(self.u, axis=1, keepdims=True)
        if len(self.x) != len(self.u):
            raise ValueError("tags and directions differ in count")

    def predicted(self, params):
        R = exp_so3(params[:3])
        v = self.x - params[3:]
        dist = np.linalg.norm(v, axis=1)
        return (self.u @ R.T), v / dist[:, None], dist

    def residual(self, params) -> np.ndarray:
        a, g, _ = self.predicted(params)
        return angular_residual(a, g).ravel()

    def jacobian(self, params) -> np.ndarray:
        a, g, dist = self.predicted(params)
        dR = d_exp_so3(params[:3])
        n = len(self.x)
        D = _angular_residual_jac(a - g)
        J = np.zeros((n, 3, 6))
        for i in range(3):
            J[:, :, i] = np.einsum("nab,nb->na", D, self.u @ dR[i].T)
        # g = v / |v| with v = x - p: dg/dp = -(I - g g^T) / |v|
        dg_dp = -(np.eye(3)[None] - g[:, :, None] * g[:, None, :]) / dist[:, None, None]
        J[:, :, 3:] = -np.einsum("nab,nbc->nac", D, dg_dp)
        return J.reshape(3 * n, 6)

    def cost(self, params) -> float:
        r = self.residual(params)
        return float(r @ r)


def _closest_point(rays_origin, rays_dir):
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for o, d in zip(rays_origin, rays_dir):
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ o
    return np.linalg.lstsq(A, b, rcond=None)[0]


def pnp_calibrate(tags, directions, *, starts: int = 20, seed: int = 0, max_iter: int = 200,
                  ftol: float = 1e-12) -> CalibrationResult:
    """Device pose from local directions towards known tag positions.

    Each start draws a random rotation, places the device at the point closest
    to the back-projected rays ``x_k - t R u_k`` and refines with
    Levenberg-Marquardt; the lowest-cost solution wins.
    """
    prob = PnPProblem(tags, directions)
    n = len(prob.x)
    if n < 3:
        raise GeometryDegenerateError("PnP needs at least three tags")
    centered = prob.x - prob.x.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max())) < 2:
        raise GeometryDegenerateError("tags are collinear")
    rng = np.random.default_rng(seed)
    best: LMResult | None = None
    for k in range(starts):
        R0 = np.eye(3) if k == 0 else random_rotation(rng)
        p0 = _closest_point(prob.x, -(prob.u @ R0.T))
        res = levenberg_marquardt(prob.residual, prob.jacobian, np.concatenate([log_so3(R0), p0]),
                                  max_iter=max_iter, ftol=ftol)
        if best is None or res.cost < best.cost:
            best = res
    if not np.isfinite(best.cost):
        raise ConvergenceError("PnP did not converge")
    pose = Pose(exp_so3(best.x[:3]), best.x[3:])
    return CalibrationResult(pose, best.cost, math.sqrt(best.cost / n), best.iterations, best.converged)


# --- self-calibration --------------------------------------------------------------


class SelfCalProblem:
    """Two-device self-calibration with device 1 at the origin and identity rotation.

    Parameters: ``[alpha, beta, w (3), rho1 (T), rho2 (T)]`` with
    ``p2 = D12 * (sin b cos a, sin b sin a, cos b)`` and ranges ``exp(rho)``.
    Residual per sample: ``d1 l1 - (p2 + R2 d2 l2)``; an optional prior adds
    ``sqrt(weight) * (p2 / D12 - prior)``.
    """

    def __init__(self, d1, d2, distance: float, prior=None, prior_weight: float | None = None):
        self.d1 = np.asarray(d1, dtype=float).reshape(-1, 3)
        self.d2 = np.asarray(d2, dtype=float).reshape(-1, 3)
        self.d1 /= np.linalg.norm(self.d1, axis=1, keepdims=True)
        self.d2 /= np.linalg.norm(self.d2, axis=1, keepdims=True)
        if len(self.d1) != len(self.d2):
            raise ValueError("direction streams differ in length")
        if not distance > 0:
            raise ValueError("inter-device distance must be positive")
        self.D = float(distance)
        self.T = len(self.d1)
        self.prior = None if prior is None else np.asarray(prior, dtype=float) / np.linalg.norm(prior)
        self.w = 0.1 * self.T if prior_weight is None else float(prior_weight)

    @property
    def n_params(self) -> int:
        return 5 + 2 * self.T

    def unpack(self, x):
        a, b = x[0], x[1]
        n = np.array([math.sin(b) * math.cos(a), math.sin(b) * math.sin(a), math.cos(b)])
        rho = np.clip(x[5:], -30.0, 30.0)
        return n, x[2:5], np.exp(rho[: self.T]), np.exp(rho[self.T:])

    def residual(self, x) -> np.ndarray:
        n, w, l1, l2 = self.unpack(x)
        R = exp_so3(w)
        r = self.d1 * l1[:, None] - (self.D * n + (self.d2 @ R.T) * l2[:, None])
        out = [r.ravel()]
        if self.prior is not None and self.w > 0:
            out.append(math.sqrt(self.w) * (n - self.prior))
        return np.concatenate(out)

    def jacobian(self, x) -> np.ndarray:
        a, b = x[0], x[1]
        n, w, l1, l2 = self.unpack(x)
        T = self.T
        dn_da = np.array([-math.sin(b) * math.sin(a), math.sin(b) * math.cos(a), 0.0])
        dn_db = np.array([math.cos(b) * math.cos(a), math.cos(b) * math.sin(a), -math.sin(b)])
        dR = d_exp_so3(w)
        R = exp_so3(w)
        rows = 3 * T + (3 if self.prior is not None and self.w > 0 else 0)
        J = np.zeros((rows, self.n_params))
        Jr = J[: 3 * T].reshape(T, 3, self.n_params)
        Jr[:, :, 0] = -self.D * dn_da
        Jr[:, :, 1] = -self.D * dn_db
        for i in range(3):
            Jr[:, :, 2 + i] = -(self.d2 @ dR[i].T) * l2[:, None]
        idx = np.arange(T)
        Jr[idx, :, 5 + idx] = self.d1 * l1[:, None]
        Jr[idx, :, 5 + T + idx] = -(self.d2 @ R.T) * l2[:, None]
        if rows > 3 * T:
            s = math.sqrt(self.w)
            J[3 * T:, 0] = s * dn_da
            J[3 * T:, 1] = s * dn_db
        return J

    def data_cost(self, x) -> float:
        r = self.residual(x)[: 3 * self.T]
        return float(r @ r)

    def initial_ranges(self, n, R):
        """Closest-approach ranges between rays (0, d1) and (p2, R d2), floored positive."""
        p2 = self.D * n
        e = self.d2 @ R.T
        b = np.sum(self.d1 * e, axis=1)
        dp1 = self.d1 @ p2
        dp2 = e @ p2
        den = np.maximum(1 - b**2, 1e-9)
        l1 = (dp1 - b * dp2) / den
        l2 = (b * dp1 - dp2) / den
        floor = 0.1 * self.D
        return np.maximum(l1, floor), np.maximum(l2, floor)

    def params(self, n, R, l1, l2) -> np.ndarray:
        n = np.asarray(n) / np.linalg.norm(n)
        b = math.acos(np.clip(n[2], -1, 1))
        a = math.atan2(n[1], n[0])
        return np.concatenate([[a, b], log_so3(R), np.log(l1), np.log(l2)])


    # coplanarity of d1, p2 and R d2: e = d1 . (n x R d2), independent of ranges
    def epipolar_residual(self, y) -> np.ndarray:
        a, b = y[0], y[1]
        n = np.array([math.sin(b) * math.cos(a), math.sin(b) * math.sin(a), math.cos(b)])
        e = self.d2 @ exp_so3(y[2:5]).T
        return np.einsum("ti,ti->t", self.d1, np.cross(n[None, :], e))

    def epipolar_jacobian(self, y) -> np.ndarray:
        a, b = y[0], y[1]
        n = np.array([math.sin(b) * math.cos(a), math.sin(b) * math.sin(a), math.cos(b)])
        dn_da = np.array([-math.sin(b) * math.sin(a), math.sin(b) * math.cos(a), 0.0])
        dn_db = np.array([math.cos(b) * math.cos(a), math.cos(b) * math.sin(a), -math.sin(b)])
        e = self.d2 @ exp_so3(y[2:5]).T
        dR = d_exp_so3(y[2:5])
        J = np.empty((self.T, 5))
        J[:, 0] = np.einsum("ti,ti->t", self.d1, np.cross(dn_da[None, :], e))
        J[:, 1] = np.einsum("ti,ti->t", self.d1, np.cross(dn_db[None, :], e))
        for i in range(3):
            J[:, 2 + i] = np.einsum("ti,ti->t", self.d1, np.cross(n[None, :], self.d2 @ dR[i].T))
        return J

    def disambiguate(self, n, R):
        """Pick among (+-n) x (R, twisted R) the candidate with most positive ranges."""
        twist = exp_so3(np.pi * n)
        best, best_score = (n, R), -np.inf
        for nn in (n, -n):
            for RR in (R, twist @ R):
                p2 = self.D * nn
                e = self.d2 @ RR.T
                bb = np.sum(self.d1 * e, axis=1)
                den = np.maximum(1 - bb**2, 1e-9)
                l1 = (self.d1 @ p2 - bb * (e @ p2)) / den
                l2 = (bb * (self.d1 @ p2) - e @ p2) / den
                score = np.sum((l1 > 0) & (l2 > 0))
                if score > best_score:
                    best, best_score = (nn, RR), score
        return best


def eight_point(d1, d2):
    """Linear essential-matrix estimate: (unit baseline direction, rotation) of device 2."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    A = np.einsum("ti,tj->tij", d1, d2).reshape(len(d1), 9)
    E = np.linalg.svd(A)[2][-1].reshape(3, 3)
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    return U[:, 2], U @ W @ Vt


def self_calibrate(d1, d2, distance: float, *, prior=None, prior_weight: float | None = None,
                   starts: int = 20, seed: int = 0, max_iter: int = 200, ftol: float = 1e-12,
                   min_spread_deg: float = 2.0, refine_top: int = 3) -> CalibrationResult:
    """Pose of device 2 and per-sample ranges from paired direction streams.

    Every start first fits baseline direction and rotation to the coplanarity
    constraint alone, resolves the sign/twist ambiguity by range positivity,
    then refines all parameters jointly. With eight or more samples the linear
    essential-matrix solution is tried in addition to the random starts.

    The result's ``extra`` holds ``ranges1``, ``ranges2`` and ``data_cost``
    (sum of squared ray residuals without the prior).
    """
    prob = SelfCalProblem(d1, d2, distance, prior, prior_weight)
    if prob.T < 6:
        raise GeometryDegenerateError("self-calibration needs at least six samples")
    spread = np.degrees(np.max(np.arccos(np.clip(prob.d1 @ prob.d1.T, -1, 1))))
    if spread < min_spread_deg:
        raise GeometryDegenerateError("source directions do not spread; trajectory is degenerate")
    rng = np.random.default_rng(seed)
    inits = []
    for k in range(starts):
        if prob.prior is not None and k == 0:
            n0 = prob.prior
        else:
            n0 = rng.standard_normal(3)
            n0 /= np.linalg.norm(n0)
        inits.append((n0, random_rotation(rng)))
    if prob.T >= 8:
        inits.append(eight_point(prob.d1, prob.d2))
    stage1 = []
    for n0, R0 in inits:
        y0 = prob.params(n0, R0, np.ones(prob.T), np.ones(prob.T))[:5]
        ep = levenberg_marquardt(prob.epipolar_residual, prob.epipolar_jacobian, y0, max_iter=max_iter, ftol=ftol)
        n1, w1, _, _ = prob.unpack(np.concatenate([ep.x, np.zeros(2 * prob.T)]))
        n1, R1 = prob.disambiguate(n1, exp_so3(w1))
        if prob.prior is not None and n1 @ prob.prior < 0 and prob.w > 0:
            n1, R1 = prob.disambiguate(-n1, R1)
        stage1.append((ep.cost, n1, R1))
    stage1.sort(key=lambda c: c[0])
    # most starts land on the same coplanarity optimum; refine a few distinct ones
    distinct = []
    for c in stage1:
        if all(rotation_angle(c[2], d[2]) > 1e-3 or np.linalg.norm(c[1] - d[1]) > 1e-3 for d in distinct):
            distinct.append(c)
        if len(distinct) == refine_top:
            break
    best: LMResult | None = None
    for _, n1, R1 in distinct:
        l1, l2 = prob.initial_ranges(n1, R1)
        res = levenberg_marquardt(prob.residual, prob.jacobian, prob.params(n1, R1, l1, l2),
                                  max_iter=max_iter, ftol=ftol)
        if best is None or res.cost < best.cost:
            best = res
    n, w, l1, l2 = prob.unpack(best.x)
    src = prob.d1 * l1[:, None]
    # distance of every source point from the baseline through both devices
    p2 = prob.D * n
    along = src @ n
    off = np.linalg.norm(src - along[:, None] * n[None, :], axis=1)
    if np.max(off) < 1e-3 * prob.D:
        raise GeometryDegenerateError("trajectory lies on the inter-device baseline")
    pose = Pose(exp_so3(w), p2)
    dc = prob.data_cost(best.x)
    return CalibrationResult(pose, best.cost, math.sqrt(dc / prob.T), best.iterations, best.converged,
                             {"ranges1": l1, "ranges2": l2, "data_cost": dc})


def save_pose(pose: Pose, path, **extra) -> None:
    Path(path).write_text(json.dumps({**pose.to_dict(), **extra}, indent=2) + "\n")


def load_pose(path) -> Pose:
    return Pose.from_dict(json.loads(Path(path).read_text()))
