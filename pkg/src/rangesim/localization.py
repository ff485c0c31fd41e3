"""Position estimation from ranged distances and passive time differences.

Both solvers are Gauss-Newton with Levenberg damping on the residuals,
seeded by the linearized subtract-first-anchor closed form where it
applies.  2-D only; nodes sit at a common height.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .ranging import SPEED_OF_LIGHT

MAX_ITERATIONS = 100
STEP_TOL = 1e-9


class LocalizationError(Exception):
    pass


class DegenerateGeometry(LocalizationError):
    pass


class NonConvergence(LocalizationError):
    pass


class InsufficientMeasurements(LocalizationError):
    pass


@dataclass(frozen=True)
class Anchor:
    node_id: int
    position: Tuple[float, float]


@dataclass(frozen=True)
class PositionEstimate:
    position: Tuple[float, float]
    n_measurements: int
    rmse_m: Optional[float] = None

    def with_truth(self, truth: Sequence[float]) -> "PositionEstimate":
        err = float(np.linalg.norm(np.asarray(self.position) - np.asarray(truth)))
        return PositionEstimate(self.position, self.n_measurements, rmse_m=err)


def _check_geometry(points: np.ndarray) -> None:
    if len(points) < 3:
        raise DegenerateGeometry(f"need >= 3 anchors, got {len(points)}")
    centered = points - points.mean(axis=0)
    # rank < 2 means collinear (or coincident) anchor layout
    if np.linalg.matrix_rank(centered, tol=1e-6) < 2:
        raise DegenerateGeometry("anchors are collinear")


def _linear_init(points: np.ndarray, dists: np.ndarray) -> np.ndarray:
    """Subtract-first-anchor linearization for a starting point."""
    p0, d0 = points[0], dists[0]
    a_rows = 2.0 * (points[1:] - p0)
    b = (d0 ** 2 - dists[1:] ** 2
         + np.sum(points[1:] ** 2, axis=1) - np.sum(p0 ** 2))
    sol, *_ = np.linalg.lstsq(a_rows, b, rcond=None)
    return sol


def _gauss_newton(residual_jacobian, x0: np.ndarray) -> np.ndarray:
    """Minimize sum of squared residuals with Levenberg-damped steps."""
    x = x0.astype(float).copy()
    lam = 1e-6
    r, jac = residual_jacobian(x)
    cost = float(r @ r)
    for _ in range(MAX_ITERATIONS):
        jtj = jac.T @ jac
        jtr = jac.T @ r
        step = None
        for _ in range(12):
            try:
                step = np.linalg.solve(jtj + lam * np.eye(len(x)), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if float(np.linalg.norm(step)) < STEP_TOL:
                return x  # damped step vanished: at a stationary point
            x_new = x + step
            r_new, jac_new = residual_jacobian(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                x, r, jac, cost = x_new, r_new, jac_new, cost_new
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 10.0
        else:
            if step is not None and float(np.linalg.norm(step)) < 1e-6:
                return x  # no descent possible within tolerance
            raise NonConvergence("damping exhausted without improvement")
        if step is not None and float(np.linalg.norm(step)) < STEP_TOL:
            return x
    return x


def multilaterate(anchors: Sequence[Anchor],
                  distances: Sequence[float]) -> PositionEstimate:
    """Least-squares fix from anchor distances."""
    if len(anchors) != len(distances):
        raise ValueError("anchors and distances length mismatch")
    points = np.array([a.position for a in anchors], dtype=float)
    dists = np.asarray(distances, dtype=float)
    if np.any(dists < 0):
        raise ValueError("distances must be non-negative")
    _check_geometry(points)

    def residual_jacobian(p):
        diff = p[None, :] - points
        norms = np.linalg.norm(diff, axis=1)
        r = norms - dists
        safe = np.where(norms > 1e-12, norms, 1.0)
        jac = diff / safe[:, None]
        return r, jac

    x = _gauss_newton(residual_jacobian, _linear_init(points, dists))
    return PositionEstimate((float(x[0]), float(x[1])), n_measurements=len(dists))


def hyperbolic_locate(pairs: Sequence[Tuple[Anchor, Anchor]],
                      delta_ts: Sequence[float]) -> PositionEstimate:
    """Fix a passive listener from per-pair time differences.

    Each observed delta_t equals t_MS + |p - s|/c - |p - m|/c, so the
    residual is that expression minus the measurement.
    """
    if len(pairs) != len(delta_ts):
        raise ValueError("pairs and delta_ts length mismatch")
    if len(pairs) < 3:
        raise InsufficientMeasurements(f"need >= 3 pairs, got {len(pairs)}")
    masters = np.array([m.position for m, _ in pairs], dtype=float)
    slaves = np.array([s.position for _, s in pairs], dtype=float)
    baselines = np.linalg.norm(slaves - masters, axis=1)
    if np.all(baselines < 1e-9):
        raise DegenerateGeometry("all master-slave pairs are colocated")
    foci = np.vstack([masters, slaves])
    _check_geometry(foci)
    dts = np.asarray(delta_ts, dtype=float)

    # work in meters rather than seconds so the normal equations stay
    # well conditioned
    range_diffs = SPEED_OF_LIGHT * dts

    def residual_jacobian(p):
        to_s = p[None, :] - slaves
        to_m = p[None, :] - masters
        ds = np.linalg.norm(to_s, axis=1)
        dm = np.linalg.norm(to_m, axis=1)
        r = (baselines + ds - dm) - range_diffs
        safe_s = np.where(ds > 1e-12, ds, 1.0)
        safe_m = np.where(dm > 1e-12, dm, 1.0)
        jac = to_s / safe_s[:, None] - to_m / safe_m[:, None]
        return r, jac

    x0 = foci.mean(axis=0)
    x = _gauss_newton(residual_jacobian, x0)
    return PositionEstimate((float(x[0]), float(x[1])), n_measurements=len(dts))


def batch_locate(anchor_distances: Sequence[Tuple[Anchor, Sequence[float]]]
                 ) -> PositionEstimate:
    """Average repeated distances per anchor, then multilaterate."""
    usable = [(a, list(ds)) for a, ds in anchor_distances if len(ds) > 0]
    if len(usable) < 3:
        raise InsufficientMeasurements(
            f"need distances from >= 3 anchors, got {len(usable)}")
    anchors = [a for a, _ in usable]
    means = [float(np.mean(ds)) for _, ds in usable]
    n = sum(len(ds) for _, ds in usable)
    est = multilaterate(anchors, means)
    return PositionEstimate(est.position, n_measurements=n)


def rmse(estimates: Sequence[Sequence[float]],
         truths: Sequence[Sequence[float]]) -> float:
    """Root-mean-square position error over a batch of estimates."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    return float(np.sqrt(np.mean(np.sum((e - t) ** 2, axis=1))))


def latlon_to_local(latlon: Sequence[Tuple[float, float]]
                    ) -> List[Tuple[float, float]]:
    """East-north tangent-plane meters about the centroid; fine under ~1 km."""
    arr = np.asarray(latlon, dtype=float)
    lat0, lon0 = arr.mean(axis=0)
    r_earth = 6_371_000.0
    east = np.radians(arr[:, 1] - lon0) * r_earth * np.cos(np.radians(lat0))
    north = np.radians(arr[:, 0] - lat0) * r_earth
    return [(float(e), float(n)) for e, n in zip(east, north)]
