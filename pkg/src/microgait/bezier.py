"""Parametric swing trajectories: degree-7 Bezier curves and quintic splines.

Both classes share the same evaluation interface (position / velocity /
acceleration over a time window) so the planner can treat optimized and
baseline trajectories uniformly.  Derivatives are analytic.
"""

from __future__ import annotations

from math import comb

import numpy as np

from microgait.errors import DomainError

BEZIER_DEGREE = 7


class BezierCurve:
    """Degree-7 Bezier over a time window.

    Control points a_0..a_7 are (8, dim); the curve interpolates a_0 at
    t0 and a_7 at tf exactly, and endpoint velocity/acceleration are set
    by the first and last three control points.
    """

    def __init__(self, control_points, window):
        self.control_points = np.asarray(control_points, dtype=float)
        if self.control_points.shape[0] != BEZIER_DEGREE + 1:
            raise ValueError(f"expected {BEZIER_DEGREE + 1} control points")
        self.t0, self.tf = float(window[0]), float(window[1])
        if not self.tf > self.t0:
            raise ValueError("time window must have tf > t0")
        n = BEZIER_DEGREE
        self._binom = np.array([comb(n, i) for i in range(n + 1)], dtype=float)
        # control points of the derivative curves (degree 6 and 5)
        T = self.tf - self.t0
        cp = self.control_points
        self._dctrl = n * np.diff(cp, axis=0) / T
        self._ddctrl = (n - 1) * np.diff(self._dctrl, axis=0) / T

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    def _check(self, t):
        if t < self.t0 - 1e-12 or t > self.tf + 1e-12:
            raise DomainError(f"t={t} outside [{self.t0}, {self.tf}]")

    @staticmethod
    def _bernstein(ctrl, s):
        n = ctrl.shape[0] - 1
        out = np.zeros(ctrl.shape[1])
        for i in range(n + 1):
            out += comb(n, i) * s ** i * (1.0 - s) ** (n - i) * ctrl[i]
        return out

    def position(self, t: float) -> np.ndarray:
        self._check(t)
        s = (t - self.t0) / (self.tf - self.t0)
        if s <= 0.0:
            return self.control_points[0].copy()
        if s >= 1.0:
            return self.control_points[-1].copy()
        return self._bernstein(self.control_points, s)

    def velocity(self, t: float) -> np.ndarray:
        self._check(t)
        s = np.clip((t - self.t0) / (self.tf - self.t0), 0.0, 1.0)
        return self._bernstein(self._dctrl, s)

    def acceleration(self, t: float) -> np.ndarray:
        self._check(t)
        s = np.clip((t - self.t0) / (self.tf - self.t0), 0.0, 1.0)
        return self._bernstein(self._ddctrl, s)

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        ts = np.linspace(self.t0, self.tf, n)
        return ts, np.array([self.position(t) for t in ts])


def boundary_constrained_curve(start, target, window, a3, a4) -> BezierCurve:
    """Degree-7 curve with rest-to-rest boundary conditions.

    Zero endpoint velocity and acceleration eliminate a_1, a_2, a_5, a_6
    (they collapse onto the endpoints), leaving a_3 and a_4 as the only
    free interior points.
    """
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    a3 = np.asarray(a3, dtype=float)
    a4 = np.asarray(a4, dtype=float)
    ctrl = np.array([start, start, start, a3, a4, target, target, target])
    return BezierCurve(ctrl, window)


def _quintic_scalar(s):
    """Rest-to-rest quintic time scaling and derivatives on s in [0, 1]."""
    p = 10 * s**3 - 15 * s**4 + 6 * s**5
    v = 30 * s**2 - 60 * s**3 + 30 * s**4
    a = 60 * s - 180 * s**2 + 120 * s**3
    return p, v, a


class PiecewiseQuintic:
    """Chain of straight rest-to-rest quintic segments through waypoints.

    Every segment starts and ends at rest, so the chain is trivially C2 at
    the interior waypoints (velocity and acceleration vanish there).
    """

    def __init__(self, waypoints, times):
        self.waypoints = [np.asarray(w, dtype=float) for w in waypoints]
        self.times = np.asarray(times, dtype=float)
        if len(self.waypoints) != self.times.size:
            raise ValueError("need one time per waypoint")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.t0 = float(self.times[0])
        self.tf = float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    def _segment(self, t):
        if t < self.t0 - 1e-12 or t > self.tf + 1e-12:
            raise DomainError(f"t={t} outside [{self.t0}, {self.tf}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.waypoints) - 2)
        T = self.times[i + 1] - self.times[i]
        s = np.clip((t - self.times[i]) / T, 0.0, 1.0)
        return i, s, T

    def position(self, t: float) -> np.ndarray:
        i, s, _ = self._segment(t)
        p, _, _ = _quintic_scalar(s)
        return self.waypoints[i] + (self.waypoints[i + 1] - self.waypoints[i]) * p

    def velocity(self, t: float) -> np.ndarray:
        i, s, T = self._segment(t)
        _, v, _ = _quintic_scalar(s)
        return (self.waypoints[i + 1] - self.waypoints[i]) * v / T

    def acceleration(self, t: float) -> np.ndarray:
        i, s, T = self._segment(t)
        _, _, a = _quintic_scalar(s)
        return (self.waypoints[i + 1] - self.waypoints[i]) * a / (T * T)

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        ts = np.linspace(self.t0, self.tf, n)
        return ts, np.array([self.position(t) for t in ts])
