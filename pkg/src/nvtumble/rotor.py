"""Rotational Brownian motion of a spherical crystal.

Orientation is a unit quaternion ``(w, x, y, z)`` mapping crystal-frame
vectors to the lab frame; the NV axis is the crystal ``z`` axis. Angular
velocity is expressed in the lab frame and rotations are applied by left
multiplication, ``q <- exp(w dt / 2) * q``. For a sphere the inertia and drag
are isotropic, so the choice of frame for ``w`` does not change the statistics.

The angular velocity follows the exact Ornstein-Uhlenbeck update of
``I dw/dt = -gamma_d w + torque``: decay by ``exp(-dt/t_d)`` plus a Gaussian
kick that keeps the stationary variance ``k_B T / I = k_d / t_d`` per axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import StepSizeError, ValidationError
from .physparams import DerivedScales

# dt may exceed t_d/10 by rounding only
_GUARD_SLACK = 1e-9


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, *stream)``.

    Child streams are addressed by key rather than spawned in order, so block
    ``k`` of an ensemble draws the same numbers however the work is scheduled.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream)))


# -- quaternion algebra (batched over leading axes) -------------------------


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation by ``|rotvec|`` about ``rotvec``."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    scale = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 0, angle, 1.0), 0.5 - angle**2 / 48.0)
    return np.concatenate([np.cos(half)[..., None], scale[..., None] * rotvec], axis=-1)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate lab-frame vector(s) ``v`` by ``q``."""
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[..., :1] * t + np.cross(qv, t)


def nv_axis(q: np.ndarray) -> np.ndarray:
    """Lab-frame direction of the crystal z axis, i.e. the third column of R(q)."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)], axis=-1)


def axis_angles(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Polar and azimuthal angles (theta, phi) of unit vector(s)."""
    theta = np.arccos(np.clip(n[..., 2], -1.0, 1.0))
    phi = np.arctan2(n[..., 1], n[..., 0])
    return theta, phi


def quat_from_angles(theta, phi) -> np.ndarray:
    """Orientation whose NV axis points along (theta, phi): R_z(phi) R_y(theta)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    qy = np.stack([np.cos(theta / 2), np.zeros_like(theta), np.sin(theta / 2), np.zeros_like(theta)], axis=-1)
    qz = np.stack([np.cos(phi / 2), np.zeros_like(phi), np.zeros_like(phi), np.sin(phi / 2)], axis=-1)
    return quat_multiply(qz, qy)


def slerp(q0: np.ndarray, q1: np.ndarray, frac: float) -> np.ndarray:
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + frac * (q1 - q0))
    omega = math.acos(min(dot, 1.0))
    s = math.sin(omega)
    return (math.sin((1 - frac) * omega) * q0 + math.sin(frac * omega) * q1) / s


# -- domain types -------------------------------------------------------------


@dataclass
class RotorState:
    orientation: np.ndarray
    angular_velocity: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.orientation = np.asarray(self.orientation, dtype=float)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float)
        if self.orientation.shape != (4,) or self.angular_velocity.shape != (3,):
            raise ValidationError("RotorState needs a 4-quaternion and a 3-vector")
        norm = np.linalg.norm(self.orientation)
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f"orientation quaternion has norm {norm}, expected 1")

    @property
    def axis(self) -> np.ndarray:
        return nv_axis(self.orientation)


@dataclass
class Trajectory:
    times: np.ndarray
    orientations: np.ndarray
    angular_velocities: np.ndarray
    seed: Optional[int] = None
    params: Optional[DerivedScales] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size == 0 or self.times[0] != 0.0:
            raise ValidationError("trajectory must start at t=0")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    @property
    def samples(self) -> Iterator[tuple[float, np.ndarray, np.ndarray]]:
        return zip(self.times, self.orientations, self.angular_velocities)

    def axes(self) -> np.ndarray:
        return nv_axis(self.orientations)

    def orientation_at(self, t: float) -> np.ndarray:
        """Orientation at time ``t`` by slerp between the bracketing samples."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self) - 2) if len(self) > 1 else 0
        if len(self) == 1:
            return self.orientations[0]
        t0, t1 = self.times[i], self.times[i + 1]
        return slerp(self.orientations[i], self.orientations[i + 1], (t - t0) / (t1 - t0))

    @classmethod
    def from_angles(cls, times, theta, phi) -> "Trajectory":
        """A prescribed path of the NV axis (crystal twist about the axis is zero)."""
        times = np.asarray(times, dtype=float)
        q = quat_from_angles(np.broadcast_to(theta, times.shape), np.broadcast_to(phi, times.shape))
        return cls(times, q, np.zeros((times.size, 3)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "qw", "qx", "qy", "qz", "wx", "wy", "wz"])
            for t, q, om in self.samples:
                w.writerow([repr(float(t)), *map(repr, map(float, q)), *map(repr, map(float, om))])


@dataclass(frozen=True)
class RandomWalkStep:
    delta_theta: float
    delta_t: float
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))


# -- Langevin integration -------------------------------------------------------


def _check_dt(dt: float, scales: DerivedScales) -> None:
    if not dt > 0:
        raise StepSizeError(f"time step must be positive, got {dt}")
    if dt > scales.t_d / 10.0 * (1.0 + _GUARD_SLACK):
        raise StepSizeError(f"dt={dt:.3e} exceeds the t_d/10 = {scales.t_d / 10:.3e} integration guard")


def _ou_coefficients(dt: float, scales: DerivedScales) -> tuple[float, float]:
    decay = math.exp(-dt / scales.t_d)
    kick = math.sqrt(scales.omega_variance * -math.expm1(-2.0 * dt / scales.t_d))
    return decay, kick


def _advance(q, w, dt, decay, kick, noise):
    w_next = decay * w + kick * noise
    q_next = quat_normalize(quat_multiply(quat_exp(0.5 * (w + w_next) * dt), q))
    return q_next, w_next


def step_langevin(state: RotorState, dt: float, scales: DerivedScales, rng: np.random.Generator) -> RotorState:
    """Advance one crystal by ``dt`` (``dt <= t_d / 10``)."""
    _check_dt(dt, scales)
    decay, kick = _ou_coefficients(dt, scales)
    q, w = _advance(state.orientation, state.angular_velocity, dt, decay, kick, rng.standard_normal(3))
    return RotorState(q, w, state.time + dt)


class LangevinEnsemble:
    """Many independent crystals advanced in lock-step (vectorised over the ensemble)."""

    def __init__(self, orientations: np.ndarray, angular_velocities: np.ndarray, scales: DerivedScales):
        self.q = np.array(orientations, dtype=float)
        self.w = np.array(angular_velocities, dtype=float)
        self.scales = scales
        self.time = 0.0

    @classmethod
    def uniform(cls, n: int, scales: DerivedScales, rng: np.random.Generator) -> "LangevinEnsemble":
        q = quat_normalize(rng.standard_normal((n, 4)))
        w = math.sqrt(scales.omega_variance) * rng.standard_normal((n, 3))
        return cls(q, w, scales)

    def __len__(self) -> int:
        return self.q.shape[0]

    def step(self, dt: float, rng: np.random.Generator) -> None:
        _check_dt(dt, self.scales)
        decay, kick = _ou_coefficients(dt, self.scales)
        self.q, self.w = _advance(self.q, self.w, dt, decay, kick, rng.standard_normal(self.w.shape))
        self.time += dt

    def step_with_midpoint(self, dt: float, rng: np.random.Generator) -> np.ndarray:
        """Advance like :meth:`step` and return the orientations half-way through the step."""
        _check_dt(dt, self.scales)
        decay, kick = _ou_coefficients(dt, self.scales)
        w_next = decay * self.w + kick * rng.standard_normal(self.w.shape)
        half = quat_exp(0.25 * (self.w + w_next) * dt)
        q_mid = quat_multiply(half, self.q)
        self.q = quat_normalize(quat_multiply(half, q_mid))
        self.w = w_next
        self.time += dt
        return q_mid

    def axes(self) -> np.ndarray:
        return nv_axis(self.q)


def _substeps(interval: float, dt_max: float) -> tuple[int, float]:
    n = max(1, math.ceil(interval / dt_max * (1.0 - 1e-12)))
    return n, interval / n


def simulate_trajectory(
    initial: RotorState,
    duration: float,
    sample_dt: float,
    scales: DerivedScales,
    seed: int,
    dt_max: Optional[float] = None,
) -> Trajectory:
    """Sample one Langevin trajectory every ``sample_dt`` up to ``duration``.

    Internal steps subdivide ``sample_dt`` so that each is at most
    ``dt_max`` (default ``t_d / 10``).
    """
    if duration < 0 or not sample_dt > 0:
        raise ValidationError("duration must be >= 0 and sample_dt > 0")
    rng = make_rng(seed)
    dt_max = scales.t_d / 10.0 if dt_max is None else dt_max
    n_samples = int(round(duration / sample_dt))
    times = sample_dt * np.arange(n_samples + 1)
    qs = np.empty((n_samples + 1, 4))
    ws = np.empty((n_samples + 1, 3))
    q, w = initial.orientation.copy(), initial.angular_velocity.copy()
    qs[0], ws[0] = q, w
    nsub, dt = _substeps(sample_dt, dt_max)
    _check_dt(dt, scales)
    decay, kick = _ou_coefficients(dt, scales)
    for i in range(1, n_samples + 1):
        for _ in range(nsub):
            q, w = _advance(q, w, dt, decay, kick, rng.standard_normal(3))
        qs[i], ws[i] = q, w
    return Trajectory(times, qs, ws, seed=seed, params=scales)


def simulate_ensemble_axes(
    n: int,
    times: np.ndarray,
    scales: DerivedScales,
    seed: int,
    dt_max: Optional[float] = None,
) -> np.ndarray:
    """NV-axis directions of ``n`` stationary crystals at the requested times.

    Returns an array of shape ``(len(times), n, 3)``; ``times`` must start at 0
    and be increasing.
    """
    times = np.asarray(times, dtype=float)
    rng = make_rng(seed)
    ens = LangevinEnsemble.uniform(n, scales, rng)
    dt_max = scales.t_d / 10.0 if dt_max is None else dt_max
    out = np.empty((times.size, n, 3))
    out[0] = ens.axes()
    for k in range(1, times.size):
        nsub, dt = _substeps(times[k] - times[k - 1], dt_max)
        for _ in range(nsub):
            ens.step(dt, rng)
        out[k] = ens.axes()
    return out


# -- initial conditions and the random-walk abstraction ------------------------


def uniform_initial_orientation(rng: np.random.Generator, scales: Optional[DerivedScales] = None) -> RotorState:
    """Haar-uniform orientation; angular velocity from the stationary Maxwell law (zero without scales)."""
    q = quat_normalize(rng.standard_normal(4))
    if scales is None:
        w = np.zeros(3)
    else:
        w = math.sqrt(scales.omega_variance) * rng.standard_normal(3)
    return RotorState(q, w, 0.0)


def _random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_random_walks(scales: DerivedScales, rng: np.random.Generator, n: int):
    """Vectorised draw of ``n`` random-walk steps: arrays (delta_theta, delta_t, axis).

    Step durations follow p(dt) = dt / t_d^2 exp(-dt/t_d) (Gamma, shape 2).
    The angular change is ``|w_perp| dt`` where ``w_perp`` is the angular
    velocity component perpendicular to the NV axis (two Gaussian components
    of variance k_d/t_d), so <dtheta^2/dt^2> = 2 k_d / t_d.
    """
    delta_t = rng.gamma(2.0, scales.t_d, size=n)
    w_perp = math.sqrt(scales.omega_variance) * np.hypot(rng.standard_normal(n), rng.standard_normal(n))
    return w_perp * delta_t, delta_t, _random_unit_vectors(rng, n)


def sample_random_walk(scales: DerivedScales, rng: np.random.Generator) -> RandomWalkStep:
    dtheta, dt, axis = sample_random_walks(scales, rng, 1)
    return RandomWalkStep(float(dtheta[0]), float(dt[0]), axis[0])


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(data[:, 0], data[:, 1:5], data[:, 5:8])
