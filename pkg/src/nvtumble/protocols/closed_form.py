"""Closed-form and quadrature ensemble signals."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from ..errors import ValidationError
from ..physparams import DerivedScales, mixing_rate_closed_form
from ..signals import SignalTrace
from .struve import struve_Hm1


class SequenceKind(str, enum.Enum):
    RABI = "Rabi"
    RAMSEY = "Ramsey"
    SPIN_ECHO = "SpinEcho"
    CPMG = "CPMG"
    FREE_DECAY = "FreeDecay"


@dataclass(frozen=True)
class PulseSequence:
    """Pulse protocol; a nominal pi/2 pulse lasts ``a pi / (2 Omega_R)``."""

    kind: SequenceKind = SequenceKind.RAMSEY
    pulse_param_a: float = 1.0
    rabi_frequency_Omega_R: float = 1.0
    free_evolution_tau: float = 0.0
    n_pi_pulses: int = 0

    def validate(self) -> "PulseSequence":
        if not 0.5 <= self.pulse_param_a <= 2.0:
            raise ValidationError(f"pulse parameter a={self.pulse_param_a} outside [0.5, 2]")
        if not self.rabi_frequency_Omega_R > 0:
            raise ValidationError("Rabi frequency must be positive")
        if not self.free_evolution_tau >= 0:
            raise ValidationError("free evolution time must be non-negative")
        if self.n_pi_pulses < 0:
            raise ValidationError("number of pi pulses must be non-negative")
        return self


def pulse_angle(theta, a: float, nominal: float = math.pi / 2):
    """Rotation actually applied to an NV at polar angle theta by a nominal ``nominal`` pulse."""
    return a * nominal * np.sin(theta)


# -- Rabi ---------------------------------------------------------------------


def rabi_ensemble_value(x):
    """Orientation-averaged m=0 population after driving for ``x = Omega_R t``."""
    return 0.25 * (2.0 + math.pi * np.asarray(struve_Hm1(x)))


def rabi_ensemble_signal(Omega_R: float, times: Sequence[float], k_d: Optional[float] = None) -> SignalTrace:
    """Rabi nutation of an isotropic ensemble of static crystals.

    Both branches carry the same curve. The column ``static_pi_2`` is the
    single crystal at theta = pi/2, ``(1 + cos(Omega_R t)) / 2``.
    """
    if not Omega_R > 0:
        raise ValidationError("Omega_R must be positive")
    if k_d is not None and Omega_R / k_d < 100:
        warnings.warn(f"Omega_R/k_d = {Omega_R / k_d:.3g}: the crystal is not static over a Rabi cycle", stacklevel=2)
    t = np.asarray(times, dtype=float)
    if np.any(t < 0):
        raise ValidationError("times must be non-negative")
    s = rabi_ensemble_value(Omega_R * t)
    static = 0.5 * (1.0 + np.cos(Omega_R * t))
    return SignalTrace(
        t, s, s, time_unit="s", metadata={"protocol": "rabi", "Omega_R": Omega_R}, extra={"static_pi_2": static}
    )


def rabi_first_minimum() -> tuple[float, float]:
    """(Omega_R t, S_0) at the first minimum of the ensemble Rabi curve."""
    res = minimize_scalar(lambda x: float(rabi_ensemble_value(x)), bounds=(math.pi, 1.5 * math.pi), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), float(res.fun)


# -- Ramsey ---------------------------------------------------------------------


def ramsey_population(theta1, theta2, Phi, a: float = 1.0, branch: int = +1):
    """m=0 population after pulse, free evolution with relative phase Phi, and pulse.

    ``branch=+1`` undoes the first rotation, ``-1`` completes it.
    """
    if branch not in (1, -1):
        raise ValidationError("branch must be +1 or -1")
    T1 = pulse_angle(theta1, a)
    T2 = pulse_angle(theta2, a)
    return 0.5 * (1.0 + np.cos(T1) * np.cos(T2) + branch * np.sin(T1) * np.sin(T2) * np.cos(Phi))


def _theta_quadrature(n: int = 200):
    x, w = np.polynomial.legendre.leggauss(n)
    theta = 0.5 * math.pi * (x + 1.0)
    weight = 0.5 * math.pi * w * 0.5 * np.sin(theta)
    return theta, weight


def ramsey_asymptote(a: float = 1.0) -> float:
    """Long-time value of both branches, 1/2 (1 + <cos Theta>^2), for an isotropic ensemble."""
    theta, w = _theta_quadrature()
    return 0.5 * (1.0 + float(w @ np.cos(pulse_angle(theta, a))) ** 2)


def ramsey_midline(a: float = 1.0) -> float:
    """Phase-independent part of the Ramsey population averaged over orientations at equal angles."""
    theta, w = _theta_quadrature()
    return 0.5 * (1.0 + float(w @ np.cos(pulse_angle(theta, a)) ** 2))


# -- population mixing ----------------------------------------------------------


def rate_matrix(k: float) -> np.ndarray:
    """Generator of the ensemble rate equations for (P_+1, P_0, P_-1)."""
    return k * np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]])


def rate_equation_populations(k: float, times: Sequence[float], initial=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Populations (P_+1, P_0, P_-1) at each time, shape (len(times), 3)."""
    p0 = np.asarray(initial, dtype=float)
    if p0.shape != (3,) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-9:
        raise ValidationError("initial populations must be three non-negative numbers summing to 1")
    A = rate_matrix(k)
    return np.array([expm(A * t) @ p0 for t in np.asarray(times, dtype=float)])


def mixing_rate(scales: DerivedScales) -> float:
    return mixing_rate_closed_form(scales.k_d, scales.t_d, scales.zero_field_D)


def mixing_decay_signal(scales: DerivedScales, times: Sequence[float], initial=None) -> SignalTrace:
    """m=0 population 1/3 + 2/3 exp(-t/t_m) for an NV prepared in m=0.

    With ``initial`` populations given the rate equations are solved instead.
    """
    t = np.asarray(times, dtype=float)
    if initial is None:
        s = 1.0 / 3.0 + 2.0 / 3.0 * np.exp(-t / scales.t_m)
    else:
        s = rate_equation_populations(mixing_rate(scales), t, initial)[:, 1]
    return SignalTrace(t, s, s, metadata={"protocol": "mixing", "t_m": scales.t_m})


# -- spin echo with an AC field --------------------------------------------------


def tau_n_pi(n: int, B_dc: float, k_d: float, gamma: float) -> float:
    """Dephasing time of an n-pulse echo under a static field, cube root of (n+1)^2 / (4 k_d (gamma B)^2)."""
    if n < 0 or int(n) != n:
        raise ValidationError("n must be a non-negative integer")
    if not (B_dc > 0 and k_d > 0 and gamma > 0):
        raise ValidationError("B_dc, k_d and gamma must be positive")
    return ((n + 1) ** 2 / (4.0 * k_d) / (gamma * B_dc) ** 2) ** (1.0 / 3.0)


def echo_population(theta, phase_ac, a: float = 1.0, branch: int = +1, form: str = "printed"):
    """m=0 population after pi/2 - tau/2 - pi - tau/2 - pi/2 for a static crystal.

    ``form="printed"`` is the compact expression used for the figure shape;
    ``form="rotations"`` composes the three rotations exactly, so the perfect
    pulse limit gives full contrast; its ``+`` branch ends with a rotation
    in the same sense as the first pulse.
    """
    if branch not in (1, -1):
        raise ValidationError("branch must be +1 or -1")
    T1 = pulse_angle(theta, a)
    T2 = pulse_angle(theta, a, math.pi)
    c1, s1 = np.cos(T1), np.sin(T1)
    if form == "printed":
        c2 = np.cos(T2)
        return 0.5 + 0.5 * c1**2 * c2**2 + branch * 0.25 * s1**2 * (1.0 - c2**2) * np.cos(2.0 * phase_ac)
    if form == "rotations":
        ch, sh = np.cos(T2 / 2), np.sin(T2 / 2)
        if branch == -1:
            return ch**2 + (s1 * sh * np.sin(phase_ac)) ** 2
        return (ch * c1 - s1 * sh * np.cos(phase_ac)) ** 2
    raise ValidationError(f"unknown echo form {form!r}")


def echo_ac_signal(
    B_ac,
    tau: float,
    a: float = 1.0,
    n_theta: int = 200,
    n_field_phase: int = 64,
    gamma: float = 1.0,
    k_d: Optional[float] = None,
    form: str = "printed",
) -> tuple[np.ndarray, np.ndarray]:
    """Echo branches averaged over orientation (sin/2 weight) and the AC field's phase.

    The phase before the pi pulse is ``(tau/2) gamma B_ac cos(theta) cos(Phi_field)``.
    Accepts a scalar or an array of field amplitudes.
    """
    if k_d is not None and tau * k_d > 0.1:
        warnings.warn(f"tau*k_d = {tau * k_d:.3g}: the crystal rotates during the echo", stacklevel=2)
    theta, w = _theta_quadrature(n_theta)
    phases = 2.0 * math.pi * np.arange(n_field_phase) / n_field_phase
    B = np.atleast_1d(np.asarray(B_ac, dtype=float))
    amp = 0.5 * tau * gamma * B[:, None, None] * np.cos(theta)[None, :, None] * np.cos(phases)[None, None, :]
    out = []
    for branch in (+1, -1):
        p = echo_population(theta[None, :, None], amp, a, branch, form).mean(axis=-1)
        out.append(p @ w)
    plus, minus = out
    if np.ndim(B_ac) == 0:
        return float(plus[0]), float(minus[0])
    return plus, minus
