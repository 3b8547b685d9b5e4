"""NV ground-state triplet in a rotating crystal.

State vectors are amplitudes on the fixed lab basis ordered (m=+1, m=0, m=-1).
Hamiltonians are expressed in rad/s (energies divided by hbar).

Gauge and sign conventions
--------------------------
Eigenvectors follow the gauge in which the m=0 state along ``n`` is
``(-(n_x - i n_y)/sqrt2, n_z, (n_x + i n_y)/sqrt2)``; it is smooth over the
whole sphere, while the m=+-1 states carry ``exp(-+i phi)`` factors that are
singular at the poles. With this gauge the m=+1 amplitude picks up
``+cos(theta) dphi`` relative to m=0 under adiabatic transport, which is the
bookkeeping used by :func:`geometric_phase_increment`. Conjugating the gauge
flips that sign; only ``cos(Phi)`` reaches any measured signal, so the choice
is unobservable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import StepSizeError, ValidationError
from .rotor import Trajectory, axis_angles, nv_axis

SQRT2 = math.sqrt(2.0)

SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
S_PLUS = SQRT2 * np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
S_MINUS = S_PLUS.conj().T
SX = 0.5 * (S_PLUS + S_MINUS)
SY = -0.5j * (S_PLUS - S_MINUS)
SPIN = np.stack([SX, SY, SZ])

Field = Union[None, Sequence[float], np.ndarray, Callable[[float], np.ndarray]]


@dataclass
class SpinState:
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(3)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def check_normalized(self, tol: float = 1e-9) -> "SpinState":
        if abs(self.norm - 1.0) > tol:
            raise ValidationError(f"spin state norm {self.norm} differs from 1")
        return self


@dataclass
class EigenFrame:
    theta: float
    phi: float
    eigenvectors: np.ndarray  # rows: psi^(+1), psi^(0), psi^(-1)

    @property
    def plus(self) -> np.ndarray:
        return self.eigenvectors[0]

    @property
    def zero(self) -> np.ndarray:
        return self.eigenvectors[1]

    @property
    def minus(self) -> np.ndarray:
        return self.eigenvectors[2]


@dataclass
class PhaseLedger:
    geometric_phase: float = 0.0
    dynamic_phase: float = 0.0
    unwrap_count: int = 0

    @property
    def total(self) -> float:
        return self.geometric_phase + self.dynamic_phase


def zero_field_hamiltonian(theta: float, phi: float, D: float) -> np.ndarray:
    """D S_z'^2 written on the fixed z basis, for an NV axis at (theta, phi)."""
    c, s = math.cos(theta), math.sin(theta)
    e1, e2 = np.exp(-1j * phi), np.exp(-2j * phi)
    corner = c * c + 0.5 * s * s
    off = c * s / SQRT2
    return D * np.array(
        [
            [corner, e1 * off, e2 * s * s / 2],
            [np.conj(e1) * off, s * s, -e1 * off],
            [np.conj(e2) * s * s / 2, -np.conj(e1) * off, corner],
        ],
        dtype=complex,
    )


def eigenframe(theta: float, phi: float, gauge: Optional[Callable[[float, float], Sequence[float]]] = None) -> EigenFrame:
    """Eigenvectors of the zero-field Hamiltonian in the lab-referenced gauge.

    ``gauge`` optionally returns three extra phases (one per sublevel) to
    multiply onto the vectors; used to check that observables do not depend
    on the gauge.
    """
    c2, s2 = math.cos(theta / 2) ** 2, math.sin(theta / 2) ** 2
    s = math.sin(theta)
    em, ep = np.exp(-1j * phi), np.exp(1j * phi)
    vecs = np.array(
        [
            [em * c2, s / SQRT2, ep * s2],
            [-em * s / SQRT2, math.cos(theta), ep * s / SQRT2],
            [em * s2, -s / SQRT2, ep * c2],
        ],
        dtype=complex,
    )
    if gauge is not None:
        vecs = vecs * np.exp(1j * np.asarray(gauge(theta, phi), dtype=float))[:, None]
    return EigenFrame(theta, phi, vecs)


def m0_states(n: np.ndarray) -> np.ndarray:
    """m=0 eigenvector(s) for NV axis direction(s) ``n``; same gauge as :func:`eigenframe`."""
    n = np.asarray(n, dtype=float)
    return np.stack(
        [-(n[..., 0] - 1j * n[..., 1]) / SQRT2, n[..., 2] + 0j, (n[..., 0] + 1j * n[..., 1]) / SQRT2], axis=-1
    )


def plus_states(n: np.ndarray) -> np.ndarray:
    """m=+1 eigenvector(s) for axis direction(s) ``n``, same gauge as :func:`eigenframe`."""
    n = np.asarray(n, dtype=float)
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    rho = np.hypot(nx, ny)
    e = np.where(rho > 0, (nx - 1j * ny) / np.where(rho > 0, rho, 1.0), 1.0)
    return np.stack([e * 0.5 * (1 + nz), rho / SQRT2 + 0j, np.conj(e) * 0.5 * (1 - nz)], axis=-1)


def frames_along(trajectory: Trajectory, pole_tol: float = 1e-6) -> list[EigenFrame]:
    """Eigenframes at every trajectory sample, made phase-continuous near the poles.

    Within ``pole_tol`` of theta = 0 or pi the closed-form gauge is ill-defined,
    so each vector there is re-phased to maximise overlap with its predecessor.
    """
    theta, phi = axis_angles(trajectory.axes())
    frames = []
    prev = None
    for th, ph in zip(theta, phi):
        f = eigenframe(float(th), float(ph))
        if prev is not None and (th < pole_tol or math.pi - th < pole_tol):
            overlaps = np.einsum("ij,ij->i", prev.eigenvectors.conj(), f.eigenvectors)
            f.eigenvectors = f.eigenvectors * np.exp(-1j * np.angle(overlaps))[:, None]
        frames.append(f)
        prev = f
    return frames


def secular_phase_rate(theta: float, phi: float, B, gamma: float, D: Optional[float] = None) -> float:
    """gamma * (z' . B): rate of the m=+1 phase relative to m=0 from the field.

    Only the projection of the field on the NV axis survives the secular
    approximation, which needs ``gamma |B| << D``; a warning is raised when
    ``D`` is given and the ratio exceeds 0.1.
    """
    B = np.asarray(B, dtype=float)
    n = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    if D is not None and gamma * np.linalg.norm(B) > 0.1 * D:
        warnings.warn("secular approximation questionable: gamma|B| is not << D", RuntimeWarning, stacklevel=2)
    return float(gamma * n @ B)


def geometric_phase_increment(theta: float, phi: float, d_phi: float) -> float:
    """cos(theta) * d_phi, the geometric phase picked up by a small azimuthal step."""
    if abs(d_phi) >= math.pi:
        raise ValidationError(f"|d_phi| = {abs(d_phi):.3f} >= pi: step too large to unwrap")
    return math.cos(theta) * d_phi


def wrap_angle(x):
    """Map to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2.0 * np.pi) - np.pi


def adiabatic_populations(state: SpinState, frame: EigenFrame) -> np.ndarray:
    """Populations of (psi^(+1), psi^(0), psi^(-1)) for the given frame."""
    amps = frame.eigenvectors.conj() @ state.amplitudes
    return np.abs(amps) ** 2


def relative_phase(state: SpinState, frame: EigenFrame) -> float:
    """arg<psi^(+1)|state> - arg<psi^(0)|state>, wrapped to [-pi, pi)."""
    amps = frame.eigenvectors.conj() @ state.amplitudes
    return float(wrap_angle(np.angle(amps[0]) - np.angle(amps[1])))


# -- propagators -------------------------------------------------------------------


def zeeman_matrix(gamma_B: np.ndarray) -> np.ndarray:
    """gamma B . S for one or many field vectors (already multiplied by gamma)."""
    return np.tensordot(np.asarray(gamma_B, dtype=float), SPIN, axes=([-1], [0]))


def propagate_zero_field(psi: np.ndarray, v_mid: np.ndarray, phase: complex) -> np.ndarray:
    """exp(-i D dt (1 - |v><v|)) psi, with ``phase = exp(-i D dt)``.

    Because D S_z'^2 = D (1 - |psi0><psi0|), the midpoint exponential is exact
    and costs a single overlap per state. Works batched over leading axes.
    """
    overlap = np.sum(v_mid.conj() * psi, axis=-1, keepdims=True)
    return phase * psi + (1.0 - phase) * overlap * v_mid


def propagate_with_field(psi: np.ndarray, v_mid: np.ndarray, D: float, gamma_B: np.ndarray, dt: float) -> np.ndarray:
    """Midpoint exponential of D(1 - |v><v|) + gamma B.S via a Hermitian eigensolve (batched)."""
    h = D * (np.eye(3) - v_mid[..., :, None] * v_mid.conj()[..., None, :]) + zeeman_matrix(gamma_B)
    w, V = np.linalg.eigh(h)
    coeff = np.einsum("...ji,...j->...i", V.conj(), psi)
    return np.einsum("...ij,...j->...i", V, np.exp(-1j * w * dt) * coeff)


def _field_at(field: Field, t: float) -> Optional[np.ndarray]:
    if field is None:
        return None
    if callable(field):
        return np.asarray(field(t), dtype=float)
    B = np.asarray(field, dtype=float)
    return None if not np.any(B) else B


def schrodinger_history(
    state: SpinState,
    trajectory: Trajectory,
    D: float,
    field: Field = None,
    gamma: float = 0.0,
    dt_max: Optional[float] = None,
) -> np.ndarray:
    """Lab-frame spin amplitudes at every trajectory sample.

    The orientation is slerp-interpolated inside each sample interval and every
    sub-step applies the exact exponential of the midpoint Hamiltonian
    ``D S_z'^2 + gamma B . S`` (no secular approximation), so the evolution is
    unitary to rounding.
    """
    guard = 1.0 / (20.0 * D)
    dt_max = guard if dt_max is None else dt_max
    spacing = np.diff(trajectory.times)
    if dt_max > guard * (1 + 1e-9):
        raise StepSizeError(f"dt_max={dt_max:.3e} exceeds 1/(20 D) = {guard:.3e}")
    if spacing.size and dt_max > spacing.min() * (1 + 1e-9):
        raise StepSizeError("dt_max exceeds the trajectory sample spacing")
    psi = state.amplitudes.copy()
    out = np.empty((len(trajectory), 3), dtype=complex)
    out[0] = psi
    times, qs = trajectory.times, trajectory.orientations
    for i in range(len(trajectory) - 1):
        interval = times[i + 1] - times[i]
        nsub = max(1, math.ceil(interval / dt_max * (1 - 1e-12)))
        dt = interval / nsub
        phase = np.exp(-1j * D * dt)
        q0, q1 = qs[i], qs[i + 1]
        dot = float(q0 @ q1)
        if dot < 0:
            q1, dot = -q1, -dot
        omega = math.acos(min(dot, 1.0))
        s = math.sin(omega)
        for k in range(nsub):
            f = (k + 0.5) / nsub
            if s < 1e-12:
                qm = q0 + f * (q1 - q0)
                qm = qm / np.linalg.norm(qm)
            else:
                qm = (math.sin((1 - f) * omega) * q0 + math.sin(f * omega) * q1) / s
            v = m0_states(nv_axis(qm))
            B = _field_at(field, times[i] + f * interval)
            if B is None:
                psi = propagate_zero_field(psi, v, phase)
            else:
                psi = propagate_with_field(psi, v, D, gamma * B, dt)
        out[i + 1] = psi
    return out


def schrodinger_evolve(
    state: SpinState,
    trajectory: Trajectory,
    D: float,
    field: Field = None,
    gamma: float = 0.0,
    dt_max: Optional[float] = None,
) -> SpinState:
    """Final spin state after following ``trajectory``; see :func:`schrodinger_history`."""
    return SpinState(schrodinger_history(state, trajectory, D, field, gamma, dt_max)[-1])


def adiabatic_phase_ledger(trajectory: Trajectory, field: Field = None, gamma: float = 0.0) -> list[PhaseLedger]:
    """Adiabatic phase bookkeeping along a sampled trajectory.

    Geometric increments use the midpoint polar angle and the wrapped
    azimuthal step; the dynamical phase integrates gamma z'.B with the
    midpoint rule. Sample spacing must keep every azimuthal step below pi.
    """
    theta, phi = axis_angles(trajectory.axes())
    n = trajectory.axes()
    ledger = PhaseLedger()
    out = [PhaseLedger()]
    for i in range(1, len(trajectory)):
        dphi = float(wrap_angle(phi[i] - phi[i - 1]))
        cos_mid = 0.5 * (n[i, 2] + n[i - 1, 2])
        geo = geometric_phase_increment(math.acos(max(-1.0, min(1.0, cos_mid))), 0.0, dphi)
        dyn = 0.0
        t0, t1 = trajectory.times[i - 1], trajectory.times[i]
        B = _field_at(field, 0.5 * (t0 + t1))
        if B is not None:
            n_mid = 0.5 * (n[i] + n[i - 1])
            dyn = gamma * float(n_mid @ B) * (t1 - t0)
        ledger = PhaseLedger(ledger.geometric_phase + geo, ledger.dynamic_phase + dyn, ledger.unwrap_count)
        out.append(ledger)
    return out


def unwrap_relative_phase(history: np.ndarray, trajectory: Trajectory, D: float) -> tuple[np.ndarray, int]:
    """Relative m=+1/m=0 phase along an evolution with the D t dynamical part removed.

    Returns the continuous phase series and the number of 2 pi corrections
    applied while unwrapping.
    """
    frames = frames_along(trajectory)
    raw = np.array([relative_phase(SpinState(psi), f) for psi, f in zip(history, frames)])
    raw = raw + D * trajectory.times
    unwrapped = np.unwrap(raw)
    jumps = int(np.sum(np.abs(np.diff(np.round((unwrapped - raw) / (2 * np.pi))))))
    return unwrapped - unwrapped[0], jumps
