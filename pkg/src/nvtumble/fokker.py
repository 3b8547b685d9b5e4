"""Fokker-Planck solvers for the joint law of NV orientation and accumulated phase.

Time is measured in units of 1/k_d throughout. Fields enter as
``gamma * B / k_d``; pass ``gamma=1, k_d=1`` to give fields directly in
units of k_d/gamma.

Discretization
--------------
* theta: cell-centred finite volumes on (0, pi), no nodes on the poles.
  The density ``p`` is stored per unit theta (not per unit solid angle), so
  the isotropic stationary state is ``p ∝ sin(theta)``. The flux between
  cells is ``sin(theta_f) d/dtheta (p / sin(theta))``; it vanishes at both
  poles, which makes the scheme conservative and keeps ``sin(theta)`` an
  exact discrete steady state.
* Phi (and phi): Fourier modes. Mode ``m`` of Phi only sees a diagonal
  ``-m^2 cot^2(theta)`` term, so in the 2-D problems each mode is an
  independent symmetric eigenproblem and is propagated exactly in time.
* 3-D static-field problem: modes ``n`` of phi couple through the
  ``B_x sin(theta) cos(phi)`` drift. Each Phi-mode is stepped with BDF2
  (backward Euler start) and a sparse LU factorization.

Densities are kept as Fourier coefficients ``c_m(theta)`` (and
``c_{n,m}``); ``p = (2 pi)^-1 sum_m c_m e^{i m Phi}``. Reductions use the
coefficients directly. Grid values may undershoot zero slightly next to
the initial delta (Gibbs ringing of the truncated series).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, StepSizeError, ValidationError
from .signals import SignalTrace, format_float


@dataclass(frozen=True)
class SolverConfig:
    n_theta: int = 128
    n_phi: int = 64
    n_Phi: int = 64
    dt: float = 1e-3

    def validate(self) -> "SolverConfig":
        for name in ("n_theta", "n_phi", "n_Phi"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 4 and v % 2 == 0):
                raise ValidationError(f"{name} must be an even integer >= 4, got {v!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        return self

    def refined(self) -> "SolverConfig":
        return SolverConfig(2 * self.n_theta, 2 * self.n_phi, 2 * self.n_Phi, self.dt / 2)


@dataclass(frozen=True)
class FieldConfigDC:
    """Static field; ``B_y = 0`` without loss of generality."""

    B_z: float = 0.0
    B_x: float = 0.0

    def validate(self) -> "FieldConfigDC":
        if not (math.isfinite(self.B_z) and math.isfinite(self.B_x)):
            raise ValidationError("field components must be finite")
        return self

    def reduced(self, gamma: float, k_d: float) -> tuple[float, float]:
        return gamma * self.B_z / k_d, gamma * self.B_x / k_d


@dataclass(frozen=True)
class FieldConfigFC:
    """Rapidly fluctuating field with rms ``B_fc_rms`` and correlation time ``t_c``."""

    B_fc_rms: float
    t_c: float

    def validate(self, gamma: float = 1.0, k_d: float = 1.0) -> "FieldConfigFC":
        if not (self.B_fc_rms >= 0 and math.isfinite(self.B_fc_rms)):
            raise ValidationError("B_fc_rms must be non-negative")
        if not (self.t_c > 0 and math.isfinite(self.t_c)):
            raise ValidationError("t_c must be positive")
        if self.t_c * k_d > 0.1:
            warnings.warn(f"t_c*k_d = {self.t_c * k_d:.3g} is not small; the motional-narrowing form may fail", stacklevel=2)
        if gamma * self.B_fc_rms * self.t_c > 0.1:
            warnings.warn(
                f"gamma*B*t_c = {gamma * self.B_fc_rms * self.t_c:.3g} is not small; the motional-narrowing form may fail",
                stacklevel=2,
            )
        return self

    def phase_diffusion(self, gamma: float = 1.0, k_d: float = 1.0) -> float:
        """Extra Phi-diffusion coefficient gamma^2 <B^2> t_c / (6 k_d), in units of k_d."""
        return (gamma * self.B_fc_rms) ** 2 * self.t_c / (6.0 * k_d)


# ---------------------------------------------------------------- theta grid


@dataclass(frozen=True)
class ThetaGrid:
    n: int

    @property
    def h(self) -> float:
        return math.pi / self.n

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def index_of(self, theta: float) -> int:
        if not (0.0 <= theta <= math.pi):
            raise ValidationError(f"theta must lie in [0, pi], got {theta!r}")
        return int(min(self.n - 1, math.floor(theta / self.h)))

    def stationary(self) -> np.ndarray:
        s = np.sin(self.nodes)
        return s / (s.sum() * self.h)


@lru_cache(maxsize=16)
def _stiffness(n: int) -> np.ndarray:
    """Symmetric M with (L p) = M (p / sin theta); L is the theta operator."""
    h = math.pi / n
    faces = np.sin(np.arange(1, n) * h) / h**2
    M = np.zeros((n, n))
    idx = np.arange(n - 1)
    M[idx, idx] -= faces
    M[idx + 1, idx + 1] -= faces
    M[idx, idx + 1] += faces
    M[idx + 1, idx] += faces
    return M


def theta_operator(n: int) -> np.ndarray:
    """Dense matrix of the discrete theta diffusion operator acting on p."""
    s = np.sin(ThetaGrid(n).nodes)
    return _stiffness(n) / s[None, :]


@lru_cache(maxsize=256)
def _mode_eigensystem(n: int, m: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    th = ThetaGrid(n).nodes
    s = np.sin(th)
    rs = np.sqrt(s)
    B = _stiffness(n) / rs[:, None] / rs[None, :]
    if m:
        B = B - np.diag(m * m * ((np.cos(th) / s) ** 2 + beta))
    w, V = np.linalg.eigh(B)
    return w, V


def propagate_mode(n: int, m: int, t: float, c0: np.ndarray, beta: float = 0.0) -> np.ndarray:
    """exp(t A_m) c0 for the 2-D mode operator A_m = L - m^2 (cot^2 theta + beta)."""
    w, V = _mode_eigensystem(n, int(m), float(beta))
    rs = np.sqrt(np.sin(ThetaGrid(n).nodes))
    c0 = np.asarray(c0, dtype=float)
    shape = (-1,) + (1,) * (c0.ndim - 1)
    x = V.T @ (c0 / rs.reshape(shape))
    x *= np.exp(w * t).reshape(shape)
    return rs.reshape(shape) * (V @ x)


# ------------------------------------------------------------ distribution


@dataclass
class DistributionGrid:
    """Joint density of (theta, [phi,] Phi) stored as Fourier coefficients.

    ``modes`` has shape ``[family,] n_theta, n_Phi//2 + 1`` for ``dims=2``
    and ``[family,] n_theta, 2K+1, n_Phi//2 + 1`` for ``dims=3`` with phi
    modes ordered ``-K..K``. A family carries a leading axis over the
    initial cell, ``theta1`` is then the array of all cell centres.
    ``n_Phi_modes`` below ``n_Phi//2 + 1`` marks a truncated family that
    only retains the low Phi modes used for envelopes.
    """

    dims: int
    theta_nodes: np.ndarray
    Phi_nodes: np.ndarray
    modes: np.ndarray
    time: float
    theta1: object
    phi_nodes: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def is_family(self) -> bool:
        return np.ndim(self.theta1) > 0

    @property
    def h_theta(self) -> float:
        return math.pi / self.theta_nodes.size

    def _zero_mode(self) -> np.ndarray:
        c = self.modes[..., self.modes.shape[-2] // 2, :] if self.dims == 3 else self.modes
        return c[..., 0].real

    def theta_marginal(self) -> np.ndarray:
        """Density in theta with phi and Phi integrated out."""
        return self._zero_mode()

    def total_probability(self) -> np.ndarray | float:
        tot = self._zero_mode().sum(axis=-1) * self.h_theta
        return float(tot) if np.ndim(tot) == 0 else tot

    def mean_phase(self) -> np.ndarray | float:
        """Circular mean of Phi; zero whenever the first Phi mode is real and positive."""
        c = self.modes[..., self.modes.shape[-2] // 2, :] if self.dims == 3 else self.modes
        z = c[..., 1].sum(axis=-1)
        ang = np.angle(z)
        return float(ang) if np.ndim(ang) == 0 else ang

    def marginalize_phi(self) -> "DistributionGrid":
        if self.dims == 2:
            return self
        c = self.modes[..., self.modes.shape[-2] // 2, :]
        return DistributionGrid(2, self.theta_nodes, self.Phi_nodes, c, self.time, self.theta1, metadata=dict(self.metadata))

    @property
    def values(self) -> np.ndarray:
        """Density on the (theta, [phi,] Phi) grid, trailing axes in that order."""
        M = self.Phi_nodes.size
        full = np.zeros(self.modes.shape[:-1] + (M // 2 + 1,), dtype=complex)
        full[..., : self.modes.shape[-1]] = self.modes
        if self.dims == 2:
            return np.fft.irfft(full, n=M, axis=-1) * (M / (2 * math.pi))
        Nphi = self.phi_nodes.size
        K = (self.modes.shape[-2] - 1) // 2
        spec = np.zeros(full.shape[:-2] + (Nphi, full.shape[-1]), dtype=complex)
        for j, n in enumerate(range(-K, K + 1)):
            spec[..., n % Nphi, :] += full[..., j, :]
        g = np.fft.ifft(spec, axis=-2) * Nphi
        return np.fft.irfft(g, n=M, axis=-1) * (M / (2 * math.pi) ** 2)

    def cell_volume(self) -> float:
        vol = self.h_theta * (2 * math.pi / self.Phi_nodes.size)
        if self.dims == 3:
            vol *= 2 * math.pi / self.phi_nodes.size
        return vol

    def to_csv(self, path) -> None:
        """Snapshot as ``theta,phi,Phi,p`` rows (``theta,Phi,p`` for 2-D)."""
        if self.is_family:
            raise ValidationError("snapshots are written for a single initial angle")
        vals = self.values
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.dims == 2:
                w.writerow(["theta", "Phi", "p"])
                for i, th in enumerate(self.theta_nodes):
                    for k, ph in enumerate(self.Phi_nodes):
                        w.writerow([format_float(th), format_float(ph), format_float(vals[i, k])])
            else:
                w.writerow(["theta", "phi", "Phi", "p"])
                for i, th in enumerate(self.theta_nodes):
                    for j, ph in enumerate(self.phi_nodes):
                        for k, PH in enumerate(self.Phi_nodes):
                            w.writerow([format_float(x) for x in (th, ph, PH, vals[i, j, k])])


def l1_distance(a: DistributionGrid, b: DistributionGrid) -> float:
    if a.values.shape != b.values.shape:
        raise ValidationError("distributions live on different grids")
    return float(np.abs(a.values - b.values).sum() * a.cell_volume())


def _periodic_nodes(n: int) -> np.ndarray:
    return np.arange(n) * (2 * math.pi / n)


def _initial(grid: ThetaGrid, theta1) -> tuple[np.ndarray, object]:
    """Nearest-cell delta (or one per cell for a family), as a density in theta."""
    if theta1 is None:
        return np.eye(grid.n) / grid.h, grid.nodes.copy()
    c0 = np.zeros(grid.n)
    c0[grid.index_of(float(theta1))] = 1.0 / grid.h
    return c0, float(theta1)


def _check_time(t_end: float) -> None:
    if not (t_end >= 0 and math.isfinite(t_end)):
        raise ValidationError(f"t_end must be a non-negative finite time, got {t_end!r}")


def _evolve_2d(theta1, t_end, config, beta, phase_modes) -> DistributionGrid:
    config = (config or SolverConfig()).validate()
    _check_time(t_end)
    grid = ThetaGrid(config.n_theta)
    c0, th1 = _initial(grid, theta1)
    n_modes = config.n_Phi // 2 + 1 if phase_modes is None else min(phase_modes + 1, config.n_Phi // 2 + 1)
    cols = [propagate_mode(grid.n, m, t_end, c0, beta) for m in range(n_modes)]
    modes = np.stack(cols, axis=-1)
    if c0.ndim == 2:
        modes = np.moveaxis(modes, 1, 0)  # (family, theta, m)
    return DistributionGrid(2, grid.nodes, _periodic_nodes(config.n_Phi), modes, float(t_end), th1)


def evolve_fp_geometric(
    init_theta1: Optional[float],
    t_end: float,
    config: Optional[SolverConfig] = None,
    phase_modes: Optional[int] = None,
) -> DistributionGrid:
    """Density at ``t_end`` from delta(Phi) delta(theta - theta1), no field.

    ``init_theta1=None`` returns the whole family of initial cells.
    """
    return _evolve_2d(init_theta1, t_end, config, 0.0, phase_modes)


def evolve_fp_fc(
    init_theta1: Optional[float],
    field: FieldConfigFC,
    t_end: float,
    config: Optional[SolverConfig] = None,
    gamma: float = 1.0,
    k_d: float = 1.0,
    phase_modes: Optional[int] = None,
) -> DistributionGrid:
    """As :func:`evolve_fp_geometric` with the fluctuating-field Phi diffusion added."""
    field.validate(gamma, k_d)
    dist = _evolve_2d(init_theta1, t_end, config, field.phase_diffusion(gamma, k_d), phase_modes)
    dist.metadata["beta"] = field.phase_diffusion(gamma, k_d)
    return dist


# ------------------------------------------------------------ 3-D, static field


def _dc_operator(n_theta: int, K: int, m: int, bz: float, bx: float) -> sp.csc_matrix:
    """Sparse generator for Phi-mode m, unknowns ordered theta-major (i, n)."""
    grid = ThetaGrid(n_theta)
    th = grid.nodes
    s, c = np.sin(th), np.cos(th)
    ns = np.arange(-K, K + 1)
    Nn = ns.size
    L = sp.csr_matrix(theta_operator(n_theta))
    A = sp.kron(L, sp.identity(Nn), format="csr").astype(complex)
    diag = -((ns[None, :] + m * c[:, None]) ** 2) / s[:, None] ** 2 - 1j * m * bz * c[:, None]
    A = A + sp.diags(diag.ravel())
    if m and bx:
        shift = sp.diags([np.ones(Nn - 1), np.ones(Nn - 1)], [-1, 1])
        A = A + sp.kron(sp.diags(-0.5j * m * bx * s), shift)
    return A.tocsc()


def _check_dc_step(dt: float, m_max: int, bz: float, bx: float) -> None:
    if dt > 0.05 or dt * m_max * math.hypot(bz, bx) > 0.1:
        raise StepSizeError(
            f"dt={dt:g} too large for BDF2 accuracy (need dt <= 0.05 and dt*m*|b| <= 0.1)"
        )


def _bdf2_history(A: sp.csc_matrix, y0: np.ndarray, dt: float, n_steps: int, record_every: int) -> list[np.ndarray]:
    """BDF2 with a backward-Euler first step; returns states every ``record_every`` steps."""
    I = sp.identity(A.shape[0], dtype=complex, format="csc")
    out = [y0.copy()]
    if n_steps == 0:
        return out
    be = splu((I - dt * A).tocsc())
    bdf = splu((I - (2.0 / 3.0) * dt * A).tocsc())
    y_prev, y = y0, be.solve(y0)
    if record_every == 1:
        out.append(y)
    for k in range(2, n_steps + 1):
        y_prev, y = y, bdf.solve((4.0 * y - y_prev) / 3.0)
        if k % record_every == 0:
            out.append(y)
    return out


def _dc_steps(t_end: float, dt: float) -> tuple[int, float]:
    n = int(math.ceil(t_end / dt - 1e-9))
    return n, (t_end / n if n else dt)


def evolve_fp_dc(
    init_theta1: Optional[float],
    field: FieldConfigDC,
    t_end: float,
    config: Optional[SolverConfig] = None,
    gamma: float = 1.0,
    k_d: float = 1.0,
    phase_modes: Optional[int] = None,
) -> DistributionGrid:
    """3-D density (theta, phi, Phi) under a static field, initial phi uniform.

    Families (``init_theta1=None``) keep Phi modes 0 and 1 unless
    ``phase_modes`` says otherwise.
    """
    config = (config or SolverConfig()).validate()
    field.validate()
    _check_time(t_end)
    bz, bx = field.reduced(gamma, k_d)
    grid = ThetaGrid(config.n_theta)
    K = config.n_phi // 2
    Nn = 2 * K + 1
    c0, th1 = _initial(grid, init_theta1)
    if phase_modes is None:
        phase_modes = 1 if c0.ndim == 2 else config.n_Phi // 2
    n_modes = min(phase_modes, config.n_Phi // 2) + 1
    n_steps, dt = _dc_steps(t_end, config.dt)
    _check_dc_step(dt, n_modes - 1, bz, bx)
    fam = c0.reshape(grid.n, -1)
    out = np.zeros((fam.shape[1], grid.n, Nn, n_modes), dtype=complex)
    # m = 0 has no drift and no n-coupling: the n = 0 block is the plain theta problem
    out[:, :, K, 0] = propagate_mode(grid.n, 0, t_end, fam).T
    for m in range(1, n_modes):
        A = _dc_operator(grid.n, K, m, bz, bx)
        y0 = np.zeros((grid.n, Nn, fam.shape[1]), dtype=complex)
        y0[:, K, :] = fam
        y = _bdf2_history(A, y0.reshape(grid.n * Nn, -1), dt, n_steps, max(n_steps, 1))[-1]
        out[:, :, :, m] = np.moveaxis(y.reshape(grid.n, Nn, -1), -1, 0)
    modes = out if c0.ndim == 2 else out[0]
    return DistributionGrid(
        3, grid.nodes, _periodic_nodes(config.n_Phi), modes, float(t_end), th1, phi_nodes=_periodic_nodes(config.n_phi)
    )


# ------------------------------------------------------------------ envelopes


def pulse_angles(theta: np.ndarray, a: float) -> np.ndarray:
    return a * (math.pi / 2) * np.sin(theta)


def _initial_weights(grid: ThetaGrid) -> np.ndarray:
    s = np.sin(grid.nodes)
    return s / s.sum()


def envelope_from_distribution(dist: DistributionGrid, a: float) -> tuple[float, float]:
    """Ramsey envelope branches (S_plus, S_minus) from a propagated density.

    For a family the initial angle is averaged with weight sin(theta1); a
    single-angle distribution gives the envelope conditional on theta1.
    """
    th = dist.theta_nodes
    h = dist.h_theta
    c = dist.modes[..., dist.modes.shape[-2] // 2, :] if dist.dims == 3 else dist.modes
    c0, c1 = c[..., 0].real, c[..., 1].real
    T2 = pulse_angles(th, a)
    if dist.is_family:
        T1 = pulse_angles(np.asarray(dist.theta1), a)
        w = _initial_weights(ThetaGrid(th.size))
    else:
        T1 = np.array([pulse_angles(np.float64(dist.theta1), a)])
        w = np.ones(1)
        c0, c1 = c0[None, :], c1[None, :]
    base = 0.5 * h * (c0.sum(axis=1) + np.cos(T1) * (c0 @ np.cos(T2)))
    amp = 0.5 * h * np.sin(T1) * (c1 @ np.sin(T2))
    base, amp = float(w @ base), float(w @ amp)
    return base + amp, base - amp


def envelope_asymptote(a: float, n_theta: int) -> float:
    """Long-time limit of S_plus and S_minus on the discrete grid."""
    grid = ThetaGrid(n_theta)
    w = _initial_weights(grid)
    return 0.5 * (1.0 + float(w @ np.cos(pulse_angles(grid.nodes, a))) ** 2)


def _uniform_step(times: np.ndarray) -> float:
    if times[0] != 0:
        raise ValidationError("static-field envelopes need output times starting at 0")
    if times.size == 1:
        return 0.0
    d = np.diff(times)
    if not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
        raise ValidationError("static-field envelopes need uniformly spaced output times")
    return float(d[0])


def _envelope_vectors(kind, times, a, field, config, gamma, k_d):
    grid = ThetaGrid(config.n_theta)
    w = _initial_weights(grid)
    T = pulse_angles(grid.nodes, a)
    v0 = w * np.cos(T) / grid.h
    v1 = w * np.sin(T) / grid.h
    u0 = np.stack([propagate_mode(grid.n, 0, t, v0) for t in times])
    if kind in ("geometric", "fc"):
        beta = 0.0 if kind == "geometric" else field.phase_diffusion(gamma, k_d)
        u1 = np.stack([propagate_mode(grid.n, 1, t, v1, beta) for t in times])
        return grid, T, u0, u1
    bz, bx = field.reduced(gamma, k_d)
    step = _uniform_step(times)
    K = config.n_phi // 2
    Nn = 2 * K + 1
    if times.size == 1:
        return grid, T, u0, v1[None, :].astype(complex)
    per = max(1, int(math.ceil(step / config.dt - 1e-9)))
    dt = step / per
    _check_dc_step(dt, 1, bz, bx)
    A = _dc_operator(grid.n, K, 1, bz, bx)
    y0 = np.zeros((grid.n, Nn), dtype=complex)
    y0[:, K] = v1
    hist = _bdf2_history(A, y0.ravel(), dt, per * (times.size - 1), per)
    u1 = np.stack([y.reshape(grid.n, Nn)[:, K] for y in hist])
    return grid, T, u0, u1


def fp_envelope(
    kind: str,
    times: Sequence[float],
    a: float = 1.0,
    field=None,
    config: Optional[SolverConfig] = None,
    gamma: float = 1.0,
    k_d: float = 1.0,
    refinement_check: bool = False,
    refinement_tol: float = 1e-3,
) -> SignalTrace:
    """Ramsey envelope S_plus/S_minus against time (units of 1/k_d).

    ``kind`` is ``"geometric"``, ``"fc"`` (field: FieldConfigFC) or ``"dc"``
    (field: FieldConfigDC, uniformly spaced times from 0). Linearity lets
    the sin(theta1)-weighted sum over initial angles be propagated as one
    vector per Phi mode instead of one solve per initial cell.
    """
    config = (config or SolverConfig()).validate()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(times < 0):
        raise ValidationError("times must be a non-empty list of non-negative values")
    if kind == "fc":
        field.validate(gamma, k_d)
    elif kind == "dc":
        field = (field or FieldConfigDC()).validate()
    elif kind != "geometric":
        raise ValidationError(f"unknown envelope kind {kind!r}")
    grid, T, u0, u1 = _envelope_vectors(kind, times, a, field, config, gamma, k_d)
    base = 0.5 * (1.0 + grid.h * (u0 @ np.cos(T)))
    amp = 0.5 * grid.h * (u1.real @ np.sin(T))
    meta = {
        "kind": kind,
        "a": a,
        "n_theta": config.n_theta,
        "n_phi": config.n_phi,
        "n_Phi": config.n_Phi,
        "dt": config.dt,
        "S_inf": envelope_asymptote(a, config.n_theta),
    }
    trace = SignalTrace(times, base + amp, base - amp, time_unit="1/k_d", metadata=meta)
    if refinement_check:
        fine = fp_envelope(kind, times, a, field, config.refined(), gamma, k_d)
        delta = float(max(np.max(np.abs(fine.S_plus - trace.S_plus)), np.max(np.abs(fine.S_minus - trace.S_minus))))
        trace.metadata["refinement_delta"] = delta
        if delta > refinement_tol:
            raise ConvergenceError(f"envelope changed by {delta:.2e} under grid refinement (tolerance {refinement_tol:g})")
    return trace


def envelope_excess(trace: SignalTrace) -> np.ndarray:
    """Upper-branch excess over its long-time limit, S_plus(t) - S_plus(inf)."""
    return trace.S_plus - trace.metadata["S_inf"]
