"""Monte Carlo ensembles of tumbling crystals.

Ensembles are split into fixed-size blocks. Block ``k`` draws from the
stream ``(seed, k)`` and returns plain sums, which are combined in block
order with compensated summation. Results therefore do not depend on how
many worker threads run the blocks.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..errors import ValidationError
from ..fokker import FieldConfigDC, FieldConfigFC
from ..physparams import CrystalSpec, DerivedScales, derive_scales
from ..rotor import LangevinEnsemble, make_rng, nv_axis, sample_random_walks
from ..signals import SignalTrace
from ..spinsys import m0_states, plus_states, propagate_zero_field, wrap_angle
from .closed_form import PulseSequence, SequenceKind, mixing_decay_signal, pulse_angle

# Langevin damping time used when the physical one is far below the resolution needed
MIN_TD_KD = 1e-3

Field = Union[None, FieldConfigDC, FieldConfigFC]


@dataclass
class _Moments:
    """Per-time sums over one block: count, sum and sum of squares for each column."""

    n: int
    s: np.ndarray
    s2: np.ndarray


def _run_blocks(block_fn: Callable[[int, int], _Moments], ensemble_size: int, block_size: int, threads: int):
    if ensemble_size < 1 or block_size < 1:
        raise ValidationError("ensemble and block sizes must be positive")
    sizes = [block_size] * (ensemble_size // block_size)
    if ensemble_size % block_size:
        sizes.append(ensemble_size % block_size)
    jobs = list(enumerate(sizes))
    if threads <= 1:
        parts = [block_fn(k, n) for k, n in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: block_fn(*job), jobs))
    n = sum(p.n for p in parts)
    s = np.vectorize(lambda *xs: math.fsum(xs))(*[p.s for p in parts]) if len(parts) > 1 else parts[0].s
    s2 = np.vectorize(lambda *xs: math.fsum(xs))(*[p.s2 for p in parts]) if len(parts) > 1 else parts[0].s2
    mean = s / n
    var = np.maximum(s2 / n - mean**2, 0.0) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def _moments(samples: np.ndarray) -> _Moments:
    """``samples`` has shape (times, columns, members)."""
    return _Moments(samples.shape[-1], samples.sum(axis=-1), (samples**2).sum(axis=-1))


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ValidationError("output times must start at 0 and increase strictly")
    return t


def _substeps(interval: float, dt_max: float) -> tuple[int, float]:
    n = max(1, math.ceil(interval / dt_max * (1 - 1e-12)))
    return n, interval / n


# -- Ramsey ------------------------------------------------------------------------


def _reduced_field(field: Field, gamma: float, k_d: float):
    """Field in units of k_d / gamma: ('dc', vector) or ('fc', rms, t_c k_d)."""
    if field is None:
        return None
    if isinstance(field, FieldConfigDC):
        field.validate()
        bz, bx = field.reduced(gamma, k_d)
        return ("dc", np.array([bx, 0.0, bz]))
    if isinstance(field, FieldConfigFC):
        field.validate(gamma, k_d)
        return ("fc", gamma * field.B_fc_rms / k_d, field.t_c * k_d)
    raise ValidationError(f"unsupported field configuration {field!r}")


def _ramsey_block(k, n, *, seed, times, a, field, td_kd, dt_max, mode, D_over_kd):
    rng = make_rng(seed, k)
    scales = DerivedScales.from_rates(1.0, td_kd)
    ens = LangevinEnsemble.uniform(n, scales, rng)
    axes = ens.axes()
    T1 = pulse_angle(np.arccos(np.clip(axes[:, 2], -1, 1)), a)
    Phi = np.zeros(n)
    b_fc = None
    if field is not None and field[0] == "fc":
        _, rms, tc = field
        b_fc = rms / math.sqrt(3.0) * rng.standard_normal((n, 3))
    psi = None
    if mode == "schrodinger":
        # state after the first pulse, in the local (psi0, psi+1) frame
        c, s = np.cos(T1 / 2), np.sin(T1 / 2)
        v0 = m0_states(axes)
        v1 = plus_states(axes)
        psi = c[:, None] * v0 - 1j * s[:, None] * v1
    out = np.empty((times.size, 2, n))

    def record(i, axes):
        T2 = pulse_angle(np.arccos(np.clip(axes[:, 2], -1, 1)), a)
        if mode == "schrodinger":
            a0 = np.sum(m0_states(axes).conj() * psi, axis=1)
            a1 = np.sum(plus_states(axes).conj() * psi, axis=1) * np.exp(1j * D_over_kd * times[i])
            c2, s2 = np.cos(T2 / 2), np.sin(T2 / 2)
            # final pulse undoing (+) or completing (-) the first rotation
            out[i, 0] = np.abs(c2 * a0 + 1j * s2 * a1) ** 2
            out[i, 1] = np.abs(c2 * a0 - 1j * s2 * a1) ** 2
        else:
            base = 1.0 + np.cos(T1) * np.cos(T2)
            osc = np.sin(T1) * np.sin(T2) * np.cos(Phi)
            out[i, 0] = 0.5 * (base + osc)
            out[i, 1] = 0.5 * (base - osc)

    record(0, axes)
    phi = np.arctan2(axes[:, 1], axes[:, 0])
    for i in range(1, times.size):
        nsub, dt = _substeps(times[i] - times[i - 1], dt_max)
        for _ in range(nsub):
            prev = axes
            if mode == "schrodinger":
                q_mid = ens.step_with_midpoint(dt, rng)
                axes = ens.axes()
                psi = propagate_zero_field(psi, m0_states(nv_axis(q_mid)), np.exp(-1j * D_over_kd * dt))
                continue
            ens.step(dt, rng)
            axes = ens.axes()
            phi_next = np.arctan2(axes[:, 1], axes[:, 0])
            Phi += 0.5 * (axes[:, 2] + prev[:, 2]) * wrap_angle(phi_next - phi)
            phi = phi_next
            if field is None:
                continue
            n_mid = 0.5 * (axes + prev)
            if field[0] == "dc":
                Phi += (n_mid @ field[1]) * dt
            else:
                _, rms, tc = field
                sigma = rms / math.sqrt(3.0)
                rho = math.exp(-2.0 * dt / tc)
                b_next = rho * b_fc + sigma * math.sqrt(-math.expm1(-4.0 * dt / tc)) * rng.standard_normal((n, 3))
                Phi += np.einsum("ij,ij->i", n_mid, 0.5 * (b_fc + b_next)) * dt
                b_fc = b_next
        record(i, axes)
    return _moments(out)


def mc_ramsey_envelope(
    times: Sequence[float],
    *,
    seed: int,
    a: float = 1.0,
    field: Field = None,
    ensemble_size: int = 10_000,
    spec: Optional[CrystalSpec] = None,
    sequence: Optional[PulseSequence] = None,
    mode: str = "adiabatic",
    td_kd: Optional[float] = None,
    D_over_kd: Optional[float] = None,
    dt: Optional[float] = None,
    threads: int = 1,
    block_size: int = 2500,
) -> SignalTrace:
    """Ramsey envelope branches from simulated trajectories.

    Times are in units of 1/k_d. Without ``spec`` the fields are read in
    units of k_d/gamma; with ``spec`` they are in tesla and converted with
    the crystal's k_d and gamma.

    ``mode="adiabatic"`` tracks the relative phase as the sum of geometric
    increments ``cos(theta) dphi`` and the field projection on the NV axis.
    ``mode="schrodinger"`` integrates the three-level state in the
    zero-field Hamiltonian with splitting ``D_over_kd`` (no field allowed).

    Angular-velocity memory ``td_kd`` (t_d k_d) defaults to the crystal's
    value, raised to ``MIN_TD_KD`` when smaller. Over times of order 1/k_d
    the orientation statistics depend on it only through O(t_d k_d).
    """
    if ensemble_size < 100:
        raise ValidationError("ensemble_size must be at least 100")
    if sequence is not None:
        sequence.validate()
        if sequence.kind not in (SequenceKind.RAMSEY, SequenceKind.RAMSEY.value):
            raise ValidationError(f"mc_ramsey_envelope runs Ramsey sequences, not {sequence.kind}")
        if a != 1.0 and a != sequence.pulse_param_a:
            raise ValidationError("pulse parameter a disagrees with the pulse sequence")
        a = sequence.pulse_param_a
    t = _check_times(times)
    gamma = k_d = 1.0
    if spec is not None:
        s = derive_scales(spec)
        gamma, k_d = spec.gyromagnetic_gamma, s.k_d
        if td_kd is None:
            td_kd = max(s.t_d * s.k_d, MIN_TD_KD)
        if D_over_kd is None:
            D_over_kd = spec.zero_field_D / s.k_d
    td_kd = MIN_TD_KD if td_kd is None else td_kd
    reduced = _reduced_field(field, gamma, k_d)
    dt_max = td_kd / 10.0 if dt is None else dt
    if reduced is not None and reduced[0] == "fc":
        dt_max = min(dt_max, reduced[2] / 10.0)
    if mode == "schrodinger":
        if reduced is not None:
            raise ValidationError("schrodinger mode is implemented for zero field only")
        if D_over_kd is None:
            raise ValidationError("schrodinger mode needs D_over_kd")
        dt_max = min(dt_max, 1.0 / (20.0 * D_over_kd))
        if t[-1] / dt_max > 1e6:
            warnings.warn(f"{t[-1] / dt_max:.2e} steps per trajectory", stacklevel=2)
    elif mode != "adiabatic":
        raise ValidationError(f"unknown mode {mode!r}")

    def block(k, n):
        return _ramsey_block(
            k, n, seed=seed, times=t, a=a, field=reduced, td_kd=td_kd, dt_max=dt_max, mode=mode, D_over_kd=D_over_kd
        )

    mean, err = _run_blocks(block, ensemble_size, block_size, threads)
    meta = {
        "protocol": "ramsey",
        "mode": mode,
        "seed": seed,
        "ensemble_size": ensemble_size,
        "a": a,
        "td_kd": td_kd,
        "block_size": block_size,
    }
    return SignalTrace(t, mean[:, 0], mean[:, 1], err[:, 0], err[:, 1], time_unit="1/k_d", metadata=meta)


# -- population mixing -------------------------------------------------------------


def mixing_rate_mc(scales: DerivedScales, n_samples: int, seed: int, chunk: int = 250_000) -> tuple[float, float]:
    """Brute-force average of the per-step mixing k = dtheta^2 (1 - cos(D dt)) / (D^2 dt^3).

    Returns the sample mean and its standard error.
    """
    D = scales.zero_field_D
    if not math.isfinite(D):
        raise ValidationError("the mixing rate needs a finite zero-field splitting")
    rng = make_rng(seed)
    sums, sq = [], []
    left = n_samples
    while left > 0:
        n = min(chunk, left)
        dth, dt, _ = sample_random_walks(scales, rng, n)
        k = dth**2 * 2.0 * np.sin(0.5 * D * dt) ** 2 / (D**2 * dt**3)
        sums.append(math.fsum(k))
        sq.append(math.fsum(k * k))
        left -= n
    mean = math.fsum(sums) / n_samples
    var = max(math.fsum(sq) / n_samples - mean**2, 0.0) * n_samples / max(n_samples - 1, 1)
    return mean, math.sqrt(var / n_samples)


def _mixing_block(k, n, *, seed, times, scales, D, dt_max):
    rng = make_rng(seed, k)
    ens = LangevinEnsemble.uniform(n, scales, rng)
    psi = m0_states(ens.axes())
    out = np.empty((times.size, 1, n))
    out[0, 0] = 1.0
    for i in range(1, times.size):
        nsub, dt = _substeps(times[i] - times[i - 1], dt_max)
        phase = np.exp(-1j * D * dt)
        for _ in range(nsub):
            q_mid = ens.step_with_midpoint(dt, rng)
            psi = propagate_zero_field(psi, m0_states(nv_axis(q_mid)), phase)
        out[i, 0] = np.abs(np.sum(m0_states(ens.axes()).conj() * psi, axis=1)) ** 2
    return _moments(out)


def mc_mixing_validation(
    t_d_D: float,
    duration: float = 3.0,
    ensemble_size: int = 2000,
    seed: int = 0,
    n_points: int = 31,
    kd_over_D: float = 0.005,
    threads: int = 1,
    block_size: int = 500,
) -> SignalTrace:
    """m=0 population of crystals prepared in m=0, from Langevin plus Schrodinger dynamics.

    Units: D = 1. ``duration`` is in units of t_m. The reference curve
    ``1/3 + 2/3 exp(-t/t_m)`` is attached as the extra column ``theory``.
    Steps are min(1/(20 D), t_d/10).
    """
    if not t_d_D > 0:
        raise ValidationError("t_d D must be positive")
    if not 0 < kd_over_D <= 0.05:
        raise ValidationError("kd_over_D must lie in (0, 0.05] so the spin follows the crystal")
    scales = DerivedScales.from_rates(kd_over_D, t_d_D, D=1.0)
    times = np.linspace(0.0, duration * scales.t_m, n_points)
    dt_max = min(1.0 / 20.0, t_d_D / 10.0)

    def block(k, n):
        return _mixing_block(k, n, seed=seed, times=times, scales=scales, D=1.0, dt_max=dt_max)

    mean, err = _run_blocks(block, ensemble_size, block_size, threads)
    theory = mixing_decay_signal(scales, times).S_plus
    meta = {
        "protocol": "mixing",
        "t_d_D": t_d_D,
        "kd_over_D": kd_over_D,
        "t_m": scales.t_m,
        "seed": seed,
        "ensemble_size": ensemble_size,
        "block_size": block_size,
    }
    return SignalTrace(
        times, mean[:, 0], mean[:, 0], err[:, 0], err[:, 0], time_unit="1/D", metadata=meta, extra={"theory": theory}
    )
