"""Parameter sweeps and decay summaries built from the solvers."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..errors import NumericalError
from ..fokker import FieldConfigDC, FieldConfigFC, SolverConfig, fp_envelope
from ..signals import SignalTrace, decay_time_1e, fit_exponential_decay, log_linear_rate
from .closed_form import echo_ac_signal, ramsey_asymptote


def envelope_summary(trace: SignalTrace, asymptote: Optional[float] = None) -> dict:
    """Decay times of an envelope.

    ``tau_fit`` and ``tau_1e`` describe the upper-branch excess over its
    long-time value; ``tau_1e_amplitude`` is the 1/e time of S_plus - S_minus.
    Entries are ``None`` when the window is too short to see the decay.
    """
    if asymptote is None:
        asymptote = trace.metadata.get("S_inf")
    if asymptote is None:
        asymptote = ramsey_asymptote(trace.metadata.get("a", 1.0))
    excess = trace.S_plus - asymptote
    out = {}
    for key, fn, y in (
        ("tau_1e", decay_time_1e, excess),
        ("tau_fit", fit_exponential_decay, excess),
        ("tau_1e_amplitude", decay_time_1e, trace.amplitude),
    ):
        try:
            out[key] = fn(trace.times, y)
        except NumericalError:
            out[key] = None
    return out


def dc_decoherence_sweep(
    strengths: Sequence[float],
    t_max: float = 3.0,
    n_points: int = 301,
    a: float = 1.0,
    config: Optional[SolverConfig] = None,
) -> list[dict]:
    """1/e time of the envelope amplitude for fields along z and along x.

    Strengths are gamma B / k_d; times are in units of 1/k_d.
    """
    times = np.linspace(0.0, t_max, n_points)
    rows = []
    for b in strengths:
        row = {"gamma_B_over_kd": float(b)}
        for name, fld in (("z", FieldConfigDC(B_z=b)), ("x", FieldConfigDC(B_x=b))):
            tr = fp_envelope("dc", times, a, fld, config)
            try:
                row[f"tau_1e_{name}"] = decay_time_1e(times, tr.amplitude)
            except NumericalError:
                row[f"tau_1e_{name}"] = math.nan
        rows.append(row)
    return rows


def fc_rate_sweep(
    b_rms: Sequence[float],
    t_c: float,
    t_fit: float = 1.0,
    n_points: int = 101,
    a: float = 1.0,
    config: Optional[SolverConfig] = None,
) -> list[dict]:
    """Fitted decay rate of the envelope amplitude against gamma^2 B^2 t_c (units of k_d).

    ``excess_rate`` subtracts the zero-field rate fitted on the same window.
    """
    times = np.linspace(0.0, t_fit, n_points)
    base = log_linear_rate(times, fp_envelope("geometric", times, a, config=config).amplitude)
    rows = []
    for b in b_rms:
        tr = fp_envelope("fc", times, a, FieldConfigFC(b, t_c), config)
        rate = log_linear_rate(times, tr.amplitude)
        rows.append({"gamma_B_rms_over_kd": float(b), "b2_tc": float(b) ** 2 * t_c, "rate": rate, "excess_rate": rate - base})
    return rows


def echo_sweep(strengths: Sequence[float], tau: float = 1.0, a: float = 1.0, form: str = "printed") -> list[dict]:
    """Echo branches against tau gamma B_ac (fields in k_d/gamma, tau in 1/k_d)."""
    plus, minus = echo_ac_signal(np.asarray(strengths, dtype=float), tau, a, form=form)
    return [
        {"tau_gamma_B": float(b) * tau, "S_plus": float(p), "S_minus": float(m), "separation": float(p - m)}
        for b, p, m in zip(strengths, plus, minus)
    ]

