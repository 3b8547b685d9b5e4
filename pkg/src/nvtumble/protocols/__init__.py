"""Measurement protocols: closed forms, Monte Carlo ensembles and sensitivities."""

from ..signals import SignalTrace
from .closed_form import (
    PulseSequence,
    SequenceKind,
    echo_ac_signal,
    echo_population,
    mixing_decay_signal,
    mixing_rate,
    rabi_ensemble_signal,
    rabi_first_minimum,
    ramsey_asymptote,
    ramsey_population,
    rate_equation_populations,
    tau_n_pi,
)
from .montecarlo import mc_mixing_validation, mc_ramsey_envelope, mixing_rate_mc
from .sensitivity import SensitivityReport, sensitivity_report, sensitivity_sweep
from .struve import struve_Hm1

__all__ = [
    "PulseSequence",
    "SensitivityReport",
    "SequenceKind",
    "SignalTrace",
    "echo_ac_signal",
    "echo_population",
    "mc_mixing_validation",
    "mc_ramsey_envelope",
    "mixing_decay_signal",
    "mixing_rate",
    "mixing_rate_mc",
    "rabi_ensemble_signal",
    "rabi_first_minimum",
    "ramsey_asymptote",
    "ramsey_population",
    "rate_equation_populations",
    "sensitivity_report",
    "sensitivity_sweep",
    "struve_Hm1",
    "tau_n_pi",
]
