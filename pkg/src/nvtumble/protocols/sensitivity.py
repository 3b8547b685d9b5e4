"""Shot-noise-limited sensitivities of a tumbling-crystal magnetometer."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from ..errors import ValidationError
from ..physparams import CrystalSpec, derive_scales
from ..signals import format_float
from .closed_form import tau_n_pi


@dataclass(frozen=True)
class SensitivityReport:
    """Sensitivities in SI units; ``*_sqrtT`` fields are per square root of measurement time."""

    delta_B_sqrtT: float  # T s^1/2
    delta_kd_sqrtT: float  # rad^2 s^-1 s^1/2
    delta_kd_mixing_sqrtT: float
    tau_d_used: float  # s
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("delta_B_sqrtT", "delta_kd_sqrtT", "delta_kd_mixing_sqrtT", "tau_d_used"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite, got {v!r}")

    def to_json(self) -> str:
        flat = {k: v for k, v in asdict(self).items() if k != "inputs"}
        flat.update({f"input_{k}": v for k, v in self.inputs.items()})
        return json.dumps(flat, indent=2, sort_keys=True)


def decoherence_time(spec: CrystalSpec, protocol: str = "dc", n_pi: int = 0, B_dc: Optional[float] = None) -> float:
    """Overall coherence time: 1/tau_d = 1/T2* + k_d (DC) or 1/T2 + 1/tau_npi + k_d (AC echo)."""
    s = derive_scales(spec)
    if protocol == "dc":
        return 1.0 / (1.0 / spec.t2_star + s.k_d)
    if protocol == "ac":
        if B_dc is None:
            raise ValidationError("the AC protocol needs the static bias field B_dc")
        t_npi = tau_n_pi(n_pi, B_dc, s.k_d, spec.gyromagnetic_gamma)
        return 1.0 / (1.0 / spec.t2 + 1.0 / t_npi + s.k_d)
    raise ValidationError(f"unknown protocol {protocol!r}")


def sensitivity_report(
    spec: CrystalSpec, protocol: str = "dc", n_pi: int = 0, B_dc: Optional[float] = None
) -> SensitivityReport:
    """Field and rotation-rate sensitivities for one crystal.

    The mixing channel treats the free decay rate 1/t_m = 3<k> as the
    measured quantity with coherence time t_m, then propagates through
    k_d = <k> (1 + t_d^2 D^2) / 2.
    """
    s = derive_scales(spec)
    alpha, N = spec.collection_efficiency_alpha, s.n_nv
    tau_d = decoherence_time(spec, protocol, n_pi, B_dc)
    shot = 1.0 / (alpha * math.sqrt(N * tau_d))
    mix = (1.0 + s.adiabaticity_ratio_2**2) / (6.0 * alpha * math.sqrt(N * s.t_m))
    inputs = {
        "radius_m": spec.radius,
        "fluid_viscosity": spec.fluid_viscosity,
        "temperature": spec.temperature,
        "nv_density": spec.nv_density,
        "alpha": alpha,
        "n_nv": N,
        "t2": spec.t2,
        "t2_star": spec.t2_star,
        "protocol": protocol,
    }
    if protocol == "ac":
        inputs.update(n_pi=n_pi, B_dc=B_dc)
    return SensitivityReport(shot / spec.gyromagnetic_gamma, shot, mix, tau_d, inputs)


SWEEP_COLUMNS = ("radius_m", "n_nv", "tau_d_s", "delta_B_sqrtT", "delta_kd_sqrtT", "delta_kd_mixing_sqrtT")


def sensitivity_sweep(base: CrystalSpec, radii: Iterable[float], protocol: str = "dc", n_pi: int = 0,
                      B_dc: Optional[float] = None) -> list[dict]:
    rows = []
    for r in radii:
        spec = base.with_radius(float(r))
        rep = sensitivity_report(spec, protocol, n_pi, B_dc)
        rows.append(
            {
                "radius_m": spec.radius,
                "n_nv": rep.inputs["n_nv"],
                "tau_d_s": rep.tau_d_used,
                "delta_B_sqrtT": rep.delta_B_sqrtT,
                "delta_kd_sqrtT": rep.delta_kd_sqrtT,
                "delta_kd_mixing_sqrtT": rep.delta_kd_mixing_sqrtT,
            }
        )
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([format_float(row[c]) for c in SWEEP_COLUMNS])
