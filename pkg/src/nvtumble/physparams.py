"""Physical inputs of a tumbling nanodiamond and the rates derived from them.

Everything here is SI. The zero-field splitting ``D`` is an angular
frequency: the familiar 2.88 GHz is ``D / 2pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from scipy import constants

from .errors import ValidationError

K_B = constants.k
GAMMA_E = constants.physical_constants["electron gyromag. ratio"][0]  # rad/(s T)
D_NV = 2.0 * math.pi * 2.88e9  # rad/s

DIAMOND_DENSITY = 3510.0  # kg/m^3
WATER_VISCOSITY = 1.0e-3  # Pa s
ROOM_TEMPERATURE = 300.0  # K
NV_DENSITY = 1.0e16 * 1.0e6  # 1e16 cm^-3 in m^-3


@dataclass(frozen=True)
class CrystalSpec:
    """A spherical nanodiamond in a viscous fluid."""

    radius: float
    fluid_viscosity: float = WATER_VISCOSITY
    temperature: float = ROOM_TEMPERATURE
    diamond_density: float = DIAMOND_DENSITY
    nv_density: float = NV_DENSITY
    collection_efficiency_alpha: float = 0.01
    t2: float = 10e-6
    t2_star: float = 1e-6
    zero_field_D: float = D_NV
    gyromagnetic_gamma: float = GAMMA_E

    def validate(self) -> "CrystalSpec":
        positive = {
            "radius": self.radius,
            "fluid_viscosity": self.fluid_viscosity,
            "temperature": self.temperature,
            "diamond_density": self.diamond_density,
            "t2": self.t2,
            "t2_star": self.t2_star,
            "zero_field_D": self.zero_field_D,
            "gyromagnetic_gamma": self.gyromagnetic_gamma,
        }
        for name, value in positive.items():
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive and finite, got {value!r}")
        if not (math.isfinite(self.nv_density) and self.nv_density >= 0):
            raise ValidationError(f"nv_density must be non-negative, got {self.nv_density!r}")
        alpha = self.collection_efficiency_alpha
        if not (0 < alpha <= 1):
            raise ValidationError(f"collection_efficiency_alpha must lie in (0, 1], got {alpha!r}")
        return self

    def with_radius(self, radius: float) -> "CrystalSpec":
        return replace(self, radius=radius)


@dataclass(frozen=True)
class DerivedScales:
    """Rates and timescales of one crystal.

    ``k_d`` is the rotational diffusion coefficient (rad^2/s), ``t_d`` the
    angular-velocity damping time and ``t_m`` the population-mixing time.
    The thermal angular-velocity variance per axis is ``k_d / t_d``.
    """

    k_d: float
    gamma_drag: float
    moment_of_inertia: float
    t_d: float
    t_m: float
    n_nv: int
    adiabaticity_ratio_1: float
    adiabaticity_ratio_2: float
    zero_field_D: float = D_NV

    @property
    def omega_variance(self) -> float:
        """<w_x^2> = k_B T / I."""
        return self.k_d / self.t_d

    @property
    def mixing_rate(self) -> float:
        return mixing_rate_closed_form(self.k_d, self.t_d, self.zero_field_D)

    @classmethod
    def from_rates(cls, k_d: float, t_d: float, D: float = math.inf, n_nv: int = 1) -> "DerivedScales":
        """Build scales directly from k_d and t_d, in whatever time unit the caller uses.

        Used for dimensionless work: ``from_rates(1.0, 1e-3)`` measures time
        in units of 1/k_d. ``D`` may be infinite when spin dynamics are not
        resolved (adiabatic phase bookkeeping only).
        """
        if not (k_d > 0 and t_d > 0 and D > 0):
            raise ValidationError("k_d, t_d and D must be positive")
        gamma_drag = 1.0
        inertia = t_d * gamma_drag
        rate = mixing_rate_closed_form(k_d, t_d, D)
        return cls(
            k_d=k_d,
            gamma_drag=gamma_drag,
            moment_of_inertia=inertia,
            t_d=t_d,
            t_m=1.0 / (3.0 * rate) if rate > 0 else math.inf,
            n_nv=n_nv,
            adiabaticity_ratio_1=15.0 * k_d / D,
            adiabaticity_ratio_2=t_d * D,
            zero_field_D=D,
        )


def mixing_rate_closed_form(k_d: float, t_d: float, D: float) -> float:
    """<k> = 2 k_d / (1 + t_d^2 D^2); the D -> infinity limit is 0."""
    if math.isinf(D):
        return 0.0
    return 2.0 * k_d / (1.0 + (t_d * D) ** 2)


def rotational_diffusion(radius: float, viscosity: float, temperature: float) -> float:
    return K_B * temperature / (8.0 * math.pi * radius**3 * viscosity)


def nv_count(spec: CrystalSpec) -> int:
    volume = 4.0 / 3.0 * math.pi * spec.radius**3
    return max(1, round(spec.nv_density * volume))


def derive_scales(spec: CrystalSpec) -> DerivedScales:
    spec.validate()
    r, eta = spec.radius, spec.fluid_viscosity
    k_d = rotational_diffusion(r, eta, spec.temperature)
    gamma_drag = 8.0 * math.pi * eta * r**3
    mass = 4.0 / 3.0 * math.pi * r**3 * spec.diamond_density
    inertia = 0.4 * mass * r**2
    t_d = inertia / gamma_drag
    D = spec.zero_field_D
    t_m = 1.0 / (3.0 * mixing_rate_closed_form(k_d, t_d, D))
    return DerivedScales(
        k_d=k_d,
        gamma_drag=gamma_drag,
        moment_of_inertia=inertia,
        t_d=t_d,
        t_m=t_m,
        n_nv=nv_count(spec),
        adiabaticity_ratio_1=15.0 * k_d / D,
        adiabaticity_ratio_2=t_d * D,
        zero_field_D=D,
    )


def adiabatic_crossover_radius(
    viscosity: float = WATER_VISCOSITY,
    density: float = DIAMOND_DENSITY,
    D: float = D_NV,
) -> float:
    """Radius at which t_d * D = 1, from t_d = rho r^2 / (15 eta)."""
    return math.sqrt(15.0 * viscosity / (density * D))


TIMESCALE_COLUMNS = ("radius_m", "inv_kd_s", "t_m_s", "t_d_s", "t2_s", "t2_star_s", "inv_D_s")


@dataclass(frozen=True)
class TimescaleRow:
    radius_m: float
    inv_kd_s: float
    t_m_s: float
    t_d_s: float
    t2_s: float
    t2_star_s: float
    inv_D_s: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in TIMESCALE_COLUMNS)


def timescale_table(spec_range: Sequence[CrystalSpec]) -> list[TimescaleRow]:
    if len(spec_range) == 0:
        raise ValidationError("timescale_table needs at least one crystal")
    rows = []
    for spec in spec_range:
        s = derive_scales(spec)
        rows.append(
            TimescaleRow(
                radius_m=spec.radius,
                inv_kd_s=1.0 / s.k_d,
                t_m_s=s.t_m,
                t_d_s=s.t_d,
                t2_s=spec.t2,
                t2_star_s=spec.t2_star,
                inv_D_s=1.0 / spec.zero_field_D,
            )
        )
    return rows


def radius_sweep(base: CrystalSpec, radii: Iterable[float]) -> list[CrystalSpec]:
    return [base.with_radius(float(r)) for r in radii]
