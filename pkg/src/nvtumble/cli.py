"""Command-line front end.

Each subcommand resolves its settings from built-in defaults, an optional
``--figure`` preset, an optional JSON ``--config`` file and explicit flags,
in that order of precedence. Settings are validated before anything runs;
outputs are written to a scratch directory and moved into place together
with ``run_manifest.json`` only when the command succeeds.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .fokker import FieldConfigDC, FieldConfigFC, SolverConfig, fp_envelope
from .physparams import CrystalSpec, DerivedScales, derive_scales, radius_sweep, timescale_table, TIMESCALE_COLUMNS
from .protocols import (
    mc_mixing_validation,
    mc_ramsey_envelope,
    mixing_rate_mc,
    rabi_ensemble_signal,
    rabi_first_minimum,
    sensitivity_report,
    sensitivity_sweep,
)
from .protocols.sensitivity import write_sweep_csv
from .protocols.sweeps import dc_decoherence_sweep, echo_sweep, envelope_summary, fc_rate_sweep
from .signals import format_float

OUTPUT_ENV = "NVTUMBLE_OUTPUT_DIR"
MANIFEST = "run_manifest.json"


# -- settings schema -------------------------------------------------------------


@dataclass(frozen=True)
class Option:
    kind: str  # float | int | str | bool | floats | optfloat
    default: object
    help: str = ""
    choices: tuple = ()

    def parse(self, name: str, raw):
        try:
            if self.kind == "float":
                value = float(raw)
            elif self.kind == "optfloat":
                value = None if raw in (None, "", "none", "None") else float(raw)
            elif self.kind == "int":
                if isinstance(raw, float) and not raw.is_integer():
                    raise ValueError
                value = int(raw)
            elif self.kind == "bool":
                if isinstance(raw, str):
                    if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError
                    value = raw.lower() in ("true", "1", "yes")
                else:
                    value = bool(raw)
            elif self.kind == "floats":
                items = raw.split(",") if isinstance(raw, str) else list(raw)
                value = [float(x) for x in items]
                if not value:
                    raise ValueError
            else:
                value = None if raw is None else str(raw)
        except (TypeError, ValueError):
            raise ValidationError(f"setting {name!r}: cannot read {raw!r} as {self.kind}") from None
        if self.choices and value not in self.choices:
            raise ValidationError(f"setting {name!r} must be one of {', '.join(map(str, self.choices))}")
        if isinstance(value, float) and not math.isfinite(value):
            raise ValidationError(f"setting {name!r} must be finite")
        return value


COMMON = {
    "output_dir": Option("str", None, f"output directory (default: ${OUTPUT_ENV} or ./nvtumble_out)"),
    "threads": Option("int", 1, "worker threads for ensemble blocks"),
}

CRYSTAL = {
    "radius": Option("float", 5e-9, "crystal radius, m"),
    "fluid_viscosity": Option("float", 1e-3, "Pa s"),
    "temperature": Option("float", 300.0, "K"),
    "diamond_density": Option("float", 3510.0, "kg/m^3"),
    "nv_density": Option("float", 1e22, "NV centres per m^3"),
    "alpha": Option("float", 0.01, "readout efficiency parameter"),
    "t2": Option("float", 10e-6, "s"),
    "t2_star": Option("float", 1e-6, "s"),
}

SOLVER = {
    "n_theta": Option("int", 128, "theta cells"),
    "n_phi": Option("int", 64, "phi grid points"),
    "n_Phi": Option("int", 64, "Phi grid points"),
    "dt": Option("float", 1e-3, "time step, 1/k_d"),
}

FIELD = {
    "field": Option("str", "none", "field type", ("none", "dc", "fc")),
    "B_z": Option("float", 0.0, "static field along z"),
    "B_x": Option("float", 0.0, "static field along x"),
    "B_fc_rms": Option("float", 0.0, "rms of the fluctuating field"),
    "t_c": Option("float", 0.01, "correlation time of the fluctuating field"),
    "units": Option(
        "str",
        "dimensionless",
        "fields in k_d/gamma or in tesla; SI also reads t_c and tau in seconds (output times stay in 1/k_d)",
        ("dimensionless", "SI"),
    ),
}

SEED = {"seed": Option("int", None, "random seed (required)")}


@dataclass
class Command:
    name: str
    help: str
    options: dict
    run: Callable
    stochastic: bool = False
    presets: dict = field(default_factory=dict)


# -- helpers used by the runners ---------------------------------------------------


def crystal_from(v: dict) -> CrystalSpec:
    return CrystalSpec(
        radius=v.get("radius", 5e-9),
        fluid_viscosity=v["fluid_viscosity"],
        temperature=v["temperature"],
        diamond_density=v["diamond_density"],
        nv_density=v["nv_density"],
        collection_efficiency_alpha=v["alpha"],
        t2=v["t2"],
        t2_star=v["t2_star"],
    ).validate()


def solver_from(v: dict) -> SolverConfig:
    return SolverConfig(v["n_theta"], v["n_phi"], v["n_Phi"], v["dt"]).validate()


def unit_scales(v: dict) -> tuple[float, float]:
    """(gamma, k_d) used to reduce fields and times; (1, 1) in dimensionless mode."""
    if v.get("units", "dimensionless") == "dimensionless":
        return 1.0, 1.0
    spec = crystal_from(v)
    return spec.gyromagnetic_gamma, derive_scales(spec).k_d


def field_from(v: dict):
    kind = v["field"]
    if kind == "dc":
        return FieldConfigDC(v["B_z"], v["B_x"]).validate()
    if kind == "fc":
        gamma, k_d = unit_scales(v)
        return FieldConfigFC(v["B_fc_rms"], v["t_c"]).validate(gamma, k_d)
    return None


def write_rows(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_float(row[c]) for c in columns])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _positive(v: dict, *names) -> None:
    for n in names:
        if not v[n] > 0:
            raise ValidationError(f"setting {n!r} must be positive")


def _tag(x: float) -> str:
    return format(x, "g")


# -- runners -----------------------------------------------------------------------


def run_params(v, out: Path) -> dict:
    _positive(v, "radius_min", "radius_max", "n_radii")
    if v["radius_max"] < v["radius_min"]:
        raise ValidationError("radius_max must not be below radius_min")
    base = crystal_from(v)
    radii = np.geomspace(v["radius_min"], v["radius_max"], v["n_radii"])
    rows = timescale_table(radius_sweep(base, radii))
    write_rows(out / "timescales.csv", TIMESCALE_COLUMNS, [dict(zip(TIMESCALE_COLUMNS, r.as_tuple())) for r in rows])
    return {"rows": len(rows)}


def run_rabi(v, out: Path) -> dict:
    _positive(v, "Omega_R", "t_max", "n_points")
    times = np.linspace(0.0, v["t_max"], v["n_points"])
    trace = rabi_ensemble_signal(v["Omega_R"], times)
    trace.to_csv(out / "rabi.csv")
    x, s = rabi_first_minimum()
    return {"first_minimum_Omega_t_over_pi": x / math.pi, "first_minimum_S0": s}


def run_ramsey_fp(v, out: Path) -> dict:
    _positive(v, "t_max", "n_points")
    gamma, k_d = unit_scales(v)
    config = solver_from(v)
    fld = field_from(v)
    kind = {"none": "geometric", "dc": "dc", "fc": "fc"}[v["field"]]
    times = np.linspace(0.0, v["t_max"], v["n_points"])
    summary = {}
    for a in v["a_values"]:
        trace = fp_envelope(kind, times, a, fld, config, gamma, k_d, refinement_check=v["refinement_check"])
        trace.to_csv(out / f"envelope_a{_tag(a)}.csv", time_header="t_kd", envelope_only=True)
        summary[f"a={_tag(a)}"] = envelope_summary(trace) | {
            "refinement_delta": trace.metadata.get("refinement_delta")
        }
    return summary


def run_ramsey_mc(v, out: Path) -> dict:
    _positive(v, "t_max", "n_points", "ensemble_size", "block_size")
    times = np.linspace(0.0, v["t_max"], v["n_points"])
    spec = crystal_from(v) if v["units"] == "SI" else None
    fld = field_from(v)
    trace = mc_ramsey_envelope(
        times,
        seed=v["seed"],
        a=v["a"],
        field=fld,
        ensemble_size=v["ensemble_size"],
        spec=spec,
        mode=v["mode"],
        td_kd=v["td_kd"],
        D_over_kd=v["D_over_kd"],
        threads=v["threads"],
        block_size=v["block_size"],
    )
    if v["with_fp"] and v["mode"] == "adiabatic":
        gamma, k_d = unit_scales(v)
        kind = {"none": "geometric", "dc": "dc", "fc": "fc"}[v["field"]]
        ref = fp_envelope(kind, times, v["a"], fld, solver_from(v), gamma, k_d)
        trace.extra["fp_S_plus"] = ref.S_plus
        trace.extra["fp_S_minus"] = ref.S_minus
    trace.to_csv(out / "ramsey_mc.csv")
    return envelope_summary(trace)


def run_mixing(v, out: Path) -> dict:
    _positive(v, "duration", "ensemble_size", "n_points", "block_size", "kd_over_D")
    summary = {}
    for tdD in v["t_d_D_values"]:
        trace = mc_mixing_validation(
            tdD, v["duration"], v["ensemble_size"], v["seed"], v["n_points"], v["kd_over_D"], v["threads"], v["block_size"]
        )
        trace.to_csv(out / f"mixing_tdD{_tag(tdD)}.csv")
        z = np.abs(trace.S_plus - trace.extra["theory"]) / np.maximum(trace.stderr_plus, 1e-300)
        summary[f"t_d_D={_tag(tdD)}"] = {"t_m": trace.metadata["t_m"], "max_abs_z": float(np.max(z[1:]))}
        if v["rate_samples"] > 0:
            scales = DerivedScales.from_rates(v["kd_over_D"], tdD, D=1.0)
            mean, err = mixing_rate_mc(scales, v["rate_samples"], v["seed"])
            summary[f"t_d_D={_tag(tdD)}"].update(
                mixing_rate_mc=mean, mixing_rate_mc_stderr=err, mixing_rate_closed_form=scales.mixing_rate
            )
    write_json(out / "summary.json", summary)
    return summary


def run_dc(v, out: Path) -> dict:
    _positive(v, "t_max", "n_points")
    gamma, k_d = unit_scales(v)
    config = solver_from(v)
    scale = gamma / k_d
    strengths = [b * scale for b in v["strengths"]]
    rows = dc_decoherence_sweep(strengths, v["t_max"], v["n_points"], v["a"], config)
    write_rows(out / "decoherence_times.csv", ("gamma_B_over_kd", "tau_1e_z", "tau_1e_x"), rows)
    if v["envelope_strength"] is not None:
        b = v["envelope_strength"] * scale
        times = np.linspace(0.0, v["t_max"], v["n_points"])
        for name, fld in (("none", FieldConfigDC()), ("z", FieldConfigDC(B_z=b)), ("x", FieldConfigDC(B_x=b))):
            tr = fp_envelope("dc", times, v["a"], fld, config)
            tr.to_csv(out / f"envelope_{name}.csv", time_header="t_kd", envelope_only=True)
    return {"rows": rows}


def run_fc(v, out: Path) -> dict:
    _positive(v, "t_c", "t_fit", "n_points")
    gamma, k_d = unit_scales(v)
    config = solver_from(v)
    strengths = [b * gamma / k_d for b in v["strengths"]]
    rows = fc_rate_sweep(strengths, v["t_c"] * k_d, v["t_fit"], v["n_points"], v["a"], config)
    write_rows(out / "fc_rates.csv", ("gamma_B_rms_over_kd", "b2_tc", "rate", "excess_rate"), rows)
    return {"rows": rows}


def run_ac_echo(v, out: Path) -> dict:
    _positive(v, "tau", "n_points")
    gamma, k_d = unit_scales(v)
    strengths = np.linspace(0.0, v["B_max"], v["n_points"]) * gamma / k_d
    rows = echo_sweep(strengths, v["tau"] * k_d, v["a"], v["form"])
    write_rows(out / "echo.csv", ("tau_gamma_B", "S_plus", "S_minus", "separation"), rows)
    return {"separation_at_zero_field": rows[0]["separation"]}


def run_sensitivity(v, out: Path) -> dict:
    _positive(v, "radius_min", "radius_max", "n_radii")
    base = crystal_from(v)
    radii = np.geomspace(v["radius_min"], v["radius_max"], v["n_radii"])
    rows = sensitivity_sweep(base, radii, v["protocol"], v["n_pi"], v["B_dc"])
    write_sweep_csv(rows, out / "sensitivity.csv")
    report = sensitivity_report(base, v["protocol"], v["n_pi"], v["B_dc"])
    (out / "sensitivity_report.json").write_text(report.to_json() + "\n")
    return {"report_radius_m": base.radius}


def _times(t_max: float, n: int) -> dict:
    return {"t_max": Option("float", t_max, "last output time"), "n_points": Option("int", n, "number of output times")}


def _crystal_without_radius() -> dict:
    return {k: o for k, o in CRYSTAL.items() if k != "radius"}


COMMANDS = {
    c.name: c
    for c in [
        Command(
            "params",
            "timescales against crystal radius",
            {
                **_crystal_without_radius(),
                "radius_min": Option("float", 1e-9, "m"),
                "radius_max": Option("float", 1e-6, "m"),
                "n_radii": Option("int", 50, "log-spaced radii"),
            },
            run_params,
            presets={"2": {}},
        ),
        Command(
            "rabi",
            "ensemble Rabi nutation",
            {"Omega_R": Option("float", 1.0, "Rabi frequency, rad/s"), **_times(4 * math.pi, 401)},
            run_rabi,
            presets={"3a": {}},
        ),
        Command(
            "ramsey-fp",
            "Ramsey envelope from the Fokker-Planck solvers",
            {
                "a_values": Option("floats", [1.0], "pulse parameters, comma separated"),
                "refinement_check": Option("bool", False, "repeat on a doubled grid and compare"),
                **_times(3.0, 61),
                **FIELD,
                **SOLVER,
                **CRYSTAL,
            },
            run_ramsey_fp,
            presets={"3b": {"a_values": [1.0, 1.16], "n_points": 301}},
        ),
        Command(
            "ramsey-mc",
            "Ramsey envelope from simulated trajectories",
            {
                "a": Option("float", 1.0, "pulse parameter"),
                "ensemble_size": Option("int", 10_000, "trajectories"),
                "block_size": Option("int", 2500, "trajectories per random stream"),
                "mode": Option("str", "adiabatic", "spin bookkeeping", ("adiabatic", "schrodinger")),
                "td_kd": Option("optfloat", None, "angular-velocity memory t_d k_d"),
                "D_over_kd": Option("optfloat", None, "zero-field splitting in units of k_d (schrodinger mode)"),
                "with_fp": Option("bool", True, "append the Fokker-Planck reference"),
                **_times(3.0, 11),
                **FIELD,
                **SOLVER,
                **CRYSTAL,
                **SEED,
            },
            run_ramsey_mc,
            stochastic=True,
            presets={"5b": {"field": "dc", "B_x": 10.0}},
        ),
        Command(
            "mixing",
            "population mixing from Langevin plus Schrodinger dynamics",
            {
                "t_d_D_values": Option("floats", [0.1, 1.0, 2.0], "t_d D values"),
                "duration": Option("float", 3.0, "in units of t_m"),
                "ensemble_size": Option("int", 2000, "trajectories"),
                "block_size": Option("int", 500, "trajectories per random stream"),
                "kd_over_D": Option("float", 0.005, "k_d in units of D"),
                "n_points": Option("int", 31, "output times"),
                "rate_samples": Option("int", 1_000_000, "random-walk samples for the mixing-rate check (0 skips)"),
                **SEED,
            },
            run_mixing,
            stochastic=True,
            presets={"5a": {}},
        ),
        Command(
            "dc",
            "decoherence under static fields along z and x",
            {
                "strengths": Option("floats", [0.0, 2.0, 5.0, 10.0, 15.0, 20.0], "field strengths"),
                "envelope_strength": Option("optfloat", 10.0, "also write envelopes at this strength"),
                "a": Option("float", 1.0, "pulse parameter"),
                **_times(3.0, 301),
                **{k: FIELD[k] for k in ("units",)},
                **SOLVER,
                **CRYSTAL,
            },
            run_dc,
            presets={"5b": {"strengths": [10.0], "envelope_strength": 10.0}, "5c": {"envelope_strength": None}},
        ),
        Command(
            "fc",
            "decay rate under fluctuating fields",
            {
                "strengths": Option("floats", [0.0, 2.0, 2.0 * math.sqrt(2.0), 4.0], "rms field strengths"),
                "t_c": Option("float", 0.01, "correlation time"),
                "t_fit": Option("float", 1.0, "fit window"),
                "n_points": Option("int", 101, "output times"),
                "a": Option("float", 1.0, "pulse parameter"),
                **{k: FIELD[k] for k in ("units",)},
                **SOLVER,
                **CRYSTAL,
            },
            run_fc,
        ),
        Command(
            "ac-echo",
            "spin-echo envelope against AC field amplitude",
            {
                "tau": Option("float", 1.0, "free evolution time"),
                "B_max": Option("float", 10.0, "largest AC amplitude"),
                "n_points": Option("int", 41, "amplitudes"),
                "a": Option("float", 1.0, "pulse parameter"),
                "form": Option("str", "printed", "population formula", ("printed", "rotations")),
                **{k: FIELD[k] for k in ("units",)},
                **CRYSTAL,
            },
            run_ac_echo,
            presets={"5d": {}},
        ),
        Command(
            "sensitivity",
            "field and rotation-rate sensitivities against radius",
            {
                **CRYSTAL,
                "radius_min": Option("float", 5e-9, "m"),
                "radius_max": Option("float", 5e-7, "m"),
                "n_radii": Option("int", 50, "log-spaced radii"),
                "protocol": Option("str", "dc", "dc or ac", ("dc", "ac")),
                "n_pi": Option("int", 0, "pi pulses (ac)"),
                "B_dc": Option("optfloat", None, "static bias field, T (ac)"),
            },
            run_sensitivity,
            presets={"4": {}},
        ),
    ]
}


# -- configuration resolution --------------------------------------------------------


@dataclass
class RunConfig:
    experiment: str
    values: dict

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, **self.values}


def schema_for(cmd: Command) -> dict:
    return {**cmd.options, **COMMON}


def load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    if "config" in data and "tool_version" in data:
        data = data["config"]
    return dict(data)


def resolve_config(cmd: Command, figure: Optional[str], file_values: dict, flag_values: dict) -> RunConfig:
    schema = schema_for(cmd)
    exp = file_values.pop("experiment", cmd.name)
    if exp != cmd.name:
        raise ValidationError(f"config file is for {exp!r}, not {cmd.name!r}")
    file_values.pop("figure", None)
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise ValidationError(f"unknown settings for {cmd.name}: {', '.join(unknown)}")
    values = {k: o.default for k, o in schema.items()}
    if figure is not None:
        if figure not in cmd.presets:
            avail = ", ".join(sorted(cmd.presets)) or "none"
            raise ValidationError(f"no figure preset {figure!r} for {cmd.name} (available: {avail})")
        values.update(cmd.presets[figure])
    for source in (file_values, flag_values):
        for k, raw in source.items():
            values[k] = schema[k].parse(k, raw)
    if cmd.stochastic and values.get("seed") is None:
        raise ValidationError(f"{cmd.name} is stochastic: a seed is required (--seed)")
    if values["threads"] < 1:
        raise ValidationError("threads must be at least 1")
    return RunConfig(cmd.name, values)


# -- execution -----------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def output_directory(values: dict) -> Path:
    return Path(values.get("output_dir") or os.environ.get(OUTPUT_ENV) or "nvtumble_out")


def execute(cmd: Command, config: RunConfig) -> dict:
    """Run a resolved command; returns the manifest. Outputs appear only on success."""
    out_dir = output_directory(config.values)
    scratch = Path(tempfile.mkdtemp(prefix="nvtumble-"))
    start = time.perf_counter()
    try:
        summary = cmd.run(config.values, scratch)
        files = sorted(p.name for p in scratch.iterdir())
        manifest = {
            "tool": "nvtumble",
            "tool_version": __version__,
            "config": config.to_dict(),
            "wall_clock_s": time.perf_counter() - start,
            "outputs": files,
            "sha256": {f: _sha256(scratch / f) for f in files},
            "summary": summary,
        }
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in files:
            shutil.move(str(scratch / f), str(out_dir / f))
        tmp = out_dir / (MANIFEST + ".tmp")
        write_json(tmp, manifest)
        os.replace(tmp, out_dir / MANIFEST)
        return manifest
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nvtumble", description="Spin dynamics of NV centres in tumbling nanodiamonds.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS.values():
        p = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        p.add_argument("--config", help="JSON settings file (a run manifest is accepted too)")
        if cmd.presets:
            p.add_argument("--figure", choices=sorted(cmd.presets), help="load a figure preset")
        for name, opt in schema_for(cmd).items():
            default = "required" if name == "seed" and cmd.stochastic else opt.default
            p.add_argument(f"--{name.replace('_', '-')}", dest=f"opt_{name}", default=argparse.SUPPRESS,
                           help=f"{opt.help} [{default}]")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cmd = COMMANDS[args.command]
    try:
        file_values = load_config_file(args.config) if args.config else {}
        flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_")}
        config = resolve_config(cmd, getattr(args, "figure", None), file_values, flags)
        manifest = execute(cmd, config)
    except ValidationError as exc:
        print(f"nvtumble {cmd.name}: invalid input: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"nvtumble {cmd.name}: numerical failure: {exc}", file=sys.stderr)
        return 2
    out_dir = output_directory(config.values)
    print(f"wrote {', '.join(manifest['outputs'])} and {MANIFEST} to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
