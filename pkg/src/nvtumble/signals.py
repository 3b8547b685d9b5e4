"""Ensemble signal traces, their CSV form, and decay-time estimators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit

from .errors import NumericalError, ValidationError

TRACE_COLUMNS = ("t", "S_plus", "S_minus", "stderr_plus", "stderr_minus")


@dataclass
class SignalTrace:
    """Upper (+) and lower (-) branches of an ensemble signal.

    ``time_unit`` records whether ``times`` are seconds or a dimensionless
    unit such as ``"1/k_d"``. ``extra`` holds additional named columns
    (reference curves) written after the standard ones.
    """

    times: np.ndarray
    S_plus: np.ndarray
    S_minus: np.ndarray
    stderr_plus: Optional[np.ndarray] = None
    stderr_minus: Optional[np.ndarray] = None
    time_unit: str = "s"
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.S_plus = np.asarray(self.S_plus, dtype=float)
        self.S_minus = np.asarray(self.S_minus, dtype=float)
        n = self.times.size
        zeros = np.zeros(n)
        self.stderr_plus = zeros.copy() if self.stderr_plus is None else np.asarray(self.stderr_plus, float)
        self.stderr_minus = zeros.copy() if self.stderr_minus is None else np.asarray(self.stderr_minus, float)
        for name in ("S_plus", "S_minus", "stderr_plus", "stderr_minus"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have the same length as times")
        for k, v in self.extra.items():
            self.extra[k] = np.asarray(v, dtype=float)
            if self.extra[k].shape != (n,):
                raise ValidationError(f"extra column {k!r} has the wrong length")

    def __len__(self) -> int:
        return self.times.size

    @property
    def amplitude(self) -> np.ndarray:
        return self.S_plus - self.S_minus

    @property
    def midline(self) -> np.ndarray:
        return 0.5 * (self.S_plus + self.S_minus)

    def in_bounds(self, tol: float = 1e-9) -> bool:
        s = np.concatenate([self.S_plus, self.S_minus])
        return bool(np.all(s >= -tol) and np.all(s <= 1 + tol))

    def to_csv(self, path, time_header: str = "t", envelope_only: bool = False) -> None:
        """Write ``t,S_plus,S_minus,stderr_plus,stderr_minus[,extra...]``.

        ``envelope_only`` drops the error columns (the solver envelope layout
        ``t_kd,S_plus,S_minus``).
        """
        cols = [self.times, self.S_plus, self.S_minus]
        header = [time_header, "S_plus", "S_minus"]
        if not envelope_only:
            cols += [self.stderr_plus, self.stderr_minus]
            header += ["stderr_plus", "stderr_minus"]
        for k, v in self.extra.items():
            cols.append(v)
            header.append(k)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([format_float(x) for x in row])

    @classmethod
    def from_csv(cls, path, time_unit: str = "s") -> "SignalTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        col = {h: data[:, i] for i, h in enumerate(header)}
        std = {"S_plus", "S_minus", "stderr_plus", "stderr_minus"}
        extra = {h: col[h] for h in header[1:] if h not in std}
        return cls(
            data[:, 0],
            col["S_plus"],
            col["S_minus"],
            col.get("stderr_plus"),
            col.get("stderr_minus"),
            time_unit=time_unit,
            extra=extra,
        )


def format_float(x) -> str:
    """Shortest round-tripping text for a number; integers stay integers."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def decay_time_1e(times: np.ndarray, y: np.ndarray) -> float:
    """First time at which ``y / y[0]`` falls to 1/e (linear interpolation)."""
    times = np.asarray(times, float)
    yn = np.asarray(y, float) / y[0]
    target = math.exp(-1.0)
    below = np.nonzero(yn <= target)[0]
    if below.size == 0:
        raise NumericalError("signal never reaches 1/e of its initial value in the sampled window")
    k = below[0]
    if k == 0:
        return float(times[0])
    t0, t1, y0, y1 = times[k - 1], times[k], yn[k - 1], yn[k]
    return float(t0 + (y0 - target) * (t1 - t0) / (y0 - y1))


def fit_exponential_decay(times: np.ndarray, y: np.ndarray, t_max: Optional[float] = None) -> float:
    """Least-squares time constant of ``A exp(-t/tau)`` fitted to ``y``.

    By default the fit window is the first e-fold, ``t <= decay_time_1e``;
    this is where a single exponential describes the data best.
    """
    times = np.asarray(times, float)
    y = np.asarray(y, float)
    if t_max is None:
        t_max = decay_time_1e(times, y)
    mask = times <= t_max + 1e-12
    if mask.sum() < 3:
        raise NumericalError("too few points inside the fit window")
    guess = max(t_max, 1e-12)
    popt, _ = curve_fit(lambda t, A, tau: A * np.exp(-t / tau), times[mask], y[mask], p0=(y[0], guess))
    return float(popt[1])


def log_linear_rate(times: np.ndarray, y: np.ndarray) -> float:
    """Slope of -log(y) against t by ordinary least squares (the fitted decay rate)."""
    times = np.asarray(times, float)
    ly = np.log(np.asarray(y, float))
    slope = np.polyfit(times, ly, 1)[0]
    return float(-slope)
