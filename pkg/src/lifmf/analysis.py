"""Contraction constants and empirical checks of exponential TV decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace
from typing import Sequence

import numpy as np

from . import grid, pde, steady
from .errors import InsufficientData, NoRootInRange, OutOfRange, ToleranceExceeded
from .model import ModelParams, uniqueness_bound

ENVELOPE_SLACK = 0.05
INCONCLUSIVE_OMEGA = 1e-12


@dataclass(frozen=True)
class ContractionConstants:
    t0: float
    c: float
    a: float
    omega: float
    prefactor: float

    @property
    def stable(self) -> bool | None:
        """omega < 0, or None when |omega| is below 1e-12."""
        if abs(self.omega) < INCONCLUSIVE_OMEGA:
            return None
        return self.omega < 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stable"] = self.stable
        return d


def constants(params: ModelParams) -> ContractionConstants:
    h, s0, J = params.h, params.sigma0, params.J
    t0 = math.log(4.0 / h)
    c = 0.5 * s0 * (h / 4.0) ** s0
    log1mc = math.log1p(-c)
    a = -log1mc / t0
    omega = 2.0 * s0 * J / ((1.0 - c) * (1.0 - J) ** 2) + log1mc / math.log(4.0 / h) if J < 1 else math.inf
    return ContractionConstants(t0=t0, c=c, a=a, omega=omega, prefactor=1.0 / (1.0 - c))


@dataclass
class DecayReport:
    times: np.ndarray
    tv_values: np.ndarray
    envelope: np.ndarray | None
    fitted_rate: float | None
    theory_rate: float | None
    window: tuple[float, float]
    max_violation: float = 0.0
    monotone: bool | None = None
    note: str = ""

    def csv_rows(self):
        env = self.envelope if self.envelope is not None else np.full(self.times.size, np.nan)
        for t, tv, e in zip(self.times, self.tv_values, env):
            yield (float(t), float(tv), float(e))

    def to_dict(self) -> dict:
        return {
            "fitted_rate": self.fitted_rate,
            "theory_rate": self.theory_rate,
            "window": list(self.window),
            "max_violation": self.max_violation,
            "monotone": self.monotone,
            "tv_initial": float(self.tv_values[0]) if self.tv_values.size else None,
            "tv_final": float(self.tv_values[-1]) if self.tv_values.size else None,
            "note": self.note,
        }


def fit_rate(times: Sequence[float], tv_values: Sequence[float], window: tuple[float, float] | None = None,
             floor: float = 1e-12) -> float:
    """Decay rate from a least-squares fit of log(tv) against t (positive means decay).

    The default window is the second half of the time span.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(tv_values, dtype=float)
    if window is None:
        window = (t[0] + 0.5 * (t[-1] - t[0]), t[-1]) if t.size else (0.0, 0.0)
    keep = (t >= window[0]) & (t <= window[1]) & (y > floor)
    if keep.sum() < 5:
        raise InsufficientData(f"{int(keep.sum())} usable points in window {window}, need 5")
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    return float(-slope)


def _tail_window(times: np.ndarray, tv: np.ndarray, floor: float = 1e-10) -> tuple[float, float]:
    """Second half of the span over which tv stays above ``floor``."""
    above = np.nonzero(tv > floor)[0]
    if above.size == 0:
        return (float(times[0]), float(times[0]))
    end = float(times[above[-1]])
    return (float(times[0] + 0.5 * (end - times[0])), end)


def _sample_times(t_end: float, n_samples: int) -> list[float]:
    return list(np.linspace(0.0, t_end, n_samples + 1))


def _violation(tv: np.ndarray, envelope: np.ndarray) -> float:
    """Largest excess of tv over the slackened envelope; inf if the run produced non-finite values."""
    if not np.all(np.isfinite(tv)):
        return math.inf
    return float(np.max(tv - (1 + ENVELOPE_SLACK) * envelope))


def _check(report: DecayReport, raise_on_violation: bool, what: str) -> DecayReport:
    if raise_on_violation and report.max_violation > 0:
        raise ToleranceExceeded(f"{what}: TV exceeds the {ENVELOPE_SLACK:.0%} slack envelope "
                                f"by {report.max_violation:.3g}")
    return report


def verify_linear_contraction(mu0_a: grid.GridDensity, mu0_b: grid.GridDensity, params: ModelParams,
                              t_end: float = 200.0, n: int | None = None, dt: float | str = "auto",
                              n_samples: int = 400, scheme: str = "upwind",
                              raise_on_violation: bool = True, enforce_cfl: bool = True) -> DecayReport:
    """Run the J = 0 equation from two data and compare TV with e^{-a(t - t0)} TV(0).

    The envelope is checked with 5% slack at every sampled time; the
    monotone flag records whether the TV series never increases (beyond
    1e-12 round-off). ``n`` must match the grids of the two initial data.
    """
    if mu0_a.n != mu0_b.n:
        raise grid.GridMismatch(f"initial data on {mu0_a.n} and {mu0_b.n} cells")
    if n is not None and n != mu0_a.n:
        raise grid.GridMismatch(f"n={n} but the initial data have {mu0_a.n} cells")
    linear = replace(params, J=0.0)
    k = constants(linear)
    cfg = pde.SolveConfig(n=mu0_a.n, dt=dt, t_end=t_end, output_times=_sample_times(t_end, n_samples),
                          scheme=scheme, enforce_cfl=enforce_cfl)
    ra, rb = pde.solve(mu0_a, linear, cfg), pde.solve(mu0_b, linear, cfg)
    times = np.array([s.t for s in ra.states])
    tv = np.array([grid.tv_distance(x.g, y.g) for x, y in zip(ra.states, rb.states)])
    envelope = np.exp(-k.a * (times - k.t0)) * tv[0]
    window = _tail_window(times, tv)
    if tv[0] == 0:
        return DecayReport(times, tv, envelope, None, k.a, window, 0.0, True, "identical initial data")
    violation = _violation(tv, envelope)
    try:
        fitted = fit_rate(times, tv, window)
    except InsufficientData as exc:
        fitted, note = None, str(exc)
    else:
        note = ""
    report = DecayReport(times, tv, envelope, fitted, k.a, window, max(violation, 0.0),
                         bool(np.all(np.diff(tv) <= 1e-12)), note)
    return _check(report, raise_on_violation, "linear contraction")


def verify_nonlinear_stability(mu0: grid.GridDensity, params: ModelParams, t_end: float = 200.0,
                               n: int | None = None, dt: float | str = "auto", n_samples: int = 400,
                               scheme: str = "muscl", steady_state: grid.GridDensity | None = None,
                               raise_on_violation: bool = True, enforce_cfl: bool = True) -> DecayReport:
    """Run the nonlinear equation and compare TV to the steady state with the stability envelope.

    Inside the weak-coupling region the envelope (1/(1-c)) e^{omega t} TV(0)
    is asserted with 5% slack. Outside it the run is still reported but
    ``theory_rate`` and ``envelope`` are None and nothing is asserted.
    """
    if n is not None and n != mu0.n:
        raise grid.GridMismatch(f"n={n} but the initial datum has {mu0.n} cells")
    if params.J <= 0:
        raise OutOfRange("nonlinear stability needs J > 0")
    k = constants(params)
    inside = params.J < uniqueness_bound(params.h, params.sigma0) and k.omega < 0
    if steady_state is None:
        scan = steady.find_steady_states(params)
        if not scan.roots:
            raise NoRootInRange(f"no steady state found: {scan.note}")
        steady_state = scan.roots[0].density.to_grid(mu0.spec)
    cfg = pde.SolveConfig(n=mu0.n, dt=dt, t_end=t_end, output_times=_sample_times(t_end, n_samples),
                          scheme=scheme, enforce_cfl=enforce_cfl)
    res = pde.solve(mu0, params, cfg)
    live = [s for s in res.states if not s.blown_up]
    times = np.array([s.t for s in live])
    tv = np.array([grid.tv_distance(s.g, steady_state) for s in live])
    window = _tail_window(times, tv) if times.size else (0.0, 0.0)
    try:
        fitted = fit_rate(times, tv, window)
    except InsufficientData:
        fitted = None
    note = "blow-up during run" if res.blowup.blown_up else ""
    if not inside:
        note = (note + "; " if note else "") + "outside the weak-coupling region, no claim"
        return DecayReport(times, tv, None, fitted, None, window, 0.0, None, note)
    envelope = k.prefactor * np.exp(k.omega * times) * tv[0]
    violation = _violation(tv, envelope)
    report = DecayReport(times, tv, envelope, fitted, -k.omega, window, max(violation, 0.0),
                         bool(np.all(np.diff(tv) <= 1e-12)), note)
    return _check(report, raise_on_violation, "nonlinear stability")
