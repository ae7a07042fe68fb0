"""Explicit finite-volume solver for the mean-field equation.

Per step: leak flux toward v = 0, exact-shift jump by ``m_jump`` cells,
the mass pushed past threshold redeposited in the reset cell, then the rate
closure sigma = sigma0 / (1 - J * tail) re-evaluated.

Two leak fluxes are available. ``upwind`` takes the face value from the
cell on the right; its update matrix has nonnegative entries and unit
column sums for dt <= 1 / ((n - 1) + sigma), so it is a Markov matrix and
contracts total variation exactly. ``muscl`` reconstructs the face value
with a minmod-limited slope; it is second order away from extrema, still
conservative and positive for dt <= 1 / (1.5 (n - 1) + sigma), but the
limiter makes it nonlinear.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import CflViolation, OutOfRange
from .grid import GridDensity, mass, tail_mass
from .model import ModelParams

log = logging.getLogger(__name__)


class BlowUp(Exception):
    """Raised by :func:`step` when the rate closure breaks down.

    Not a :class:`~lifmf.errors.LifError`: blow-up is a legitimate outcome
    and :func:`solve` turns it into a report instead of failing.
    """

    def __init__(self, state: "PdeState", reason: str):
        super().__init__(f"blow-up at t={state.t:.6g}: {reason}")
        self.state = state
        self.reason = reason


@dataclass(frozen=True)
class PdeState:
    g: GridDensity
    t: float
    sigma_t: float
    r_t: float
    blown_up: bool = False
    t_blow: float | None = None


@dataclass(frozen=True)
class SolveConfig:
    n: int = 400
    dt: float | str = "auto"
    t_end: float = 1.0
    output_times: Sequence[float] | None = None
    eps_blow: float = 1e-6
    sigma_cap: float = 1e8
    cfl_safety: float = 0.9
    enforce_cfl: bool = True
    scheme: str = "muscl"
    record_steps: bool = False

    def outputs(self) -> list[float]:
        extra = [] if self.output_times is None else self.output_times
        times = sorted(set(float(t) for t in extra) | {float(self.t_end)})
        if times[0] < 0:
            raise OutOfRange("output times must be nonnegative")
        return times


@dataclass
class BlowUpReport:
    blown_up: bool = False
    t_blow: float | None = None
    sigma_at_stop: float | None = None
    reason: str | None = None
    eps_blow: float = 1e-6
    sigma_cap: float = 1e8

    def to_dict(self) -> dict:
        return {
            "blown_up": self.blown_up,
            "t_blow": self.t_blow,
            "sigma_at_stop": self.sigma_at_stop,
            "reason": self.reason,
            "eps_blow": self.eps_blow,
            "sigma_cap": self.sigma_cap,
        }


@dataclass
class SolveResult:
    states: list[PdeState]
    series: dict[str, np.ndarray]
    blowup: BlowUpReport
    steps: list[PdeState] = field(default_factory=list)

    def final(self) -> PdeState:
        return self.states[-1]


SCHEMES = ("muscl", "upwind")


def cfl_limit(n: int, sigma: float, scheme: str = "muscl") -> float:
    """Largest dt keeping every update coefficient nonnegative."""
    leak = 1.5 if scheme == "muscl" else 1.0
    return 1.0 / (leak * (n - 1) + sigma)


def closure(tail: float, params: ModelParams, eps_blow: float = 1e-6) -> tuple[float, float | None]:
    """Return (sigma, denominator); sigma is inf when the denominator is below ``eps_blow``."""
    denom = 1.0 - params.J * tail
    if denom <= eps_blow:
        return np.inf, denom
    return params.sigma0 / denom, denom


def initial_state(mu0: GridDensity, params: ModelParams) -> PdeState:
    tail = tail_mass(mu0)
    sigma, _ = closure(tail, params, 0.0)
    return PdeState(g=mu0, t=0.0, sigma_t=sigma, r_t=sigma * tail)


def _face_values(p: np.ndarray, scheme: str) -> np.ndarray:
    """Value at the left face of cells 1..n-1, the upwind side of each interior face."""
    if scheme == "upwind":
        return p[1:]
    d = np.diff(p)
    slope = np.zeros_like(p)
    a, b = d[:-1], d[1:]
    slope[1:-1] = np.where(a * b > 0, np.sign(b) * np.minimum(np.abs(a), np.abs(b)), 0.0)
    return p[1:] - 0.5 * slope[1:]


def _advance(p: np.ndarray, sigma: float, dt: float, m: int, i_reset: int, faces: np.ndarray,
             scheme: str = "muscl") -> tuple[np.ndarray, float]:
    n = p.size
    flux = faces * _face_values(p, scheme)  # leftward through interior faces
    dp = np.zeros(n)
    dp[:-1] += flux
    dp[1:] -= flux
    dp *= n
    jumped = sigma * p
    dp -= jumped
    dp[m:] += jumped[:-m]
    fired = jumped[n - m:].sum()
    dp[i_reset] += fired
    return p + dt * dp, fired / n


def step(state: PdeState, params: ModelParams, dt: float, *, eps_blow: float = 1e-6,
         sigma_cap: float = 1e8, enforce_cfl: bool = True, scheme: str = "muscl") -> PdeState:
    """One explicit step; raises :class:`BlowUp` or :class:`CflViolation`."""
    if state.blown_up:
        raise BlowUp(state, "state already blown up")
    g = state.g
    limit = cfl_limit(g.n, state.sigma_t, scheme)
    if enforce_cfl and dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.3g} exceeds limit {limit:.3g}")
    faces = np.arange(1, g.n) / g.n
    new, _ = _advance(g.values, state.sigma_t, dt, g.m_jump, g.i_reset, faces, scheme)
    out = g.with_values(new)
    return _close(out, state.t + dt, params, eps_blow, sigma_cap)


def _close(g: GridDensity, t: float, params: ModelParams, eps_blow: float, sigma_cap: float) -> PdeState:
    tail = tail_mass(g)
    sigma, denom = closure(tail, params, eps_blow)
    if not np.isfinite(sigma) or sigma >= sigma_cap:
        frozen = PdeState(g=g, t=t, sigma_t=sigma, r_t=sigma * tail, blown_up=True, t_blow=t)
        reason = f"1 - J*tail = {denom:.3g}" if not np.isfinite(sigma) else f"sigma = {sigma:.3g}"
        raise BlowUp(frozen, reason)
    return PdeState(g=g, t=t, sigma_t=sigma, r_t=sigma * tail)


def solve(mu0: GridDensity, params: ModelParams, cfg: SolveConfig) -> SolveResult:
    """March ``mu0`` to every output time; blow-up freezes the remaining outputs."""
    outputs = cfg.outputs()
    n, m, i_reset = mu0.n, mu0.m_jump, mu0.i_reset
    faces = np.arange(1, n) / n
    if cfg.scheme not in SCHEMES:
        raise OutOfRange(f"unknown scheme {cfg.scheme!r}, expected one of {SCHEMES}")
    fixed_dt = None if cfg.dt == "auto" else float(cfg.dt)
    if fixed_dt is not None and fixed_dt <= 0:
        raise OutOfRange(f"dt must be positive, got {cfg.dt}")

    report = BlowUpReport(eps_blow=cfg.eps_blow, sigma_cap=cfg.sigma_cap)
    states: list[PdeState] = []
    steps: list[PdeState] = []
    rec_t, rec_sigma, rec_r, rec_tail, rec_mass = [], [], [], [], []

    def record(s: PdeState):
        rec_t.append(s.t)
        rec_sigma.append(s.sigma_t)
        rec_r.append(s.r_t)
        rec_tail.append(tail_mass(s.g))
        rec_mass.append(mass(s.g))
        if cfg.record_steps:
            steps.append(s)

    try:
        state = _close(mu0, 0.0, params, cfg.eps_blow, cfg.sigma_cap)
    except BlowUp as exc:
        state = exc.state
        report.blown_up, report.t_blow, report.sigma_at_stop = True, 0.0, state.sigma_t
        report.reason = f"initial datum: {exc.reason}"
    if not state.blown_up:
        record(state)

    p = mu0.values.copy()
    t = 0.0
    k_out = 0
    while k_out < len(outputs) and not state.blown_up and outputs[k_out] <= 0.0:
        states.append(state)
        k_out += 1
    while k_out < len(outputs) and not state.blown_up:
        target = outputs[k_out]
        limit = cfl_limit(n, state.sigma_t, cfg.scheme)
        dt = cfg.cfl_safety * limit if fixed_dt is None else fixed_dt
        if cfg.enforce_cfl and dt > limit * (1 + 1e-12):
            raise CflViolation(f"dt={dt:.3g} exceeds limit {limit:.3g} at t={t:.6g}")
        last = t + dt >= target * (1 - 1e-14) or target - (t + dt) < 1e-12
        if last:
            dt = target - t
        p, _ = _advance(p, state.sigma_t, dt, m, i_reset, faces, cfg.scheme)
        t = target if last else t + dt
        try:
            state = _close(mu0.with_values(p), t, params, cfg.eps_blow, cfg.sigma_cap)
        except BlowUp as exc:
            state = exc.state
            report.blown_up, report.t_blow = True, t
            report.sigma_at_stop = rec_sigma[-1] if not np.isfinite(state.sigma_t) else state.sigma_t
            report.reason = exc.reason
            log.info("blow-up at t=%g (%s)", t, exc.reason)
            break
        record(state)
        if last:
            states.append(state)
            k_out += 1
    while k_out < len(outputs):
        frozen = state if state.blown_up else replace(state, blown_up=True)
        states.append(replace(frozen, t=outputs[k_out], blown_up=True, t_blow=report.t_blow))
        k_out += 1

    series = {
        "t": np.array(rec_t),
        "sigma": np.array(rec_sigma),
        "r": np.array(rec_r),
        "tail_mass": np.array(rec_tail),
        "mass": np.array(rec_mass),
    }
    return SolveResult(states=states, series=series, blowup=report, steps=steps)


def generator_action(f: Callable, df: Callable, params: ModelParams, sigma: float, v: np.ndarray) -> np.ndarray:
    """(A_sigma f)(v) = -v f'(v) + sigma [f(v+h) 1{v<1-h} + f(v_r) 1{v>=1-h} - f(v)]."""
    v = np.asarray(v, dtype=float)
    h = params.h
    below = v < 1.0 - h
    shifted = np.where(below, f(np.where(below, v + h, v)), f(np.full_like(v, params.v_r)))
    return -v * df(v) + sigma * (shifted - f(v))


def _numeric_derivative(f: Callable) -> Callable:
    eps = 1e-6

    def df(v):
        return (f(v + eps) - f(v - eps)) / (2 * eps)

    return df


def weak_residual(states: Sequence[PdeState], params: ModelParams, f: Callable,
                  df: Callable | None = None) -> float:
    """|mu_T f - mu_0 f - int_0^T mu_s(A_sigma(s) f) ds| over the stored states.

    Time integral by the trapezoid rule over the states, space by the
    midpoint rule with the grid's own tail classification (cells below
    n - m_jump jump by h, the rest reset).
    """
    if len(states) < 2:
        raise OutOfRange("weak residual needs at least two states")
    df = df or _numeric_derivative(f)
    g0 = states[0].g
    v = g0.centers
    n, m = g0.n, g0.m_jump
    below = np.arange(n) < n - m
    h_eff = m / n
    fv = f(v)
    shifted = np.where(below, f(np.where(below, v + h_eff, v)), f(np.full_like(v, params.v_r)))
    lead = -v * df(v)
    jump = shifted - fv
    integrand = np.array([np.dot(s.g.values, lead + s.sigma_t * jump) * s.g.dv for s in states])
    times = np.array([s.t for s in states])
    integral = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times)))
    lhs = states[-1].g.integrate(f) - states[0].g.integrate(f)
    return abs(lhs - integral)
