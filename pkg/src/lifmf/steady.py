"""Invariant density of the fixed-rate equation and the self-consistent rate.

For a fixed arrival rate sigma the stationary density solves, with
u = v p and away from v_r,

    u'(v) = sigma u(v) / v - sigma p(v - h) 1{v >= h},

with u(0) = 0, u(1) = 0 and a downward jump u(v_r-) - u(v_r+) = D where
D = sigma * mass([1 - h, 1]). The forward direction of this ODE amplifies
errors like (v / v0)^sigma, so each stretch of length <= h is swept from
its right end towards v = 0, where the homogeneous factor (v / b)^sigma
is a contraction. The delayed term only reads stretches that are already
known, so sweeping stretches left to right (method of steps) with one
unknown right-end value per stretch gives a small dense linear system.

The delayed density is taken constant on each sub-segment, equal to the
exact mean of the density on the shifted segment. Sub-segments are
aligned under the shift by h, so the scheme moves mass exactly and the
identity D = sigma * mass([1 - h, 1]) holds to round-off.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ClosureSingular, NegativeDensity, NoRootInRange, OutOfRange, ZeroCoupling
from .grid import GridDensity, GridSpec
from .model import ModelParams

NODES_PER_PERIOD = 512
_MERGE_TOL = 1e-12


@dataclass(frozen=True)
class StretchMesh:
    """Sub-grid of [0, 1] invariant under the shift by h (index shift ``period``)."""

    x: np.ndarray
    period: int
    i_reset: int
    i_tail: int
    starts: np.ndarray
    ends: np.ndarray


def _residue(x: float, h: float) -> float:
    k = math.floor(x / h + _MERGE_TOL)
    r = x - k * h
    if r < _MERGE_TOL * max(1.0, h) or r > h - _MERGE_TOL * max(1.0, h):
        return 0.0
    return r


def build_mesh(h: float, v_r: float, nodes_per_period: int = NODES_PER_PERIOD) -> StretchMesh:
    cuts = sorted({0.0, _residue(v_r, h), _residue(1.0, h)})
    merged = [cuts[0]]
    for c in cuts[1:]:
        if c - merged[-1] > 1e-12:
            merged.append(c)
    merged.append(h)
    template = []
    spacing = h / nodes_per_period
    for a, b in zip(merged[:-1], merged[1:]):
        k = max(1, math.ceil((b - a) / spacing - 1e-9))
        template.extend(a + (b - a) * np.arange(k) / k)
    template = np.array(template)
    period = template.size

    n_periods = math.floor(1.0 / h + 1e-9) + 1
    x = (np.arange(n_periods + 1)[:, None] * h + template[None, :]).ravel()
    i_end = int(np.argmin(np.abs(x - 1.0)))
    if abs(x[i_end] - 1.0) > 1e-9:
        raise OutOfRange("mesh construction failed to place v = 1")
    x = x[: i_end + 1].copy()
    x[-1] = 1.0
    i_reset = int(np.argmin(np.abs(x - v_r)))
    x[i_reset] = v_r
    i_tail = i_end - period

    splits = sorted({0, i_reset, i_end} | set(range(0, i_end, period)))
    starts = np.array(splits[:-1], dtype=np.int64)
    ends = np.array(splits[1:], dtype=np.int64)
    return StretchMesh(x=x, period=period, i_reset=i_reset, i_tail=i_tail, starts=starts, ends=ends)


def _expm1_ratio(g: np.ndarray) -> np.ndarray:
    """expm1(g) / g with the removable singularity at 0 filled in."""
    g = np.asarray(g, dtype=float)
    out = np.ones_like(g)
    nz = np.abs(g) > 1e-12
    out[nz] = np.expm1(g[nz]) / g[nz]
    return out


def kernel_weights(x: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment decay factor (a/b)^sigma and integral of (a/s)^sigma over [a, b]."""
    a, b = x[:-1], x[1:]
    decay = np.zeros_like(a)
    weight = np.zeros_like(a)
    pos = a > 0
    log_ratio = np.log(b[pos] / a[pos])
    decay[pos] = np.exp(-sigma * log_ratio)
    weight[pos] = a[pos] * log_ratio * _expm1_ratio((1.0 - sigma) * log_ratio)
    return decay, weight


@njit(cache=True)
def _sweep(decay, weight, lengths, period, starts, ends, sigma):
    nseg = decay.size
    nz = starts.size + 1
    u_right = np.zeros((nseg, nz))
    u_left = np.zeros((nseg, nz))
    seg_mass = np.zeros((nseg, nz))
    cur = np.zeros(nz)
    for k in range(starts.size):
        for c in range(nz):
            cur[c] = 0.0
        cur[k] = 1.0
        for j in range(ends[k] - 1, starts[k] - 1, -1):
            has_src = j >= period
            for c in range(nz):
                u_right[j, c] = cur[c]
                q = seg_mass[j - period, c] / lengths[j] if has_src else 0.0
                cur[c] = decay[j] * cur[c] + sigma * weight[j] * q
                u_left[j, c] = cur[c]
                seg_mass[j, c] = (u_right[j, c] - cur[c]) / sigma + q * lengths[j]
    return u_right, u_left, seg_mass


@dataclass(frozen=True)
class PiecewiseDensity:
    """Stationary density for one rate, stored on an h-aligned sub-grid.

    ``u_left[j]``/``u_right[j]`` are v*p at the two ends of sub-segment j
    (one-sided limits), ``seg_mass[j]`` its exact mass and ``qbar[j]`` the
    delayed density used on it. Between nodes the density is evaluated
    from the same closed form the solver used, so :meth:`pdf`,
    :meth:`mass_between` and :meth:`to_grid` are consistent with ``F``.
    """

    sigma: float
    h: float
    v_r: float
    D: float
    x: np.ndarray
    u_left: np.ndarray
    u_right: np.ndarray
    seg_mass: np.ndarray
    qbar: np.ndarray
    i_reset: int
    i_tail: int
    breakpoints: np.ndarray
    samples: list = field(repr=False)

    @property
    def head_exponent(self) -> float:
        return self.sigma - 1.0

    @property
    def head_end(self) -> float:
        return min(self.h, self.v_r)

    @property
    def head_value(self) -> float:
        """p at the right end of the head interval, p(min(h, v_r)-)."""
        j = int(np.searchsorted(self.x, self.head_end, side="left")) - 1
        return float(self.u_right[j] / self.x[j + 1])

    @property
    def C(self) -> float:
        """Coefficient of p(v) = C (v/h)^(sigma-1) on the head; may overflow for huge sigma."""
        with np.errstate(over="ignore"):
            return float(self.head_value * np.power(self.h / self.head_end, self.sigma - 1.0))

    def head(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.head_value * (v / self.head_end) ** (self.sigma - 1.0)

    def total_mass(self) -> float:
        return float(self.seg_mass.sum())

    def tail_mass(self) -> float:
        return float(self.seg_mass[self.i_tail:].sum())

    def _u_inside(self, j: np.ndarray, v: np.ndarray) -> np.ndarray:
        b = self.x[j + 1]
        lr = np.log(b / v)
        decay = np.exp(-self.sigma * lr)
        weight = v * lr * _expm1_ratio((1.0 - self.sigma) * lr)
        return decay * self.u_right[j] + self.sigma * weight * self.qbar[j]

    def pdf(self, v) -> np.ndarray:
        """Density at v in (0, 1]; right-continuous at v_r."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        out = np.empty_like(v)
        j = np.clip(np.searchsorted(self.x, v, side="right") - 1, 0, self.x.size - 2)
        head = v < self.head_end
        out[head] = self.head(v[head])
        rest = ~head
        out[rest] = self._u_inside(j[rest], v[rest]) / v[rest]
        return out

    def cdf(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        cum = np.concatenate(([0.0], np.cumsum(self.seg_mass)))
        j = np.clip(np.searchsorted(self.x, v, side="right") - 1, 0, self.x.size - 2)
        out = cum[j].copy()
        inside = v > self.x[j]
        jj = j[inside]
        vv = v[inside]
        partial = (self._u_inside(jj, vv) - self.u_left[jj]) / self.sigma + self.qbar[jj] * (vv - self.x[jj])
        # sub-segment mass of [x_j, v]; integrating the ODE gives (u(v) - u(x_j+))/sigma + int q
        out[inside] += partial
        out[v >= 1.0] = cum[-1]
        return out

    def mass_between(self, a: float, b: float) -> float:
        lo, hi = self.cdf([a, b])
        return float(hi - lo)

    def to_grid(self, spec: GridSpec) -> GridDensity:
        """Exact cell averages on a finite-volume grid."""
        edges = np.arange(spec.n + 1) / spec.n
        cells = np.diff(self.cdf(edges))
        return GridDensity(spec, np.clip(cells, 0.0, None) * spec.n)

    def csv_rows(self):
        for seg_id, (v, p) in enumerate(self.samples):
            for vi, pi in zip(v, p):
                yield (float(vi), float(pi), seg_id)


def _breakpoints(h: float, v_r: float) -> np.ndarray:
    pts = {0.0, 1.0}
    k = 1
    while k * h < 1.0 - 1e-12:
        pts.add(k * h)
        k += 1
    k = 0
    while v_r + k * h < 1.0 - 1e-12:
        pts.add(v_r + k * h)
        k += 1
    arr = np.array(sorted(pts))
    keep = np.concatenate(([True], np.diff(arr) > 1e-12))
    return arr[keep]


def _samples(x, u_left, u_right, breakpoints):
    """Node samples (v, p) grouped by interval between consecutive breakpoints."""
    out = []
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        j0 = int(np.argmin(np.abs(x - lo)))
        j1 = int(np.argmin(np.abs(x - hi)))
        segs = np.arange(j0, j1)
        v = np.concatenate((x[segs], [x[j1]]))
        u = np.concatenate((u_left[segs], [u_right[j1 - 1]]))
        if v[0] == 0.0:
            v, u = v[1:], u[1:]
        out.append((v, u / v))
    return out


def invariant_density(sigma: float, params: ModelParams, nodes_per_period: int = NODES_PER_PERIOD) -> PiecewiseDensity:
    """Stationary probability density of the linear equation at rate ``sigma``."""
    if not sigma > 0 or not math.isfinite(sigma):
        raise OutOfRange(f"sigma must be positive and finite, got {sigma}")
    h, v_r = params.h, params.v_r
    mesh = build_mesh(h, v_r, nodes_per_period)
    x = mesh.x
    lengths = np.diff(x)
    decay, weight = kernel_weights(x, sigma)
    u_r, u_l, m = _sweep(decay, weight, lengths, mesh.period, mesh.starts, mesh.ends, float(sigma))

    n_str = mesh.starts.size
    nz = n_str + 1  # right-end value of every stretch, then D
    A = np.zeros((nz, nz))
    rhs = np.zeros(nz)
    for k in range(n_str - 1):
        A[k] = -u_l[mesh.starts[k + 1]]
        A[k, k] += 1.0
        if mesh.ends[k] == mesh.i_reset:
            A[k, n_str] = -1.0
    A[n_str - 1, n_str - 1] = 1.0  # u(1-) = 0
    A[n_str] = m.sum(axis=0)
    rhs[n_str] = 1.0
    try:
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e12:
            raise ClosureSingular(f"closure system condition number {cond:.3g} at sigma={sigma}")
        z = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise ClosureSingular(f"closure system singular at sigma={sigma}: {exc}") from None

    u_right = u_r @ z
    u_left = u_l @ z
    seg_mass = m @ z
    qbar = np.zeros_like(lengths)
    qbar[mesh.period:] = seg_mass[: -mesh.period] / lengths[mesh.period:]
    D = float(z[-1])

    p_nodes = np.concatenate((u_left[1:] / x[1:-1], u_right / x[1:]))
    if p_nodes.min() < -1e-8 or seg_mass.min() < -1e-8:
        raise NegativeDensity(f"negative density {p_nodes.min():.3g} at sigma={sigma}")

    bps = _breakpoints(h, v_r)
    return PiecewiseDensity(
        sigma=float(sigma), h=h, v_r=v_r, D=D, x=x,
        u_left=u_left, u_right=u_right, seg_mass=seg_mass, qbar=qbar,
        i_reset=mesh.i_reset, i_tail=mesh.i_tail, breakpoints=bps,
        samples=_samples(x, u_left, u_right, bps),
    )


def F(sigma: float, params: ModelParams, nodes_per_period: int = NODES_PER_PERIOD) -> float:
    """Stationary mass of the threshold interval [1 - h, 1] at rate ``sigma``."""
    return invariant_density(sigma, params, nodes_per_period).tail_mass()


def G(sigma: float, params: ModelParams) -> float:
    if params.J == 0:
        raise ZeroCoupling("G is undefined for J = 0; the steady rate is sigma0")
    return (1.0 - params.sigma0 / sigma) / params.J


@dataclass
class SteadyState:
    sigma_bar: float
    r_bar: float
    tail_mass: float
    density: PiecewiseDensity = field(repr=False)

    def residual(self, params: ModelParams) -> float:
        """Relative mismatch of sigma_bar with sigma0 / (1 - J F(sigma_bar))."""
        return abs(self.sigma_bar - params.sigma0 / (1.0 - params.J * self.tail_mass)) / self.sigma_bar

    def to_dict(self) -> dict:
        return {"sigma_bar": self.sigma_bar, "r_bar": self.r_bar, "tail_mass": self.tail_mass}


@dataclass
class SigmaScan:
    sigmas: np.ndarray
    F_values: np.ndarray
    G_values: np.ndarray
    roots: list[SteadyState]
    multiplicity: int
    claim: str
    note: str = ""

    def csv_rows(self):
        for s, f, g in zip(self.sigmas, self.F_values, self.G_values):
            yield (float(s), float(f), float(g), float(f - g))


def _bisect(fun, lo, hi, f_lo, rtol=1e-14, max_iter=200):
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = fun(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo <= rtol * lo:
            break
    return 0.5 * (lo + hi)


def _theory_claim(params: ModelParams) -> str:
    bound = 1.0 + params.n_reset_jumps
    if abs(params.J - bound) <= 1e-9 * bound:
        return "no_claim"
    if params.J < bound:
        return "at_least_one"
    if params.sigma0 < (1.0 - params.h) / (4.0 * params.J):
        return "at_least_two"
    return "no_claim"


def find_steady_states(params: ModelParams, sigma_range: tuple[float, float] | None = None,
                       n_scan: int = 400, nodes_per_period: int = NODES_PER_PERIOD,
                       threads: int = 1) -> SigmaScan:
    """Scan F - G on a log grid, bracket sign changes and bisect each root.

    The multiplicity is the number of sign changes found, a lower bound on
    the number of steady states (tangential roots are invisible to it).
    """
    s0 = params.sigma0
    if params.J == 0:
        dens = invariant_density(s0, params, nodes_per_period)
        tail = dens.tail_mass()
        root = SteadyState(s0, s0 * tail, tail, dens)
        return SigmaScan(np.array([s0]), np.array([tail]), np.array([0.0]), [root], 1, "uncoupled")
    lo, hi = sigma_range or (s0 * (1 + 1e-9), 1e4 * s0)
    if not 0 < lo < hi:
        raise OutOfRange(f"bad sigma range ({lo}, {hi})")
    sigmas = np.geomspace(lo, hi, n_scan)
    if sigma_range is None:
        # G(sigma0) = 0 < F(sigma0) exactly; a root can sit closer to sigma0 than the scan start
        sigmas = np.concatenate(([s0], sigmas))

    def f_at(s):
        return F(s, params, nodes_per_period)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            F_vals = np.array(list(pool.map(f_at, sigmas)))
    else:
        F_vals = np.array([f_at(s) for s in sigmas])
    G_vals = (1.0 - s0 / sigmas) / params.J
    H = F_vals - G_vals

    roots = []
    for i in np.nonzero(np.sign(H[:-1]) * np.sign(H[1:]) < 0)[0]:
        s_bar = _bisect(lambda s: f_at(s) - G(s, params), sigmas[i], sigmas[i + 1], H[i])
        dens = invariant_density(s_bar, params, nodes_per_period)
        tail = dens.tail_mass()
        roots.append(SteadyState(s_bar, s_bar * tail, tail, dens))
    note = ""
    if not roots:
        note = str(NoRootInRange(f"no sign change of F - G on [{lo:.4g}, {hi:.4g}]"))
    return SigmaScan(sigmas, F_vals, G_vals, roots, len(roots), _theory_claim(params), note)
