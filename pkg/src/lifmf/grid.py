"""Cell-average densities on [0, 1] aligned with the jump size.

The grid is chosen so that ``h`` is an exact whole number of cells; the
nonlocal jump term is then an index shift by ``m_jump`` cells and the
threshold interval [1 - h, 1] is exactly the last ``m_jump`` cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from .errors import GridMismatch, OutOfRange, ZeroMass

ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    n: int
    m_jump: int
    i_reset: int
    h_effective: float
    reset_offset: float

    @property
    def dv(self) -> float:
        return 1.0 / self.n

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n


def aligned_size(n_requested: int, h: float) -> tuple[int, int]:
    """Smallest n >= n_requested with n*h integral, and that integer.

    If no n up to 2*n_requested aligns (h irrational-looking), keep
    n_requested and round the shift; the caller reports the effective h.
    """
    if n_requested < 2:
        raise OutOfRange(f"grid needs at least 2 cells, got {n_requested}")
    for n in range(n_requested, 2 * n_requested + 1):
        x = n * h
        if abs(x - round(x)) <= ALIGN_TOL * max(1.0, x) and round(x) >= 1:
            return n, int(round(x))
    return n_requested, max(1, int(round(n_requested * h)))


def cell_index(v: float, n: int) -> int:
    """Index of the cell [i/n, (i+1)/n) containing v, with v = 1 in the last cell."""
    i = math.floor(v * n + ALIGN_TOL)
    return min(max(i, 0), n - 1)


def reset_cell(v_r: float, n: int) -> int:
    """Cell (a, b] holding v_r: on an edge the left cell wins, since the leak moves reset mass left."""
    i = math.ceil(v_r * n - ALIGN_TOL) - 1
    return min(max(i, 0), n - 1)


def make_spec(n_requested: int, h: float, v_r: float) -> GridSpec:
    n, m = aligned_size(n_requested, h)
    i_reset = reset_cell(v_r, n)
    return GridSpec(
        n=n,
        m_jump=m,
        i_reset=i_reset,
        h_effective=m / n,
        reset_offset=v_r - (i_reset + 0.5) / n,
    )


@dataclass(frozen=True)
class GridDensity:
    spec: GridSpec
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def dv(self) -> float:
        return self.spec.dv

    @property
    def m_jump(self) -> int:
        return self.spec.m_jump

    @property
    def i_reset(self) -> int:
        return self.spec.i_reset

    @property
    def centers(self) -> np.ndarray:
        return self.spec.centers

    def with_values(self, values: np.ndarray) -> "GridDensity":
        return replace(self, values=values)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Midpoint rule for the pairing of the density with ``f``."""
        return float(np.dot(self.values, f(self.centers)) * self.dv)


def mass(g: GridDensity) -> float:
    return float(g.values.sum() * g.dv)


def tail_mass(g: GridDensity) -> float:
    """Mass on [1 - h, 1], i.e. the last ``m_jump`` cells."""
    return float(g.values[g.n - g.m_jump:].sum() * g.dv)


def head_mass(g: GridDensity) -> float:
    """Mass on [0, 1 - h)."""
    return float(g.values[: g.n - g.m_jump].sum() * g.dv)


def tv_distance(a: GridDensity, b: GridDensity) -> float:
    """Total variation of the difference, sum |a - b| dv (2 for disjoint probabilities)."""
    if a.n != b.n:
        raise GridMismatch(f"grids differ: {a.n} vs {b.n} cells")
    return float(np.abs(a.values - b.values).sum() * a.dv)


def from_values(spec: GridSpec, values, normalize: bool = True) -> GridDensity:
    values = np.asarray(values, dtype=float).copy()
    if values.shape != (spec.n,):
        raise GridMismatch(f"expected {spec.n} values, got shape {values.shape}")
    total = values.sum() / spec.n
    if normalize:
        if not total > 1e-14:
            raise ZeroMass(f"density integrates to {total}")
        values /= total
    return GridDensity(spec, values)


def from_samples(spec: GridSpec, sampler) -> GridDensity:
    """Cell averages of a function (midpoint rule) or a deposit of atoms.

    ``sampler`` is either a callable ``f(v)`` vectorized over numpy arrays, or
    an iterable of ``(position, weight)`` atoms. The result has unit mass.
    """
    if callable(sampler):
        values = np.asarray(sampler(spec.centers), dtype=float)
        values = np.broadcast_to(values, (spec.n,)).astype(float)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise OutOfRange("sampler must be finite and nonnegative")
        return from_values(spec, values)
    values = np.zeros(spec.n)
    for pos, weight in atoms(sampler):
        if not 0.0 <= pos <= 1.0 or weight < 0:
            raise OutOfRange(f"atom ({pos}, {weight}) outside [0, 1] or negative")
        values[cell_index(pos, spec.n)] += weight * spec.n
    return from_values(spec, values)


def atoms(items: Iterable) -> list[tuple[float, float]]:
    out = []
    for item in items:
        if np.ndim(item) == 0:
            out.append((float(item), 1.0))
        else:
            pos, weight = item
            out.append((float(pos), float(weight)))
    return out


def uniform(spec: GridSpec) -> GridDensity:
    return from_samples(spec, lambda v: np.ones_like(v))


def dirac(spec: GridSpec, position: float) -> GridDensity:
    return from_samples(spec, [(position, 1.0)])


def indicator(spec: GridSpec, lo: float, hi: float) -> GridDensity:
    """Normalized indicator of [lo, hi] by exact cell-overlap averaging."""
    edges = np.arange(spec.n + 1) / spec.n
    overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return from_values(spec, overlap * spec.n)


def gaussian(spec: GridSpec, mean: float = 0.5, sd: float = 0.1) -> GridDensity:
    return from_samples(spec, lambda v: np.exp(-0.5 * ((v - mean) / sd) ** 2))


def histogram(spec: GridSpec, positions: np.ndarray) -> GridDensity:
    """Empirical density of sample positions on the grid cells."""
    idx = np.clip(np.floor(np.asarray(positions) * spec.n + ALIGN_TOL).astype(np.int64), 0, spec.n - 1)
    counts = np.bincount(idx, minlength=spec.n).astype(float)
    return from_values(spec, counts)


def coarsen(g: GridDensity, factor: int, spec: GridSpec) -> GridDensity:
    """Average blocks of ``factor`` cells onto a coarser grid ``spec``."""
    if g.n != factor * spec.n:
        raise GridMismatch(f"{g.n} cells do not coarsen by {factor} onto {spec.n}")
    return GridDensity(spec, g.values.reshape(spec.n, factor).mean(axis=1))


def to_csv_rows(g: GridDensity):
    for v, p in zip(g.centers, g.values):
        yield (float(v), float(p))
