"""Event-exact simulation of the LIF jump process.

A single neuron receives Poisson arrivals at rate sigma0; between arrivals
v decays as v e^{-t}, each arrival adds h, and reaching v >= 1 resets to v_r
and records a spike. The network couples N such neurons: every spike hits
each other neuron independently with probability J / (N - 1).
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CouplingTooLarge, OutOfRange
from .model import ModelParams

CHUNK = 1 << 15  # replicas per random stream; fixed so results do not depend on threads


@dataclass
class NeuronState:
    v: float
    t_last: float = 0.0

    def advance(self, t: float) -> float:
        """Decay exactly to time t and return the new potential."""
        self.v *= math.exp(-(t - self.t_last))
        self.t_last = t
        return self.v


@dataclass
class SpikeRecord:
    t: np.ndarray
    neuron: np.ndarray
    cascade: np.ndarray
    n_neurons: int
    horizon: float

    @classmethod
    def from_lists(cls, t, neuron, cascade, n_neurons, horizon) -> "SpikeRecord":
        return cls(np.asarray(t, dtype=float), np.asarray(neuron, dtype=np.int64),
                   np.asarray(cascade, dtype=np.int64), n_neurons, horizon)

    def __len__(self) -> int:
        return self.t.size

    def csv_rows(self):
        for t, i, c in zip(self.t, self.neuron, self.cascade):
            yield (float(t), int(i), int(c))


@dataclass
class NeuronRun:
    times: np.ndarray
    v: np.ndarray
    spikes: SpikeRecord
    n_arrivals: int

    def csv_rows(self):
        for t, v in zip(self.times, self.v):
            yield (float(t), float(v))


@dataclass
class NetworkRun:
    spikes: SpikeRecord
    final_v: np.ndarray
    n_arrivals: int

    def cascade_sizes(self) -> np.ndarray:
        return cascade_sizes(self.spikes)


@dataclass
class DoeblinReport:
    t0: float
    c_theory: float
    bin_edges: np.ndarray
    per_start: list[dict]
    n_replicas: int
    min_ratio: float
    min_slack: float
    passed: bool
    confidence_sigmas: float = 3.0

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "c_theory": self.c_theory,
            "bin_edges": [float(x) for x in self.bin_edges],
            "n_replicas": self.n_replicas,
            "min_ratio": self.min_ratio,
            "min_slack": self.min_slack,
            "confidence_sigmas": self.confidence_sigmas,
            "passed": self.passed,
            "per_start": self.per_start,
        }


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def simulate_neuron(params: ModelParams, v0: float, horizon: float, seed: int = 0,
                    output_times: Sequence[float] | None = None) -> NeuronRun:
    """Single neuron; ``params.J`` is ignored.

    The trajectory is sampled at ``output_times`` (default: 0 and horizon)
    from the exact piecewise exponential path.
    """
    if not 0.0 <= v0 < 1.0:
        raise OutOfRange(f"v0 must lie in [0, 1), got {v0}")
    if not horizon > 0:
        raise OutOfRange(f"horizon must be positive, got {horizon}")
    samples = np.unique(np.asarray([0.0, horizon] if output_times is None else output_times, dtype=float))
    if samples.size and (samples[0] < 0 or samples[-1] > horizon):
        raise OutOfRange("output times must lie in [0, horizon]")
    rng = _rng(seed)
    h, v_r, rate = params.h, params.v_r, params.sigma0
    out = np.empty(samples.size)
    spikes_t: list[float] = []
    t, v, k, arrivals = 0.0, float(v0), 0, 0
    while True:
        t_next = t + rng.exponential(1.0 / rate) if rate > 0 else math.inf
        while k < samples.size and samples[k] < t_next:
            out[k] = v * math.exp(-(samples[k] - t))
            k += 1
        if t_next > horizon:
            break
        arrivals += 1
        v = v * math.exp(-(t_next - t)) + h
        t = t_next
        if v >= 1.0:
            v = v_r
            spikes_t.append(t)
    n = len(spikes_t)
    record = SpikeRecord.from_lists(spikes_t, [0] * n, range(n), 1, horizon)
    return NeuronRun(samples, out, record, arrivals)


def _ensemble_chunk(rng, v0: np.ndarray, t_end: float, h: float, v_r: float, rate: float) -> np.ndarray:
    v = v0.astype(float).copy()
    clock = np.zeros(v.size)
    active = np.arange(v.size)
    if rate <= 0:
        return v * math.exp(-t_end)
    while active.size:
        arrive = clock[active] + rng.exponential(1.0 / rate, active.size)
        hit = arrive <= t_end
        done = active[~hit]
        v[done] *= np.exp(-(t_end - clock[done]))
        active, arrive = active[hit], arrive[hit]
        w = v[active] * np.exp(-(arrive - clock[active])) + h
        v[active] = np.where(w >= 1.0, v_r, w)
        clock[active] = arrive
    return v


def simulate_ensemble(params: ModelParams, v0, t: float, n_replicas: int, seed: int = 0,
                      threads: int = 1) -> np.ndarray:
    """Positions at time t of independent neurons (J ignored).

    ``v0`` is a scalar start or an array of length ``n_replicas``. Replicas
    are split in fixed chunks of 2^15, chunk k drawing from the k-th child of
    ``SeedSequence(seed)``, so the result does not depend on ``threads``.
    """
    if t < 0:
        raise OutOfRange(f"t must be nonnegative, got {t}")
    if n_replicas < 1:
        raise OutOfRange(f"need at least one replica, got {n_replicas}")
    starts = np.broadcast_to(np.asarray(v0, dtype=float), (n_replicas,))
    if np.any(starts < 0) or np.any(starts > 1):
        raise OutOfRange("starting points must lie in [0, 1]")
    n_chunks = -(-n_replicas // CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)

    def work(k):
        block = starts[k * CHUNK:(k + 1) * CHUNK]
        return _ensemble_chunk(_rng(seeds[k]), block, t, params.h, params.v_r, params.sigma0)

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    else:
        parts = [work(k) for k in range(n_chunks)]
    return np.concatenate(parts)


def dual_mc(params: ModelParams, f: Callable[[np.ndarray], np.ndarray] | np.ndarray, v0: float, t: float,
            n_replicas: int, seed: int = 0, threads: int = 1) -> tuple[float, float]:
    """Monte Carlo estimate of (M_t f)(v0) = E[f(V_t) | V_0 = v0] and its standard error.

    ``f`` is a vectorized callable or an array of values on a uniform grid
    of len(f) cells over [0, 1].
    """
    if callable(f):
        fun = f
    else:
        table = np.asarray(f, dtype=float)
        n = table.size

        def fun(v):
            return table[np.clip(np.floor(v * n + 1e-9).astype(np.int64), 0, n - 1)]

    if t == 0:
        return float(np.asarray(fun(np.array([float(v0)])))[0]), 0.0
    vals = np.asarray(fun(simulate_ensemble(params, v0, t, n_replicas, seed, threads)), dtype=float)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf
    return float(vals.mean()), se


def doeblin_constants(h: float, sigma0: float) -> tuple[float, float]:
    """(t0, c) = (log(4/h), (sigma0/2)(h/4)^sigma0)."""
    return math.log(4.0 / h), 0.5 * sigma0 * (h / 4.0) ** sigma0


def doeblin_check(params: ModelParams, start_points: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 0.999),
                  n_replicas: int = 200_000, bins: int = 5, seed: int = 0, threads: int = 1,
                  confidence_sigmas: float = 3.0) -> DoeblinReport:
    """Empirical check of the minorization M_{t0}(v, .) >= c * uniform[h/2, h].

    For each start and each of ``bins`` sub-bins of [h/2, h] the ratio of
    the empirical density to c * 2/h is reported with its binomial standard
    error; the check passes when every ratio >= 1 - confidence_sigmas * SE.
    """
    t0, c = doeblin_constants(params.h, params.sigma0)
    edges = np.linspace(params.h / 2, params.h, bins + 1)
    width = edges[1] - edges[0]
    target = c * 2.0 / params.h
    per_start, min_ratio, min_slack = [], math.inf, math.inf
    ss = np.random.SeedSequence(seed).spawn(len(start_points))
    for v0, child in zip(start_points, ss):
        child_seed = int(child.generate_state(1, np.uint64)[0])
        pos = simulate_ensemble(params, float(v0), t0, n_replicas, child_seed, threads)
        counts, _ = np.histogram(pos, bins=edges)
        prob = counts / n_replicas
        density = prob / width
        se = np.sqrt(np.maximum(prob * (1 - prob), 1.0 / n_replicas) / n_replicas) / width
        if target > 0:
            ratio, ratio_se = density / target, se / target
        else:
            ratio, ratio_se = np.full(bins, math.inf), np.zeros(bins)
        slack = ratio - (1.0 - confidence_sigmas * ratio_se)
        min_ratio = min(min_ratio, float(ratio.min()))
        min_slack = min(min_slack, float(slack.min()))
        per_start.append({
            "v0": float(v0),
            "counts": [int(k) for k in counts],
            "density": [float(x) for x in density],
            "ratio": [float(x) for x in ratio],
            "ratio_se": [float(x) for x in ratio_se],
            "min_ratio": float(ratio.min()),
        })
    return DoeblinReport(t0=t0, c_theory=c, bin_edges=edges, per_start=per_start, n_replicas=n_replicas,
                         min_ratio=min_ratio, min_slack=min_slack, passed=bool(min_slack >= 0),
                         confidence_sigmas=confidence_sigmas)


def simulate_network(params: ModelParams, N: int, v0_list: Sequence[float] | None, horizon: float,
                     seed: int = 0) -> NetworkRun:
    """N coupled neurons with instantaneous cascades.

    External arrivals come from one clock stream (rate N*sigma0, uniform
    target). A spike of neuron i draws, from neuron i's own stream, a
    Bernoulli(J/(N-1)) hit for every other neuron. Crossings found while
    processing a spike join a breadth-first queue in index order and fire at
    the same timestamp with the same cascade id. A neuron fires at most once
    per cascade; hits on it after it fired are discarded.
    """
    if N < 2:
        raise OutOfRange(f"network needs N >= 2, got {N}")
    if params.J > N - 1:
        raise CouplingTooLarge(f"J={params.J} exceeds N-1={N - 1}")
    if not horizon > 0:
        raise OutOfRange(f"horizon must be positive, got {horizon}")
    if v0_list is None:
        v0 = np.zeros(N)
    else:
        v0 = np.asarray(v0_list, dtype=float)
        if v0.shape != (N,):
            raise OutOfRange(f"expected {N} initial potentials, got shape {v0.shape}")
        if np.any(v0 < 0) or np.any(v0 >= 1):
            raise OutOfRange("initial potentials must lie in [0, 1)")

    children = np.random.SeedSequence(seed).spawn(N + 1)
    clock = _rng(children[0])
    streams = [_rng(s) for s in children[1:]]
    v = v0.copy()
    t_last = np.zeros(N)
    h, v_r, p_hit = params.h, params.v_r, params.J / (N - 1)
    total_rate = N * params.sigma0

    spike_t: list[float] = []
    spike_i: list[int] = []
    spike_c: list[int] = []
    cascade_id = 0
    arrivals = 0
    t = 0.0
    while total_rate > 0:
        t += clock.exponential(1.0 / total_rate)
        if t > horizon:
            break
        arrivals += 1
        i = int(clock.integers(N))
        v[i] = v[i] * math.exp(-(t - t_last[i])) + h
        t_last[i] = t
        if v[i] < 1.0:
            continue
        fired = np.zeros(N, dtype=bool)
        queued = np.zeros(N, dtype=bool)
        queue = deque([i])
        queued[i] = True
        while queue:
            j = queue.popleft()
            fired[j] = True
            v[j] = v_r
            spike_t.append(t)
            spike_i.append(j)
            spike_c.append(cascade_id)
            if p_hit <= 0:
                continue
            draws = streams[j].random(N - 1)
            others = np.delete(np.arange(N), j)
            targets = others[(draws < p_hit) & ~fired[others]]
            for k in targets:
                v[k] = v[k] * math.exp(-(t - t_last[k])) + h
                t_last[k] = t
                if v[k] >= 1.0 and not queued[k]:
                    queued[k] = True
                    queue.append(int(k))
        cascade_id += 1
    v = v * np.exp(-(horizon - t_last))
    record = SpikeRecord.from_lists(spike_t, spike_i, spike_c, N, horizon)
    return NetworkRun(record, v, arrivals)


def cascade_sizes(record: SpikeRecord) -> np.ndarray:
    """Number of spikes in each cascade, indexed by cascade id order."""
    if len(record) == 0:
        return np.zeros(0, dtype=np.int64)
    _, counts = np.unique(record.cascade, return_counts=True)
    return counts
