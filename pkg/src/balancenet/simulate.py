"""Metropolis sign dynamics, temperature sweeps, and an exact small-graph oracle.

Determinism contract: every run's randomness is a SplitMix64 stream whose seed
derives from ``mix_seed(base_seed, window_index, temperature_index,
replica_index)``, so a sweep's output is byte-identical however the runs are
scheduled across threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from balancenet._kernels import MASK64, metropolis_kernel, splitmix64
from balancenet.network import SignedWeightedNetwork, SignState, ZeroWeightStar

__all__ = [
    "SimulationError",
    "TooLarge",
    "SimConfig",
    "ObservableTrace",
    "SweepResult",
    "ExactEnsemble",
    "mix_seed",
    "acceptance_probability",
    "metropolis_run",
    "exact_ensemble",
    "temperature_sweep",
    "estimate_tc",
    "write_sweep_csv",
    "read_sweep_csv",
]

FLOAT_FMT = "%.17g"

INIT_MODES = ("random", "all_positive", "data_signs")

MAX_ENUM_LINKS = 24

SWEEP_CSV_COLUMNS = (
    "T",
    "q_norm_mean",
    "q_norm_std",
    "q_raw_mean",
    "energy_norm_mean",
    "energy_norm_std",
    "link_mean",
    "acceptance_rate",
    "replicas",
)


class SimulationError(ValueError):
    pass


class TooLarge(SimulationError):
    """The network has too many links for exact enumeration."""


def mix_seed(base: int, *fields: int) -> int:
    """Fold indices into a base seed with SplitMix64 finalization steps.

    Used to derive independent per-(window, temperature, replica) streams from
    one base seed; each fold runs the full finalizer so every field avalanches
    across all 64 bits, and the mixing is fixed so runs reproduce across
    platforms.
    """
    x = base & MASK64
    for f in fields:
        _, x = splitmix64((x ^ (f & MASK64)) & MASK64)
    _, x = splitmix64(x)
    return x


def acceptance_probability(delta_e: float, beta: float) -> float:
    """Metropolis rule: accept downhill moves, else with weight exp(-beta dE)."""
    if delta_e <= 0.0:
        return 1.0
    return math.exp(-beta * delta_e)


@dataclass(frozen=True)
class SimConfig:
    """One Metropolis run: temperature, initial condition, sweep counts, seed."""

    temperature: float
    init: str = "all_positive"
    equil_sweeps: int = 2000
    measure_sweeps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.equil_sweeps < 1 or self.measure_sweeps < 1:
            raise ValueError("sweep counts must be >= 1")

    @property
    def beta(self) -> float:
        return 1.0 / self.temperature


@dataclass(frozen=True)
class ObservableTrace:
    """Per-run observables averaged over the measurement sweeps."""

    q_norm_mean: float
    q_norm_std: float
    q_raw_mean: float
    energy_norm_mean: float
    energy_norm_std: float
    link_mean: float
    acceptance_rate: float


@dataclass
class SweepResult:
    """One trace per (temperature, replica), plus the located transition."""

    temperatures: np.ndarray  # strictly ascending
    traces: list[list[ObservableTrace]]  # [temperature][replica]
    replicas: int
    t_c: float | None


@dataclass(frozen=True)
class ExactEnsemble:
    """Boltzmann-exact means over all sign states of a small network."""

    q_norm: float
    q_raw: float
    energy_norm: float
    link_mean: float


def _initial_signs(net: SignedWeightedNetwork, init: str) -> tuple[np.ndarray, bool]:
    n = net.n
    if init == "all_positive":
        return np.ones((n, n)), False
    if init == "data_signs":
        return net.data_signs.astype(np.float64), False
    return np.ones((n, n)), True  # random: the kernel draws from its own stream


def _check_runnable(net: SignedWeightedNetwork) -> None:
    norms = net.star_norms
    dead = np.flatnonzero(norms == 0.0)
    if len(dead):
        iu = np.triu_indices(net.n, k=1)
        k = int(dead[0])
        raise ZeroWeightStar(int(iu[0][k]), int(iu[1][k]))


def metropolis_run(
    net: SignedWeightedNetwork,
    cfg: SimConfig,
    return_state: bool = False,
):
    """Run Metropolis dynamics at one temperature and average the observables.

    With ``return_state=True`` also returns the final ``SignState``. The
    incrementally tracked energy is checked against full recomputation at
    every measurement sweep; drift beyond tolerance raises, guarding against
    accumulation bugs on long runs.
    """
    _check_runnable(net)
    signs, randomize = _initial_signs(net, cfg.init)
    out = metropolis_kernel(
        net.weights,
        net.star_norms,
        net.j_total,
        signs,
        cfg.beta,
        cfg.equil_sweeps,
        cfg.measure_sweeps,
        np.uint64(cfg.seed & MASK64),
        randomize,
    )
    (qn_mean, qn_std, qr_mean, en_mean, en_std, lm_mean, acc, _e_inc, drift) = out
    tol = 1e-9 * max(1.0, net.j_total)
    if drift > tol:
        raise SimulationError(
            f"incremental energy drifted by {drift:.3e} (tolerance {tol:.3e})"
        )
    trace = ObservableTrace(
        q_norm_mean=qn_mean,
        q_norm_std=qn_std,
        q_raw_mean=qr_mean,
        energy_norm_mean=en_mean,
        energy_norm_std=en_std,
        link_mean=lm_mean,
        acceptance_rate=acc,
    )
    if return_state:
        return trace, SignState(signs.astype(np.int8))
    return trace


def exact_ensemble(net: SignedWeightedNetwork, beta: float) -> ExactEnsemble:
    """Boltzmann averages by enumerating every sign state of a small network.

    Feasible up to 24 links (2^24 states). Kept free of the Metropolis code
    path so it can serve as an independent oracle for it.
    """
    n = net.n
    n_links = n * (n - 1) // 2
    if n_links > MAX_ENUM_LINKS:
        raise TooLarge(f"{n_links} links exceed the enumeration bound {MAX_ENUM_LINKS}")
    _check_runnable(net)
    w = net.weights

    link_id = {}
    links = []
    for i in range(n):
        for j in range(i + 1, n):
            link_id[(i, j)] = len(links)
            links.append((i, j))
    tri_links = []
    tri_j = []
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                tri_links.append((link_id[(i, j)], link_id[(j, k)], link_id[(i, k)]))
                tri_j.append(w[i, j] * w[j, k] * w[k, i])
    tri_j = np.array(tri_j)
    j_total = float(tri_j.sum())
    star_norm = np.zeros(n_links)
    for t, (a, b, c) in enumerate(tri_links):
        star_norm[a] += tri_j[t]
        star_norm[b] += tri_j[t]
        star_norm[c] += tri_j[t]
    incidence = np.zeros((len(tri_links), n_links))
    for t, (a, b, c) in enumerate(tri_links):
        incidence[t, a] = tri_j[t]
        incidence[t, b] = tri_j[t]
        incidence[t, c] = tri_j[t]

    n_states = 1 << n_links
    shifts = np.arange(n_links, dtype=np.uint64)
    la = np.array([a for a, _, _ in tri_links])
    lb = np.array([b for _, b, _ in tri_links])
    lc = np.array([c for _, _, c in tri_links])

    # pass 1: energies of every state, for a stable Boltzmann normalization
    energies = np.empty(n_states)
    chunk = 1 << 16
    for lo in range(0, n_states, chunk):
        hi = min(lo + chunk, n_states)
        states = np.arange(lo, hi, dtype=np.uint64)
        bits = ((states[:, None] >> shifts) & np.uint64(1)).astype(np.int8)
        parity = bits[:, la] ^ bits[:, lb] ^ bits[:, lc]
        sigma = 1.0 - 2.0 * parity
        energies[lo:hi] = -(sigma @ tri_j)
    log_w = -beta * energies
    shift = log_w.max()

    z = 0.0
    acc_e = 0.0
    acc_qn = 0.0
    acc_qr = 0.0
    acc_lm = 0.0
    for lo in range(0, n_states, chunk):
        hi = min(lo + chunk, n_states)
        states = np.arange(lo, hi, dtype=np.uint64)
        bits = ((states[:, None] >> shifts) & np.uint64(1)).astype(np.int8)
        sgn = (1.0 - 2.0 * bits).astype(np.float64)
        parity = bits[:, la] ^ bits[:, lb] ^ bits[:, lc]
        sigma = 1.0 - 2.0 * parity
        stars = sgn * (sigma @ incidence)
        boltz = np.exp(log_w[lo:hi] - shift)
        z += boltz.sum()
        acc_e += boltz @ energies[lo:hi]
        acc_qr += boltz @ stars.mean(axis=1)
        acc_qn += boltz @ (stars / star_norm).mean(axis=1)
        acc_lm += boltz @ sgn.mean(axis=1)
    return ExactEnsemble(
        q_norm=acc_qn / z,
        q_raw=acc_qr / z,
        energy_norm=(acc_e / z) / j_total,
        link_mean=acc_lm / z,
    )


def temperature_sweep(
    net: SignedWeightedNetwork,
    temperatures,
    replicas: int,
    base: SimConfig,
    window_index: int = 0,
    workers: int | None = None,
    min_drop: float = 0.2,
    anneal: bool = False,
) -> SweepResult:
    """Independent Metropolis runs on a temperature grid, replicated.

    Each (temperature, replica) run gets its own derived seed, so results do
    not depend on scheduling; aggregation order is fixed. With ``anneal=True``
    each replica instead carries its final state from one temperature to the
    next (ascending), re-equilibrating at every step.
    """
    grid = np.asarray(temperatures, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("temperature grid must be nonempty")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("temperature grid must be strictly ascending")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")

    def seeded(ti: int, ri: int) -> SimConfig:
        return replace(
            base,
            temperature=float(grid[ti]),
            seed=mix_seed(base.seed, window_index, ti, ri),
        )

    traces: list[list[ObservableTrace | None]] = [
        [None] * replicas for _ in range(grid.size)
    ]
    if anneal:
        # state carries over within a replica; parallelism only across replicas
        def run_chain(ri: int) -> list[ObservableTrace]:
            out = []
            state: SignState | None = None
            for ti in range(grid.size):
                cfg = seeded(ti, ri)
                if state is None:
                    trace, state = metropolis_run(net, cfg, return_state=True)
                else:
                    trace, state = _run_from_state(net, cfg, state)
                out.append(trace)
            return out

        chains = _map_indexed(run_chain, range(replicas), workers)
        for ri, chain in enumerate(chains):
            for ti, trace in enumerate(chain):
                traces[ti][ri] = trace
    else:
        jobs = [(ti, ri) for ti in range(grid.size) for ri in range(replicas)]

        def run_one(job: tuple[int, int]) -> ObservableTrace:
            ti, ri = job
            return metropolis_run(net, seeded(ti, ri))

        for (ti, ri), trace in zip(jobs, _map_indexed(run_one, jobs, workers)):
            traces[ti][ri] = trace

    result = SweepResult(grid, [list(row) for row in traces], replicas, None)
    if grid.size >= 3:
        result.t_c = estimate_tc(result, min_drop=min_drop)
    return result


def _map_indexed(fn, items, workers):
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _run_from_state(net: SignedWeightedNetwork, cfg: SimConfig, state: SignState):
    """metropolis_run continuing from an explicit sign state."""
    _check_runnable(net)
    signs = state.signs.astype(np.float64)
    out = metropolis_kernel(
        net.weights,
        net.star_norms,
        net.j_total,
        signs,
        cfg.beta,
        cfg.equil_sweeps,
        cfg.measure_sweeps,
        np.uint64(cfg.seed & MASK64),
        False,
    )
    (qn_mean, qn_std, qr_mean, en_mean, en_std, lm_mean, acc, _e_inc, drift) = out
    tol = 1e-9 * max(1.0, net.j_total)
    if drift > tol:
        raise SimulationError(
            f"incremental energy drifted by {drift:.3e} (tolerance {tol:.3e})"
        )
    trace = ObservableTrace(qn_mean, qn_std, qr_mean, en_mean, en_std, lm_mean, acc)
    return trace, SignState(signs.astype(np.int8))


def replica_mean_q_norm(result: SweepResult) -> np.ndarray:
    return np.array(
        [np.mean([tr.q_norm_mean for tr in row]) for row in result.traces]
    )


def estimate_tc(result: SweepResult, min_drop: float = 0.2) -> float | None:
    """Locate the transition as the largest drop of replica-averaged order.

    The transition is abrupt, so the midpoint of the adjacent grid pair with
    the maximum decrease of the normalized two-star is the natural locator.
    Returns None when the maximum decrease stays below ``min_drop``, read as
    "the ordered phase never formed on this grid" (reported as 0 downstream).
    """
    if result.temperatures.size < 3:
        raise ValueError("need at least 3 grid points to locate a transition")
    qbar = replica_mean_q_norm(result)
    drops = qbar[:-1] - qbar[1:]
    i = int(np.argmax(drops))
    if drops[i] < min_drop:
        return None
    return float(0.5 * (result.temperatures[i] + result.temperatures[i + 1]))


def aggregate_rows(result: SweepResult) -> list[dict]:
    """Per-temperature observables averaged across replicas (CSV layout)."""
    rows = []
    for ti, temp in enumerate(result.temperatures):
        row: dict = {"T": float(temp), "replicas": result.replicas}
        for name in (
            "q_norm_mean",
            "q_norm_std",
            "q_raw_mean",
            "energy_norm_mean",
            "energy_norm_std",
            "link_mean",
            "acceptance_rate",
        ):
            row[name] = float(
                np.mean([getattr(tr, name) for tr in result.traces[ti]])
            )
        rows.append(row)
    return rows


def write_sweep_csv(path, result: SweepResult) -> None:
    rows = aggregate_rows(result)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SWEEP_CSV_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in SWEEP_CSV_COLUMNS:
                v = row[col]
                cells.append(str(v) if col == "replicas" else FLOAT_FMT % v)
            fh.write(",".join(cells) + "\n")


def read_sweep_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SWEEP_CSV_COLUMNS:
        raise SimulationError(f"{path}: unexpected sweep CSV header")
    out: dict[str, list[float]] = {c: [] for c in SWEEP_CSV_COLUMNS}
    for row in rows[1:]:
        if not row:
            continue
        for c, cell in zip(SWEEP_CSV_COLUMNS, row):
            out[c].append(int(cell) if c == "replicas" else float(cell))
    return {c: np.asarray(v) for c, v in out.items()}
