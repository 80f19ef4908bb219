"""Signed weighted complete networks and their balance observables.

A correlation matrix maps to quenched link weights ``|C_ij|`` plus link signs
``sgn(C_ij)``. A triangle's coupling is the product of its three link weights
(computed on demand, never materialized as an N^3 array) and its energy is
minus that coupling times the product of its three link signs. The functions
here evaluate total energy, per-link local fields, the mean weighted two-star
order parameter, the triangle energy-energy histogram, and a dendrogram leaf
order for correlation heatmaps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from balancenet.ingest import CorrelationMatrix

__all__ = [
    "NetworkError",
    "ZeroCorrelation",
    "ZeroWeightStar",
    "SignedWeightedNetwork",
    "SignState",
    "EnergyReport",
    "Histogram2D",
    "build_network",
    "triangle_weights",
    "energy",
    "local_field",
    "delta_energy",
    "mean_two_star",
    "energy_landscape",
    "cluster_order",
    "write_landscape_csv",
    "read_landscape_csv",
    "write_cluster_order_csv",
    "read_cluster_order_csv",
]

FLOAT_FMT = "%.17g"

DEFAULT_BINS = 60
DEFAULT_CAP = 300


class NetworkError(ValueError):
    pass


class ZeroCorrelation(NetworkError):
    """A correlation element is exactly zero, so its link sign is undefined."""

    def __init__(self, i: int, j: int):
        self.i, self.j = i, j
        super().__init__(f"correlation element ({i}, {j}) is exactly zero")


class ZeroWeightStar(NetworkError):
    """A link's two-star weight normalizer vanishes."""

    def __init__(self, i: int, j: int):
        self.i, self.j = i, j
        super().__init__(f"two-star weight normalizer vanishes on link ({i}, {j})")


@dataclass
class SignedWeightedNetwork:
    """Quenched link weights in [0, 1] plus the data's link signs.

    Immutable after construction; only sign states evolve in the dynamics.
    """

    weights: np.ndarray  # (N, N) symmetric, zero diagonal, values in [0, 1]
    data_signs: np.ndarray  # (N, N) int8, symmetric, +-1 off-diagonal
    tickers: list[str] | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        s = np.ascontiguousarray(self.data_signs, dtype=np.int8)
        n = w.shape[0]
        if w.shape != (n, n) or s.shape != (n, n):
            raise NetworkError("weights and data_signs must be square and same size")
        if n < 3:
            raise NetworkError("need at least 3 nodes to form a triangle")
        if not np.array_equal(w, w.T) or not np.array_equal(s, s.T):
            raise NetworkError("weights and data_signs must be symmetric")
        if np.any(np.diag(w) != 0.0):
            raise NetworkError("weight diagonal must be zero")
        if w.min() < 0.0 or w.max() > 1.0:
            raise NetworkError("weights must lie in [0, 1]")
        off = ~np.eye(n, dtype=bool)
        if not np.isin(s[off], (-1, 1)).all():
            raise NetworkError("off-diagonal signs must be +-1")
        self.weights = w
        self.data_signs = s

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def n_links(self) -> int:
        return self.n * (self.n - 1) // 2

    @cached_property
    def j_total(self) -> float:
        """Sum of all triangle couplings."""
        w = self.weights
        return float(np.einsum("ij,jk,ki->", w, w, w)) / 6.0

    @cached_property
    def star_norms(self) -> np.ndarray:
        """Per-link sum of triangle couplings, flat over links with i < j."""
        w = self.weights
        mat = w * (w @ w.T)
        return mat[np.triu_indices(self.n, k=1)]


@dataclass
class SignState:
    """The dynamical link signs; weights stay quenched in the network."""

    signs: np.ndarray  # (N, N) int8, symmetric, +-1 off-diagonal

    def __post_init__(self):
        s = np.ascontiguousarray(self.signs, dtype=np.int8)
        n = s.shape[0]
        if s.shape != (n, n):
            raise NetworkError("sign state must be square")
        if not np.array_equal(s, s.T):
            raise NetworkError("sign state must be symmetric")
        off = ~np.eye(n, dtype=bool)
        if not np.isin(s[off], (-1, 1)).all():
            raise NetworkError("off-diagonal signs must be +-1")
        self.signs = s

    @property
    def n(self) -> int:
        return self.signs.shape[0]

    @classmethod
    def all_positive(cls, n: int) -> "SignState":
        return cls(np.ones((n, n), dtype=np.int8))

    @classmethod
    def from_network(cls, net: SignedWeightedNetwork) -> "SignState":
        return cls(net.data_signs.copy())

    @classmethod
    def random(cls, n: int, seed: int = 0) -> "SignState":
        rng = np.random.default_rng(seed)
        s = np.ones((n, n), dtype=np.int8)
        iu = np.triu_indices(n, k=1)
        vals = rng.choice(np.array([-1, 1], dtype=np.int8), size=len(iu[0]))
        s[iu] = vals
        s.T[iu] = vals
        return cls(s)

    def flipped(self, i: int, j: int) -> "SignState":
        out = self.signs.copy()
        out[i, j] = -out[i, j]
        out[j, i] = -out[j, i]
        return SignState(out)


@dataclass(frozen=True)
class EnergyReport:
    raw: float
    normalized: float  # raw divided by the sum of triangle couplings
    j_total: float


@dataclass
class Histogram2D:
    """Counts of co-occurring triangle energies over a uniform grid."""

    bin_edges_x: np.ndarray
    bin_edges_y: np.ndarray
    counts: np.ndarray  # (bins, bins) int64
    cap: int  # display saturation count

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _signs_array(state) -> np.ndarray:
    return state.signs if isinstance(state, SignState) else np.asarray(state)


def build_network(corr: CorrelationMatrix, zero_sign: str = "error") -> SignedWeightedNetwork:
    """Split a correlation matrix into quenched weights and link signs.

    An exactly-zero off-diagonal element has no sign; by default that raises
    ``ZeroCorrelation``, with ``zero_sign="positive"`` mapping it to +1.
    """
    if zero_sign not in ("error", "positive"):
        raise ValueError(f"unknown zero_sign policy {zero_sign!r}")
    c = corr.values
    n = c.shape[0]
    off = ~np.eye(n, dtype=bool)
    if zero_sign == "error":
        zeros = np.argwhere((c == 0.0) & off)
        if len(zeros):
            i, j = (int(v) for v in zeros[0])
            raise ZeroCorrelation(i, j)
    weights = np.abs(c)
    np.fill_diagonal(weights, 0.0)
    signs = np.where(c >= 0.0, 1, -1).astype(np.int8)
    return SignedWeightedNetwork(weights, signs, list(corr.tickers))


def triangle_weights(net: SignedWeightedNetwork) -> np.ndarray:
    """All N-choose-3 triangle couplings as a flat array."""
    idx = np.array(list(itertools.combinations(range(net.n), 3)))
    w = net.weights
    return w[idx[:, 0], idx[:, 1]] * w[idx[:, 1], idx[:, 2]] * w[idx[:, 2], idx[:, 0]]


def energy(net: SignedWeightedNetwork, state) -> EnergyReport:
    """Total balance energy of a sign state on the quenched weights.

    Raw form: minus the sum over triangles of coupling times sign product.
    Normalized by the total coupling so an all-balanced state gives exactly -1.
    """
    s = _signs_array(state).astype(np.float64)
    if s.shape != net.weights.shape:
        raise NetworkError("sign state dimension does not match the network")
    ws = net.weights * s
    raw = -float(np.einsum("ij,jk,ki->", ws, ws, ws)) / 6.0
    j_total = net.j_total
    normalized = raw / j_total if j_total > 0.0 else 0.0
    return EnergyReport(raw=raw, normalized=normalized, j_total=j_total)


def local_field(net: SignedWeightedNetwork, state, link: tuple[int, int]) -> float:
    """Weighted two-star sum felt by one link: sum_k J_ijk s_jk s_ki."""
    i, j = link
    if i == j:
        raise ValueError("a link needs two distinct endpoints")
    s = _signs_array(state).astype(np.float64)
    ws = net.weights * s
    # zero weight diagonal removes the k = i and k = j terms
    return float(net.weights[i, j] * np.dot(ws[i], ws[j]))


def delta_energy(net: SignedWeightedNetwork, state, link: tuple[int, int]) -> float:
    """Energy change from flipping one link's sign: 2 s_ij times its local field."""
    i, j = link
    s = _signs_array(state)
    return 2.0 * float(s[i, j]) * local_field(net, state, link)


def _star_matrix(net: SignedWeightedNetwork, signs: np.ndarray) -> np.ndarray:
    ws = net.weights * signs.astype(np.float64)
    return net.weights * (ws @ ws.T)


def mean_two_star(net: SignedWeightedNetwork, state, normalized: bool = True) -> float:
    """Average weighted two-star over links.

    Normalized (default), each link's star sum is divided by its own weight
    normalizer, bounding the result to [-1, 1] with 1 in the all-positive
    state. The raw form (``normalized=False``) is the direct average of star
    sums, the scale the self-consistency analysis works in.
    """
    s = _signs_array(state)
    stars = _star_matrix(net, s)[np.triu_indices(net.n, k=1)]
    if not normalized:
        return float(stars.mean())
    norms = net.star_norms
    dead = np.flatnonzero(norms == 0.0)
    if len(dead):
        iu = np.triu_indices(net.n, k=1)
        k = int(dead[0])
        raise ZeroWeightStar(int(iu[0][k]), int(iu[1][k]))
    return float((stars / norms).mean())


def energy_landscape(
    net: SignedWeightedNetwork,
    state,
    bins: int = DEFAULT_BINS,
    cap: int = DEFAULT_CAP,
) -> Histogram2D:
    """2-D histogram of energies of triangle pairs sharing a link.

    Every unordered pair of distinct triangles with a common link contributes
    both (E_u, E_v) and (E_v, E_u), so the histogram is symmetric. Triangle
    energies lie in [-1, 1] because weights do; the grid is fixed to that
    range. ``cap`` is carried as display metadata (saturation count).
    """
    s = _signs_array(state).astype(np.float64)
    n = net.n
    ws = net.weights * s
    edges = np.linspace(-1.0, 1.0, bins + 1)
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    others = np.arange(n)
    for i in range(n):
        for j in range(i + 1, n):
            k = others[(others != i) & (others != j)]
            ev = -ws[i, j] * ws[i, k] * ws[j, k]  # energies of triangles on link (i, j)
            m = len(ev)
            if m < 2:
                continue
            a = np.repeat(np.arange(m), m)
            b = np.tile(np.arange(m), m)
            keep = a != b
            xs.append(ev[a[keep]])
            ys.append(ev[b[keep]])
    if xs:
        counts, _, _ = np.histogram2d(
            np.concatenate(xs), np.concatenate(ys), bins=[edges, edges]
        )
    else:
        counts = np.zeros((bins, bins))
    return Histogram2D(edges.copy(), edges.copy(), counts.astype(np.int64), cap)


def cluster_order(corr: CorrelationMatrix) -> list[int]:
    """Dendrogram leaf order from average-linkage clustering of correlations.

    Distance is ``sqrt(2 (1 - C))``. At every step the closest pair of
    clusters merges, ties resolved toward the pair holding the lowest original
    indices, so the order is deterministic and a fully tied matrix yields the
    identity permutation. Applying the order to rows and columns gives the
    heatmap layout.
    """
    c = corr.values
    n = c.shape[0]
    d = np.sqrt(np.maximum(2.0 * (1.0 - c), 0.0))
    members: list[list[int]] = [[i] for i in range(n)]
    sizes = [1] * n
    active = list(range(n))
    dist = d.copy()
    while len(active) > 1:
        best_a = best_b = -1
        best = np.inf
        for a in range(len(active)):
            ia = active[a]
            for b in range(a + 1, len(active)):
                v = dist[ia, active[b]]
                if v < best:
                    best = v
                    best_a, best_b = a, b
        ia, ib = active[best_a], active[best_b]
        for other in active:
            if other in (ia, ib):
                continue
            merged = (sizes[ia] * dist[ia, other] + sizes[ib] * dist[ib, other]) / (
                sizes[ia] + sizes[ib]
            )
            dist[ia, other] = merged
            dist[other, ia] = merged
        members[ia] = members[ia] + members[ib]
        sizes[ia] += sizes[ib]
        active.pop(best_b)
    return members[active[0]]


def write_landscape_csv(path, hist: Histogram2D) -> None:
    """Full grid as ``bin_x_low,bin_y_low,count`` rows (zero bins included)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("bin_x_low,bin_y_low,count\n")
        for ix in range(hist.counts.shape[0]):
            for iy in range(hist.counts.shape[1]):
                fh.write(
                    (FLOAT_FMT % hist.bin_edges_x[ix])
                    + ","
                    + (FLOAT_FMT % hist.bin_edges_y[iy])
                    + f",{int(hist.counts[ix, iy])}\n"
                )


def read_landscape_csv(path, cap: int = DEFAULT_CAP) -> Histogram2D:
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(_csv.reader(fh))
    if not rows or rows[0] != ["bin_x_low", "bin_y_low", "count"]:
        raise NetworkError(f"{path}: expected header bin_x_low,bin_y_low,count")
    xs = sorted({float(r[0]) for r in rows[1:] if r})
    ys = sorted({float(r[1]) for r in rows[1:] if r})
    nb = len(xs)
    if nb < 2 or len(ys) != nb:
        raise NetworkError(f"{path}: malformed landscape grid")
    width_x = xs[1] - xs[0]
    width_y = ys[1] - ys[0]
    edges_x = np.array(xs + [xs[-1] + width_x])
    edges_y = np.array(ys + [ys[-1] + width_y])
    ix = {v: k for k, v in enumerate(xs)}
    iy = {v: k for k, v in enumerate(ys)}
    counts = np.zeros((nb, nb), dtype=np.int64)
    for r in rows[1:]:
        if not r:
            continue
        counts[ix[float(r[0])], iy[float(r[1])]] = int(r[2])
    return Histogram2D(edges_x, edges_y, counts, cap)


def write_cluster_order_csv(path, tickers: list[str], order: list[int]) -> None:
    """One line of ticker symbols in heatmap order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(tickers[i] for i in order) + "\n")


def read_cluster_order_csv(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        line = fh.readline().strip()
    if not line:
        raise NetworkError(f"{path}: empty cluster order")
    return line.split(",")
