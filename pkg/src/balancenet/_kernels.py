"""JIT-compiled Metropolis inner loop.

All randomness comes from an explicit SplitMix64 stream seeded per run, so a
run is bit-reproducible across platforms and independent of global RNG state.
The kernel releases the GIL, letting replicas run on a thread pool.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

U64 = np.uint64
_INV53 = 1.0 / 9007199254740992.0  # 2^-53
_GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step on plain ints: returns (new_state, output)."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z = z ^ (z >> 31)
    return state, z


@njit(cache=True, nogil=True, inline="always")
def _next_u64(state):
    state = state + U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    z = z ^ (z >> U64(31))
    return state, z


@njit(cache=True, nogil=True)
def metropolis_kernel(
    weights,  # (N, N) float64, symmetric, zero diagonal
    star_norm,  # (L,) float64, per-link weight normalizer, flat over i < j
    j_total,  # float64, sum of triangle couplings
    signs,  # (N, N) float64 +-1, mutated in place; holds the final state
    beta,
    equil_sweeps,
    measure_sweeps,
    seed,  # uint64
    randomize_init,  # bool: overwrite signs with fair random +-1 first
):
    """Single-flip Metropolis dynamics over link signs at fixed temperature.

    One sweep proposes L = N(N-1)/2 flips on uniformly random links; a flip
    with energy change dE is accepted when dE <= 0, else with probability
    exp(-beta dE). Observables are collected once per sweep after the
    equilibration phase. Returns per-run means plus the incrementally tracked
    energy's maximum drift against full recomputation at sweep boundaries.
    """
    n = weights.shape[0]
    n_links = n * (n - 1) // 2
    li = np.empty(n_links, np.int64)
    lj = np.empty(n_links, np.int64)
    t = 0
    for i in range(n):
        for j in range(i + 1, n):
            li[t] = i
            lj[t] = j
            t += 1

    state = U64(seed)
    if randomize_init:
        for t in range(n_links):
            state, z = _next_u64(state)
            s = 1.0 if (z >> U64(63)) == U64(0) else -1.0
            signs[li[t], lj[t]] = s
            signs[lj[t], li[t]] = s

    ws = weights * signs

    # initial raw energy: -sum over distinct triangles of the ws product
    e_inc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                e_inc -= ws[i, j] * ws[j, k] * ws[k, i]

    qn_sum = 0.0
    qn_sumsq = 0.0
    qr_sum = 0.0
    en_sum = 0.0
    en_sumsq = 0.0
    lm_sum = 0.0
    accepted = 0
    proposed = 0
    max_drift = 0.0

    total = equil_sweeps + measure_sweeps
    for sweep in range(total):
        measuring = sweep >= equil_sweeps
        for _ in range(n_links):
            state, z = _next_u64(state)
            t = np.int64(z % U64(n_links))
            i = li[t]
            j = lj[t]
            f = 0.0
            for k in range(n):
                f += ws[i, k] * ws[j, k]
            f *= weights[i, j]
            s = signs[i, j]
            d_e = 2.0 * s * f
            take = d_e <= 0.0
            if not take:
                state, z = _next_u64(state)
                u = (z >> U64(11)) * _INV53
                take = u < math.exp(-beta * d_e)
            if take:
                ns = -s
                signs[i, j] = ns
                signs[j, i] = ns
                w = weights[i, j]
                ws[i, j] = w * ns
                ws[j, i] = w * ns
                e_inc += d_e
                if measuring:
                    accepted += 1
            if measuring:
                proposed += 1
        if measuring:
            qn = 0.0
            qr = 0.0
            e_full = 0.0
            lm = 0.0
            for t in range(n_links):
                i = li[t]
                j = lj[t]
                star = 0.0
                for k in range(n):
                    star += ws[i, k] * ws[j, k]
                star *= weights[i, j]
                qr += star
                qn += star / star_norm[t]
                e_full += signs[i, j] * star
                lm += signs[i, j]
            # each triangle term appears once per member link
            e_full = -e_full / 3.0
            drift = abs(e_full - e_inc)
            if drift > max_drift:
                max_drift = drift
            qn /= n_links
            qr /= n_links
            lm /= n_links
            en = e_full / j_total
            qn_sum += qn
            qn_sumsq += qn * qn
            qr_sum += qr
            en_sum += en
            en_sumsq += en * en
            lm_sum += lm

    m = float(measure_sweeps)
    qn_mean = qn_sum / m
    qn_std = math.sqrt(max(0.0, qn_sumsq / m - qn_mean * qn_mean))
    en_mean = en_sum / m
    en_std = math.sqrt(max(0.0, en_sumsq / m - en_mean * en_mean))
    acc_rate = accepted / proposed if proposed > 0 else 0.0
    return (
        qn_mean,
        qn_std,
        qr_sum / m,
        en_mean,
        en_std,
        lm_sum / m,
        acc_rate,
        e_inc,
        max_drift,
    )
