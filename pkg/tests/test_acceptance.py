"""Acceptance suite: one test per release criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the PASS/FAIL lines.
"""

import json
import math
import os
import time

import numpy as np
import pytest

import balancenet as bn
from balancenet import cli
from balancenet.meanfield import (
    EmpiricalWeights,
    GaussianWeights,
    MeanFieldParams,
    critical_temperature_mf,
    self_consistency_rhs,
    solve_fixed_point,
)
from balancenet.network import SignState, SignedWeightedNetwork, read_landscape_csv
from balancenet.simulate import read_sweep_csv


def check(name: str, ok: bool, detail: str = "") -> None:
    line = f"[ACCEPT] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" - {detail}"
    print(line)
    assert ok, line


def uniform_weight_net(n: int, seed: int, low: float, high: float) -> SignedWeightedNetwork:
    rng = np.random.default_rng(seed)
    w = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    vals = rng.uniform(low, high, size=len(iu[0]))
    w[iu] = vals
    w.T[iu] = vals
    return SignedWeightedNetwork(w, np.ones((n, n), dtype=np.int8))


def read_bytes_tree(root: str) -> dict[str, bytes]:
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_oracle_equivalence():
    """MC means match exact 2^10-state enumeration within 3 standard errors."""
    start = time.time()
    net = uniform_weight_net(5, seed=42, low=0.1, high=1.0)
    replicas = 16
    worst = 0.0
    for beta in (0.2, 1.0, 3.0):
        exact = bn.exact_ensemble(net, beta)
        e_means, q_means = [], []
        for r in range(replicas):
            trace = bn.metropolis_run(
                net,
                bn.SimConfig(
                    temperature=1.0 / beta,
                    init="random",
                    equil_sweeps=2000,
                    measure_sweeps=4000,
                    seed=bn.mix_seed(99, 0, int(beta * 10), r),
                ),
            )
            e_means.append(trace.energy_norm_mean)
            q_means.append(trace.q_raw_mean)
        for mc_vals, exact_val in ((e_means, exact.energy_norm), (q_means, exact.q_raw)):
            mc = float(np.mean(mc_vals))
            se = float(np.std(mc_vals, ddof=1) / math.sqrt(replicas))
            z = abs(mc - exact_val) / max(se, 1e-15)
            worst = max(worst, z)
            assert z < 3.0, f"beta={beta}: |z| = {z:.2f}"
    elapsed = time.time() - start
    check(
        "oracle-equivalence",
        elapsed < 60.0,
        f"worst |z| = {worst:.2f} over 3 betas x 2 observables, {elapsed:.1f}s",
    )


def test_balanced_normalization():
    """All-positive signs give normalized energy -1 and q_norm 1 to 1e-12."""
    worst_e = 0.0
    worst_q = 0.0
    for seed in range(10):
        net = uniform_weight_net(12, seed=seed, low=0.01, high=1.0)
        state = SignState.all_positive(12)
        rep = bn.energy(net, state)
        q = bn.mean_two_star(net, state)
        worst_e = max(worst_e, abs(rep.normalized - (-1.0)))
        worst_q = max(worst_q, abs(q - 1.0))
    ok = worst_e <= 1e-12 and worst_q <= 1e-12
    check(
        "balanced-normalization",
        ok,
        f"max |E_norm + 1| = {worst_e:.2e}, max |q_norm - 1| = {worst_q:.2e}",
    )


def test_mean_field_criteria():
    """f(0) = 0 exactly; point-mass branch hits 38; T_c monotone in mu and N."""
    rng = np.random.default_rng(314)
    for _ in range(100):
        if rng.uniform() < 0.5:
            dist = GaussianWeights(float(rng.uniform(0, 2)), float(rng.uniform(0, 0.5)))
        else:
            dist = EmpiricalWeights(rng.uniform(0, 1, size=int(rng.integers(1, 40))))
        params = MeanFieldParams(
            n=int(rng.integers(3, 120)),
            beta=float(rng.uniform(0.01, 20)),
            weight_dist=dist,
        )
        assert self_consistency_rhs(0.0, params) == 0.0

    res = solve_fixed_point(
        MeanFieldParams(n=40, beta=2.0, weight_dist=GaussianWeights(1.0, 0.0)),
        init=38.0,
    )
    assert res.branch == "positive"
    assert abs(res.q_star - 38.0) <= 1e-3

    mu_tcs = [
        critical_temperature_mf(GaussianWeights(mu, 0.1), n=40, t_lo=0.5, t_hi=60.0)
        for mu in (0.5, 1.0, 2.0)
    ]
    assert mu_tcs[0] < mu_tcs[1] < mu_tcs[2]
    n_tcs = [
        critical_temperature_mf(GaussianWeights(1.0, 0.0), n=n, t_lo=0.5, t_hi=60.0)
        for n in (20, 40, 60)
    ]
    assert n_tcs[0] < n_tcs[1] < n_tcs[2]
    check(
        "mean-field",
        True,
        f"q* = {res.q_star:.6f}, T_c(mu) = {[round(t, 2) for t in mu_tcs]}, "
        f"T_c(N) = {[round(t, 2) for t in n_tcs]}",
    )


SIM_ARGS = [
    "--grid-lo", "0.1", "--grid-hi", "8.0", "--grid-points", "14",
    "--grid-spacing", "log", "--replicas", "4",
    "--equil-sweeps", "500", "--measure-sweeps", "500", "--seed", "11",
]
MF_ARGS = [
    "--grid-lo", "0.1", "--grid-hi", "8.0", "--grid-points", "3",
    "--mf-t-lo", "0.05", "--mf-t-hi", "30.0", "--seed", "11",
]


def run_pipeline(out: str, rho: str) -> None:
    for argv in (
        ["synth", "--out", out, "--n", "40", "--days", "51", "--rho", rho, "--seed", "7"],
        ["corr", "--out", out, "--tau", "50"],
        ["net", "--out", out],
        ["sim", "--out", out, *SIM_ARGS],
        ["mf", "--out", out, *MF_ARGS],
        ["report", "--out", out],
    ):
        code = cli.main(argv)
        assert code == 0, f"{argv[0]} exited {code}"


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """Three full pipeline runs: both regimes, plus a worker-count rerun."""
    root = tmp_path_factory.mktemp("acceptance")
    dirs = {
        "rho0": str(root / "rho0"),
        "rho06": str(root / "rho06"),
        "rho06_rerun": str(root / "rho06_rerun"),
    }
    old = os.environ.get("BALANCE_THREADS")
    t0 = time.time()
    try:
        os.environ["BALANCE_THREADS"] = "4"
        run_pipeline(dirs["rho0"], "0.0")
        run_pipeline(dirs["rho06"], "0.6")
        discrimination_elapsed = time.time() - t0
        os.environ["BALANCE_THREADS"] = "1"
        run_pipeline(dirs["rho06_rerun"], "0.6")
    finally:
        if old is None:
            os.environ.pop("BALANCE_THREADS", None)
        else:
            os.environ["BALANCE_THREADS"] = old
    return {"dirs": dirs, "elapsed": discrimination_elapsed}


def test_regime_discrimination(pipeline_runs):
    """Uncorrelated panels report no transition; correlated ones a clear one."""
    dirs = pipeline_runs["dirs"]
    rep0 = json.load(open(os.path.join(dirs["rho0"], "report.json")))
    rep6 = json.load(open(os.path.join(dirs["rho06"], "report.json")))
    tc0 = rep0["windows"][0]["t_c"]
    tc6 = rep6["windows"][0]["t_c"]
    sweep6 = read_sweep_csv(os.path.join(dirs["rho06"], "windows", "win_0", "sweep.csv"))
    plateau = float(sweep6["q_norm_mean"][0])
    elapsed = pipeline_runs["elapsed"]
    ok = (
        (tc0 is None or tc0 == 0.0)
        and tc6 is not None
        and tc6 > 0.1
        and plateau >= 0.9
        and elapsed < 900.0
    )
    check(
        "regime-discrimination",
        ok,
        f"t_c(rho=0) = {tc0}, t_c(rho=0.6) = {tc6:.3f}, "
        f"q_norm({sweep6['T'][0]:.2f}) = {plateau:.3f}, {elapsed:.0f}s",
    )


def test_correlation_pdf_shift(pipeline_runs):
    """Off-diagonal correlation mean: near zero uncorrelated, > 0.4 correlated."""
    dirs = pipeline_runs["dirs"]
    fits0 = json.load(open(os.path.join(dirs["rho0"], "fits.json")))
    fits6 = json.load(open(os.path.join(dirs["rho06"], "fits.json")))
    mean0 = fits0["windows"][0]["gaussian_fit"]["mean"]
    mean6 = fits6["windows"][0]["gaussian_fit"]["mean"]
    ok = abs(mean0) < 0.05 and mean6 > 0.4
    check(
        "correlation-pdf-shift",
        ok,
        f"mean(rho=0) = {mean0:+.4f}, mean(rho=0.6) = {mean6:+.4f}",
    )


def test_landscape_combinatorics(pipeline_runs):
    """K4 pair count is 12; energies localize only when correlations vanish."""
    vals = np.full((4, 4), 0.8)
    np.fill_diagonal(vals, 1.0)
    corr = bn.CorrelationMatrix([f"T{i}" for i in range(4)], vals, bn.WindowSpec(0, 10))
    net = bn.build_network(corr)
    hist = bn.energy_landscape(net, SignState.from_network(net))
    assert hist.total == 12

    dirs = pipeline_runs["dirs"]
    fracs = {}
    big_mass = {}
    for tag in ("rho0", "rho06"):
        h = read_landscape_csv(os.path.join(dirs[tag], "windows", "win_0", "landscape.csv"))
        cx = 0.5 * (h.bin_edges_x[:-1] + h.bin_edges_x[1:])
        cy = 0.5 * (h.bin_edges_y[:-1] + h.bin_edges_y[1:])
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        extent = np.maximum(np.abs(gx), np.abs(gy))
        total = h.counts.sum()
        fracs[tag] = float(h.counts[extent <= 0.05 + 1e-12].sum() / total)
        big_mass[tag] = int(h.counts[extent > 0.1].sum())
    ok = fracs["rho0"] > 0.95 and big_mass["rho06"] > 0
    check(
        "landscape-combinatorics",
        ok,
        f"K4 total = {hist.total}, rho=0 mass(|E|<=0.05) = {fracs['rho0']:.3f}, "
        f"rho=0.6 mass(|E|>0.1) = {big_mass['rho06']}",
    )


def test_determinism(pipeline_runs):
    """Identical configs give byte-identical artifacts at any worker count."""
    dirs = pipeline_runs["dirs"]
    a = read_bytes_tree(dirs["rho06"])
    b = read_bytes_tree(dirs["rho06_rerun"])
    same_files = sorted(a) == sorted(b)
    diffs = [k for k in a if same_files and a[k] != b[k]]
    ok = same_files and not diffs
    check(
        "determinism",
        ok,
        f"{len(a)} artifacts compared across worker counts 4 vs 1"
        + (f"; diffs: {diffs[:3]}" if diffs else ""),
    )
