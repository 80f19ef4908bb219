"""Command-line pipeline: synth -> corr -> net -> sim / mf -> report.

Configuration is a flat ``key = value`` file; every key has a same-named CLI
flag and the precedence is CLI > file > built-in default. Artifacts live in a
stable layout under the output directory::

    out/prices.csv
    out/fits.json
    out/windows/win_<start_index>/{corr,cluster_order,landscape,sweep}.csv
    out/windows/win_<start_index>/{summary,meanfield}.json
    out/report.json

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``BALANCE_THREADS``
caps the worker pool; worker count never changes output bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass

import numpy as np

from balancenet import ingest, meanfield, network, simulate

WINDOW_PRESETS = {
    "on-crisis-2008": ("2008-10-01", "2008-12-10"),
    "on-crisis-2020": ("2020-01-29", "2020-04-08"),
    "off-crisis-2005": ("2005-07-28", "2005-10-06"),
    "off-crisis-2019": ("2018-11-15", "2019-01-30"),
}

DEFAULTS: dict = {
    "prices": None,
    "out": "out",
    "n": 40,
    "days": 3900,
    "rho": 0.0,
    "vol": 0.02,
    "tau": 50,
    "stride": None,  # None means stride = tau (non-overlapping windows)
    "policy": "strict",
    "zero_sign": "error",
    "preset": None,
    "grid_lo": 0.02,
    "grid_hi": 3.0,
    "grid_points": 50,
    "grid_spacing": "log",
    "replicas": 8,
    "equil_sweeps": 2000,
    "measure_sweeps": 2000,
    "init": "all_positive",
    "min_drop": 0.2,
    "seed": 1,
    "workers": None,  # None means one worker per CPU
    "bins": 60,
    "cap": 300,
    "window": None,
    "mf_mu": None,
    "mf_sigma": None,
    "mf_t_lo": 0.05,
    "mf_t_hi": 50.0,
    "anneal": False,
    "strict": False,
}

_COERCE = {
    "n": int,
    "days": int,
    "tau": int,
    "stride": int,
    "grid_points": int,
    "replicas": int,
    "equil_sweeps": int,
    "measure_sweeps": int,
    "seed": int,
    "workers": int,
    "bins": int,
    "cap": int,
    "rho": float,
    "vol": float,
    "grid_lo": float,
    "grid_hi": float,
    "min_drop": float,
    "mf_mu": float,
    "mf_sigma": float,
    "mf_t_lo": float,
    "mf_t_hi": float,
    "anneal": bool,
    "strict": bool,
}

# keys whose values shape simulation output; hashed into every summary
_HASH_KEYS = (
    "tau",
    "stride",
    "policy",
    "zero_sign",
    "grid_lo",
    "grid_hi",
    "grid_points",
    "grid_spacing",
    "replicas",
    "equil_sweeps",
    "measure_sweeps",
    "init",
    "min_drop",
    "seed",
    "anneal",
)

_WINDOW_ID_RE = re.compile(r"^win_(\d+)$")


class UsageError(Exception):
    pass


def load_config_file(path: str | None) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    if path is None:
        return {}
    cfg = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in DEFAULTS:
                    raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
                cfg[key] = value
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    return cfg


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    fn = _COERCE.get(key)
    if fn is bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"bad boolean for {key!r}: {value!r}")
    if fn is None:
        return value
    try:
        return fn(value)
    except ValueError:
        raise UsageError(f"bad value for {key!r}: {value!r}") from None


_ENUM_KEYS = {
    "policy": ("strict", "forward_fill"),
    "zero_sign": ("error", "positive"),
    "init": ("random", "all_positive", "data_signs"),
    "grid_spacing": ("linear", "log"),
}


def _validate_settings(settings: dict) -> None:
    for key, allowed in _ENUM_KEYS.items():
        if settings[key] not in allowed:
            raise UsageError(f"{key} must be one of {allowed}, got {settings[key]!r}")
    if settings["tau"] < 3:
        raise UsageError("tau must be >= 3")
    if settings["stride"] < 1:
        raise UsageError("stride must be >= 1")
    for key in ("replicas", "equil_sweeps", "measure_sweeps", "bins", "cap"):
        if settings[key] < 1:
            raise UsageError(f"{key} must be >= 1")
    if settings["min_drop"] < 0:
        raise UsageError("min_drop must be >= 0")
    if settings["workers"] is not None and settings["workers"] < 1:
        raise UsageError("workers must be >= 1")


def resolve_settings(args: argparse.Namespace, file_cfg: dict) -> dict:
    """Apply precedence CLI flag > config file > default for every key."""
    settings = {}
    for key, default in DEFAULTS.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            settings[key] = cli_val
        elif key in file_cfg:
            settings[key] = _coerce(key, file_cfg[key])
        else:
            settings[key] = default
    if settings["stride"] is None:
        settings["stride"] = settings["tau"]
    _validate_settings(settings)
    return settings


def config_hash(settings: dict) -> str:
    blob = "|".join(f"{k}={settings[k]!r}" for k in _HASH_KEYS)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def temperature_grid(settings: dict) -> np.ndarray:
    lo, hi = settings["grid_lo"], settings["grid_hi"]
    points, spacing = settings["grid_points"], settings["grid_spacing"]
    if not lo < hi:
        raise UsageError(f"grid_lo must be below grid_hi, got {lo} >= {hi}")
    if points < 3:
        raise UsageError("grid_points must be >= 3")
    if spacing == "log":
        if lo <= 0:
            raise UsageError("log spacing needs grid_lo > 0")
        return np.geomspace(lo, hi, points)
    if spacing == "linear":
        return np.linspace(lo, hi, points)
    raise UsageError(f"grid_spacing must be 'linear' or 'log', got {spacing!r}")


def effective_workers(settings: dict) -> int:
    workers = settings["workers"] or os.cpu_count() or 1
    cap = os.environ.get("BALANCE_THREADS")
    if cap:
        try:
            workers = min(workers, int(cap))
        except ValueError:
            raise UsageError(f"BALANCE_THREADS must be an integer, got {cap!r}") from None
    return max(1, workers)


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _windows_dir(out: str) -> str:
    return os.path.join(out, "windows")


def _window_path(out: str, window_id: str) -> str:
    return os.path.join(_windows_dir(out), window_id)


def _parse_window_id(window_id: str) -> int:
    m = _WINDOW_ID_RE.match(window_id)
    if not m:
        raise UsageError(f"malformed window id {window_id!r}; expected win_<start_index>")
    return int(m.group(1))


def discover_windows(out: str, only: str | None = None) -> list[str]:
    """Window ids under out/windows, ordered by start index."""
    if only is not None:
        _parse_window_id(only)
        if not os.path.isdir(_window_path(out, only)):
            raise UsageError(f"window {only!r} not found under {out}")
        return [only]
    root = _windows_dir(out)
    if not os.path.isdir(root):
        return []
    found = []
    for name in os.listdir(root):
        m = _WINDOW_ID_RE.match(name)
        if m and os.path.isdir(os.path.join(root, name)):
            found.append((int(m.group(1)), name))
    return [name for _, name in sorted(found)]


def _prices_source(settings: dict) -> str:
    if settings["prices"]:
        return settings["prices"]
    fallback = os.path.join(settings["out"], "prices.csv")
    if os.path.exists(fallback):
        return fallback
    raise UsageError(
        "no price source: set 'prices' to a CSV path or run 'synth' first"
    )


@dataclass
class WindowSummary:
    """Per-window rollup stitched into report.json."""

    window_id: str
    start_date: str | None
    end_date: str | None
    gaussian_fit: dict | None
    t_c: float | None
    t_c_mf: float | None
    artifacts: dict
    error: str | None = None

    def to_json(self) -> dict:
        obj: dict = {
            "window_id": self.window_id,
            "start_date": self.start_date,
            "end_date": self.end_date,
            "t_c": self.t_c,
            "t_c_mf": self.t_c_mf,
            "gaussian_fit": self.gaussian_fit,
            "artifacts": self.artifacts,
        }
        if self.error is not None:
            obj["error"] = self.error
        return obj


def cmd_synth(settings: dict) -> int:
    try:
        spec = ingest.SynthSpec(
            n_assets=settings["n"],
            n_days=settings["days"],
            rho=settings["rho"],
            daily_vol=settings["vol"],
            seed=settings["seed"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = ingest.synthesize_market(spec)
    os.makedirs(settings["out"], exist_ok=True)
    path = os.path.join(settings["out"], "prices.csv")
    ingest.write_prices_csv(path, table)
    print(f"wrote {path} ({table.n_days} days x {table.n_assets} tickers)")
    return 0


def _preset_window(returns: ingest.ReturnMatrix, preset: str) -> ingest.WindowSpec:
    if preset not in WINDOW_PRESETS:
        known = ", ".join(sorted(WINDOW_PRESETS))
        raise UsageError(f"unknown preset {preset!r}; known presets: {known}")
    start_date, end_date = WINDOW_PRESETS[preset]
    rows = [i for i, d in enumerate(returns.dates) if start_date <= d <= end_date]
    if len(rows) < 3:
        raise UsageError(
            f"preset {preset!r} covers {len(rows)} return rows in this panel; need >= 3"
        )
    return ingest.WindowSpec(rows[0], len(rows))


def cmd_corr(settings: dict) -> int:
    source = _prices_source(settings)
    prices = ingest.load_prices(source, policy=settings["policy"])
    returns = ingest.log_returns(prices)
    if settings["preset"]:
        windows = [_preset_window(returns, settings["preset"])]
    else:
        windows = ingest.iter_windows(
            returns.n_rows, settings["tau"], settings["stride"]
        )
    if not windows:
        print(
            f"warning: no window of tau={settings['tau']} fits in "
            f"{returns.n_rows} return rows",
            file=sys.stderr,
        )
    fits = []
    written = 0
    for win in windows:
        window_id = f"win_{win.start_index}"
        try:
            corr = ingest.correlation_matrix(returns, win)
        except ingest.ZeroVariance as exc:
            if settings["strict"]:
                raise
            print(f"warning: {window_id}: {exc}; window skipped", file=sys.stderr)
            continue
        wdir = _window_path(settings["out"], window_id)
        os.makedirs(wdir, exist_ok=True)
        ingest.write_correlation_csv(os.path.join(wdir, "corr.csv"), corr)
        order = network.cluster_order(corr)
        network.write_cluster_order_csv(
            os.path.join(wdir, "cluster_order.csv"), corr.tickers, order
        )
        fit = ingest.fit_gaussian(corr)
        fits.append(
            {
                "window_id": window_id,
                "start_index": win.start_index,
                "start_date": returns.dates[win.start_index],
                "end_date": returns.dates[win.start_index + win.tau - 1],
                "gaussian_fit": {"mean": fit.mean, "std": fit.std, "count": fit.count},
            }
        )
        written += 1
    os.makedirs(settings["out"], exist_ok=True)
    _write_json(
        os.path.join(settings["out"], "fits.json"),
        {"tau": settings["tau"], "stride": settings["stride"], "windows": fits},
    )
    print(f"wrote {written} correlation window(s) under {_windows_dir(settings['out'])}")
    return 0


def _load_corr(out: str, window_id: str) -> ingest.CorrelationMatrix:
    path = os.path.join(_window_path(out, window_id), "corr.csv")
    if not os.path.exists(path):
        raise UsageError(f"{path} missing; run 'corr' first")
    return ingest.read_correlation_csv(path)


def _fits_index(out: str) -> dict[str, dict]:
    path = os.path.join(out, "fits.json")
    if not os.path.exists(path):
        return {}
    return {w["window_id"]: w for w in _read_json(path)["windows"]}


def cmd_net(settings: dict) -> int:
    windows = discover_windows(settings["out"], settings["window"])
    if not windows:
        raise UsageError(f"no correlation windows under {settings['out']}; run 'corr' first")
    for window_id in windows:
        corr = _load_corr(settings["out"], window_id)
        net = network.build_network(corr, zero_sign=settings["zero_sign"])
        hist = network.energy_landscape(
            net,
            network.SignState.from_network(net),
            bins=settings["bins"],
            cap=settings["cap"],
        )
        wdir = _window_path(settings["out"], window_id)
        network.write_landscape_csv(os.path.join(wdir, "landscape.csv"), hist)
        order = network.cluster_order(corr)
        network.write_cluster_order_csv(
            os.path.join(wdir, "cluster_order.csv"), corr.tickers, order
        )
        print(f"{window_id}: landscape total {hist.total}")
    return 0


def cmd_sim(settings: dict) -> int:
    windows = discover_windows(settings["out"], settings["window"])
    if not windows:
        raise UsageError(f"no correlation windows under {settings['out']}; run 'corr' first")
    grid = temperature_grid(settings)
    workers = effective_workers(settings)
    fits = _fits_index(settings["out"])
    chash = config_hash(settings)
    summaries = []
    for window_id in windows:
        start_index = _parse_window_id(window_id)
        meta = fits.get(window_id, {})
        try:
            corr = _load_corr(settings["out"], window_id)
            net = network.build_network(corr, zero_sign=settings["zero_sign"])
            base = simulate.SimConfig(
                temperature=float(grid[0]),
                init=settings["init"],
                equil_sweeps=settings["equil_sweeps"],
                measure_sweeps=settings["measure_sweeps"],
                seed=settings["seed"],
            )
            result = simulate.temperature_sweep(
                net,
                grid,
                settings["replicas"],
                base,
                window_index=start_index,
                workers=workers,
                min_drop=settings["min_drop"],
                anneal=settings["anneal"],
            )
            wdir = _window_path(settings["out"], window_id)
            simulate.write_sweep_csv(os.path.join(wdir, "sweep.csv"), result)
            fit = meta.get("gaussian_fit")
            if fit is None:
                g = ingest.fit_gaussian(corr)
                fit = {"mean": g.mean, "std": g.std, "count": g.count}
            summary = {
                "window_id": window_id,
                "start_date": meta.get("start_date"),
                "end_date": meta.get("end_date"),
                "t_c": result.t_c if result.t_c is not None else 0.0,
                "gaussian_fit": {"mean": fit["mean"], "std": fit["std"]},
                "config_hash": chash,
            }
            _write_json(os.path.join(wdir, "summary.json"), summary)
            summaries.append(summary)
            print(f"{window_id}: t_c = {summary['t_c']}")
        except (ingest.IngestError, network.NetworkError, simulate.SimulationError) as exc:
            summary = {
                "window_id": window_id,
                "start_date": meta.get("start_date"),
                "end_date": meta.get("end_date"),
                "t_c": None,
                "gaussian_fit": meta.get("gaussian_fit"),
                "config_hash": chash,
                "error": str(exc),
            }
            summaries.append(summary)
            print(f"warning: {window_id} failed: {exc}", file=sys.stderr)
    _write_json(os.path.join(settings["out"], "report.json"), {"windows": summaries})
    print(f"wrote {os.path.join(settings['out'], 'report.json')}")
    return 0


def cmd_mf(settings: dict) -> int:
    windows = discover_windows(settings["out"], settings["window"])
    if not windows:
        raise UsageError(f"no correlation windows under {settings['out']}; run 'corr' first")
    grid = temperature_grid(settings)
    use_gaussian = settings["mf_mu"] is not None
    if use_gaussian and settings["mf_sigma"] is None:
        raise UsageError("mf_mu given without mf_sigma")
    for window_id in windows:
        corr = _load_corr(settings["out"], window_id)
        net = network.build_network(corr, zero_sign=settings["zero_sign"])
        if use_gaussian:
            dist = meanfield.GaussianWeights(settings["mf_mu"], settings["mf_sigma"])
            dist_desc = {
                "kind": "gaussian",
                "mu": settings["mf_mu"],
                "sigma": settings["mf_sigma"],
            }
        else:
            dist = meanfield.make_empirical(
                network.triangle_weights(net), seed=settings["seed"]
            )
            dist_desc = {"kind": "empirical", "count": int(dist.sample.size)}
        n = net.n
        curve = []
        for temp in grid:
            params = meanfield.MeanFieldParams(n=n, beta=1.0 / float(temp), weight_dist=dist)
            try:
                res = meanfield.solve_fixed_point(params, init=float(n - 2))
                curve.append({"T": float(temp), "q_star": res.q_star})
            except meanfield.NoConvergence:
                curve.append({"T": float(temp), "q_star": None})
        try:
            t_c = meanfield.critical_temperature_mf(
                dist, n, settings["mf_t_lo"], settings["mf_t_hi"]
            )
        except meanfield.BadBracket:
            t_c = None  # no ordered branch inside the bracket: reported as none
        payload = {
            "window_id": window_id,
            "params": {"n": n, "weight_dist": dist_desc},
            "t_c": t_c,
            "branch_curve": curve,
        }
        wdir = _window_path(settings["out"], window_id)
        _write_json(os.path.join(wdir, "meanfield.json"), payload)
        print(f"{window_id}: t_c_mf = {t_c}")
    return 0


def cmd_report(settings: dict) -> int:
    windows = discover_windows(settings["out"], settings["window"])
    if not windows:
        raise UsageError(f"nothing to report under {settings['out']}")
    rows = []
    for window_id in windows:
        wdir = _window_path(settings["out"], window_id)
        summary_path = os.path.join(wdir, "summary.json")
        mf_path = os.path.join(wdir, "meanfield.json")
        summary = _read_json(summary_path) if os.path.exists(summary_path) else {}
        mf = _read_json(mf_path) if os.path.exists(mf_path) else {}
        artifacts = {}
        for name in ("corr.csv", "cluster_order.csv", "landscape.csv", "sweep.csv"):
            if os.path.exists(os.path.join(wdir, name)):
                artifacts[name.split(".")[0]] = os.path.join("windows", window_id, name)
        rows.append(
            WindowSummary(
                window_id=window_id,
                start_date=summary.get("start_date"),
                end_date=summary.get("end_date"),
                gaussian_fit=summary.get("gaussian_fit"),
                t_c=summary.get("t_c"),
                t_c_mf=mf.get("t_c"),
                artifacts=artifacts,
                error=summary.get("error"),
            )
        )
    _write_json(
        os.path.join(settings["out"], "report.json"),
        {"windows": [r.to_json() for r in rows]},
    )
    header = f"{'window':<12} {'start':<12} {'end':<12} {'fit_mean':>9} {'t_c':>8} {'t_c_mf':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        fit_mean = f"{r.gaussian_fit['mean']:.4f}" if r.gaussian_fit else "-"
        t_c = f"{r.t_c:.4f}" if r.t_c is not None else "-"
        t_c_mf = f"{r.t_c_mf:.4f}" if r.t_c_mf is not None else "-"
        print(
            f"{r.window_id:<12} {r.start_date or '-':<12} {r.end_date or '-':<12} "
            f"{fit_mean:>9} {t_c:>8} {t_c_mf:>8}"
        )
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "corr": cmd_corr,
    "net": cmd_net,
    "sim": cmd_sim,
    "mf": cmd_mf,
    "report": cmd_report,
}

_FLAG_HELP = {
    "prices": "input price CSV (wide format: date,TICK1,...)",
    "out": "output directory",
    "n": "synthetic panel: number of tickers",
    "days": "synthetic panel: number of price days",
    "rho": "synthetic panel: uniform return correlation in [0, 1)",
    "vol": "synthetic panel: daily return volatility",
    "tau": "window length in return rows",
    "stride": "spacing between window starts (default: tau)",
    "policy": "missing-data policy: strict | forward_fill",
    "zero_sign": "sign for exactly-zero correlations: error | positive",
    "preset": "named date-range window preset",
    "grid_lo": "lowest sweep temperature",
    "grid_hi": "highest sweep temperature",
    "grid_points": "number of sweep temperatures",
    "grid_spacing": "temperature spacing: log | linear",
    "replicas": "independent runs per temperature",
    "equil_sweeps": "equilibration sweeps per run",
    "measure_sweeps": "measurement sweeps per run",
    "init": "initial signs: all_positive | random | data_signs",
    "min_drop": "minimum order-parameter drop that counts as a transition",
    "seed": "base seed for all derived streams",
    "workers": "worker threads (capped by BALANCE_THREADS)",
    "bins": "landscape histogram bins per axis",
    "cap": "landscape display saturation count",
    "window": "restrict to one window id (win_<start_index>)",
    "mf_mu": "mean-field: Gaussian weight mean (overrides empirical weights)",
    "mf_sigma": "mean-field: Gaussian weight std",
    "mf_t_lo": "mean-field bisection lower temperature",
    "mf_t_hi": "mean-field bisection upper temperature",
    "anneal": "carry sign state between temperatures instead of re-initializing",
    "strict": "fail on zero-variance windows instead of skipping",
}

_COMMAND_FLAGS = {
    "synth": ("out", "n", "days", "rho", "vol", "seed"),
    "corr": ("out", "prices", "tau", "stride", "policy", "preset", "strict"),
    "net": ("out", "zero_sign", "bins", "cap", "window"),
    "sim": (
        "out",
        "zero_sign",
        "grid_lo",
        "grid_hi",
        "grid_points",
        "grid_spacing",
        "replicas",
        "equil_sweeps",
        "measure_sweeps",
        "init",
        "min_drop",
        "seed",
        "workers",
        "window",
        "anneal",
    ),
    "mf": (
        "out",
        "zero_sign",
        "grid_lo",
        "grid_hi",
        "grid_points",
        "grid_spacing",
        "seed",
        "window",
        "mf_mu",
        "mf_sigma",
        "mf_t_lo",
        "mf_t_hi",
    ),
    "report": ("out", "window"),
}

_COMMAND_HELP = {
    "synth": "generate a synthetic price panel",
    "corr": "windowed correlation matrices, moment fits, cluster orders",
    "net": "triangle energy landscapes and cluster orders",
    "sim": "Metropolis temperature sweeps and critical-temperature estimates",
    "mf": "mean-field ordered-branch curves and critical temperatures",
    "report": "merge per-window summaries into report.json and print a table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="balancenet",
        description="Balance dynamics on signed weighted market correlation networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in _COMMAND_FLAGS.items():
        sp = sub.add_parser(name, help=_COMMAND_HELP[name])
        sp.add_argument("--config", default=None, help="flat 'key = value' config file")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            if _COERCE.get(key) is bool:
                sp.add_argument(
                    flag, dest=key, action=argparse.BooleanOptionalAction, default=None,
                    help=_FLAG_HELP[key],
                )
            else:
                sp.add_argument(
                    flag, dest=key, type=_COERCE.get(key, str), default=None,
                    help=_FLAG_HELP[key],
                )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = load_config_file(args.config)
        settings = resolve_settings(args, file_cfg)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
