"""Price panels, windowed log-return correlations, and synthetic market generation.

Loaders work on wide CSV files (``date,TICK1,TICK2,...``). Correlation
matrices are plain Pearson over a window of return rows, symmetrized with the
diagonal forced to exactly 1. :func:`synthesize_market` produces an
equicorrelated geometric price panel as an offline stand-in for real exports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

__all__ = [
    "IngestError",
    "MalformedCsv",
    "NonPositivePrice",
    "UnorderedDates",
    "MissingCell",
    "TooFewTickers",
    "ZeroVariance",
    "PriceTable",
    "ReturnMatrix",
    "WindowSpec",
    "CorrelationMatrix",
    "GaussianFit",
    "SynthSpec",
    "load_prices",
    "write_prices_csv",
    "log_returns",
    "iter_windows",
    "correlation_matrix",
    "fit_gaussian",
    "synthesize_market",
    "write_correlation_csv",
    "read_correlation_csv",
]

FLOAT_FMT = "%.17g"  # round-trips every IEEE double exactly


class IngestError(ValueError):
    """Base error for panel loading and windowing problems."""


class MalformedCsv(IngestError):
    pass


class NonPositivePrice(IngestError):
    pass


class UnorderedDates(IngestError):
    pass


class MissingCell(IngestError):
    pass


class TooFewTickers(IngestError):
    pass


class ZeroVariance(IngestError):
    """A column is constant inside the requested window."""

    def __init__(self, ticker: str):
        self.ticker = ticker
        super().__init__(f"zero return variance for {ticker!r} inside the window")


def _check_dates(dates: list[str]) -> None:
    try:
        parsed = [date.fromisoformat(d) for d in dates]
    except ValueError as exc:
        raise MalformedCsv(f"bad ISO date: {exc}") from None
    for a, b in zip(parsed, parsed[1:]):
        if b <= a:
            raise UnorderedDates(f"dates not strictly increasing at {b.isoformat()}")


@dataclass
class PriceTable:
    """Dated closing prices for N tickers; the raw input panel."""

    tickers: list[str]
    dates: list[str]
    closes: np.ndarray  # (T, N), strictly positive

    def __post_init__(self):
        self.closes = np.ascontiguousarray(self.closes, dtype=np.float64)
        if self.closes.ndim != 2:
            raise MalformedCsv("closes must be a days x tickers matrix")
        t, n = self.closes.shape
        if len(self.dates) != t or len(self.tickers) != n:
            raise MalformedCsv("tickers/dates do not match the price matrix shape")
        if n < 3:
            raise TooFewTickers(f"need at least 3 tickers, got {n}")
        if np.isnan(self.closes).any():
            raise MissingCell("price matrix contains missing cells")
        if not (self.closes > 0).all():
            bad = np.argwhere(self.closes <= 0)[0]
            raise NonPositivePrice(
                f"non-positive price for {self.tickers[bad[1]]!r} on {self.dates[bad[0]]}"
            )
        _check_dates(self.dates)

    @property
    def n_days(self) -> int:
        return self.closes.shape[0]

    @property
    def n_assets(self) -> int:
        return self.closes.shape[1]


@dataclass
class ReturnMatrix:
    """Log-returns of a price panel; one row fewer than the prices."""

    tickers: list[str]
    dates: list[str]  # date of the later day of each consecutive pair
    returns: np.ndarray  # (T-1, N)

    def __post_init__(self):
        self.returns = np.ascontiguousarray(self.returns, dtype=np.float64)
        if len(self.dates) != self.returns.shape[0]:
            raise MalformedCsv("return dates do not match the return matrix shape")

    @property
    def n_rows(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class WindowSpec:
    """A contiguous block of return rows: ``[start_index, start_index + tau)``."""

    start_index: int
    tau: int
    stride: int | None = None  # None means non-overlapping windows (stride = tau)

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.tau)
        if self.tau < 3:
            raise ValueError(f"tau must be >= 3, got {self.tau}")
        if self.start_index < 0:
            raise ValueError("start_index must be >= 0")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def iter_windows(n_rows: int, tau: int, stride: int | None = None) -> list[WindowSpec]:
    """All windows of length tau that fit in n_rows, spaced by stride."""
    if stride is None:
        stride = tau
    out = []
    start = 0
    while start + tau <= n_rows:
        out.append(WindowSpec(start, tau, stride))
        start += stride
    return out


@dataclass
class CorrelationMatrix:
    """Pearson correlation of return columns over one window.

    ``window`` is None when the matrix was re-read from a CSV, whose format
    carries no window metadata.
    """

    tickers: list[str]
    values: np.ndarray  # (N, N), symmetric, unit diagonal
    window: WindowSpec | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        n = self.values.shape[0]
        if self.values.shape != (n, n) or len(self.tickers) != n:
            raise MalformedCsv("correlation matrix shape does not match tickers")
        if not np.array_equal(self.values, self.values.T):
            raise MalformedCsv("correlation matrix must be symmetric")
        if not np.all(np.diag(self.values) == 1.0):
            raise MalformedCsv("correlation diagonal must be exactly 1")
        off = np.abs(self.values) > 1.0
        if off.any():
            raise MalformedCsv("correlation elements must lie in [-1, 1]")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GaussianFit:
    """Sample moments of the off-diagonal correlation elements."""

    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class SynthSpec:
    """Equicorrelated synthetic market: one common factor plus noise."""

    n_assets: int
    n_days: int
    rho: float = 0.0
    daily_vol: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.n_assets < 3:
            raise ValueError("n_assets must be >= 3")
        if self.n_days < 2:
            raise ValueError("n_days must be >= 2")
        if self.daily_vol <= 0:
            raise ValueError("daily_vol must be positive")


def load_prices(path, policy: str = "strict") -> PriceTable:
    """Load a wide CSV into a PriceTable.

    ``forward_fill`` patches an empty cell with the previous day's close;
    ``strict`` rejects any gap. A gap in the first row can never be filled.
    """
    if policy not in ("strict", "forward_fill"):
        raise ValueError(f"unknown missing-data policy {policy!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2 or rows[0][0] != "date":
        raise MalformedCsv(f"{path}: expected header 'date,TICK1,...'")
    tickers = [t.strip() for t in rows[0][1:]]
    if len(tickers) < 3:
        raise TooFewTickers(f"{path}: need at least 3 tickers, got {len(tickers)}")
    dates: list[str] = []
    data: list[list[float]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue  # trailing blank line
        if len(row) != len(tickers) + 1:
            raise MalformedCsv(f"{path}:{lineno}: expected {len(tickers) + 1} cells")
        dates.append(row[0].strip())
        vals = []
        for c, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                if policy == "forward_fill" and data:
                    vals.append(data[-1][c])
                else:
                    raise MissingCell(
                        f"{path}:{lineno}: empty cell for {tickers[c]!r} under policy {policy!r}"
                    )
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise MalformedCsv(
                        f"{path}:{lineno}: non-numeric price {cell!r}"
                    ) from None
        data.append(vals)
    if not data:
        raise MalformedCsv(f"{path}: no data rows")
    return PriceTable(tickers, dates, np.array(data))


def write_prices_csv(path, table: PriceTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("date," + ",".join(table.tickers) + "\n")
        for d, row in zip(table.dates, table.closes):
            fh.write(d + "," + ",".join(FLOAT_FMT % v for v in row) + "\n")


def log_returns(prices: PriceTable) -> ReturnMatrix:
    """Log of the ratio of consecutive closes, per ticker."""
    returns = np.diff(np.log(prices.closes), axis=0)
    return ReturnMatrix(prices.tickers, prices.dates[1:], returns)


def correlation_matrix(returns: ReturnMatrix, window: WindowSpec) -> CorrelationMatrix:
    """Pearson correlation over the window's rows.

    The result is exactly symmetric with a diagonal of exactly 1; tiny
    floating-point excursions outside [-1, 1] are clipped.
    """
    rows = returns.returns
    if window.start_index + window.tau > rows.shape[0]:
        raise ValueError(
            f"window [{window.start_index}, {window.start_index + window.tau}) "
            f"does not fit in {rows.shape[0]} return rows"
        )
    sub = rows[window.start_index : window.start_index + window.tau]
    stds = sub.std(axis=0)
    for i in np.flatnonzero(stds == 0.0):
        raise ZeroVariance(returns.tickers[int(i)])
    c = np.corrcoef(sub, rowvar=False)
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return CorrelationMatrix(list(returns.tickers), c, window)


def fit_gaussian(corr: CorrelationMatrix) -> GaussianFit:
    """Mean and standard deviation of the upper-triangle correlation elements."""
    iu = np.triu_indices(corr.n, k=1)
    vals = corr.values[iu]
    return GaussianFit(mean=float(vals.mean()), std=float(vals.std()), count=vals.size)


_SYNTH_EPOCH = date(2005, 1, 3)
_SYNTH_START_PRICE = 100.0


def synthesize_market(spec: SynthSpec) -> PriceTable:
    """Geometric price paths with uniform pairwise return correlation rho.

    Returns follow ``x_i = sqrt(rho) * m + sqrt(1 - rho) * e_i`` with m and e_i
    independent standard normals, scaled by daily_vol. Bit-deterministic for a
    given spec.
    """
    rng = np.random.default_rng(spec.seed)
    n_ret = spec.n_days - 1
    m = rng.standard_normal((n_ret, 1))
    e = rng.standard_normal((n_ret, spec.n_assets))
    x = spec.daily_vol * (np.sqrt(spec.rho) * m + np.sqrt(1.0 - spec.rho) * e)
    log_prices = np.vstack([np.zeros(spec.n_assets), np.cumsum(x, axis=0)])
    closes = _SYNTH_START_PRICE * np.exp(log_prices)
    dates = [(_SYNTH_EPOCH + timedelta(days=t)).isoformat() for t in range(spec.n_days)]
    tickers = [f"S{i:03d}" for i in range(spec.n_assets)]
    return PriceTable(tickers, dates, closes)


def write_correlation_csv(path, corr: CorrelationMatrix) -> None:
    """Ticker-labelled square CSV; first row and first column are tickers."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("," + ",".join(corr.tickers) + "\n")
        for t, row in zip(corr.tickers, corr.values):
            fh.write(t + "," + ",".join(FLOAT_FMT % v for v in row) + "\n")


def read_correlation_csv(path, window: WindowSpec | None = None) -> CorrelationMatrix:
    """Inverse of :func:`write_correlation_csv`; exact for %.17g output."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "":
        raise MalformedCsv(f"{path}: missing ticker header row")
    tickers = rows[0][1:]
    n = len(tickers)
    values = np.empty((n, n))
    body = [r for r in rows[1:] if r]
    if len(body) != n:
        raise MalformedCsv(f"{path}: expected {n} data rows, got {len(body)}")
    for i, row in enumerate(body):
        if len(row) != n + 1 or row[0] != tickers[i]:
            raise MalformedCsv(f"{path}: row {i + 2} does not match the ticker header")
        values[i] = [float(v) for v in row[1:]]
    return CorrelationMatrix(tickers, values, window)
