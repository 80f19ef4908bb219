"""Mean-field self-consistency for the weighted two-star order parameter.

The closed pair expectation q(Q, J, beta) feeds a self-consistency map
f(Q) = (N-2) * E[J q(Q, J, beta)] over the triangle-coupling distribution,
either Gaussian (quadrature) or an empirical sample (plain average). The
ordered phase exists while f has a nonzero fixed point; its disappearance
under heating locates the mean-field critical temperature, found by
bisection. Solutions are restricted to Q >= 0, the branch the heating
protocol probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

__all__ = [
    "MeanFieldError",
    "NoConvergence",
    "BadBracket",
    "QuadratureError",
    "GaussianWeights",
    "EmpiricalWeights",
    "MeanFieldParams",
    "FixedPointResult",
    "link_mean",
    "two_star_expectation",
    "self_consistency_rhs",
    "solve_fixed_point",
    "critical_temperature_mf",
    "make_empirical",
]

GAUSS_TAIL_SIGMAS = 8.0  # mass beyond is < 1e-15
FIXED_POINT_TOL = 1e-8
FIXED_POINT_MAX_ITER = 10_000
DAMPING = 0.5  # undamped iteration can oscillate near the spinodal
TRIVIAL_EPS = 1e-6
BRACKET_TOL = 1e-3
EMPIRICAL_LIMIT = 1_000_000


class MeanFieldError(ValueError):
    pass


class NoConvergence(MeanFieldError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"fixed-point iteration stalled at residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class BadBracket(MeanFieldError):
    """The requested temperature bracket does not straddle the transition."""


class QuadratureError(MeanFieldError):
    pass


@dataclass(frozen=True)
class GaussianWeights:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True, eq=False)
class EmpiricalWeights:
    sample: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.sample, dtype=np.float64).ravel()
        if arr.size == 0:
            raise ValueError("empirical weight sample must be nonempty")
        object.__setattr__(self, "sample", arr)


@dataclass(frozen=True)
class MeanFieldParams:
    n: int
    beta: float
    weight_dist: GaussianWeights | EmpiricalWeights

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be >= 3")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class FixedPointResult:
    q_star: float
    branch: str  # "trivial" or "positive"
    iterations: int
    residual: float


def link_mean(q_raw: float, beta: float) -> float:
    """Mean link sign implied by a raw two-star field: tanh(beta Q)."""
    return math.tanh(beta * q_raw)


def two_star_expectation(q_raw: float, j, beta: float):
    """Closed pair expectation of two signs sharing a node, given field Q.

    Ratio of three exponentials in 2 beta Q and -2 beta J tanh(beta Q);
    evaluated with the largest exponent factored out, so it stays finite for
    arbitrarily large beta Q. Vectorizes over ``j``.
    """
    j_arr = np.asarray(j, dtype=np.float64)
    a = 2.0 * beta * q_raw
    b = -2.0 * beta * j_arr * math.tanh(beta * q_raw)
    m = np.maximum(abs(a), b)
    ea = np.exp(a - m)
    eb = np.exp(b - m)
    ena = np.exp(-a - m)
    out = (ea - 2.0 * eb + ena) / (ea + 2.0 * eb + ena)
    if np.isscalar(j) or j_arr.ndim == 0:
        return float(out)
    return out


def _gaussian_pdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    z = (x - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def self_consistency_rhs(q_raw: float, params: MeanFieldParams) -> float:
    """The map f(Q) = (N-2) * E[J q(Q, J, beta)] over the weight distribution.

    Gaussian weights integrate by adaptive quadrature over mu +- 8 sigma (a
    point mass when sigma = 0); empirical weights average over the sample with
    the same J-weighted integrand.
    """
    n, beta, dist = params.n, params.beta, params.weight_dist
    if isinstance(dist, EmpiricalWeights):
        js = dist.sample
        return float((n - 2) * np.mean(js * two_star_expectation(q_raw, js, beta)))
    if dist.sigma == 0.0:
        return (n - 2) * dist.mu * two_star_expectation(q_raw, dist.mu, beta)

    def integrand(jw: float) -> float:
        return (
            jw
            * float(_gaussian_pdf(np.asarray(jw), dist.mu, dist.sigma))
            * two_star_expectation(q_raw, jw, beta)
        )

    lo = dist.mu - GAUSS_TAIL_SIGMAS * dist.sigma
    hi = dist.mu + GAUSS_TAIL_SIGMAS * dist.sigma
    res = quad(integrand, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=200, full_output=1)
    if len(res) > 3:
        raise QuadratureError(f"quadrature did not converge: {res[3]}")
    return (n - 2) * res[0]


def solve_fixed_point(params: MeanFieldParams, init: float) -> FixedPointResult:
    """Damped iteration Q <- (1 - a) Q + a f(Q) with a = 0.5.

    Start at 0 for the trivial branch; start at N - 2 (the largest reachable
    field) to probe the ordered branch without basin hopping.
    """
    if init < 0.0:
        raise ValueError("init must be >= 0")
    q = float(init)
    for it in range(1, FIXED_POINT_MAX_ITER + 1):
        f = self_consistency_rhs(q, params)
        residual = abs(q - f)
        if residual < FIXED_POINT_TOL:
            branch = "positive" if abs(q) > TRIVIAL_EPS else "trivial"
            return FixedPointResult(q_star=q, branch=branch, iterations=it, residual=residual)
        q = (1.0 - DAMPING) * q + DAMPING * f
    raise NoConvergence(residual, FIXED_POINT_MAX_ITER)


def _positive_branch_exists(
    weight_dist: GaussianWeights | EmpiricalWeights, n: int, temperature: float
) -> bool:
    params = MeanFieldParams(n=n, beta=1.0 / temperature, weight_dist=weight_dist)
    try:
        res = solve_fixed_point(params, init=float(n - 2))
    except NoConvergence:
        # critically slow iteration only happens hugging the spinodal; the
        # bracket tolerance absorbs the misclassification
        return False
    return res.branch == "positive"


def critical_temperature_mf(
    weight_dist: GaussianWeights | EmpiricalWeights,
    n: int,
    t_lo: float,
    t_hi: float,
    bracket_tol: float = BRACKET_TOL,
) -> float:
    """Bisect on temperature for the disappearance of the ordered branch.

    Requires the branch to exist at ``t_lo`` and not at ``t_hi``; the order
    parameter jumps (first-order transition), so branch existence is a clean
    bisection predicate.
    """
    if not 0.0 < t_lo < t_hi:
        raise ValueError("need 0 < t_lo < t_hi")
    if not _positive_branch_exists(weight_dist, n, t_lo):
        raise BadBracket(f"no ordered branch at t_lo = {t_lo}")
    if _positive_branch_exists(weight_dist, n, t_hi):
        raise BadBracket(f"ordered branch still present at t_hi = {t_hi}")
    lo, hi = t_lo, t_hi
    while hi - lo > bracket_tol:
        mid = 0.5 * (lo + hi)
        if _positive_branch_exists(weight_dist, n, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def make_empirical(
    sample, limit: int = EMPIRICAL_LIMIT, seed: int = 0
) -> EmpiricalWeights:
    """Empirical weight distribution, deterministically subsampled when huge."""
    arr = np.asarray(sample, dtype=np.float64).ravel()
    if arr.size > limit:
        rng = np.random.default_rng(seed)
        arr = arr[rng.choice(arr.size, size=limit, replace=False)]
    return EmpiricalWeights(arr)
