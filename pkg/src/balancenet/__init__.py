"""Signed weighted correlation networks of stock returns under balance dynamics.

Pipeline: price panel -> windowed log-return correlations -> signed weighted
complete network -> Metropolis sign dynamics / mean-field self-consistency ->
critical-temperature estimates per window.
"""

from balancenet.ingest import (
    CorrelationMatrix,
    GaussianFit,
    PriceTable,
    ReturnMatrix,
    SynthSpec,
    WindowSpec,
    correlation_matrix,
    fit_gaussian,
    iter_windows,
    load_prices,
    log_returns,
    synthesize_market,
)
from balancenet.meanfield import (
    EmpiricalWeights,
    FixedPointResult,
    GaussianWeights,
    MeanFieldParams,
    critical_temperature_mf,
    link_mean,
    self_consistency_rhs,
    solve_fixed_point,
    two_star_expectation,
)
from balancenet.network import (
    EnergyReport,
    Histogram2D,
    SignedWeightedNetwork,
    SignState,
    build_network,
    cluster_order,
    delta_energy,
    energy,
    energy_landscape,
    local_field,
    mean_two_star,
    triangle_weights,
)
from balancenet.simulate import (
    ObservableTrace,
    SimConfig,
    SweepResult,
    estimate_tc,
    exact_ensemble,
    metropolis_run,
    mix_seed,
    temperature_sweep,
)

__version__ = "0.1.0"
