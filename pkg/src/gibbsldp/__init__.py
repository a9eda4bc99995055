"""Gibbs measures, topological pressure, weak-Gibbs certification and
large-deviation rates on subshifts of finite type."""

from .errors import (
    AcceptanceError,
    ConfigError,
    CountSpaceTooLargeError,
    DualityGapError,
    EmptyRowOrColumnError,
    EngineError,
    EpsilonOutOfRangeError,
    InadmissibleWordError,
    InfeasibleError,
    NoConvergenceError,
    NotInvariantError,
    NotMarkovError,
    NotPrimitiveError,
    NumericError,
    RangeMismatchError,
    ValidationError,
    WindowTooShortError,
    ZeroHitsError,
)
from .shift import (
    BallLength,
    EmpiricalMeasure,
    OrbitSegment,
    Sft,
    Word,
    ball_to_cylinder_length,
    build_sft,
    count_words,
    empirical_measure,
    full_shift,
    golden_mean_shift,
)
from .measures import (
    MarkovMeasure,
    SampleStats,
    bernoulli,
    birkhoff_estimate,
    cylinder_mass,
    entropy,
    integrate,
    log_cylinder_mass,
    markov_measure,
    mcmillan_breiman_estimate,
    orbit_batch,
    philox_stream,
    sample_orbit,
    stationary_distribution,
)
from .thermo import (
    GibbsMarkov,
    Potential,
    PressureResult,
    TransferOperator,
    add_constant,
    constant_potential,
    equilibrium_residual,
    gibbs_measure,
    lift_potential,
    make_potential,
    normalize,
    pressure,
    random_potential,
    site_potential,
    tilt_potential,
    transfer_matrix,
)
from .certify import (
    DefectExtrema,
    GibbsConstant,
    WeakGibbsRow,
    WeakGibbsTable,
    defect_extrema_sweep,
    energy_limit_diagnostics,
    exact_defect_extrema,
    strong_gibbs_constant,
    weak_gibbs_table,
)
from .ldp import (
    Constraint,
    ConstraintSet,
    LdpEstimate,
    RateResult,
    exact_probability,
    ldp_bounds_report,
    mc_probability,
    rate_dual,
    rate_primal,
)

__version__ = "0.1.0"
