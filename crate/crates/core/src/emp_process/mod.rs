//! Empirical-process laboratory: symmetrized suprema over ℓ1 balls, regime
//! bounds, tail thresholds and their Monte Carlo checks.

pub mod bounds;
pub mod checks;
pub mod process;
pub mod search;

pub use bounds::{
    bernstein_envelope_tail, eigen_ratio, fixed_m_threshold, hoeffding_bound, massart_threshold,
    peeling_constants, peeling_threshold, regime_bound, Regime, RegimeInputs, TailBound, TailKind,
};
pub use checks::{
    bernstein_check, conditional_mean_en, contraction_check, massart_check,
    multivariate_contraction_check, peeling_check, symmetrization_check, ContractionReport,
    SymmetrizationReport, TailCheckReport,
};
pub use process::{
    BallSpec, ConstantLoss, IncrementProcess, LinearGaussianDesign, LinearProcess, LossProcess,
    ProcessGenerator, Restriction,
};
pub use search::{dual_norm_sup, process_sup, sup_ratio, symmetrized_sup_once, SearchConfig, SupResult};
