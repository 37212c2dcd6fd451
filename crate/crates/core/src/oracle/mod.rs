//! Oracle-inequality layer: excess risk, margin fitting, convex conjugates,
//! effective sparsity, the bound formulas, the event T_M(θ*) and the
//! end-to-end lasso experiment.

pub mod bounds;
pub mod experiment;
pub mod margin;
pub mod sparsity;

pub use bounds::{cone_constants, oracle_bounds, l1_error_radii, OracleBounds};
pub use experiment::{
    deviation_event_frequency, deviation_event_holds, oracle_experiment, sparse_approx_target, support_of,
    EventFrequency, OracleConfig, OracleReport, OracleRow, SparseTarget, TuningLevel,
    EVENT_SHELLS,
};
pub use margin::{
    convex_conjugate, convex_conjugate_numeric, excess_risk, fenchel_excess, margin_fit,
    ConjugateSpec, ExcessRisk, MarginFit, MarginFunction, TauNorm,
};
pub use sparsity::{effective_sparsity, EffectiveSparsity, MAX_SUPPORT};
