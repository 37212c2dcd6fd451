//! Generic chaining laboratory: γ2 over finite point clouds, Dudley's
//! chaining-tree bound, ℓ1-hull surrogates and the log n comparison.

pub mod cloud;
pub mod cover;
pub mod dudley;
pub mod gamma2;
pub mod hull;
pub mod study;

pub use cloud::PointCloud;
pub use cover::{greedy_cover, minimal_cover_size, CoverTree, FarthestPointOrder};
pub use dudley::{dudley_bound, dudley_bound_opt, dudley_entropy_bound, dudley_from_sizes, DudleyOptimum};
pub use gamma2::{gamma2_exhaustive, gamma2_greedy, level_capacity, AdmissiblePartitionSequence};
pub use hull::{
    dual_norm_gamma2_bound, entropy_bound_check, gaussian_sup_mc, l1_hull_cloud,
    l1_hull_cloud_embedded, EntropyReport, EntropyRow, HullCloud,
};
pub use study::{logfactor_study, ExtraSamples, LogfactorConfig, LogfactorRow, LogfactorTable};
