//! Principal components in asymmetric L2 norms.
//!
//! * [`stats`]: asymmetric norms, scalar expectiles and quantiles, τ-variance.
//! * [`laws`]: low-rank factorization under the asymmetric squared norm.
//! * [`components`]: TopDown, BottomUp and principal expectile components.

pub mod components;
pub mod error;
pub mod laws;
pub mod linalg;
pub mod stats;

pub use error::{Error, Result};
pub use laws::{fit_affine_basis, laws_fit, objective_value, AffineBasisFit, DataMatrix, Factorization, Init, LawsOptions, SubspaceConstraint};
pub use stats::{
    asym_l1_norm, asym_l2_norm_sq, asymptotic_variance, expectile_1d, quantile_1d, t_function,
    tau_deviation, tau_variance, ExpectileResult, SampleVector, TauLevel,
};
pub use components::{
    bottom_up, explained_variance, fit_components, pec_center, pec_cov, principal_expectile, top_down, Algorithm,
    ComponentSet, ComponentStats, LawsComponentOptions, PecOptions, PecState, SignRule,
};
