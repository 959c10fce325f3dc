//! Finite-sample guarantees: closed-form bounds, synthetic data with known
//! ground truth, and a Monte-Carlo validator tying the two together.

mod bounds;
mod synthetic;
mod validate;

pub use bounds::{
    bound_curve, choose_b, choose_b_with, choose_bins_umd, epsilon_bound_qa, epsilon_bound_qa_with,
    epsilon_bound_umd, BoundQuery, CurvePoint, LogBase,
};
pub use synthetic::{
    generate_synthetic, sample_synthetic, ClusterLaw, ConfidenceLaw, SyntheticDraw, SyntheticSpec, CORNER_OFFSET,
};
pub use validate::{integrate, true_bin_accuracy, validate_conditional_guarantee, ValidationReport, QUADRATURE_TOL};
