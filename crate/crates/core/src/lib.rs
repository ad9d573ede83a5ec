//! Kernel ridge regression with cyclic convolutional kernels on the Boolean
//! hypercube `{-1, +1}^d`.
//!
//! The kernel `K(x, x') = (1/d) sum_k kappa(<x_(k,q), x'_(k,q)>/q)` averages an
//! inner function over all cyclic windows of length `q`. Its eigenfunctions are
//! the parity monomials `Y_S` with cyclic diameter at most `q`, and the
//! eigenvalues are known in closed form, which makes bias, variance and
//! training error of kernel ridge regression computable exactly.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the scalar type. The rate calculus in [`rates`] works in `f64`.

/// Version of this library, recorded in experiment metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod combin;
pub mod error;
pub mod hypercube;
pub mod kernel;
pub mod krr;
pub mod linalg;
pub mod rates;
pub mod scalar;
pub mod spectrum;

pub use error::{Error, Result};
pub use hypercube::{
    count_local_subsets, cyclic_diameter, distinct_points_seed, enumerate_local_subsets, make_dataset, monomial_eval, sample_points,
    Dataset, HypercubePoint, IndexSet,
};
pub use kernel::{
    gram, kernel_eval, krawtchouk, regularity_report, xi_coefficients, ConvKernel, InnerFunction,
    RegularityReport, XiCoefficients,
};
pub use krr::{
    closed_form_risk, expected_training_error, fit, fixed_design_bounds, fixed_design_bounds_general,
    monte_carlo_risk, predict, BoundsReport, KrrModel, RidgePath, RiskInputs, RiskMethod, RiskReport, TestMode,
};
pub use rates::{
    beta_star, fractional_parts, optimal_reg_rate, rate_exponents, training_error_regime, BetaStar,
    OptimalRegRate, PhaseReport, RateExponents, RateParams, Regime,
};
pub use scalar::Scalar;
pub use spectrum::{
    brute_force_spectrum, diagnostics, feature_bundle, full_spectrum, one_two_split, q_matrix, select_truncation,
    DiagnosticsReport, EigenPair, FeatureBundle, OneTwoSplit, Spectrum,
};

pub type Dataset64 = Dataset<f64>;
pub type InnerFunction64 = InnerFunction<f64>;
pub type ConvKernel64 = ConvKernel<f64>;
pub type XiCoefficients64 = XiCoefficients<f64>;
pub type Spectrum64 = Spectrum<f64>;
pub type FeatureBundle64 = FeatureBundle<f64>;
pub type KrrModel64 = KrrModel<f64>;
pub type RiskReport64 = RiskReport<f64>;
pub type BoundsReport64 = BoundsReport<f64>;
pub type RidgePath64 = RidgePath<f64>;

pub type Dataset32 = Dataset<f32>;
pub type InnerFunction32 = InnerFunction<f32>;
pub type ConvKernel32 = ConvKernel<f32>;
pub type XiCoefficients32 = XiCoefficients<f32>;
pub type Spectrum32 = Spectrum<f32>;
pub type FeatureBundle32 = FeatureBundle<f32>;
pub type KrrModel32 = KrrModel<f32>;
pub type RiskReport32 = RiskReport<f32>;
pub type BoundsReport32 = BoundsReport<f32>;
pub type RidgePath32 = RidgePath<f32>;
