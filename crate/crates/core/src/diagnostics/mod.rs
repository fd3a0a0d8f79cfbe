//! Divergences, statistical tests and numerical identity checks.

pub mod divergence;
pub mod identities;
pub mod stats;

pub use divergence::{bregman, chi2_gaussian, kl_gaussian, GaussianLaw};
pub use identities::{
    assumption1_check, brascamp_lieb_quotient, convolution_curvature_witness, gaussian_convolution_pi,
    gaussian_llt_identity, normalized_quartic, quartic_block_condition, x4_counterexample_check, ConvolutionWitness,
    QuarticReport, RelativeConvexityReport,
};
pub use stats::{energy_test, ks_statistic, EnergyTest};
