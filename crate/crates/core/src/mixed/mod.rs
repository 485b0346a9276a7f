//! Single-random-term linear mixed models: REML, G-BLUP, ridge BLUP on
//! arbitrary features, and a mixed-model association scan.

pub mod blup;
pub mod gwas;
pub mod reml;

pub use blup::{
    gblup_fit, gblup_fit_with, reml_fit, reml_fit_spectrum, rrblup_fit, rrblup_fit_with, GblupFit, MixedModelFit,
};
pub use gwas::{gwas_emma, gwas_emma_with, t_test_pvalue, GwasFlag, GwasOptions, GwasResult, MarkerTest};
pub use reml::{RemlOptimum, RemlOptions, RemlProblem, VarianceComponents};
