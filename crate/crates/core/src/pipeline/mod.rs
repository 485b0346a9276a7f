//! Full LER workflow: regions, rules, filtering, the pooled ridge fit,
//! prediction, importance scores and cross-validation.

pub mod cv;
pub mod importance;
pub mod model;
pub mod params;

pub use cv::{cross_validate, CvReport, FoldAccuracy};
pub use importance::{importance, rank_markers, ImportanceReport};
pub use model::{fit_ler, fit_ler_with_partition, predict_ler, LerFit, LerModel, PcProjection, StoredRule};
pub use params::{HyperParams, TargetMode};
