use serde::{Deserialize, Serialize};

use crate::error::{LerError, Result};
use crate::genotype::{load_hotspots, partition_equal, partition_hotspots, MarkerMatrix, RegionPartition};
use crate::rules::isle::derive_seed;
use crate::rules::{ElasticNetParams, IsleParams, Pruning};

/// What the region trees are fit to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Training-set G-BLUP genetic values.
    Blup,
    /// Trait values with the fixed effects regressed out.
    AdjustedY,
}

impl std::str::FromStr for TargetMode {
    type Err = LerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blup" => Ok(TargetMode::Blup),
            "adjusted_y" => Ok(TargetMode::AdjustedY),
            _ => Err(LerError::Config(format!("target must be blup or adjusted_y, got {s}"))),
        }
    }
}

/// Every tuning knob of an LER fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Equal-count regions per chromosome, used when `hotspots` is unset.
    pub nsplits: usize,
    /// Hotspot CSV whose positions cut chromosomes into regions.
    pub hotspots: Option<String>,
    pub nrules: usize,
    pub mean_depth: f64,
    pub proprow: f64,
    pub propcol: f64,
    pub memory: f64,
    pub min_node: usize,
    /// Cost-complexity pruning strength; 0 disables pruning.
    pub prune_cp: f64,
    pub l1_ratio: f64,
    pub enet_folds: usize,
    pub n_pcs: usize,
    pub target: TargetMode,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        let isle = IsleParams::default();
        HyperParams {
            nsplits: 5,
            hotspots: None,
            nrules: isle.nrules,
            mean_depth: isle.mean_depth,
            proprow: isle.proprow,
            propcol: isle.propcol,
            memory: isle.memory,
            min_node: isle.min_node,
            prune_cp: 0.0,
            l1_ratio: 0.5,
            enet_folds: 5,
            n_pcs: 3,
            target: TargetMode::Blup,
            cv_folds: 5,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.nsplits == 0 {
            return Err(LerError::Argument("nsplits must be at least 1".into()));
        }
        if !(self.prune_cp >= 0.0 && self.prune_cp.is_finite()) {
            return Err(LerError::Argument(format!(
                "prune_cp must be a non-negative number, got {}",
                self.prune_cp
            )));
        }
        if self.cv_folds < 2 {
            return Err(LerError::Argument("cv_folds must be at least 2".into()));
        }
        self.isle_params().validate()?;
        self.enet_params(0).validate()
    }

    pub fn isle_params(&self) -> IsleParams {
        IsleParams {
            nrules: self.nrules,
            mean_depth: self.mean_depth,
            proprow: self.proprow,
            propcol: self.propcol,
            memory: self.memory,
            min_node: self.min_node,
            pruning: if self.prune_cp > 0.0 {
                Pruning::CostComplexity { cp: self.prune_cp }
            } else {
                Pruning::None
            },
            seed: self.seed,
        }
    }

    /// Elastic-net settings for one region; the fold split is seeded per
    /// region.
    pub fn enet_params(&self, region: usize) -> ElasticNetParams {
        ElasticNetParams {
            l1_ratio: self.l1_ratio,
            folds: self.enet_folds,
            seed: derive_seed(self.seed ^ 0x656e_6574, region as u64),
            ..ElasticNetParams::default()
        }
    }

    /// Region partition for `m` following `hotspots` or `nsplits`.
    pub fn partition(&self, m: &MarkerMatrix) -> Result<RegionPartition> {
        match &self.hotspots {
            Some(path) => partition_hotspots(m, &load_hotspots(path)?),
            None => partition_equal(m, self.nsplits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_rice_preset() {
        let hp = HyperParams::default();
        assert_eq!(hp.nrules, 500);
        assert_eq!(hp.mean_depth, 4.0);
        assert_eq!(hp.proprow, 0.3);
        assert_eq!(hp.propcol, 0.1);
        assert_eq!(hp.nsplits, 5);
        assert_eq!(hp.n_pcs, 3);
        assert_eq!(hp.target, TargetMode::Blup);
        hp.validate().unwrap();
    }

    #[test]
    fn wheat_preset_is_accepted() {
        let hp = HyperParams {
            mean_depth: 1.0,
            nsplits: 2,
            ..Default::default()
        };
        hp.validate().unwrap();
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(HyperParams {
            proprow: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HyperParams {
            l1_ratio: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HyperParams {
            cv_folds: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
