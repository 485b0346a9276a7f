use std::collections::HashMap;
use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{HyperParams, TargetMode};
use crate::error::{LerError, Result};
use crate::genotype::{
    compute_pcs, MarkerMatrix, MarkerPosition, PhenotypeTable, PrincipalComponents, RegionPartition, MISSING,
};
use crate::linalg::ols_residuals;
use crate::mixed::{gblup_fit, rrblup_fit, VarianceComponents};
use crate::rules::matrix::standardized_columns;
use crate::rules::{filter_rules_elastic_net, isle_extract, standardize_rules, Features, Rule, Variable};

pub const MODEL_FORMAT: &str = "ler-model";
pub const MODEL_VERSION: u32 = 1;

/// Stored principal-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcProjection {
    pub freqs: Vec<f64>,
    /// One loading vector (length m) per component.
    pub loadings: Vec<Vec<f64>>,
}

impl PcProjection {
    fn from_pcs(pcs: &PrincipalComponents) -> Self {
        PcProjection {
            freqs: pcs.freqs.clone(),
            loadings: pcs
                .loadings
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }

    pub fn n_components(&self) -> usize {
        self.loadings.len()
    }

    /// Scores of `m` (markers in model order).
    pub fn project(&self, m: &MarkerMatrix) -> DMatrix<f64> {
        let n = m.n_samples();
        let mut out = DMatrix::zeros(n, self.loadings.len());
        for (k, load) in self.loadings.iter().enumerate() {
            for (j, &w) in load.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let two_p = 2.0 * self.freqs[j];
                for (i, &v) in m.column(j).iter().enumerate() {
                    if v != MISSING {
                        out[(i, k)] += (v as f64 - two_p) * w;
                    }
                }
            }
        }
        out
    }
}

/// A retained rule with its training standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRule {
    #[serde(flatten)]
    pub rule: Rule,
    pub mean: f64,
    pub sd: f64,
}

/// Fitted LER model. Serialized as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LerModel {
    pub format: String,
    pub version: u32,
    pub hyper: HyperParams,
    pub marker_ids: Vec<String>,
    pub marker_map: Vec<MarkerPosition>,
    pub partition: RegionPartition,
    pub pcs: Option<PcProjection>,
    pub covariate_names: Vec<String>,
    pub rules: Vec<StoredRule>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub vc: VarianceComponents,
    pub reml_at_bound: bool,
}

/// Model plus by-products of the fit that are not persisted.
#[derive(Debug, Clone)]
pub struct LerFit {
    pub model: LerModel,
    /// `Xβ̂ + Rα̂` on the training rows.
    pub fitted: Vec<f64>,
    /// Rules generated per region before the elastic-net filter.
    pub extracted_per_region: Vec<usize>,
}

impl LerModel {
    pub fn n_pcs(&self) -> usize {
        self.pcs.as_ref().map_or(0, |p| p.n_components())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(LerError::Validation("not an LER model file".into()));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(MODEL_VERSION as u64) {
            return Err(LerError::Validation(format!(
                "unsupported model version {version:?}, expected {MODEL_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| LerError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LerError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Genotypes rearranged into the model's marker order. Markers the
    /// model does not know are ignored; model markers absent from `m` are
    /// an error.
    pub fn align_genotypes(&self, m: &MarkerMatrix) -> Result<MarkerMatrix> {
        if m.marker_ids() == self.marker_ids.as_slice() {
            return Ok(m.clone());
        }
        let index = m.marker_index();
        let n = m.n_samples();
        let mut values = Vec::with_capacity(n * self.marker_ids.len());
        for id in &self.marker_ids {
            let j = index.get(id.as_str()).ok_or_else(|| {
                LerError::Mapping(format!("marker {id} used by the model is absent from the genotypes"))
            })?;
            values.extend_from_slice(m.column(*j));
        }
        if m.n_markers() > self.marker_ids.len() {
            warn!(
                "ignoring {} genotype columns unknown to the model",
                m.n_markers() - self.marker_ids.len()
            );
        }
        MarkerMatrix::new(
            m.sample_ids().to_vec(),
            self.marker_ids.clone(),
            self.marker_map.clone(),
            values,
        )
    }

    /// Standardized rule matrix `R(m)` for genotypes already in model order.
    fn rule_matrix(&self, m: &MarkerMatrix) -> DMatrix<f64> {
        let pcs = match &self.pcs {
            Some(p) => p.project(m),
            None => DMatrix::zeros(m.n_samples(), 0),
        };
        let features = Features::new(m, &pcs);
        let rules: Vec<Rule> = self.rules.iter().map(|r| r.rule.clone()).collect();
        let means: Vec<f64> = self.rules.iter().map(|r| r.mean).collect();
        let sds: Vec<f64> = self.rules.iter().map(|r| r.sd).collect();
        standardized_columns(&rules, &means, &sds, &features)
    }

    /// Genetic values `R(m)α̂`.
    pub fn predict_genetic(&self, m: &MarkerMatrix) -> Result<Vec<f64>> {
        let aligned = self.align_genotypes(m)?;
        let r = self.rule_matrix(&aligned);
        let g = r * DVector::from_column_slice(&self.alpha);
        Ok(g.iter().copied().collect())
    }
}

/// `Xβ̂ + R(m)α̂` for new samples. `design` holds the intercept and the
/// covariates in the order the model was trained with.
pub fn predict_ler(model: &LerModel, m: &MarkerMatrix, design: &DMatrix<f64>) -> Result<Vec<f64>> {
    if design.ncols() != model.beta.len() {
        return Err(LerError::Mapping(format!(
            "model expects {} fixed-effect columns (intercept + {:?}), got {}",
            model.beta.len(),
            model.covariate_names,
            design.ncols()
        )));
    }
    if design.nrows() != m.n_samples() {
        return Err(LerError::Argument(format!(
            "{} design rows for {} genotype rows",
            design.nrows(),
            m.n_samples()
        )));
    }
    let g = model.predict_genetic(m)?;
    let xb = design * DVector::from_column_slice(&model.beta);
    Ok(g.iter().zip(xb.iter()).map(|(a, b)| a + b).collect())
}

/// Fit LER on `m` and `pheno` (rows aligned to the genotypes).
pub fn fit_ler(m: &MarkerMatrix, pheno: &PhenotypeTable, hp: &HyperParams) -> Result<LerFit> {
    let partition = hp.partition(m)?;
    fit_ler_with_partition(m, pheno, hp, &partition)
}

pub fn fit_ler_with_partition(
    m: &MarkerMatrix,
    pheno: &PhenotypeTable,
    hp: &HyperParams,
    partition: &RegionPartition,
) -> Result<LerFit> {
    hp.validate()?;
    pheno.validate_for_training()?;
    let n = m.n_samples();
    if pheno.n() != n {
        return Err(LerError::Argument(format!(
            "{} phenotype rows for {n} genotyped samples",
            pheno.n()
        )));
    }
    let y = DVector::from_column_slice(&pheno.y);
    let x = &pheno.design;

    let pcs = if hp.n_pcs > 0 {
        Some(PcProjection::from_pcs(&compute_pcs(m, hp.n_pcs)?))
    } else {
        None
    };
    // same arithmetic as at prediction time
    let scores = pcs.as_ref().map_or_else(|| DMatrix::zeros(n, 0), |p| p.project(m));
    let features = Features::new(m, &scores);

    let adjusted = ols_residuals(&y, x)?;
    let targets: Vec<f64> = match hp.target {
        TargetMode::Blup => gblup_fit(&y, x, m)?.fit.genetic_values.iter().copied().collect(),
        TargetMode::AdjustedY => adjusted.iter().copied().collect(),
    };

    let isle = hp.isle_params();
    let per_region: Vec<(usize, Option<crate::rules::RuleMatrix>)> = partition
        .regions
        .par_iter()
        .enumerate()
        .map(|(rid, region)| -> Result<(usize, Option<crate::rules::RuleMatrix>)> {
            let rules = isle_extract(&features, rid, region.start..region.end, &targets, &isle)?;
            let extracted = rules.len();
            if rules.is_empty() {
                return Ok((0, None));
            }
            let rm = match standardize_rules(rules, &features) {
                Ok(rm) => rm,
                Err(LerError::EmptyRuleMatrix) => return Ok((extracted, None)),
                Err(e) => return Err(e),
            };
            let filter = filter_rules_elastic_net(&rm.values, &adjusted, &hp.enet_params(rid))?;
            if filter.retained.is_empty() {
                return Ok((extracted, None));
            }
            Ok((extracted, Some(rm.select(&filter.retained))))
        })
        .collect::<Result<_>>()?;

    let extracted_per_region: Vec<usize> = per_region.iter().map(|(e, _)| *e).collect();
    let kept: Vec<&crate::rules::RuleMatrix> = per_region.iter().filter_map(|(_, r)| r.as_ref()).collect();
    let r_total: usize = kept.iter().map(|r| r.n_rules()).sum();
    if r_total == 0 {
        return Err(LerError::Fit(
            "no region retained any rule; lower l1_ratio to keep more rules".into(),
        ));
    }
    let mut values = DMatrix::zeros(n, r_total);
    let mut rules = Vec::with_capacity(r_total);
    let mut col = 0;
    for rm in &kept {
        values.columns_mut(col, rm.n_rules()).copy_from(&rm.values);
        col += rm.n_rules();
        for (k, rule) in rm.rules.iter().enumerate() {
            rules.push(StoredRule {
                rule: rule.clone(),
                mean: rm.means[k],
                sd: rm.sds[k],
            });
        }
    }
    info!(
        "extracted {:?} rules per region, {} retained after filtering",
        extracted_per_region, r_total
    );

    let fit = rrblup_fit(&y, x, &values)?;
    let fitted = fit.fitted(x);
    let model = LerModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        hyper: hp.clone(),
        marker_ids: m.marker_ids().to_vec(),
        marker_map: m.map().to_vec(),
        partition: partition.clone(),
        pcs,
        covariate_names: pheno.covariate_names.clone(),
        rules,
        alpha: fit.random_effects.iter().copied().collect(),
        beta: fit.beta.iter().copied().collect(),
        vc: fit.vc,
        reml_at_bound: fit.at_bound,
    };
    Ok(LerFit {
        model,
        fitted: fitted.iter().copied().collect(),
        extracted_per_region,
    })
}

/// Region of origin for every variable a rule mentions; PCs have none.
pub fn variable_region(model: &LerModel, v: Variable) -> Option<usize> {
    match v {
        Variable::Marker(j) => model.partition.region_of(j),
        Variable::Pc(_) => None,
    }
}

/// Lookup from marker ID to model column.
pub fn marker_lookup(model: &LerModel) -> HashMap<&str, usize> {
    model
        .marker_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy(seed: u64, n: usize, m: usize) -> (MarkerMatrix, PhenotypeTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| rng.random_bool(0.5) as u8 + rng.random_bool(0.5) as u8)
                    .collect()
            })
            .collect();
        let mk = MarkerMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let a = rows[i][1] as f64;
                let b = (rows[i][m - 2] < 2 && rows[i][m - 3] > 0) as u8 as f64;
                a + 2.0 * b + 0.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (mk, PhenotypeTable::intercept_only(y))
    }

    fn small_hp() -> HyperParams {
        HyperParams {
            nsplits: 2,
            nrules: 40,
            propcol: 0.5,
            proprow: 0.5,
            n_pcs: 2,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn training_predictions_match_fitted_values() {
        let (m, ph) = toy(1, 120, 20);
        let fit = fit_ler(&m, &ph, &small_hp()).unwrap();
        let pred = predict_ler(&fit.model, &m, &ph.design).unwrap();
        for (a, b) in pred.iter().zip(&fit.fitted) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let (m, ph) = toy(2, 100, 16);
        let fit = fit_ler(&m, &ph, &small_hp()).unwrap();
        let text = fit.model.to_json().unwrap();
        let back = LerModel::from_json(&text).unwrap();
        assert_eq!(back, fit.model);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn fit_is_reproducible() {
        let (m, ph) = toy(3, 100, 16);
        let a = fit_ler(&m, &ph, &small_hp()).unwrap().model.to_json().unwrap();
        let b = fit_ler(&m, &ph, &small_hp()).unwrap().model.to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_rows_and_duplicates_predict_consistently() {
        let (m, ph) = toy(4, 100, 16);
        let fit = fit_ler(&m, &ph, &small_hp()).unwrap();
        let mut rows: Vec<Vec<u8>> = (0..3).map(|i| (0..16).map(|j| m.get(i, j)).collect()).collect();
        rows.push(vec![MISSING; 16]);
        rows.push(rows[0].clone());
        let new = MarkerMatrix::from_rows(&rows).unwrap();
        let design = DMatrix::from_element(5, 1, 1.0);
        let pred = predict_ler(&fit.model, &new, &design).unwrap();
        assert!(pred.iter().all(|v| v.is_finite()));
        assert_eq!(pred[0], pred[4]);
    }

    #[test]
    fn rule_order_does_not_change_predictions() {
        let (m, ph) = toy(5, 100, 16);
        let fit = fit_ler(&m, &ph, &small_hp()).unwrap();
        let mut shuffled = fit.model.clone();
        shuffled.rules.reverse();
        shuffled.alpha.reverse();
        let a = predict_ler(&fit.model, &m, &ph.design).unwrap();
        let b = predict_ler(&shuffled, &m, &ph.design).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn unknown_marker_is_a_mapping_error() {
        let (m, ph) = toy(6, 80, 12);
        let fit = fit_ler(&m, &ph, &small_hp()).unwrap();
        let rows: Vec<Vec<u8>> = (0..4).map(|i| (0..11).map(|j| m.get(i, j)).collect()).collect();
        let short = MarkerMatrix::from_rows(&rows).unwrap();
        let err = predict_ler(&fit.model, &short, &DMatrix::from_element(4, 1, 1.0)).unwrap_err();
        assert!(matches!(err, LerError::Mapping(_)));
    }

    #[test]
    fn degenerate_configuration_is_a_small_additive_model() {
        let (m, ph) = toy(7, 100, 10);
        let hp = HyperParams {
            nsplits: 2,
            nrules: 1,
            mean_depth: 1.0,
            memory: 0.0,
            l1_ratio: 0.0,
            n_pcs: 0,
            seed: 3,
            ..Default::default()
        };
        let fit = fit_ler(&m, &ph, &hp).unwrap();
        assert!(fit.model.rules.len() <= 2);
        assert!(fit.model.rules.iter().all(|r| r.rule.depth() == 1));
        let again = fit_ler(&m, &ph, &hp).unwrap();
        assert_eq!(fit.model, again.model);
        assert!(fit.fitted.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rules_stay_inside_their_region() {
        let (m, ph) = toy(8, 120, 20);
        let fit = fit_ler(&m, &ph, &small_hp()).unwrap();
        for r in &fit.model.rules {
            for v in r.rule.variables() {
                if let Some(reg) = variable_region(&fit.model, v) {
                    assert_eq!(reg, r.rule.origin.region);
                }
            }
        }
        assert!(fit.model.alpha.iter().all(|a| a.is_finite()));
    }
}
