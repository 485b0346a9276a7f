//! Importance-sampled rule generation for one genomic region.
//!
//! Each tree is grown on a random subsample of the training rows and of the
//! region's markers (the principal components are always offered), to the
//! current residual of a running ensemble `F` that is updated with memory
//! `nu` after every tree. With `nu = 0` every tree sees the original targets
//! (pure perturbation sampling); with `nu = 1` the scheme is boosting.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::rule::{Features, Rule, Variable};
use super::tree::{grow_tree, Pruning, TreeParams};
use crate::error::{LerError, Result};
use crate::genotype::MISSING;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsleParams {
    /// Rules to collect per region.
    pub nrules: usize,
    /// Rate of the zero-truncated Poisson that draws each tree's max depth.
    pub mean_depth: f64,
    /// Fraction of the region's markers offered to each tree.
    pub proprow: f64,
    /// Fraction of the training samples used by each tree.
    pub propcol: f64,
    /// Memory parameter nu in [0, 1].
    pub memory: f64,
    pub min_node: usize,
    pub pruning: Pruning,
    pub seed: u64,
}

impl Default for IsleParams {
    fn default() -> Self {
        Self {
            nrules: 500,
            mean_depth: 4.0,
            proprow: 0.3,
            propcol: 0.1,
            memory: 0.1,
            min_node: 5,
            pruning: Pruning::None,
            seed: 0,
        }
    }
}

impl IsleParams {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LerError::Argument(m));
        if self.nrules == 0 {
            return err("nrules must be at least 1".into());
        }
        if !(self.mean_depth >= 1.0 && self.mean_depth.is_finite()) {
            return err(format!("mean_depth must be >= 1, got {}", self.mean_depth));
        }
        if !(self.proprow > 0.0 && self.proprow <= 1.0) {
            return err(format!("proprow must lie in (0, 1], got {}", self.proprow));
        }
        if !(self.propcol > 0.0 && self.propcol <= 1.0) {
            return err(format!("propcol must lie in (0, 1], got {}", self.propcol));
        }
        if !(0.0..=1.0).contains(&self.memory) {
            return err(format!("memory nu must lie in [0, 1], got {}", self.memory));
        }
        if self.min_node == 0 {
            return err("min_node must be at least 1".into());
        }
        Ok(())
    }
}

/// Draw a tree depth from Poisson(`mean_depth`) conditioned on being >= 1.
pub fn sample_depth<R: rand::Rng + ?Sized>(mean_depth: f64, rng: &mut R) -> Result<usize> {
    if !(mean_depth >= 1.0 && mean_depth.is_finite()) {
        return Err(LerError::Argument(format!("mean_depth must be >= 1, got {mean_depth}")));
    }
    let poisson = Poisson::new(mean_depth).map_err(|e| LerError::Argument(format!("invalid Poisson rate: {e}")))?;
    loop {
        let d = poisson.sample(rng);
        if d >= 1.0 {
            return Ok(d as usize);
        }
    }
}

/// Mix the run seed with a stream label (region id) so each region gets an
/// unrelated ChaCha key.
pub(crate) fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a tree was fit to; handed to observers of [`isle_extract_observed`].
pub struct TreeFit<'a> {
    pub tree: usize,
    pub max_depth: usize,
    pub rows: &'a [usize],
    pub variables: &'a [Variable],
    pub targets: &'a [f64],
}

/// Rules for region `region_id` covering markers `markers`, fit to `targets`
/// (one per sample of `features`).
pub fn isle_extract(
    features: &Features<'_>,
    region_id: usize,
    markers: std::ops::Range<usize>,
    targets: &[f64],
    params: &IsleParams,
) -> Result<Vec<Rule>> {
    isle_extract_observed(features, region_id, markers, targets, params, &mut |_| {})
}

/// [`isle_extract`] with a callback invoked before each tree is grown.
pub fn isle_extract_observed(
    features: &Features<'_>,
    region_id: usize,
    markers: std::ops::Range<usize>,
    targets: &[f64],
    params: &IsleParams,
    observer: &mut dyn FnMut(TreeFit<'_>),
) -> Result<Vec<Rule>> {
    params.validate()?;
    let n = features.n_samples();
    if targets.len() != n {
        return Err(LerError::Argument(format!("{} targets for {n} samples", targets.len())));
    }
    if markers.is_empty() {
        return Err(LerError::Argument(format!("region {region_id} is empty")));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(LerError::Argument("targets must be finite".into()));
    }
    let polymorphic: Vec<usize> = markers
        .clone()
        .filter(|&j| is_polymorphic(features.markers.column(j)))
        .collect();
    if polymorphic.is_empty() {
        warn!("region {region_id} has no polymorphic markers; no rules extracted");
        return Ok(Vec::new());
    }
    let n_rows = ((params.propcol * n as f64).round() as usize)
        .max(2 * params.min_node)
        .min(n);
    if n_rows < 2 * params.min_node {
        return Err(LerError::Argument(format!(
            "{n} samples cannot support min_node = {}",
            params.min_node
        )));
    }
    let n_vars = ((params.proprow * polymorphic.len() as f64).ceil() as usize).clamp(1, polymorphic.len());
    let n_pcs = features.pcs.ncols();

    let region_seed = derive_seed(params.seed, region_id as u64);
    let mut ensemble = vec![0.0; n];
    let mut rules = Vec::with_capacity(params.nrules);
    let mut tree_id = 0usize;
    let mut barren = 0usize;
    let mut residual = Vec::with_capacity(n_rows);
    while rules.len() < params.nrules {
        let mut rng = ChaCha8Rng::seed_from_u64(region_seed);
        rng.set_stream(tree_id as u64);
        let max_depth = sample_depth(params.mean_depth, &mut rng)?;
        let mut rows = sample(&mut rng, n, n_rows).into_vec();
        rows.sort_unstable();
        let mut picked = sample(&mut rng, polymorphic.len(), n_vars).into_vec();
        picked.sort_unstable();
        let mut vars: Vec<Variable> = picked.into_iter().map(|k| Variable::Marker(polymorphic[k])).collect();
        vars.extend((0..n_pcs).map(Variable::Pc));

        residual.clear();
        residual.extend(rows.iter().map(|&i| targets[i] - ensemble[i]));
        observer(TreeFit {
            tree: tree_id,
            max_depth,
            rows: &rows,
            variables: &vars,
            targets: &residual,
        });
        let tree = grow_tree(
            features,
            &rows,
            &residual,
            &vars,
            TreeParams {
                max_depth,
                min_node: params.min_node,
                pruning: params.pruning,
            },
        )?;

        if params.memory > 0.0 && tree.len() > 1 {
            // least-squares scale of the tree on its own subsample
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, &i) in rows.iter().enumerate() {
                let t = tree.predict(features, i);
                num += residual[k] * t;
                den += t * t;
            }
            let scale = if den > 0.0 { num / den } else { 0.0 };
            for (i, f) in ensemble.iter_mut().enumerate() {
                *f += params.memory * scale * tree.predict(features, i);
            }
        }

        let extracted = tree.extract_rules(region_id, tree_id);
        if extracted.is_empty() {
            barren += 1;
            if barren >= 100 {
                warn!(
                    "region {region_id}: 100 consecutive trees without a split; stopping at {} rules",
                    rules.len()
                );
                break;
            }
        } else {
            barren = 0;
        }
        rules.extend(extracted);
        tree_id += 1;
    }
    rules.truncate(params.nrules);
    Ok(rules)
}

fn is_polymorphic(column: &[u8]) -> bool {
    let mut first = None;
    for &v in column {
        if v == MISSING {
            continue;
        }
        match first {
            None => first = Some(v),
            Some(f) if f != v => return true,
            _ => {}
        }
    }
    false
}
