use nalgebra::DMatrix;

use super::rule::{Features, Rule};
use crate::error::{LerError, Result};

/// Standardized rule evaluations. `means`/`sds` are the training-set
/// statistics and are reused unchanged at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleMatrix {
    pub rules: Vec<Rule>,
    /// n x r
    pub values: DMatrix<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl RuleMatrix {
    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    /// Standardized evaluations on new samples using the stored statistics.
    pub fn apply(&self, features: &Features<'_>) -> DMatrix<f64> {
        standardized_columns(&self.rules, &self.means, &self.sds, features)
    }

    /// Sub-matrix with the listed columns.
    pub fn select(&self, cols: &[usize]) -> RuleMatrix {
        RuleMatrix {
            rules: cols.iter().map(|&c| self.rules[c].clone()).collect(),
            values: self.values.select_columns(cols),
            means: cols.iter().map(|&c| self.means[c]).collect(),
            sds: cols.iter().map(|&c| self.sds[c]).collect(),
        }
    }
}

pub(crate) fn standardized_columns(
    rules: &[Rule],
    means: &[f64],
    sds: &[f64],
    features: &Features<'_>,
) -> DMatrix<f64> {
    let n = features.n_samples();
    let mut out = DMatrix::zeros(n, rules.len());
    for (c, rule) in rules.iter().enumerate() {
        let on = (1.0 - means[c]) / sds[c];
        let off = -means[c] / sds[c];
        let active = rule.evaluate_all(features);
        let mut col = out.column_mut(c);
        for i in 0..n {
            col[i] = if active[i] { on } else { off };
        }
    }
    out
}

/// Evaluate `rules` on the training samples, center and scale each column by
/// its training mean and sample standard deviation, and drop constant
/// columns.
pub fn standardize_rules(rules: Vec<Rule>, features: &Features<'_>) -> Result<RuleMatrix> {
    let n = features.n_samples();
    if n < 2 {
        return Err(LerError::Argument(
            "standardizing rules needs at least two training rows".into(),
        ));
    }
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for rule in rules {
        let ones = rule.evaluate_all(features).iter().filter(|&&a| a).count();
        if ones == 0 || ones == n {
            continue;
        }
        let mean = ones as f64 / n as f64;
        // sample variance of a 0/1 column
        let var = (ones as f64 * (1.0 - mean) * (1.0 - mean) + (n - ones) as f64 * mean * mean) / (n - 1) as f64;
        kept.push(rule);
        means.push(mean);
        sds.push(var.sqrt());
    }
    if kept.is_empty() {
        return Err(LerError::EmptyRuleMatrix);
    }
    let values = standardized_columns(&kept, &means, &sds, features);
    Ok(RuleMatrix {
        rules: kept,
        values,
        means,
        sds,
    })
}
