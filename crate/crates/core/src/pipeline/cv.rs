use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::model::fit_ler_with_partition;
use super::params::HyperParams;
use crate::error::{LerError, Result};
use crate::genotype::{MarkerMatrix, PhenotypeTable};
use crate::linalg::{pearson, spd_solve};
use crate::mixed::gblup_fit;
use crate::rules::elastic_net::fold_assignment;

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAccuracy {
    pub fold: usize,
    pub n_test: usize,
    pub ler: Option<f64>,
    pub gblup: Option<f64>,
    /// Held-out trait values without variance; excluded from the means.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldAccuracy>,
    pub ler_mean: f64,
    pub gblup_mean: f64,
}

/// Held-out response with the fixed effects estimated on the training rows
/// removed.
fn adjusted_response(train: &PhenotypeTable, test: &PhenotypeTable) -> Result<Vec<f64>> {
    let x = &train.design;
    let y = DVector::from_column_slice(&train.y);
    let xty = x.tr_mul(&y);
    let beta = spd_solve(&x.tr_mul(x), &DMatrix::from_column_slice(xty.len(), 1, xty.as_slice()))?;
    let fitted = &test.design * beta.column(0);
    Ok(test.y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect())
}

/// k-fold cross-validation of LER and G-BLUP on the same folds. Accuracy is
/// the Pearson correlation of predicted genetic values with the held-out
/// trait after removing the fixed effects fitted on the training rows.
pub fn cross_validate(
    m: &MarkerMatrix,
    pheno: &PhenotypeTable,
    hp: &HyperParams,
    folds: usize,
    seed: u64,
) -> Result<CvReport> {
    let n = m.n_samples();
    if folds < 2 {
        return Err(LerError::Argument("cross-validation needs at least 2 folds".into()));
    }
    if n < folds {
        return Err(LerError::Argument(format!("{n} samples cannot fill {folds} folds")));
    }
    if pheno.n() != n {
        return Err(LerError::Argument(format!(
            "{} phenotype rows for {n} genotyped samples",
            pheno.n()
        )));
    }
    let partition = hp.partition(m)?;
    let labels = fold_assignment(n, folds, seed);
    let results: Vec<FoldAccuracy> = (0..folds)
        .into_par_iter()
        .map(|fold| -> Result<FoldAccuracy> {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == fold).collect();
            let (m_tr, m_te) = (m.select_samples(&train), m.select_samples(&test));
            let (p_tr, p_te) = (pheno.select(&train), pheno.select(&test));
            let response = adjusted_response(&p_tr, &p_te)?;
            let flagged = pearson(&p_te.y, &p_te.y).is_none();
            if flagged {
                log::warn!("fold {fold}: held-out trait has zero variance; excluded");
                return Ok(FoldAccuracy {
                    fold,
                    n_test: test.len(),
                    ler: None,
                    gblup: None,
                    flagged,
                });
            }
            let ler = fit_ler_with_partition(&m_tr, &p_tr, hp, &partition)?;
            let g_ler = ler.model.predict_genetic(&m_te)?;
            let y_tr = DVector::from_column_slice(&p_tr.y);
            let gb = gblup_fit(&y_tr, &p_tr.design, &m_tr)?;
            let g_gb: Vec<f64> = gb.predict_genetic(&m_te)?.iter().copied().collect();
            Ok(FoldAccuracy {
                fold,
                n_test: test.len(),
                ler: pearson(&g_ler, &response),
                gblup: pearson(&g_gb, &response),
                flagged,
            })
        })
        .collect::<Result<_>>()?;
    let mean = |f: &dyn Fn(&FoldAccuracy) -> Option<f64>| {
        let v: Vec<f64> = results.iter().filter(|r| !r.flagged).filter_map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let ler_mean = mean(&|r| r.ler);
    let gblup_mean = mean(&|r| r.gblup);
    Ok(CvReport {
        folds: results,
        ler_mean,
        gblup_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn permuted_phenotype_has_no_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, m) = (300, 40);
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| rng.random_bool(0.4) as u8 + rng.random_bool(0.4) as u8)
                    .collect()
            })
            .collect();
        let mk = MarkerMatrix::from_rows(&rows).unwrap();
        let mut y: Vec<f64> = (0..n)
            .map(|i| rows[i][3] as f64 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        y.shuffle(&mut rng);
        let ph = PhenotypeTable::intercept_only(y);
        let hp = HyperParams {
            nsplits: 2,
            nrules: 60,
            propcol: 0.3,
            seed: 1,
            ..Default::default()
        };
        let rep = cross_validate(&mk, &ph, &hp, 5, 2).unwrap();
        assert_eq!(rep.folds.len(), 5);
        assert!(rep.ler_mean.abs() <= 0.1, "{}", rep.ler_mean);
        assert!(rep.gblup_mean.abs() <= 0.1, "{}", rep.gblup_mean);
    }

    #[test]
    fn constant_fold_is_flagged() {
        let rows: Vec<Vec<u8>> = (0..20).map(|i| vec![(i % 3) as u8, ((i / 3) % 3) as u8]).collect();
        let mk = MarkerMatrix::from_rows(&rows).unwrap();
        let ph = PhenotypeTable::intercept_only(vec![1.0; 20]);
        let hp = HyperParams {
            nsplits: 1,
            nrules: 5,
            min_node: 2,
            propcol: 0.5,
            ..Default::default()
        };
        let rep = cross_validate(&mk, &ph, &hp, 2, 0).unwrap();
        assert!(rep.folds.iter().all(|f| f.flagged));
        assert!(rep.ler_mean.is_nan());
    }
}
