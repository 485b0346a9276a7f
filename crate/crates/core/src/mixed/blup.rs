use nalgebra::{DMatrix, DVector};

use super::reml::{RemlOptions, RemlProblem, VarianceComponents};
use crate::error::{LerError, Result};
use crate::genotype::{center_markers, center_with, MarkerMatrix};
use crate::linalg::KernelSpectrum;

/// Fitted single-random-term mixed model.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedModelFit {
    pub beta: DVector<f64>,
    /// BLUPs of the random effects on their own scale: genetic values for a
    /// kernel fit, per-feature effects for a feature fit.
    pub random_effects: DVector<f64>,
    /// Contribution of the random term to each training sample.
    pub genetic_values: DVector<f64>,
    pub vc: VarianceComponents,
    pub log_likelihood: f64,
    pub at_bound: bool,
}

impl MixedModelFit {
    pub fn fitted(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta + &self.genetic_values
    }
}

/// Generalized least squares pieces at a fixed δ.
pub(crate) struct KernelSolution {
    pub beta: DVector<f64>,
    /// `H⁻¹ (y − Xβ̂)`
    pub hinv_resid: DVector<f64>,
    pub delta: f64,
    /// σ²_g on the scale of the kernel
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub at_bound: bool,
}

pub(crate) fn solve_kernel(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    spectrum: &KernelSpectrum,
    fixed_log_delta: Option<f64>,
    opts: &RemlOptions,
) -> Result<KernelSolution> {
    let problem = RemlProblem::new(y, x, spectrum)?;
    let (log_delta, at_bound) = match fixed_log_delta {
        Some(ld) => (ld, false),
        None => {
            let opt = problem.optimize(opts)?;
            if opt.at_bound {
                log::warn!(
                    "REML optimum at the edge of the search interval (log lambda = {:.3})",
                    opt.log_delta
                );
            }
            (opt.log_delta, opt.at_bound)
        }
    };
    let eval = problem.evaluate(log_delta)?;
    let delta = log_delta.exp();
    let resid = y - x * &eval.beta;
    let r = DMatrix::from_column_slice(resid.len(), 1, resid.as_slice());
    let hinv_resid = spectrum.solve_shifted(delta, &r).column(0).into_owned();
    let sigma2 = eval.ypy / (y.len() - x.ncols()) as f64;
    Ok(KernelSolution {
        beta: eval.beta,
        hinv_resid,
        delta,
        sigma2,
        log_likelihood: eval.log_likelihood,
        at_bound,
    })
}

/// REML fit with a dense PSD covariance kernel `K` for the random term.
pub fn reml_fit(y: &DVector<f64>, x: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<MixedModelFit> {
    let spectrum = KernelSpectrum::from_dense(k)?;
    reml_fit_spectrum(y, x, &spectrum, &RemlOptions::default())
}

pub fn reml_fit_spectrum(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    spectrum: &KernelSpectrum,
    opts: &RemlOptions,
) -> Result<MixedModelFit> {
    let sol = solve_kernel(y, x, spectrum, None, opts)?;
    let g = spectrum.apply(&sol.hinv_resid);
    Ok(MixedModelFit {
        beta: sol.beta,
        random_effects: g.clone(),
        genetic_values: g,
        vc: VarianceComponents {
            sigma2_g: sol.sigma2,
            sigma2_e: sol.delta * sol.sigma2,
        },
        log_likelihood: sol.log_likelihood,
        at_bound: sol.at_bound,
    })
}

/// G-BLUP fit with the marker effects needed to predict new genotypes.
#[derive(Debug, Clone, PartialEq)]
pub struct GblupFit {
    pub fit: MixedModelFit,
    /// Additive effects `û` of the centered markers; `ĝ = C û`.
    pub marker_effects: DVector<f64>,
    pub freqs: Vec<f64>,
}

impl GblupFit {
    /// Genetic values of new genotypes, centered with the training
    /// frequencies.
    pub fn predict_genetic(&self, m: &MarkerMatrix) -> Result<DVector<f64>> {
        if m.n_markers() != self.freqs.len() {
            return Err(LerError::Mapping(format!(
                "model has {} markers, genotypes have {}",
                self.freqs.len(),
                m.n_markers()
            )));
        }
        Ok(center_with(m, &self.freqs) * &self.marker_effects)
    }
}

/// G-BLUP with `G = CC'/k`.
pub fn gblup_fit(y: &DVector<f64>, x: &DMatrix<f64>, m: &MarkerMatrix) -> Result<GblupFit> {
    gblup_fit_with(y, x, m, None)
}

/// G-BLUP at a fixed `λ = σ²_e/σ²_g` when `lambda` is given, REML otherwise.
pub fn gblup_fit_with(y: &DVector<f64>, x: &DMatrix<f64>, m: &MarkerMatrix, lambda: Option<f64>) -> Result<GblupFit> {
    let centered = center_markers(m)?;
    let k = centered.heterozygosity_scale();
    if k <= 0.0 || centered.matrix.iter().all(|&v| v == 0.0) {
        return Err(LerError::DegenerateKinship);
    }
    let z = &centered.matrix / k.sqrt();
    let spectrum = KernelSpectrum::from_factor(&z)?;
    let sol = solve_kernel(y, x, &spectrum, lambda.map(f64::ln), &RemlOptions::default())?;
    let marker_effects = centered.matrix.tr_mul(&sol.hinv_resid) / k;
    let g = &centered.matrix * &marker_effects;
    Ok(GblupFit {
        fit: MixedModelFit {
            beta: sol.beta,
            random_effects: g.clone(),
            genetic_values: g,
            vc: VarianceComponents {
                sigma2_g: sol.sigma2,
                sigma2_e: sol.delta * sol.sigma2,
            },
            log_likelihood: sol.log_likelihood,
            at_bound: sol.at_bound,
        },
        marker_effects,
        freqs: centered.freqs,
    })
}

/// Ridge BLUP of per-feature effects with a shared variance σ²_α.
/// `vc.sigma2_g` is σ²_α and `vc.lambda()` is `σ²_e/σ²_α`.
pub fn rrblup_fit(y: &DVector<f64>, x: &DMatrix<f64>, features: &DMatrix<f64>) -> Result<MixedModelFit> {
    rrblup_fit_with(y, x, features, None)
}

pub fn rrblup_fit_with(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    features: &DMatrix<f64>,
    lambda: Option<f64>,
) -> Result<MixedModelFit> {
    let r = features.ncols();
    if r == 0 || features.iter().all(|&v| v == 0.0) {
        return Err(LerError::Validation("feature matrix has rank 0".into()));
    }
    if lambda.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
        return Err(LerError::Argument("ridge lambda must be positive".into()));
    }
    let rf = r as f64;
    let z = features / rf.sqrt();
    let spectrum = KernelSpectrum::from_factor(&z)?;
    if spectrum.rank() == 0 {
        return Err(LerError::Validation("feature matrix has rank 0".into()));
    }
    // K = RR'/r, so δ = σ²_e / (r σ²_α)
    let fixed = lambda.map(|l| (l / rf).ln());
    let sol = solve_kernel(y, x, &spectrum, fixed, &RemlOptions::default())?;
    let alpha = features.tr_mul(&sol.hinv_resid) / rf;
    let g = features * &alpha;
    let sigma2_a = sol.sigma2 / rf;
    Ok(MixedModelFit {
        beta: sol.beta,
        random_effects: alpha,
        genetic_values: g,
        vc: VarianceComponents {
            sigma2_g: sigma2_a,
            sigma2_e: sol.delta * sol.sigma2,
        },
        log_likelihood: sol.log_likelihood,
        at_bound: sol.at_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_markers(rng: &mut ChaCha8Rng, n: usize, m: usize) -> MarkerMatrix {
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(0..3u8)).collect())
            .collect();
        MarkerMatrix::from_rows(&rows).unwrap()
    }

    /// Henderson's equations for `y = Xβ + Fα + e`, `α ~ N(0, σ²_e/λ I)`,
    /// solved as one dense system.
    fn mme(y: &DVector<f64>, x: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> (DVector<f64>, DVector<f64>) {
        let p = x.ncols();
        let r = f.ncols();
        let w = DMatrix::from_fn(y.len(), p + r, |i, j| if j < p { x[(i, j)] } else { f[(i, j - p)] });
        let mut lhs = w.transpose() * &w;
        for j in p..p + r {
            lhs[(j, j)] += lambda;
        }
        let rhs = w.transpose() * y;
        let sol = lhs.lu().solve(&rhs).unwrap();
        (sol.rows(0, p).into_owned(), sol.rows(p, r).into_owned())
    }

    #[test]
    fn identity_kernel_is_ridge_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0 + 3.0);
        let x = DMatrix::from_element(n, 1, 1.0);
        let fit = reml_fit(&y, &x, &DMatrix::identity(n, n)).unwrap();
        let lambda = fit.vc.lambda();
        let (beta, u) = mme(&y, &x, &DMatrix::identity(n, n), lambda);
        assert!((fit.beta[0] - beta[0]).abs() < 1e-9);
        for i in 0..n {
            assert!((fit.random_effects[i] - u[i]).abs() < 1e-9);
        }
        // shrinkage of the OLS residuals
        let ybar = y.mean();
        for i in 0..n {
            let ols = y[i] - ybar;
            assert!((fit.random_effects[i] - ols / (1.0 + lambda)).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_fit_matches_dense_equations_at_fixed_lambda() {
        let f = DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 0.2, -0.5, 0.3, -1.1, 0.8, -0.7, 0.4, 0.1, 1.2, 0.9, -0.3, -0.6, -0.2, 1.0,
            ],
        );
        let y = DVector::from_vec(vec![1.0, -0.5, 0.3, 2.1, -1.4]);
        let x = DMatrix::from_element(5, 1, 1.0);
        let fit = rrblup_fit_with(&y, &x, &f, Some(2.0)).unwrap();
        let (beta, alpha) = mme(&y, &x, &f, 2.0);
        assert!((fit.beta[0] - beta[0]).abs() < 1e-10);
        for j in 0..3 {
            assert!((fit.random_effects[j] - alpha[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn gblup_equals_marker_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_markers(&mut rng, 20, 50);
        let y = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_element(20, 1, 1.0);
        let g = gblup_fit(&y, &x, &m).unwrap();
        let c = center_markers(&m).unwrap();
        let k = c.heterozygosity_scale();
        let (_, u) = mme(&y, &x, &c.matrix, g.fit.vc.lambda() * k);
        let mu = &c.matrix * u;
        for i in 0..20 {
            assert!((g.fit.genetic_values[i] - mu[i]).abs() < 1e-8);
        }
        let rr = rrblup_fit(&y, &x, &c.matrix).unwrap();
        for i in 0..20 {
            assert!((g.fit.genetic_values[i] - rr.genetic_values[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_response_has_no_genetic_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_markers(&mut rng, 15, 30);
        let y = DVector::from_element(15, 4.2);
        let x = DMatrix::from_element(15, 1, 1.0);
        let g = gblup_fit(&y, &x, &m).unwrap();
        assert!(g.fit.genetic_values.amax() < 1e-8);
    }

    #[test]
    fn single_informative_feature_captures_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100;
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = y.mean();
        let sd = (y.map(|v| (v - mean).powi(2)).sum() / (n - 1) as f64).sqrt();
        let f = DMatrix::from_fn(n, 1, |i, _| (y[i] - mean) / sd);
        let x = DMatrix::from_element(n, 1, 1.0);
        let fit = rrblup_fit(&y, &x, &f).unwrap();
        let fitted = fit.fitted(&x);
        let rss = (&y - &fitted).norm_squared();
        let tss = y.map(|v| (v - mean).powi(2)).sum();
        assert!(1.0 - rss / tss >= 0.95);
    }

    #[test]
    fn zero_features_rejected() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(rrblup_fit(&y, &x, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn no_kinship_signal_pushes_lambda_to_upper_edge() {
        let mut lambdas = Vec::new();
        for seed in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
            let m = random_markers(&mut rng, 100, 4);
            let y = DVector::from_fn(100, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = DMatrix::from_element(100, 1, 1.0);
            let tau = crate::genotype::compute_grm(&m).unwrap().trace() / 100.0;
            lambdas.push(gblup_fit(&y, &x, &m).unwrap().fit.vc.lambda().ln() - tau.ln());
        }
        lambdas.sort_by(f64::total_cmp);
        let median = 0.5 * (lambdas[249] + lambdas[250]);
        let edge = RemlOptions::default().log_delta_max;
        assert!(median >= edge - 1e-9, "median log lambda relative to tau {median}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn permuting_samples_permutes_genetic_values(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 18;
            let m = random_markers(&mut rng, n, 25);
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = DMatrix::from_element(n, 1, 1.0);
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let a = gblup_fit(&y, &x, &m).unwrap();
            let mp = m.select_samples(&perm);
            let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
            let b = gblup_fit(&yp, &x, &mp).unwrap();
            for i in 0..n {
                prop_assert!((b.fit.genetic_values[i] - a.fit.genetic_values[perm[i]]).abs() < 1e-7);
            }
        }

        #[test]
        fn feature_order_does_not_matter(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = DMatrix::from_fn(25, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(25, |i, _| f[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
            let x = DMatrix::from_element(25, 1, 1.0);
            let order = [3usize, 7, 0, 5, 1, 6, 2, 4];
            let fp = f.select_columns(&order);
            let a = rrblup_fit(&y, &x, &f).unwrap();
            let b = rrblup_fit(&y, &x, &fp).unwrap();
            for i in 0..25 {
                prop_assert!((a.genetic_values[i] - b.genetic_values[i]).abs() < 1e-7);
            }
        }
    }
}
