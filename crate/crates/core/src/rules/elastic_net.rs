//! Coordinate-descent elastic net used to thin each region's rule set.
//!
//! Objective for a fixed λ and mixing `a`:
//! `(1/2n)‖y − Xβ‖² + λ((1 − a)/2 ‖β‖² + a‖β‖₁)`, with an unpenalized
//! intercept handled by centering.
//!
//! The filter solves it for the response scaled to unit standard deviation
//! and maps back, so on the original scale the ridge term carries an extra
//! `1/sd(y)` and the fitted coefficients scale with `y`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LerError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetParams {
    /// Weight of the L1 term, 0 = ridge, 1 = lasso.
    pub l1_ratio: f64,
    pub folds: usize,
    pub n_lambda: usize,
    /// λ_min / λ_max along the path.
    pub lambda_ratio: f64,
    /// Stop when every coordinate's weighted squared update
    /// `(x_j'x_j / n)·Δ²` is below `tol` times the mean square of the
    /// centered response.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        ElasticNetParams {
            l1_ratio: 0.5,
            folds: 5,
            n_lambda: 50,
            lambda_ratio: 1e-3,
            tol: 1e-7,
            max_sweeps: 100_000,
            seed: 0,
        }
    }
}

impl ElasticNetParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(LerError::Argument(format!(
                "l1_ratio must lie in [0, 1], got {}",
                self.l1_ratio
            )));
        }
        if self.folds < 2 {
            return Err(LerError::Argument("elastic net needs at least 2 folds".into()));
        }
        if self.n_lambda < 1 || !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return Err(LerError::Argument("invalid lambda path settings".into()));
        }
        Ok(())
    }
}

/// Outcome of filtering one region.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFilter {
    /// Column indices with nonzero coefficient at the chosen λ, ascending.
    pub retained: Vec<usize>,
    /// Chosen λ; `None` when no penalty selection was run (l1_ratio = 0).
    pub lambda: Option<f64>,
    pub coefficients: Vec<f64>,
    pub path: Vec<f64>,
    pub cv_error: Vec<f64>,
}

/// Sufficient statistics of a centered problem.
struct Problem {
    n: usize,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl Problem {
    fn from_rows(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> (Problem, DVector<f64>, f64) {
        let xs = x.select_rows(rows);
        let ys = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        let nr = rows.len() as f64;
        let mu = DVector::from_iterator(xs.ncols(), xs.column_iter().map(|c| c.sum() / nr));
        let ybar = ys.sum() / nr;
        let mut xc = xs;
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mu[j]);
        }
        let yc = ys.add_scalar(-ybar);
        let gram = xc.tr_mul(&xc);
        let xty = xc.tr_mul(&yc);
        let yty = yc.norm_squared();
        (
            Problem {
                n: rows.len(),
                gram,
                xty,
                yty,
            },
            mu,
            ybar,
        )
    }

    fn lambda_max(&self, l1_ratio: f64) -> f64 {
        self.xty.amax() / (self.n as f64 * l1_ratio)
    }

    /// Standard deviation of the centered response (divisor n).
    fn y_sd(&self) -> f64 {
        (self.yty / self.n as f64).sqrt().max(f64::MIN_POSITIVE)
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimize the elastic-net objective given `gram = X'X`, `xty = X'y` for
/// centered data with `n` rows. `beta` is used as the warm start; a sweep
/// converges once no weighted squared update `(x_j'x_j / n)·Δ²` reaches
/// `tol`.
#[allow(clippy::too_many_arguments)]
pub fn coordinate_descent(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    n: usize,
    lambda: f64,
    l1_ratio: f64,
    beta: &mut DVector<f64>,
    tol: f64,
    max_sweeps: usize,
) -> Result<()> {
    descend(
        gram,
        xty,
        n,
        lambda * l1_ratio,
        lambda * (1.0 - l1_ratio),
        beta,
        tol,
        max_sweeps,
    )
}

/// Coordinate descent with explicit L1 and L2 weights.
#[allow(clippy::too_many_arguments)]
fn descend(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    n: usize,
    l1: f64,
    l2: f64,
    beta: &mut DVector<f64>,
    tol: f64,
    max_sweeps: usize,
) -> Result<()> {
    let p = xty.len();
    let nf = n as f64;
    // c = X'X β
    let mut c = gram * &*beta;
    let mut active: Vec<usize> = Vec::new();
    let sweep = |set: &[usize], beta: &mut DVector<f64>, c: &mut DVector<f64>| -> f64 {
        let mut max_change = 0.0f64;
        for &j in set {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let z = (xty[j] - c[j] + gjj * old) / nf;
            let new = soft_threshold(z, l1) / (gjj / nf + l2);
            if new != old {
                let d = new - old;
                beta[j] = new;
                c.axpy(d, &gram.column(j), 1.0);
                max_change = max_change.max(d * d * gjj / nf);
            }
        }
        max_change
    };
    let all: Vec<usize> = (0..p).collect();
    for _ in 0..max_sweeps {
        if sweep(&all, beta, &mut c) < tol {
            return Ok(());
        }
        active.clear();
        active.extend((0..p).filter(|&j| beta[j] != 0.0));
        let mut inner = 0;
        while sweep(&active, beta, &mut c) >= tol {
            inner += 1;
            if inner > max_sweeps {
                return Err(LerError::Numerical(
                    "elastic net coordinate descent did not converge".into(),
                ));
            }
        }
    }
    Err(LerError::Numerical(
        "elastic net coordinate descent did not converge".into(),
    ))
}

/// Log-spaced decreasing λ grid from `lambda_max` down to `ratio·lambda_max`.
pub fn lambda_path(lambda_max: f64, n_lambda: usize, ratio: f64) -> Vec<f64> {
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (n_lambda - 1) as f64;
    (0..n_lambda).map(|i| lambda_max * (step * i as f64).exp()).collect()
}

fn solve_path(problem: &Problem, path: &[f64], params: &ElasticNetParams) -> Result<Vec<DVector<f64>>> {
    let mut beta = DVector::zeros(problem.xty.len());
    let mut out = Vec::with_capacity(path.len());
    let sd = problem.y_sd();
    for &lambda in path {
        descend(
            &problem.gram,
            &problem.xty,
            problem.n,
            lambda * params.l1_ratio,
            lambda * (1.0 - params.l1_ratio) / sd,
            &mut beta,
            params.tol * (problem.yty / problem.n as f64).max(f64::MIN_POSITIVE),
            params.max_sweeps,
        )?;
        out.push(beta.clone());
    }
    Ok(out)
}

/// Fold label for each row after a seeded shuffle.
pub(crate) fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// Regress `y` on the columns of `x` and keep the columns with nonzero
/// coefficient at the λ minimizing k-fold cross-validated squared error.
pub fn filter_rules_elastic_net(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &ElasticNetParams,
) -> Result<ElasticNetFilter> {
    params.validate()?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(LerError::Argument(format!(
            "response has {} rows, rule matrix has {n}",
            y.len()
        )));
    }
    if p == 0 {
        return Err(LerError::EmptyRuleMatrix);
    }
    if n < params.folds {
        return Err(LerError::Argument(format!(
            "{n} rows is fewer than the {} cross-validation folds",
            params.folds
        )));
    }
    if params.l1_ratio == 0.0 {
        return Ok(ElasticNetFilter {
            retained: (0..p).collect(),
            lambda: None,
            coefficients: Vec::new(),
            path: Vec::new(),
            cv_error: Vec::new(),
        });
    }

    let all: Vec<usize> = (0..n).collect();
    let (full, _, _) = Problem::from_rows(x, y, &all);
    let lmax = full.lambda_max(params.l1_ratio);
    if lmax == 0.0 {
        return Ok(ElasticNetFilter {
            retained: Vec::new(),
            lambda: Some(0.0),
            coefficients: vec![0.0; p],
            path: vec![0.0],
            cv_error: Vec::new(),
        });
    }
    let path = lambda_path(lmax, params.n_lambda, params.lambda_ratio);

    let labels = fold_assignment(n, params.folds, params.seed);
    let mut sse = vec![0.0; path.len()];
    for fold in 0..params.folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == fold).collect();
        let (problem, mu, ybar) = Problem::from_rows(x, y, &train);
        let betas = solve_path(&problem, &path, params)?;
        for (k, beta) in betas.iter().enumerate() {
            let offset = ybar - mu.dot(beta);
            for &i in &test {
                let pred = offset + x.row(i).transpose().dot(beta);
                sse[k] += (y[i] - pred).powi(2);
            }
        }
    }
    let cv_error: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let best = cv_error
        .iter()
        .enumerate()
        .fold(0, |b, (k, &e)| if e < cv_error[b] { k } else { b });

    let betas = solve_path(&full, &path[..=best], params)?;
    let mut beta = betas.last().expect("path is non-empty").clone();
    // contributions below rounding level of the response count as zero
    let floor = 1e-9 * full.y_sd();
    let nf = n as f64;
    for j in 0..p {
        if beta[j].abs() * (full.gram[(j, j)] / nf).sqrt() <= floor {
            beta[j] = 0.0;
        }
    }
    Ok(ElasticNetFilter {
        retained: (0..p).filter(|&j| beta[j] != 0.0).collect(),
        lambda: Some(path[best]),
        coefficients: beta.iter().copied().collect(),
        path,
        cv_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn objective(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, lambda: f64, a: f64) -> f64 {
        let n = x.nrows() as f64;
        let r = y - x * b;
        r.norm_squared() / (2.0 * n) + lambda * ((1.0 - a) / 2.0 * b.norm_squared() + a * b.lp_norm(1))
    }

    /// ISTA on the raw objective, no sufficient statistics shared with the
    /// coordinate solver.
    fn proximal_gradient(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, a: f64) -> DVector<f64> {
        let n = x.nrows() as f64;
        let lip = {
            let s = (x.transpose() * x).symmetric_eigenvalues();
            s.max() / n + lambda * (1.0 - a)
        };
        let step = 1.0 / lip;
        let mut b = DVector::zeros(x.ncols());
        for _ in 0..200_000 {
            let grad = x.transpose() * (x * &b - y) / n + &b * (lambda * (1.0 - a));
            let z = &b - grad * step;
            b = z.map(|v| soft_threshold(v, step * lambda * a));
        }
        b
    }

    #[test]
    fn matches_proximal_gradient_on_small_system() {
        let x = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.5, -0.3, //
                -0.2, 1.1, 0.7, //
                0.4, -0.9, 1.3, //
                -1.0, 0.3, -0.6, //
                0.8, 0.2, 0.1, //
                -0.5, -1.2, 0.4,
            ],
        );
        let y = DVector::from_vec(vec![1.2, -0.4, 0.9, -1.5, 0.7, -0.1]);
        let gram = x.tr_mul(&x);
        let xty = x.tr_mul(&y);
        for &(lambda, a) in &[(0.05, 0.5), (0.2, 1.0), (0.1, 0.2), (0.4, 0.9)] {
            let mut b = DVector::zeros(3);
            coordinate_descent(&gram, &xty, 6, lambda, a, &mut b, 1e-24, 100_000).unwrap();
            let oracle = proximal_gradient(&x, &y, lambda, a);
            for j in 0..3 {
                assert!((b[j] - oracle[j]).abs() < 1e-6, "{lambda} {a}: {b} vs {oracle}");
            }
            assert!(objective(&x, &y, &b, lambda, a) <= objective(&x, &y, &oracle, lambda, a) + 1e-12);
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(40, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(40, |i, _| x[(i, 0)] + 0.1 * i as f64);
        let rows: Vec<usize> = (0..40).collect();
        let (p, _, _) = Problem::from_rows(&x, &y, &rows);
        let lmax = p.lambda_max(0.7);
        let mut b = DVector::zeros(5);
        coordinate_descent(&p.gram, &p.xty, 40, lmax * (1.0 + 1e-9), 0.7, &mut b, 1e-20, 1000).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
        coordinate_descent(&p.gram, &p.xty, 40, lmax * 0.9, 0.7, &mut b, 1e-20, 1000).unwrap();
        assert!(b.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn path_is_log_spaced() {
        let path = lambda_path(2.0, 50, 1e-3);
        assert_eq!(path.len(), 50);
        assert!((path[0] - 2.0).abs() < 1e-15);
        assert!((path[49] - 2e-3).abs() < 1e-15);
        let r = path[1] / path[0];
        for w in path.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_only_keeps_every_rule() {
        let x = DMatrix::from_fn(10, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let params = ElasticNetParams {
            l1_ratio: 0.0,
            ..Default::default()
        };
        let f = filter_rules_elastic_net(&x, &y, &params).unwrap();
        assert_eq!(f.retained, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fewer_rows_than_folds_is_an_error() {
        let x = DMatrix::from_element(3, 2, 1.0);
        let y = DVector::from_element(3, 1.0);
        let params = ElasticNetParams {
            l1_ratio: 1.0,
            folds: 5,
            ..Default::default()
        };
        assert!(matches!(
            filter_rules_elastic_net(&x, &y, &params),
            Err(LerError::Argument(_))
        ));
    }

    #[test]
    fn pure_noise_rules_are_mostly_discarded() {
        let (n, p) = (200, 50);
        let mut retained = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = DMatrix::from_fn(n, p, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let params = ElasticNetParams {
                l1_ratio: 1.0,
                seed,
                ..Default::default()
            };
            retained += filter_rules_elastic_net(&x, &y, &params).unwrap().retained.len();
        }
        let frac = retained as f64 / (20 * p) as f64;
        assert!(frac <= 0.05, "retained fraction {frac}");
    }

    #[test]
    fn signal_rules_survive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(300, 20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(300, |i, _| {
            2.0 * x[(i, 3)] - 1.5 * x[(i, 11)] + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let params = ElasticNetParams {
            l1_ratio: 1.0,
            seed: 9,
            ..Default::default()
        };
        let f = filter_rules_elastic_net(&x, &y, &params).unwrap();
        assert!(f.retained.contains(&3) && f.retained.contains(&11));
    }

    #[test]
    fn scaling_the_response_scales_the_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(120, 15, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(120, |i, _| {
            x[(i, 2)] - 0.5 * x[(i, 7)] + rng.sample::<f64, _>(StandardNormal)
        });
        let params = ElasticNetParams {
            l1_ratio: 0.3,
            seed: 2,
            tol: 1e-14,
            ..Default::default()
        };
        let a = filter_rules_elastic_net(&x, &y, &params).unwrap();
        let b = filter_rules_elastic_net(&x, &(&y * 7.5), &params).unwrap();
        assert_eq!(a.retained, b.retained);
        for (p, q) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((7.5 * p - q).abs() < 1e-8 * (1.0 + q.abs()), "{p} vs {q}");
        }
    }
}
