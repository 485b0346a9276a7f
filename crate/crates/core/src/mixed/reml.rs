//! Restricted maximum likelihood for `y = Xβ + u + e`, `u ~ N(0, σ²_g K)`,
//! `e ~ N(0, σ²_e I)`, profiled over σ²_g and optimized in `δ = σ²_e/σ²_g`.
//!
//! With `K = U diag(s) U'` and `H = K + δI`, every quadratic form in `H⁻¹`
//! splits into a part inside the span of `U` and a part in its orthogonal
//! complement, so each likelihood evaluation costs O(q p²).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LerError, Result};
use crate::linalg::KernelSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_g: f64,
    pub sigma2_e: f64,
}

impl VarianceComponents {
    /// `λ = σ²_e / σ²_g`.
    pub fn lambda(&self) -> f64 {
        self.sigma2_e / self.sigma2_g
    }

    /// Share of phenotypic variance attributed to the random term.
    pub fn heritability(&self) -> f64 {
        self.sigma2_g / (self.sigma2_g + self.sigma2_e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemlOptions {
    /// Bounds on `log(delta / tau)` with `tau = tr(K) / n`; rescaling the
    /// kernel shifts the search interval with it.
    pub log_delta_min: f64,
    pub log_delta_max: f64,
    pub grid_points: usize,
    pub tol: f64,
}

impl Default for RemlOptions {
    fn default() -> Self {
        RemlOptions {
            log_delta_min: -10.0,
            log_delta_max: 10.0,
            grid_points: 401,
            tol: 1e-8,
        }
    }
}

/// Result of the one-dimensional search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemlOptimum {
    pub log_delta: f64,
    pub log_likelihood: f64,
    /// Optimum sits on an edge of the search interval.
    pub at_bound: bool,
}

/// Precomputed projections of `[y X]` onto the kernel eigenvectors.
pub struct RemlProblem<'a> {
    pub(crate) spectrum: &'a KernelSpectrum,
    n: usize,
    p: usize,
    /// `U' [y X]`, q x (p+1)
    uw: DMatrix<f64>,
    /// `W'W - (U'W)'(U'W)`: the part of `W'W` outside the span of `U`.
    null: DMatrix<f64>,
    logdet_xtx: f64,
}

/// Quantities of the profiled likelihood at one δ.
pub(crate) struct Evaluation {
    pub beta: DVector<f64>,
    pub ypy: f64,
    pub log_likelihood: f64,
    /// d LL / d log δ
    pub slope: f64,
}

impl<'a> RemlProblem<'a> {
    pub fn new(y: &DVector<f64>, x: &DMatrix<f64>, spectrum: &'a KernelSpectrum) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        if x.nrows() != n || spectrum.n() != n {
            return Err(LerError::Argument(format!(
                "dimension mismatch: y has {n} rows, X has {}, kernel has {}",
                x.nrows(),
                spectrum.n()
            )));
        }
        if n <= p {
            return Err(LerError::Argument(format!(
                "need more samples ({n}) than fixed effects ({p})"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LerError::Validation("response contains non-finite values".into()));
        }
        let mut w = DMatrix::zeros(n, p + 1);
        w.set_column(0, y);
        for j in 0..p {
            w.set_column(j + 1, &x.column(j));
        }
        let uw = spectrum.vectors.tr_mul(&w);
        let null = if spectrum.rank() == n {
            DMatrix::zeros(p + 1, p + 1)
        } else {
            w.tr_mul(&w) - uw.tr_mul(&uw)
        };
        let xtx = x.tr_mul(x);
        let logdet_xtx = match xtx.clone().cholesky() {
            Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => {
                return Err(LerError::Validation(
                    "fixed-effect design is not of full column rank".into(),
                ))
            }
        };
        Ok(RemlProblem {
            spectrum,
            n,
            p,
            uw,
            null,
            logdet_xtx,
        })
    }

    /// `W' H^{-power} W` for power 1 or 2.
    fn forms(&self, delta: f64, power: i32) -> DMatrix<f64> {
        let mut scaled = self.uw.clone();
        for (k, &s) in self.spectrum.values.iter().enumerate() {
            scaled.row_mut(k).scale_mut((s + delta).powi(-power));
        }
        self.uw.tr_mul(&scaled) + &self.null * delta.powi(-power)
    }

    pub(crate) fn evaluate(&self, log_delta: f64) -> Result<Evaluation> {
        let delta = log_delta.exp();
        let (n, p) = (self.n, self.p);
        let m1 = self.forms(delta, 1);
        let m2 = self.forms(delta, 2);
        let a = m1.view((1, 1), (p, p)).into_owned();
        let b = m1.view((1, 0), (p, 1)).column(0).into_owned();
        let c = m1[(0, 0)];
        let ch = a
            .clone()
            .cholesky()
            .ok_or_else(|| LerError::Numerical("X' H^-1 X is not positive definite".into()))?;
        let beta = ch.solve(&b);
        let ypy = (c - b.dot(&beta)).max(f64::MIN_POSITIVE);
        let logdet_a = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let q = self.spectrum.rank();
        let logdet_h = self.spectrum.values.iter().map(|&s| (s + delta).ln()).sum::<f64>() + (n - q) as f64 * log_delta;
        let dof = (n - p) as f64;
        let log_likelihood = -0.5
            * (dof * (1.0 + (2.0 * std::f64::consts::PI * ypy / dof).ln()) + logdet_h + logdet_a - self.logdet_xtx);

        let a2 = m2.view((1, 1), (p, p)).into_owned();
        let b2 = m2.view((1, 0), (p, 1)).column(0).into_owned();
        let c2 = m2[(0, 0)];
        let yppy = c2 - 2.0 * beta.dot(&b2) + (&a2 * &beta).dot(&beta);
        let tr_hinv = self.spectrum.values.iter().map(|&s| 1.0 / (s + delta)).sum::<f64>() + (n - q) as f64 / delta;
        let tr_p = tr_hinv - ch.solve(&a2).trace();
        let slope = -0.5 * delta * (tr_p - dof * yppy / ypy);
        Ok(Evaluation {
            beta,
            ypy,
            log_likelihood,
            slope,
        })
    }

    pub fn log_likelihood(&self, log_delta: f64) -> Result<f64> {
        Ok(self.evaluate(log_delta)?.log_likelihood)
    }

    /// `ln(tr(K) / n)`: offset applied to the search bounds.
    pub fn log_scale(&self) -> f64 {
        let tau = self.spectrum.values.iter().sum::<f64>() / self.n as f64;
        if tau > 0.0 {
            tau.ln()
        } else {
            0.0
        }
    }

    /// Grid scan over the shifted `[log_delta_min, log_delta_max]`, then a
    /// safeguarded root search on the analytic slope inside the best cell.
    pub fn optimize(&self, opts: &RemlOptions) -> Result<RemlOptimum> {
        let off = self.log_scale();
        let (lo, hi) = (opts.log_delta_min + off, opts.log_delta_max + off);
        let g = opts.grid_points.max(3);
        let step = (hi - lo) / (g - 1) as f64;
        let xs: Vec<f64> = (0..g).map(|i| lo + step * i as f64).collect();
        let mut lls = Vec::with_capacity(g);
        for &x in &xs {
            lls.push(self.log_likelihood(x)?);
        }
        let best = (0..g).fold(0, |b, i| if lls[i] > lls[b] { i } else { b });

        let mut roots: Vec<(f64, f64)> = Vec::new();
        // local maxima strictly inside one of the neighbouring cells
        let cells = [(best.saturating_sub(1), best), (best, (best + 1).min(g - 1))];
        for &(i, j) in &cells {
            if i == j {
                continue;
            }
            let (a, b) = (xs[i], xs[j]);
            let sa = self.evaluate(a)?.slope;
            let sb = self.evaluate(b)?.slope;
            if sa > 0.0 && sb < 0.0 {
                let x = self.slope_root(a, b, opts.tol)?;
                roots.push((x, self.log_likelihood(x)?));
            }
        }
        let (x, ll) = roots.into_iter().fold(
            (xs[best], f64::NEG_INFINITY),
            |acc, c| if c.1 > acc.1 { c } else { acc },
        );
        let ll = if ll == f64::NEG_INFINITY { lls[best] } else { ll };
        let at_bound = x <= lo || x >= hi;
        Ok(RemlOptimum {
            log_delta: x,
            log_likelihood: ll,
            at_bound,
        })
    }

    fn slope_root(&self, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
        // bisection with secant steps while they stay inside the bracket
        let mut fa = self.evaluate(a)?.slope;
        let mut fb = self.evaluate(b)?.slope;
        for _ in 0..200 {
            if b - a < tol * 1e-2 {
                break;
            }
            let secant = a - fa * (b - a) / (fb - fa);
            let mid = 0.5 * (a + b);
            let x = if secant.is_finite() && secant > a + 0.05 * (b - a) && secant < b - 0.05 * (b - a) {
                secant
            } else {
                mid
            };
            let fx = self.evaluate(x)?.slope;
            if fx == 0.0 {
                return Ok(x);
            }
            if fx > 0.0 {
                a = x;
                fa = fx;
            } else {
                b = x;
                fb = fx;
            }
        }
        Ok(0.5 * (a + b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(seed: u64, n: usize, f: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, f, |_, _| rng.sample::<f64, _>(StandardNormal));
        let k = &z * z.transpose() / f as f64;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let u = &z * DVector::from_fn(f, |_, _| rng.sample::<f64, _>(StandardNormal)) / (f as f64).sqrt();
        let y = DVector::from_fn(n, |i, _| 1.0 + u[i] + rng.sample::<f64, _>(StandardNormal));
        (y, x, k)
    }

    /// Dense restricted likelihood from Cholesky factors, no spectrum.
    fn dense_ll(y: &DVector<f64>, x: &DMatrix<f64>, k: &DMatrix<f64>, delta: f64) -> f64 {
        let n = y.len();
        let p = x.ncols();
        let h = k + DMatrix::identity(n, n) * delta;
        let ch = h.cholesky().unwrap();
        let hx = ch.solve(x);
        let hy = ch.solve(y);
        let a = x.transpose() * &hx;
        let cha = a.clone().cholesky().unwrap();
        let beta = cha.solve(&(x.transpose() * &hy));
        let r = y - x * &beta;
        let ypy = r.dot(&ch.solve(&r));
        let ld = |l: DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let dof = (n - p) as f64;
        let xtx = (x.transpose() * x).cholesky().unwrap();
        -0.5 * (dof * (1.0 + (2.0 * std::f64::consts::PI * ypy / dof).ln()) + ld(ch.l()) + ld(cha.l()) - ld(xtx.l()))
    }

    #[test]
    fn spectral_likelihood_matches_dense() {
        for (seed, f) in [(1, 40), (2, 10)] {
            let (y, x, k) = random_problem(seed, 25, f);
            let spectrum = KernelSpectrum::from_dense(&k).unwrap();
            let prob = RemlProblem::new(&y, &x, &spectrum).unwrap();
            for &ld in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
                let a = prob.log_likelihood(ld).unwrap();
                let b = dense_ll(&y, &x, &k, f64::exp(ld));
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn low_rank_spectrum_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DMatrix::from_fn(30, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let k = &z * z.transpose();
        let y = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_element(30, 1, 1.0);
        let spectrum = KernelSpectrum::from_factor(&z).unwrap();
        assert_eq!(spectrum.rank(), 6);
        let prob = RemlProblem::new(&y, &x, &spectrum).unwrap();
        for &ld in &[-2.0, 0.3, 2.5] {
            let a = prob.log_likelihood(ld).unwrap();
            let b = dense_ll(&y, &x, &k, f64::exp(ld));
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let (y, x, k) = random_problem(4, 20, 30);
        let spectrum = KernelSpectrum::from_dense(&k).unwrap();
        let prob = RemlProblem::new(&y, &x, &spectrum).unwrap();
        for &ld in &[-1.0, 0.5, 2.0] {
            let h = 1e-5;
            let fd = (prob.log_likelihood(ld + h).unwrap() - prob.log_likelihood(ld - h).unwrap()) / (2.0 * h);
            let s = prob.evaluate(ld).unwrap().slope;
            assert!((fd - s).abs() < 1e-6 * (1.0 + s.abs()), "{fd} vs {s}");
        }
    }

    #[test]
    fn optimum_beats_random_draws() {
        let (y, x, k) = random_problem(5, 30, 50);
        let spectrum = KernelSpectrum::from_dense(&k).unwrap();
        let prob = RemlProblem::new(&y, &x, &spectrum).unwrap();
        let opt = prob.optimize(&RemlOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let ld = rng.random_range(-10.0..10.0);
            assert!(prob.log_likelihood(ld).unwrap() <= opt.log_likelihood + 1e-12);
        }
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let spectrum = KernelSpectrum::from_dense(&DMatrix::identity(3, 3)).unwrap();
        assert!(RemlProblem::new(&y, &x, &spectrum).is_err());
    }
}
