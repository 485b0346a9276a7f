//! Single-marker mixed-model association scan.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use super::reml::{RemlOptions, RemlProblem, VarianceComponents};
use crate::error::{LerError, Result};
use crate::genotype::{center_markers, compute_pcs, MarkerMatrix, MISSING};
use crate::linalg::KernelSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwasFlag {
    Tested,
    /// Single observed genotype, not tested.
    Monomorphic,
    /// No variation left after removing the fixed effects, not tested.
    Collinear,
}

impl fmt::Display for GwasFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GwasFlag::Tested => "ok",
            GwasFlag::Monomorphic => "monomorphic",
            GwasFlag::Collinear => "collinear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerTest {
    pub beta: f64,
    pub se: f64,
    pub stat: f64,
    pub pvalue: f64,
    pub flag: GwasFlag,
}

impl MarkerTest {
    fn untested(flag: GwasFlag) -> Self {
        MarkerTest {
            beta: 0.0,
            se: f64::NAN,
            stat: 0.0,
            pvalue: 1.0,
            flag,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwasResult {
    pub tests: Vec<MarkerTest>,
    /// Null-model variance components.
    pub vc: VarianceComponents,
}

impl GwasResult {
    /// Marker indices ordered by increasing p-value, ties by larger |stat|
    /// and then by index. Untested markers come last.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.tests.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ta, tb) = (&self.tests[a], &self.tests[b]);
            let untested = |t: &MarkerTest| t.flag != GwasFlag::Tested;
            untested(ta)
                .cmp(&untested(tb))
                .then(ta.pvalue.total_cmp(&tb.pvalue))
                .then(tb.stat.abs().total_cmp(&ta.stat.abs()))
                .then(a.cmp(&b))
        });
        idx
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GwasOptions {
    /// Re-estimate the variance ratio for every marker instead of holding
    /// it at the null estimate.
    pub exact: bool,
    /// Number of genotype principal components added as fixed covariates.
    pub n_pcs: usize,
}

/// Two-sided p-value of a t statistic.
pub fn t_test_pvalue(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return f64::MIN_POSITIVE;
    }
    let p = beta_reg(dof / 2.0, 0.5, dof / (dof + t * t));
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

fn is_monomorphic(col: &[u8]) -> bool {
    let mut seen = None;
    for &v in col {
        if v == MISSING {
            continue;
        }
        match seen {
            None => seen = Some(v),
            Some(s) if s != v => return false,
            _ => {}
        }
    }
    true
}

/// Projections of one marker column needed by its test.
struct MarkerForms {
    /// `U'x`
    ux: DVector<f64>,
    /// `x'W - (U'x)'(U'W)`
    null_w: DVector<f64>,
    /// `x'x - ‖U'x‖²`
    null_xx: f64,
}

/// Weighted forms `x'H⁻¹[y X]` and `x'H⁻¹x`.
fn marker_quadratics(forms: &MarkerForms, uw: &DMatrix<f64>, values: &[f64], delta: f64) -> (DVector<f64>, f64) {
    let mut xhw = forms.null_w.clone() / delta;
    let mut xhx = forms.null_xx / delta;
    for (k, &s) in values.iter().enumerate() {
        let w = 1.0 / (s + delta);
        let u = forms.ux[k] * w;
        xhx += forms.ux[k] * u;
        for c in 0..uw.ncols() {
            xhw[c] += u * uw[(k, c)];
        }
    }
    (xhw, xhx)
}

/// Generalized least squares test of one marker at a fixed δ.
fn test_at(xhw: &DVector<f64>, xhx: f64, base: &BaseForms, dof: f64) -> MarkerTest {
    let p = base.beta0.len();
    let xhy = xhw[0];
    let xhx_fixed = xhw.rows(1, p).into_owned();
    let xpy = xhy - xhx_fixed.dot(&base.beta0);
    let xpx = xhx - xhx_fixed.dot(&base.a_chol.solve(&xhx_fixed));
    if !(xpx > 1e-10 * xhx.abs().max(f64::MIN_POSITIVE)) {
        return MarkerTest::untested(GwasFlag::Collinear);
    }
    let beta = xpy / xpx;
    let rss = (base.ypy - xpy * xpy / xpx).max(0.0);
    let sigma2 = rss / dof;
    let se = (sigma2 / xpx).sqrt();
    let stat = if se > 0.0 {
        beta / se
    } else if beta == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(beta)
    };
    MarkerTest {
        beta,
        se,
        stat,
        pvalue: t_test_pvalue(stat, dof),
        flag: GwasFlag::Tested,
    }
}

/// Null-model GLS pieces at δ.
struct BaseForms {
    a_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    beta0: DVector<f64>,
    ypy: f64,
}

fn base_forms(uw: &DMatrix<f64>, null: &DMatrix<f64>, values: &[f64], delta: f64) -> Result<BaseForms> {
    let mut scaled = uw.clone();
    for (k, &s) in values.iter().enumerate() {
        scaled.row_mut(k).scale_mut(1.0 / (s + delta));
    }
    let m = uw.tr_mul(&scaled) + null / delta;
    let p = m.nrows() - 1;
    let a = m.view((1, 1), (p, p)).into_owned();
    let b = m.view((1, 0), (p, 1)).column(0).into_owned();
    let a_chol = a
        .cholesky()
        .ok_or_else(|| LerError::Numerical("X' H^-1 X is not positive definite".into()))?;
    let beta0 = a_chol.solve(&b);
    let ypy = m[(0, 0)] - b.dot(&beta0);
    Ok(BaseForms { a_chol, beta0, ypy })
}

pub fn gwas_emma(y: &DVector<f64>, x: &DMatrix<f64>, m: &MarkerMatrix) -> Result<GwasResult> {
    gwas_emma_with(y, x, m, &GwasOptions::default())
}

/// Mixed-model scan with kinship `G = CC'/k` as the polygenic background.
/// Each marker enters as a fixed effect and is tested with a Wald t test.
pub fn gwas_emma_with(y: &DVector<f64>, x: &DMatrix<f64>, m: &MarkerMatrix, opts: &GwasOptions) -> Result<GwasResult> {
    let n = y.len();
    if m.n_samples() != n || x.nrows() != n {
        return Err(LerError::Argument(format!(
            "dimension mismatch: y has {n} rows, X has {}, markers have {}",
            x.nrows(),
            m.n_samples()
        )));
    }
    let x = if opts.n_pcs > 0 {
        let pcs = compute_pcs(m, opts.n_pcs)?;
        let mut aug = DMatrix::zeros(n, x.ncols() + pcs.n_components());
        aug.columns_mut(0, x.ncols()).copy_from(x);
        aug.columns_mut(x.ncols(), pcs.n_components()).copy_from(&pcs.scores);
        aug
    } else {
        x.clone()
    };
    let p = x.ncols();
    if n <= p + 1 {
        return Err(LerError::Argument(format!(
            "need more than {} samples for {p} fixed effects plus a marker",
            p + 1
        )));
    }
    let centered = center_markers(m)?;
    let k = centered.heterozygosity_scale();
    if k <= 0.0 || centered.matrix.iter().all(|&v| v == 0.0) {
        return Err(LerError::DegenerateKinship);
    }
    let z = &centered.matrix / k.sqrt();
    let spectrum = KernelSpectrum::from_factor(&z)?;
    let reml = RemlOptions::default();
    let null_problem = RemlProblem::new(y, &x, &spectrum)?;
    let null_opt = null_problem.optimize(&reml)?;
    let null_eval = null_problem.evaluate(null_opt.log_delta)?;
    let sigma2 = null_eval.ypy / (n - p) as f64;
    let vc = VarianceComponents {
        sigma2_g: sigma2,
        sigma2_e: null_opt.log_delta.exp() * sigma2,
    };

    let full_rank = spectrum.rank() == n;
    let mut w = DMatrix::zeros(n, p + 1);
    w.set_column(0, y);
    w.columns_mut(1, p).copy_from(&x);
    let uw = spectrum.vectors.tr_mul(&w);
    let null_ww = if full_rank {
        DMatrix::zeros(p + 1, p + 1)
    } else {
        w.tr_mul(&w) - uw.tr_mul(&uw)
    };
    let c = &centered.matrix;
    let uc = spectrum.vectors.tr_mul(c);
    let (cw, cc): (DMatrix<f64>, Vec<f64>) = if full_rank {
        (DMatrix::zeros(m.n_markers(), p + 1), vec![0.0; m.n_markers()])
    } else {
        (c.tr_mul(&w), c.column_iter().map(|col| col.norm_squared()).collect())
    };
    let dof = (n - p - 1) as f64;
    let delta0 = null_opt.log_delta.exp();
    let base0 = base_forms(&uw, &null_ww, &spectrum.values, delta0)?;

    let tests: Vec<MarkerTest> = (0..m.n_markers())
        .into_par_iter()
        .map(|j| -> Result<MarkerTest> {
            if is_monomorphic(m.column(j)) {
                return Ok(MarkerTest::untested(GwasFlag::Monomorphic));
            }
            let ux = uc.column(j).into_owned();
            let (null_w, null_xx) = if full_rank {
                (DVector::zeros(p + 1), 0.0)
            } else {
                let nw = cw.row(j).transpose() - uw.tr_mul(&ux);
                (nw, cc[j] - ux.norm_squared())
            };
            let forms = MarkerForms { ux, null_w, null_xx };
            if opts.exact {
                let mut xa = DMatrix::zeros(n, p + 1);
                xa.columns_mut(0, p).copy_from(&x);
                xa.set_column(p, &c.column(j));
                let problem = match RemlProblem::new(y, &xa, &spectrum) {
                    Ok(pr) => pr,
                    Err(_) => return Ok(MarkerTest::untested(GwasFlag::Collinear)),
                };
                let delta = problem.optimize(&reml)?.log_delta.exp();
                let base = base_forms(&uw, &null_ww, &spectrum.values, delta)?;
                let (xhw, xhx) = marker_quadratics(&forms, &uw, &spectrum.values, delta);
                Ok(test_at(&xhw, xhx, &base, dof))
            } else {
                let (xhw, xhx) = marker_quadratics(&forms, &uw, &spectrum.values, delta0);
                Ok(test_at(&xhw, xhx, &base0, dof))
            }
        })
        .collect::<Result<_>>()?;
    Ok(GwasResult { tests, vc })
}
