//! Synthetic populations with local epistatic effects, the GWAS-vs-LER
//! power experiment, and the two-marker interaction fixture.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LerError, Result};
use crate::genotype::{compute_pcs, MarkerMatrix, MarkerPosition, PhenotypeTable};
use crate::linalg::{mean, sample_variance};
use crate::mixed::gwas_emma;
use crate::pipeline::{fit_ler, importance, rank_markers, HyperParams};
use crate::rules::isle::derive_seed;

/// 1-based indices of the 15 causal SNPs, three per effect.
pub const CAUSAL_SNPS: [usize; 15] = [8, 11, 14, 208, 211, 214, 408, 411, 414, 608, 611, 614, 808, 811, 814];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitModel {
    /// Five effects: linear, pc-conditioned sign flip, squared,
    /// pc-conditioned squared, squared with a pc term.
    Table3,
    /// Same SNPs, each effect a plain linear form.
    Additive,
}

impl std::str::FromStr for TraitModel {
    type Err = LerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table3" => Ok(TraitModel::Table3),
            "additive" => Ok(TraitModel::Additive),
            _ => Err(LerError::Config(format!("trait must be table3 or additive, got {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub freq_min: f64,
    pub freq_max: f64,
    pub h2: f64,
    pub sex_effect: f64,
    pub trait_model: TraitModel,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 2000,
            m: 1000,
            freq_min: 0.1,
            freq_max: 0.9,
            h2: 2.0 / 3.0,
            sex_effect: 5.0,
            trait_model: TraitModel::Table3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h2 > 0.0 && self.h2 < 1.0) {
            return Err(LerError::Argument(format!("h2 must lie in (0, 1), got {}", self.h2)));
        }
        let largest = *CAUSAL_SNPS.iter().max().expect("non-empty");
        if self.m < largest {
            return Err(LerError::Argument(format!(
                "need at least {largest} SNPs to place every causal locus, got {}",
                self.m
            )));
        }
        if self.n < 4 {
            return Err(LerError::Argument("need at least 4 individuals".into()));
        }
        if !(0.0 < self.freq_min && self.freq_min <= self.freq_max && self.freq_max < 1.0) {
            return Err(LerError::Argument(
                "allele frequency range must lie inside (0, 1)".into(),
            ));
        }
        if !self.sex_effect.is_finite() {
            return Err(LerError::Argument("sex effect must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimPopulation {
    pub genotypes: MarkerMatrix,
    pub male: Vec<bool>,
    /// Standardized g_1..g_5.
    pub effects: Vec<Vec<f64>>,
    pub genetic_values: Vec<f64>,
    pub phenotypes: Vec<f64>,
    /// 0-based marker columns of the causal SNPs.
    pub causal: Vec<usize>,
    /// n x 2 scores of the first two PCs used by the effects.
    pub pcs: DMatrix<f64>,
    pub sigma2_e: f64,
    /// Seed that produced this population (after any resampling).
    pub seed: u64,
}

impl SimPopulation {
    /// Phenotypes with a `male` covariate.
    pub fn phenotype_table(&self) -> PhenotypeTable {
        let sex: Vec<f64> = self.male.iter().map(|&b| f64::from(u8::from(b))).collect();
        PhenotypeTable::new(
            self.genotypes.sample_ids().to_vec(),
            self.phenotypes.clone(),
            vec!["male".into()],
            &[sex],
        )
        .expect("simulated table is consistent")
    }

    /// var(g) / var(y − sex effect).
    pub fn realized_h2(&self, sex_effect: f64) -> f64 {
        let adj: Vec<f64> = self
            .phenotypes
            .iter()
            .zip(&self.male)
            .map(|(y, &m)| y - if m { sex_effect } else { 0.0 })
            .collect();
        sample_variance(&self.genetic_values) / sample_variance(&adj)
    }

    /// Mean phenotype of males minus that of females.
    pub fn sex_gap(&self) -> f64 {
        let pick = |want: bool| -> Vec<f64> {
            self.phenotypes
                .iter()
                .zip(&self.male)
                .filter(|(_, &m)| m == want)
                .map(|(y, _)| *y)
                .collect()
        };
        mean(&pick(true)) - mean(&pick(false))
    }
}

fn standardize(v: &mut [f64]) -> bool {
    let mu = mean(v);
    let sd = sample_variance(v).sqrt();
    if !(sd > 1e-12) {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x - mu) / sd;
    }
    true
}

/// Raw (unstandardized) effects g_1..g_5 from genotype dosages and the
/// first two PC scores.
fn trait_effects(model: TraitModel, x: &dyn Fn(usize, usize) -> f64, pcs: &DMatrix<f64>, n: usize) -> Vec<Vec<f64>> {
    let lin = |i: usize, a: usize, s: [f64; 3]| s[0] * x(i, a) + s[1] * x(i, a + 3) + s[2] * x(i, a + 6);
    let mut out: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for i in 0..n {
        let (pc1, pc2) = (pcs[(i, 0)], pcs[(i, 1)]);
        let g = match model {
            TraitModel::Additive => [
                lin(i, 8, [0.6, 0.5, -0.4]),
                lin(i, 208, [0.6, 0.5, -0.4]),
                lin(i, 408, [0.6, 0.5, -0.4]),
                lin(i, 608, [0.6, 0.5, -0.4]),
                lin(i, 808, [0.6, 0.5, -0.4]),
            ],
            TraitModel::Table3 => [
                lin(i, 8, [0.6, 0.5, -0.4]),
                if pc1 < 0.0 {
                    lin(i, 208, [0.6, -0.5, -0.4])
                } else {
                    -lin(i, 208, [0.6, 0.5, 0.4])
                },
                lin(i, 408, [0.6, 0.5, -0.4]).powi(2),
                if pc1 < 0.0 {
                    lin(i, 608, [0.6, 0.5, -0.4]).powi(2)
                } else {
                    -lin(i, 608, [0.6, -0.5, 0.4]).powi(2)
                },
                if pc1 < 0.0 {
                    (lin(i, 808, [0.6, 0.5, -0.4]) + 0.5 * pc2).powi(2)
                } else {
                    (lin(i, 808, [-0.6, -0.5, 0.4]) - 0.5 * pc2).powi(2)
                },
            ],
        };
        for (k, v) in g.into_iter().enumerate() {
            out[k].push(v);
        }
    }
    out
}

pub fn simulate_population(cfg: &SimConfig) -> Result<SimPopulation> {
    cfg.validate()?;
    let mut seed = cfg.seed;
    for _ in 0..100 {
        match simulate_once(cfg, seed)? {
            Some(pop) => return Ok(pop),
            None => {
                warn!(
                    "degenerate simulated effect for seed {seed}; resampling with seed {}",
                    seed.wrapping_add(1)
                );
                seed = seed.wrapping_add(1);
            }
        }
    }
    Err(LerError::Numerical("could not draw a non-degenerate population".into()))
}

fn simulate_once(cfg: &SimConfig, seed: u64) -> Result<Option<SimPopulation>> {
    let (n, m) = (cfg.n, cfg.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0u8; n * m];
    for j in 0..m {
        let p: f64 = rng.random_range(cfg.freq_min..cfg.freq_max);
        for v in &mut values[j * n..(j + 1) * n] {
            *v = u8::from(rng.random_bool(p)) + u8::from(rng.random_bool(p));
        }
    }
    let genotypes = MarkerMatrix::new(
        (1..=n).map(|i| format!("ind{i}")).collect(),
        (1..=m).map(|j| format!("x{j}")).collect(),
        (1..=m)
            .map(|j| MarkerPosition {
                chromosome: "1".into(),
                position: j as u64,
            })
            .collect(),
        values,
    )?;
    let mut male: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    male.shuffle(&mut rng);

    let pcs = compute_pcs(&genotypes, 2)?.scores;
    if (0..2).any(|k| sample_variance(pcs.column(k).as_slice()) <= 1e-12) {
        return Ok(None);
    }
    let x = |i: usize, k: usize| f64::from(genotypes.get(i, k - 1));
    let mut effects = trait_effects(cfg.trait_model, &x, &pcs, n);
    for e in effects.iter_mut() {
        if !standardize(e) {
            return Ok(None);
        }
    }
    let genetic_values: Vec<f64> = (0..n).map(|i| effects.iter().map(|e| e[i]).sum()).collect();
    let var_g = sample_variance(&genetic_values);
    let sigma2_e = var_g * (1.0 - cfg.h2) / cfg.h2;
    let sd_e = sigma2_e.sqrt();
    let phenotypes: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            genetic_values[i] + if male[i] { cfg.sex_effect } else { 0.0 } + sd_e * e
        })
        .collect();
    Ok(Some(SimPopulation {
        genotypes,
        male,
        effects,
        genetic_values,
        phenotypes,
        causal: CAUSAL_SNPS.iter().map(|k| k - 1).collect(),
        pcs,
        sigma2_e,
        seed,
    }))
}

/// Recovery counts of each causal SNP in the top-`top` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub reps: usize,
    pub top: usize,
    pub marker_ids: Vec<String>,
    pub gwas: Vec<usize>,
    pub ler: Vec<usize>,
}

impl PowerTable {
    pub fn gwas_rate(&self, marker_id: &str) -> Option<f64> {
        let k = self.marker_ids.iter().position(|m| m == marker_id)?;
        Some(self.gwas[k] as f64 / self.reps as f64)
    }

    pub fn ler_rate(&self, marker_id: &str) -> Option<f64> {
        let k = self.marker_ids.iter().position(|m| m == marker_id)?;
        Some(self.ler[k] as f64 / self.reps as f64)
    }

    /// `method,x8,x11,...` header, one row per method.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for id in &self.marker_ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for (name, counts) in [("GWAS", &self.gwas), ("LER", &self.ler)] {
            s.push_str(name);
            for c in counts.iter() {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Which causal SNPs each method placed in its top list for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateHits {
    pub gwas: Vec<bool>,
    pub ler: Vec<bool>,
}

pub fn power_replicate(cfg: &SimConfig, hp: &HyperParams, top: usize) -> Result<ReplicateHits> {
    let pop = simulate_population(cfg)?;
    let table = pop.phenotype_table();
    let y = DVector::from_column_slice(&table.y);
    let gwas = gwas_emma(&y, &table.design, &pop.genotypes)?;
    let gwas_top: Vec<usize> = gwas.ranking().into_iter().take(top).collect();
    let fit = fit_ler(&pop.genotypes, &table, hp)?;
    let ler_top = rank_markers(&importance(&fit.model, 2), top);
    Ok(ReplicateHits {
        gwas: pop.causal.iter().map(|c| gwas_top.contains(c)).collect(),
        ler: pop.causal.iter().map(|c| ler_top.contains(c)).collect(),
    })
}

/// Fresh population per replicate; replicate `r` uses seeds derived from
/// `(cfg.seed, r)` and `(hp.seed, r)` so results do not depend on
/// scheduling.
pub fn power_experiment(reps: usize, cfg: &SimConfig, hp: &HyperParams, top: usize) -> Result<PowerTable> {
    if reps == 0 {
        return Err(LerError::Argument("reps must be at least 1".into()));
    }
    cfg.validate()?;
    hp.validate()?;
    let hits: Vec<ReplicateHits> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let c = SimConfig {
                seed: derive_seed(cfg.seed, r as u64),
                ..cfg.clone()
            };
            let h = HyperParams {
                seed: derive_seed(hp.seed, r as u64),
                ..hp.clone()
            };
            power_replicate(&c, &h, top)
        })
        .collect::<Result<_>>()?;
    let k = CAUSAL_SNPS.len();
    let mut gwas = vec![0; k];
    let mut ler = vec![0; k];
    for h in &hits {
        for c in 0..k {
            gwas[c] += usize::from(h.gwas[c]);
            ler[c] += usize::from(h.ler[c]);
        }
    }
    Ok(PowerTable {
        reps,
        top,
        marker_ids: CAUSAL_SNPS.iter().map(|k| format!("x{k}")).collect(),
        gwas,
        ler,
    })
}

/// Two-marker fixture: class −1 when `m1 < 2` and `m2 > 1`, +1 otherwise,
/// over the 3 x 3 genotype grid repeated to `n` rows.
#[derive(Debug, Clone)]
pub struct Table1Fixture {
    pub genotypes: MarkerMatrix,
    pub phenotypes: PhenotypeTable,
    pub classes: Vec<f64>,
}

pub fn table1_scenario(n: usize, noise_sd: f64, seed: u64) -> Table1Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let cell = i % 9;
        let (m1, m2) = ((cell / 3) as u8, (cell % 3) as u8);
        let class = table1_class(m1, m2);
        rows.push(vec![m1, m2]);
        classes.push(class);
        let e: f64 = if noise_sd > 0.0 {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        y.push(class + noise_sd * e);
    }
    Table1Fixture {
        genotypes: MarkerMatrix::from_rows(&rows).expect("fixture codes are valid"),
        phenotypes: PhenotypeTable::intercept_only(y),
        classes,
    }
}

pub fn table1_class(m1: u8, m2: u8) -> f64 {
    if m1 < 2 && m2 > 1 {
        -1.0
    } else {
        1.0
    }
}
