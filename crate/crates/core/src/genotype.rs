//! Genotype and phenotype containers, CSV ingestion, allele-frequency
//! centering, the genomic relationship matrix, principal components and
//! region partitions.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LerError, Result};
use crate::linalg::{gram, sym_eigen};

/// Sentinel for a missing genotype call.
pub const MISSING: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPosition {
    pub chromosome: String,
    pub position: u64,
}

/// Chromosome labels compare numerically when both parse as integers.
pub fn chromosome_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn position_cmp(a: &MarkerPosition, b: &MarkerPosition) -> Ordering {
    chromosome_cmp(&a.chromosome, &b.chromosome).then(a.position.cmp(&b.position))
}

/// n x m genotype codes (0/1/2 or [`MISSING`]), stored marker-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerMatrix {
    values: Vec<u8>,
    sample_ids: Vec<String>,
    marker_ids: Vec<String>,
    map: Vec<MarkerPosition>,
}

impl MarkerMatrix {
    /// Build from marker-major codes (`values[j * n + i]` is sample `i`,
    /// marker `j`).
    pub fn new(
        sample_ids: Vec<String>,
        marker_ids: Vec<String>,
        map: Vec<MarkerPosition>,
        values: Vec<u8>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        let m = marker_ids.len();
        if values.len() != n * m {
            return Err(LerError::Validation(format!(
                "expected {} genotype codes for {n} samples x {m} markers, got {}",
                n * m,
                values.len()
            )));
        }
        if map.len() != m {
            return Err(LerError::Validation(format!(
                "marker map has {} entries for {m} markers",
                map.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v > 2 && v != MISSING) {
            return Err(LerError::Validation(format!(
                "invalid genotype code {} for sample {}, marker {}",
                values[pos],
                pos % n.max(1),
                pos / n.max(1)
            )));
        }
        check_unique(&marker_ids, "marker")?;
        check_unique(&sample_ids, "sample")?;
        for j in 1..m {
            if position_cmp(&map[j - 1], &map[j]) == Ordering::Greater {
                return Err(LerError::Validation(format!(
                    "markers are not sorted by (chromosome, position) at {}",
                    marker_ids[j]
                )));
            }
        }
        Ok(Self {
            values,
            sample_ids,
            marker_ids,
            map,
        })
    }

    /// Build from sample-major rows, placing every marker on chromosome "1"
    /// at positions 1..=m.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(LerError::Validation("ragged genotype rows".into()));
        }
        let mut values = vec![0u8; n * m];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[j * n + i] = v;
            }
        }
        Self::new(
            (1..=n).map(|i| format!("s{i}")).collect(),
            (1..=m).map(|j| format!("m{j}")).collect(),
            default_map(m),
            values,
        )
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_markers(&self) -> usize {
        self.marker_ids.len()
    }

    #[inline]
    pub fn get(&self, sample: usize, marker: usize) -> u8 {
        self.values[marker * self.n_samples() + sample]
    }

    #[inline]
    pub fn column(&self, marker: usize) -> &[u8] {
        let n = self.n_samples();
        &self.values[marker * n..(marker + 1) * n]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn marker_ids(&self) -> &[String] {
        &self.marker_ids
    }

    pub fn map(&self) -> &[MarkerPosition] {
        &self.map
    }

    pub fn marker_index(&self) -> HashMap<&str, usize> {
        self.marker_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect()
    }

    /// Rows `rows` (in that order) as a new matrix.
    pub fn select_samples(&self, rows: &[usize]) -> MarkerMatrix {
        let n = self.n_samples();
        let k = rows.len();
        let mut values = Vec::with_capacity(k * self.n_markers());
        for j in 0..self.n_markers() {
            let col = &self.values[j * n..(j + 1) * n];
            values.extend(rows.iter().map(|&i| col[i]));
        }
        MarkerMatrix {
            values,
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            marker_ids: self.marker_ids.clone(),
            map: self.map.clone(),
        }
    }

    /// Reorder markers to follow `map` sorted by (chromosome, position).
    pub fn with_map(self, entries: &[(String, MarkerPosition)]) -> Result<Self> {
        let lookup: HashMap<&str, &MarkerPosition> = entries.iter().map(|(id, p)| (id.as_str(), p)).collect();
        let mut order: Vec<(usize, MarkerPosition)> = Vec::with_capacity(self.n_markers());
        for (j, id) in self.marker_ids.iter().enumerate() {
            let p = lookup
                .get(id.as_str())
                .ok_or_else(|| LerError::Validation(format!("marker {id} missing from map")))?;
            order.push((j, (*p).clone()));
        }
        order.sort_by(|a, b| position_cmp(&a.1, &b.1).then(a.0.cmp(&b.0)));
        let n = self.n_samples();
        let mut values = Vec::with_capacity(self.values.len());
        for (j, _) in &order {
            values.extend_from_slice(&self.values[j * n..(j + 1) * n]);
        }
        MarkerMatrix::new(
            self.sample_ids,
            order.iter().map(|(j, _)| self.marker_ids[*j].clone()).collect(),
            order.into_iter().map(|(_, p)| p).collect(),
            values,
        )
    }
}

fn default_map(m: usize) -> Vec<MarkerPosition> {
    (0..m)
        .map(|j| MarkerPosition {
            chromosome: "1".into(),
            position: j as u64 + 1,
        })
        .collect()
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(LerError::Validation(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> LerError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LerError::io(path, io),
        other => LerError::Parse {
            path: path.display().to_string(),
            row: 0,
            col: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Parse a marker CSV: header of marker IDs, first column sample ID, cells
/// `0`/`1`/`2` or `NA`/empty for missing. Markers land on chromosome "1" in
/// file order; use [`MarkerMatrix::with_map`] to attach a real map.
pub fn load_markers(path: impl AsRef<Path>) -> Result<MarkerMatrix> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let parse_err = |row: usize, col: usize, msg: String| LerError::Parse {
        path: path.display().to_string(),
        row,
        col,
        msg,
    };
    let header = records.first().ok_or_else(|| parse_err(0, 0, "empty file".into()))?;
    let marker_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = marker_ids.len();
    let n = records.len() - 1;
    let mut sample_ids = Vec::with_capacity(n);
    let mut values = vec![0u8; n * m];
    for (i, rec) in records.iter().skip(1).enumerate() {
        let row = i + 1;
        if rec.len() != m + 1 {
            return Err(parse_err(
                row,
                0,
                format!("expected {} fields, found {}", m + 1, rec.len()),
            ));
        }
        sample_ids.push(rec[0].to_string());
        for j in 0..m {
            let cell = &rec[j + 1];
            let code = match cell {
                "" | "NA" | "na" | "NaN" => MISSING,
                "0" => 0,
                "1" => 1,
                "2" => 2,
                other => {
                    return Err(parse_err(
                        row,
                        j + 1,
                        format!("invalid genotype code {other:?} (expected 0, 1, 2 or NA)"),
                    ))
                }
            };
            values[j * n + i] = code;
        }
    }
    MarkerMatrix::new(sample_ids, marker_ids, default_map(m), values)
}

/// Parse a map CSV with columns `marker_id, chromosome, position`. A first
/// row whose position does not parse is taken as a header.
pub fn load_map(path: impl AsRef<Path>) -> Result<Vec<(String, MarkerPosition)>> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if rec.len() < 3 {
            return Err(LerError::Parse {
                path: path.display().to_string(),
                row: i,
                col: 0,
                msg: "expected marker_id, chromosome, position".into(),
            });
        }
        let position = match rec[2].parse::<u64>() {
            Ok(p) => p,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(LerError::Parse {
                    path: path.display().to_string(),
                    row: i,
                    col: 2,
                    msg: format!("invalid position {:?}", &rec[2]),
                })
            }
        };
        out.push((
            rec[0].to_string(),
            MarkerPosition {
                chromosome: rec[1].to_string(),
                position,
            },
        ));
    }
    Ok(out)
}

/// Parse a hotspot CSV with columns `chromosome, position`.
pub fn load_hotspots(path: impl AsRef<Path>) -> Result<Vec<MarkerPosition>> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.len() < 2 {
            return Err(LerError::Parse {
                path: path.display().to_string(),
                row: i,
                col: 0,
                msg: "expected chromosome, position".into(),
            });
        }
        match rec[1].parse::<u64>() {
            Ok(position) => out.push(MarkerPosition {
                chromosome: rec[0].to_string(),
                position,
            }),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(LerError::Parse {
                    path: path.display().to_string(),
                    row: i,
                    col: 1,
                    msg: format!("invalid position {:?}", &rec[1]),
                })
            }
        }
    }
    Ok(out)
}

/// Trait values plus a fixed-effect design whose first column is the
/// intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeTable {
    pub sample_ids: Vec<String>,
    pub y: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// n x p, column 0 is all ones.
    pub design: DMatrix<f64>,
}

impl PhenotypeTable {
    /// `covariates` holds one column per named covariate (no intercept).
    pub fn new(
        sample_ids: Vec<String>,
        y: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: &[Vec<f64>],
    ) -> Result<Self> {
        let n = y.len();
        if sample_ids.len() != n {
            return Err(LerError::Validation("sample ids and y differ in length".into()));
        }
        if covariates.len() != covariate_names.len() || covariates.iter().any(|c| c.len() != n) {
            return Err(LerError::Validation("covariate columns are ragged".into()));
        }
        check_unique(&sample_ids, "sample")?;
        let p = covariates.len() + 1;
        let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { covariates[j - 1][i] });
        Ok(Self {
            sample_ids,
            y,
            covariate_names,
            design,
        })
    }

    /// Intercept-only table.
    pub fn intercept_only(y: Vec<f64>) -> Self {
        let ids = (1..=y.len()).map(|i| format!("s{i}")).collect();
        Self::new(ids, y, Vec::new(), &[]).expect("intercept-only table is always valid")
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn select(&self, rows: &[usize]) -> PhenotypeTable {
        PhenotypeTable {
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            covariate_names: self.covariate_names.clone(),
            design: self.design.select_rows(rows),
        }
    }

    /// Reorder to match `sample_ids`; every requested sample must be present.
    pub fn align_to(&self, sample_ids: &[String]) -> Result<PhenotypeTable> {
        let lookup: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let rows = sample_ids
            .iter()
            .map(|s| {
                lookup
                    .get(s.as_str())
                    .copied()
                    .ok_or_else(|| LerError::Mapping(format!("sample {s} has no phenotype row")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&rows))
    }

    /// Training-time checks: finite y and a full-column-rank design.
    pub fn validate_for_training(&self) -> Result<()> {
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(LerError::Validation(format!(
                "missing trait value for training sample {}",
                self.sample_ids[i]
            )));
        }
        let p = self.design.ncols();
        if self.n() <= p {
            return Err(LerError::Validation(format!(
                "{} samples cannot support {p} fixed effects",
                self.n()
            )));
        }
        let sv = self.design.clone().svd(false, false).singular_values;
        let max = sv.max();
        if sv.iter().any(|&s| s <= 1e-10 * max.max(1.0)) {
            return Err(LerError::Validation(
                "covariate design matrix is not of full column rank".into(),
            ));
        }
        Ok(())
    }
}

/// Parse a phenotype CSV: `sample_id, trait[, covariates...]` with a header.
/// `NA` trait values load as NaN (usable for prediction-only rows).
pub fn load_phenotypes(path: impl AsRef<Path>) -> Result<PhenotypeTable> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let header = records.first().ok_or_else(|| LerError::Parse {
        path: path.display().to_string(),
        row: 0,
        col: 0,
        msg: "empty file".into(),
    })?;
    if header.len() < 2 {
        return Err(LerError::Parse {
            path: path.display().to_string(),
            row: 0,
            col: 0,
            msg: "expected sample_id and trait columns".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut covs = vec![Vec::new(); names.len()];
    for (i, rec) in records.iter().enumerate().skip(1) {
        if rec.len() != header.len() {
            return Err(LerError::Parse {
                path: path.display().to_string(),
                row: i,
                col: 0,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v = match cell {
                "" | "NA" | "na" => f64::NAN,
                s => s.parse::<f64>().map_err(|_| LerError::Parse {
                    path: path.display().to_string(),
                    row: i,
                    col: c,
                    msg: format!("invalid number {s:?}"),
                })?,
            };
            if c == 1 {
                y.push(v);
            } else {
                if v.is_nan() {
                    return Err(LerError::Parse {
                        path: path.display().to_string(),
                        row: i,
                        col: c,
                        msg: "missing covariate value".into(),
                    });
                }
                covs[c - 2].push(v);
            }
        }
    }
    PhenotypeTable::new(ids, y, names, &covs)
}

/// Allele-frequency centered markers with mean imputation.
#[derive(Debug, Clone)]
pub struct CenteredMarkers {
    /// n x m, entry `x - 2p` or 0 where the call is missing.
    pub matrix: DMatrix<f64>,
    pub freqs: Vec<f64>,
}

impl CenteredMarkers {
    /// `k = 2 * sum_j 2 p_j (1 - p_j)`.
    pub fn heterozygosity_scale(&self) -> f64 {
        2.0 * self.freqs.iter().map(|p| 2.0 * p * (1.0 - p)).sum::<f64>()
    }
}

pub fn allele_frequencies(m: &MarkerMatrix) -> Result<Vec<f64>> {
    (0..m.n_markers())
        .map(|j| {
            let mut sum = 0u64;
            let mut count = 0u64;
            for &v in m.column(j) {
                if v != MISSING {
                    sum += v as u64;
                    count += 1;
                }
            }
            if count == 0 {
                Err(LerError::Validation(format!(
                    "marker {} has no observed genotypes",
                    m.marker_ids()[j]
                )))
            } else {
                Ok(sum as f64 / (2.0 * count as f64))
            }
        })
        .collect()
}

pub fn center_markers(m: &MarkerMatrix) -> Result<CenteredMarkers> {
    let freqs = allele_frequencies(m)?;
    let matrix = center_with(m, &freqs);
    Ok(CenteredMarkers { matrix, freqs })
}

/// Center with externally supplied frequencies (e.g. from a training set).
pub fn center_with(m: &MarkerMatrix, freqs: &[f64]) -> DMatrix<f64> {
    let n = m.n_samples();
    let mut out = DMatrix::zeros(n, m.n_markers());
    for (j, &p) in freqs.iter().enumerate() {
        let two_p = 2.0 * p;
        let col = m.column(j);
        let mut dst = out.column_mut(j);
        for i in 0..n {
            let v = col[i];
            dst[i] = if v == MISSING { 0.0 } else { v as f64 - two_p };
        }
    }
    out
}

/// `G = C C' / k` with `C` the centered marker matrix.
pub fn compute_grm(m: &MarkerMatrix) -> Result<DMatrix<f64>> {
    let centered = center_markers(m)?;
    let k = centered.heterozygosity_scale();
    if k <= 0.0 || centered.matrix.iter().all(|&v| v == 0.0) {
        return Err(LerError::DegenerateKinship);
    }
    let c = &centered.matrix;
    Ok(c * c.transpose() / k)
}

/// Kinship factor `Z = C / sqrt(k)` so that `G = Z Z'`.
pub fn kinship_factor(centered: &CenteredMarkers) -> Result<DMatrix<f64>> {
    let k = centered.heterozygosity_scale();
    if k <= 0.0 || centered.matrix.iter().all(|&v| v == 0.0) {
        return Err(LerError::DegenerateKinship);
    }
    Ok(&centered.matrix / k.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponents {
    /// n x c
    pub scores: DMatrix<f64>,
    /// m x c
    pub loadings: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub freqs: Vec<f64>,
}

impl PrincipalComponents {
    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    /// Scores for new genotypes, centered with the training frequencies.
    pub fn project(&self, m: &MarkerMatrix) -> DMatrix<f64> {
        if self.n_components() == 0 {
            return DMatrix::zeros(m.n_samples(), 0);
        }
        center_with(m, &self.freqs) * &self.loadings
    }
}

/// Top-`count` principal components of the centered marker matrix. Each
/// component is oriented so that its largest-magnitude loading is positive.
pub fn compute_pcs(m: &MarkerMatrix, count: usize) -> Result<PrincipalComponents> {
    let n = m.n_samples();
    let p = m.n_markers();
    if count > n.min(p) {
        return Err(LerError::Argument(format!(
            "cannot compute {count} principal components from a {n} x {p} matrix"
        )));
    }
    let centered = center_markers(m)?;
    let c = &centered.matrix;
    let denom = (n.max(2) - 1) as f64;
    let total_variance = c.iter().map(|v| v * v).sum::<f64>() / denom;
    let mut loadings = DMatrix::zeros(p, count);
    let mut explained = Vec::with_capacity(count);
    if count > 0 {
        if p <= n {
            let (vals, vecs) = sym_eigen(&gram(c))?;
            for k in 0..count {
                loadings.set_column(k, &vecs.column(k));
                explained.push(vals[k].max(0.0) / denom);
            }
        } else {
            let (vals, vecs) = sym_eigen(&(c * c.transpose()))?;
            for k in 0..count {
                let s = vals[k].max(0.0).sqrt();
                if s > 0.0 {
                    let l = c.tr_mul(&vecs.column(k)) / s;
                    loadings.set_column(k, &l);
                }
                explained.push(vals[k].max(0.0) / denom);
            }
        }
        for k in 0..count {
            let mut best = 0usize;
            for r in 0..p {
                if loadings[(r, k)].abs() > loadings[(best, k)].abs() {
                    best = r;
                }
            }
            if loadings[(best, k)] < 0.0 {
                loadings.column_mut(k).neg_mut();
            }
        }
    }
    let scores = c * &loadings;
    Ok(PrincipalComponents {
        scores,
        loadings,
        explained_variance: explained,
        total_variance,
        freqs: centered.freqs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionProvenance {
    EqualCount,
    Hotspot,
}

/// Half-open marker index range `[start, end)` on one chromosome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub chromosome: String,
    pub start: usize,
    pub end: usize,
}

impl Region {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub regions: Vec<Region>,
    pub provenance: PartitionProvenance,
}

impl RegionPartition {
    /// Index of the region holding `marker`.
    pub fn region_of(&self, marker: usize) -> Option<usize> {
        let idx = self.regions.partition_point(|r| r.end <= marker);
        (idx < self.regions.len() && self.regions[idx].start <= marker).then_some(idx)
    }
}

/// Contiguous runs of markers sharing a chromosome.
fn chromosome_runs(m: &MarkerMatrix) -> Vec<(String, usize, usize)> {
    let mut runs: Vec<(String, usize, usize)> = Vec::new();
    for (j, pos) in m.map().iter().enumerate() {
        match runs.last_mut() {
            Some(last) if last.0 == pos.chromosome => last.2 = j + 1,
            _ => runs.push((pos.chromosome.clone(), j, j + 1)),
        }
    }
    runs
}

/// Split each chromosome into `nsplits` contiguous blocks whose sizes differ
/// by at most one; the larger blocks come first.
pub fn partition_equal(m: &MarkerMatrix, nsplits: usize) -> Result<RegionPartition> {
    if nsplits == 0 {
        return Err(LerError::Argument("nsplits must be at least 1".into()));
    }
    let mut regions = Vec::new();
    for (chrom, start, end) in chromosome_runs(m) {
        let count = end - start;
        if nsplits > count {
            return Err(LerError::Argument(format!(
                "chromosome {chrom} has {count} markers, fewer than nsplits = {nsplits}"
            )));
        }
        let base = count / nsplits;
        let rem = count % nsplits;
        let mut s = start;
        for b in 0..nsplits {
            let len = base + usize::from(b < rem);
            regions.push(Region {
                chromosome: chrom.clone(),
                start: s,
                end: s + len,
            });
            s += len;
        }
    }
    Ok(RegionPartition {
        regions,
        provenance: PartitionProvenance::EqualCount,
    })
}

/// Cut chromosomes at boundary positions: a boundary at position `b` starts a
/// new region at the first marker with position `>= b`. Empty regions are
/// dropped.
pub fn partition_hotspots(m: &MarkerMatrix, boundaries: &[MarkerPosition]) -> Result<RegionPartition> {
    let runs = chromosome_runs(m);
    let known: HashSet<&str> = runs.iter().map(|r| r.0.as_str()).collect();
    let mut by_chrom: HashMap<&str, Vec<u64>> = HashMap::new();
    for b in boundaries {
        if !known.contains(b.chromosome.as_str()) {
            return Err(LerError::Validation(format!(
                "hotspot boundary on unknown chromosome {}",
                b.chromosome
            )));
        }
        let list = by_chrom.entry(b.chromosome.as_str()).or_default();
        if list.last().is_some_and(|&prev| prev > b.position) {
            return Err(LerError::Validation(format!(
                "hotspot boundaries on chromosome {} are not sorted",
                b.chromosome
            )));
        }
        list.push(b.position);
    }
    let map = m.map();
    let mut regions = Vec::new();
    for (chrom, start, end) in runs {
        let mut cuts = vec![start];
        for &b in by_chrom.get(chrom.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            let at = start + map[start..end].partition_point(|p| p.position < b);
            if at == end {
                warn!("hotspot {chrom}:{b} lies beyond the last marker; ignored");
            }
            cuts.push(at);
        }
        cuts.push(end);
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                regions.push(Region {
                    chromosome: chrom.clone(),
                    start: w[0],
                    end: w[1],
                });
            }
        }
    }
    Ok(RegionPartition {
        regions,
        provenance: PartitionProvenance::Hotspot,
    })
}
