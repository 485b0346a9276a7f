//! CSV and text writers for the CLI outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{LerError, Result};
use crate::genotype::{MarkerMatrix, PhenotypeTable, RegionPartition, MISSING};
use crate::mixed::GwasResult;
use crate::pipeline::model::variable_region;
use crate::pipeline::{CvReport, ImportanceReport, LerModel};
use crate::rules::{format_rule_line, Variable};
use crate::sim::{PowerTable, SimPopulation};

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> LerError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LerError::io(path, io),
        other => LerError::Validation(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LerError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| LerError::io(path, e))
}

/// marker_id, chromosome, position, beta, se, stat, pvalue, flag
pub fn write_gwas_csv(path: impl AsRef<Path>, result: &GwasResult, m: &MarkerMatrix) -> Result<()> {
    let rows = result.tests.iter().enumerate().map(|(j, t)| {
        let pos = &m.map()[j];
        vec![
            m.marker_ids()[j].clone(),
            pos.chromosome.clone(),
            pos.position.to_string(),
            t.beta.to_string(),
            t.se.to_string(),
            t.stat.to_string(),
            t.pvalue.to_string(),
            t.flag.to_string(),
        ]
    });
    write_rows(
        path.as_ref(),
        &[
            "marker_id",
            "chromosome",
            "position",
            "beta",
            "se",
            "stat",
            "pvalue",
            "flag",
        ],
        rows,
    )
}

fn variable_id(model: &LerModel, v: Variable) -> String {
    match v {
        Variable::Marker(j) => model.marker_ids[j].clone(),
        Variable::Pc(k) => format!("PC{}", k + 1),
    }
}

/// variable_id, type, score, region; markers in model order, then PCs.
pub fn write_importance_csv(path: impl AsRef<Path>, model: &LerModel, report: &ImportanceReport) -> Result<()> {
    let vars = (0..report.marker_scores.len())
        .map(Variable::Marker)
        .chain((0..report.pc_scores.len()).map(Variable::Pc));
    let rows = vars.map(|v| {
        let kind = match v {
            Variable::Marker(_) => "marker",
            Variable::Pc(_) => "pc",
        };
        vec![
            variable_id(model, v),
            kind.to_string(),
            report.variable_score(v).to_string(),
            variable_region(model, v).map_or_else(|| "NA".to_string(), |r| (r + 1).to_string()),
        ]
    });
    write_rows(path.as_ref(), &["variable_id", "type", "score", "region"], rows)
}

/// var_a, var_b, score for every pair with positive score.
pub fn write_interaction_csv(path: impl AsRef<Path>, model: &LerModel, report: &ImportanceReport) -> Result<()> {
    let rows = report
        .pairwise
        .iter()
        .filter(|(_, &s)| s > 0.0)
        .map(|(&(a, b), s)| vec![variable_id(model, a), variable_id(model, b), s.to_string()]);
    write_rows(path.as_ref(), &["var_a", "var_b", "score"], rows)
}

/// Sets of `order` variables: one column listing them joined by `;`.
pub fn write_higher_order_csv(path: impl AsRef<Path>, model: &LerModel, report: &ImportanceReport) -> Result<()> {
    let rows = report.higher_order.iter().map(|(set, s)| {
        let ids: Vec<String> = set.iter().map(|&v| variable_id(model, v)).collect();
        vec![ids.join(";"), s.to_string()]
    });
    write_rows(path.as_ref(), &["variables", "score"], rows)
}

/// One rule per line in the `region:tree:node | conditions | mean | sd` form.
pub fn rules_text(model: &LerModel) -> String {
    let mut s = String::new();
    for r in &model.rules {
        s.push_str(&format_rule_line(&r.rule, r.mean, r.sd));
        s.push('\n');
    }
    s
}

pub fn write_power_csv(path: impl AsRef<Path>, table: &PowerTable) -> Result<()> {
    write_text(path, &table.to_csv())
}

/// region, chromosome, first_marker, last_marker, n_markers
pub fn write_regions_csv(path: impl AsRef<Path>, partition: &RegionPartition, m: &MarkerMatrix) -> Result<()> {
    let rows = partition.regions.iter().enumerate().map(|(k, r)| {
        let (first, last) = if r.is_empty() {
            (String::new(), String::new())
        } else {
            (m.marker_ids()[r.start].clone(), m.marker_ids()[r.end - 1].clone())
        };
        vec![
            (k + 1).to_string(),
            r.chromosome.clone(),
            first,
            last,
            r.len().to_string(),
        ]
    });
    write_rows(
        path.as_ref(),
        &["region", "chromosome", "first_marker", "last_marker", "n_markers"],
        rows,
    )
}

pub fn write_predictions_csv(
    path: impl AsRef<Path>,
    sample_ids: &[String],
    genetic: &[f64],
    predicted: &[f64],
) -> Result<()> {
    let rows =
        (0..sample_ids.len()).map(|i| vec![sample_ids[i].clone(), genetic[i].to_string(), predicted[i].to_string()]);
    write_rows(path.as_ref(), &["sample_id", "genetic_value", "predicted"], rows)
}

pub fn write_cv_csv(path: impl AsRef<Path>, report: &CvReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .folds
        .iter()
        .map(|f| {
            vec![
                (f.fold + 1).to_string(),
                f.n_test.to_string(),
                opt(f.ler),
                opt(f.gblup),
                f.flagged.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "mean".into(),
        report.folds.iter().map(|f| f.n_test).sum::<usize>().to_string(),
        report.ler_mean.to_string(),
        report.gblup_mean.to_string(),
        String::new(),
    ]);
    write_rows(path.as_ref(), &["fold", "n_test", "ler", "gblup", "flagged"], rows)
}

/// Marker CSV in the loader's layout: sample column then one column per
/// marker, missing calls as `NA`.
pub fn write_markers_csv(path: impl AsRef<Path>, m: &MarkerMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| LerError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| LerError::io(path, e);
    write!(w, "sample_id").map_err(io)?;
    for id in m.marker_ids() {
        write!(w, ",{id}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for i in 0..m.n_samples() {
        write!(w, "{}", m.sample_ids()[i]).map_err(io)?;
        for j in 0..m.n_markers() {
            match m.get(i, j) {
                MISSING => write!(w, ",NA").map_err(io)?,
                v => write!(w, ",{v}").map_err(io)?,
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_map_csv(path: impl AsRef<Path>, m: &MarkerMatrix) -> Result<()> {
    let rows = m
        .marker_ids()
        .iter()
        .zip(m.map())
        .map(|(id, p)| vec![id.clone(), p.chromosome.clone(), p.position.to_string()]);
    write_rows(path.as_ref(), &["marker_id", "chromosome", "position"], rows)
}

pub fn write_phenotypes_csv(path: impl AsRef<Path>, table: &PhenotypeTable) -> Result<()> {
    let mut header = vec!["sample_id", "trait"];
    header.extend(table.covariate_names.iter().map(String::as_str));
    let rows = (0..table.n()).map(|i| {
        let mut row = vec![table.sample_ids[i].clone(), table.y[i].to_string()];
        for c in 1..table.design.ncols() {
            row.push(table.design[(i, c)].to_string());
        }
        row
    });
    write_rows(path.as_ref(), &header, rows)
}

/// sample_id, genetic_value, g1..g5 for a simulated population.
pub fn write_truth_csv(path: impl AsRef<Path>, pop: &SimPopulation) -> Result<()> {
    let rows = (0..pop.genetic_values.len()).map(|i| {
        let mut row = vec![pop.genotypes.sample_ids()[i].clone(), pop.genetic_values[i].to_string()];
        row.extend(pop.effects.iter().map(|e| e[i].to_string()));
        row
    });
    write_rows(
        path.as_ref(),
        &["sample_id", "genetic_value", "g1", "g2", "g3", "g4", "g5"],
        rows,
    )
}

/// marker_id, effect: which of g1..g5 each causal SNP feeds.
pub fn write_causal_csv(path: impl AsRef<Path>, pop: &SimPopulation) -> Result<()> {
    let rows = pop
        .causal
        .iter()
        .enumerate()
        .map(|(k, &j)| vec![pop.genotypes.marker_ids()[j].clone(), format!("g{}", k / 3 + 1)]);
    write_rows(path.as_ref(), &["marker_id", "effect"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::{load_markers, load_phenotypes};

    #[test]
    fn markers_and_phenotypes_reload() {
        let dir = tempfile::tempdir().unwrap();
        let m = MarkerMatrix::from_rows(&[vec![0, 1, 2], vec![MISSING, 2, 0]]).unwrap();
        let p = dir.path().join("m.csv");
        write_markers_csv(&p, &m).unwrap();
        let back = load_markers(&p).unwrap();
        assert_eq!(back.marker_ids(), m.marker_ids());
        assert_eq!(back.get(1, 0), MISSING);
        assert_eq!(back.get(0, 2), 2);

        let t = PhenotypeTable::new(
            m.sample_ids().to_vec(),
            vec![1.5, -0.25],
            vec!["male".into()],
            &[vec![1.0, 0.0]],
        )
        .unwrap();
        let q = dir.path().join("p.csv");
        write_phenotypes_csv(&q, &t).unwrap();
        assert_eq!(load_phenotypes(&q).unwrap(), t);
    }

    #[test]
    fn gwas_csv_has_one_row_per_marker() {
        use nalgebra::{DMatrix, DVector};
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Vec<u8>> = (0..30).map(|i| vec![(i % 3) as u8, ((i / 3) % 3) as u8, 1]).collect();
        let m = MarkerMatrix::from_rows(&rows).unwrap();
        let y = DVector::from_fn(30, |i, _| (i % 3) as f64 + 0.1 * ((i * 7) % 5) as f64);
        let res = crate::mixed::gwas_emma(&y, &DMatrix::from_element(30, 1, 1.0), &m).unwrap();
        let p = dir.path().join("g.csv");
        write_gwas_csv(&p, &res, &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "marker_id,chromosome,position,beta,se,stat,pvalue,flag");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",monomorphic"));
    }
}
