use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use ler_core::config::{parse_config, write_manifest, FileDigest, RunConfig, RunManifest, StageTiming};
use ler_core::genotype::{load_map, load_markers, load_phenotypes, MarkerMatrix, PhenotypeTable};
use ler_core::io;
use ler_core::mixed::{gwas_emma_with, GwasOptions};
use ler_core::pipeline::{cross_validate, fit_ler, importance, predict_ler, LerModel};
use ler_core::sim::{power_experiment, simulate_population};

#[derive(Parser, Debug)]
#[command(
    name = "ler",
    version,
    about = "Locally epistatic rule regression for genomic prediction and association"
)]
struct Cli {
    /// Overrides the `seed` key of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest; defaults to `<output>.manifest.json`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split markers into regions and write them as CSV.
    Partition {
        #[arg(long)]
        markers: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an LER model.
    Fit {
        #[arg(long)]
        markers: PathBuf,
        #[arg(long)]
        phenotypes: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        /// Model file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the retained rules as text.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Also write training-set fitted values as CSV.
        #[arg(long)]
        fitted: Option<PathBuf>,
    },
    /// Predict genetic values and trait values for new genotypes.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        markers: PathBuf,
        /// Supplies covariates when the model has any.
        #[arg(long)]
        phenotypes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score markers, PCs, regions and interactions of a fitted model.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pairwise interaction scores.
        #[arg(long)]
        interactions: Option<PathBuf>,
        /// Scores of variable sets of size `importance_order` (needs order ≥ 3).
        #[arg(long)]
        sets: Option<PathBuf>,
    },
    /// Mixed-model single-marker association tests.
    Gwas {
        #[arg(long)]
        markers: PathBuf,
        #[arg(long)]
        phenotypes: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validated accuracy of LER and G-BLUP.
    Cv {
        #[arg(long)]
        markers: PathBuf,
        #[arg(long)]
        phenotypes: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a benchmark population.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Causal-locus recovery of GWAS and LER over simulated replicates.
    Power {
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a recorded command and check that its outputs are unchanged.
    Replay { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Partition { .. } => "partition",
            Command::Fit { .. } => "fit",
            Command::Predict { .. } => "predict",
            Command::Importance { .. } => "importance",
            Command::Gwas { .. } => "gwas",
            Command::Cv { .. } => "cv",
            Command::Simulate { .. } => "simulate",
            Command::Power { .. } => "power",
            Command::Replay { .. } => "replay",
        }
    }

    fn primary_output(&self) -> PathBuf {
        match self {
            Command::Partition { out, .. }
            | Command::Fit { out, .. }
            | Command::Predict { out, .. }
            | Command::Importance { out, .. }
            | Command::Gwas { out, .. }
            | Command::Cv { out, .. }
            | Command::Power { out } => out.clone(),
            Command::Simulate { out_dir } => out_dir.join("simulation"),
            Command::Replay { manifest } => manifest.with_extension("replay"),
        }
    }
}

struct Run {
    manifest: RunManifest,
    stage_start: Instant,
}

impl Run {
    fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.manifest.inputs.push(FileDigest::of(role, path)?);
        Ok(())
    }

    fn output(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.manifest.outputs.push(FileDigest::of(role, path)?);
        Ok(())
    }

    fn stage(&mut self, name: &str) {
        let now = Instant::now();
        let seconds = (now - self.stage_start).as_secs_f64();
        self.manifest.timings.push(StageTiming {
            stage: name.to_string(),
            seconds,
        });
        self.stage_start = now;
    }
}

fn load_genotypes(run: &mut Run, markers: &Path, map: Option<&Path>) -> anyhow::Result<MarkerMatrix> {
    run.input("markers", markers)?;
    let mut m = load_markers(markers)?;
    if let Some(map) = map {
        run.input("map", map)?;
        m = m.with_map(&load_map(map)?)?;
    }
    Ok(m)
}

fn select_covariates(table: PhenotypeTable, wanted: Option<&[String]>) -> anyhow::Result<PhenotypeTable> {
    let Some(wanted) = wanted else {
        return Ok(table);
    };
    let mut cols = Vec::with_capacity(wanted.len());
    for name in wanted {
        let c = table
            .covariate_names
            .iter()
            .position(|n| n == name)
            .with_context(|| format!("covariate {name} is not a phenotype column"))?;
        cols.push(table.design.column(c + 1).iter().copied().collect::<Vec<f64>>());
    }
    Ok(PhenotypeTable::new(table.sample_ids, table.y, wanted.to_vec(), &cols)?)
}

fn load_pheno(run: &mut Run, path: &Path, cfg: &RunConfig) -> anyhow::Result<PhenotypeTable> {
    run.input("phenotypes", path)?;
    select_covariates(load_phenotypes(path)?, cfg.covariates.as_deref())
}

/// Genotyped samples with an observed trait, in genotype order.
fn training_set(m: &MarkerMatrix, pheno: &PhenotypeTable) -> anyhow::Result<(MarkerMatrix, PhenotypeTable)> {
    let lookup: HashMap<&str, usize> = pheno
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut rows = Vec::new();
    let mut prow = Vec::new();
    for (i, s) in m.sample_ids().iter().enumerate() {
        if let Some(&r) = lookup.get(s.as_str()) {
            if pheno.y[r].is_finite() {
                rows.push(i);
                prow.push(r);
            }
        }
    }
    if rows.is_empty() {
        bail!("no genotyped sample has an observed trait value");
    }
    let dropped = m.n_samples() - rows.len();
    if dropped > 0 {
        log::warn!("{dropped} genotyped samples lack a trait value and are left out of training");
    }
    Ok((m.select_samples(&rows), pheno.select(&prow)))
}

fn execute(cli: &Cli, argv: Vec<String>) -> anyhow::Result<RunManifest> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg = parse_config(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    let mut run = Run {
        manifest: RunManifest::new(cli.command.name(), argv, &cfg, cli.threads),
        stage_start: Instant::now(),
    };
    if let Some(path) = &cli.config {
        run.input("config", path)?;
    }
    if let Some(path) = &cfg.hyper.hotspots {
        run.input("hotspots", Path::new(path))?;
    }
    let hp = &cfg.hyper;

    match &cli.command {
        Command::Partition { markers, map, out } => {
            let m = load_genotypes(&mut run, markers, map.as_deref())?;
            let part = hp.partition(&m)?;
            io::write_regions_csv(out, &part, &m)?;
            run.output("regions", out)?;
            run.stage("partition");
        }
        Command::Fit {
            markers,
            phenotypes,
            map,
            out,
            rules,
            fitted,
        } => {
            let m = load_genotypes(&mut run, markers, map.as_deref())?;
            let pheno = load_pheno(&mut run, phenotypes, &cfg)?;
            let (m, pheno) = training_set(&m, &pheno)?;
            run.stage("load");
            let fit = fit_ler(&m, &pheno, hp)?;
            run.stage("fit");
            fit.model.save(out)?;
            run.output("model", out)?;
            if let Some(path) = rules {
                io::write_text(path, &io::rules_text(&fit.model))?;
                run.output("rules", path)?;
            }
            if let Some(path) = fitted {
                let g = fit.model.predict_genetic(&m)?;
                io::write_predictions_csv(path, m.sample_ids(), &g, &fit.fitted)?;
                run.output("fitted", path)?;
            }
            run.stage("write");
        }
        Command::Predict {
            model,
            markers,
            phenotypes,
            out,
        } => {
            run.input("model", model)?;
            let model = LerModel::load(model)?;
            let m = load_genotypes(&mut run, markers, None)?;
            let design = match phenotypes {
                Some(path) => {
                    let names = model.covariate_names.clone();
                    let pheno = load_pheno(
                        &mut run,
                        path,
                        &RunConfig {
                            covariates: Some(names),
                            ..cfg.clone()
                        },
                    )?;
                    pheno.align_to(m.sample_ids())?.design
                }
                None if model.covariate_names.is_empty() => DMatrix::from_element(m.n_samples(), 1, 1.0),
                None => bail!(
                    "model uses covariates {:?}; pass --phenotypes to supply them",
                    model.covariate_names
                ),
            };
            let g = model.predict_genetic(&m)?;
            let pred = predict_ler(&model, &m, &design)?;
            run.stage("predict");
            io::write_predictions_csv(out, m.sample_ids(), &g, &pred)?;
            run.output("predictions", out)?;
        }
        Command::Importance {
            model,
            out,
            interactions,
            sets,
        } => {
            run.input("model", model)?;
            let model = LerModel::load(model)?;
            let report = importance(&model, cfg.importance_order);
            run.stage("importance");
            io::write_importance_csv(out, &model, &report)?;
            run.output("importance", out)?;
            if let Some(path) = interactions {
                io::write_interaction_csv(path, &model, &report)?;
                run.output("interactions", path)?;
            }
            if let Some(path) = sets {
                io::write_higher_order_csv(path, &model, &report)?;
                run.output("sets", path)?;
            }
        }
        Command::Gwas {
            markers,
            phenotypes,
            map,
            out,
        } => {
            let m = load_genotypes(&mut run, markers, map.as_deref())?;
            let pheno = load_pheno(&mut run, phenotypes, &cfg)?;
            let (m, pheno) = training_set(&m, &pheno)?;
            pheno.validate_for_training()?;
            run.stage("load");
            let y = DVector::from_column_slice(&pheno.y);
            let opts = GwasOptions {
                exact: cfg.gwas_exact,
                n_pcs: cfg.gwas_pcs,
            };
            let res = gwas_emma_with(&y, &pheno.design, &m, &opts)?;
            run.stage("gwas");
            io::write_gwas_csv(out, &res, &m)?;
            run.output("gwas", out)?;
        }
        Command::Cv {
            markers,
            phenotypes,
            map,
            out,
        } => {
            let m = load_genotypes(&mut run, markers, map.as_deref())?;
            let pheno = load_pheno(&mut run, phenotypes, &cfg)?;
            let (m, pheno) = training_set(&m, &pheno)?;
            run.stage("load");
            let report = cross_validate(&m, &pheno, hp, hp.cv_folds, hp.seed)?;
            run.stage("cv");
            io::write_cv_csv(out, &report)?;
            run.output("cv", out)?;
            println!("LER {:.4}  G-BLUP {:.4}", report.ler_mean, report.gblup_mean);
        }
        Command::Simulate { out_dir } => {
            std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let pop = simulate_population(&cfg.sim)?;
            run.stage("simulate");
            let files = [
                ("markers", out_dir.join("markers.csv")),
                ("map", out_dir.join("map.csv")),
                ("phenotypes", out_dir.join("phenotypes.csv")),
                ("causal", out_dir.join("causal.csv")),
                ("truth", out_dir.join("truth.csv")),
            ];
            io::write_markers_csv(&files[0].1, &pop.genotypes)?;
            io::write_map_csv(&files[1].1, &pop.genotypes)?;
            io::write_phenotypes_csv(&files[2].1, &pop.phenotype_table())?;
            io::write_causal_csv(&files[3].1, &pop)?;
            io::write_truth_csv(&files[4].1, &pop)?;
            for (role, path) in &files {
                run.output(role, path)?;
            }
            run.stage("write");
        }
        Command::Power { out } => {
            let table = power_experiment(cfg.reps, &cfg.sim, hp, cfg.top)?;
            run.stage("power");
            io::write_power_csv(out, &table)?;
            run.output("power", out)?;
            print!("{}", table.to_csv());
        }
        Command::Replay { .. } => unreachable!("replay is dispatched before execute"),
    }
    Ok(run.manifest)
}

fn manifest_path(cli: &Cli) -> PathBuf {
    cli.manifest.clone().unwrap_or_else(|| {
        let mut p = cli.command.primary_output().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    })
}

fn replay(cli: &Cli, recorded_path: &Path) -> anyhow::Result<()> {
    let recorded = RunManifest::load(recorded_path)?;
    recorded.verify_inputs()?;
    let mut args = vec!["ler".to_string()];
    args.extend(recorded.argv.iter().cloned());
    let mut inner = Cli::try_parse_from(&args).context("recorded arguments no longer parse")?;
    if matches!(inner.command, Command::Replay { .. }) {
        bail!("a manifest of a replay cannot be replayed");
    }
    inner.manifest = Some(manifest_path(cli));
    let rerun = execute(&inner, recorded.argv.clone())?;
    write_manifest(&rerun, manifest_path(&inner))?;
    recorded.verify_outputs()?;
    println!(
        "replay of {} reproduced {} output file(s)",
        recorded.command,
        recorded.outputs.len()
    );
    Ok(())
}

fn run_cli(cli: &Cli, argv: Vec<String>) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if let Command::Replay { manifest } = &cli.command {
        return replay(cli, manifest);
    }
    let manifest = execute(cli, argv)?;
    write_manifest(&manifest, manifest_path(cli))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match run_cli(&cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
