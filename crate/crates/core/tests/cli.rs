use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "seed = 3\nsim_n = 200\nsim_m = 820\nnrules = 40\nn_pcs = 2\ncv_folds = 3\nreps = 1\n";

fn ler(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ler"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ler(dir, args);
    assert!(
        out.status.success(),
        "ler {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn simulated(dir: &Path) {
    std::fs::write(dir.join("run.cfg"), CONFIG).unwrap();
    ok(dir, &["--config", "run.cfg", "simulate", "--out-dir", "sim"]);
}

const FIT: [&str; 11] = [
    "--config",
    "run.cfg",
    "fit",
    "--markers",
    "sim/markers.csv",
    "--phenotypes",
    "sim/phenotypes.csv",
    "--map",
    "sim/map.csv",
    "--out",
    "model.json",
];

#[test]
fn fit_predict_importance_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir);
    for f in ["markers.csv", "map.csv", "phenotypes.csv", "causal.csv", "truth.csv"] {
        assert!(dir.join("sim").join(f).exists(), "missing {f}");
    }
    let mut fit = FIT.to_vec();
    fit.extend(["--rules", "rules.txt", "--fitted", "fitted.csv"]);
    ok(dir, &fit);
    ok(
        dir,
        &[
            "--config",
            "run.cfg",
            "predict",
            "--model",
            "model.json",
            "--markers",
            "sim/markers.csv",
            "--phenotypes",
            "sim/phenotypes.csv",
            "--out",
            "pred.csv",
        ],
    );
    ok(
        dir,
        &[
            "--config",
            "run.cfg",
            "importance",
            "--model",
            "model.json",
            "--out",
            "imp.csv",
            "--interactions",
            "pairs.csv",
        ],
    );
    assert_eq!(header(&dir.join("pred.csv")), "sample_id,genetic_value,predicted");
    assert_eq!(header(&dir.join("imp.csv")), "variable_id,type,score,region");
    assert_eq!(header(&dir.join("pairs.csv")), "var_a,var_b,score");

    // predictions on the training genotypes reproduce the fitted values
    let read = |f: &str| -> Vec<f64> {
        std::fs::read_to_string(dir.join(f))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect()
    };
    let (fitted, predicted) = (read("fitted.csv"), read("pred.csv"));
    assert_eq!(fitted.len(), 200);
    for (a, b) in fitted.iter().zip(&predicted) {
        assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
    }
    let imp = std::fs::read_to_string(dir.join("imp.csv")).unwrap();
    assert_eq!(imp.lines().filter(|l| l.contains(",marker,")).count(), 820);
    assert_eq!(imp.lines().filter(|l| l.contains(",pc,")).count(), 2);
}

#[test]
fn gwas_and_cv_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir);
    let data = [
        "--markers",
        "sim/markers.csv",
        "--phenotypes",
        "sim/phenotypes.csv",
        "--map",
        "sim/map.csv",
    ];
    let mut gwas = vec!["--config", "run.cfg", "gwas"];
    gwas.extend(data);
    gwas.extend(["--out", "gwas.csv"]);
    ok(dir, &gwas);
    let text = std::fs::read_to_string(dir.join("gwas.csv")).unwrap();
    assert_eq!(text.lines().count(), 821);
    let mut cv = vec!["--config", "run.cfg", "cv"];
    cv.extend(data);
    cv.extend(["--out", "cv.csv"]);
    ok(dir, &cv);
    let text = std::fs::read_to_string(dir.join("cv.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "fold,n_test,ler,gblup,flagged");
    assert!(text.lines().last().unwrap().starts_with("mean,200,"));
}

#[test]
fn manifest_records_inputs_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir);
    ok(dir, &FIT);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("model.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    let inputs = manifest["inputs"].as_array().unwrap();
    assert!(inputs
        .iter()
        .any(|f| f["path"].as_str().unwrap().ends_with("markers.csv")));
    assert!(inputs.iter().all(|f| f["sha256"].as_str().unwrap().len() == 64));

    ok(dir, &["replay", "model.json.manifest.json"]);

    // any change to a recorded input is refused
    let pheno = dir.join("sim/phenotypes.csv");
    let mut text = std::fs::read_to_string(&pheno).unwrap();
    text.push('\n');
    std::fs::write(&pheno, text).unwrap();
    let out = ler(dir, &["replay", "model.json.manifest.json"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("phenotypes.csv"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.cfg"), "nrule = 10\n").unwrap();
    let out = ler(dir, &["--config", "bad.cfg", "simulate", "--out-dir", "sim"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nrule") && err.contains("nrules"), "{err}");
}
