use std::path::{Path, PathBuf};
use std::process::Command;

use survfuse::analysis::ModelKind;
use survfuse::cli::render::parse_svg_steps;

const CONFIG: &str = r#"
seed = 21
n_bootstrap = 100

[paths]
clinical = "data/clinical.csv"
features = "data/features.csv"
external_clinical = "data/ext_clinical.csv"
external_features = "data/ext_features.csv"
output = "out"

[hyperparameters.deep_clinical]
epochs = 80
learning_rate = 0.01
hidden_dims = [8]

[hyperparameters.deep_imaging]
epochs = 80
learning_rate = 0.01
hidden_dims = [8]

[hyperparameters.rsf]
n_trees = 15

[generator]
n = 300
baseline_rate = 0.002
censor_rate = 0.001
seed = 1

[generator.modality_plan]
img_dim = 8
missing_fraction = 0.05

[external_generator]
n = 120
baseline_rate = 0.002
censor_rate = 0.001
seed = 2

[external_generator.modality_plan]
img_dim = 8
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_survfuse"))
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.toml");
    std::fs::write(&path, config).unwrap();
    (dir, path)
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn generate_writes_canonical_files_deterministically() {
    let (dir, cfg) = setup(&CONFIG.replace("n = 300", "n = 100"));
    run_ok(bin().args(["generate", "--config"]).arg(&cfg));
    let clinical = std::fs::read(dir.path().join("data/clinical.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&clinical).lines().count(), 101);
    run_ok(bin().args(["generate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("again")));
    assert_eq!(std::fs::read(dir.path().join("again/clinical.csv")).unwrap(), clinical);
    assert_eq!(
        std::fs::read(dir.path().join("again/features.csv")).unwrap(),
        std::fs::read(dir.path().join("data/features.csv")).unwrap()
    );
}

#[test]
fn invalid_ratios_exit_with_validation_code() {
    let (_dir, cfg) = setup(&format!("{CONFIG}\n[split]\ntrain = 0.8\nval = 0.1\ntest = 0.2\n"));
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`split`"));
}

#[test]
fn missing_features_is_an_ingestion_error() {
    let (_dir, cfg) = setup(CONFIG);
    run_ok(bin().args(["generate", "--config"]).arg(&cfg));
    let broken = std::fs::read_to_string(&cfg).unwrap().replace("data/features.csv", "data/absent.csv");
    std::fs::write(&cfg, broken).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingestion"));

    // clinical-only models do not need the file
    run_ok(bin().args(["run", "--models", "pesi,deep_clinical", "--config"]).arg(&cfg));
}

#[test]
fn run_score_and_report_end_to_end() {
    let (dir, cfg) = setup(CONFIG);
    run_ok(bin().args(["generate", "--config"]).arg(&cfg));
    run_ok(bin().args(["run", "--truncate-30d", "--config"]).arg(&cfg));
    let out = dir.path().join("out");

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["overall", "short_term", "nri", "km", "rv_analysis", "comparisons", "config_fingerprint"] {
        assert!(keys.contains(&k), "missing {k}");
    }
    assert_eq!(report["overall"].as_array().unwrap().len(), 4);
    assert_eq!(report["short_term"]["requested"], true);
    for split in report["overall"].as_array().unwrap() {
        assert_eq!(split["models"].as_array().unwrap().len(), 6);
    }
    assert_eq!(report["config_fingerprint"].as_str().unwrap().len(), 64);

    for kind in ModelKind::ALL {
        assert!(out.join("models").join(format!("{kind}.json")).exists());
        let svg = std::fs::read_to_string(out.join(format!("km_{kind}.svg"))).unwrap();
        let rows = csv_rows(&out.join(format!("km_{kind}.csv")));
        let from_csv: Vec<(String, String, String)> =
            rows[1..].iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
        let mut from_svg = Vec::new();
        for (group, verts) in parse_svg_steps(&svg) {
            for (t, s) in verts.iter().skip(2).step_by(2) {
                from_svg.push((group.clone(), t.to_string(), s.to_string()));
            }
        }
        assert_eq!(from_svg, from_csv, "{kind}");
    }

    // saved models reproduce the in-pipeline scores
    let scores = csv_rows(&out.join("scores.csv"));
    let header = &scores[0];
    for kind in ModelKind::ALL {
        let col = header.iter().position(|h| h == kind.as_str()).unwrap();
        let scored = dir.path().join(format!("{kind}.csv"));
        run_ok(
            bin()
                .arg("score")
                .arg("--model")
                .arg(out.join("models").join(format!("{kind}.json")))
                .arg("--input")
                .arg(dir.path().join("data/clinical.csv"))
                .arg("--features")
                .arg(dir.path().join("data/features.csv"))
                .arg("--out")
                .arg(&scored),
        );
        let rows = csv_rows(&scored);
        assert_eq!(rows[0], ["patient_id", "risk_score", "pesi_score", "pesi_class"]);
        let by_id: std::collections::HashMap<&str, f64> = rows[1..].iter().map(|r| (r[0].as_str(), r[1].parse().unwrap())).collect();
        let mut checked = 0;
        for r in scores[1..].iter().filter(|r| r[0] != "external") {
            let want: f64 = r[col].parse().unwrap();
            assert!((by_id[r[1].as_str()] - want).abs() <= 1e-10, "{kind} {}", r[1]);
            checked += 1;
        }
        assert_eq!(checked, 300);
    }

    std::fs::remove_file(out.join("report.md")).unwrap();
    run_ok(bin().args(["report", "--input"]).arg(out.join("report.json")));
    assert!(std::fs::read_to_string(out.join("report.md")).unwrap().contains("## Comparison with PESI"));
}

#[test]
fn score_validates_its_input() {
    let (dir, cfg) = setup(CONFIG);
    run_ok(bin().args(["generate", "--config"]).arg(&cfg));
    run_ok(bin().args(["run", "--models", "pesi,deep_clinical", "--config"]).arg(&cfg));
    let model = dir.path().join("out/models/deep_clinical.json");
    let clinical = std::fs::read_to_string(dir.path().join("data/clinical.csv")).unwrap();

    let renamed = dir.path().join("renamed.csv");
    std::fs::write(&renamed, clinical.replacen("heart_rate", "pulse", 1)).unwrap();
    let out = bin().arg("score").arg("--model").arg(&model).arg("--input").arg(&renamed).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`heart_rate`"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, clinical.lines().next().unwrap()).unwrap();
    let stdout = run_ok(bin().arg("score").arg("--model").arg(&model).arg("--input").arg(&empty));
    assert_eq!(stdout, "patient_id,risk_score,pesi_score,pesi_class\n");

    let unknown = dir.path().join("unknown.json");
    let text = std::fs::read_to_string(&model).unwrap().replace("\"deep_clinical\"", "\"deep_oracle\"");
    std::fs::write(&unknown, text).unwrap();
    let out = bin().arg("score").arg("--model").arg(&unknown).arg("--input").arg(dir.path().join("data/clinical.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model kind"));
}
