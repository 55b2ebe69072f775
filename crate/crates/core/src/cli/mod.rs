//! The `survfuse` command line: `generate`, `run`, `score` and `report`.
//!
//! Exit codes are 0 on success, 1 for invalid input or configuration and 2
//! when fitting or evaluation fails.

mod artifact;
mod config;
pub mod render;

pub use artifact::{feature_names, FitMetadata, ModelArtifact, SCHEMA_VERSION};
pub use config::{config_fingerprint, sha256_hex, Paths, StudyConfig};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::analysis::{run_study, AnalysisError, ModelKind, Stage, StudyData, StudyReport};
use crate::dataset::{
    ingest_clinical, ingest_imaging, write_clinical, write_imaging, ClinicalSchema, Dataset, DatasetError,
    DEFAULT_FEATURE_DIM,
};
use crate::pesi::pesi_score;
use crate::rng;
use crate::synthetic::{gen_multimodal, GeneratorSpec, ModalityPlan};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("schema mismatch: column `{column}` {reason}")]
    SchemaMismatch { column: String, reason: String },
    #[error("unknown model kind `{0}`")]
    UnknownModelKind(String),
    #[error("invalid model artifact: {0}")]
    InvalidArtifact(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Analysis(AnalysisError::Stage { stage: Stage::Ingestion, .. }) => 1,
            CliError::Analysis(_) => 2,
            _ => 1,
        }
    }
}

fn ingestion(e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> CliError {
    CliError::Analysis(AnalysisError::Stage { stage: Stage::Ingestion, source: e.into() })
}

#[derive(Debug, Parser)]
#[command(name = "survfuse", version, about = "Multimodal survival risk models with PESI comparison")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort as clinical and feature CSVs.
    Generate(GenerateArgs),
    /// Fit and evaluate every configured model.
    Run(RunArgs),
    /// Score patients with a saved model.
    Score(ScoreArgs),
    /// Re-render report.md and KM files from a report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the CSVs instead of the configured paths.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flag the 30-day truncated table as requested.
    #[arg(long = "truncate-30d")]
    pub truncate_30d: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated model kinds, e.g. `pesi,deep_clinical`.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Model artifact written by `run`.
    #[arg(long)]
    pub model: PathBuf,
    /// Clinical CSV of the patients to score.
    #[arg(long)]
    pub input: PathBuf,
    /// Imaging feature CSV; required by imaging models.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.json written by `run`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; defaults to the report's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn generate_files(spec: &GeneratorSpec, clinical: &Path, features: Option<&Path>) -> Result<(), CliError> {
    let mut spec = spec.clone();
    let plan = spec.modality_plan.get_or_insert_with(ModalityPlan::default).clone();
    let data = gen_multimodal(&spec).map_err(|e| CliError::InvalidConfig { field: "generator".into(), reason: e.to_string() })?;
    let mut buf = Vec::new();
    write_clinical(&mut buf, data.dataset.records()).map_err(ingestion)?;
    write_file(clinical, &buf)?;
    if let Some(path) = features {
        let mut buf = Vec::new();
        write_imaging(&mut buf, plan.img_dim, &data.acquisitions).map_err(ingestion)?;
        write_file(path, &buf)?;
    }
    log::info!("wrote {} synthetic patients to {}", spec.n, clinical.display());
    Ok(())
}

/// Writes the configured synthetic cohorts and returns the files written.
pub fn cmd_generate(args: &GenerateArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = StudyConfig::load(&args.config)?;
    cfg.validate()?;
    let mut spec = cfg
        .generator
        .clone()
        .ok_or_else(|| CliError::InvalidConfig { field: "generator".into(), reason: "section is missing".into() })?;
    let mut external = cfg.external_generator.clone();
    if let Some(seed) = args.seed {
        spec.seed = seed;
        if let Some(ext) = &mut external {
            ext.seed = rng::tagged_seed(seed, "external");
        }
    }
    let p = &cfg.paths;
    let (clin, feat, ext_clin, ext_feat) = match &args.out {
        Some(dir) => (
            dir.join("clinical.csv"),
            Some(dir.join("features.csv")),
            Some(dir.join("external_clinical.csv")),
            Some(dir.join("external_features.csv")),
        ),
        None => (p.clinical.clone(), p.features.clone(), p.external_clinical.clone(), p.external_features.clone()),
    };
    let mut written = vec![clin.clone()];
    generate_files(&spec, &clin, feat.as_deref())?;
    written.extend(feat);
    if let Some(ext) = &external {
        let ext_clin = ext_clin.ok_or_else(|| CliError::InvalidConfig {
            field: "paths.external_clinical".into(),
            reason: "required by external_generator".into(),
        })?;
        generate_files(ext, &ext_clin, ext_feat.as_deref())?;
        written.push(ext_clin);
        written.extend(ext_feat);
    }
    Ok(written)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| ingestion(format!("cannot read {}: {e}", path.display())))
}

/// Loads one cohort, merging imaging features when required.
fn load_cohort(clinical: &Path, features: Option<&Path>, needs_imaging: bool, hasher: &mut Vec<u8>) -> Result<Dataset, CliError> {
    hasher.extend(read_bytes(clinical)?);
    let ds = ingest_clinical(clinical, &ClinicalSchema::default(), DEFAULT_FEATURE_DIM).map_err(ingestion)?;
    let Some(features) = features.filter(|_| needs_imaging) else {
        if needs_imaging {
            return Err(ingestion(format!("imaging models requested but no features file is configured for {}", clinical.display())));
        }
        return Ok(ds);
    };
    hasher.extend(read_bytes(features)?);
    let table = ingest_imaging(features).map_err(ingestion)?;
    let ds = ds.with_imaging(&table).map_err(ingestion)?;
    if let Some(r) = ds.records().iter().find(|r| r.imaging_features.is_none()) {
        return Err(ingestion(DatasetError::MissingImaging(r.patient_id.clone())));
    }
    Ok(ds)
}

fn parse_models(names: &[String]) -> Result<Vec<ModelKind>, CliError> {
    names
        .iter()
        .filter(|n| !n.trim().is_empty())
        .map(|n| n.parse::<ModelKind>().map_err(|_| CliError::InvalidConfig { field: "models".into(), reason: format!("unknown model `{n}`") }))
        .collect()
}

/// Runs the study and writes every output file into the output directory,
/// which is returned.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf, CliError> {
    let mut cfg = StudyConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.truncate_30d {
        cfg.truncate_30d = true;
    }
    if let Some(models) = &args.models {
        cfg.models = parse_models(models)?;
    }
    if let Some(out) = &args.out {
        cfg.paths.output = out.clone();
    }
    cfg.validate()?;

    let needs_imaging = cfg.needs_imaging();
    let mut raw = Vec::new();
    let p = &cfg.paths;
    let development = load_cohort(&p.clinical, p.features.as_deref(), needs_imaging, &mut raw)?;
    let external = match &p.external_clinical {
        Some(clin) => Some(load_cohort(clin, p.external_features.as_deref(), needs_imaging, &mut raw)?),
        None => None,
    };
    let data_fingerprint = sha256_hex(&raw);
    let feature_dim = development.feature_dim();

    let settings = cfg.study_settings();
    let mut outcome = run_study(&StudyData { development, external }, &settings)?;
    outcome.report.config_fingerprint = config_fingerprint(&settings, &data_fingerprint);

    let out = &cfg.paths.output;
    let report = &outcome.report;
    write_file(&out.join("report.json"), serde_json::to_string_pretty(report).expect("report serializes") + "\n")?;
    write_file(&out.join("report.md"), render::report_markdown(report))?;
    write_km_files(report, out)?;
    write_file(&out.join("scores.csv"), render::scores_csv(&outcome.scored))?;
    write_file(&out.join("feature_importance.csv"), render::feature_importance_csv(&outcome.feature_importance))?;
    write_file(&out.join("split.json"), serde_json::to_string_pretty(&outcome.assignment).expect("split serializes") + "\n")?;
    for &kind in &settings.models {
        let artifact = ModelArtifact::new(kind, &outcome.pipeline, cfg.seed, &data_fingerprint, feature_dim);
        write_file(&out.join("models").join(format!("{kind}.json")), artifact.to_json())?;
    }
    log::info!("outputs written to {}", out.display());
    Ok(out.clone())
}

/// KM CSV and SVG for each stratified model on the test split.
fn write_km_files(report: &StudyReport, out: &Path) -> Result<(), CliError> {
    for entry in report.km.iter().filter(|k| k.split == "test") {
        write_file(&out.join(format!("km_{}.csv", entry.model)), render::km_csv(entry))?;
        write_file(&out.join(format!("km_{}.svg", entry.model)), render::km_svg(entry))?;
    }
    Ok(())
}

fn schema_error(e: DatasetError) -> CliError {
    match e {
        DatasetError::MissingColumn(column) => CliError::SchemaMismatch { column, reason: "is missing".into() },
        other => ingestion(other),
    }
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let artifact = ModelArtifact::load(&args.model)?;
    let kind = artifact.kind()?;
    let dim = artifact.metadata.feature_dim;
    let mut ds = ingest_clinical(&args.input, &ClinicalSchema::default(), dim.max(1)).map_err(schema_error)?;
    if kind.needs_imaging() {
        let path = args
            .features
            .as_ref()
            .ok_or_else(|| CliError::InvalidArgs(format!("model `{kind}` needs --features")))?;
        let table = ingest_imaging(path).map_err(schema_error)?;
        if table.dim != dim {
            let (column, reason) = if table.dim < dim {
                (format!("f{}", table.dim), "is missing".to_string())
            } else {
                (format!("f{dim}"), format!("is unexpected; the model takes {dim} features"))
            };
            return Err(CliError::SchemaMismatch { column, reason });
        }
        ds = ds.with_imaging(&table).map_err(ingestion)?;
        if let Some(r) = ds.records().iter().find(|r| r.imaging_features.is_none()) {
            return Err(ingestion(DatasetError::MissingImaging(r.patient_id.clone())));
        }
    }

    let mut out = String::from("patient_id,risk_score,pesi_score,pesi_class\n");
    if !ds.is_empty() {
        let risk = artifact.pipeline.score(kind, &ds)?;
        let imputed = artifact.pipeline.preprocessing.imputation.apply(&ds);
        for (r, score) in imputed.records().iter().zip(risk) {
            let p = pesi_score(&r.clinical).map_err(|e| ingestion(e))?;
            out.push_str(&format!("{},{score},{},{}\n", r.patient_id, p.score, p.risk_class));
        }
    }
    match &args.out {
        Some(path) => write_file(path, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let report: StudyReport =
        serde_json::from_str(&text).map_err(|e| CliError::InvalidArgs(format!("{} is not a report: {e}", args.input.display())))?;
    let out = match &args.out {
        Some(d) => d.clone(),
        None => args.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    write_file(&out.join("report.md"), render::report_markdown(&report))?;
    write_km_files(&report, &out)
}
