//! The `capacity` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use capacity_core::dataset::{encode_snapshot, SCHEMA_VERSION};
use capacity_core::features::{build_training_set, FeatureConfig, FeatureSchema, FeatureSet};
use capacity_core::ingest::synth::{generate_synthetic, SynthConfig};
use capacity_core::ingest::{load_input_dir, Period, UnitKind};
use capacity_core::regress::{fit, ModelKind, ModelSpec};
use chrono::{NaiveDate, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::api::{router, AppState};
use crate::config::AppConfig;
use crate::engine::{Engine, PredictRequest, WhatIfRequest};
use crate::error::ServiceError;
use crate::sequences::SequenceStore;

#[derive(Debug, Parser)]
#[command(name = "capacity", version, about = "Clinic testing-capacity modelling and what-if analysis")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Snapshot file, overriding the configuration.
    #[arg(long, global = true)]
    pub snapshot: Option<PathBuf>,
    /// Model file; repeat for several. Replaces the configured models.
    #[arg(long, global = true)]
    pub model: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `lga` or `postcode`.
    #[arg(long, global = true)]
    pub unit_kind: Option<UnitKind>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic input bundle.
    Synth(SynthArgs),
    /// Build a snapshot from an input directory.
    Ingest(IngestArgs),
    /// Fit and save one model.
    Train(TrainArgs),
    /// Compare the four model families on a chronological split.
    Compare(CompareArgs),
    /// Per-clinic predictions for one unit.
    Predict(PredictArgs),
    /// Run a what-if scenario file.
    Whatif(WhatIfArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Features {
    All,
    Preset,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for the CSV files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "default", value_parser = ["default", "desk", "benchmark", "monotone", "coupled"])]
    pub preset: String,
    /// Also write the per-clinic ground truth CSV here.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding tests.csv, cases.csv, clinics.csv, interventions.csv and census.csv.
    #[arg(long)]
    pub input: PathBuf,
    /// Snapshot to write; defaults to the configured snapshot path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Timestamp stamped into the snapshot instead of the current time.
    #[arg(long)]
    pub created_at: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// linear, tree, forest or gbt.
    #[arg(long)]
    pub kind: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Features::All)]
    pub features: Features,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    #[arg(long)]
    pub trailing_window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Share of the dates used for training.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub unit: String,
    #[arg(long)]
    pub from: NaiveDate,
    #[arg(long)]
    pub to: NaiveDate,
    /// Report raw clinic predictions instead of calibrated shares.
    #[arg(long)]
    pub uncalibrated: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which loaded model to use.
    #[arg(long)]
    pub model_kind: Option<ModelKind>,
}

#[derive(Debug, Args)]
pub struct WhatIfArgs {
    /// JSON scenario file.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model_kind: Option<ModelKind>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
    /// Append-only sequence store.
    #[arg(long)]
    pub sequences: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments; exit 2.
    Usage(String),
    /// Failure on valid arguments; exit 1.
    Data(ServiceError),
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Data(e)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(ServiceError::internal(format!("{}: {e}", path.display())))
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            2
        }
        Err(CliError::Data(error)) => {
            eprintln!("{}", json!({ "error": error }));
            1
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path).map_err(|e| CliError::Usage(e.message))?,
        None => AppConfig::default(),
    };
    if let Some(path) = &cli.snapshot {
        config.snapshot = Some(path.clone());
    }
    if !cli.model.is_empty() {
        config.model = None;
        config.models = cli.model.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(kind) = cli.unit_kind {
        config.unit_kind = kind;
    }
    Ok(config)
}

fn require_snapshot(config: &AppConfig) -> Result<&Path, CliError> {
    config
        .snapshot
        .as_deref()
        .ok_or_else(|| CliError::Usage("no snapshot given (use --snapshot or the config file)".into()))
}

fn engine(config: &AppConfig) -> Result<Engine, CliError> {
    require_snapshot(config)?;
    Ok(Engine::load(config)?)
}

fn engine_with_models(config: &AppConfig) -> Result<Engine, CliError> {
    if config.model_paths().is_empty() {
        return Err(CliError::Usage("no model given (use --model or the config file)".into()));
    }
    engine(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_error(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(ServiceError::internal(e.to_string()))),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    text
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    config.validate().map_err(|e| CliError::Usage(e.message))?;
    match cli.command {
        Command::Synth(args) => synth(&config, args),
        Command::Ingest(args) => ingest(&config, args),
        Command::Train(args) => train(&config, args),
        Command::Compare(args) => compare(&config, args),
        Command::Predict(args) => predict(&config, args),
        Command::Whatif(args) => whatif(&config, args),
        Command::Serve(args) => serve(&config, args),
    }
}

fn synth(config: &AppConfig, args: SynthArgs) -> Result<(), CliError> {
    let synth_config = SynthConfig::preset(&args.preset).expect("preset names are validated by clap");
    let (bundle, truth) = generate_synthetic(&synth_config, config.seed).map_err(ServiceError::from)?;
    bundle.write_to(&args.out).map_err(ServiceError::from)?;
    if let Some(path) = &args.truth {
        let csv = truth.to_csv().map_err(ServiceError::from)?;
        fs::write(path, csv).map_err(|e| io_error(path, e))?;
    }
    let summary = json!({
        "out": args.out,
        "preset": args.preset,
        "seed": config.seed,
        "files": bundle.files.keys().collect::<Vec<_>>(),
        "accounting": truth.accounting,
    });
    emit(None, &pretty(&summary))
}

fn ingest(config: &AppConfig, args: IngestArgs) -> Result<(), CliError> {
    let out = args
        .out
        .as_deref()
        .or(config.snapshot.as_deref())
        .ok_or_else(|| CliError::Usage("no output snapshot given (use --out or --snapshot)".into()))?
        .to_path_buf();
    let inputs = load_input_dir(&args.input).map_err(ServiceError::from)?;
    let period = match (args.from, args.to) {
        (None, None) => None,
        (from, to) => {
            let counted = inputs.count_period();
            let first = from.or(counted.map(|p| p.first));
            let last = to.or(counted.map(|p| p.last));
            match (first, last) {
                (Some(first), Some(last)) => Some(Period::new(first, last).map_err(ServiceError::from)?),
                _ => return Err(ServiceError::bad_request("no count rows to derive a period from").into()),
            }
        }
    };
    let dataset = inputs.aggregate(period).map_err(ServiceError::from)?;
    let created_at = args
        .created_at
        .unwrap_or_else(|| Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true));
    let (bytes, checksum) = encode_snapshot(&dataset, SCHEMA_VERSION, &created_at);
    fs::write(&out, bytes).map_err(|e| io_error(&out, e))?;
    let summary = json!({
        "snapshot": out,
        "checksum": checksum,
        "created_at": created_at,
        "period": dataset.period,
        "lga_units": dataset.units_with_clinics(UnitKind::Lga).len(),
        "display_units": dataset.all_units(UnitKind::Lga).len() - dataset.units_with_clinics(UnitKind::Lga).len(),
        "clinics": dataset.clinics.len(),
        "flagged_clinics": dataset.flagged_clinics,
    });
    emit(None, &pretty(&summary))
}

fn train(config: &AppConfig, args: TrainArgs) -> Result<(), CliError> {
    let snapshot = require_snapshot(config)?;
    let dataset = capacity_core::dataset::load_snapshot(snapshot).map_err(ServiceError::from)?;
    let feature_config = FeatureConfig {
        trailing_window: args.trailing_window.unwrap_or(config.trailing_window),
        ..FeatureConfig::default()
    };
    if feature_config.trailing_window == 0 {
        return Err(CliError::Usage("--trailing-window must be at least 1".into()));
    }
    let from = args.from.unwrap_or(dataset.period.first);
    let to = args.to.unwrap_or(dataset.period.last);
    let mut matrix =
        build_training_set(&dataset, &feature_config, config.unit_kind, from, to).map_err(ServiceError::from)?;
    let set = match args.features {
        Features::All => FeatureSet::All,
        Features::Preset => FeatureSet::Preset,
    };
    if set == FeatureSet::Preset {
        let names = FeatureSchema::preset_names(feature_config.trailing_window);
        matrix = matrix.select(&names).map_err(ServiceError::from)?;
    }
    let model = fit(&matrix, ModelSpec::default_for(args.kind), config.seed).map_err(ServiceError::from)?;
    model.save(&args.out).map_err(ServiceError::from)?;
    let summary = json!({
        "model": args.out,
        "kind": model.kind,
        "unit_kind": config.unit_kind,
        "rows": model.meta.rows,
        "train_from": model.meta.train_from,
        "train_to": model.meta.train_to,
        "n_features": model.schema.len(),
        "schema_hash": model.schema_hash,
        "seed": config.seed,
    });
    emit(None, &pretty(&summary))
}

fn compare(config: &AppConfig, args: CompareArgs) -> Result<(), CliError> {
    let engine = engine(config)?;
    let fraction = args.fraction.unwrap_or(config.train_fraction);
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Usage("--fraction must lie in (0, 1)".into()));
    }
    let table = engine.compare_with(config.unit_kind, fraction)?;
    let text = match args.format {
        Format::Csv => table.to_csv(),
        Format::Json => pretty(&table),
    };
    emit(args.out.as_deref(), &text)
}

fn predict(config: &AppConfig, args: PredictArgs) -> Result<(), CliError> {
    let engine = engine_with_models(config)?;
    let request = PredictRequest {
        unit_kind: Some(config.unit_kind),
        unit_id: args.unit,
        from: args.from,
        to: args.to,
        calibrate: Some(!args.uncalibrated && config.calibrate),
        model: args.model_kind.map(|k| k.label().to_string()),
    };
    let set = engine.predict(&request)?;
    let text = match args.format {
        Format::Csv => set.to_csv(),
        Format::Json => pretty(&set),
    };
    emit(args.out.as_deref(), &text)
}

fn whatif(config: &AppConfig, args: WhatIfArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.scenario).map_err(|e| io_error(&args.scenario, e))?;
    let mut request: WhatIfRequest = serde_json::from_str(&text)
        .map_err(|e| ServiceError::bad_request(format!("{}: {e}", args.scenario.display())))?;
    if let Some(kind) = args.model_kind {
        request.model = Some(kind.label().to_string());
    }
    let engine = engine_with_models(config)?;
    let result = engine.whatif(&request)?;
    let text = match args.format {
        Format::Csv => result.to_csv(),
        Format::Json => pretty(&result),
    };
    emit(args.out.as_deref(), &text)
}

fn serve(config: &AppConfig, args: ServeArgs) -> Result<(), CliError> {
    let engine = engine(config)?;
    let listen = args.listen.unwrap_or_else(|| config.listen.clone());
    let sequences = match args.sequences.as_deref().or(config.sequences.as_deref()) {
        Some(path) => SequenceStore::open(path)?,
        None => SequenceStore::in_memory(),
    };
    let app = router(AppState::new(engine, sequences));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| ServiceError::bad_request(format!("cannot listen on {listen}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| ServiceError::internal(e.to_string()))?;
        eprintln!("listening on http://{bound}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ServiceError::internal(e.to_string()))
    })?;
    Ok(())
}
