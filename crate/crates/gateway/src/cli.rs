//! `hcla` subcommands. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::error::Error;
use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use hcla_core::dataio::{
    companion_paths, generate_synthetic, load_model, save_model, write_dataset, GeneratorConfig,
};
use hcla_core::detector::TrainConfig;
use hcla_core::domain::Label;
use hcla_core::evaluation::{evaluate, fit_temporal};
use hcla_core::features::{temporal_split, FeaturePipeline, FeatureSchema, WalletIndex};
use serde_json::json;

use crate::config::ServiceConfig;
use crate::{api, build_manager, load_store};

type CliResult = Result<i32, Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(name = "hcla", version, about = "Conversational anomaly analysis for digital-asset transactions")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled dataset with allow-list and cluster files.
    Generate(GenerateArgs),
    /// Train a detector on the rows before the split boundary.
    Train(TrainArgs),
    /// Score the rows after the split boundary and report metrics.
    Eval(EvalArgs),
    /// Start the HTTP API.
    Serve(ServiceArgs),
    /// Run one turn locally and print the reply and its trace.
    Ask(AskArgs),
}

#[derive(Debug, clap::Args)]
struct GenerateArgs {
    /// JSON generator config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n")]
    n_transactions: Option<usize>,
    #[arg(long)]
    anomaly_rate: Option<f64>,
    #[arg(long)]
    wallets: Option<usize>,
    #[arg(long)]
    verified: Option<usize>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemaChoice {
    Standard,
    WithBurst,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemaChoice::Standard)]
    schema: SchemaChoice,
    /// Split boundary (RFC 3339 or YYYY-MM-DD, UTC).
    #[arg(long, value_parser = parse_instant)]
    boundary: Option<DateTime<Utc>>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_weight: Option<f64>,
    #[arg(long)]
    min_child_hessian: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = hcla_core::domain::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_parser = parse_instant)]
    boundary: Option<DateTime<Utc>>,
    /// Generator seed, recorded in the report fingerprint.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, clap::Args)]
struct ServiceArgs {
    /// TOML service config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    /// Fixed session clock (RFC 3339).
    #[arg(long, value_parser = DateTime::parse_from_rfc3339)]
    now: Option<DateTime<FixedOffset>>,
}

#[derive(Debug, clap::Args)]
struct AskArgs {
    #[command(flatten)]
    service: ServiceArgs,
    /// Bind the session to this wallet.
    #[arg(long)]
    wallet: Option<String>,
    #[arg(long)]
    json: bool,
    /// Query text; read from standard input when omitted.
    text: Vec<String>,
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.to_utc());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
        .map_err(|_| format!("{s:?} is neither RFC 3339 nor YYYY-MM-DD"))
}

impl ServiceArgs {
    fn resolve(&self) -> Result<ServiceConfig, Box<dyn Error>> {
        let mut config = ServiceConfig::load(self.config.as_deref())?;
        if let Some(d) = &self.data {
            config.data_path = Some(d.clone());
        }
        if let Some(m) = &self.model {
            config.model_path = m.clone();
        }
        if let Some(p) = self.port {
            config.port = p;
        }
        if self.now.is_some() {
            config.now = self.now;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parses `argv` and runs the subcommand, writing to `out` and `err`.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Serve(a) => serve_cmd(a),
        Command::Ask(a) => ask(a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg: GeneratorConfig = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => GeneratorConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { cfg.$field = v; })* };
    }
    set!(seed => seed, n_transactions => n_transactions, anomaly_rate => anomaly_rate, wallets => n_wallets,
         verified => n_verified_counterparties, start => start, end => end);
    let data = generate_synthetic(&cfg)?;
    write_dataset(&a.out, &data)?;
    let anomalous = data.transactions.iter().filter(|t| t.label == Label::Anomalous).count();
    let (allow, clusters) = companion_paths(&a.out);
    writeln!(
        out,
        "wrote {} rows ({anomalous} anomalous) to {}\nallow-list {}\nclusters {}",
        data.transactions.len(),
        a.out.display(),
        allow.display(),
        clusters.display()
    )?;
    Ok(0)
}

fn store_config(data: &std::path::Path) -> ServiceConfig {
    ServiceConfig { data_path: Some(data.to_path_buf()), ..ServiceConfig::default() }
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let store = load_store(&store_config(&a.data))?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        rounds: a.rounds.unwrap_or(defaults.rounds),
        max_depth: a.max_depth.unwrap_or(defaults.max_depth),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        l2_weight: a.l2_weight.unwrap_or(defaults.l2_weight),
        min_child_hessian: a.min_child_hessian.unwrap_or(defaults.min_child_hessian),
        seed: a.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let schema = match a.schema {
        SchemaChoice::Standard => FeatureSchema::standard(),
        SchemaChoice::WithBurst => FeatureSchema::with_burst(),
    };
    let boundary = a.boundary.unwrap_or_else(hcla_core::features::default_split_boundary);
    let fitted = fit_temporal(store.transactions(), store.allowlist().clone(), boundary, schema, &config)?;
    save_model(&fitted.model, &a.out)?;
    let losses = &fitted.report.round_loss;
    let summary = json!({
        "model": a.out,
        "train_rows": fitted.train_rows,
        "trees": fitted.model.trees.len(),
        "schema_version": fitted.model.feature_schema.version,
        "initial_loss": losses.first(),
        "final_loss": losses.last(),
        "warnings": fitted.report.warnings,
    });
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    } else {
        writeln!(
            out,
            "trained {} trees on {} rows before {}; log-loss {:.4} -> {:.4}; model written to {}",
            fitted.model.trees.len(),
            fitted.train_rows,
            boundary.format("%Y-%m-%d"),
            losses.first().copied().unwrap_or(f64::NAN),
            losses.last().copied().unwrap_or(f64::NAN),
            a.out.display()
        )?;
        for w in &fitted.report.warnings {
            writeln!(out, "warning: {w}")?;
        }
    }
    Ok(0)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> CliResult {
    let store = load_store(&store_config(&a.data))?;
    let model = load_model(&a.model)?;
    let boundary = a.boundary.unwrap_or_else(hcla_core::features::default_split_boundary);
    let corpus = store.transactions();
    let pipeline =
        FeaturePipeline::from_training_window(model.feature_schema.clone(), corpus, boundary, store.allowlist().clone())?;
    let index = WalletIndex::new(corpus);
    let (train, test) = temporal_split(corpus.iter().cloned(), boundary);
    let mut report = evaluate(&model, &pipeline, &index, &test, a.threshold)?;
    report.fingerprint.train_rows = train.iter().filter(|t| t.label != Label::Unlabeled).count();
    report.fingerprint.seed = a.seed;
    if a.json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        writeln!(out, "{report}")?;
    }
    Ok(0)
}

fn serve_cmd(a: ServiceArgs) -> CliResult {
    let config = a.resolve()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(api::serve(config))?;
    Ok(0)
}

fn ask(a: AskArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let config = a.service.resolve()?;
    let text = if a.text.is_empty() {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        a.text.join(" ")
    };
    let manager = build_manager(&config)?;
    let session = manager.new_session_with_wallet(a.wallet);
    let result = manager.handle_turn(&session, &text)?;
    let trace = manager.get_trace(&session, &result.trace_id)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&json!({"result": result, "trace": trace}))?)?;
    } else {
        writeln!(out, "{}\n\ntrace {}:\n{}", result.reply, result.trace_id, serde_json::to_string_pretty(&trace)?)?;
    }
    if let Some(e) = &result.error {
        writeln!(err, "error: {}: {}", e.code, e.message)?;
        return Ok(2);
    }
    Ok(0)
}
