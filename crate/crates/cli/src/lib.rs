//! The `uxsim` command line: persona generation, batch runs, trace export,
//! aggregate statistics and the REST service.

pub mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use uxsim_core::agent::CancelFlag;
use uxsim_core::browser::BrowserConfig;
use uxsim_core::llm::{Gateway, OpenAiProvider, StubScript};
use uxsim_core::orchestrator::{load_records, run_batch, BatchConfig};
use uxsim_core::persona::{generate_batch, load_personas, DemographicSpec, Persona};
use uxsim_core::prompt::Prompts;
use uxsim_core::recipe::Recipe;
use uxsim_core::record::{export_action_trace, export_memory_trace};
use uxsim_core::stats::{aggregate_stats, format_table, GroupBy};

pub use config::{LlmMode, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "uxsim", version, about = "Simulated usability tests with LLM shopper agents")]
pub struct Cli {
    /// Run configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Answer every model call from a stub script: this file, else
    /// `llm.stub_script`, else the bundled jacket-purchase script.
    #[arg(long, global = true, value_name = "SCRIPT", conflicts_with_all = ["record", "replay"])]
    pub stub: Option<Option<PathBuf>>,
    /// Call the live model and append each exchange to this transcript.
    #[arg(long, global = true, value_name = "TRANSCRIPT", conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Answer every model call from this transcript.
    #[arg(long, global = true, value_name = "TRANSCRIPT")]
    pub replay: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Persona tools.
    Personas {
        #[command(subcommand)]
        command: PersonaCommand,
    },
    /// Run one session per persona against the target.
    Run,
    /// Write plain-text action and memory traces for stored sessions.
    Export {
        /// Directory holding session records; the output directory by default.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Where to write traces; next to each record by default.
        #[arg(long = "to")]
        to: Option<PathBuf>,
    },
    /// Aggregate outcomes by a demographic field.
    Stats {
        #[arg(long, default_value = "gender")]
        group_by: GroupBy,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Serve stored sessions and interviews over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PersonaCommand {
    /// Sample demographics from `personas.spec_path` and write one persona each.
    Generate {
        /// Overrides the demographic spec's count.
        #[arg(long)]
        count: Option<usize>,
    },
}

/// Loads the config and applies command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::default();
            c.resolve_paths(&std::env::current_dir().map_err(CliError::runtime)?);
            c
        }
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    if let Some(script) = &cli.stub {
        config.llm.mode = LlmMode::Stub;
        if let Some(path) = script {
            config.llm.stub_script = Some(path.clone());
        }
    }
    if let Some(t) = &cli.record {
        config.llm.mode = LlmMode::Record;
        config.llm.transcript = Some(t.clone());
    }
    if let Some(t) = &cli.replay {
        config.llm.mode = LlmMode::Replay;
        config.llm.transcript = Some(t.clone());
    }
    config.validate()?;
    Ok(config)
}

pub fn build_gateway(config: &RunConfig) -> Result<Gateway, CliError> {
    let provider = &config.llm.provider;
    let transcript = || config.llm.transcript.as_deref().expect("validated");
    let gw = match config.llm.mode {
        LlmMode::Stub => {
            let script = match &config.llm.stub_script {
                Some(path) => StubScript::load(path),
                None => StubScript::from_json(uxsim_fixture::JACKET_SCRIPT),
            }
            .map_err(|e| CliError::Config(format!("llm.stub_script: {e}")))?;
            Gateway::stub_with_config(script, provider)
        }
        LlmMode::Live => Gateway::openai(provider).map_err(|e| CliError::Config(format!("llm.provider: {e}")))?,
        LlmMode::Record => {
            let p = OpenAiProvider::from_config(provider).map_err(|e| CliError::Config(format!("llm.provider: {e}")))?;
            Gateway::record(Arc::new(p), provider, transcript()).map_err(CliError::runtime)?
        }
        LlmMode::Replay => {
            Gateway::replay(provider, transcript()).map_err(|e| CliError::Config(format!("llm.transcript: {e}")))?
        }
    };
    Ok(gw)
}

fn load_spec(config: &RunConfig) -> Result<DemographicSpec, CliError> {
    let path = config
        .personas
        .spec_path
        .as_deref()
        .ok_or_else(|| CliError::Config("personas.spec_path: required to generate personas".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
}

/// What a command prints on success.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

pub async fn generate_personas(config: &RunConfig, count: Option<usize>) -> Result<(Vec<Persona>, PathBuf), CliError> {
    let mut spec = load_spec(config)?;
    if let Some(n) = count {
        spec.count = n;
    }
    let gateway = build_gateway(config)?;
    let batch = generate_batch(&spec, &gateway, config.seed).await.map_err(|e| match e {
        uxsim_core::persona::PersonaError::Spec(m) => CliError::Config(format!("personas.spec_path: {m}")),
        other => CliError::runtime(other),
    })?;
    let dir = config.output.dir.join("personas");
    batch.save(&dir).map_err(CliError::runtime)?;
    Ok((batch.personas, dir))
}

async fn cmd_generate(config: &RunConfig, count: Option<usize>) -> Result<Report, CliError> {
    let (personas, dir) = generate_personas(config, count).await?;
    let noun = if personas.len() == 1 { "persona" } else { "personas" };
    let mut text = format!("wrote {} {noun} to {}\n", personas.len(), dir.display());
    for p in &personas {
        text.push_str(&format!("  {} ({}, {}, ${})\n", p.name, p.age, p.gender, p.income));
    }
    Ok(Report {
        text,
        json: serde_json::json!({ "dir": dir, "personas": personas }),
    })
}

/// Runs the configured batch. `cancel` stops it early; every persona still
/// gets a record.
pub async fn run(config: &RunConfig, cancel: CancelFlag) -> Result<Report, CliError> {
    config.validate_target()?;
    let personas = match (&config.personas.personas_path, &config.personas.spec_path) {
        (Some(path), _) => load_personas(path).map_err(|e| CliError::Config(format!("personas.personas_path: {e}")))?,
        (None, Some(_)) => generate_personas(config, None).await?.0,
        (None, None) => vec![Persona::seed()],
    };
    let gateway = Arc::new(build_gateway(config)?);

    // Kept alive until the batch is done.
    let mut fixture = None;
    let (target_url, recipe, browser) = if config.target.fixture {
        let shop = uxsim_fixture::spawn_shop().await.map_err(CliError::runtime)?;
        let browser = uxsim_fixture::spawn_browser().await.map_err(CliError::runtime)?;
        let url = shop.url();
        let browser_config = BrowserConfig {
            endpoint: browser.url(),
            ..config.target.browser.clone().unwrap_or_default()
        };
        let recipe = match &config.target.recipe_path {
            Some(p) => Recipe::load(p),
            None => Recipe::from_json(uxsim_fixture::SHOP_RECIPE),
        };
        fixture = Some((shop, browser));
        (url, recipe, browser_config)
    } else {
        let recipe = Recipe::load(config.target.recipe_path.as_deref().expect("validated"));
        let url = config.target.url.clone().expect("validated");
        (url, recipe, config.target.browser.clone().unwrap_or_default())
    };
    let recipe = recipe.map_err(|e| CliError::Config(format!("target.recipe_path: {e}")))?;

    let batch = BatchConfig {
        batch_id: config.batch_id(),
        out_dir: config.output.dir.clone(),
        target_url,
        recipe: Arc::new(recipe),
        browser,
        settings: config.agent.clone(),
        default_intent: config.personas.intent.clone(),
        parallelism: config.parallelism,
        cancel,
    };
    let index = run_batch(personas, gateway, &batch).await.map_err(|e| match e {
        uxsim_core::orchestrator::OrchestratorError::Config(m) => CliError::Config(m),
        other => CliError::runtime(other),
    })?;
    drop(fixture);

    let mut text = format!("batch {} in {}\n", index.batch_id, batch.batch_dir().display());
    for s in &index.sessions {
        let total = s.total.map(|t| format!(" {t}")).unwrap_or_default();
        text.push_str(&format!(
            "  {} {:<24} {:<10}{} ({} actions)\n",
            s.session_id,
            s.persona,
            s.outcome.as_str(),
            total,
            s.actions
        ));
    }
    Ok(Report {
        text,
        json: serde_json::to_value(&index).expect("index serializes"),
    })
}

fn records_in(dir: &Path) -> Result<Vec<uxsim_core::record::SessionRecord>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Runtime(format!("{} is not a directory", dir.display())));
    }
    load_records(dir).map_err(CliError::runtime)
}

pub fn export(dir: &Path, to: Option<&Path>) -> Result<Report, CliError> {
    let mut records = Vec::new();
    collect_record_dirs(dir, &mut records, 0).map_err(CliError::runtime)?;
    records.sort();
    let mut written = Vec::new();
    for rec_dir in records {
        let record = uxsim_core::record::SessionRecord::load(&rec_dir.join("record.json")).map_err(CliError::runtime)?;
        let out = match to {
            Some(base) => base.join(rec_dir.strip_prefix(dir).unwrap_or(&rec_dir)),
            None => rec_dir.clone(),
        };
        std::fs::create_dir_all(&out).map_err(CliError::runtime)?;
        std::fs::write(out.join("actions.txt"), export_action_trace(&record.actions)).map_err(CliError::runtime)?;
        std::fs::write(out.join("memories.txt"), export_memory_trace(&record.memories)).map_err(CliError::runtime)?;
        written.push(out);
    }
    let text = written.iter().map(|p| format!("{}\n", p.display())).collect::<String>()
        + &format!("exported {} sessions\n", written.len());
    Ok(Report {
        text,
        json: serde_json::json!({ "exported": written }),
    })
}

fn collect_record_dirs(dir: &Path, out: &mut Vec<PathBuf>, depth: usize) -> std::io::Result<()> {
    if dir.join("record.json").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    if depth >= 3 {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_record_dirs(&path, out, depth + 1)?;
        }
    }
    Ok(())
}

pub fn stats(dir: &Path, group_by: GroupBy) -> Result<Report, CliError> {
    let records = records_in(dir)?;
    let rows = aggregate_stats(&records, group_by);
    Ok(Report {
        text: format_table(&rows),
        json: serde_json::to_value(&rows).expect("rows serialize"),
    })
}

pub async fn serve(config: &RunConfig, dir: &Path, port: u16) -> Result<(), CliError> {
    let gateway = Arc::new(build_gateway(config)?);
    let prompts = match &config.agent.prompts_dir {
        Some(d) => Prompts::with_overrides(d).map_err(|e| CliError::Config(format!("agent.prompts_dir: {e}")))?,
        None => Prompts::default(),
    };
    let state = Arc::new(uxsim_service::AppState::new(
        uxsim_service::SessionStore::new(dir),
        gateway,
        prompts.interview,
        config.interview.clone(),
    ));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    tracing::info!(%addr, dir = %dir.display(), "serving");
    uxsim_service::serve(addr, state).await.map_err(CliError::runtime)
}

/// Runs one parsed command line to completion.
pub async fn execute(cli: Cli) -> Result<Option<Report>, CliError> {
    let config = effective_config(&cli)?;
    let default_dir = || config.output.dir.clone();
    match cli.command {
        Command::Personas {
            command: PersonaCommand::Generate { count },
        } => cmd_generate(&config, count).await.map(Some),
        Command::Run => {
            let cancel = CancelFlag::default();
            let on_signal = cancel.clone();
            tokio::spawn(async move {
                if tokio::signal::ctrl_c().await.is_ok() {
                    tracing::warn!("interrupted; finishing the current steps and writing records");
                    on_signal.cancel();
                }
            });
            run(&config, cancel).await.map(Some)
        }
        Command::Export { dir, to } => export(&dir.unwrap_or_else(default_dir), to.as_deref()).map(Some),
        Command::Stats { group_by, dir } => stats(&dir.unwrap_or_else(default_dir), group_by).map(Some),
        Command::Serve { port, dir } => serve(&config, &dir.unwrap_or_else(default_dir), port).await.map(|()| None),
    }
}

/// Prints a report or error in the chosen format and returns the exit code.
pub fn finish(format: Format, result: Result<Option<Report>, CliError>) -> i32 {
    match result {
        Ok(Some(report)) => {
            match format {
                Format::Text => print!("{}", report.text),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report.json).expect("json")),
            }
            0
        }
        Ok(None) => 0,
        Err(e) => {
            match format {
                Format::Text => eprintln!("uxsim: {e}"),
                Format::Json => {
                    let kind = match e {
                        CliError::Config(_) => "config",
                        CliError::Runtime(_) => "runtime",
                    };
                    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": e.to_string() } }));
                }
            }
            e.exit_code()
        }
    }
}
