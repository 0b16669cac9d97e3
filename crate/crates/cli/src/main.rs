use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use autoquery::classifier::{save_model, train, TrainConfig};
use autoquery::datagen::{generate, GenerationConfig};
use autoquery::dataset::{read_jsonl, read_samples, write_jsonl, GeneratedSample, SeedSample};
use autoquery::desk::load_desk_dataset;
use autoquery::embed::EmbedderConfig;
use autoquery::eval::{evaluate_classification, evaluate_extraction, latency_stats, SynonymTable};
use autoquery::pipeline::{compare_modes, RouteMode};
use autoquery::registry::{Registry, ToolCategory, ALL_TOOLS};
use autoquery_cli::app::{build_router, AppError};
use autoquery_cli::config::{AppConfig, BackendKind, Overrides};
use autoquery_cli::service::{serve, ServiceState};
use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde_json::{json, Value};

/// Routes automotive queries to a tool and extracts the tool's entities.
#[derive(Debug, Parser)]
#[command(name = "autoquery", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file (also AUTOQUERY_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Trained classifier artifact.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Directory of *.prompt files.
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    endpoint_url: Option<String>,
    #[arg(long, global = true)]
    endpoint_model: Option<String>,
    #[arg(long, global = true)]
    timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    max_tokens: Option<u32>,
    /// Fixed mock delay per request, in milliseconds.
    #[arg(long, global = true)]
    mock_base_ms: Option<f64>,
    /// Mock delay per prompt token, in milliseconds.
    #[arg(long, global = true)]
    mock_per_token_ms: Option<f64>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    log_level: Option<String>,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            model_path: self.model.clone(),
            prompt_dir: self.prompts.clone(),
            backend: self.backend,
            endpoint_url: self.endpoint_url.clone(),
            endpoint_model: self.endpoint_model.clone(),
            timeout_ms: self.timeout_ms,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            mock_base_ms: self.mock_base_ms,
            mock_per_token_ms: self.mock_per_token_ms,
            parallelism: self.parallelism,
            log_level: self.log_level.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    TwoStep,
    SingleStep,
}

impl From<Mode> for RouteMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::TwoStep => RouteMode::TwoStep,
            Mode::SingleStep => RouteMode::SingleStep,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a classifier from labeled JSONL and write the artifact.
    Train {
        /// Training JSONL; defaults to the bundled desk training set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Contrastive pairs per example and polarity.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Predict the tool for one query.
    Classify {
        #[arg(long)]
        query: String,
    },
    /// Classify and extract entities for one query.
    Route {
        #[arg(long)]
        query: String,
        #[arg(long, value_enum, default_value = "two-step")]
        mode: Mode,
        /// Include stage timings under `_timings`.
        #[arg(long)]
        timings: bool,
    },
    /// Score routing and extraction on a labeled dataset.
    Evaluate {
        /// Labeled JSONL; defaults to the bundled desk holdout set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "two-step")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Compare entity values without the synonym table.
        #[arg(long)]
        no_synonyms: bool,
    },
    /// Generate labeled samples from seeds with the configured backend.
    GenData {
        /// Seed JSONL; defaults to the bundled desk training set.
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// Requested samples as TOOL=N; repeatable.
        #[arg(long = "count", value_name = "TOOL=N")]
        counts: Vec<String>,
        /// Request N samples for every tool.
        #[arg(long)]
        per_tool: Option<usize>,
        /// 1 for one-shot prompts, more for few-shot.
        #[arg(long, default_value_t = 1)]
        seeds_per_prompt: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latency and agreement of two-step against single-step routing.
    Compare {
        /// JSONL whose `query` fields are used; defaults to the desk probe set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return;
        }
        Err(e) => fail(&AppError::Usage(e.render().to_string().trim().to_string())),
    };
    if let Err(e) = run(cli) {
        fail(&e);
    }
}

fn fail(e: &AppError) -> ! {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", e.to_json());
    std::process::exit(e.exit_code());
}

/// Writes to standard output, exiting quietly if the reader has gone away.
fn out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        fail(&AppError::Io { context: "writing to standard output".into(), source: e });
    }
}

fn emit(v: &Value) {
    out(&format!("{}\n", serde_json::to_string_pretty(v).expect("JSON values serialize")));
}

fn load_config(cli: &Cli) -> Result<AppConfig, AppError> {
    let env = Overrides::from_env(|k| std::env::var(k).ok())?;
    let mut flags = cli.global.overrides();
    if let Command::Serve { bind: Some(b) } = &cli.command {
        flags.bind = Some(b.clone());
    }
    let file = cli.global.config.clone().or_else(|| std::env::var_os("AUTOQUERY_CONFIG").map(PathBuf::from));
    let mut cfg = AppConfig::layered(file.as_deref(), &env, &flags)?;
    if matches!(cli.command, Command::Train { .. }) {
        // train writes a model rather than reading one
        cfg.model_path = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = load_config(&cli)?;
    init_logging(&cfg.log_level);
    let registry = Registry::default();
    match cli.command {
        Command::Train { data, out, seed, iterations } => {
            let samples = match &data {
                Some(p) => read_samples(p, &registry)?,
                None => load_desk_dataset()?.train,
            };
            let defaults = TrainConfig::default();
            let config = TrainConfig {
                seed: seed.unwrap_or(defaults.seed),
                iterations: iterations.unwrap_or(defaults.iterations),
                ..defaults
            };
            let examples: Vec<_> = samples.iter().map(SeedSample::labeled).collect();
            let model = train(&examples, &config, EmbedderConfig::default())?;
            save_model(&model, &out)?;
            let mut hits = 0;
            for s in &samples {
                if model.predict(&s.query).map_err(autoquery::classifier::ClassifierError::from)?.tool == s.tool {
                    hits += 1;
                }
            }
            emit(&json!({
                "out": out,
                "n": samples.len(),
                "seed": config.seed,
                "train_accuracy": hits as f64 / samples.len() as f64,
            }));
        }
        Command::Classify { query } => {
            let router = build_router(&cfg)?;
            if query.trim().is_empty() {
                return Err(AppError::Usage("query is empty".into()));
            }
            let p = router.model.predict(&query).map_err(autoquery::pipeline::PipelineError::from)?;
            emit(&json!({"tool_category": p.tool, "probabilities": p.probability_map()}));
        }
        Command::Route { query, mode, timings } => {
            let router = build_router(&cfg)?;
            let result = router.route(&query, mode.into())?;
            let out = result.public_json(timings);
            emit(&out);
            if let Some(issue) = &result.issue {
                return Err(AppError::Degraded(json!(issue)));
            }
        }
        Command::Evaluate { data, mode, format, no_synonyms } => {
            let samples = match &data {
                Some(p) => read_samples(p, &registry)?,
                None => load_desk_dataset()?.holdout,
            };
            let router = build_router(&cfg)?;
            let synonyms = (!no_synonyms).then(SynonymTable::bundled);
            let times = Mutex::new(Vec::new());
            let mode: RouteMode = mode.into();
            let extraction = evaluate_extraction(&samples, &registry, synonyms.as_ref(), cfg.parallelism, |q| {
                let r = router.route(q, mode).map_err(|e| e.to_string())?;
                times.lock().unwrap().push(r.timings.total_seconds);
                Ok((r.tool, r.entities))
            });
            let pairs: Vec<_> =
                extraction.per_sample.iter().filter_map(|s| s.predicted_tool.map(|p| (s.gold_tool, p))).collect();
            let route_errors = samples.len() - pairs.len();
            let classification = evaluate_classification(&pairs)?;
            let latency = latency_stats(&times.into_inner().unwrap())?;
            match format {
                Format::Json => emit(&json!({
                    "mode": mode,
                    "n": samples.len(),
                    "accuracy": classification.accuracy,
                    "entity_pass_rate": extraction.pass_rate,
                    "route_errors": route_errors,
                    "latency": latency,
                    "classification": classification,
                    "extraction": extraction,
                })),
                Format::Text => out(&format!(
                    "mode: {}\nroute errors: {route_errors}\n{}{}latency: mean={:.4}s p50={:.4}s p95={:.4}s\n",
                    json!(mode).as_str().unwrap_or_default(),
                    classification.to_text(),
                    extraction.to_text(),
                    latency.mean_seconds,
                    latency.p50_seconds,
                    latency.p95_seconds
                )),
            }
        }
        Command::GenData { seeds, counts, per_tool, seeds_per_prompt, seed, out } => {
            let seeds = match &seeds {
                Some(p) => read_samples(p, &registry)?,
                None => load_desk_dataset()?.train,
            };
            let wanted = parse_counts(&counts, per_tool)?;
            let router = build_router(&cfg)?;
            let config = GenerationConfig {
                seeds_per_prompt,
                seed,
                generator_model: match cfg.backend {
                    BackendKind::Http => cfg.endpoint.model.clone(),
                    BackendKind::Mock => String::new(),
                },
                ..Default::default()
            };
            let stamp = time::OffsetDateTime::now_utc()
                .format(&time::format_description::well_known::Rfc3339)
                .expect("UTC timestamps format");
            let report = generate(router.backend.as_ref(), &registry, &seeds, &wanted, &config, &stamp)?;
            let records: Vec<_> = report.samples.iter().map(GeneratedSample::to_record).collect();
            write_jsonl(&out, &records)?;
            let summary = json!({
                "out": out,
                "emitted": report.samples.len(),
                "per_tool": report.per_tool,
                "errors": report.errors,
            });
            emit(&summary);
            if !report.errors.is_empty() {
                return Err(AppError::Degraded(json!(report.errors)));
            }
        }
        Command::Compare { data, format } => {
            let queries = match &data {
                Some(p) => read_jsonl(p)?.into_iter().map(|r| r.query).collect(),
                None => load_desk_dataset()?.probe_queries(),
            };
            let router = build_router(&cfg)?;
            let cmp = compare_modes(&queries, &router, &router, cfg.parallelism)?;
            match format {
                Format::Json => emit(&json!(cmp)),
                Format::Text => out(&cmp.to_text()),
            }
        }
        Command::Serve { .. } => run_service(cfg)?,
    }
    Ok(())
}

fn parse_counts(specs: &[String], per_tool: Option<usize>) -> Result<IndexMap<ToolCategory, usize>, AppError> {
    let mut out: IndexMap<ToolCategory, usize> = IndexMap::new();
    if let Some(n) = per_tool {
        out.extend(ALL_TOOLS.iter().map(|t| (*t, n)));
    }
    for spec in specs {
        let bad = || AppError::Usage(format!("--count expects TOOL=N, got {spec:?}"));
        let (tool, n) = spec.split_once('=').ok_or_else(bad)?;
        let tool: ToolCategory = tool.trim().parse().map_err(|e| AppError::Usage(format!("--count: {e}")))?;
        out.insert(tool, n.trim().parse().map_err(|_| bad())?);
    }
    if out.is_empty() {
        return Err(AppError::Usage("nothing requested; pass --count TOOL=N or --per-tool N".into()));
    }
    Ok(out)
}

/// Binds first so /healthz answers 503 while the model loads on a plain
/// thread; a load failure stops the server and is returned.
fn run_service(cfg: AppConfig) -> Result<(), AppError> {
    let state = ServiceState::new(cfg.parallelism);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(AppError::io("starting the async runtime"))?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(&cfg.bind))
        .map_err(AppError::io(format!("binding {}", cfg.bind)))?;
    let addr = listener.local_addr().map_err(AppError::io("reading the bound address"))?;
    tracing::info!(%addr, "listening; loading model");

    let failed = Arc::new(tokio::sync::Notify::new());
    let loader = {
        let (state, failed, cfg) = (state.clone(), failed.clone(), cfg.clone());
        std::thread::spawn(move || match build_router(&cfg) {
            Ok(router) => {
                state.install(router);
                tracing::info!("ready");
                Ok(())
            }
            Err(e) => {
                failed.notify_one();
                Err(e)
            }
        })
    };
    let shutdown = async move {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
            _ = failed.notified() => {}
        }
    };
    let served = runtime.block_on(serve(listener, state.clone(), shutdown));
    drop(runtime);
    loader.join().expect("loader thread panicked")?;
    served.map_err(AppError::io("serving"))?;
    drop(state);
    Ok(())
}
