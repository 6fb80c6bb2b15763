//! `amhate`: corpus building, annotation serving, training, evaluation and
//! prediction from one config file.
//!
//! Exit status: 0 on success, 1 when a run fails, 2 for usage or config
//! errors. Logs go to stderr (`RUST_LOG` adjusts the level).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use amhate_core::annotation::ServiceError;
use amhate_core::label::Label;
use amhate_core::models::{load_model, model_from_str, Classifier, ModelError, ModelKind};
use amhate_core::pipeline::{self, Overrides, PipelineConfig, PipelineError};
use amhate_core::textnorm::Normalizer;
use clap::{Parser, Subcommand};

/// Linear model trained on the synthetic benchmark, used by `predict` when
/// no model file is given.
const DEMO_MODEL: &str = include_str!("../assets/demo-model.json");

#[derive(Debug, Parser)]
#[command(
    name = "amhate",
    version,
    about = "Amharic hate-speech corpus and classification pipeline"
)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and re-derives every component seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fetch posts from the configured sources and consolidate them.
    Ingest,
    /// Language and keyword filtering into the candidate pool.
    Filter,
    /// Run the annotation HTTP service.
    Serve {
        /// Import the candidate pool at startup unless already imported.
        #[arg(long)]
        import_pool: bool,
    },
    /// Export completed annotations as gold JSON lines.
    ExportGold,
    /// Train one model on the gold data.
    Train {
        #[arg(long)]
        model: ModelKind,
    },
    /// Score trained models on the test split (all of them by default).
    Evaluate {
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Classify text with a saved model (the bundled demo model by default).
    Predict {
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        /// One document per line.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// One JSON object per document instead of tab-separated text.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate all three trained models on the same split.
    Compare,
    /// Write the synthetic benchmark corpus and lexicons.
    Synth,
    /// Synthetic corpus through every stage to the comparison table.
    Benchmark,
    /// Print the fully resolved config.
    ResolveConfig,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::Usage(chain(&e))
        } else {
            Failure::Run(chain(&e))
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Run(chain(&e))
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Failure::Run(chain(&e))
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        let part = s.to_string();
        if !msg.contains(&part) {
            msg.push_str(": ");
            msg.push_str(&part);
        }
        cur = s.source();
    }
    msg
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config <file>".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    PipelineConfig::load(path, &overrides).map_err(|e| PipelineError::from(e).into())
}

fn format_prediction(label: Label, distribution: &[f64; 4]) -> String {
    let mut line = label.to_string();
    for (l, p) in Label::ALL.iter().zip(distribution) {
        line.push_str(&format!("\t{l}={p:.6}"));
    }
    line
}

fn predict(
    config: Option<&PipelineConfig>,
    text: Option<String>,
    file: Option<PathBuf>,
    model_file: Option<PathBuf>,
    json: bool,
) -> Result<(), Failure> {
    let model: Classifier = match &model_file {
        Some(path) => load_model(path)?,
        None => model_from_str(DEMO_MODEL)?,
    };
    let normalizer = match config {
        Some(c) => pipeline::normalizer(c, None)?,
        None => Normalizer::default(),
    };
    let inputs: Vec<(String, String)> = match (text, file) {
        (Some(t), _) => vec![("text".into(), t)],
        (None, Some(path)) => fs::read_to_string(&path)
            .map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (format!("line{}", i + 1), l.to_string()))
            .collect(),
        (None, None) => return Err(Failure::Usage("pass --text or --file".into())),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (id, text) in inputs {
        let doc = normalizer.clean(id.clone(), text);
        let p = model.predict(&doc);
        let line = if json {
            let dist: BTreeMap<&str, f64> = Label::ALL.iter().map(|l| l.as_str()).zip(p.distribution).collect();
            serde_json::json!({"id": id, "label": p.label, "distribution": dist}).to_string()
        } else {
            format_prediction(p.label, &p.distribution)
        };
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    fs::write(path, bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
    }
    Ok(())
}

fn serve(config: &PipelineConfig, import_pool: bool) -> Result<(), Failure> {
    let mut annotators = pipeline::load_annotators(config)?;
    let issued = amhate_server::issue_tokens(&mut annotators);
    let dir = config.output.dir.join("serve");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(pipeline::CONFIG_FILE), config.to_toml())?;
    let tokens: BTreeMap<&str, &str> = annotators
        .iter()
        .filter_map(|a| Some((a.id.as_str(), a.token.as_deref()?)))
        .collect();
    write_private(
        &dir.join("tokens.json"),
        serde_json::to_string_pretty(&tokens).expect("tokens").as_bytes(),
    )?;
    if !issued.is_empty() {
        log::info!(
            "issued {} bearer tokens, see {}",
            issued.len(),
            dir.join("tokens.json").display()
        );
    }

    let service = pipeline::annotation_service(config, annotators)?;
    if import_pool {
        match service.import_file(config.pool_path()) {
            Ok(s) => log::info!("imported {} tasks as {}", s.tasks, s.dataset_id),
            Err(ServiceError::Conflict(m)) => log::info!("pool not imported: {m}"),
            Err(e) => return Err(e.into()),
        }
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.annotation.bind).await?;
        amhate_server::serve(listener, Arc::new(service)).await
    })?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Predict {
            text,
            file,
            model_file,
            json,
        } => {
            let config = cli.config.is_some().then(|| load_config(&cli)).transpose()?;
            predict(config.as_ref(), text.clone(), file.clone(), model_file.clone(), *json)
        }
        command => {
            let config = load_config(&cli)?;
            match command {
                Command::Ingest => {
                    let s = pipeline::ingest(&config)?;
                    log::info!("{} posts kept of {} fetched", s.posts, s.fetched);
                }
                Command::Filter => {
                    let s = pipeline::filter(&config)?;
                    log::info!("{} posts in the candidate pool of {}", s.pool, s.input);
                }
                Command::Serve { import_pool } => serve(&config, *import_pool)?,
                Command::ExportGold => {
                    let s = pipeline::export_gold(&config)?;
                    log::info!("{} gold records from {} datasets", s.records, s.datasets);
                }
                Command::Train { model } => {
                    let s = pipeline::train(&config, *model)?;
                    log::info!("trained {} on {} examples", s.model, s.balanced_examples);
                }
                Command::Evaluate { model } => {
                    let kinds = model.map_or(ModelKind::ALL.to_vec(), |k| vec![k]);
                    for kind in kinds {
                        let r = pipeline::evaluate(&config, kind)?;
                        eprint!("{}", r.to_text());
                    }
                }
                Command::Compare => eprint!("{}", pipeline::compare(&config)?.to_text()),
                Command::Synth => {
                    let files = pipeline::synth(&config)?;
                    log::info!("synthetic corpus written to {}", files.posts.display());
                }
                Command::Benchmark => {
                    let b = pipeline::benchmark(&config)?;
                    log::info!(
                        "{} gold documents, annotator kappa {:.3}",
                        b.gold.records,
                        b.agreement.kappa
                    );
                    eprint!("{}", b.comparison.to_text());
                }
                Command::ResolveConfig => print!("{}", config.to_toml()),
                Command::Predict { .. } => unreachable!("handled above"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("amhate: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("amhate: {msg}");
            ExitCode::from(1)
        }
    }
}
