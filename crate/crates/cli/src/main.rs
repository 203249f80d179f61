use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lessonplan_cli::{cmd_batch, cmd_evaluate, cmd_ingest, CliConfig, CliError, IngestArgs};
use lessonplan_core::corpus::{Edition, Level};
use lessonplan_core::generation::PromptTemplate;
use lessonplan_service::{build_providers, serve, OfflineFlags};

#[derive(Parser)]
#[command(name = "lessonplan", version, about = "Textbook-grounded lesson plan generation")]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the built-in hashing embedder instead of the configured provider.
    #[arg(long, global = true)]
    offline_embedder: bool,
    /// Use the deterministic mock LLM instead of the configured provider.
    #[arg(long, global = true)]
    mock_llm: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk, embed and persist one textbook.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        toc: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        level: String,
        #[arg(long, default_value = "student")]
        edition: String,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing store in `--out`.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Generate the plan set for every store.
    Batch {
        #[arg(long)]
        stores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Score rated plans against the rubric.
    Evaluate {
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        rubric: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        stores: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn load_template(config: &CliConfig) -> Result<PromptTemplate, CliError> {
    match &config.service.prompt_template {
        Some(path) => PromptTemplate::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        None => Ok(PromptTemplate::default()),
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let flags = OfflineFlags {
        offline_embedder: cli.offline_embedder,
        mock_llm: cli.mock_llm,
    };
    let providers = |flags: OfflineFlags| {
        build_providers(
            config.service.embedding.as_ref(),
            config.service.llm.as_ref(),
            config.service.offline_embedder_dim,
            flags,
        )
        .map_err(|e| CliError::Input(e.to_string()))
    };

    match cli.command {
        Command::Ingest {
            corpus,
            toc,
            subject,
            level,
            edition,
            out,
            force,
            chunk_size,
            overlap,
        } => {
            let level: Level = level.parse().map_err(CliError::Input)?;
            let edition: Edition = edition.parse().map_err(CliError::Input)?;
            let mut ingest = config.ingest.clone();
            ingest.chunk_size = chunk_size.unwrap_or(ingest.chunk_size);
            ingest.overlap = overlap.unwrap_or(ingest.overlap);
            // Ingest never calls the LLM.
            let providers = providers(OfflineFlags { mock_llm: true, ..flags })?;
            let manifest = cmd_ingest(
                IngestArgs {
                    corpus: &corpus,
                    toc: &toc,
                    subject: &subject,
                    level,
                    edition,
                    out_dir: &out,
                    force,
                    config: &ingest,
                },
                providers.embedder.as_ref(),
            )
            .await?;
            println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
        }
        Command::Batch { stores, out, parallel } => {
            let providers = providers(flags)?;
            let template = load_template(&config)?;
            let stores = stores.unwrap_or_else(|| config.service.store_dir.clone());
            let manifest = cmd_batch(
                &config.batch,
                &config.service.generation,
                &stores,
                &providers,
                &template,
                &out,
                parallel,
            )
            .await?;
            let failures = manifest.failures();
            println!(
                "{} plans, {} failed, written to {}",
                manifest.plans.len(),
                failures,
                out.display()
            );
            if failures > 0 {
                return Err(CliError::Failed(format!("{failures} plan(s) failed; see {}", out.join(lessonplan_cli::BATCH_MANIFEST).display())));
            }
        }
        Command::Evaluate {
            plans,
            ratings,
            rubric,
            out,
        } => {
            let report = cmd_evaluate(&plans, &ratings, rubric.as_deref(), &out)?;
            print!("{}", report.to_text());
        }
        Command::Serve {
            listen,
            stores,
            static_dir,
        } => {
            if let Some(listen) = listen {
                config.service.listen = listen;
            }
            if let Some(stores) = stores {
                config.service.store_dir = stores;
            }
            if static_dir.is_some() {
                config.service.static_dir = static_dir;
            }
            check_dir(&config.service.store_dir)?;
            serve(config.service, flags).await.map_err(|e| CliError::Failed(e.to_string()))?;
        }
    }
    Ok(())
}

fn check_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Input(format!("store directory not found: {}", path.display())))
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
