use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowsmith::api::{AblateRequest, ApiError, ErrorKind, SearchRequest, VerifyRequest};
use flowsmith::runner::{output_dir, write_ablation_outputs, write_search_outputs, SearchOverrides, VerifyBackendKind};
use flowsmith_client::{Client, ClientError};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "flowsmith", version, about = "Workflow search for RTL generation")]
struct Cli {
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Service URL; an embedded server is started when absent.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cooperative search on every task of a config.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma separated task ids.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
    },
    /// Verify one Verilog file against a task bundle.
    Verify(VerifyArgs),
    /// Run the ablation study described by a config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    code: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    level: u8,
    #[arg(long, value_enum, default_value_t = Backend::Builtin)]
    backend: Backend,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Builtin,
    External,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("writing outputs: {0}")]
    Write(std::io::Error),
    #[error("{0}")]
    Client(#[from] ClientError),
    #[error("server: {0}")]
    Server(std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Client(ClientError::Api(e)) => match e.kind {
                ErrorKind::Config | ErrorKind::BadRequest => 2,
                ErrorKind::MissingTool => 3,
                ErrorKind::Task | ErrorKind::Internal => 1,
            },
            CliError::Read { .. } => 2,
            _ => 1,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Config text and the absolute directory its relative paths resolve from.
fn load_config(path: &Path) -> Result<(String, PathBuf), CliError> {
    let raw = read(path)?;
    let base = absolute(path).parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((raw, base))
}

/// Points config errors without a file at the config the user passed.
fn with_file(e: ClientError, path: &Path) -> CliError {
    match e {
        ClientError::Api(ApiError { kind: ErrorKind::Config, file: None, message, line }) => {
            CliError::Client(ClientError::Api(ApiError { kind: ErrorKind::Config, file: Some(path.to_path_buf()), message, line }))
        }
        other => CliError::Client(other),
    }
}

async fn execute(client: &Client, command: Command) -> Result<(), CliError> {
    match command {
        Command::Search { config, seed, tasks } => {
            let (raw, base) = load_config(&config)?;
            let req = SearchRequest { config: raw.clone(), base_dir: base.clone(), overrides: SearchOverrides { seed, tasks } };
            let report = client.search(&req).await.map_err(|e| with_file(e, &config))?;
            let dir = output_dir(&raw, &base).map_err(|e| CliError::Failed(e.to_string()))?;
            write_search_outputs(&report, &dir).map_err(CliError::Write)?;
            print!("{}", report.summary);
            if report.any_failed() {
                return Err(CliError::Failed("one or more tasks failed".into()));
            }
            Ok(())
        }
        Command::Verify(a) => {
            let code = read(&a.code)?;
            let backend = match a.backend {
                Backend::Builtin => VerifyBackendKind::Builtin,
                Backend::External => VerifyBackendKind::External,
            };
            let req = VerifyRequest { code, task_dir: absolute(&a.task), level: a.level, backend };
            let out = client.verify(&req).await?;
            println!("{}", serde_json::to_string_pretty(&out).expect("outcome serializes"));
            if !out.passes(a.level) {
                return Err(CliError::Failed(format!("level {} not reached", a.level)));
            }
            Ok(())
        }
        Command::Ablate { config, seeds } => {
            let (raw, base) = load_config(&config)?;
            let req = AblateRequest { config: raw.clone(), base_dir: base.clone(), seeds };
            let report = client.ablate(&req).await.map_err(|e| with_file(e, &config))?;
            let dir = output_dir(&raw, &base).map_err(|e| CliError::Failed(e.to_string()))?;
            write_ablation_outputs(&report, &dir).map_err(CliError::Write)?;
            print!("{}", report.table());
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled before a client exists"),
    }
}

async fn main_async(cli: Cli) -> Result<(), CliError> {
    if let Command::Serve { addr } = cli.command {
        let (_, serve) = flowsmith_server::bind(addr).await.map_err(CliError::Server)?;
        eprintln!("listening on {addr}");
        return serve.await.map_err(CliError::Server);
    }
    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let (local, serve) = flowsmith_server::bind(([127, 0, 0, 1], 0).into()).await.map_err(CliError::Server)?;
            tokio::spawn(serve);
            Client::new(format!("http://{local}"))
        }
    };
    execute(&client, cli.command).await
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .init();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(main_async(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
