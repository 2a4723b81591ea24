//! `copilot` command-line entry point.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use copilot_core::clock::MonotonicClock;
use copilot_core::config::ServiceConfig;
use copilot_core::runtime::Runtime;
use copilot_core::script::{run_script, Script};
use copilot_server::{probe_loop, router, AppState};
use tracing::Level;

#[derive(Parser)]
#[command(name = "copilot", version, about = "Headset copilot service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Use in-process mocks for every provider.
        #[arg(long)]
        mock_all: bool,
    },
    /// Run scenario scripts and print a transcript.
    Run {
        #[arg(required = true)]
        scripts: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mock_all: bool,
        /// Data directory; a fresh temporary one by default.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, mock_all: bool) -> Result<ServiceConfig, String> {
    let mut config = match path {
        Some(p) => ServiceConfig::load(p).map_err(|e| e.to_string())?,
        None => ServiceConfig::default(),
    };
    if mock_all {
        config.force_mocks();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve {
            config,
            listen,
            mock_all,
        } => serve(config, listen, mock_all),
        Command::Run {
            scripts,
            config,
            mock_all,
            data_dir,
        } => run(&scripts, config.as_deref(), mock_all, data_dir),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn serve(config_path: Option<PathBuf>, listen: Option<SocketAddr>, mock_all: bool) -> Result<ExitCode, String> {
    tracing_subscriber::fmt().with_max_level(Level::INFO).with_writer(std::io::stderr).init();
    let config = load_config(config_path.as_deref(), mock_all)?;
    let addr: SocketAddr = match listen {
        Some(a) => a,
        None => config.listen.parse().map_err(|e| format!("listen address `{}`: {e}", config.listen))?,
    };
    let runtime = Arc::new(Runtime::new(config, Arc::new(MonotonicClock::new())).map_err(|e| e.to_string())?);
    let state = AppState {
        runtime: runtime.clone(),
        config_path,
        mock_all,
    };
    let tokio = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    tokio.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("bind {addr}: {e}"))?;
        let local = listener.local_addr().map_err(|e| e.to_string())?;
        tracing::info!(%local, "listening");
        println!("listening on http://{local}");
        let prober = tokio::spawn(probe_loop(runtime));
        let served = axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        prober.abort();
        served.map_err(|e| e.to_string())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn run(scripts: &[PathBuf], config_path: Option<&Path>, mock_all: bool, data_dir: Option<PathBuf>) -> Result<ExitCode, String> {
    tracing_subscriber::fmt().with_max_level(Level::WARN).with_writer(std::io::stderr).init();
    let mut config = load_config(config_path, mock_all)?;
    config.data_dir = match data_dir {
        Some(d) => d,
        None => tempfile::Builder::new()
            .prefix("copilot-run-")
            .tempdir()
            .map_err(|e| e.to_string())?
            .keep(),
    };
    let parsed = scripts
        .iter()
        .map(|p| Script::load(p).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let runtime = Runtime::new(config, Arc::new(MonotonicClock::new())).map_err(|e| e.to_string())?;
    println!("data directory: {}", runtime.config().data_dir.display());
    let mut failed = 0;
    for script in &parsed {
        let report = run_script(&runtime, script);
        println!("== {}", report.name);
        for step in &report.steps {
            let mark = if step.ok { "ok  " } else { "FAIL" };
            println!("{mark} {:>4}  {}", step.line, step.text);
            println!("            {}", step.message);
        }
        let bad = report.failures().count();
        println!(
            "== {}: {}",
            report.name,
            if bad == 0 { "passed".to_string() } else { format!("{bad} step(s) failed") }
        );
        if bad > 0 {
            failed += 1;
        }
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
