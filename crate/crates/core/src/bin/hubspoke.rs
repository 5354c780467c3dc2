use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hubspoke::apps::Registry;
use hubspoke::config::HubConfig;
use hubspoke::gateway::{run_repl, Gateway};

#[derive(Parser)]
#[command(name = "hubspoke", about = "Assistant runtime with one isolated process per app")]
struct Cli {
    /// Hub configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Install an app from the built-in store; repeatable.
    #[arg(long = "install", global = true)]
    install: Vec<String>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Terminal chat with inline permission prompts (the default).
    Chat,
    /// Local HTTP and event-stream API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
    },
}

fn config(cli: &Cli) -> Result<HubConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => HubConfig::load(p).map_err(|e| e.to_string())?,
        None => HubConfig::default(),
    };
    for app in &cli.install {
        if !cfg.installed.contains(app) {
            cfg.installed.push(app.clone());
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), String> {
    let cfg = config(&cli)?;
    match cli.command.unwrap_or(Command::Chat) {
        Command::Chat => {
            let input = Box::new(BufReader::new(std::io::stdin()));
            run_repl(cfg, Registry::builtin(), input, Box::new(std::io::stdout())).map_err(|e| e.to_string())
        }
        Command::Serve { bind } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| format!("cannot bind {bind}: {e}"))?;
                let gateway = Gateway::start(cfg).map_err(|e| e.to_string())?;
                log::info!("listening on {bind}");
                eprintln!("listening on http://{}", listener.local_addr().map_err(|e| e.to_string())?);
                gateway.serve(listener).await.map_err(|e| e.to_string())
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hubspoke: {e}");
            ExitCode::FAILURE
        }
    }
}
