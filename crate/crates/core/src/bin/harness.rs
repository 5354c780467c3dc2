use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hubspoke::harness::{
    measure_overhead, render_attacks, render_bench, render_call_counts, render_overhead, run_all, run_attack, run_benchmark,
    AttackCase, HarnessConfig, Mode, Suite,
};
use hubspoke::llm::BackendSpec;

#[derive(Parser)]
#[command(name = "harness", about = "Functionality benchmarks and attack scenarios in isolated and shared mode")]
struct Cli {
    #[arg(long, default_value_t = 7, global = true)]
    seed: u64,
    /// `sim`, or a TOML file with backend keys (`kind = "remote"`, ...).
    #[arg(long, default_value = "sim", global = true)]
    backend: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark suite.
    Bench {
        suite: String,
        #[arg(long, default_value = "isolated")]
        mode: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one attack scenario.
    Attack {
        case: String,
        #[arg(long, default_value = "isolated")]
        mode: String,
    },
    /// Backend-call counts and per-phase timing of a suite in both modes.
    Overhead { suite: String },
    /// Every suite and case in both modes; writes report.txt,
    /// transcript.jsonl and timing.txt.
    All {
        #[arg(long, default_value = "harness-out")]
        out: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<HarnessConfig, String> {
    let mut cfg = HarnessConfig::new(cli.seed);
    if cli.backend != "sim" {
        let text = std::fs::read_to_string(&cli.backend).map_err(|e| format!("{}: {e}", cli.backend))?;
        cfg.backend = toml::from_str::<BackendSpec>(&text).map_err(|e| format!("{}: {e}", cli.backend))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, String> {
    let cfg = config(&cli)?;
    let mode = |m: &str| Mode::parse(m).ok_or_else(|| format!("unknown mode {m}; use isolated or shared"));
    let suite = |s: &str| Suite::parse(s).ok_or_else(|| format!("unknown suite {s}"));
    match &cli.command {
        Command::Bench { suite: s, mode: m, report } => {
            let r = run_benchmark(suite(s)?, mode(m)?, &cfg);
            let text = render_bench(&r);
            print!("{text}");
            if let Some(path) = report {
                std::fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(r.overall_score == 1.0)
        }
        Command::Attack { case, mode: m } => {
            let c = AttackCase::parse(case).ok_or_else(|| format!("unknown case {case}; use cs1..cs4"))?;
            let v = run_attack(c, mode(m)?, &cfg);
            print!("{}", render_attacks(std::slice::from_ref(&v)));
            Ok(true)
        }
        Command::Overhead { suite: s } => {
            let r = measure_overhead(suite(s)?, &cfg);
            print!("{}{}", render_call_counts(&r), render_overhead(&r));
            Ok(true)
        }
        Command::All { out } => {
            let run = run_all(&cfg);
            std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
            for (name, body) in [("report.txt", &run.report), ("transcript.jsonl", &run.transcript), ("timing.txt", &run.timing)] {
                std::fs::write(out.join(name), body).map_err(|e| format!("{name}: {e}"))?;
            }
            print!("{}{}", run.report, run.timing);
            Ok(run.benches.iter().all(|b| b.overall_score == 1.0))
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("harness: {e}");
            ExitCode::from(2)
        }
    }
}
