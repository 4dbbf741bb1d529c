//! `fsp`: run masked distributed optimization experiments and privacy audits.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid config or scenario,
//! 3 numeric failure, 4 self-test check failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsp_core::harness::{
    cmd_graph_report, cmd_optimize, cmd_privacy_audit, cmd_selftest, pretty_json, Fault, LoadedConfig, RunOptions,
    SelftestOptions,
};
use fsp_core::Error;

const SELFTEST_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "fsp", version, about = "Zero-sum obfuscated distributed optimization: simulation and privacy audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Mask the costs, run DGD on masked and original costs, write traces.
    Optimize(Common),
    /// Monte Carlo divergence between the coalition's views of two scenarios.
    PrivacyAudit {
        #[command(flatten)]
        common: Common,
        /// Trials per scenario; overrides the config.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Vertex connectivity, algebraic connectivity and worst-case bounds.
    GraphReport(Common),
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trials per scenario for the bound check.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Perturb one mask so the zero-sum check must fail.
        #[arg(long, hide = true)]
        corrupt_mask: bool,
    },
}

fn options(common: &Common, trials: Option<usize>) -> RunOptions {
    RunOptions { trials, seed: common.seed, out: common.out.clone() }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Optimize(common) => {
            let (summary, _) = cmd_optimize(&LoadedConfig::load(&common.config)?, &options(&common, None))?;
            print(&summary);
        }
        Command::PrivacyAudit { common, trials } => {
            let (report, _) = cmd_privacy_audit(&LoadedConfig::load(&common.config)?, &options(&common, trials))?;
            print(&report.to_json());
        }
        Command::GraphReport(common) => {
            let (report, _) = cmd_graph_report(&LoadedConfig::load(&common.config)?, &options(&common, None))?;
            print(&report);
        }
        Command::Selftest { seed, trials, out, corrupt_mask } => {
            let fault = corrupt_mask.then_some(Fault::CorruptMask);
            let report = cmd_selftest(&SelftestOptions { seed, trials, fault }, out.as_deref())?;
            for check in &report.checks {
                println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
            }
            if !report.passed() {
                return Ok(SELFTEST_FAILED);
            }
        }
    }
    Ok(0)
}

fn print(value: &serde_json::Value) {
    print!("{}", String::from_utf8_lossy(&pretty_json(value)));
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
