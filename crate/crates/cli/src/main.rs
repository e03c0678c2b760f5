//! `psafe` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid model, 3 IO or parse failure,
//! 4 infeasible problem or invalid policy.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "psafe", version, about = "Planning and safe learning for stopped MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and report safe actions and the proxy set.
    Validate(ModelArgs),
    /// Solve for the optimal p-safe policy of a known model.
    Plan(PlanArgs),
    /// Build the safe baseline policy from prior knowledge.
    Baseline(BaselineArgs),
    /// Run the learning loop over one or more seeds.
    Learn(LearnArgs),
    /// Exact and Monte-Carlo evaluation of a policy file.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Override the model's stopping-time bound.
    #[arg(long = "horizon-bound")]
    pub horizon_bound: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial state id; defaults to the first taboo state.
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long)]
    pub p: f64,
    /// Directory for `policy.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long)]
    pub p: f64,
    /// Safe-action weight; defaults to the least admissible value.
    #[arg(long)]
    pub q: Option<f64>,
    /// Directory for `baseline.json`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0.01)]
    pub w: f64,
    #[arg(long)]
    pub episodes: usize,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for the seed sweep; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also run every seed with the baseline applied on all of `H`.
    #[arg(long = "compare-proxy")]
    pub compare_proxy: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub policy: PathBuf,
    /// Safety budget to check against, if any.
    #[arg(long)]
    pub p: Option<f64>,
    /// Monte-Carlo episodes.
    #[arg(long, default_value_t = 100_000)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Validate(args) => commands::validate(args),
        Command::Plan(args) => commands::plan(args),
        Command::Baseline(args) => commands::baseline(args),
        Command::Learn(args) => commands::learn(args),
        Command::Evaluate(args) => commands::evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use commands::CliError;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seeds_split_on_commas() {
        let cli = Cli::try_parse_from([
            "psafe",
            "learn",
            "--model",
            "m.json",
            "--p",
            "0.5",
            "--episodes",
            "3",
            "--seeds",
            "4,5,9",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Learn(args) = cli.command else { panic!("wrong command") };
        assert_eq!(args.seeds, vec![4, 5, 9]);
        assert!(!args.compare_proxy);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::Usage(String::new()).code(), 1);
        assert_eq!(CliError::Model(String::new()).code(), 2);
        assert_eq!(CliError::Io(String::new()).code(), 3);
        assert_eq!(CliError::Infeasible(String::new()).code(), 4);
    }
}
