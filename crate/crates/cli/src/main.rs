use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedcontract::config::{ExperimentConfig, Mode};
use fedcontract::contract::{solve_paper_contract, verify_feasibility, ContractMenu, FeasibilityReport};
use fedcontract::learning::{run_scheme_comparison, Scheme};
use fedcontract::sim::{run_round, RoundSettings};
use fedcontract::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(
    name = "fedcontract",
    version,
    about = "Contract menus for federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long, value_parser = ["analytic", "ml"])]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the menu and write it with its IR/IC report.
    Solve(Common),
    /// Audit an existing menu against the config's types.
    Audit {
        #[arg(long)]
        menu: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Play one contracting round per seed.
    Simulate(Common),
    /// Compare the three payment schemes.
    Compare(Common),
}

/// Failure with the exit status it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl Failure {
    fn validation(error: Error) -> Self {
        Self {
            code: EXIT_VALIDATION,
            error,
        }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config { .. } | Error::LengthMismatch { .. } | Error::Json(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        };
        Self { code, error }
    }
}

type CmdResult = Result<u8, Failure>;

struct Inputs {
    config: ExperimentConfig,
    out: PathBuf,
    seed_override: Option<u64>,
}

fn load(common: &Common) -> Result<Inputs, Failure> {
    let mut config = ExperimentConfig::load(&common.config).map_err(Failure::validation)?;
    if let Some(mode) = &common.mode {
        config.mode = mode.parse::<Mode>().map_err(Failure::validation)?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Inputs {
        config,
        out,
        seed_override: common.seed_override,
    })
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(Error::from)?;
    fs::write(dir.join(name), bytes).map_err(Error::from)?;
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    Ok(text)
}

fn print_report(report: &FeasibilityReport) {
    println!(
        "feasible: {} (tolerance {:e}, min slack {:.6e})",
        report.feasible,
        report.tolerance,
        report.min_slack()
    );
    for c in &report.ir {
        println!(
            "IR type {}: slack {:.6e}{}",
            c.type_index,
            c.slack,
            if c.binds { " (binds)" } else { "" }
        );
    }
    for c in report.ic_violations() {
        println!(
            "violated IC: type {} prefers contract {} by {:.6e}",
            c.type_index, c.contract_index, -c.slack
        );
    }
    for c in report.ir_violations() {
        println!("violated IR: type {} short by {:.6e}", c.type_index, -c.slack);
    }
}

fn solve(common: &Common) -> CmdResult {
    let inputs = load(common)?;
    let cfg = &inputs.config;
    let profile = cfg.profile().map_err(Failure::validation)?;
    let menu = solve_paper_contract(&profile, &cfg.revenue_curve, &cfg.benchmarks)?;
    let report = verify_feasibility(&profile, &menu)?;
    write(&inputs.out, "menu.json", json(&menu)?)?;
    write(&inputs.out, "feasibility.json", json(&report)?)?;
    for it in &menu.items {
        println!(
            "contract {}: f={} R={} M={}",
            it.index, it.fee, it.reward, it.benchmark
        );
    }
    print_report(&report);
    Ok(if report.feasible { 0 } else { EXIT_INFEASIBLE })
}

fn audit(menu_path: &Path, common: &Common) -> CmdResult {
    let inputs = load(common)?;
    let profile = inputs.config.profile().map_err(Failure::validation)?;
    let text = fs::read_to_string(menu_path).map_err(|e| Failure::validation(e.into()))?;
    let menu: ContractMenu = serde_json::from_str(&text).map_err(|e| Failure::validation(e.into()))?;
    let report = verify_feasibility(&profile, &menu)?;
    write(&inputs.out, "feasibility.json", json(&report)?)?;
    print_report(&report);
    Ok(if report.feasible { 0 } else { EXIT_INFEASIBLE })
}

fn simulate(common: &Common) -> CmdResult {
    let inputs = load(common)?;
    let cfg = &inputs.config;
    let profile = cfg.profile().map_err(Failure::validation)?;
    let menu = solve_paper_contract(&profile, &cfg.revenue_curve, &cfg.benchmarks)?;
    for seed in cfg.seeds(inputs.seed_override) {
        let outcome = run_round(
            &profile,
            &menu,
            &cfg.revenue_curve,
            RoundSettings {
                population: cfg.population,
                mode: cfg.round_mode(),
                seed,
                selection: cfg.selection,
            },
        )?;
        let mut clients = Vec::new();
        outcome.write_clients_csv(&mut clients)?;
        write(&inputs.out, &format!("clients_seed{seed}.csv"), clients)?;
        write(&inputs.out, &format!("round_seed{seed}.json"), json(&outcome)?)?;
        println!(
            "seed {seed}: {} participants, {} successes, {} ties, mean server utility {:.6}",
            outcome.participants(),
            outcome.successes(),
            outcome.tie_events.len(),
            outcome.mean_server_utility()
        );
    }
    Ok(0)
}

fn compare(common: &Common) -> CmdResult {
    let inputs = load(common)?;
    let settings = inputs
        .config
        .comparison_settings(inputs.seed_override)
        .map_err(Failure::validation)?;
    let report = run_scheme_comparison(&settings)?;
    let mut rows = Vec::new();
    report.write_csv(&mut rows)?;
    let mut clients = Vec::new();
    report.write_clients_csv(&mut clients)?;
    write(&inputs.out, "scheme_report.csv", rows)?;
    write(&inputs.out, "scheme_clients.csv", clients)?;
    write(&inputs.out, "scheme_summary.json", json(&report.summary)?)?;

    let s = &report.summary;
    println!("mean accuracy over {} seed(s)", s.seeds);
    for &c in &settings.c_values {
        let line: Vec<String> = settings
            .schemes
            .iter()
            .filter_map(|&sch| report.mean_accuracy(c, sch).map(|a| format!("{sch} {a:.4}")))
            .collect();
        println!("c={c}: {}", line.join(", "));
    }
    for o in &s.ordering {
        println!(
            "c={}: {} >= {} >= {} {}",
            o.c,
            Scheme::Contract,
            Scheme::FedAvg,
            Scheme::Flat,
            if o.holds { "holds" } else { "does not hold" }
        );
    }
    if let Some(held) = s.smaller_c_not_worse {
        println!(
            "{} accuracy non-increasing in c: {}",
            Scheme::Contract,
            if held { "holds" } else { "does not hold" }
        );
    }
    if s.degenerate_equal {
        println!(
            "{} and {} are degenerate-equal (one contract among passing clients)",
            Scheme::Contract,
            Scheme::FedAvg
        );
    }
    if let Some(share) = s.low_quality_gap_share {
        println!(
            "below-median quality clients with local > server accuracy: {:.1}%",
            100.0 * share
        );
    }
    println!("note: {}", s.flat_reward_note);
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => solve(c),
        Command::Audit { menu, common } => audit(menu, common),
        Command::Simulate(c) => simulate(c),
        Command::Compare(c) => compare(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
