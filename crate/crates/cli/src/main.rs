//! `stair-sim`: run, sweep and audit simulated STAIR networks.
//!
//! Exit codes: 0 success, 2 usage / invalid config / malformed export,
//! 3 invariant violation, 4 audit findings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stair_core::export::{parse_rewards, RunExport, REWARDS_FILE};
use stair_core::money::Amount;
use stair_core::observer::post_validate;
use stair_core::scenario::{parse_override, Scenario, ScenarioConfig};
use stair_core::sim::{run_scenario, RunReport};

const EXIT_USAGE: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_FINDINGS: u8 = 4;

#[derive(Parser)]
#[command(name = "stair-sim", version, about = "Deterministic STAIR consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Kv,
    Text,
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set max_ticks=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and optionally write its exports.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run a scenario once per seed and summarise.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `A..B` (B excluded) or a comma-separated list.
        #[arg(long)]
        seeds: String,
        /// Each seed's exports go to `<out>/seed-<n>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Post-validate an exported run directory.
    Audit {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Summarise the reward statements of a run directory.
    RewardsReport { dir: PathBuf },
    /// Parse and validate a scenario without running it.
    ValidateConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

struct Failure(u8, String);

fn usage(msg: impl Into<String>) -> Failure {
    Failure(EXIT_USAGE, msg.into())
}

fn load(cfg: &ConfigArgs, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(&cfg.config).map_err(|e| usage(format!("{}: {e}", cfg.config.display())))?;
    let mut sets = cfg.sets.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>().map_err(|e| usage(e.to_string()))?;
    if let Some(s) = seed {
        sets.push(("seed".into(), (s as i64).into()));
    }
    ScenarioConfig::from_toml(&text, &sets)
        .and_then(|c| c.resolve())
        .map_err(|e| usage(e.to_string()))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || usage(format!("bad seed list `{s}`"));
    let seeds: Vec<u64> = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            (a..b).collect()
        }
        None => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?,
    };
    if seeds.is_empty() {
        return Err(usage("empty seed list"));
    }
    Ok(seeds)
}

fn run_one(scenario: &Scenario, out: Option<&Path>) -> Result<RunReport, Failure> {
    let outcome = run_scenario(scenario);
    if let Some(dir) = out {
        outcome.export.write_dir(dir).map_err(|e| usage(e.to_string()))?;
    }
    Ok(outcome.report)
}

fn print_report(report: &RunReport, format: Format) {
    match format {
        Format::Kv => print!("{}", report.to_kv()),
        Format::Text => print!("{}", report.to_text()),
    }
}

fn cmd_run(cfg: &ConfigArgs, seed: Option<u64>, out: Option<&Path>, format: Format) -> Result<(), Failure> {
    let scenario = load(cfg, seed)?;
    let report = run_one(&scenario, out)?;
    print_report(&report, format);
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    if !report.ok() {
        return Err(Failure(EXIT_VIOLATION, format!("{} invariant violation(s)", report.violations.len())));
    }
    Ok(())
}

fn cmd_sweep(cfg: &ConfigArgs, seeds: &str, out: Option<&Path>, format: Format) -> Result<(), Failure> {
    let seeds = parse_seeds(seeds)?;
    let scenarios = seeds.iter().map(|s| load(cfg, Some(*s))).collect::<Result<Vec<_>, _>>()?;
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(scenarios.len());
    let mut results: Vec<Option<Result<RunReport, Failure>>> = (0..scenarios.len()).map(|_| None).collect();
    thread::scope(|scope| {
        for (w, slots) in results.chunks_mut(scenarios.len().div_ceil(workers)).enumerate() {
            let base = w * scenarios.len().div_ceil(workers);
            let scenarios = &scenarios;
            scope.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    let s = &scenarios[base + j];
                    let dir = out.map(|o| o.join(format!("seed-{}", s.config.seed)));
                    *slot = Some(run_one(s, dir.as_deref()));
                }
            });
        }
    });
    let mut passed = 0;
    for (seed, r) in seeds.iter().zip(results) {
        let report = r.expect("every seed ran")?;
        passed += report.ok() as usize;
        match format {
            Format::Kv => println!(
                "seed={seed}\tok={}\tfinalized={}\tframes_decided={}\tlag.p50={}\tlag.p90={}\tlag.p99={}\tlag.max={}\tmessages={}\tdropped={}",
                report.ok(),
                report.finalized,
                report.frames_decided,
                report.lag.p50,
                report.lag.p90,
                report.lag.p99,
                report.lag.max,
                report.messages.values().sum::<u64>(),
                report.dropped
            ),
            Format::Text => println!(
                "{seed:>6}  {:<4}  finalized {:>6}  lag p50/p90/p99 {}/{}/{}  messages {}",
                if report.ok() { "pass" } else { "FAIL" },
                report.finalized,
                report.lag.p50,
                report.lag.p90,
                report.lag.p99,
                report.messages.values().sum::<u64>()
            ),
        }
        for v in &report.violations {
            eprintln!("seed {seed}: violation: {v}");
        }
    }
    println!("passed={passed}/{}", seeds.len());
    if passed != seeds.len() {
        return Err(Failure(EXIT_VIOLATION, format!("{} seed(s) failed", seeds.len() - passed)));
    }
    Ok(())
}

fn cmd_audit(dir: &Path, format: Format) -> Result<(), Failure> {
    let export = RunExport::read_dir(dir).map_err(|e| usage(e.to_string()))?;
    let report = post_validate(&export);
    match format {
        Format::Kv => print!("{}", report.to_text()),
        Format::Text => {
            println!("{} blocks scanned, {} findings", report.blocks_scanned, report.findings.len());
            for f in &report.findings {
                println!("{:<20} {}  [{}]", f.kind.to_string(), f.evidence, f.subjects.join(", "));
            }
        }
    }
    if !report.is_clean() {
        return Err(Failure(EXIT_FINDINGS, format!("{} finding(s)", report.findings.len())));
    }
    Ok(())
}

fn cmd_rewards(dir: &Path) -> Result<(), Failure> {
    let path = dir.join(REWARDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let statements = parse_rewards(&text).map_err(|e| usage(e.to_string()))?;
    let mut totals: BTreeMap<String, Amount> = BTreeMap::new();
    let mut broken = 0;
    for (i, s) in statements.iter().enumerate() {
        let conserves = s.total_paid() + s.spv_credit + s.remainder == s.pool + s.fees_collected;
        broken += !conserves as usize;
        println!(
            "statement.{i}\tday={}\tpool={}\tfees={}\tpaid={}\tspv={}\tremainder={}\tconserves={conserves}",
            s.day,
            s.pool,
            s.fees_collected,
            s.total_paid(),
            s.spv_credit,
            s.remainder
        );
        for (a, c) in &s.credits {
            *totals.entry(a.to_string()).or_default() += c.paid();
        }
        *totals.entry("SPV".into()).or_default() += s.spv_credit;
    }
    for (a, t) in totals {
        println!("total.{a}={t}");
    }
    if broken > 0 {
        return Err(Failure(EXIT_FINDINGS, format!("{broken} statement(s) fail conservation")));
    }
    Ok(())
}

fn cmd_validate(cfg: &ConfigArgs) -> Result<(), Failure> {
    let s = load(cfg, None)?;
    let ledger = s.initial_ledger();
    println!("valid=true");
    println!("participants={}", s.participants().len());
    for p in s.participants() {
        println!(
            "node.{p}\trole={}\tpower={}\tfault={}",
            ledger.role(p).map(|r| r.to_string()).unwrap_or_default(),
            ledger.power(p).unwrap_or(0),
            s.fault_of(p)
        );
    }
    println!("total_power={}", s.participants().iter().map(|p| ledger.power(*p).unwrap_or(0)).sum::<u64>());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { cfg, seed, out, format } => cmd_run(cfg, *seed, out.as_deref(), *format),
        Command::Sweep { cfg, seeds, out, format } => cmd_sweep(cfg, seeds, out.as_deref(), *format),
        Command::Audit { dir, format } => cmd_audit(dir, *format),
        Command::RewardsReport { dir } => cmd_rewards(dir),
        Command::ValidateConfig { cfg } => cmd_validate(cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("stair-sim: {msg}");
            ExitCode::from(code)
        }
    }
}
