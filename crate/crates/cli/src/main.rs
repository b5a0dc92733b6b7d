//! Command-line front end for the two-stage trial engine.
//!
//! Three subcommands:
//! - `trial`    — run individual trials and print one JSON object each;
//! - `simulate` — run simulation cells (from flags and/or a config file)
//!   and report rejection rates as a table and optional CSV;
//! - `grid`     — sweep one design over the built-in effect-shift grid.
//!
//! Exit codes: 0 success, 1 partial failure (some replicates or cells
//! produced no usable result; completed rows are still written), 2 bad
//! invocation or config.

mod cells;
mod config;
mod json;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use cartrial_core::{run_trial, simulate, SeedTree};
use clap::{Args, Parser, Subcommand};

use cells::{cell_seed, CellSettings, ResolvedCell};
use report::{build_row, render_table, write_csv, Row};

#[derive(Parser)]
#[command(
    name = "cartrial",
    version,
    about = "Two-stage adaptive trial simulator under covariate-adaptive randomization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more single trials and print each outcome as a JSON line.
    Trial(TrialArgs),
    /// Estimate rejection rates over simulation cells.
    Simulate(SimulateArgs),
    /// Sweep one design over the built-in grid of effect-shift pairs.
    Grid(GridArgs),
}

/// Design settings shared by every subcommand. Unset flags fall back to the
/// config file (for `simulate`) and then to the stock design.
#[derive(Args, Clone, Default)]
struct DesignFlags {
    /// Data-generating process: m1, m2, or aa
    #[arg(long)]
    dgp: Option<String>,
    /// Adjustment set of the working model: a0, a1, or a2
    #[arg(long)]
    model: Option<String>,
    /// Randomization scheme: cr, strpb, ps, or hh
    #[arg(long)]
    scheme: Option<String>,
    /// Variance flavor for inference: conv or robust
    #[arg(long)]
    test: Option<String>,
    /// Effect metric: logrr, lor, or ate
    #[arg(long)]
    metric: Option<String>,
    /// Stage-1 sample size
    #[arg(long)]
    n1: Option<usize>,
    /// Stage-2 sample size
    #[arg(long)]
    n2: Option<usize>,
    /// Bootstrap replicates for the randomization-design variance
    #[arg(long)]
    bootstrap: Option<usize>,
    /// One-sided significance level
    #[arg(long)]
    alpha: Option<f64>,
    /// Block size for stratified permuted blocks
    #[arg(long)]
    block: Option<usize>,
    /// Biased-coin probability for the minimization schemes
    #[arg(long)]
    coin: Option<f64>,
    /// Stage-1 winner rule: maxw or maxd
    #[arg(long)]
    selection: Option<String>,
}

#[derive(Args, Clone, Default)]
struct EffectFlags {
    /// Effect shift of treatment 1
    #[arg(long)]
    iota1: Option<f64>,
    /// Effect shift of treatment 2
    #[arg(long)]
    iota2: Option<f64>,
}

impl DesignFlags {
    fn apply(&self, s: &mut CellSettings) {
        s.dgp = self.dgp.clone().or(s.dgp.take());
        s.model = self.model.clone().or(s.model.take());
        s.scheme = self.scheme.clone().or(s.scheme.take());
        s.test = self.test.clone().or(s.test.take());
        s.metric = self.metric.clone().or(s.metric.take());
        s.n1 = self.n1.or(s.n1);
        s.n2 = self.n2.or(s.n2);
        s.bootstrap = self.bootstrap.or(s.bootstrap);
        s.alpha = self.alpha.or(s.alpha);
        s.block = self.block.or(s.block);
        s.coin = self.coin.or(s.coin);
        s.selection = self.selection.clone().or(s.selection.take());
    }
}

impl EffectFlags {
    fn apply(&self, s: &mut CellSettings) {
        s.iota1 = self.iota1.or(s.iota1);
        s.iota2 = self.iota2.or(s.iota2);
    }
}

#[derive(Args)]
struct TrialArgs {
    #[command(flatten)]
    design: DesignFlags,
    #[command(flatten)]
    effects: EffectFlags,
    /// Master seed of the replicate stream
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of trials to run
    #[arg(long, default_value_t = 1)]
    reps: u64,
    /// Index of the first replicate (to replay a slice of a larger run)
    #[arg(long, default_value_t = 0)]
    rep: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file with [defaults] and [cell] sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    design: DesignFlags,
    #[command(flatten)]
    effects: EffectFlags,
    /// Replicates per cell
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; each cell derives its own from this and its identity
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (the table always prints to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    design: DesignFlags,
    /// Replicates per grid point
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; each grid point derives its own from this and its identity
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path (the table always prints to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Effect-shift pairs swept by `grid`: the null plus ten ascending
/// alternatives where treatment 2 leads treatment 1 by 0.1.
const EFFECT_GRID: [(f64, f64); 11] = [
    (0.0, 0.0),
    (0.0, 0.1),
    (0.1, 0.2),
    (0.2, 0.3),
    (0.3, 0.4),
    (0.4, 0.5),
    (0.5, 0.6),
    (0.6, 0.7),
    (0.7, 0.8),
    (0.8, 0.9),
    (0.9, 1.0),
];

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Trial(args) => cmd_trial(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Grid(args) => cmd_grid(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

/// Print one line to stdout. Returns false when the reader hung up (for
/// example `head` closed the pipe), which callers treat as a clean stop.
fn emit(line: &str) -> bool {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Ok(()) => true,
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => false,
        Err(e) => {
            eprintln!("error: cannot write to stdout: {e}");
            false
        }
    }
}

fn bad_config(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Worker threads: the CARTRIAL_THREADS variable wins, otherwise all
/// available cores.
fn thread_count() -> usize {
    std::env::var("CARTRIAL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(std::num::NonZero::get)
                .unwrap_or(1)
        })
}

fn cmd_trial(args: TrialArgs) -> Result<ExitCode, Failure> {
    let mut settings = CellSettings::default();
    args.design.apply(&mut settings);
    args.effects.apply(&mut settings);
    let cell = settings.resolve().map_err(bad_config)?;

    let tree = SeedTree::new(args.seed);
    let mut failures = 0u64;
    for i in args.rep..args.rep + args.reps {
        let line = match run_trial(&cell.config, &cell.dgp, &tree.replicate(i)) {
            Ok(outcome) => json::outcome_json(i, &outcome).to_string(),
            Err(e) => {
                failures += 1;
                json::failure_json(i, &e.to_string()).to_string()
            }
        };
        if !emit(&line) {
            break;
        }
    }
    Ok(if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Failure> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| bad_config(format!("cannot read {}: {e}", path.display())))?;
            config::parse_config(&text)
                .map_err(|e| bad_config(format!("{}: {e}", path.display())))?
        }
        None => config::RunSpec::default(),
    };

    // A config without [cell] sections, or no config at all, is one cell.
    let raw_cells = if file.cells.is_empty() {
        vec![CellSettings::default()]
    } else {
        file.cells
    };

    let mut cells = Vec::with_capacity(raw_cells.len());
    for (i, raw) in raw_cells.iter().enumerate() {
        let mut merged = file.defaults.overlay(raw);
        args.design.apply(&mut merged);
        args.effects.apply(&mut merged);
        merged.reps = args.reps.or(merged.reps);
        let cell = merged
            .resolve()
            .map_err(|e| bad_config(format!("cell {}: {e}", i + 1)))?;
        cells.push(cell);
    }

    let base_seed = args.seed.or(file.seed).unwrap_or(0);
    let out = args.out.or(file.out);
    run_cells(&cells, base_seed, out.as_deref())
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode, Failure> {
    let mut cells = Vec::with_capacity(EFFECT_GRID.len());
    for (iota1, iota2) in EFFECT_GRID {
        let mut settings = CellSettings::default();
        args.design.apply(&mut settings);
        settings.iota1 = Some(iota1);
        settings.iota2 = Some(iota2);
        settings.reps = args.reps;
        cells.push(settings.resolve().map_err(bad_config)?);
    }
    run_cells(&cells, args.seed, args.out.as_deref())
}

/// Run every cell, print the table, write the CSV. Cells whose replicates
/// all fail are reported on stderr and skipped; completed rows still land.
fn run_cells(
    cells: &[ResolvedCell],
    base_seed: u64,
    out: Option<&std::path::Path>,
) -> Result<ExitCode, Failure> {
    let threads = thread_count();
    let mut rows: Vec<Row> = Vec::with_capacity(cells.len());
    let mut failed = 0usize;

    for cell in cells {
        let seed = cell_seed(base_seed, cell);
        let label = format!(
            "{}/{}/{}/{}/{} iota=({},{})",
            cell.dgp_token,
            cell.model_token,
            cell.scheme_token,
            cell.test_token,
            cell.metric_token,
            cell.iota1,
            cell.iota2
        );
        match simulate(&cell.config, &cell.dgp, cell.reps, threads, seed) {
            Ok(summary) if summary.valid > 0 => rows.push(build_row(cell, seed, &summary)),
            Ok(_) => {
                eprintln!("cell {label}: every replicate failed; row skipped");
                failed += 1;
            }
            Err(e) => {
                eprintln!("cell {label}: {e}; row skipped");
                failed += 1;
            }
        }
    }

    emit(render_table(&rows).trim_end_matches('\n'));
    if let Some(path) = out {
        write_csv(path, &rows).map_err(|e| Failure {
            code: 1,
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        eprintln!("wrote {} rows to {}", rows.len(), path.display());
    }

    Ok(if failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}
