//! Command-line scenario runner for the SLSP simulator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use slsp::scenario::{bundled, run_scenario, ExitStatus, RunOptions, RunReport, Scenario, ScenarioError, BUNDLED};
use slsp::time::SimDuration;

#[derive(Parser)]
#[command(name = "slsp", version, about = "Secure link-state routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a TOML file or a bundled scenario name).
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds; overrides the scenario's duration.
        #[arg(long)]
        duration: Option<f64>,
        /// Write JSONL metrics (per-node samples, then a summary) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check protocol invariants while running.
        #[arg(long)]
        check: bool,
    },
    /// Run one scenario under many seeds on a thread pool.
    Batch {
        scenario: String,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        from: u64,
        /// Number of seeds.
        #[arg(long, default_value_t = 8)]
        count: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        /// Directory for one `seed-<n>.jsonl` file per run.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        check: bool,
    },
    /// List bundled scenarios.
    List,
    /// Print a bundled scenario's TOML.
    Show { name: String },
    /// Print a scenario skeleton for a generated topology.
    Generate {
        #[arg(value_enum)]
        kind: GenKind,
        /// Node count (line, random).
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        /// Chords added on top of a random spanning tree.
        #[arg(long, default_value_t = 5)]
        extra_edges: usize,
        #[arg(long, default_value_t = 2)]
        radius: u8,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "generated")]
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Line,
    Grid,
    Random,
}

fn load(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if path.exists() {
        Scenario::from_file(path)
    } else if bundled(arg).is_some() {
        Scenario::from_bundled(arg)
    } else {
        Err(ScenarioError::NoLocation {
            origin: arg.to_owned(),
            message: "no such file and no bundled scenario by that name (see `slsp list`)".into(),
        })
    }
}

fn duration(secs: Option<f64>) -> Result<Option<SimDuration>> {
    match secs {
        Some(s) if !(s.is_finite() && s > 0.0) => bail!("--duration must be a positive number of seconds"),
        Some(s) => Ok(Some(SimDuration::from_secs_f64(s))),
        None => Ok(None),
    }
}

fn report_line(r: &RunReport) -> String {
    serde_json::to_string(&r.summary).expect("summary serializes")
}

fn print_problems(r: &RunReport, prefix: &str) {
    for v in &r.violations {
        eprintln!("{prefix}invariant violation: {v}");
    }
    for f in &r.failures {
        eprintln!("{prefix}expectation failed: {f}");
    }
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn cmd_run(scenario: &str, seed: Option<u64>, dur: Option<f64>, out: Option<PathBuf>, check: bool) -> Result<ExitCode> {
    let sc = match load(scenario) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit(ExitStatus::ScenarioError));
        }
    };
    let opts = RunOptions {
        seed,
        duration: duration(dur)?,
        check,
        out,
        ..RunOptions::default()
    };
    let r = match run_scenario(&sc, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit(ExitStatus::ScenarioError));
        }
    };
    println!("{}", report_line(&r));
    print_problems(&r, "");
    Ok(exit(r.status))
}

#[allow(clippy::too_many_arguments)]
fn cmd_batch(
    scenario: &str,
    from: u64,
    count: u64,
    threads: Option<usize>,
    dur: Option<f64>,
    out_dir: Option<PathBuf>,
    check: bool,
) -> Result<ExitCode> {
    let sc = match load(scenario) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit(ExitStatus::ScenarioError));
        }
    };
    let dur = duration(dur)?;
    if let Some(d) = &out_dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let threads = threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let seeds: Vec<u64> = (from..from.saturating_add(count)).collect();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<(u64, Result<RunReport, ScenarioError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads.min(seeds.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&seed) = seeds.get(i) else { break };
                let opts = RunOptions {
                    seed: Some(seed),
                    duration: dur,
                    check,
                    out: out_dir.as_ref().map(|d| d.join(format!("seed-{seed}.jsonl"))),
                    ..RunOptions::default()
                };
                let r = run_scenario(&sc, &opts);
                results.lock().unwrap().push((seed, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(seed, _)| *seed);
    let mut worst = ExitStatus::Ok;
    for (seed, r) in results {
        match r {
            Ok(r) => {
                println!("{}", report_line(&r));
                print_problems(&r, &format!("seed {seed}: "));
                if r.status.code() > worst.code() {
                    worst = r.status;
                }
            }
            Err(e) => {
                eprintln!("seed {seed}: error: {e}");
                worst = ExitStatus::ScenarioError;
            }
        }
    }
    Ok(exit(worst))
}

fn cmd_list() -> Result<ExitCode> {
    for (name, _) in BUNDLED {
        let sc = Scenario::from_bundled(name)?;
        println!("{name:<20} {}", sc.description);
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn generate(
    kind: GenKind,
    nodes: usize,
    rows: usize,
    cols: usize,
    extra_edges: usize,
    radius: u8,
    duration: f64,
    seed: u64,
    name: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name = {name:?}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "duration = {duration:?}\n");
    let _ = writeln!(s, "[topology]");
    match kind {
        GenKind::Line => {
            let _ = writeln!(s, "kind = \"line\"\nnodes = {nodes}");
        }
        GenKind::Grid => {
            let _ = writeln!(s, "kind = \"grid\"\nrows = {rows}\ncols = {cols}");
        }
        GenKind::Random => {
            let _ = writeln!(s, "kind = \"random\"\nnodes = {nodes}\nextra_edges = {extra_edges}");
        }
    }
    let _ = writeln!(s, "\n[node]\nradius = {radius}");
    let _ = writeln!(s, "\n[expect]\nmin_precision = 1.0");
    s
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            scenario,
            seed,
            duration,
            out,
            check,
        } => cmd_run(&scenario, seed, duration, out, check),
        Command::Batch {
            scenario,
            from,
            count,
            threads,
            duration,
            out_dir,
            check,
        } => cmd_batch(&scenario, from, count, threads, duration, out_dir, check),
        Command::List => cmd_list(),
        Command::Show { name } => match bundled(&name) {
            Some(src) => {
                print!("{src}");
                Ok(ExitCode::SUCCESS)
            }
            None => {
                eprintln!("error: no bundled scenario named {name:?}");
                Ok(exit(ExitStatus::ScenarioError))
            }
        },
        Command::Generate {
            kind,
            nodes,
            rows,
            cols,
            extra_edges,
            radius,
            duration,
            seed,
            name,
        } => {
            print!("{}", generate(kind, nodes, rows, cols, extra_edges, radius, duration, seed, &name));
            Ok(ExitCode::SUCCESS)
        }
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit(ExitStatus::ScenarioError)
        }
    }
}
