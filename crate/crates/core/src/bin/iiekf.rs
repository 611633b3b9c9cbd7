use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use nalgebra::DMatrix;
use serde::Serialize;

use iiekf::bench;
use iiekf::crane::ScenarioConfig;
use iiekf::filters::GnConfig;
use iiekf::solver::{self, LoadedSystem, SolverError, SystemFile};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INCONSISTENT: u8 = 3;

#[derive(Parser)]
#[command(name = "iiekf", version, about = "Iterated invariant EKF benchmarks and equation solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a crane Monte Carlo scenario and write CSV/JSON results.
    Scenario {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        id: u8,
        /// Number of simulations (overrides the config).
        #[arg(long)]
        sims: Option<usize>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// TOML file overriding scenario defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Solve a system of equations `χ d = y` read from a TOML file.
    Solve {
        #[arg(long, value_enum)]
        group: GroupArg,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupArg {
    So3,
    Se3,
    Se23,
    Linear,
}

impl GroupArg {
    fn name(self) -> &'static str {
        match self {
            GroupArg::So3 => "so3",
            GroupArg::Se3 => "se3",
            GroupArg::Se23 => "se23",
            GroupArg::Linear => "linear",
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn run_scenario(
    id: u8,
    sims: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), Failure> {
    let config_err = |e: &dyn std::fmt::Display| Failure::new(EXIT_CONFIG, e);
    let mut cfg = ScenarioConfig::scenario(id).map_err(|e| config_err(&e))?;
    if let Some(path) = config {
        cfg = cfg.with_overrides_file(path).map_err(|e| config_err(&e))?;
    }
    if let Some(n) = sims {
        cfg.n_sims = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| config_err(&e))?;
    let manifest = bench::run_scenario(&cfg, out, workers).map_err(|e| {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_FAILURE };
        Failure::new(code, e)
    })?;
    println!("scenario {} finished; outputs in {}", manifest.scenario_id, out.display());
    for (role, file) in &manifest.outputs {
        println!("  {role:>8}: {file}");
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveReport {
    group: String,
    solution: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    rank_trace: Vec<usize>,
    iterations: Vec<usize>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn solver_failure(e: SolverError) -> Failure {
    let code = match &e {
        SolverError::InconsistentSystem { .. } => EXIT_INCONSISTENT,
        SolverError::Invalid(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    };
    Failure::new(code, e)
}

fn run_solve(group: GroupArg, system: &Path, out: &Path) -> Result<(), Failure> {
    let file = SystemFile::load(system).map_err(solver_failure)?;
    if !file.group.eq_ignore_ascii_case(group.name()) {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!("system file is for group {:?} but --group is {}", file.group, group.name()),
        ));
    }
    let report = match file.build().map_err(solver_failure)? {
        LoadedSystem::Group { system, initial, p0 } => {
            let res = solver::solve(&system, &initial, &p0, &GnConfig::default()).map_err(solver_failure)?;
            SolveReport {
                group: group.name().into(),
                solution: rows(res.solution.matrix()),
                residuals: res.residuals,
                rank_trace: res.rank_trace,
                iterations: res.reports.iter().map(|r| r.iterations).collect(),
            }
        }
        LoadedSystem::Linear { equations, initial, p0 } => {
            let res = solver::solve_linear(&equations, &initial, &p0).map_err(solver_failure)?;
            SolveReport {
                group: group.name().into(),
                solution: vec![res.solution.iter().copied().collect()],
                residuals: res.residuals,
                rank_trace: res.rank_trace,
                iterations: vec![1; equations.len()],
            }
        }
    };
    for (j, r) in report.residuals.iter().enumerate() {
        println!("equation {j}: residual {r:.3e}");
    }
    println!("rank trace: {:?}", report.rank_trace);
    fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let path = out.join("solution.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    fs::write(&path, json).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
    println!("solution written to {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Scenario {
            id,
            sims,
            seed,
            out,
            config,
            workers,
        } => run_scenario(*id, *sims, *seed, out, config.as_deref(), *workers),
        Command::Solve { group, system, out } => run_solve(*group, system, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
