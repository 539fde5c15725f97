use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pipediff::config::{parse_config_file, Config};
use pipediff::diagnostics::fmt_f64;
use pipediff::experiments::{
    self, run_check, run_convergence, run_relaxation, run_tracking, trajectory_checks, Check, ExperimentReport,
};
use pipediff::{steady_analytic, steady_discrete};

/// Entropy-stable solver for doubly nonlinear diffusion on a pipe segment.
#[derive(Parser)]
#[command(name = "pipediff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// March the configured scenario to its horizon and write CSV series.
    Run(Common),
    /// Print the analytic and discrete steady states of the final boundary data.
    Steady(Common),
    /// Relaxation towards the steady state with fitted decay rates.
    Decay(Common),
    /// Tracking of quasi-steady states under time-varying boundary data.
    Track(Common),
    /// Self-convergence under simultaneous refinement of h and τ.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Number of refinement levels (default from the config, at least 3).
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Full invariant suite on the configured scenario.
    Check {
        #[command(flatten)]
        common: Common,
        /// Seed of the randomized parts.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, default_value = "pipediff-out")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<pipediff::Error> for Failure {
    fn from(e: pipediff::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load(common: &Common) -> Result<(Config, PathBuf), Failure> {
    let config = parse_config_file(&common.config).map_err(|e| Failure::Usage(e.to_string()))?;
    let out = experiments::ensure_dir(&common.out)?;
    Ok((config, out))
}

fn scenario(config: &Config) -> Result<pipediff::Scenario, Failure> {
    config.scenario().map_err(|e| Failure::Usage(e.to_string()))
}

/// Prints the checks, writes `report.json` and returns whether all passed.
fn finish(mut report: ExperimentReport, out: &Path) -> Result<bool, Failure> {
    let path = out.join("report.json");
    report.files.push(path.to_string_lossy().into_owned());
    report.files.sort();
    report.files.dedup();
    report.write_json(&path)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for (k, v) in &report.fitted {
        println!("{k}={}", fmt_f64(*v));
    }
    if report.passed() {
        println!("report: {}", path.display());
        Ok(true)
    } else {
        eprintln!("{} check(s) failed; report: {}", report.failed_checks().len(), path.display());
        Ok(false)
    }
}

fn run(cmd: Command) -> Result<bool, Failure> {
    match cmd {
        Command::Run(common) => {
            let (config, out) = load(&common)?;
            let sc = scenario(&config)?;
            let tr = pipediff::advance(&sc)?;
            let traj = out.join("trajectory.csv");
            let states = out.join("states.csv");
            experiments::write_trajectory_csv(&tr, &traj)?;
            experiments::write_states_csv(&tr, &sc.grid, &states)?;
            let mut report = ExperimentReport::new("run", &sc);
            report.checks = trajectory_checks(&tr, &sc)?;
            report.files = vec![traj.to_string_lossy().into_owned(), states.to_string_lossy().into_owned()];
            finish(report, &out)
        }
        Command::Steady(common) => {
            let (config, out) = load(&common)?;
            let sc = scenario(&config)?;
            let (ua, ub) = sc.boundary.at(sc.horizon);
            let exact = steady_analytic(&sc.model, sc.alpha, sc.grid.length(), ua, ub)?;
            let discrete = steady_discrete(&sc.grid, &sc.model, sc.alpha, ua, ub)?;
            let sampled = exact.sample(&sc.grid);
            let gap = discrete.nodal.max_abs_diff(&sampled.nodal);
            println!("u_left={:.6}", exact.u_left);
            println!("slope={:.6}", exact.slope);
            println!("u_right={:.6}", exact.u_right());
            println!("x,analytic,discrete");
            let mut csv = String::from("x,analytic,discrete\n");
            for (i, x) in sc.grid.nodes().iter().enumerate() {
                let row = format!("{},{},{}", fmt_f64(*x), fmt_f64(sampled.nodal[i]), fmt_f64(discrete.nodal[i]));
                println!("{row}");
                csv.push_str(&row);
                csv.push('\n');
            }
            let csv_path = out.join("steady.csv");
            std::fs::write(&csv_path, csv).map_err(pipediff::Error::from)?;
            let mut report = ExperimentReport::new("steady", &sc);
            report.checks.push(Check::new(
                "steady_agreement",
                gap <= experiments::STEADY_AGREEMENT,
                format!("data ({ua}, {ub}): max |discrete − analytic| = {gap:e}"),
            ));
            report.fitted.insert("u_left".into(), exact.u_left);
            report.fitted.insert("slope".into(), exact.slope);
            report.files.push(csv_path.to_string_lossy().into_owned());
            finish(report, &out)
        }
        Command::Decay(common) => {
            let (config, out) = load(&common)?;
            let sc = scenario(&config)?;
            let opts = config.experiment.relaxation;
            let mut report = run_relaxation(&sc, &opts, Some(&out))?.report;
            if let Some(study) = &config.experiment.rate_study {
                let rates = experiments::relaxation_rate_study(&sc, &study.cells, &opts, study.max_rel_spread)?;
                report.checks.extend(rates.checks.into_iter().map(|c| Check {
                    name: format!("rate_study:{}", c.name),
                    ..c
                }));
                for (k, v) in rates.fitted {
                    report.fitted.insert(format!("rate_study:{k}"), v);
                }
            }
            finish(report, &out)
        }
        Command::Track(common) => {
            let (config, out) = load(&common)?;
            let sc = scenario(&config)?;
            let report = run_tracking(&sc, &config.experiment.tracking, Some(&out))?.report;
            finish(report, &out)
        }
        Command::Converge { common, levels } => {
            let (config, out) = load(&common)?;
            let sc = scenario(&config)?;
            let conv = config.experiment.convergence;
            let levels = levels.unwrap_or(conv.levels);
            if levels < 3 {
                return Err(Failure::Usage(format!("--levels must be at least 3, got {levels}")));
            }
            let report = run_convergence(&sc, levels, &conv.options(), Some(&out))?;
            finish(report, &out)
        }
        Command::Check { common, seed } => {
            let (config, out) = load(&common)?;
            let sc = scenario(&config)?;
            let report = run_check(&sc, &config.experiment.check, seed)?;
            finish(report, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
