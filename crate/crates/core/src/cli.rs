//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage or validation failures, 2 for
//! runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::equilibrium_oracle::{shapley_iterate, SHAPLEY_TOL};
use crate::error::{Error, Result};
use crate::game_model::{generate_random_zssg, GameFile, StochasticGame};
use crate::sim_harness::{
    import, preset, render_plot, run_experiment, validate_scenario, write_run_dir, Format,
    Scenario, ScenarioConfig, PRESET_NAMES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hetlearn",
    version,
    about = "Heterogeneous best-response learning in zero-sum games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random zero-sum stochastic game as JSON.
    Gen(GenArgs),
    /// Solve a game file for its stationary equilibrium.
    Oracle(OracleArgs),
    /// Run a scenario and write traces, aggregate and plot.
    Run(RunArgs),
    /// Render plot.svg from a run directory's aggregate.csv.
    Plot(PlotArgs),
    /// Check a scenario's assumptions without running it.
    Validate(ScenarioSource),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    states: usize,
    /// Action counts of agents 1 and 2.
    #[arg(long, num_args = 2, value_names = ["N1", "N2"], default_values_t = [2, 2])]
    actions: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    gamma: f64,
    /// Agent 1's rewards are uniform on [lo, hi] at every state.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.0, 1.0], allow_negative_numbers = true)]
    rewards: Vec<f64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Game file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = SHAPLEY_TOL)]
    tol: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioSource {
    /// Scenario file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: scenario1, scenario2 or scenario3.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    #[arg(long)]
    out: PathBuf,
    /// Stages between logged rows.
    #[arg(long)]
    log_interval: Option<u64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Linear stage axis instead of logarithmic.
    #[arg(long)]
    linear: bool,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: i32,
    error: Error,
}

fn invalid(error: Error) -> Failure {
    Failure {
        code: EXIT_INVALID,
        error,
    }
}

fn runtime(error: Error) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a, stdout),
        Command::Oracle(a) => oracle(a, stdout),
        Command::Run(a) => run_scenario(a, stdout, stderr),
        Command::Plot(a) => plot(a, stdout),
        Command::Validate(a) => validate(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.error);
            f.code
        }
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(out.unwrap_or(Path::new("<stdout>")), e))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e)),
        None => writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e)),
    }
}

fn gen(a: GenArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let ranges = vec![(a.rewards[0], a.rewards[1]); a.states];
    let game = generate_random_zssg(
        a.states,
        [a.actions[0], a.actions[1]],
        &ranges,
        a.gamma,
        a.seed,
    )
    .map_err(invalid)?;
    write_json(&GameFile::from(&game), a.out.as_deref(), stdout).map_err(runtime)
}

#[derive(Serialize)]
struct OracleOutput {
    v_star: [Vec<f64>; 2],
    /// `q_star[i][s][a_own][a_opp]`.
    q_star: [Vec<Vec<Vec<f64>>>; 2],
    /// `pi_star[s] = [agent 1 strategy, agent 2 strategy]`.
    pi_star: Vec<[Vec<f64>; 2]>,
    iterations: usize,
    residual: f64,
}

fn oracle(a: OracleArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let game = StochasticGame::load(&a.config).map_err(invalid)?;
    let sol = shapley_iterate(&game, a.tol).map_err(|e| match e {
        Error::Domain(_) => invalid(e),
        e => runtime(e),
    })?;
    let rows = |m: &nalgebra::DMatrix<f64>| {
        (0..m.nrows())
            .map(|r| m.row(r).iter().copied().collect())
            .collect()
    };
    let out = OracleOutput {
        v_star: [
            sol.v_star[0].as_slice().to_vec(),
            sol.v_star[1].as_slice().to_vec(),
        ],
        q_star: [
            sol.q_star[0].iter().map(rows).collect(),
            sol.q_star[1].iter().map(rows).collect(),
        ],
        pi_star: sol
            .pi_star
            .iter()
            .map(|[x, y]| [x.as_slice().to_vec(), y.as_slice().to_vec()])
            .collect(),
        iterations: sol.iterations,
        residual: sol.residual,
    };
    write_json(&out, a.out.as_deref(), stdout).map_err(runtime)
}

fn load_source(src: &ScenarioSource) -> Result<ScenarioConfig> {
    match (&src.config, &src.preset) {
        (Some(path), None) => ScenarioConfig::load(path),
        (None, Some(name)) => preset(name),
        _ => Err(Error::Config(format!(
            "give --config PATH or --preset NAME (one of {PRESET_NAMES:?})"
        ))),
    }
}

fn run_scenario(a: RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let mut cfg = load_source(&a.source).map_err(invalid)?;
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(n) = a.trials {
        cfg.n_trials = n;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(l) = a.log_interval {
        cfg.log_interval = l;
    }
    let scenario = Scenario::resolve(&cfg).map_err(invalid)?;
    for w in &scenario.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let _ = writeln!(
        stderr,
        "running {} trial(s) of {} stages",
        scenario.config.n_trials, scenario.config.horizon
    );
    let result = run_experiment(&scenario, a.parallelism).map_err(runtime)?;
    write_run_dir(&a.out, &scenario, &result).map_err(runtime)?;

    let last_k = result.aggregate.rows.last().map(|r| r.k).unwrap_or(0);
    let _ = writeln!(stdout, "stage {last_k}:");
    for r in result.aggregate.rows.iter().filter(|r| r.k == last_k) {
        let star = r
            .v_star
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            stdout,
            "  agent {} state {}: v_est {:.6} +- {:.6}, v* {star}",
            r.agent,
            r.state,
            r.v_est_mean,
            r.v_est_std.unwrap_or(0.0)
        );
    }
    let _ = writeln!(stdout, "wrote {}", a.out.display());
    Ok(())
}

fn plot(a: PlotArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let rows = import(Format::Csv, &a.out.join("aggregate.csv")).map_err(runtime)?;
    let run_json = a.out.join("run.json");
    let labels = if run_json.exists() {
        let cfg = ScenarioConfig::load(&run_json).map_err(invalid)?;
        Scenario::resolve(&cfg).map_err(invalid)?.labels()
    } else {
        ["agent 1".to_string(), "agent 2".to_string()]
    };
    let path = a.out.join("plot.svg");
    render_plot(&rows, &labels, &path, !a.linear).map_err(runtime)?;
    let _ = writeln!(stdout, "wrote {}", path.display());
    Ok(())
}

fn validate(a: ScenarioSource, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_source(&a).map_err(invalid)?;
    let report = validate_scenario(&cfg);
    write_json(&report, None, stdout).map_err(runtime)?;
    if report.ok {
        Ok(())
    } else {
        Err(invalid(Error::Config(report.errors.join("; "))))
    }
}
