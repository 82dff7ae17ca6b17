//! Command line front end. Exit codes: 0 success, 1 invalid input or failed
//! check, 2 solver failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::cli_io::{
    write_control_csv, write_history_csv, write_resolved, write_summary_csv,
    write_trajectory_csv, Resolved, ScenarioFile,
};
use crate::coupled_ibvp::{Outcome, SolverOptions};
use crate::error::{Error, Result};
use crate::optimizer::solve;
use crate::oracles::validate;
use crate::sir_model::{convergence_study, simulate, validate_scenario, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

/// Worker threads; `0` runs everything sequentially.
pub const THREADS_ENV: &str = "RENEWAL_SIR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "renewal-sir", version, about = "Age-structured SIR simulation and vaccination control")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Fixed-point tolerance, overriding the scenario.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Optimizer seed, overriding the scenario.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print errors only.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a scenario and write trajectory.csv, summary.csv, resolved.toml.
    Simulate { scenario: PathBuf },
    /// Search for the best control; writes history.csv, best_control.csv and the best trajectory.
    Optimize { scenario: PathBuf },
    /// Run the analytic oracle suite.
    Validate,
    /// Refinement study against a fine reference run.
    Convergence {
        scenario: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 4)]
        reference_factor: usize,
    },
    /// Parse and check a scenario without solving it.
    Check { scenario: PathBuf },
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_SOLVER
    }
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let threads = thread_count();
    let parallel = threads != Some(0);
    let n = match threads {
        Some(0) => 1,
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build();
    let exec = || match execute(&cli, parallel) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    match pool {
        Ok(p) => p.install(exec),
        Err(_) => exec(),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    parallel: bool,
}

impl Ctx<'_> {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", msg.as_ref());
        }
    }

    /// Parse, resolve and check; nothing is written on failure.
    fn load(&self, path: &Path) -> Result<Resolved> {
        let mut file = ScenarioFile::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Scenario(format!("{}: {io}", path.display())),
            e => e,
        })?;
        if let Some(tol) = self.cli.tol {
            file.solver.fp_tol = Some(tol);
        }
        if let (Some(seed), Some(o)) = (self.cli.seed, file.optimize.as_mut()) {
            o.seed = Some(seed);
        }
        let mut r = file.resolve()?;
        r.scenario.solver.parallel = self.parallel;
        if let Some((p, o)) = r.optimize.as_mut() {
            p.scenario.solver.parallel = self.parallel;
            o.parallel = self.parallel;
        }
        let report = validate_scenario(&r.scenario);
        for w in &report.warnings {
            self.say(format!("warning: {w}"));
        }
        if let Some(v) = report.violations.first() {
            for v in &report.violations {
                eprintln!("invalid: {} at {}: {}", v.what, v.location, v.detail);
            }
            return Err(Error::Hypothesis { constant: v.what.clone(), detail: v.detail.clone() });
        }
        Ok(r)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.cli.out)?;
        Ok(&self.cli.out)
    }

    fn write_run(&self, dir: &Path, traj: &Trajectory) -> Result<()> {
        write_trajectory_csv(&dir.join("trajectory.csv"), traj)?;
        write_summary_csv(&dir.join("summary.csv"), traj)
    }

    fn report_run(&self, traj: &Trajectory) -> i32 {
        let apps: usize = traj.reports.iter().filter(|r| r.accepted).map(|r| r.applications).sum();
        let worst = traj
            .reports
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.max_ratio())
            .fold(0.0_f64, f64::max);
        self.say(format!(
            "windows {}  applications {}  max contraction ratio {:.3e}",
            traj.reports.iter().filter(|r| r.accepted).count(),
            apps,
            worst
        ));
        let last = traj.last();
        self.say(format!(
            "t = {}  S = {:.6e}  I = {:.6e}  R = {:.6e}  total = {:.6e}",
            last.t,
            last.s.integral(),
            last.i.integral(),
            last.r.integral(),
            last.population()
        ));
        match traj.outcome {
            Outcome::Completed => EXIT_OK,
            Outcome::BlowUp { time, .. } => {
                eprintln!("blow-up detected at t = {time}");
                EXIT_SOLVER
            }
        }
    }
}

fn execute(cli: &Cli, parallel: bool) -> Result<i32> {
    let ctx = Ctx { cli, parallel };
    match &cli.command {
        Command::Simulate { scenario } => {
            let r = ctx.load(scenario)?;
            let traj = simulate(&r.scenario)?;
            let dir = ctx.out_dir()?;
            write_resolved(&dir.join("resolved.toml"), &r.file)?;
            ctx.write_run(dir, &traj)?;
            Ok(ctx.report_run(&traj))
        }
        Command::Optimize { scenario } => {
            let r = ctx.load(scenario)?;
            let Some((problem, opts)) = &r.optimize else {
                return Err(Error::Scenario("the scenario has no [optimize] section".into()));
            };
            let layout = problem.layout()?;
            let best = solve(problem, opts)?;
            let traj = simulate(&problem.scenario.with_policy(layout.policy(&best.x)?))?;
            let dir = ctx.out_dir()?;
            write_resolved(&dir.join("resolved.toml"), &r.file)?;
            write_history_csv(&dir.join("history.csv"), &best.history)?;
            write_control_csv(&dir.join("best_control.csv"), &layout, &best.x)?;
            ctx.write_run(dir, &traj)?;
            let xs: Vec<String> = best.x.iter().map(|v| format!("{v:.6}")).collect();
            ctx.say(format!(
                "best [{}]  cost {:.6e}  effect {:.6e}  feasible {}  evaluations {}",
                xs.join(", "),
                best.value.cost,
                best.value.effect,
                best.feasible,
                best.history.len()
            ));
            Ok(if best.feasible { EXIT_OK } else { EXIT_SOLVER })
        }
        Command::Validate => {
            let opts = SolverOptions { parallel, ..SolverOptions::default() };
            let checks = validate(&opts)?;
            for c in &checks {
                ctx.say(format!(
                    "{} {:<20} error {:.3e}  tolerance {:.1e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.error,
                    c.tolerance
                ));
            }
            Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_INVALID })
        }
        Command::Convergence { scenario, levels, reference_factor } => {
            let r = ctx.load(scenario)?;
            let study = convergence_study(&r.scenario, *levels, *reference_factor)?;
            ctx.say(format!("reference cells per unit age {}", study.reference));
            for (l, (k, e)) in study.resolutions.iter().zip(&study.errors).enumerate() {
                let ratio = study.ratios.get(l).map_or(String::new(), |q| format!("  ratio {q:.3}"));
                ctx.say(format!("k {k:>5}  error {e:.6e}{ratio}"));
            }
            Ok(EXIT_OK)
        }
        Command::Check { scenario } => {
            let r = ctx.load(scenario)?;
            let s = validate_scenario(&r.scenario);
            ctx.say(format!(
                "ok  age_max {}  cells per unit age {}  horizon {}",
                r.scenario.age_max, r.scenario.cells_per_unit_age, r.scenario.horizon
            ));
            ctx.say(format!(
                "sampled lambda_inf {:.6e}  lambda_l {:.6e}  r_l {:.6e}  r_1 {:.6e}  r_inf {:.6e}",
                s.sampled.lambda_inf, s.sampled.lambda_l, s.sampled.r_l, s.sampled.r_1, s.sampled.r_inf
            ));
            ctx.say(format!("nonnegative rates {}", s.neg_eligible));
            Ok(EXIT_OK)
        }
    }
}
