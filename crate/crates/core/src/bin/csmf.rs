use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use csmf::harness::{self, ExperimentConfig, Format, SeedRole};
use csmf::io::{self, CsvTable};
use csmf::{dynamics, meanfield, Error, Exec};

#[derive(Parser)]
#[command(name = "csmf", version, about = "Cucker-Smale mean-field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one particle system of size max(N_grid) and check the a priori envelopes.
    Simulate(Common),
    /// Solve the kinetic equation on an M_ref sample cloud and check the kinetic bounds.
    Meanfield(Common),
    /// Convergence study: marginal vs reference distances, bounds and rate fits.
    Converge(Common),
    /// Flocking decay of the reference cloud next to a particle run.
    Flocking(Common),
    /// Outside-mass test against the fitted flocking box.
    Inverse {
        #[command(flatten)]
        common: Common,
        /// Overrides `epsilon` from the config.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Evaluate the bound constants at the configured times.
    Bounds(Common),
}

#[derive(Args)]
struct Common {
    /// JSON or TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

enum Outcome {
    Completed,
    Breach(String),
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    exec: Exec,
}

impl Run {
    fn new(c: &Common) -> csmf::Result<Self> {
        let mut cfg = ExperimentConfig::from_path(&c.config)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(f) = c.format {
            cfg.formats = vec![match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            }];
        }
        let out = c.out_dir.clone().unwrap_or_else(|| cfg.outputs.clone());
        std::fs::create_dir_all(&out)?;
        csmf::exec::init_threads(c.threads);
        let exec = if c.threads == Some(1) { Exec::Sequential } else { Exec::Parallel };
        Ok(Run { cfg, out, exec })
    }

    fn wants(&self, f: Format) -> bool {
        self.cfg.formats.contains(&f)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> csmf::Result<()> {
        let path = self.out.join(name);
        io::write_json(&path, value)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn csv(&self, name: &str, table: &CsvTable) -> csmf::Result<()> {
        let path = self.out.join(name);
        table.write(&path)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

#[derive(Serialize)]
struct CheckSummary<'a, T> {
    config_hash: String,
    seed: u64,
    #[serde(rename = "N")]
    big_n: usize,
    t_end: f64,
    report: &'a T,
}

fn simulate(run: &Run) -> csmf::Result<Outcome> {
    let cfg = &run.cfg;
    let kernel = cfg.interaction_kernel()?;
    let big_n = *cfg.n_grid.last().unwrap();
    let t_end = cfg.t_end.unwrap_or_else(|| cfg.times.iter().cloned().fold(0.0, f64::max));
    let seed = harness::derive_seed(cfg.seed, SeedRole::NBody);
    let init = meanfield::sample_initial(&cfg.initial, big_n, seed)?;
    let opts = dynamics::IntegrateOptions { exec: run.exec, ..Default::default() };
    let traj = dynamics::integrate_with(&init, &kernel, t_end, cfg.dt, opts)?;
    let report = dynamics::check_apriori_bounds(&traj, &kernel, kernel.gamma0())?;
    if run.wants(Format::Csv) {
        let table = io::trajectory_table(&traj).meta("config_hash", cfg.hash()).meta("seed", seed);
        run.csv("trajectory.csv", &table)?;
    }
    if run.wants(Format::Json) {
        io::write_diagnostics_jsonl(&run.out.join("diagnostics.jsonl"), &traj)?;
    }
    run.json("apriori.json", &CheckSummary { config_hash: cfg.hash(), seed, big_n, t_end, report: &report })?;
    Ok(if report.passed() {
        Outcome::Completed
    } else {
        Outcome::Breach(format!("{} a priori envelope flags", report.flag_count()))
    })
}

fn meanfield_cmd(run: &Run) -> csmf::Result<Outcome> {
    let cfg = &run.cfg;
    let kernel = cfg.interaction_kernel()?;
    let t_end = cfg.t_end.unwrap_or_else(|| cfg.times.iter().cloned().fold(0.0, f64::max));
    let seed = harness::derive_seed(cfg.seed, SeedRole::ReferenceA);
    let opts = dynamics::IntegrateOptions { exec: run.exec, ..Default::default() };
    let traj = meanfield::solve_vlasov_with(&cfg.initial, &kernel, cfg.m_ref, t_end, cfg.dt, seed, opts)?;
    let report = meanfield::check_kinetic_bounds(&traj, &kernel, kernel.gamma0(), &cfg.initial)?;
    if run.wants(Format::Csv) {
        let last = traj.last();
        let mut table = CsvTable::new(&["x", "v"]).meta("config_hash", cfg.hash()).meta("seed", seed).meta("t", t_end);
        let d = last.d();
        table.header = (0..d).map(|c| format!("x{c}")).chain((0..d).map(|c| format!("v{c}"))).collect();
        for i in 0..last.n() {
            table.push(last.position(i).iter().chain(last.velocity(i)).copied().collect());
        }
        run.csv("cloud.csv", &table)?;
    }
    run.json(
        "kinetic.json",
        &CheckSummary { config_hash: cfg.hash(), seed, big_n: cfg.m_ref, t_end, report: &report },
    )?;
    Ok(if report.passed() {
        Outcome::Completed
    } else {
        Outcome::Breach(format!("{} kinetic bound flags", report.flag_count()))
    })
}

fn converge(run: &Run) -> csmf::Result<Outcome> {
    let cfg = &run.cfg;
    let study = harness::run_convergence_study(cfg, run.exec)?;
    if let Some(check) = &study.reference_check {
        if !check.passed {
            return Err(Error::Input(format!(
                "reference cloud too coarse: M_ref vs 2 M_ref distance {:.4e} exceeds {:.4e}; raise M_ref",
                check.distance, check.threshold
            )));
        }
    }
    let mut times = cfg.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let fits: Vec<_> = times.iter().map(|t| harness::fit_rate(&study.records, *t)).collect();
    if run.wants(Format::Csv) {
        let mut table = CsvTable::new(&["N", "t", "W_hat", "W_selfnoise", "corrected", "bound"])
            .meta("config_hash", &study.config_hash)
            .meta("seed", cfg.seed);
        for r in &study.records {
            table.push(vec![r.big_n as f64, r.t, r.w_hat, r.w_selfnoise, r.corrected, r.bound.unwrap_or(f64::NAN)]);
        }
        run.csv("convergence.csv", &table)?;
    }
    if run.wants(Format::Json) {
        run.json("convergence.json", &study)?;
    }
    #[derive(Serialize)]
    struct Rate<'a> {
        config_hash: &'a str,
        seed: u64,
        fits: &'a [harness::RateFit],
    }
    run.json("rate.json", &Rate { config_hash: &study.config_hash, seed: cfg.seed, fits: &fits })?;
    let breaches = study.records.iter().filter(|r| !r.within_noisy_envelope()).count();
    Ok(if breaches == 0 {
        Outcome::Completed
    } else {
        Outcome::Breach(format!("{breaches} records above bound + 2 W_selfnoise"))
    })
}

fn flocking(run: &Run) -> csmf::Result<Outcome> {
    let report = harness::run_flocking_study(&run.cfg, run.exec)?;
    run.json("flocking.json", &report)?;
    if run.wants(Format::Csv) {
        let mut table = CsvTable::new(&["t", "spread", "max_radius", "nbody_velocity_diameter"])
            .meta("config_hash", &report.config_hash)
            .meta("seed", run.cfg.seed);
        for f in &report.frames {
            table.push(vec![f.t, f.spread, f.max_radius, f.nbody_velocity_diameter]);
        }
        run.csv("flocking.csv", &table)?;
    }
    println!("{}", report.label);
    Ok(if report.dv_monotone {
        Outcome::Completed
    } else {
        Outcome::Breach(format!("velocity diameter increased by {:.3e}", report.dv_increase))
    })
}

fn inverse(run: &Run, epsilon: Option<f64>) -> csmf::Result<Outcome> {
    let Some(eps) = epsilon.or(run.cfg.epsilon) else {
        return Err(Error::Input("inverse needs epsilon in the config or --epsilon".into()));
    };
    let report = harness::run_inverse_check(&run.cfg, eps, run.exec)?;
    run.json("inverse.json", &report)?;
    println!("{}", report.note);
    Ok(if report.passed { Outcome::Completed } else { Outcome::Breach(report.note.clone()) })
}

fn bounds_cmd(run: &Run) -> csmf::Result<Outcome> {
    let evals = harness::evaluate_bounds(&run.cfg)?;
    #[derive(Serialize)]
    struct Bounds<'a> {
        config_hash: String,
        evaluations: &'a [csmf::bounds::BoundEvaluation],
    }
    run.json("bounds.json", &Bounds { config_hash: run.cfg.hash(), evaluations: &evals })?;
    if run.wants(Format::Csv) {
        let mut table = CsvTable::new(&["t", "C_t", "C_t_dual"]).meta("config_hash", run.cfg.hash());
        for e in &evals {
            table.push(vec![e.t, e.c_t, e.c_t_dual]);
        }
        run.csv("bounds.csv", &table)?;
    }
    Ok(Outcome::Completed)
}

fn dispatch(cmd: &Command) -> csmf::Result<Outcome> {
    match cmd {
        Command::Simulate(c) => simulate(&Run::new(c)?),
        Command::Meanfield(c) => meanfield_cmd(&Run::new(c)?),
        Command::Converge(c) => converge(&Run::new(c)?),
        Command::Flocking(c) => flocking(&Run::new(c)?),
        Command::Inverse { common, epsilon } => inverse(&Run::new(common)?, *epsilon),
        Command::Bounds(c) => bounds_cmd(&Run::new(c)?),
    }
}

fn is_input_error(e: &Error) -> bool {
    match e {
        Error::Input(_) | Error::Unsupported(_) | Error::Json(_) | Error::Toml(_) => true,
        Error::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
        _ => false,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(Outcome::Completed) => ExitCode::SUCCESS,
        Ok(Outcome::Breach(msg)) => {
            eprintln!("invariant violation: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_input_error(&e) { 3 } else { 1 })
        }
    }
}
