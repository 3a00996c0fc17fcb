//! Command-line front end: master-equation curves, single trajectories,
//! ensembles, waiting-time checks and the invariant suite.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use hysmooth::ensemble::{format_g12, to_csv, Quantities};
use hysmooth::smoother::smooth_path_cached;
use hysmooth::validate::{run_all, WaitingTimeReport};
use hysmooth::{reduce_classical, reduce_quantum, simulate_trajectory, Ensemble, Error, ModelChoice, RunConfig, WaitingTimeLaw};

#[derive(Parser)]
#[command(name = "hysmooth", version, about = "Filtering and smoothing of hybrid quantum-classical states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic master-equation curves.
    Solve(RunArgs),
    /// One realization: filtered and smoothed path plus jump times.
    Trajectory {
        #[command(flatten)]
        run: RunArgs,
        /// Trajectory index within the seed's stream family.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Monte Carlo ensemble statistics.
    Ensemble(RunArgs),
    /// Waiting-time density table and sampler comparison.
    WaitingTime {
        #[command(flatten)]
        run: RunArgs,
        /// Samples per sampler.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Significance level of the KS tests.
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Runs the invariant suite.
    Validate(RunArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rabi frequency in units of γ.
    #[arg(long)]
    omega: Option<f64>,
    /// Detector efficiency.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    t_total: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Smoothing lag.
    #[arg(long)]
    lag: Option<f64>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// plain, hybrid or custom:<path>
    #[arg(long)]
    model: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

impl RunArgs {
    fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.model {
            cfg.model = m.parse::<ModelChoice>()?;
        }
        macro_rules! apply {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        apply!(omega => omega_over_gamma, eta => eta, t_total => t_total, dt => dt, lag => lag,
               n_traj => n_traj, seed => master_seed);
        if let Some(o) = &self.out {
            cfg.outputs = o.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn solve(args: &RunArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let ens = Ensemble::new(&cfg)?;
    let curve = ens.master_curve()?;
    let d = ens.generators().dim();
    let mut out = String::from("t,pop,pd,purq,purc");
    for i in 0..d {
        for j in 0..d {
            let _ = write!(out, ",rho{i}{j}_re,rho{i}{j}_im");
        }
    }
    out.push('\n');
    let mut last = String::new();
    for (k, rho) in curve.iter().enumerate() {
        let q = Quantities::of_state(rho)?;
        let rq = reduce_quantum(rho);
        let mut row = [ens.grid().time(k), q.pop, q.pd, q.purq, q.purc].map(format_g12).join(",");
        for i in 0..d {
            for j in 0..d {
                let _ = write!(row, ",{},{}", format_g12(rq[(i, j)].re), format_g12(rq[(i, j)].im));
            }
        }
        out.push_str(&row);
        out.push('\n');
        last = row;
    }
    let path = write_output(&cfg.outputs, "solve.csv", &out)?;
    println!("wrote {}", path.display());
    println!("{}", out.lines().next().unwrap_or_default());
    println!("{last}");
    Ok(())
}

fn trajectory(args: &RunArgs, index: u64) -> CliResult<()> {
    let cfg = args.config()?;
    let ens = Ensemble::new(&cfg)?;
    let mut rng = hysmooth::rng::stream(cfg.master_seed, index);
    let fp = simulate_trajectory(ens.generators(), ens.cache(), ens.initial_state(), cfg.t_total, &mut rng)?;
    let smoothed = smooth_path_cached(ens.generators(), ens.cache(), &fp, cfg.lag)?;
    let mut out = String::from("t,pop_f,pop_s,purq_f,purq_s,pd_f,pd_s,purc_f,purc_s\n");
    for (k, rho) in fp.states().iter().enumerate() {
        let f = Quantities::from_parts(&reduce_quantum(rho), &reduce_classical(rho)?);
        let s = smoothed
            .get(k)
            .map(|r| Quantities::from_parts(&r.quantum_partial, &r.classical_partial));
        let cell = |v: Option<f64>| v.map(format_g12).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            format_g12(fp.time(k)),
            format_g12(f.pop),
            cell(s.map(|s| s.pop)),
            format_g12(f.purq),
            cell(s.map(|s| s.purq)),
            format_g12(f.pd),
            cell(s.map(|s| s.pd)),
            format_g12(f.purc),
            cell(s.map(|s| s.purc)),
        );
    }
    let jumps: String = fp.trajectory().jump_times().iter().map(|t| format!("{}\n", format_g12(*t))).collect();
    let path = write_output(&cfg.outputs, "trajectory.csv", &out)?;
    let jpath = write_output(&cfg.outputs, "jumps.txt", &jumps)?;
    println!("{} detections in [0, {}]", fp.trajectory().len(), format_g12(cfg.t_total));
    println!("wrote {} and {}", path.display(), jpath.display());
    Ok(())
}

fn ensemble(args: &RunArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let start = Instant::now();
    let ens = Ensemble::new(&cfg)?;
    let stats = ens.run()?.stats();
    let path = write_output(&cfg.outputs, "ensemble.csv", &to_csv(&stats))?;
    println!(
        "{} trajectories, {} grid points, {:.1} s",
        stats.n_traj,
        stats.rows.len(),
        start.elapsed().as_secs_f64()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn waiting_time(args: &RunArgs, samples: usize, alpha: f64) -> CliResult<bool> {
    let cfg = args.config()?;
    if matches!(cfg.model, ModelChoice::Custom(_)) {
        return Err(Failure::Usage("waiting-time needs the plain or hybrid fluorescence model".into()));
    }
    if samples < 2 {
        return Err(Failure::Usage("--samples must be at least 2".into()));
    }
    let p = cfg.fluor_params()?;
    let law = WaitingTimeLaw::new(&p)?;
    let mut table = String::from("t,density,cdf\n");
    let t_end = 10.0 * p.mean_waiting_time();
    for k in 0..=400 {
        let t = t_end * k as f64 / 400.0;
        let _ = writeln!(table, "{},{},{}", format_g12(t), format_g12(law.density(t)), format_g12(law.cdf(t)));
    }
    let path = write_output(&cfg.outputs, "waiting_time.csv", &table)?;
    println!("wrote {}", path.display());
    println!("root structure: {:?}", law.structure());

    let r = WaitingTimeReport::generate(&p, samples, cfg.master_seed)?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    for (name, ks) in [
        ("inversion vs law", r.ks_inversion),
        ("thinning vs law", r.ks_thinning),
        ("inversion vs thinning", r.ks_two_sample),
    ] {
        println!(
            "{} KS {name}: D = {:.4}, p = {:.4}",
            verdict(ks.passes(alpha)),
            ks.statistic,
            ks.p_value
        );
    }
    for (name, w) in [("inversion", &r.inversion), ("thinning", &r.thinning)] {
        let z = (w.mean() - r.analytic_mean) / w.std_error();
        println!(
            "{} mean {name}: {:.4} +- {:.4} (analytic {:.4}, z = {z:.2})",
            verdict(z.abs() <= 3.0),
            w.mean(),
            w.std_error(),
            r.analytic_mean
        );
    }
    Ok(r.passes(alpha))
}

fn validate(args: &RunArgs) -> CliResult<bool> {
    let cfg = args.config()?;
    let p = cfg.fluor_params()?;
    let checks = run_all(&p, cfg.master_seed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(a) => solve(a).map(|_| true),
        Command::Trajectory { run, index } => trajectory(run, *index).map(|_| true),
        Command::Ensemble(a) => ensemble(a).map(|_| true),
        Command::WaitingTime { run, samples, alpha } => waiting_time(run, *samples, *alpha),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
