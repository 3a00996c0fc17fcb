//! Monte Carlo ensembles of filtered and smoothed trajectories.
//!
//! Trajectory `k` draws from its own random stream, and results are folded
//! into the running moments strictly in index order, so the statistics do
//! not depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::algebra::{ClassicalDist, CMatrix, HybridOperator};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::generators::{master_solve, reduce_classical, reduce_quantum, steps_for, GridCache, ModelGenerators, TimeGrid};
use crate::jumps::simulate_trajectory;
use crate::rng::stream;
use crate::smoother::smooth_path_cached;
use crate::stats::Welford;

/// Header of ensemble CSV files.
pub const CSV_HEADER: &str = "t,pop_f,pop_s,purq_f,purq_s,pd_f,pd_s,purc_f,purc_s,se_pop_f,se_pop_s";

/// Trajectories simulated concurrently before their results are reduced.
const WAVE: usize = 256;

/// Scalar summaries of one estimate: upper population `⟨0|ρ_q|0⟩`,
/// quantum purity, population of classical label 0, classical purity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantities {
    pub pop: f64,
    pub purq: f64,
    pub pd: f64,
    pub purc: f64,
}

impl Quantities {
    pub fn from_parts(quantum: &CMatrix, classical: &ClassicalDist) -> Self {
        Quantities {
            pop: quantum[(0, 0)].re,
            purq: quantum.purity(),
            pd: classical.probs()[0],
            purc: classical.purity(),
        }
    }

    pub fn of_state(rho: &HybridOperator) -> Result<Self> {
        Ok(Self::from_parts(&reduce_quantum(rho), &reduce_classical(rho)?))
    }

    fn as_array(&self) -> [f64; 4] {
        [self.pop, self.purq, self.pd, self.purc]
    }
}

/// Filtered and smoothed summaries of one trajectory on the grid.
/// `smoothed` covers the first `n_steps - lag_steps + 1` grid points.
#[derive(Clone, Debug)]
pub struct TrajectorySummary {
    pub filtered: Vec<Quantities>,
    pub smoothed: Vec<Quantities>,
    pub jump_count: usize,
}

/// Running moments per grid point.
#[derive(Clone, Debug)]
pub struct EnsembleAccumulator {
    dt: f64,
    filtered: Vec<[Welford; 4]>,
    smoothed: Vec<[Welford; 4]>,
    n_traj: usize,
}

impl EnsembleAccumulator {
    fn new(dt: f64, n_points: usize, n_smoothed: usize) -> Self {
        EnsembleAccumulator {
            dt,
            filtered: vec![[Welford::new(); 4]; n_points],
            smoothed: vec![[Welford::new(); 4]; n_smoothed],
            n_traj: 0,
        }
    }

    fn push(&mut self, s: &TrajectorySummary) {
        for (acc, q) in self.filtered.iter_mut().zip(&s.filtered) {
            for (w, x) in acc.iter_mut().zip(q.as_array()) {
                w.push(x);
            }
        }
        for (acc, q) in self.smoothed.iter_mut().zip(&s.smoothed) {
            for (w, x) in acc.iter_mut().zip(q.as_array()) {
                w.push(x);
            }
        }
        self.n_traj += 1;
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Moments of (pop, purq, pd, purc) of the filtered estimates at grid point `k`.
    pub fn filtered(&self, k: usize) -> &[Welford; 4] {
        &self.filtered[k]
    }

    /// Same for the smoothed estimates; `None` past `t_total - lag`.
    pub fn smoothed(&self, k: usize) -> Option<&[Welford; 4]> {
        self.smoothed.get(k)
    }

    pub fn stats(&self) -> EnsembleStats {
        let rows = (0..self.len())
            .map(|k| {
                let f = &self.filtered[k];
                let s = self.smoothed.get(k);
                let mean = |i: usize| s.map(|s| s[i].mean());
                StatsRow {
                    t: self.time(k),
                    pop_f: f[0].mean(),
                    pop_s: mean(0),
                    purq_f: f[1].mean(),
                    purq_s: mean(1),
                    pd_f: f[2].mean(),
                    pd_s: mean(2),
                    purc_f: f[3].mean(),
                    purc_s: mean(3),
                    se_pop_f: f[0].std_error(),
                    se_pop_s: s.map(|s| s[0].std_error()),
                }
            })
            .collect();
        EnsembleStats {
            n_traj: self.n_traj,
            rows,
        }
    }
}

/// One CSV row. Smoothed entries are `None` where the lag window does not
/// fit in the record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsRow {
    pub t: f64,
    pub pop_f: f64,
    pub pop_s: Option<f64>,
    pub purq_f: f64,
    pub purq_s: Option<f64>,
    pub pd_f: f64,
    pub pd_s: Option<f64>,
    pub purc_f: f64,
    pub purc_s: Option<f64>,
    pub se_pop_f: f64,
    pub se_pop_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub rows: Vec<StatsRow>,
}

/// A configuration resolved into generators, grid and initial state.
pub struct Ensemble {
    cfg: RunConfig,
    generators: ModelGenerators,
    cache: GridCache,
    initial: HybridOperator,
    grid: TimeGrid,
    lag_steps: usize,
}

impl Ensemble {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.load_model()?;
        let generators = ModelGenerators::build(&model.spec)?;
        let cache = generators.grid_cache(cfg.dt)?;
        Ok(Ensemble {
            grid: TimeGrid::new(cfg.t_total, cfg.dt)?,
            lag_steps: steps_for(cfg.lag, cfg.dt)?,
            cfg: cfg.clone(),
            generators,
            cache,
            initial: model.initial,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn generators(&self) -> &ModelGenerators {
        &self.generators
    }

    pub fn cache(&self) -> &GridCache {
        &self.cache
    }

    pub fn initial_state(&self) -> &HybridOperator {
        &self.initial
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Number of grid points carrying smoothed estimates.
    pub fn n_smoothed(&self) -> usize {
        (self.grid.n_steps() + 1).saturating_sub(self.lag_steps)
    }

    /// Simulates, filters and smooths trajectory `index`.
    pub fn trajectory(&self, index: u64) -> Result<TrajectorySummary> {
        let mut rng = stream(self.cfg.master_seed, index);
        let fp = simulate_trajectory(&self.generators, &self.cache, &self.initial, self.cfg.t_total, &mut rng)?;
        let filtered = fp.states().iter().map(Quantities::of_state).collect::<Result<Vec<_>>>()?;
        let smoothed = smooth_path_cached(&self.generators, &self.cache, &fp, self.cfg.lag)?
            .iter()
            .map(|r| Quantities::from_parts(&r.quantum_partial, &r.classical_partial))
            .collect();
        Ok(TrajectorySummary {
            filtered,
            smoothed,
            jump_count: fp.trajectory().len(),
        })
    }

    pub fn run(&self) -> Result<EnsembleAccumulator> {
        self.run_with(|_, _| {})
    }

    /// Runs the ensemble, handing every summary to `observer` in index order.
    pub fn run_with<F: FnMut(u64, &TrajectorySummary)>(&self, mut observer: F) -> Result<EnsembleAccumulator> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.cfg.workers {
            builder = builder.num_threads(w);
        }
        let pool = builder.build().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut acc = EnsembleAccumulator::new(self.cfg.dt, self.grid.len(), self.n_smoothed());
        let n = self.cfg.n_traj as u64;
        let mut start = 0u64;
        while start < n {
            let end = (start + WAVE as u64).min(n);
            let wave: Vec<Result<TrajectorySummary>> =
                pool.install(|| (start..end).into_par_iter().map(|i| self.trajectory(i)).collect());
            for (i, summary) in (start..end).zip(wave) {
                let summary = summary?;
                observer(i, &summary);
                acc.push(&summary);
            }
            start = end;
        }
        Ok(acc)
    }

    /// Unconditional evolution of the initial state on the grid.
    pub fn master_curve(&self) -> Result<Vec<HybridOperator>> {
        master_solve(&self.generators, &self.initial, &self.grid)
    }
}

pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleStats> {
    Ok(Ensemble::new(cfg)?.run()?.stats())
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros dropped.
pub fn format_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let mantissa = trim_zeros(mantissa.to_string());
        format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(format_g12).unwrap_or_default()
}

pub fn to_csv(stats: &EnsembleStats) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &stats.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            format_g12(r.t),
            format_g12(r.pop_f),
            cell(r.pop_s),
            format_g12(r.purq_f),
            cell(r.purq_s),
            format_g12(r.pd_f),
            cell(r.pd_s),
            format_g12(r.purc_f),
            cell(r.purc_s),
            format_g12(r.se_pop_f),
            cell(r.se_pop_s),
        );
    }
    out
}

pub fn emit_csv(stats: &EnsembleStats, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(stats)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Parses rows written by [`to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<StatsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidConfig("unexpected CSV header".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidConfig(format!("bad number `{s}`")))
    };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 11 {
                return Err(Error::InvalidConfig(format!("expected 11 columns, got {}", c.len())));
            }
            Ok(StatsRow {
                t: num(c[0])?,
                pop_f: num(c[1])?,
                pop_s: opt(c[2])?,
                purq_f: num(c[3])?,
                purq_s: opt(c[4])?,
                pd_f: num(c[5])?,
                pd_s: opt(c[6])?,
                purc_f: num(c[7])?,
                purc_s: opt(c[8])?,
                se_pop_f: num(c[9])?,
                se_pop_s: opt(c[10])?,
            })
        })
        .collect()
}
