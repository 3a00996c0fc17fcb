//! Monitored jump records: sampling detection times by survival inversion
//! and computing the filtered state along a record.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Open01;

use crate::algebra::{apply, expm, trace_functional, vectorize, HybridOperator, HybridSuperop};
use crate::error::{Error, Result};
use crate::generators::{
    measurement_map, propagate_normalized, steps_for, GridCache, ModelGenerators, NULL_JUMP_THRESHOLD,
};

/// Strictly increasing detection times inside `(start, end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    window_start: f64,
    window_end: f64,
    jump_times: Vec<f64>,
}

impl Trajectory {
    pub fn new(window_end: f64, jump_times: Vec<f64>) -> Result<Self> {
        Self::with_window(0.0, window_end, jump_times)
    }

    pub fn with_window(window_start: f64, window_end: f64, jump_times: Vec<f64>) -> Result<Self> {
        if !(window_end >= window_start) || !window_end.is_finite() || !window_start.is_finite() {
            return Err(Error::InvalidTrajectory(format!(
                "window [{window_start}, {window_end}] is not a valid interval"
            )));
        }
        if jump_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidTrajectory("jump times must be strictly increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (jump_times.first(), jump_times.last()) {
            if !(first > window_start) || !(last <= window_end) {
                return Err(Error::InvalidTrajectory(format!(
                    "jump times must lie in ({window_start}, {window_end}]"
                )));
            }
        }
        Ok(Trajectory {
            window_start,
            window_end,
            jump_times,
        })
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn window_end(&self) -> f64 {
        self.window_end
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// Jumps in `(from, to]`, as a trajectory over that window.
    pub fn restrict(&self, from: f64, to: f64) -> Result<Trajectory> {
        let times = self
            .jump_times
            .iter()
            .copied()
            .filter(|&t| t > from && t <= to)
            .collect();
        Trajectory::with_window(from, to, times)
    }
}

/// Outcome of one waiting-time draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JumpSample {
    Jump(f64),
    NoJump,
}

/// Probability of no detection within `tau`: `Tr[(1| e^{D τ} |ρ)]`.
pub fn survival(g: &ModelGenerators, rho: &HybridOperator, tau: f64) -> Result<f64> {
    if tau == 0.0 {
        return Ok(rho.total_trace().re);
    }
    Ok(apply(&expm(g.d(), tau)?, rho)?.total_trace().re)
}

/// Survival evaluator for a fixed starting state.
struct SurvivalCurve<'a> {
    g: &'a ModelGenerators,
    tau_row: Vec<Complex64>,
    state: Vec<Complex64>,
}

impl<'a> SurvivalCurve<'a> {
    fn new(g: &'a ModelGenerators, rho: &HybridOperator) -> Self {
        SurvivalCurve {
            g,
            tau_row: trace_functional(g.n_classical(), g.dim()),
            state: vectorize(rho),
        }
    }

    fn at(&self, tau: f64) -> Result<f64> {
        let e = expm(self.g.d(), tau)?;
        let evolved = e.matrix().matvec(&self.state);
        Ok(self.tau_row.iter().zip(&evolved).map(|(a, b)| a * b).sum::<Complex64>().re)
    }
}

/// Inverse-transform draw of the next detection delay, capped at `t_max`.
pub fn sample_jump_time<R: Rng + ?Sized>(
    g: &ModelGenerators,
    rho: &HybridOperator,
    t_max: f64,
    rng: &mut R,
) -> Result<JumpSample> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")));
    }
    let u: f64 = rng.sample(Open01);
    let curve = SurvivalCurve::new(g, rho);
    if curve.at(t_max)? > u {
        return Ok(JumpSample::NoJump);
    }
    // grow the bracket geometrically until survival drops to u
    let mut lo = 0.0;
    let mut hi = t_max / 1024.0;
    while hi < t_max && curve.at(hi)? > u {
        lo = hi;
        hi = (2.0 * hi).min(t_max);
    }
    let tol = 1e-10 * t_max;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if curve.at(mid)? > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(JumpSample::Jump(0.5 * (lo + hi)))
}

/// Samples detection times in `(t_start, t_end]` from the state `rho` at
/// `t_start`, alternating conditional propagation and measurement.
pub fn sample_record<R: Rng + ?Sized>(
    g: &ModelGenerators,
    rho: &HybridOperator,
    t_start: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut now = t_start;
    let mut state = rho.clone();
    while t_end - now > 0.0 {
        match sample_jump_time(g, &state, t_end - now, rng)? {
            JumpSample::NoJump => break,
            JumpSample::Jump(tau) => {
                let t = (now + tau).min(t_end);
                if t <= now {
                    break;
                }
                let before = propagate_normalized(&expm(g.d(), t - now)?, &state)?;
                state = measurement_map(g, &before)?;
                times.push(t);
                now = t;
            }
        }
    }
    Trajectory::with_window(t_start, t_end, times)
}

/// Unnormalized propagator across one grid step.
#[derive(Clone, Debug)]
pub enum Step {
    /// No detection in the step: the cached `exp(D dt)`.
    Free,
    /// Detections inside the step, composed at their exact times.
    Composite(HybridSuperop),
}

impl Step {
    pub fn resolve<'a>(&'a self, cache: &'a GridCache) -> &'a HybridSuperop {
        match self {
            Step::Free => cache.exp_d(),
            Step::Composite(s) => s,
        }
    }
}

/// Step propagators over the uniform grid covering the trajectory window.
///
/// Step `k` maps the grid time `t_k` to `t_{k+1}` and contains every jump
/// in `(t_k, t_{k+1}]`.
pub fn step_operators(g: &ModelGenerators, cache: &GridCache, traj: &Trajectory) -> Result<Vec<Step>> {
    let dt = cache.dt();
    let n = steps_for(traj.window_end() - traj.window_start(), dt)?;
    let t0 = traj.window_start();
    let jumps = traj.jump_times();
    let mut idx = 0;
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = (t0 + k as f64 * dt, t0 + (k + 1) as f64 * dt);
        // jumps at or before a grid time belong to the step ending there
        let b_eff = if k + 1 == n { f64::INFINITY } else { b };
        if idx >= jumps.len() || jumps[idx] > b_eff {
            steps.push(Step::Free);
            continue;
        }
        let mut op = HybridSuperop::identity(g.n_classical(), g.dim());
        let mut cur = a;
        while idx < jumps.len() && jumps[idx] <= b_eff {
            let t = jumps[idx];
            op = g.j().compose(&expm(g.d(), (t - cur).max(0.0))?.compose(&op));
            cur = t;
            idx += 1;
        }
        op = expm(g.d(), (b - cur).max(0.0))?.compose(&op);
        steps.push(Step::Composite(op));
    }
    Ok(steps)
}

/// Normalized filtered states on a uniform grid.
#[derive(Clone, Debug)]
pub struct FilteredPath {
    t0: f64,
    dt: f64,
    states: Vec<HybridOperator>,
    trajectory: Trajectory,
}

impl FilteredPath {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| self.time(k)).collect()
    }

    pub fn states(&self) -> &[HybridOperator] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &HybridOperator {
        &self.states[k]
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }
}

/// Filtered path for given detection times.
pub fn filter_path(
    g: &ModelGenerators,
    cache: &GridCache,
    rho0: &HybridOperator,
    traj: &Trajectory,
) -> Result<FilteredPath> {
    let steps = step_operators(g, cache, traj)?;
    filter_with_steps(cache, rho0, traj, &steps)
}

pub(crate) fn filter_with_steps(
    cache: &GridCache,
    rho0: &HybridOperator,
    traj: &Trajectory,
    steps: &[Step],
) -> Result<FilteredPath> {
    let mut states = Vec::with_capacity(steps.len() + 1);
    let mut current = rho0.clone();
    states.push(current.clone());
    for step in steps {
        current = propagate_normalized(step.resolve(cache), &current)?;
        states.push(current.clone());
    }
    Ok(FilteredPath {
        t0: traj.window_start(),
        dt: cache.dt(),
        states,
        trajectory: traj.clone(),
    })
}

/// Samples a record on `[0, t_total]` and returns its filtered path.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    g: &ModelGenerators,
    cache: &GridCache,
    rho0: &HybridOperator,
    t_total: f64,
    rng: &mut R,
) -> Result<FilteredPath> {
    steps_for(t_total, cache.dt())?;
    let traj = sample_record(g, rho0, 0.0, t_total, rng)?;
    filter_path(g, cache, rho0, &traj)
}

/// `ln Tr[(1| U[T, t₀, record] |ρ₀)]`, accumulated factor by factor as
/// waiting densities times the final survival. Infeasible records give
/// `-inf`.
pub fn trajectory_log_weight(g: &ModelGenerators, traj: &Trajectory, rho0: &HybridOperator) -> Result<f64> {
    let mut state = rho0.clone();
    let mut log_weight = 0.0;
    let mut now = traj.window_start();
    for &t in traj.jump_times() {
        let evolved = apply(&expm(g.d(), t - now)?, &state)?;
        let jumped = apply(g.j(), &evolved)?;
        let density = jumped.total_trace().re;
        if !(density > NULL_JUMP_THRESHOLD) {
            return Ok(f64::NEG_INFINITY);
        }
        log_weight += density.ln();
        state = jumped.scale_real(1.0 / density);
        now = t;
    }
    let surv = survival(g, &state, traj.window_end() - now)?;
    if !(surv > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_weight + surv.ln())
}
