//! Backward effect propagation and Bayesian smoothing of hybrid states.
//!
//! The effect `|E_t) = U#[T, t, future]|I)` carries the likelihood of the
//! detections in `(t, T]`. Pairing it blockwise with the filtered state
//! gives the smoothed classical distribution; re-weighting the filtered
//! conditional blocks with it gives the smoothed hybrid state.
//!
//! Only ratios of pairings are ever used, so effects are freely rescaled
//! during propagation to keep long windows away from underflow.

use num_complex::Complex64;

use crate::algebra::{devectorize, dual, trace_functional, CMatrix, ClassicalDist, HybridOperator};
use crate::error::{Error, Result};
use crate::generators::{reduce_classical, reduce_quantum, steps_for, GridCache, ModelGenerators, EXTINCTION_THRESHOLD};
use crate::jumps::{step_operators, FilteredPath, Step, Trajectory};

/// Smallest admissible normalization of the smoothed weights.
pub const WEIGHT_FLOOR: f64 = 1e-300;
/// Filtered blocks with smaller trace count as empty.
pub const EMPTY_BLOCK_TRACE: f64 = EXTINCTION_THRESHOLD;
/// Weight allowed on an empty filtered block.
pub const STRAY_WEIGHT_TOL: f64 = 1e-12;

/// Effects on the grid `t_start, t_start + dt, …, T`.
///
/// The true effect at index `k` is `effects[k] · exp(log_scales[k])`.
#[derive(Clone, Debug)]
pub struct EffectPath {
    t0: f64,
    dt: f64,
    effects: Vec<HybridOperator>,
    log_scales: Vec<f64>,
}

impl EffectPath {
    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn effects(&self) -> &[HybridOperator] {
        &self.effects
    }

    pub fn effect(&self, k: usize) -> &HybridOperator {
        &self.effects[k]
    }

    pub fn log_scale(&self, k: usize) -> f64 {
        self.log_scales[k]
    }

    /// Effect with its scale restored. May underflow for long windows.
    pub fn unscaled(&self, k: usize) -> HybridOperator {
        self.effects[k].scale_real(self.log_scales[k].exp())
    }
}

fn rescale(op: &mut HybridOperator) -> f64 {
    let m = op.max_abs();
    if m > 0.0 && m.is_finite() {
        *op = op.scale_real(1.0 / m);
        m.ln()
    } else {
        0.0
    }
}

/// Propagates `|I)` backward from `t_end` to `t_start` through the dual
/// step propagators, using the jumps of `traj` inside `(t_start, t_end]`.
pub fn effect_backward(
    g: &ModelGenerators,
    cache: &GridCache,
    traj: &Trajectory,
    t_start: f64,
    t_end: f64,
) -> Result<EffectPath> {
    let window = traj.restrict(t_start, t_end)?;
    let steps = step_operators(g, cache, &window)?;
    let n = steps.len();
    let free_dual = dual(cache.exp_d());
    let mut effects = vec![HybridOperator::identity_effect(g.n_classical(), g.dim()); n + 1];
    let mut log_scales = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let back = match &steps[k] {
            Step::Free => free_dual.clone(),
            Step::Composite(s) => dual(s),
        };
        let mut e = crate::algebra::apply(&back, &effects[k + 1])?;
        e.symmetrize();
        let ls = rescale(&mut e);
        effects[k] = e;
        log_scales[k] = log_scales[k + 1] + ls;
    }
    Ok(EffectPath {
        t0: t_start,
        dt: cache.dt(),
        effects,
        log_scales,
    })
}

/// Smoothed classical distribution, `P_R ∝ Tr[(R|ρ_f)(R|E)]`.
pub fn smoothed_classical(filtered: &HybridOperator, effect: &HybridOperator) -> Result<ClassicalDist> {
    if filtered.n_classical() != effect.n_classical() || filtered.dim() != effect.dim() {
        return Err(Error::DimensionMismatch("filtered state and effect differ in shape".into()));
    }
    let d = filtered.dim();
    let weights: Vec<f64> = filtered
        .blocks()
        .iter()
        .zip(effect.blocks())
        .map(|(rho, e)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..d {
                for k in 0..d {
                    acc += rho[(i, k)] * e[(k, i)];
                }
            }
            acc.re.max(0.0)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > WEIGHT_FLOOR) {
        return Err(Error::InfeasibleFuture);
    }
    ClassicalDist::from_weights(&weights).ok_or(Error::InfeasibleFuture)
}

/// Re-weights the filtered conditional blocks with `probs`.
pub fn smoothed_state(filtered: &HybridOperator, probs: &ClassicalDist) -> Result<HybridOperator> {
    if probs.len() != filtered.n_classical() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} classical labels",
            probs.len(),
            filtered.n_classical()
        )));
    }
    let d = filtered.dim();
    let mut blocks = Vec::with_capacity(probs.len());
    for (label, (block, &p)) in filtered.blocks().iter().zip(probs.probs()).enumerate() {
        let tr = block.trace().re;
        if tr < EMPTY_BLOCK_TRACE {
            if p >= STRAY_WEIGHT_TOL {
                return Err(Error::InconsistentWeight { label, weight: p });
            }
            blocks.push(CMatrix::zeros(d));
        } else {
            blocks.push(block.scale_real(p / tr));
        }
    }
    let mut out = HybridOperator::new(blocks)?;
    if let Some(n) = out.normalized() {
        out = n;
    }
    out.symmetrize();
    Ok(out)
}

/// Smoothed estimate at one grid time.
#[derive(Clone, Debug)]
pub struct SmoothedRecord {
    pub time: f64,
    pub classical_dist: ClassicalDist,
    pub smoothed_state: HybridOperator,
    pub quantum_partial: CMatrix,
    pub classical_partial: ClassicalDist,
    pub quantum_purity: f64,
    pub classical_purity: f64,
}

impl SmoothedRecord {
    pub fn from_parts(time: f64, filtered: &HybridOperator, effect: &HybridOperator) -> Result<Self> {
        let classical_dist = smoothed_classical(filtered, effect)?;
        let state = smoothed_state(filtered, &classical_dist)?;
        let quantum_partial = reduce_quantum(&state);
        let classical_partial = reduce_classical(&state)?;
        Ok(SmoothedRecord {
            time,
            quantum_purity: quantum_partial.purity(),
            classical_purity: classical_partial.purity(),
            classical_dist,
            smoothed_state: state,
            quantum_partial,
            classical_partial,
        })
    }
}

/// Effect operator whose blockwise pairing with `X` equals `row · vec(X)`.
fn effect_from_row(row: &[Complex64], n_classical: usize, d: usize) -> Result<HybridOperator> {
    let h = devectorize(row, n_classical, d)?;
    let mut e = HybridOperator::new(h.blocks().iter().map(CMatrix::transpose).collect())?;
    e.symmetrize();
    Ok(e)
}

fn normalize_row(v: &mut [Complex64]) {
    let m = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if m > 0.0 && m.is_finite() {
        for z in v.iter_mut() {
            *z /= m;
        }
    }
}

fn rescale_matrix(m: &mut CMatrix) {
    let s = m.max_abs();
    if s > 0.0 && s.is_finite() {
        m.scale_in_place(1.0 / s);
    }
}

/// Fixed-lag smoothing along a filtered path, computing the grid cache.
pub fn smooth_path(g: &ModelGenerators, fp: &FilteredPath, lag: f64) -> Result<Vec<SmoothedRecord>> {
    let cache = g.grid_cache(fp.dt())?;
    smooth_path_cached(g, &cache, fp, lag)
}

/// Fixed-lag smoothing along a filtered path.
///
/// Each grid time `t` with `t + lag` inside the record is smoothed against
/// the detections in `(t, t + lag]`. The window propagators
/// `M_k = S_{k+L-1} ⋯ S_k` are assembled from block-wise prefix and suffix
/// products, so the cost per grid point is a few matrix products rather
/// than a full backward pass.
pub fn smooth_path_cached(
    g: &ModelGenerators,
    cache: &GridCache,
    fp: &FilteredPath,
    lag: f64,
) -> Result<Vec<SmoothedRecord>> {
    let lag_steps = steps_for(lag, cache.dt())?;
    let steps = step_operators(g, cache, fp.trajectory())?;
    if steps.len() + 1 != fp.len() {
        return Err(Error::InvalidGrid("filtered path and trajectory grids differ".into()));
    }
    let rows = window_rows(g, cache, &steps, lag_steps);
    let (n_c, d) = (g.n_classical(), g.dim());
    rows.iter()
        .enumerate()
        .map(|(k, row)| {
            let effect = match row {
                Some(r) => effect_from_row(r, n_c, d)?,
                None => HybridOperator::identity_effect(n_c, d),
            };
            SmoothedRecord::from_parts(fp.time(k), fp.state(k), &effect)
        })
        .collect()
}

/// Row vectors `τᵀ M_k` for every window start `k` (`None` for a zero lag).
fn window_rows(g: &ModelGenerators, cache: &GridCache, steps: &[Step], lag: usize) -> Vec<Option<Vec<Complex64>>> {
    let n = steps.len();
    if lag > n {
        return Vec::new();
    }
    let count = n - lag + 1;
    if lag == 0 {
        return vec![None; count];
    }
    let tau = trace_functional(g.n_classical(), g.dim());
    let dim = tau.len();
    let mat = |k: usize| steps[k].resolve(cache).matrix();
    let mut rows: Vec<Option<Vec<Complex64>>> = vec![None; count];

    let mut block_start = 0;
    while block_start < count {
        let block_end = (block_start + lag).min(count);
        let next = block_start + lag;
        // a[m] = τᵀ · S_{next+m-1} ⋯ S_next, for the window overhang m
        let overhang = block_end - block_start;
        let mut heads = Vec::with_capacity(overhang);
        let mut prefix = CMatrix::identity(dim);
        for m in 0..overhang {
            if m > 0 {
                prefix = mat(next + m - 1).matmul(&prefix);
                rescale_matrix(&mut prefix);
            }
            let mut a = prefix.vecmat(&tau);
            normalize_row(&mut a);
            heads.push(a);
        }
        // suffix = S_{next-1} ⋯ S_k, grown downward
        let mut suffix = CMatrix::identity(dim);
        for k in (block_start..next).rev() {
            suffix = suffix.matmul(mat(k));
            rescale_matrix(&mut suffix);
            if k < block_end {
                let mut r = suffix.vecmat(&heads[k - block_start]);
                normalize_row(&mut r);
                rows[k] = Some(r);
            }
        }
        block_start = next;
    }
    rows
}

/// Window propagator `M` over `steps` (oracle helper, applied first-to-last).
#[cfg(test)]
pub(crate) fn compose_steps(cache: &GridCache, steps: &[Step]) -> crate::algebra::HybridSuperop {
    let first = steps[0].resolve(cache);
    let mut acc = crate::algebra::HybridSuperop::identity(first.n_classical(), first.dim());
    for s in steps {
        acc = s.resolve(cache).compose(&acc);
    }
    acc
}
