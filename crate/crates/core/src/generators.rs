//! Assembly of hybrid Lindblad rate generators and the deterministic and
//! conditional propagation built on them.
//!
//! A model is a list of per-label Hamiltonians plus jump terms. A jump term
//! `(source, target, L, rate)` moves weight from label `source` to label
//! `target` through `rate · L ρ_source L†` and removes it from `source`
//! through `rate · {L†L, ρ_source}₊` with `{p, q}₊ = (pq + qp)/2`. Terms
//! flagged `observed` make up the measurement superoperator `J`; the
//! remainder of the generator is `D = L − J`.

use num_complex::Complex64;

use crate::algebra::{
    apply, expm, trace_functional, CMatrix, ClassicalDist, HybridOperator, HybridSuperop, ONE,
};
use crate::error::{Error, Result};

/// Survival normalizations below this are treated as extinction.
pub const EXTINCTION_THRESHOLD: f64 = 1e-14;
/// Jump probabilities at or below this cannot be normalized.
pub const NULL_JUMP_THRESHOLD: f64 = 1e-300;
/// Allowed deviation of `τᵀ L` from zero for a raw generator.
pub const TRACE_PRESERVATION_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct JumpTerm {
    pub source: usize,
    pub target: usize,
    pub operator: CMatrix,
    pub rate: f64,
    pub observed: bool,
}

impl JumpTerm {
    pub fn new(source: usize, target: usize, operator: CMatrix, rate: f64, observed: bool) -> Self {
        JumpTerm {
            source,
            target,
            operator,
            rate,
            observed,
        }
    }
}

/// Hamiltonian-plus-jumps description of a hybrid generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub n_classical: usize,
    pub d: usize,
    /// One Hamiltonian per classical label; empty means all zero.
    pub hamiltonians: Vec<CMatrix>,
    pub jumps: Vec<JumpTerm>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classical == 0 || self.d == 0 {
            return Err(Error::DimensionMismatch("n_classical and d must be >= 1".into()));
        }
        if !self.hamiltonians.is_empty() {
            if self.hamiltonians.len() != self.n_classical {
                return Err(Error::DimensionMismatch(format!(
                    "{} Hamiltonians for {} classical labels",
                    self.hamiltonians.len(),
                    self.n_classical
                )));
            }
            if self.hamiltonians.iter().any(|h| h.dim() != self.d) {
                return Err(Error::DimensionMismatch("Hamiltonian dimension differs from d".into()));
            }
        }
        for (index, term) in self.jumps.iter().enumerate() {
            if !(term.rate >= 0.0) || !term.rate.is_finite() {
                return Err(Error::NegativeRate { index, rate: term.rate });
            }
            for label in [term.source, term.target] {
                if label >= self.n_classical {
                    return Err(Error::LabelOutOfRange {
                        label,
                        n_classical: self.n_classical,
                    });
                }
            }
            if term.operator.dim() != self.d {
                return Err(Error::DimensionMismatch(format!("jump operator {index} has wrong dimension")));
            }
        }
        Ok(())
    }

    pub fn has_observed_channel(&self) -> bool {
        self.jumps.iter().any(|t| t.observed && t.rate > 0.0)
    }
}

/// Adds `coeff · A X_source B` into block `target` of the generator matrix.
fn add_sandwich(
    m: &mut CMatrix,
    d: usize,
    target: usize,
    source: usize,
    a: &CMatrix,
    b: &CMatrix,
    coeff: Complex64,
) {
    let d2 = d * d;
    for j in 0..d {
        for i in 0..d {
            let row = target * d2 + j * d + i;
            for l in 0..d {
                let blj = b[(l, j)];
                if blj == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..d {
                    let aik = a[(i, k)];
                    if aik == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let col = source * d2 + l * d + k;
                    m[(row, col)] += coeff * aik * blj;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelGenerators {
    l: HybridSuperop,
    d_op: HybridSuperop,
    j: HybridSuperop,
}

impl ModelGenerators {
    /// Assembles `L`, `J` and `D = L − J` from a model description.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let (n_c, d) = (spec.n_classical, spec.d);
        let ident = CMatrix::identity(d);
        let mut full = HybridSuperop::zeros(n_c, d);
        let mut observed = HybridSuperop::zeros(n_c, d);

        for (label, h) in spec.hamiltonians.iter().enumerate() {
            let m = full.matrix_mut();
            add_sandwich(m, d, label, label, h, &ident, Complex64::new(0.0, -1.0));
            add_sandwich(m, d, label, label, &ident, h, Complex64::new(0.0, 1.0));
        }
        for term in &spec.jumps {
            if term.rate == 0.0 {
                continue;
            }
            let op = &term.operator;
            let op_dag = op.adjoint();
            let gain = Complex64::new(term.rate, 0.0);
            add_sandwich(full.matrix_mut(), d, term.target, term.source, op, &op_dag, gain);
            if term.observed {
                add_sandwich(observed.matrix_mut(), d, term.target, term.source, op, &op_dag, gain);
            }
            let number = op_dag.matmul(op);
            let loss = Complex64::new(-0.5 * term.rate, 0.0);
            add_sandwich(full.matrix_mut(), d, term.source, term.source, &number, &ident, loss);
            add_sandwich(full.matrix_mut(), d, term.source, term.source, &ident, &number, loss);
        }
        let d_op = full.sub(&observed);
        Ok(ModelGenerators {
            l: full,
            d_op,
            j: observed,
        })
    }

    /// Builds generators from a raw `L` and its observed part `J`.
    pub fn from_superops(l: HybridSuperop, j: HybridSuperop) -> Result<Self> {
        if l.n_classical() != j.n_classical() || l.dim() != j.dim() {
            return Err(Error::DimensionMismatch("L and J act on different spaces".into()));
        }
        if !l.matrix().is_finite() || !j.matrix().is_finite() {
            return Err(Error::NonFinite("raw generator"));
        }
        let tau = trace_functional(l.n_classical(), l.dim());
        let defect = l.matrix().vecmat(&tau).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > TRACE_PRESERVATION_TOL {
            return Err(Error::InvalidParameter(format!(
                "raw generator does not preserve trace (defect {defect:e})"
            )));
        }
        let d_op = l.sub(&j);
        Ok(ModelGenerators { l, d_op, j })
    }

    pub fn l(&self) -> &HybridSuperop {
        &self.l
    }

    pub fn d(&self) -> &HybridSuperop {
        &self.d_op
    }

    pub fn j(&self) -> &HybridSuperop {
        &self.j
    }

    pub fn n_classical(&self) -> usize {
        self.l.n_classical()
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    /// Caches `exp(D dt)` and `exp(L dt)` for a uniform grid.
    pub fn grid_cache(&self, dt: f64) -> Result<GridCache> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("grid step must be positive, got {dt}")));
        }
        Ok(GridCache {
            dt,
            exp_d: expm(&self.d_op, dt)?,
            exp_l: expm(&self.l, dt)?,
        })
    }
}

/// Propagators for one fixed grid step.
#[derive(Clone, Debug)]
pub struct GridCache {
    dt: f64,
    exp_d: HybridSuperop,
    exp_l: HybridSuperop,
}

impl GridCache {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn exp_d(&self) -> &HybridSuperop {
        &self.exp_d
    }

    pub fn exp_l(&self) -> &HybridSuperop {
        &self.exp_l
    }
}

/// Uniform grid `0, dt, …, n·dt = t_end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub const DIVISIBILITY_TOL: f64 = 1e-9;

    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        Ok(TimeGrid {
            dt,
            n_steps: steps_for(t_end, dt)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.time(k))
    }
}

/// Number of `dt` steps in `span`, requiring exact divisibility.
pub fn steps_for(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidGrid(format!("grid step must be positive, got {dt}")));
    }
    if !(span >= 0.0) || !span.is_finite() {
        return Err(Error::InvalidGrid(format!("span must be non-negative, got {span}")));
    }
    let ratio = span / dt;
    let n = ratio.round();
    if (ratio - n).abs() > TimeGrid::DIVISIBILITY_TOL * n.max(1.0) {
        return Err(Error::InvalidGrid(format!("dt = {dt} does not divide {span}")));
    }
    Ok(n as usize)
}

/// Normalized action of the observed jump superoperator.
pub fn measurement_map(g: &ModelGenerators, rho: &HybridOperator) -> Result<HybridOperator> {
    let jumped = apply(g.j(), rho)?;
    let p = jumped.total_trace().re;
    if !(p > NULL_JUMP_THRESHOLD) {
        return Err(Error::NullJump(p));
    }
    let mut out = jumped.scale_real(1.0 / p);
    out.symmetrize();
    Ok(out)
}

/// Applies a no-jump propagator and renormalizes.
pub(crate) fn propagate_normalized(prop: &HybridSuperop, rho: &HybridOperator) -> Result<HybridOperator> {
    let evolved = apply(prop, rho)?;
    let survival = evolved.total_trace().re;
    if !(survival >= EXTINCTION_THRESHOLD) {
        return Err(Error::Extinct(survival));
    }
    let mut out = evolved.scale_real(1.0 / survival);
    out.symmetrize();
    Ok(out)
}

/// `exp(D Δt) ρ` renormalized to unit trace.
pub fn conditional_propagate(g: &ModelGenerators, rho: &HybridOperator, delta_t: f64) -> Result<HybridOperator> {
    if delta_t == 0.0 {
        return Ok(rho.clone());
    }
    propagate_normalized(&expm(g.d(), delta_t)?, rho)
}

/// Solution of `d|ρ)/dt = L|ρ)` sampled on the grid.
pub fn master_solve(g: &ModelGenerators, rho0: &HybridOperator, grid: &TimeGrid) -> Result<Vec<HybridOperator>> {
    let step = expm(g.l(), grid.dt())?;
    master_solve_with(&step, rho0, grid.n_steps())
}

pub(crate) fn master_solve_with(step: &HybridSuperop, rho0: &HybridOperator, n_steps: usize) -> Result<Vec<HybridOperator>> {
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut current = rho0.clone();
    out.push(current.clone());
    for _ in 0..n_steps {
        current = apply(step, &current)?;
        current.symmetrize();
        out.push(current.clone());
    }
    Ok(out)
}

/// Partial quantum state `Σ_R (R|ρ)`.
pub fn reduce_quantum(rho: &HybridOperator) -> CMatrix {
    let mut acc = CMatrix::zeros(rho.dim());
    for b in rho.blocks() {
        acc.axpy(ONE, b);
    }
    acc
}

/// Partial classical distribution `Tr[(R|ρ)]`.
pub fn reduce_classical(rho: &HybridOperator) -> Result<ClassicalDist> {
    ClassicalDist::new(rho.blocks().iter().map(|b| b.trace().re.max(0.0)).collect())
}
