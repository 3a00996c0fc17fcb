//! Resonantly driven two-level emitter watched by a photon detector of
//! efficiency `η`.
//!
//! Basis order is `(|+⟩, |−⟩)`, so index 0 is the excited level. The hybrid
//! model adds a fictitious two-state classical system with labels
//! `d = 0` (last emission detected) and `u = 1` (last emission missed).

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Open01};

use crate::algebra::{CMatrix, HybridOperator};
use crate::error::{Error, Result};
use crate::generators::{JumpTerm, ModelSpec};

pub const LABEL_D: usize = 0;
pub const LABEL_U: usize = 1;
pub const EXCITED: usize = 0;
pub const GROUND: usize = 1;

/// Relative distance below which two roots are merged.
pub const ROOT_MERGE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluorParams {
    pub omega: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl FluorParams {
    pub fn new(omega: f64, gamma: f64, eta: f64) -> Result<Self> {
        let p = FluorParams { omega, gamma, eta };
        p.validate()?;
        Ok(p)
    }

    /// Rates in units of `γ`.
    pub fn canonical(omega_over_gamma: f64, eta: f64) -> Result<Self> {
        Self::new(omega_over_gamma, 1.0, eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParameter(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidParameter(format!("omega must be >= 0, got {}", self.omega)));
        }
        Ok(())
    }

    pub fn gamma_d(&self) -> f64 {
        self.gamma * self.eta
    }

    pub fn gamma_u(&self) -> f64 {
        self.gamma * (1.0 - self.eta)
    }

    /// Mean time between detections, `(γ² + 2Ω²)/(γηΩ²)`.
    pub fn mean_waiting_time(&self) -> f64 {
        (self.gamma.powi(2) + 2.0 * self.omega.powi(2)) / (self.gamma * self.eta * self.omega.powi(2))
    }

    /// Stationary excited population `Ω²/(γ² + 2Ω²)`.
    pub fn steady_excited_population(&self) -> f64 {
        self.omega.powi(2) / (self.gamma.powi(2) + 2.0 * self.omega.powi(2))
    }
}

/// Lowering operator `σ = |−⟩⟨+|`.
pub fn sigma() -> CMatrix {
    CMatrix::unit(2, GROUND, EXCITED)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).expect("static 2x2")
}

pub fn ground_projector() -> CMatrix {
    CMatrix::unit(2, GROUND, GROUND)
}

fn drive(p: &FluorParams) -> CMatrix {
    sigma_x().scale_real(0.5 * p.omega)
}

/// Single-label model: decay `γ` split into an observed part `γη`.
pub fn build_plain(p: &FluorParams) -> Result<ModelSpec> {
    p.validate()?;
    Ok(ModelSpec {
        n_classical: 1,
        d: 2,
        hamiltonians: vec![drive(p)],
        jumps: vec![
            JumpTerm::new(0, 0, sigma(), p.gamma_d(), true),
            JumpTerm::new(0, 0, sigma(), p.gamma_u(), false),
        ],
    })
}

/// Two-label model: detected emissions land in `d`, missed ones in `u`.
pub fn build_hybrid(p: &FluorParams) -> Result<ModelSpec> {
    p.validate()?;
    let h = drive(p);
    Ok(ModelSpec {
        n_classical: 2,
        d: 2,
        hamiltonians: vec![h.clone(), h],
        jumps: vec![
            JumpTerm::new(LABEL_D, LABEL_D, sigma(), p.gamma_d(), true),
            JumpTerm::new(LABEL_U, LABEL_D, sigma(), p.gamma_d(), true),
            JumpTerm::new(LABEL_U, LABEL_U, sigma(), p.gamma_u(), false),
            JumpTerm::new(LABEL_D, LABEL_U, sigma(), p.gamma_u(), false),
        ],
    })
}

/// `|−⟩⟨−|` as a single-label state.
pub fn plain_initial_state() -> HybridOperator {
    HybridOperator::product(&ground_projector(), &[1.0]).expect("static state")
}

/// `|−⟩⟨−| |d)`, also the post-detection reset state.
pub fn hybrid_initial_state() -> HybridOperator {
    HybridOperator::on_label(&ground_projector(), LABEL_D, 2).expect("static state")
}

/// Closed-form stationary state of the emitter.
pub fn steady_state(p: &FluorParams) -> CMatrix {
    let (g, o) = (p.gamma, p.omega);
    let norm = g * g + 2.0 * o * o;
    let mut m = CMatrix::zeros(2);
    m[(0, 0)] = Complex64::new(o * o / norm, 0.0);
    m[(0, 1)] = Complex64::new(0.0, -g * o / norm);
    m[(1, 0)] = Complex64::new(0.0, g * o / norm);
    m[(1, 1)] = Complex64::new((g * g + o * o) / norm, 0.0);
    m
}

/// Laplace transform of the waiting-time density,
/// `γηΩ² / (u(u+γ)(2u+γ) + (2u+γη)Ω²)`.
pub fn waiting_laplace(p: &FluorParams, u: f64) -> f64 {
    let (g, o2) = (p.gamma, p.omega * p.omega);
    g * p.eta * o2 / (u * (u + g) * (2.0 * u + g) + (2.0 * u + g * p.eta) * o2)
}

/// How the poles of the Laplace density are arranged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RootStructure {
    Distinct,
    /// One double pole and one simple pole.
    Double,
    Triple,
}

/// One exponential mode `Σ_k c_k t^k e^{r t}`.
#[derive(Clone, Debug)]
struct Mode {
    rate: Complex64,
    coeffs: Vec<Complex64>,
}

/// Time-domain waiting-time law obtained by partial fractions.
#[derive(Clone, Debug)]
pub struct WaitingTimeLaw {
    params: FluorParams,
    roots: [Complex64; 3],
    structure: RootStructure,
    modes: Vec<Mode>,
}

fn cubic_coeffs(p: &FluorParams) -> [f64; 4] {
    let (g, o2) = (p.gamma, p.omega * p.omega);
    [2.0, 3.0 * g, g * g + 2.0 * o2, g * p.eta * o2]
}

fn eval_cubic(c: &[f64; 4], z: Complex64) -> (Complex64, Complex64) {
    let v = ((z * c[0] + c[1]) * z + c[2]) * z + c[3];
    let dv = (z * (3.0 * c[0]) + 2.0 * c[1]) * z + c[2];
    (v, dv)
}

/// Roots of the denominator cubic from the companion matrix, Newton-polished.
fn cubic_roots(c: &[f64; 4]) -> [Complex64; 3] {
    let (a2, a1, a0) = (c[1] / c[0], c[2] / c[0], c[3] / c[0]);
    let companion = Matrix3::new(0.0, 0.0, -a0, 1.0, 0.0, -a1, 0.0, 1.0, -a2);
    let ev = companion.complex_eigenvalues();
    let mut roots = [ev[0], ev[1], ev[2]];
    for r in &mut roots {
        for _ in 0..4 {
            let (v, dv) = eval_cubic(c, *r);
            if dv.norm() < 1e-300 {
                break;
            }
            let next = *r - v / dv;
            if !(next.re.is_finite() && next.im.is_finite()) {
                break;
            }
            if eval_cubic(c, next).0.norm() <= v.norm() {
                *r = next;
            } else {
                break;
            }
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

fn close(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= ROOT_MERGE_TOL * a.norm().max(b.norm())
}

/// Pole layout after merging coincident roots.
fn classify_roots(c: &[f64; 4], roots: [Complex64; 3]) -> (RootStructure, Vec<(Complex64, usize)>) {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // Critical points of the cubic: a root there is at least double. This
    // catches multiplicities that the eigenvalue route smears out.
    let (qa, qb, qc) = (3.0 * c[0], 2.0 * c[1], c[2]);
    let disc = qb * qb - 4.0 * qa * qc;
    let at_crit = |x: f64| eval_cubic(c, Complex64::new(x, 0.0)).0.norm() <= 1e-14 * scale;
    if disc.abs() <= 1e-12 * qb * qb {
        let x = -qb / (2.0 * qa);
        if at_crit(x) {
            return (RootStructure::Triple, vec![(Complex64::new(x, 0.0), 3)]);
        }
    }
    if disc > 0.0 {
        let sq = disc.sqrt();
        for x in [(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)] {
            if at_crit(x) {
                let pair = Complex64::new(x, 0.0);
                // the remaining root follows from the sum of roots −c₁/c₀
                let single = Complex64::new(-c[1] / c[0] - 2.0 * x, 0.0);
                return (RootStructure::Double, vec![(pair, 2), (single, 1)]);
            }
        }
    }
    let [r0, r1, r2] = roots;
    if close(r0, r1) && close(r1, r2) {
        return (RootStructure::Triple, vec![((r0 + r1 + r2) / 3.0, 3)]);
    }
    for (a, b, s) in [(r0, r1, r2), (r1, r2, r0), (r0, r2, r1)] {
        if close(a, b) {
            return (RootStructure::Double, vec![((a + b) / 2.0, 2), (s, 1)]);
        }
    }
    (RootStructure::Distinct, roots.iter().map(|&r| (r, 1)).collect())
}

impl WaitingTimeLaw {
    pub fn new(p: &FluorParams) -> Result<Self> {
        p.validate()?;
        if !(p.omega > 0.0) {
            return Err(Error::InvalidParameter("an undriven emitter never emits (omega = 0)".into()));
        }
        let c = cubic_coeffs(p);
        let roots = cubic_roots(&c);
        let k = Complex64::new(c[3], 0.0);
        let lead = c[0];
        let (structure, poles) = classify_roots(&c, roots);

        let modes = match structure {
            // K / (lead (u − r)³)  ->  K/lead · t²/2 · e^{rt}
            RootStructure::Triple => vec![Mode {
                rate: poles[0].0,
                coeffs: vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), k / (2.0 * lead)],
            }],
            // K / (lead (u − r)² (u − s)): the pole at r contributes
            // e^{rt} [g'(r) + g(r) t] with g(u) = K / (lead (u − s)).
            RootStructure::Double => {
                let (pair, single) = (poles[0].0, poles[1].0);
                let diff = pair - single;
                vec![
                    Mode {
                        rate: pair,
                        coeffs: vec![-k / (lead * diff * diff), k / (lead * diff)],
                    },
                    Mode {
                        rate: single,
                        coeffs: vec![k / (lead * diff * diff)],
                    },
                ]
            }
            RootStructure::Distinct => roots
                .iter()
                .map(|&r| Mode {
                    rate: r,
                    coeffs: vec![k / eval_cubic(&c, r).1],
                })
                .collect(),
        };

        Ok(WaitingTimeLaw {
            params: *p,
            roots,
            structure,
            modes,
        })
    }

    pub fn params(&self) -> &FluorParams {
        &self.params
    }

    pub fn roots(&self) -> &[Complex64; 3] {
        &self.roots
    }

    pub fn structure(&self) -> RootStructure {
        self.structure
    }

    /// Probability density of the time between detections.
    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.modes
            .iter()
            .map(|m| {
                let e = (m.rate * t).exp();
                let mut tk = 1.0;
                let mut acc = Complex64::new(0.0, 0.0);
                for &c in &m.coeffs {
                    acc += c * tk;
                    tk *= t;
                }
                acc * e
            })
            .sum::<Complex64>()
            .re
    }

    /// `∫₀ᵗ w(s) ds`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for m in &self.modes {
            let r = m.rate;
            let e = (r * t).exp();
            for (k, &c) in m.coeffs.iter().enumerate() {
                acc += c * power_exp_integral(k, r, t, e);
            }
        }
        acc.re.clamp(0.0, 1.0)
    }

    /// Probability of no detection within `t`.
    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    /// Mean from the time-domain modes: `Σ c_k (k+1)! / (−r)^{k+2}`.
    pub fn mean(&self) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in &self.modes {
            let mut fact = 1.0;
            for (k, &c) in m.coeffs.iter().enumerate() {
                fact *= (k + 1) as f64;
                acc += c * fact / (-m.rate).powi(k as i32 + 2);
            }
        }
        acc.re
    }

    /// Draws a waiting time by inverting the closed-form distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile(u)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let mut hi = self.params.mean_waiting_time();
        while self.cdf(hi) < u {
            hi *= 2.0;
            if hi > 1e12 {
                return hi;
            }
        }
        let mut lo = 0.0;
        let tol = 1e-12 * hi.max(1.0);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `∫₀ᵗ s^k e^{r s} ds` for `k ≤ 2`, given `e = e^{r t}`.
fn power_exp_integral(k: usize, r: Complex64, t: f64, e: Complex64) -> Complex64 {
    match k {
        0 => (e - 1.0) / r,
        1 => e * (t / r - 1.0 / (r * r)) + 1.0 / (r * r),
        2 => e * (t * t / r - 2.0 * t / (r * r) + 2.0 / (r * r * r)) - 2.0 / (r * r * r),
        _ => unreachable!("cubic denominators give at most triple poles"),
    }
}

/// Inefficient-detector waiting time from perfect-detector events: each
/// event is kept with probability `η`, so the result is the sum of `k + 1`
/// perfect-detector intervals with `k ~ Geometric(η)` rejections.
#[derive(Clone, Debug)]
pub struct ThinningSampler {
    perfect: WaitingTimeLaw,
    rejections: Geometric,
}

impl ThinningSampler {
    pub fn new(p: &FluorParams) -> Result<Self> {
        let perfect = WaitingTimeLaw::new(&FluorParams { eta: 1.0, ..*p })?;
        let rejections = Geometric::new(p.eta).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(ThinningSampler { perfect, rejections })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = self.rejections.sample(rng);
        (0..=k).map(|_| self.perfect.sample(rng)).sum()
    }
}

pub fn thinning_sampler<R: Rng + ?Sized>(p: &FluorParams, rng: &mut R) -> Result<f64> {
    Ok(ThinningSampler::new(p)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::apply;
    use crate::generators::{master_solve, reduce_classical, reduce_quantum, ModelGenerators, TimeGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(omega: f64, eta: f64) -> FluorParams {
        FluorParams::canonical(omega, eta).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(FluorParams::new(1.0, 0.0, 0.5).is_err());
        assert!(FluorParams::new(1.0, 1.0, 0.0).is_err());
        assert!(FluorParams::new(1.0, 1.0, 1.1).is_err());
        assert!(FluorParams::new(-1.0, 1.0, 0.5).is_err());
        assert!(FluorParams::new(0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn undriven_decay_is_exponential() {
        let p = params(0.0, 0.7);
        let g = ModelGenerators::build(&build_plain(&p).unwrap()).unwrap();
        let excited = HybridOperator::product(&CMatrix::unit(2, EXCITED, EXCITED), &[1.0]).unwrap();
        let grid = TimeGrid::new(4.0, 0.5).unwrap();
        for (k, s) in master_solve(&g, &excited, &grid).unwrap().iter().enumerate() {
            let pop = s.block(0)[(EXCITED, EXCITED)].re;
            assert!((pop - (-grid.time(k)).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_detector_observes_whole_gain_term() {
        let p = params(1.3, 1.0);
        let g = ModelGenerators::build(&build_plain(&p).unwrap()).unwrap();
        let rho = HybridOperator::product(&steady_state(&p), &[1.0]).unwrap();
        let j = apply(g.j(), &rho).unwrap();
        let expected = sigma().matmul(rho.block(0)).matmul(&sigma().adjoint());
        assert!(j.block(0).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn plain_observed_channel_is_gamma_eta_sandwich() {
        let p = params(1.0, 0.8);
        let g = ModelGenerators::build(&build_plain(&p).unwrap()).unwrap();
        let rho = HybridOperator::product(&steady_state(&p), &[1.0]).unwrap();
        let j = apply(g.j(), &rho).unwrap();
        let expected = sigma().matmul(rho.block(0)).matmul(&sigma().adjoint()).scale_real(0.8);
        assert!(j.block(0).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn steady_state_closed_form() {
        let p = params(1.0, 0.8);
        assert!((p.steady_excited_population() - 1.0 / 3.0).abs() < 1e-15);
        let rho = steady_state(&p);
        assert!((rho[(0, 0)].re - 1.0 / 3.0).abs() < 1e-15);
        assert!((rho.trace().re - 1.0).abs() < 1e-15);
        // stationary under the plain generator
        let g = ModelGenerators::build(&build_plain(&p).unwrap()).unwrap();
        let h = HybridOperator::product(&rho, &[1.0]).unwrap();
        assert!(apply(g.l(), &h).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn hybrid_steady_classical_split_and_perfect_detector() {
        let p = params(1.0, 0.8);
        let g = ModelGenerators::build(&build_hybrid(&p).unwrap()).unwrap();
        let grid = TimeGrid::new(40.0, 0.5).unwrap();
        let last = master_solve(&g, &hybrid_initial_state(), &grid).unwrap().pop().unwrap();
        let probs = reduce_classical(&last).unwrap();
        assert!((probs.probs()[LABEL_D] - 0.8).abs() < 1e-9);
        assert!(last.block(LABEL_D).max_abs_diff(&steady_state(&p).scale_real(0.8)) < 1e-9);
        assert!(last.block(LABEL_U).max_abs_diff(&steady_state(&p).scale_real(0.2)) < 1e-9);

        let perfect = params(1.0, 1.0);
        let g = ModelGenerators::build(&build_hybrid(&perfect).unwrap()).unwrap();
        for s in master_solve(&g, &hybrid_initial_state(), &TimeGrid::new(10.0, 0.5).unwrap()).unwrap() {
            assert!(s.block(LABEL_U).max_abs() < 1e-15);
        }
    }

    #[test]
    fn hybrid_reduction_follows_plain_dynamics() {
        let p = params(1.0, 0.6);
        let gh = ModelGenerators::build(&build_hybrid(&p).unwrap()).unwrap();
        let gp = ModelGenerators::build(&build_plain(&p).unwrap()).unwrap();
        let grid = TimeGrid::new(10.0, 0.1).unwrap();
        let hy = master_solve(&gh, &hybrid_initial_state(), &grid).unwrap();
        let pl = master_solve(&gp, &plain_initial_state(), &grid).unwrap();
        for (a, b) in hy.iter().zip(&pl) {
            assert!(reduce_quantum(a).max_abs_diff(b.block(0)) < 1e-9);
        }
    }

    /// Right-hand side of the two-label detector equation written out by
    /// hand, independent of the generator assembly.
    fn detector_rhs(p: &FluorParams, rho: &HybridOperator) -> [CMatrix; 2] {
        let s = sigma();
        let sd = s.adjoint();
        let n = sd.matmul(&s);
        let h = sigma_x().scale_real(0.5 * p.omega);
        let rates = [p.gamma_d(), p.gamma_u()];
        let mut out = [CMatrix::zeros(2), CMatrix::zeros(2)];
        for a in 0..2 {
            let b = 1 - a;
            let ra = rho.block(a);
            let rb = rho.block(b);
            let i = Complex64::new(0.0, 1.0);
            let comm = &h.matmul(ra) - &ra.matmul(&h);
            let anti = (&n.matmul(ra) + &ra.matmul(&n)).scale_real(0.5);
            let mut acc = comm.scale(-i);
            acc.axpy(rates[a].into(), &s.matmul(ra).matmul(&sd));
            acc.axpy((-rates[a]).into(), &anti);
            acc.axpy((-rates[b]).into(), &anti);
            acc.axpy(rates[a].into(), &s.matmul(rb).matmul(&sd));
            out[a] = acc;
        }
        out
    }

    #[test]
    fn hybrid_generator_matches_hand_coded_rhs() {
        let p = params(1.0, 0.8);
        let g = ModelGenerators::build(&build_hybrid(&p).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..10 {
            let rho = crate::generators::tests::random_state(2, 2, &mut rng);
            let got = apply(g.l(), &rho).unwrap();
            let expected = detector_rhs(&p, &rho);
            for (block, want) in got.blocks().iter().zip(&expected) {
                assert!(block.max_abs_diff(want) < 1e-12);
            }
        }
    }

    #[test]
    fn laplace_value_at_zero_is_one() {
        for &(o, e) in &[(1.0, 0.8), (0.3, 0.1), (2.5, 1.0)] {
            assert!((waiting_laplace(&params(o, e), 0.0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn laplace_geometric_series_identity() {
        let p = params(1.0, 0.8);
        let p1 = params(1.0, 1.0);
        for k in 0..50 {
            let u = 0.1 * k as f64;
            let w = waiting_laplace(&p, u);
            let w1 = waiting_laplace(&p1, u);
            assert!((w * (1.0 - 0.2 * w1) - 0.8 * w1).abs() < 1e-12);
        }
    }

    #[test]
    fn density_normalizes_and_has_closed_form_mean() {
        let p = params(1.0, 0.8);
        let law = WaitingTimeLaw::new(&p).unwrap();
        assert_eq!(law.structure(), RootStructure::Distinct);
        // trapezoid over [0, 60]
        let n = 60_000;
        let h = 60.0 / n as f64;
        let mut integral = 0.5 * (law.density(0.0) + law.density(60.0));
        let mut min_density = f64::INFINITY;
        for i in 1..n {
            let w = law.density(i as f64 * h);
            integral += w;
            min_density = min_density.min(w);
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
        assert!(min_density > -1e-10);
        assert!((law.cdf(60.0) - integral).abs() < 1e-6);
        // −dw/du at 0 by central difference on the Laplace form
        let du = 1e-5;
        let fd_mean = -(waiting_laplace(&p, du) - waiting_laplace(&p, -du)) / (2.0 * du);
        assert!((fd_mean - 3.75).abs() < 1e-6);
        assert!((law.mean() - fd_mean).abs() < 1e-6);
        assert!((p.mean_waiting_time() - 3.75).abs() < 1e-15);
    }

    #[test]
    fn density_starts_at_zero() {
        // the emitter must first be re-excited after a reset
        let law = WaitingTimeLaw::new(&params(1.0, 0.8)).unwrap();
        assert!(law.density(0.0).abs() < 1e-12);
        assert_eq!(law.cdf(0.0), 0.0);
    }

    fn check_normalization_and_mean(law: &WaitingTimeLaw, t_max: f64) {
        let n = 100_000;
        let h = t_max / n as f64;
        let integral: f64 = (1..n).map(|i| law.density(i as f64 * h)).sum::<f64>() * h
            + 0.5 * h * (law.density(0.0) + law.density(t_max));
        assert!((integral - 1.0).abs() < 1e-5, "{:?} integral {integral}", law.structure());
        let mean = law.params().mean_waiting_time();
        assert!((law.mean() - mean).abs() < 1e-6 * mean, "{:?}", law.structure());
        assert!((law.cdf(t_max) - integral).abs() < 1e-5);
    }

    #[test]
    fn triple_root_at_half_gamma() {
        // η = 1, Ω = γ/2: the Laplace transform is (1/8)/(u + γ/2)³
        let law = WaitingTimeLaw::new(&params(0.5, 1.0)).unwrap();
        assert_eq!(law.structure(), RootStructure::Triple);
        let t: f64 = 1.7;
        let expected = 0.0625 * t * t * (-0.5 * t).exp();
        assert!((law.density(t) - expected).abs() < 1e-15);
        check_normalization_and_mean(&law, 150.0);
    }

    #[test]
    fn double_root_is_detected_and_normalized() {
        // discriminant zero located numerically for η = 0.5
        let law = WaitingTimeLaw::new(&params(0.307_329_254_787_547_97, 0.5)).unwrap();
        assert_eq!(law.structure(), RootStructure::Double);
        check_normalization_and_mean(&law, 600.0);
    }

    #[test]
    fn distinct_roots_solve_the_cubic() {
        let p = params(1.0, 0.8);
        let c = cubic_coeffs(&p);
        for r in cubic_roots(&c) {
            assert!(eval_cubic(&c, r).0.norm() < 1e-12);
            assert!(r.re < 0.0);
        }
    }

    #[test]
    fn double_root_partial_fractions() {
        // Build a law around an exactly repeated pole and compare against a
        // distinct-root law perturbed by a tiny amount.
        let r = Complex64::new(-0.5, 0.0);
        let s = Complex64::new(-0.5, 0.0) + Complex64::new(-1.0, 0.0);
        let lead = 2.0;
        let k = Complex64::new(0.25, 0.0);
        let modes_double = vec![
            Mode {
                rate: r,
                coeffs: vec![-k / (lead * (r - s) * (r - s)), k / (lead * (r - s))],
            },
            Mode {
                rate: s,
                coeffs: vec![k / (lead * (s - r) * (s - r))],
            },
        ];
        let eps = 1e-5;
        let rs = [r + eps, r - eps, s];
        let modes_split: Vec<Mode> = rs
            .iter()
            .enumerate()
            .map(|(i, &ri)| {
                let denom: Complex64 = rs
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &rj)| ri - rj)
                    .product();
                Mode {
                    rate: ri,
                    coeffs: vec![k / (lead * denom)],
                }
            })
            .collect();
        let eval = |modes: &[Mode], t: f64| -> f64 {
            modes
                .iter()
                .map(|m| {
                    let mut tk = 1.0;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for &c in &m.coeffs {
                        acc += c * tk;
                        tk *= t;
                    }
                    acc * (m.rate * t).exp()
                })
                .sum::<Complex64>()
                .re
        };
        for i in 0..20 {
            let t = 0.5 * i as f64;
            assert!((eval(&modes_double, t) - eval(&modes_split, t)).abs() < 1e-6);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let law = WaitingTimeLaw::new(&params(1.0, 0.8)).unwrap();
        for &u in &[0.01, 0.3, 0.5, 0.9, 0.999] {
            let t = law.quantile(u);
            assert!((law.cdf(t) - u).abs() < 1e-9);
        }
    }

    #[test]
    fn thinning_mean_and_perfect_detector_limit() {
        let p = params(1.0, 0.8);
        let sampler = ThinningSampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 3.75).abs() < 3.0 * se, "mean {mean} se {se}");

        // η = 1: one perfect-detector draw, same stream as the law itself
        let perfect = params(1.0, 1.0);
        let s1 = ThinningSampler::new(&perfect).unwrap();
        let law = WaitingTimeLaw::new(&perfect).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let _ = Geometric::new(1.0).unwrap().sample(&mut b);
        assert_eq!(s1.sample(&mut a), law.sample(&mut b));
    }
}
