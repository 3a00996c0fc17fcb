//! Invariant suite: quick numerical checks of every module, reported as
//! named pass/fail results.

use num_complex::Complex64;
use rand::Rng;

use crate::algebra::{apply, devectorize, dual, expm, hs_pairing, vectorize, CMatrix, HybridOperator, HybridSuperop};
use crate::config::RunConfig;
use crate::ensemble::{parse_csv, run_ensemble, to_csv};
use crate::error::{Error, Result};
use crate::fluor::{self, FluorParams, ThinningSampler, WaitingTimeLaw, LABEL_D};
use crate::generators::{master_solve, reduce_classical, reduce_quantum, ModelGenerators, TimeGrid};
use crate::jumps::{filter_path, sample_jump_time, sample_record, simulate_trajectory, JumpSample};
use crate::rng::aux_stream;
use crate::smoother::{effect_backward, smooth_path_cached};
use crate::stats::{ks_one_sample, ks_two_sample, KsResult, Welford};

/// Outcome of one invariant check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn bound(name: &'static str, error: f64, tol: f64) -> Self {
        Check {
            name,
            passed: error <= tol,
            detail: format!("error {error:.3e} (tolerance {tol:.0e})"),
        }
    }

    fn failed(name: &'static str, e: Error) -> Self {
        Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        }
    }
}

/// Random hybrid state with Ginibre blocks.
pub fn random_state<R: Rng + ?Sized>(n_classical: usize, d: usize, rng: &mut R) -> HybridOperator {
    let blocks = (0..n_classical)
        .map(|_| {
            let data = (0..d * d)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let a = CMatrix::from_row_major(d, data).expect("finite entries");
            a.matmul(&a.adjoint())
        })
        .collect();
    HybridOperator::new(blocks)
        .expect("equal blocks")
        .normalized()
        .expect("non-zero trace")
}

/// Random hybrid operator with arbitrary complex entries.
pub fn random_operator<R: Rng + ?Sized>(n_classical: usize, d: usize, rng: &mut R) -> HybridOperator {
    let v: Vec<Complex64> = (0..n_classical * d * d)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    devectorize(&v, n_classical, d).expect("matching length")
}

/// Largest violation of `Tr[(A| S |ρ)] = Tr[(ρ| S# |A)]` over random pairs.
pub fn dual_identity_error<R: Rng + ?Sized>(s: &HybridSuperop, pairs: usize, rng: &mut R) -> Result<f64> {
    let sd = dual(s);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_operator(s.n_classical(), s.dim(), rng);
        let rho = random_state(s.n_classical(), s.dim(), rng);
        let lhs = hs_pairing(&a, &apply(s, &rho)?)?;
        let rhs = hs_pairing(&rho, &apply(&sd, &a)?)?;
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1.0));
    }
    Ok(worst)
}

fn state_defect(rho: &HybridOperator) -> f64 {
    let trace = (rho.total_trace() - Complex64::new(1.0, 0.0)).norm();
    trace.max(rho.hermitian_defect()).max((-rho.min_eigenvalue()).max(0.0))
}

fn algebra_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = aux_stream(seed, 1, 0);
    let mut round_trip: f64 = 0.0;
    for _ in 0..20 {
        let h = random_operator(3, 3, &mut rng);
        round_trip = round_trip.max(devectorize(&vectorize(&h), 3, 3)?.max_abs_diff(&h));
    }
    let g = ModelGenerators::build(&fluor::build_hybrid(&FluorParams::canonical(1.0, 0.8)?)?)?;
    let (a, b) = (expm(g.l(), 0.3)?, expm(g.l(), 0.5)?);
    let semigroup = a.compose(&b).max_abs_diff(&expm(g.l(), 0.8)?);
    let involution = dual(&dual(g.d())).max_abs_diff(g.d());
    Ok(vec![
        Check::bound("algebra: vectorize round trip", round_trip, 0.0),
        Check::bound("algebra: expm semigroup", semigroup, 1e-12),
        Check::bound("algebra: dual involution", involution, 0.0),
    ])
}

fn generator_checks(p: &FluorParams, seed: u64) -> Result<Vec<Check>> {
    let hybrid = ModelGenerators::build(&fluor::build_hybrid(p)?)?;
    let plain = ModelGenerators::build(&fluor::build_plain(p)?)?;
    let mut rng = aux_stream(seed, 2, 0);
    let mut trace_rate: f64 = 0.0;
    for g in [&hybrid, &plain] {
        for _ in 0..10 {
            let rho = random_state(g.n_classical(), 2, &mut rng);
            trace_rate = trace_rate.max(apply(g.l(), &rho)?.total_trace().norm());
        }
    }
    let mut dual_err: f64 = 0.0;
    let prop = expm(hybrid.d(), 0.7)?;
    let composed = hybrid.j().compose(&prop);
    for s in [hybrid.d(), hybrid.j(), &composed] {
        dual_err = dual_err.max(dual_identity_error(s, 50, &mut rng)?);
    }
    let grid = TimeGrid::new(30.0, 0.05)?;
    let path = master_solve(&hybrid, &fluor::hybrid_initial_state(), &grid)?;
    let validity = path.iter().map(state_defect).fold(0.0, f64::max);
    let last = path.last().expect("non-empty grid");
    let steady = reduce_quantum(last).max_abs_diff(&fluor::steady_state(p));
    let split = (reduce_classical(last)?.probs()[LABEL_D] - p.eta).abs();
    Ok(vec![
        Check::bound("generators: trace preservation", trace_rate, 1e-12),
        Check::bound("generators: dual pairing identity", dual_err, 1e-10),
        Check::bound("generators: master path is a state", validity, 1e-9),
        Check::bound("generators: steady state closed form", steady, 1e-6),
        Check::bound("generators: steady classical split", split, 1e-6),
    ])
}

fn jump_checks(p: &FluorParams, seed: u64) -> Result<Vec<Check>> {
    let hybrid = ModelGenerators::build(&fluor::build_hybrid(p)?)?;
    let plain = ModelGenerators::build(&fluor::build_plain(p)?)?;
    let (hc, pc) = (hybrid.grid_cache(0.05)?, plain.grid_cache(0.05)?);
    let mut validity: f64 = 0.0;
    let mut equivalence: f64 = 0.0;
    let mut purity_floor: f64 = 0.0;
    for i in 0..10 {
        let mut rng = aux_stream(seed, 3, i);
        let traj = sample_record(&hybrid, &fluor::hybrid_initial_state(), 0.0, 20.0, &mut rng)?;
        let fh = filter_path(&hybrid, &hc, &fluor::hybrid_initial_state(), &traj)?;
        let fp = filter_path(&plain, &pc, &fluor::plain_initial_state(), &traj)?;
        for (a, b) in fh.states().iter().zip(fp.states()) {
            validity = validity.max(state_defect(a));
            equivalence = equivalence.max(reduce_quantum(a).max_abs_diff(b.block(0)));
            purity_floor = purity_floor.max(0.5 - reduce_quantum(a).purity());
        }
    }
    Ok(vec![
        Check::bound("jump-engine: filtered states are states", validity, 1e-9),
        Check::bound("jump-engine: hybrid reduces to plain filter", equivalence, 1e-9),
        Check::bound("jump-engine: qubit purity at least 1/2", purity_floor, 1e-12),
    ])
}

fn smoother_checks(p: &FluorParams, seed: u64) -> Result<Vec<Check>> {
    let g = ModelGenerators::build(&fluor::build_hybrid(p)?)?;
    let cache = g.grid_cache(0.05)?;
    let mut validity: f64 = 0.0;
    let mut lag0: f64 = 0.0;
    let mut hermitian: f64 = 0.0;
    let mut terminal: f64 = 0.0;
    for i in 0..4 {
        let mut rng = aux_stream(seed, 4, i);
        let fp = simulate_trajectory(&g, &cache, &fluor::hybrid_initial_state(), 20.0, &mut rng)?;
        for rec in smooth_path_cached(&g, &cache, &fp, 5.0)? {
            validity = validity.max(state_defect(&rec.smoothed_state));
            let expected = reduce_classical(&rec.smoothed_state)?;
            let consistency = rec
                .classical_partial
                .probs()
                .iter()
                .zip(expected.probs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            validity = validity.max(consistency);
        }
        for (rec, rho) in smooth_path_cached(&g, &cache, &fp, 0.0)?.iter().zip(fp.states()) {
            lag0 = lag0.max(rec.smoothed_state.max_abs_diff(rho));
        }
        let effects = effect_backward(&g, &cache, fp.trajectory(), 5.0, 15.0)?;
        for e in effects.effects() {
            hermitian = hermitian.max(e.hermitian_defect());
        }
        let ident = HybridOperator::identity_effect(2, 2);
        terminal = terminal.max(effects.effect(effects.len() - 1).max_abs_diff(&ident));
    }
    Ok(vec![
        Check::bound("smoother: smoothed states are states", validity, 1e-9),
        Check::bound("smoother: zero lag reproduces filter", lag0, 1e-12),
        Check::bound("smoother: effects are Hermitian", hermitian, 1e-10),
        Check::bound("smoother: terminal effect is identity", terminal, 0.0),
    ])
}

fn fluor_checks(p: &FluorParams) -> Result<Vec<Check>> {
    let law = WaitingTimeLaw::new(p)?;
    let tail = law.survival(400.0 * p.mean_waiting_time());
    let mean = (law.mean() - p.mean_waiting_time()).abs() / p.mean_waiting_time();
    let start = law.density(0.0).abs();
    let mut monotone = 0.0f64;
    let mut prev = 0.0;
    for k in 0..=2000 {
        let c = law.cdf(k as f64 * 0.01 * p.mean_waiting_time());
        monotone = monotone.max(prev - c);
        prev = c;
    }
    Ok(vec![
        Check::bound("fluor-model: waiting law normalizes", tail, 1e-9),
        Check::bound("fluor-model: waiting law mean", mean, 1e-9),
        Check::bound("fluor-model: no coincident detections", start, 1e-12),
        Check::bound("fluor-model: CDF is monotone", monotone, 1e-12),
    ])
}

fn ensemble_checks(p: &FluorParams, seed: u64) -> Result<Vec<Check>> {
    let base = RunConfig {
        omega_over_gamma: p.omega / p.gamma,
        eta: p.eta,
        t_total: 4.0,
        dt: 0.1,
        lag: 1.0,
        n_traj: 24,
        master_seed: seed,
        ..RunConfig::default()
    };
    let one = run_ensemble(&RunConfig {
        workers: Some(1),
        ..base.clone()
    })?;
    let many = run_ensemble(&RunConfig {
        workers: Some(3),
        ..base
    })?;
    let csv = to_csv(&one);
    let round_trip = parse_csv(&csv)?
        .iter()
        .zip(&one.rows)
        .map(|(a, b)| (a.pop_f - b.pop_f).abs().max((a.se_pop_f - b.se_pop_f).abs()))
        .fold(0.0, f64::max);
    let ranges = one.rows.iter().all(|r| (0.0..=1.0).contains(&r.pop_f) && r.se_pop_f >= 0.0);
    Ok(vec![
        Check {
            name: "ensemble: worker-count independence",
            passed: csv == to_csv(&many),
            detail: "1 vs 3 workers".into(),
        },
        Check::bound("ensemble: CSV round trip", round_trip, 1e-10),
        Check {
            name: "ensemble: populations and errors in range",
            passed: ranges,
            detail: format!("{} rows", one.rows.len()),
        },
    ])
}

/// Comparison of the survival-inversion sampler, the thinning sampler and
/// the closed-form waiting-time law.
#[derive(Clone, Debug)]
pub struct WaitingTimeReport {
    pub analytic_mean: f64,
    pub inversion: Welford,
    pub thinning: Welford,
    pub ks_inversion: KsResult,
    pub ks_thinning: KsResult,
    pub ks_two_sample: KsResult,
}

impl WaitingTimeReport {
    /// Draws `n` delays from the reset state with each sampler.
    pub fn generate(p: &FluorParams, n: usize, seed: u64) -> Result<Self> {
        let law = WaitingTimeLaw::new(p)?;
        let g = ModelGenerators::build(&fluor::build_plain(p)?)?;
        let reset = fluor::plain_initial_state();
        let t_max = 1e3 * p.mean_waiting_time();
        let mut rng = aux_stream(seed, 5, 0);
        let mut inversion = Vec::with_capacity(n);
        while inversion.len() < n {
            if let JumpSample::Jump(t) = sample_jump_time(&g, &reset, t_max, &mut rng)? {
                inversion.push(t);
            }
        }
        let thinner = ThinningSampler::new(p)?;
        let mut rng = aux_stream(seed, 6, 0);
        let thinning: Vec<f64> = (0..n).map(|_| thinner.sample(&mut rng)).collect();
        Ok(WaitingTimeReport {
            analytic_mean: law.mean(),
            ks_inversion: ks_one_sample(&inversion, |t| law.cdf(t)),
            ks_thinning: ks_one_sample(&thinning, |t| law.cdf(t)),
            ks_two_sample: ks_two_sample(&inversion, &thinning),
            inversion: inversion.into_iter().collect(),
            thinning: thinning.into_iter().collect(),
        })
    }

    /// Sample means within `z` standard errors of the analytic mean.
    pub fn means_agree(&self, z: f64) -> bool {
        [&self.inversion, &self.thinning]
            .iter()
            .all(|w| (w.mean() - self.analytic_mean).abs() <= z * w.std_error())
    }

    pub fn passes(&self, significance: f64) -> bool {
        self.ks_inversion.passes(significance)
            && self.ks_thinning.passes(significance)
            && self.ks_two_sample.passes(significance)
            && self.means_agree(3.0)
    }
}

/// Runs every check for the fluorescence model with parameters `p`.
pub fn run_all(p: &FluorParams, seed: u64) -> Vec<Check> {
    let groups: [(&'static str, Result<Vec<Check>>); 6] = [
        ("algebra", algebra_checks(seed)),
        ("generators", generator_checks(p, seed)),
        ("jump-engine", jump_checks(p, seed)),
        ("smoother", smoother_checks(p, seed)),
        ("fluor-model", fluor_checks(p)),
        ("ensemble", ensemble_checks(p, seed)),
    ];
    groups
        .into_iter()
        .flat_map(|(name, r)| match r {
            Ok(checks) => checks,
            Err(e) => vec![Check::failed(name, e)],
        })
        .collect()
}
