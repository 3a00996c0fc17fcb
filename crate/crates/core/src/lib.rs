//! Filtering and smoothing of hybrid quantum-classical states.
//!
//! A quantum system coupled to a discrete classical system evolves under a
//! Lindblad rate equation `d|ρ)/dt = L|ρ)`. One jump channel `J` is
//! continuously monitored; given the recorded jump times the crate computes
//!
//! * the filtered hybrid state, conditioned on past detections,
//! * the effect operator, propagated backward from future detections,
//! * the smoothed classical distribution and smoothed hybrid state that
//!   combine both.
//!
//! The [`fluor`] module provides the resonance-fluorescence model with an
//! inefficient detector, where detector failures are tracked by a
//! fictitious two-state classical system.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod fluor;
pub mod generators;
pub mod jumps;
pub mod rng;
pub mod smoother;
pub mod stats;
pub mod validate;

pub use algebra::{
    apply, devectorize, dual, expm, hs_pairing, vectorize, CMatrix, ClassicalDist, HybridOperator, HybridSuperop,
};
pub use config::{LoadedModel, ModelChoice, RunConfig};
pub use ensemble::{emit_csv, parse_csv, run_ensemble, Ensemble, EnsembleStats, StatsRow};
pub use error::{Error, Result};
pub use fluor::{FluorParams, ThinningSampler, WaitingTimeLaw};
pub use generators::{
    conditional_propagate, master_solve, measurement_map, reduce_classical, reduce_quantum, GridCache, JumpTerm,
    ModelGenerators, ModelSpec, TimeGrid,
};
pub use jumps::{
    filter_path, sample_jump_time, simulate_trajectory, survival, trajectory_log_weight, FilteredPath, JumpSample,
    Trajectory,
};
pub use smoother::{effect_backward, smooth_path, smoothed_classical, smoothed_state, EffectPath, SmoothedRecord};

pub use num_complex::Complex64;
