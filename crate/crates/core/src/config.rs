//! Run configuration (flat `key = value` files) and custom model files (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::Deserialize;

use crate::algebra::{CMatrix, HybridOperator};
use crate::error::{Error, Result};
use crate::fluor::{self, FluorParams};
use crate::generators::{steps_for, JumpTerm, ModelSpec};

/// Which generator an ensemble run uses.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelChoice {
    Plain,
    Hybrid,
    Custom(PathBuf),
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plain" => Ok(ModelChoice::Plain),
            "hybrid" => Ok(ModelChoice::Hybrid),
            other => match other.strip_prefix("custom:") {
                Some(path) if !path.is_empty() => Ok(ModelChoice::Custom(PathBuf::from(path))),
                _ => Err(Error::InvalidConfig(format!(
                    "model must be plain, hybrid or custom:<path>, got `{other}`"
                ))),
            },
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::Plain => f.write_str("plain"),
            ModelChoice::Hybrid => f.write_str("hybrid"),
            ModelChoice::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

/// Parameters of a simulation run. Times are in units of `1/γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub omega_over_gamma: f64,
    pub eta: f64,
    pub t_total: f64,
    pub dt: f64,
    pub lag: f64,
    pub n_traj: usize,
    pub master_seed: u64,
    pub outputs: PathBuf,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelChoice::Hybrid,
            omega_over_gamma: 1.0,
            eta: 0.8,
            t_total: 50.0,
            dt: 0.05,
            lag: 30.0,
            n_traj: 5000,
            master_seed: 0,
            outputs: PathBuf::from("out"),
            workers: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse `{value}` for key `{key}`")))
}

impl RunConfig {
    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = value.parse()?,
            "omega_over_gamma" => self.omega_over_gamma = parse_value(key, value)?,
            "eta" => self.eta = parse_value(key, value)?,
            "t_total" => self.t_total = parse_value(key, value)?,
            "dt" => self.dt = parse_value(key, value)?,
            "lag" => self.lag = parse_value(key, value)?,
            "n_traj" => self.n_traj = parse_value(key, value)?,
            "master_seed" => self.master_seed = parse_value(key, value)?,
            "outputs" => self.outputs = PathBuf::from(value),
            "workers" => self.workers = Some(parse_value(key, value)?),
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega_over_gamma, self.eta, self.t_total, self.dt, self.lag];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.t_total < 0.0 || self.lag < 0.0 {
            return Err(Error::InvalidConfig("t_total and lag must be non-negative".into()));
        }
        steps_for(self.t_total, self.dt).map_err(|_| Error::InvalidConfig("dt must divide t_total".into()))?;
        steps_for(self.lag, self.dt).map_err(|_| Error::InvalidConfig("dt must divide lag".into()))?;
        if self.n_traj == 0 {
            return Err(Error::InvalidConfig("n_traj must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        if !matches!(self.model, ModelChoice::Custom(_)) {
            self.fluor_params()?;
        }
        Ok(())
    }

    pub fn fluor_params(&self) -> Result<FluorParams> {
        FluorParams::canonical(self.omega_over_gamma, self.eta)
    }

    /// Model and initial state selected by this configuration.
    pub fn load_model(&self) -> Result<LoadedModel> {
        match &self.model {
            ModelChoice::Plain => Ok(LoadedModel {
                spec: fluor::build_plain(&self.fluor_params()?)?,
                initial: fluor::plain_initial_state(),
            }),
            ModelChoice::Hybrid => Ok(LoadedModel {
                spec: fluor::build_hybrid(&self.fluor_params()?)?,
                initial: fluor::hybrid_initial_state(),
            }),
            ModelChoice::Custom(path) => LoadedModel::from_file(path),
        }
    }
}

/// A model specification together with its initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedModel {
    pub spec: ModelSpec,
    pub initial: HybridOperator,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n_classical: usize,
    dim: usize,
    #[serde(default)]
    hamiltonian: Vec<LabelledMatrix>,
    #[serde(default)]
    jump: Vec<JumpEntry>,
    initial: Vec<LabelledMatrix>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelledMatrix {
    label: usize,
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpEntry {
    from: usize,
    to: usize,
    rate: f64,
    #[serde(default)]
    observed: bool,
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

fn matrix(dim: usize, re: &[Vec<f64>], im: Option<&Vec<Vec<f64>>>) -> Result<CMatrix> {
    let shape_ok = |m: &[Vec<f64>]| m.len() == dim && m.iter().all(|r| r.len() == dim);
    if !shape_ok(re) || im.is_some_and(|m| !shape_ok(m)) {
        return Err(Error::InvalidConfig(format!("matrix is not {dim}x{dim}")));
    }
    let mut data = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let imag = im.map_or(0.0, |m| m[i][j]);
            data.push(Complex64::new(re[i][j], imag));
        }
    }
    CMatrix::from_row_major(dim, data)
}

fn check_label(label: usize, n_classical: usize) -> Result<()> {
    if label >= n_classical {
        Err(Error::LabelOutOfRange { label, n_classical })
    } else {
        Ok(())
    }
}

impl LoadedModel {
    /// Parses a TOML model description.
    ///
    /// ```toml
    /// n_classical = 1
    /// dim = 2
    ///
    /// [[hamiltonian]]
    /// label = 0
    /// re = [[0.0, 0.5], [0.5, 0.0]]
    ///
    /// [[jump]]
    /// from = 0
    /// to = 0
    /// rate = 1.0
    /// observed = true
    /// re = [[0.0, 0.0], [1.0, 0.0]]
    ///
    /// [[initial]]
    /// label = 0
    /// re = [[0.0, 0.0], [0.0, 1.0]]
    /// ```
    ///
    /// Labels without a `[[hamiltonian]]` entry get a zero Hamiltonian and
    /// labels without an `[[initial]]` entry start empty.
    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let (n, d) = (file.n_classical, file.dim);
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig("n_classical and dim must be >= 1".into()));
        }
        let mut hamiltonians = vec![CMatrix::zeros(d); n];
        for h in &file.hamiltonian {
            check_label(h.label, n)?;
            hamiltonians[h.label] = matrix(d, &h.re, h.im.as_ref())?;
        }
        let jumps = file
            .jump
            .iter()
            .map(|j| Ok(JumpTerm::new(j.from, j.to, matrix(d, &j.re, j.im.as_ref())?, j.rate, j.observed)))
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            n_classical: n,
            d,
            hamiltonians,
            jumps,
        };
        spec.validate()?;
        let mut initial = HybridOperator::zeros(n, d);
        for b in &file.initial {
            check_label(b.label, n)?;
            *initial.block_mut(b.label) = matrix(d, &b.re, b.im.as_ref())?;
        }
        initial.check_state()?;
        Ok(LoadedModel { spec, initial })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_defaults() {
        let cfg = RunConfig::parse(
            "# fluorescence run\n\
             model = plain\n\
             omega_over_gamma = 2.0  # strong drive\n\
             eta=0.9\n\
             \n\
             t_total = 10\n\
             dt = 0.1\n\
             lag = 5\n\
             n_traj = 12\n\
             master_seed = 18446744073709551615\n\
             outputs = runs/a\n\
             workers = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.model, ModelChoice::Plain);
        assert_eq!(cfg.omega_over_gamma, 2.0);
        assert_eq!(cfg.eta, 0.9);
        assert_eq!((cfg.t_total, cfg.dt, cfg.lag), (10.0, 0.1, 5.0));
        assert_eq!(cfg.n_traj, 12);
        assert_eq!(cfg.master_seed, u64::MAX);
        assert_eq!(cfg.outputs, PathBuf::from("runs/a"));
        assert_eq!(cfg.workers, Some(3));

        let defaults = RunConfig::parse("").unwrap();
        assert_eq!(defaults, RunConfig::default());
        assert_eq!(defaults.lag, 30.0);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "colour = blue",
            "dt = 0",
            "dt = 0.3\nt_total = 1",
            "dt = 0.1\nlag = 0.25",
            "n_traj = 0",
            "eta = 1.5",
            "eta = abc",
            "model = quantum",
            "model = custom:",
            "just a line",
            "workers = 0",
        ] {
            assert!(
                matches!(RunConfig::parse(text), Err(Error::InvalidConfig(_)) | Err(Error::InvalidParameter(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn model_choice_round_trips() {
        for s in ["plain", "hybrid", "custom:models/x.toml"] {
            assert_eq!(s.parse::<ModelChoice>().unwrap().to_string(), s);
        }
    }

    const PLAIN_TOML: &str = r#"
n_classical = 1
dim = 2

[[hamiltonian]]
label = 0
re = [[0.0, 0.5], [0.5, 0.0]]

[[jump]]
from = 0
to = 0
rate = 0.8
observed = true
re = [[0.0, 0.0], [1.0, 0.0]]

[[jump]]
from = 0
to = 0
rate = 0.2
re = [[0.0, 0.0], [1.0, 0.0]]

[[initial]]
label = 0
re = [[0.0, 0.0], [0.0, 1.0]]
"#;

    #[test]
    fn custom_model_reproduces_builtin_plain_model() {
        let loaded = LoadedModel::parse(PLAIN_TOML).unwrap();
        let builtin = fluor::build_plain(&FluorParams::canonical(1.0, 0.8).unwrap()).unwrap();
        assert_eq!(loaded.spec.n_classical, 1);
        assert_eq!(loaded.spec.hamiltonians, builtin.hamiltonians);
        assert_eq!(loaded.spec.jumps.len(), 2);
        for (a, b) in loaded.spec.jumps.iter().zip(&builtin.jumps) {
            assert_eq!(a.operator, b.operator);
            assert!((a.rate - b.rate).abs() < 1e-15);
            assert_eq!(a.observed, b.observed);
        }
        assert_eq!(loaded.initial, fluor::plain_initial_state());
    }

    #[test]
    fn custom_model_errors() {
        let bad_label = PLAIN_TOML.replace("to = 0\nrate = 0.8", "to = 4\nrate = 0.8");
        assert!(matches!(LoadedModel::parse(&bad_label), Err(Error::LabelOutOfRange { .. })));
        let bad_rate = PLAIN_TOML.replace("rate = 0.2", "rate = -0.2");
        assert!(matches!(LoadedModel::parse(&bad_rate), Err(Error::NegativeRate { .. })));
        let bad_shape = PLAIN_TOML.replace("re = [[0.0, 0.5], [0.5, 0.0]]", "re = [[0.0, 0.5]]");
        assert!(matches!(LoadedModel::parse(&bad_shape), Err(Error::InvalidConfig(_))));
        let not_state = PLAIN_TOML.replace("re = [[0.0, 0.0], [0.0, 1.0]]", "re = [[0.0, 0.0], [0.0, 2.0]]");
        assert!(LoadedModel::parse(&not_state).is_err());
        assert!(matches!(LoadedModel::parse("n_classical = "), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn load_model_dispatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(&path, PLAIN_TOML).unwrap();
        let cfg = RunConfig {
            model: ModelChoice::Custom(path),
            ..RunConfig::default()
        };
        assert_eq!(cfg.load_model().unwrap().spec.n_classical, 1);
        let hybrid = RunConfig::default().load_model().unwrap();
        assert_eq!(hybrid.spec.n_classical, 2);
        let missing = RunConfig {
            model: ModelChoice::Custom(PathBuf::from("/nonexistent/model.toml")),
            ..RunConfig::default()
        };
        assert!(matches!(missing.load_model(), Err(Error::Io(_))));
    }
}
