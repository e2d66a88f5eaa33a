//! Solver configuration, loadable from a flat TOML file.
//!
//! ```toml
//! dimension = 8
//! delta = 0.1
//! ensemble = 7
//! seed = 0
//! w_sim = 0.1
//! k_policy = "half"      # or "full", or an axis count such as "3"
//! preference_threshold = 0.5
//! ```

use crate::compiler::{CompileConfig, LossWeights};
use crate::similarity::{DEFAULT_EPS_SD, DEFAULT_PREFERENCE_THRESHOLD};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("configuration file: {0}")]
    Toml(String),
}

/// How many of the `N` axes each predicate's subspace uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KPolicy {
    /// `max(1, floor(N / 2))`.
    Half,
    /// All `N` axes.
    Full,
    Fixed(usize),
}

impl KPolicy {
    pub fn k(self, n: usize) -> usize {
        match self {
            KPolicy::Half => (n / 2).max(1),
            KPolicy::Full => n,
            KPolicy::Fixed(k) => k,
        }
    }
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPolicy::Half => f.write_str("half"),
            KPolicy::Full => f.write_str("full"),
            KPolicy::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "half" => Ok(KPolicy::Half),
            "full" => Ok(KPolicy::Full),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(KPolicy::Fixed)
                .ok_or_else(|| format!("k_policy must be `half`, `full` or a positive integer, got `{other}`")),
        }
    }
}

impl TryFrom<String> for KPolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<KPolicy> for String {
    fn from(k: KPolicy) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Embedding dimension `N`.
    pub dimension: usize,
    /// Evaluation tolerance.
    pub delta: f64,
    /// Positive atoms are trained against `delta * train_margin` and negated
    /// atoms against `delta * (2 - train_margin)`, so converged models sit
    /// strictly on the correct side of the evaluation tolerance.
    pub train_margin: f64,
    /// Logistic sharpness; `10 / (delta * train_margin)` when unset.
    pub sharpness: Option<f64>,
    /// Sharpness at the first iteration. It grows geometrically to the final
    /// sharpness over the first half of the descent.
    pub sharpness_start: f64,
    pub w_triple: f64,
    pub w_axiom: f64,
    pub w_sim: f64,
    pub w_gauge: f64,
    pub eps_sd: f64,
    pub max_iters: usize,
    pub step: f64,
    pub decay: f64,
    /// Gradient norm cap per step.
    pub grad_clip: f64,
    /// Constraint-only iterations after the main descent if it ended
    /// unsatisfied.
    pub polish_iters: usize,
    pub seed: u64,
    /// Requested ensemble size `E`.
    pub ensemble: usize,
    /// Seeds tried per requested member before giving up.
    pub retry_factor: usize,
    pub loss_tol: f64,
    pub require_satisfies_kb: bool,
    /// Disparity threshold for acceptance; `None` disables the filter.
    pub preference_threshold: Option<f64>,
    pub diversity_floor: f64,
    pub k_policy: KPolicy,
    /// Diagnostics sampling interval in iterations.
    pub log_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            dimension: 8,
            delta: 0.1,
            train_margin: 0.5,
            sharpness: None,
            sharpness_start: 2.0,
            w_triple: 1.0,
            w_axiom: 1.0,
            w_sim: 0.1,
            w_gauge: 0.01,
            eps_sd: DEFAULT_EPS_SD,
            max_iters: 5000,
            step: 0.05,
            decay: 0.999,
            grad_clip: 10.0,
            polish_iters: 1000,
            seed: 0,
            ensemble: 7,
            retry_factor: 4,
            loss_tol: 1e-6,
            require_satisfies_kb: true,
            preference_threshold: Some(DEFAULT_PREFERENCE_THRESHOLD),
            diversity_floor: 0.05,
            k_policy: KPolicy::Half,
            log_every: 100,
        }
    }
}

impl SolveConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SolveConfig = toml::from_str(text).map_err(|e| ConfigError::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.dimension == 0 {
            return bad("dimension must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive and finite");
        }
        if !(self.train_margin > 0.0 && self.train_margin <= 1.0) {
            return bad("train_margin must lie in (0, 1]");
        }
        if let Some(s) = self.sharpness {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sharpness must be positive and finite");
            }
        }
        if !(self.sharpness_start > 0.0 && self.sharpness_start.is_finite()) {
            return bad("sharpness_start must be positive and finite");
        }
        let weights = [self.w_triple, self.w_axiom, self.w_sim, self.w_gauge];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be non-negative and finite");
        }
        if !(self.eps_sd > 0.0 && self.eps_sd < 1.0) {
            return bad("eps_sd must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.ensemble == 0 {
            return bad("ensemble must be at least 1");
        }
        if self.retry_factor == 0 {
            return bad("retry_factor must be at least 1");
        }
        if !(self.loss_tol >= 0.0) {
            return bad("loss_tol must be non-negative");
        }
        if self.diversity_floor < 0.0 {
            return bad("diversity_floor must be non-negative");
        }
        let k = self.k_policy.k(self.dimension);
        if k == 0 || k > self.dimension {
            return Err(ConfigError::Invalid(format!(
                "k_policy gives K = {k}, which must lie in 1..={}",
                self.dimension
            )));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        Ok(())
    }

    pub fn train_delta(&self) -> f64 {
        self.delta * self.train_margin
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { triple: self.w_triple, axiom: self.w_axiom, sim: self.w_sim, gauge: self.w_gauge }
    }

    /// Compilation settings for training.
    pub fn compile_config(&self) -> CompileConfig {
        let delta = self.train_delta();
        CompileConfig {
            delta,
            delta_neg: self.delta * (2.0 - self.train_margin),
            sharpness: self.sharpness.unwrap_or(10.0 / delta),
            weights: self.weights(),
            eps_sd: self.eps_sd,
        }
    }
}
