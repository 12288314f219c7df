//! Optimizer configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::{CandidateClamp, DEFAULT_DELTAS};
use crate::error::{Result, VipsError};
use crate::sample_db::Dissimilarity;

/// Every knob of the optimizer. Deserialization rejects unknown keys and
/// fills missing ones from [`Default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VipsConfig {
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub initial_epsilon: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub initial_kappa: f64,
    /// Desired effective samples per component, per dimension.
    pub n_des_per_dim: usize,
    /// Reused samples per component, per dimension.
    pub n_reuse_per_dim: usize,
    /// Add a component every `add_rate` iterations.
    pub add_rate: usize,
    /// Delete after this many iterations at the weight floor without progress.
    pub del_rate: usize,
    pub min_weight: f64,
    pub initial_weight: f64,
    pub deltas: Vec<f64>,
    pub max_fevals: Option<u64>,
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub dissimilarity: Dissimilarity,
    pub reuse: bool,
    pub adapt: bool,
    /// Run the basic variant: fresh samples only, no cross-component reuse.
    pub basic: bool,
    /// Record wall-clock seconds in the log; zero otherwise, which keeps logs
    /// bitwise reproducible.
    pub timing: bool,
    pub initial_components: usize,
    /// Standard deviation of the initial component means around the origin.
    pub initial_mean_scale: f64,
    /// Initial covariance is this multiple of the identity.
    pub initial_cov_scale: f64,
    pub line_search_samples_per_dim: usize,
    pub max_ridge_retries: usize,
    /// Keep at most this many origins in the sample database.
    pub db_cap: Option<usize>,
    /// Only score candidates from this many of the most recent origins.
    pub candidate_cap: Option<usize>,
    pub candidate_clamp: CandidateClamp,
}

impl Default for VipsConfig {
    fn default() -> Self {
        Self {
            epsilon_min: 1e-2,
            epsilon_max: 5.0,
            initial_epsilon: 1.0,
            kappa_min: 1e-14,
            kappa_max: 1e-6,
            initial_kappa: 1e-10,
            n_des_per_dim: 20,
            n_reuse_per_dim: 40,
            add_rate: 30,
            del_rate: 10,
            min_weight: 1e-6,
            initial_weight: 1e-29,
            deltas: DEFAULT_DELTAS.to_vec(),
            max_fevals: None,
            max_iterations: Some(1000),
            seed: 0,
            dissimilarity: Dissimilarity::Mahalanobis,
            reuse: true,
            adapt: true,
            basic: false,
            timing: false,
            initial_components: 1,
            initial_mean_scale: 0.0,
            initial_cov_scale: 1.0,
            line_search_samples_per_dim: 10,
            max_ridge_retries: 5,
            db_cap: None,
            candidate_cap: None,
            candidate_clamp: CandidateClamp::DensityMax,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(VipsError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl VipsConfig {
    /// Defaults adjusted for a named target: initial covariance scale and
    /// adding rate.
    pub fn for_target(name: &str) -> Self {
        let mut c = Self::default();
        match name {
            "gmm" => c.initial_cov_scale = 1000.0,
            "logreg" => c.initial_cov_scale = 100.0,
            "planar1" | "planar4" => c.add_rate = 1,
            _ => {}
        }
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Overlays the keys present in `text` on `self`. Unknown keys fail.
    pub fn merge_json(&self, text: &str) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        let overlay: serde_json::Value = serde_json::from_str(text)?;
        let serde_json::Value::Object(overlay) = overlay else {
            return Err(VipsError::Config("configuration must be a JSON object".into()));
        };
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in overlay {
            if !obj.contains_key(&k) {
                return Err(VipsError::Config(format!("unknown configuration key `{k}`")));
            }
            obj.insert(k, v);
        }
        let c: Self = serde_json::from_value(base)?;
        c.validate()?;
        Ok(c)
    }

    pub fn merge_file(&self, path: &Path) -> Result<Self> {
        self.merge_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        positive("epsilon_min", self.epsilon_min)?;
        positive("epsilon_max", self.epsilon_max)?;
        if self.epsilon_min > self.epsilon_max {
            return Err(VipsError::Config("epsilon_min exceeds epsilon_max".into()));
        }
        if !(self.epsilon_min..=self.epsilon_max).contains(&self.initial_epsilon) {
            return Err(VipsError::Config(format!(
                "initial_epsilon {} outside [{}, {}]",
                self.initial_epsilon, self.epsilon_min, self.epsilon_max
            )));
        }
        positive("kappa_min", self.kappa_min)?;
        positive("kappa_max", self.kappa_max)?;
        if self.kappa_min > self.kappa_max {
            return Err(VipsError::Config("kappa_min exceeds kappa_max".into()));
        }
        if !(self.initial_kappa >= 0.0 && self.initial_kappa.is_finite()) {
            return Err(VipsError::Config("initial_kappa must be non-negative".into()));
        }
        if self.n_des_per_dim == 0 {
            return Err(VipsError::Config("n_des_per_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_weight) {
            return Err(VipsError::Config("min_weight must lie in [0, 1)".into()));
        }
        if !(self.initial_weight > 0.0 && self.initial_weight < 1.0) {
            return Err(VipsError::Config("initial_weight must lie in (0, 1)".into()));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !d.is_finite()) {
            return Err(VipsError::Config("deltas must be a non-empty list of finite values".into()));
        }
        if self.max_fevals.is_none() && self.max_iterations.is_none() {
            return Err(VipsError::Config("set max_fevals or max_iterations".into()));
        }
        if self.initial_components == 0 {
            return Err(VipsError::Config("initial_components must be at least 1".into()));
        }
        if !(self.initial_mean_scale >= 0.0 && self.initial_mean_scale.is_finite()) {
            return Err(VipsError::Config("initial_mean_scale must be non-negative".into()));
        }
        positive("initial_cov_scale", self.initial_cov_scale)?;
        if self.adapt && self.add_rate > 0 && self.line_search_samples_per_dim == 0 {
            return Err(VipsError::Config("line_search_samples_per_dim must be at least 1".into()));
        }
        if self.db_cap == Some(0) || self.candidate_cap == Some(0) {
            return Err(VipsError::Config("caps must be at least 1 when set".into()));
        }
        Ok(())
    }
}
