//! The model contract and its built-in implementations.
//!
//! A model is initialized from a [`ModelSpec`], trained on a corpus slice,
//! and then sampled: `predict` draws `k` joint futures per test sample under
//! an explicit seed, so predictions are a pure function of
//! (parameters, input, k, seed). Baselines sample agents independently but
//! index the draws jointly per joint sample; that joint indexing is the
//! distribution scene-level metrics evaluate.

mod checkpoint;
mod constant_velocity;
mod ctrv;
mod density;
mod gradient;
mod linear_ar;
mod logistic;
pub mod plugin;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, model_load, model_save, spec_hash};
pub use constant_velocity::ConstantVelocity;
pub use ctrv::Ctrv;
pub use density::{fit_density_estimator, KernelDensity};
pub use gradient::{
    finite_difference_past_gradient, loss_gradient_wrt_truth, prediction_loss_gradient,
    trajectory_loss, LossSpec,
};
pub use linear_ar::LinearAr;
pub use logistic::LogisticBehavior;

use crate::sample::{Corpus, Sample, SampleId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ModelError {
    #[error("unknown model kind: {0}")]
    UnknownKind(String),
    #[error("model is not trained")]
    Untrained,
    #[error("training set is empty")]
    EmptyTrain,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("checkpoint corrupt: {0}")]
    CorruptFile(String),
    #[error("operation unsupported for kind {0}")]
    UnsupportedKind(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("gradient unavailable: {0}")]
    GradientUnavailable(String),
    #[error("plugin protocol error: {0}")]
    Protocol(String),
    #[error("plugin call timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("plugin crashed (status {status}): {stderr}")]
    Crash { status: i32, stderr: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ConstantVelocity,
    Ctrv,
    LinearAr,
    LogisticBehavior,
    ExternalPlugin,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConstantVelocity => "constant_velocity",
            ModelKind::Ctrv => "ctrv",
            ModelKind::LinearAr => "linear_ar",
            ModelKind::LogisticBehavior => "logistic_behavior",
            ModelKind::ExternalPlugin => "external_plugin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub kind: ModelKind,
    /// Spawn command for external plugins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(model_id: &str, kind: ModelKind) -> Self {
        Self {
            model_id: model_id.to_string(),
            kind,
            command: None,
            hyperparameters: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hyper(mut self, key: &str, value: f64) -> Self {
        self.hyperparameters.insert(key.to_string(), value);
        self
    }

    pub fn hyper(&self, key: &str, default: f64) -> f64 {
        self.hyperparameters.get(key).copied().unwrap_or(default)
    }
}

/// One named flat parameter array; semantic shapes are documented per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub values: Vec<f64>,
}

/// Full serializable state of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: Vec<NamedArray>,
    pub trained: bool,
    /// Hash of (corpus, train ids, seed) the parameters came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_fingerprint: Option<String>,
}

impl ModelState {
    pub fn untrained(spec: ModelSpec) -> Self {
        Self { spec, params: Vec::new(), trained: false, training_fingerprint: None }
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.params.iter().find(|a| a.name == name).map(|a| a.values.as_slice())
    }

    pub fn set_array(&mut self, name: &str, values: Vec<f64>) {
        if let Some(a) = self.params.iter_mut().find(|a| a.name == name) {
            a.values = values;
        } else {
            self.params.push(NamedArray { name: name.to_string(), values });
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|a| a.values.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Multiplier on the model's epoch count; fine-tuning shrinks it.
    pub epochs_scale: f64,
    /// Multiplier on the model's learning rate.
    pub lr_scale: f64,
    /// Fraction of the train side carved out for validation reporting.
    pub validation_fraction: f64,
    /// Continue from the current parameters instead of reinitializing.
    pub fine_tune: bool,
    /// Seed for the validation carve and any stochastic training steps.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_scale: 1.0,
            lr_scale: 1.0,
            validation_fraction: 0.1,
            fine_tune: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The fine-tuning schedule: a twentieth of the epochs at 0.4 times the
    /// learning rate.
    pub fn fine_tune_default(seed: u64) -> Self {
        Self {
            epochs_scale: 1.0 / 20.0,
            lr_scale: 0.4,
            validation_fraction: 0.1,
            fine_tune: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples_used: usize,
    pub epochs_run: usize,
    /// Fit quality on the training portion (residual RMS for trajectory
    /// models, accuracy for classifiers).
    pub train_metric: f64,
    /// Same measure on the carved-out validation portion, when non-empty.
    pub validation_metric: Option<f64>,
}

/// Trajectories of every predicted agent for one joint draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    /// `[agent][output step] -> position`; agent order matches
    /// `SamplePrediction::agent_ids`.
    pub trajectories: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub sample_id: SampleId,
    /// Predicted agents, in sample order.
    pub agent_ids: Vec<String>,
    /// `k` joint draws; empty for behavior-only models.
    pub joint_samples: Vec<JointSample>,
    /// Log-likelihood of each joint draw under the model, when the model
    /// exposes its density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihoods: Option<Vec<f64>>,
    /// Predicted behavior probabilities per class label, when the model
    /// classifies directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_probs: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub k: usize,
    pub seed: u64,
    pub entries: Vec<SamplePrediction>,
}

impl PredictionSet {
    pub fn entry(&self, id: &SampleId) -> Option<&SamplePrediction> {
        self.entries.iter().find(|e| &e.sample_id == id)
    }

    /// Checks the structural invariants: uniform k, consistent shapes,
    /// probabilities normalized.
    pub fn validate(&self, n_output: usize) -> Result<(), ModelError> {
        for e in &self.entries {
            if !e.joint_samples.is_empty() && e.joint_samples.len() != self.k {
                return Err(ModelError::Shape(format!(
                    "{}: {} joint samples, expected {}",
                    e.sample_id,
                    e.joint_samples.len(),
                    self.k
                )));
            }
            for js in &e.joint_samples {
                if js.trajectories.len() != e.agent_ids.len() {
                    return Err(ModelError::Shape(format!(
                        "{}: {} trajectories for {} agents",
                        e.sample_id,
                        js.trajectories.len(),
                        e.agent_ids.len()
                    )));
                }
                for traj in &js.trajectories {
                    if traj.len() != n_output {
                        return Err(ModelError::Shape(format!(
                            "{}: trajectory of {} steps, expected {n_output}",
                            e.sample_id,
                            traj.len()
                        )));
                    }
                }
            }
            if let Some(lls) = &e.log_likelihoods {
                if lls.len() != e.joint_samples.len() || lls.iter().any(|l| !l.is_finite()) {
                    return Err(ModelError::Shape(format!("{}: bad likelihoods", e.sample_id)));
                }
            }
            if let Some(probs) = &e.behavior_probs {
                let sum: f64 = probs.values().sum();
                if probs.values().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(ModelError::Shape(format!(
                        "{}: behavior probabilities not normalized",
                        e.sample_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The model contract. A trained model is immutable and safe to share
/// across concurrent predict calls; training mutates a private state.
pub trait Predictor: Send + Sync {
    fn state(&self) -> &ModelState;

    /// Records where the current parameters came from.
    fn set_fingerprint(&mut self, fingerprint: Option<String>);

    /// Adjusts parameters to fit the given train slice. `fine_tune` in the
    /// config continues from the current parameters with the scaled
    /// schedule.
    fn train(
        &mut self,
        corpus: &Corpus,
        train_ids: &[SampleId],
        config: &TrainConfig,
    ) -> Result<TrainReport, ModelError>;

    /// Draws `k` joint future samples per listed sample. Requires training.
    fn predict(
        &self,
        corpus: &Corpus,
        ids: &[SampleId],
        k: usize,
        seed: u64,
    ) -> Result<PredictionSet, ModelError>;

    /// Log-density of the sample's true future under the model's predictive
    /// distribution, for kinds with a closed form.
    fn log_likelihood(&self, _sample: &Sample) -> Result<f64, ModelError> {
        Err(ModelError::UnsupportedKind(self.state().spec.kind.as_str().into()))
    }

    /// Replaces this model's parameters with a previously saved state.
    fn restore(&mut self, state: ModelState) -> Result<(), ModelError>;

    /// Analytic gradient of the trajectory loss with respect to the
    /// victim's past positions, for kinds whose prediction is affine in the
    /// past. `None` means the caller should fall back to finite differences.
    fn analytic_past_gradient(
        &self,
        _sample: &Sample,
        _victim: &str,
        _loss: &LossSpec,
    ) -> Option<Result<Vec<[f64; 2]>, ModelError>> {
        None
    }

    /// Whether finite-difference probing is allowed for this model.
    fn supports_probing(&self) -> bool {
        true
    }
}

/// Initializes a model with deterministically seeded parameters (M_B).
pub fn model_init(spec: &ModelSpec) -> Result<Box<dyn Predictor>, ModelError> {
    match spec.kind {
        ModelKind::ConstantVelocity => Ok(Box::new(ConstantVelocity::init(spec))),
        ModelKind::Ctrv => Ok(Box::new(Ctrv::init(spec))),
        ModelKind::LinearAr => Ok(Box::new(LinearAr::init(spec))),
        ModelKind::LogisticBehavior => Ok(Box::new(LogisticBehavior::init(spec))),
        ModelKind::ExternalPlugin => match &spec.command {
            Some(_) => Ok(Box::new(plugin::PluginModel::spawn(spec)?)),
            None => Err(ModelError::UnknownKind(
                "external_plugin requires a command".into(),
            )),
        },
    }
}

/// Deterministic per-draw noise seed: stable under batching and reordering.
pub(crate) fn draw_seed(base: u64, sample_id: &SampleId, draw: usize, agent: usize) -> u64 {
    use crate::rng::{mix_seed, mix_seed_u64};
    mix_seed_u64(
        mix_seed(base, &sample_id.to_string()),
        ((draw as u64) << 20) | agent as u64,
    )
}

/// Carves a validation subset off the train ids: deterministic in the seed.
pub(crate) fn carve_validation(
    ids: &[SampleId],
    fraction: f64,
    seed: u64,
) -> (Vec<SampleId>, Vec<SampleId>) {
    let n = ids.len();
    let n_val = ((n as f64) * fraction).floor() as usize;
    if n_val == 0 || n_val >= n {
        return (ids.to_vec(), Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::DetRng::new(crate::rng::mix_seed(seed, "validation_carve"));
    rng.shuffle(&mut order);
    let val_set: std::collections::BTreeSet<usize> =
        order.into_iter().take(n_val).collect();
    let mut fit = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (i, id) in ids.iter().enumerate() {
        if val_set.contains(&i) {
            val.push(id.clone());
        } else {
            fit.push(id.clone());
        }
    }
    (fit, val)
}

/// Predicted-agent indices of a sample, with their ids.
pub(crate) fn predicted_agents(sample: &Sample) -> Vec<(usize, String)> {
    sample
        .agents
        .iter()
        .enumerate()
        .filter(|(_, a)| a.predicted)
        .map(|(i, a)| (i, a.agent_id.clone()))
        .collect()
}
