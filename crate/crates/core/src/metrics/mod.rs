//! Evaluation metrics: batch-wise computation (E_C) and aggregation into a
//! final scalar (E_F), plus behavior-probability extraction from predicted
//! trajectories.

mod aggregate;
mod behavior;
mod displacement;
mod likelihood;
mod registry;

pub use aggregate::{aggregate, compensated_sum};
pub use behavior::{auc, classify_prediction_samples, ece};
pub use displacement::{
    min_ade_joint, min_ade_per_agent, min_fde_joint, min_fde_per_agent, min_final_displacements,
};
pub use likelihood::nll_values;
pub use registry::{metric_by_id, registry, Direction, MetricDef, MetricId};

use crate::model::{ModelError, PredictionSet};
use crate::sample::{Corpus, SampleId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("only one class present")]
    SingleClass,
    #[error("no batches to aggregate")]
    Empty,
    #[error("metric mismatch: {0}")]
    MetricMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unknown metric id: {0}")]
    UnknownMetric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Batch-level payload: mean-type metrics carry per-item values with
/// counts; ranking and calibration metrics carry the raw scored labels so
/// aggregation over batches equals the one-pass computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BatchPayload {
    Values { values: Vec<f64>, weights: Vec<u64> },
    Scores { scores: Vec<f64>, labels: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetric {
    pub metric_id: MetricId,
    pub payload: BatchPayload,
}

impl BatchMetric {
    pub fn values(metric_id: MetricId, values: Vec<f64>, weights: Vec<u64>) -> Self {
        debug_assert_eq!(values.len(), weights.len());
        Self { metric_id, payload: BatchPayload::Values { values, weights } }
    }

    pub fn item_count(&self) -> usize {
        match &self.payload {
            BatchPayload::Values { values, .. } => values.len(),
            BatchPayload::Scores { scores, .. } => scores.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetric {
    pub metric_id: MetricId,
    pub value: f64,
    /// Total weight behind the value.
    pub n: u64,
}

/// Knobs with documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Miss-rate displacement threshold, meters.
    pub miss_threshold: f64,
    /// Equal-width bins for calibration error.
    pub ece_bins: usize,
    /// Compute the miss rate per scene instead of per agent.
    pub per_scene_miss: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { miss_threshold: 2.0, ece_bins: 10, per_scene_miss: false }
    }
}

/// Computes one metric over a batch of samples (E_C). Samples a metric
/// cannot score (no behavior label, undecided predictions) are skipped;
/// `exact_loglik`, when given, supplies closed-form log-densities for the
/// likelihood metric instead of the density-estimation fallback.
pub fn compute_batch(
    metric_id: MetricId,
    predictions: &PredictionSet,
    corpus: &Corpus,
    ids: &[SampleId],
    config: &MetricConfig,
    exact_loglik: Option<&std::collections::BTreeMap<SampleId, f64>>,
) -> Result<BatchMetric, MetricsError> {
    let samples = corpus
        .select(ids)
        .map_err(|e| MetricsError::ShapeMismatch(e.to_string()))?;
    let entry_for = |id: &SampleId| {
        predictions
            .entry(id)
            .ok_or_else(|| MetricsError::ShapeMismatch(format!("no prediction for {id}")))
    };
    match metric_id {
        MetricId::MinAde | MetricId::MinFde => {
            let mut values = Vec::new();
            for sample in &samples {
                let entry = entry_for(&sample.sample_id)?;
                let per_agent = match metric_id {
                    MetricId::MinAde => min_ade_per_agent(entry, sample)?,
                    _ => min_fde_per_agent(entry, sample)?,
                };
                values.extend(per_agent.into_iter().map(|(_, v)| v));
            }
            let weights = vec![1; values.len()];
            Ok(BatchMetric::values(metric_id, values, weights))
        }
        MetricId::MinAdeJoint | MetricId::MinFdeJoint => {
            let mut values = Vec::new();
            for sample in &samples {
                let entry = entry_for(&sample.sample_id)?;
                values.push(match metric_id {
                    MetricId::MinAdeJoint => min_ade_joint(entry, sample)?,
                    _ => min_fde_joint(entry, sample)?,
                });
            }
            let weights = vec![1; values.len()];
            Ok(BatchMetric::values(metric_id, values, weights))
        }
        MetricId::MissRate => {
            let mut values = Vec::new();
            for sample in &samples {
                let entry = entry_for(&sample.sample_id)?;
                let finals = min_final_displacements(entry, sample)?;
                if config.per_scene_miss {
                    let missed = finals.iter().any(|(_, d)| *d > config.miss_threshold);
                    values.push(if missed { 1.0 } else { 0.0 });
                } else {
                    values.extend(finals.into_iter().map(|(_, d)| {
                        if d > config.miss_threshold {
                            1.0
                        } else {
                            0.0
                        }
                    }));
                }
            }
            let weights = vec![1; values.len()];
            Ok(BatchMetric::values(metric_id, values, weights))
        }
        MetricId::Auc | MetricId::Ece => {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for sample in &samples {
                let Some(truth) = &sample.behavior_label else { continue };
                let entry = entry_for(&sample.sample_id)?;
                let Some(probs) =
                    classify_prediction_samples(entry, sample, corpus.params.dt)
                else {
                    continue;
                };
                let Some(score) = probs.get(crate::ingest::GAP_ACCEPTED) else { continue };
                scores.push(*score);
                labels.push(truth.label == crate::ingest::GAP_ACCEPTED);
            }
            Ok(BatchMetric { metric_id, payload: BatchPayload::Scores { scores, labels } })
        }
        MetricId::Nll => {
            let values = nll_values(predictions, &samples, exact_loglik)?;
            let weights = vec![1; values.len()];
            Ok(BatchMetric::values(metric_id, values, weights))
        }
    }
}
