//! Batch aggregation (E_F): combining batch metrics into one final value
//! that equals the metric computed over the concatenated set in one pass.

use super::{auc, ece, BatchMetric, BatchPayload, FinalMetric, MetricConfig, MetricId, MetricsError};

/// Neumaier compensated summation; keeps aggregation batching-invariant to
/// well below 1e-12.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Combines batch metrics into the final value: a count-weighted mean for
/// value-type metrics, a pooled one-pass computation for ranking and
/// calibration metrics.
pub fn aggregate(
    batches: &[BatchMetric],
    config: &MetricConfig,
) -> Result<FinalMetric, MetricsError> {
    if batches.is_empty() {
        return Err(MetricsError::Empty);
    }
    let metric_id = batches[0].metric_id;
    if batches.iter().any(|b| b.metric_id != metric_id) {
        return Err(MetricsError::MetricMismatch(
            "batches carry different metric ids".into(),
        ));
    }
    let mut all_values: Vec<(f64, u64)> = Vec::new();
    let mut all_scores: Vec<f64> = Vec::new();
    let mut all_labels: Vec<bool> = Vec::new();
    for batch in batches {
        match &batch.payload {
            BatchPayload::Values { values, weights } => {
                if values.len() != weights.len() {
                    return Err(MetricsError::ShapeMismatch(
                        "values and weights differ in length".into(),
                    ));
                }
                for (v, w) in values.iter().zip(weights) {
                    if !v.is_finite() {
                        return Err(MetricsError::ShapeMismatch(format!("non-finite value {v}")));
                    }
                    if *w < 1 {
                        return Err(MetricsError::ShapeMismatch("zero weight".into()));
                    }
                    all_values.push((*v, *w));
                }
            }
            BatchPayload::Scores { scores, labels } => {
                all_scores.extend_from_slice(scores);
                all_labels.extend_from_slice(labels);
            }
        }
    }
    match metric_id {
        MetricId::Auc => {
            if all_scores.is_empty() {
                return Err(MetricsError::Empty);
            }
            let value = auc(&all_scores, &all_labels)?;
            Ok(FinalMetric { metric_id, value, n: all_scores.len() as u64 })
        }
        MetricId::Ece => {
            if all_scores.is_empty() {
                return Err(MetricsError::Empty);
            }
            let value = ece(&all_scores, &all_labels, config.ece_bins)?;
            Ok(FinalMetric { metric_id, value, n: all_scores.len() as u64 })
        }
        _ => {
            if all_values.is_empty() {
                return Err(MetricsError::Empty);
            }
            let total_weight: u64 = all_values.iter().map(|(_, w)| w).sum();
            let weighted = compensated_sum(all_values.iter().map(|(v, w)| v * *w as f64));
            Ok(FinalMetric {
                metric_id,
                value: weighted / total_weight as f64,
                n: total_weight,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn weighted_mean_of_batch_means() {
        // batches (mean 2.0, n=10) and (mean 4.0, n=30) -> 3.5
        let batches = vec![
            BatchMetric::values(MetricId::MinAde, vec![2.0], vec![10]),
            BatchMetric::values(MetricId::MinAde, vec![4.0], vec![30]),
        ];
        let out = aggregate(&batches, &MetricConfig::default()).unwrap();
        assert!((out.value - 3.5).abs() < 1e-15);
        assert_eq!(out.n, 40);
    }

    #[test]
    fn single_batch_passthrough() {
        let batches =
            vec![BatchMetric::values(MetricId::MinFde, vec![1.0, 3.0], vec![1, 1])];
        let out = aggregate(&batches, &MetricConfig::default()).unwrap();
        assert!((out.value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            aggregate(&[], &MetricConfig::default()),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn mismatched_ids_rejected() {
        let batches = vec![
            BatchMetric::values(MetricId::MinAde, vec![1.0], vec![1]),
            BatchMetric::values(MetricId::MinFde, vec![1.0], vec![1]),
        ];
        assert!(matches!(
            aggregate(&batches, &MetricConfig::default()),
            Err(MetricsError::MetricMismatch(_))
        ));
    }

    // one-pass whole-set oracle vs arbitrary batchings
    #[test]
    fn batching_invariance_within_1e12() {
        let mut rng = DetRng::new(61);
        let values: Vec<f64> = (0..4000).map(|_| rng.uniform_in(0.0, 10.0)).collect();
        let one_pass = {
            let batch = BatchMetric::values(
                MetricId::MinAde,
                values.clone(),
                vec![1; values.len()],
            );
            aggregate(&[batch], &MetricConfig::default()).unwrap().value
        };
        for _ in 0..10 {
            let mut batches = Vec::new();
            let mut start = 0;
            while start < values.len() {
                let len = 1 + rng.below((values.len() - start).min(500) as u64) as usize;
                batches.push(BatchMetric::values(
                    MetricId::MinAde,
                    values[start..start + len].to_vec(),
                    vec![1; len],
                ));
                start += len;
            }
            let chunked = aggregate(&batches, &MetricConfig::default()).unwrap().value;
            assert!(
                (chunked - one_pass).abs() < 1e-12,
                "{chunked} vs {one_pass}"
            );
        }
    }

    #[test]
    fn score_metrics_pool_across_batches() {
        let mut rng = DetRng::new(62);
        let scores: Vec<f64> = (0..200).map(|_| rng.uniform()).collect();
        let labels: Vec<bool> = (0..200).map(|i| i % 3 != 0).collect();
        let one_pass = auc(&scores, &labels).unwrap();
        let batches = vec![
            BatchMetric {
                metric_id: MetricId::Auc,
                payload: BatchPayload::Scores {
                    scores: scores[..77].to_vec(),
                    labels: labels[..77].to_vec(),
                },
            },
            BatchMetric {
                metric_id: MetricId::Auc,
                payload: BatchPayload::Scores {
                    scores: scores[77..].to_vec(),
                    labels: labels[77..].to_vec(),
                },
            },
        ];
        let out = aggregate(&batches, &MetricConfig::default()).unwrap();
        assert_eq!(out.value, one_pass);
    }
}
