//! Logistic gap-acceptance classifier on (gap distance, time-to-conflict)
//! features, trained by full-batch gradient descent.
//!
//! Parameters: `weights` = [w_gap, w_ttc, bias] on standardized features,
//! `feature_mean` and `feature_std` = per-feature standardization.

use super::{
    carve_validation, predicted_agents, ModelError, ModelKind, ModelSpec, ModelState,
    PredictionSet, Predictor, SamplePrediction, TrainConfig, TrainReport,
};
use crate::ingest::{GAP_ACCEPTED, GAP_REJECTED};
use crate::sample::{Corpus, Sample, SampleId};
use std::collections::BTreeMap;

pub const DEFAULT_EPOCHS: f64 = 500.0;
pub const DEFAULT_LR: f64 = 0.5;

pub struct LogisticBehavior {
    state: ModelState,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LogisticBehavior {
    pub fn init(spec: &ModelSpec) -> Self {
        let mut state = ModelState::untrained(spec.clone());
        state.set_array("weights", vec![0.0; 3]);
        state.set_array("feature_mean", vec![0.0; 2]);
        state.set_array("feature_std", vec![1.0; 2]);
        Self { state }
    }

    /// Gap distance and time for the circulating agent to reach the
    /// conflict point, both measured at the prediction time.
    pub fn features(sample: &Sample, dt: f64) -> Option<[f64; 2]> {
        let conflict = sample.gap_conflict.as_ref()?;
        let circ = sample.agent(&conflict.circulating_id)?;
        let n = circ.past.len();
        if n < 2 || !circ.past_mask[n - 1] || !circ.past_mask[n - 2] {
            return None;
        }
        let pos = circ.past[n - 1];
        let gap = f64::hypot(pos[0] - conflict.point[0], pos[1] - conflict.point[1]);
        let speed = f64::hypot(
            pos[0] - circ.past[n - 2][0],
            pos[1] - circ.past[n - 2][1],
        ) / dt;
        let ttc = if speed > 1e-6 { (gap / speed).min(1e6) } else { 1e6 };
        Some([gap, ttc])
    }

    fn standardized(&self, raw: [f64; 2]) -> [f64; 2] {
        let mean = self.state.array("feature_mean").unwrap();
        let std = self.state.array("feature_std").unwrap();
        [
            (raw[0] - mean[0]) / std[0].max(1e-12),
            (raw[1] - mean[1]) / std[1].max(1e-12),
        ]
    }

    fn prob_accept(&self, sample: &Sample, dt: f64) -> Option<f64> {
        let x = self.standardized(Self::features(sample, dt)?);
        let w = self.state.array("weights").unwrap();
        Some(sigmoid(w[0] * x[0] + w[1] * x[1] + w[2]))
    }

    fn training_rows(
        &self,
        corpus: &Corpus,
        ids: &[SampleId],
    ) -> Result<(Vec<[f64; 2]>, Vec<f64>), ModelError> {
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for sample in samples {
            let Some(class) = &sample.behavior_label else { continue };
            let Some(x) = Self::features(sample, corpus.params.dt) else { continue };
            xs.push(x);
            labels.push(if class.label == GAP_ACCEPTED { 1.0 } else { 0.0 });
        }
        if xs.is_empty() {
            return Err(ModelError::EmptyTrain);
        }
        Ok((xs, labels))
    }

    fn accuracy(&self, corpus: &Corpus, ids: &[SampleId]) -> Result<f64, ModelError> {
        let (xs, labels) = self.training_rows(corpus, ids)?;
        let w = self.state.array("weights").unwrap();
        let mut correct = 0usize;
        for (x, y) in xs.iter().zip(&labels) {
            let z = self.standardized(*x);
            let p = sigmoid(w[0] * z[0] + w[1] * z[1] + w[2]);
            if (p >= 0.5) == (*y >= 0.5) {
                correct += 1;
            }
        }
        Ok(correct as f64 / xs.len() as f64)
    }
}

impl Predictor for LogisticBehavior {
    fn state(&self) -> &ModelState {
        &self.state
    }

    fn set_fingerprint(&mut self, fingerprint: Option<String>) {
        self.state.training_fingerprint = fingerprint;
    }

    fn train(
        &mut self,
        corpus: &Corpus,
        train_ids: &[SampleId],
        config: &TrainConfig,
    ) -> Result<TrainReport, ModelError> {
        if train_ids.is_empty() {
            return Err(ModelError::EmptyTrain);
        }
        let (fit_ids, val_ids) =
            carve_validation(train_ids, config.validation_fraction, config.seed);
        let (xs, labels) = self.training_rows(corpus, &fit_ids)?;
        let n = xs.len() as f64;

        if !config.fine_tune {
            // standardization is part of the fresh fit; fine-tuning keeps it
            let mean = [
                xs.iter().map(|x| x[0]).sum::<f64>() / n,
                xs.iter().map(|x| x[1]).sum::<f64>() / n,
            ];
            let std = [
                (xs.iter().map(|x| (x[0] - mean[0]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9),
                (xs.iter().map(|x| (x[1] - mean[1]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9),
            ];
            self.state.set_array("feature_mean", mean.to_vec());
            self.state.set_array("feature_std", std.to_vec());
            if !self.state.trained {
                self.state.set_array("weights", vec![0.0; 3]);
            }
        }

        let epochs = (self.state.spec.hyper("epochs", DEFAULT_EPOCHS) * config.epochs_scale)
            .round() as usize;
        let lr = self.state.spec.hyper("learning_rate", DEFAULT_LR) * config.lr_scale;
        let mut w = self.state.array("weights").unwrap().to_vec();
        let zs: Vec<[f64; 2]> = xs.iter().map(|x| self.standardized(*x)).collect();
        for _ in 0..epochs {
            let mut grad = [0.0; 3];
            for (z, y) in zs.iter().zip(&labels) {
                let p = sigmoid(w[0] * z[0] + w[1] * z[1] + w[2]);
                let err = p - y;
                grad[0] += err * z[0] / n;
                grad[1] += err * z[1] / n;
                grad[2] += err / n;
            }
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= lr * gi;
            }
        }
        if epochs > 0 || !config.fine_tune {
            self.state.set_array("weights", w);
        }
        self.state.trained = true;

        let train_metric = self.accuracy(corpus, &fit_ids)?;
        let validation_metric = if val_ids.is_empty() {
            None
        } else {
            // validation samples may all be unlabeled
            self.accuracy(corpus, &val_ids).ok()
        };
        Ok(TrainReport {
            samples_used: xs.len(),
            epochs_run: epochs,
            train_metric,
            validation_metric,
        })
    }

    fn predict(
        &self,
        corpus: &Corpus,
        ids: &[SampleId],
        k: usize,
        seed: u64,
    ) -> Result<PredictionSet, ModelError> {
        if !self.state.trained {
            return Err(ModelError::Untrained);
        }
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut entries = Vec::with_capacity(samples.len());
        for sample in samples {
            let behavior_probs = self.prob_accept(sample, corpus.params.dt).map(|p| {
                let mut probs = BTreeMap::new();
                probs.insert(GAP_ACCEPTED.to_string(), p);
                probs.insert(GAP_REJECTED.to_string(), 1.0 - p);
                probs
            });
            entries.push(SamplePrediction {
                sample_id: sample.sample_id.clone(),
                agent_ids: predicted_agents(sample).into_iter().map(|(_, id)| id).collect(),
                joint_samples: Vec::new(),
                log_likelihoods: None,
                behavior_probs,
            });
        }
        Ok(PredictionSet { model_id: self.state.spec.model_id.clone(), k, seed, entries })
    }

    fn restore(&mut self, state: ModelState) -> Result<(), ModelError> {
        if state.spec.kind != ModelKind::LogisticBehavior {
            return Err(ModelError::KindMismatch {
                expected: ModelKind::LogisticBehavior.as_str().into(),
                found: state.spec.kind.as_str().into(),
            });
        }
        self.state = state;
        Ok(())
    }

    fn supports_probing(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, GapProfile, ScenarioKind, SyntheticConfig};
    use crate::sample::{assemble_corpus, CorpusSource};
    use crate::scene::{DataParams, T0Policy};

    fn gap_corpus(scene_count: usize, seed: u64) -> Corpus {
        let set = generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::RoundaboutGap,
            scene_count,
            agents_per_scene: 2,
            native_dt: 0.25,
            duration: 12.0,
            noise_sigma: 0.0,
            seed,
            gap_profile: GapProfile::Mixed,
            dataset_id: "synthetic".into(),
            location_id: "synthloc".into(),
        })
        .unwrap();
        // anchor sampling right before the decision
        let params = DataParams::from_horizons(
            1.5,
            6.0,
            0.5,
            T0Policy::BehaviorAnchored { lead: 0.0 },
        );
        assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap()
    }

    #[test]
    fn separable_gap_data_reaches_full_accuracy() {
        let corpus = gap_corpus(30, 5);
        assert!(corpus.samples.iter().filter(|s| s.behavior_label.is_some()).count() >= 20);
        let mut model =
            LogisticBehavior::init(&ModelSpec::new("log", ModelKind::LogisticBehavior));
        let report = model
            .train(&corpus, &corpus.sample_ids(), &TrainConfig::default())
            .unwrap();
        assert_eq!(report.train_metric, 1.0, "training accuracy {}", report.train_metric);
    }

    #[test]
    fn probabilities_are_normalized() {
        let corpus = gap_corpus(10, 6);
        let mut model =
            LogisticBehavior::init(&ModelSpec::new("log", ModelKind::LogisticBehavior));
        model.train(&corpus, &corpus.sample_ids(), &TrainConfig::default()).unwrap();
        let preds = model.predict(&corpus, &corpus.sample_ids(), 6, 0).unwrap();
        preds.validate(corpus.params.n_output).unwrap();
        for e in &preds.entries {
            let probs = e.behavior_probs.as_ref().unwrap();
            let sum: f64 = probs.values().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn accepts_score_higher_than_rejects() {
        let corpus = gap_corpus(20, 7);
        let mut model =
            LogisticBehavior::init(&ModelSpec::new("log", ModelKind::LogisticBehavior));
        model.train(&corpus, &corpus.sample_ids(), &TrainConfig::default()).unwrap();
        let preds = model.predict(&corpus, &corpus.sample_ids(), 6, 0).unwrap();
        let mut accept_scores = Vec::new();
        let mut reject_scores = Vec::new();
        for (s, e) in corpus.samples.iter().zip(&preds.entries) {
            let Some(label) = &s.behavior_label else { continue };
            let p = e.behavior_probs.as_ref().unwrap()[GAP_ACCEPTED];
            if label.label == GAP_ACCEPTED {
                accept_scores.push(p);
            } else {
                reject_scores.push(p);
            }
        }
        let min_a = accept_scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_r = reject_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min_a > max_r, "accepted {min_a} vs rejected {max_r}");
    }
}
