//! Negative log likelihood of the true future under the model's predictive
//! distribution, with a kernel-density fallback over the sampled
//! trajectories when no closed form is available.

use super::MetricsError;
use crate::model::{fit_density_estimator, PredictionSet};
use crate::sample::{Sample, SampleId};
use std::collections::BTreeMap;

/// Per-sample NLL values. `exact_loglik` supplies closed-form log-densities
/// keyed by sample id; everything else falls back to a per-agent KDE over
/// the k sampled trajectories (flattened), summed over predicted agents.
pub fn nll_values(
    predictions: &PredictionSet,
    samples: &[&Sample],
    exact_loglik: Option<&BTreeMap<SampleId, f64>>,
) -> Result<Vec<f64>, MetricsError> {
    let mut values = Vec::with_capacity(samples.len());
    for sample in samples {
        if let Some(ll) = exact_loglik.and_then(|m| m.get(&sample.sample_id)) {
            values.push(-ll);
            continue;
        }
        let entry = predictions.entry(&sample.sample_id).ok_or_else(|| {
            MetricsError::ShapeMismatch(format!("no prediction for {}", sample.sample_id))
        })?;
        if entry.joint_samples.len() < 2 {
            return Err(MetricsError::Degenerate(
                "kde fallback needs at least 2 trajectory samples".into(),
            ));
        }
        let mut ll = 0.0;
        for (a, id) in entry.agent_ids.iter().enumerate() {
            let draws: Vec<Vec<f64>> = entry
                .joint_samples
                .iter()
                .map(|js| js.trajectories[a].iter().flat_map(|p| [p[0], p[1]]).collect())
                .collect();
            let kde = fit_density_estimator(&draws)?;
            let truth: Vec<f64> = sample
                .agent(id)
                .ok_or_else(|| MetricsError::ShapeMismatch(format!("agent {id} missing")))?
                .future
                .iter()
                .flat_map(|p| [p[0], p[1]])
                .collect();
            ll += kde.log_density(&truth);
        }
        values.push(-ll);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, ScenarioKind, SyntheticConfig};
    use crate::model::{model_init, ModelKind, ModelSpec, Predictor, TrainConfig};
    use crate::sample::{assemble_corpus, CorpusSource};
    use crate::scene::{DataParams, T0Policy};

    fn corpus_and_model() -> (crate::sample::Corpus, Box<dyn Predictor>) {
        let set = generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::StraightRoad,
            scene_count: 6,
            agents_per_scene: 1,
            native_dt: 0.25,
            duration: 8.0,
            noise_sigma: 0.0,
            seed: 3,
            gap_profile: Default::default(),
            dataset_id: "synthetic".into(),
            location_id: "synthloc".into(),
        })
        .unwrap();
        let params = DataParams::new(3, 1, 0.5, T0Policy::FirstAvailable);
        let corpus = assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap();
        let spec = ModelSpec::new("cv", ModelKind::ConstantVelocity).with_hyper("sigma", 1.0);
        let mut model = model_init(&spec).unwrap();
        model.train(&corpus, &corpus.sample_ids(), &TrainConfig::default()).unwrap();
        (corpus, model)
    }

    #[test]
    fn exact_route_at_mean_matches_closed_form() {
        // noiseless corpus, sigma = 1, one output step: -log p = log(2 pi)
        let (corpus, model) = corpus_and_model();
        let mut exact = BTreeMap::new();
        for s in &corpus.samples {
            exact.insert(s.sample_id.clone(), model.log_likelihood(s).unwrap());
        }
        let preds = model.predict(&corpus, &corpus.sample_ids(), 6, 0).unwrap();
        let sample_refs: Vec<&crate::sample::Sample> = corpus.samples.iter().collect();
        let values = nll_values(&preds, &sample_refs, Some(&exact)).unwrap();
        let expected = (2.0 * std::f64::consts::PI).ln();
        for v in values {
            assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        }
    }

    #[test]
    fn truth_in_tails_scores_worse_than_at_mean() {
        let (mut corpus, model) = corpus_and_model();
        let preds = model.predict(&corpus, &corpus.sample_ids(), 64, 0).unwrap();
        let sample_refs: Vec<&crate::sample::Sample> = corpus.samples.iter().collect();
        let at_mean = nll_values(&preds, &sample_refs, None).unwrap();
        for s in &mut corpus.samples {
            for agent in &mut s.agents {
                for p in &mut agent.future {
                    p[1] += 30.0;
                }
            }
        }
        let sample_refs: Vec<&crate::sample::Sample> = corpus.samples.iter().collect();
        let far = nll_values(&preds, &sample_refs, None).unwrap();
        for (a, b) in at_mean.iter().zip(&far) {
            assert!(b > a, "tail NLL {b} not above mean NLL {a}");
        }
    }

    // KDE fallback against the closed form on Gaussian samples
    #[test]
    fn kde_route_tracks_exact_route_within_five_percent() {
        let (corpus, model) = corpus_and_model();
        let preds = model.predict(&corpus, &corpus.sample_ids(), 10_000, 0).unwrap();
        let sample_refs: Vec<&crate::sample::Sample> = corpus.samples.iter().collect();
        let kde_route = nll_values(&preds, &sample_refs, None).unwrap();
        let mut exact = BTreeMap::new();
        for s in &corpus.samples {
            exact.insert(s.sample_id.clone(), model.log_likelihood(s).unwrap());
        }
        let exact_route = nll_values(&preds, &sample_refs, Some(&exact)).unwrap();
        for (k, e) in kde_route.iter().zip(&exact_route) {
            let rel = (k - e).abs() / e.abs();
            assert!(rel < 0.05, "kde {k} vs exact {e} (rel {rel})");
        }
    }
}
