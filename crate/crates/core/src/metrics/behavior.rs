//! Behavior metrics: class probabilities from predicted trajectories, AUC,
//! and calibration error.

use super::MetricsError;
use crate::ingest::{classify_gap_trajectories, GapOutcome, TimedPosition, GAP_ACCEPTED, GAP_REJECTED};
use crate::model::SamplePrediction;
use crate::sample::Sample;
use std::collections::BTreeMap;

/// Extracts behavior probabilities from a prediction entry. Direct
/// classifier output is passed through; trajectory models get their joint
/// samples classified one by one, with undecided draws excluded from the
/// denominator. `None` when the scene has no conflict or nothing is
/// decided.
pub fn classify_prediction_samples(
    entry: &SamplePrediction,
    sample: &Sample,
    dt: f64,
) -> Option<BTreeMap<String, f64>> {
    if let Some(probs) = &entry.behavior_probs {
        return Some(probs.clone());
    }
    let conflict = sample.gap_conflict.as_ref()?;
    if entry.joint_samples.is_empty() {
        return None;
    }
    let timed = |traj: &[[f64; 2]]| -> Vec<TimedPosition> {
        traj.iter()
            .enumerate()
            .map(|(j, p)| TimedPosition { t: sample.t0 + (j as f64 + 1.0) * dt, p: *p })
            .collect()
    };
    // predicted trajectories for the conflict agents; ground truth fills in
    // for an agent the model does not predict
    let truth_of = |id: &str| sample.agent(id).map(|a| timed(&a.future));
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    for js in &entry.joint_samples {
        let traj_of = |id: &str| -> Option<Vec<TimedPosition>> {
            match entry.agent_ids.iter().position(|a| a == id) {
                Some(a) => Some(timed(&js.trajectories[a])),
                None => truth_of(id),
            }
        };
        let entering = traj_of(&conflict.entering_id)?;
        let circulating = traj_of(&conflict.circulating_id)?;
        match classify_gap_trajectories(conflict, &entering, &circulating) {
            GapOutcome::Classified(c) if c.label == GAP_ACCEPTED => accepted += 1,
            GapOutcome::Classified(_) => rejected += 1,
            GapOutcome::Undecided => {}
        }
    }
    let decided = accepted + rejected;
    if decided == 0 {
        return None;
    }
    let mut probs = BTreeMap::new();
    probs.insert(GAP_ACCEPTED.to_string(), accepted as f64 / decided as f64);
    probs.insert(GAP_REJECTED.to_string(), rejected as f64 / decided as f64);
    Some(probs)
}

/// Area under the ROC curve via the Mann-Whitney rank statistic with
/// midrank tie handling.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tie groups
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Expected calibration error over equal-width bins of the predicted
/// positive probability; empty bins are skipped.
pub fn ece(scores: &[f64], labels: &[bool], n_bins: usize) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    assert!(n_bins >= 1);
    for s in scores {
        if !(0.0..=1.0).contains(s) {
            return Err(MetricsError::ShapeMismatch(format!("score {s} outside [0,1]")));
        }
    }
    let mut bin_count = vec![0usize; n_bins];
    let mut bin_conf = vec![0.0f64; n_bins];
    let mut bin_acc = vec![0.0f64; n_bins];
    for (s, &l) in scores.iter().zip(labels) {
        let b = ((s * n_bins as f64) as usize).min(n_bins - 1);
        bin_count[b] += 1;
        bin_conf[b] += s;
        bin_acc[b] += if l { 1.0 } else { 0.0 };
    }
    let n = scores.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        if bin_count[b] == 0 {
            continue;
        }
        let count = bin_count[b] as f64;
        total += (count / n) * ((bin_acc[b] / count) - (bin_conf[b] / count)).abs();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn perfectly_separated_scores_give_auc_one() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [true, true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_equal_scores_give_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_flagged() {
        assert!(matches!(
            auc(&[0.4, 0.6], &[true, true]),
            Err(MetricsError::SingleClass)
        ));
    }

    // O(n^2) pairwise-comparison oracle with ties counting half
    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = DetRng::new(51);
        for _ in 0..40 {
            let n = 3 + rng.below(40) as usize;
            // quantized scores force plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.below(8) as f64) / 7.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
            let n_pos = labels.iter().filter(|&&l| l).count();
            if n_pos == 0 || n_pos == n {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        den += 1.0;
                        if scores[i] > scores[j] {
                            num += 1.0;
                        } else if scores[i] == scores[j] {
                            num += 0.5;
                        }
                    }
                }
            }
            let expected = num / den;
            let got = auc(&scores, &labels).unwrap();
            assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transforms() {
        let mut rng = DetRng::new(52);
        let n = 30;
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-5.0 * s).exp())).collect();
        assert!((auc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn oracle_classifier_is_perfectly_calibrated() {
        let scores = [1.0, 1.0, 0.0, 0.0];
        let labels = [true, true, false, false];
        assert_eq!(ece(&scores, &labels, 10).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_two_sample_case() {
        // two samples scored 0.75, one actually positive: |0.5 - 0.75|
        let scores = [0.75, 0.75];
        let labels = [true, false];
        assert!((ece(&scores, &labels, 10).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn calibrated_uniform_scores_give_zero() {
        let scores = [0.5; 8];
        let labels = [true, false, true, false, true, false, true, false];
        assert!(ece(&scores, &labels, 10).unwrap().abs() < 1e-12);
    }

    // direct re-computation of the binning formula
    #[test]
    fn ece_matches_binning_oracle() {
        let mut rng = DetRng::new(53);
        for _ in 0..30 {
            let n = 5 + rng.below(60) as usize;
            let n_bins = 1 + rng.below(15) as usize;
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();

            let mut expected = 0.0;
            for b in 0..n_bins {
                let lo = b as f64 / n_bins as f64;
                let hi = (b + 1) as f64 / n_bins as f64;
                let members: Vec<usize> = (0..n)
                    .filter(|&i| {
                        let s = scores[i];
                        if b == n_bins - 1 {
                            s >= lo && s <= 1.0
                        } else {
                            s >= lo && s < hi
                        }
                    })
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let conf: f64 =
                    members.iter().map(|&i| scores[i]).sum::<f64>() / members.len() as f64;
                let acc: f64 = members.iter().filter(|&&i| labels[i]).count() as f64
                    / members.len() as f64;
                expected += members.len() as f64 / n as f64 * (acc - conf).abs();
            }
            let got = ece(&scores, &labels, n_bins).unwrap();
            assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        }
    }

    #[test]
    fn classification_fractions() {
        use crate::ingest::{generate_synthetic, GapProfile, ScenarioKind, SyntheticConfig};
        use crate::model::{model_init, ModelKind, ModelSpec, TrainConfig};
        use crate::sample::{assemble_corpus, CorpusSource};
        use crate::scene::{DataParams, T0Policy};
        let set = generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::RoundaboutGap,
            scene_count: 8,
            agents_per_scene: 2,
            native_dt: 0.25,
            duration: 12.0,
            noise_sigma: 0.0,
            seed: 9,
            gap_profile: GapProfile::Mixed,
            dataset_id: "synthetic".into(),
            location_id: "synthloc".into(),
        })
        .unwrap();
        let params =
            DataParams::from_horizons(1.5, 6.0, 0.5, T0Policy::BehaviorAnchored { lead: 0.0 });
        let corpus = assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap();
        let mut model = model_init(&ModelSpec::new("cv", ModelKind::ConstantVelocity)).unwrap();
        model.train(&corpus, &corpus.sample_ids(), &TrainConfig::default()).unwrap();
        let preds = model.predict(&corpus, &corpus.sample_ids(), 6, 1).unwrap();
        let mut decided = 0;
        for (sample, entry) in corpus.samples.iter().zip(&preds.entries) {
            if let Some(probs) = classify_prediction_samples(entry, sample, corpus.params.dt) {
                let sum: f64 = probs.values().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                decided += 1;
            }
        }
        assert!(decided > 0);
    }
}
