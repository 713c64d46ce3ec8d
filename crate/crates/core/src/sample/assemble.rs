//! Corpus assembly: iterate (scene set, perturbation) pairs, extract
//! samples, apply perturbations, concatenate deterministically.

use super::{extract_sample, select_prediction_times, Corpus, Provenance, Sample, SampleError};
use crate::scene::{DataParams, SceneSet};
use std::collections::BTreeSet;

/// A perturbation applicable to individual samples. Implementations live in
/// the perturbation module; the corpus only records their identity.
pub trait SamplePerturbation {
    fn id(&self) -> &str;
    fn perturb(&self, sample: &Sample) -> Result<Sample, String>;
}

/// One dataset's contribution to a corpus.
pub struct CorpusSource<'a> {
    pub scene_set: &'a SceneSet,
    pub perturbation: Option<&'a dyn SamplePerturbation>,
}

impl<'a> CorpusSource<'a> {
    pub fn plain(scene_set: &'a SceneSet) -> Self {
        Self { scene_set, perturbation: None }
    }
}

/// Assembles the combined corpus: dataset order as given, scenes by id,
/// prediction times ascending. Perturbed sources are perturbed sample by
/// sample; failures carry the sample's provenance.
pub fn assemble_corpus(
    sources: &[CorpusSource<'_>],
    params: &DataParams,
) -> Result<Corpus, SampleError> {
    params.validate().map_err(SampleError::InvalidParams)?;
    let mut provenance = Vec::with_capacity(sources.len());
    let mut samples: Vec<Sample> = Vec::new();
    let mut seen = BTreeSet::new();
    for source in sources {
        provenance.push(Provenance {
            dataset_id: source.scene_set.dataset_id.clone(),
            perturbation_id: source.perturbation.map(|p| p.id().to_string()),
        });
        let mut scenes: Vec<_> = source.scene_set.scenes.iter().collect();
        scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        for scene in scenes {
            for t0 in select_prediction_times(scene, params) {
                let mut sample = extract_sample(scene, t0, params)?;
                if let Some(p) = source.perturbation {
                    sample = p.perturb(&sample).map_err(|reason| SampleError::Perturbation {
                        id: p.id().to_string(),
                        sample_id: sample.sample_id.to_string(),
                        reason,
                    })?;
                }
                if !seen.insert(sample.sample_id.clone()) {
                    return Err(SampleError::DuplicateSampleId(sample.sample_id.to_string()));
                }
                samples.push(sample);
            }
        }
    }
    Ok(Corpus { params: params.clone(), provenance, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, ScenarioKind,SyntheticConfig};
    use crate::scene::{DataParams, T0Policy};

    fn synth(dataset_id: &str, scene_count: usize, seed: u64) -> crate::scene::SceneSet {
        generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::StraightRoad,
            scene_count,
            agents_per_scene: 2,
            native_dt: 0.25,
            duration: 10.0,
            noise_sigma: 0.0,
            seed,
            gap_profile: Default::default(),
            dataset_id: dataset_id.into(),
            location_id: format!("loc_{dataset_id}"),
        })
        .unwrap()
    }

    struct NoopPerturbation;
    impl SamplePerturbation for NoopPerturbation {
        fn id(&self) -> &str {
            "noop"
        }
        fn perturb(&self, sample: &Sample) -> Result<Sample, String> {
            Ok(sample.clone())
        }
    }

    #[test]
    fn concatenation_in_documented_order() {
        let a = synth("alpha", 3, 1);
        let b = synth("beta", 5, 2);
        let params = DataParams::new(4, 2, 0.5, T0Policy::FirstAvailable);
        let corpus = assemble_corpus(
            &[CorpusSource::plain(&a), CorpusSource::plain(&b)],
            &params,
        )
        .unwrap();
        assert_eq!(corpus.len(), 8);
        // dataset order then scene order
        let datasets: Vec<&str> =
            corpus.samples.iter().map(|s| s.sample_id.dataset_id.as_str()).collect();
        assert_eq!(datasets[..3], ["alpha", "alpha", "alpha"]);
        assert_eq!(datasets[3..], ["beta", "beta", "beta", "beta", "beta"]);
        let mut scene_ids: Vec<&str> =
            corpus.samples[..3].iter().map(|s| s.sample_id.scene_id.as_str()).collect();
        let sorted = {
            let mut s = scene_ids.clone();
            s.sort();
            s
        };
        assert_eq!(scene_ids, sorted);
        scene_ids.dedup();
        assert_eq!(scene_ids.len(), 3);
    }

    #[test]
    fn assembly_is_deterministic() {
        let a = synth("alpha", 4, 9);
        let params = DataParams::new(4, 2, 0.5, T0Policy::RegularSpacing { gap: 2.0 });
        let c1 = assemble_corpus(&[CorpusSource::plain(&a)], &params).unwrap();
        let c2 = assemble_corpus(&[CorpusSource::plain(&a)], &params).unwrap();
        assert_eq!(c1.sample_ids(), c2.sample_ids());
        assert_eq!(c1, c2);
    }

    #[test]
    fn provenance_records_perturbation_ids() {
        let a = synth("alpha", 2, 1);
        let b = synth("beta", 2, 2);
        let params = DataParams::new(4, 2, 0.5, T0Policy::FirstAvailable);
        let noop = NoopPerturbation;
        let corpus = assemble_corpus(
            &[
                CorpusSource { scene_set: &a, perturbation: Some(&noop) },
                CorpusSource::plain(&b),
            ],
            &params,
        )
        .unwrap();
        let ids: Vec<Option<&str>> =
            corpus.provenance.iter().map(|p| p.perturbation_id.as_deref()).collect();
        assert_eq!(ids, vec![Some("noop"), None]);
    }

    #[test]
    fn sample_count_matches_per_scene_selection() {
        let a = synth("alpha", 5, 3);
        let params = DataParams::new(4, 2, 0.5, T0Policy::RegularSpacing { gap: 1.0 });
        let corpus = assemble_corpus(&[CorpusSource::plain(&a)], &params).unwrap();
        let expected: usize = a
            .scenes
            .iter()
            .map(|s| select_prediction_times(s, &params).len())
            .sum();
        assert_eq!(corpus.len(), expected);
    }
}
