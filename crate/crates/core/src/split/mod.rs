//! Splitting procedures: partition a corpus into train and test index sets.
//!
//! Every method is a deterministic function of (corpus, spec, seed) and
//! produces a disjoint, covering partition of the corpus samples. The
//! `scene_coherent` flag (default on) keeps all samples extracted from one
//! scene on the same side, preventing leakage between overlapping
//! prediction windows of a single scenario; with one sample per scene it
//! changes nothing. Under scene coherence the test side is filled scene by
//! scene until it reaches the target size, so sizes are exact only for
//! single-sample scenes.

mod criticality;
mod io;

pub use criticality::compute_criticality;
pub use io::{read_split, write_split};

use crate::rng::DetRng;
use crate::sample::{Corpus, SampleId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, thiserror::Error)]
pub enum SplitError {
    #[error("a split side would be empty")]
    EmptySide,
    #[error("split infeasible: {0}")]
    Infeasible(String),
    #[error("samples missing label '{key}': {ids:?}")]
    MissingLabel { key: String, ids: Vec<String> },
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("split io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Random {
        test_fraction: f64,
    },
    ByLocation {
        #[serde(default)]
        test_locations: Vec<String>,
        #[serde(default)]
        test_datasets: Vec<String>,
    },
    CrossValidation {
        n_folds: usize,
        fold_index: usize,
    },
    ByCriticality {
        test_fraction: f64,
    },
    Predefined {
        label_key: String,
    },
}

fn default_scene_coherent() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub method: SplitMethod,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scene_coherent")]
    pub scene_coherent: bool,
}

impl SplitSpec {
    pub fn new(method: SplitMethod, seed: u64) -> Self {
        Self { method, seed, scene_coherent: true }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        match &self.method {
            SplitMethod::Random { test_fraction } | SplitMethod::ByCriticality { test_fraction } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(SplitError::InvalidSpec(format!(
                        "test_fraction must be in (0,1), got {test_fraction}"
                    )));
                }
            }
            SplitMethod::CrossValidation { n_folds, fold_index } => {
                if *n_folds < 2 {
                    return Err(SplitError::InvalidSpec(format!(
                        "n_folds must be >= 2, got {n_folds}"
                    )));
                }
                if fold_index >= n_folds {
                    return Err(SplitError::InvalidSpec(format!(
                        "fold_index {fold_index} out of range for {n_folds} folds"
                    )));
                }
            }
            SplitMethod::ByLocation { test_locations, test_datasets } => {
                if test_locations.is_empty() && test_datasets.is_empty() {
                    return Err(SplitError::InvalidSpec("held-out set is empty".into()));
                }
            }
            SplitMethod::Predefined { label_key } => {
                if label_key.is_empty() {
                    return Err(SplitError::InvalidSpec("label_key is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// A train/test assignment of corpus samples. Both sides keep corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub spec: SplitSpec,
    pub train_ids: Vec<SampleId>,
    pub test_ids: Vec<SampleId>,
}

impl Split {
    pub fn assert_partition(&self, corpus: &Corpus) {
        let train: BTreeSet<_> = self.train_ids.iter().collect();
        let test: BTreeSet<_> = self.test_ids.iter().collect();
        assert!(train.is_disjoint(&test), "train and test overlap");
        assert_eq!(
            train.len() + test.len(),
            corpus.len(),
            "split does not cover the corpus"
        );
    }
}

/// Round-half-to-even to the nearest integer.
fn round_half_even(x: f64) -> usize {
    let floor = x.floor();
    let diff = x - floor;
    let lower = floor as usize;
    if diff > 0.5 || (diff == 0.5 && lower % 2 == 1) {
        lower + 1
    } else {
        lower
    }
}

/// Sample indices grouped by scene, in corpus order.
fn scene_groups(corpus: &Corpus) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        groups
            .entry((s.sample_id.dataset_id.clone(), s.sample_id.scene_id.clone()))
            .or_default()
            .push(i);
    }
    groups.into_values().collect()
}

fn split_from_test_indices(corpus: &Corpus, spec: &SplitSpec, test: &BTreeSet<usize>) -> Split {
    let mut train_ids = Vec::with_capacity(corpus.len() - test.len());
    let mut test_ids = Vec::with_capacity(test.len());
    for (i, s) in corpus.samples.iter().enumerate() {
        if test.contains(&i) {
            test_ids.push(s.sample_id.clone());
        } else {
            train_ids.push(s.sample_id.clone());
        }
    }
    Split { spec: spec.clone(), train_ids, test_ids }
}

/// Random split: `round_half_even(N * test_fraction)` samples to test,
/// chosen by seeded shuffle.
pub fn split_random(
    corpus: &Corpus,
    test_fraction: f64,
    seed: u64,
    scene_coherent: bool,
) -> Result<Split, SplitError> {
    let spec = SplitSpec {
        method: SplitMethod::Random { test_fraction },
        seed,
        scene_coherent,
    };
    spec.validate()?;
    if corpus.is_empty() {
        return Err(SplitError::EmptySide);
    }
    let n = corpus.len();
    let target = round_half_even(n as f64 * test_fraction);
    if target == 0 || target >= n {
        return Err(SplitError::EmptySide);
    }
    let mut rng = DetRng::new(seed);
    let mut test = BTreeSet::new();
    if scene_coherent {
        let mut groups = scene_groups(corpus);
        rng.shuffle(&mut groups);
        for group in groups {
            if test.len() >= target {
                break;
            }
            test.extend(group);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        test.extend(order.into_iter().take(target));
    }
    if test.is_empty() || test.len() >= n {
        return Err(SplitError::EmptySide);
    }
    Ok(split_from_test_indices(corpus, &spec, &test))
}

/// Location/dataset hold-out split: test is everything recorded at a
/// held-out location or coming from a held-out dataset.
pub fn split_by_location(
    corpus: &Corpus,
    test_locations: &[String],
    test_datasets: &[String],
) -> Result<Split, SplitError> {
    let spec = SplitSpec {
        method: SplitMethod::ByLocation {
            test_locations: test_locations.to_vec(),
            test_datasets: test_datasets.to_vec(),
        },
        seed: 0,
        scene_coherent: true,
    };
    spec.validate()?;
    for loc in test_locations {
        if !corpus.samples.iter().any(|s| &s.location_id == loc) {
            return Err(SplitError::Infeasible(format!("location '{loc}' not in corpus")));
        }
    }
    for ds in test_datasets {
        if !corpus.samples.iter().any(|s| &s.sample_id.dataset_id == ds) {
            return Err(SplitError::Infeasible(format!("dataset '{ds}' not in corpus")));
        }
    }
    let mut test = BTreeSet::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        if test_locations.contains(&s.location_id)
            || test_datasets.contains(&s.sample_id.dataset_id)
        {
            test.insert(i);
        }
    }
    if test.is_empty() || test.len() >= corpus.len() {
        return Err(SplitError::Infeasible(
            "hold-out split leaves an empty side; the corpus needs at least two \
             locations or datasets"
                .into(),
        ));
    }
    Ok(split_from_test_indices(corpus, &spec, &test))
}

/// Cross-validation: one seeded permutation defines all folds; fold sizes
/// differ by at most one; the same seed makes folds across `fold_index`
/// values partition the corpus exactly.
pub fn split_cross_validation(
    corpus: &Corpus,
    n_folds: usize,
    fold_index: usize,
    seed: u64,
    scene_coherent: bool,
) -> Result<Split, SplitError> {
    let spec = SplitSpec {
        method: SplitMethod::CrossValidation { n_folds, fold_index },
        seed,
        scene_coherent,
    };
    spec.validate()?;
    if corpus.len() < n_folds {
        return Err(SplitError::Infeasible(format!(
            "{} samples cannot fill {n_folds} folds",
            corpus.len()
        )));
    }
    let mut rng = DetRng::new(seed);
    let mut test = BTreeSet::new();
    if scene_coherent {
        let mut groups = scene_groups(corpus);
        if groups.len() < n_folds {
            return Err(SplitError::Infeasible(format!(
                "{} scenes cannot fill {n_folds} folds under scene coherence",
                groups.len()
            )));
        }
        rng.shuffle(&mut groups);
        for (g, group) in groups.into_iter().enumerate() {
            if g % n_folds == fold_index {
                test.extend(group);
            }
        }
    } else {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        rng.shuffle(&mut order);
        for (rank, idx) in order.into_iter().enumerate() {
            if rank % n_folds == fold_index {
                test.insert(idx);
            }
        }
    }
    Ok(split_from_test_indices(corpus, &spec, &test))
}

/// Criticality split: the most critical `round_half_even(N * fraction)`
/// samples (smallest time-to-collision proxy) form the test set; ties and
/// the all-infinite case fall back to sample-id order.
pub fn split_by_criticality(
    corpus: &Corpus,
    test_fraction: f64,
    scene_coherent: bool,
) -> Result<Split, SplitError> {
    let spec = SplitSpec {
        method: SplitMethod::ByCriticality { test_fraction },
        seed: 0,
        scene_coherent,
    };
    spec.validate()?;
    if corpus.is_empty() {
        return Err(SplitError::EmptySide);
    }
    let n = corpus.len();
    let target = round_half_even(n as f64 * test_fraction);
    if target == 0 || target >= n {
        return Err(SplitError::EmptySide);
    }
    let dt = corpus.params.dt;
    let crit: Vec<f64> = corpus
        .samples
        .iter()
        .map(|s| compute_criticality(s, dt))
        .collect();
    let mut test = BTreeSet::new();
    if scene_coherent {
        // a scene is as critical as its most critical sample
        let mut groups: Vec<(f64, &SampleId, Vec<usize>)> = scene_groups(corpus)
            .into_iter()
            .map(|group| {
                let c = group.iter().map(|&i| crit[i]).fold(f64::INFINITY, f64::min);
                (c, &corpus.samples[group[0]].sample_id, group)
            })
            .collect();
        groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(b.1)));
        for (_, _, group) in groups {
            if test.len() >= target {
                break;
            }
            test.extend(group);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            crit[a]
                .partial_cmp(&crit[b])
                .unwrap()
                .then_with(|| corpus.samples[a].sample_id.cmp(&corpus.samples[b].sample_id))
        });
        test.extend(order.into_iter().take(target));
    }
    if test.is_empty() || test.len() >= n {
        return Err(SplitError::EmptySide);
    }
    Ok(split_from_test_indices(corpus, &spec, &test))
}

/// Predefined split: follow per-sample labels verbatim.
pub fn split_predefined(corpus: &Corpus, label_key: &str) -> Result<Split, SplitError> {
    let spec = SplitSpec {
        method: SplitMethod::Predefined { label_key: label_key.to_string() },
        seed: 0,
        scene_coherent: true,
    };
    spec.validate()?;
    let mut missing = Vec::new();
    let mut test = BTreeSet::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        match s.labels.get(label_key).map(String::as_str) {
            Some("test") => {
                test.insert(i);
            }
            Some("train") => {}
            _ => missing.push(s.sample_id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(SplitError::MissingLabel { key: label_key.to_string(), ids: missing });
    }
    Ok(split_from_test_indices(corpus, &spec, &test))
}

/// Dispatch on a full spec.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<Split, SplitError> {
    spec.validate()?;
    match &spec.method {
        SplitMethod::Random { test_fraction } => {
            split_random(corpus, *test_fraction, spec.seed, spec.scene_coherent)
        }
        SplitMethod::ByLocation { test_locations, test_datasets } => {
            split_by_location(corpus, test_locations, test_datasets)
        }
        SplitMethod::CrossValidation { n_folds, fold_index } => {
            split_cross_validation(corpus, *n_folds, *fold_index, spec.seed, spec.scene_coherent)
        }
        SplitMethod::ByCriticality { test_fraction } => {
            split_by_criticality(corpus, *test_fraction, spec.scene_coherent)
        }
        SplitMethod::Predefined { label_key } => split_predefined(corpus, label_key),
    }
}
