//! Sample extraction: turning scenes into (past, future) samples under a
//! data parameter setting, and concatenating scene sets into a corpus.

mod assemble;
mod corpus_io;
mod extract;

pub use assemble::{assemble_corpus, CorpusSource, SamplePerturbation};
pub use corpus_io::{corpus_from_bytes, corpus_to_bytes, read_corpus, write_corpus};
pub use extract::{extract_sample, select_prediction_times};

use crate::ingest::BehaviorClass;
use crate::scene::{AgentSize, AgentType, DataParams, GapConflict};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SampleError {
    #[error("insufficient coverage for predicted agent {agent_id} at t0={t0}")]
    InsufficientCoverage { agent_id: String, t0: f64 },
    #[error("duplicate sample id {0}")]
    DuplicateSampleId(String),
    #[error("perturbation {id} failed on {sample_id}: {reason}")]
    Perturbation { id: String, sample_id: String, reason: String },
    #[error("invalid data params: {0}")]
    InvalidParams(String),
    #[error("corpus io: {0}")]
    Io(String),
    #[error("corpus file corrupt: {0}")]
    Corrupt(String),
}

/// Identity of one extraction: the scene plus the prediction time. The
/// prediction time is canonicalized to integer nanoseconds so ids are
/// stable across timestep settings that target the same instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub dataset_id: String,
    pub scene_id: String,
    pub t0_nanos: i64,
}

impl SampleId {
    pub fn new(dataset_id: &str, scene_id: &str, t0: f64) -> Self {
        Self {
            dataset_id: dataset_id.to_string(),
            scene_id: scene_id.to_string(),
            t0_nanos: (t0 * 1e9).round() as i64,
        }
    }

    pub fn t0(&self) -> f64 {
        self.t0_nanos as f64 * 1e-9
    }
}

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}@{}", self.dataset_id, self.scene_id, self.t0_nanos)
    }
}

/// One agent's slice of a sample. Positions are dense arrays; the masks say
/// which entries are actually observed (false entries hold zeros). Predicted
/// agents are fully observed over past and future by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAgent {
    pub agent_id: String,
    pub agent_type: AgentType,
    pub size: Option<AgentSize>,
    pub predicted: bool,
    pub past: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
    pub past_mask: Vec<bool>,
    pub future_mask: Vec<bool>,
}

impl SampleAgent {
    pub fn fully_observed(&self) -> bool {
        self.past_mask.iter().all(|&m| m) && self.future_mask.iter().all(|&m| m)
    }

    /// Position at the prediction time (last past step).
    pub fn current(&self) -> [f64; 2] {
        *self.past.last().expect("past is non-empty")
    }
}

/// One extraction: past over `n_input` steps ending at `t0`, future over
/// `n_output` steps starting at `t0 + dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: SampleId,
    pub location_id: String,
    pub t0: f64,
    pub agents: Vec<SampleAgent>,
    /// Ground-truth behavior class over the sample's future window, when
    /// the scene supports classification and the outcome is decided.
    pub behavior_label: Option<BehaviorClass>,
    pub gap_conflict: Option<GapConflict>,
    pub labels: BTreeMap<String, String>,
}

impl Sample {
    pub fn agent(&self, id: &str) -> Option<&SampleAgent> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn predicted_agents(&self) -> impl Iterator<Item = &SampleAgent> {
        self.agents.iter().filter(|a| a.predicted)
    }

    pub fn predicted_count(&self) -> usize {
        self.agents.iter().filter(|a| a.predicted).count()
    }
}

/// Where a corpus slice came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub perturbation_id: Option<String>,
}

/// The combined sample collection all downstream stages consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub params: DataParams,
    pub provenance: Vec<Provenance>,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: &SampleId) -> Option<&Sample> {
        self.samples.iter().find(|s| &s.sample_id == id)
    }

    pub fn sample_ids(&self) -> Vec<SampleId> {
        self.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    /// Samples selected by id, in the order given. Missing ids are an error.
    pub fn select<'a>(&'a self, ids: &[SampleId]) -> Result<Vec<&'a Sample>, SampleError> {
        let index: BTreeMap<&SampleId, &Sample> =
            self.samples.iter().map(|s| (&s.sample_id, s)).collect();
        ids.iter()
            .map(|id| {
                index.get(id).copied().ok_or_else(|| SampleError::Io(format!(
                    "sample {id} not in corpus"
                )))
            })
            .collect()
    }
}
