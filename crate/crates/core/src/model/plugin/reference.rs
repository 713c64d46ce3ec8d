//! Reference plugin handler: the constant-velocity baseline behind the wire
//! protocol. Serves as the conformance fixture; its predictions are
//! bit-identical to the in-process baseline because both run the same code
//! on the same reconstructed sample identities.

use super::protocol::{Capabilities, WirePrediction, WireSample};
use super::server::PluginHandler;
use crate::model::{
    ConstantVelocity, ModelKind, ModelSpec, ModelState, NamedArray, Predictor, TrainConfig,
    TrainReport,
};
use crate::sample::{Corpus, Sample, SampleAgent, SampleId};
use crate::scene::{AgentType, DataParams, T0Policy};

pub struct CvPluginHandler {
    inner: Option<ConstantVelocity>,
}

impl CvPluginHandler {
    pub fn new() -> Self {
        Self { inner: None }
    }
}

impl Default for CvPluginHandler {
    fn default() -> Self {
        Self::new()
    }
}

fn agent_type_from(name: &str) -> AgentType {
    match name {
        "pedestrian" => AgentType::Pedestrian,
        "bicycle" => AgentType::Bicycle,
        "motorcycle" => AgentType::Motorcycle,
        _ => AgentType::Vehicle,
    }
}

fn corpus_from_wire(
    n_input: usize,
    n_output: usize,
    dt: f64,
    wire: &[WireSample],
) -> Corpus {
    let samples = wire
        .iter()
        .map(|ws| Sample {
            sample_id: SampleId {
                dataset_id: ws.dataset_id.clone(),
                scene_id: ws.scene_id.clone(),
                t0_nanos: ws.t0_nanos,
            },
            location_id: String::new(),
            t0: ws.t0_nanos as f64 * 1e-9,
            agents: ws
                .agents
                .iter()
                .map(|wa| SampleAgent {
                    agent_id: wa.agent_id.clone(),
                    agent_type: agent_type_from(&wa.agent_type),
                    size: None,
                    predicted: wa.predicted,
                    past: wa.past.clone(),
                    future: wa.future.clone().unwrap_or_else(|| vec![[0.0; 2]; n_output]),
                    past_mask: wa.past_mask.clone(),
                    future_mask: wa
                        .future_mask
                        .clone()
                        .unwrap_or_else(|| vec![false; n_output]),
                })
                .collect(),
            behavior_label: None,
            gap_conflict: None,
            labels: Default::default(),
        })
        .collect();
    Corpus {
        params: DataParams::new(n_input, n_output, dt, T0Policy::FirstAvailable),
        provenance: Vec::new(),
        samples,
    }
}

impl PluginHandler for CvPluginHandler {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_train: true, supports_likelihood: false, supports_gradient: false }
    }

    fn init(&mut self, spec: ModelSpec) -> Result<(), String> {
        // run the baseline under its native kind, keeping id and hypers
        let inner_spec = ModelSpec {
            kind: ModelKind::ConstantVelocity,
            command: None,
            ..spec
        };
        self.inner = Some(ConstantVelocity::init(&inner_spec));
        Ok(())
    }

    fn train(
        &mut self,
        n_input: usize,
        n_output: usize,
        dt: f64,
        config: &TrainConfig,
        samples: &[WireSample],
    ) -> Result<TrainReport, String> {
        let model = self.inner.as_mut().ok_or("init required before train")?;
        let corpus = corpus_from_wire(n_input, n_output, dt, samples);
        let ids = corpus.sample_ids();
        model.train(&corpus, &ids, config).map_err(|e| e.to_string())
    }

    fn predict(
        &self,
        n_input: usize,
        n_output: usize,
        dt: f64,
        k: usize,
        seed: u64,
        samples: &[WireSample],
    ) -> Result<Vec<WirePrediction>, String> {
        let model = self.inner.as_ref().ok_or("init required before predict")?;
        let corpus = corpus_from_wire(n_input, n_output, dt, samples);
        let ids = corpus.sample_ids();
        let preds = model.predict(&corpus, &ids, k, seed).map_err(|e| e.to_string())?;
        Ok(preds
            .entries
            .into_iter()
            .map(|e| WirePrediction {
                dataset_id: e.sample_id.dataset_id.clone(),
                scene_id: e.sample_id.scene_id.clone(),
                t0_nanos: e.sample_id.t0_nanos,
                joint_samples: e
                    .joint_samples
                    .into_iter()
                    .map(|js| js.trajectories)
                    .collect(),
                log_likelihoods: e.log_likelihoods,
            })
            .collect())
    }

    fn get_params(&self) -> (Vec<NamedArray>, bool) {
        match &self.inner {
            Some(m) => (m.state().params.clone(), m.state().trained),
            None => (Vec::new(), false),
        }
    }

    fn set_params(&mut self, params: Vec<NamedArray>, trained: bool) -> Result<(), String> {
        let model = self.inner.as_mut().ok_or("init required before set_params")?;
        let state = ModelState {
            spec: model.state().spec.clone(),
            params,
            trained,
            training_fingerprint: None,
        };
        model.restore(state).map_err(|e| e.to_string())
    }
}
