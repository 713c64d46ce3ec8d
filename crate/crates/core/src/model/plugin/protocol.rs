//! Wire protocol for external model plugins: newline-delimited JSON
//! messages over the child's standard input/output. Every message is one
//! object `{"op": ..., "payload": ...}`; trajectories travel as nested
//! number arrays. Corpora are chunked in batches of at most
//! [`CHUNK_SIZE`] samples.

use crate::model::{ModelSpec, NamedArray, TrainReport};
use serde::{Deserialize, Serialize};

/// Protocol version exchanged at handshake.
pub const PROTOCOL_VERSION: &str = "step-plugin/1";

/// Maximum samples per train or predict chunk.
pub const CHUNK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Capabilities {
    pub supports_train: bool,
    pub supports_likelihood: bool,
    pub supports_gradient: bool,
}

/// One agent on the wire. `future` is present for training and omitted for
/// prediction requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAgent {
    pub agent_id: String,
    pub agent_type: String,
    pub predicted: bool,
    pub past: Vec<[f64; 2]>,
    pub past_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSample {
    pub dataset_id: String,
    pub scene_id: String,
    pub t0_nanos: i64,
    pub agents: Vec<WireAgent>,
}

/// `k` joint samples for one input sample: `[k][agent][step] -> position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrediction {
    pub dataset_id: String,
    pub scene_id: String,
    pub t0_nanos: i64,
    pub joint_samples: Vec<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihoods: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capabilities: Option<Capabilities>,
    },
    Init {
        spec: ModelSpec,
    },
    TrainBegin {
        n_input: usize,
        n_output: usize,
        dt: f64,
        total: u64,
        config: crate::model::TrainConfig,
    },
    TrainChunk {
        samples: Vec<WireSample>,
    },
    TrainEnd {},
    Trained {
        report: TrainReport,
    },
    Predict {
        n_input: usize,
        n_output: usize,
        dt: f64,
        k: usize,
        seed: u64,
        samples: Vec<WireSample>,
    },
    Predictions {
        entries: Vec<WirePrediction>,
    },
    GetParams {},
    Params {
        params: Vec<NamedArray>,
        trained: bool,
    },
    SetParams {
        params: Vec<NamedArray>,
        trained: bool,
    },
    Ok {},
    Error {
        message: String,
    },
    Shutdown {},
}

impl Message {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol message serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Init { .. } => "init",
            Message::TrainBegin { .. } => "train_begin",
            Message::TrainChunk { .. } => "train_chunk",
            Message::TrainEnd {} => "train_end",
            Message::Trained { .. } => "trained",
            Message::Predict { .. } => "predict",
            Message::Predictions { .. } => "predictions",
            Message::GetParams {} => "get_params",
            Message::Params { .. } => "params",
            Message::SetParams { .. } => "set_params",
            Message::Ok {} => "ok",
            Message::Error { .. } => "error",
            Message::Shutdown {} => "shutdown",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_use_op_payload_envelope() {
        let msg = Message::Hello { version: PROTOCOL_VERSION.into(), capabilities: None };
        let line = msg.to_line();
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(value["op"], "hello");
        assert_eq!(value["payload"]["version"], PROTOCOL_VERSION);
        assert_eq!(Message::from_line(&line).unwrap(), msg);
    }

    #[test]
    fn positions_round_trip_bit_exact() {
        let exotic = [0.1 + 0.2, f64::MIN_POSITIVE, 1.0 / 3.0];
        for v in exotic {
            let msg = Message::TrainChunk {
                samples: vec![WireSample {
                    dataset_id: "d".into(),
                    scene_id: "s".into(),
                    t0_nanos: 4_500_000_000,
                    agents: vec![WireAgent {
                        agent_id: "a".into(),
                        agent_type: "vehicle".into(),
                        predicted: true,
                        past: vec![[v, -v]],
                        past_mask: vec![true],
                        future: Some(vec![[v * 2.0, v]]),
                        future_mask: Some(vec![true]),
                    }],
                }],
            };
            let back = Message::from_line(&msg.to_line()).unwrap();
            assert_eq!(back, msg);
        }
    }

    #[test]
    fn unknown_op_fails_parse() {
        assert!(Message::from_line(r#"{"op":"bogus","payload":{}}"#).is_err());
    }
}
