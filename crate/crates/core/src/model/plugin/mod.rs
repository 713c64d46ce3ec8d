//! Subprocess model plugins: a handshake establishes the protocol version
//! and capabilities, then model-contract calls are forwarded as framed
//! messages over the child's stdin/stdout.

pub mod conformance;
mod protocol;
pub mod reference;
mod server;

pub use conformance::{run_conformance, ConformanceCheck, ConformanceReport};
pub use protocol::{
    Capabilities, Message, WireAgent, WirePrediction, WireSample, CHUNK_SIZE, PROTOCOL_VERSION,
};
pub use server::{serve, PluginHandler};

use super::{
    JointSample, ModelError, ModelSpec, ModelState, PredictionSet, Predictor, SamplePrediction,
    TrainConfig, TrainReport,
};
use crate::sample::{Corpus, Sample, SampleId};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;

/// Line-based transport to a plugin.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<(), ModelError>;
    fn recv(&mut self, timeout: Duration) -> Result<String, ModelError>;
}

/// Transport over a spawned child process with read timeouts and captured
/// stderr.
pub struct ProcessTransport {
    child: Child,
    stdin: std::process::ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
}

impl ProcessTransport {
    pub fn spawn(command: &str) -> Result<Self, ModelError> {
        let parts: Vec<&str> = command.split_whitespace().collect();
        if parts.is_empty() {
            return Err(ModelError::InvalidSpec("empty plugin command".into()));
        }
        let mut child = Command::new(parts[0])
            .args(&parts[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ModelError::Io(format!("spawn '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr_pipe = child.stderr.take().expect("piped stderr");

        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let stderr_clone = Arc::clone(&stderr);
        std::thread::spawn(move || {
            let reader = BufReader::new(stderr_pipe);
            for line in reader.lines().map_while(Result::ok) {
                let mut buf = stderr_clone.lock().unwrap();
                buf.push_str(&line);
                buf.push('\n');
            }
        });
        Ok(Self { child, stdin, lines: rx, stderr })
    }

    fn crash_error(&mut self) -> ModelError {
        let status = self
            .child
            .wait()
            .map(|s| s.code().unwrap_or(-1))
            .unwrap_or(-1);
        let stderr = self.stderr.lock().unwrap().clone();
        ModelError::Crash { status, stderr }
    }
}

impl Transport for ProcessTransport {
    fn send(&mut self, line: &str) -> Result<(), ModelError> {
        if writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush()).is_err() {
            return Err(self.crash_error());
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, ModelError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(ModelError::Io(format!("plugin stdout: {e}"))),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ModelError::Timeout(timeout)),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(self.crash_error()),
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = writeln!(self.stdin, "{}", Message::Shutdown {}.to_line());
        let _ = self.stdin.flush();
        std::thread::sleep(Duration::from_millis(30));
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Blocking transport over any reader/writer pair; timeouts are not
/// enforced. Used for in-process tests.
pub struct SyncTransport<R: BufRead + Send, W: Write + Send> {
    pub reader: R,
    pub writer: W,
}

impl<R: BufRead + Send, W: Write + Send> Transport for SyncTransport<R, W> {
    fn send(&mut self, line: &str) -> Result<(), ModelError> {
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| ModelError::Io(e.to_string()))
    }

    fn recv(&mut self, _timeout: Duration) -> Result<String, ModelError> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(ModelError::Protocol("plugin closed the stream".into())),
            Ok(_) => Ok(line.trim_end().to_string()),
            Err(e) => Err(ModelError::Io(e.to_string())),
        }
    }
}

/// A live protocol session: handshake done, capabilities known.
pub struct PluginSession {
    transport: Box<dyn Transport>,
    pub capabilities: Capabilities,
    pub timeout: Duration,
}

impl PluginSession {
    /// Spawns `command` and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ModelError> {
        let transport = ProcessTransport::spawn(command)?;
        Self::over(Box::new(transport), timeout)
    }

    /// Runs the handshake over an existing transport.
    pub fn over(transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, ModelError> {
        let mut session = Self { transport, capabilities: Capabilities::default(), timeout };
        let reply = session.call(&Message::Hello {
            version: PROTOCOL_VERSION.into(),
            capabilities: None,
        })?;
        match reply {
            Message::Hello { version, capabilities } if version == PROTOCOL_VERSION => {
                session.capabilities = capabilities.unwrap_or_default();
                Ok(session)
            }
            Message::Hello { version, .. } => Err(ModelError::Protocol(format!(
                "version mismatch: plugin speaks {version}, expected {PROTOCOL_VERSION}"
            ))),
            other => Err(ModelError::Protocol(format!(
                "expected hello, got {}",
                other.op_name()
            ))),
        }
    }

    /// Sends one message and parses the reply. A plugin-side `error` reply
    /// becomes a protocol error.
    pub fn call(&mut self, msg: &Message) -> Result<Message, ModelError> {
        self.transport.send(&msg.to_line())?;
        let line = self.transport.recv(self.timeout)?;
        match Message::from_line(&line) {
            Ok(Message::Error { message }) => {
                Err(ModelError::Protocol(format!("plugin error: {message}")))
            }
            Ok(reply) => Ok(reply),
            Err(e) => Err(ModelError::Protocol(format!("unparseable reply: {e} ({line})"))),
        }
    }

    /// Sends a raw line (possibly malformed on purpose) and returns the raw
    /// reply line.
    pub fn call_raw(&mut self, line: &str) -> Result<String, ModelError> {
        self.transport.send(line)?;
        self.transport.recv(self.timeout)
    }
}

fn wire_sample(sample: &Sample, with_future: bool) -> WireSample {
    WireSample {
        dataset_id: sample.sample_id.dataset_id.clone(),
        scene_id: sample.sample_id.scene_id.clone(),
        t0_nanos: sample.sample_id.t0_nanos,
        agents: sample
            .agents
            .iter()
            .map(|a| WireAgent {
                agent_id: a.agent_id.clone(),
                agent_type: a.agent_type.as_str().to_string(),
                predicted: a.predicted,
                past: a.past.clone(),
                past_mask: a.past_mask.clone(),
                future: with_future.then(|| a.future.clone()),
                future_mask: with_future.then(|| a.future_mask.clone()),
            })
            .collect(),
    }
}

/// A subprocess model behind the standard model contract.
pub struct PluginModel {
    session: Mutex<PluginSession>,
    state: ModelState,
}

impl PluginModel {
    pub fn spawn(spec: &ModelSpec) -> Result<Self, ModelError> {
        let command = spec
            .command
            .as_deref()
            .ok_or_else(|| ModelError::UnknownKind("external_plugin requires a command".into()))?;
        let timeout =
            Duration::from_secs_f64(spec.hyper("timeout_secs", DEFAULT_TIMEOUT_SECS).max(0.001));
        let mut session = PluginSession::spawn(command, timeout)?;
        match session.call(&Message::Init { spec: spec.clone() })? {
            Message::Ok {} => {}
            other => {
                return Err(ModelError::Protocol(format!(
                    "init: expected ok, got {}",
                    other.op_name()
                )))
            }
        }
        Ok(Self { session: Mutex::new(session), state: ModelState::untrained(spec.clone()) })
    }

    pub fn capabilities(&self) -> Capabilities {
        self.session.lock().unwrap().capabilities
    }

    fn refresh_params(&mut self) -> Result<(), ModelError> {
        let mut session = self.session.lock().unwrap();
        match session.call(&Message::GetParams {})? {
            Message::Params { params, trained } => {
                self.state.params = params;
                self.state.trained = trained;
                Ok(())
            }
            other => Err(ModelError::Protocol(format!(
                "get_params: expected params, got {}",
                other.op_name()
            ))),
        }
    }
}

impl Predictor for PluginModel {
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
        if !self.capabilities().supports_train {
            return Err(ModelError::UnsupportedKind(
                "plugin does not support training".into(),
            ));
        }
        let samples = corpus.select(train_ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let report = {
            let mut session = self.session.lock().unwrap();
            match session.call(&Message::TrainBegin {
                n_input: corpus.params.n_input,
                n_output: corpus.params.n_output,
                dt: corpus.params.dt,
                total: samples.len() as u64,
                config: config.clone(),
            })? {
                Message::Ok {} => {}
                other => {
                    return Err(ModelError::Protocol(format!(
                        "train_begin: expected ok, got {}",
                        other.op_name()
                    )))
                }
            }
            for chunk in samples.chunks(CHUNK_SIZE) {
                let msg = Message::TrainChunk {
                    samples: chunk.iter().map(|s| wire_sample(s, true)).collect(),
                };
                match session.call(&msg)? {
                    Message::Ok {} => {}
                    other => {
                        return Err(ModelError::Protocol(format!(
                            "train_chunk: expected ok, got {}",
                            other.op_name()
                        )))
                    }
                }
            }
            match session.call(&Message::TrainEnd {})? {
                Message::Trained { report } => report,
                other => {
                    return Err(ModelError::Protocol(format!(
                        "train_end: expected trained, got {}",
                        other.op_name()
                    )))
                }
            }
        };
        self.refresh_params()?;
        self.state.trained = true;
        Ok(report)
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
        let mut session = self.session.lock().unwrap();
        for chunk in samples.chunks(CHUNK_SIZE) {
            let msg = Message::Predict {
                n_input: corpus.params.n_input,
                n_output: corpus.params.n_output,
                dt: corpus.params.dt,
                k,
                seed,
                samples: chunk.iter().map(|s| wire_sample(s, false)).collect(),
            };
            let reply = session.call(&msg)?;
            let Message::Predictions { entries: wire_entries } = reply else {
                return Err(ModelError::Protocol(format!(
                    "predict: expected predictions, got {}",
                    reply.op_name()
                )));
            };
            if wire_entries.len() != chunk.len() {
                return Err(ModelError::Protocol(format!(
                    "predict: {} entries for {} samples",
                    wire_entries.len(),
                    chunk.len()
                )));
            }
            for (sample, wire) in chunk.iter().zip(wire_entries) {
                let id = SampleId {
                    dataset_id: wire.dataset_id,
                    scene_id: wire.scene_id,
                    t0_nanos: wire.t0_nanos,
                };
                if id != sample.sample_id {
                    return Err(ModelError::Protocol(format!(
                        "predict: entry for {id}, expected {}",
                        sample.sample_id
                    )));
                }
                let agent_ids: Vec<String> =
                    super::predicted_agents(sample).into_iter().map(|(_, a)| a).collect();
                if wire.joint_samples.len() != k {
                    return Err(ModelError::Protocol(format!(
                        "predict: {} joint samples, expected {k}",
                        wire.joint_samples.len()
                    )));
                }
                for js in &wire.joint_samples {
                    if js.len() != agent_ids.len()
                        || js.iter().any(|t| t.len() != corpus.params.n_output)
                    {
                        return Err(ModelError::Protocol(
                            "predict: trajectory shape mismatch".into(),
                        ));
                    }
                }
                entries.push(SamplePrediction {
                    sample_id: sample.sample_id.clone(),
                    agent_ids,
                    joint_samples: wire
                        .joint_samples
                        .into_iter()
                        .map(|trajectories| JointSample { trajectories })
                        .collect(),
                    log_likelihoods: wire.log_likelihoods,
                    behavior_probs: None,
                });
            }
        }
        Ok(PredictionSet { model_id: self.state.spec.model_id.clone(), k, seed, entries })
    }

    fn restore(&mut self, state: ModelState) -> Result<(), ModelError> {
        if state.spec.kind != super::ModelKind::ExternalPlugin {
            return Err(ModelError::KindMismatch {
                expected: super::ModelKind::ExternalPlugin.as_str().into(),
                found: state.spec.kind.as_str().into(),
            });
        }
        {
            let mut session = self.session.lock().unwrap();
            match session.call(&Message::SetParams {
                params: state.params.clone(),
                trained: state.trained,
            })? {
                Message::Ok {} => {}
                other => {
                    return Err(ModelError::Protocol(format!(
                        "set_params: expected ok, got {}",
                        other.op_name()
                    )))
                }
            }
        }
        self.state = state;
        Ok(())
    }
}


#[cfg(test)]
mod chunk_tests {
    use super::tests_support::in_memory_model_for;
    use crate::model::{Predictor, TrainConfig};

    #[test]
    fn large_corpora_cross_the_wire_in_chunks() {
        use crate::ingest::{generate_synthetic, ScenarioKind, SyntheticConfig};
        use crate::sample::{assemble_corpus, CorpusSource};
        use crate::scene::{DataParams, T0Policy};
        // 300 single-sample scenes force two chunks of <= 256
        let set = generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::StraightRoad,
            scene_count: 300,
            agents_per_scene: 1,
            native_dt: 0.25,
            duration: 6.0,
            noise_sigma: 0.02,
            seed: 1,
            gap_profile: Default::default(),
            dataset_id: "big".into(),
            location_id: "big_loc".into(),
        })
        .unwrap();
        let params = DataParams::new(4, 2, 0.5, T0Policy::FirstAvailable);
        let corpus = assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap();
        assert!(corpus.len() > super::CHUNK_SIZE);
        let ids = corpus.sample_ids();
        let mut plugin = in_memory_model_for();
        plugin.train(&corpus, &ids, &TrainConfig::default()).unwrap();
        let preds = plugin.predict(&corpus, &ids, 3, 5).unwrap();
        assert_eq!(preds.entries.len(), corpus.len());
        preds.validate(corpus.params.n_output).unwrap();
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::reference::CvPluginHandler;
    use super::*;
    use crate::model::ModelKind;
    use std::io::BufReader;

    /// PluginModel over an in-process pipe pair, already initialized.
    pub(crate) fn in_memory_model_for() -> PluginModel {
        let (to_server_r, to_server_w) = std::io::pipe().unwrap();
        let (to_client_r, to_client_w) = std::io::pipe().unwrap();
        std::thread::spawn(move || {
            let mut handler = CvPluginHandler::new();
            let _ = serve(BufReader::new(to_server_r), to_client_w, &mut handler);
        });
        let transport: Box<dyn Transport> =
            Box::new(SyncTransport { reader: BufReader::new(to_client_r), writer: to_server_w });
        let mut session = PluginSession::over(transport, Duration::from_secs(20)).unwrap();
        let spec = ModelSpec {
            model_id: "cvp".into(),
            kind: ModelKind::ExternalPlugin,
            command: None,
            hyperparameters: Default::default(),
            seed: 7,
        };
        match session.call(&Message::Init { spec: spec.clone() }).unwrap() {
            Message::Ok {} => {}
            other => panic!("init reply {other:?}"),
        }
        PluginModel { session: std::sync::Mutex::new(session), state: ModelState::untrained(spec) }
    }
}
