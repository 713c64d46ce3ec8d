//! Plugin-side server loop: reads framed messages from stdin, dispatches to
//! a handler, writes one reply per request. Malformed input produces an
//! `error` reply rather than a crash.

use super::protocol::{Capabilities, Message, WirePrediction, WireSample, PROTOCOL_VERSION};
use crate::model::{ModelSpec, NamedArray, TrainReport};
use std::io::{BufRead, Write};

/// What a plugin implements. The server loop owns framing, handshake, and
/// train chunk assembly.
pub trait PluginHandler {
    fn capabilities(&self) -> Capabilities;
    fn init(&mut self, spec: ModelSpec) -> Result<(), String>;
    fn train(
        &mut self,
        n_input: usize,
        n_output: usize,
        dt: f64,
        config: &crate::model::TrainConfig,
        samples: &[WireSample],
    ) -> Result<TrainReport, String>;
    fn predict(
        &self,
        n_input: usize,
        n_output: usize,
        dt: f64,
        k: usize,
        seed: u64,
        samples: &[WireSample],
    ) -> Result<Vec<WirePrediction>, String>;
    fn get_params(&self) -> (Vec<NamedArray>, bool);
    fn set_params(&mut self, params: Vec<NamedArray>, trained: bool) -> Result<(), String>;
}

struct TrainBuffer {
    n_input: usize,
    n_output: usize,
    dt: f64,
    config: crate::model::TrainConfig,
    samples: Vec<WireSample>,
}

/// Runs the message loop until shutdown or end of input.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    handler: &mut dyn PluginHandler,
) -> std::io::Result<()> {
    let mut train_buffer: Option<TrainBuffer> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::from_line(&line) {
            Err(e) => Message::Error { message: format!("unparseable message: {e}") },
            Ok(msg) => match msg {
                Message::Hello { version, .. } => {
                    if version == PROTOCOL_VERSION {
                        Message::Hello {
                            version: PROTOCOL_VERSION.into(),
                            capabilities: Some(handler.capabilities()),
                        }
                    } else {
                        Message::Error {
                            message: format!(
                                "unsupported protocol version {version}, this plugin speaks \
                                 {PROTOCOL_VERSION}"
                            ),
                        }
                    }
                }
                Message::Init { spec } => match handler.init(spec) {
                    Ok(()) => Message::Ok {},
                    Err(message) => Message::Error { message },
                },
                Message::TrainBegin { n_input, n_output, dt, total, config } => {
                    train_buffer = Some(TrainBuffer {
                        n_input,
                        n_output,
                        dt,
                        config,
                        samples: Vec::with_capacity(total as usize),
                    });
                    Message::Ok {}
                }
                Message::TrainChunk { samples } => match train_buffer.as_mut() {
                    Some(buf) => {
                        buf.samples.extend(samples);
                        Message::Ok {}
                    }
                    None => Message::Error { message: "train_chunk before train_begin".into() },
                },
                Message::TrainEnd {} => match train_buffer.take() {
                    Some(buf) => {
                        match handler.train(buf.n_input, buf.n_output, buf.dt, &buf.config, &buf.samples) {
                            Ok(report) => Message::Trained { report },
                            Err(message) => Message::Error { message },
                        }
                    }
                    None => Message::Error { message: "train_end before train_begin".into() },
                },
                Message::Predict { n_input, n_output, dt, k, seed, samples } => {
                    match handler.predict(n_input, n_output, dt, k, seed, &samples) {
                        Ok(entries) => Message::Predictions { entries },
                        Err(message) => Message::Error { message },
                    }
                }
                Message::GetParams {} => {
                    let (params, trained) = handler.get_params();
                    Message::Params { params, trained }
                }
                Message::SetParams { params, trained } => {
                    match handler.set_params(params, trained) {
                        Ok(()) => Message::Ok {},
                        Err(message) => Message::Error { message },
                    }
                }
                Message::Shutdown {} => return Ok(()),
                other => Message::Error {
                    message: format!("unexpected request op {}", other.op_name()),
                },
            },
        };
        writeln!(writer, "{}", reply.to_line())?;
        writer.flush()?;
    }
    Ok(())
}
