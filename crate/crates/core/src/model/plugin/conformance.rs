//! Plugin conformance suite: exercises every protocol surface against a
//! candidate command and reports one pass/fail line per check.

use super::{Message, PluginModel, PluginSession};
use crate::model::{ModelKind, ModelSpec, Predictor, TrainConfig};
use crate::sample::Corpus;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConformanceReport {
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skip => "SKIP",
            };
            out.push_str(&format!("{tag} {}", c.name));
            if !c.detail.is_empty() {
                out.push_str(&format!(" — {}", c.detail));
            }
            out.push('\n');
        }
        out
    }

    fn push(&mut self, name: &'static str, status: CheckStatus, detail: impl Into<String>) {
        self.checks.push(ConformanceCheck { name, status, detail: detail.into() });
    }
}

/// The corpus every conformance run uses.
pub fn conformance_corpus() -> Corpus {
    use crate::ingest::{generate_synthetic, ScenarioKind, SyntheticConfig};
    use crate::sample::{assemble_corpus, CorpusSource};
    use crate::scene::{DataParams, T0Policy};
    let set = generate_synthetic(&SyntheticConfig {
        scenario_kind: ScenarioKind::StraightRoad,
        scene_count: 6,
        agents_per_scene: 2,
        native_dt: 0.25,
        duration: 10.0,
        noise_sigma: 0.05,
        seed: 2024,
        gap_profile: Default::default(),
        dataset_id: "conformance".into(),
        location_id: "conformance_loc".into(),
    })
    .expect("fixture config is valid");
    let params = DataParams::new(5, 4, 0.5, T0Policy::FirstAvailable);
    assemble_corpus(&[CorpusSource::plain(&set)], &params).expect("fixture assembles")
}

/// Runs the full suite against `command`.
pub fn run_conformance(command: &str, timeout: Duration) -> ConformanceReport {
    let mut report = ConformanceReport::default();

    // handshake: version and declared capabilities
    let capabilities = match PluginSession::spawn(command, timeout) {
        Ok(session) => {
            report.push("handshake", CheckStatus::Pass, format!("{:?}", session.capabilities));
            session.capabilities
        }
        Err(e) => {
            report.push("handshake", CheckStatus::Fail, e.to_string());
            return report;
        }
    };

    // malformed op: the plugin must answer with an error, not die
    {
        match PluginSession::spawn(command, timeout) {
            Ok(mut session) => {
                match session.call_raw(r#"{"op":"definitely_not_an_op","payload":{}}"#) {
                    Ok(line) => match Message::from_line(&line) {
                        Ok(Message::Error { .. }) => {
                            report.push("malformed_op_reports_error", CheckStatus::Pass, "")
                        }
                        other => report.push(
                            "malformed_op_reports_error",
                            CheckStatus::Fail,
                            format!("reply was {other:?}"),
                        ),
                    },
                    Err(e) => report.push(
                        "malformed_op_reports_error",
                        CheckStatus::Fail,
                        e.to_string(),
                    ),
                }
            }
            Err(e) => report.push("malformed_op_reports_error", CheckStatus::Fail, e.to_string()),
        }
    }

    let spec = ModelSpec {
        model_id: "conformance_candidate".into(),
        kind: ModelKind::ExternalPlugin,
        command: Some(command.to_string()),
        hyperparameters: [("timeout_secs".to_string(), timeout.as_secs_f64())]
            .into_iter()
            .collect(),
        seed: 7,
    };
    let mut model = match PluginModel::spawn(&spec) {
        Ok(m) => {
            report.push("init", CheckStatus::Pass, "");
            m
        }
        Err(e) => {
            report.push("init", CheckStatus::Fail, e.to_string());
            return report;
        }
    };

    let corpus = conformance_corpus();
    let ids = corpus.sample_ids();

    if !capabilities.supports_train {
        report.push("train", CheckStatus::Skip, "plugin does not declare supports_train");
        return report;
    }
    match model.train(&corpus, &ids, &TrainConfig::default()) {
        Ok(r) => report.push(
            "train",
            CheckStatus::Pass,
            format!("train metric {:.6}", r.train_metric),
        ),
        Err(e) => {
            report.push("train", CheckStatus::Fail, e.to_string());
            return report;
        }
    }

    // predict: shape validation happens inside the session layer
    let preds = match model.predict(&corpus, &ids, 6, 42) {
        Ok(p) => {
            let detail = match p.validate(corpus.params.n_output) {
                Ok(()) => format!("{} entries, k=6", p.entries.len()),
                Err(e) => {
                    report.push("predict_shapes", CheckStatus::Fail, e.to_string());
                    return report;
                }
            };
            report.push("predict_shapes", CheckStatus::Pass, detail);
            p
        }
        Err(e) => {
            report.push("predict_shapes", CheckStatus::Fail, e.to_string());
            return report;
        }
    };

    // determinism: same (params, input, k, seed) must reproduce bit-exactly
    match model.predict(&corpus, &ids, 6, 42) {
        Ok(again) if again == preds => report.push("predict_deterministic", CheckStatus::Pass, ""),
        Ok(_) => report.push(
            "predict_deterministic",
            CheckStatus::Fail,
            "same seed produced different predictions",
        ),
        Err(e) => report.push("predict_deterministic", CheckStatus::Fail, e.to_string()),
    }

    // parameter round trip through get/set
    let state = model.state().clone();
    if state.params.is_empty() {
        report.push("params_roundtrip", CheckStatus::Fail, "plugin exposes no parameters");
    } else {
        match model.restore(state) {
            Ok(()) => match model.predict(&corpus, &ids, 6, 42) {
                Ok(after) if after == preds => {
                    report.push("params_roundtrip", CheckStatus::Pass, "")
                }
                Ok(_) => report.push(
                    "params_roundtrip",
                    CheckStatus::Fail,
                    "predictions changed after restoring the same parameters",
                ),
                Err(e) => report.push("params_roundtrip", CheckStatus::Fail, e.to_string()),
            },
            Err(e) => report.push("params_roundtrip", CheckStatus::Fail, e.to_string()),
        }
    }

    report
}
