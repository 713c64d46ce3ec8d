//! Process-level plugin behavior: real subprocesses, crash capture, and
//! timeout handling.

use std::time::Duration;
use step_core::model::plugin::{run_conformance, PluginSession};
use step_core::model::{model_init, ModelError, ModelKind, ModelSpec, TrainConfig};

fn plugin_command() -> &'static str {
    env!("CARGO_BIN_EXE_step-cv-plugin")
}

#[test]
fn conformance_suite_passes_for_reference_plugin() {
    let report = run_conformance(plugin_command(), Duration::from_secs(30));
    assert!(report.passed(), "{}", report.render_text());
    let names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
    for expected in [
        "handshake",
        "malformed_op_reports_error",
        "init",
        "train",
        "predict_shapes",
        "predict_deterministic",
        "params_roundtrip",
    ] {
        assert!(names.contains(&expected), "missing check {expected}");
    }
}

#[test]
fn nonexistent_command_fails_to_spawn() {
    let err = PluginSession::spawn("/definitely/not/a/plugin", Duration::from_secs(2))
        .err()
        .expect("spawn must fail");
    assert!(matches!(err, ModelError::Io(_)), "{err:?}");
}

#[test]
fn non_protocol_process_is_a_protocol_error_or_crash() {
    // `true` exits immediately without answering the handshake
    let err = match PluginSession::spawn("true", Duration::from_secs(5)) {
        Err(e) => e,
        Ok(_) => panic!("handshake with /bin/true succeeded"),
    };
    assert!(
        matches!(err, ModelError::Crash { .. } | ModelError::Protocol(_)),
        "{err:?}"
    );
}

#[test]
fn killed_plugin_surfaces_as_crash_with_stderr() {
    // a script that prints to stderr and dies mid-protocol
    use std::os::unix::fs::PermissionsExt;
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("dying-plugin.sh");
    std::fs::write(&script, "#!/bin/sh\necho boom-stderr >&2\nexit 7\n").unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let err = match PluginSession::spawn(script.to_str().unwrap(), Duration::from_secs(5)) {
        Err(e) => e,
        Ok(_) => panic!("dead plugin completed a handshake"),
    };
    match err {
        ModelError::Crash { status, stderr } => {
            assert_eq!(status, 7);
            assert!(stderr.contains("boom-stderr"), "stderr was: {stderr}");
        }
        other => panic!("expected crash, got {other:?}"),
    }
}

#[test]
fn unresponsive_plugin_times_out() {
    // `sleep` accepts stdin but never answers
    let err = match PluginSession::spawn("sleep 30", Duration::from_millis(300)) {
        Err(e) => e,
        Ok(_) => panic!("handshake with sleep succeeded"),
    };
    assert!(matches!(err, ModelError::Timeout(_)), "{err:?}");
}

#[test]
fn plugin_model_trains_and_predicts_over_subprocess() {
    let corpus = step_core::model::plugin::conformance::conformance_corpus();
    let ids = corpus.sample_ids();
    let spec = ModelSpec {
        model_id: "cvp".into(),
        kind: ModelKind::ExternalPlugin,
        command: Some(plugin_command().to_string()),
        hyperparameters: Default::default(),
        seed: 3,
    };
    let mut model = model_init(&spec).unwrap();
    model.train(&corpus, &ids, &TrainConfig::default()).unwrap();
    let preds = model.predict(&corpus, &ids, 6, 42).unwrap();
    preds.validate(corpus.params.n_output).unwrap();
    assert_eq!(preds.entries.len(), corpus.len());

    // save and reload through the standard checkpoint machinery
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plugin.ckpt");
    step_core::model::model_save(model.as_ref(), &path).unwrap();
    let reloaded = step_core::model::model_load(&spec, &path).unwrap();
    let again = reloaded.predict(&corpus, &ids, 6, 42).unwrap();
    assert_eq!(preds, again);
}
