//! End-to-end runner behavior: execution, caching, perturbations, skips.

use std::path::{Path, PathBuf};
use step_runner::{parse_simulation_file, run_plan, Status};

fn write_plan(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("plan.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMOKE_PLAN: &str = r#"
output_dir = "out"
seeds = [0]
prediction_k = 6
parallelism = 2
metrics = ["min_ade", "min_fde", "miss_rate", "nll"]

[[datasets]]
id = "roads"
[datasets.synthetic]
scenario_kind = "straight_road"
scene_count = 12
agents_per_scene = 2
native_dt = 0.25
duration = 10.0
noise_sigma = 0.05
seed = 7
dataset_id = "roads"
location_id = "roads_loc"

[[data_params]]
n_input = 5
n_output = 4
dt = 0.5

[[splits]]
id = "rand"
method = { random = { test_fraction = 0.25 } }
seed = 3

[[models]]
id = "cv"
kind = "constant_velocity"

[[models]]
id = "lin"
kind = "linear_ar"
"#;

#[test]
fn smoke_plan_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), SMOKE_PLAN);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let summary = run_plan(&plan).unwrap();
    assert_eq!(summary.records.len(), 8); // 1x1x1x2x4x1
    assert_eq!(summary.computed, 8);
    assert_eq!(summary.failed, 0);
    for r in &summary.records {
        assert!(r.status.is_ok(), "{:?}", r.status);
        let m = r.metric.as_ref().unwrap();
        assert!(m.value.is_finite());
        assert!(m.n >= 1);
    }
    for file in ["results.ndjson", "report.csv", "report.txt", "spreads.csv"] {
        assert!(dir.path().join("out").join(file).exists(), "{file} missing");
    }
}

#[test]
fn rerun_is_cached_and_store_stays_identical() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), SMOKE_PLAN);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let first = run_plan(&plan).unwrap();
    let store_path = dir.path().join("out").join("results.ndjson");
    let bytes_first = std::fs::read(&store_path).unwrap();

    let second = run_plan(&plan).unwrap();
    assert_eq!(second.cached, first.records.len());
    assert_eq!(first.records.len(), 8);
    assert_eq!(second.computed, 0);
    assert_eq!(bytes_first, std::fs::read(&store_path).unwrap());
    // identical metric values bit for bit
    for (a, b) in first.records.iter().zip(&second.records) {
        assert_eq!(a.case_hash, b.case_hash);
        assert_eq!(
            a.metric.as_ref().unwrap().value.to_bits(),
            b.metric.as_ref().unwrap().value.to_bits()
        );
    }
}

#[test]
fn attacked_corpus_changes_results_and_is_cached() {
    let text = r#"
output_dir = "out"
seeds = [0]
prediction_k = 6
metrics = ["min_ade"]

[[datasets]]
id = "roads"
[datasets.synthetic]
scenario_kind = "straight_road"
scene_count = 8
agents_per_scene = 2
native_dt = 0.25
duration = 10.0
noise_sigma = 0.05
seed = 7
dataset_id = "roads"
location_id = "roads_loc"

[[perturbations]]
id = "atk"
kind = { attack_controls = { d_max = 0.5, iters = 10, step_size = 0.05 } }
target_model = "lin"
seed = 5

[[corpora]]
id = "clean"
pairs = [{ dataset = "roads" }]

[[corpora]]
id = "attacked"
pairs = [{ dataset = "roads", perturbation = "atk" }]

[[data_params]]
n_input = 5
n_output = 4
dt = 0.5

[[splits]]
id = "rand"
method = { random = { test_fraction = 0.3 } }
seed = 3

[[models]]
id = "lin"
kind = "linear_ar"
"#;
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), text);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let summary = run_plan(&plan).unwrap();
    assert_eq!(summary.records.len(), 2);
    let clean = summary.records.iter().find(|r| r.case.corpus_id == "clean").unwrap();
    let attacked = summary.records.iter().find(|r| r.case.corpus_id == "attacked").unwrap();
    assert!(clean.status.is_ok() && attacked.status.is_ok(), "{summary:?}");
    let clean_v = clean.metric.as_ref().unwrap().value;
    let attacked_v = attacked.metric.as_ref().unwrap().value;
    assert!(
        attacked_v > clean_v,
        "attack did not degrade the metric: {attacked_v} vs {clean_v}"
    );
    // the attack log of the perturbed corpus exists
    let logs = std::fs::read_dir(dir.path().join("out").join("attack_logs")).unwrap();
    assert!(logs.count() >= 1);
}

#[test]
fn runtime_infeasible_split_becomes_skip() {
    // location hold-out naming a location that is the whole corpus
    let text = SMOKE_PLAN.replace(
        r#"method = { random = { test_fraction = 0.25 } }"#,
        r#"method = { by_location = { test_locations = ["roads_loc"] } }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), &text);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let summary = run_plan(&plan).unwrap();
    assert!(summary.skipped > 0);
    for r in &summary.records {
        assert!(
            matches!(&r.status, Status::Skipped { reason } if reason == "INFEASIBLE_SPLIT"),
            "{:?}",
            r.status
        );
    }
}

#[test]
fn behavior_plan_computes_auc_and_ece() {
    let text = r#"
output_dir = "out"
seeds = [0]
prediction_k = 6
metrics = ["auc", "ece", "min_ade"]

[[datasets]]
id = "gaps"
[datasets.synthetic]
scenario_kind = "roundabout_gap"
scene_count = 30
agents_per_scene = 2
native_dt = 0.25
duration = 12.0
noise_sigma = 0.0
seed = 11
dataset_id = "gaps"
location_id = "gaps_loc"

[[data_params]]
n_input = 4
n_output = 12
dt = 0.5
t0_policy = { behavior_anchored = { lead = 0.0 } }

[[splits]]
id = "rand"
method = { random = { test_fraction = 0.4 } }
seed = 9

[[models]]
id = "log"
kind = "logistic_behavior"

[[models]]
id = "cv"
kind = "constant_velocity"
"#;
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), text);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let summary = run_plan(&plan).unwrap();
    assert_eq!(summary.failed, 0, "{:#?}", summary.records);
    // the logistic classifier separates the synthetic gaps perfectly
    let log_auc = summary
        .records
        .iter()
        .find(|r| r.case.model_id == "log" && r.case.metric == "auc")
        .unwrap();
    assert!(log_auc.status.is_ok());
    assert!((log_auc.metric.as_ref().unwrap().value - 1.0).abs() < 1e-12);
    // trajectory metric on the behavior-only model is skipped
    let log_ade = summary
        .records
        .iter()
        .find(|r| r.case.model_id == "log" && r.case.metric == "min_ade")
        .unwrap();
    assert!(
        matches!(&log_ade.status, Status::Skipped { reason } if reason == "NO_TRAJECTORY_OUTPUT")
    );
    // the trajectory model also gets behavior metrics, via classification
    let cv_auc = summary
        .records
        .iter()
        .find(|r| r.case.model_id == "cv" && r.case.metric == "auc")
        .unwrap();
    assert!(cv_auc.status.is_ok(), "{:?}", cv_auc.status);
}

#[test]
fn corrupt_cache_entry_recomputes_transparently() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), SMOKE_PLAN);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let first = run_plan(&plan).unwrap();

    // corrupt every cached model checkpoint and drop the result store so
    // the pipeline actually re-executes
    let model_dir = plan.cache_dir.join("model");
    for entry in std::fs::read_dir(&model_dir).unwrap() {
        let path = entry.unwrap().path();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
    }
    std::fs::remove_file(dir.path().join("out").join("results.ndjson")).unwrap();

    let second = run_plan(&plan).unwrap();
    assert_eq!(second.computed, first.records.len());
    for (a, b) in first.records.iter().zip(&second.records) {
        assert_eq!(
            a.metric.as_ref().unwrap().value.to_bits(),
            b.metric.as_ref().unwrap().value.to_bits(),
            "recompute diverged for {}",
            a.case_hash
        );
    }
}

#[test]
fn training_never_touches_test_samples() {
    // train on the train ids of a full corpus, then on a corpus with every
    // test sample deleted: identical parameters prove no leakage
    use step_core::ingest::{generate_synthetic, ScenarioKind, SyntheticConfig};
    use step_core::model::{model_init, ModelKind, ModelSpec, TrainConfig};
    use step_core::sample::{assemble_corpus, CorpusSource};
    use step_core::scene::{DataParams, T0Policy};
    use step_core::split::split_random;

    let set = generate_synthetic(&SyntheticConfig {
        scenario_kind: ScenarioKind::StraightRoad,
        scene_count: 16,
        agents_per_scene: 2,
        native_dt: 0.25,
        duration: 10.0,
        noise_sigma: 0.1,
        seed: 77,
        gap_profile: Default::default(),
        dataset_id: "roads".into(),
        location_id: "roads_loc".into(),
    })
    .unwrap();
    let params = DataParams::new(5, 4, 0.5, T0Policy::FirstAvailable);
    let corpus = assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap();
    let split = split_random(&corpus, 0.3, 9, true).unwrap();

    let mut stripped = corpus.clone();
    let test_set: std::collections::BTreeSet<_> = split.test_ids.iter().cloned().collect();
    stripped.samples.retain(|s| !test_set.contains(&s.sample_id));
    assert!(stripped.len() < corpus.len());

    for kind in [ModelKind::ConstantVelocity, ModelKind::LinearAr] {
        let mut with_test = model_init(&ModelSpec::new("m", kind)).unwrap();
        with_test.train(&corpus, &split.train_ids, &TrainConfig::default()).unwrap();
        let mut without_test = model_init(&ModelSpec::new("m", kind)).unwrap();
        without_test.train(&stripped, &split.train_ids, &TrainConfig::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&with_test.state().params).unwrap(),
            serde_json::to_string(&without_test.state().params).unwrap(),
            "{kind:?} parameters depend on test samples"
        );
    }
}

#[test]
fn csv_dataset_flows_through_and_persists_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("drone_data");
    std::fs::create_dir_all(&data_dir).unwrap();
    // 25 Hz recording, two vehicles moving along x
    let mut tracks = String::from("recordingId,trackId,frame,x,y,heading,width,length\n");
    for rec in 0..4 {
        for frame in 0..200 {
            let t = frame as f64 * 0.04;
            tracks.push_str(&format!("{rec},1,{frame},{:.6},2.0,0.0,1.8,4.5\n", 3.0 * t));
            tracks.push_str(&format!("{rec},2,{frame},{:.6},5.5,0.0,1.9,4.6\n", 5.0 * t + 4.0));
        }
    }
    std::fs::write(data_dir.join("tracks.csv"), tracks).unwrap();
    let mut meta = String::from("recordingId,trackId,class,frameRate,locationId\n");
    for rec in 0..4 {
        meta.push_str(&format!("{rec},1,car,25,siteA\n{rec},2,car,25,siteA\n"));
    }
    std::fs::write(data_dir.join("meta.csv"), meta).unwrap();

    let text = r#"
output_dir = "out"
seeds = [0]
prediction_k = 6
metrics = ["min_ade"]

[[datasets]]
id = "drone"
csv_dir = "drone_data"

[[data_params]]
n_input = 5
n_output = 4
dt = 0.5

[[splits]]
id = "rand"
method = { random = { test_fraction = 0.25 } }
seed = 3

[[models]]
id = "cv"
kind = "constant_velocity"
"#;
    let plan_path = write_plan(dir.path(), text);
    let plan = parse_simulation_file(&plan_path).unwrap();
    let summary = run_plan(&plan).unwrap();
    assert_eq!(summary.failed, 0, "{:#?}", summary.records);
    assert!(summary.records[0].status.is_ok());
    // constant-velocity world at uniform rate: exact predictions
    assert!(summary.records[0].metric.as_ref().unwrap().value < 1e-9);

    // canonical converted form plus its provenance log
    let set_dir = dir.path().join("out").join("scene_sets").join("drone");
    assert!(set_dir.join("manifest.json").exists());
    assert!(set_dir.join("provenance.log").exists());
    assert!(set_dir.join("scenes").join("rec_0.json").exists());
    let reloaded = step_core::scene::read_scene_set(&set_dir).unwrap();
    assert_eq!(reloaded.scenes.len(), 4);
    assert!((reloaded.native_dt - 0.04).abs() < 1e-12);
}
