//! Canonical on-disk form of a [`SceneSet`]: one directory per dataset with
//! a manifest plus one JSON record per scene. Field names match the type
//! definitions; see docs/format.md.

use super::{Scene, SceneError, SceneSet};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dataset_id: String,
    locations: Vec<String>,
    native_dt: f64,
    scene_ids: Vec<String>,
}

fn io_err(e: std::io::Error, what: &str) -> SceneError {
    SceneError::Io(format!("{what}: {e}"))
}

/// Writes `set` under `dir` (created if missing): `manifest.json` plus
/// `scenes/<scene_id>.json`.
pub fn write_scene_set(set: &SceneSet, dir: &Path) -> Result<(), SceneError> {
    let scenes_dir = dir.join("scenes");
    fs::create_dir_all(&scenes_dir).map_err(|e| io_err(e, "create dir"))?;
    let manifest = Manifest {
        dataset_id: set.dataset_id.clone(),
        locations: set.locations.clone(),
        native_dt: set.native_dt,
        scene_ids: set.scenes.iter().map(|s| s.scene_id.clone()).collect(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SceneError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), manifest_json).map_err(|e| io_err(e, "manifest"))?;
    for scene in &set.scenes {
        let json = serde_json::to_string_pretty(scene)
            .map_err(|e| SceneError::Format(e.to_string()))?;
        fs::write(scenes_dir.join(format!("{}.json", scene.scene_id)), json)
            .map_err(|e| io_err(e, "scene record"))?;
    }
    Ok(())
}

/// Reads a scene set written by [`write_scene_set`]. Scenes come back in
/// manifest order.
pub fn read_scene_set(dir: &Path) -> Result<SceneSet, SceneError> {
    let manifest_raw =
        fs::read_to_string(dir.join("manifest.json")).map_err(|e| io_err(e, "manifest"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_raw)
        .map_err(|e| SceneError::Format(format!("manifest: {e}")))?;
    let mut scenes = Vec::with_capacity(manifest.scene_ids.len());
    for id in &manifest.scene_ids {
        let path = dir.join("scenes").join(format!("{id}.json"));
        let raw = fs::read_to_string(&path).map_err(|e| io_err(e, "scene record"))?;
        let scene: Scene =
            serde_json::from_str(&raw).map_err(|e| SceneError::Format(format!("{id}: {e}")))?;
        scenes.push(scene);
    }
    Ok(SceneSet {
        dataset_id: manifest.dataset_id,
        locations: manifest.locations,
        native_dt: manifest.native_dt,
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentState, AgentTrack, AgentType};

    #[test]
    fn round_trip() {
        let set = SceneSet {
            dataset_id: "d".into(),
            locations: vec!["loc".into()],
            native_dt: 0.25,
            scenes: vec![Scene {
                scene_id: "s1".into(),
                dataset_id: "d".into(),
                location_id: "loc".into(),
                native_dt: 0.25,
                agents: vec![AgentTrack {
                    agent_id: "a".into(),
                    agent_type: AgentType::Pedestrian,
                    size: None,
                    states: vec![
                        AgentState { t: 0.0, x: 0.5, y: 1.5, heading: None, speed: None },
                        AgentState { t: 0.25, x: 0.75, y: 1.5, heading: None, speed: None },
                    ],
                }],
                map: None,
                predict_agent_ids: vec!["a".into()],
                gap_conflict: None,
                anchor_t: None,
                labels: Default::default(),
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        write_scene_set(&set, dir.path()).unwrap();
        let back = read_scene_set(dir.path()).unwrap();
        assert_eq!(back, set);
    }
}
