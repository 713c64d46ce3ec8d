//! Synthetic scenario generator: a desk-scale data supply with known ground
//! truth. Straight-road scenes carry constant-velocity agents plus optional
//! Gaussian position noise; roundabout-gap scenes carry scripted
//! gap-acceptance interactions with conflict geometry and a truth label.

use super::behavior::{GAP_ACCEPTED, GAP_REJECTED};
use super::IngestError;
use crate::rng::{mix_seed_u64, DetRng};
use crate::scene::{
    AgentSize, AgentState, AgentTrack, AgentType, GapConflict, Lane, LaneGraph, Scene, SceneSet,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Scene label key holding the generator's ground-truth gap decision.
pub const GAP_TRUTH_LABEL: &str = "gap_truth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    StraightRoad,
    RoundaboutGap,
}

/// Which decision the roundabout script follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapProfile {
    /// Alternate accept and reject across scenes.
    #[default]
    Mixed,
    AllAccept,
    AllReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub scenario_kind: ScenarioKind,
    pub scene_count: usize,
    pub agents_per_scene: usize,
    pub native_dt: f64,
    /// Scene length in seconds.
    pub duration: f64,
    /// Standard deviation of i.i.d. position noise, meters.
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub gap_profile: GapProfile,
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    #[serde(default = "default_location_id")]
    pub location_id: String,
}

fn default_dataset_id() -> String {
    "synthetic".into()
}

fn default_location_id() -> String {
    "synthloc".into()
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.scene_count < 1 || self.agents_per_scene < 1 {
            return Err(IngestError::InvalidConfig("counts must be >= 1".into()));
        }
        if !(self.native_dt > 0.0) {
            return Err(IngestError::InvalidConfig("native_dt must be > 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(IngestError::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        let min_duration = match self.scenario_kind {
            ScenarioKind::StraightRoad => 2.0 * self.native_dt,
            ScenarioKind::RoundaboutGap => 8.0,
        };
        if self.duration < min_duration {
            return Err(IngestError::InvalidConfig(format!(
                "duration {} below minimum {min_duration} for this scenario kind",
                self.duration
            )));
        }
        Ok(())
    }
}

/// Generates a scene set deterministically from the config seed.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SceneSet, IngestError> {
    config.validate()?;
    let scenes: Vec<Scene> = (0..config.scene_count)
        .map(|idx| match config.scenario_kind {
            ScenarioKind::StraightRoad => straight_road_scene(config, idx),
            ScenarioKind::RoundaboutGap => roundabout_gap_scene(config, idx),
        })
        .collect();
    Ok(SceneSet {
        dataset_id: config.dataset_id.clone(),
        locations: vec![config.location_id.clone()],
        native_dt: config.native_dt,
        scenes,
    })
}

fn steps(config: &SyntheticConfig) -> usize {
    (config.duration / config.native_dt).floor() as usize + 1
}

/// Samples a track from a position-of-time function, adding position noise.
fn track_from_motion(
    id: &str,
    agent_type: AgentType,
    config: &SyntheticConfig,
    rng: &mut DetRng,
    motion: impl Fn(f64) -> ([f64; 2], f64, f64),
) -> AgentTrack {
    let n = steps(config);
    let states = (0..n)
        .map(|k| {
            let t = k as f64 * config.native_dt;
            let (p, heading, speed) = motion(t);
            let (nx, ny) = if config.noise_sigma > 0.0 {
                (rng.gauss() * config.noise_sigma, rng.gauss() * config.noise_sigma)
            } else {
                (0.0, 0.0)
            };
            AgentState {
                t,
                x: p[0] + nx,
                y: p[1] + ny,
                heading: Some(heading),
                speed: Some(speed),
            }
        })
        .collect();
    AgentTrack {
        agent_id: id.to_string(),
        agent_type,
        size: Some(AgentSize { length: 4.5, width: 1.8 }),
        states,
    }
}

fn straight_road_scene(config: &SyntheticConfig, idx: usize) -> Scene {
    let mut rng = DetRng::new(mix_seed_u64(config.seed, idx as u64));
    let scene_id = format!("{}_road_{idx:04}", config.dataset_id);
    let mut agents = Vec::with_capacity(config.agents_per_scene);
    for a in 0..config.agents_per_scene {
        let lane_y = 3.5 * a as f64;
        let speed = rng.uniform_in(3.0, 12.0);
        let x0 = rng.uniform_in(-10.0, 0.0);
        agents.push(track_from_motion(
            &format!("veh{a}"),
            AgentType::Vehicle,
            config,
            &mut rng,
            move |t| ([x0 + speed * t, lane_y], 0.0, speed),
        ));
    }
    let lanes = (0..config.agents_per_scene)
        .map(|a| Lane {
            lane_id: format!("lane{a}"),
            centerline: vec![[-20.0, 3.5 * a as f64], [150.0, 3.5 * a as f64]],
            successors: vec![],
        })
        .collect();
    Scene {
        scene_id,
        dataset_id: config.dataset_id.clone(),
        location_id: config.location_id.clone(),
        native_dt: config.native_dt,
        agents,
        map: Some(LaneGraph { lanes, raster: None }),
        predict_agent_ids: (0..config.agents_per_scene).map(|a| format!("veh{a}")).collect(),
        gap_conflict: None,
        anchor_t: None,
        labels: BTreeMap::new(),
    }
}

fn roundabout_gap_scene(config: &SyntheticConfig, idx: usize) -> Scene {
    let mut rng = DetRng::new(mix_seed_u64(config.seed ^ 0x5ca1ab1e, idx as u64));
    let scene_id = format!("{}_gap_{idx:04}", config.dataset_id);
    let accept = match config.gap_profile {
        GapProfile::Mixed => idx % 2 == 0,
        GapProfile::AllAccept => true,
        GapProfile::AllReject => false,
    };

    // conflict point at the origin; the entering vehicle travels +y, the
    // circulating vehicle +x. Crossing times are drawn so accept gaps are
    // clearly larger than reject gaps, and late enough that the decision
    // anchor leaves room for an observation window before it.
    let v_enter = rng.uniform_in(4.0, 7.0);
    let v_circ = rng.uniform_in(5.0, 8.0);
    let t_enter_cross = rng.uniform_in(3.0, 4.0);
    let t_circ_cross = if accept {
        t_enter_cross + rng.uniform_in(2.0, 3.0)
    } else {
        rng.uniform_in(3.0, 4.5)
    };

    let (entering, anchor_t): (Box<dyn Fn(f64) -> ([f64; 2], f64, f64)>, f64) = if accept {
        let y0 = -v_enter * t_enter_cross;
        (
            Box::new(move |t| ([0.0, y0 + v_enter * t], std::f64::consts::FRAC_PI_2, v_enter)),
            t_enter_cross - 5.0 / v_enter,
        )
    } else {
        // approach, yield 2 m short of the entry line, go once the
        // circulating vehicle has passed
        let yield_y = -2.0;
        let t_go = t_circ_cross + 0.5;
        let t_yield = (t_circ_cross - 0.5).max(0.8);
        let y0 = yield_y - v_enter * t_yield;
        (
            Box::new(move |t| {
                let (y, v) = if t < t_yield {
                    (y0 + v_enter * t, v_enter)
                } else if t < t_go {
                    (yield_y, 0.0)
                } else {
                    (yield_y + v_enter * (t - t_go), v_enter)
                };
                ([0.0, y], std::f64::consts::FRAC_PI_2, v)
            }),
            t_yield - 3.0 / v_enter,
        )
    };
    let circ_x0 = -v_circ * t_circ_cross;
    let circulating = move |t: f64| ([circ_x0 + v_circ * t, 0.0], 0.0, v_circ);

    let mut agents = vec![
        track_from_motion("enter", AgentType::Vehicle, config, &mut rng, entering),
        track_from_motion("circ", AgentType::Vehicle, config, &mut rng, circulating),
    ];
    for a in 2..config.agents_per_scene {
        let lane_y = 10.0 + 3.5 * (a - 2) as f64;
        let speed = rng.uniform_in(3.0, 9.0);
        let x0 = rng.uniform_in(-35.0, -25.0);
        agents.push(track_from_motion(
            &format!("veh{a}"),
            AgentType::Vehicle,
            config,
            &mut rng,
            move |t| ([x0 + speed * t, lane_y], 0.0, speed),
        ));
    }

    let mut labels = BTreeMap::new();
    labels.insert(
        GAP_TRUTH_LABEL.to_string(),
        if accept { GAP_ACCEPTED } else { GAP_REJECTED }.to_string(),
    );

    Scene {
        scene_id,
        dataset_id: config.dataset_id.clone(),
        location_id: config.location_id.clone(),
        native_dt: config.native_dt,
        agents,
        map: None,
        predict_agent_ids: vec!["enter".into(), "circ".into()],
        gap_conflict: Some(GapConflict {
            point: [0.0, 0.0],
            entry_dir: [0.0, 1.0],
            circulating_dir: [1.0, 0.0],
            entering_id: "enter".into(),
            circulating_id: "circ".into(),
        }),
        // the decision moment: the entering vehicle closing in on the line
        anchor_t: Some(anchor_t.max(2.0 * config.native_dt)),
        labels,
    }
}
