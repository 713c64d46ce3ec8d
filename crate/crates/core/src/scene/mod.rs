//! Unified internal scene format shared by every pipeline stage.
//!
//! A [`SceneSet`] holds scenes converted from a raw dataset; each [`Scene`]
//! carries agent tracks at the recording's native timestep, an optional lane
//! graph, and the ids of agents eligible as prediction targets. All
//! coordinates are meters, timestamps seconds, headings radians; adapters
//! convert on ingest.

mod frame;
mod io;
mod raster;
mod resample;
mod validate;

pub use frame::{from_agent_frame, to_agent_frame, FramePose};
pub use io::{read_scene_set, write_scene_set};
pub use raster::{rasterize_map, MapRaster, LANE_HALF_WIDTH};
pub use resample::resample_track;
pub use validate::{validate_scene, validate_scene_set, ValidationReport, Violation, ViolationCode};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Absolute tolerance for timestamp comparisons.
pub const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SceneError {
    /// No resampled timestamp fits inside the track's recorded span.
    #[error("no output timestamp fits in the track span")]
    EmptyRange,
    #[error("scene io: {0}")]
    Io(String),
    #[error("scene format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Bicycle,
    Motorcycle,
}

impl AgentType {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Bicycle => "bicycle",
            AgentType::Motorcycle => "motorcycle",
        }
    }
}

/// Physical footprint of an agent, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSize {
    pub length: f64,
    pub width: f64,
}

/// One recorded state of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

impl AgentState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Time series of one agent within a scene, at the recording's native
/// uniform timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub agent_type: AgentType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<AgentSize>,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn start_t(&self) -> f64 {
        self.states.first().map(|s| s.t).unwrap_or(f64::NAN)
    }

    pub fn end_t(&self) -> f64 {
        self.states.last().map(|s| s.t).unwrap_or(f64::NAN)
    }

    /// Whether `t` lies inside the recorded span (no extrapolation).
    pub fn covers(&self, t: f64) -> bool {
        !self.states.is_empty() && t >= self.start_t() - TIME_TOL && t <= self.end_t() + TIME_TOL
    }

    /// Linearly interpolated state at `t`, or `None` outside the span.
    /// Exact native states are returned verbatim when `t` matches one
    /// within [`TIME_TOL`].
    pub fn state_at(&self, t: f64) -> Option<AgentState> {
        if !self.covers(t) {
            return None;
        }
        // index of the first state with timestamp >= t - tol
        let idx = self
            .states
            .partition_point(|s| s.t < t - TIME_TOL);
        if idx < self.states.len() && (self.states[idx].t - t).abs() <= TIME_TOL {
            return Some(self.states[idx]);
        }
        if idx == 0 || idx >= self.states.len() {
            // covers() passed, so this is a boundary hit within tolerance
            let s = if idx == 0 { self.states[0] } else { *self.states.last().unwrap() };
            return Some(s);
        }
        let (a, b) = (&self.states[idx - 1], &self.states[idx]);
        let w = (t - a.t) / (b.t - a.t);
        let heading = match (a.heading, b.heading) {
            (Some(ha), Some(hb)) => Some(lerp_angle(ha, hb, w)),
            _ => None,
        };
        let speed = match (a.speed, b.speed) {
            (Some(sa), Some(sb)) => Some(sa + (sb - sa) * w),
            _ => None,
        };
        Some(AgentState {
            t,
            x: a.x + (b.x - a.x) * w,
            y: a.y + (b.y - a.y) * w,
            heading,
            speed,
        })
    }

    /// Interpolated position at `t`, or `None` outside the span.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        self.state_at(t).map(|s| s.position())
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    r
}

/// Circular-linear interpolation between two angles.
pub fn lerp_angle(a: f64, b: f64, w: f64) -> f64 {
    wrap_angle(a + wrap_angle(b - a) * w)
}

/// A lane centerline with its topological successors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub lane_id: String,
    pub centerline: Vec<[f64; 2]>,
    #[serde(default)]
    pub successors: Vec<String>,
}

/// Lane-graph map information; an optional raster holds the image form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub lanes: Vec<Lane>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<MapRaster>,
}

/// Conflict geometry for gap-acceptance scenes, tagged by the adapter:
/// the entry point of the circulation lane plus the travel directions of
/// both agents at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapConflict {
    pub point: [f64; 2],
    /// Unit direction of the entering agent's travel across the entry line.
    pub entry_dir: [f64; 2],
    /// Unit direction of the circulating agent's travel at the conflict point.
    pub circulating_dir: [f64; 2],
    pub entering_id: String,
    pub circulating_id: String,
}

/// One recorded scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub dataset_id: String,
    pub location_id: String,
    pub native_dt: f64,
    pub agents: Vec<AgentTrack>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<LaneGraph>,
    pub predict_agent_ids: Vec<String>,
    /// Present on scenes that support gap-acceptance classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_conflict: Option<GapConflict>,
    /// Adapter-supplied anchor time for behavior-anchored sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_t: Option<f64>,
    /// Free-form labels, e.g. a predefined train/test assignment.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl Scene {
    pub fn agent(&self, id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    /// Earliest track start among the given agents.
    pub fn latest_start(&self, ids: &[String]) -> Option<f64> {
        ids.iter()
            .map(|id| self.agent(id).map(|a| a.start_t()))
            .collect::<Option<Vec<_>>>()?
            .into_iter()
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
    }

    /// Latest track end among the given agents.
    pub fn earliest_end(&self, ids: &[String]) -> Option<f64> {
        ids.iter()
            .map(|id| self.agent(id).map(|a| a.end_t()))
            .collect::<Option<Vec<_>>>()?
            .into_iter()
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
    }
}

/// The framework-compliant form of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub dataset_id: String,
    pub locations: Vec<String>,
    pub native_dt: f64,
    pub scenes: Vec<Scene>,
}

/// The data parameter setting: input/output step counts and the timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataParams {
    pub n_input: usize,
    pub n_output: usize,
    pub dt: f64,
    pub t0_policy: T0Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T0Policy {
    /// The single earliest prediction time with full coverage.
    FirstAvailable,
    /// The adapter-supplied anchor time minus a configured lead.
    BehaviorAnchored { lead: f64 },
    /// A grid of prediction times spaced `gap` seconds apart.
    RegularSpacing { gap: f64 },
}

impl DataParams {
    pub fn new(n_input: usize, n_output: usize, dt: f64, t0_policy: T0Policy) -> Self {
        Self { n_input, n_output, dt, t0_policy }
    }

    /// Observation horizon from first observation to prediction time,
    /// `dt * (n_input - 1)`.
    pub fn input_horizon(&self) -> f64 {
        self.dt * (self.n_input - 1) as f64
    }

    /// Prediction horizon covered by the future, `dt * n_output`.
    pub fn output_horizon(&self) -> f64 {
        self.dt * self.n_output as f64
    }

    /// Builds params from horizons: `n_input = round(t_in/dt) + 1`,
    /// `n_output = round(t_out/dt)`.
    pub fn from_horizons(t_in: f64, t_out: f64, dt: f64, t0_policy: T0Policy) -> Self {
        let n_input = (t_in / dt).round() as usize + 1;
        let n_output = (t_out / dt).round() as usize;
        Self { n_input, n_output, dt, t0_policy }
    }

    /// The Argoverse2 benchmark convention: 50 input and 60 output steps
    /// at 0.1 s.
    pub fn preset_argoverse2() -> Self {
        Self::new(50, 60, 0.1, T0Policy::FirstAvailable)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_input < 2 {
            return Err(format!("n_input must be >= 2, got {}", self.n_input));
        }
        if self.n_output < 1 {
            return Err(format!("n_output must be >= 1, got {}", self.n_output));
        }
        if !(self.dt > 0.0) {
            return Err(format!("dt must be > 0, got {}", self.dt));
        }
        match self.t0_policy {
            T0Policy::RegularSpacing { gap } if !(gap > 0.0) => {
                Err(format!("regular_spacing gap must be > 0, got {gap}"))
            }
            T0Policy::BehaviorAnchored { lead } if lead < 0.0 => {
                Err(format!("behavior_anchored lead must be >= 0, got {lead}"))
            }
            _ => Ok(()),
        }
    }
}
