//! Metric registry: ids, optimization direction, and data requirements the
//! runner uses to skip infeasible combinations.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    MinAde,
    MinAdeJoint,
    MinFde,
    MinFdeJoint,
    MissRate,
    Auc,
    Ece,
    Nll,
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::MinAde => "min_ade",
            MetricId::MinAdeJoint => "min_ade_joint",
            MetricId::MinFde => "min_fde",
            MetricId::MinFdeJoint => "min_fde_joint",
            MetricId::MissRate => "miss_rate",
            MetricId::Auc => "auc",
            MetricId::Ece => "ece",
            MetricId::Nll => "nll",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "min_ade" => MetricId::MinAde,
            "min_ade_joint" => MetricId::MinAdeJoint,
            "min_fde" => MetricId::MinFde,
            "min_fde_joint" => MetricId::MinFdeJoint,
            "miss_rate" => MetricId::MissRate,
            "auc" => MetricId::Auc,
            "ece" => MetricId::Ece,
            "nll" => MetricId::Nll,
            _ => return None,
        })
    }
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricDef {
    pub id: MetricId,
    pub direction: Direction,
    /// Needs gap-acceptance labels in the test set.
    pub needs_behavior: bool,
    /// Needs a model density or enough samples for the estimation fallback.
    pub needs_likelihood: bool,
    /// Evaluates the joint distribution over agents.
    pub needs_joint: bool,
    /// Needs trajectory output (behavior-only models cannot feed it).
    pub needs_trajectories: bool,
}

pub const REGISTRY: [MetricDef; 8] = [
    MetricDef {
        id: MetricId::MinAde,
        direction: Direction::LowerIsBetter,
        needs_behavior: false,
        needs_likelihood: false,
        needs_joint: false,
        needs_trajectories: true,
    },
    MetricDef {
        id: MetricId::MinAdeJoint,
        direction: Direction::LowerIsBetter,
        needs_behavior: false,
        needs_likelihood: false,
        needs_joint: true,
        needs_trajectories: true,
    },
    MetricDef {
        id: MetricId::MinFde,
        direction: Direction::LowerIsBetter,
        needs_behavior: false,
        needs_likelihood: false,
        needs_joint: false,
        needs_trajectories: true,
    },
    MetricDef {
        id: MetricId::MinFdeJoint,
        direction: Direction::LowerIsBetter,
        needs_behavior: false,
        needs_likelihood: false,
        needs_joint: true,
        needs_trajectories: true,
    },
    MetricDef {
        id: MetricId::MissRate,
        direction: Direction::LowerIsBetter,
        needs_behavior: false,
        needs_likelihood: false,
        needs_joint: false,
        needs_trajectories: true,
    },
    MetricDef {
        id: MetricId::Auc,
        direction: Direction::HigherIsBetter,
        needs_behavior: true,
        needs_likelihood: false,
        needs_joint: false,
        needs_trajectories: false,
    },
    MetricDef {
        id: MetricId::Ece,
        direction: Direction::LowerIsBetter,
        needs_behavior: true,
        needs_likelihood: false,
        needs_joint: false,
        needs_trajectories: false,
    },
    MetricDef {
        id: MetricId::Nll,
        direction: Direction::LowerIsBetter,
        needs_behavior: false,
        needs_likelihood: true,
        needs_joint: false,
        needs_trajectories: true,
    },
];

pub fn registry() -> &'static [MetricDef] {
    &REGISTRY
}

pub fn metric_by_id(id: MetricId) -> &'static MetricDef {
    registry().iter().find(|d| d.id == id).expect("registry covers every id")
}
