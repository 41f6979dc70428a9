//! Scene data model: agents, road graph, and the prediction instance that
//! ties them together.

mod cache;
mod canonical;
mod generator;

pub use cache::{cache_read, cache_write, decode_scenes, encode_scenes, CACHE_MAGIC, CACHE_VERSION};
pub use canonical::{from_canonical, normalize_angle, to_canonical_frame};
pub use generator::{generate_synthetic_scene, simulate_track, Behavior, GeneratorConfig};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default number of history steps (10 past + current) at 10 Hz.
pub const DEFAULT_HISTORY: usize = 11;
/// Default number of predicted future steps at 10 Hz.
pub const DEFAULT_FUTURE: usize = 80;
/// Maximum nodes per road polyline; longer lanes are split.
pub const MAX_POLYLINE_NODES: usize = 20;
/// Lane-type codes are `0..LANE_TYPE_COUNT`.
pub const LANE_TYPE_COUNT: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Pedestrian, AgentType::Cyclist];

    pub fn code(self) -> u8 {
        match self {
            AgentType::Vehicle => 0,
            AgentType::Pedestrian => 1,
            AgentType::Cyclist => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Cyclist => "cyclist",
        }
    }

    /// Capitalized label as used in report rows.
    pub fn label(self) -> &'static str {
        match self {
            AgentType::Vehicle => "Vehicle",
            AgentType::Pedestrian => "Pedestrian",
            AgentType::Cyclist => "Cyclist",
        }
    }
}

impl std::str::FromStr for AgentType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown agent type `{s}` (expected vehicle, pedestrian or cyclist)"))
    }
}

/// Kinematic state at one timestep. Invalid states are all-zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState<S> {
    pub x: S,
    pub y: S,
    pub heading: S,
    pub vx: S,
    pub vy: S,
    pub valid: bool,
}

impl<S: Scalar> AgentState<S> {
    /// A valid state; `heading` is normalized into `(-π, π]`.
    pub fn new(x: S, y: S, heading: S, vx: S, vy: S) -> Self {
        Self { x, y, heading: normalize_angle(heading), vx, vy, valid: true }
    }

    pub fn invalid() -> Self {
        Self { x: S::zero(), y: S::zero(), heading: S::zero(), vx: S::zero(), vy: S::zero(), valid: false }
    }

    pub fn speed(&self) -> S {
        self.vx.hypot(self.vy)
    }

    pub fn position(&self) -> [S; 2] {
        [self.x, self.y]
    }

    pub fn cast<T: Scalar>(&self) -> AgentState<T> {
        AgentState {
            x: T::lit(self.x.as_f64()),
            y: T::lit(self.y.as_f64()),
            heading: T::lit(self.heading.as_f64()),
            vx: T::lit(self.vx.as_f64()),
            vy: T::lit(self.vy.as_f64()),
            valid: self.valid,
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.valid {
            let fields = [self.x, self.y, self.heading, self.vx, self.vy];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScene(format!("{what}: non-finite state")));
            }
            let pi = S::PI();
            if !(self.heading > -pi && self.heading <= pi) {
                return Err(Error::InvalidScene(format!("{what}: heading {} outside (-π, π]", self.heading)));
            }
        } else if *self != Self::invalid() {
            return Err(Error::InvalidScene(format!("{what}: invalid state carries non-zero fields")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack<S> {
    pub agent_id: u64,
    pub agent_type: AgentType,
    /// Past and current states, oldest first; the last entry is the current step.
    pub history: Vec<AgentState<S>>,
    /// Ground-truth future, empty at inference.
    pub future: Vec<AgentState<S>>,
}

impl<S: Scalar> AgentTrack<S> {
    pub fn current(&self) -> Option<&AgentState<S>> {
        self.history.last()
    }

    pub fn has_valid_history(&self) -> bool {
        self.history.iter().any(|s| s.valid)
    }

    pub fn cast<T: Scalar>(&self) -> AgentTrack<T> {
        AgentTrack {
            agent_id: self.agent_id,
            agent_type: self.agent_type,
            history: self.history.iter().map(AgentState::cast).collect(),
            future: self.future.iter().map(AgentState::cast).collect(),
        }
    }

    pub fn validate(&self, history_len: usize, future_len: usize) -> Result<()> {
        if self.history.len() != history_len {
            return Err(Error::InvalidScene(format!(
                "agent {}: history length {} != {history_len}",
                self.agent_id,
                self.history.len()
            )));
        }
        if !(self.future.is_empty() || self.future.len() == future_len) {
            return Err(Error::InvalidScene(format!(
                "agent {}: future length {} is neither 0 nor {future_len}",
                self.agent_id,
                self.future.len()
            )));
        }
        for (t, s) in self.history.iter().chain(&self.future).enumerate() {
            s.check(&format!("agent {} step {t}", self.agent_id))?;
        }
        Ok(())
    }
}

/// One road node: position plus unit tangent direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoadNode<S> {
    pub x: S,
    pub y: S,
    pub dir_x: S,
    pub dir_y: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraphPolyline<S> {
    pub nodes: Vec<RoadNode<S>>,
    pub lane_type: u8,
}

impl<S: Scalar> RoadGraphPolyline<S> {
    pub fn cast<T: Scalar>(&self) -> RoadGraphPolyline<T> {
        RoadGraphPolyline {
            nodes: self
                .nodes
                .iter()
                .map(|n| RoadNode {
                    x: T::lit(n.x.as_f64()),
                    y: T::lit(n.y.as_f64()),
                    dir_x: T::lit(n.dir_x.as_f64()),
                    dir_y: T::lit(n.dir_y.as_f64()),
                })
                .collect(),
            lane_type: self.lane_type,
        }
    }

    /// Unit-norm tolerance is scaled for `f32` storage.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.nodes.len() > MAX_POLYLINE_NODES {
            return Err(Error::InvalidScene(format!(
                "polyline has {} nodes, expected 1..={MAX_POLYLINE_NODES}",
                self.nodes.len()
            )));
        }
        if self.lane_type >= LANE_TYPE_COUNT {
            return Err(Error::InvalidScene(format!("lane type {} out of range", self.lane_type)));
        }
        let tol = if S::BYTES == 4 { 1e-6 + 4.0 * f32::EPSILON as f64 } else { 1e-6 };
        for n in &self.nodes {
            let norm = n.dir_x.hypot(n.dir_y).as_f64();
            if !n.x.is_finite() || !n.y.is_finite() || (norm - 1.0).abs() > tol {
                return Err(Error::InvalidScene(format!("road node direction norm {norm} is not unit")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    World,
    Canonical,
}

/// Planar pose `(x, y, heading)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose<S> {
    pub x: S,
    pub y: S,
    pub heading: S,
}

impl<S: Scalar> Pose<S> {
    pub fn new(x: S, y: S, heading: S) -> Self {
        Self { x, y, heading }
    }

    pub fn identity() -> Self {
        Self { x: S::zero(), y: S::zero(), heading: S::zero() }
    }

    pub fn cast<T: Scalar>(&self) -> Pose<T> {
        Pose { x: T::lit(self.x.as_f64()), y: T::lit(self.y.as_f64()), heading: T::lit(self.heading.as_f64()) }
    }
}

/// One prediction instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<S> {
    pub scene_id: u64,
    pub target: AgentTrack<S>,
    pub neighbors: Vec<AgentTrack<S>>,
    pub roadgraph: Vec<RoadGraphPolyline<S>>,
    pub frame: Frame,
    /// World-frame pose of the target at the current step.
    pub anchor_pose: Pose<S>,
}

impl<S: Scalar> Scene<S> {
    pub fn history_len(&self) -> usize {
        self.target.history.len()
    }

    pub fn future_len(&self) -> usize {
        self.target.future.len()
    }

    pub fn cast<T: Scalar>(&self) -> Scene<T> {
        Scene {
            scene_id: self.scene_id,
            target: self.target.cast(),
            neighbors: self.neighbors.iter().map(AgentTrack::cast).collect(),
            roadgraph: self.roadgraph.iter().map(RoadGraphPolyline::cast).collect(),
            frame: self.frame,
            anchor_pose: self.anchor_pose.cast(),
        }
    }

    /// Ground-truth future positions and validity flags of the target.
    pub fn ground_truth(&self) -> (Vec<[S; 2]>, Vec<bool>) {
        let positions = self.target.future.iter().map(AgentState::position).collect();
        let valid = self.target.future.iter().map(|s| s.valid).collect();
        (positions, valid)
    }

    /// Checks every structural invariant of the scene.
    pub fn validate(&self) -> Result<()> {
        let h = self.history_len();
        if h == 0 {
            return Err(Error::InvalidScene("empty target history".into()));
        }
        let t = self.future_len();
        self.target.validate(h, t)?;
        for n in &self.neighbors {
            n.validate(h, n.future.len())?;
            if !n.future.is_empty() && t != 0 && n.future.len() != t {
                return Err(Error::InvalidScene("neighbor future length differs from target".into()));
            }
        }
        for p in &self.roadgraph {
            p.validate()?;
        }
        let current = self.target.current().expect("non-empty history");
        if !current.valid {
            return Err(Error::InvalidScene("target current state is invalid".into()));
        }
        if self.frame == Frame::Canonical {
            let tol = 1e-9;
            if current.x.abs().as_f64() > tol || current.y.abs().as_f64() > tol || current.heading.abs().as_f64() > tol
            {
                return Err(Error::InvalidScene("canonical target is not at the origin pose".into()));
            }
        }
        Ok(())
    }
}
