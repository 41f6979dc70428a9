//! Rigid transform into and out of the target-centric frame.

use super::{AgentState, AgentTrack, Frame, Pose, RoadGraphPolyline, RoadNode, Scene};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle<S: Scalar>(a: S) -> S {
    let pi = S::PI();
    let two_pi = pi + pi;
    let mut r = a - two_pi * ((a + pi) / two_pi).floor();
    // r is in [-π, π) up to rounding.
    if r <= -pi {
        r += two_pi;
    }
    if r > pi {
        r -= two_pi;
    }
    r
}

/// World → canonical for one anchor pose.
struct Rigid<S> {
    origin: [S; 2],
    cos: S,
    sin: S,
    heading: S,
}

impl<S: Scalar> Rigid<S> {
    fn new(anchor: &Pose<S>) -> Self {
        Self { origin: [anchor.x, anchor.y], cos: anchor.heading.cos(), sin: anchor.heading.sin(), heading: anchor.heading }
    }

    /// `R(-θ) v`
    #[inline]
    fn rotate_in(&self, v: [S; 2]) -> [S; 2] {
        [self.cos * v[0] + self.sin * v[1], -self.sin * v[0] + self.cos * v[1]]
    }

    #[inline]
    fn point_in(&self, p: [S; 2]) -> [S; 2] {
        self.rotate_in([p[0] - self.origin[0], p[1] - self.origin[1]])
    }

    /// `R(θ) p + c`
    #[inline]
    fn point_out(&self, p: [S; 2]) -> [S; 2] {
        [
            self.cos * p[0] - self.sin * p[1] + self.origin[0],
            self.sin * p[0] + self.cos * p[1] + self.origin[1],
        ]
    }

    fn state(&self, s: &AgentState<S>) -> AgentState<S> {
        if !s.valid {
            return AgentState::invalid();
        }
        let [x, y] = self.point_in([s.x, s.y]);
        let [vx, vy] = self.rotate_in([s.vx, s.vy]);
        AgentState { x, y, heading: normalize_angle(s.heading - self.heading), vx, vy, valid: true }
    }

    fn track(&self, t: &AgentTrack<S>) -> AgentTrack<S> {
        AgentTrack {
            agent_id: t.agent_id,
            agent_type: t.agent_type,
            history: t.history.iter().map(|s| self.state(s)).collect(),
            future: t.future.iter().map(|s| self.state(s)).collect(),
        }
    }

    fn polyline(&self, p: &RoadGraphPolyline<S>) -> RoadGraphPolyline<S> {
        RoadGraphPolyline {
            nodes: p
                .nodes
                .iter()
                .map(|n| {
                    let [x, y] = self.point_in([n.x, n.y]);
                    let [dir_x, dir_y] = self.rotate_in([n.dir_x, n.dir_y]);
                    RoadNode { x, y, dir_x, dir_y }
                })
                .collect(),
            lane_type: p.lane_type,
        }
    }
}

/// Re-expresses a world-frame scene relative to the target's current pose.
pub fn to_canonical_frame<S: Scalar>(scene: &Scene<S>) -> Result<Scene<S>> {
    if scene.frame != Frame::World {
        return Err(Error::InvalidScene("scene is already canonical".into()));
    }
    let current = scene
        .target
        .current()
        .filter(|s| s.valid)
        .ok_or_else(|| Error::InvalidScene("target current state is invalid".into()))?;
    let anchor = Pose::new(current.x, current.y, current.heading);
    let rigid = Rigid::new(&anchor);
    let mut target = rigid.track(&scene.target);
    // Exact origin pose, free of rounding in the rotation.
    if let Some(c) = target.history.last_mut() {
        c.x = S::zero();
        c.y = S::zero();
        c.heading = S::zero();
    }
    Ok(Scene {
        scene_id: scene.scene_id,
        target,
        neighbors: scene.neighbors.iter().map(|t| rigid.track(t)).collect(),
        roadgraph: scene.roadgraph.iter().map(|p| rigid.polyline(p)).collect(),
        frame: Frame::Canonical,
        anchor_pose: anchor,
    })
}

/// Maps canonical-frame points back to the world frame.
pub fn from_canonical<S: Scalar>(points: &[[S; 2]], anchor: &Pose<S>) -> Vec<[S; 2]> {
    let rigid = Rigid::new(anchor);
    points.iter().map(|&p| rigid.point_out(p)).collect()
}
