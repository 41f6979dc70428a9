//! Deterministic synthetic scenes with kinematically consistent agents.
//!
//! Each agent follows one of three motion models over the whole
//! history + future window: constant velocity, constant turn rate, or
//! constant-velocity history followed by braking to a stop at the current
//! step. The target's own path is laid down as a lane so the road graph
//! carries signal about the future.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    AgentState, AgentTrack, AgentType, Frame, Pose, RoadGraphPolyline, RoadNode, Scene, MAX_POLYLINE_NODES,
};
use crate::error::{Error, Result};
use crate::kv::kv_config;
use crate::scalar::Scalar;

kv_config! {
    /// Synthetic scene generator settings.
    #[derive(Debug, Clone, PartialEq)]
    pub struct GeneratorConfig {
        /// History steps per agent, including the current step.
        history: usize = super::DEFAULT_HISTORY,
        /// Future steps for the target.
        future: usize = super::DEFAULT_FUTURE,
        /// Seconds per step.
        dt: f64 = 0.1,
        /// Neighbor agents per scene.
        neighbors: usize = 8,
        /// Road polylines per scene, including the target's lane.
        polylines: usize = 12,
        /// Spacing between road nodes in meters.
        node_spacing: f64 = 3.0,
        /// Neighbors and random lanes start within this radius of the target (m).
        neighbor_radius: f64 = 30.0,
        /// Target world position is drawn from [-extent, extent]^2 (m).
        world_extent: f64 = 200.0,
        /// Relative frequency of vehicle targets and neighbors.
        vehicle_weight: f64 = 0.6,
        /// Relative frequency of pedestrians.
        pedestrian_weight: f64 = 0.2,
        /// Relative frequency of cyclists.
        cyclist_weight: f64 = 0.2,
        /// Minimum vehicle speed (m/s).
        vehicle_speed_min: f64 = 2.0,
        /// Maximum vehicle speed (m/s).
        vehicle_speed_max: f64 = 15.0,
        /// Minimum pedestrian speed (m/s).
        pedestrian_speed_min: f64 = 0.5,
        /// Maximum pedestrian speed (m/s).
        pedestrian_speed_max: f64 = 2.0,
        /// Minimum cyclist speed (m/s).
        cyclist_speed_min: f64 = 2.0,
        /// Maximum cyclist speed (m/s).
        cyclist_speed_max: f64 = 7.0,
        /// Relative frequency of the constant-velocity behavior.
        constant_velocity_weight: f64 = 0.5,
        /// Relative frequency of the constant-turn-rate behavior.
        constant_turn_weight: f64 = 0.3,
        /// Relative frequency of the brake-to-stop behavior.
        stop_weight: f64 = 0.2,
        /// Largest absolute turn rate (rad/s).
        max_turn_rate: f64 = 0.25,
        /// Smallest braking deceleration (m/s^2).
        stop_decel_min: f64 = 1.0,
        /// Largest braking deceleration (m/s^2); bounds the per-step speed change.
        stop_decel_max: f64 = 4.0,
        /// Probability that a neighbor is first observed part-way through the history.
        neighbor_late_start: f64 = 0.2,
        /// Per-step probability that a neighbor history step is unobserved.
        neighbor_dropout: f64 = 0.05,
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("history", self.history),
            ("future", self.future),
            ("neighbors", self.neighbors),
            ("polylines", self.polylines),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("generator `{name}` must be positive")));
            }
        }
        if !(self.dt > 0.0) || !(self.node_spacing > 0.0) || !(self.neighbor_radius >= 0.0) {
            return Err(Error::arg("generator dt, node_spacing must be positive and neighbor_radius non-negative"));
        }
        let type_w = [self.vehicle_weight, self.pedestrian_weight, self.cyclist_weight];
        let behavior_w = [self.constant_velocity_weight, self.constant_turn_weight, self.stop_weight];
        for w in [type_w, behavior_w] {
            if w.iter().any(|&v| !(v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::arg("generator weights must be non-negative with a positive sum"));
            }
        }
        for t in AgentType::ALL {
            let (lo, hi) = self.speed_range(t);
            if !(lo >= 0.0 && lo <= hi) {
                return Err(Error::arg(format!("{} speed range [{lo}, {hi}] is invalid", t.name())));
            }
        }
        if !(self.stop_decel_min > 0.0 && self.stop_decel_min <= self.stop_decel_max) {
            return Err(Error::arg("stop deceleration range is invalid"));
        }
        for p in [self.neighbor_late_start, self.neighbor_dropout] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::arg("generator probabilities must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn speed_range(&self, t: AgentType) -> (f64, f64) {
        match t {
            AgentType::Vehicle => (self.vehicle_speed_min, self.vehicle_speed_max),
            AgentType::Pedestrian => (self.pedestrian_speed_min, self.pedestrian_speed_max),
            AgentType::Cyclist => (self.cyclist_speed_min, self.cyclist_speed_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    ConstantVelocity,
    /// Turn rate in rad/s.
    ConstantTurnRate(f64),
    /// Constant velocity until the current step, then braking at the given
    /// deceleration (m/s²) until standstill.
    Stop(f64),
}

/// Kinematic state at time `tau` seconds relative to the current step.
fn kinematics(pose: &Pose<f64>, speed: f64, behavior: Behavior, tau: f64) -> (f64, f64, f64, f64) {
    let (x0, y0, h0) = (pose.x, pose.y, pose.heading);
    match behavior {
        Behavior::ConstantTurnRate(w) if w.abs() > 1e-9 => {
            let h = h0 + w * tau;
            let x = x0 + speed / w * (h.sin() - h0.sin());
            let y = y0 + speed / w * (h0.cos() - h.cos());
            (x, y, h, speed)
        }
        Behavior::Stop(a) if tau > 0.0 => {
            let t_stop = speed / a;
            let (dist, v) = if tau < t_stop {
                (speed * tau - 0.5 * a * tau * tau, speed - a * tau)
            } else {
                (speed * speed / (2.0 * a), 0.0)
            };
            (x0 + dist * h0.cos(), y0 + dist * h0.sin(), h0, v)
        }
        _ => (x0 + speed * tau * h0.cos(), y0 + speed * tau * h0.sin(), h0, speed),
    }
}

/// Simulates `history` states ending at `pose` (the current step) and
/// `future` subsequent states, `dt` seconds apart.
pub fn simulate_track<S: Scalar>(
    pose: Pose<f64>,
    speed: f64,
    behavior: Behavior,
    history: usize,
    future: usize,
    dt: f64,
) -> (Vec<AgentState<S>>, Vec<AgentState<S>>) {
    let state = |k: isize| {
        let tau = k as f64 * dt;
        let (x, y, h, v) = kinematics(&pose, speed, behavior, tau);
        AgentState::new(x, y, h, v * h.cos(), v * h.sin()).cast::<S>()
    };
    let past = (0..history).map(|i| state(i as isize - (history as isize - 1))).collect();
    let fut = (1..=future).map(|k| state(k as isize)).collect();
    (past, fut)
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding fallback: last index with positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

struct Draw {
    agent_type: AgentType,
    speed: f64,
    behavior: Behavior,
}

fn draw_agent<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Draw {
    let agent_type = AgentType::ALL[pick_weighted(rng, &[cfg.vehicle_weight, cfg.pedestrian_weight, cfg.cyclist_weight])];
    let (lo, hi) = cfg.speed_range(agent_type);
    let speed = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let behavior = match pick_weighted(rng, &[cfg.constant_velocity_weight, cfg.constant_turn_weight, cfg.stop_weight]) {
        0 => Behavior::ConstantVelocity,
        1 => Behavior::ConstantTurnRate(rng.gen_range(-cfg.max_turn_rate..=cfg.max_turn_rate)),
        _ => Behavior::Stop(rng.gen_range(cfg.stop_decel_min..=cfg.stop_decel_max)),
    };
    Draw { agent_type, speed, behavior }
}

fn random_heading<R: Rng>(rng: &mut R) -> f64 {
    super::normalize_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
}

fn lane_code(t: AgentType) -> u8 {
    match t {
        AgentType::Vehicle => 1,
        AgentType::Cyclist => 2,
        AgentType::Pedestrian => 5,
    }
}

/// Lays nodes along the target's path every `spacing` meters of arc length
/// and splits them into polylines of at most [`MAX_POLYLINE_NODES`].
fn path_lane(
    pose: &Pose<f64>,
    draw: &Draw,
    cfg: &GeneratorConfig,
) -> Vec<RoadGraphPolyline<f64>> {
    let t_start = -((cfg.history - 1) as f64) * cfg.dt;
    let t_end = cfg.future as f64 * cfg.dt;
    let samples = ((t_end - t_start) / cfg.dt * 10.0).ceil() as usize + 1;
    let mut nodes = Vec::new();
    let mut travelled = 0.0;
    let mut next_mark = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..samples {
        let tau = t_start + (t_end - t_start) * i as f64 / (samples - 1) as f64;
        let (x, y, h, _) = kinematics(pose, draw.speed, draw.behavior, tau);
        if let Some((px, py)) = prev {
            travelled += (x - px).hypot(y - py);
        }
        prev = Some((x, y));
        if travelled >= next_mark {
            nodes.push(RoadNode { x, y, dir_x: h.cos(), dir_y: h.sin() });
            next_mark += cfg.node_spacing;
        }
    }
    nodes
        .chunks(MAX_POLYLINE_NODES)
        .map(|c| RoadGraphPolyline { nodes: c.to_vec(), lane_type: lane_code(draw.agent_type) })
        .collect()
}

/// A circular-arc lane with random start, heading, curvature and length.
fn random_lane<R: Rng>(rng: &mut R, center: (f64, f64), cfg: &GeneratorConfig) -> RoadGraphPolyline<f64> {
    let r = cfg.neighbor_radius * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let (mut x, mut y) = (center.0 + r * phi.cos(), center.1 + r * phi.sin());
    let mut h = random_heading(rng);
    let curvature = rng.gen_range(-0.03..=0.03);
    let count = rng.gen_range(2..=MAX_POLYLINE_NODES);
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        nodes.push(RoadNode { x, y, dir_x: h.cos(), dir_y: h.sin() });
        x += cfg.node_spacing * h.cos();
        y += cfg.node_spacing * h.sin();
        h += curvature * cfg.node_spacing;
    }
    RoadGraphPolyline { nodes, lane_type: rng.gen_range(0..=5) }
}

/// Generates one world-frame scene with ground-truth future for the target.
/// The same `seed` and config always produce the same scene.
pub fn generate_synthetic_scene<S: Scalar>(seed: u64, cfg: &GeneratorConfig) -> Result<Scene<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let anchor = Pose::new(
        rng.gen_range(-cfg.world_extent..=cfg.world_extent),
        rng.gen_range(-cfg.world_extent..=cfg.world_extent),
        random_heading(&mut rng),
    );
    let target_draw = draw_agent(&mut rng, cfg);
    let (history, future) =
        simulate_track(anchor, target_draw.speed, target_draw.behavior, cfg.history, cfg.future, cfg.dt);
    let target = AgentTrack { agent_id: 0, agent_type: target_draw.agent_type, history, future };

    let mut neighbors = Vec::with_capacity(cfg.neighbors);
    for i in 0..cfg.neighbors {
        let draw = draw_agent(&mut rng, cfg);
        let r = cfg.neighbor_radius * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let pose = Pose::new(anchor.x + r * phi.cos(), anchor.y + r * phi.sin(), random_heading(&mut rng));
        let (mut history, _) = simulate_track::<S>(pose, draw.speed, draw.behavior, cfg.history, 0, cfg.dt);
        if cfg.history > 1 && rng.gen_bool(cfg.neighbor_late_start) {
            let first = rng.gen_range(1..cfg.history);
            history[..first].fill(AgentState::invalid());
        }
        for s in history.iter_mut() {
            if rng.gen_bool(cfg.neighbor_dropout) {
                *s = AgentState::invalid();
            }
        }
        neighbors.push(AgentTrack { agent_id: i as u64 + 1, agent_type: draw.agent_type, history, future: vec![] });
    }

    let mut roadgraph = path_lane(&anchor, &target_draw, cfg);
    roadgraph.truncate(cfg.polylines);
    while roadgraph.len() < cfg.polylines {
        roadgraph.push(random_lane(&mut rng, (anchor.x, anchor.y), cfg));
    }

    Ok(Scene {
        scene_id: seed,
        target,
        neighbors,
        roadgraph: roadgraph.iter().map(RoadGraphPolyline::cast).collect(),
        frame: Frame::World,
        anchor_pose: anchor.cast(),
    })
}
