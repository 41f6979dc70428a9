//! Context-gating scene encoder.
//!
//! A context-gating (CG) block gates every set element by a shared context
//! vector and max-pools the gated elements into a new context. A multi-context
//! gating (MCG) stack chains CG blocks with running-average skip connections
//! on both the element and the context stream.
//!
//! The scene encoder embeds the target history, then uses it as the initial
//! context for one MCG stack over neighbor embeddings and another over road
//! polyline embeddings. The three results are fused into one embedding.
//! There is no separate branch for the autonomous vehicle; when present it is
//! an ordinary neighbor.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{uniform_matrix, Mlp, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::scene::{AgentTrack, AgentType, RoadGraphPolyline, Scene, LANE_TYPE_COUNT, MAX_POLYLINE_NODES};
use crate::tensor::Matrix;

/// Positions and velocities are divided by this before entering the network.
const METRIC_SCALE: f64 = 10.0;
const STATE_FEATURES: usize = 7;
const NODE_FEATURES: usize = 5;

/// Width of the per-agent history feature vector for `history` steps.
pub fn history_feature_len(history: usize) -> usize {
    history * STATE_FEATURES + AgentType::ALL.len()
}

pub fn polyline_feature_len() -> usize {
    MAX_POLYLINE_NODES * NODE_FEATURES + LANE_TYPE_COUNT as usize
}

/// Per-step `(x, y, cos h, sin h, vx, vy, valid)` followed by a one-hot agent
/// type. Invalid steps are all-zero, so their payload cannot leak into the
/// network.
pub fn history_features<S: Scalar>(track: &AgentTrack<S>, history: usize) -> Result<Vec<S>> {
    if track.history.len() != history {
        return Err(Error::DimensionMismatch { context: "agent history", expected: history, found: track.history.len() });
    }
    let scale = S::lit(1.0 / METRIC_SCALE);
    let mut out = Vec::with_capacity(history_feature_len(history));
    for s in &track.history {
        if s.valid {
            out.extend_from_slice(&[
                s.x * scale,
                s.y * scale,
                s.heading.cos(),
                s.heading.sin(),
                s.vx * scale,
                s.vy * scale,
                S::one(),
            ]);
        } else {
            out.extend_from_slice(&[S::zero(); STATE_FEATURES]);
        }
    }
    for t in AgentType::ALL {
        out.push(if t == track.agent_type { S::one() } else { S::zero() });
    }
    Ok(out)
}

/// Node features `(x, y, dir_x, dir_y, present)` in node order, zero-padded to
/// the maximum node count, followed by a one-hot lane type.
pub fn polyline_features<S: Scalar>(poly: &RoadGraphPolyline<S>) -> Result<Vec<S>> {
    if poly.nodes.len() > MAX_POLYLINE_NODES {
        return Err(Error::DimensionMismatch {
            context: "polyline nodes",
            expected: MAX_POLYLINE_NODES,
            found: poly.nodes.len(),
        });
    }
    if poly.lane_type >= LANE_TYPE_COUNT {
        return Err(Error::arg(format!("lane type {} out of range", poly.lane_type)));
    }
    let scale = S::lit(1.0 / METRIC_SCALE);
    let mut out = vec![S::zero(); polyline_feature_len()];
    for (i, n) in poly.nodes.iter().enumerate() {
        out[i * NODE_FEATURES..(i + 1) * NODE_FEATURES]
            .copy_from_slice(&[n.x * scale, n.y * scale, n.dir_x, n.dir_y, S::one()]);
    }
    out[MAX_POLYLINE_NODES * NODE_FEATURES + poly.lane_type as usize] = S::one();
    Ok(out)
}

/// Fixed-width real vector produced by an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S>(pub Vec<S>);

impl<S: Scalar> Embedding<S> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (*a - *b).abs().as_f64()).fold(0.0, f64::max)
    }
}

/// Set of equally sized element vectors with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSet<S> {
    pub elements: Matrix<S>,
    pub mask: Vec<bool>,
}

/// One context-gating block.
#[derive(Debug, Clone, Copy)]
pub struct CgBlock {
    element_mlp: Mlp,
    context_mlp: Mlp,
    /// Context emitted when no element is valid.
    default_context: ParamId,
    dim: usize,
}

impl CgBlock {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, name: &str, dim: usize, hidden: usize) -> Self {
        let element_mlp = Mlp::new(store, rng, &format!("{name}.elements"), ParamGroup::Shared, dim, hidden, dim);
        let context_mlp = Mlp::new(store, rng, &format!("{name}.context"), ParamGroup::Shared, dim, hidden, dim);
        let default_context =
            store.add(format!("{name}.default_context"), ParamGroup::Shared, uniform_matrix(rng, 1, dim, 0.1));
        Self { element_mlp, context_mlp, default_context, dim }
    }

    pub fn default_context(&self) -> ParamId {
        self.default_context
    }

    /// `s'_i = mlp_s(s_i) ⊙ mlp_c(c)` for valid elements, pass-through for
    /// masked ones; the new context is the max-pool over valid `s'_i`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, elements: Var, mask: &[bool], context: Var) -> Result<(Var, Var)> {
        let (rows, cols) = tape.value(elements).shape();
        if cols != self.dim {
            return Err(Error::DimensionMismatch { context: "cg_block elements", expected: self.dim, found: cols });
        }
        if tape.value(context).shape() != (1, self.dim) {
            return Err(Error::DimensionMismatch {
                context: "cg_block context",
                expected: self.dim,
                found: tape.value(context).len(),
            });
        }
        if mask.len() != rows {
            return Err(Error::DimensionMismatch { context: "cg_block mask", expected: rows, found: mask.len() });
        }
        let projected = self.element_mlp.forward(tape, elements);
        let gate = self.context_mlp.forward(tape, context);
        let gated = tape.mul_row(projected, gate);
        let out = tape.select_rows(mask, gated, elements);
        let fallback = tape.param(self.default_context);
        let pooled = tape.masked_max_rows(gated, mask, fallback);
        Ok((out, pooled))
    }

    /// Value-level convenience wrapper around [`CgBlock::forward`].
    pub fn apply<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        set: &ElementSet<S>,
        context: &Embedding<S>,
    ) -> Result<(ElementSet<S>, Embedding<S>)> {
        let mut tape = Tape::new(params);
        let e = tape.constant(set.elements.clone());
        let c = tape.constant(Matrix::row_vector(context.0.clone()));
        let (out, pooled) = self.forward(&mut tape, e, &set.mask, c)?;
        Ok((
            ElementSet { elements: tape.value(out).clone(), mask: set.mask.clone() },
            Embedding(tape.value(pooled).data().to_vec()),
        ))
    }
}

/// Chain of CG blocks with running-average skip connections: the input to
/// block `k+1` is the mean of the stack input and the outputs of blocks `1..=k`.
#[derive(Debug, Clone)]
pub struct McgStack {
    blocks: Vec<CgBlock>,
}

impl McgStack {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        depth: usize,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self { blocks: (0..depth).map(|k| CgBlock::new(store, rng, &format!("{name}.{k}"), dim, hidden)).collect() }
    }

    pub fn blocks(&self) -> &[CgBlock] {
        &self.blocks
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, elements: Var, mask: &[bool], context: Var) -> Result<(Var, Var)> {
        let mut element_history = vec![elements];
        let mut context_history = vec![context];
        let (mut s, mut c) = (elements, context);
        for block in &self.blocks {
            let (ns, nc) = block.forward(tape, s, mask, c)?;
            element_history.push(ns);
            context_history.push(nc);
            s = tape.mean(&element_history);
            c = tape.mean(&context_history);
        }
        Ok((s, c))
    }
}

/// Full scene encoder; all parameters live in the shared group.
#[derive(Debug, Clone)]
pub struct SceneEncoder {
    target_history: Mlp,
    neighbor_history: Mlp,
    polyline: Mlp,
    neighbor_stack: McgStack,
    road_stack: McgStack,
    fuse: Mlp,
    history: usize,
    dim: usize,
}

impl SceneEncoder {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let (d, h) = (cfg.d_model, cfg.hidden);
        let hist_in = history_feature_len(cfg.history);
        Self {
            target_history: Mlp::new(store, rng, "encoder.target_history", ParamGroup::Shared, hist_in, h, d),
            neighbor_history: Mlp::new(store, rng, "encoder.neighbor_history", ParamGroup::Shared, hist_in, h, d),
            polyline: Mlp::new(store, rng, "encoder.polyline", ParamGroup::Shared, polyline_feature_len(), h, d),
            neighbor_stack: McgStack::new(store, rng, "encoder.neighbor_mcg", cfg.mcg_blocks, d, h),
            road_stack: McgStack::new(store, rng, "encoder.road_mcg", cfg.mcg_blocks, d, h),
            fuse: Mlp::new(store, rng, "encoder.fuse", ParamGroup::Shared, 3 * d, h, d),
            history: cfg.history,
            dim: d,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn neighbor_stack(&self) -> &McgStack {
        &self.neighbor_stack
    }

    pub fn road_stack(&self) -> &McgStack {
        &self.road_stack
    }

    fn history_matrix<S: Scalar>(&self, tracks: &[&AgentTrack<S>]) -> Result<Matrix<S>> {
        let width = history_feature_len(self.history);
        let mut data = Vec::with_capacity(tracks.len() * width);
        for t in tracks {
            data.extend(history_features(t, self.history)?);
        }
        Ok(Matrix::from_vec(tracks.len(), width, data))
    }

    /// Target-history embedding from a feature node (`1 × history_feature_len`).
    pub fn target_from_features<S: Scalar>(&self, tape: &mut Tape<'_, S>, features: Var) -> Var {
        self.target_history.forward(tape, features)
    }

    pub fn encode_history_on<S: Scalar>(&self, tape: &mut Tape<'_, S>, track: &AgentTrack<S>) -> Result<Var> {
        let x = tape.constant(self.history_matrix(&[track])?);
        Ok(self.target_history.forward(tape, x))
    }

    pub fn encode_neighbors_on<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        neighbors: &[AgentTrack<S>],
        context: Var,
    ) -> Result<Var> {
        let refs: Vec<&AgentTrack<S>> = neighbors.iter().collect();
        let x = tape.constant(self.history_matrix(&refs)?);
        let mask: Vec<bool> = neighbors.iter().map(AgentTrack::has_valid_history).collect();
        self.neighbor_set_on(tape, x, &mask, context)
    }

    /// Neighbor branch from a prepared feature matrix (one row per neighbor).
    pub fn neighbor_set_on<S: Scalar>(&self, tape: &mut Tape<'_, S>, features: Var, mask: &[bool], context: Var) -> Result<Var> {
        let elements = self.neighbor_history.forward(tape, features);
        Ok(self.neighbor_stack.forward(tape, elements, mask, context)?.1)
    }

    pub fn encode_roadgraph_on<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        polylines: &[RoadGraphPolyline<S>],
        context: Var,
    ) -> Result<Var> {
        let width = polyline_feature_len();
        let mut data = Vec::with_capacity(polylines.len() * width);
        for p in polylines {
            data.extend(polyline_features(p)?);
        }
        let x = tape.constant(Matrix::from_vec(polylines.len(), width, data));
        self.road_set_on(tape, x, &vec![true; polylines.len()], context)
    }

    /// Road branch from a prepared feature matrix (one row per polyline).
    pub fn road_set_on<S: Scalar>(&self, tape: &mut Tape<'_, S>, features: Var, mask: &[bool], context: Var) -> Result<Var> {
        let elements = self.polyline.forward(tape, features);
        Ok(self.road_stack.forward(tape, elements, mask, context)?.1)
    }

    pub fn fuse_on<S: Scalar>(&self, tape: &mut Tape<'_, S>, target: Var, neighbors: Var, road: Var) -> Result<Var> {
        for v in [target, neighbors, road] {
            let found = tape.value(v).len();
            if found != self.dim {
                return Err(Error::DimensionMismatch { context: "fuse input", expected: self.dim, found });
            }
        }
        let joined = tape.concat_cols(&[target, neighbors, road]);
        Ok(self.fuse.forward(tape, joined))
    }

    /// Encodes a canonical-frame scene into a `1 × D` embedding node.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, scene: &Scene<S>) -> Result<Var> {
        let target = self.encode_history_on(tape, &scene.target)?;
        let neighbors = self.encode_neighbors_on(tape, &scene.neighbors, target)?;
        let road = self.encode_roadgraph_on(tape, &scene.roadgraph, target)?;
        self.fuse_on(tape, target, neighbors, road)
    }

    pub fn encode_history<S: Scalar>(&self, params: &ParamStore<S>, track: &AgentTrack<S>) -> Result<Embedding<S>> {
        let mut tape = Tape::new(params);
        let v = self.encode_history_on(&mut tape, track)?;
        Ok(Embedding(tape.value(v).data().to_vec()))
    }

    pub fn encode_neighbors<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        neighbors: &[AgentTrack<S>],
        context: &Embedding<S>,
    ) -> Result<Embedding<S>> {
        let mut tape = Tape::new(params);
        let c = tape.constant(Matrix::row_vector(context.0.clone()));
        let v = self.encode_neighbors_on(&mut tape, neighbors, c)?;
        Ok(Embedding(tape.value(v).data().to_vec()))
    }

    pub fn encode_roadgraph<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        polylines: &[RoadGraphPolyline<S>],
        context: &Embedding<S>,
    ) -> Result<Embedding<S>> {
        let mut tape = Tape::new(params);
        let c = tape.constant(Matrix::row_vector(context.0.clone()));
        let v = self.encode_roadgraph_on(&mut tape, polylines, c)?;
        Ok(Embedding(tape.value(v).data().to_vec()))
    }

    pub fn fuse<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        target: &Embedding<S>,
        neighbors: &Embedding<S>,
        road: &Embedding<S>,
    ) -> Result<Embedding<S>> {
        let mut tape = Tape::new(params);
        let t = tape.constant(Matrix::row_vector(target.0.clone()));
        let n = tape.constant(Matrix::row_vector(neighbors.0.clone()));
        let r = tape.constant(Matrix::row_vector(road.0.clone()));
        let v = self.fuse_on(&mut tape, t, n, r)?;
        Ok(Embedding(tape.value(v).data().to_vec()))
    }

    pub fn encode_scene<S: Scalar>(&self, params: &ParamStore<S>, scene: &Scene<S>) -> Result<Embedding<S>> {
        let mut tape = Tape::new(params);
        let v = self.forward(&mut tape, scene)?;
        Ok(Embedding(tape.value(v).data().to_vec()))
    }
}
