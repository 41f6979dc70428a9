//! Trajectory heads.
//!
//! Both heads emit, per mode, `T` position offsets that are accumulated into
//! positions (so untrained outputs stay near the canonical origin), `3T` raw
//! covariance parameters and one logit.
//!
//! The multi-decoder head runs `K` independent decoders of `M` modes each,
//! embeds the resulting `K·M` intermediate modes, lets `M` learned queries
//! attend over them (single-head scaled dot-product), refines the attended
//! vectors with an MCG stack conditioned on the scene embedding, and decodes
//! one final mode per query. Attention makes the fusion invariant to the
//! order of the intermediate modes.

mod modeset;

pub use modeset::{ModeSet, NUM_MODES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoder::{Embedding, McgStack};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{uniform_matrix, Linear, Mlp, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadType {
    Single,
    Multi,
}

impl std::fmt::Display for HeadType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadType::Single => "single",
            HeadType::Multi => "multi",
        })
    }
}

impl std::str::FromStr for HeadType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(HeadType::Single),
            "multi" => Ok(HeadType::Multi),
            _ => Err(format!("unknown head type `{s}` (expected single or multi)")),
        }
    }
}

/// Tape nodes holding one set of decoded modes.
#[derive(Debug, Clone, Copy)]
pub struct ModeOutputs {
    /// `M × 2T` interleaved positions.
    pub trajectories: Var,
    /// `M × 3T` raw covariance parameters.
    pub cov_raw: Var,
    /// `M × 1` logits.
    pub logits: Var,
    pub modes: usize,
    pub horizon: usize,
}

impl ModeOutputs {
    pub fn to_modeset<S: Scalar>(&self, tape: &Tape<'_, S>) -> Result<ModeSet<S>> {
        ModeSet::from_flat(
            self.modes,
            self.horizon,
            tape.value(self.trajectories).data(),
            tape.value(self.cov_raw).data(),
            tape.value(self.logits).data(),
        )
    }
}

/// Width of one decoded mode row: offsets, covariance parameters, logit.
pub(crate) fn mode_row_width(horizon: usize) -> usize {
    5 * horizon + 1
}

/// Splits `R × (5T + 1)` raw rows into positions, covariances and logits.
fn split_mode_rows<S: Scalar>(tape: &mut Tape<'_, S>, raw: Var, horizon: usize) -> ModeOutputs {
    let modes = tape.value(raw).rows();
    let offsets = tape.slice_cols(raw, 0, 2 * horizon);
    let trajectories = tape.cumsum_pairs(offsets);
    let cov_raw = tape.slice_cols(raw, 2 * horizon, 5 * horizon);
    let logits = tape.slice_cols(raw, 5 * horizon, 5 * horizon + 1);
    ModeOutputs { trajectories, cov_raw, logits, modes, horizon }
}

/// Single decoder: embedding → MLP → `M` mode rows.
#[derive(Debug, Clone, Copy)]
pub struct SingleDecoder {
    mlp: Mlp,
    modes: usize,
    horizon: usize,
}

impl SingleDecoder {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        cfg: &ModelConfig,
    ) -> Self {
        let out = cfg.modes * mode_row_width(cfg.future);
        Self { mlp: Mlp::new(store, rng, name, group, cfg.d_model, cfg.hidden, out), modes: cfg.modes, horizon: cfg.future }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, embedding: Var) -> ModeOutputs {
        let flat = self.mlp.forward(tape, embedding);
        let rows = tape.reshape(flat, self.modes, mode_row_width(self.horizon));
        split_mode_rows(tape, rows, self.horizon)
    }

    /// Value-level decode of a plain embedding.
    pub fn decode<S: Scalar>(&self, params: &ParamStore<S>, embedding: &Embedding<S>) -> Result<ModeSet<S>> {
        let mut tape = Tape::new(params);
        let e = tape.constant(Matrix::row_vector(embedding.0.clone()));
        self.forward(&mut tape, e).to_modeset(&tape)
    }
}

/// `K` decoders fused by attention and an MCG refinement into `M` modes.
#[derive(Debug, Clone)]
pub struct DecoderBank {
    decoders: Vec<SingleDecoder>,
    mode_embed: Mlp,
    key: Linear,
    value: Linear,
    queries: ParamId,
    refine: McgStack,
    head: Mlp,
    modes: usize,
    horizon: usize,
    dim: usize,
}

impl DecoderBank {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let decoders = (0..cfg.decoders)
            .map(|k| SingleDecoder::new(store, rng, &format!("decoder.{k}"), ParamGroup::Decoder(k), cfg))
            .collect();
        let (d, h) = (cfg.d_model, cfg.hidden);
        let shared = ParamGroup::Shared;
        Self {
            decoders,
            mode_embed: Mlp::new(store, rng, "fusion.mode_embed", shared, 2 * cfg.future + 1, h, d),
            key: Linear::new(store, rng, "fusion.key", shared, d, d),
            value: Linear::new(store, rng, "fusion.value", shared, d, d),
            queries: store.add("fusion.queries", shared, uniform_matrix(rng, cfg.modes, d, 1.0)),
            refine: McgStack::new(store, rng, "fusion.mcg", cfg.fusion_mcg_blocks, d, h),
            head: Mlp::new(store, rng, "fusion.head", shared, d, h, mode_row_width(cfg.future)),
            modes: cfg.modes,
            horizon: cfg.future,
            dim: d,
        }
    }

    pub fn num_decoders(&self) -> usize {
        self.decoders.len()
    }

    /// Number of modes entering the fusion stage.
    pub fn intermediate_mode_count(&self) -> usize {
        self.decoders.len() * self.modes
    }

    /// All decoders' modes stacked in decoder order.
    pub fn forward_intermediate<S: Scalar>(&self, tape: &mut Tape<'_, S>, embedding: Var) -> ModeOutputs {
        let parts: Vec<ModeOutputs> = self.decoders.iter().map(|d| d.forward(tape, embedding)).collect();
        let trajectories = tape.concat_rows(&parts.iter().map(|p| p.trajectories).collect::<Vec<_>>());
        let cov_raw = tape.concat_rows(&parts.iter().map(|p| p.cov_raw).collect::<Vec<_>>());
        let logits = tape.concat_rows(&parts.iter().map(|p| p.logits).collect::<Vec<_>>());
        ModeOutputs { trajectories, cov_raw, logits, modes: self.intermediate_mode_count(), horizon: self.horizon }
    }

    /// Attention + MCG fusion of intermediate modes into the final `M`.
    pub fn fuse<S: Scalar>(&self, tape: &mut Tape<'_, S>, intermediate: &ModeOutputs, embedding: Var) -> Result<ModeOutputs> {
        let scaled = tape.scale(intermediate.trajectories, S::lit(0.1));
        let mode_features = tape.concat_cols(&[scaled, intermediate.logits]);
        let mode_emb = self.mode_embed.forward(tape, mode_features);
        let keys = self.key.forward(tape, mode_emb);
        let values = self.value.forward(tape, mode_emb);
        let queries = tape.param(self.queries);
        let scores = tape.matmul_bt(queries, keys);
        let scores = tape.scale(scores, S::one() / S::lit(self.dim as f64).sqrt());
        let attention = tape.softmax_rows(scores);
        let attended = tape.matmul(attention, values);
        let (refined, _) = self.refine.forward(tape, attended, &vec![true; self.modes], embedding)?;
        let rows = self.head.forward(tape, refined);
        Ok(split_mode_rows(tape, rows, self.horizon))
    }

    /// Returns `(final, intermediate)` mode nodes.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, embedding: Var) -> Result<(ModeOutputs, ModeOutputs)> {
        let intermediate = self.forward_intermediate(tape, embedding);
        Ok((self.fuse(tape, &intermediate, embedding)?, intermediate))
    }

    pub fn decode<S: Scalar>(&self, params: &ParamStore<S>, embedding: &Embedding<S>) -> Result<ModeSet<S>> {
        let mut tape = Tape::new(params);
        let e = tape.constant(Matrix::row_vector(embedding.0.clone()));
        self.forward(&mut tape, e)?.0.to_modeset(&tape)
    }
}

/// Draws per-decoder update flags: each decoder independently with
/// probability `p_update`, redrawn until at least one is set.
pub fn sample_update_mask_with<R: Rng>(rng: &mut R, decoders: usize, p_update: f64) -> Result<Vec<bool>> {
    if decoders == 0 {
        return Err(Error::arg("update mask needs at least one decoder"));
    }
    if !(p_update > 0.0 && p_update <= 1.0) {
        return Err(Error::arg(format!("p_update {p_update} must lie in (0, 1]")));
    }
    loop {
        let mask: Vec<bool> = (0..decoders).map(|_| rng.gen_bool(p_update)).collect();
        if mask.iter().any(|&m| m) {
            return Ok(mask);
        }
    }
}

pub fn sample_update_mask(seed: u64, decoders: usize, p_update: f64) -> Result<Vec<bool>> {
    sample_update_mask_with(&mut ChaCha8Rng::seed_from_u64(seed), decoders, p_update)
}
