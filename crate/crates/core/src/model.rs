//! Encoder + head assembled into a trainable model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::encoder::SceneEncoder;
use crate::error::{Error, Result};
use crate::kv::kv_config;
use crate::nn::ParamStore;
use crate::objective::{mixture_nll_with_grad, NllGradient};
use crate::predictor::{DecoderBank, HeadType, ModeOutputs, ModeSet, SingleDecoder, NUM_MODES};
use crate::scalar::Scalar;
use crate::scene::{Frame, Scene, DEFAULT_FUTURE, DEFAULT_HISTORY};
use crate::tensor::Matrix;

kv_config! {
    /// Architecture hyper-parameters; stored in every checkpoint.
    #[derive(Debug, Clone, PartialEq)]
    pub struct ModelConfig {
        /// Trajectory head: `single` (one decoder) or `multi` (decoder bank with attention fusion).
        head: HeadType = HeadType::Single,
        /// History steps per agent, including the current step.
        history: usize = DEFAULT_HISTORY,
        /// Predicted future steps.
        future: usize = DEFAULT_FUTURE,
        /// Modes per prediction.
        modes: usize = NUM_MODES,
        /// Embedding width.
        d_model: usize = 128,
        /// Hidden width of every perceptron.
        hidden: usize = 128,
        /// Context-gating blocks per encoder MCG stack.
        mcg_blocks: usize = 3,
        /// Decoders in the multi-decoder bank.
        decoders: usize = 5,
        /// Context-gating blocks in the fusion refinement stack.
        fusion_mcg_blocks: usize = 2,
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("history", self.history),
            ("future", self.future),
            ("modes", self.modes),
            ("d_model", self.d_model),
            ("hidden", self.hidden),
            ("decoders", self.decoders),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("model `{k}` must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Single(SingleDecoder),
    Multi(DecoderBank),
}

/// Per-parameter gradients, indexed like the model's [`ParamStore`].
pub type ParamGrads<S> = Vec<Option<Matrix<S>>>;

#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    params: ParamStore<S>,
    encoder: SceneEncoder,
    head: Head,
}

impl<S: Scalar> Model<S> {
    /// Builds and initializes a model. Initial values depend only on
    /// `config` and `seed`, not on the scalar type beyond rounding.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = SceneEncoder::new(&mut params, &mut rng, &config);
        let head = match config.head {
            HeadType::Single => {
                Head::Single(SingleDecoder::new(&mut params, &mut rng, "decoder", crate::nn::ParamGroup::Shared, &config))
            }
            HeadType::Multi => Head::Multi(DecoderBank::new(&mut params, &mut rng, &config)),
        };
        Ok(Self { config, params, encoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn encoder(&self) -> &SceneEncoder {
        &self.encoder
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    fn check_scene(&self, scene: &Scene<S>) -> Result<()> {
        if scene.frame != Frame::Canonical {
            return Err(Error::InvalidScene(format!("scene {} is not in the canonical frame", scene.scene_id)));
        }
        if scene.history_len() != self.config.history {
            return Err(Error::DimensionMismatch {
                context: "scene history",
                expected: self.config.history,
                found: scene.history_len(),
            });
        }
        Ok(())
    }

    /// Records the forward pass; returns the tape, final modes and (for the
    /// multi-decoder head) the intermediate modes.
    pub fn forward<'a>(&'a self, scene: &Scene<S>) -> Result<(Tape<'a, S>, ModeOutputs, Option<ModeOutputs>)> {
        self.check_scene(scene)?;
        let mut tape = Tape::new(&self.params);
        let embedding = self.encoder.forward(&mut tape, scene)?;
        let (out, intermediate) = match &self.head {
            Head::Single(d) => (d.forward(&mut tape, embedding), None),
            Head::Multi(bank) => {
                let (f, i) = bank.forward(&mut tape, embedding)?;
                (f, Some(i))
            }
        };
        Ok((tape, out, intermediate))
    }

    pub fn predict(&self, scene: &Scene<S>) -> Result<ModeSet<S>> {
        let (tape, out, _) = self.forward(scene)?;
        out.to_modeset(&tape)
    }

    /// Intermediate (pre-fusion) modes; `None` for the single head.
    pub fn predict_intermediate(&self, scene: &Scene<S>) -> Result<Option<ModeSet<S>>> {
        let (tape, _, intermediate) = self.forward(scene)?;
        intermediate.map(|i| i.to_modeset(&tape)).transpose()
    }

    /// Mixture NLL for one scene with ground truth.
    pub fn loss(&self, scene: &Scene<S>) -> Result<S> {
        let pred = self.predict(scene)?;
        let (gt, valid) = self.ground_truth(scene)?;
        crate::objective::mixture_nll(&pred, &gt, &valid)
    }

    fn ground_truth(&self, scene: &Scene<S>) -> Result<(Vec<[S; 2]>, Vec<bool>)> {
        if scene.future_len() != self.config.future {
            return Err(Error::DimensionMismatch {
                context: "scene future",
                expected: self.config.future,
                found: scene.future_len(),
            });
        }
        Ok(scene.ground_truth())
    }

    /// Loss and parameter gradients for one scene, with the loss multiplied
    /// by `weight` before differentiation.
    pub fn loss_and_grad(&self, scene: &Scene<S>, weight: S) -> Result<(S, ParamGrads<S>)> {
        let (gt, valid) = self.ground_truth(scene)?;
        let (tape, out, _) = self.forward(scene)?;
        let pred = out.to_modeset(&tape)?;
        let (loss, grad) = mixture_nll_with_grad(&pred, &gt, &valid)?;
        let seeds = seeds_from_gradient(&out, &grad, weight);
        let grads = tape.backward(&seeds);
        Ok((loss, tape.param_gradients(&grads)))
    }
}

/// Converts an objective gradient into tape seeds for the mode nodes.
pub(crate) fn seeds_from_gradient<S: Scalar>(
    out: &ModeOutputs,
    grad: &NllGradient<S>,
    weight: S,
) -> Vec<(crate::autodiff::Var, Matrix<S>)> {
    let (m, t) = (out.modes, out.horizon);
    let traj: Vec<S> = grad.trajectories.iter().flatten().flatten().map(|&g| g * weight).collect();
    let cov: Vec<S> = grad.cov_raw.iter().flatten().flatten().map(|&g| g * weight).collect();
    let logits: Vec<S> = grad.logits.iter().map(|&g| g * weight).collect();
    vec![
        (out.trajectories, Matrix::from_vec(m, 2 * t, traj)),
        (out.cov_raw, Matrix::from_vec(m, 3 * t, cov)),
        (out.logits, Matrix::from_vec(m, 1, logits)),
    ]
}
