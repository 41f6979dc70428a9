//! Training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{mask_history, mask_seed, mix_seed};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{Checkpoint, CheckpointMeta};
use crate::harness::config::{Precision, RunConfig};
use crate::harness::optim::{clip_grad_norm, Adam, PlateauScheduler};
use crate::harness::par_map;
use crate::model::{Model, ParamGrads};
use crate::nn::ParamStore;
use crate::predictor::{sample_update_mask_with, HeadType};
use crate::scalar::Scalar;
use crate::scene::{cache_read, Scene};

const SPLIT_SALT: u64 = 0x7661_6c5f_7370_6c74;
const SHUFFLE_SALT: u64 = 0x7368_7566_666c_6521;
const UPDATE_SALT: u64 = 0x6465_636f_6465_7273;

pub const CHECKPOINT_FILE: &str = "checkpoint.mpac";
pub const LOG_FILE: &str = "train_log.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// Whether a scene belongs to the validation split. Depends only on the
/// scene id, so the split is stable across runs and dataset orderings.
pub fn is_validation(scene_id: u64, fraction: f64) -> bool {
    let u = (mix_seed(scene_id, SPLIT_SALT) >> 11) as f64 / (1u64 << 53) as f64;
    u < fraction
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Batch-mean NLL on the masked batch.
    pub loss: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValRecord {
    pub step: usize,
    pub nll: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Mean unmasked NLL over the training split before the first step.
    pub initial_train_nll: f64,
    /// Mean unmasked NLL over the training split after the last step.
    pub final_train_nll: f64,
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValRecord>,
    /// Step whose parameters were checkpointed.
    pub best_step: usize,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "train_scenes = {}", self.train_scenes);
        let _ = writeln!(out, "val_scenes = {}", self.val_scenes);
        let _ = writeln!(out, "initial_train_nll = {}", self.initial_train_nll);
        let _ = writeln!(out, "final_train_nll = {}", self.final_train_nll);
        let _ = writeln!(out, "best_step = {}", self.best_step);
        for s in &self.steps {
            let _ = writeln!(out, "step {} epoch {} loss {} lr {} grad_norm {}", s.step, s.epoch, s.loss, s.lr, s.grad_norm);
        }
        for v in &self.validations {
            let _ = writeln!(out, "validation {} nll {} lr {}", v.step, v.nll, v.lr);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    /// Best-validation parameters, or the final ones without a validation split.
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub final_model: Model<S>,
}

fn accumulate<S: Scalar>(acc: &mut ParamGrads<S>, g: ParamGrads<S>) {
    for (a, g) in acc.iter_mut().zip(g) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => a.add_assign(&g),
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

/// Mean unmasked NLL over `scenes`.
pub fn mean_nll<S: Scalar>(model: &Model<S>, scenes: &[Scene<S>], threads: usize) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::arg("mean NLL of an empty scene set"));
    }
    let losses = par_map(threads, scenes, |s| model.loss(s));
    let mut total = 0.0;
    for l in losses {
        total += l?.as_f64();
    }
    Ok(total / scenes.len() as f64)
}

/// Trains on canonical scenes. Scenes whose target type is not selected are
/// dropped; the rest are split into training and validation by scene id.
pub fn train<S: Scalar>(cfg: &RunConfig, scenes: &[Scene<f32>], log: &mut dyn FnMut(&str)) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let tc = &cfg.train;
    let (mut train_set, mut val_set) = (Vec::new(), Vec::new());
    for s in scenes.iter().filter(|s| tc.agent_types.contains(s.target.agent_type)) {
        if is_validation(s.scene_id, tc.val_fraction) {
            val_set.push(s.cast::<S>());
        } else {
            train_set.push(s.cast::<S>());
        }
    }
    if train_set.is_empty() {
        return Err(Error::arg(format!(
            "no training scenes for agent types `{}` after holding out the validation split",
            tc.agent_types
        )));
    }
    let mut model = Model::<S>::new(cfg.model.clone(), tc.seed)?;
    let mut adam = Adam::new(model.params(), tc.beta1, tc.beta2, tc.adam_eps);
    let mut sched = PlateauScheduler::new(tc.lr, tc.plateau_factor, tc.plateau_patience, tc.plateau_delta);
    let mut update_rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, UPDATE_SALT));
    let precision = if S::BYTES == 4 { Precision::F32 } else { Precision::F64 };
    let threads = tc.threads;

    let initial_train_nll = mean_nll(&model, &train_set, threads)?;
    log(&format!(
        "training on {} scenes, validating on {}, {} parameters, initial NLL {initial_train_nll:.4}",
        train_set.len(),
        val_set.len(),
        model.params().scalar_count()
    ));

    let mut steps = Vec::with_capacity(tc.steps);
    let mut validations = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<S>)> = None;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0usize;
    for step in 1..=tc.steps {
        if cursor >= order.len() {
            if !order.is_empty() {
                epoch += 1;
            }
            order = (0..train_set.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(tc.seed, SHUFFLE_SALT), epoch as u64)));
            cursor = 0;
        }
        let end = (cursor + tc.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;

        let weight = S::lit(1.0 / batch.len() as f64);
        let results = par_map(threads, batch, |&i| {
            let s = &train_set[i];
            let masked = mask_history(s, tc.p_mask, mask_seed(tc.seed, s.scene_id, epoch as u64))?;
            model.loss_and_grad(&masked, weight)
        });
        let ids = || batch.iter().map(|&i| train_set[i].scene_id).collect::<Vec<_>>();
        let mut loss = 0.0;
        let mut grads: ParamGrads<S> = vec![None; model.params().len()];
        for r in results {
            let (l, g) = r?;
            loss += l.as_f64();
            accumulate(&mut grads, g);
        }
        loss /= batch.len() as f64;
        let grad_norm = clip_grad_norm(&mut grads, tc.grad_clip).as_f64();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step, scene_ids: ids() });
        }
        let mask = match cfg.model.head {
            HeadType::Multi => Some(sample_update_mask_with(&mut update_rng, cfg.model.decoders, tc.p_update)?),
            HeadType::Single => None,
        };
        let lr = sched.lr();
        adam.step(model.params_mut(), &grads, lr, mask.as_deref());
        steps.push(StepRecord { step, epoch, loss, lr, grad_norm });
        if tc.log_every > 0 && (step % tc.log_every == 0 || step == 1) {
            log(&format!("step {step}/{} epoch {epoch} loss {loss:.4} lr {lr:e} grad_norm {grad_norm:.3}", tc.steps));
        }

        if step % tc.eval_every == 0 || step == tc.steps {
            if val_set.is_empty() {
                // Without a validation split the schedule follows the unmasked training NLL.
                let nll = mean_nll(&model, &train_set, threads)?;
                if sched.observe(nll) {
                    log(&format!("training NLL plateaued; learning rate now {:e}", sched.lr()));
                }
                continue;
            }
            let nll = mean_nll(&model, &val_set, threads)?;
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss { step, scene_ids: val_set.iter().map(|s| s.scene_id).collect() });
            }
            validations.push(ValRecord { step, nll, lr: sched.lr() });
            if best.as_ref().is_none_or(|(b, _, _)| nll < *b) {
                best = Some((nll, step, model.params().clone()));
            }
            if sched.observe(nll) {
                log(&format!("validation NLL plateaued; learning rate now {:e}", sched.lr()));
            }
            log(&format!("validation step {step} NLL {nll:.4}"));
        }
    }

    let final_train_nll = mean_nll(&model, &train_set, threads)?;
    log(&format!("final training NLL {final_train_nll:.4} (initial {initial_train_nll:.4})"));
    let meta = |step: usize, val_nll: f64| CheckpointMeta {
        precision,
        step,
        val_nll,
        seed: tc.seed,
        agent_types: tc.agent_types.clone(),
    };
    let (checkpoint, best_step) = match best {
        Some((nll, step, params)) => {
            let mut snapshot = model.clone();
            snapshot.params_mut().copy_values_from(&params).expect("snapshot has the model's layout");
            (Checkpoint::from_model(&snapshot, meta(step, nll)), step)
        }
        None => (Checkpoint::from_model(&model, meta(tc.steps, f64::NAN)), tc.steps),
    };
    Ok(TrainOutcome {
        checkpoint,
        log: TrainLog {
            train_scenes: train_set.len(),
            val_scenes: val_set.len(),
            initial_train_nll,
            final_train_nll,
            steps,
            validations,
            best_step,
        },
        final_model: model,
    })
}

/// Reads the configured cache, trains at the configured precision and writes
/// the checkpoint, log and resolved config into the output directory.
pub fn run_training(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    let scenes: Vec<Scene<f32>> = cache_read(&cfg.train.data)?;
    if let Some(s) = scenes.iter().find(|s| s.history_len() != cfg.model.history || s.future_len() != cfg.model.future) {
        return Err(Error::arg(format!(
            "scene {} has {}/{} history/future steps but the model expects {}/{}",
            s.scene_id,
            s.history_len(),
            s.future_len(),
            cfg.model.history,
            cfg.model.future
        )));
    }
    let (checkpoint, train_log) = match cfg.train.precision {
        Precision::F32 => {
            let o = train::<f32>(cfg, &scenes, log)?;
            (o.checkpoint, o.log)
        }
        Precision::F64 => {
            let o = train::<f64>(cfg, &scenes, log)?;
            (o.checkpoint, o.log)
        }
    };
    let out = Path::new(&cfg.train.out);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    checkpoint.save(out.join(CHECKPOINT_FILE))?;
    let write = |name: &str, text: String| std::fs::write(out.join(name), text).map_err(|e| Error::io(out.join(name), e));
    write(LOG_FILE, train_log.to_text())?;
    write(CONFIG_FILE, cfg.to_kv())?;
    Ok((checkpoint, train_log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::HeadType;
    use crate::scene::{generate_synthetic_scene, to_canonical_frame, GeneratorConfig};

    fn tiny(head: HeadType) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.head = head;
        cfg.model.d_model = 8;
        cfg.model.hidden = 8;
        cfg.model.mcg_blocks = 1;
        cfg.model.decoders = 2;
        cfg.model.fusion_mcg_blocks = 1;
        cfg.train.steps = 6;
        cfg.train.batch_size = 3;
        cfg.train.eval_every = 2;
        cfg.train.log_every = 0;
        cfg.train.lr = 1e-3;
        cfg.train.val_fraction = 0.3;
        cfg
    }

    fn data(n: u64) -> Vec<Scene<f32>> {
        let g = GeneratorConfig { neighbors: 2, polylines: 3, ..Default::default() };
        (0..n).map(|i| to_canonical_frame(&generate_synthetic_scene::<f32>(i + 1, &g).unwrap()).unwrap()).collect()
    }

    #[test]
    fn split_is_stable_and_roughly_proportional() {
        let n = (0..10_000u64).filter(|&i| is_validation(i, 0.1)).count();
        assert!((900..1100).contains(&n), "{n}");
        assert!(!(0..100).any(|i| is_validation(i, 0.0)));
        assert_eq!(is_validation(42, 0.5), is_validation(42, 0.5));
    }

    #[test]
    fn runs_are_reproducible() {
        let scenes = data(10);
        for head in [HeadType::Single, HeadType::Multi] {
            let cfg = tiny(head);
            let a = train::<f64>(&cfg, &scenes, &mut |_| {}).unwrap();
            let b = train::<f64>(&cfg, &scenes, &mut |_| {}).unwrap();
            assert_eq!(a.log, b.log);
            assert_eq!(a.checkpoint.encode(), b.checkpoint.encode());
            assert_eq!(a.log.steps.len(), 6);
            assert!(!a.log.validations.is_empty());
        }
    }

    #[test]
    fn threaded_gradients_match_serial() {
        let scenes = data(8);
        let mut cfg = tiny(HeadType::Single);
        let serial = train::<f64>(&cfg, &scenes, &mut |_| {}).unwrap();
        cfg.train.threads = 3;
        let threaded = train::<f64>(&cfg, &scenes, &mut |_| {}).unwrap();
        assert_eq!(serial.checkpoint.encode(), threaded.checkpoint.encode());
    }

    #[test]
    fn agent_type_filter_without_matches_is_an_error() {
        let scenes: Vec<_> = data(6).into_iter().filter(|s| s.target.agent_type != crate::scene::AgentType::Cyclist).collect();
        let mut cfg = tiny(HeadType::Single);
        cfg.train.agent_types = "cyclist".parse().unwrap();
        assert!(train::<f64>(&cfg, &scenes, &mut |_| {}).is_err());
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let mut scenes = data(4);
        scenes[0].target.future[5].x = f32::NAN;
        let mut cfg = tiny(HeadType::Single);
        cfg.train.val_fraction = 0.0;
        cfg.train.batch_size = 4;
        match train::<f64>(&cfg, &scenes, &mut |_| {}) {
            Err(Error::NonFiniteLoss { step: 1, scene_ids }) => assert_eq!(scene_ids.len(), 4),
            other => panic!("expected non-finite loss, got {:?}", other.map(|o| o.log.best_step)),
        }
    }
}
