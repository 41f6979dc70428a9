//! Run configuration: one plain-text `key = value` file covering training,
//! model, NMS and generator settings.
//!
//! Training keys are unprefixed; the other sections use `model.`, `nms.` and
//! `generator.` prefixes. Every key can be overridden from the environment as
//! `MPA_<KEY>` with dots replaced by underscores and letters upper-cased,
//! e.g. `MPA_LR` or `MPA_MODEL_D_MODEL`. Environment values win over the file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{self, kv_config, KvConfig};
use crate::model::ModelConfig;
use crate::postprocess::DistanceMode;
use crate::scene::{AgentType, GeneratorConfig};

pub const ENV_PREFIX: &str = "MPA_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision `{s}` (expected f32 or f64)")),
        }
    }
}

/// Non-empty set of agent types, written `all` or as a comma list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTypes(Vec<AgentType>);

impl AgentTypes {
    pub fn all() -> Self {
        Self(AgentType::ALL.to_vec())
    }

    pub fn contains(&self, t: AgentType) -> bool {
        self.0.contains(&t)
    }

    pub fn types(&self) -> &[AgentType] {
        &self.0
    }
}

impl fmt::Display for AgentTypes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == AgentType::ALL {
            return f.write_str("all");
        }
        let names: Vec<&str> = self.0.iter().map(|t| t.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for AgentTypes {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let mut out = Vec::new();
        for part in s.split(',') {
            let t: AgentType = part.trim().parse()?;
            if !out.contains(&t) {
                out.push(t);
            }
        }
        if out.is_empty() {
            return Err("empty agent type list".into());
        }
        out.sort_by_key(|t| t.code());
        Ok(Self(out))
    }
}

kv_config! {
    /// Optimization, data and runtime settings.
    #[derive(Debug, Clone, PartialEq)]
    pub struct TrainConfig {
        /// Scene cache used for training and validation.
        data: String = "data/scenes.mpas".to_string(),
        /// Output directory for the checkpoint and training log.
        out: String = "runs/default".to_string(),
        /// Seed for initialization, shuffling, masking and decoder-update masks.
        seed: u64 = 0,
        /// Optimizer steps.
        steps: usize = 2000,
        /// Scenes per step; the loss is the batch mean.
        batch_size: usize = 16,
        /// Initial Adam learning rate.
        lr: f64 = 1e-4,
        /// Adam first-moment decay.
        beta1: f64 = 0.9,
        /// Adam second-moment decay.
        beta2: f64 = 0.999,
        /// Adam denominator epsilon.
        adam_eps: f64 = 1e-8,
        /// Global gradient-norm clip; 0 disables clipping.
        grad_clip: f64 = 10.0,
        /// Learning-rate multiplier applied on a plateau.
        plateau_factor: f64 = 0.5,
        /// Evaluations without sufficient improvement before the rate drops. The validation NLL is monitored, or the training NLL when there is no validation split.
        plateau_patience: usize = 5,
        /// Absolute NLL improvement that counts as progress.
        plateau_delta: f64 = 1e-3,
        /// Steps between validations (also the best-checkpoint granularity).
        eval_every: usize = 100,
        /// Steps between training-loss log lines.
        log_every: usize = 50,
        /// Per-timestep history masking probability.
        p_mask: f64 = crate::augment::DEFAULT_P_MASK,
        /// Per-decoder update probability for the multi-decoder head.
        p_update: f64 = 0.5,
        /// Fraction of scenes held out for validation, chosen by scene id hash.
        val_fraction: f64 = 0.1,
        /// Worker threads for per-scene gradients and evaluation; 1 runs everything on the calling thread.
        threads: usize = 1,
        /// Floating-point precision of training: f32 or f64.
        precision: Precision = Precision::F32,
        /// Target agent types to train on: `all` or a list such as `vehicle,cyclist`.
        agent_types: AgentTypes = AgentTypes::all(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::arg(msg.to_string())) };
        check(self.batch_size > 0, "batch_size must be positive")?;
        check(self.eval_every > 0, "eval_every must be positive")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check((0.0..1.0).contains(&self.beta1), "beta1 must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2 must be in [0, 1)")?;
        check(self.adam_eps > 0.0, "adam_eps must be positive")?;
        check(self.grad_clip >= 0.0, "grad_clip must be non-negative")?;
        check(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0, "plateau_factor must be in (0, 1]")?;
        check(self.plateau_patience > 0, "plateau_patience must be positive")?;
        check(self.plateau_delta >= 0.0, "plateau_delta must be non-negative")?;
        check((0.0..=1.0).contains(&self.p_mask), "p_mask must be in [0, 1]")?;
        check(self.p_update > 0.0 && self.p_update <= 1.0, "p_update must be in (0, 1]")?;
        check((0.0..1.0).contains(&self.val_fraction), "val_fraction must be in [0, 1)")?;
        check(self.threads > 0, "threads must be positive")
    }
}

kv_config! {
    /// Non-maximum suppression applied by `eval` and `predict`.
    #[derive(Debug, Clone, PartialEq)]
    pub struct NmsConfig {
        /// Apply NMS to predictions.
        enabled: bool = true,
        /// Suppression radius for vehicles (m).
        threshold_vehicle: f64 = 2.0,
        /// Suppression radius for pedestrians (m).
        threshold_pedestrian: f64 = 0.5,
        /// Suppression radius for cyclists (m).
        threshold_cyclist: f64 = 1.0,
        /// Probability assigned to suppressed modes.
        p_min: f64 = 0.01,
        /// Trajectory distance: `max` (max over time) or `endpoint`.
        distance: DistanceMode = DistanceMode::MaxOverTime,
    }
}

impl NmsConfig {
    pub fn threshold(&self, t: AgentType) -> f64 {
        match t {
            AgentType::Vehicle => self.threshold_vehicle,
            AgentType::Pedestrian => self.threshold_pedestrian,
            AgentType::Cyclist => self.threshold_cyclist,
        }
    }
}

/// All sections of a run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub nms: NmsConfig,
    pub generator: GeneratorConfig,
}

const SECTIONS: [&str; 3] = ["model.", "nms.", "generator."];

impl RunConfig {
    /// Every accepted key, prefixed by section.
    pub fn keys() -> Vec<String> {
        let mut out: Vec<String> = TrainConfig::KEYS.iter().map(|k| k.to_string()).collect();
        out.extend(ModelConfig::KEYS.iter().map(|k| format!("model.{k}")));
        out.extend(NmsConfig::KEYS.iter().map(|k| format!("nms.{k}")));
        out.extend(GeneratorConfig::KEYS.iter().map(|k| format!("generator.{k}")));
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        if let Some(k) = key.strip_prefix("model.") {
            self.model.set(k, value)
        } else if let Some(k) = key.strip_prefix("nms.") {
            self.nms.set(k, value)
        } else if let Some(k) = key.strip_prefix("generator.") {
            self.generator.set(k, value)
        } else if SECTIONS.iter().any(|s| key.starts_with(s)) {
            Ok(false)
        } else {
            self.train.set(key, value)
        }
    }

    pub fn from_kv_str(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for entry in kv::parse(text, source_name)? {
            match cfg.set(&entry.key, &entry.value) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(Error::Config {
                        source_name: source_name.to_string(),
                        line: entry.line,
                        message: format!("unknown key `{}`", entry.key),
                    })
                }
                Err(e) => {
                    return Err(Error::Config {
                        source_name: source_name.to_string(),
                        line: entry.line,
                        message: format!("bad value `{}` for `{}`: {e}", entry.value, entry.key),
                    })
                }
            }
        }
        Ok(cfg)
    }

    /// Reads a config file, then applies environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_kv_str(&text, &path.display().to_string())?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn env_var(key: &str) -> String {
        format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(|var| std::env::var(var).ok())
    }

    /// Applies overrides from `lookup(env var name)`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for key in Self::keys() {
            let var = Self::env_var(&key);
            if let Some(value) = lookup(&var) {
                self.set(&key, value.trim()).map_err(|e| Error::Config {
                    source_name: format!("${var}"),
                    line: 0,
                    message: format!("bad value `{value}`: {e}"),
                })?;
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut out = self.train.to_kv();
        let mut section = |prefix: &str, body: String| {
            for line in body.lines() {
                out.push_str(prefix);
                out.push_str(line);
                out.push('\n');
            }
        };
        section("model.", self.model.to_kv());
        section("nms.", self.nms.to_kv());
        section("generator.", self.generator.to_kv());
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.generator.validate()
    }

    /// Markdown reference of every key, default and description.
    pub fn reference_markdown() -> String {
        let mut out = String::from(
            "# Configuration reference\n\n\
             Generated by `mpa config --reference`; do not edit by hand.\n\n\
             Config files hold one `key = value` per line; `#` starts a comment. \
             Unknown keys are rejected. Training keys are unprefixed, the other \
             sections use the prefix shown in their heading. Any key can be \
             overridden by the environment variable `MPA_<KEY>`, with `.` \
             replaced by `_` and letters upper-cased (`MPA_LR`, `MPA_MODEL_D_MODEL`).\n\n",
        );
        let mut section = |title: &str, prefix: &str, rows: Vec<(&'static str, String, &'static str)>| {
            out.push_str(&format!("## {title}\n\n| key | default | description |\n|---|---|---|\n"));
            for (k, d, doc) in rows {
                out.push_str(&format!("| `{prefix}{k}` | `{d}` | {doc} |\n"));
            }
            out.push('\n');
        };
        section("Training", "", TrainConfig::reference());
        section("Model (`model.`)", "model.", ModelConfig::reference());
        section("NMS (`nms.`)", "nms.", NmsConfig::reference());
        section("Generator (`generator.`)", "generator.", GeneratorConfig::reference());
        out.pop();
        out
    }
}
