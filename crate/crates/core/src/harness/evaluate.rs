//! Prediction, evaluation and per-type model selection.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{NmsConfig, Precision};
use crate::harness::par_map;
use crate::harness::predictions::PredictionRecord;
use crate::metrics::{report, EvalRecord, Report};
use crate::model::{Model, ModelConfig};
use crate::postprocess::nms_with;
use crate::predictor::ModeSet;
use crate::scene::{from_canonical, AgentType, Scene};

/// A model restored at the precision it was trained in.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl LoadedModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(match ck.meta.precision {
            Precision::F32 => LoadedModel::F32(ck.to_model()?),
            Precision::F64 => LoadedModel::F64(ck.to_model()?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            LoadedModel::F32(m) => m.config(),
            LoadedModel::F64(m) => m.config(),
        }
    }

    /// Canonical-frame modes, widened to `f64`.
    pub fn predict(&self, scene: &Scene<f32>) -> Result<ModeSet<f64>> {
        match self {
            LoadedModel::F32(m) => Ok(m.predict(scene)?.cast()),
            LoadedModel::F64(m) => m.predict(&scene.cast()),
        }
    }
}

/// Models plus the index of the one serving each agent type.
#[derive(Debug, Clone)]
pub struct ModelTable {
    pub models: Vec<LoadedModel>,
    pub by_type: [usize; 3],
}

impl ModelTable {
    pub fn single(model: LoadedModel) -> Self {
        Self { models: vec![model], by_type: [0; 3] }
    }

    pub fn for_type(&self, t: AgentType) -> &LoadedModel {
        &self.models[self.by_type[t.code() as usize]]
    }
}

/// Predicts one scene, applies NMS when enabled and converts to the world frame.
pub fn predict_scene(model: &LoadedModel, scene: &Scene<f32>, nms: &NmsConfig) -> Result<PredictionRecord> {
    let mut modes = model.predict(scene)?;
    let agent_type = scene.target.agent_type;
    if nms.enabled {
        modes = nms_with(&modes, nms.threshold(agent_type), nms.p_min, nms.distance)?;
    }
    let anchor = scene.anchor_pose.cast::<f64>();
    let trajectories = modes.trajectories.iter().map(|t| from_canonical(t, &anchor)).collect();
    let canon: Vec<[f64; 2]> = scene.target.history.iter().map(|s| [s.x as f64, s.y as f64]).collect();
    let history_valid: Vec<bool> = scene.target.history.iter().map(|s| s.valid).collect();
    let history = from_canonical(&canon, &anchor)
        .into_iter()
        .zip(&history_valid)
        .map(|(p, &v)| if v { p } else { [0.0, 0.0] })
        .collect();
    Ok(PredictionRecord {
        scene_id: scene.scene_id,
        agent_type,
        trajectories,
        probabilities: modes.probabilities,
        history,
        history_valid,
    })
}

/// Routes every scene through the model selected for its target's type.
pub fn predict_all(table: &ModelTable, scenes: &[Scene<f32>], nms: &NmsConfig, threads: usize) -> Result<Vec<PredictionRecord>> {
    par_map(threads, scenes, |s| predict_scene(table.for_type(s.target.agent_type), s, nms)).into_iter().collect()
}

/// World-frame ground truth of a canonical scene.
pub fn world_ground_truth(scene: &Scene<f32>) -> (Vec<[f64; 2]>, Vec<bool>) {
    let (gt, valid) = scene.cast::<f64>().ground_truth();
    (from_canonical(&gt, &scene.anchor_pose.cast()), valid)
}

/// Joins predictions with their scenes by scene id.
pub fn eval_records(predictions: &[PredictionRecord], scenes: &[Scene<f32>]) -> Result<Vec<EvalRecord<f64>>> {
    let by_id: BTreeMap<u64, &Scene<f32>> = scenes.iter().map(|s| (s.scene_id, s)).collect();
    predictions
        .iter()
        .map(|p| {
            let scene = by_id
                .get(&p.scene_id)
                .ok_or_else(|| Error::arg(format!("prediction for scene {} has no matching scene in the data", p.scene_id)))?;
            let (ground_truth, ground_truth_valid) = world_ground_truth(scene);
            Ok(EvalRecord {
                scene_id: p.scene_id,
                agent_type: p.agent_type,
                trajectories: p.trajectories.clone(),
                probabilities: p.probabilities.clone(),
                ground_truth,
                ground_truth_valid,
                initial_speed: scene.target.current().map_or(0.0, |s| s.speed() as f64),
            })
        })
        .collect()
}

pub fn evaluate(table: &ModelTable, scenes: &[Scene<f32>], nms: &NmsConfig, threads: usize) -> Result<Report> {
    let preds = predict_all(table, scenes, nms, threads)?;
    report(&eval_records(&preds, scenes)?)
}

/// Six-mode predictions whose most probable mode is the ground truth itself
/// and whose other modes lie 50 m to the side.
pub fn ground_truth_predictions(scenes: &[Scene<f32>]) -> Vec<PredictionRecord> {
    scenes
        .iter()
        .map(|s| {
            let (gt, _) = world_ground_truth(s);
            let mut trajectories = vec![gt.clone()];
            for k in 1..6 {
                trajectories.push(gt.iter().map(|p| [p[0], p[1] + 50.0 * k as f64]).collect());
            }
            PredictionRecord {
                scene_id: s.scene_id,
                agent_type: s.target.agent_type,
                trajectories,
                probabilities: vec![0.75, 0.05, 0.05, 0.05, 0.05, 0.05],
                history: Vec::new(),
                history_valid: Vec::new(),
            }
        })
        .collect()
}

/// Per-type choice among candidate models.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Candidate index per agent type, in type-code order.
    pub by_type: [usize; 3],
    /// Candidate with the best overall Soft mAP.
    pub overall: usize,
    pub warnings: Vec<String>,
}

/// Picks, per agent type, the report with the highest Soft mAP on that
/// type. Types absent from every report fall back to the overall best.
/// Ties go to the earlier candidate.
pub fn select_from_reports(reports: &[Report]) -> Result<Selection> {
    if reports.is_empty() {
        return Err(Error::arg("model selection needs at least one candidate"));
    }
    let argmax = |score: &dyn Fn(&Report) -> Option<f64>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in reports.iter().enumerate() {
            if let Some(s) = score(r) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, _)| i)
    };
    let mut warnings = Vec::new();
    let overall = argmax(&|r| r.row("Total").map(|b| b.soft_map)).unwrap_or_else(|| {
        warnings.push("validation data is empty; using the first checkpoint for every type".to_string());
        0
    });
    let mut by_type = [overall; 3];
    for t in AgentType::ALL {
        let label = format!("Avg {}", t.label());
        match argmax(&|r| r.row(&label).map(|b| b.soft_map)) {
            Some(i) => by_type[t.code() as usize] = i,
            None => warnings.push(format!(
                "no {} scenes in the validation data; falling back to the overall best checkpoint",
                t.name()
            )),
        }
    }
    Ok(Selection { by_type, overall, warnings })
}

/// Evaluates every candidate on validation scenes and selects per type.
pub fn select_per_type(
    candidates: &[LoadedModel],
    validation: &[Scene<f32>],
    nms: &NmsConfig,
    threads: usize,
) -> Result<Selection> {
    let reports = candidates
        .iter()
        .map(|m| evaluate(&ModelTable::single(m.clone()), validation, nms, threads))
        .collect::<Result<Vec<_>>>()?;
    select_from_reports(&reports)
}
