//! Motion-prediction evaluation: minADE, minFDE, miss rate, mAP and Soft mAP
//! per agent type and horizon.
//!
//! Matching uses a scalar Euclidean threshold at the horizon step: 2 m at
//! 3 s, 3.6 m at 5 s and 6 m at 8 s, scaled by a factor ramping linearly from
//! 0.5 to 1 as the target's initial speed goes from 1.4 m/s to 11 m/s. This
//! rule is deterministic and self-contained; it is not the official
//! challenge evaluator.
//!
//! Average precision is detection-style: modes from every record of a bucket
//! are pooled and sorted by probability. Per record, only the most probable
//! matching mode is a true positive. Additional matching modes are false
//! positives for mAP and ignored for Soft mAP; non-matching modes are false
//! positives. Recall is measured against the number of records and precision
//! is interpolated with a running maximum from the right.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::AgentType;

/// Evaluation horizons in steps at 10 Hz: 3 s, 5 s, 8 s.
pub const HORIZONS: [usize; 3] = [30, 50, 80];

pub fn horizon_label(steps: usize) -> String {
    if steps % 10 == 0 {
        format!("{}s", steps / 10)
    } else {
        format!("{:.1}s", steps as f64 / 10.0)
    }
}

/// Predicted modes and ground truth for one agent, in a common frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord<S> {
    pub scene_id: u64,
    pub agent_type: AgentType,
    /// `M × T` predicted positions.
    pub trajectories: Vec<Vec<[S; 2]>>,
    pub probabilities: Vec<S>,
    pub ground_truth: Vec<[S; 2]>,
    pub ground_truth_valid: Vec<bool>,
    /// Target speed at the current step (m/s).
    pub initial_speed: S,
}

impl<S: Scalar> EvalRecord<S> {
    fn check_horizon(&self, horizon: usize) -> Result<()> {
        if horizon == 0 || horizon > self.ground_truth.len() {
            return Err(Error::arg(format!(
                "horizon {horizon} outside 1..={} ground-truth steps",
                self.ground_truth.len()
            )));
        }
        if let Some(m) = self.trajectories.iter().find(|t| t.len() < horizon) {
            return Err(Error::DimensionMismatch { context: "predicted trajectory", expected: horizon, found: m.len() });
        }
        if self.probabilities.len() != self.trajectories.len() {
            return Err(Error::DimensionMismatch {
                context: "mode probabilities",
                expected: self.trajectories.len(),
                found: self.probabilities.len(),
            });
        }
        Ok(())
    }

    /// Whether the ground truth is observed at the horizon step.
    pub fn evaluable_at(&self, horizon: usize) -> bool {
        horizon >= 1 && horizon <= self.ground_truth_valid.len() && self.ground_truth_valid[horizon - 1]
    }

    fn displacement(&self, mode: usize, step: usize) -> S {
        let p = self.trajectories[mode][step];
        let g = self.ground_truth[step];
        (p[0] - g[0]).hypot(p[1] - g[1])
    }

    /// Distance of every mode from the ground truth at the horizon step.
    pub fn final_displacements(&self, horizon: usize) -> Result<Vec<S>> {
        self.check_horizon(horizon)?;
        if !self.ground_truth_valid[horizon - 1] {
            return Err(Error::arg(format!("record {}: ground truth invalid at step {horizon}", self.scene_id)));
        }
        Ok((0..self.trajectories.len()).map(|m| self.displacement(m, horizon - 1)).collect())
    }
}

/// Minimum over modes of the mean displacement over valid steps `1..=horizon`.
pub fn min_ade<S: Scalar>(record: &EvalRecord<S>, horizon: usize) -> Result<S> {
    record.check_horizon(horizon)?;
    let steps: Vec<usize> = (0..horizon).filter(|&t| record.ground_truth_valid[t]).collect();
    if steps.is_empty() {
        return Err(Error::arg(format!("record {}: no valid ground truth up to step {horizon}", record.scene_id)));
    }
    let n = S::lit(steps.len() as f64);
    Ok((0..record.trajectories.len())
        .map(|m| steps.iter().map(|&t| record.displacement(m, t)).sum::<S>() / n)
        .fold(S::infinity(), S::min))
}

/// Minimum over modes of the displacement at the horizon step.
pub fn min_fde<S: Scalar>(record: &EvalRecord<S>, horizon: usize) -> Result<S> {
    Ok(record.final_displacements(horizon)?.into_iter().fold(S::infinity(), S::min))
}

/// Match radius for a horizon and initial speed.
pub fn miss_threshold(horizon: usize, initial_speed: f64) -> Result<f64> {
    let base = match horizon {
        30 => 2.0,
        50 => 3.6,
        80 => 6.0,
        _ => return Err(Error::arg(format!("no miss threshold defined for horizon {horizon}"))),
    };
    let (lo, hi) = (1.4, 11.0);
    let factor = if initial_speed <= lo {
        0.5
    } else if initial_speed >= hi {
        1.0
    } else {
        0.5 + 0.5 * (initial_speed - lo) / (hi - lo)
    };
    Ok(base * factor)
}

/// Per-mode match flags at the horizon.
pub fn match_flags<S: Scalar>(record: &EvalRecord<S>, horizon: usize) -> Result<Vec<bool>> {
    let radius = miss_threshold(horizon, record.initial_speed.as_f64())?;
    Ok(record.final_displacements(horizon)?.into_iter().map(|d| d.as_f64() <= radius).collect())
}

/// True when no mode matches at the horizon.
pub fn is_miss<S: Scalar>(record: &EvalRecord<S>, horizon: usize) -> Result<bool> {
    Ok(!match_flags(record, horizon)?.into_iter().any(|m| m))
}

/// Scored modes of one record, ready for AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ApRecord {
    pub probabilities: Vec<f64>,
    pub matches: Vec<bool>,
}

impl ApRecord {
    pub fn from_record<S: Scalar>(record: &EvalRecord<S>, horizon: usize) -> Result<Self> {
        Ok(Self {
            probabilities: record.probabilities.iter().map(|p| p.as_f64()).collect(),
            matches: match_flags(record, horizon)?,
        })
    }

    /// Index of the most probable matching mode; lower index wins ties.
    fn best_match(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, (&p, &m)) in self.probabilities.iter().zip(&self.matches).enumerate() {
            if m && best.is_none_or(|b| p > self.probabilities[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// Average precision of one bucket.
pub fn average_precision(records: &[ApRecord], soft: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::arg("average precision of an empty bucket"));
    }
    let mut items: Vec<(f64, usize, usize)> = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        if rec.probabilities.len() != rec.matches.len() {
            return Err(Error::DimensionMismatch {
                context: "ap record",
                expected: rec.probabilities.len(),
                found: rec.matches.len(),
            });
        }
        items.extend(rec.probabilities.iter().enumerate().map(|(m, &p)| (p, r, m)));
    }
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let best: Vec<Option<usize>> = records.iter().map(ApRecord::best_match).collect();

    let n = records.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    // (recall, precision) after each counted detection.
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(items.len());
    for &(_, r, m) in &items {
        if best[r] == Some(m) {
            tp += 1;
        } else if records[r].matches[m] {
            if soft {
                continue;
            }
            fp += 1;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut running_max = 0.0f64;
    let mut interpolated = vec![0.0; curve.len()];
    for i in (0..curve.len()).rev() {
        running_max = running_max.max(curve[i].1);
        interpolated[i] = running_max;
    }
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in curve.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * interpolated[i];
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// Metrics of one (agent type, horizon) bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketMetrics {
    pub count: usize,
    pub soft_map: f64,
    pub map: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
}

impl BucketMetrics {
    const FIELDS: [&'static str; 5] = ["soft_map", "map", "min_ade", "min_fde", "miss_rate"];

    fn values(&self) -> [f64; 5] {
        [self.soft_map, self.map, self.min_ade, self.min_fde, self.miss_rate]
    }

    fn mean(items: &[BucketMetrics]) -> BucketMetrics {
        let n = items.len() as f64;
        let avg = |f: fn(&BucketMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        BucketMetrics {
            count: items.iter().map(|b| b.count).sum(),
            soft_map: avg(|b| b.soft_map),
            map: avg(|b| b.map),
            min_ade: avg(|b| b.min_ade),
            min_fde: avg(|b| b.min_fde),
            miss_rate: avg(|b| b.miss_rate),
        }
    }
}

pub fn bucket_metrics<S: Scalar>(records: &[&EvalRecord<S>], horizon: usize) -> Result<BucketMetrics> {
    if records.is_empty() {
        return Err(Error::arg("empty bucket"));
    }
    let ap: Vec<ApRecord> = records.iter().map(|r| ApRecord::from_record(r, horizon)).collect::<Result<_>>()?;
    let n = records.len() as f64;
    let mut ade = 0.0;
    let mut fde = 0.0;
    let mut misses = 0usize;
    for (r, a) in records.iter().zip(&ap) {
        ade += min_ade(r, horizon)?.as_f64();
        fde += min_fde(r, horizon)?.as_f64();
        misses += !a.matches.iter().any(|&m| m) as usize;
    }
    Ok(BucketMetrics {
        count: records.len(),
        soft_map: average_precision(&ap, true)?,
        map: average_precision(&ap, false)?,
        min_ade: ade / n,
        min_fde: fde / n,
        miss_rate: misses as f64 / n,
    })
}

/// Per-bucket metrics plus the aggregate rows of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub buckets: BTreeMap<(AgentType, usize), BucketMetrics>,
    /// `(label, metrics)` rows: per-type averages over horizons, per-horizon
    /// averages over types, and the total over all buckets. Rows with no
    /// underlying bucket are absent.
    pub rows: Vec<(String, BucketMetrics)>,
}

/// Buckets every record by agent type and every standard horizon the records
/// cover. Records whose ground truth is unobserved at a horizon are left out
/// of that horizon's bucket.
pub fn report<S: Scalar>(records: &[EvalRecord<S>]) -> Result<Report> {
    let max_len = records.iter().map(|r| r.ground_truth.len()).max().unwrap_or(0);
    let horizons: Vec<usize> = HORIZONS.iter().copied().filter(|&h| h <= max_len).collect();
    let mut buckets = BTreeMap::new();
    for t in AgentType::ALL {
        for &h in &horizons {
            let members: Vec<&EvalRecord<S>> =
                records.iter().filter(|r| r.agent_type == t && r.evaluable_at(h)).collect();
            if !members.is_empty() {
                buckets.insert((t, h), bucket_metrics(&members, h)?);
            }
        }
    }
    let mut rows = Vec::new();
    for t in AgentType::ALL {
        let items: Vec<BucketMetrics> = buckets.iter().filter(|((bt, _), _)| *bt == t).map(|(_, b)| *b).collect();
        if !items.is_empty() {
            rows.push((format!("Avg {}", t.label()), BucketMetrics::mean(&items)));
        }
    }
    for &h in &horizons {
        let items: Vec<BucketMetrics> = buckets.iter().filter(|((_, bh), _)| *bh == h).map(|(_, b)| *b).collect();
        if !items.is_empty() {
            rows.push((format!("Avg {}", horizon_label(h)), BucketMetrics::mean(&items)));
        }
    }
    let all: Vec<BucketMetrics> = buckets.values().copied().collect();
    if !all.is_empty() {
        rows.push(("Total".to_string(), BucketMetrics::mean(&all)));
    }
    Ok(Report { buckets, rows })
}

impl Report {
    pub fn row(&self, label: &str) -> Option<&BucketMetrics> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, b)| b)
    }

    /// Aligned, human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>9} {:>7}",
            "Object Type", "Soft mAP", "mAP", "minADE", "minFDE", "MissRate", "Count"
        );
        let _ = writeln!(out, "{}", "-".repeat(70));
        for (label, b) in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>8.4} {:>8.4} {:>8.3} {:>8.3} {:>9.4} {:>7}",
                label, b.soft_map, b.map, b.min_ade, b.min_fde, b.miss_rate, b.count
            );
        }
        out
    }

    /// Machine-readable `key = value` lines, one per bucket/row metric.
    /// Values use shortest round-trip formatting.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for ((t, h), b) in &self.buckets {
            let prefix = format!("bucket.{}.{}", t.name(), horizon_label(*h));
            let _ = writeln!(out, "{prefix}.count = {}", b.count);
            for (k, v) in BucketMetrics::FIELDS.iter().zip(b.values()) {
                let _ = writeln!(out, "{prefix}.{k} = {v}");
            }
        }
        for (label, b) in &self.rows {
            let prefix = format!("row.{}", label.to_lowercase().replace(' ', "_"));
            let _ = writeln!(out, "{prefix}.count = {}", b.count);
            for (k, v) in BucketMetrics::FIELDS.iter().zip(b.values()) {
                let _ = writeln!(out, "{prefix}.{k} = {v}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(offsets: &[(f64, f64)], probs: &[f64], speed: f64, t: AgentType) -> EvalRecord<f64> {
        let gt: Vec<[f64; 2]> = (0..80).map(|i| [i as f64 * 0.5, 0.0]).collect();
        EvalRecord {
            scene_id: 0,
            agent_type: t,
            trajectories: offsets.iter().map(|&(dx, dy)| gt.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).collect(),
            probabilities: probs.to_vec(),
            ground_truth: gt,
            ground_truth_valid: vec![true; 80],
            initial_speed: speed,
        }
    }

    #[test]
    fn ade_fde_basics() {
        let r = record(&[(3.0, 4.0), (0.0, 0.0)], &[0.5, 0.5], 5.0, AgentType::Vehicle);
        for h in HORIZONS {
            assert_eq!(min_ade(&r, h).unwrap(), 0.0);
            assert_eq!(min_fde(&r, h).unwrap(), 0.0);
            assert!(!is_miss(&r, h).unwrap());
        }
        let r = record(&[(3.0, 4.0)], &[1.0], 5.0, AgentType::Vehicle);
        assert!((min_ade(&r, 80).unwrap() - 5.0).abs() < 1e-12);
        assert!((min_fde(&r, 30).unwrap() - 5.0).abs() < 1e-12);
        assert!(min_ade(&r, 81).is_err());
        assert!(min_fde(&r, 0).is_err());
    }

    #[test]
    fn far_modes_miss() {
        let r = record(&[(100.0, 0.0), (0.0, -150.0)], &[0.5, 0.5], 20.0, AgentType::Cyclist);
        for h in HORIZONS {
            assert!(is_miss(&r, h).unwrap());
        }
    }

    #[test]
    fn threshold_ramp() {
        assert_eq!(miss_threshold(30, 0.0).unwrap(), 1.0);
        assert_eq!(miss_threshold(80, 20.0).unwrap(), 6.0);
        assert!((miss_threshold(50, 6.2).unwrap() - 3.6 * 0.75).abs() < 1e-12);
        assert!(miss_threshold(40, 5.0).is_err());
    }

    #[test]
    fn ap_extremes() {
        let perfect: Vec<ApRecord> = (0..4)
            .map(|_| ApRecord { probabilities: vec![0.7, 0.2, 0.1], matches: vec![true, false, false] })
            .collect();
        assert_eq!(average_precision(&perfect, false).unwrap(), 1.0);
        assert_eq!(average_precision(&perfect, true).unwrap(), 1.0);
        let none = vec![ApRecord { probabilities: vec![0.5, 0.5], matches: vec![false, false] }; 3];
        assert_eq!(average_precision(&none, false).unwrap(), 0.0);
        assert!(average_precision(&[], true).is_err());
    }

    #[test]
    fn soft_ignores_duplicate_matches() {
        let recs = vec![
            ApRecord { probabilities: vec![0.6, 0.4], matches: vec![true, true] },
            ApRecord { probabilities: vec![0.3, 0.7], matches: vec![true, false] },
        ];
        // Sorted: r1m1 0.7 FP, r0m0 0.6 TP, r0m1 0.4 dup, r1m0 0.3 TP.
        // Hard: P = [0, 1/2, 1/3, 2/4] -> interp at recall 0.5 is 0.5, at 1.0 is 0.5 → 0.5
        // Soft: P = [0, 1/2, 2/3] -> 0.5 * 2/3 + 0.5 * 2/3
        assert!((average_precision(&recs, false).unwrap() - 0.5).abs() < 1e-12);
        assert!((average_precision(&recs, true).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_rows_follow_table_layout() {
        let mut recs = Vec::new();
        for t in AgentType::ALL {
            recs.push(record(&[(0.0, 0.0), (9.0, 9.0)], &[0.8, 0.2], 4.0, t));
        }
        let rep = report(&recs).unwrap();
        let labels: Vec<&str> = rep.rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(
            labels,
            ["Avg Vehicle", "Avg Pedestrian", "Avg Cyclist", "Avg 3s", "Avg 5s", "Avg 8s", "Total"]
        );
        for (_, b) in &rep.rows {
            assert_eq!((b.map, b.soft_map, b.miss_rate), (1.0, 1.0, 0.0));
        }
        assert!(rep.to_table().contains("Avg Pedestrian"));
        assert!(rep.to_kv().contains("row.total.map = 1"));
    }

    #[test]
    fn missing_buckets_are_absent() {
        let recs = vec![record(&[(0.0, 0.0)], &[1.0], 4.0, AgentType::Vehicle)];
        let rep = report(&recs).unwrap();
        assert!(rep.row("Avg Cyclist").is_none());
        assert!(rep.row("Avg Vehicle").is_some());
        assert_eq!(rep.buckets.len(), 3);
    }
}
