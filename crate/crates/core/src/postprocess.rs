//! Non-maximum suppression over predicted modes.
//!
//! Modes are visited in descending probability (lower index first on ties).
//! A mode within `threshold` of an already kept mode is suppressed: it keeps
//! its trajectory but its probability drops to `p_min`. Kept modes share the
//! remaining mass in proportion to their original probabilities, never going
//! below a floor just above `p_min`. Keeping that floor strictly above the
//! suppressed probability means a second pass visits every kept mode before
//! any suppressed one and reproduces the same partition.

use crate::error::{Error, Result};
use crate::predictor::ModeSet;
use crate::scalar::Scalar;

/// Relative gap between the smallest kept probability and `p_min`.
pub const KEPT_FLOOR_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// Largest per-step Euclidean distance.
    MaxOverTime,
    /// Euclidean distance between final positions.
    Endpoint,
}

impl std::fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceMode::MaxOverTime => "max",
            DistanceMode::Endpoint => "endpoint",
        })
    }
}

impl std::str::FromStr for DistanceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(DistanceMode::MaxOverTime),
            "endpoint" => Ok(DistanceMode::Endpoint),
            _ => Err(format!("unknown distance `{s}` (expected max or endpoint)")),
        }
    }
}

fn check_lengths<S>(a: &[[S; 2]], b: &[[S; 2]]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { context: "trajectory length", expected: a.len(), found: b.len() });
    }
    Ok(())
}

/// Maximum over time of the Euclidean distance between matching steps.
pub fn trajectory_distance<S: Scalar>(a: &[[S; 2]], b: &[[S; 2]]) -> Result<S> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1])).fold(S::zero(), S::max))
}

pub fn endpoint_distance<S: Scalar>(a: &[[S; 2]], b: &[[S; 2]]) -> Result<S> {
    check_lengths(a, b)?;
    Ok(match (a.last(), b.last()) {
        (Some(p), Some(q)) => (p[0] - q[0]).hypot(p[1] - q[1]),
        _ => S::zero(),
    })
}

pub fn distance<S: Scalar>(mode: DistanceMode, a: &[[S; 2]], b: &[[S; 2]]) -> Result<S> {
    match mode {
        DistanceMode::MaxOverTime => trajectory_distance(a, b),
        DistanceMode::Endpoint => endpoint_distance(a, b),
    }
}

/// Result of suppression: new probabilities and which modes were kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Suppression<S> {
    pub probabilities: Vec<S>,
    pub kept: Vec<bool>,
}

/// Core NMS on raw trajectories and probabilities.
pub fn suppress<S: Scalar>(
    trajectories: &[Vec<[S; 2]>],
    probabilities: &[S],
    threshold: S,
    p_min: S,
    mode: DistanceMode,
) -> Result<Suppression<S>> {
    let m = probabilities.len();
    if trajectories.len() != m {
        return Err(Error::DimensionMismatch { context: "nms modes", expected: m, found: trajectories.len() });
    }
    if !(threshold > S::zero()) || !threshold.is_finite() {
        return Err(Error::arg(format!("nms threshold {threshold} must be positive")));
    }
    if !(p_min > S::zero() && p_min * S::lit(m as f64) < S::one()) {
        return Err(Error::arg(format!("nms p_min {p_min} must lie in (0, 1/{m})")));
    }

    let mut order: Vec<usize> = (0..m).collect();
    // Stable sort keeps lower indices first among equal probabilities.
    order.sort_by(|&a, &b| probabilities[b].partial_cmp(&probabilities[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept = vec![false; m];
    let mut kept_list: Vec<usize> = Vec::with_capacity(m);
    for &i in &order {
        let mut close = false;
        for &k in &kept_list {
            if distance(mode, &trajectories[i], &trajectories[k])? <= threshold {
                close = true;
                break;
            }
        }
        if !close {
            kept[i] = true;
            kept_list.push(i);
        }
    }

    let suppressed = m - kept_list.len();
    let mut out = vec![p_min; m];
    let equal_split = (S::one() - S::lit(suppressed as f64) * p_min) / S::lit(kept_list.len() as f64);
    let floor = (p_min * S::lit(1.0 + KEPT_FLOOR_MARGIN)).min((p_min + equal_split) / S::lit(2.0));
    // Water-fill the remaining mass over kept modes with the kept floor.
    let mut floored = vec![false; m];
    loop {
        let free: Vec<usize> = kept_list.iter().copied().filter(|&k| !floored[k]).collect();
        let n_floored = kept_list.len() - free.len();
        let mass = S::one() - S::lit(suppressed as f64) * p_min - S::lit(n_floored as f64) * floor;
        let total: S = free.iter().map(|&k| probabilities[k]).sum();
        let mut changed = false;
        for &k in &free {
            let share = if total > S::zero() {
                mass * probabilities[k] / total
            } else {
                mass / S::lit(free.len() as f64)
            };
            if share < floor {
                floored[k] = true;
                changed = true;
            }
            out[k] = share;
        }
        if !changed {
            break;
        }
    }
    for &k in &kept_list {
        if floored[k] {
            out[k] = floor;
        }
    }
    Ok(Suppression { probabilities: out, kept })
}

/// NMS over a [`ModeSet`] using max-over-time distance. Trajectories and
/// covariances keep their indices; logits are reset to `ln p` so they stay
/// consistent with the new probabilities.
pub fn nms<S: Scalar>(modes: &ModeSet<S>, threshold: S, p_min: S) -> Result<ModeSet<S>> {
    nms_with(modes, threshold, p_min, DistanceMode::MaxOverTime)
}

pub fn nms_with<S: Scalar>(modes: &ModeSet<S>, threshold: S, p_min: S, mode: DistanceMode) -> Result<ModeSet<S>> {
    let s = suppress(&modes.trajectories, &modes.probabilities, threshold, p_min, mode)?;
    Ok(ModeSet {
        trajectories: modes.trajectories.clone(),
        cov_raw: modes.cov_raw.clone(),
        logits: s.probabilities.iter().map(|p| p.ln()).collect(),
        probabilities: s.probabilities,
    })
}
