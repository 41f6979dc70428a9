//! Independent greedy NMS reference and random mode sets.

use mpa_core::postprocess::KEPT_FLOOR_MARGIN;
use mpa_core::predictor::ModeSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const T: usize = 16;

/// Modes scattered around a few shared base paths so that suppression is
/// common but not universal.
pub fn random_modeset(rng: &mut ChaCha8Rng) -> ModeSet<f64> {
    let bases: Vec<(f64, f64)> = (0..rng.gen_range(1..=4)).map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(-0.3..0.3))).collect();
    let trajectories: Vec<Vec<[f64; 2]>> = (0..6)
        .map(|_| {
            let (speed, curve) = bases[rng.gen_range(0..bases.len())];
            let jitter = rng.gen_range(0.0..2.5);
            let (dx, dy) = (rng.gen_range(-1.0..1.0) * jitter, rng.gen_range(-1.0..1.0) * jitter);
            (1..=T).map(|t| {
                let t = t as f64;
                [speed * t + dx * t / T as f64, curve * t * t / 4.0 + dy * t / T as f64]
            })
            .collect()
        })
        .collect();
    let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
    ModeSet::new(trajectories, vec![vec![[0.0; 3]; T]; 6], logits).unwrap()
}

pub fn max_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).fold(0.0, f64::max)
}

/// Reference keep set: visit by descending probability, lower index first.
pub fn oracle_keep(m: &ModeSet<f64>, threshold: f64) -> Vec<bool> {
    let n = m.probabilities.len();
    let mut visit: Vec<(f64, usize)> = m.probabilities.iter().copied().zip(0..n).collect();
    visit.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut keep = vec![false; n];
    for &(_, i) in &visit {
        if (0..n).all(|k| !keep[k] || max_distance(&m.trajectories[i], &m.trajectories[k]) > threshold) {
            keep[i] = true;
        }
    }
    keep
}

/// Reference probabilities: suppressed get `p_min`; kept share the rest in
/// proportion to their original probability, with the smallest kept modes
/// pinned to a floor just above `p_min` until every proportional share
/// clears it.
pub fn oracle_probs(p: &[f64], keep: &[bool], p_min: f64) -> Vec<f64> {
    let mut kept: Vec<usize> = (0..p.len()).filter(|&i| keep[i]).collect();
    kept.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let suppressed = p.len() - kept.len();
    let equal = (1.0 - suppressed as f64 * p_min) / kept.len() as f64;
    let floor = (p_min * (1.0 + KEPT_FLOOR_MARGIN)).min((p_min + equal) / 2.0);
    let mut out = vec![p_min; p.len()];
    for &i in &kept {
        out[i] = floor;
    }
    for pinned in 0..kept.len() {
        let free = &kept[pinned..];
        let mass = 1.0 - suppressed as f64 * p_min - pinned as f64 * floor;
        let total: f64 = free.iter().map(|&i| p[i]).sum();
        if mass * p[free[0]] / total >= floor {
            for &i in free {
                out[i] = mass * p[i] / total;
            }
            return out;
        }
    }
    out
}
