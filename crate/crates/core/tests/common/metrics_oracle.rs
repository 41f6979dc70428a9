//! Brute-force metric references and random evaluation records.

use mpa_core::metrics::{EvalRecord, HORIZONS};
use mpa_core::scene::AgentType;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_record(rng: &mut ChaCha8Rng, id: u64) -> EvalRecord<f64> {
    let mut gt = Vec::with_capacity(80);
    let (mut x, mut y) = (0.0, 0.0);
    let (vx, vy) = (rng.gen_range(0.0..1.5), rng.gen_range(-0.3..0.3));
    for _ in 0..80 {
        x += vx + rng.gen_range(-0.05..0.05);
        y += vy + rng.gen_range(-0.05..0.05);
        gt.push([x, y]);
    }
    let mut valid: Vec<bool> = (0..80).map(|_| rng.gen_bool(0.95)).collect();
    if rng.gen_bool(0.3) {
        for h in HORIZONS {
            valid[h - 1] = true;
        }
    }
    let spread = rng.gen_range(0.1..8.0);
    let trajectories = (0..6)
        .map(|_| {
            let (ox, oy) = (rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
            gt.iter().enumerate().map(|(t, p)| [p[0] + ox * t as f64 / 80.0, p[1] + oy * t as f64 / 80.0]).collect()
        })
        .collect();
    let coarse = rng.gen_bool(0.3);
    let mut raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..1.0)).collect();
    if coarse {
        raw.iter_mut().for_each(|p| *p = (*p * 4.0).ceil());
    }
    let total: f64 = raw.iter().sum();
    EvalRecord {
        scene_id: id,
        agent_type: AgentType::ALL[rng.gen_range(0..3)],
        trajectories,
        probabilities: raw.iter().map(|p| p / total).collect(),
        ground_truth: gt,
        ground_truth_valid: valid,
        initial_speed: rng.gen_range(0.0..15.0),
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn ref_ade(r: &EvalRecord<f64>, h: usize) -> f64 {
    let mut best = f64::INFINITY;
    for m in &r.trajectories {
        let (mut s, mut n) = (0.0, 0.0);
        for t in 0..h {
            if r.ground_truth_valid[t] {
                s += dist(m[t], r.ground_truth[t]);
                n += 1.0;
            }
        }
        best = best.min(s / n);
    }
    best
}

pub fn ref_fde(r: &EvalRecord<f64>, h: usize) -> f64 {
    r.trajectories.iter().map(|m| dist(m[h - 1], r.ground_truth[h - 1])).fold(f64::INFINITY, f64::min)
}

pub fn ref_threshold(h: usize, v: f64) -> f64 {
    let base = [(30, 2.0), (50, 3.6), (80, 6.0)].iter().find(|(k, _)| *k == h).unwrap().1;
    let f = ((v - 1.4) / (11.0 - 1.4)).clamp(0.0, 1.0);
    base * (0.5 + 0.5 * f)
}

pub fn ref_matches(r: &EvalRecord<f64>, h: usize) -> Vec<bool> {
    let th = ref_threshold(h, r.initial_speed);
    r.trajectories.iter().map(|m| dist(m[h - 1], r.ground_truth[h - 1]) <= th).collect()
}

/// Quadratic AP: precision/recall recomputed from scratch at every cutoff.
pub fn ref_ap(probs: &[Vec<f64>], matches: &[Vec<bool>], soft: bool) -> f64 {
    let best: Vec<Option<usize>> = probs
        .iter()
        .zip(matches)
        .map(|(p, m)| {
            let mut b: Option<usize> = None;
            for i in 0..p.len() {
                if m[i] && b.map_or(true, |j| p[i] > p[j]) {
                    b = Some(i);
                }
            }
            b
        })
        .collect();
    let mut items: Vec<(f64, usize, usize)> = Vec::new();
    for (r, p) in probs.iter().enumerate() {
        for (m, &pm) in p.iter().enumerate() {
            let duplicate = matches[r][m] && best[r] != Some(m);
            if !(soft && duplicate) {
                items.push((pm, r, m));
            }
        }
    }
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n_gt = probs.len() as f64;
    let pr: Vec<(f64, f64)> = (1..=items.len())
        .map(|k| {
            let tp = items[..k].iter().filter(|(_, r, m)| best[*r] == Some(*m)).count() as f64;
            (tp / n_gt, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut last = 0.0;
    for k in 0..pr.len() {
        if pr[k].0 > last {
            let p_interp = pr[k..].iter().map(|x| x.1).fold(0.0, f64::max);
            ap += (pr[k].0 - last) * p_interp;
            last = pr[k].0;
        }
    }
    ap
}
