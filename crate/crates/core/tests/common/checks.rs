//! Criterion-level checks shared by the topical suites and the acceptance
//! runner. Each returns a short detail line on success and the reason on
//! failure.

use mpa_core::augment::mask_history;
use mpa_core::autodiff::Tape;
use mpa_core::encoder::SceneEncoder;
use mpa_core::harness::optim::Adam;
use mpa_core::metrics::{average_precision, bucket_metrics, is_miss, min_ade, min_fde, ApRecord, EvalRecord, HORIZONS};
use mpa_core::model::{Head, Model};
use mpa_core::nn::{ParamGroup, ParamStore};
use mpa_core::objective::{mixture_nll, mixture_nll_with_grad, SIGMA_EPS};
use mpa_core::postprocess::{suppress, DistanceMode};
use mpa_core::predictor::{sample_update_mask_with, HeadType, ModeSet, NUM_MODES};
use mpa_core::scene::{encode_scenes, GeneratorConfig, Scene};
use mpa_core::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics_oracle::{random_record, ref_ade, ref_ap, ref_fde, ref_matches};
use super::nms_oracle::{max_distance, oracle_keep, oracle_probs, random_modeset};
use super::{param_grad_error, relative_error, scenes_f64, small_generator, small_model};

pub type Check = Result<String, String>;

pub const GRAD_TOL: f64 = 1e-4;

fn within(worst: f64, tol: f64, what: &str) -> Check {
    if worst < tol {
        Ok(format!("worst {what} {worst:.2e}"))
    } else {
        Err(format!("worst {what} {worst:.2e} exceeds {tol:.0e}"))
    }
}

fn random_nll_instance(rng: &mut ChaCha8Rng, m: usize, t: usize) -> (ModeSet<f64>, Vec<[f64; 2]>, Vec<bool>) {
    let traj = (0..m).map(|_| (0..t).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect()).collect();
    let cov = (0..m)
        .map(|_| (0..t).map(|_| [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]).collect())
        .collect();
    let logits = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let gt = (0..t).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
    let mut valid: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.8)).collect();
    valid[0] = true;
    (ModeSet::new(traj, cov, logits).unwrap(), gt, valid)
}

/// Central differences over every position, raw covariance and logit of
/// random M=2, T=3 mixtures.
pub fn nll_gradients(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (pred, gt, valid) = random_nll_instance(&mut rng, 2, 3);
        let (_, g) = mixture_nll_with_grad(&pred, &gt, &valid).map_err(|e| e.to_string())?;
        let f = |p: &ModeSet<f64>| {
            let p = ModeSet::new(p.trajectories.clone(), p.cov_raw.clone(), p.logits.clone()).unwrap();
            mixture_nll(&p, &gt, &valid).unwrap()
        };
        let central = |bump: &dyn Fn(&mut ModeSet<f64>, f64)| {
            let mut p = pred.clone();
            bump(&mut p, h);
            let plus = f(&p);
            bump(&mut p, -2.0 * h);
            (plus - f(&p)) / (2.0 * h)
        };
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for m in 0..2 {
            for t in 0..3 {
                for k in 0..2 {
                    n.push(central(&|p, d| p.trajectories[m][t][k] += d));
                    a.push(g.trajectories[m][t][k]);
                }
                for k in 0..3 {
                    n.push(central(&|p, d| p.cov_raw[m][t][k] += d));
                    a.push(g.cov_raw[m][t][k]);
                }
            }
            n.push(central(&|p, d| p.logits[m] += d));
            a.push(g.logits[m]);
        }
        worst = worst.max(relative_error(&a, &n));
    }
    within(worst, GRAD_TOL, &format!("relative error over {instances} instances:"))
}

/// Perfect single-mode prediction with unit covariances over 80 steps.
pub fn closed_form_nll() -> Check {
    let unit = ((1.0 - SIGMA_EPS).exp() - 1.0).ln();
    let gt: Vec<[f64; 2]> = (0..80).map(|t| [t as f64 * 0.7, (t as f64 * 0.1).sin()]).collect();
    let pred = ModeSet::new(vec![gt.clone()], vec![vec![[unit, unit, 0.0]; 80]], vec![0.0]).map_err(|e| e.to_string())?;
    let nll = mixture_nll(&pred, &gt, &[true; 80]).map_err(|e| e.to_string())?;
    let expect = 80.0 * (2.0 * std::f64::consts::PI).ln();
    let err = (nll - expect).abs();
    if err < 1e-6 {
        Ok(format!("NLL {nll:.9} vs 80 log 2pi {expect:.9}"))
    } else {
        Err(format!("NLL {nll} differs from {expect} by {err:.2e}"))
    }
}

fn encoder(seed: u64) -> (SceneEncoder, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = SceneEncoder::new(&mut store, &mut rng, &small_model(HeadType::Single));
    (enc, store)
}

/// Parameter gradients of a random projection of the scene embedding.
pub fn encoder_gradients(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scenes = scenes_f64(11, instances, &small_generator());
    let mut worst = 0.0f64;
    for (i, scene) in scenes.iter().enumerate() {
        let (enc, store) = encoder(100 + i as u64);
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new(&store);
        let out = enc.forward(&mut tape, scene).map_err(|e| e.to_string())?;
        let grads = tape.backward(&[(out, Matrix::row_vector(w.clone()))]);
        let analytic = tape.param_gradients(&grads);
        let probe = |p: &ParamStore<f64>| enc.encode_scene(p, scene).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum();
        worst = worst.max(param_grad_error(&store, &analytic, &mut rng, 24, |_| true, probe));
    }
    within(worst, GRAD_TOL, &format!("relative error over {instances} scenes:"))
}

/// Full-model loss gradients restricted to the head's own parameters.
pub fn head_gradients(head: HeadType, instances: usize) -> Check {
    let include: fn(&str) -> bool = match head {
        HeadType::Single => |n| n.starts_with("decoder"),
        HeadType::Multi => |n| n.starts_with("decoder") || n.starts_with("fusion"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenes = scenes_f64(6, instances, &small_generator());
    let mut worst = 0.0f64;
    for (i, scene) in scenes.iter().enumerate() {
        let model = Model::<f64>::new(small_model(head), 50 + i as u64).map_err(|e| e.to_string())?;
        let (_, grads) = model.loss_and_grad(scene, 1.0).map_err(|e| e.to_string())?;
        let err = param_grad_error(model.params(), &grads, &mut rng, 24, include, |p| {
            let mut m = model.clone();
            m.params_mut().copy_values_from(p).unwrap();
            m.loss(scene).unwrap()
        });
        worst = worst.max(err);
    }
    within(worst, GRAD_TOL, &format!("relative error over {instances} scenes:"))
}

pub fn nms_oracle_equivalence(sets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut suppressed = 0;
    for case in 0..sets {
        let m = random_modeset(&mut rng);
        let threshold = rng.gen_range(0.5..3.0);
        let p_min = 0.01;
        let s = suppress(&m.trajectories, &m.probabilities, threshold, p_min, DistanceMode::MaxOverTime)
            .map_err(|e| e.to_string())?;
        let keep = oracle_keep(&m, threshold);
        if s.kept != keep {
            return Err(format!("set {case}: keep {:?}, oracle {keep:?}", s.kept));
        }
        suppressed += keep.iter().filter(|k| !**k).count();
        let expect = oracle_probs(&m.probabilities, &keep, p_min);
        if s.probabilities.iter().zip(&expect).any(|(a, b)| (a - b).abs() >= 1e-12) {
            return Err(format!("set {case}: probabilities {:?}, oracle {expect:?}", s.probabilities));
        }
    }
    if suppressed * 2 < sets {
        return Err(format!("only {suppressed} suppressions; fixture too sparse"));
    }
    Ok(format!("{sets} sets identical, {suppressed} suppressions"))
}

pub fn nms_separation_and_simplex(sets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..sets {
        let m = random_modeset(&mut rng);
        let threshold = rng.gen_range(0.5..3.0);
        let p_min = rng.gen_range(0.001..0.1);
        let s = suppress(&m.trajectories, &m.probabilities, threshold, p_min, DistanceMode::MaxOverTime)
            .map_err(|e| e.to_string())?;
        for i in 0..NUM_MODES {
            for j in i + 1..NUM_MODES {
                if s.kept[i] && s.kept[j] && max_distance(&m.trajectories[i], &m.trajectories[j]) <= threshold {
                    return Err(format!("set {case}: kept modes {i} and {j} within threshold"));
                }
            }
        }
        let sum: f64 = s.probabilities.iter().sum();
        if (sum - 1.0).abs() >= 1e-9 {
            return Err(format!("set {case}: probabilities sum to {sum}"));
        }
        if s.probabilities.iter().any(|&p| p < p_min * (1.0 - 1e-9)) {
            return Err(format!("set {case}: entry below p_min in {:?}", s.probabilities));
        }
        if s.kept.iter().zip(&s.probabilities).any(|(&k, &p)| !k && p != p_min) {
            return Err(format!("set {case}: suppressed mode not at p_min"));
        }
    }
    Ok(format!("{sets} sets"))
}

pub fn nms_double_application(sets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..sets {
        let m = random_modeset(&mut rng);
        let threshold = rng.gen_range(0.5..3.0);
        let p_min = rng.gen_range(0.001..0.1);
        let run = |p: &[f64]| suppress(&m.trajectories, p, threshold, p_min, DistanceMode::MaxOverTime);
        let once = run(&m.probabilities).map_err(|e| e.to_string())?;
        let twice = run(&once.probabilities).map_err(|e| e.to_string())?;
        if once.kept != twice.kept {
            return Err(format!("set {case}: {:?} then {:?}", once.kept, twice.kept));
        }
    }
    Ok(format!("{sets} sets"))
}

/// Every per-record and bucket metric against the brute-force references.
pub fn metrics_oracle(buckets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    let mut b = 0;
    while checked < buckets {
        b += 1;
        let h = HORIZONS[b % 3];
        let n = rng.gen_range(1..30);
        let recs: Vec<EvalRecord<f64>> =
            (0..n).map(|i| random_record(&mut rng, i as u64)).filter(|r| r.evaluable_at(h)).collect();
        if recs.is_empty() {
            continue;
        }
        checked += 1;
        let fail = |what: &str| Err(format!("bucket {b} (h={h}): {what}"));
        let probs: Vec<Vec<f64>> = recs.iter().map(|r| r.probabilities.clone()).collect();
        let matches: Vec<Vec<bool>> = recs.iter().map(|r| ref_matches(r, h)).collect();
        for (r, m) in recs.iter().zip(&matches) {
            if (min_ade(r, h).unwrap() - ref_ade(r, h)).abs() >= 1e-9 {
                return fail("minADE");
            }
            if (min_fde(r, h).unwrap() - ref_fde(r, h)).abs() >= 1e-9 {
                return fail("minFDE");
            }
            if is_miss(r, h).unwrap() == m.iter().any(|x| *x) {
                return fail("miss");
            }
        }
        let ap_in: Vec<ApRecord> = recs.iter().map(|r| ApRecord::from_record(r, h).unwrap()).collect();
        let hard = average_precision(&ap_in, false).unwrap();
        let soft = average_precision(&ap_in, true).unwrap();
        if (hard - ref_ap(&probs, &matches, false)).abs() >= 1e-9 {
            return fail("mAP");
        }
        if (soft - ref_ap(&probs, &matches, true)).abs() >= 1e-9 {
            return fail("Soft mAP");
        }
        if soft < hard {
            return fail("Soft mAP below mAP");
        }
        let refs: Vec<&EvalRecord<f64>> = recs.iter().collect();
        let bm = bucket_metrics(&refs, h).unwrap();
        let k = recs.len() as f64;
        let misses = matches.iter().filter(|m| !m.iter().any(|x| *x)).count() as f64;
        if (bm.min_ade - recs.iter().map(|r| ref_ade(r, h)).sum::<f64>() / k).abs() >= 1e-9
            || (bm.min_fde - recs.iter().map(|r| ref_fde(r, h)).sum::<f64>() / k).abs() >= 1e-9
            || (bm.miss_rate - misses / k).abs() >= 1e-9
            || (bm.map, bm.soft_map) != (hard, soft)
        {
            return fail("bucket aggregate");
        }
    }
    Ok(format!("{checked} buckets"))
}

fn road_bytes(s: &Scene<f32>) -> Vec<u8> {
    let mut r = s.clone();
    r.target.history.clear();
    r.neighbors.iter_mut().for_each(|t| t.history.clear());
    encode_scenes(&[r]).unwrap()
}

/// Masked fraction of valid history steps at `p` against a Binomial 3σ band.
pub fn masking_statistics(p: f64, min_steps: usize) -> Check {
    let cfg = GeneratorConfig::default();
    let (mut valid, mut masked) = (0usize, 0usize);
    let mut seed = 0;
    while valid < min_steps {
        let scene = &mpa_core::harness::generate_dataset(900 + seed, 1, &cfg).unwrap()[0];
        let out = mask_history(scene, p, seed).map_err(|e| e.to_string())?;
        seed += 1;
        if road_bytes(&out) != road_bytes(scene) {
            return Err(format!("scene {}: road graph bytes changed", scene.scene_id));
        }
        for (a, b) in std::iter::once(&scene.target).chain(&scene.neighbors).zip(std::iter::once(&out.target).chain(&out.neighbors)) {
            for (x, y) in a.history.iter().zip(&b.history) {
                if x.valid {
                    valid += 1;
                    masked += !y.valid as usize;
                } else if y.valid {
                    return Err("an invalid step became valid".into());
                }
            }
        }
    }
    let frac = masked as f64 / valid as f64;
    let sigma = (p * (1.0 - p) / valid as f64).sqrt();
    let z = (frac - p) / sigma;
    if z.abs() <= 3.0 {
        Ok(format!("{masked}/{valid} masked ({frac:.4}, z = {z:+.2}), road bytes identical"))
    } else {
        Err(format!("{masked}/{valid} masked ({frac:.4}) is {z:+.2} sigma from {p}"))
    }
}

pub fn permutation_invariance(perms: usize) -> Check {
    let (enc, store) = encoder(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gen = GeneratorConfig { neighbors: 6, polylines: 8, ..small_generator() };
    let scene = &scenes_f64(3, 1, &gen)[0];
    let base = enc.encode_scene(&store, scene).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..perms {
        let mut s = scene.clone();
        s.neighbors.shuffle(&mut rng);
        s.roadgraph.shuffle(&mut rng);
        worst = worst.max(enc.encode_scene(&store, &s).map_err(|e| e.to_string())?.max_abs_diff(&base));
    }
    within(worst, 1e-6, &format!("embedding change over {perms} permutations:"))
}

/// 30 intermediate modes fused to 6, and blocked decoders bit-unchanged
/// through Adam steps with random update masks.
pub fn multi_decoder_contract(steps: usize) -> Check {
    let scene = &scenes_f64(10, 1, &small_generator())[0];
    let cfg = mpa_core::model::ModelConfig { decoders: 5, ..small_model(HeadType::Multi) };
    let mut model = Model::<f64>::new(cfg, 11).map_err(|e| e.to_string())?;
    let Head::Multi(bank) = model.head() else { return Err("not a multi head".into()) };
    let inter = bank.intermediate_mode_count();
    let out = model.predict(scene).map_err(|e| e.to_string())?.num_modes();
    let seen = model.predict_intermediate(scene).map_err(|e| e.to_string())?.map(|m| m.num_modes());
    if (inter, seen, out) != (30, Some(30), 6) {
        return Err(format!("{inter} ({seen:?}) intermediate modes fused to {out}"));
    }
    let mut adam = Adam::new(model.params(), 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut blocked_steps = 0;
    for step in 0..steps {
        let mask = sample_update_mask_with(&mut rng, 5, 0.5).map_err(|e| e.to_string())?;
        let before = model.params().clone();
        let (_, grads) = model.loss_and_grad(scene, 1.0).map_err(|e| e.to_string())?;
        adam.step(model.params_mut(), &grads, 1e-2, Some(&mask));
        blocked_steps += mask.iter().filter(|u| !**u).count();
        for (id, e) in model.params().entries().iter().enumerate() {
            if let ParamGroup::Decoder(k) = e.group {
                if !mask[k] && e.value != *before.value(id) {
                    return Err(format!("step {step}: blocked {} changed", e.name));
                }
                if mask[k] && e.name.ends_with("weight") && e.value == *before.value(id) {
                    return Err(format!("step {step}: updated {} did not move", e.name));
                }
            }
        }
    }
    if blocked_steps == 0 {
        return Err("no decoder was ever blocked".into());
    }
    Ok(format!("30 -> 6 modes; {blocked_steps} blocked decoder-steps bit-identical"))
}
