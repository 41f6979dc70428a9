#![allow(dead_code)]

pub mod checks;
pub mod metrics_oracle;
pub mod nms_oracle;

use mpa_core::harness::generate_dataset;
use mpa_core::model::{ModelConfig, ParamGrads};
use mpa_core::nn::ParamStore;
use mpa_core::predictor::HeadType;
use mpa_core::scene::{GeneratorConfig, Scene};
use rand::Rng;

pub fn small_model(head: HeadType) -> ModelConfig {
    ModelConfig {
        head,
        future: 12,
        d_model: 8,
        hidden: 8,
        mcg_blocks: 2,
        decoders: 3,
        fusion_mcg_blocks: 2,
        ..Default::default()
    }
}

pub fn small_generator() -> GeneratorConfig {
    GeneratorConfig { future: 12, neighbors: 3, polylines: 4, ..Default::default() }
}

pub fn scenes_f64(seed: u64, n: usize, cfg: &GeneratorConfig) -> Vec<Scene<f64>> {
    generate_dataset(seed, n, cfg).unwrap().iter().map(|s| s.cast()).collect()
}

/// Central-difference check of `analytic` along `samples` random sign
/// directions over every parameter whose name passes `include`. Returns the
/// relative error between the vectors of analytic and numeric directional
/// derivatives.
pub fn param_grad_error<R: Rng>(
    store: &ParamStore<f64>,
    analytic: &ParamGrads<f64>,
    rng: &mut R,
    samples: usize,
    include: impl Fn(&str) -> bool,
    f: impl Fn(&ParamStore<f64>) -> f64,
) -> f64 {
    let h = 1e-6;
    let ids: Vec<usize> = store.entries().iter().enumerate().filter(|(_, e)| include(&e.name)).map(|(i, _)| i).collect();
    assert!(!ids.is_empty(), "no parameters selected");
    let mut a = Vec::with_capacity(samples);
    let mut n = Vec::with_capacity(samples);
    for _ in 0..samples {
        let dirs: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| (0..store.value(id).len()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect())
            .collect();
        let shifted = |sign: f64| {
            let mut p = store.clone();
            for (&id, d) in ids.iter().zip(&dirs) {
                for (v, dv) in p.value_mut(id).data_mut().iter_mut().zip(d) {
                    *v += sign * h * dv;
                }
            }
            f(&p)
        };
        n.push((shifted(1.0) - shifted(-1.0)) / (2.0 * h));
        a.push(
            ids.iter()
                .zip(&dirs)
                .filter_map(|(&id, d)| analytic[id].as_ref().map(|g| g.data().iter().zip(d).map(|(x, y)| x * y).sum::<f64>()))
                .sum(),
        );
    }
    relative_error(&a, &n)
}

/// `|a - n| / max(|a|, |n|, 1e-6)`. The floor sits below what a central
/// difference with h = 1e-6 can resolve, so samples that all land on
/// saturated (near-zero) gradients don't read as a 100% error.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-6)
}
