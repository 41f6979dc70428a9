mod common;

use common::{checks, relative_error, scenes_f64, small_generator, small_model};
use mpa_core::autodiff::Tape;
use mpa_core::encoder::{history_feature_len, polyline_feature_len, Embedding, SceneEncoder};
use mpa_core::nn::ParamStore;
use mpa_core::predictor::HeadType;
use mpa_core::scene::Scene;
use mpa_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encoder(seed: u64) -> (SceneEncoder, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = SceneEncoder::new(&mut store, &mut rng, &small_model(HeadType::Single));
    (enc, store)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn masked_payloads_never_reach_the_context() {
    let (enc, store) = encoder(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let width = history_feature_len(11);
    for _ in 0..20 {
        let rows = rng.gen_range(1..7);
        let mask: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.6)).collect();
        let features = random_matrix(&mut rng, rows, width);
        let ctx = random_matrix(&mut rng, 1, 8);
        let eval = |f: Matrix<f64>| {
            let mut tape = Tape::new(&store);
            let x = tape.constant(f);
            let c = tape.constant(ctx.clone());
            let v = enc.neighbor_set_on(&mut tape, x, &mask, c).unwrap();
            tape.value(v).clone()
        };
        let reference = eval(features.clone());
        let mut scrambled = features.clone();
        for r in (0..rows).filter(|&r| !mask[r]) {
            for v in scrambled.row_mut(r) {
                *v = rng.gen_range(-100.0..100.0);
            }
        }
        assert_eq!(eval(scrambled), reference);
    }
}

#[test]
fn empty_sets_use_the_learned_default_context() {
    let (enc, store) = encoder(6);
    let ctx = Embedding(vec![0.3; 8]);
    let empty = enc.encode_neighbors(&store, &[], &ctx).unwrap();
    assert!(empty.is_finite());
    let scene = &scenes_f64(7, 1, &small_generator())[0];
    let mut masked = scene.neighbors.clone();
    for t in &mut masked {
        t.history.iter_mut().for_each(|s| *s = mpa_core::scene::AgentState::invalid());
    }
    assert_eq!(enc.encode_neighbors(&store, &masked, &ctx).unwrap(), empty);
    let road = enc.encode_roadgraph(&store, &[], &ctx).unwrap();
    assert!(road.is_finite());

    let mut tape = Tape::new(&store);
    let c = tape.constant(Matrix::row_vector(ctx.0.clone()));
    let out = enc.encode_neighbors_on(&mut tape, &[], c).unwrap();
    let grads = tape.backward(&[(out, Matrix::from_vec(1, 8, vec![1.0; 8]))]);
    let pg = tape.param_gradients(&grads);
    let id = enc.neighbor_stack().blocks()[0].default_context();
    assert!(pg[id].as_ref().is_some_and(|g| g.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn road_graph_changes_the_embedding() {
    let (enc, store) = encoder(8);
    let scene = &scenes_f64(9, 1, &small_generator())[0];
    let base = enc.encode_scene(&store, scene).unwrap();
    let mut moved = scene.clone();
    for n in moved.roadgraph.iter_mut().flat_map(|p| &mut p.nodes) {
        n.x += 5.0;
    }
    assert!(enc.encode_scene(&store, &moved).unwrap().max_abs_diff(&base) > 1e-6);
    let mut no_road: Scene<f64> = scene.clone();
    no_road.roadgraph.clear();
    assert!(enc.encode_scene(&store, &no_road).unwrap().max_abs_diff(&base) > 1e-6);
}

#[test]
fn input_gradients_match_finite_differences() {
    let (enc, store) = encoder(12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let rows = rng.gen_range(1..5);
        let mask: Vec<bool> = (0..rows).map(|i| i == 0 || rng.gen_bool(0.7)).collect();
        let features = random_matrix(&mut rng, rows, polyline_feature_len());
        let ctx = random_matrix(&mut rng, 1, 8);
        let w = random_matrix(&mut rng, 1, 8);
        let value = |f: &Matrix<f64>| {
            let mut tape = Tape::new(&store);
            let x = tape.constant(f.clone());
            let c = tape.constant(ctx.clone());
            let v = enc.road_set_on(&mut tape, x, &mask, c).unwrap();
            tape.value(v).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut tape = Tape::new(&store);
        let x = tape.input(features.clone());
        let c = tape.constant(ctx.clone());
        let v = enc.road_set_on(&mut tape, x, &mask, c).unwrap();
        let g = tape.backward(&[(v, w.clone())]);
        let analytic = g.get(x).unwrap().clone();
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for _ in 0..20 {
            let (r, col) = (rng.gen_range(0..rows), rng.gen_range(0..polyline_feature_len()));
            let mut p = features.clone();
            p.set(r, col, features.get(r, col) + 1e-6);
            let plus = value(&p);
            p.set(r, col, features.get(r, col) - 1e-6);
            let minus = value(&p);
            n.push((plus - minus) / 2e-6);
            a.push(analytic.get(r, col));
        }
        assert!(relative_error(&a, &n) < 1e-4);
    }
}

#[test]
fn neighbor_and_polyline_order_does_not_matter() {
    checks::permutation_invariance(100).unwrap();
}

#[test]
fn parameter_gradients_match_finite_differences() {
    checks::encoder_gradients(50).unwrap();
}
