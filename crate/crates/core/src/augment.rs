//! Training-time history masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{AgentState, Scene};

/// Default per-timestep masking probability.
pub const DEFAULT_P_MASK: f64 = 0.15;

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the masking stream for one scene in one epoch.
pub fn mask_seed(global_seed: u64, scene_id: u64, epoch: u64) -> u64 {
    mix_seed(mix_seed(global_seed, scene_id), epoch)
}

/// Independently per (agent, history step), with probability `p_mask`, zeroes
/// the state and clears its validity flag. Covers the target and every
/// neighbor; the road graph, ground-truth future and anchor pose are
/// untouched. One draw is consumed per step, valid or not, so the stream
/// stays aligned across scenes with different validity patterns.
pub fn mask_history<S: Scalar>(scene: &Scene<S>, p_mask: f64, seed: u64) -> Result<Scene<S>> {
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(Error::arg(format!("p_mask {p_mask} outside [0, 1]")));
    }
    let mut out = scene.clone();
    if p_mask == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for track in std::iter::once(&mut out.target).chain(out.neighbors.iter_mut()) {
        for state in track.history.iter_mut() {
            if rng.gen_bool(p_mask) {
                *state = AgentState::invalid();
            }
        }
    }
    Ok(out)
}
