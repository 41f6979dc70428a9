//! Training, evaluation and file plumbing behind the command-line tool.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod optim;
pub mod plot;
pub mod predictions;
pub mod train;

use rayon::prelude::*;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use data::generate_dataset;
pub use config::{AgentTypes, NmsConfig, Precision, RunConfig, TrainConfig};
pub use evaluate::{select_per_type, LoadedModel, ModelTable, Selection};
pub use predictions::{read_predictions, write_predictions, PredictionRecord};
pub use train::{run_training, train, TrainLog, TrainOutcome};

/// Maps `f` over `items`, on a dedicated pool when `threads > 1`. Output
/// order always matches input order.
pub(crate) fn par_map<T: Sync, R: Send>(threads: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
