//! Persistence: binary checkpoints, JSONL run records and experiment
//! manifests.

mod checkpoint;
mod manifest;
mod results;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, Provenance, FORMAT_VERSION,
    MAGIC,
};
pub use manifest::{apply_override, Manifest, PlanSpec, PretrainSpec, TaskSource, VocabSpec};
pub use results::{append_result, read_results, single_manifest};
