//! Everything that touches files: configuration, checkpoints, datasets,
//! CSV tables and PGM images.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod emit;

pub use checkpoint::{
    load_checkpoint, load_ensemble, save_checkpoint, save_ensemble, Checkpoint, EnsembleFile, Params,
    TrainerState, FORMAT_VERSION,
};
pub use config::{parse_config, parse_config_text, Command, RunConfig};
pub use dataset::{ingest_dataset, Dataset, DatasetSource};
pub use emit::{emit_csv, emit_pgm, read_csv, write_atomic, Cell, Table};
