//! Dataset and checkpoint files, external table ingestion, mollified views and
//! batch sampling.

mod checkpoint;
pub mod container;
mod dataset;
mod ingest;

pub use checkpoint::{
    checkpoint_from_container, checkpoint_to_container, load_checkpoint, load_fast_model, save_checkpoint, save_fast_model,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, FAST_MAGIC, FAST_VERSION,
};
pub use container::{write_atomic, write_csv, write_table, Container};
pub use dataset::{
    load_dataset, mollified_view, sample_batch, save_dataset, GridKind, Snapshot, UniformGrid, WaveDataset,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use ingest::{ingest_tables, parse_table};
