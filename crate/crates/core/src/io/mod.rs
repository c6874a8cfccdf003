//! On-disk formats: RTTM timelines, XVEC embedding archives, model
//! checkpoints and experiment configuration.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod rttm;

pub use archive::{read_archive, write_archive, EmbeddingArchive, EmbeddingRecord};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ExperimentConfig;
pub use rttm::{parse_rttm, read_rttm, read_rttm_all, render_rttm, write_rttm};
