//! Continuous speaker identification for meetings.
//!
//! Window embeddings are matched against enrolled speaker profiles either
//! by cosine scoring or by a recurrent Relational Memory Core classifier
//! that reads the window (with temporal context) followed by the profiles.
//! Decisions are smoothed with a median filter, converted back into speaker
//! segments and scored with Speaker Error Rate. A synthetic corpus
//! generator provides data with controllable enrollment/test mismatch.

pub mod autodiff;
pub mod embedding;
pub mod error;
pub mod identification;
pub mod io;
pub mod rmc;
pub mod synth;
pub mod timeline;
pub mod trainer;

pub use embedding::{
    apply_projection, cosine_distance, estimate_profile, fit_lda, length_normalize, mean_normalize,
    Embedding, ProjectionModel, SpeakerProfile,
};
pub use error::{Error, Result};
pub use identification::{
    build_sequence, identify_cosine, identify_meeting, identify_rmc, median_smooth,
    permute_profiles, IdentificationSequence, Identifier, LabelTrajectory, MeetingWindow,
};
pub use rmc::{check_gradients, CellKind, RmcConfig, RmcModel};
pub use timeline::{
    compute_ser, merge_segments, trajectory_to_segments, window_accuracy, window_segments,
    ScoreReport, Segment, Timeline,
};
pub use trainer::{evaluate, make_training_examples, train, ExamplePool, TrainingConfig};
