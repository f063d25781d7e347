//! Symbolic and numerical core for two-stage audio-visual sounding-object
//! segmentation, with all neural models replaced by file-based inputs.
//!
//! The pieces, in pipeline order:
//!
//! - [`tree`]: the three-layer audio-visual taxonomy (groups, visual
//!   categories, audio tags) and tag-score aggregation.
//! - [`mask`] / [`instance`]: binary masks, IoU, run-length files, and the
//!   two-phase filter producing the potential-sounding object set.
//! - [`integrate`]: matching filtered instances against audio evidence,
//!   with sibling-group fallback, into sounding/silent partitions.
//! - [`loss`]: the silent-object-aware objective (bipartite matching,
//!   focal/dice/cross-entropy, background and overlap penalties) and a
//!   finite-difference gradient oracle.
//! - [`align`]: embedding-based canonicalization of caption nouns and
//!   silent-label derivation.
//! - [`metrics`]: Jaccard and F-score evaluation.
//! - [`pipeline`]: file-level orchestration with canonical JSON output.

pub mod align;
pub mod assign;
pub mod instance;
pub mod integrate;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod tree;

pub use align::EmbeddingTable;
pub use instance::ScoredInstance;
pub use integrate::{IntegrationResult, MatchKind};
pub use loss::{GroundTruth, LossConfig, Prediction};
pub use mask::BinaryMask;
pub use pipeline::PipelineConfig;
pub use tree::{AudioVisualTree, CategoryScores, TagScores};
