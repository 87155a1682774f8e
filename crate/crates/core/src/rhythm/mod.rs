//! Rhythm-based speech segmentation: onset detection, beat identification
//! with pseudo-beats, block normalization via time-scale modification, and
//! denormalization with smoothing.

pub mod beat;
pub mod onset;
pub mod segment;
pub mod tsm;

pub use beat::{identify_beats, Beat, BeatConfig, BeatGrid};
pub use onset::{detect_onsets, OnsetList};
pub use segment::{denormalize_and_smooth, normalize_segments, NormalizedBlock};
pub use tsm::time_scale;
