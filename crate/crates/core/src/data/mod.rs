//! Core domain types and file ingestion: skeleton and forward kinematics,
//! motion clips, word alignments and embeddings, audio, and style features.

pub mod audio;
pub mod motion;
pub mod skeleton;
pub mod style;
pub mod text;

pub use audio::{AudioClip, RmsEnvelope};
pub use motion::MotionClip;
pub use skeleton::Skeleton;
pub use style::{compute_style_features, StyleFeature, StyleFeatureSeries};
pub use text::{align_text_to_frames, WordAlignment, WordEmbeddingTable};

/// One-hot speaker identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerId {
    one_hot: Vec<f64>,
}

impl SpeakerId {
    pub fn new(index: usize, num_speakers: usize) -> crate::Result<Self> {
        if index >= num_speakers {
            return Err(crate::Error::Argument(format!(
                "speaker index {index} out of range for {num_speakers} speakers"
            )));
        }
        let mut one_hot = vec![0.0; num_speakers];
        one_hot[index] = 1.0;
        Ok(SpeakerId { one_hot })
    }

    pub fn index(&self) -> usize {
        self.one_hot.iter().position(|&v| v == 1.0).unwrap()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.one_hot
    }

    pub fn num_speakers(&self) -> usize {
        self.one_hot.len()
    }
}
