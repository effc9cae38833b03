//! Vocabulary trees and bag-of-words vectors.
//!
//! Each detector kind gets its own hierarchical k-means tree. An image is
//! quantized against both, the two TF-IDF vectors are placed in one word
//! space (region words offset past the local ones) and blended by
//! [`merge_bow`].

mod bow;
mod kmeans;
mod tree;

pub use bow::{cosine_similarity, merge_bow, BowVector};
pub use tree::{train_vocabulary, TreeNode, VocabularyTree, VOCAB_FORMAT_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{DescriptorKind, ImageFeatures};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VocabError {
    #[error(
        "not enough descriptors to train: {available} available, at least {required} required"
    )]
    InsufficientData { available: usize, required: usize },
    #[error("descriptor kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch {
        expected: DescriptorKind,
        found: DescriptorKind,
    },
    #[error("invalid vocabulary parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub local_branching: usize,
    pub local_depth: usize,
    pub region_branching: usize,
    pub region_depth: usize,
    /// Share of the local dictionary in the merged vector.
    pub merge_weight: f64,
    /// Training uses at most this many descriptors per kind, taken at a
    /// fixed stride.
    pub max_training_descriptors: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        // 17³ = 4913 and 13³ = 2197 leaves: about 5000 local and 2000 region words.
        Self {
            local_branching: 17,
            local_depth: 3,
            region_branching: 13,
            region_depth: 3,
            merge_weight: 0.5,
            max_training_descriptors: 60_000,
        }
    }
}

/// The two dictionaries used together.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub local: VocabularyTree,
    pub region: VocabularyTree,
    pub merge_weight: f64,
}

impl Vocabulary {
    /// Merged TF-IDF vector of one image.
    pub fn quantize(&self, features: &ImageFeatures) -> Result<BowVector, VocabError> {
        let local = self.local.quantize(&features.local.descriptors)?;
        let region = self
            .region
            .quantize(&features.region.descriptors)?
            .offset(self.local.word_count() as u32);
        Ok(merge_bow(&local, &region, self.merge_weight))
    }

    pub fn word_count(&self) -> usize {
        self.local.word_count() + self.region.word_count()
    }
}
