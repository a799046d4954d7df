//! Visual word tokenization for vision transformers.
//!
//! An image's fixed lattice of patches is turned into a shorter,
//! variable-length token sequence without any training:
//!
//! * intra-image: drop the patches with the lowest pixel variance;
//! * inter-image: cluster patches from a corpus into visual words
//!   ([`vocab`]), then merge the patches of an image that match the same
//!   word within a cosine-distance threshold ([`tokenizer`]).
//!
//! [`encoder`] and [`batcher`] carry the resulting groups through a toy ViT
//! with padding masks; [`analysis`] and [`render`] measure and draw them.

pub mod analysis;
pub mod batcher;
mod binio;
pub mod encoder;
pub mod error;
pub mod imagecore;
pub mod kmeans;
pub mod render;
pub mod tokenizer;
pub mod vocab;

pub use error::{Error, Result};
pub use imagecore::{load_image, patchify, resize, save_image, Image, PatchMatrix, ResizeMode};
pub use kmeans::{KMeansConfig, KMeansMode, KMeansReport};
pub use tokenizer::{GroupAssignment, InterConfig, IntraConfig, TokenizeMode, Verdict};
pub use vocab::{build_vocab, load_vocab, save_vocab, VocabSpace, Vocabulary};
