//! Building blocks for simulating the user side of human-assistant chats
//! from implicit profiles.
//!
//! The crate is split along the pipeline:
//!
//! - [`corpus`]: dialogue ingestion, dedup, segmentation and filter hooks.
//! - [`gateway`]: chat, embedding and AI-detection backends (HTTP and mock).
//! - [`extractor`]: attribute extraction and narrative polishing.
//! - [`simulator`]: the user/assistant turn loop and its stop rules.
//! - [`consistency`]: atomic-fact NLI scoring, DPC and judge scores.
//! - [`authenticity`]: embedding similarities, AVA, ADV and early-stop rate.
//! - [`sampler`]: reduction, Gaussian KDE and profile sampling.
//! - [`reward`]: cycle-consistency rewards and reward dataset emission.

pub mod authenticity;
pub mod consistency;
pub mod corpus;
pub mod extractor;
pub mod gateway;
pub mod linalg;
pub mod prompts;
pub mod reward;
pub mod sampler;
pub mod simulator;
pub mod text;

pub use corpus::{Corpus, Dialogue, Role, Turn};
pub use extractor::{AttributeSet, UserProfile};
pub use gateway::{Channel, EmbeddingVector, Gateway};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
