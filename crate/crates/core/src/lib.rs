//! Set-level similarity learning for dense self-supervised features, at
//! desk scale.
//!
//! Two augmented views of a synthetic scene are encoded by a small CNN with
//! hand-written backward passes. High-attention positions of each view form
//! a set; sets are matched across views and contrasted with image-level and
//! set-level InfoNCE objectives against queues of momentum-encoded keys.
//! The `book/` directory walks through every part with runnable examples.

pub mod attention;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod matching;
pub mod numcore;
pub mod objectives;
pub mod pnm;
pub mod seeds;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
