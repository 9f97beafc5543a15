//! Quality characterization and foundation-size estimation for embedding
//! datasets.
//!
//! The crate measures an embedding dataset along four axes — Scale,
//! Coverage, Authenticity, and Richness — by training linear probes on a
//! ladder of nested subsamples. The measurements feed a saturating
//! growth-curve fit of each step function's concept-space bound, which
//! yields the minimal sample count (the foundation data size) needed to
//! meet a `(delta, epsilon)` generalization target, per step and for the
//! whole task via a truncated Bonferroni bound. The gap between holdings
//! and requirements becomes a shortfall-weighted completion plan drawn from
//! a reserve pool.
//!
//! ```
//! use scar_core::fds::{per_step_fds, ConceptFit};
//!
//! let fit = ConceptFit { step: 0, alpha: 2.0, lambda_star: 3.0, residual: 0.0, points_used: 6 };
//! assert_eq!(per_step_fds(&fit, 0.01, 0.01), 26_492);
//! ```
//!
//! The narrative guide lives in `book/`; its code snippets compile as part
//! of this crate's doc-tests.

pub mod cluster;
pub mod completion;
pub mod error;
pub mod fds;
pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod sec;
pub mod seed;
pub mod steps;
pub mod store;
pub mod synth;

pub use error::{Result, ScarError};
pub use store::{EmbeddingTable, SplitTag, SubsetSelection};

// Compile the guide's code blocks as doc-tests so the book can never drift
// from the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            struct $name;
        };
    }
    chapter!(Containers, "../../../book/src/containers.md");
    chapter!(ProbesAndSteps, "../../../book/src/probes.md");
    chapter!(Measures, "../../../book/src/measures.md");
    chapter!(FoundationSize, "../../../book/src/foundation-size.md");
    chapter!(Completion, "../../../book/src/completion.md");
    chapter!(SyntheticData, "../../../book/src/synthetic-data.md");
}
