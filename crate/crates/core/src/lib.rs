//! Semantic view scoring and selection.
//!
//! Views of an object are scored by how well they cluster with views of
//! other objects from the same category. The crate covers the whole loop:
//!
//! * [`dataset`]: views, feature stores and category splits;
//! * [`clustering`] and [`metrics`]: the clustering pipelines and the
//!   pair-counting / information-theoretic metrics used to judge them;
//! * [`scoring`]: Monte-Carlo sampling of clustering problems and the
//!   accumulated per-view semantic scores;
//! * [`geometry`]: camera poses on the half-sphere around an object;
//! * [`regressor`]: a small MLP that predicts a view's score from the top
//!   view embedding and the camera angles;
//! * [`selectors`]: view selectors and the paired evaluation harness;
//! * [`synth`]: synthetic feature worlds with known view quality.
//!
//! The `book/` directory next to the workspace walks through each concept;
//! its Rust snippets are compiled as doctests of this crate.

pub mod clustering;
pub mod dataset;
pub mod geometry;
pub mod metrics;
pub mod regressor;
pub mod scoring;
pub mod seeds;
pub mod selectors;
pub mod synth;

use std::fmt;

use sha2::{Digest as _, Sha256};

/// SHA-256 digest of the configuration that produced an output file.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

// Book chapters, compiled as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/scores.md")]
    mod scores {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/regressor.md")]
    mod regressor {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
