//! Hybrid interpretable models (an ordered rule prefix in front of a black-box
//! fallback) learned under transparency and coverage-disparity constraints,
//! plus tooling to audit collections of near-optimal models for
//! interpretability coverage disparity (ICD) and arbitrariness (ICA).

pub mod anneal;
pub mod bitset;
pub mod blackbox;
pub mod data;
pub mod error;
pub mod hybrid;
pub mod pipeline;
pub mod rashomon;
pub mod rules;
pub mod search;
pub mod stats;
pub mod synth;

pub use bitset::Bitset;
pub use error::{Error, Result};
