//! Evaluation, dosimetry, statistics and sliding-window inference tooling for
//! cardiac substructure segmentation on CT.

pub mod cohort;
pub mod dosimetry;
pub mod inference;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod stats;
pub mod volume;
