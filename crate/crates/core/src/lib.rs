//! Feature-based photo re-identification of individual animals, with
//! time-aware reference/query splits and closed/open-set evaluation.
//!
//! Pipeline stages map onto modules:
//!
//! | stage | module |
//! |-------|--------|
//! | metadata, encounters | [`catalog`] |
//! | reference/query splits | [`splitgen`] |
//! | keypoints, descriptors, matching | [`features`] |
//! | projective verification | [`geomverify`] |
//! | match graph, identity propagation | [`matchgraph`] |
//! | scoring, time-gap curve | [`evaluation`] |
//! | synthetic encounter datasets | [`synthgen`] |
//! | orchestration, caching, reports | [`pipeline`] |

pub mod catalog;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geomverify;
pub mod matchgraph;
pub mod par;
pub mod pipeline;
pub mod splitgen;
pub mod synthgen;

pub use error::{Error, Result};
