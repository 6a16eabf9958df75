//! Structure-aware dense retrieval at desk scale.
//!
//! Entity extraction and sentinel masking over structured documents, a
//! compact encoder–decoder trained with a contrastive alignment objective and
//! masked entity prediction, exact inner-product retrieval with hard-negative
//! mining, and graded ranking metrics.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod masker;
pub mod retrieval;
pub mod structparse;
pub mod trainer;

pub use error::{Error, Result};
