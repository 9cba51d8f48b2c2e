//! Graph model, notation, validation, derived views and model-driven
//! ingestion for documented craft workflows.

pub mod model;

pub use model::*;

pub mod validate;
pub mod notation;
pub mod synth;
pub mod transforms;
pub mod ingest;
