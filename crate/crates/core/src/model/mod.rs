//! Typed graph for the workflow grammar: thing/doing/reflective nodes joined
//! by Flow, Reflective and Revision edges, plus segments and annotations.

mod graph;
mod ops;
mod types;

pub use graph::FlowIndex;
pub use ops::{segment_convexity_gaps, Annotation, BranchPath, ModelError, PatternCensus, Rejoin};
pub use types::*;
