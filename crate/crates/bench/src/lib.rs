//! Inputs shared by the benchmarks.

use craftflow_core::synth::{random_workflow, SynthConfig};
use craftflow_core::Workflow;

/// A deterministic workflow with roughly `flow_nodes` things and doings.
pub fn sized(flow_nodes: usize, seed: u64) -> Workflow {
    let cfg = SynthConfig { flow_nodes: flow_nodes..=flow_nodes, ..SynthConfig::default() };
    random_workflow(seed, &cfg)
}

/// Sizes the benchmarks sweep over.
pub const SIZES: [usize; 3] = [15, 61, 241];
