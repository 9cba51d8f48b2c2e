//! Views, comparisons and exports derived from a workflow.

mod diff;
mod dot;
mod view;

pub use diff::{align, diff_workflows, principal_chain, BranchRecord, BranchReport, ChainPoint, DiffError};
pub use dot::{export_dot, export_view_dot, DOING_COLOR, LOOP_COLOR, SEGMENT_COLOR, THING_COLOR};
pub use view::{granularity_view, granularity_view_shared, SummaryEdge, View, ViewError};

use crate::model::{Id, Seconds, Workflow};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimelineError {
    #[error("time {t} is outside the video (0..{duration})")]
    OutOfRange { t: Seconds, duration: Seconds },
}

/// Nodes whose closed span contains `t`, ordered by start time then id.
pub fn timeline_lookup(w: &Workflow, t: Seconds) -> Result<Vec<Id>, TimelineError> {
    if t > w.video.duration {
        return Err(TimelineError::OutOfRange { t, duration: w.video.duration });
    }
    let mut hits: Vec<(Seconds, &Id)> = w
        .nodes
        .values()
        .filter(|n| n.span().contains(t))
        .map(|n| (n.span().start, n.id()))
        .collect();
    hits.sort();
    Ok(hits.into_iter().map(|(_, id)| id.clone()).collect())
}
