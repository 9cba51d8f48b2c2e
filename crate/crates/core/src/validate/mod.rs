//! Well-formedness checks for workflows from any source, plus conservative
//! repairs for the violations that have a safe fix.

mod repair;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{segment_convexity_gaps, EdgeKind, Id, Node, NodeKind, Seconds, Workflow};

pub use repair::{repair, RepairAction, RepairError, RepairKind};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    Disconnected,
    TemporalGap,
    SequenceViolation,
    DanglingReflective,
    NonConvexSegment,
    TimestampOutOfRange,
    RevisionForward,
    FlowCycle,
    MultipleSources,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 9] = [
        Self::Disconnected,
        Self::TemporalGap,
        Self::SequenceViolation,
        Self::DanglingReflective,
        Self::NonConvexSegment,
        Self::TimestampOutOfRange,
        Self::RevisionForward,
        Self::FlowCycle,
        Self::MultipleSources,
    ];

    /// FlowCycle > SequenceViolation > Disconnected > everything else.
    pub fn severity(self) -> u8 {
        match self {
            Self::FlowCycle => 3,
            Self::SequenceViolation => 2,
            Self::Disconnected => 1,
            _ => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Disconnected => "Disconnected",
            Self::TemporalGap => "TemporalGap",
            Self::SequenceViolation => "SequenceViolation",
            Self::DanglingReflective => "DanglingReflective",
            Self::NonConvexSegment => "NonConvexSegment",
            Self::TimestampOutOfRange => "TimestampOutOfRange",
            Self::RevisionForward => "RevisionForward",
            Self::FlowCycle => "FlowCycle",
            Self::MultipleSources => "MultipleSources",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub subjects: Vec<Id>,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, subjects: Vec<Id>, detail: impl Into<String>) -> Self {
        Violation {
            code,
            subjects,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code)?;
        if !self.subjects.is_empty() {
            let ids: Vec<&str> = self.subjects.iter().map(Id::as_str).collect();
            write!(f, " [{}]", ids.join(", "))?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidationConfig {
    /// Uncovered stretches of video up to this length are tolerated.
    pub max_gap: Seconds,
    pub require_single_source: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            max_gap: Seconds::from_millis(1000),
            require_single_source: true,
        }
    }
}

/// Every violation in `w`, ordered by code and then first subject.
pub fn validate(w: &Workflow, cfg: &ValidationConfig) -> Vec<Violation> {
    let mut out = structural_violations(w, cfg);
    out.extend(coverage_violations(w, cfg.max_gap));
    sort_violations(&mut out);
    out
}

/// All checks except temporal coverage.
pub fn structural_violations(w: &Workflow, cfg: &ValidationConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    check_timestamps(w, &mut out);
    check_edges(w, &mut out);
    check_doings(w, &mut out);
    check_loops(w, &mut out);
    check_cycles(w, &mut out);
    if cfg.require_single_source {
        let sources = w.sources();
        if sources.len() > 1 {
            let mut subjects: Vec<Id> = sources.iter().map(|id| (*id).clone()).collect();
            subjects.sort();
            out.push(Violation::new(
                ViolationCode::MultipleSources,
                subjects,
                format!("{} things have no incoming flow", sources.len()),
            ));
        }
    }
    check_components(w, &mut out);
    check_segments(w, &mut out);
    sort_violations(&mut out);
    out
}

fn sort_violations(v: &mut [Violation]) {
    v.sort_by(|a, b| (a.code, a.subjects.first()).cmp(&(b.code, b.subjects.first())));
}

fn check_timestamps(w: &Workflow, out: &mut Vec<Violation>) {
    for (id, node) in &w.nodes {
        let span = node.span();
        if !span.fits_within(w.video.duration) {
            out.push(Violation::new(
                ViolationCode::TimestampOutOfRange,
                vec![id.clone()],
                format!("span {span} outside 0..{}", w.video.duration),
            ));
        }
    }
}

fn check_edges(w: &Workflow, out: &mut Vec<Violation>) {
    use NodeKind::*;
    for (id, e) in &w.edges {
        let ends = (w.nodes.get(&e.from), w.nodes.get(&e.to));
        let subject = vec![id.clone()];
        match e.kind {
            EdgeKind::Reflective => {
                let ok = match ends {
                    (Some(Node::Reflective(l)), Some(Node::Thing(t))) | (Some(Node::Thing(t)), Some(Node::Reflective(l))) => {
                        l.attached_thing == t.id
                    }
                    _ => false,
                };
                if !ok {
                    out.push(Violation::new(
                        ViolationCode::DanglingReflective,
                        subject,
                        "reflective edge must join a loop and its attached thing",
                    ));
                }
            }
            EdgeKind::Summary => out.push(Violation::new(
                ViolationCode::SequenceViolation,
                subject,
                "summary edges belong to derived views only",
            )),
            EdgeKind::Flow => {
                let kinds = (ends.0.map(Node::kind), ends.1.map(Node::kind));
                if !matches!(kinds, (Some(Thing), Some(Doing)) | (Some(Doing), Some(Thing))) {
                    out.push(Violation::new(
                        ViolationCode::SequenceViolation,
                        subject,
                        format!("flow {} -> {} breaks thing/doing alternation", kind_name(kinds.0), kind_name(kinds.1)),
                    ));
                }
            }
            EdgeKind::Revision => match ends {
                (Some(from @ Node::Thing(_)), Some(to @ Node::Thing(_))) => {
                    if to.span().start >= from.span().start {
                        out.push(Violation::new(
                            ViolationCode::RevisionForward,
                            subject,
                            format!(
                                "target starts at {} which is not before source start {}",
                                to.span().start,
                                from.span().start
                            ),
                        ));
                    }
                }
                _ => out.push(Violation::new(
                    ViolationCode::SequenceViolation,
                    subject,
                    "revision edges must join two things",
                )),
            },
        }
    }
}

fn kind_name(k: Option<NodeKind>) -> &'static str {
    k.map(NodeKind::as_str).unwrap_or("missing")
}

fn check_doings(w: &Workflow, out: &mut Vec<Violation>) {
    let idx = w.flow_index();
    for (id, node) in &w.nodes {
        if !node.is_doing() {
            continue;
        }
        let (i, o) = (idx.predecessors(id).len(), idx.successors(id).len());
        if i != 1 || o != 1 {
            out.push(Violation::new(
                ViolationCode::SequenceViolation,
                vec![id.clone()],
                format!("doing has flow in-degree {i} and out-degree {o}, expected 1 and 1"),
            ));
        }
    }
}

fn check_loops(w: &Workflow, out: &mut Vec<Violation>) {
    for (id, node) in &w.nodes {
        let Node::Reflective(lp) = node else { continue };
        let thing = &lp.attached_thing;
        let detail = match w.nodes.get(thing) {
            None => Some(format!("attached thing `{thing}` does not exist")),
            Some(n) if !n.is_thing() => Some(format!("attached node `{thing}` is a {}", n.kind())),
            Some(_) => {
                let has = |from: &Id, to: &Id| {
                    w.edges
                        .values()
                        .any(|e| e.kind == EdgeKind::Reflective && &e.from == from && &e.to == to)
                };
                (!has(thing, id) || !has(id, thing)).then(|| format!("missing reflective edge pair with `{thing}`"))
            }
        };
        if let Some(detail) = detail {
            out.push(Violation::new(ViolationCode::DanglingReflective, vec![id.clone()], detail));
        }
    }
}

/// Strongly connected components of the Flow subgraph that contain a cycle.
pub(crate) fn flow_cycles(w: &Workflow) -> Vec<Vec<Id>> {
    let idx = w.flow_index();
    // Kosaraju: finish order on the forward graph, then sweep the reverse.
    let mut finished: Vec<&Id> = Vec::new();
    let mut seen: BTreeSet<&Id> = BTreeSet::new();
    for start in idx.succ.keys() {
        if seen.contains(start) {
            continue;
        }
        let mut stack: Vec<(&Id, usize)> = vec![(start, 0)];
        seen.insert(start);
        while let Some((node, i)) = stack.pop() {
            let succ = idx.successors(node);
            if i < succ.len() {
                stack.push((node, i + 1));
                let next = succ[i];
                if seen.insert(next) {
                    stack.push((next, 0));
                }
            } else {
                finished.push(node);
            }
        }
    }
    let mut assigned: BTreeSet<&Id> = BTreeSet::new();
    let mut cycles = Vec::new();
    for root in finished.iter().rev() {
        if assigned.contains(root) {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![*root];
        assigned.insert(root);
        while let Some(n) = stack.pop() {
            comp.push(n);
            for p in idx.predecessors(n) {
                if assigned.insert(p) {
                    stack.push(p);
                }
            }
        }
        let self_loop = comp.len() == 1 && idx.successors(comp[0]).contains(&comp[0]);
        if comp.len() > 1 || self_loop {
            let mut ids: Vec<Id> = comp.into_iter().cloned().collect();
            ids.sort();
            cycles.push(ids);
        }
    }
    cycles
}

fn check_cycles(w: &Workflow, out: &mut Vec<Violation>) {
    for ids in flow_cycles(w) {
        let detail = format!("{} nodes form a flow cycle", ids.len());
        out.push(Violation::new(ViolationCode::FlowCycle, ids, detail));
    }
}

/// Weak components over every edge kind, each sorted, in order of their
/// smallest id.
pub(crate) fn weak_components(w: &Workflow) -> Vec<Vec<Id>> {
    let mut adj: BTreeMap<&Id, Vec<&Id>> = w.nodes.keys().map(|id| (id, Vec::new())).collect();
    for e in w.edges.values() {
        if let (Some((a, _)), Some((b, _))) = (w.nodes.get_key_value(&e.from), w.nodes.get_key_value(&e.to)) {
            adj.get_mut(a).expect("node").push(b);
            adj.get_mut(b).expect("node").push(a);
        }
    }
    let mut seen = BTreeSet::new();
    let mut comps = Vec::new();
    for start in w.nodes.keys() {
        if seen.contains(start) {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(n) = stack.pop() {
            comp.push(n.clone());
            for m in &adj[n] {
                if seen.insert(*m) {
                    stack.push(m);
                }
            }
        }
        comp.sort();
        comps.push(comp);
    }
    comps
}

/// The node that anchors the main component: the primary source, or the
/// earliest node when no source exists.
pub(crate) fn anchor(w: &Workflow) -> Option<Id> {
    w.primary_source().cloned().or_else(|| {
        w.nodes
            .values()
            .min_by_key(|n| (n.span().start, n.id().clone()))
            .map(|n| n.id().clone())
    })
}

fn check_components(w: &Workflow, out: &mut Vec<Violation>) {
    let comps = weak_components(w);
    if comps.len() < 2 {
        return;
    }
    let Some(anchor) = anchor(w) else { return };
    for comp in comps {
        if comp.binary_search(&anchor).is_ok() {
            continue;
        }
        let detail = format!("{} node(s) have no path to `{anchor}`", comp.len());
        out.push(Violation::new(ViolationCode::Disconnected, comp, detail));
    }
}

fn check_segments(w: &Workflow, out: &mut Vec<Violation>) {
    let mut owner: BTreeMap<&Id, &Id> = BTreeMap::new();
    for seg in &w.segments {
        let bad = |detail: String, extra: Vec<Id>| {
            let mut subjects = vec![seg.id.clone()];
            subjects.extend(extra);
            Violation::new(ViolationCode::NonConvexSegment, subjects, detail)
        };
        if seg.members.is_empty() {
            out.push(bad("segment has no members".into(), vec![]));
            continue;
        }
        let invalid: Vec<&Id> = seg
            .members
            .iter()
            .filter(|m| !w.nodes.get(*m).is_some_and(Node::is_flow_node))
            .collect();
        if !invalid.is_empty() {
            let names: Vec<&str> = invalid.iter().map(|id| id.as_str()).collect();
            out.push(bad(format!("members must be existing things or doings: {}", names.join(", ")), vec![]));
        }
        let gaps = segment_convexity_gaps(w, &seg.members);
        if !gaps.is_empty() {
            let names: Vec<&str> = gaps.iter().map(Id::as_str).collect();
            let detail = format!("path between members passes through non-members {}", names.join(", "));
            out.push(bad(detail, gaps));
        }
        let mut overlaps = BTreeSet::new();
        for m in &seg.members {
            match owner.get(m) {
                Some(other) if **other != seg.id => {
                    overlaps.insert((*other).clone());
                }
                _ => {
                    owner.insert(m, &seg.id);
                }
            }
        }
        if !overlaps.is_empty() {
            let names: Vec<&str> = overlaps.iter().map(Id::as_str).collect();
            out.push(bad(format!("overlaps segment {}", names.join(", ")), overlaps.into_iter().collect()));
        }
    }
}

/// Maximal stretches of `[0, duration]` not covered by any node span,
/// keeping only those longer than `max_gap`. Reflective loops count.
pub fn check_temporal_coverage(w: &Workflow, max_gap: Seconds) -> Vec<(Seconds, Seconds)> {
    let duration = w.video.duration;
    let mut spans: Vec<(Seconds, Seconds)> = w
        .nodes
        .values()
        .map(Node::span)
        .filter(|s| s.is_ordered() && s.start <= duration)
        .map(|s| (s.start, s.end.min(duration)))
        .collect();
    spans.sort();
    let mut gaps = Vec::new();
    let mut covered_to: Option<Seconds> = None;
    for (start, end) in spans {
        match covered_to {
            None if start > Seconds::ZERO => gaps.push((Seconds::ZERO, start)),
            Some(c) if start > c => gaps.push((c, start)),
            _ => {}
        }
        covered_to = Some(covered_to.map_or(end, |c| c.max(end)));
    }
    match covered_to {
        None => gaps.push((Seconds::ZERO, duration)),
        Some(c) if c < duration => gaps.push((c, duration)),
        _ => {}
    }
    gaps.retain(|(a, b)| b.millis() - a.millis() > max_gap.millis());
    gaps
}

fn coverage_violations(w: &Workflow, max_gap: Seconds) -> Vec<Violation> {
    check_temporal_coverage(w, max_gap)
        .into_iter()
        .map(|(a, b)| {
            let mut subjects = Vec::new();
            let before = w.nodes.values().filter(|n| n.span().end == a).map(|n| n.id()).min();
            let after = w.nodes.values().filter(|n| n.span().start == b).map(|n| n.id()).min();
            subjects.extend(before.cloned());
            subjects.extend(after.cloned());
            Violation::new(ViolationCode::TemporalGap, subjects, format!("gap [{a}, {b}]"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Connectivity {
    pub weakly_connected: bool,
    pub unreachable_from_source: Vec<Id>,
}

/// Weak connectivity over all edge kinds, and which nodes the primary
/// source cannot reach along Flow edges. Loops inherit reachability from
/// their attached thing.
pub fn check_connectivity(w: &Workflow) -> Connectivity {
    let weakly_connected = weak_components(w).len() <= 1;
    let idx = w.flow_index();
    let reached = match w.primary_source() {
        Some(src) => idx.reachable_from([src]),
        None => BTreeSet::new(),
    };
    let unreachable_from_source = w
        .nodes
        .iter()
        .filter(|(id, n)| match n {
            Node::Reflective(lp) => !reached.contains(&lp.attached_thing),
            _ => !reached.contains(id),
        })
        .map(|(id, _)| id.clone())
        .collect();
    Connectivity {
        weakly_connected,
        unreachable_from_source,
    }
}

/// Severity-weighted violation count used to order repairs.
pub fn violation_score(violations: &[Violation]) -> u64 {
    violations.iter().map(|v| 10u64.pow(v.code.severity() as u32)).sum()
}
