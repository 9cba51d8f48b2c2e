use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{validate, violation_score, weak_components, ValidationConfig, Violation, ViolationCode};
use crate::model::{DoingNode, Edge, EdgeKind, Id, Node, Seconds, TimeSpan, Workflow};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairKind {
    ConnectByTemporalAdjacency,
    ExtendSpan,
    DropEdge,
    ReverseRevision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAction {
    pub kind: RepairKind,
    pub subjects: Vec<Id>,
    pub rationale: String,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum RepairError {
    #[error("no safe repair for {code}")]
    Unrepairable {
        code: ViolationCode,
        /// Actions that were applied before getting stuck.
        applied: Vec<RepairAction>,
        remaining: Vec<Violation>,
        partial: Box<Workflow>,
    },
}

impl RepairError {
    pub fn code(&self) -> ViolationCode {
        match self {
            RepairError::Unrepairable { code, .. } => *code,
        }
    }
}

struct Candidate {
    actions: Vec<RepairAction>,
    result: Workflow,
}

/// Applies conservative fixes until `w` validates cleanly.
///
/// An action is only kept if it lowers the severity-weighted violation count
/// without adding violations of a more severe class than the one it
/// targets. Thing and doing nodes are never deleted; the only node ever
/// added is a bridging doing that joins two things across a time boundary.
pub fn repair(
    w: &Workflow,
    violations: &[Violation],
    cfg: &ValidationConfig,
) -> Result<(Workflow, Vec<RepairAction>), RepairError> {
    let mut current = w.clone();
    let mut found = violations.to_vec();
    let mut applied = Vec::new();
    // Every accepted step strictly lowers a finite score, so this bound is
    // never the reason to stop on realistic inputs.
    let budget = 4 * (w.nodes.len() + w.edges.len() + found.len()) + 16;
    for _ in 0..budget {
        if found.is_empty() {
            return Ok((current, applied));
        }
        let mut ordered: Vec<&Violation> = found.iter().collect();
        ordered.sort_by_key(|v| std::cmp::Reverse(v.code.severity()));
        let mut accepted = None;
        'search: for v in ordered {
            for cand in candidates(&current, v) {
                let after = validate(&cand.result, cfg);
                if acceptable(&found, &after, v.code) {
                    accepted = Some((cand, after));
                    break 'search;
                }
            }
        }
        match accepted {
            Some((cand, after)) => {
                current = cand.result;
                applied.extend(cand.actions);
                found = after;
            }
            None => break,
        }
    }
    if found.is_empty() {
        return Ok((current, applied));
    }
    let code = found
        .iter()
        .max_by_key(|v| (v.code.severity(), std::cmp::Reverse(v.code)))
        .map(|v| v.code)
        .expect("nonempty");
    Err(RepairError::Unrepairable {
        code,
        applied,
        remaining: found,
        partial: Box::new(current),
    })
}

fn acceptable(before: &[Violation], after: &[Violation], target: ViolationCode) -> bool {
    if violation_score(after) >= violation_score(before) {
        return false;
    }
    let count = |vs: &[Violation], sev: u8| vs.iter().filter(|v| v.code.severity() == sev).count();
    (target.severity() + 1..=3).all(|sev| count(after, sev) <= count(before, sev))
}

fn candidates(w: &Workflow, v: &Violation) -> Vec<Candidate> {
    match v.code {
        ViolationCode::TemporalGap => gap_candidates(w, v),
        ViolationCode::TimestampOutOfRange => v.subjects.iter().filter_map(|id| clamp_span(w, id)).collect(),
        ViolationCode::RevisionForward => v.subjects.iter().filter_map(|id| fix_revision(w, id)).collect(),
        ViolationCode::DanglingReflective => v.subjects.iter().flat_map(|id| fix_reflective(w, id)).collect(),
        ViolationCode::Disconnected => disconnected_candidates(w, v),
        ViolationCode::MultipleSources => v
            .subjects
            .iter()
            .filter(|id| Some(*id) != w.primary_source())
            .filter_map(|id| connect_from_before(w, id))
            .collect(),
        ViolationCode::SequenceViolation => v.subjects.iter().flat_map(|id| fix_sequence(w, id)).collect(),
        ViolationCode::FlowCycle => cycle_candidates(w, v),
        ViolationCode::NonConvexSegment => Vec::new(),
    }
}

fn action(kind: RepairKind, subjects: Vec<Id>, rationale: impl Into<String>) -> RepairAction {
    RepairAction {
        kind,
        subjects,
        rationale: rationale.into(),
    }
}

fn with_span(w: &Workflow, id: &Id, span: TimeSpan, why: String) -> Option<Candidate> {
    let mut result = w.clone();
    let node = result.nodes.get_mut(id)?;
    if node.span() == span {
        return None;
    }
    *node.span_mut() = span;
    Some(Candidate {
        actions: vec![action(RepairKind::ExtendSpan, vec![id.clone()], why)],
        result,
    })
}

fn parse_gap(detail: &str) -> Option<(Seconds, Seconds)> {
    let inner = detail.strip_prefix("gap [")?.strip_suffix(']')?;
    let (a, b) = inner.split_once(", ")?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

fn gap_candidates(w: &Workflow, v: &Violation) -> Vec<Candidate> {
    let Some((a, b)) = parse_gap(&v.detail) else {
        return Vec::new();
    };
    let mut before: Vec<&Node> = w.nodes.values().filter(|n| n.span().end == a && n.span().is_ordered()).collect();
    // things first, and sinks before other things
    let sinks: BTreeSet<&Id> = w.sinks().into_iter().collect();
    before.sort_by_key(|n| (!n.is_thing(), !sinks.contains(n.id()), n.id().clone()));
    let mut after: Vec<&Node> = w.nodes.values().filter(|n| n.span().start == b && n.span().is_ordered()).collect();
    after.sort_by_key(|n| (!n.is_thing(), n.id().clone()));

    let mut out = Vec::new();
    if a > Seconds::ZERO {
        for n in before {
            let span = TimeSpan::new(n.span().start, b);
            out.extend(with_span(w, n.id(), span, format!("extend end of `{}` from {a} to {b} to cover the gap", n.id())));
        }
    }
    for n in after {
        let span = TimeSpan::new(a, n.span().end);
        out.extend(with_span(w, n.id(), span, format!("extend start of `{}` from {b} back to {a} to cover the gap", n.id())));
    }
    out
}

fn clamp_span(w: &Workflow, id: &Id) -> Option<Candidate> {
    let span = w.nodes.get(id)?.span();
    let (lo, hi) = (span.start.min(span.end), span.start.max(span.end));
    let end = hi.min(w.video.duration);
    let start = lo.min(end);
    with_span(w, id, TimeSpan::new(start, end), format!("clamp span of `{id}` into the video"))
}

fn drop_edge(w: &Workflow, id: &Id, why: impl Into<String>) -> Option<Candidate> {
    let mut result = w.clone();
    result.edges.remove(id)?;
    Some(Candidate {
        actions: vec![action(RepairKind::DropEdge, vec![id.clone()], why)],
        result,
    })
}

fn fix_revision(w: &Workflow, id: &Id) -> Option<Candidate> {
    let e = w.edges.get(id)?;
    let (from, to) = (w.nodes.get(&e.from)?, w.nodes.get(&e.to)?);
    if from.is_thing() && to.is_thing() && to.span().start > from.span().start {
        let mut result = w.clone();
        let edge = result.edges.get_mut(id).expect("present");
        std::mem::swap(&mut edge.from, &mut edge.to);
        return Some(Candidate {
            actions: vec![action(
                RepairKind::ReverseRevision,
                vec![id.clone()],
                "revision pointed forward in time; reversed it",
            )],
            result,
        });
    }
    drop_edge(w, id, "revision joins states with equal start times")
}

fn fresh_id(w: &Workflow, base: String) -> Id {
    let mut id = Id::new(base.clone());
    let mut n = 2;
    while w.contains_id(&id) {
        id = Id::new(format!("{base}.{n}"));
        n += 1;
    }
    id
}

/// Distance in time between two spans, zero when they overlap.
fn span_distance(a: TimeSpan, b: TimeSpan) -> u64 {
    if a.end < b.start {
        b.start.millis() - a.end.millis()
    } else if b.end < a.start {
        a.start.millis() - b.end.millis()
    } else {
        0
    }
}

fn attach_pair(result: &mut Workflow, thing: &Id, lp: &Id) {
    for (from, to) in [(thing, lp), (lp, thing)] {
        let has = result
            .edges
            .values()
            .any(|e| e.kind == EdgeKind::Reflective && &e.from == from && &e.to == to);
        if !has {
            let mut edge = Edge::new(EdgeKind::Reflective, from.clone(), to.clone());
            edge.id = fresh_id(result, edge.id.to_string());
            result.edges.insert(edge.id.clone(), edge);
        }
    }
}

fn fix_reflective(w: &Workflow, id: &Id) -> Vec<Candidate> {
    if w.edges.contains_key(id) {
        return drop_edge(w, id, "reflective edge does not join a loop with its attached thing")
            .into_iter()
            .collect();
    }
    let Some(Node::Reflective(lp)) = w.nodes.get(id) else {
        return Vec::new();
    };
    if w.nodes.get(&lp.attached_thing).is_some_and(Node::is_thing) {
        let mut result = w.clone();
        attach_pair(&mut result, &lp.attached_thing, id);
        return vec![Candidate {
            actions: vec![action(
                RepairKind::ConnectByTemporalAdjacency,
                vec![id.clone(), lp.attached_thing.clone()],
                "restore the reflective edge pair",
            )],
            result,
        }];
    }
    // Attached thing is gone: drop whatever edges still hang off the loop
    // and reattach it to the thing nearest in time.
    let Some(nearest) = w
        .nodes
        .values()
        .filter(|n| n.is_thing())
        .min_by_key(|n| (span_distance(n.span(), lp.span), n.id().clone()))
        .map(|n| n.id().clone())
    else {
        return Vec::new();
    };
    let mut result = w.clone();
    let mut actions = Vec::new();
    let stale: Vec<Id> = w
        .edges
        .values()
        .filter(|e| &e.from == id || &e.to == id)
        .map(|e| e.id.clone())
        .collect();
    for e in &stale {
        result.edges.remove(e);
    }
    if !stale.is_empty() {
        actions.push(action(RepairKind::DropEdge, stale, format!("edges of `{id}` point at a missing thing")));
    }
    if let Some(Node::Reflective(l)) = result.nodes.get_mut(id) {
        l.attached_thing = nearest.clone();
    }
    attach_pair(&mut result, &nearest, id);
    actions.push(action(
        RepairKind::ConnectByTemporalAdjacency,
        vec![id.clone(), nearest.clone()],
        format!("reattach loop `{id}` to `{nearest}`, the thing nearest in time"),
    ));
    vec![Candidate { actions, result }]
}

/// Things ending no later than `t`, latest first, excluding `exclude`.
fn things_before<'a>(w: &'a Workflow, t: Seconds, exclude: &BTreeSet<&Id>) -> Vec<&'a Id> {
    let mut out: Vec<&Node> = w
        .nodes
        .values()
        .filter(|n| n.is_thing() && n.span().end <= t && !exclude.contains(n.id()))
        .collect();
    out.sort_by_key(|n| (std::cmp::Reverse(n.span().end), std::cmp::Reverse(n.span().start), n.id().clone()));
    out.into_iter().map(Node::id).collect()
}

/// Gives `target` (a thing or an unfed doing) an incoming Flow connection
/// from the latest thing that ends before it starts.
fn connect_from_before(w: &Workflow, target: &Id) -> Option<Candidate> {
    let node = w.nodes.get(target)?;
    let idx = w.flow_index();
    let downstream = idx.reachable_from([w.nodes.get_key_value(target)?.0]);
    let pred = things_before(w, node.span().start, &downstream).into_iter().next()?.clone();
    link_things(w, &pred, target)
}

/// Flow connection `pred -> target`, inserting a bridging doing when the
/// target is a thing.
fn link_things(w: &Workflow, pred: &Id, target: &Id) -> Option<Candidate> {
    let p = w.nodes.get(pred)?;
    let t = w.nodes.get(target)?;
    let mut result = w.clone();
    let mut subjects = vec![pred.clone(), target.clone()];
    match t {
        Node::Doing(_) => {
            let mut e = Edge::new(EdgeKind::Flow, pred.clone(), target.clone());
            e.id = fresh_id(&result, e.id.to_string());
            result.edges.insert(e.id.clone(), e);
        }
        Node::Thing(_) => {
            let span = TimeSpan::new(p.span().end, t.span().start);
            if !span.is_ordered() {
                return None;
            }
            let bridge_id = fresh_id(&result, format!("bridge.{pred}.{target}"));
            let bridge = DoingNode::new(bridge_id.clone(), "continue", span);
            result.nodes.insert(bridge_id.clone(), Node::Doing(bridge));
            for (a, b) in [(pred, &bridge_id), (&bridge_id, target)] {
                let mut e = Edge::new(EdgeKind::Flow, a.clone(), b.clone());
                e.id = fresh_id(&result, e.id.to_string());
                result.edges.insert(e.id.clone(), e);
            }
            subjects.push(bridge_id);
        }
        Node::Reflective(_) => return None,
    }
    Some(Candidate {
        actions: vec![action(
            RepairKind::ConnectByTemporalAdjacency,
            subjects,
            format!("connect `{pred}` to the next step `{target}` by time order"),
        )],
        result,
    })
}

fn disconnected_candidates(w: &Workflow, v: &Violation) -> Vec<Candidate> {
    let comp: BTreeSet<&Id> = v.subjects.iter().collect();
    let flow_members: Vec<&Node> = v
        .subjects
        .iter()
        .filter_map(|id| w.nodes.get(id))
        .filter(|n| n.is_flow_node())
        .collect();
    if flow_members.is_empty() {
        return v.subjects.iter().flat_map(|id| fix_reflective(w, id)).collect();
    }
    let idx = w.flow_index();
    let mut out = Vec::new();
    // Entry points of the stray component, earliest first.
    let mut entries: Vec<&Node> = flow_members
        .iter()
        .copied()
        .filter(|n| idx.predecessors(n.id()).is_empty())
        .collect();
    entries.sort_by_key(|n| (n.span().start, n.id().clone()));
    for entry in entries {
        out.extend(connect_from_before(w, entry.id()));
    }
    // Or the stray component precedes the main one: feed the main source
    // from the component's latest thing.
    let main = weak_components(w)
        .into_iter()
        .find(|c| c.iter().any(|id| !comp.contains(id)) && super::anchor(w).is_some_and(|a| c.contains(&a)));
    if let (Some(_), Some(anchor)) = (main, super::anchor(w)) {
        if let Some(a) = w.nodes.get(&anchor) {
            let outside: BTreeSet<&Id> = w.nodes.keys().filter(|id| !comp.contains(id)).collect();
            if let Some(pred) = things_before(w, a.span().start, &outside).into_iter().next() {
                out.extend(link_things(w, pred, &anchor));
            }
        }
    }
    out
}

fn fix_sequence(w: &Workflow, id: &Id) -> Vec<Candidate> {
    if let Some(e) = w.edges.get(id) {
        return drop_edge(w, id, format!("{} edge breaks thing/doing alternation", e.kind.as_str()))
            .into_iter()
            .collect();
    }
    let Some(node @ Node::Doing(_)) = w.nodes.get(id) else {
        return Vec::new();
    };
    let idx = w.flow_index();
    let key = w.nodes.get_key_value(id).expect("present").0;
    let preds = idx.predecessors(id);
    let succs = idx.successors(id);
    let mut out = Vec::new();
    if preds.is_empty() {
        out.extend(connect_from_before(w, id));
    }
    if succs.is_empty() {
        let upstream = idx.reaching([key]);
        let mut next: Vec<&Node> = w
            .nodes
            .values()
            .filter(|n| n.is_thing() && n.span().start >= node.span().end && !upstream.contains(n.id()))
            .collect();
        next.sort_by_key(|n| (!idx.predecessors(n.id()).is_empty(), n.span().start, n.id().clone()));
        if let Some(t) = next.first() {
            let mut result = w.clone();
            let mut e = Edge::new(EdgeKind::Flow, id.clone(), t.id().clone());
            e.id = fresh_id(&result, e.id.to_string());
            result.edges.insert(e.id.clone(), e);
            out.push(Candidate {
                actions: vec![action(
                    RepairKind::ConnectByTemporalAdjacency,
                    vec![id.clone(), t.id().clone()],
                    format!("feed the output of `{id}` into `{}`, the next thing in time", t.id()),
                )],
                result,
            });
        }
    }
    // Surplus edges: keep the one closest in time, try dropping the rest.
    for (neighbors, incoming) in [(preds, true), (succs, false)] {
        if neighbors.len() <= 1 {
            continue;
        }
        let mut ranked: Vec<&Id> = neighbors.to_vec();
        ranked.sort_by_key(|n| {
            let s = w.nodes[*n].span();
            let gap = if incoming {
                span_distance(s, node.span())
            } else {
                span_distance(node.span(), s)
            };
            (gap, (*n).clone())
        });
        for extra in &ranked[1..] {
            let (from, to) = if incoming { (*extra, id) } else { (id, *extra) };
            let edge = w
                .edges
                .values()
                .find(|e| e.kind == EdgeKind::Flow && &e.from == from && &e.to == to);
            if let Some(e) = edge {
                out.extend(drop_edge(w, &e.id, format!("`{id}` has more than one flow {}", if incoming { "input" } else { "output" })));
            }
        }
    }
    out
}

fn cycle_candidates(w: &Workflow, v: &Violation) -> Vec<Candidate> {
    let members: BTreeSet<&Id> = v.subjects.iter().collect();
    let mut backward: Vec<&Edge> = w
        .edges
        .values()
        .filter(|e| e.kind == EdgeKind::Flow && members.contains(&e.from) && members.contains(&e.to))
        .filter(|e| w.nodes[&e.from].span().start > w.nodes[&e.to].span().start)
        .collect();
    backward.sort_by_key(|e| {
        let back = w.nodes[&e.from].span().start.millis() - w.nodes[&e.to].span().start.millis();
        (std::cmp::Reverse(back), e.id.clone())
    });
    backward
        .into_iter()
        .filter_map(|e| drop_edge(w, &e.id, "flow edge runs backward in time and closes a cycle"))
        .collect()
}
