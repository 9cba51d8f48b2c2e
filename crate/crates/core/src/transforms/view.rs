use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::model::{Edge, EdgeKind, GranularityLevel, Id, Node, TimeSpan, Workflow};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ViewError {
    #[error("unknown segment `{0}`")]
    UnknownSegment(Id),
}

/// A Thing-to-Thing connector standing for a run of hidden steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryEdge {
    pub id: Id,
    pub from: Id,
    pub to: Id,
    pub label: String,
    /// Every hidden node on a path between the two ends.
    pub hidden: Vec<Id>,
    /// Hidden nodes not already counted by an earlier summary.
    pub counted: usize,
    pub span: TimeSpan,
    /// The collapsed segment this summary stands for, if any.
    pub segment: Option<Id>,
}

impl SummaryEdge {
    pub fn as_edge(&self) -> Edge {
        Edge {
            id: self.id.clone(),
            kind: EdgeKind::Summary,
            from: self.from.clone(),
            to: self.to.clone(),
            label: self.label.clone(),
        }
    }
}

/// What a consumer sees of a workflow at one level of detail, with some
/// segments folded away.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct View {
    pub level: GranularityLevel,
    pub visible: BTreeSet<Id>,
    pub summaries: Vec<SummaryEdge>,
    pub collapsed: BTreeSet<Id>,
    base: Arc<Workflow>,
}

impl View {
    pub fn base(&self) -> &Workflow {
        &self.base
    }

    pub fn base_id(&self) -> &Id {
        &self.base.id
    }

    pub fn base_rev(&self) -> u64 {
        self.base.created_rev
    }

    /// Original edges whose ends are both visible.
    pub fn visible_edges(&self) -> impl Iterator<Item = &Edge> {
        self.base
            .edges
            .values()
            .filter(|e| self.visible.contains(&e.from) && self.visible.contains(&e.to))
    }

    /// Visible nodes in the base workflow's canonical order.
    pub fn visible_in_order(&self) -> Vec<&Id> {
        self.base.canonical_order().into_iter().filter(|id| self.visible.contains(*id)).collect()
    }

    pub fn collapse_segment(&self, seg: &Id) -> Result<View, ViewError> {
        self.require_segment(seg)?;
        let mut collapsed = self.collapsed.clone();
        collapsed.insert(seg.clone());
        Ok(compute(self.base.clone(), self.level, collapsed))
    }

    pub fn expand_segment(&self, seg: &Id) -> Result<View, ViewError> {
        self.require_segment(seg)?;
        let mut collapsed = self.collapsed.clone();
        collapsed.remove(seg);
        Ok(compute(self.base.clone(), self.level, collapsed))
    }

    pub fn with_level(&self, level: GranularityLevel) -> View {
        compute(self.base.clone(), level, self.collapsed.clone())
    }

    fn require_segment(&self, seg: &Id) -> Result<(), ViewError> {
        if self.base.segments.iter().any(|s| &s.id == seg) {
            Ok(())
        } else {
            Err(ViewError::UnknownSegment(seg.clone()))
        }
    }
}

impl Serialize for View {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let summaries: Vec<serde_json::Value> = self
            .summaries
            .iter()
            .map(|e| {
                serde_json::json!({
                    "id": e.id, "kind": "summary", "from": e.from, "to": e.to, "label": e.label,
                    "hidden": e.hidden, "counted": e.counted,
                    "span": {
                        "start_s": crate::notation::seconds_value(e.span.start),
                        "end_s": crate::notation::seconds_value(e.span.end),
                    },
                    "segment": e.segment,
                })
            })
            .collect();
        let mut st = s.serialize_struct("View", 5)?;
        st.serialize_field("base", &serde_json::json!({"id": self.base.id, "rev": self.base.created_rev}))?;
        st.serialize_field("level", &self.level)?;
        st.serialize_field("visible", &self.visible_in_order())?;
        st.serialize_field("summaries", &summaries)?;
        st.serialize_field("collapsed", &self.collapsed)?;
        st.end()
    }
}

/// Nodes with detail up to `level`, plus the source and sink things, with
/// each hidden run contracted to a summary edge.
pub fn granularity_view(w: &Workflow, level: GranularityLevel) -> View {
    compute(Arc::new(w.clone()), level, BTreeSet::new())
}

/// Same as [`granularity_view`] without copying an already shared workflow.
pub fn granularity_view_shared(w: Arc<Workflow>, level: GranularityLevel) -> View {
    compute(w, level, BTreeSet::new())
}

fn compute(base: Arc<Workflow>, level: GranularityLevel, collapsed: BTreeSet<Id>) -> View {
    let w = &*base;
    let idx = w.flow_index();
    let mut pinned: BTreeSet<&Id> = w.sources().into_iter().collect();
    pinned.extend(w.sinks());

    let mut hidden: BTreeSet<&Id> = w
        .nodes
        .iter()
        .filter(|(id, n)| n.is_flow_node() && n.detail() > level && !pinned.contains(id))
        .map(|(id, _)| id)
        .collect();
    // Folded segments hide everything but the things where the segment
    // meets the rest of the graph.
    let mut owner: BTreeMap<&Id, &Id> = BTreeMap::new();
    for seg in w.segments.iter().filter(|s| collapsed.contains(&s.id)) {
        let members: BTreeSet<&Id> = seg.members.iter().collect();
        for m in &seg.members {
            let Some(node) = w.nodes.get(m) else { continue };
            let crosses = idx.predecessors(m).iter().chain(idx.successors(m)).any(|n| !members.contains(n));
            let boundary = node.is_thing() && (crosses || pinned.contains(m));
            if !boundary {
                hidden.insert(m);
                owner.entry(m).or_insert(&seg.id);
            }
        }
    }
    // A doing is only shown between two shown things.
    let demoted: Vec<&Id> = w
        .nodes
        .iter()
        .filter(|(id, n)| n.is_doing() && !hidden.contains(id))
        .filter(|(id, _)| idx.predecessors(id).iter().chain(idx.successors(id)).any(|t| hidden.contains(t)))
        .map(|(id, _)| id)
        .collect();
    hidden.extend(demoted);

    let mut visible: BTreeSet<Id> = BTreeSet::new();
    for (id, n) in &w.nodes {
        let shown = match n {
            Node::Reflective(lp) => {
                n.detail() <= level
                    && w.nodes.get(&lp.attached_thing).is_some_and(Node::is_thing)
                    && !hidden.contains(&lp.attached_thing)
            }
            _ => !hidden.contains(id),
        };
        if shown {
            visible.insert(id.clone());
        }
    }

    let summaries = summarize(w, &visible, &hidden, &owner);
    View { level, visible, summaries, collapsed, base }
}

fn summarize(w: &Workflow, visible: &BTreeSet<Id>, hidden: &BTreeSet<&Id>, owner: &BTreeMap<&Id, &Id>) -> Vec<SummaryEdge> {
    let idx = w.flow_index();
    let mut counted: BTreeSet<&Id> = BTreeSet::new();
    let mut out = Vec::new();
    for from in w.canonical_order() {
        if !visible.contains(from) || !w.nodes[from].is_thing() {
            continue;
        }
        // hidden nodes reachable from `from` without passing a visible node
        let mut region: BTreeSet<&Id> = BTreeSet::new();
        let mut exits: BTreeSet<&Id> = BTreeSet::new();
        let mut stack: Vec<&Id> = idx.successors(from).iter().copied().filter(|n| hidden.contains(n)).collect();
        while let Some(n) = stack.pop() {
            if !region.insert(n) {
                continue;
            }
            for s in idx.successors(n) {
                if hidden.contains(s) {
                    stack.push(s);
                } else if visible.contains(*s) {
                    exits.insert(s);
                }
            }
        }
        let mut exits: Vec<&Id> = exits.into_iter().collect();
        exits.sort_by_key(|id| (w.nodes[*id].span().start, (*id).clone()));
        for to in exits {
            let back = idx.reaching([to]);
            let on_path: Vec<&Id> = region.iter().copied().filter(|n| back.contains(n)).collect();
            let span = on_path
                .iter()
                .map(|n| w.nodes[*n].span())
                .reduce(|a, b| a.cover(&b))
                .expect("an exit is reached through at least one hidden node");
            let fresh = on_path.iter().filter(|n| counted.insert(n)).count();
            let segment = on_path.iter().find_map(|n| owner.get(n)).map(|s| (*s).clone());
            let label = match &segment {
                Some(seg) => w.segments.iter().find(|s| &s.id == seg).map(|s| s.title.clone()).unwrap_or_default(),
                None if on_path.len() == 1 => "1 hidden step".to_owned(),
                None => format!("{} hidden steps", on_path.len()),
            };
            out.push(SummaryEdge {
                id: Id::new(format!("summary:{from}:{to}")),
                from: from.clone(),
                to: to.clone(),
                label,
                hidden: on_path.into_iter().cloned().collect(),
                counted: fresh,
                span,
                segment,
            });
        }
    }
    out
}
