use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::types::{EdgeKind, Id, Node, NodeKind, Seconds, Workflow};

/// Adjacency over the Flow edges of a workflow whose endpoints both exist
/// and are things or doings.
#[derive(Debug, Default, Clone)]
pub struct FlowIndex<'a> {
    pub succ: BTreeMap<&'a Id, Vec<&'a Id>>,
    pub pred: BTreeMap<&'a Id, Vec<&'a Id>>,
}

impl<'a> FlowIndex<'a> {
    pub fn new(w: &'a Workflow) -> Self {
        let mut idx = FlowIndex::default();
        for (id, node) in &w.nodes {
            if node.is_flow_node() {
                idx.succ.entry(id).or_default();
                idx.pred.entry(id).or_default();
            }
        }
        for e in w.edges.values() {
            if e.kind != EdgeKind::Flow {
                continue;
            }
            let (Some((from, a)), Some((to, b))) = (w.nodes.get_key_value(&e.from), w.nodes.get_key_value(&e.to))
            else {
                continue;
            };
            if !a.is_flow_node() || !b.is_flow_node() {
                continue;
            }
            idx.succ.entry(from).or_default().push(to);
            idx.pred.entry(to).or_default().push(from);
        }
        idx
    }

    pub fn successors(&self, id: &Id) -> &[&'a Id] {
        self.succ.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predecessors(&self, id: &Id) -> &[&'a Id] {
        self.pred.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All nodes reachable from `starts` (inclusive) following Flow edges.
    pub fn reachable_from<I>(&self, starts: I) -> BTreeSet<&'a Id>
    where
        I: IntoIterator<Item = &'a Id>,
    {
        self.walk(starts, true)
    }

    /// All nodes that can reach one of `targets` (inclusive).
    pub fn reaching<I>(&self, targets: I) -> BTreeSet<&'a Id>
    where
        I: IntoIterator<Item = &'a Id>,
    {
        self.walk(targets, false)
    }

    fn walk<I>(&self, starts: I, forward: bool) -> BTreeSet<&'a Id>
    where
        I: IntoIterator<Item = &'a Id>,
    {
        let adj = if forward { &self.succ } else { &self.pred };
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&'a Id> = starts.into_iter().collect();
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                stack.extend(adj.get(id).into_iter().flatten().copied());
            }
        }
        seen
    }
}

impl Workflow {
    pub fn node(&self, id: &Id) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains_id(&self, id: &Id) -> bool {
        self.nodes.contains_key(id)
            || self.edges.contains_key(id)
            || self.segments.iter().any(|s| &s.id == id)
            || self.notes.iter().any(|n| &n.id == id)
            || self.links.iter().any(|l| &l.id == id)
    }

    pub fn flow_index(&self) -> FlowIndex<'_> {
        FlowIndex::new(self)
    }

    fn sort_key(&self, id: &Id) -> (Seconds, Id) {
        let start = self.nodes.get(id).map(|n| n.span().start).unwrap_or_default();
        (start, id.clone())
    }

    /// Things with no incoming Flow edge, ordered by start time then id.
    pub fn sources(&self) -> Vec<&Id> {
        let idx = self.flow_index();
        let mut out: Vec<&Id> = self
            .nodes
            .iter()
            .filter(|(id, n)| n.is_thing() && idx.predecessors(id).is_empty())
            .map(|(id, _)| id)
            .collect();
        out.sort_by_key(|id| self.sort_key(id));
        out
    }

    /// Things with no outgoing Flow edge, ordered by start time then id.
    pub fn sinks(&self) -> Vec<&Id> {
        let idx = self.flow_index();
        let mut out: Vec<&Id> = self
            .nodes
            .iter()
            .filter(|(id, n)| n.is_thing() && idx.successors(id).is_empty())
            .map(|(id, _)| id)
            .collect();
        out.sort_by_key(|id| self.sort_key(id));
        out
    }

    /// The earliest source thing, if any.
    pub fn primary_source(&self) -> Option<&Id> {
        self.sources().into_iter().next()
    }

    /// Canonical node order: things and doings in topological order of the
    /// Flow subgraph with ties broken by (start time, id), then reflective
    /// loops by (start time, id). Nodes caught in Flow cycles are appended
    /// after the acyclic part in (start time, id) order.
    pub fn canonical_order(&self) -> Vec<&Id> {
        let idx = self.flow_index();
        let mut indegree: BTreeMap<&Id, usize> = idx.pred.iter().map(|(id, p)| (*id, p.len())).collect();
        let mut heap: BinaryHeap<Reverse<(Seconds, &Id)>> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| Reverse((self.nodes[*id].span().start, *id)))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse((_, id))) = heap.pop() {
            order.push(id);
            for next in idx.successors(id) {
                let d = indegree.get_mut(next).expect("indexed node");
                *d -= 1;
                if *d == 0 {
                    heap.push(Reverse((self.nodes[*next].span().start, *next)));
                }
            }
        }
        if order.len() < indegree.len() {
            let placed: BTreeSet<&Id> = order.iter().copied().collect();
            let mut rest: Vec<&Id> = indegree.keys().copied().filter(|id| !placed.contains(id)).collect();
            rest.sort_by_key(|id| self.sort_key(id));
            order.extend(rest);
        }
        let mut loops: Vec<&Id> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.kind() == NodeKind::Reflective)
            .map(|(id, _)| id)
            .collect();
        loops.sort_by_key(|id| self.sort_key(id));
        order.extend(loops);
        order
    }

    /// Flow subgraph topological order, or `None` if it has a cycle.
    pub fn topological_order(&self) -> Option<Vec<&Id>> {
        let flow_count = self.nodes.values().filter(|n| n.is_flow_node()).count();
        let order = self.canonical_order();
        let idx = self.flow_index();
        let position: BTreeMap<&Id, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let acyclic = order[..flow_count]
            .iter()
            .all(|id| idx.successors(id).iter().all(|s| position[s] > position[id]));
        acyclic.then(|| order[..flow_count].to_vec())
    }
}
