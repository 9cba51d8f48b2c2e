use std::collections::{BTreeMap, BTreeSet};

use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown node `{0}`")]
    UnknownNode(Id),
    #[error("unknown annotation target `{0}`")]
    UnknownTarget(Id),
    #[error("duplicate id `{0}`")]
    DuplicateId(Id),
    #[error("invalid id `{0}`")]
    InvalidId(String),
    #[error("node `{id}` is a {found}, expected a {expected}")]
    WrongKind { id: Id, expected: NodeKind, found: NodeKind },
    #[error("span {span} of `{id}` lies outside the video (duration {duration})")]
    SpanOutOfRange { id: Id, span: TimeSpan, duration: Seconds },
    #[error("`{0}` has an empty label")]
    EmptyLabel(Id),
    #[error("branch path {0} is empty")]
    EmptyPath(usize),
    #[error("branch path {0} must end with a closing doing when the branch rejoins, and only then")]
    PathClosing(usize),
    #[error("branch needs at least two paths, got {0}")]
    TooFewPaths(usize),
    #[error("rejoining at `{0}` would introduce a Flow cycle")]
    CycleIntroduced(Id),
    #[error("revision from `{from}` to `{to}` does not point strictly back in time")]
    RevisionForward { from: Id, to: Id },
    #[error("segment `{segment}` is not path-convex; missing {missing:?}")]
    NonConvexSegment { segment: Id, missing: Vec<Id> },
    #[error("segment `{segment}` overlaps segment `{other}`")]
    OverlappingSegment { segment: Id, other: Id },
    #[error("segment `{0}` has no members")]
    EmptySegment(Id),
    #[error("note `{0}` has empty text")]
    EmptyNote(Id),
    #[error("invalid url `{0}`")]
    InvalidUrl(String),
    #[error("invalid video metadata: {0}")]
    InvalidVideo(String),
    #[error("workflow already has a source thing")]
    SourceExists,
}

/// Where the paths of a branch meet again.
#[derive(Clone, Debug)]
pub enum Rejoin {
    Existing(Id),
    New(ThingNode),
}

/// One alternative path out of a branch point.
///
/// `steps` are (doing, resulting thing) pairs. When the branch rejoins,
/// `closing` is the final doing whose output is the rejoin thing.
#[derive(Clone, Debug, Default)]
pub struct BranchPath {
    pub steps: Vec<(DoingNode, ThingNode)>,
    pub closing: Option<DoingNode>,
}

impl BranchPath {
    pub fn open(steps: Vec<(DoingNode, ThingNode)>) -> Self {
        BranchPath { steps, closing: None }
    }

    pub fn closed(steps: Vec<(DoingNode, ThingNode)>, closing: DoingNode) -> Self {
        BranchPath {
            steps,
            closing: Some(closing),
        }
    }
}

pub enum Annotation {
    Note(NoteAnnotation),
    Link(ExternalLink),
}

impl Workflow {
    pub fn new(id: impl Into<Id>, video: VideoMeta) -> Result<Self, ModelError> {
        let id = id.into();
        if !Id::is_valid(id.as_str()) {
            return Err(ModelError::InvalidId(id.to_string()));
        }
        if video.duration == Seconds::ZERO {
            return Err(ModelError::InvalidVideo("duration must be positive".into()));
        }
        if video.uri.is_empty() {
            return Err(ModelError::InvalidVideo("uri must be nonempty".into()));
        }
        Ok(Workflow {
            id,
            video,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            segments: Vec::new(),
            notes: Vec::new(),
            links: Vec::new(),
            created_rev: 0,
        })
    }

    /// Seeds an empty workflow with its source thing.
    pub fn with_source(&self, thing: ThingNode) -> Result<Self, ModelError> {
        if !self.nodes.is_empty() {
            return Err(ModelError::SourceExists);
        }
        let mut next = self.clone();
        let mut fresh = FreshIds::new(&next);
        fresh.claim(&thing.id)?;
        next.check_label(&thing.id, &thing.label)?;
        next.check_span(&thing.id, thing.span)?;
        next.nodes.insert(thing.id.clone(), Node::Thing(thing));
        next.created_rev += 1;
        Ok(next)
    }

    /// `t_in + d = t_out`.
    pub fn compose_step(&self, t_in: &Id, d: DoingNode, t_out: ThingNode) -> Result<Self, ModelError> {
        self.require_kind(t_in, NodeKind::Thing)?;
        let mut next = self.clone();
        let mut fresh = FreshIds::new(&next);
        next.push_step(&mut fresh, t_in, d, t_out)?;
        next.created_rev += 1;
        Ok(next)
    }

    pub fn declare_branch(&self, at_thing: &Id, paths: Vec<BranchPath>, rejoin: Option<Rejoin>) -> Result<Self, ModelError> {
        self.require_kind(at_thing, NodeKind::Thing)?;
        if paths.len() < 2 {
            return Err(ModelError::TooFewPaths(paths.len()));
        }
        let mut next = self.clone();
        let mut fresh = FreshIds::new(&next);

        let rejoin_id = match &rejoin {
            None => None,
            Some(Rejoin::Existing(id)) => {
                self.require_kind(id, NodeKind::Thing)?;
                let idx = self.flow_index();
                if idx.reaching([at_thing]).contains(id) {
                    return Err(ModelError::CycleIntroduced(id.clone()));
                }
                Some(id.clone())
            }
            Some(Rejoin::New(thing)) => {
                fresh.claim(&thing.id)?;
                next.check_label(&thing.id, &thing.label)?;
                next.check_span(&thing.id, thing.span)?;
                next.nodes.insert(thing.id.clone(), Node::Thing(thing.clone()));
                Some(thing.id.clone())
            }
        };

        for (i, path) in paths.into_iter().enumerate() {
            if path.steps.is_empty() && path.closing.is_none() {
                return Err(ModelError::EmptyPath(i));
            }
            if path.closing.is_some() != rejoin_id.is_some() {
                return Err(ModelError::PathClosing(i));
            }
            let mut cursor = at_thing.clone();
            for (d, t) in path.steps {
                let t_id = t.id.clone();
                next.push_step(&mut fresh, &cursor, d, t)?;
                cursor = t_id;
            }
            if let (Some(d), Some(target)) = (path.closing, &rejoin_id) {
                fresh.claim(&d.id)?;
                next.check_label(&d.id, &d.label)?;
                next.check_span(&d.id, d.span)?;
                let d_id = d.id.clone();
                next.nodes.insert(d_id.clone(), Node::Doing(d));
                next.push_edge(&mut fresh, Edge::new(EdgeKind::Flow, cursor, d_id.clone()))?;
                next.push_edge(&mut fresh, Edge::new(EdgeKind::Flow, d_id, target.clone()))?;
            }
        }
        next.created_rev += 1;
        Ok(next)
    }

    pub fn attach_reflective(&self, thing_id: &Id, mut lp: ReflectiveLoopNode) -> Result<Self, ModelError> {
        self.require_kind(thing_id, NodeKind::Thing)?;
        let mut next = self.clone();
        let mut fresh = FreshIds::new(&next);
        fresh.claim(&lp.id)?;
        next.check_label(&lp.id, &lp.sensing)?;
        next.check_span(&lp.id, lp.span)?;
        lp.attached_thing = thing_id.clone();
        let loop_id = lp.id.clone();
        next.nodes.insert(loop_id.clone(), Node::Reflective(lp));
        next.push_edge(&mut fresh, Edge::new(EdgeKind::Reflective, thing_id.clone(), loop_id.clone()))?;
        next.push_edge(&mut fresh, Edge::new(EdgeKind::Reflective, loop_id, thing_id.clone()))?;
        next.created_rev += 1;
        Ok(next)
    }

    /// Records an undo back to an earlier thing-state.
    pub fn mark_revision(&self, from_thing: &Id, to_thing: &Id, reason: impl Into<String>) -> Result<Self, ModelError> {
        let from = self.require_kind(from_thing, NodeKind::Thing)?;
        let to = self.require_kind(to_thing, NodeKind::Thing)?;
        if to.span().start >= from.span().start {
            return Err(ModelError::RevisionForward {
                from: from_thing.clone(),
                to: to_thing.clone(),
            });
        }
        let mut next = self.clone();
        let mut fresh = FreshIds::new(&next);
        let mut edge = Edge::new(EdgeKind::Revision, from_thing.clone(), to_thing.clone());
        let mut n = 2;
        while fresh.taken(&edge.id) {
            edge.id = Id::new(format!("{}:{n}", Edge::default_id(from_thing, to_thing)));
            n += 1;
        }
        edge.label = reason.into();
        next.push_edge(&mut fresh, edge)?;
        next.created_rev += 1;
        Ok(next)
    }

    pub fn declare_segment(&self, id: impl Into<Id>, title: impl Into<String>, members: Vec<Id>) -> Result<Self, ModelError> {
        let seg = Segment {
            id: id.into(),
            title: title.into(),
            members,
        };
        let mut fresh = FreshIds::new(self);
        fresh.claim(&seg.id)?;
        if seg.members.is_empty() {
            return Err(ModelError::EmptySegment(seg.id));
        }
        for m in &seg.members {
            let node = self.nodes.get(m).ok_or_else(|| ModelError::UnknownNode(m.clone()))?;
            if !node.is_flow_node() {
                return Err(ModelError::WrongKind {
                    id: m.clone(),
                    expected: NodeKind::Thing,
                    found: node.kind(),
                });
            }
        }
        let missing = segment_convexity_gaps(self, &seg.members);
        if !missing.is_empty() {
            return Err(ModelError::NonConvexSegment {
                segment: seg.id,
                missing,
            });
        }
        let members: BTreeSet<&Id> = seg.members.iter().collect();
        if let Some(other) = self.segments.iter().find(|s| s.members.iter().any(|m| members.contains(m))) {
            return Err(ModelError::OverlappingSegment {
                segment: seg.id,
                other: other.id.clone(),
            });
        }
        let mut next = self.clone();
        next.segments.push(seg);
        next.created_rev += 1;
        Ok(next)
    }

    /// Appends a note or link. Notes are never deduplicated.
    pub fn annotate(&self, annotation: Annotation) -> Result<Self, ModelError> {
        let mut fresh = FreshIds::new(self);
        let mut next = self.clone();
        match annotation {
            Annotation::Note(note) => {
                fresh.claim(&note.id)?;
                if !self.nodes.contains_key(&note.target) && !self.edges.contains_key(&note.target) {
                    return Err(ModelError::UnknownTarget(note.target));
                }
                if note.text.trim().is_empty() {
                    return Err(ModelError::EmptyNote(note.id));
                }
                next.notes.push(note);
            }
            Annotation::Link(link) => {
                fresh.claim(&link.id)?;
                if !self.nodes.contains_key(&link.target) {
                    return Err(ModelError::UnknownTarget(link.target));
                }
                if url::Url::parse(&link.url).is_err() {
                    return Err(ModelError::InvalidUrl(link.url));
                }
                next.links.push(link);
            }
        }
        next.created_rev += 1;
        Ok(next)
    }

    /// Notes are append-only; editing one means removing it and adding a new one.
    pub fn remove_note(&self, note_id: &Id) -> Result<Self, ModelError> {
        let pos = self
            .notes
            .iter()
            .position(|n| &n.id == note_id)
            .ok_or_else(|| ModelError::UnknownTarget(note_id.clone()))?;
        let mut next = self.clone();
        next.notes.remove(pos);
        next.created_rev += 1;
        Ok(next)
    }

    /// Invariants the structural validator does not cover: id syntax and
    /// uniqueness across the shared namespace, map keys matching element
    /// ids, nonempty labels and note texts, annotation targets and link
    /// urls. Dangling edge endpoints are left to `validate`. Each error is
    /// paired with the id it concerns.
    pub fn field_errors(&self) -> Vec<(Id, ModelError)> {
        let mut out = Vec::new();
        if self.video.duration == Seconds::ZERO {
            out.push((self.id.clone(), ModelError::InvalidVideo("duration must be positive".into())));
        }
        if self.video.uri.is_empty() {
            out.push((self.id.clone(), ModelError::InvalidVideo("uri must be nonempty".into())));
        }
        let mut seen = BTreeSet::new();
        let mut claim = |id: &Id, out: &mut Vec<(Id, ModelError)>| {
            if !Id::is_valid(id.as_str()) {
                out.push((id.clone(), ModelError::InvalidId(id.to_string())));
            } else if !seen.insert(id.clone()) {
                out.push((id.clone(), ModelError::DuplicateId(id.clone())));
            }
        };
        for (key, node) in &self.nodes {
            claim(key, &mut out);
            if key != node.id() {
                out.push((key.clone(), ModelError::InvalidId(node.id().to_string())));
            }
            if node.is_flow_node() && node.label().trim().is_empty() {
                out.push((key.clone(), ModelError::EmptyLabel(key.clone())));
            }
        }
        for (key, edge) in &self.edges {
            claim(key, &mut out);
            if key != &edge.id {
                out.push((key.clone(), ModelError::InvalidId(edge.id.to_string())));
            }
        }
        for seg in &self.segments {
            claim(&seg.id, &mut out);
        }
        for note in &self.notes {
            claim(&note.id, &mut out);
            if !self.nodes.contains_key(&note.target) && !self.edges.contains_key(&note.target) {
                out.push((note.id.clone(), ModelError::UnknownTarget(note.target.clone())));
            }
            if note.text.trim().is_empty() {
                out.push((note.id.clone(), ModelError::EmptyNote(note.id.clone())));
            }
        }
        for link in &self.links {
            claim(&link.id, &mut out);
            if !self.nodes.contains_key(&link.target) {
                out.push((link.id.clone(), ModelError::UnknownTarget(link.target.clone())));
            }
            if url::Url::parse(&link.url).is_err() {
                out.push((link.id.clone(), ModelError::InvalidUrl(link.url.clone())));
            }
        }
        out
    }

    fn require_kind(&self, id: &Id, kind: NodeKind) -> Result<&Node, ModelError> {
        let node = self.nodes.get(id).ok_or_else(|| ModelError::UnknownNode(id.clone()))?;
        if node.kind() != kind {
            return Err(ModelError::WrongKind {
                id: id.clone(),
                expected: kind,
                found: node.kind(),
            });
        }
        Ok(node)
    }

    fn check_span(&self, id: &Id, span: TimeSpan) -> Result<(), ModelError> {
        if span.fits_within(self.video.duration) {
            Ok(())
        } else {
            Err(ModelError::SpanOutOfRange {
                id: id.clone(),
                span,
                duration: self.video.duration,
            })
        }
    }

    fn check_label(&self, id: &Id, label: &str) -> Result<(), ModelError> {
        if label.trim().is_empty() {
            Err(ModelError::EmptyLabel(id.clone()))
        } else {
            Ok(())
        }
    }

    fn push_step(&mut self, fresh: &mut FreshIds, t_in: &Id, d: DoingNode, t_out: ThingNode) -> Result<(), ModelError> {
        fresh.claim(&d.id)?;
        fresh.claim(&t_out.id)?;
        if d.id == t_out.id {
            return Err(ModelError::DuplicateId(d.id));
        }
        self.check_label(&d.id, &d.label)?;
        self.check_label(&t_out.id, &t_out.label)?;
        self.check_span(&d.id, d.span)?;
        self.check_span(&t_out.id, t_out.span)?;
        let (d_id, t_id) = (d.id.clone(), t_out.id.clone());
        self.nodes.insert(d_id.clone(), Node::Doing(d));
        self.nodes.insert(t_id.clone(), Node::Thing(t_out));
        self.push_edge(fresh, Edge::new(EdgeKind::Flow, t_in.clone(), d_id.clone()))?;
        self.push_edge(fresh, Edge::new(EdgeKind::Flow, d_id, t_id))?;
        Ok(())
    }

    fn push_edge(&mut self, fresh: &mut FreshIds, edge: Edge) -> Result<(), ModelError> {
        fresh.claim(&edge.id)?;
        self.edges.insert(edge.id.clone(), edge);
        Ok(())
    }
}

/// Tracks ids in use while an operation adds several elements.
struct FreshIds {
    used: BTreeSet<Id>,
}

impl FreshIds {
    fn new(w: &Workflow) -> Self {
        let mut used: BTreeSet<Id> = w.nodes.keys().chain(w.edges.keys()).cloned().collect();
        used.extend(w.segments.iter().map(|s| s.id.clone()));
        used.extend(w.notes.iter().map(|n| n.id.clone()));
        used.extend(w.links.iter().map(|l| l.id.clone()));
        FreshIds { used }
    }

    fn taken(&self, id: &Id) -> bool {
        self.used.contains(id)
    }

    fn claim(&mut self, id: &Id) -> Result<(), ModelError> {
        if !Id::is_valid(id.as_str()) {
            return Err(ModelError::InvalidId(id.to_string()));
        }
        if !self.used.insert(id.clone()) {
            return Err(ModelError::DuplicateId(id.clone()));
        }
        Ok(())
    }
}

/// Nodes outside `members` that lie on a Flow path between two members.
/// Empty when the member set is path-convex.
pub fn segment_convexity_gaps(w: &Workflow, members: &[Id]) -> Vec<Id> {
    let idx = w.flow_index();
    let member_set: BTreeSet<&Id> = members.iter().collect();
    let present: Vec<&Id> = members
        .iter()
        .filter_map(|m| w.nodes.get_key_value(m).map(|(k, _)| k))
        .collect();
    let after = idx.reachable_from(present.iter().copied());
    let before = idx.reaching(present.iter().copied());
    after
        .intersection(&before)
        .filter(|id| !member_set.contains(*id))
        .map(|id| (*id).clone())
        .collect()
}

/// How many instances of each grammar pattern a workflow documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct PatternCensus {
    /// Flow edges whose endpoints carry different detail levels.
    pub granularity_shifts: usize,
    pub reflective_loops: usize,
    pub notes_to_self: usize,
    pub external_links: usize,
    pub segments: usize,
    /// Things with more than one outgoing Flow edge.
    pub branches: usize,
    pub revision_loops: usize,
}

impl PatternCensus {
    pub fn of(w: &Workflow) -> Self {
        let detail = |id: &Id| w.nodes.get(id).map(Node::detail);
        let flow = || w.edges.values().filter(|e| e.kind == EdgeKind::Flow);
        let idx = w.flow_index();
        PatternCensus {
            granularity_shifts: flow().filter(|e| detail(&e.from) != detail(&e.to)).count(),
            reflective_loops: w.nodes.values().filter(|n| n.kind() == NodeKind::Reflective).count(),
            notes_to_self: w.notes.len(),
            external_links: w.links.len(),
            segments: w.segments.len(),
            branches: w
                .nodes
                .iter()
                .filter(|(id, n)| n.is_thing() && idx.successors(id).len() > 1)
                .count(),
            revision_loops: w.edges.values().filter(|e| e.kind == EdgeKind::Revision).count(),
        }
    }

    pub fn counts(&self) -> [(&'static str, usize); 7] {
        [
            ("Granularity Shifts", self.granularity_shifts),
            ("Reflective Loops", self.reflective_loops),
            ("Note-to-Self", self.notes_to_self),
            ("External Links", self.external_links),
            ("Segments", self.segments),
            ("Branches", self.branches),
            ("Revision Loops", self.revision_loops),
        ]
    }

    pub fn covers_all_patterns(&self) -> bool {
        self.counts().iter().all(|(_, n)| *n > 0)
    }
}
