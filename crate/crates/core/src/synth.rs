//! Random workflows built only through the constructive operations.
//!
//! Every created thing or doing takes the next slot on a shared timeline,
//! so the result covers the whole video. Used by property tests and
//! benchmarks.

use chrono::{DateTime, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

use crate::model::{
    Annotation, BranchPath, DoingNode, Edge, EdgeKind, ExternalLink, GranularityLevel, Id, LinkSource, Node,
    NoteAnnotation, ReflectiveLoopNode, Rejoin, Seconds, Segment, ThingNode, TimeSpan, VideoMeta, Workflow,
};
use crate::validate::ViolationCode;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Things and doings to create, approximately.
    pub flow_nodes: std::ops::RangeInclusive<usize>,
    /// Slot length per node, in milliseconds.
    pub slot_ms: std::ops::RangeInclusive<u64>,
    pub branch_prob: f64,
    pub loop_prob: f64,
    pub revision_prob: f64,
    pub note_prob: f64,
    pub link_prob: f64,
    pub max_segments: usize,
    /// Draw labels from a vocabulary with quotes, escapes and non-ASCII.
    pub awkward_text: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            flow_nodes: 3..=40,
            slot_ms: 200..=30_000,
            branch_prob: 0.12,
            loop_prob: 0.12,
            revision_prob: 0.06,
            note_prob: 0.08,
            link_prob: 0.05,
            max_segments: 3,
            awkward_text: true,
        }
    }
}

const WORDS: [&str; 16] = [
    "yarn", "chain", "ring", "cast on", "knit", "purl", "blank", "carve", "rough out", "bowl", "handle", "fold",
    "crease", "sketch", "shade", "finish",
];

const AWKWARD: [&str; 8] = ["say \"hi\"", "back\\slash", "tab\there", "two\nlines", "ñandú", "百", "#not a comment", "{ braces }"];

fn label(rng: &mut StdRng, cfg: &SynthConfig) -> String {
    let mut s = WORDS.choose(rng).expect("nonempty").to_string();
    if cfg.awkward_text && rng.random_bool(0.2) {
        s.push(' ');
        s.push_str(AWKWARD.choose(rng).expect("nonempty"));
    }
    if rng.random_bool(0.3) {
        s.push_str(&format!(" {}", rng.random_range(1..100)));
    }
    s
}

fn detail(rng: &mut StdRng) -> GranularityLevel {
    *GranularityLevel::ALL.choose(rng).expect("nonempty")
}

fn names(rng: &mut StdRng, cfg: &SynthConfig) -> Vec<String> {
    (0..rng.random_range(0..3)).map(|_| label(rng, cfg)).collect()
}

struct Gen<'c> {
    rng: StdRng,
    cfg: &'c SynthConfig,
    clock: Seconds,
    counter: usize,
}

impl Gen<'_> {
    fn slot(&mut self) -> TimeSpan {
        let len = self.rng.random_range(self.cfg.slot_ms.clone());
        let start = self.clock;
        self.clock = Seconds::from_millis(start.millis() + len);
        TimeSpan::new(start, self.clock)
    }

    fn next_id(&mut self, prefix: &str) -> Id {
        self.counter += 1;
        Id::new(format!("{prefix}{}", self.counter))
    }

    fn thing(&mut self) -> ThingNode {
        let id = self.next_id("T");
        let span = self.slot();
        let mut t = ThingNode::new(id, label(&mut self.rng, self.cfg), span).with_detail(detail(&mut self.rng));
        t.stuff = names(&mut self.rng, self.cfg);
        if self.rng.random_bool(0.2) {
            t.description = label(&mut self.rng, self.cfg);
        }
        t
    }

    fn doing(&mut self) -> DoingNode {
        let id = self.next_id("D");
        let span = self.slot();
        let mut d = DoingNode::new(id, label(&mut self.rng, self.cfg), span).with_detail(detail(&mut self.rng));
        d.tools = names(&mut self.rng, self.cfg);
        if self.rng.random_bool(0.2) {
            d.description = label(&mut self.rng, self.cfg);
        }
        d
    }

    fn timestamp(&mut self) -> DateTime<Utc> {
        let secs = self.rng.random_range(1_500_000_000..1_900_000_000);
        let nanos = if self.rng.random_bool(0.5) { 0 } else { self.rng.random_range(0..1_000_000_000) };
        Utc.timestamp_opt(secs, nanos).single().expect("in range")
    }

    fn run(&mut self, duration: Seconds) -> Workflow {
        let video = VideoMeta::new(
            format!("file:video-{}.mp4", self.rng.random_range(0..1000)),
            duration,
            label(&mut self.rng, self.cfg),
        );
        let first = self.thing();
        let mut w = Workflow::new("synth", video)
            .and_then(|w| w.with_source(first))
            .expect("fresh workflow accepts a source");
        let target = self.rng.random_range(self.cfg.flow_nodes.clone());
        let mut flow_nodes = 1;
        while flow_nodes < target {
            let sinks: Vec<Id> = w.sinks().into_iter().cloned().collect();
            // mostly extend the latest open end
            let at = if self.rng.random_bool(0.7) {
                sinks.iter().max_by_key(|id| w.nodes[*id].span().end).expect("a sink exists").clone()
            } else {
                sinks.choose(&mut self.rng).expect("a sink exists").clone()
            };
            if self.rng.random_bool(self.cfg.branch_prob) && target - flow_nodes >= 4 {
                let rejoin = self.rng.random_bool(0.7);
                let n_paths = self.rng.random_range(2..=3);
                let mut paths = Vec::new();
                for _ in 0..n_paths {
                    let len = self.rng.random_range(if rejoin { 0..=2 } else { 1..=2 });
                    let steps: Vec<(DoingNode, ThingNode)> = (0..len).map(|_| (self.doing(), self.thing())).collect();
                    flow_nodes += 2 * len;
                    paths.push(if rejoin { BranchPath::closed(steps, self.doing()) } else { BranchPath::open(steps) });
                    flow_nodes += usize::from(rejoin);
                }
                let rejoin = rejoin.then(|| {
                    flow_nodes += 1;
                    Rejoin::New(self.thing())
                });
                w = w.declare_branch(&at, paths, rejoin).expect("fresh branch is valid");
            } else {
                let (d, t) = (self.doing(), self.thing());
                w = w.compose_step(&at, d, t).expect("fresh step is valid");
                flow_nodes += 2;
            }
            self.decorate(&mut w);
        }
        self.segments(&mut w);
        w
    }

    fn things(w: &Workflow) -> Vec<Id> {
        w.nodes.values().filter(|n| n.is_thing()).map(|n| n.id().clone()).collect()
    }

    fn decorate(&mut self, w: &mut Workflow) {
        let things = Self::things(w);
        if self.rng.random_bool(self.cfg.loop_prob) {
            let t = things.choose(&mut self.rng).expect("things exist").clone();
            let span = w.nodes[&t].span();
            let a = self.rng.random_range(span.start.millis()..=span.end.millis());
            let b = self.rng.random_range(a..=span.end.millis());
            let id = self.next_id("L");
            let mut lp = ReflectiveLoopNode::new(
                id,
                label(&mut self.rng, self.cfg),
                if self.rng.random_bool(0.5) { label(&mut self.rng, self.cfg) } else { String::new() },
                TimeSpan::new(Seconds::from_millis(a), Seconds::from_millis(b)),
            );
            lp.detail = detail(&mut self.rng);
            *w = w.attach_reflective(&t, lp).expect("loop on existing thing");
        }
        if things.len() >= 2 && self.rng.random_bool(self.cfg.revision_prob) {
            let mut pair: Vec<&Id> = things.choose_multiple(&mut self.rng, 2).collect();
            pair.sort_by_key(|id| w.nodes[*id].span().start);
            let (early, late) = (pair[0].clone(), pair[1].clone());
            if w.nodes[&early].span().start < w.nodes[&late].span().start {
                let reason = label(&mut self.rng, self.cfg);
                *w = w.mark_revision(&late, &early, reason).expect("revision points back");
            }
        }
        if self.rng.random_bool(self.cfg.note_prob) {
            let targets: Vec<Id> = w.nodes.keys().chain(w.edges.keys()).cloned().collect();
            let note = NoteAnnotation {
                id: self.next_id("N"),
                target: targets.choose(&mut self.rng).expect("nonempty").clone(),
                text: label(&mut self.rng, self.cfg),
                author: if self.rng.random_bool(0.5) { "maker".into() } else { String::new() },
                created_at: if self.rng.random_bool(0.3) { DateTime::<Utc>::UNIX_EPOCH } else { self.timestamp() },
            };
            *w = w.annotate(Annotation::Note(note)).expect("note on existing target");
        }
        if self.rng.random_bool(self.cfg.link_prob) {
            let targets: Vec<&Id> = w.nodes.keys().collect();
            let link = ExternalLink {
                id: self.next_id("K"),
                target: (*targets.choose(&mut self.rng).expect("nonempty")).clone(),
                url: format!("https://example.org/ref/{}", self.rng.random_range(0..10_000)),
                title: if self.rng.random_bool(0.5) { label(&mut self.rng, self.cfg) } else { String::new() },
                source: *[LinkSource::Detected, LinkSource::Searched, LinkSource::Manual].choose(&mut self.rng).expect("nonempty"),
            };
            *w = w.annotate(Annotation::Link(link)).expect("link on existing node");
        }
    }

    /// Runs of consecutive nodes along the canonical order, kept only when
    /// the operation accepts them.
    fn segments(&mut self, w: &mut Workflow) {
        let order: Vec<Id> = w.canonical_order().into_iter().filter(|id| w.nodes[*id].is_flow_node()).cloned().collect();
        for _ in 0..self.rng.random_range(0..=self.cfg.max_segments) {
            let a = self.rng.random_range(0..order.len());
            let b = self.rng.random_range(a..order.len().min(a + 6));
            let members = order[a..=b].to_vec();
            let id = self.next_id("S");
            let title = label(&mut self.rng, self.cfg);
            if let Ok(next) = w.declare_segment(id, title, members) {
                *w = next;
            }
        }
    }
}

/// Generates a workflow from `seed`. Equal seeds give equal workflows.
pub fn random_workflow(seed: u64, cfg: &SynthConfig) -> Workflow {
    // A first run on an unbounded video measures the timeline; the second
    // replays the same choices against the exact duration.
    let mut probe = Gen { rng: StdRng::seed_from_u64(seed), cfg, clock: Seconds::ZERO, counter: 0 };
    probe.run(Seconds::from_millis(u64::MAX / 4));
    let duration = probe.clock;
    let mut gen = Gen { rng: StdRng::seed_from_u64(seed), cfg, clock: Seconds::ZERO, counter: 0 };
    gen.run(duration)
}

/// A copy of `w` broken in exactly the way named by `code`. The change is
/// made on the raw fields, bypassing the constructive operations.
pub fn seed_violation(w: &Workflow, code: ViolationCode, seed: u64) -> Workflow {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut m = w.clone();
    let duration = m.video.duration;
    let within = |rng: &mut StdRng| {
        let a = rng.random_range(0..=duration.millis());
        let b = rng.random_range(a..=duration.millis());
        TimeSpan::new(Seconds::from_millis(a), Seconds::from_millis(b))
    };
    let things: Vec<Id> = Gen::things(&m);
    let source = m.primary_source().expect("generated workflows have a source").clone();
    let flow = |from: &Id, to: &Id, id: &str| Edge {
        id: Id::new(id),
        kind: EdgeKind::Flow,
        from: from.clone(),
        to: to.clone(),
        label: String::new(),
    };
    // doings as (pred, doing, succ)
    let steps: Vec<(Id, Id, Id)> = {
        let idx = m.flow_index();
        m.nodes
            .values()
            .filter(|n| n.is_doing())
            .map(|n| (idx.predecessors(n.id())[0].clone(), n.id().clone(), idx.successors(n.id())[0].clone()))
            .collect()
    };
    match code {
        ViolationCode::Disconnected => {
            let span = within(&mut rng);
            m.nodes.insert("mut.stray".into(), Node::Thing(ThingNode::new("mut.stray", "stray", span)));
        }
        ViolationCode::TemporalGap => {
            let extra = rng.random_range(1_001..=20_000);
            m.video.duration = Seconds::from_millis(duration.millis() + extra);
        }
        ViolationCode::SequenceViolation => {
            let to = things.iter().filter(|t| **t != source).collect::<Vec<_>>();
            let to = (*to.choose(&mut rng).expect("more than one thing")).clone();
            m.edges.insert("mut:seq".into(), flow(&source, &to, "mut:seq"));
        }
        ViolationCode::DanglingReflective => {
            if !m.nodes.values().any(|n| matches!(n, Node::Reflective(_))) {
                let t = things.choose(&mut rng).expect("things exist").clone();
                let span = m.nodes[&t].span();
                m = m
                    .attach_reflective(&t, ReflectiveLoopNode::new("mut.loop", "check", "", span))
                    .expect("loop on existing thing");
            }
            let loops: Vec<&ReflectiveLoopNode> = m
                .nodes
                .values()
                .filter_map(|n| match n {
                    Node::Reflective(lp) => Some(lp),
                    _ => None,
                })
                .collect();
            let lp = *loops.choose(&mut rng).expect("a loop exists");
            let (a, b) = if rng.random_bool(0.5) { (&lp.id, &lp.attached_thing) } else { (&lp.attached_thing, &lp.id) };
            let doomed = m
                .edges
                .values()
                .find(|e| e.kind == EdgeKind::Reflective && &e.from == a && &e.to == b)
                .expect("paired edge")
                .id
                .clone();
            m.edges.remove(&doomed);
        }
        ViolationCode::NonConvexSegment => {
            let (before, _, after) = steps.choose(&mut rng).expect("a doing exists").clone();
            m.segments.push(Segment { id: "mut.seg".into(), title: "split".into(), members: vec![before, after] });
        }
        ViolationCode::TimestampOutOfRange => {
            let ids: Vec<Id> = m.nodes.keys().cloned().collect();
            let id = ids.choose(&mut rng).expect("nodes exist");
            let end = Seconds::from_millis(duration.millis() + rng.random_range(1..=10_000));
            m.nodes.get_mut(id).expect("chosen from keys").span_mut().end = end;
        }
        ViolationCode::RevisionForward => {
            let mut pair: Vec<Id> = things.choose_multiple(&mut rng, 2).cloned().collect();
            pair.sort_by_key(|id| m.nodes[id].span().start);
            let edge = Edge {
                id: "mut:rev".into(),
                kind: EdgeKind::Revision,
                from: pair[0].clone(),
                to: pair[1].clone(),
                label: "forward".into(),
            };
            m.edges.insert(edge.id.clone(), edge);
        }
        ViolationCode::FlowCycle => {
            // close a loop back to the input of some doing
            let (before, _, after) = steps.choose(&mut rng).expect("a doing exists").clone();
            let span = within(&mut rng);
            m.nodes.insert("mut.back".into(), Node::Doing(DoingNode::new("mut.back", "again", span)));
            m.edges.insert("mut:c1".into(), flow(&after, &"mut.back".into(), "mut:c1"));
            m.edges.insert("mut:c2".into(), flow(&"mut.back".into(), &before, "mut:c2"));
        }
        ViolationCode::MultipleSources => {
            let target = things.iter().filter(|t| **t != source).collect::<Vec<_>>();
            let target = (*target.choose(&mut rng).expect("more than one thing")).clone();
            let (s1, s2) = (within(&mut rng), within(&mut rng));
            m.nodes.insert("mut.src".into(), Node::Thing(ThingNode::new("mut.src", "second start", s1)));
            m.nodes.insert("mut.join".into(), Node::Doing(DoingNode::new("mut.join", "merge", s2)));
            m.edges.insert("mut:s1".into(), flow(&"mut.src".into(), &"mut.join".into(), "mut:s1"));
            m.edges.insert("mut:s2".into(), flow(&"mut.join".into(), &target, "mut:s2"));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::{validate, ValidationConfig};

    #[test]
    fn generated_workflows_are_valid_and_reproducible() {
        let cfg = SynthConfig::default();
        for seed in 0..200 {
            let w = random_workflow(seed, &cfg);
            assert_eq!(validate(&w, &ValidationConfig::default()), vec![], "seed {seed}");
            assert_eq!(w, random_workflow(seed, &cfg));
        }
    }

    #[test]
    fn each_mutant_shows_its_code() {
        let cfg = SynthConfig::default();
        for (i, code) in ViolationCode::ALL.into_iter().enumerate() {
            let w = random_workflow(i as u64, &cfg);
            let codes: Vec<ViolationCode> =
                validate(&seed_violation(&w, code, 7), &ValidationConfig::default()).iter().map(|v| v.code).collect();
            assert!(codes.contains(&code), "{code}: {codes:?}");
        }
    }
}
