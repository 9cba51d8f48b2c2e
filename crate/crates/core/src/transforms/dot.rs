use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::view::View;
use crate::model::{EdgeKind, Id, Node, Workflow};

pub const THING_COLOR: &str = "yellow";
pub const DOING_COLOR: &str = "palegreen";
pub const LOOP_COLOR: &str = "pink";
pub const SEGMENT_COLOR: &str = "purple";

fn q(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn node_stmt(n: &Node) -> String {
    let (shape, color) = match n {
        Node::Thing(_) => ("box", THING_COLOR),
        Node::Doing(_) => ("ellipse", DOING_COLOR),
        Node::Reflective(_) => ("diamond", LOOP_COLOR),
    };
    format!("{} [label={}, shape={shape}, fillcolor={color}];", q(n.id().as_str()), q(n.label()))
}

/// Graph description of a whole workflow.
pub fn export_dot(w: &Workflow) -> String {
    let all: BTreeSet<&Id> = w.nodes.keys().collect();
    render(w, &all, &[], &BTreeSet::new())
}

/// Graph description of what a view shows, with summaries as dashed edges
/// and folded segments drawn as single purple headers.
pub fn export_view_dot(v: &View) -> String {
    let shown: BTreeSet<&Id> = v.visible.iter().collect();
    let summaries: Vec<(String, String, String)> = v
        .summaries
        .iter()
        .map(|s| (s.from.to_string(), s.to.to_string(), s.label.clone()))
        .collect();
    render(v.base(), &shown, &summaries, &v.collapsed)
}

fn render(w: &Workflow, shown: &BTreeSet<&Id>, summaries: &[(String, String, String)], collapsed: &BTreeSet<Id>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", q(w.id.as_str()));
    out.push_str("  rankdir=LR;\n  node [style=filled];\n");
    let mut placed: BTreeSet<&Id> = BTreeSet::new();
    for seg in &w.segments {
        let members: Vec<&Id> = seg.members.iter().filter(|m| shown.contains(m) && !placed.contains(m)).collect();
        if collapsed.contains(&seg.id) {
            // the boundary things stay in the flow; the header marks the fold
            let _ = writeln!(
                out,
                "  {} [label={}, shape=tab, fillcolor={SEGMENT_COLOR}, fontcolor=white];",
                q(&format!("segment:{}", seg.id)),
                q(&seg.title)
            );
            continue;
        }
        if members.is_empty() {
            continue;
        }
        let _ = writeln!(out, "  subgraph {} {{", q(&format!("cluster_{}", seg.id)));
        let _ = writeln!(out, "    label={}; fontcolor={SEGMENT_COLOR}; color={SEGMENT_COLOR};", q(&seg.title));
        for m in members {
            placed.insert(m);
            let _ = writeln!(out, "    {}", node_stmt(&w.nodes[m]));
        }
        out.push_str("  }\n");
    }
    for id in w.canonical_order() {
        if shown.contains(id) && !placed.contains(id) {
            let _ = writeln!(out, "  {}", node_stmt(&w.nodes[id]));
        }
    }
    let mut paired: BTreeSet<(&Id, &Id)> = BTreeSet::new();
    for e in w.edges.values() {
        if !shown.contains(&e.from) || !shown.contains(&e.to) {
            continue;
        }
        let (a, b) = (q(e.from.as_str()), q(e.to.as_str()));
        match e.kind {
            EdgeKind::Flow => {
                let _ = writeln!(out, "  {a} -> {b};");
            }
            EdgeKind::Reflective => {
                // a loop and its thing share one double-headed edge
                let key = if e.from < e.to { (&e.from, &e.to) } else { (&e.to, &e.from) };
                if paired.insert(key) {
                    let (thing, lp) = match w.nodes.get(&e.from) {
                        Some(Node::Reflective(_)) => (q(e.to.as_str()), q(e.from.as_str())),
                        _ => (a, b),
                    };
                    let _ = writeln!(out, "  {thing} -> {lp} [dir=both, color={LOOP_COLOR}];");
                }
            }
            EdgeKind::Revision => {
                let _ = writeln!(out, "  {a} -> {b} [style=dotted, constraint=false, label={}];", q(&e.label));
            }
            EdgeKind::Summary => {
                let _ = writeln!(out, "  {a} -> {b} [style=dashed, label={}];", q(&e.label));
            }
        }
    }
    for (from, to, label) in summaries {
        let _ = writeln!(out, "  {} -> {} [style=dashed, color=gray40, label={}];", q(from), q(to), q(label));
    }
    out.push_str("}\n");
    out
}
