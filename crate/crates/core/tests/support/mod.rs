//! Independent reference implementations used by the property tests and
//! the acceptance suite. Deliberately naive.
#![allow(dead_code)]

use std::collections::BTreeSet;

use craftflow_core::transforms::View;
use craftflow_core::{EdgeKind, Id, Node, Seconds, Workflow};

pub const SAMPLE_MS: u64 = 10;

/// Uncovered runs of sample points `0, step, 2*step, ..., duration` as
/// `(first, last)` uncovered sample, in milliseconds. Span endpoints are
/// sampled too, so a span shorter than a step can still split a run.
pub fn sampled_gaps(spans: &[(u64, u64)], duration: u64, step: u64) -> Vec<(u64, u64)> {
    let covered = |t: u64| spans.iter().any(|&(a, b)| a <= t && t <= b);
    let mut points: Vec<u64> = (0..=duration / step).map(|k| k * step).collect();
    points.push(duration);
    points.extend(spans.iter().flat_map(|&(a, b)| [a, b]).filter(|&t| t <= duration));
    points.sort_unstable();
    points.dedup();
    let mut runs = Vec::new();
    let mut open: Option<(u64, u64)> = None;
    for t in points {
        if covered(t) {
            runs.extend(open.take());
        } else {
            open = Some(open.map_or((t, t), |(a, _)| (a, t)));
        }
    }
    runs.extend(open);
    runs
}

/// Compares reported gaps with the sampled runs. Every reported gap must
/// sit within one step of a sampled run, and every sampled run clearly
/// longer than the tolerance must have been reported.
pub fn coverage_agrees(reported: &[(Seconds, Seconds)], runs: &[(u64, u64)], max_gap: u64, step: u64) -> Result<(), String> {
    let near = |x: u64, y: u64| x.abs_diff(y) <= step;
    for &(a, b) in reported {
        let (a, b) = (a.millis(), b.millis());
        let hit = runs.iter().any(|&(s, e)| near(a, s) && near(b, e));
        // gaps narrower than two steps may fall between sample points
        if !hit && b - a >= 2 * step {
            return Err(format!("reported gap [{a}, {b}] has no sampled counterpart in {runs:?}"));
        }
    }
    for &(s, e) in runs {
        // the true gap is somewhere in (s - step, e + step)
        let shortest = e - s;
        if shortest > max_gap + step {
            let hit = reported.iter().any(|&(a, b)| near(a.millis(), s) && near(b.millis(), e));
            if !hit {
                return Err(format!("sampled run [{s}, {e}] missing from {reported:?}"));
            }
        }
    }
    Ok(())
}

/// Transitive closure by Floyd-Warshall over an adjacency matrix.
#[allow(clippy::needless_range_loop)]
pub fn closure(n: usize, edges: &[(usize, usize)], undirected: bool) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in edges {
        r[a][b] = true;
        if undirected {
            r[b][a] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

/// (weakly connected, nodes not flow-reachable from the earliest source).
pub fn connectivity_oracle(w: &Workflow) -> (bool, Vec<Id>) {
    let ids: Vec<&Id> = w.nodes.keys().collect();
    let pos = |id: &Id| ids.iter().position(|x| *x == id);
    let all: Vec<(usize, usize)> = w.edges.values().filter_map(|e| Some((pos(&e.from)?, pos(&e.to)?))).collect();
    let flow: Vec<(usize, usize)> = w
        .edges
        .values()
        .filter(|e| e.kind == EdgeKind::Flow)
        .filter_map(|e| Some((pos(&e.from)?, pos(&e.to)?)))
        .collect();
    let n = ids.len();
    let weak = closure(n, &all, true);
    let connected = n == 0 || (0..n).all(|j| weak[0][j]);
    let has_flow_in = |i: usize| flow.iter().any(|&(_, b)| b == i);
    let source = (0..n)
        .filter(|&i| w.nodes[ids[i]].is_thing() && !has_flow_in(i))
        .min_by_key(|&i| (w.nodes[ids[i]].span().start, ids[i].clone()));
    let reach = closure(n, &flow, false);
    let unreached = (0..n)
        .filter(|&i| {
            let probe = match &w.nodes[ids[i]] {
                Node::Reflective(lp) => pos(&lp.attached_thing),
                _ => Some(i),
            };
            match (source, probe) {
                (Some(s), Some(p)) => !reach[s][p],
                _ => true,
            }
        })
        .map(|i| ids[i].clone())
        .collect();
    (connected, unreached)
}

/// Longest common subsequence length by trying every subset of `a`.
pub fn brute_lcs<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let mut it = b.iter();
        if (0..a.len()).filter(|i| mask >> i & 1 == 1).all(|i| it.any(|x| *x == a[i])) {
            best = size;
        }
    }
    best
}

/// Checks a view against the grammar: alternation over visible flow
/// edges (summaries count as thing-to-thing connectors), source and sinks
/// shown, every shown node weakly connected, and hidden-step conservation.
pub fn view_well_formed(w: &Workflow, v: &View) -> Result<(), String> {
    let vis = &v.visible;
    for id in w.sources().into_iter().chain(w.sinks()) {
        if !vis.contains(id) {
            return Err(format!("pinned {id} hidden"));
        }
    }
    let flows: Vec<(&Id, &Id)> = w
        .edges
        .values()
        .filter(|e| e.kind == EdgeKind::Flow && vis.contains(&e.from) && vis.contains(&e.to))
        .map(|e| (&e.from, &e.to))
        .collect();
    for (a, b) in &flows {
        if w.nodes[*a].is_thing() == w.nodes[*b].is_thing() {
            return Err(format!("flow {a}->{b} does not alternate"));
        }
    }
    for id in vis.iter().filter(|id| w.nodes[*id].is_doing()) {
        let ins = flows.iter().filter(|(_, b)| *b == id).count();
        let outs = flows.iter().filter(|(a, _)| *a == id).count();
        if (ins, outs) != (1, 1) {
            return Err(format!("doing {id} has {ins} in, {outs} out"));
        }
    }
    for s in &v.summaries {
        if !vis.contains(&s.from) || !vis.contains(&s.to) || !w.nodes[&s.from].is_thing() || !w.nodes[&s.to].is_thing() {
            return Err(format!("summary {} is not between shown things", s.id));
        }
        if s.hidden.iter().any(|h| vis.contains(h)) {
            return Err(format!("summary {} stands for a shown node", s.id));
        }
    }
    // weak connectivity of shown nodes
    let ids: Vec<&Id> = vis.iter().collect();
    let pos = |id: &Id| ids.iter().position(|x| *x == id);
    let mut edges: Vec<(usize, usize)> = w
        .edges
        .values()
        .filter_map(|e| Some((pos(&e.from)?, pos(&e.to)?)))
        .collect();
    edges.extend(v.summaries.iter().filter_map(|s| Some((pos(&s.from)?, pos(&s.to)?))));
    let r = closure(ids.len(), &edges, true);
    if !ids.is_empty() && !(0..ids.len()).all(|j| r[0][j]) {
        return Err("view is not weakly connected".into());
    }
    let flow_total = w.nodes.values().filter(|n| n.is_flow_node()).count();
    let shown_flow = vis.iter().filter(|id| w.nodes[*id].is_flow_node()).count();
    let counted: usize = v.summaries.iter().map(|s| s.counted).sum();
    if counted + shown_flow != flow_total {
        return Err(format!("conservation: {counted} counted + {shown_flow} shown != {flow_total}"));
    }
    let all_hidden: BTreeSet<&Id> = v.summaries.iter().flat_map(|s| &s.hidden).collect();
    if all_hidden.len() != counted {
        return Err("a hidden node was counted twice".into());
    }
    Ok(())
}

/// Nodes whose span contains `t`, by linear scan, in (start, id) order.
pub fn scan_timeline(w: &Workflow, t: Seconds) -> Vec<Id> {
    let mut hits: Vec<(Seconds, Id)> = w
        .nodes
        .values()
        .filter(|n| n.span().start <= t && t <= n.span().end)
        .map(|n| (n.span().start, n.id().clone()))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, id)| id).collect()
}
