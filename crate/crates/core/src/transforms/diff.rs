use serde::Serialize;

use crate::model::{Id, Node, Workflow};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffError {
    #[error("workflow `{0}` has no things, so it has no principal chain")]
    NoPrincipalChain(Id),
}

/// A position on a principal chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainPoint {
    pub label: String,
    pub index: usize,
}

/// One divergent run between two aligned chains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchRecord {
    /// Last matched step before the divergence, on the base chain.
    pub at: Option<ChainPoint>,
    pub base_path: Vec<String>,
    pub executed_path: Vec<String>,
    /// First matched step after the divergence, on the base chain.
    pub rejoin: Option<ChainPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchReport {
    pub records: Vec<BranchRecord>,
    pub matched: usize,
    /// Columns of the alignment: `n + m - matched`.
    pub alignment_len: usize,
}

impl BranchReport {
    pub fn diverges(&self) -> bool {
        !self.records.is_empty()
    }
}

/// Index pairs of a longest common subsequence of `a` and `b`. Among
/// optimal alignments the one matching as early as possible is chosen.
pub fn align<T: Eq>(a: &[T], b: &[T]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    // suffix table: dp[i][j] = LCS length of a[i..] and b[j..]
    let mut dp = vec![0u32; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[at(i, j)] = if a[i] == b[j] {
                dp[at(i + 1, j + 1)] + 1
            } else {
                dp[at(i + 1, j)].max(dp[at(i, j + 1)])
            };
        }
    }
    let mut pairs = Vec::with_capacity(dp[0] as usize);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] && dp[at(i, j)] == dp[at(i + 1, j + 1)] + 1 {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if dp[at(i + 1, j)] >= dp[at(i, j + 1)] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

/// The source-to-sink path that takes the earliest (start, id) branch at
/// every fork.
pub fn principal_chain(w: &Workflow) -> Result<Vec<&Node>, DiffError> {
    let idx = w.flow_index();
    let Some(mut cur) = w.primary_source() else {
        return Err(DiffError::NoPrincipalChain(w.id.clone()));
    };
    let mut chain = vec![&w.nodes[cur]];
    let mut seen = std::collections::BTreeSet::from([cur]);
    loop {
        let next = idx
            .successors(cur)
            .iter()
            .copied()
            .filter(|n| !seen.contains(n))
            .min_by_key(|n| (w.nodes[*n].span().start, (*n).clone()));
        let Some(next) = next else { break };
        seen.insert(next);
        chain.push(&w.nodes[next]);
        cur = next;
    }
    Ok(chain)
}

fn normalize(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Aligns the principal chains of `base` and `executed` by normalized
/// label and reports each divergent run.
pub fn diff_workflows(base: &Workflow, executed: &Workflow) -> Result<BranchReport, DiffError> {
    let a = principal_chain(base)?;
    let b = principal_chain(executed)?;
    let na: Vec<String> = a.iter().map(|n| normalize(n.label())).collect();
    let nb: Vec<String> = b.iter().map(|n| normalize(n.label())).collect();
    let pairs = align(&na, &nb);
    let point = |i: usize| ChainPoint { label: a[i].label().to_owned(), index: i };

    let mut records = Vec::new();
    let (mut pi, mut pj) = (0usize, 0usize);
    let mut last: Option<usize> = None;
    for &(i, j) in pairs.iter().chain(std::iter::once(&(a.len(), b.len()))) {
        if i > pi || j > pj {
            records.push(BranchRecord {
                at: last.map(point),
                base_path: a[pi..i].iter().map(|n| n.label().to_owned()).collect(),
                executed_path: b[pj..j].iter().map(|n| n.label().to_owned()).collect(),
                rejoin: (i < a.len()).then(|| point(i)),
            });
        }
        last = Some(i);
        pi = i + 1;
        pj = j + 1;
    }
    Ok(BranchReport {
        records,
        matched: pairs.len(),
        alignment_len: a.len() + b.len() - pairs.len(),
    })
}
