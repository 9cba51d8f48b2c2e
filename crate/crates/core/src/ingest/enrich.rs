use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::{ExternalLink, Id, LinkSource, Workflow};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("search unavailable: {0}")]
pub struct SearchError(pub String);

pub trait SearchProvider: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, SearchError>;
}

/// Canned results keyed by exact query. Unknown queries return nothing.
#[derive(Clone, Debug, Default)]
pub struct MockSearch {
    pub results: BTreeMap<String, Vec<SearchHit>>,
    /// When set every query fails with this message.
    pub down: Option<String>,
}

impl SearchProvider for MockSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, SearchError> {
        if let Some(msg) = &self.down {
            return Err(SearchError(msg.clone()));
        }
        Ok(self.results.get(query).map(|r| r.iter().take(limit).cloned().collect()).unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnrichOutcome {
    pub workflow: Workflow,
    pub added: Vec<Id>,
    pub warnings: Vec<String>,
}

/// Results fetched per hint.
const PER_HINT: usize = 5;

/// Looks up every link the model detected in the video (source
/// `detected`) and attaches the results to the same node as `searched`
/// links. The query is the detected link's title, or the node label when
/// the title is empty. Existing links are never touched, and a url already
/// linked from the node is not added twice, so a second pass is a no-op.
///
/// Search failures are not fatal: the input comes back unchanged with a
/// warning.
pub fn enrich_links(w: &Workflow, search: &dyn SearchProvider) -> EnrichOutcome {
    let mut hints: Vec<(Id, String)> = Vec::new();
    for link in w.links.iter().filter(|l| l.source == LinkSource::Detected) {
        let query = if link.title.trim().is_empty() {
            w.nodes.get(&link.target).map(|n| n.label().to_owned()).unwrap_or_default()
        } else {
            link.title.clone()
        };
        if !query.trim().is_empty() && !hints.contains(&(link.target.clone(), query.clone())) {
            hints.push((link.target.clone(), query));
        }
    }

    let mut next = w.clone();
    let mut added = Vec::new();
    let mut taken: BTreeSet<String> = w
        .nodes
        .keys()
        .chain(w.edges.keys())
        .map(|id| id.to_string())
        .chain(w.segments.iter().map(|s| s.id.to_string()))
        .chain(w.notes.iter().map(|n| n.id.to_string()))
        .chain(w.links.iter().map(|l| l.id.to_string()))
        .collect();
    for (target, query) in hints {
        let hits = match search.search(&query, PER_HINT) {
            Ok(hits) => hits,
            Err(e) => {
                return EnrichOutcome { workflow: w.clone(), added: Vec::new(), warnings: vec![e.to_string()] };
            }
        };
        for hit in hits {
            let known = next.links.iter().any(|l| l.target == target && l.url == hit.url);
            if known || url::Url::parse(&hit.url).is_err() {
                continue;
            }
            let id = (1..)
                .map(|n| format!("{target}.web{n}"))
                .find(|id| !taken.contains(id))
                .expect("unbounded");
            taken.insert(id.clone());
            let id = Id::new(id);
            added.push(id.clone());
            next.links.push(ExternalLink { id, target: target.clone(), url: hit.url, title: hit.title, source: LinkSource::Searched });
        }
    }
    if !added.is_empty() {
        next.created_rev += 1;
    }
    EnrichOutcome { workflow: next, added, warnings: Vec::new() }
}
