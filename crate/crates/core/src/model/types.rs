use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Identifier shared by nodes, edges, segments, notes and links.
///
/// All ids live in one namespace inside a workflow so that annotations can
/// target either a node or an edge without a discriminator.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Id(String);

impl Id {
    pub fn new(s: impl Into<String>) -> Self {
        Id(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ids are `[A-Za-z0-9_][A-Za-z0-9_.:-]*`.
    pub fn is_valid(s: &str) -> bool {
        let mut chars = s.chars();
        match chars.next() {
            Some(c) if c.is_ascii_alphanumeric() || c == '_' => {}
            _ => return false,
        }
        chars.all(is_id_continue)
    }
}

pub(crate) fn is_id_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '-')
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Id {
    fn from(s: &str) -> Self {
        Id(s.to_owned())
    }
}

impl From<String> for Id {
    fn from(s: String) -> Self {
        Id(s)
    }
}

impl std::borrow::Borrow<str> for Id {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Id {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A point in video time, stored as whole milliseconds.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Seconds(u64);

impl Seconds {
    pub const ZERO: Seconds = Seconds(0);

    pub const fn from_millis(ms: u64) -> Self {
        Seconds(ms)
    }

    pub const fn whole(s: u64) -> Self {
        Seconds(s * 1000)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    /// Rounds to the nearest millisecond. Rejects negative, non-finite and
    /// absurdly large values.
    pub fn from_secs_f64(s: f64) -> Option<Self> {
        if !s.is_finite() || !(0.0..=1.0e12).contains(&s) {
            return None;
        }
        Some(Seconds((s * 1000.0).round() as u64))
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: Seconds) -> Seconds {
        Seconds(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for Seconds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / 1000;
        let frac = self.0 % 1000;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:03}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid seconds value `{0}` (expected digits with at most 3 fraction digits)")]
pub struct ParseSecondsError(pub String);

impl FromStr for Seconds {
    type Err = ParseSecondsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseSecondsError(s.to_owned());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, Some(f)),
            None => (s, None),
        };
        if whole.is_empty() || whole.len() > 12 || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let mut ms: u64 = whole.parse::<u64>().map_err(|_| err())? * 1000;
        if let Some(frac) = frac {
            if frac.is_empty() || frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            let scale = 10u64.pow(3 - frac.len() as u32);
            ms += frac.parse::<u64>().map_err(|_| err())? * scale;
        }
        Ok(Seconds(ms))
    }
}

/// Closed interval of video time.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct TimeSpan {
    pub start: Seconds,
    pub end: Seconds,
}

impl TimeSpan {
    pub const fn new(start: Seconds, end: Seconds) -> Self {
        TimeSpan { start, end }
    }

    /// Convenience constructor from whole seconds.
    pub const fn secs(start: u64, end: u64) -> Self {
        TimeSpan::new(Seconds::whole(start), Seconds::whole(end))
    }

    pub fn contains(&self, t: Seconds) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn is_ordered(&self) -> bool {
        self.start <= self.end
    }

    pub fn fits_within(&self, duration: Seconds) -> bool {
        self.is_ordered() && self.end <= duration
    }

    pub fn cover(&self, other: &TimeSpan) -> TimeSpan {
        TimeSpan::new(self.start.min(other.start), self.end.max(other.end))
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Per-node level of documented detail. `Low < Medium < High`.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityLevel {
    Low,
    #[default]
    Medium,
    High,
}

impl GranularityLevel {
    pub const ALL: [GranularityLevel; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

impl fmt::Display for GranularityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GranularityLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown detail level `{other}` (expected low|medium|high)")),
        }
    }
}

/// The recording a workflow indexes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoMeta {
    pub uri: String,
    pub duration: Seconds,
    pub title: String,
}

impl VideoMeta {
    pub fn new(uri: impl Into<String>, duration: Seconds, title: impl Into<String>) -> Self {
        VideoMeta {
            uri: uri.into(),
            duration,
            title: title.into(),
        }
    }
}

/// An artifact state. Materials ("stuff") are folded into the thing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThingNode {
    pub id: Id,
    pub label: String,
    pub description: String,
    pub stuff: Vec<String>,
    pub span: TimeSpan,
    pub detail: GranularityLevel,
}

impl ThingNode {
    pub fn new(id: impl Into<Id>, label: impl Into<String>, span: TimeSpan) -> Self {
        ThingNode {
            id: id.into(),
            label: label.into(),
            description: String::new(),
            stuff: Vec::new(),
            span,
            detail: GranularityLevel::default(),
        }
    }

    pub fn with_detail(mut self, detail: GranularityLevel) -> Self {
        self.detail = detail;
        self
    }
}

/// An action transforming one thing-state into the next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DoingNode {
    pub id: Id,
    pub label: String,
    pub description: String,
    pub tools: Vec<String>,
    pub span: TimeSpan,
    pub detail: GranularityLevel,
}

impl DoingNode {
    pub fn new(id: impl Into<Id>, label: impl Into<String>, span: TimeSpan) -> Self {
        DoingNode {
            id: id.into(),
            label: label.into(),
            description: String::new(),
            tools: Vec::new(),
            span,
            detail: GranularityLevel::default(),
        }
    }

    pub fn with_detail(mut self, detail: GranularityLevel) -> Self {
        self.detail = detail;
        self
    }
}

/// A sensing-and-adjustment moment attached to a thing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReflectiveLoopNode {
    pub id: Id,
    pub attached_thing: Id,
    pub sensing: String,
    pub adjustment: String,
    pub span: TimeSpan,
    pub detail: GranularityLevel,
}

impl ReflectiveLoopNode {
    /// The attached thing is filled in by `Workflow::attach_reflective`.
    pub fn new(id: impl Into<Id>, sensing: impl Into<String>, adjustment: impl Into<String>, span: TimeSpan) -> Self {
        ReflectiveLoopNode {
            id: id.into(),
            attached_thing: Id::new(""),
            sensing: sensing.into(),
            adjustment: adjustment.into(),
            span,
            detail: GranularityLevel::default(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Thing,
    Doing,
    Reflective,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Thing => "thing",
            NodeKind::Doing => "doing",
            NodeKind::Reflective => "reflective",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Thing(ThingNode),
    Doing(DoingNode),
    Reflective(ReflectiveLoopNode),
}

impl Node {
    pub fn id(&self) -> &Id {
        match self {
            Node::Thing(n) => &n.id,
            Node::Doing(n) => &n.id,
            Node::Reflective(n) => &n.id,
        }
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            Node::Thing(_) => NodeKind::Thing,
            Node::Doing(_) => NodeKind::Doing,
            Node::Reflective(_) => NodeKind::Reflective,
        }
    }

    /// Display label; for reflective loops this is what is sensed.
    pub fn label(&self) -> &str {
        match self {
            Node::Thing(n) => &n.label,
            Node::Doing(n) => &n.label,
            Node::Reflective(n) => &n.sensing,
        }
    }

    pub fn span(&self) -> TimeSpan {
        match self {
            Node::Thing(n) => n.span,
            Node::Doing(n) => n.span,
            Node::Reflective(n) => n.span,
        }
    }

    pub fn span_mut(&mut self) -> &mut TimeSpan {
        match self {
            Node::Thing(n) => &mut n.span,
            Node::Doing(n) => &mut n.span,
            Node::Reflective(n) => &mut n.span,
        }
    }

    pub fn detail(&self) -> GranularityLevel {
        match self {
            Node::Thing(n) => n.detail,
            Node::Doing(n) => n.detail,
            Node::Reflective(n) => n.detail,
        }
    }

    pub fn is_thing(&self) -> bool {
        matches!(self, Node::Thing(_))
    }

    pub fn is_doing(&self) -> bool {
        matches!(self, Node::Doing(_))
    }

    pub fn is_flow_node(&self) -> bool {
        !matches!(self, Node::Reflective(_))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Flow,
    Reflective,
    Revision,
    /// Only produced by derived views.
    Summary,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Flow => "flow",
            EdgeKind::Reflective => "reflective",
            EdgeKind::Revision => "revision",
            EdgeKind::Summary => "summary",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: Id,
    pub kind: EdgeKind,
    pub from: Id,
    pub to: Id,
    /// Revision reason, or hidden-step summary for derived edges.
    pub label: String,
}

impl Edge {
    /// Id assigned to an edge when none is given explicitly.
    pub fn default_id(from: &Id, to: &Id) -> Id {
        Id(format!("{from}:{to}"))
    }

    pub fn new(kind: EdgeKind, from: Id, to: Id) -> Self {
        Edge {
            id: Edge::default_id(&from, &to),
            kind,
            from,
            to,
            label: String::new(),
        }
    }

    pub fn has_default_id(&self) -> bool {
        self.id == Edge::default_id(&self.from, &self.to)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub id: Id,
    pub title: String,
    pub members: Vec<Id>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoteAnnotation {
    pub id: Id,
    pub target: Id,
    pub text: String,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkSource {
    Detected,
    Searched,
    Manual,
}

impl LinkSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkSource::Detected => "detected",
            LinkSource::Searched => "searched",
            LinkSource::Manual => "manual",
        }
    }
}

impl FromStr for LinkSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detected" => Ok(Self::Detected),
            "searched" => Ok(Self::Searched),
            "manual" => Ok(Self::Manual),
            other => Err(format!("unknown link source `{other}` (expected detected|searched|manual)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalLink {
    pub id: Id,
    pub target: Id,
    pub url: String,
    pub title: String,
    pub source: LinkSource,
}

/// The full documentation graph for one recording.
///
/// Fields are public so that refinement tools and model output can hold
/// graphs that break the grammar; `validate` reports those breaks. Graphs
/// built only through the constructive operations always validate cleanly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workflow {
    pub id: Id,
    pub video: VideoMeta,
    pub nodes: BTreeMap<Id, Node>,
    pub edges: BTreeMap<Id, Edge>,
    pub segments: Vec<Segment>,
    pub notes: Vec<NoteAnnotation>,
    pub links: Vec<ExternalLink>,
    pub created_rev: u64,
}
