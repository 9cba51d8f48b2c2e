//! The version-1 JSON interchange schema.

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{json, Map, Number, Value};

use super::cwn::DEFAULT_WORKFLOW_ID;
use crate::model::{
    DoingNode, Edge, EdgeKind, ExternalLink, GranularityLevel, Id, LinkSource, Node, NoteAnnotation, ReflectiveLoopNode,
    Seconds, Segment, ThingNode, TimeSpan, VideoMeta, Workflow,
};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, serde::Serialize)]
#[error("at `{json_pointer}`: expected {expected}, found {found}")]
pub struct SchemaError {
    pub json_pointer: String,
    pub expected: String,
    pub found: String,
}

fn schema_err(ptr: &str, expected: impl Into<String>, found: impl Into<String>) -> SchemaError {
    SchemaError {
        json_pointer: ptr.to_owned(),
        expected: expected.into(),
        found: found.into(),
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => {
            let short: String = s.chars().take(40).collect();
            format!("string {short:?}")
        }
        Value::Array(a) => format!("array of {}", a.len()),
        Value::Object(_) => "object".into(),
    }
}

/// Key `k` appended to a JSON pointer, escaped per RFC 6901.
fn child(ptr: &str, k: &str) -> String {
    format!("{ptr}/{}", k.replace('~', "~0").replace('/', "~1"))
}

/// An object whose keys are checked against a closed set as they are read.
struct Obj<'v> {
    map: &'v Map<String, Value>,
    ptr: String,
}

impl<'v> Obj<'v> {
    fn new(v: &'v Value, ptr: &str, allowed: &[&str]) -> Result<Self, SchemaError> {
        let Value::Object(map) = v else {
            return Err(schema_err(ptr, "object", describe(v)));
        };
        for k in map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(schema_err(&child(ptr, k), format!("one of the keys {}", allowed.join(", ")), format!("unknown key {k:?}")));
            }
        }
        Ok(Obj { map, ptr: ptr.to_owned() })
    }

    fn at(&self, k: &str) -> String {
        child(&self.ptr, k)
    }

    fn get(&self, k: &str) -> Result<&'v Value, SchemaError> {
        self.map.get(k).ok_or_else(|| schema_err(&self.at(k), format!("required key {k:?}"), "nothing"))
    }

    fn string(&self, k: &str) -> Result<String, SchemaError> {
        match self.get(k)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(schema_err(&self.at(k), "string", describe(other))),
        }
    }

    fn opt_string(&self, k: &str) -> Result<String, SchemaError> {
        if self.map.contains_key(k) {
            self.string(k)
        } else {
            Ok(String::new())
        }
    }

    fn id(&self, k: &str) -> Result<Id, SchemaError> {
        let s = self.string(k)?;
        if Id::is_valid(&s) {
            Ok(Id::new(s))
        } else {
            Err(schema_err(&self.at(k), "id matching [A-Za-z0-9_][A-Za-z0-9_.:-]*", format!("{s:?}")))
        }
    }

    fn seconds(&self, k: &str) -> Result<Seconds, SchemaError> {
        let v = self.get(k)?;
        let bad = || schema_err(&self.at(k), "nonnegative seconds with at most 3 fraction digits", describe(v));
        let Value::Number(n) = v else { return Err(bad()) };
        if let Some(u) = n.as_u64() {
            return u.checked_mul(1000).map(Seconds::from_millis).ok_or_else(bad);
        }
        let f = n.as_f64().ok_or_else(bad)?;
        let s = Seconds::from_secs_f64(f).ok_or_else(bad)?;
        if (s.as_secs_f64() - f).abs() > 1e-7 * f.max(1.0) {
            return Err(bad());
        }
        Ok(s)
    }

    fn strings(&self, k: &str) -> Result<Vec<String>, SchemaError> {
        let Some(v) = self.map.get(k) else { return Ok(Vec::new()) };
        let Value::Array(items) = v else {
            return Err(schema_err(&self.at(k), "array of strings", describe(v)));
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| match item {
                Value::String(s) => Ok(s.clone()),
                other => Err(schema_err(&child(&self.at(k), &i.to_string()), "string", describe(other))),
            })
            .collect()
    }

    fn array(&self, k: &str, required: bool) -> Result<&'v [Value], SchemaError> {
        match self.map.get(k) {
            None if !required => Ok(&[]),
            None => Err(schema_err(&self.at(k), format!("required key {k:?}"), "nothing")),
            Some(Value::Array(a)) => Ok(a),
            Some(other) => Err(schema_err(&self.at(k), "array", describe(other))),
        }
    }

    fn detail(&self) -> Result<GranularityLevel, SchemaError> {
        if !self.map.contains_key("detail") {
            return Ok(GranularityLevel::default());
        }
        let s = self.string("detail")?;
        s.parse().map_err(|_| schema_err(&self.at("detail"), "\"low\", \"medium\" or \"high\"", format!("{s:?}")))
    }
}

fn span(v: &Value, ptr: &str, duration: Seconds) -> Result<TimeSpan, SchemaError> {
    let o = Obj::new(v, ptr, &["start_s", "end_s"])?;
    let span = TimeSpan::new(o.seconds("start_s")?, o.seconds("end_s")?);
    if !span.is_ordered() {
        return Err(schema_err(ptr, "start_s <= end_s", format!("span {span}")));
    }
    if span.end > duration {
        return Err(schema_err(ptr, format!("span within the video duration {duration}"), format!("span {span}")));
    }
    Ok(span)
}

const NODE_KEYS: [&str; 10] =
    ["id", "kind", "label", "description", "stuff", "tools", "span", "detail", "adjustment", "attached_thing"];

fn node(v: &Value, ptr: &str, duration: Seconds) -> Result<Node, SchemaError> {
    let kind = match v {
        Value::Object(m) => m.get("kind"),
        _ => None,
    };
    let allowed: &[&str] = match kind {
        Some(Value::String(k)) if k == "thing" => &["id", "kind", "label", "description", "stuff", "span", "detail"],
        Some(Value::String(k)) if k == "doing" => &["id", "kind", "label", "description", "tools", "span", "detail"],
        Some(Value::String(k)) if k == "reflective" => &["id", "kind", "label", "adjustment", "attached_thing", "span", "detail"],
        _ => &NODE_KEYS,
    };
    let o = Obj::new(v, ptr, allowed)?;
    let id = o.id("id")?;
    let kind = o.string("kind")?;
    let label = o.string("label")?;
    let node = match kind.as_str() {
        "thing" => Node::Thing(ThingNode {
            id,
            label,
            description: o.opt_string("description")?,
            stuff: o.strings("stuff")?,
            span: span(o.get("span")?, &o.at("span"), duration)?,
            detail: o.detail()?,
        }),
        "doing" => Node::Doing(DoingNode {
            id,
            label,
            description: o.opt_string("description")?,
            tools: o.strings("tools")?,
            span: span(o.get("span")?, &o.at("span"), duration)?,
            detail: o.detail()?,
        }),
        "reflective" => Node::Reflective(ReflectiveLoopNode {
            id,
            attached_thing: o.id("attached_thing")?,
            sensing: label,
            adjustment: o.opt_string("adjustment")?,
            span: span(o.get("span")?, &o.at("span"), duration)?,
            detail: o.detail()?,
        }),
        other => return Err(schema_err(&o.at("kind"), "\"thing\", \"doing\" or \"reflective\"", format!("{other:?}"))),
    };
    Ok(node)
}

fn edge(v: &Value, ptr: &str) -> Result<Edge, SchemaError> {
    let o = Obj::new(v, ptr, &["id", "kind", "from", "to", "label"])?;
    let id = if o.map.contains_key("id") { Some(o.id("id")?) } else { None };
    let kind = match o.string("kind")?.as_str() {
        "flow" => EdgeKind::Flow,
        "reflective" => EdgeKind::Reflective,
        "revision" => EdgeKind::Revision,
        other => {
            return Err(schema_err(&o.at("kind"), "\"flow\", \"reflective\" or \"revision\"", format!("{other:?}")))
        }
    };
    let (from, to) = (o.id("from")?, o.id("to")?);
    let label = o.opt_string("label")?;
    let mut e = Edge::new(kind, from, to);
    if let Some(id) = id {
        e.id = id;
    }
    e.label = label;
    Ok(e)
}

/// Parses a version-1 document. Checks shape, closed key sets, span bounds,
/// id syntax and uniqueness, annotation targets and link urls; graph
/// grammar is left to `validate` so that model output can be repaired.
pub fn parse_json(bytes: &[u8]) -> Result<Workflow, SchemaError> {
    let doc: Value = serde_json::from_slice(bytes)
        .map_err(|e| schema_err("", "well-formed JSON", format!("syntax error at line {} column {}", e.line(), e.column())))?;
    parse_value(&doc)
}

pub fn parse_value(doc: &Value) -> Result<Workflow, SchemaError> {
    let top = Obj::new(doc, "", &["version", "id", "created_rev", "video", "nodes", "edges", "segments", "notes", "links"])?;
    match top.get("version")? {
        Value::Number(n) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        other => return Err(schema_err("/version", "1", describe(other))),
    }
    // The video is read first since spans are checked against its duration.
    let vo = Obj::new(top.get("video")?, "/video", &["uri", "duration_s", "title"])?;
    let uri = vo.string("uri")?;
    if uri.is_empty() {
        return Err(schema_err("/video/uri", "nonempty string", "\"\""));
    }
    let duration = vo.seconds("duration_s")?;
    if duration == Seconds::ZERO {
        return Err(schema_err("/video/duration_s", "positive duration", "0"));
    }
    let video = VideoMeta::new(uri, duration, vo.opt_string("title")?);

    let mut w = Workflow {
        id: if top.map.contains_key("id") { top.id("id")? } else { Id::new(DEFAULT_WORKFLOW_ID) },
        video,
        nodes: BTreeMap::new(),
        edges: BTreeMap::new(),
        segments: Vec::new(),
        notes: Vec::new(),
        links: Vec::new(),
        created_rev: match top.map.get("created_rev") {
            None => 0,
            Some(Value::Number(n)) if n.as_u64().is_some() => n.as_u64().expect("checked"),
            Some(other) => return Err(schema_err("/created_rev", "nonnegative integer", describe(other))),
        },
    };
    let mut pointers: BTreeMap<Id, String> = BTreeMap::new();
    let mut claim = |id: &Id, ptr: String| {
        if pointers.contains_key(id) {
            return Err(schema_err(&ptr, "an id not used elsewhere in the document", format!("duplicate id {:?}", id.as_str())));
        }
        pointers.insert(id.clone(), ptr);
        Ok(())
    };
    for (i, v) in top.array("nodes", true)?.iter().enumerate() {
        let ptr = format!("/nodes/{i}");
        let n = node(v, &ptr, duration)?;
        if n.is_flow_node() && n.label().trim().is_empty() {
            return Err(schema_err(&child(&ptr, "label"), "nonempty label", "\"\""));
        }
        claim(n.id(), format!("{ptr}/id"))?;
        w.nodes.insert(n.id().clone(), n);
    }
    for (i, v) in top.array("edges", true)?.iter().enumerate() {
        let ptr = format!("/edges/{i}");
        let e = edge(v, &ptr)?;
        claim(&e.id, format!("{ptr}/id"))?;
        w.edges.insert(e.id.clone(), e);
    }
    for (i, v) in top.array("segments", false)?.iter().enumerate() {
        let ptr = format!("/segments/{i}");
        let o = Obj::new(v, &ptr, &["id", "title", "members"])?;
        let id = o.id("id")?;
        claim(&id, o.at("id"))?;
        let Value::Array(items) = o.get("members")? else {
            return Err(schema_err(&o.at("members"), "array of node ids", describe(o.get("members")?)));
        };
        let mut members = Vec::new();
        for (j, m) in items.iter().enumerate() {
            let mptr = child(&o.at("members"), &j.to_string());
            match m {
                Value::String(s) if w.nodes.contains_key(s.as_str()) => members.push(Id::new(s.clone())),
                other => return Err(schema_err(&mptr, "id of a node", describe(other))),
            }
        }
        w.segments.push(Segment { id, title: o.string("title")?, members });
    }
    for (i, v) in top.array("notes", false)?.iter().enumerate() {
        let ptr = format!("/notes/{i}");
        let o = Obj::new(v, &ptr, &["id", "target", "text", "author", "created_at"])?;
        let id = o.id("id")?;
        claim(&id, o.at("id"))?;
        let target = o.id("target")?;
        if !w.nodes.contains_key(&target) && !w.edges.contains_key(&target) {
            return Err(schema_err(&o.at("target"), "id of a node or edge", format!("{:?}", target.as_str())));
        }
        let text = o.string("text")?;
        if text.trim().is_empty() {
            return Err(schema_err(&o.at("text"), "nonempty text", format!("{text:?}")));
        }
        let created_at = if o.map.contains_key("created_at") {
            let s = o.string("created_at")?;
            DateTime::parse_from_rfc3339(&s)
                .map_err(|_| schema_err(&o.at("created_at"), "RFC 3339 timestamp", format!("{s:?}")))?
                .with_timezone(&Utc)
        } else {
            DateTime::<Utc>::UNIX_EPOCH
        };
        w.notes.push(NoteAnnotation { id, target, text, author: o.opt_string("author")?, created_at });
    }
    for (i, v) in top.array("links", false)?.iter().enumerate() {
        let ptr = format!("/links/{i}");
        let o = Obj::new(v, &ptr, &["id", "target", "url", "title", "source"])?;
        let id = o.id("id")?;
        claim(&id, o.at("id"))?;
        let target = o.id("target")?;
        if !w.nodes.contains_key(&target) {
            return Err(schema_err(&o.at("target"), "id of a node", format!("{:?}", target.as_str())));
        }
        let url = o.string("url")?;
        if url::Url::parse(&url).is_err() {
            return Err(schema_err(&o.at("url"), "absolute URL", format!("{url:?}")));
        }
        let source = if o.map.contains_key("source") {
            let s = o.string("source")?;
            s.parse()
                .map_err(|_| schema_err(&o.at("source"), "\"detected\", \"searched\" or \"manual\"", format!("{s:?}")))?
        } else {
            LinkSource::Manual
        };
        w.links.push(ExternalLink { id, target, url, title: o.opt_string("title")?, source });
    }
    Ok(w)
}

/// Seconds as a JSON number: integers for whole seconds, otherwise a
/// decimal with at most three fraction digits.
pub(crate) fn seconds_value(s: Seconds) -> Value {
    if s.millis().is_multiple_of(1000) {
        Value::Number(Number::from(s.millis() / 1000))
    } else {
        Number::from_f64(s.as_secs_f64()).map(Value::Number).unwrap_or(Value::Null)
    }
}

fn span_value(s: TimeSpan) -> Value {
    json!({"start_s": seconds_value(s.start), "end_s": seconds_value(s.end)})
}

pub(crate) fn node_value(n: &Node) -> Value {
    match n {
        Node::Thing(t) => json!({
            "id": t.id, "kind": "thing", "label": t.label, "description": t.description,
            "stuff": t.stuff, "span": span_value(t.span), "detail": t.detail,
        }),
        Node::Doing(d) => json!({
            "id": d.id, "kind": "doing", "label": d.label, "description": d.description,
            "tools": d.tools, "span": span_value(d.span), "detail": d.detail,
        }),
        Node::Reflective(l) => json!({
            "id": l.id, "kind": "reflective", "label": l.sensing, "adjustment": l.adjustment,
            "attached_thing": l.attached_thing, "span": span_value(l.span), "detail": l.detail,
        }),
    }
}

pub(crate) fn edge_value(e: &Edge) -> Value {
    json!({"id": e.id, "kind": e.kind, "from": e.from, "to": e.to, "label": e.label})
}

pub fn to_value(w: &Workflow) -> Value {
    let nodes: Vec<Value> = w.canonical_order().into_iter().map(|id| node_value(&w.nodes[id])).collect();
    let edges: Vec<Value> = w.edges.values().map(edge_value).collect();
    let segments: Vec<Value> = w
        .segments
        .iter()
        .map(|s| json!({"id": s.id, "title": s.title, "members": s.members}))
        .collect();
    let notes: Vec<Value> = w
        .notes
        .iter()
        .map(|n| {
            json!({
                "id": n.id, "target": n.target, "text": n.text, "author": n.author,
                "created_at": n.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            })
        })
        .collect();
    let links: Vec<Value> = w
        .links
        .iter()
        .map(|l| json!({"id": l.id, "target": l.target, "url": l.url, "title": l.title, "source": l.source}))
        .collect();
    let mut top = json!({
        "version": SCHEMA_VERSION,
        "id": w.id,
        "created_rev": w.created_rev,
        "video": {"uri": w.video.uri, "duration_s": seconds_value(w.video.duration), "title": w.video.title},
    });
    let obj = top.as_object_mut().expect("object literal");
    obj.insert("nodes".into(), Value::Array(nodes));
    obj.insert("edges".into(), Value::Array(edges));
    obj.insert("segments".into(), Value::Array(segments));
    obj.insert("notes".into(), Value::Array(notes));
    obj.insert("links".into(), Value::Array(links));
    top
}

/// Pretty-printed document with a trailing newline. Nodes follow the
/// canonical order and edges are sorted by id.
pub fn serialize_json(w: &Workflow) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&to_value(w)).expect("values always serialize");
    out.push(b'\n');
    out
}
