//! The line-oriented text notation.
//!
//! ```text
//! workflow "Granny square" duration=60 uri="file:granny.mp4"
//! thing T1 "yarn" @0..20 detail=low stuff=["cotton yarn"]
//! doing D1 "chain 4" from T1 to T2 @20..40 tools=["hook 4mm"]
//! thing T2 "chain" @40..60
//! reflect L1 "check tension" on T2 @45..50 adjust="loosen grip"
//! segment S1 "foundation" { T1 D1 T2 }
//! note on T2 "count the chains twice"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::model::{
    is_id_continue, DoingNode, Edge, EdgeKind, ExternalLink, GranularityLevel, Id, LinkSource, Node, NoteAnnotation,
    ReflectiveLoopNode, Seconds, Segment, ThingNode, TimeSpan, VideoMeta, Workflow,
};
use crate::validate::{structural_violations, ValidationConfig};

pub(crate) const DEFAULT_WORKFLOW_ID: &str = "workflow";
pub(crate) const DEFAULT_URI: &str = "unspecified";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Sym(char),
    Newline,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    text: String,
}

fn error_at(t: &Token, message: impl Into<String>) -> ParseError {
    ParseError {
        line: t.line,
        column: t.col,
        message: message.into(),
        snippet: t.text.clone(),
    }
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&(start, c)) = chars.peek() {
        let (tl, tc) = (line, col);
        let bump = |chars: &mut std::iter::Peekable<std::str::CharIndices>, col: &mut usize| {
            chars.next();
            *col += 1;
        };
        match c {
            '\n' => {
                chars.next();
                out.push(Token { tok: Tok::Newline, line, col, text: "\n".into() });
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => bump(&mut chars, &mut col),
            '#' => {
                while chars.peek().is_some_and(|&(_, c)| c != '\n') {
                    bump(&mut chars, &mut col);
                }
            }
            '"' => {
                bump(&mut chars, &mut col);
                let mut value = String::new();
                let end = loop {
                    let Some(&(i, c)) = chars.peek() else {
                        return Err(ParseError {
                            line: tl,
                            column: tc,
                            message: "unterminated string".into(),
                            snippet: src[start..].lines().next().unwrap_or("").into(),
                        });
                    };
                    match c {
                        '"' => {
                            bump(&mut chars, &mut col);
                            break i + 1;
                        }
                        '\n' => {
                            return Err(ParseError {
                                line: tl,
                                column: tc,
                                message: "unterminated string (use \\n for line breaks)".into(),
                                snippet: src[start..i].into(),
                            })
                        }
                        '\\' => {
                            bump(&mut chars, &mut col);
                            let (ec, ecol) = (chars.peek().map(|&(_, c)| c), col);
                            let bad = |msg: &str| ParseError {
                                line,
                                column: ecol - 1,
                                message: msg.into(),
                                snippet: src[i..].chars().take(2).collect(),
                            };
                            match ec {
                                Some('"') => value.push('"'),
                                Some('\\') => value.push('\\'),
                                Some('n') => value.push('\n'),
                                Some('t') => value.push('\t'),
                                Some('r') => value.push('\r'),
                                Some('u') => {
                                    bump(&mut chars, &mut col);
                                    if chars.peek().map(|&(_, c)| c) != Some('{') {
                                        return Err(bad("expected `{` after \\u"));
                                    }
                                    let mut hex = String::new();
                                    loop {
                                        bump(&mut chars, &mut col);
                                        match chars.peek().map(|&(_, c)| c) {
                                            Some('}') => break,
                                            Some(h) if h.is_ascii_hexdigit() && hex.len() < 6 => hex.push(h),
                                            _ => return Err(bad("malformed \\u{...} escape")),
                                        }
                                    }
                                    let ch = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32);
                                    value.push(ch.ok_or_else(|| bad("escape is not a unicode scalar value"))?);
                                }
                                _ => return Err(bad("unknown escape sequence")),
                            }
                            bump(&mut chars, &mut col);
                        }
                        c => {
                            value.push(c);
                            bump(&mut chars, &mut col);
                        }
                    }
                };
                out.push(Token { tok: Tok::Str(value), line: tl, col: tc, text: src[start..end].into() });
            }
            '@' | '=' | '[' | ']' | '{' | '}' | ',' => {
                bump(&mut chars, &mut col);
                out.push(Token { tok: Tok::Sym(c), line: tl, col: tc, text: c.to_string() });
            }
            c if is_id_continue(c) => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if !is_id_continue(c) {
                        break;
                    }
                    end = i + c.len_utf8();
                    bump(&mut chars, &mut col);
                }
                let text = &src[start..end];
                out.push(Token { tok: Tok::Word(text.into()), line: tl, col: tc, text: text.into() });
            }
            other => {
                return Err(ParseError {
                    line,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                    snippet: other.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Splits the token stream into statements at newlines outside brackets.
fn statements(tokens: Vec<Token>) -> Result<Vec<Vec<Token>>, ParseError> {
    let mut out = Vec::new();
    let mut cur: Vec<Token> = Vec::new();
    let mut open: Vec<Token> = Vec::new();
    for t in tokens {
        match &t.tok {
            Tok::Newline if open.is_empty() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                continue;
            }
            Tok::Newline => continue,
            Tok::Sym('{' | '[') => open.push(t.clone()),
            Tok::Sym(c @ ('}' | ']')) => {
                let want = if *c == '}' { '{' } else { '[' };
                match open.pop() {
                    Some(o) if o.tok == Tok::Sym(want) => {}
                    _ => return Err(error_at(&t, format!("unbalanced `{c}`"))),
                }
            }
            _ => {}
        }
        cur.push(t);
    }
    if let Some(o) = open.pop() {
        return Err(error_at(&o, format!("`{}` is never closed", o.text)));
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

enum Value {
    Word(String),
    Str(String),
    List(Vec<String>),
}

struct Attrs<'t> {
    map: BTreeMap<String, (Value, &'t Token)>,
}

impl<'t> Attrs<'t> {
    fn string(&mut self, key: &str) -> Result<Option<String>, ParseError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((Value::Str(s), _)) => Ok(Some(s)),
            Some((_, t)) => Err(error_at(t, format!("`{key}` expects a quoted string"))),
        }
    }

    fn word(&mut self, key: &str) -> Result<Option<(String, &'t Token)>, ParseError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((Value::Word(s), t)) => Ok(Some((s, t))),
            Some((_, t)) => Err(error_at(t, format!("`{key}` expects a bare value"))),
        }
    }

    fn list(&mut self, key: &str) -> Result<Vec<String>, ParseError> {
        match self.map.remove(key) {
            None => Ok(Vec::new()),
            Some((Value::List(l), _)) => Ok(l),
            Some((_, t)) => Err(error_at(t, format!("`{key}` expects a list like [\"a\", \"b\"]"))),
        }
    }

    fn seconds(&mut self, key: &str) -> Result<Option<Seconds>, ParseError> {
        match self.word(key)? {
            None => Ok(None),
            Some((w, t)) => w.parse().map(Some).map_err(|e| error_at(t, format!("{e}"))),
        }
    }

    fn id(&mut self, key: &str) -> Result<Option<Id>, ParseError> {
        match self.word(key)? {
            None => Ok(None),
            Some((w, t)) => check_id(&w, t).map(Some),
        }
    }

    fn detail(&mut self) -> Result<GranularityLevel, ParseError> {
        match self.word("detail")? {
            None => Ok(GranularityLevel::default()),
            Some((w, t)) => w.parse().map_err(|e: String| error_at(t, e)),
        }
    }
}

fn check_id(w: &str, t: &Token) -> Result<Id, ParseError> {
    if Id::is_valid(w) {
        Ok(Id::new(w))
    } else {
        Err(error_at(t, format!("`{w}` is not a valid id")))
    }
}

struct Cursor<'t> {
    toks: &'t [Token],
    pos: usize,
}

impl<'t> Cursor<'t> {
    fn peek_at(&self, n: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + n)
    }

    fn peek(&self) -> Option<&'t Token> {
        self.peek_at(0)
    }

    /// Error at the current token, or at the last token of the statement
    /// when input ran out.
    fn fail(&self, message: impl Into<String>) -> ParseError {
        let t = self.peek().unwrap_or_else(|| self.toks.last().expect("statements are nonempty"));
        error_at(t, message)
    }

    fn next(&mut self, what: &str) -> Result<&'t Token, ParseError> {
        match self.peek() {
            Some(t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.fail(format!("expected {what} after this"))),
        }
    }

    fn is_word(&self, n: usize, w: &str) -> bool {
        matches!(self.peek_at(n), Some(Token { tok: Tok::Word(x), .. }) if x == w)
    }

    fn is_kind_word(&self, n: usize) -> bool {
        matches!(self.peek_at(n), Some(Token { tok: Tok::Word(_), .. }))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_word(0, kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.fail(format!("expected `{kw}`")))
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, &'t Token), ParseError> {
        let t = self.next(what)?;
        match &t.tok {
            Tok::Word(w) => Ok((w.clone(), t)),
            _ => Err(error_at(t, format!("expected {what}"))),
        }
    }

    fn id(&mut self, what: &str) -> Result<Id, ParseError> {
        let (w, t) = self.word(what)?;
        check_id(&w, t)
    }

    fn string(&mut self, what: &str) -> Result<String, ParseError> {
        let t = self.next(what)?;
        match &t.tok {
            Tok::Str(s) => Ok(s.clone()),
            _ => Err(error_at(t, format!("expected {what} as a quoted string"))),
        }
    }

    fn sym(&mut self, c: char) -> Result<&'t Token, ParseError> {
        let t = self.next(&format!("`{c}`"))?;
        if t.tok == Tok::Sym(c) {
            Ok(t)
        } else {
            Err(error_at(t, format!("expected `{c}`")))
        }
    }

    fn span(&mut self) -> Result<TimeSpan, ParseError> {
        self.sym('@')?;
        let (w, t) = self.word("a time span like 0..12.5")?;
        let Some((a, b)) = w.split_once("..") else {
            return Err(error_at(t, "expected a time span like 0..12.5"));
        };
        let start: Seconds = a.parse().map_err(|e| error_at(t, format!("span start: {e}")))?;
        let end: Seconds = b.parse().map_err(|e| error_at(t, format!("span end: {e}")))?;
        if start > end {
            return Err(error_at(t, "span ends before it starts"));
        }
        Ok(TimeSpan::new(start, end))
    }

    /// `key=value` pairs up to the end of the statement.
    fn attrs(&mut self, allowed: &[&str]) -> Result<Attrs<'t>, ParseError> {
        let mut map = BTreeMap::new();
        while self.peek().is_some() {
            let (key, kt) = self.word("an attribute name")?;
            if !allowed.contains(&key.as_str()) {
                let expected = allowed.join(", ");
                return Err(error_at(kt, format!("unknown attribute `{key}` (expected one of {expected})")));
            }
            if map.contains_key(&key) {
                return Err(error_at(kt, format!("attribute `{key}` given twice")));
            }
            self.sym('=')?;
            let vt = self.next("a value")?;
            let value = match &vt.tok {
                Tok::Word(w) => Value::Word(w.clone()),
                Tok::Str(s) => Value::Str(s.clone()),
                Tok::Sym('[') => {
                    let mut items = Vec::new();
                    loop {
                        if self.peek().is_some_and(|t| t.tok == Tok::Sym(']')) {
                            self.pos += 1;
                            break;
                        }
                        items.push(self.string("a list item")?);
                        let t = self.next("`,` or `]`")?;
                        match t.tok {
                            Tok::Sym(',') => {}
                            Tok::Sym(']') => break,
                            _ => return Err(error_at(t, "expected `,` or `]`")),
                        }
                    }
                    Value::List(items)
                }
                _ => return Err(error_at(vt, "expected a value")),
            };
            map.insert(key, (value, vt));
        }
        Ok(Attrs { map })
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(error_at(t, format!("unexpected `{}`", t.text))),
        }
    }
}

struct Header {
    title: String,
    id: Id,
    duration: Seconds,
    uri: String,
    rev: u64,
}

enum Stmt {
    Node(Node),
    /// Doing with the things named by `from` and `to`.
    Doing(DoingNode, Option<Id>, Option<Id>),
    Reflect(ReflectiveLoopNode, Option<Id>),
    Edge(Option<Id>, EdgeKind, Id, Id, String),
    Segment(Option<Id>, String, Vec<Id>),
    Note(Option<Id>, Id, String, String, DateTime<Utc>),
    Link(Option<Id>, Id, String, String, LinkSource),
}

struct Located {
    stmt: Stmt,
    line: usize,
    col: usize,
}

fn parse_header(c: &mut Cursor) -> Result<Header, ParseError> {
    let title = c.string("the workflow title")?;
    let mut a = c.attrs(&["id", "duration", "uri", "rev"])?;
    let id = a.id("id")?.unwrap_or_else(|| Id::new(DEFAULT_WORKFLOW_ID));
    let duration = match a.seconds("duration")? {
        Some(d) if d > Seconds::ZERO => d,
        Some(_) => return Err(c.fail("duration must be positive")),
        None => return Err(c.fail("workflow needs duration=<seconds>")),
    };
    let uri = a.string("uri")?.unwrap_or_else(|| DEFAULT_URI.into());
    if uri.is_empty() {
        return Err(c.fail("uri must be nonempty"));
    }
    let rev = match a.word("rev")? {
        None => 0,
        Some((w, t)) => w.parse().map_err(|_| error_at(t, "rev expects a nonnegative integer"))?,
    };
    Ok(Header { title, id, duration, uri, rev })
}

fn parse_stmt(kw: &str, c: &mut Cursor) -> Result<Stmt, ParseError> {
    let optional_id = |c: &mut Cursor| -> Result<Option<Id>, ParseError> {
        if c.is_kind_word(0) && !c.is_word(0, "on") || c.is_kind_word(0) && c.is_word(1, "on") && c.is_kind_word(2) {
            c.id("an id").map(Some)
        } else {
            Ok(None)
        }
    };
    let stmt = match kw {
        "thing" => {
            let id = c.id("a thing id")?;
            let label = c.string("a label")?;
            let span = c.span()?;
            let mut a = c.attrs(&["detail", "stuff", "desc"])?;
            Stmt::Node(Node::Thing(ThingNode {
                id,
                label,
                description: a.string("desc")?.unwrap_or_default(),
                stuff: a.list("stuff")?,
                span,
                detail: a.detail()?,
            }))
        }
        "doing" => {
            let id = c.id("a doing id")?;
            let label = c.string("a label")?;
            let from = if c.is_word(0, "from") {
                c.pos += 1;
                Some(c.id("the input thing")?)
            } else {
                None
            };
            let to = if c.is_word(0, "to") {
                c.pos += 1;
                Some(c.id("the output thing")?)
            } else {
                None
            };
            let span = c.span()?;
            let mut a = c.attrs(&["detail", "tools", "desc"])?;
            let d = DoingNode {
                id,
                label,
                description: a.string("desc")?.unwrap_or_default(),
                tools: a.list("tools")?,
                span,
                detail: a.detail()?,
            };
            Stmt::Doing(d, from, to)
        }
        "reflect" => {
            let id = if c.is_kind_word(0) { Some(c.id("a loop id")?) } else { None };
            let sensing = c.string("what is sensed")?;
            c.keyword("on")?;
            let thing = c.id("the attached thing")?;
            let span = c.span()?;
            let mut a = c.attrs(&["adjust", "detail"])?;
            let mut lp = ReflectiveLoopNode::new(Id::new(""), sensing, a.string("adjust")?.unwrap_or_default(), span);
            lp.attached_thing = thing;
            lp.detail = a.detail()?;
            Stmt::Reflect(lp, id)
        }
        "revision" => {
            c.keyword("from")?;
            let from = c.id("the revised thing")?;
            c.keyword("to")?;
            let to = c.id("the earlier thing")?;
            let mut a = c.attrs(&["reason", "id"])?;
            Stmt::Edge(a.id("id")?, EdgeKind::Revision, from, to, a.string("reason")?.unwrap_or_default())
        }
        "edge" => {
            let (k, kt) = c.word("an edge kind")?;
            let kind = match k.as_str() {
                "flow" => EdgeKind::Flow,
                "reflective" => EdgeKind::Reflective,
                "revision" => EdgeKind::Revision,
                "summary" => EdgeKind::Summary,
                _ => return Err(error_at(kt, "expected flow, reflective, revision or summary")),
            };
            c.keyword("from")?;
            let from = c.id("the source node")?;
            c.keyword("to")?;
            let to = c.id("the target node")?;
            let mut a = c.attrs(&["id", "label"])?;
            Stmt::Edge(a.id("id")?, kind, from, to, a.string("label")?.unwrap_or_default())
        }
        "segment" => {
            let id = if c.is_kind_word(0) { Some(c.id("a segment id")?) } else { None };
            let title = c.string("a segment title")?;
            c.sym('{')?;
            let mut members = Vec::new();
            loop {
                if c.peek().is_some_and(|t| t.tok == Tok::Sym('}')) {
                    c.pos += 1;
                    break;
                }
                if c.peek().is_some_and(|t| t.tok == Tok::Sym(',')) {
                    c.pos += 1;
                    continue;
                }
                members.push(c.id("a member id or `}`")?);
            }
            Stmt::Segment(id, title, members)
        }
        "note" => {
            let id = optional_id(c)?;
            c.keyword("on")?;
            let target = c.id("the annotated id")?;
            let text = c.string("the note text")?;
            let mut a = c.attrs(&["by", "at"])?;
            let author = a.string("by")?.unwrap_or_default();
            let at = match a.map.remove("at") {
                None => DateTime::<Utc>::UNIX_EPOCH,
                Some((Value::Str(s), t)) => DateTime::parse_from_rfc3339(&s)
                    .map_err(|e| error_at(t, format!("`at` expects an RFC 3339 timestamp: {e}")))?
                    .with_timezone(&Utc),
                Some((_, t)) => return Err(error_at(t, "`at` expects a quoted RFC 3339 timestamp")),
            };
            Stmt::Note(id, target, text, author, at)
        }
        "link" => {
            let id = optional_id(c)?;
            c.keyword("on")?;
            let target = c.id("the linked node")?;
            let url = c.string("the url")?;
            let mut a = c.attrs(&["title", "source"])?;
            let title = a.string("title")?.unwrap_or_default();
            let source = match a.word("source")? {
                None => LinkSource::Manual,
                Some((w, t)) => w.parse().map_err(|e: String| error_at(t, e))?,
            };
            Stmt::Link(id, target, url, title, source)
        }
        _ => unreachable!("keyword checked by caller"),
    };
    c.finish()?;
    Ok(stmt)
}

const KEYWORDS: [&str; 8] = ["thing", "doing", "reflect", "revision", "edge", "segment", "note", "link"];

/// Parses CWN text. The result satisfies every structural invariant of the
/// model; temporal coverage is left to `validate`.
pub fn parse_cwn(text: &str) -> Result<Workflow, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let stmts = statements(lex(text)?)?;
    let mut iter = stmts.iter();
    let Some(first) = iter.next() else {
        return Err(ParseError {
            line: 1,
            column: 1,
            message: "expected a `workflow` statement".into(),
            snippet: lines.first().copied().unwrap_or("").into(),
        });
    };
    let mut c = Cursor { toks: first, pos: 0 };
    if !c.is_word(0, "workflow") {
        return Err(c.fail("the first statement must be `workflow`"));
    }
    c.pos += 1;
    let header = parse_header(&mut c)?;
    let header_pos = (first[0].line, first[0].col);

    let mut body = Vec::new();
    for toks in iter {
        let mut c = Cursor { toks, pos: 0 };
        let (kw, kt) = c.word("a statement keyword")?;
        if kw == "workflow" {
            return Err(error_at(kt, "only one `workflow` statement is allowed"));
        }
        if !KEYWORDS.contains(&kw.as_str()) {
            return Err(error_at(kt, format!("unknown statement `{kw}` (expected workflow, {})", KEYWORDS.join(", "))));
        }
        let stmt = parse_stmt(&kw, &mut c)?;
        body.push(Located { stmt, line: kt.line, col: kt.col });
    }
    Builder::new(header, header_pos, &lines).build(body)
}

struct Builder<'a> {
    w: Workflow,
    origin: BTreeMap<Id, (usize, usize)>,
    header_pos: (usize, usize),
    lines: &'a [&'a str],
}

impl<'a> Builder<'a> {
    fn new(h: Header, header_pos: (usize, usize), lines: &'a [&'a str]) -> Self {
        let w = Workflow {
            id: h.id,
            video: VideoMeta::new(h.uri, h.duration, h.title),
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            segments: Vec::new(),
            notes: Vec::new(),
            links: Vec::new(),
            created_rev: h.rev,
        };
        Builder { w, origin: BTreeMap::new(), header_pos, lines }
    }

    fn error(&self, (line, col): (usize, usize), message: String) -> ParseError {
        ParseError {
            line,
            column: col,
            message,
            snippet: self.lines.get(line - 1).map(|l| l.trim().to_owned()).unwrap_or_default(),
        }
    }

    fn claim(&mut self, id: &Id, at: (usize, usize)) -> Result<(), ParseError> {
        if let Some(prev) = self.origin.get(id) {
            let msg = format!("duplicate id `{id}` (first declared on line {})", prev.0);
            return Err(self.error(at, msg));
        }
        self.origin.insert(id.clone(), at);
        Ok(())
    }

    fn fresh(&self, prefix: &str, counter: &mut usize, explicit: &BTreeSet<Id>) -> Id {
        loop {
            *counter += 1;
            let id = Id::new(format!("{prefix}{counter}"));
            if !self.origin.contains_key(&id) && !explicit.contains(&id) {
                return id;
            }
        }
    }

    fn add_edge(&mut self, kind: EdgeKind, from: Id, to: Id, at: (usize, usize)) -> Result<(), ParseError> {
        let e = Edge::new(kind, from, to);
        self.claim(&e.id, at)?;
        self.w.edges.insert(e.id.clone(), e);
        Ok(())
    }

    fn require_node(&self, id: &Id, at: (usize, usize)) -> Result<(), ParseError> {
        if self.w.nodes.contains_key(id) {
            Ok(())
        } else {
            Err(self.error(at, format!("unknown node `{id}`")))
        }
    }

    fn build(mut self, body: Vec<Located>) -> Result<Workflow, ParseError> {
        let explicit: BTreeSet<Id> = body
            .iter()
            .filter_map(|s| match &s.stmt {
                Stmt::Node(n) => Some(n.id().clone()),
                Stmt::Doing(d, ..) => Some(d.id.clone()),
                Stmt::Reflect(_, id)
                | Stmt::Edge(id, ..)
                | Stmt::Segment(id, ..)
                | Stmt::Note(id, ..)
                | Stmt::Link(id, ..) => id.clone(),
            })
            .collect();
        // Nodes first so that statements may refer forward.
        let mut loops = 0;
        let mut body_nodes = Vec::new();
        for s in &body {
            let at = (s.line, s.col);
            let node = match &s.stmt {
                Stmt::Node(n) => n.clone(),
                Stmt::Doing(d, ..) => Node::Doing(d.clone()),
                Stmt::Reflect(lp, id) => {
                    let mut lp = lp.clone();
                    lp.id = match id {
                        Some(id) => id.clone(),
                        None => self.fresh("loop", &mut loops, &explicit),
                    };
                    Node::Reflective(lp)
                }
                _ => continue,
            };
            self.claim(node.id(), at)?;
            body_nodes.push(node.id().clone());
            self.w.nodes.insert(node.id().clone(), node);
        }
        // Explicit edges, then the edges implied by doings and loops.
        let mut explicit_reflective = BTreeSet::new();
        for s in &body {
            let at = (s.line, s.col);
            if let Stmt::Edge(id, kind, from, to, label) = &s.stmt {
                self.require_node(from, at)?;
                self.require_node(to, at)?;
                let id = match id {
                    Some(id) => id.clone(),
                    None => {
                        let base = Edge::default_id(from, to);
                        let mut id = base.clone();
                        let mut n = 1;
                        while self.origin.contains_key(&id) || explicit.contains(&id) {
                            n += 1;
                            id = Id::new(format!("{base}:{n}"));
                        }
                        id
                    }
                };
                self.claim(&id, at)?;
                if *kind == EdgeKind::Reflective {
                    explicit_reflective.insert((from.clone(), to.clone()));
                }
                let edge = Edge { id: id.clone(), kind: *kind, from: from.clone(), to: to.clone(), label: label.clone() };
                self.w.edges.insert(id, edge);
            }
        }
        let mut node_iter = body_nodes.iter();
        for s in &body {
            let at = (s.line, s.col);
            match &s.stmt {
                Stmt::Node(_) => {
                    node_iter.next();
                }
                Stmt::Doing(d, from, to) => {
                    node_iter.next();
                    if let Some(t) = from {
                        self.require_node(t, at)?;
                        self.add_edge(EdgeKind::Flow, t.clone(), d.id.clone(), at)?;
                    }
                    if let Some(t) = to {
                        self.require_node(t, at)?;
                        self.add_edge(EdgeKind::Flow, d.id.clone(), t.clone(), at)?;
                    }
                }
                Stmt::Reflect(lp, _) => {
                    let id = node_iter.next().expect("loop was inserted").clone();
                    let thing = &lp.attached_thing;
                    self.require_node(thing, at)?;
                    for (a, b) in [(thing, &id), (&id, thing)] {
                        if !explicit_reflective.contains(&(a.clone(), b.clone())) {
                            self.add_edge(EdgeKind::Reflective, a.clone(), b.clone(), at)?;
                        }
                    }
                }
                _ => {}
            }
        }
        let (mut segs, mut notes, mut links) = (0, 0, 0);
        for s in &body {
            let at = (s.line, s.col);
            match &s.stmt {
                Stmt::Segment(id, title, members) => {
                    let id = match id {
                        Some(id) => id.clone(),
                        None => self.fresh("seg", &mut segs, &explicit),
                    };
                    self.claim(&id, at)?;
                    for m in members {
                        self.require_node(m, at)?;
                    }
                    self.w.segments.push(Segment { id, title: title.clone(), members: members.clone() });
                }
                Stmt::Note(id, target, text, author, created_at) => {
                    let id = match id {
                        Some(id) => id.clone(),
                        None => self.fresh("note", &mut notes, &explicit),
                    };
                    self.claim(&id, at)?;
                    self.w.notes.push(NoteAnnotation {
                        id,
                        target: target.clone(),
                        text: text.clone(),
                        author: author.clone(),
                        created_at: *created_at,
                    });
                }
                Stmt::Link(id, target, url, title, source) => {
                    let id = match id {
                        Some(id) => id.clone(),
                        None => self.fresh("link", &mut links, &explicit),
                    };
                    self.claim(&id, at)?;
                    self.w.links.push(ExternalLink {
                        id,
                        target: target.clone(),
                        url: url.clone(),
                        title: title.clone(),
                        source: *source,
                    });
                }
                _ => {}
            }
        }
        self.check()?;
        Ok(self.w)
    }

    /// Reports the semantic problem declared earliest in the file.
    fn check(&self) -> Result<(), ParseError> {
        let locate = |id: &Id| self.origin.get(id).copied().unwrap_or(self.header_pos);
        let mut found: Vec<((usize, usize), String)> = self
            .w
            .field_errors()
            .into_iter()
            .map(|(id, e)| (locate(&id), e.to_string()))
            .collect();
        for v in structural_violations(&self.w, &ValidationConfig::default()) {
            // the latest statement involved is the one that broke the graph
            let at = v.subjects.iter().map(&locate).max().unwrap_or(self.header_pos);
            found.push((at, format!("{}: {}", v.code, v.detail)));
        }
        match found.into_iter().min_by_key(|(at, _)| *at) {
            Some((at, msg)) => Err(self.error(at, msg)),
            None => Ok(()),
        }
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("[{}]", quoted.join(", "))
}

fn is_plain(e: &Edge) -> bool {
    e.has_default_id() && e.label.is_empty()
}

/// Edges a `doing` or `reflect` statement implies, so the serializer can
/// leave them out.
fn implied_edges(w: &Workflow) -> BTreeSet<&Id> {
    let mut implied = BTreeSet::new();
    // The only edge in one direction, plain, and joining `own` to a thing.
    let sole = |kind: EdgeKind, own: &Id, from: Option<&Id>, to: Option<&Id>| -> Option<&Edge> {
        let mut matching = w
            .edges
            .values()
            .filter(|e| e.kind == kind && from.is_none_or(|f| &e.from == f) && to.is_none_or(|t| &e.to == t));
        let first = matching.next()?;
        let other = if &first.from == own { &first.to } else { &first.from };
        let joins_thing = w.nodes.get(other).is_some_and(Node::is_thing);
        (matching.next().is_none() && is_plain(first) && joins_thing).then_some(first)
    };
    for (id, node) in &w.nodes {
        let found = match node {
            Node::Doing(_) => [sole(EdgeKind::Flow, id, None, Some(id)), sole(EdgeKind::Flow, id, Some(id), None)],
            Node::Reflective(lp) => {
                let t = &lp.attached_thing;
                [sole(EdgeKind::Reflective, id, Some(t), Some(id)), sole(EdgeKind::Reflective, id, Some(id), Some(t))]
            }
            Node::Thing(_) => continue,
        };
        implied.extend(found.into_iter().flatten().map(|e| &e.id));
    }
    implied
}

/// Canonical text: nodes in topological order with (start, id) tie-breaks,
/// then reflective loops, then edges not implied by node statements,
/// segments, notes and links. Byte-identical for equal workflows.
pub fn serialize_cwn(w: &Workflow) -> String {
    let mut out = String::new();
    let v = &w.video;
    let _ = write!(out, "workflow {}", quote(&v.title));
    if w.id.as_str() != DEFAULT_WORKFLOW_ID {
        let _ = write!(out, " id={}", w.id);
    }
    let _ = write!(out, " duration={}", v.duration);
    if v.uri != DEFAULT_URI {
        let _ = write!(out, " uri={}", quote(&v.uri));
    }
    if w.created_rev != 0 {
        let _ = write!(out, " rev={}", w.created_rev);
    }
    out.push('\n');

    let implied = implied_edges(w);
    let mut section = Vec::new();
    for id in w.canonical_order() {
        let mut line = String::new();
        match &w.nodes[id] {
            Node::Thing(t) => {
                let _ = write!(line, "thing {} {} @{}", t.id, quote(&t.label), t.span);
                if t.detail != GranularityLevel::Medium {
                    let _ = write!(line, " detail={}", t.detail);
                }
                if !t.stuff.is_empty() {
                    let _ = write!(line, " stuff={}", list(&t.stuff));
                }
                if !t.description.is_empty() {
                    let _ = write!(line, " desc={}", quote(&t.description));
                }
            }
            Node::Doing(d) => {
                let _ = write!(line, "doing {} {}", d.id, quote(&d.label));
                let ins = w.edges.values().find(|e| e.to == d.id && implied.contains(&e.id) && e.kind == EdgeKind::Flow);
                if let Some(e) = ins {
                    let _ = write!(line, " from {}", e.from);
                }
                let outs = w
                    .edges
                    .values()
                    .find(|e| e.from == d.id && implied.contains(&e.id) && e.kind == EdgeKind::Flow && ins.is_none_or(|i| i.id != e.id));
                if let Some(e) = outs {
                    let _ = write!(line, " to {}", e.to);
                }
                let _ = write!(line, " @{}", d.span);
                if d.detail != GranularityLevel::Medium {
                    let _ = write!(line, " detail={}", d.detail);
                }
                if !d.tools.is_empty() {
                    let _ = write!(line, " tools={}", list(&d.tools));
                }
                if !d.description.is_empty() {
                    let _ = write!(line, " desc={}", quote(&d.description));
                }
            }
            Node::Reflective(lp) => {
                let _ = write!(line, "reflect {} {} on {} @{}", lp.id, quote(&lp.sensing), lp.attached_thing, lp.span);
                if !lp.adjustment.is_empty() {
                    let _ = write!(line, " adjust={}", quote(&lp.adjustment));
                }
                if lp.detail != GranularityLevel::Medium {
                    let _ = write!(line, " detail={}", lp.detail);
                }
            }
        }
        section.push(line);
    }
    push_section(&mut out, section);

    let mut section = Vec::new();
    for e in w.edges.values().filter(|e| !implied.contains(&e.id) && e.kind != EdgeKind::Revision) {
        let mut line = format!("edge {} from {} to {}", e.kind.as_str(), e.from, e.to);
        if !e.has_default_id() {
            let _ = write!(line, " id={}", e.id);
        }
        if !e.label.is_empty() {
            let _ = write!(line, " label={}", quote(&e.label));
        }
        section.push(line);
    }
    for e in w.edges.values().filter(|e| e.kind == EdgeKind::Revision) {
        let mut line = format!("revision from {} to {}", e.from, e.to);
        if !e.label.is_empty() {
            let _ = write!(line, " reason={}", quote(&e.label));
        }
        if !e.has_default_id() {
            let _ = write!(line, " id={}", e.id);
        }
        section.push(line);
    }
    push_section(&mut out, section);

    let section = w
        .segments
        .iter()
        .map(|s| {
            let members: Vec<&str> = s.members.iter().map(Id::as_str).collect();
            format!("segment {} {} {{ {} }}", s.id, quote(&s.title), members.join(" "))
        })
        .collect();
    push_section(&mut out, section);

    let mut section = Vec::new();
    for n in &w.notes {
        let mut line = format!("note {} on {} {}", n.id, n.target, quote(&n.text));
        if !n.author.is_empty() {
            let _ = write!(line, " by={}", quote(&n.author));
        }
        if n.created_at != DateTime::<Utc>::UNIX_EPOCH {
            let _ = write!(line, " at={}", quote(&n.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true)));
        }
        section.push(line);
    }
    for l in &w.links {
        let mut line = format!("link {} on {} {}", l.id, l.target, quote(&l.url));
        if !l.title.is_empty() {
            let _ = write!(line, " title={}", quote(&l.title));
        }
        if l.source != LinkSource::Manual {
            let _ = write!(line, " source={}", l.source.as_str());
        }
        section.push(line);
    }
    push_section(&mut out, section);
    out
}

fn push_section(out: &mut String, lines: Vec<String>) {
    if lines.is_empty() {
        return;
    }
    out.push('\n');
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
}
