use super::*;
use crate::model::*;

fn sample() -> Workflow {
    let w = Workflow::new("granny", VideoMeta::new("file:granny.mp4", Seconds::whole(90), "Granny \"square\""))
        .unwrap()
        .with_source(ThingNode::new("T1", "yarn", TimeSpan::secs(0, 20)).with_detail(GranularityLevel::Low))
        .unwrap();
    let mut d = DoingNode::new("D1", "chain 4", TimeSpan::secs(20, 40));
    d.tools = vec!["hook 4mm".into()];
    d.description = "first line\nsecond\tline".into();
    let mut t2 = ThingNode::new("T2", "chain", TimeSpan::new(Seconds::whole(40), Seconds::from_millis(60_250)));
    t2.stuff = vec!["cotton".into(), "a \\ b".into()];
    let w = w.compose_step(&"T1".into(), d, t2).unwrap();
    let w = w
        .compose_step(
            &"T2".into(),
            DoingNode::new("D2", "join ring", TimeSpan::new(Seconds::from_millis(60_250), Seconds::whole(70))),
            ThingNode::new("T3", "ring", TimeSpan::secs(70, 90)).with_detail(GranularityLevel::High),
        )
        .unwrap()
        .attach_reflective(&"T2".into(), ReflectiveLoopNode::new("L1", "count chains", "redo", TimeSpan::secs(45, 50)))
        .unwrap()
        .mark_revision(&"T3".into(), &"T2".into(), "too loose")
        .unwrap()
        .mark_revision(&"T3".into(), &"T2".into(), "still loose")
        .unwrap()
        .declare_segment("S1", "foundation", vec!["T1".into(), "D1".into(), "T2".into()])
        .unwrap();
    let when = chrono::DateTime::parse_from_rfc3339("2024-05-01T10:20:30.123456Z").unwrap().with_timezone(&chrono::Utc);
    w.annotate(Annotation::Note(NoteAnnotation {
        id: "n1".into(),
        target: "T2:D2".into(),
        text: "mind the gap".into(),
        author: "ana".into(),
        created_at: when,
    }))
    .unwrap()
    .annotate(Annotation::Link(ExternalLink {
        id: "k1".into(),
        target: "T1".into(),
        url: "https://example.org/magic-ring".into(),
        title: "Magic ring".into(),
        source: LinkSource::Detected,
    }))
    .unwrap()
}

#[test]
fn minimal_program() {
    let w = parse_cwn("workflow \"w\" duration=60\nthing t1 \"yarn\" @0..60 detail=low\n").unwrap();
    assert_eq!(w.nodes.len(), 1);
    assert_eq!(w.video.duration, Seconds::whole(60));
    assert_eq!(w.video.title, "w");
    assert_eq!(w.nodes[&Id::from("t1")].detail(), GranularityLevel::Low);
    assert_eq!(serialize_cwn(&w), "workflow \"w\" duration=60\n\nthing t1 \"yarn\" @0..60 detail=low\n");
}

#[test]
fn cwn_round_trip_keeps_every_field() {
    let w = sample();
    let text = serialize_cwn(&w);
    let back = parse_cwn(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    assert_eq!(back, w);
    assert_eq!(serialize_cwn(&back), text);
    // the repeated revision keeps its suffixed id
    assert!(text.contains("id=T3:T2:2"), "{text}");
    assert!(text.contains("@40..60.25"));
}

#[test]
fn canonical_text_layout() {
    let text = serialize_cwn(&sample());
    let expected = r#"workflow "Granny \"square\"" id=granny duration=90 uri="file:granny.mp4" rev=9

thing T1 "yarn" @0..20 detail=low
doing D1 "chain 4" from T1 to T2 @20..40 tools=["hook 4mm"] desc="first line\nsecond\tline"
thing T2 "chain" @40..60.25 stuff=["cotton", "a \\ b"]
doing D2 "join ring" from T2 to T3 @60.25..70
thing T3 "ring" @70..90 detail=high
reflect L1 "count chains" on T2 @45..50 adjust="redo"

revision from T3 to T2 reason="too loose"
revision from T3 to T2 reason="still loose" id=T3:T2:2

segment S1 "foundation" { T1 D1 T2 }

note n1 on T2:D2 "mind the gap" by="ana" at="2024-05-01T10:20:30.123456Z"
link k1 on T1 "https://example.org/magic-ring" title="Magic ring" source=detected
"#;
    assert_eq!(text, expected);
}

#[test]
fn json_round_trip_and_cross_format() {
    let w = sample();
    let bytes = serialize_json(&w);
    let back = parse_json(&bytes).unwrap();
    assert_eq!(back, w);
    assert_eq!(serialize_json(&back), bytes);
    let via_cwn = parse_cwn(&serialize_cwn(&back)).unwrap();
    assert_eq!(via_cwn, w);
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.contains("\"end_s\": 60.25"));
    assert!(text.contains("\"duration_s\": 90,"));
    assert!(!text.contains('e') || !text.contains("e+"));
}

#[test]
fn equal_start_times_break_ties_by_id() {
    let mut w = Workflow::new("w", VideoMeta::new("v", Seconds::whole(10), "")).unwrap();
    for id in ["zeta", "alpha", "Mid", "beta_2", "beta"] {
        w.nodes.insert(id.into(), Node::Thing(ThingNode::new(id, id, TimeSpan::secs(0, 10))));
    }
    let text = serialize_cwn(&w);
    let order: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("thing ")).map(|l| l.split(' ').next().unwrap()).collect();
    // reference: std sort on byte strings
    let mut reference = vec!["zeta", "alpha", "Mid", "beta_2", "beta"];
    reference.sort();
    assert_eq!(order, reference);
}

#[test]
fn empty_segments_emit_no_blocks() {
    let w = parse_cwn("workflow \"w\" duration=5\nthing a \"x\" @0..5\n").unwrap();
    assert!(!serialize_cwn(&w).contains("segment"));
}

#[test]
fn auto_ids_and_multiline_segments() {
    let src = r#"
# comments and blank lines are fine
workflow "w" duration=60
thing T1 "a" @0..20
doing D1 "b" from T1 to T2 @20..40
thing T2 "c" @40..60
reflect "look" on T2 @40..45
segment "all" {
  T1 D1
  T2
}
note on T1 "first"
note on T1 "first"
link on T1 "https://example.org" title="x"
"#;
    let w = parse_cwn(src).unwrap();
    assert!(w.nodes.contains_key(&Id::from("loop1")));
    assert_eq!(w.segments[0].id, Id::from("seg1"));
    assert_eq!(w.segments[0].members.len(), 3);
    let ids: Vec<&str> = w.notes.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(ids, ["note1", "note2"]);
    assert_eq!(w.links[0].id, Id::from("link1"));
    assert_eq!(w.links[0].source, LinkSource::Manual);
    assert_eq!(w.video.uri, "unspecified");
    assert_eq!(parse_cwn(&serialize_cwn(&w)).unwrap(), w);
}

fn err(src: &str) -> ParseError {
    parse_cwn(src).unwrap_err()
}

#[test]
fn syntax_errors_point_at_the_token() {
    let e = err("workflow \"w\" duration=60\nthing t1 \"yarn\" @0..6x\n");
    assert_eq!((e.line, e.column), (2, 18));
    assert_eq!(e.snippet, "0..6x");

    let e = err("workflow \"w\" duration=60\nthimg t1 \"yarn\" @0..60\n");
    assert_eq!((e.line, e.column), (2, 1));
    assert!(e.message.contains("unknown statement"));

    let e = err("workflow \"w\" duration=60\nthing t1 \"yarn @0..60\n");
    assert_eq!((e.line, e.column), (2, 10));

    let e = err("thing t1 \"yarn\" @0..60\n");
    assert_eq!(e.line, 1);
    assert!(e.message.contains("workflow"));

    let e = err("workflow \"w\" duration=60\nthing t1 \"yarn\" @0..60 colour=red\n");
    assert_eq!((e.line, e.column), (2, 24));

    let e = err("workflow \"w\" duration=60\nthing t1 \"yarn\" @0..60 detail=huge\n");
    assert_eq!((e.line, e.column), (2, 31));

    let e = err("workflow \"w\" duration=60\nsegment \"s\" { t1\n");
    assert_eq!((e.line, e.column), (2, 13));
}

#[test]
fn semantic_errors_point_at_the_statement() {
    let base = "workflow \"w\" duration=60\nthing T1 \"a\" @0..20\ndoing D1 \"b\" from T1 to T2 @20..40\nthing T2 \"c\" @40..60\n";
    let e = err(&format!("{base}revision from T1 to T2 reason=\"x\"\n"));
    assert_eq!(e.line, 5);
    assert!(e.message.starts_with("RevisionForward"), "{}", e.message);

    let e = err(&format!("{base}thing T1 \"again\" @0..1\n"));
    assert_eq!(e.line, 5);
    assert!(e.message.contains("duplicate id"));

    let e = err(&format!("{base}note on T9 \"x\"\n"));
    assert_eq!(e.line, 5);

    let e = err(&format!("{base}thing X \"stray\" @0..10\n"));
    assert_eq!(e.line, 5);

    let e = err("workflow \"w\" duration=60\nthing T1 \"a\" @0..70\n");
    assert_eq!(e.line, 2);
    assert!(e.message.contains("TimestampOutOfRange"));

    let e = err("workflow \"w\" duration=60\nthing T1 \"a\" @0..20\ndoing D1 \"b\" from T1 to T9 @20..40\n");
    assert_eq!(e.line, 3);
    assert!(e.message.contains("unknown node `T9`"));
}

#[test]
fn deleting_the_reported_line_changes_the_error() {
    let good = serialize_cwn(&sample());
    let lines: Vec<&str> = good.lines().collect();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[i] = broken[i].replacen(' ', " ~", 1);
        let e = parse_cwn(&broken.join("\n")).unwrap_err();
        assert_eq!(e.line, i + 1);
        broken.remove(e.line - 1);
        if let Err(again) = parse_cwn(&broken.join("\n")) {
            assert!((again.line, again.column, &again.message) != (e.line, e.column, &e.message));
        }
    }
}

#[test]
fn json_minimal_and_bounds() {
    let doc = br#"{"version":1,"video":{"uri":"v","duration_s":60,"title":""},
        "nodes":[{"id":"t1","kind":"thing","label":"yarn","span":{"start_s":0,"end_s":60}}],
        "edges":[],"segments":[],"notes":[],"links":[]}"#;
    let w = parse_json(doc).unwrap();
    assert_eq!(w.nodes.len(), 1);
    assert_eq!(w.nodes[&Id::from("t1")].detail(), GranularityLevel::Medium);

    let over = String::from_utf8(doc.to_vec()).unwrap().replace("\"end_s\":60", "\"end_s\":70");
    let e = parse_json(over.as_bytes()).unwrap_err();
    assert_eq!(e.json_pointer, "/nodes/0/span");
}

#[test]
fn json_schema_is_closed_and_versioned() {
    let w = sample();
    let mut v = to_value(&w);
    v["nodes"][1]["colour"] = serde_json::json!("red");
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/nodes/1/colour");

    let mut v = to_value(&w);
    v["version"] = serde_json::json!(2);
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/version");

    let mut v = to_value(&w);
    v.as_object_mut().unwrap().remove("version");
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/version");

    let mut v = to_value(&w);
    v["nodes"][0]["span"]["start_s"] = serde_json::json!(1.2345);
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/nodes/0/span/start_s");

    let mut v = to_value(&w);
    v["edges"][0]["kind"] = serde_json::json!("summary");
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/edges/0/kind");

    let mut v = to_value(&w);
    v["links"][0]["url"] = serde_json::json!("not a url");
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/links/0/url");

    // first problem in document order wins
    let mut v = to_value(&w);
    v["nodes"][2]["label"] = serde_json::json!(3);
    v["nodes"][4]["kind"] = serde_json::json!("stuff");
    assert_eq!(parse_value(&v).unwrap_err().json_pointer, "/nodes/2/label");

    assert_eq!(parse_json(b"{nope").unwrap_err().json_pointer, "");
}

#[test]
fn json_keeps_grammar_breaks_for_validation() {
    let mut w = sample();
    w.nodes.insert("X".into(), Node::Thing(ThingNode::new("X", "stray", TimeSpan::secs(0, 5))));
    let back = parse_json(&serialize_json(&w)).unwrap();
    assert_eq!(back, w);
}

#[test]
fn format_dispatch() {
    use std::path::Path;
    assert_eq!(Format::from_path(Path::new("a/b.cwn")), Some(Format::Cwn));
    assert_eq!(Format::from_path(Path::new("b.json")), Some(Format::Json));
    assert_eq!(Format::from_path(Path::new("b.txt")), None);
    let w = sample();
    for f in [Format::Cwn, Format::Json] {
        assert_eq!(parse(f, &serialize(f, &w)).unwrap(), w);
    }
}
