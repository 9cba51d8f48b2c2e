//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use craftflow_core::ingest::{ingest_video, IngestConfig, IngestError, MockProvider, VideoRef};
use craftflow_core::notation::{self, parse_cwn, parse_json, serialize_cwn, serialize_json};
use craftflow_core::synth::{random_workflow, seed_violation, SynthConfig};
use craftflow_core::transforms::{align, diff_workflows, granularity_view};
use craftflow_core::validate::{check_temporal_coverage, validate, ValidationConfig, ViolationCode};
use craftflow_core::*;
use craftflow_service::{router, AppState, ServiceConfig, Store};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use support::*;
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(name: &str) -> Result<Workflow, String> {
    let path = fixtures().join(name);
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let format = notation::Format::from_path(&path).ok_or("unknown extension")?;
    notation::parse(format, &bytes).map_err(|e| format!("{name}: {e}"))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:.1?}, limit {limit:?}"))
}

fn round_trip() -> Outcome {
    let t = Instant::now();
    let cfg = SynthConfig::default();
    for seed in 0..1000u64 {
        let w = random_workflow(seed, &cfg);
        let text = serialize_cwn(&w);
        let back = parse_cwn(&text).map_err(|e| format!("seed {seed}: {e}"))?;
        check(back == w && serialize_cwn(&back) == text, || format!("seed {seed}: cwn drifted"))?;
        let json = serialize_json(&w);
        let back = parse_json(&json).map_err(|e| format!("seed {seed}: {e}"))?;
        check(back == w && serialize_json(&back) == json, || format!("seed {seed}: json drifted"))?;
    }
    within(t, Duration::from_secs(30))?;
    Ok(format!("1000/1000 byte-stable in {:.1?}", t.elapsed()))
}

fn closure() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    for seed in 0..500u64 {
        let cfg = SynthConfig {
            branch_prob: rng.random_range(0.0..0.5),
            loop_prob: rng.random_range(0.0..0.5),
            revision_prob: rng.random_range(0.0..0.3),
            ..SynthConfig::default()
        };
        let w = random_workflow(seed, &cfg);
        let found = validate(&w, &ValidationConfig::default());
        check(found.is_empty(), || format!("seed {seed}: {found:?}"))?;
        let idx = w.flow_index();
        for e in w.edges.values().filter(|e| e.kind == EdgeKind::Flow) {
            check(w.nodes[&e.from].is_thing() != w.nodes[&e.to].is_thing(), || format!("seed {seed}: {} not alternating", e.id))?;
        }
        for n in w.nodes.values().filter(|n| n.is_doing()) {
            let deg = (idx.predecessors(n.id()).len(), idx.successors(n.id()).len());
            check(deg == (1, 1), || format!("seed {seed}: doing {} has degree {deg:?}", n.id()))?;
        }
        let n = w.nodes.len();
        let pos: std::collections::BTreeMap<&Id, usize> = w.nodes.keys().enumerate().map(|(i, id)| (id, i)).collect();
        let flow: Vec<(usize, usize)> = w
            .edges
            .values()
            .filter(|e| e.kind == EdgeKind::Flow)
            .map(|e| (pos[&e.from], pos[&e.to]))
            .collect();
        let reach = support::closure(n, &flow, false);
        // the closure is reflexive, so a cycle shows as an edge whose head reaches its tail
        check(flow.iter().all(|&(a, b)| !reach[b][a]), || format!("seed {seed}: flow cycle"))?;
    }
    Ok("500/500 constructed workflows clean".into())
}

fn mutants() -> Outcome {
    let cfg = SynthConfig::default();
    let mut missed = Vec::new();
    for i in 0..200u64 {
        let code = ViolationCode::ALL[i as usize % ViolationCode::ALL.len()];
        let m = seed_violation(&random_workflow(i, &cfg), code, i.wrapping_mul(7919));
        if !validate(&m, &ValidationConfig::default()).iter().any(|v| v.code == code) {
            missed.push(format!("{i}:{code}"));
        }
    }
    check(missed.is_empty(), || format!("missed {missed:?}"))?;
    Ok("200/200 mutants detected with their seeded code".into())
}

fn coverage() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(2);
    for case in 0..500 {
        let duration = rng.random_range(1_000..60_000u64);
        let max_gap = [0, 250, 1_000, 3_000][rng.random_range(0..4)];
        let mut w = Workflow::new("w", VideoMeta::new("v", Seconds::from_millis(duration), "")).unwrap();
        let mut raw = Vec::new();
        for i in 0..rng.random_range(0..12) {
            let a = rng.random_range(0..=duration);
            let b = (a + rng.random_range(0..8_000)).min(duration);
            raw.push((a, b));
            let span = TimeSpan::new(Seconds::from_millis(a), Seconds::from_millis(b));
            w.nodes.insert(Id::new(format!("n{i}")), Node::Thing(ThingNode::new(format!("n{i}"), "x", span)));
        }
        let reported = check_temporal_coverage(&w, Seconds::from_millis(max_gap));
        let runs = sampled_gaps(&raw, duration, SAMPLE_MS);
        coverage_agrees(&reported, &runs, max_gap, SAMPLE_MS).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(format!("500/500 span sets agree with {SAMPLE_MS} ms sampling"))
}

fn views_of(name: &str, w: &Workflow) -> Result<(), String> {
    let views: Vec<_> = GranularityLevel::ALL.iter().map(|l| granularity_view(w, *l)).collect();
    for v in &views {
        view_well_formed(w, v).map_err(|e| format!("{name} {:?}: {e}", v.level))?;
    }
    for pair in views.windows(2) {
        check(pair[0].visible.is_subset(&pair[1].visible), || format!("{name}: not monotone"))?;
    }
    let everything: BTreeSet<Id> = w.nodes.keys().cloned().collect();
    check(views[2].visible == everything, || format!("{name}: high view hides nodes"))?;
    for v in &views {
        for seg in &w.segments {
            let c = v.collapse_segment(&seg.id).map_err(|e| e.to_string())?;
            view_well_formed(w, &c).map_err(|e| format!("{name} collapsed {}: {e}", seg.id))?;
            check(c.expand_segment(&seg.id).as_ref() == Ok(v), || format!("{name}: expand(collapse({})) differs", seg.id))?;
        }
    }
    Ok(())
}

fn views() -> Outcome {
    let names = ["spoon.cwn", "crane.cwn", "sketch.cwn", "knit-base.cwn", "knit-executed.cwn", "granny.cwn"];
    let mut segmented = 0;
    for name in names {
        let w = load(name)?;
        segmented += usize::from(!w.segments.is_empty());
        views_of(name, &w)?;
    }
    let cfg = SynthConfig::default();
    for seed in 0..500u64 {
        views_of(&format!("seed {seed}"), &random_workflow(seed, &cfg))?;
    }
    Ok(format!("{} fixtures ({segmented} with segments) and 500 random workflows", names.len()))
}

/// Every sequence over {0,1,2} of length at most 8, numbered so that
/// longer sequences come first.
struct Universe {
    seqs: Vec<Vec<u8>>,
    first_of_len: [usize; 10],
}

impl Universe {
    const MAX: usize = 8;

    fn new() -> Universe {
        let mut seqs = Vec::new();
        let mut first_of_len = [0; 10];
        for len in (0..=Self::MAX).rev() {
            first_of_len[len] = seqs.len();
            for k in 0..3usize.pow(len as u32) {
                seqs.push((0..len).map(|p| (k / 3usize.pow(p as u32) % 3) as u8).collect());
            }
        }
        first_of_len[Self::MAX + 1] = seqs.len();
        Universe { seqs, first_of_len }
    }

    fn number(&self, s: &[u8]) -> usize {
        let k: usize = s.iter().enumerate().map(|(p, &c)| c as usize * 3usize.pow(p as u32)).sum();
        self.first_of_len[s.len()] + k
    }

    /// Numbers of every subsequence of `s`, found by trying every subset
    /// of positions.
    fn subsequences(&self, s: &[u8]) -> Vec<usize> {
        let mut out: Vec<usize> = (0u32..1 << s.len())
            .map(|mask| {
                let sub: Vec<u8> = (0..s.len()).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
                self.number(&sub)
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn lcs_exhaustive() -> Outcome {
    let t = Instant::now();
    let u = Universe::new();
    let n = u.seqs.len();
    let words = n.div_ceil(64);
    // bit j of row i: sequence j is a subsequence of sequence i
    let mut bits = vec![0u64; n * words];
    let subs: Vec<Vec<usize>> = u.seqs.iter().map(|s| u.subsequences(s)).collect();
    for (i, list) in subs.iter().enumerate() {
        for &j in list {
            bits[i * words + j / 64] |= 1 << (j % 64);
        }
    }
    let mut pairs = 0u64;
    for (ia, a) in u.seqs.iter().enumerate() {
        for (ib, b) in u.seqs.iter().enumerate() {
            let row = &bits[ib * words..(ib + 1) * words];
            // subsequences of `a` in length order; the first one that is
            // also a subsequence of `b` is a longest common one
            let best = subs[ia]
                .iter()
                .find(|&&j| row[j / 64] >> (j % 64) & 1 == 1)
                .map(|&j| u.seqs[j].len())
                .expect("the empty sequence is common");
            let got = align(a, b);
            if got.len() != best {
                return Err(format!("{a:?} vs {b:?}: aligned {} expected {best}", got.len()));
            }
            if !got.windows(2).all(|p| p[0].0 < p[1].0 && p[0].1 < p[1].1) || !got.iter().all(|&(i, j)| a[i] == b[j]) {
                return Err(format!("{a:?} vs {b:?}: alignment {got:?} is not a common subsequence"));
            }
            pairs += 1;
        }
    }
    within(t, Duration::from_secs(60))?;
    Ok(format!("{pairs} pairs in {:.1?}", t.elapsed()))
}

fn demonstration_fixtures() -> Outcome {
    let base = load("knit-base.cwn")?;
    let executed = load("knit-executed.cwn")?;
    let report = diff_workflows(&base, &executed).map_err(|e| e.to_string())?;
    check(report.records.len() == 1, || format!("{} records", report.records.len()))?;
    let r = &report.records[0];
    check(r.base_path == ["knit every other needle"] && r.executed_path == ["knit every needle"], || format!("{r:?}"))?;
    for name in ["spoon.cwn", "crane.cwn", "sketch.cwn"] {
        let w = load(name)?;
        let found = validate(&w, &ValidationConfig::default());
        check(found.is_empty(), || format!("{name}: {found:?}"))?;
        let census = PatternCensus::of(&w);
        check(census.covers_all_patterns(), || format!("{name}: {:?}", census.counts()))?;
    }
    Ok("knitting diff has one record; spoon, crane, sketch clean with all 7 patterns".into())
}

fn ingest() -> Outcome {
    let provider = MockProvider::new(fixtures().join("ingest"));
    let video = |key: &str| VideoRef::new(VideoMeta::new(format!("file:videos/{key}.mp4"), Seconds::whole(120), ""));
    let (w, report) =
        ingest_video(&provider, &video("gap-then-clean"), &IngestConfig::default()).map_err(|e| e.to_string())?;
    check(report.attempts.len() == 2, || format!("{} attempts", report.attempts.len()))?;
    let feedback = report.attempts[0].feedback.clone().unwrap_or_default();
    check(feedback.contains("TemporalGap"), || format!("feedback {feedback:?}"))?;
    check(validate(&w, &ValidationConfig::default()).is_empty(), || "result not clean".into())?;

    let cfg = IngestConfig { max_retries: 1, ..IngestConfig::default() };
    let outcome = || match ingest_video(&provider, &video("always-disconnected"), &cfg) {
        Err(e @ IngestError::ExhaustedRetries { .. }) => Ok(serde_json::to_string(e.report()).unwrap()),
        Err(e) => Err(format!("unexpected error {e}")),
        Ok(_) => Err("always-invalid transcript was accepted".into()),
    };
    let first = outcome()?;
    check(first.contains("Disconnected"), || "Disconnected missing from report".into())?;
    check(first == outcome()?, || "reports differ between runs".into())?;
    Ok("invalid-then-valid took 2 attempts; always-invalid exhausted identically twice".into())
}

struct Client {
    app: axum::Router,
    bodies: Mutex<Vec<(String, String)>>,
}

impl Client {
    async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Vec<u8>>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("x-edit-token", t);
        }
        let req = req.header("content-type", "application/json").body(body.map_or_else(Body::empty, Body::from)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let text = String::from_utf8_lossy(&resp.into_body().collect().await.unwrap().to_bytes()).into_owned();
        self.bodies.lock().unwrap().push((uri.to_owned(), text.clone()));
        (status, text)
    }
}

async fn lifecycle() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let config = ServiceConfig { expose_history: true, ..ServiceConfig::default() };
    let client = Client { app: router(AppState::new(store, config, None)), bodies: Mutex::new(Vec::new()) };
    let synth = SynthConfig { flow_nodes: 3..=15, ..SynthConfig::default() };
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);

    let mut log = vec![random_workflow(0, &synth)];
    let (status, text) = client.call(Method::POST, "/workflows", None, Some(serialize_json(&log[0]))).await;
    check(status == StatusCode::CREATED, || format!("create: {status} {text}"))?;
    let created: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let id = created["id"].as_str().ok_or("no id")?.to_owned();
    let token = created["edit_token"].as_str().ok_or("no token")?.to_owned();
    let uri = format!("/workflows/{id}");

    let mut forbidden = 0;
    for step in 1..=40u64 {
        let w = random_workflow(step, &synth);
        match rng.random_range(0..4) {
            0 => {
                let bad = format!("{token}x");
                let (s, _) = client.call(Method::PUT, &uri, Some(&bad), Some(serialize_json(&w))).await;
                check(s == StatusCode::FORBIDDEN, || format!("bad token answered {s}"))?;
                let (s, _) = client.call(Method::PUT, &format!("{uri}/restore"), Some(&token), Some(serialize_json(&w))).await;
                check(s == StatusCode::METHOD_NOT_ALLOWED, || format!("restore write answered {s}"))?;
                forbidden += 1;
            }
            1 => {
                let broken = seed_violation(&w, ViolationCode::Disconnected, step);
                let (s, _) = client.call(Method::PUT, &uri, Some(&token), Some(serialize_json(&broken))).await;
                check(s == StatusCode::UNPROCESSABLE_ENTITY, || format!("invalid update answered {s}"))?;
            }
            _ => {
                let (s, text) = client.call(Method::PUT, &uri, Some(&token), Some(serialize_json(&w))).await;
                check(s == StatusCode::OK, || format!("update answered {s}: {text}"))?;
                log.push(w);
            }
        }
        let (s, text) = client.call(Method::GET, &format!("{uri}/restore"), None, None).await;
        check(s == StatusCode::OK, || format!("restore answered {s}"))?;
        let restored: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        check(restored["rev"] == log.len(), || format!("restore at rev {} expected {}", restored["rev"], log.len()))?;
    }
    check(forbidden > 0, || "no bad-token attempts were drawn".into())?;

    // replay: every stored revision equals the accepted update at that point
    for (i, expected) in log.iter().enumerate() {
        let (s, text) = client.call(Method::GET, &format!("{uri}?rev={}", i + 1), None, None).await;
        check(s == StatusCode::OK, || format!("rev {}: {s}", i + 1))?;
        let got = parse_json(text.as_bytes()).map_err(|e| e.to_string())?;
        check(&got == expected, || format!("rev {} differs from the replayed log", i + 1))?;
    }
    let (_, text) = client.call(Method::GET, &format!("{uri}/history"), None, None).await;
    let history: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    check(history.as_array().map(Vec::len) == Some(log.len()), || format!("history has {text}"))?;
    let (s, _) = client.call(Method::GET, &format!("{uri}?rev={}", log.len() + 1), None, None).await;
    check(s == StatusCode::NOT_FOUND, || "revision past the end exists".into())?;

    client.call(Method::GET, &format!("{uri}/restore/view?level=low"), None, None).await;
    let bodies = client.bodies.lock().unwrap();
    let restores: Vec<&(String, String)> = bodies.iter().filter(|(u, _)| u.contains("/restore")).collect();
    let leaks = restores.iter().filter(|(_, b)| b.contains(&token) || b.contains("edit_token")).count();
    check(leaks == 0, || format!("{leaks} restore responses carry the token"))?;
    Ok(format!(
        "{} revisions replay exactly; {forbidden} bad-token writes refused; {} restore responses token-free",
        log.len(),
        restores.len()
    ))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let criteria: Vec<Criterion> = vec![
        ("round-trip", Box::new(round_trip)),
        ("constructive-closure", Box::new(closure)),
        ("seeded-mutation", Box::new(mutants)),
        ("temporal-coverage-oracle", Box::new(coverage)),
        ("granularity-views", Box::new(views)),
        ("diff-oracle", Box::new(lcs_exhaustive)),
        ("demonstration-fixtures", Box::new(demonstration_fixtures)),
        ("ingest-mock", Box::new(ingest)),
        ("service-lifecycle", Box::new(move || rt.block_on(lifecycle()))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(msg) => println!("PASS {name}: {msg} ({:.1?})", t.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} ({:.1?})", t.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
