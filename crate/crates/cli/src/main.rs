//! `craftflow`: parse, check, convert, view, compare and draft workflows.
//!
//! Exit status: 0 success, 1 violations or divergence found, 2 usage,
//! input or runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use craftflow_core::ingest::{
    ingest_video, HttpProvider, IngestConfig, IngestError, MockProvider, ModelProvider, VideoRef,
};
use craftflow_core::notation::{self, Format, NotationError};
use craftflow_core::transforms::{diff_workflows, export_dot, export_view_dot, granularity_view};
use craftflow_core::validate::{validate, ValidationConfig};
use craftflow_core::{GranularityLevel, Id, PatternCensus, Seconds, VideoMeta, Workflow};
use craftflow_service::{AppState, ServiceConfig, Store};
use serde_json::json;

#[derive(Parser)]
#[command(name = "craftflow", version, about = "Craft workflow graphs from narrated videos")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Input format, when the extension does not say.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum FormatArg {
    Cwn,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Cwn => Format::Cwn,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum Level {
    Low,
    Medium,
    High,
}

impl From<Level> for GranularityLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Low => GranularityLevel::Low,
            Level::Medium => GranularityLevel::Medium,
            Level::High => GranularityLevel::High,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(clap::Args, Clone)]
struct ProviderOpts {
    /// Model provider for drafting workflows.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Transcript directory for the mock provider.
    #[arg(long, default_value = "fixtures/ingest")]
    fixtures: PathBuf,
    /// Endpoint for the http provider.
    #[arg(long, env = "CRAFTFLOW_MODEL_ENDPOINT")]
    endpoint: Option<String>,
    /// Bearer token for the http provider.
    #[arg(long, env = "CRAFTFLOW_MODEL_TOKEN", hide_env_values = true)]
    model_token: Option<String>,
    #[arg(long, default_value_t = 3)]
    max_retries: usize,
    /// Per-call deadline in seconds.
    #[arg(long, default_value_t = 300)]
    deadline_s: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a file and summarise it.
    Parse { file: PathBuf },
    /// Check a file against the grammar.
    Validate {
        file: PathBuf,
        /// Longest uncovered stretch of video tolerated.
        #[arg(long, default_value_t = 1.0)]
        max_gap_s: f64,
    },
    /// Rewrite between .cwn and .json; the output extension picks the format.
    Convert { input: PathBuf, output: PathBuf },
    /// Show a workflow at one level of detail.
    View {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "high")]
        level: Level,
        /// Segment ids to fold, comma-separated.
        #[arg(long, value_delimiter = ',')]
        collapse: Vec<String>,
        /// Print Graphviz DOT instead of a listing.
        #[arg(long)]
        dot: bool,
    },
    /// Compare an executed workflow against a base one.
    Diff { base: PathBuf, executed: PathBuf },
    /// Draft a workflow from a video with a model provider.
    Ingest {
        video_uri: String,
        #[arg(long)]
        duration_s: f64,
        #[arg(long, default_value = "")]
        title: String,
        #[command(flatten)]
        provider: ProviderOpts,
        /// Where to write the workflow; the extension picks the format.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        max_gap_s: f64,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "CRAFTFLOW_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, env = "CRAFTFLOW_DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        /// Refuse workflows with violations instead of storing them flagged.
        #[arg(long, env = "CRAFTFLOW_STRICT_VALIDATION", default_value_t = true, action = clap::ArgAction::Set)]
        strict_validation: bool,
        #[arg(long, env = "CRAFTFLOW_MAX_GAP_S", default_value_t = 1.0)]
        max_gap_s: f64,
        /// Serve the full revision history.
        #[arg(long)]
        expose_history: bool,
        #[command(flatten)]
        provider: ProviderOpts,
    },
}

/// Outcome of a command that ran to completion.
enum Done {
    Ok,
    Findings,
    /// Failed, and the failure has already been reported.
    Reported,
}

/// Input problems that should read as `file:line:col: message`.
#[derive(Debug)]
struct InputError {
    rendered: String,
    json: serde_json::Value,
}

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.rendered)
    }
}

impl std::error::Error for InputError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let json = cli.json;
    match run(cli) {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::Findings) => ExitCode::from(1),
        Ok(Done::Reported) => ExitCode::from(2),
        Err(e) => {
            match e.downcast_ref::<InputError>() {
                Some(input) => {
                    eprintln!("{}", input.rendered);
                    if json {
                        out(&format!("{}\n", json!({ "ok": false, "error": input.json })));
                    }
                }
                None => {
                    eprintln!("error: {e:#}");
                    if json {
                        out(&format!("{}\n", json!({ "ok": false, "error": { "message": format!("{e:#}") } })));
                    }
                }
            }
            ExitCode::from(2)
        }
    }
}

fn format_of(path: &Path, forced: Option<FormatArg>) -> anyhow::Result<Format> {
    forced
        .map(Format::from)
        .or_else(|| Format::from_path(path))
        .ok_or_else(|| anyhow!("{}: cannot tell the format; use a .cwn or .json extension or --format", path.display()))
}

fn load(path: &Path, forced: Option<FormatArg>) -> anyhow::Result<Workflow> {
    let format = format_of(path, forced)?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    notation::parse(format, &bytes).map_err(|e| {
        let file = path.display();
        let err = match e {
            NotationError::Parse(p) => {
                let mut rendered = format!("{file}:{}:{}: {}", p.line, p.column, p.message);
                if !p.snippet.is_empty() {
                    rendered.push_str(&format!("\n    {}", p.snippet));
                }
                let json = json!({ "file": file.to_string(), "line": p.line, "column": p.column, "message": p.message });
                InputError { rendered, json }
            }
            NotationError::Schema(s) => InputError {
                rendered: format!("{file}: {s}"),
                json: json!({ "file": file.to_string(), "schema": s }),
            },
        };
        anyhow::Error::new(err)
    })
}

fn gap(max_gap_s: f64) -> anyhow::Result<Seconds> {
    Seconds::from_secs_f64(max_gap_s).ok_or_else(|| anyhow!("--max-gap-s must be a non-negative number"))
}

/// Writes to stdout, giving up quietly when the reader has gone away.
fn out(s: &str) {
    use std::io::Write as _;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(s.as_bytes()).and_then(|()| stdout.flush());
}

fn emit(json_mode: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    if json_mode {
        out(&format!("{value}\n"));
    } else {
        out(&text());
    }
}

fn run(cli: Cli) -> anyhow::Result<Done> {
    let j = cli.json;
    match cli.command {
        Command::Parse { file } => {
            let w = load(&file, cli.format)?;
            let census = PatternCensus::of(&w);
            let value = json!({
                "ok": true, "id": w.id, "nodes": w.nodes.len(), "edges": w.edges.len(),
                "segments": w.segments.len(), "notes": w.notes.len(), "links": w.links.len(),
                "duration_s": w.video.duration.to_string(), "patterns": census,
            });
            emit(j, value, || {
                let mut s = format!(
                    "{}: {} nodes, {} edges, {} segments, {} notes, {} links\n",
                    w.id,
                    w.nodes.len(),
                    w.edges.len(),
                    w.segments.len(),
                    w.notes.len(),
                    w.links.len()
                );
                for (name, n) in census.counts() {
                    s.push_str(&format!("  {name}: {n}\n"));
                }
                s
            });
            Ok(Done::Ok)
        }
        Command::Validate { file, max_gap_s } => {
            let w = load(&file, cli.format)?;
            let cfg = ValidationConfig { max_gap: gap(max_gap_s)?, ..ValidationConfig::default() };
            let found = validate(&w, &cfg);
            emit(j, serde_json::to_value(&found)?, || {
                let mut s: String = found.iter().map(|v| format!("{}: {v}\n", file.display())).collect();
                s.push_str(&format!("{} violation{}\n", found.len(), if found.len() == 1 { "" } else { "s" }));
                s
            });
            Ok(if found.is_empty() { Done::Ok } else { Done::Findings })
        }
        Command::Convert { input, output } => {
            let w = load(&input, cli.format)?;
            let to = format_of(&output, None)?;
            std::fs::write(&output, notation::serialize(to, &w)).with_context(|| format!("writing {}", output.display()))?;
            emit(j, json!({ "ok": true, "written": output }), || format!("wrote {}\n", output.display()));
            Ok(Done::Ok)
        }
        Command::View { file, level, collapse, dot } => {
            let w = load(&file, cli.format)?;
            let mut v = granularity_view(&w, level.into());
            for seg in collapse.iter().filter(|s| !s.is_empty()) {
                v = v.collapse_segment(&Id::new(seg.as_str()))?;
            }
            if dot {
                out(&if v.collapsed.is_empty() && v.visible.len() == w.nodes.len() { export_dot(&w) } else { export_view_dot(&v) });
                return Ok(Done::Ok);
            }
            emit(j, serde_json::to_value(&v)?, || {
                let mut s = format!("level {}: {} of {} nodes shown\n", v.level.as_str(), v.visible.len(), w.nodes.len());
                for id in v.visible_in_order() {
                    let n = &w.nodes[id];
                    s.push_str(&format!("  {:<10} {:<9} {:<14} {}\n", id.as_str(), n.kind().as_str(), n.span().to_string(), n.label()));
                }
                for e in &v.summaries {
                    s.push_str(&format!("  {} ~> {}  ({}, {})\n", e.from, e.to, e.label, e.span));
                }
                s
            });
            Ok(Done::Ok)
        }
        Command::Diff { base, executed } => {
            let a = load(&base, cli.format)?;
            let b = load(&executed, cli.format)?;
            let report = diff_workflows(&a, &b)?;
            emit(j, serde_json::to_value(&report)?, || {
                let mut s = String::new();
                for r in &report.records {
                    let at = r.at.as_ref().map_or("(start)".to_owned(), |p| format!("{:?}", p.label));
                    let rejoin = r.rejoin.as_ref().map_or("(end)".to_owned(), |p| format!("{:?}", p.label));
                    s.push_str(&format!("after {at} until {rejoin}:\n  - {:?}\n  + {:?}\n", r.base_path, r.executed_path));
                }
                s.push_str(&format!(
                    "{} divergence{}, {} of {} aligned steps matched\n",
                    report.records.len(),
                    if report.records.len() == 1 { "" } else { "s" },
                    report.matched,
                    report.alignment_len
                ));
                s
            });
            Ok(if report.diverges() { Done::Findings } else { Done::Ok })
        }
        Command::Ingest { video_uri, duration_s, title, provider, out, max_gap_s } => {
            let duration = Seconds::from_secs_f64(duration_s)
                .filter(|d| *d > Seconds::ZERO)
                .ok_or_else(|| anyhow!("--duration-s must be positive"))?;
            let model = make_provider(&provider)?.ok_or_else(|| anyhow!("--provider is required"))?;
            let cfg = IngestConfig {
                max_retries: provider.max_retries,
                deadline: Duration::from_secs(provider.deadline_s),
                validation: ValidationConfig { max_gap: gap(max_gap_s)?, ..ValidationConfig::default() },
                ..IngestConfig::default()
            };
            let video = VideoRef::new(VideoMeta::new(video_uri, duration, title));
            match ingest_video(model.as_ref(), &video, &cfg) {
                Ok((w, report)) => {
                    if let Some(path) = &out {
                        let to = format_of(path, None)?;
                        std::fs::write(path, notation::serialize(to, &w)).with_context(|| format!("writing {}", path.display()))?;
                    }
                    let value = json!({ "ok": true, "report": report, "workflow": notation::to_value(&w) });
                    emit(j, value, || match &out {
                        Some(p) => format!("{} attempt(s), {:?}; wrote {}\n", report.attempts.len(), report.status, p.display()),
                        None => notation::serialize_cwn(&w),
                    });
                    Ok(Done::Ok)
                }
                Err(e) => {
                    let failed = matches!(e, IngestError::ExhaustedRetries { .. });
                    emit(j, json!({ "ok": false, "error": e.to_string(), "report": e.report() }), || {
                        let mut s = String::new();
                        for v in &e.report().final_violations {
                            s.push_str(&format!("{v}\n"));
                        }
                        s
                    });
                    eprintln!("ingest failed after {} attempt(s): {e}", e.report().attempts.len());
                    Ok(if failed { Done::Findings } else { Done::Reported })
                }
            }
        }
        Command::Serve { listen, data_dir, strict_validation, max_gap_s, expose_history, provider } => {
            let store = Store::open(&data_dir).with_context(|| format!("opening {}", data_dir.display()))?;
            let validation = ValidationConfig { max_gap: gap(max_gap_s)?, ..ValidationConfig::default() };
            let config = ServiceConfig {
                strict_validation,
                validation,
                expose_history,
                ingest: IngestConfig {
                    max_retries: provider.max_retries,
                    deadline: Duration::from_secs(provider.deadline_s),
                    validation,
                    ..IngestConfig::default()
                },
            };
            let state = AppState::new(store, config, make_provider(&provider)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&listen).await.with_context(|| format!("binding {listen}"))?;
                let addr = listener.local_addr()?;
                emit(j, json!({ "listening": addr.to_string() }), || format!("listening on http://{addr}\n"));
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                craftflow_service::serve(listener, state, shutdown).await?;
                anyhow::Ok(())
            })?;
            Ok(Done::Ok)
        }
    }
}

fn make_provider(opts: &ProviderOpts) -> anyhow::Result<Option<Arc<dyn ModelProvider>>> {
    Ok(match opts.provider {
        None => None,
        Some(ProviderArg::Mock) => Some(Arc::new(MockProvider::new(&opts.fixtures))),
        Some(ProviderArg::Http) => {
            let endpoint = opts.endpoint.clone().ok_or_else(|| anyhow!("--endpoint is required with --provider http"))?;
            let mut p = HttpProvider::new(endpoint);
            p.bearer = opts.model_token.clone();
            Some(Arc::new(p))
        }
    })
}
