//! Command-line entry points. [`run`] returns the process exit code so tests
//! can drive the CLI in-process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bytecomposer_core::abc::{parse_abc, AbcScore};
use bytecomposer_core::attributes::MusicalAttributes;
use bytecomposer_core::eval::{corpus_metrics, evaluate, CorpusMetrics, EvalReport, InstrumentRangeTable};
use bytecomposer_core::expert::{BackendError, Expert, ExpertBackend, HttpBackend, URL_VAR};
use bytecomposer_core::pipeline::{transcript, Pipeline, PipelineConfig, SessionStatus};
use bytecomposer_core::voter::vote;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::service;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FINDINGS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bytecomposer", version, about = "Compose, evaluate and rank ABC melodies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the composition pipeline once and write the selected score.
    Compose(ComposeArgs),
    /// Check ABC files for beat, range and header errors.
    Eval(EvalArgs),
    /// Rank candidate scores and print the winner.
    Vote(VoteArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Args)]
struct ComposeArgs {
    #[arg(long)]
    query: String,
    #[arg(long, value_enum, default_value = "mock")]
    backend: Backend,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    #[arg(long, default_value_t = 8)]
    measures: usize,
    /// Where to write the selected score; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// An ABC file, or a directory whose `*.abc` files are evaluated.
    #[arg(long = "in")]
    input: PathBuf,
    /// Instrument range table (`name,min_midi,max_midi` lines).
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Target attributes as `name: value` lines.
    #[arg(long)]
    target: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VoteArgs {
    #[arg(long, num_args = 1.., required = true)]
    candidates: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "sessions")]
    sessions_dir: PathBuf,
    /// Static files served at `/` (the web console build).
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    backend: Backend,
}

/// Stands in when the HTTP backend has no endpoint configured, so the
/// session aborts with a backend failure instead of the CLI guessing.
struct Unconfigured;

impl ExpertBackend for Unconfigured {
    fn complete(&self, _prompt: &str, _max_length: usize) -> Result<String, BackendError> {
        Err(BackendError(format!("{URL_VAR} is not set")))
    }

    fn name(&self) -> &str {
        "unconfigured"
    }

    fn deterministic(&self) -> bool {
        true
    }
}

fn pipeline_for(backend: Backend) -> Pipeline {
    match backend {
        Backend::Mock => Pipeline::mock(),
        Backend::Http => {
            let b: Arc<dyn ExpertBackend> = match HttpBackend::from_env() {
                Some(h) => Arc::new(h),
                None => Arc::new(Unconfigured),
            };
            Pipeline::new(Expert::new(b), InstrumentRangeTable::default())
        }
    }
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Compose(a) => compose(a, out, err),
        Command::Eval(a) => eval(a, out),
        Command::Vote(a) => vote_cmd(a, out),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_USAGE
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn compose(a: ComposeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    let config = PipelineConfig {
        candidate_count: a.candidates,
        measures: a.measures,
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let session = pipeline_for(a.backend)
        .run(&a.query, config)
        .map_err(|e| e.to_string())?;
    if let Some(path) = &a.transcript {
        write_file(path, &transcript(&session))?;
    }
    if session.status != SessionStatus::Done {
        let reason = session.abort_reason.as_deref().unwrap_or("unknown reason");
        let _ = writeln!(err, "aborted: {reason}");
        return Ok(EXIT_FINDINGS);
    }
    let abc = session.selected_abc().ok_or("done without a selection")?;
    match &a.out {
        Some(path) => {
            write_file(path, &abc)?;
            let _ = writeln!(
                out,
                "selected candidate {} of {} -> {}",
                session.selected.unwrap_or(0),
                session.candidates.len(),
                path.display()
            );
        }
        None => {
            let _ = write!(out, "{abc}");
        }
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FileOutcome {
    Evaluated { report: EvalReport },
    SyntaxError { error: String },
    NoNotes,
    Unreadable { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    #[serde(flatten)]
    pub outcome: FileOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub files: Vec<FileEntry>,
    /// Present when a directory was evaluated and at least one file was.
    pub corpus: Option<CorpusMetrics>,
}

fn abc_files(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("reading {}: {e}", dir.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "abc"))
        .collect();
    files.sort();
    Ok(files)
}

fn evaluate_file(path: &Path, table: &InstrumentRangeTable, target: Option<&MusicalAttributes>) -> FileOutcome {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return FileOutcome::Unreadable { error: e.to_string() },
    };
    match parse_abc(&text) {
        Err(e) => FileOutcome::SyntaxError { error: e.to_string() },
        Ok(score) => match evaluate(&score, table, target) {
            Ok(report) => FileOutcome::Evaluated { report },
            Err(_) => FileOutcome::NoNotes,
        },
    }
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32, String> {
    let table = match &a.ranges {
        Some(p) => InstrumentRangeTable::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => InstrumentRangeTable::default(),
    };
    let target = match &a.target {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Some(MusicalAttributes::from_kv(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        None => None,
    };
    let is_dir = a.input.is_dir();
    let files = if is_dir {
        abc_files(&a.input)?
    } else if a.input.is_file() {
        vec![a.input.clone()]
    } else {
        return Err(format!("{} does not exist", a.input.display()));
    };

    let entries: Vec<FileEntry> = files
        .iter()
        .map(|p| FileEntry {
            path: p.display().to_string(),
            outcome: evaluate_file(p, &table, target.as_ref()),
        })
        .collect();
    let reports: Vec<EvalReport> = entries
        .iter()
        .filter_map(|e| match &e.outcome {
            FileOutcome::Evaluated { report } => Some(report.clone()),
            _ => None,
        })
        .collect();
    let output = EvalOutput {
        corpus: if is_dir { corpus_metrics(&reports) } else { None },
        files: entries,
    };

    for e in &output.files {
        match &e.outcome {
            FileOutcome::Evaluated { report } if report.is_clean() => {
                let _ = writeln!(out, "{}: clean ({})", e.path, report.summary());
            }
            FileOutcome::Evaluated { report } => {
                let _ = writeln!(out, "{}: {}", e.path, report.summary());
                for finding in &report.errors {
                    let _ = writeln!(out, "  {finding}");
                }
            }
            FileOutcome::SyntaxError { error } => {
                let _ = writeln!(out, "{}: syntax error: {error}", e.path);
            }
            FileOutcome::NoNotes => {
                let _ = writeln!(out, "{}: no notes to evaluate", e.path);
            }
            FileOutcome::Unreadable { error } => {
                let _ = writeln!(out, "{}: unreadable: {error}", e.path);
            }
        }
    }
    if let Some(m) = &output.corpus {
        let pct = |x: f64| format!("{:.1}%", 100.0 * x);
        let _ = write!(
            out,
            "corpus of {}: TSER {}, IRER {}, SICR {}",
            m.n_scores,
            pct(m.tser),
            pct(m.irer),
            pct(m.sicr)
        );
        if let Some(aaa) = m.aaa {
            let _ = write!(out, ", AAA {}", pct(aaa));
        }
        let _ = writeln!(out);
    }
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&output).map_err(|e| e.to_string())?;
        write_file(path, &json)?;
    }

    if output
        .files
        .iter()
        .any(|e| matches!(e.outcome, FileOutcome::Unreadable { .. }))
    {
        return Ok(EXIT_USAGE);
    }
    let all_clean = output
        .files
        .iter()
        .all(|e| matches!(&e.outcome, FileOutcome::Evaluated { report } if report.is_clean()));
    Ok(if all_clean { EXIT_OK } else { EXIT_FINDINGS })
}

fn load_candidate(path: &Path, table: &InstrumentRangeTable) -> Result<(AbcScore, EvalReport), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let score = parse_abc(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let report = evaluate(&score, table, None).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((score, report))
}

fn vote_cmd(a: VoteArgs, out: &mut dyn Write) -> Result<i32, String> {
    if a.candidates.len() < 2 {
        return Err(format!("need at least 2 candidates, got {}", a.candidates.len()));
    }
    let table = InstrumentRangeTable::default();
    let loaded = a
        .candidates
        .iter()
        .map(|p| load_candidate(p, &table))
        .collect::<Result<Vec<_>, _>>()?;
    let result = vote(&loaded).map_err(|e| e.to_string())?;
    for (rank, &k) in result.ranking.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}. {} score {:.4}, {} errors",
            rank + 1,
            a.candidates[k].display(),
            result.scores[k],
            result.features[k].error_count
        );
    }
    let _ = writeln!(out, "{}", a.candidates[result.winner()].display());
    Ok(EXIT_OK)
}

fn serve(a: ServeArgs) -> Result<i32, String> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let state = service::AppState::new(pipeline_for(a.backend), &a.sessions_dir);
        let app = service::router(state, a.ui_dir.as_deref());
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", a.port))
            .await
            .map_err(|e| format!("binding port {}: {e}", a.port))?;
        tracing::info!(port = a.port, sessions_dir = %a.sessions_dir.display(), "listening");
        service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())?;
        Ok(EXIT_OK)
    })
}
