//! `vhi` command-line tool.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
//! Diagnostics go to stderr as one JSON object per line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vhi_core::io::report::{LesionsFile, Provenance, ThresholdReport, VhiReport};
use vhi_core::io::{self, json as canon};
use vhi_core::metrics::{self, ingest, svg, Transform};
use vhi_core::segment::{LogEntry, DEFAULT_MIN_REGION_PIXELS};
use vhi_core::service::{self, AppConfig, ServiceError, SessionStore, StoreOptions};
use vhi_core::{
    apply_cleaning, build_candidate, compute_thresholds, compute_vhi, CandidateSegmentation, CleaningDecisionLog,
    Error, FORMAT_VERSION, TOOL_VERSION,
};

#[derive(Parser)]
#[command(name = "vhi", about = "Volume of hyperintense inflammation from STIR MRI", disable_version_flag = true)]
struct Cli {
    /// Print tool and file-format versions.
    #[arg(short = 'V', long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Derive sensitive and conservative thresholds from a normal-bone ROI.
    Threshold {
        #[arg(long)]
        stir: PathBuf,
        #[arg(long)]
        normal_mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold the disease region and label candidate lesions.
    Segment {
        #[arg(long)]
        stir: PathBuf,
        #[arg(long)]
        disease_mask: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_REGION_PIXELS)]
        min_region_px: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply a decision log to candidate masks.
    Clean {
        #[arg(long)]
        sensitive: PathBuf,
        #[arg(long)]
        conservative: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        /// JSON array of log entries, or JSON lines.
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Count voxels and volume of a (cleaned) segmentation.
    Measure {
        #[arg(long)]
        sensitive: PathBuf,
        #[arg(long)]
        conservative: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Recorded in the report provenance.
        #[arg(long, default_value_t = DEFAULT_MIN_REGION_PIXELS)]
        min_region_px: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement and outcome statistics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Run the cleaning-session HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Dice overlap of two masks; prints the coefficient.
    Dice {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voxel-wise vote of several masks.
    Composite {
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        min_votes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias and 95% limits of agreement between two readers.
    BlandAltman {
        /// CSV with subject_id,reader_a,reader_b[,timepoint].
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "none")]
        transform: Transform,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Least-squares regression with t-based intervals.
    Regress {
        /// CSV with x,y columns.
        #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
        points: Option<PathBuf>,
        /// Scores CSV; regresses V_HI on SPARCC.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// With --scores: per-visit levels or post-minus-pre changes.
        #[arg(long, default_value = "deltas", value_parser = ["levels", "deltas"])]
        mode: String,
        /// Applied to both coordinates before fitting.
        #[arg(long, default_value = "none")]
        transform: Transform,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Responder agreement between clinical, V_HI and SPARCC criteria.
    Response {
        #[arg(long)]
        scores: PathBuf,
        /// A subject responds when post - pre falls below this.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    data_dir: PathBuf,
    /// Require `Authorization: Bearer <token>` on API requests.
    #[arg(long)]
    token: Option<String>,
    /// Accept voxel-subset erase actions.
    #[arg(long)]
    allow_erase: bool,
    /// Serve static UI assets from this directory.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

fn diag(level: &str, kind: &str, message: impl std::fmt::Display) {
    eprintln!(
        "{}",
        json!({"level": level, "kind": kind, "message": message.to_string()})
    );
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<ServiceError>() {
            return match e {
                ServiceError::Core(inner) if inner.is_io() => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<ServiceError>() {
            return e.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            diag("error", "usage", e.render());
            return ExitCode::from(1);
        }
    };
    if cli.version {
        println!("vhi {TOOL_VERSION} (format_version {FORMAT_VERSION})");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        diag("error", "usage", "no subcommand given; see `vhi --help`");
        return ExitCode::from(1);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            diag("error", error_kind(&e), format!("{e:#}"));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Threshold { stir, normal_mask, out } => {
            let stir = io::load_volume(&stir)?;
            let mask = io::load_mask(&normal_mask)?;
            let est = compute_thresholds(&stir, &mask)?;
            if est.thresholds.clamped {
                diag("warning", "threshold_clamped", format!(
                    "sensitive threshold clamped to the conservative threshold {}",
                    est.thresholds.l_upper
                ));
            }
            canon::write_json(&out, &ThresholdReport::from_estimate(&est))?;
        }
        Command::Segment { stir, disease_mask, thresholds, min_region_px, out_dir } => {
            let stir = io::load_volume(&stir)?;
            let disease = io::load_mask(&disease_mask)?;
            let pair = read_thresholds(&thresholds)?;
            let cand = build_candidate(&stir, &disease, &pair, min_region_px)?;
            write_candidate(&out_dir, &cand)?;
        }
        Command::Clean { sensitive, conservative, thresholds, decisions, out_dir } => {
            let cand = CandidateSegmentation::from_masks(
                io::load_mask(&sensitive)?,
                io::load_mask(&conservative)?,
                read_thresholds(&thresholds)?,
            )?;
            let log = read_decisions(&decisions)?;
            let (s, c) = apply_cleaning(&cand, &log)?;
            create_dir(&out_dir)?;
            io::save_mask(&out_dir.join("sensitive.rle.json"), &s)?;
            io::save_mask(&out_dir.join("conservative.rle.json"), &c)?;
        }
        Command::Measure { sensitive, conservative, thresholds, min_region_px, out } => {
            let s = io::load_mask(&sensitive)?;
            let c = io::load_mask(&conservative)?;
            let m = compute_vhi(&s, &c)?;
            let pair = thresholds.as_deref().map(read_thresholds).transpose()?;
            canon::write_json(&out, &VhiReport::new(m, pair, Provenance::current(min_region_px)))?;
        }
        Command::Metrics(m) => run_metrics(m)?,
        Command::Serve(args) => serve(args)?,
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_thresholds(path: &Path) -> anyhow::Result<vhi_core::ThresholdPair> {
    let report: ThresholdReport = canon::read_json(path, "thresholds")?;
    Ok(report.to_pair()?)
}

fn write_candidate(dir: &Path, cand: &CandidateSegmentation) -> anyhow::Result<()> {
    create_dir(dir)?;
    io::save_mask(&dir.join("sensitive.rle.json"), cand.sensitive())?;
    io::save_mask(&dir.join("conservative.rle.json"), cand.conservative())?;
    canon::write_json(
        &dir.join("lesions.json"),
        &LesionsFile::new(cand.lesions().iter().map(|l| l.summary())),
    )?;
    Ok(())
}

fn read_decisions(path: &Path) -> anyhow::Result<CleaningDecisionLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let entries: Vec<LogEntry> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| Error::Format { what: "decision log", detail: e.to_string() })?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Format { what: "decision log", detail: e.to_string() })?
    };
    Ok(CleaningDecisionLog::from_entries(entries))
}

/// Canonical JSON to `out`, or to stdout when no path is given.
fn emit<T: serde::Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(p) => canon::write_json(p, value)?,
        None => print!("{}", canon::to_canonical_string(value)?),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn run_metrics(cmd: MetricsCommand) -> anyhow::Result<()> {
    match cmd {
        MetricsCommand::Dice { a, b, out } => {
            let r = metrics::dice(&io::load_mask(&a)?, &io::load_mask(&b)?)?;
            println!("{}", serde_json::to_string(&canon::round_sig9(r.dice))?);
            if let Some(out) = out {
                canon::write_json(&out, &r)?;
            }
        }
        MetricsCommand::Composite { masks, min_votes, out } => {
            let masks = masks.iter().map(|p| io::load_mask(p)).collect::<Result<Vec<_>, _>>()?;
            let reference = metrics::composite_reference(&masks, min_votes)?;
            io::save_mask(&out, &reference)?;
        }
        MetricsCommand::BlandAltman { pairs, transform, out, svg: svg_out } => {
            let pairs: Vec<_> = ingest::read_pairs(&pairs)?.into_iter().map(|(_, p)| p).collect();
            let r = metrics::bland_altman(&pairs, transform)?;
            emit(out.as_deref(), &r)?;
            if let Some(p) = svg_out {
                write_text(&p, &svg::bland_altman_svg(&r, "Bland-Altman"))?;
            }
        }
        MetricsCommand::Regress { points, scores, mode, transform, out, svg: svg_out } => {
            let raw = match (points, scores) {
                (Some(p), None) => ingest::read_points(&p)?,
                (None, Some(s)) => {
                    let rows = ingest::read_scores(&s)?;
                    if mode == "levels" {
                        rows.iter().filter_map(|r| Some((r.sparcc_score?, r.vhi_count))).collect()
                    } else {
                        ingest::group_scores(&rows)?
                            .iter()
                            .filter_map(|s| Some((s.delta_sparcc()?, s.delta_vhi())))
                            .collect()
                    }
                }
                _ => bail!(Error::Invalid("give exactly one of --points and --scores".into())),
            };
            let pts = raw
                .iter()
                .map(|&(x, y)| Ok((transform.apply(x)?, transform.apply(y)?)))
                .collect::<Result<Vec<_>, Error>>()?;
            let r = metrics::ols_regression(&pts)?;
            emit(out.as_deref(), &r)?;
            if let Some(p) = svg_out {
                write_text(&p, &svg::scatter_svg(&pts, Some((r.slope, r.intercept)), "Regression", "x", "y"))?;
            }
        }
        MetricsCommand::Response { scores, threshold, out } => {
            let subjects = ingest::group_scores(&ingest::read_scores(&scores)?)?;
            let table = ingest::response_table(&subjects, threshold)?;
            let counts = metrics::response_agreement(&table);
            emit(out.as_deref(), &json!({
                "format_version": FORMAT_VERSION,
                "threshold": threshold,
                "counts": counts,
                "subjects": table.subjects,
            }))?;
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let store = SessionStore::open(&args.data_dir, StoreOptions { allow_erase: args.allow_erase })?;
    let config = AppConfig { token: args.token, ui_dir: args.ui_dir };
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        let addr = listener.local_addr()?;
        eprintln!(
            "{}",
            json!({"level": "info", "kind": "listening", "message": format!("http://{addr}/api/v1"),
                   "sessions": store.session_ids().len()})
        );
        service::serve(listener, service::router(Arc::new(store), &config)).await?;
        Ok(())
    })
}
