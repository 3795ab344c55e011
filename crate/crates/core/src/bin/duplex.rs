use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tracing::{info, Level};

use duplex_core::agent::{serve_stub_agent, StubServerConfig};
use duplex_core::controller::ControllerConfig;
use duplex_core::corpus::{
    annotate_dialogue, label_stats, read_dialogue_dir, read_labels, write_annotation, AnnotateConfig, JudgeSpec, LabelConfig,
    RoleAssignment, DEFAULT_MERGE_GAP_MS,
};
use duplex_core::harness::{
    evaluate_run, generate_corpus, gold_dir, simulate_corpus, spawn_loopback, write_corpus, LoopbackConfig, PredictorSpec, ScenarioSpec,
    SimConfig,
};
use duplex_core::predictor::SilenceConfig;

#[derive(Parser)]
#[command(name = "duplex", version, about = "Speak/Listen/Idle turn-taking controller toolkit")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled corpus.
    Gen(GenArgs),
    /// Turn two-channel speech spans into per-frame action labels.
    Annotate(AnnotateArgs),
    /// Run the controller over a corpus and persist traces.
    Simulate(SimulateArgs),
    /// Score traces against gold labels.
    Eval(EvalArgs),
    /// Serve a scripted half-duplex agent over TCP.
    ServeStubAgent(StubAgentArgs),
    /// Serve gold labels as a remote predictor over TCP.
    ServePredictor(ServePredictorArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scenario JSON; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dialogues: Option<usize>,
    #[arg(long)]
    backchannel_rate: Option<f64>,
    #[arg(long)]
    third_party_rate: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    barge_in_rate: Option<f64>,
    /// No backchannels, noise, third-party speech or barge-ins.
    #[arg(long)]
    clean: bool,
}

#[derive(Args)]
struct AnnotateArgs {
    /// Directory of dialogue JSON files (or a corpus root with dialogues/).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MERGE_GAP_MS)]
    merge_gap: u64,
    #[arg(long, default_value_t = 500)]
    onset_delay: u64,
    #[arg(long, default_value_t = 120)]
    frame: u64,
    /// none, file:PATH or http:URL.
    #[arg(long, default_value = "none")]
    judge: JudgeSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// auto, A, B or random.
    #[arg(long, default_value = "auto")]
    roles: RoleAssignment,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorKind {
    Oracle,
    Silence,
    Remote,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Gold annotations; defaults to CORPUS/gold.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    predictor: PredictorKind,
    /// HOST:PORT or stdio:COMMAND, for the remote predictor.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 100)]
    deadline_ms: u64,
    #[arg(long, default_value_t = 500)]
    silence_ms: u32,
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[arg(long, default_value_t = 120)]
    frame: u32,
    /// Root for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory with <id>.trace.jsonl files.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<u64>,
    #[arg(long, default_value_t = 120)]
    frame: u64,
    /// Also write the full report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct StubAgentArgs {
    #[arg(long, default_value = "127.0.0.1:7100")]
    addr: String,
    #[arg(long, default_value_t = 8)]
    chunks: usize,
    #[arg(long, default_value_t = 120)]
    chunk_ms: u64,
}

#[derive(Args)]
struct ServePredictorArgs {
    /// Gold directory; connection i replays the i-th dialogue by id.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7200")]
    addr: String,
    #[arg(long, default_value_t = 120)]
    frame: u64,
    /// Ticks whose answer is held back by --delay-ms.
    #[arg(long, value_delimiter = ',')]
    delay_ticks: Vec<u64>,
    #[arg(long, default_value_t = 150)]
    delay_ms: u64,
}

fn emit(json_mode: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    let mut out = std::io::stdout().lock();
    let _ = if json_mode { writeln!(out, "{value}") } else { writeln!(out, "{}", text()) };
    let _ = out.flush();
}

fn gen(a: GenArgs, json_mode: bool) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| p.display().to_string())?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ScenarioSpec::default(),
    };
    if a.clean {
        spec = ScenarioSpec { backchannel_rate: 0.0, third_party_rate: 0.0, noise_rate: 0.0, barge_in_rate: 0.0, ..spec };
    }
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.n_dialogues = a.dialogues.unwrap_or(spec.n_dialogues);
    spec.backchannel_rate = a.backchannel_rate.unwrap_or(spec.backchannel_rate);
    spec.third_party_rate = a.third_party_rate.unwrap_or(spec.third_party_rate);
    spec.noise_rate = a.noise_rate.unwrap_or(spec.noise_rate);
    spec.barge_in_rate = a.barge_in_rate.unwrap_or(spec.barge_in_rate);

    let corpus = generate_corpus(&spec)?;
    write_corpus(&a.out, &corpus)?;
    let stats = label_stats(corpus.dialogues.iter().flat_map(|d| d.gold.labels.labels.iter()));
    emit(json_mode, json!({ "out": a.out, "dialogues": corpus.dialogues.len(), "judge_entries": corpus.judge.len(), "labels": stats }), || {
        format!("wrote {} dialogues to {}\n{stats}", corpus.dialogues.len(), a.out.display())
    });
    Ok(())
}

fn annotate(a: AnnotateArgs, json_mode: bool) -> Result<()> {
    let cfg = AnnotateConfig {
        merge_gap_ms: a.merge_gap,
        label: LabelConfig { frame_ms: a.frame, listen_onset_delay_ms: a.onset_delay, ..Default::default() },
        roles: a.roles,
        seed: a.seed,
    };
    if a.frame == 0 {
        bail!("--frame must be positive");
    }
    let judge = a.judge.build()?;
    let dir = if a.input.join("dialogues").is_dir() { a.input.join("dialogues") } else { a.input.clone() };
    let dialogues = read_dialogue_dir(&dir)?;
    if dialogues.is_empty() {
        bail!("no dialogue files in {}", dir.display());
    }
    let mut all = Vec::new();
    let mut warnings = 0;
    for (id, input) in &dialogues {
        let ann = annotate_dialogue(id, input, &cfg, judge.as_ref())?;
        warnings += ann.warnings.len();
        write_annotation(&a.out, &ann)?;
        all.extend(ann.labels.labels.iter().copied());
        info!(%id, frames = ann.labels.len(), "annotated");
    }
    let stats = label_stats(&all);
    fs::write(a.out.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    fs::write(a.out.join("stats.txt"), stats.to_string())?;
    emit(json_mode, json!({ "out": a.out, "dialogues": dialogues.len(), "warnings": warnings, "labels": stats }), || {
        format!("annotated {} dialogues into {} ({warnings} warnings)\n{stats}", dialogues.len(), a.out.display())
    });
    Ok(())
}

fn simulate(a: SimulateArgs, json_mode: bool) -> Result<()> {
    let predictor = match a.predictor {
        PredictorKind::Oracle => PredictorSpec::Oracle,
        PredictorKind::Silence => {
            PredictorSpec::Silence(SilenceConfig { silence_threshold_ms: a.silence_ms, frame_ms: a.frame, ..Default::default() })
        }
        PredictorKind::Remote => {
            let endpoint = a.endpoint.context("--predictor remote needs --endpoint")?;
            PredictorSpec::Remote { endpoint, deadline_ms: a.deadline_ms }
        }
    };
    let controller = ControllerConfig { tick_ms: a.frame, window_w: a.window, ..Default::default() };
    let cfg = SimConfig { predictor, controller };
    let (run, manifest) = simulate_corpus(&a.corpus, a.gold.as_deref(), &cfg, &a.out)?;
    let coerced: u64 = manifest.dialogues.iter().map(|d| d.counters.coerced_illegal + d.counters.predictor_failures).sum();
    emit(
        json_mode,
        json!({ "run_dir": run, "config_hash": manifest.config_hash, "dialogues": manifest.dialogues.len(), "coerced": coerced }),
        || format!("{}", run.display()),
    );
    Ok(())
}

fn eval(a: EvalArgs, json_mode: bool) -> Result<()> {
    if a.k.is_empty() || a.k.contains(&0) {
        bail!("--k needs positive offsets");
    }
    let out = evaluate_run(&a.traces, &a.gold, &a.k, a.frame)?;
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&out)? + "\n").with_context(|| path.display().to_string())?;
    }
    emit(json_mode, serde_json::to_value(&out.report)?, || out.report.to_string());
    Ok(())
}

fn serve_stub(a: StubAgentArgs) -> Result<()> {
    let listener = TcpListener::bind(&a.addr).with_context(|| format!("binding {}", a.addr))?;
    println!("listening on {}", listener.local_addr()?);
    let _ = std::io::stdout().flush();
    serve_stub_agent(listener, StubServerConfig { chunks_per_turn: a.chunks, chunk_interval: Duration::from_millis(a.chunk_ms) })?;
    Ok(())
}

fn gold_scripts(dir: &Path, frame_ms: u64) -> Result<Vec<(String, Vec<duplex_core::fsm::DialogueAction>)>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".labels.jsonl")))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let id = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().trim_end_matches(".labels.jsonl").to_string();
            Ok((id, read_labels(p, frame_ms)?.labels))
        })
        .collect()
}

fn serve_predictor(a: ServePredictorArgs) -> Result<()> {
    let scripts = gold_scripts(&gold_dir(&a.gold), a.frame)?;
    if scripts.is_empty() {
        bail!("no label files in {}", a.gold.display());
    }
    let delays: BTreeMap<u64, Duration> = a.delay_ticks.iter().map(|&t| (t, Duration::from_millis(a.delay_ms))).collect();
    let listener = TcpListener::bind(&a.addr).with_context(|| format!("binding {}", a.addr))?;
    let ids: Vec<&str> = scripts.iter().map(|(id, _)| id.as_str()).collect();
    info!(?ids, "serving gold labels");
    let server = spawn_loopback(listener, LoopbackConfig { scripts: scripts.iter().map(|(_, s)| s.clone()).collect(), delays })?;
    println!("listening on {}", server.addr);
    let _ = std::io::stdout().flush();
    loop {
        thread::park();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();

    let result = match cli.cmd {
        Cmd::Gen(a) => gen(a, cli.json),
        Cmd::Annotate(a) => annotate(a, cli.json),
        Cmd::Simulate(a) => simulate(a, cli.json),
        Cmd::Eval(a) => eval(a, cli.json),
        Cmd::ServeStubAgent(a) => serve_stub(a),
        Cmd::ServePredictor(a) => serve_predictor(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
