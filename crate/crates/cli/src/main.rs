//! `modelmon` command-line entry point.
//!
//! Exit status: 0 clean, 2 violations or alerts, 1 error, 64 usage error.
//! Machine-readable output goes to stdout; logs and the resolved
//! configuration go to stderr.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Duration, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use modelmon::adaptive::{self, ExperimentConfig, KnobRanges};
use modelmon::attribution::{attribution_drift_check, AttributionBaseline, AttributionObservation};
use modelmon::baseline::{
    profile_labeled_csv, suggest_baseline, validate_batch, Baseline, LabelColumns, ProfileConfig, StatisticsDocument,
    ValidationConfig, Violation, ViolationsDocument,
};
use modelmon::bias::{self, CaseStudyConfig};
use modelmon::capture::{self, CaptureRecord, CaptureWriter, DirectorySink, FlushPolicy, Sampler};
use modelmon::drift::DriftTestConfig;
use modelmon::quality::{self, BootstrapConfig, ProblemType};
use modelmon::scheduler::{self, JobStatus, JobStore, Schedule, StdoutMetrics, SystemClock};
use modelmon::window::{floor_hour, parse_instant, TimeWindow};

const EXIT_VIOLATIONS: u8 = 2;
const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "modelmon", version, about = "Model monitoring: baselines, capture, drift, quality and bias checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile a reference CSV and write a baseline (statistics + constraints).
    SuggestBaseline(SuggestArgs),
    /// Feed JSON-lines capture records through sampling and batched flushing
    /// into capture_root/YYYY/MM/DD/HH/<epoch-millis>-<seq>.jsonl.
    CaptureIngest(IngestArgs),
    /// Join captured records with ground-truth labels for each hour of a window.
    Join(JoinArgs),
    /// Analyze one batch (CSV) or one scheduled window against a baseline.
    Analyze(AnalyzeArgs),
    /// Run a monitoring schedule once or as an hourly loop.
    ScheduleRun(ScheduleRunArgs),
    /// Print the job history of a job store, newest window first.
    JobHistory(HistoryArgs),
    /// Alarm-rate table of the bootstrap bias alarm on a synthetic population.
    BiasCaseStudy(CaseStudyArgs),
    /// Adaptive vs. fixed-interval retraining experiment.
    SimulateAdaptive(SimulateArgs),
    /// NDCG between a baseline attribution document and an observed ranking.
    NdcgCheck(NdcgArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Problem {
    Regression,
    BinaryClassification,
}

impl From<Problem> for ProblemType {
    fn from(p: Problem) -> Self {
        match p {
            Problem::Regression => ProblemType::Regression,
            Problem::BinaryClassification => ProblemType::BinaryClassification,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct LabelArgs {
    /// Ground-truth column; with --prediction-column enables quality metrics.
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    prediction_column: Option<String>,
    /// Optional score column used for AUC.
    #[arg(long)]
    score_column: Option<String>,
    #[arg(long, value_enum, default_value = "regression")]
    problem_type: Problem,
}

impl LabelArgs {
    fn columns(&self) -> Result<Option<LabelColumns>> {
        match (&self.label_column, &self.prediction_column) {
            (Some(label), Some(prediction)) => Ok(Some(LabelColumns {
                label: label.clone(),
                prediction: prediction.clone(),
                score: self.score_column.clone(),
            })),
            (None, None) => Ok(None),
            _ => bail!("--label-column and --prediction-column must be given together"),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SuggestArgs {
    /// Reference dataset (CSV with header).
    #[arg(long)]
    data: PathBuf,
    /// Baseline document to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the quality constraints document here.
    #[arg(long)]
    constraints_out: Option<PathBuf>,
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long, default_value_t = modelmon::drift::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = modelmon::drift::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    /// JSON-lines file of {"event_id","timestamp","input","output"}; `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    capture_root: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    sampling_percentage: f64,
    #[arg(long, default_value_t = capture::DEFAULT_MAX_BYTES)]
    max_bytes: usize,
    #[arg(long, default_value_t = capture::DEFAULT_MAX_AGE_SECONDS)]
    max_age_seconds: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct JoinArgs {
    #[arg(long)]
    capture_root: PathBuf,
    #[arg(long)]
    labels_root: PathBuf,
    #[arg(long)]
    joined_root: PathBuf,
    /// First hour to join (RFC 3339).
    #[arg(long)]
    window_start: String,
    /// End of the window (exclusive); defaults to one hour after the start.
    #[arg(long)]
    window_end: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    /// Schedule config; analyzes the hour at --window-start with its settings.
    #[arg(long, conflicts_with_all = ["data", "baseline", "out"])]
    config: Option<PathBuf>,
    /// Batch to analyze (CSV with header).
    #[arg(long, requires = "out")]
    data: Option<PathBuf>,
    /// Baseline document; without it only quality metrics are computed.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Quality constraints document; overrides the baseline's.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Output directory for statistics.json, quality_report.json and
    /// constraint_violations.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long)]
    window_start: String,
    /// Defaults to one hour after the start.
    #[arg(long)]
    window_end: Option<String>,
    /// Fixed evaluation time for reproducible reports; defaults to now.
    #[arg(long)]
    evaluation_time: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = quality::DEFAULT_N_BOOT)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.0)]
    completeness_slack: f64,
}

#[derive(Args, Debug, Serialize)]
struct ScheduleRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run the most recent closed window (or --window-start) and exit.
    #[arg(long)]
    once: bool,
    #[arg(long, requires = "once")]
    window_start: Option<String>,
    /// Number of hourly runs in loop mode; runs forever when omitted.
    #[arg(long, conflicts_with = "once")]
    runs: Option<usize>,
    /// Job store (JSON lines); defaults to output_root/jobs.jsonl.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jitter_minutes: Option<f64>,
    #[arg(long)]
    output_root: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct HistoryArgs {
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CaseStudyArgs {
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_values_t = bias::DEFAULT_SAMPLE_SIZES.to_vec())]
    sample_sizes: Vec<usize>,
    #[arg(long, default_value_t = quality::DEFAULT_N_BOOT)]
    n_boot: usize,
    #[arg(long, default_value_t = quality::DEFAULT_RESAMPLE_FRAC)]
    resample_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    advantaged_size: usize,
    #[arg(long, default_value_t = 1_120)]
    advantaged_positives: usize,
    #[arg(long, default_value_t = 10_000)]
    disadvantaged_size: usize,
    #[arg(long, default_value_t = 3_110)]
    disadvantaged_positives: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 400)]
    rounds: usize,
    #[arg(long, default_value_t = adaptive::DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for triplets.csv and summary.csv; summary goes to stdout
    /// when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = adaptive::DEFAULT_INTERVALS.to_vec())]
    intervals: Vec<usize>,
    #[arg(long, default_value_t = adaptive::DEFAULT_THRESHOLD_RANGE.0)]
    threshold_low: f64,
    #[arg(long, default_value_t = adaptive::DEFAULT_THRESHOLD_RANGE.1)]
    threshold_high: f64,
}

#[derive(Args, Debug, Serialize)]
struct NdcgArgs {
    /// Document {"scores": {feature: score}}.
    #[arg(long)]
    baseline: PathBuf,
    /// Document {"ranking": [feature, ...]}.
    #[arg(long)]
    observation: PathBuf,
    #[arg(long, default_value_t = modelmon::attribution::DEFAULT_NDCG_THRESHOLD)]
    threshold: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn log_config<T: Serialize>(name: &str, cfg: &T) {
    match serde_json::to_string(cfg) {
        Ok(s) => eprintln!("{name} config: {s}"),
        Err(e) => eprintln!("{name} config: <unserializable: {e}>"),
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::SuggestBaseline(a) => {
            log_config("suggest-baseline", &a);
            suggest(a)
        }
        Command::CaptureIngest(a) => {
            log_config("capture-ingest", &a);
            ingest(a)
        }
        Command::Join(a) => {
            log_config("join", &a);
            join(a)
        }
        Command::Analyze(a) => {
            log_config("analyze", &a);
            analyze(a)
        }
        Command::ScheduleRun(a) => schedule_run(a),
        Command::JobHistory(a) => {
            log_config("job-history", &a);
            history(a)
        }
        Command::BiasCaseStudy(a) => {
            log_config("bias-case-study", &a);
            case_study(a)
        }
        Command::SimulateAdaptive(a) => {
            log_config("simulate-adaptive", &a);
            simulate(a)
        }
        Command::NdcgCheck(a) => {
            log_config("ndcg-check", &a);
            ndcg(a)
        }
    }
}

fn instant(s: &str) -> Result<DateTime<Utc>> {
    parse_instant(s).with_context(|| format!("bad timestamp {s:?}"))
}

fn window_of(start: &str, end: Option<&str>) -> Result<TimeWindow> {
    let start = instant(start)?;
    let end = match end {
        Some(e) => instant(e)?,
        None => start + Duration::hours(1),
    };
    Ok(TimeWindow::new(start, end)?)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn open_file(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn suggest(a: SuggestArgs) -> Result<u8> {
    let drift = DriftTestConfig::new(a.epsilon, a.alpha)?;
    let cfg = ProfileConfig { seed: a.seed, ..Default::default() };
    let columns = a.labels.columns()?;
    let (profile, rows) = profile_labeled_csv(open_file(&a.data)?, &cfg, columns.as_ref())?;
    if columns.is_some() && rows.is_none() {
        bail!("label or prediction column not found in {}", a.data.display());
    }
    let mut baseline = suggest_baseline(profile.summaries(), &drift).or_else(|e| {
        // A dataset holding only labels and predictions has no feature
        // columns; its baseline carries quality constraints alone.
        if rows.is_some() {
            Ok(Baseline { version: 0.0, columns: vec![], constraints: vec![], quality: None })
        } else {
            Err(e)
        }
    })?;
    if let Some(rows) = rows.filter(|r| !r.is_empty()) {
        let problem: ProblemType = a.labels.problem_type.into();
        let boot = BootstrapConfig { seed: a.seed, ..Default::default() };
        let metrics = quality::metric_map(&rows, problem, &boot)?;
        let constraints = quality::suggest_quality_constraints(&metrics, problem);
        if let Some(path) = &a.constraints_out {
            write_file(path, &constraints.to_json()?)?;
        }
        baseline.quality = Some(constraints);
    }
    write_file(&a.out, &baseline.to_json()?)?;
    eprintln!(
        "wrote baseline with {} column constraint(s) to {}",
        baseline.constraints.len(),
        a.out.display()
    );
    Ok(0)
}

fn ingest(a: IngestArgs) -> Result<u8> {
    let policy = FlushPolicy::new(a.max_bytes, Duration::seconds(a.max_age_seconds))?;
    let sampler = Sampler::new(a.sampling_percentage, a.seed)?;
    let mut writer = CaptureWriter::new(DirectorySink::new(&a.capture_root), policy, sampler)?;
    let reader: Box<dyn BufRead> = if a.input.as_os_str() == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(open_file(&a.input)?))
    };
    let mut malformed = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CaptureRecord>(&line) {
            Ok(r) => {
                writer.capture(&r);
            }
            Err(e) => {
                malformed += 1;
                eprintln!("line {}: skipped malformed record: {e}", i + 1);
            }
        }
    }
    let stats = writer.finish();
    println!("{}", serde_json::json!({"stats": stats, "malformed": malformed}));
    Ok(if stats.write_errors > 0 { EXIT_ERROR } else { 0 })
}

fn join(a: JoinArgs) -> Result<u8> {
    let window = window_of(&a.window_start, a.window_end.as_deref())?;
    for hour in window.hours() {
        let r = capture::join_partition(&a.capture_root, &a.labels_root, &a.joined_root, hour)?;
        println!(
            "{}",
            serde_json::json!({"window_start": modelmon::window::format_seconds(hour), "counts": r.counts})
        );
    }
    Ok(0)
}

fn analyze(a: AnalyzeArgs) -> Result<u8> {
    if let Some(config) = &a.config {
        let schedule = Schedule::load(config)?;
        let start = floor_hour(instant(&a.window_start)?);
        let store = JobStore::new(schedule.output_root.join("jobs.jsonl"));
        let (job, out) = scheduler::run_pipeline(&schedule, start, &SystemClock, Some(&store), &mut StdoutMetrics)?;
        eprintln!("job {:?}: {} violation(s) in {}", job.status, job.violation_count, out.output_dir.display());
        return Ok(job_exit(&[job.status]));
    }
    let data = a.data.as_ref().context("either --config or --data is required")?;
    let out_dir = a.out.as_ref().context("--out is required with --data")?;
    let window = window_of(&a.window_start, a.window_end.as_deref())?;
    let evaluation_time = match &a.evaluation_time {
        Some(t) => instant(t)?,
        None => Utc::now(),
    };
    let baseline = match &a.baseline {
        Some(p) => Some(Baseline::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => None,
    };
    let columns = a.labels.columns()?;
    let cfg = ProfileConfig { seed: a.seed, ..Default::default() };
    let (profile, rows) = profile_labeled_csv(open_file(data)?, &cfg, columns.as_ref())?;
    if columns.is_some() && rows.is_none() {
        bail!("label or prediction column not found in {}", data.display());
    }

    let stats = StatisticsDocument::new(&profile);
    write_file(&out_dir.join(scheduler::STATISTICS_FILE), &stats.to_json()?)?;
    let mut violations = match &baseline {
        Some(b) if !b.constraints.is_empty() => validate_batch(
            &stats.features,
            b,
            &ValidationConfig { completeness_slack: a.completeness_slack },
        )?,
        _ => ViolationsDocument::default(),
    };

    if let Some(rows) = &rows {
        let boot = BootstrapConfig { seed: a.seed, n_boot: a.n_boot, ..Default::default() };
        let report = quality::build_report(rows, a.labels.problem_type.into(), window, evaluation_time, &boot)?;
        write_file(&out_dir.join(scheduler::QUALITY_FILE), &report.to_json()?)?;
        let constraints = match &a.constraints {
            Some(p) => Some(serde_json::from_str::<quality::QualityConstraints>(&fs::read_to_string(p)?)?),
            None => baseline.as_ref().and_then(|b| b.quality.clone()),
        };
        if let (Some(c), Some(map)) = (constraints, report.metrics()) {
            for v in quality::evaluate_quality_constraints(map, &c) {
                violations.violations.push(Violation {
                    check_name: format!("{}_threshold_check", v.metric),
                    column: None,
                    description: v.describe(),
                    observed: serde_json::json!({"value": v.value, "standard_deviation": v.standard_deviation}),
                    expected: serde_json::json!({"threshold": v.threshold, "comparison_operator": v.comparison_operator}),
                });
            }
        }
    }
    write_file(&out_dir.join(scheduler::VIOLATIONS_FILE), &violations.to_json()?)?;
    let n = violations.violations.len();
    eprintln!("analyzed {} row(s): {n} violation(s), outputs in {}", profile.rows, out_dir.display());
    Ok(if n > 0 { EXIT_VIOLATIONS } else { 0 })
}

fn job_exit(statuses: &[JobStatus]) -> u8 {
    if statuses.contains(&JobStatus::Failed) {
        EXIT_ERROR
    } else if statuses.contains(&JobStatus::CompletedWithViolations) {
        EXIT_VIOLATIONS
    } else {
        0
    }
}

fn schedule_run(a: ScheduleRunArgs) -> Result<u8> {
    let mut schedule = Schedule::load(&a.config)?;
    if let Some(seed) = a.seed {
        schedule.seed = seed;
    }
    if let Some(j) = a.jitter_minutes {
        schedule.jitter_minutes = j;
    }
    if let Some(o) = &a.output_root {
        schedule.output_root = o.clone();
    }
    schedule.validate()?;
    log_config("schedule-run", &serde_json::json!({"args": &a, "schedule": &schedule}));
    let store = JobStore::new(a.store.clone().unwrap_or_else(|| schedule.output_root.join("jobs.jsonl")));
    let clock = SystemClock;
    let mut metrics = StdoutMetrics;
    let statuses: Vec<JobStatus> = if a.once {
        let start = match &a.window_start {
            Some(s) => floor_hour(instant(s)?),
            None => scheduler::last_closed_window(Utc::now()),
        };
        let (job, _) = scheduler::run_pipeline(&schedule, start, &clock, Some(&store), &mut metrics)?;
        report_job(&job);
        vec![job.status]
    } else {
        let mut all = Vec::new();
        let mut done = 0usize;
        while a.runs.is_none_or(|n| done < n) {
            let next = scheduler::next_run(&schedule, Utc::now());
            eprintln!("next run at {}", modelmon::window::format_millis(next));
            let jobs = scheduler::run_loop(&schedule, 1, &clock, &store, &mut metrics)?;
            jobs.iter().for_each(report_job);
            all.extend(jobs.iter().map(|j| j.status));
            done += 1;
        }
        all
    };
    Ok(job_exit(&statuses))
}

fn report_job(job: &scheduler::JobRecord) {
    eprintln!(
        "job {} window {}: {:?}, {} violation(s), stages {:?}{}",
        job.schedule,
        modelmon::window::format_seconds(job.window_start),
        job.status,
        job.violation_count,
        job.stages,
        job.error.as_deref().map(|e| format!(", error: {e}")).unwrap_or_default()
    );
}

fn history(a: HistoryArgs) -> Result<u8> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for job in JobStore::new(&a.store).history()? {
        writeln!(out, "{}", serde_json::to_string(&job)?)?;
    }
    Ok(0)
}

fn case_study(a: CaseStudyArgs) -> Result<u8> {
    if a.advantaged_positives > a.advantaged_size || a.disadvantaged_positives > a.disadvantaged_size {
        bail!("positive counts cannot exceed group sizes");
    }
    let population = bias::synthetic_population(
        (a.advantaged_size, a.advantaged_positives),
        (a.disadvantaged_size, a.disadvantaged_positives),
    );
    let b = bias::dpl(&population)?;
    eprintln!("population DPL = {b}");
    let cfg = CaseStudyConfig {
        ranges: bias::default_ranges(b),
        sample_sizes: a.sample_sizes.clone(),
        repeats: a.repeats,
        n_boot: a.n_boot,
        resample_frac: a.resample_frac,
        seed: a.seed,
    };
    let rows = bias::bias_case_study(&population, bias::dpl, &cfg)?;
    for r in &rows {
        eprintln!(
            "{:<12} n={:<6} alarms {:>3}/{} accuracy {:.2}",
            r.config_label,
            r.sample_size,
            r.alarms,
            r.repeats,
            r.accuracy(b)
        );
    }
    match &a.out {
        Some(p) => {
            let mut buf = Vec::new();
            bias::write_case_study_csv(&rows, &mut buf)?;
            write_file(p, std::str::from_utf8(&buf)?)?;
        }
        None => bias::write_case_study_csv(&rows, io::stdout().lock())?,
    }
    Ok(0)
}

fn simulate(a: SimulateArgs) -> Result<u8> {
    let cfg = ExperimentConfig {
        rounds: a.rounds,
        horizon: a.horizon,
        seed: a.seed,
        knobs: KnobRanges {
            intervals: a.intervals.clone(),
            threshold_low: a.threshold_low,
            threshold_high: a.threshold_high,
        },
    };
    let results = adaptive::experiment(&cfg)?;
    let summary = adaptive::summarize(&results);
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            adaptive::write_results_csv(&results, fs::File::create(dir.join("triplets.csv"))?)?;
            adaptive::write_summary_csv(&summary, fs::File::create(dir.join("summary.csv"))?)?;
            eprintln!("wrote triplets.csv and summary.csv to {}", dir.display());
        }
        None => adaptive::write_summary_csv(&summary, io::stdout().lock())?,
    }
    let shared = adaptive::shared_levels(&summary, 10);
    eprintln!("cost levels with >= 10 rounds of each technique: {}", shared.len());
    for w in adaptive::cost_window_comparison(&results, 0.1) {
        eprintln!(
            "cost {:>4}: adaptive {:.3} (n={}) vs nonadaptive {:.3} (n={})",
            w.cost, w.adaptive_mean, w.adaptive_count, w.nonadaptive_mean, w.nonadaptive_count
        );
    }
    Ok(0)
}

fn ndcg(a: NdcgArgs) -> Result<u8> {
    let base: AttributionBaseline = serde_json::from_str(&fs::read_to_string(&a.baseline)?)
        .with_context(|| format!("parsing {}", a.baseline.display()))?;
    let obs: AttributionObservation = serde_json::from_str(&fs::read_to_string(&a.observation)?)
        .with_context(|| format!("parsing {}", a.observation.display()))?;
    let d = attribution_drift_check(&base, &obs, a.threshold)?;
    println!("{}", serde_json::json!({"ndcg": d.ndcg, "threshold": a.threshold, "alert": d.alert}));
    Ok(if d.alert { EXIT_VIOLATIONS } else { 0 })
}
