//! Hourly monitoring schedules: jittered start times, the join-then-analyze
//! pipeline and a JSON-lines job history.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attribution::{attribution_drift_check, AttributionBaseline, AttributionObservation, DEFAULT_NDCG_THRESHOLD};
use crate::baseline::{validate_batch, Baseline, DatasetProfile, ProfileConfig, StatisticsDocument, ValidationConfig, Violation, ViolationsDocument};
use crate::bias::{accuracy_difference, bias_alarm, dpl, BiasAlarmConfig, BiasMetric, Facet, FacetRow};
use crate::capture::{self, partition_dir, partition_exists, CaptureRecord, JoinedRecord};
use crate::error::{MonitorError, Result};
use crate::quality::{build_report, evaluate_quality_constraints, BootstrapConfig, LabeledRow, ProblemType};
use crate::seed;
use crate::window::{floor_hour, format_seconds, TimeWindow};

pub const DEFAULT_JITTER_MINUTES: f64 = 20.0;
pub const STATISTICS_FILE: &str = "statistics.json";
pub const VIOLATIONS_FILE: &str = "constraint_violations.json";
pub const QUALITY_FILE: &str = "quality_report.json";

pub trait Clock {
    fn now(&self) -> DateTime<Utc>;
    fn sleep_until(&self, t: DateTime<Utc>);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, t: DateTime<Utc>) {
        if let Ok(d) = (t - Utc::now()).to_std() {
            std::thread::sleep(d);
        }
    }
}

/// Clock that only moves when told to; `sleep_until` jumps forward.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(t: DateTime<Utc>) -> Self {
        Self(Mutex::new(t))
    }

    pub fn advance(&self, d: Duration) {
        *self.0.lock().expect("clock lock") += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }

    fn sleep_until(&self, t: DateTime<Utc>) {
        let mut now = self.0.lock().expect("clock lock");
        if t > *now {
            *now = t;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMetricName {
    Dpl,
    AccuracyDifference,
}

impl BiasMetricName {
    pub fn function(&self) -> BiasMetric {
        match self {
            BiasMetricName::Dpl => dpl,
            BiasMetricName::AccuracyDifference => accuracy_difference,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BiasMetricName::Dpl => "dpl",
            BiasMetricName::AccuracyDifference => "accuracy_difference",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCheckConfig {
    /// Input feature holding the facet.
    pub facet: String,
    /// Facet value of the advantaged group; any other value is disadvantaged.
    pub advantaged: String,
    pub range_low: f64,
    pub range_high: f64,
    #[serde(default = "default_bias_metric")]
    pub metric: BiasMetricName,
}

fn default_bias_metric() -> BiasMetricName {
    BiasMetricName::Dpl
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionCheckConfig {
    /// Document `{"scores": {...}}` with training-time attributions.
    pub baseline: PathBuf,
    /// Root of hourly partitions holding `attribution.json` observations.
    pub observations_root: PathBuf,
    #[serde(default = "default_ndcg_threshold")]
    pub threshold: f64,
}

fn default_ndcg_threshold() -> f64 {
    DEFAULT_NDCG_THRESHOLD
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER_MINUTES
}

fn default_problem() -> ProblemType {
    ProblemType::Regression
}

/// Schedule configuration document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub name: String,
    pub cadence: String,
    #[serde(default = "default_jitter")]
    pub jitter_minutes: f64,
    pub baseline: PathBuf,
    pub capture_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_root: Option<PathBuf>,
    pub output_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joined_root: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_problem")]
    pub problem_type: ProblemType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionCheckConfig>,
    #[serde(default)]
    pub completeness_slack: f64,
}

impl Schedule {
    pub fn from_json(doc: &str) -> Result<Self> {
        let s: Schedule = serde_json::from_str(doc)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = Self::from_json(&fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            s.resolve_relative(dir);
        }
        Ok(s)
    }

    /// Make relative paths relative to the config file's directory.
    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.baseline);
        fix(&mut self.capture_root);
        fix(&mut self.output_root);
        if let Some(p) = &mut self.labels_root {
            fix(p);
        }
        if let Some(p) = &mut self.joined_root {
            fix(p);
        }
        if let Some(a) = &mut self.attribution {
            fix(&mut a.baseline);
            fix(&mut a.observations_root);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cadence = self.cadence.trim();
        if !(cadence == "hourly" || cadence.split_whitespace().collect::<Vec<_>>() == ["0", "*", "*", "*", "*"]) {
            return Err(MonitorError::Config(format!(
                "only the hourly cadence is supported (\"hourly\" or \"0 * * * *\"), got {:?}",
                self.cadence
            )));
        }
        if !(self.jitter_minutes >= 0.0 && self.jitter_minutes.is_finite()) {
            return Err(MonitorError::Config(format!("jitter_minutes must be >= 0, got {}", self.jitter_minutes)));
        }
        if self.name.trim().is_empty() {
            return Err(MonitorError::Config("schedule name is empty".into()));
        }
        if let Some(b) = &self.bias {
            if !(b.range_low <= b.range_high) {
                return Err(MonitorError::Config("bias range is empty".into()));
            }
        }
        Ok(())
    }

    pub fn jitter_max(&self) -> Duration {
        Duration::milliseconds((self.jitter_minutes * 60_000.0).round() as i64)
    }

    pub fn joined_root(&self) -> PathBuf {
        self.joined_root.clone().unwrap_or_else(|| self.output_root.join("joined"))
    }
}

/// Start delay for the job analyzing the hour starting at `window_start`,
/// uniform on `[0, jitter_max)` at millisecond resolution. Each job draws
/// its own delay.
pub fn jitter_for(seed: u64, window_start: DateTime<Utc>, jitter_max: Duration) -> Duration {
    let max_ms = jitter_max.num_milliseconds();
    if max_ms <= 0 {
        return Duration::zero();
    }
    let h = seed::derive(seed, &[window_start.timestamp() as u64]);
    Duration::milliseconds(seed::below(h, max_ms as u64) as i64)
}

/// Start time of the job analyzing the hour containing `now`.
pub fn next_run(schedule: &Schedule, now: DateTime<Utc>) -> DateTime<Utc> {
    let window = TimeWindow::hour_of(now);
    window.end + jitter_for(schedule.seed, window.start, schedule.jitter_max())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Completed,
    CompletedWithViolations,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        self >= JobStatus::Completed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub schedule: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub scheduled_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: JobStatus,
    pub violation_count: usize,
    pub stages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobRecord {
    pub fn new(schedule: &Schedule, window: TimeWindow) -> Self {
        Self {
            schedule: schedule.name.clone(),
            window_start: window.start,
            window_end: window.end,
            scheduled_at: window.end + jitter_for(schedule.seed, window.start, schedule.jitter_max()),
            started_at: None,
            finished_at: None,
            status: JobStatus::Pending,
            violation_count: 0,
            stages: Vec::new(),
            note: None,
            error: None,
        }
    }

    /// Move to `next`; statuses only move forward and terminal ones are final.
    pub fn advance(&mut self, next: JobStatus) -> Result<()> {
        if self.status.is_terminal() || next <= self.status {
            return Err(MonitorError::InvalidValue(format!(
                "job status cannot move from {:?} to {:?}",
                self.status, next
            )));
        }
        self.status = next;
        Ok(())
    }

    pub fn window(&self) -> TimeWindow {
        TimeWindow { start: self.window_start, end: self.window_end }
    }
}

/// Append-only JSON-lines job store keyed by (schedule, window start).
#[derive(Clone, Debug)]
pub struct JobStore {
    path: PathBuf,
}

impl JobStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn record(&self, job: &JobRecord) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(job)?)?;
        Ok(())
    }

    /// Latest record per (schedule, window), newest window first.
    pub fn history(&self) -> Result<Vec<JobRecord>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let all: Vec<JobRecord> = capture::read_jsonl(&self.path)?;
        let mut latest: BTreeMap<(DateTime<Utc>, String), JobRecord> = BTreeMap::new();
        for r in all {
            latest.insert((r.window_start, r.schedule.clone()), r);
        }
        Ok(latest.into_values().rev().collect())
    }
}

/// Receives one gauge per computed metric.
pub trait MetricsSink {
    fn emit(&mut self, name: &str, value: f64, window: &TimeWindow);
}

pub fn metric_line(name: &str, value: f64, window: &TimeWindow) -> String {
    format!("metric {name} {value} {}", format_seconds(window.start))
}

#[derive(Clone, Debug, Default)]
pub struct StdoutMetrics;

impl MetricsSink for StdoutMetrics {
    fn emit(&mut self, name: &str, value: f64, window: &TimeWindow) {
        println!("{}", metric_line(name, value, window));
    }
}

#[derive(Clone, Debug, Default)]
pub struct VecMetrics(pub Vec<String>);

impl MetricsSink for VecMetrics {
    fn emit(&mut self, name: &str, value: f64, window: &TimeWindow) {
        self.0.push(metric_line(name, value, window));
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Feature cells of an input payload: a JSON object, or a CSV line read in
/// baseline column order.
pub fn parse_features(input: &str, columns: &[String]) -> Result<Vec<(String, String)>> {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(input) {
        return Ok(map.iter().map(|(k, v)| (k.clone(), cell_text(v))).collect());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input.as_bytes());
    let record = rdr.records().next().transpose()?.unwrap_or_default();
    Ok(record
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let name = columns.get(i).cloned().unwrap_or_else(|| format!("_c{i}"));
            (name, cell.to_string())
        })
        .collect())
}

/// Profile the inputs of captured records. Columns are the baseline columns
/// that occur in the window followed by unseen ones in order of appearance;
/// records lacking a column contribute a missing cell.
pub fn profile_inputs<'a>(inputs: impl Iterator<Item = &'a str>, columns: &[String], cfg: &ProfileConfig) -> Result<DatasetProfile> {
    let rows: Vec<Vec<(String, String)>> = inputs.map(|i| parse_features(i, columns)).collect::<Result<_>>()?;
    let mut seen: IndexMap<String, ()> = IndexMap::new();
    for row in &rows {
        for (k, _) in row {
            seen.insert(k.clone(), ());
        }
    }
    let mut header: Vec<String> = columns.iter().filter(|c| seen.contains_key(*c)).cloned().collect();
    header.extend(seen.keys().filter(|k| !columns.contains(k)).cloned());
    let mut profile = DatasetProfile::new(&header, cfg)?;
    for row in rows {
        let map: BTreeMap<&str, &str> = row.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let cells: Vec<&str> = header.iter().map(|h| map.get(h.as_str()).copied().unwrap_or("")).collect();
        profile.push_record(&cells)?;
    }
    Ok(profile)
}

fn parse_number(field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| MonitorError::parse(field, format!("not a number: {s:?}")))
}

/// `(prediction, score)` from an output payload: a bare number or an object
/// with `prediction` and optional `score`.
pub fn parse_output(output: &str) -> Result<(f64, Option<f64>)> {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(output) {
        let prediction = map
            .get("prediction")
            .and_then(Value::as_f64)
            .ok_or_else(|| MonitorError::parse("output.prediction", "missing or not numeric"))?;
        return Ok((prediction, map.get("score").and_then(Value::as_f64)));
    }
    Ok((parse_number("output", output)?, None))
}

pub fn labeled_rows(joined: &[JoinedRecord]) -> Result<Vec<LabeledRow>> {
    joined
        .iter()
        .map(|r| {
            let (prediction, score) = parse_output(&r.output)?;
            Ok(LabeledRow { prediction, label: parse_number("label", &r.label)?, score })
        })
        .collect()
}

fn facet_rows(joined: &[JoinedRecord], cfg: &BiasCheckConfig, columns: &[String]) -> Result<Vec<FacetRow>> {
    let mut out = Vec::with_capacity(joined.len());
    for r in joined {
        let features = parse_features(&r.input, columns)?;
        let Some((_, value)) = features.iter().find(|(k, _)| *k == cfg.facet) else { continue };
        let (prediction, _) = parse_output(&r.output)?;
        out.push(FacetRow {
            label: parse_number("label", &r.label)? >= 0.5,
            prediction: Some(prediction >= 0.5),
            facet: if *value == cfg.advantaged { Facet::Advantaged } else { Facet::Disadvantaged },
        });
    }
    Ok(out)
}

/// What a pipeline run produced besides its job record.
#[derive(Clone, Debug, Default)]
pub struct PipelineOutput {
    pub violations: ViolationsDocument,
    pub output_dir: PathBuf,
}

fn violation(check: String, description: String, observed: Value, expected: Value) -> Violation {
    Violation { check_name: check, column: None, description, observed, expected }
}

/// Run every stage for one closed hourly window and record the outcome.
///
/// Stage order: ground-truth join (when labels are configured), profiling
/// and validation, quality, bias, attribution. Analysis errors mark the job
/// failed; a window without captured data completes with a note.
pub fn run_pipeline(
    schedule: &Schedule,
    window_start: DateTime<Utc>,
    clock: &dyn Clock,
    store: Option<&JobStore>,
    metrics: &mut dyn MetricsSink,
) -> Result<(JobRecord, PipelineOutput)> {
    let window = TimeWindow::hour_of(window_start);
    let mut job = JobRecord::new(schedule, window);
    let now = clock.now();
    if now < window.end {
        return Err(MonitorError::InvalidValue(format!(
            "window {} has not closed yet (now {})",
            format_seconds(window.start),
            format_seconds(now)
        )));
    }
    job.started_at = Some(now);
    job.advance(JobStatus::Running)?;
    if let Some(s) = store {
        s.record(&job)?;
    }
    let output_dir = partition_dir(&schedule.output_root, &window.start);
    let mut out = PipelineOutput { violations: ViolationsDocument::default(), output_dir };
    let result = run_stages(schedule, window, clock, &mut job, &mut out, metrics);
    job.finished_at = Some(clock.now());
    match result {
        Ok(()) => {
            job.violation_count = out.violations.violations.len();
            job.advance(if job.violation_count > 0 { JobStatus::CompletedWithViolations } else { JobStatus::Completed })?;
        }
        Err(e) => {
            job.error = Some(e.to_string());
            job.advance(JobStatus::Failed)?;
        }
    }
    if let Some(s) = store {
        s.record(&job)?;
    }
    Ok((job, out))
}

fn run_stages(
    schedule: &Schedule,
    window: TimeWindow,
    clock: &dyn Clock,
    job: &mut JobRecord,
    out: &mut PipelineOutput,
    metrics: &mut dyn MetricsSink,
) -> Result<()> {
    let ts = window.start.timestamp() as u64;
    let baseline = Baseline::from_json(&fs::read_to_string(&schedule.baseline)?)?;
    let columns: Vec<String> = baseline.constraints.iter().map(|c| c.name.clone()).collect();

    let mut joined: Option<Vec<JoinedRecord>> = None;
    if let Some(labels_root) = &schedule.labels_root {
        job.stages.push("join".into());
        let result = capture::join_partition(&schedule.capture_root, labels_root, &schedule.joined_root(), window.start)?;
        for (name, v) in [
            ("join.captured", result.counts.captured),
            ("join.joined", result.counts.joined),
            ("join.unlabeled", result.counts.unlabeled),
            ("join.orphan_labels", result.counts.orphan_labels),
        ] {
            metrics.emit(name, v as f64, &window);
        }
        joined = Some(result.rows);
    }

    job.stages.push("profile".into());
    let has_data = partition_exists(&schedule.capture_root, window.start);
    let captures: Vec<CaptureRecord> = capture::read_partition(&schedule.capture_root, window.start)?;
    let profile_cfg = ProfileConfig { seed: seed::derive(schedule.seed, &[ts, 1]), ..Default::default() };
    let profile = profile_inputs(captures.iter().map(|c| c.input.as_str()), &columns, &profile_cfg)?;
    let stats = StatisticsDocument::new(&profile);
    write_doc(&out.output_dir, STATISTICS_FILE, &stats.to_json()?)?;
    metrics.emit("dataset.item_count", profile.rows as f64, &window);
    for s in &stats.features {
        metrics.emit(&format!("feature.{}.completeness", s.name), s.completeness, &window);
        if let Some(m) = s.mean {
            metrics.emit(&format!("feature.{}.mean", s.name), m, &window);
        }
    }

    job.stages.push("validate".into());
    if has_data && profile.rows > 0 {
        let cfg = ValidationConfig { completeness_slack: schedule.completeness_slack };
        out.violations = validate_batch(&stats.features, &baseline, &cfg)?;
    } else {
        job.note = Some("no captured data for this window".into());
    }

    if let Some(rows) = joined.as_ref().filter(|r| !r.is_empty()) {
        job.stages.push("quality".into());
        let labeled = labeled_rows(rows)?;
        let boot = BootstrapConfig { seed: seed::derive(schedule.seed, &[ts, 2]), ..Default::default() };
        let report = build_report(&labeled, schedule.problem_type, window, clock.now(), &boot)?;
        write_doc(&out.output_dir, QUALITY_FILE, &report.to_json()?)?;
        if let Some(map) = report.metrics() {
            for (name, mv) in map {
                if let Some(v) = mv.value {
                    metrics.emit(&format!("quality.{name}"), v, &window);
                }
            }
            if let Some(constraints) = &baseline.quality {
                for v in evaluate_quality_constraints(map, constraints) {
                    out.violations.violations.push(violation(
                        format!("{}_threshold_check", v.metric),
                        v.describe(),
                        serde_json::json!({"value": v.value, "standard_deviation": v.standard_deviation}),
                        serde_json::json!({"threshold": v.threshold, "comparison_operator": v.comparison_operator}),
                    ));
                }
            }
        }

        if let Some(bias) = &schedule.bias {
            job.stages.push("bias".into());
            let facet = facet_rows(rows, bias, &columns)?;
            let cfg = BiasAlarmConfig::new(bias.range_low, bias.range_high, seed::derive(schedule.seed, &[ts, 3]))?;
            let d = bias_alarm(&facet, bias.metric.function(), &cfg)?;
            metrics.emit(&format!("bias.{}", bias.metric.name()), d.metric_value, &window);
            if d.alarm {
                out.violations.violations.push(violation(
                    format!("{}_threshold_check", bias.metric.name()),
                    format!(
                        "{} = {} is outside [{}, {}] by more than its standard deviation",
                        bias.metric.name(),
                        d.metric_value,
                        bias.range_low,
                        bias.range_high
                    ),
                    serde_json::json!({"value": d.metric_value, "standard_deviation": d.bootstrap_stddev}),
                    serde_json::json!([bias.range_low, bias.range_high]),
                ));
            }
        }
    }

    if let Some(attr) = &schedule.attribution {
        let path = partition_dir(&attr.observations_root, &window.start).join("attribution.json");
        if path.exists() {
            job.stages.push("attribution".into());
            let base: AttributionBaseline = serde_json::from_str(&fs::read_to_string(&attr.baseline)?)?;
            let obs: AttributionObservation = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let d = attribution_drift_check(&base, &obs, attr.threshold)?;
            metrics.emit("attribution.ndcg", d.ndcg, &window);
            if d.alert {
                out.violations.violations.push(violation(
                    crate::attribution::CHECK_NAME.into(),
                    format!("attribution NDCG {} dropped below {}", d.ndcg, attr.threshold),
                    serde_json::json!(d.ndcg),
                    serde_json::json!(attr.threshold),
                ));
            }
        }
    }

    metrics.emit("violations.count", out.violations.violations.len() as f64, &window);
    write_doc(&out.output_dir, VIOLATIONS_FILE, &out.violations.to_json()?)?;
    Ok(())
}

fn write_doc(dir: &Path, name: &str, body: &str) -> Result<()> {
    capture::write_atomic(dir, name, body.as_bytes())
}

/// Run the job for each of the next `runs` hours, sleeping until each
/// jittered start time.
pub fn run_loop(
    schedule: &Schedule,
    runs: usize,
    clock: &dyn Clock,
    store: &JobStore,
    metrics: &mut dyn MetricsSink,
) -> Result<Vec<JobRecord>> {
    let mut out = Vec::with_capacity(runs);
    for _ in 0..runs {
        let now = clock.now();
        let window = TimeWindow::hour_of(now);
        clock.sleep_until(next_run(schedule, now));
        let (job, _) = run_pipeline(schedule, window.start, clock, Some(store), metrics)?;
        out.push(job);
    }
    Ok(out)
}

/// The most recent window that has closed at `now`.
pub fn last_closed_window(now: DateTime<Utc>) -> DateTime<Utc> {
    floor_hour(now) - Duration::hours(1)
}
