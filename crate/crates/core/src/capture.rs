//! Inference capture: sampling, batched JSON-lines flushing into hourly UTC
//! partitions, and the ground-truth join.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};
use crate::seed;
use crate::window::floor_hour;

pub const DEFAULT_MAX_BYTES: usize = 1 << 20;
pub const DEFAULT_MAX_AGE_SECONDS: i64 = 60;
pub const JOINED_FILE: &str = "joined.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub event_id: String,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    pub input: String,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub event_id: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinedRecord {
    pub event_id: String,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    pub input: String,
    pub output: String,
    pub label: String,
}

mod rfc3339 {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::window::format_millis(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        crate::window::parse_instant(&raw).map_err(serde::de::Error::custom)
    }
}

/// Seeded Bernoulli capture decisions; the i-th decision depends only on
/// `(seed, i)`.
#[derive(Clone, Debug)]
pub struct Sampler {
    percentage: f64,
    seed: u64,
    counter: u64,
}

impl Sampler {
    pub fn new(percentage: f64, seed: u64) -> Result<Self> {
        if !(0.0..=100.0).contains(&percentage) {
            return Err(MonitorError::Config(format!(
                "sampling percentage must be in [0, 100], got {percentage}"
            )));
        }
        Ok(Self { percentage, seed, counter: 0 })
    }

    pub fn decide(&mut self) -> bool {
        self.counter += 1;
        if self.percentage >= 100.0 {
            return true;
        }
        seed::unit(seed::derive(self.seed, &[self.counter])) * 100.0 < self.percentage
    }
}

/// `YYYY/MM/DD/HH` of the UTC hour containing `t`.
pub fn partition_path<Tz: TimeZone>(t: &DateTime<Tz>) -> String {
    t.with_timezone(&Utc).format("%Y/%m/%d/%H").to_string()
}

pub fn partition_dir<Tz: TimeZone>(root: &Path, t: &DateTime<Tz>) -> PathBuf {
    root.join(partition_path(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushPolicy {
    pub max_bytes: usize,
    pub max_age: Duration,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        Self {
            max_bytes: DEFAULT_MAX_BYTES,
            max_age: Duration::seconds(DEFAULT_MAX_AGE_SECONDS),
        }
    }
}

impl FlushPolicy {
    pub fn new(max_bytes: usize, max_age: Duration) -> Result<Self> {
        let p = Self { max_bytes, max_age };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_bytes == 0 || self.max_age <= Duration::zero() {
            return Err(MonitorError::Config("flush thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Lines destined for one partition, in arrival order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionChunk {
    pub partition: String,
    pub lines: Vec<String>,
}

/// Buffered records split by UTC hour; partitions appear in the order their
/// first record arrived.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlushBatch {
    pub chunks: Vec<PartitionChunk>,
}

impl FlushBatch {
    pub fn record_count(&self) -> usize {
        self.chunks.iter().map(|c| c.lines.len()).sum()
    }
}

/// In-memory capture buffer. Pure: it never touches the filesystem.
#[derive(Clone, Debug, Default)]
pub struct CaptureBuffer {
    pending: Vec<(String, String)>,
    bytes: usize,
    oldest: Option<DateTime<Utc>>,
    rejected: u64,
    accepted: u64,
}

impl CaptureBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Buffer one record; returns a batch when a threshold is reached.
    /// Records without an event id are rejected and counted.
    pub fn append(&mut self, record: &CaptureRecord, policy: &FlushPolicy, now: DateTime<Utc>) -> Option<FlushBatch> {
        let line = match serialize_record(record) {
            Ok(line) => line,
            Err(_) => {
                self.rejected += 1;
                return self.poll(policy, now);
            }
        };
        self.accepted += 1;
        self.bytes += line.len() + 1;
        self.pending.push((partition_path(&record.timestamp), line));
        self.oldest.get_or_insert(now);
        self.poll(policy, now)
    }

    /// Flush if the size or age threshold is reached.
    pub fn poll(&mut self, policy: &FlushPolicy, now: DateTime<Utc>) -> Option<FlushBatch> {
        let aged = self.oldest.is_some_and(|t| now - t >= policy.max_age);
        if self.bytes >= policy.max_bytes || (aged && !self.pending.is_empty()) {
            Some(self.drain())
        } else {
            None
        }
    }

    pub fn drain(&mut self) -> FlushBatch {
        let mut chunks: Vec<PartitionChunk> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (partition, line) in self.pending.drain(..) {
            let i = *index.entry(partition.clone()).or_insert_with(|| {
                chunks.push(PartitionChunk { partition, lines: Vec::new() });
                chunks.len() - 1
            });
            chunks[i].lines.push(line);
        }
        self.bytes = 0;
        self.oldest = None;
        FlushBatch { chunks }
    }
}

fn serialize_record(record: &CaptureRecord) -> Result<String> {
    if record.event_id.is_empty() {
        return Err(MonitorError::InvalidValue("capture record has an empty event id".into()));
    }
    Ok(serde_json::to_string(record)?)
}

/// Destination for flushed batches.
pub trait FlushSink: Send + 'static {
    fn write(&mut self, batch: &FlushBatch) -> Result<()>;
}

/// Writes `<epoch-millis>-<sequence>.jsonl` files below a root directory.
/// Each file is written under a temporary name and renamed into place.
#[derive(Debug)]
pub struct DirectorySink {
    root: PathBuf,
    sequence: u64,
}

impl DirectorySink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), sequence: 0 }
    }
}

impl FlushSink for DirectorySink {
    fn write(&mut self, batch: &FlushBatch) -> Result<()> {
        let millis = Utc::now().timestamp_millis();
        for chunk in &batch.chunks {
            let dir = self.root.join(&chunk.partition);
            let name = format!("{millis}-{:06}.jsonl", self.sequence);
            self.sequence += 1;
            let mut body = chunk.lines.join("\n");
            body.push('\n');
            write_atomic(&dir, &name, body.as_bytes())?;
        }
        Ok(())
    }
}

pub(crate) fn write_atomic(dir: &Path, name: &str, body: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

enum Msg {
    Batch(FlushBatch),
    Shutdown,
}

/// Counters reported when a writer shuts down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub offered: u64,
    pub sampled_out: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub flushed_records: u64,
    pub write_errors: u64,
}

/// Capture front end. `capture` only samples and buffers; file output
/// happens on a background thread, which also flushes idle buffers once
/// they reach the age threshold.
pub struct CaptureWriter {
    buffer: Arc<Mutex<CaptureBuffer>>,
    sampler: Sampler,
    policy: FlushPolicy,
    tx: Sender<Msg>,
    worker: Option<JoinHandle<(u64, u64)>>,
    offered: u64,
    sampled_out: u64,
}

impl CaptureWriter {
    pub fn new<S: FlushSink>(sink: S, policy: FlushPolicy, sampler: Sampler) -> Result<Self> {
        policy.validate()?;
        let buffer = Arc::new(Mutex::new(CaptureBuffer::new()));
        let (tx, rx) = mpsc::channel::<Msg>();
        let shared = Arc::clone(&buffer);
        let tick = (policy.max_age / 4)
            .to_std()
            .unwrap_or(std::time::Duration::from_millis(250))
            .clamp(std::time::Duration::from_millis(5), std::time::Duration::from_secs(5));
        let worker = std::thread::spawn(move || {
            let mut sink = sink;
            let (mut flushed, mut errors) = (0u64, 0u64);
            let mut emit = |batch: FlushBatch| {
                match sink.write(&batch) {
                    Ok(()) => flushed += batch.record_count() as u64,
                    Err(_) => errors += 1,
                }
            };
            loop {
                match rx.recv_timeout(tick) {
                    Ok(Msg::Batch(b)) => emit(b),
                    Ok(Msg::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                    Err(RecvTimeoutError::Timeout) => {
                        let due = shared.lock().expect("capture buffer lock").poll(&policy, Utc::now());
                        if let Some(b) = due {
                            emit(b);
                        }
                    }
                }
            }
            while let Ok(Msg::Batch(b)) = rx.try_recv() {
                emit(b);
            }
            let rest = shared.lock().expect("capture buffer lock").drain();
            if rest.record_count() > 0 {
                emit(rest);
            }
            (flushed, errors)
        });
        Ok(Self {
            buffer,
            sampler,
            policy,
            tx,
            worker: Some(worker),
            offered: 0,
            sampled_out: 0,
        })
    }

    /// Returns whether the record was sampled in.
    pub fn capture(&mut self, record: &CaptureRecord) -> bool {
        self.capture_at(record, Utc::now())
    }

    pub fn capture_at(&mut self, record: &CaptureRecord, now: DateTime<Utc>) -> bool {
        self.offered += 1;
        if !self.sampler.decide() {
            self.sampled_out += 1;
            return false;
        }
        let batch = self.buffer.lock().expect("capture buffer lock").append(record, &self.policy, now);
        if let Some(b) = batch {
            // The worker only disappears at shutdown; a failed send then means
            // the batch is drained by `finish` instead.
            let _ = self.tx.send(Msg::Batch(b));
        }
        true
    }

    /// Flush everything and stop the background thread.
    pub fn finish(mut self) -> CaptureStats {
        self.shutdown()
    }

    fn shutdown(&mut self) -> CaptureStats {
        let _ = self.tx.send(Msg::Shutdown);
        let (flushed_records, write_errors) = self
            .worker
            .take()
            .map(|h| h.join().unwrap_or((0, 1)))
            .unwrap_or_default();
        let buf = self.buffer.lock().expect("capture buffer lock");
        CaptureStats {
            offered: self.offered,
            sampled_out: self.sampled_out,
            accepted: buf.accepted(),
            rejected: buf.rejected(),
            flushed_records,
            write_errors,
        }
    }
}

impl Drop for CaptureWriter {
    fn drop(&mut self) {
        if self.worker.is_some() {
            self.shutdown();
        }
    }
}

/// Every `*.jsonl` file of a partition directory, ordered by the numeric
/// `<millis>-<sequence>` stem (other names sort after, by name).
pub fn partition_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "jsonl")
                && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    let key = |p: &PathBuf| {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let nums = stem
            .split_once('-')
            .and_then(|(a, b)| Some((a.parse::<u64>().ok()?, b.parse::<u64>().ok()?)));
        (nums.is_none(), nums.unwrap_or((0, 0)), stem)
    };
    files.sort_by_key(key);
    Ok(files)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            MonitorError::parse(format!("{}:{}", path.display(), i + 1), e.to_string())
        })?);
    }
    Ok(out)
}

/// All records of one hourly partition in write order.
pub fn read_partition<T: DeserializeOwned>(root: &Path, hour: DateTime<Utc>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for file in partition_files(&partition_dir(root, &hour))? {
        out.extend(read_jsonl(&file)?);
    }
    Ok(out)
}

pub fn partition_exists(root: &Path, hour: DateTime<Utc>) -> bool {
    partition_dir(root, &hour).is_dir()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinCounts {
    pub captured: u64,
    pub labeled: u64,
    pub joined: u64,
    pub unlabeled: u64,
    pub orphan_labels: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JoinResult {
    pub rows: Vec<JoinedRecord>,
    pub counts: JoinCounts,
}

/// Inner join on `event_id`, capture order preserved. When a label id
/// repeats, the last record wins.
pub fn join_ground_truth(captures: &[CaptureRecord], labels: &[GroundTruthRecord]) -> JoinResult {
    let latest: HashMap<&str, &str> = labels.iter().map(|l| (l.event_id.as_str(), l.label.as_str())).collect();
    let captured_ids: HashSet<&str> = captures.iter().map(|c| c.event_id.as_str()).collect();
    let mut rows = Vec::new();
    let mut unlabeled = 0u64;
    for c in captures {
        match latest.get(c.event_id.as_str()) {
            Some(label) => rows.push(JoinedRecord {
                event_id: c.event_id.clone(),
                timestamp: c.timestamp,
                input: c.input.clone(),
                output: c.output.clone(),
                label: label.to_string(),
            }),
            None => unlabeled += 1,
        }
    }
    let orphan_labels = latest.keys().filter(|id| !captured_ids.contains(*id)).count() as u64;
    JoinResult {
        counts: JoinCounts {
            captured: captures.len() as u64,
            labeled: latest.len() as u64,
            joined: rows.len() as u64,
            unlabeled,
            orphan_labels,
        },
        rows,
    }
}

/// Join one hourly partition and persist the result as
/// `joined_root/YYYY/MM/DD/HH/joined.jsonl`, replacing any earlier output.
pub fn join_partition(capture_root: &Path, labels_root: &Path, joined_root: &Path, hour: DateTime<Utc>) -> Result<JoinResult> {
    let hour = floor_hour(hour);
    let captures: Vec<CaptureRecord> = read_partition(capture_root, hour)?;
    let labels: Vec<GroundTruthRecord> = read_partition(labels_root, hour)?;
    let result = join_ground_truth(&captures, &labels);
    let mut body = String::new();
    for r in &result.rows {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    write_atomic(&partition_dir(joined_root, &hour), JOINED_FILE, body.as_bytes())?;
    Ok(result)
}

pub fn read_joined(joined_root: &Path, hour: DateTime<Utc>) -> Result<Vec<JoinedRecord>> {
    let path = partition_dir(joined_root, &hour).join(JOINED_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(&path)
}
