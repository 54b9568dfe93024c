//! Column profiling, baseline suggestion and batch validation.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::drift::{ks_test_eps, linf_categorical, DriftTestConfig};
use crate::error::{MonitorError, Result};
use crate::kll::{KllState, DEFAULT_K};
use crate::quality::{LabeledRow, QualityConstraints};
use crate::seed;
use crate::sketches::{CategoricalCountState, MomentsState, ReservoirState};

pub const DEFAULT_CATEGORY_CAP: usize = 10_000;
pub const DEFAULT_SAMPLE_CAPACITY: usize = 256;

pub const MISSING_COLUMN: &str = "missing_column_check";
pub const EXTRA_COLUMN: &str = "extra_column_check";
pub const DATA_TYPE: &str = "data_type_check";
pub const COMPLETENESS: &str = "completeness_check";
pub const CATEGORICAL_VALUES: &str = "categorical_values_check";
pub const BASELINE_DRIFT: &str = "baseline_drift_check";

/// Inferred column type. Ordered so that `a < b` means `b` is more general.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DataType {
    Integral,
    Fractional,
    String,
}

/// Empty cells and `null` in any case are missing.
pub fn is_null_token(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("null")
}

/// Most specific type of a single non-null cell, with its numeric value.
pub fn classify(cell: &str) -> (DataType, Option<f64>) {
    let t = cell.trim();
    if let Ok(i) = t.parse::<i64>() {
        return (DataType::Integral, Some(i as f64));
    }
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() => (DataType::Fractional, Some(x)),
        _ => (DataType::String, None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub seed: u64,
    pub kll_k: usize,
    pub sample_capacity: usize,
    pub category_cap: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kll_k: DEFAULT_K,
            sample_capacity: DEFAULT_SAMPLE_CAPACITY,
            category_cap: DEFAULT_CATEGORY_CAP,
        }
    }
}

/// Mergeable per-column accumulator. All sketches are maintained while
/// streaming; [`ColumnProfile::summary`] keeps only the ones that fit the
/// inferred type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub integral_count: u64,
    pub fractional_count: u64,
    pub string_count: u64,
    pub missing_count: u64,
    pub moments: MomentsState,
    /// `None` once more than `category_cap` distinct values were seen.
    pub categories: Option<CategoricalCountState>,
    pub category_cap: usize,
    pub quantiles: KllState,
    pub sample: ReservoirState<String>,
}

impl ColumnProfile {
    pub fn new(name: impl Into<String>, column: usize, cfg: &ProfileConfig) -> Result<Self> {
        let col = column as u64;
        Ok(Self {
            name: name.into(),
            integral_count: 0,
            fractional_count: 0,
            string_count: 0,
            missing_count: 0,
            moments: MomentsState::new(),
            categories: Some(CategoricalCountState::new()),
            category_cap: cfg.category_cap,
            quantiles: KllState::new(cfg.kll_k, seed::derive(cfg.seed, &[col, 0]))?,
            sample: ReservoirState::new(cfg.sample_capacity, seed::derive(cfg.seed, &[col, 1])),
        })
    }

    pub fn update(&mut self, cell: &str) -> Result<()> {
        if is_null_token(cell) {
            self.missing_count += 1;
            return Ok(());
        }
        let cell = cell.trim();
        let (ty, value) = classify(cell);
        match ty {
            DataType::Integral => self.integral_count += 1,
            DataType::Fractional => self.fractional_count += 1,
            DataType::String => self.string_count += 1,
        }
        if let Some(x) = value {
            self.moments.update(x)?;
            self.quantiles.update(x)?;
        }
        if let Some(c) = &mut self.categories {
            c.update(cell);
            if c.distinct() > self.category_cap {
                self.categories = None;
            }
        }
        self.sample.update(cell.to_string());
        Ok(())
    }

    pub fn merge(&mut self, other: &ColumnProfile) -> Result<()> {
        if self.name != other.name {
            return Err(MonitorError::Incompatible(format!(
                "cannot merge profiles of columns {} and {}",
                self.name, other.name
            )));
        }
        self.integral_count += other.integral_count;
        self.fractional_count += other.fractional_count;
        self.string_count += other.string_count;
        self.missing_count += other.missing_count;
        self.moments.merge(&other.moments);
        self.quantiles.merge(&other.quantiles)?;
        self.sample.merge(&other.sample)?;
        self.categories = match (self.categories.take(), &other.categories) {
            (Some(mut a), Some(b)) => {
                a.merge(b);
                (a.distinct() <= self.category_cap).then_some(a)
            }
            _ => None,
        };
        Ok(())
    }

    pub fn non_null_count(&self) -> u64 {
        self.integral_count + self.fractional_count + self.string_count
    }

    pub fn rows(&self) -> u64 {
        self.non_null_count() + self.missing_count
    }

    /// Least general type covering every non-null cell. A single non-numeric
    /// cell makes the column a string column; an all-null column counts as
    /// integral.
    pub fn inferred_type(&self) -> DataType {
        if self.string_count > 0 {
            DataType::String
        } else if self.fractional_count > 0 {
            DataType::Fractional
        } else {
            DataType::Integral
        }
    }

    pub fn completeness(&self) -> f64 {
        if self.rows() == 0 {
            1.0
        } else {
            self.non_null_count() as f64 / self.rows() as f64
        }
    }

    pub fn summary(&self) -> ColumnSummary {
        let ty = self.inferred_type();
        let numeric = ty != DataType::String;
        ColumnSummary {
            name: self.name.clone(),
            inferred_type: ty,
            non_null_count: self.non_null_count(),
            missing_count: self.missing_count,
            completeness: self.completeness(),
            mean: numeric.then(|| self.moments.finalize().mean).flatten(),
            std: numeric.then(|| self.moments.finalize().std).flatten(),
            moments: numeric.then(|| self.moments.clone()),
            quantiles: numeric.then(|| self.quantiles.clone()),
            categories: if numeric { None } else { self.categories.clone() },
            sample: self.sample.clone(),
        }
    }
}

/// Finalized column statistics with only type-appropriate sketches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub inferred_type: DataType,
    pub non_null_count: u64,
    pub missing_count: u64,
    pub completeness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<KllState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<CategoricalCountState>,
    pub sample: ReservoirState<String>,
}

/// Profiles of every column of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub rows: u64,
    pub columns: Vec<ColumnProfile>,
}

impl DatasetProfile {
    pub fn new<S: AsRef<str>>(header: &[S], cfg: &ProfileConfig) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut columns = Vec::with_capacity(header.len());
        for (i, name) in header.iter().enumerate() {
            let name = name.as_ref();
            if !seen.insert(name) {
                return Err(MonitorError::parse("header", format!("duplicate column name {name}")));
            }
            columns.push(ColumnProfile::new(name, i, cfg)?);
        }
        Ok(Self { rows: 0, columns })
    }

    pub fn push_record<S: AsRef<str>>(&mut self, record: &[S]) -> Result<()> {
        if record.len() != self.columns.len() {
            return Err(MonitorError::parse(
                format!("row {}", self.rows + 1),
                format!("expected {} fields, found {}", self.columns.len(), record.len()),
            ));
        }
        for (col, cell) in self.columns.iter_mut().zip(record) {
            col.update(cell.as_ref())?;
        }
        self.rows += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &DatasetProfile) -> Result<()> {
        if self.columns.len() != other.columns.len() {
            return Err(MonitorError::Incompatible("profiles have different column counts".into()));
        }
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            a.merge(b)?;
        }
        self.rows += other.rows;
        Ok(())
    }

    pub fn summaries(&self) -> Vec<ColumnSummary> {
        self.columns.iter().map(ColumnProfile::summary).collect()
    }
}

/// Profile a CSV document with a header row.
pub fn profile_csv<R: Read>(reader: R, cfg: &ProfileConfig) -> Result<DatasetProfile> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut profile = DatasetProfile::new(&header, cfg)?;
    for record in rdr.records() {
        let record = record?;
        let cells: Vec<&str> = record.iter().collect();
        profile.push_record(&cells)?;
    }
    Ok(profile)
}

/// Columns that carry ground truth and model output rather than features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelColumns {
    pub label: String,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
}

/// Profile the feature columns of a CSV document and collect labeled rows
/// from the label columns when all of them are present.
pub fn profile_labeled_csv<R: Read>(
    reader: R,
    cfg: &ProfileConfig,
    labels: Option<&LabelColumns>,
) -> Result<(DatasetProfile, Option<Vec<LabeledRow>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let positions = labels.and_then(|l| {
        let score = match &l.score {
            Some(s) => Some(find(s)?),
            None => None,
        };
        Some((find(&l.label)?, find(&l.prediction)?, score))
    });
    let excluded: Vec<usize> = match positions {
        Some((l, p, s)) => [Some(l), Some(p), s].into_iter().flatten().collect(),
        None => Vec::new(),
    };
    let features: Vec<usize> = (0..header.len()).filter(|i| !excluded.contains(i)).collect();
    let names: Vec<&str> = features.iter().map(|&i| header[i].as_str()).collect();
    let mut profile = DatasetProfile::new(&names, cfg)?;
    let mut rows = positions.map(|_| Vec::new());
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(MonitorError::parse(
                format!("row {}", line + 1),
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let cells: Vec<&str> = features.iter().map(|&i| &record[i]).collect();
        profile.push_record(&cells)?;
        if let (Some((l, p, s)), Some(rows)) = (positions, rows.as_mut()) {
            let num = |i: usize, what: &str| -> Result<f64> {
                record[i].trim().parse::<f64>().map_err(|_| {
                    MonitorError::parse(format!("row {} {what}", line + 1), format!("not a number: {:?}", &record[i]))
                })
            };
            rows.push(LabeledRow {
                prediction: num(p, "prediction")?,
                label: num(l, "label")?,
                score: s.map(|s| num(s, "score")).transpose()?,
            });
        }
    }
    Ok((profile, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMethod {
    Ks,
    Linf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDriftConstraint {
    pub method: DriftMethod,
    pub epsilon: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnConstraint {
    pub name: String,
    pub data_type: DataType,
    pub completeness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical_values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<ColumnDriftConstraint>,
}

/// Reference statistics and the constraints suggested from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub version: f64,
    pub columns: Vec<ColumnSummary>,
    pub constraints: Vec<ColumnConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityConstraints>,
}

impl Baseline {
    pub fn to_json(&self) -> Result<String> {
        Ok(crate::jsonfmt::to_report_string(self)?)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let b: Baseline = serde_json::from_str(doc)?;
        for c in &b.columns {
            if let Some(q) = &c.quantiles {
                q.validate()?;
            }
        }
        Ok(b)
    }
}

pub fn suggest_baseline(columns: Vec<ColumnSummary>, drift: &DriftTestConfig) -> Result<Baseline> {
    if columns.is_empty() {
        return Err(MonitorError::InsufficientData("baseline dataset has no columns".into()));
    }
    drift.validate()?;
    let constraints = columns
        .iter()
        .map(|c| {
            let categorical_values = c
                .categories
                .as_ref()
                .map(|cats| cats.counts.keys().cloned().collect::<Vec<_>>());
            let method = if c.quantiles.as_ref().is_some_and(|q| !q.is_empty()) {
                Some(DriftMethod::Ks)
            } else if c.categories.as_ref().is_some_and(|q| q.total > 0) {
                Some(DriftMethod::Linf)
            } else {
                None
            };
            ColumnConstraint {
                name: c.name.clone(),
                data_type: c.inferred_type,
                completeness: c.completeness,
                categorical_values,
                drift: method.map(|method| ColumnDriftConstraint {
                    method,
                    epsilon: drift.epsilon,
                    alpha: drift.alpha,
                }),
            }
        })
        .collect();
    Ok(Baseline {
        version: 0.0,
        columns,
        constraints,
        quality: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub description: String,
    pub observed: Value,
    pub expected: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationsDocument {
    pub version: f64,
    pub violations: Vec<Violation>,
}

impl ViolationsDocument {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::jsonfmt::to_report_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Completeness may fall this far below the baseline before a violation.
    pub completeness_slack: f64,
}

fn violation(check: &str, column: &str, description: String, observed: Value, expected: Value) -> Violation {
    Violation {
        check_name: check.into(),
        column: Some(column.into()),
        description,
        observed,
        expected,
    }
}

pub fn validate_batch(batch: &[ColumnSummary], baseline: &Baseline, cfg: &ValidationConfig) -> Result<ViolationsDocument> {
    let by_name: HashMap<&str, &ColumnSummary> = batch.iter().map(|c| (c.name.as_str(), c)).collect();
    let base_stats: HashMap<&str, &ColumnSummary> = baseline.columns.iter().map(|c| (c.name.as_str(), c)).collect();
    let known: BTreeSet<&str> = baseline.constraints.iter().map(|c| c.name.as_str()).collect();
    let mut out = Vec::new();

    for cons in &baseline.constraints {
        let name = cons.name.as_str();
        let Some(col) = by_name.get(name) else {
            out.push(violation(
                MISSING_COLUMN,
                name,
                format!("baseline column {name} is absent from the batch"),
                Value::Null,
                json!(name),
            ));
            continue;
        };
        let type_ok = col.inferred_type <= cons.data_type;
        if !type_ok {
            out.push(violation(
                DATA_TYPE,
                name,
                format!("column {name} inferred as {:?}, baseline type is {:?}", col.inferred_type, cons.data_type),
                json!(col.inferred_type),
                json!(cons.data_type),
            ));
        }
        if col.completeness < cons.completeness - cfg.completeness_slack {
            out.push(violation(
                COMPLETENESS,
                name,
                format!(
                    "column {name} completeness {} is below baseline {}",
                    col.completeness, cons.completeness
                ),
                json!(col.completeness),
                json!(cons.completeness),
            ));
        }
        if let (Some(allowed), Some(cats)) = (&cons.categorical_values, &col.categories) {
            let allowed: BTreeSet<&String> = allowed.iter().collect();
            let unknown: Vec<&String> = cats.counts.keys().filter(|k| !allowed.contains(k)).collect();
            if !unknown.is_empty() {
                out.push(violation(
                    CATEGORICAL_VALUES,
                    name,
                    format!("column {name} has {} value(s) outside the baseline set", unknown.len()),
                    json!(unknown),
                    json!(allowed),
                ));
            }
        }
        if let (Some(d), true) = (&cons.drift, type_ok) {
            if let Some(v) = drift_violation(name, d, base_stats.get(name).copied(), col)? {
                out.push(v);
            }
        }
    }
    for col in batch {
        if !known.contains(col.name.as_str()) {
            out.push(violation(
                EXTRA_COLUMN,
                &col.name,
                format!("column {} is not in the baseline", col.name),
                json!(col.name),
                Value::Null,
            ));
        }
    }
    Ok(ViolationsDocument { version: 0.0, violations: out })
}

fn drift_violation(
    name: &str,
    d: &ColumnDriftConstraint,
    base: Option<&ColumnSummary>,
    col: &ColumnSummary,
) -> Result<Option<Violation>> {
    let Some(base) = base else { return Ok(None) };
    let cfg = DriftTestConfig::new(d.epsilon, d.alpha)?;
    let result = match d.method {
        DriftMethod::Ks => match (&base.quantiles, &col.quantiles) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => ks_test_eps(a, b, &cfg)?,
            _ => return Ok(None),
        },
        DriftMethod::Linf => match (&base.categories, &col.categories) {
            (Some(a), Some(b)) if a.total > 0 && b.total > 0 => linf_categorical(a, b, &cfg)?,
            _ => return Ok(None),
        },
    };
    if !result.drift_detected {
        return Ok(None);
    }
    Ok(Some(violation(
        BASELINE_DRIFT,
        name,
        format!(
            "column {name} drifted: distance {} exceeds epsilon {}{}",
            result.distance,
            d.epsilon,
            result.p_value.map(|p| format!(" (p = {p})")).unwrap_or_default()
        ),
        json!({"distance": result.distance, "p_value": result.p_value}),
        json!({"method": d.method, "epsilon": d.epsilon, "alpha": d.alpha}),
    )))
}

/// Per-window statistics document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsDocument {
    pub version: f64,
    pub dataset: StatisticsDataset,
    pub features: Vec<ColumnSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsDataset {
    pub item_count: u64,
}

impl StatisticsDocument {
    pub fn new(profile: &DatasetProfile) -> Self {
        Self {
            version: 0.0,
            dataset: StatisticsDataset { item_count: profile.rows },
            features: profile.summaries(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::jsonfmt::to_report_string(self)?)
    }
}
