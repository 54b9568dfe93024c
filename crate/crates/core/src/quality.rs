//! Model-quality metrics, bootstrap standard deviations and threshold
//! constraints.
//!
//! Alerting follows the report rule: a `GreaterThanThreshold` constraint is
//! only violated when `value > threshold + stddev`, and symmetrically for
//! `LessThanThreshold`. An undefined stddev counts as zero.

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};
use crate::jsonfmt::nan_string;
use crate::seed;
use crate::window::{format_millis, format_seconds, TimeWindow};

pub const DEFAULT_N_BOOT: usize = 5;
pub const DEFAULT_SAMPLE_CAP: usize = 200;
pub const DEFAULT_RESAMPLE_FRAC: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub prediction: f64,
    pub label: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl LabeledRow {
    pub fn new(prediction: f64, label: f64) -> Self {
        Self {
            prediction,
            label,
            score: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledBatch {
    pub rows: Vec<LabeledRow>,
    pub window: Option<TimeWindow>,
}

impl LabeledBatch {
    pub fn from_pairs(predictions: &[f64], labels: &[f64]) -> Self {
        Self {
            rows: predictions
                .iter()
                .zip(labels)
                .map(|(&p, &l)| LabeledRow::new(p, l))
                .collect(),
            window: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    #[serde(with = "nan_string")]
    pub value: Option<f64>,
    #[serde(with = "nan_string")]
    pub standard_deviation: Option<f64>,
}

pub type MetricMap = IndexMap<String, MetricValue>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Regression,
    BinaryClassification,
}

/// A scalar metric over labeled rows. `None` means undefined on this data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Mae,
    Mse,
    Rmse,
    R2,
    Accuracy,
    Precision,
    Recall,
    FBeta(f64),
    Auc,
}

impl Metric {
    pub const REGRESSION: [Metric; 4] = [Metric::Mae, Metric::Mse, Metric::Rmse, Metric::R2];
    pub const CLASSIFICATION: [Metric; 7] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::FBeta(0.5),
        Metric::FBeta(1.0),
        Metric::FBeta(2.0),
        Metric::Auc,
    ];

    pub fn name(&self) -> String {
        match self {
            Metric::Mae => "mae".into(),
            Metric::Mse => "mse".into(),
            Metric::Rmse => "rmse".into(),
            Metric::R2 => "r2".into(),
            Metric::Accuracy => "accuracy".into(),
            Metric::Precision => "precision".into(),
            Metric::Recall => "recall".into(),
            Metric::FBeta(b) if *b == 0.5 => "f0_5".into(),
            Metric::FBeta(b) if *b == 1.0 => "f1".into(),
            Metric::FBeta(b) if *b == 2.0 => "f2".into(),
            Metric::FBeta(b) => format!("f{}", b.to_string().replace('.', "_")),
            Metric::Auc => "auc".into(),
        }
    }

    pub fn evaluate(&self, rows: &[LabeledRow]) -> Result<Option<f64>> {
        match self {
            Metric::Mae => Ok(Some(regression_metrics(rows)?.mae)),
            Metric::Mse => Ok(Some(regression_metrics(rows)?.mse)),
            Metric::Rmse => Ok(Some(regression_metrics(rows)?.rmse)),
            Metric::R2 => Ok(regression_metrics(rows)?.r2),
            Metric::Accuracy => Ok(Some(classification_metrics(rows, 1.0)?.accuracy)),
            Metric::Precision => Ok(Some(classification_metrics(rows, 1.0)?.precision)),
            Metric::Recall => Ok(Some(classification_metrics(rows, 1.0)?.recall)),
            Metric::FBeta(b) => Ok(Some(classification_metrics(rows, *b)?.f_beta)),
            Metric::Auc => Ok(classification_metrics(rows, 1.0)?.auc),
        }
    }
}

/// Higher values of these metrics mean a worse model.
pub fn higher_is_worse(metric: &str) -> bool {
    matches!(metric, "mae" | "mse" | "rmse")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Undefined when the labels have zero variance.
    pub r2: Option<f64>,
}

pub fn regression_metrics(rows: &[LabeledRow]) -> Result<RegressionMetrics> {
    if rows.is_empty() {
        return Err(MonitorError::InsufficientData("regression metrics on an empty batch".into()));
    }
    let n = rows.len() as f64;
    let abs_sum: f64 = rows.iter().map(|r| (r.prediction - r.label).abs()).sum();
    let sq_sum: f64 = rows.iter().map(|r| (r.prediction - r.label).powi(2)).sum();
    let mse = sq_sum / n;
    let label_mean = rows.iter().map(|r| r.label).sum::<f64>() / n;
    let ss_tot: f64 = rows.iter().map(|r| (r.label - label_mean).powi(2)).sum();
    // The residual sum of squares is the squared Euclidean norm of the
    // residual vector; this reproduces reference report values to the bit.
    let ss_res = sq_sum.sqrt().powi(2);
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(RegressionMetrics {
        mae: abs_sum / n,
        mse,
        rmse: mse.sqrt(),
        r2,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    /// Undefined when a class is absent or scores are missing.
    pub auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

fn as_binary(x: f64, what: &str) -> Result<bool> {
    if x == 0.0 {
        Ok(false)
    } else if x == 1.0 {
        Ok(true)
    } else {
        Err(MonitorError::InvalidValue(format!("{what} must be 0 or 1, got {x}")))
    }
}

pub fn classification_metrics(rows: &[LabeledRow], beta: f64) -> Result<ClassificationMetrics> {
    if rows.is_empty() {
        return Err(MonitorError::InsufficientData("classification metrics on an empty batch".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for r in rows {
        match (as_binary(r.prediction, "prediction")?, as_binary(r.label, "label")?) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    Ok(ClassificationMetrics {
        confusion: cm,
        accuracy: ratio(cm.tp + cm.tn, rows.len() as u64),
        precision,
        recall,
        f_beta: f_beta(precision, recall, beta),
        auc: auc(rows)?,
    })
}

/// Mann–Whitney AUC with midranks for ties.
fn auc(rows: &[LabeledRow]) -> Result<Option<f64>> {
    let mut scored = Vec::with_capacity(rows.len());
    for r in rows {
        let Some(s) = r.score else { return Ok(None) };
        scored.push((s, as_binary(r.label, "label")?));
    }
    let pos = scored.iter().filter(|(_, y)| *y).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * scored[i..=j].iter().filter(|(_, y)| *y).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub resample_frac: f64,
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_N_BOOT,
            resample_frac: DEFAULT_RESAMPLE_FRAC,
            sample_cap: DEFAULT_SAMPLE_CAP,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot < 2 {
            return Err(MonitorError::Config("bootstrap needs n_boot >= 2".into()));
        }
        if !(self.resample_frac > 0.0 && self.resample_frac <= 1.0) {
            return Err(MonitorError::Config(format!(
                "resample fraction must be in (0, 1], got {}",
                self.resample_frac
            )));
        }
        if self.sample_cap == 0 {
            return Err(MonitorError::Config("sample cap must be positive".into()));
        }
        Ok(())
    }
}

/// Bootstrap standard deviation of `metric`.
///
/// The first `min(len, sample_cap)` rows enter the procedure. Each of the
/// `n_boot` replicates draws `ceil(resample_frac * m)` of them with
/// replacement from a generator seeded by `(seed, replicate)`, so two
/// metrics bootstrapped with the same config see identical resamples. The
/// result is the (n − 1) standard deviation of the replicate values, or
/// `None` when any replicate is undefined.
pub fn bootstrap_stddev<R, F>(rows: &[R], metric: F, cfg: &BootstrapConfig) -> Result<Option<f64>>
where
    R: Clone,
    F: Fn(&[R]) -> Result<Option<f64>>,
{
    cfg.validate()?;
    let m = rows.len().min(cfg.sample_cap);
    if m == 0 {
        return Err(MonitorError::InsufficientData("bootstrap on an empty batch".into()));
    }
    let base = &rows[..m];
    let draws = (cfg.resample_frac * m as f64).ceil() as usize;
    let mut values = Vec::with_capacity(cfg.n_boot);
    let mut replicate = Vec::with_capacity(draws);
    for b in 0..cfg.n_boot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[b as u64]));
        replicate.clear();
        replicate.extend((0..draws).map(|_| base[rng.random_range(0..m)].clone()));
        match metric(&replicate) {
            Ok(Some(v)) if v.is_finite() => values.push(v),
            Ok(_) | Err(MonitorError::InsufficientData(_)) | Err(MonitorError::UndefinedMetric(_)) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        }
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(Some(var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub item_count: u64,
    pub start_time: String,
    pub end_time: String,
    pub evaluation_time: String,
}

/// Model-quality report document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub version: f64,
    pub dataset: DatasetInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression_metrics: Option<MetricMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_classification_metrics: Option<MetricMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion_matrix: Option<ConfusionMatrix>,
}

impl QualityReport {
    pub fn metrics(&self) -> Option<&MetricMap> {
        self.regression_metrics
            .as_ref()
            .or(self.binary_classification_metrics.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::jsonfmt::to_report_string(self)?)
    }
}

/// Compute every metric of `problem` with its bootstrap stddev.
pub fn metric_map(rows: &[LabeledRow], problem: ProblemType, boot: &BootstrapConfig) -> Result<MetricMap> {
    let metrics: &[Metric] = match problem {
        ProblemType::Regression => &Metric::REGRESSION,
        ProblemType::BinaryClassification => &Metric::CLASSIFICATION,
    };
    let mut out = MetricMap::new();
    for metric in metrics {
        let value = metric.evaluate(rows)?;
        let standard_deviation = bootstrap_stddev(rows, |r| metric.evaluate(r), boot)?;
        out.insert(metric.name(), MetricValue { value, standard_deviation });
    }
    Ok(out)
}

pub fn build_report(
    rows: &[LabeledRow],
    problem: ProblemType,
    window: TimeWindow,
    evaluation_time: DateTime<Utc>,
    boot: &BootstrapConfig,
) -> Result<QualityReport> {
    let dataset = DatasetInfo {
        item_count: rows.len() as u64,
        start_time: format_seconds(window.start),
        end_time: format_seconds(window.end),
        evaluation_time: format_millis(evaluation_time),
    };
    let mut report = QualityReport {
        version: 0.0,
        dataset,
        regression_metrics: None,
        binary_classification_metrics: None,
        confusion_matrix: None,
    };
    if rows.is_empty() {
        return Ok(report);
    }
    let map = metric_map(rows, problem, boot)?;
    match problem {
        ProblemType::Regression => report.regression_metrics = Some(map),
        ProblemType::BinaryClassification => {
            report.confusion_matrix = Some(classification_metrics(rows, 1.0)?.confusion);
            report.binary_classification_metrics = Some(map);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonOperator {
    GreaterThanThreshold,
    LessThanThreshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConstraint {
    pub threshold: f64,
    pub comparison_operator: ComparisonOperator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityConstraints {
    pub version: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression_constraints: Option<IndexMap<String, MetricConstraint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_classification_constraints: Option<IndexMap<String, MetricConstraint>>,
}

impl QualityConstraints {
    pub fn constraints(&self) -> impl Iterator<Item = (&String, &MetricConstraint)> {
        self.regression_constraints
            .iter()
            .chain(self.binary_classification_constraints.iter())
            .flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::jsonfmt::to_report_string(self)?)
    }
}

/// Thresholds at the baseline values; metrics with an undefined baseline
/// value get no constraint.
pub fn suggest_quality_constraints(baseline: &MetricMap, problem: ProblemType) -> QualityConstraints {
    let map: IndexMap<String, MetricConstraint> = baseline
        .iter()
        .filter_map(|(name, mv)| {
            let threshold = mv.value.filter(|v| v.is_finite())?;
            let comparison_operator = if higher_is_worse(name) {
                ComparisonOperator::GreaterThanThreshold
            } else {
                ComparisonOperator::LessThanThreshold
            };
            Some((name.clone(), MetricConstraint { threshold, comparison_operator }))
        })
        .collect();
    let mut out = QualityConstraints {
        version: 0.0,
        regression_constraints: None,
        binary_classification_constraints: None,
    };
    match problem {
        ProblemType::Regression => out.regression_constraints = Some(map),
        ProblemType::BinaryClassification => out.binary_classification_constraints = Some(map),
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityViolation {
    pub metric: String,
    pub value: Option<f64>,
    pub threshold: f64,
    pub standard_deviation: Option<f64>,
    pub comparison_operator: ComparisonOperator,
    /// True when the metric was missing from the report.
    pub missing: bool,
}

impl QualityViolation {
    pub fn describe(&self) -> String {
        if self.missing {
            return format!("metric {} is constrained but absent from the report", self.metric);
        }
        let sd = self.standard_deviation.unwrap_or(0.0);
        match self.comparison_operator {
            ComparisonOperator::GreaterThanThreshold => format!(
                "{} = {} exceeds threshold {} by more than its standard deviation {}",
                self.metric,
                self.value.unwrap_or(f64::NAN),
                self.threshold,
                sd
            ),
            ComparisonOperator::LessThanThreshold => format!(
                "{} = {} is below threshold {} by more than its standard deviation {}",
                self.metric,
                self.value.unwrap_or(f64::NAN),
                self.threshold,
                sd
            ),
        }
    }
}

pub fn evaluate_quality_constraints(report: &MetricMap, constraints: &QualityConstraints) -> Vec<QualityViolation> {
    let mut out = Vec::new();
    for (name, c) in constraints.constraints() {
        let Some(mv) = report.get(name) else {
            out.push(QualityViolation {
                metric: name.clone(),
                value: None,
                threshold: c.threshold,
                standard_deviation: None,
                comparison_operator: c.comparison_operator,
                missing: true,
            });
            continue;
        };
        let Some(value) = mv.value else { continue };
        let sd = mv.standard_deviation.unwrap_or(0.0);
        let violated = match c.comparison_operator {
            ComparisonOperator::GreaterThanThreshold => value > c.threshold + sd,
            ComparisonOperator::LessThanThreshold => value < c.threshold - sd,
        };
        if violated {
            out.push(QualityViolation {
                metric: name.clone(),
                value: Some(value),
                threshold: c.threshold,
                standard_deviation: mv.standard_deviation,
                comparison_operator: c.comparison_operator,
                missing: false,
            });
        }
    }
    out
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_batch() -> Vec<LabeledRow> {
        LabeledBatch::from_pairs(&[1.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 1.0]).rows
    }

    #[test]
    fn regression_sample_values() {
        let m = regression_metrics(&sample_batch()).unwrap();
        assert_eq!(m.mae, 0.5);
        assert_eq!(m.mse, 0.5);
        assert_eq!(m.rmse, 0.7071067811865476);
        assert_eq!(m.r2, Some(-1.6666666666666674));
    }

    #[test]
    fn perfect_fit_and_constant_labels() {
        let rows = LabeledBatch::from_pairs(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).rows;
        let m = regression_metrics(&rows).unwrap();
        assert_eq!((m.mae, m.mse, m.rmse, m.r2), (0.0, 0.0, 0.0, Some(1.0)));
        let rows = LabeledBatch::from_pairs(&[1.0, 2.0, 4.0], &[3.0, 3.0, 3.0]).rows;
        assert_eq!(regression_metrics(&rows).unwrap().r2, None);
        assert!(matches!(regression_metrics(&[]), Err(MonitorError::InsufficientData(_))));
    }

    #[test]
    fn classification_confusion() {
        let rows = LabeledBatch::from_pairs(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).rows;
        let c = classification_metrics(&rows, 1.0).unwrap();
        assert_eq!(c.confusion, ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!((c.precision, c.recall, c.f_beta), (0.5, 0.5, 0.5));
        assert_eq!(classification_metrics(&rows, 0.5).unwrap().f_beta, 0.5);
        assert_eq!(c.auc, None);

        let rows = LabeledBatch::from_pairs(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).rows;
        for beta in [0.5, 1.0, 2.0] {
            let c = classification_metrics(&rows, beta).unwrap();
            assert_eq!((c.accuracy, c.f_beta), (1.0, 1.0));
        }
        let bad = LabeledBatch::from_pairs(&[1.0], &[2.0]).rows;
        assert!(matches!(classification_metrics(&bad, 1.0), Err(MonitorError::InvalidValue(_))));
    }

    #[test]
    fn no_positive_predictions_gives_zero_f() {
        let rows = LabeledBatch::from_pairs(&[0.0, 0.0], &[1.0, 0.0]).rows;
        let c = classification_metrics(&rows, 1.0).unwrap();
        assert_eq!((c.precision, c.recall, c.f_beta), (0.0, 0.0, 0.0));
    }

    fn scored(scores: &[f64], labels: &[f64]) -> Vec<LabeledRow> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| LabeledRow { prediction: (s >= 0.5) as u8 as f64, label: l, score: Some(s) })
            .collect()
    }

    #[test]
    fn auc_examples() {
        let rows = scored(&[0.9, 0.8, 0.3, 0.2], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(classification_metrics(&rows, 1.0).unwrap().auc, Some(1.0));
        let rows = scored(&[0.5, 0.5], &[1.0, 0.0]);
        assert_eq!(classification_metrics(&rows, 1.0).unwrap().auc, Some(0.5));
        let rows = scored(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(classification_metrics(&rows, 1.0).unwrap().auc, Some(0.75));
    }

    #[test]
    fn bootstrap_constant_metric_is_zero() {
        let rows = LabeledBatch::from_pairs(&[1.0, 0.0, 1.0, 1.0], &[1.0, 0.0, 1.0, 1.0]).rows;
        let sd = bootstrap_stddev(&rows, |r| Metric::Accuracy.evaluate(r), &BootstrapConfig::default()).unwrap();
        assert_eq!(sd, Some(0.0));
    }

    #[test]
    fn bootstrap_sample_properties() {
        let rows = sample_batch();
        let cfg = BootstrapConfig { seed: 42, ..Default::default() };
        let sd = |m: Metric| bootstrap_stddev(&rows, |r| m.evaluate(r), &cfg).unwrap();
        let (mae, mse, rmse) = (sd(Metric::Mae), sd(Metric::Mse), sd(Metric::Rmse));
        assert_eq!(mae, mse);
        assert_ne!(mae, rmse);
        assert!(mae.unwrap() >= 0.0 && rmse.unwrap() >= 0.0);
        // r2 is undefined on some resample for most seeds; find one and
        // check the undefined marker propagates.
        let undefined = (0..50u64).any(|s| {
            let cfg = BootstrapConfig { seed: s, ..Default::default() };
            bootstrap_stddev(&rows, |r| Metric::R2.evaluate(r), &cfg).unwrap().is_none()
        });
        assert!(undefined);
    }

    #[test]
    fn bootstrap_is_deterministic_and_validated() {
        let rows = sample_batch();
        let cfg = BootstrapConfig { seed: 9, ..Default::default() };
        let a = bootstrap_stddev(&rows, |r| Metric::Rmse.evaluate(r), &cfg).unwrap();
        let b = bootstrap_stddev(&rows, |r| Metric::Rmse.evaluate(r), &cfg).unwrap();
        assert_eq!(a, b);
        let bad = BootstrapConfig { n_boot: 1, ..cfg };
        assert!(bootstrap_stddev(&rows, |r| Metric::Rmse.evaluate(r), &bad).is_err());
        let empty: Vec<LabeledRow> = vec![];
        assert!(bootstrap_stddev(&empty, |r| Metric::Rmse.evaluate(r), &cfg).is_err());
    }

    #[test]
    fn bootstrap_uses_first_rows_up_to_cap() {
        // Rows beyond the cap must not influence the estimate.
        let mut rows = sample_batch();
        let cfg = BootstrapConfig { sample_cap: 4, seed: 3, ..Default::default() };
        let before = bootstrap_stddev(&rows, |r| Metric::Mae.evaluate(r), &cfg).unwrap();
        rows.extend(LabeledBatch::from_pairs(&[100.0; 10], &[0.0; 10]).rows);
        let after = bootstrap_stddev(&rows, |r| Metric::Mae.evaluate(r), &cfg).unwrap();
        assert_eq!(before, after);
    }

    fn mv(v: f64, sd: Option<f64>) -> MetricValue {
        MetricValue { value: Some(v), standard_deviation: sd }
    }

    #[test]
    fn suggested_constraints_match_sample() {
        let mut base = MetricMap::new();
        base.insert("mae".into(), mv(0.5, Some(0.2)));
        base.insert("mse".into(), mv(0.5000000000000001, Some(0.2)));
        base.insert("rmse".into(), mv(0.7071067811865476, Some(0.1)));
        base.insert("r2".into(), mv(-1.6666666666666674, None));
        let c = suggest_quality_constraints(&base, ProblemType::Regression);
        let expected = "{\n  \"version\" : 0.0,\n  \"regression_constraints\" : {\n    \"mae\" : {\n      \"threshold\" : 0.5,\n      \"comparison_operator\" : \"GreaterThanThreshold\"\n    },\n    \"mse\" : {\n      \"threshold\" : 0.5000000000000001,\n      \"comparison_operator\" : \"GreaterThanThreshold\"\n    },\n    \"rmse\" : {\n      \"threshold\" : 0.7071067811865476,\n      \"comparison_operator\" : \"GreaterThanThreshold\"\n    },\n    \"r2\" : {\n      \"threshold\" : -1.6666666666666674,\n      \"comparison_operator\" : \"LessThanThreshold\"\n    }\n  }\n}";
        assert_eq!(c.to_json().unwrap(), expected);

        let mut base = MetricMap::new();
        base.insert("auc".into(), MetricValue { value: None, standard_deviation: None });
        base.insert("f1".into(), mv(0.8, None));
        let c = suggest_quality_constraints(&base, ProblemType::BinaryClassification);
        let map = c.binary_classification_constraints.unwrap();
        assert!(!map.contains_key("auc"));
        assert_eq!(map["f1"].comparison_operator, ComparisonOperator::LessThanThreshold);
    }

    fn constraint(metric: &str, threshold: f64, op: ComparisonOperator) -> QualityConstraints {
        let mut map = IndexMap::new();
        map.insert(metric.to_string(), MetricConstraint { threshold, comparison_operator: op });
        QualityConstraints { version: 0.0, regression_constraints: Some(map), binary_classification_constraints: None }
    }

    #[test]
    fn constraint_rule() {
        use ComparisonOperator::*;
        let c = constraint("rmse", 0.7, GreaterThanThreshold);
        let mut r = MetricMap::new();
        r.insert("rmse".into(), mv(0.8, Some(0.2)));
        assert!(evaluate_quality_constraints(&r, &c).is_empty());
        r.insert("rmse".into(), mv(0.95, Some(0.2)));
        let v = evaluate_quality_constraints(&r, &c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].metric, "rmse");
        assert_eq!(v[0].threshold, 0.7);

        let c = constraint("r2", 0.3, LessThanThreshold);
        let mut r = MetricMap::new();
        r.insert("r2".into(), mv(0.3, None));
        assert!(evaluate_quality_constraints(&r, &c).is_empty());
        r.insert("r2".into(), mv(0.29, None));
        assert_eq!(evaluate_quality_constraints(&r, &c).len(), 1);

        let v = evaluate_quality_constraints(&MetricMap::new(), &c);
        assert!(v[0].missing);
    }

    #[test]
    fn report_layout() {
        let window = TimeWindow::new(
            crate::window::parse_instant("2020-10-29T22:00:00Z").unwrap(),
            crate::window::parse_instant("2020-10-30T00:00:00Z").unwrap(),
        )
        .unwrap();
        let eval = crate::window::parse_instant("2021-10-13T00:17:07.894Z").unwrap();
        let report = build_report(&sample_batch(), ProblemType::Regression, window, eval, &BootstrapConfig::default()).unwrap();
        let json = report.to_json().unwrap();
        assert!(json.starts_with("{\n  \"version\" : 0.0,\n  \"dataset\" : {\n    \"item_count\" : 4,\n    \"start_time\" : \"2020-10-29T22:00:00Z\",\n    \"end_time\" : \"2020-10-30T00:00:00Z\",\n    \"evaluation_time\" : \"2021-10-13T00:17:07.894Z\"\n  },\n  \"regression_metrics\" : {\n    \"mae\" : {\n      \"value\" : 0.5,"));
        let back: QualityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    fn brute_regression(rows: &[LabeledRow]) -> (f64, f64) {
        let mut abs = 0.0;
        let mut sq = 0.0;
        for r in rows {
            let e = r.prediction - r.label;
            abs += e.abs();
            sq += e * e;
        }
        (abs / rows.len() as f64, sq / rows.len() as f64)
    }

    proptest! {
        #[test]
        fn regression_matches_brute_force(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..1000)) {
            let rows: Vec<LabeledRow> = pairs.iter().map(|&(p, l)| LabeledRow::new(p, l)).collect();
            let m = regression_metrics(&rows).unwrap();
            let (mae, mse) = brute_regression(&rows);
            prop_assert!((m.mae - mae).abs() <= 1e-12 * (1.0 + mae));
            prop_assert!((m.mse - mse).abs() <= 1e-12 * (1.0 + mse));
            prop_assert_eq!(m.rmse, m.mse.sqrt());
        }

        #[test]
        fn f_beta_limits(tp in 1u64..100, fp in 0u64..100, fn_ in 0u64..100) {
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            prop_assert!((f_beta(p, r, 1e-3) - p).abs() < 1e-3);
            prop_assert!((f_beta(p, r, 1e3) - r).abs() < 1e-3);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            data in prop::collection::vec((0f64..1.0, prop::bool::ANY), 2..200)
        ) {
            let rows: Vec<LabeledRow> = data.iter().map(|&(s, y)| LabeledRow { prediction: 0.0, label: y as u8 as f64, score: Some(s) }).collect();
            let moved: Vec<LabeledRow> = rows.iter().map(|r| LabeledRow { score: r.score.map(|s| (3.0 * s).exp() - 7.0), ..*r }).collect();
            prop_assert_eq!(auc(&rows).unwrap(), auc(&moved).unwrap());
        }

        #[test]
        fn greater_than_is_monotone(v in -10f64..10.0, dv in 0f64..5.0, t in -10f64..10.0, sd in 0f64..2.0) {
            let c = constraint("mae", t, ComparisonOperator::GreaterThanThreshold);
            let mut r = MetricMap::new();
            r.insert("mae".into(), mv(v, Some(sd)));
            let before = evaluate_quality_constraints(&r, &c).len();
            r.insert("mae".into(), mv(v + dv, Some(sd)));
            prop_assert!(evaluate_quality_constraints(&r, &c).len() >= before);
        }
    }
}
