//! Bias metrics over a two-group facet and the bootstrap alarm procedure.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};
use crate::quality::{bootstrap_stddev, BootstrapConfig};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Advantaged,
    Disadvantaged,
}

impl Facet {
    pub fn flip(self) -> Self {
        match self {
            Facet::Advantaged => Facet::Disadvantaged,
            Facet::Disadvantaged => Facet::Advantaged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetRow {
    pub label: bool,
    #[serde(default)]
    pub prediction: Option<bool>,
    pub facet: Facet,
}

impl FacetRow {
    pub fn new(label: bool, facet: Facet) -> Self {
        Self { label, prediction: None, facet }
    }
}

/// Signature shared by all bias metrics, so callers can plug in their own.
pub type BiasMetric = fn(&[FacetRow]) -> Result<f64>;

fn group_rate(rows: &[FacetRow], facet: Facet, hit: impl Fn(&FacetRow) -> Result<bool>) -> Result<f64> {
    let mut n = 0u64;
    let mut k = 0u64;
    for r in rows.iter().filter(|r| r.facet == facet) {
        n += 1;
        k += hit(r)? as u64;
    }
    if n == 0 {
        return Err(MonitorError::InsufficientData(format!("facet group {facet:?} is empty")));
    }
    Ok(k as f64 / n as f64)
}

/// Difference in positive proportions of observed labels, `q_adv − q_dis`.
pub fn dpl(rows: &[FacetRow]) -> Result<f64> {
    let adv = group_rate(rows, Facet::Advantaged, |r| Ok(r.label))?;
    let dis = group_rate(rows, Facet::Disadvantaged, |r| Ok(r.label))?;
    Ok(adv - dis)
}

pub fn accuracy_difference(rows: &[FacetRow]) -> Result<f64> {
    let correct = |r: &FacetRow| match r.prediction {
        Some(p) => Ok(p == r.label),
        None => Err(MonitorError::InsufficientData("accuracy difference needs predictions".into())),
    };
    Ok(group_rate(rows, Facet::Advantaged, correct)? - group_rate(rows, Facet::Disadvantaged, correct)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasAlarmConfig {
    pub range_low: f64,
    pub range_high: f64,
    pub bootstrap: BootstrapConfig,
}

impl BiasAlarmConfig {
    pub fn new(range_low: f64, range_high: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            range_low,
            range_high,
            bootstrap: BootstrapConfig { seed, ..Default::default() },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_low <= self.range_high) {
            return Err(MonitorError::Config(format!(
                "acceptable range [{}, {}] is empty",
                self.range_low, self.range_high
            )));
        }
        self.bootstrap.validate()
    }

    pub fn contains(&self, value: f64) -> bool {
        self.range_low <= value && value <= self.range_high
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmDecision {
    pub metric_value: f64,
    /// `None` when some bootstrap replicate had an empty facet group.
    pub bootstrap_stddev: Option<f64>,
    pub alarm: bool,
}

pub fn alarm_rule(value: f64, stddev: Option<f64>, low: f64, high: f64) -> bool {
    let sd = stddev.unwrap_or(0.0);
    value > high + sd || value < low - sd
}

pub fn bias_alarm(rows: &[FacetRow], metric: BiasMetric, cfg: &BiasAlarmConfig) -> Result<AlarmDecision> {
    cfg.validate()?;
    let used = &rows[..rows.len().min(cfg.bootstrap.sample_cap)];
    let metric_value = metric(used)?;
    let bootstrap_stddev = bootstrap_stddev(used, |r| metric(r).map(Some), &cfg.bootstrap)?;
    Ok(AlarmDecision {
        metric_value,
        bootstrap_stddev,
        alarm: alarm_rule(metric_value, bootstrap_stddev, cfg.range_low, cfg.range_high),
    })
}

/// Synthetic population with exact group sizes and positive counts.
pub fn synthetic_population(adv: (usize, usize), dis: (usize, usize)) -> Vec<FacetRow> {
    let mut rows = Vec::with_capacity(adv.0 + dis.0);
    for (facet, (size, positives)) in [(Facet::Advantaged, adv), (Facet::Disadvantaged, dis)] {
        rows.extend((0..size).map(|i| FacetRow::new(i < positives, facet)));
    }
    rows
}

/// The default case-study population: 20 000 rows, DPL exactly −0.199.
pub fn default_population() -> Vec<FacetRow> {
    synthetic_population((10_000, 1_120), (10_000, 3_110))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeConfig {
    pub label: String,
    pub low: f64,
    pub high: f64,
}

/// The three ranges of the case study for a population metric `b`.
pub fn default_ranges(b: f64) -> Vec<RangeConfig> {
    let sym = |label: &str, f: f64| {
        let w = (f * b).abs();
        RangeConfig { label: label.into(), low: -w, high: w }
    };
    vec![sym("no_bias", 1.1), sym("medium_bias", 0.55), sym("high_bias", 0.0)]
}

pub const DEFAULT_SAMPLE_SIZES: [usize; 7] = [50, 100, 200, 500, 1000, 2000, 5000];

#[derive(Clone, Debug)]
pub struct CaseStudyConfig {
    pub ranges: Vec<RangeConfig>,
    pub sample_sizes: Vec<usize>,
    pub repeats: usize,
    pub n_boot: usize,
    pub resample_frac: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyRow {
    pub config_label: String,
    pub range_low: f64,
    pub range_high: f64,
    pub sample_size: usize,
    pub repeats: usize,
    pub alarms: usize,
    pub alarm_fraction: f64,
}

impl CaseStudyRow {
    /// Fraction of runs whose decision matches the ground truth
    /// `alarm ⇔ true metric ∉ range`.
    pub fn accuracy(&self, true_value: f64) -> f64 {
        if self.range_low <= true_value && true_value <= self.range_high {
            1.0 - self.alarm_fraction
        } else {
            self.alarm_fraction
        }
    }
}

/// Alarm-rate table over ranges × sample sizes.
///
/// Each repeat draws `sample_size` rows without replacement from the
/// population; every range sees the same draws. The whole sample enters the
/// bootstrap, so the sample size plays the role of the bootstrap sample cap.
pub fn bias_case_study(population: &[FacetRow], metric: BiasMetric, cfg: &CaseStudyConfig) -> Result<Vec<CaseStudyRow>> {
    if cfg.repeats == 0 {
        return Err(MonitorError::Config("case study needs at least one repeat".into()));
    }
    let mut alarms = vec![vec![0usize; cfg.sample_sizes.len()]; cfg.ranges.len()];
    for (si, &size) in cfg.sample_sizes.iter().enumerate() {
        if size == 0 || size > population.len() {
            return Err(MonitorError::Config(format!(
                "sample size {size} must be in 1..={}",
                population.len()
            )));
        }
        for rep in 0..cfg.repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[size as u64, rep as u64]));
            let sample: Vec<FacetRow> = index::sample(&mut rng, population.len(), size)
                .into_iter()
                .map(|i| population[i])
                .collect();
            let boot = BootstrapConfig {
                n_boot: cfg.n_boot,
                resample_frac: cfg.resample_frac,
                sample_cap: size,
                seed: seed::derive(cfg.seed, &[size as u64, rep as u64, 1]),
            };
            let value = metric(&sample)?;
            let sd = bootstrap_stddev(&sample, |r| metric(r).map(Some), &boot)?;
            for (ri, range) in cfg.ranges.iter().enumerate() {
                alarms[ri][si] += alarm_rule(value, sd, range.low, range.high) as usize;
            }
        }
    }
    let mut out = Vec::new();
    for (ri, range) in cfg.ranges.iter().enumerate() {
        for (si, &size) in cfg.sample_sizes.iter().enumerate() {
            out.push(CaseStudyRow {
                config_label: range.label.clone(),
                range_low: range.low,
                range_high: range.high,
                sample_size: size,
                repeats: cfg.repeats,
                alarms: alarms[ri][si],
                alarm_fraction: alarms[ri][si] as f64 / cfg.repeats as f64,
            });
        }
    }
    Ok(out)
}

pub fn write_case_study_csv<W: std::io::Write>(rows: &[CaseStudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
