//! Adaptive vs. fixed-interval retraining on a drifting linear model.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};
use crate::seed;

pub const DRIFT_EVERY: usize = 100;
pub const WINDOW: usize = 100;
pub const DEFAULT_HORIZON: usize = 10_000;
pub const DEFAULT_INTERVALS: [usize; 7] = [50, 100, 200, 400, 800, 1600, 3200];
pub const DEFAULT_THRESHOLD_RANGE: (f64, f64) = (0.5, 20.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub a: f64,
    pub b: f64,
}

impl Default for GenerativeModel {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

impl GenerativeModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// How parameter drift is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftMode {
    /// Independent N(1, 1) increments for `a` and `b`.
    Gaussian,
    /// Increments fixed at their mean, 1.
    Deterministic,
}

pub fn drift_step<R: Rng + ?Sized>(model: GenerativeModel, mode: DriftMode, rng: &mut R) -> GenerativeModel {
    match mode {
        DriftMode::Deterministic => GenerativeModel { a: model.a + 1.0, b: model.b + 1.0 },
        DriftMode::Gaussian => {
            let n = Normal::new(1.0, 1.0).expect("valid normal");
            GenerativeModel { a: model.a + n.sample(rng), b: model.b + n.sample(rng) }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// Retrain after every `interval` examples.
    Nonadaptive { interval: usize },
    /// Retrain when the RMSE over the last 100 examples exceeds `threshold`.
    Adaptive { threshold: f64 },
}

impl Policy {
    pub fn technique(&self) -> Technique {
        match self {
            Policy::Nonadaptive { .. } => Technique::Nonadaptive,
            Policy::Adaptive { .. } => Technique::Adaptive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::Nonadaptive { interval: 0 } => {
                Err(MonitorError::Config("retraining interval must be >= 1".into()))
            }
            Policy::Adaptive { threshold } if !(threshold > 0.0) => {
                Err(MonitorError::Config(format!("threshold must be > 0, got {threshold}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Adaptive,
    Nonadaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub technique: Technique,
    pub cost: u64,
    pub rmse: f64,
}

/// One stream of `horizon` examples. The generative model drifts before
/// every example index that is a positive multiple of 100; inputs and drift
/// come from separate seeded streams so the drift mode does not change `x`.
pub fn simulate(policy: Policy, horizon: usize, seed: u64, mode: DriftMode) -> Result<RoundResult> {
    policy.validate()?;
    if horizon == 0 {
        return Err(MonitorError::Config("horizon must be >= 1".into()));
    }
    let mut x_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0]));
    let mut drift_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[1]));
    let mut truth = GenerativeModel::default();
    let mut deployed = truth;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(WINDOW);
    let mut window_sum = 0.0;
    let mut sse = 0.0;
    let mut cost = 0u64;
    for t in 0..horizon {
        if t > 0 && t % DRIFT_EVERY == 0 {
            truth = drift_step(truth, mode, &mut drift_rng);
        }
        let x: f64 = StandardNormal.sample(&mut x_rng);
        let err = deployed.predict(x) - truth.predict(x);
        let sq = err * err;
        sse += sq;
        let retrain = match policy {
            Policy::Nonadaptive { interval } => (t + 1) % interval == 0,
            Policy::Adaptive { threshold } => {
                if window.len() == WINDOW {
                    window_sum -= window.pop_front().unwrap_or(0.0);
                }
                window.push_back(sq);
                window_sum += sq;
                // Recompute exactly now and then to shed rounding drift.
                if t % 1024 == 0 {
                    window_sum = window.iter().sum();
                }
                window.len() == WINDOW && (window_sum.max(0.0) / WINDOW as f64).sqrt() > threshold
            }
        };
        if retrain {
            deployed = truth;
            cost += 1;
            window.clear();
            window_sum = 0.0;
        }
    }
    Ok(RoundResult {
        technique: policy.technique(),
        cost,
        rmse: (sse / horizon as f64).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobRanges {
    pub intervals: Vec<usize>,
    pub threshold_low: f64,
    pub threshold_high: f64,
}

impl Default for KnobRanges {
    fn default() -> Self {
        Self {
            intervals: DEFAULT_INTERVALS.to_vec(),
            threshold_low: DEFAULT_THRESHOLD_RANGE.0,
            threshold_high: DEFAULT_THRESHOLD_RANGE.1,
        }
    }
}

impl KnobRanges {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() || self.intervals.contains(&0) {
            return Err(MonitorError::Config("intervals must be nonempty and positive".into()));
        }
        if !(self.threshold_low > 0.0 && self.threshold_low <= self.threshold_high && self.threshold_high.is_finite()) {
            return Err(MonitorError::Config("threshold range must satisfy 0 < low <= high < inf".into()));
        }
        Ok(())
    }

    /// Technique uniformly, then the interval uniformly from the list or the
    /// threshold log-uniformly from its range.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Policy {
        if rng.random_bool(0.5) {
            let (lo, hi) = (self.threshold_low.ln(), self.threshold_high.ln());
            Policy::Adaptive { threshold: (lo + (hi - lo) * rng.random::<f64>()).exp() }
        } else {
            Policy::Nonadaptive { interval: self.intervals[rng.random_range(0..self.intervals.len())] }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub horizon: usize,
    pub seed: u64,
    pub knobs: KnobRanges,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { rounds: 400, horizon: DEFAULT_HORIZON, seed: 0, knobs: KnobRanges::default() }
    }
}

/// Round `r` uses seeds derived from `(seed, r)` for both the policy draw
/// and its data stream.
pub fn experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundResult>> {
    if cfg.rounds == 0 {
        return Err(MonitorError::Config("experiment needs at least one round".into()));
    }
    cfg.knobs.validate()?;
    (0..cfg.rounds as u64)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[r, 0]));
            let policy = cfg.knobs.draw(&mut rng);
            simulate(policy, cfg.horizon, seed::derive(cfg.seed, &[r, 1]), DriftMode::Gaussian)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub technique: Technique,
    pub cost: u64,
    pub mean_rmse: f64,
    pub count: usize,
}

/// Mean RMSE per (technique, cost), ordered by technique then cost.
pub fn summarize(results: &[RoundResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Technique, u64), (f64, usize)> = BTreeMap::new();
    for r in results {
        let g = groups.entry((r.technique, r.cost)).or_default();
        g.0 += r.rmse;
        g.1 += 1;
    }
    groups
        .into_iter()
        .map(|((technique, cost), (sum, count))| SummaryRow { technique, cost, mean_rmse: sum / count as f64, count })
        .collect()
}

/// Cost levels where both techniques have at least `min_points` results,
/// with `(adaptive mean, nonadaptive mean)`.
pub fn shared_levels(summary: &[SummaryRow], min_points: usize) -> Vec<(u64, f64, f64)> {
    let pick = |t: Technique| -> BTreeMap<u64, f64> {
        summary
            .iter()
            .filter(|r| r.technique == t && r.count >= min_points)
            .map(|r| (r.cost, r.mean_rmse))
            .collect()
    };
    let (ad, na) = (pick(Technique::Adaptive), pick(Technique::Nonadaptive));
    ad.iter()
        .filter_map(|(c, a)| na.get(c).map(|n| (*c, *a, *n)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowComparison {
    pub cost: u64,
    pub adaptive_mean: f64,
    pub adaptive_count: usize,
    pub nonadaptive_mean: f64,
    pub nonadaptive_count: usize,
}

/// Compare each nonadaptive cost level `c` against the adaptive rounds whose
/// cost lies within `c ± max(1, rel_width·c)`. Levels without adaptive
/// rounds in the window are skipped.
pub fn cost_window_comparison(results: &[RoundResult], rel_width: f64) -> Vec<WindowComparison> {
    summarize(results)
        .iter()
        .filter(|r| r.technique == Technique::Nonadaptive)
        .filter_map(|na| {
            let half = (rel_width * na.cost as f64).max(1.0);
            let matched: Vec<f64> = results
                .iter()
                .filter(|r| r.technique == Technique::Adaptive && (r.cost as f64 - na.cost as f64).abs() <= half)
                .map(|r| r.rmse)
                .collect();
            (!matched.is_empty()).then(|| WindowComparison {
                cost: na.cost,
                adaptive_mean: matched.iter().sum::<f64>() / matched.len() as f64,
                adaptive_count: matched.len(),
                nonadaptive_mean: na.mean_rmse,
                nonadaptive_count: na.count,
            })
        })
        .collect()
}

pub fn write_results_csv<W: std::io::Write>(results: &[RoundResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_drift_adds_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = GenerativeModel { a: 2.0, b: -1.0 };
        for k in 1..=5 {
            m = drift_step(m, DriftMode::Deterministic, &mut rng);
            assert_eq!((m.a, m.b), (2.0 + k as f64, -1.0 + k as f64));
        }
    }

    #[test]
    fn gaussian_drift_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut m = GenerativeModel { a: 0.0, b: 0.0 };
        let mut inc = Vec::with_capacity(n);
        for _ in 0..n {
            let next = drift_step(m, DriftMode::Gaussian, &mut rng);
            inc.push(next.a - m.a);
            m = next;
        }
        let mean = inc.iter().sum::<f64>() / n as f64;
        let sd = (inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt(), "{mean}");
        assert!((sd - 1.0).abs() < 0.05, "{sd}");
        assert!((m.b - n as f64).abs() < 4.0 * (n as f64).sqrt());
    }

    #[test]
    fn aligned_interval_closed_form() {
        let horizon = 1000;
        let seed = 5;
        let r = simulate(Policy::Nonadaptive { interval: 100 }, horizon, seed, DriftMode::Deterministic).unwrap();
        assert_eq!(r.cost, 10);
        // The deployed model always lags one drift behind after t = 100, so
        // every later error is x + 1.
        let mut x_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0]));
        let xs: Vec<f64> = (0..horizon).map(|_| StandardNormal.sample(&mut x_rng)).collect();
        let sse: f64 = xs[100..].iter().map(|x| (x + 1.0).powi(2)).sum();
        assert!((r.rmse - (sse / horizon as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn limits() {
        let never = simulate(Policy::Adaptive { threshold: f64::INFINITY }, 2000, 1, DriftMode::Gaussian).unwrap();
        let longer = simulate(Policy::Adaptive { threshold: f64::INFINITY }, 8000, 1, DriftMode::Gaussian).unwrap();
        assert_eq!(never.cost, 0);
        assert!(longer.rmse > never.rmse);

        let every = simulate(Policy::Nonadaptive { interval: 1 }, 1000, 2, DriftMode::Deterministic).unwrap();
        assert_eq!(every.cost, 1000);
        let mut x_rng = ChaCha8Rng::seed_from_u64(seed::derive(2, &[0]));
        let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut x_rng)).collect();
        let sse: f64 = (1..10).map(|k| (xs[k * 100] + 1.0).powi(2)).sum();
        assert!((every.rmse - (sse / 1000.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nonadaptive_cost_formula() {
        for (h, i) in [(10_000, 50), (10_000, 3200), (999, 100), (1, 1), (7, 3)] {
            let r = simulate(Policy::Nonadaptive { interval: i }, h, 0, DriftMode::Gaussian).unwrap();
            assert_eq!(r.cost, (h / i) as u64, "h={h} i={i}");
        }
    }

    #[test]
    fn adaptive_needs_full_window() {
        // With a tiny threshold the first retrain fires on the drifted
        // example t = 100. The window then restarts empty and only refills
        // at t = 200, so a horizon of 200 allows one retrain and 201 two.
        let run = |h| simulate(Policy::Adaptive { threshold: 1e-9 }, h, 3, DriftMode::Deterministic).unwrap().cost;
        assert_eq!(run(100), 0);
        assert_eq!(run(101), 1);
        assert_eq!(run(200), 1);
        assert_eq!(run(201), 2);
    }

    #[test]
    fn validation_and_determinism() {
        assert!(simulate(Policy::Nonadaptive { interval: 0 }, 10, 0, DriftMode::Gaussian).is_err());
        assert!(simulate(Policy::Adaptive { threshold: 0.0 }, 10, 0, DriftMode::Gaussian).is_err());
        assert!(simulate(Policy::Adaptive { threshold: 1.0 }, 0, 0, DriftMode::Gaussian).is_err());
        let cfg = ExperimentConfig { rounds: 1, horizon: 500, ..Default::default() };
        assert_eq!(experiment(&cfg).unwrap().len(), 1);
        assert!(experiment(&ExperimentConfig { rounds: 0, ..cfg.clone() }).is_err());
        let cfg = ExperimentConfig { rounds: 20, horizon: 1000, seed: 9, ..Default::default() };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_results_csv(&experiment(&cfg).unwrap(), &mut a).unwrap();
        write_results_csv(&experiment(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with("technique,cost,rmse\n"));
    }

    #[test]
    fn summary_groups() {
        let r = |t, cost, rmse| RoundResult { technique: t, cost, rmse };
        let s = summarize(&[r(Technique::Adaptive, 3, 1.0)]);
        assert_eq!(s, [SummaryRow { technique: Technique::Adaptive, cost: 3, mean_rmse: 1.0, count: 1 }]);
        let s = summarize(&[r(Technique::Nonadaptive, 3, 1.0), r(Technique::Nonadaptive, 3, 2.0), r(Technique::Adaptive, 3, 0.5)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].mean_rmse, 1.5);
        assert_eq!(shared_levels(&s, 1), [(3, 0.5, 1.5)]);
        assert!(shared_levels(&s, 2).is_empty());
        let w = cost_window_comparison(&[r(Technique::Nonadaptive, 10, 2.0), r(Technique::Adaptive, 11, 1.0), r(Technique::Adaptive, 12, 5.0)], 0.1);
        assert_eq!(w, [WindowComparison { cost: 10, adaptive_mean: 1.0, adaptive_count: 1, nonadaptive_mean: 2.0, nonadaptive_count: 1 }]);
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "technique,cost,mean_rmse,count\nadaptive,3,0.5,1\nnonadaptive,3,1.5,2\n");
    }

    #[test]
    fn more_retraining_lowers_error() {
        let mean_rmse = |i: usize| {
            (0..20).map(|s| simulate(Policy::Nonadaptive { interval: i }, 3000, s, DriftMode::Gaussian).unwrap().rmse).sum::<f64>() / 20.0
        };
        assert!(mean_rmse(50) < mean_rmse(200));
        assert!(mean_rmse(200) < mean_rmse(800));
    }
}
