//! Drift tests with an ε tolerance.
//!
//! Each test asks how likely the observed data is under the hypothesis that
//! the two distributions are within ε of each other, rather than equal:
//!
//! * means: Welch's t statistic shifted by ε, `(|Δ| − ε) / SE`, one-sided;
//! * numeric distributions: Kolmogorov–Smirnov on sketch ranks with the
//!   distance shifted by ε, `max(0, D − ε)·sqrt(n_eff)`;
//! * categorical distributions: L∞ distance against ε, threshold only.
//!
//! KS distances come from KLL ranks, so the effective tolerance is ε plus
//! the sketch rank error. Sketches still in their exact regime give exact
//! ranks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};
use crate::kll::KllState;
use crate::sketches::{CategoricalCountState, MomentsState};
use crate::stats;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_ANOMALY_K: f64 = 3.0;

/// Count, mean and population standard deviation of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: u64,
    pub mean: f64,
    pub std: f64,
}

impl SampleStats {
    pub fn new(n: u64, mean: f64, std: f64) -> Result<Self> {
        if n == 0 || !mean.is_finite() || !(std >= 0.0) || !std.is_finite() {
            return Err(MonitorError::InvalidValue(format!(
                "sample stats need n >= 1, finite mean and std >= 0 (n={n}, mean={mean}, std={std})"
            )));
        }
        Ok(Self { n, mean, std })
    }

    pub fn from_moments(m: &MomentsState) -> Result<Self> {
        let s = m.finalize();
        match (s.mean, s.std) {
            (Some(mean), Some(std)) => Self::new(s.count, mean, std),
            _ => Err(MonitorError::InsufficientData("empty moments sketch".into())),
        }
    }

    /// Unbiased (n − 1) variance; requires n ≥ 2.
    fn sample_variance(&self) -> f64 {
        let n = self.n as f64;
        self.std * self.std * n / (n - 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftTestConfig {
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for DriftTestConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl DriftTestConfig {
    pub fn new(epsilon: f64, alpha: f64) -> Result<Self> {
        let cfg = Self { epsilon, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(MonitorError::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MonitorError::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftResult {
    pub statistic: f64,
    /// `None` for threshold-only checks.
    pub p_value: Option<f64>,
    pub drift_detected: bool,
    pub distance: f64,
}

/// Welch two-sample test of `|mean_a − mean_b| > ε`.
pub fn t_test_eps(a: &SampleStats, b: &SampleStats, cfg: &DriftTestConfig) -> Result<DriftResult> {
    cfg.validate()?;
    if a.n < 2 || b.n < 2 {
        return Err(MonitorError::InsufficientData(format!(
            "t-test needs at least 2 observations per sample (got {} and {})",
            a.n, b.n
        )));
    }
    let distance = (a.mean - b.mean).abs();
    let (va, vb) = (a.sample_variance() / a.n as f64, b.sample_variance() / b.n as f64);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        let drift = distance > cfg.epsilon;
        return Ok(DriftResult {
            statistic: if drift { f64::INFINITY } else { f64::NEG_INFINITY },
            p_value: Some(if drift { 0.0 } else { 1.0 }),
            drift_detected: drift,
            distance,
        });
    }
    let statistic = (distance - cfg.epsilon) / se;
    let df = (va + vb).powi(2)
        / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
    let p_value = stats::student_t_sf(statistic, df);
    Ok(DriftResult {
        statistic,
        p_value: Some(p_value),
        drift_detected: p_value < cfg.alpha,
        distance,
    })
}

/// Largest absolute difference between the two sketches' CDFs, evaluated
/// at every value stored in either sketch.
pub fn ks_distance(a: &KllState, b: &KllState) -> Result<f64> {
    let (va, vb) = (a.sorted_view()?, b.sorted_view()?);
    let d = va
        .values()
        .iter()
        .chain(vb.values())
        .map(|&x| (va.rank(x) - vb.rank(x)).abs())
        .fold(0.0, f64::max);
    Ok(d)
}

/// Two-sample Kolmogorov–Smirnov test of `‖F_a − F_b‖∞ > ε`.
pub fn ks_test_eps(a: &KllState, b: &KllState, cfg: &DriftTestConfig) -> Result<DriftResult> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(MonitorError::InsufficientData("KS test on an empty sketch".into()));
    }
    let distance = ks_distance(a, b)?;
    let (na, nb) = (a.n as f64, b.n as f64);
    let n_eff = na * nb / (na + nb);
    let statistic = (distance - cfg.epsilon).max(0.0) * n_eff.sqrt();
    let p_value = stats::kolmogorov_sf(statistic);
    Ok(DriftResult {
        statistic,
        p_value: Some(p_value),
        drift_detected: p_value < cfg.alpha,
        distance,
    })
}

/// L∞ distance between two categorical distributions; labels missing on one
/// side count as probability zero there.
pub fn linf_categorical(
    p: &CategoricalCountState,
    q: &CategoricalCountState,
    cfg: &DriftTestConfig,
) -> Result<DriftResult> {
    cfg.validate()?;
    if p.total == 0 || q.total == 0 {
        return Err(MonitorError::InsufficientData("L-infinity check on an empty distribution".into()));
    }
    let labels: BTreeSet<&String> = p.counts.keys().chain(q.counts.keys()).collect();
    let distance = labels
        .into_iter()
        .map(|l| (p.frequency(l) - q.frequency(l)).abs())
        .fold(0.0, f64::max);
    Ok(DriftResult {
        statistic: distance,
        p_value: None,
        drift_detected: distance > cfg.epsilon,
        distance,
    })
}

/// Flags values more than `k` standard deviations from the baseline mean.
/// With a zero standard deviation every value different from the mean is
/// flagged.
pub fn anomaly_flags(xs: &[f64], baseline: &SampleStats, k: f64) -> Vec<bool> {
    xs.iter()
        .map(|&x| {
            let dev = (x - baseline.mean).abs();
            if baseline.std == 0.0 {
                dev != 0.0
            } else {
                dev > k * baseline.std
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean pairwise cosine similarity of a window of embeddings against a
/// baseline set; drift when the window average falls below `threshold`.
pub fn embedding_drift(window: &[Vec<f64>], baseline: &[Vec<f64>], threshold: f64) -> Result<DriftResult> {
    if baseline.is_empty() || window.is_empty() {
        return Err(MonitorError::InsufficientData("embedding drift needs non-empty window and baseline".into()));
    }
    let dim = baseline[0].len();
    let check = |v: &Vec<f64>| -> Result<f64> {
        if v.len() != dim {
            return Err(MonitorError::InvalidValue(format!(
                "embedding dimension {} does not match {dim}",
                v.len()
            )));
        }
        let n = norm(v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(MonitorError::InvalidValue("zero-norm or non-finite embedding".into()));
        }
        Ok(n)
    };
    let base_norms = baseline.iter().map(check).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for e in window {
        let en = check(e)?;
        let score: f64 = baseline
            .iter()
            .zip(&base_norms)
            .map(|(b, bn)| e.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (en * bn))
            .sum::<f64>()
            / baseline.len() as f64;
        total += score;
    }
    let aggregate = total / window.len() as f64;
    Ok(DriftResult {
        statistic: aggregate,
        p_value: None,
        drift_detected: aggregate < threshold,
        distance: aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(n: u64, mean: f64, std: f64) -> SampleStats {
        SampleStats::new(n, mean, std).unwrap()
    }

    /// Upper tail of Student's t by Simpson integration of the density,
    /// independent of the library CDF.
    fn t_sf_quadrature(t: f64, df: f64) -> f64 {
        let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let (lo, hi, steps) = (t, t + 200.0, 400_000);
        let h = (hi - lo) / steps as f64;
        let mut s = pdf(lo) + pdf(hi);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    // Lanczos approximation, test-only.
    fn ln_gamma(x: f64) -> f64 {
        const G: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    #[test]
    fn identical_stats_never_drift() {
        let a = stats(50, 1.0, 2.0);
        for eps in [0.0, 0.1, 5.0] {
            let r = t_test_eps(&a, &a, &DriftTestConfig::new(eps, 0.05).unwrap()).unwrap();
            assert_eq!(r.distance, 0.0);
            assert!(r.statistic <= 0.0);
            assert!(r.p_value.unwrap() >= 0.5);
            assert!(!r.drift_detected);
        }
    }

    #[test]
    fn zero_epsilon_is_the_classic_welch_test() {
        // Equal sizes and variances: SE = sqrt(2 s^2 / n), mean gap 3 SE.
        let (n, pop_std) = (30u64, 1.5f64);
        let s2 = pop_std * pop_std * n as f64 / (n as f64 - 1.0);
        let se = (2.0 * s2 / n as f64).sqrt();
        let a = stats(n, 0.0, pop_std);
        let b = stats(n, 3.0 * se, pop_std);
        let r = t_test_eps(&a, &b, &DriftTestConfig::new(0.0, 0.05).unwrap()).unwrap();
        assert!((r.statistic - 3.0).abs() < 1e-12);
        let df = 2.0 * (n as f64 - 1.0);
        let oracle = t_sf_quadrature(3.0, df);
        assert!((r.p_value.unwrap() - oracle).abs() < 1e-7, "{} vs {oracle}", r.p_value.unwrap());
        assert!(r.drift_detected);
    }

    #[test]
    fn t_test_requires_two_observations() {
        let a = stats(1, 0.0, 0.0);
        let b = stats(10, 0.0, 1.0);
        assert!(matches!(
            t_test_eps(&a, &b, &DriftTestConfig::default()),
            Err(MonitorError::InsufficientData(_))
        ));
    }

    #[test]
    fn t_test_zero_standard_error() {
        let cfg = DriftTestConfig::new(0.5, 0.05).unwrap();
        let r = t_test_eps(&stats(5, 0.0, 0.0), &stats(5, 1.0, 0.0), &cfg).unwrap();
        assert!(r.drift_detected);
        assert_eq!(r.p_value, Some(0.0));
        let r = t_test_eps(&stats(5, 0.0, 0.0), &stats(5, 0.4, 0.0), &cfg).unwrap();
        assert!(!r.drift_detected);
        assert_eq!(r.p_value, Some(1.0));
    }

    fn exact_sketch(range: std::ops::RangeInclusive<i32>) -> KllState {
        let mut s = KllState::with_default_k(0);
        for i in range {
            s.update(f64::from(i)).unwrap();
        }
        s
    }

    #[test]
    fn ks_half_overlap_brute_force() {
        let (a, b) = (exact_sketch(1..=100), exact_sketch(51..=150));
        // brute-force empirical CDFs over all integer cut points
        let oracle = (0..=151)
            .map(|x| {
                let fa = (1..=100).filter(|&v| v <= x).count() as f64 / 100.0;
                let fb = (51..=150).filter(|&v| v <= x).count() as f64 / 100.0;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max);
        assert_eq!(oracle, 0.5);
        let r = ks_test_eps(&a, &b, &DriftTestConfig::new(0.1, 0.05).unwrap()).unwrap();
        assert_eq!(r.distance, oracle);
        assert!((r.statistic - 0.4 * 50f64.sqrt()).abs() < 1e-12);
        assert!(r.p_value.unwrap() < 1e-6);
        assert!(r.drift_detected);
    }

    #[test]
    fn ks_unreachable_epsilon() {
        let (a, b) = (exact_sketch(1..=100), exact_sketch(500..=600));
        let r = ks_test_eps(&a, &b, &DriftTestConfig::new(1.0, 0.05).unwrap()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(1.0));
        assert!(!r.drift_detected);
    }

    #[test]
    fn ks_self_comparison() {
        let mut s = KllState::with_default_k(5);
        for i in 0..50_000u64 {
            s.update(crate::seed::unit(crate::seed::mix64(i))).unwrap();
        }
        let r = ks_test_eps(&s, &s.clone(), &DriftTestConfig::new(0.05, 0.05).unwrap()).unwrap();
        assert!(r.distance <= 2.0 * crate::kll::rank_error_bound(200));
        assert!(!r.drift_detected);
    }

    #[test]
    fn ks_rejects_empty() {
        let a = exact_sketch(1..=3);
        let e = KllState::with_default_k(0);
        assert!(matches!(
            ks_test_eps(&a, &e, &DriftTestConfig::default()),
            Err(MonitorError::InsufficientData(_))
        ));
    }

    fn cats(items: &[(&str, u64)]) -> CategoricalCountState {
        let mut c = CategoricalCountState::new();
        for (l, n) in items {
            for _ in 0..*n {
                c.update(l);
            }
        }
        c
    }

    #[test]
    fn linf_examples() {
        let cfg = |e| DriftTestConfig::new(e, 0.05).unwrap();
        let p = cats(&[("a", 1), ("b", 1)]);
        let r = linf_categorical(&p, &p, &cfg(0.0)).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(!r.drift_detected);
        assert!(r.p_value.is_none());

        let q = cats(&[("a", 4), ("b", 1)]);
        let r = linf_categorical(&p, &q, &cfg(0.29)).unwrap();
        assert!((r.distance - 0.3).abs() < 1e-12);
        assert!(r.drift_detected);
        assert!(!linf_categorical(&p, &q, &cfg(0.31)).unwrap().drift_detected);

        let q = cats(&[("a", 2), ("b", 2), ("c", 1)]);
        let r = linf_categorical(&p, &q, &cfg(0.1)).unwrap();
        assert!(r.distance >= 0.2 - 1e-12);

        assert!(linf_categorical(&p, &CategoricalCountState::new(), &cfg(0.1)).is_err());
    }

    #[test]
    fn anomaly_examples() {
        let base = stats(100, 0.0, 1.0);
        assert_eq!(anomaly_flags(&[0.0, 2.9, 3.1], &base, 3.0), vec![false, false, true]);
        let flat = stats(10, 5.0, 0.0);
        assert_eq!(anomaly_flags(&[5.0, 5.0 + 1e-12], &flat, 3.0), vec![false, true]);
    }

    #[test]
    fn embedding_examples() {
        let r = embedding_drift(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]], 1.0).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-15);
        assert!(!r.drift_detected);

        let r = embedding_drift(&[vec![0.0, 1.0]], &[vec![1.0, 0.0]], 1e-9).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(r.drift_detected);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = embedding_drift(&[vec![s, s]], &[vec![1.0, 0.0], vec![0.0, 1.0]], 0.5).unwrap();
        let oracle = (s * 1.0 + s * 0.0 + s * 0.0 + s * 1.0) / 2.0;
        assert!((r.distance - oracle).abs() < 1e-12);

        assert!(embedding_drift(&[vec![1.0]], &[vec![1.0, 0.0]], 0.5).is_err());
        assert!(embedding_drift(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DriftTestConfig::new(-0.1, 0.05).is_err());
        assert!(DriftTestConfig::new(0.1, 0.0).is_err());
        assert!(DriftTestConfig::new(0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn t_test_symmetric_and_monotone_in_eps(
            na in 2u64..500, nb in 2u64..500,
            ma in -10f64..10.0, mb in -10f64..10.0,
            sa in 0.01f64..5.0, sb in 0.01f64..5.0,
            e1 in 0f64..2.0, de in 0f64..2.0,
        ) {
            let (a, b) = (stats(na, ma, sa), stats(nb, mb, sb));
            let c1 = DriftTestConfig::new(e1, 0.05).unwrap();
            let ab = t_test_eps(&a, &b, &c1).unwrap();
            let ba = t_test_eps(&b, &a, &c1).unwrap();
            prop_assert_eq!(ab, ba);
            let c2 = DriftTestConfig::new(e1 + de, 0.05).unwrap();
            let wider = t_test_eps(&a, &b, &c2).unwrap();
            prop_assert!(!wider.drift_detected || ab.drift_detected);
        }

        #[test]
        fn ks_symmetric_and_monotone(
            xs in prop::collection::vec(-5f64..5.0, 1..400),
            ys in prop::collection::vec(-5f64..5.0, 1..400),
            e1 in 0f64..0.5, de in 0f64..0.5,
        ) {
            let mk = |v: &[f64]| { let mut s = KllState::with_default_k(1); v.iter().for_each(|&x| s.update(x).unwrap()); s };
            let (a, b) = (mk(&xs), mk(&ys));
            let c1 = DriftTestConfig::new(e1, 0.05).unwrap();
            let ab = ks_test_eps(&a, &b, &c1).unwrap();
            let ba = ks_test_eps(&b, &a, &c1).unwrap();
            prop_assert!((ab.distance - ba.distance).abs() < 1e-15);
            let c2 = DriftTestConfig::new(e1 + de, 0.05).unwrap();
            prop_assert!(!ks_test_eps(&a, &b, &c2).unwrap().drift_detected || ab.drift_detected);
        }

        #[test]
        fn linf_bounds(
            xs in prop::collection::vec(0u8..5, 1..100),
            ys in prop::collection::vec(0u8..5, 1..100),
        ) {
            let mk = |v: &[u8]| { let mut c = CategoricalCountState::new(); v.iter().for_each(|x| c.update(&x.to_string())); c };
            let (p, q) = (mk(&xs), mk(&ys));
            let cfg = DriftTestConfig::default();
            let r = linf_categorical(&p, &q, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.distance));
            prop_assert!((r.distance - linf_categorical(&q, &p, &cfg).unwrap().distance).abs() < 1e-15);
            let same = p.normalized() == q.normalized();
            prop_assert_eq!(r.distance == 0.0, same);
        }
    }
}
