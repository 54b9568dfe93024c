//! Distribution tails used by the drift tests.

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`, with `Q(λ) = 1` for `λ ≤ 0`.
///
/// The alternating series converges slowly for small λ, so below 1.18 the
/// Jacobi theta form of the CDF is summed instead.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda.is_nan() {
        return f64::NAN;
    }
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let c = PI * PI / (8.0 * lambda * lambda);
        let series: f64 = (1..=20u32)
            .map(|k| {
                let m = f64::from(2 * k - 1);
                (-m * m * c).exp()
            })
            .sum();
        let cdf = (2.0 * PI).sqrt() / lambda * series;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut total = 0.0;
    for k in 1..=100u32 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => dist.sf(t),
        Err(_) => standard_normal_sf(t),
    }
}

pub fn standard_normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// One-sample Kolmogorov–Smirnov statistic of `xs` against the uniform
/// distribution on `[lo, hi)`, returned with its asymptotic p-value.
pub fn ks_uniform(xs: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut sorted: Vec<f64> = xs.iter().map(|&x| (x - lo) / (hi - lo)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let above = (i as f64 + 1.0) / n - u;
            let below = u - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    // Stephens' small-sample correction.
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_sf(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(lambda: f64) -> f64 {
        2.0 * (1..200)
            .map(|k| {
                let k = k as f64;
                let s = if k as u32 % 2 == 1 { 1.0 } else { -1.0 };
                s * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum::<f64>()
    }

    #[test]
    fn kolmogorov_branches_agree() {
        for lambda in [0.9, 1.0, 1.1, 1.17, 1.19, 1.3] {
            let theta_side = {
                let c = PI * PI / (8.0 * lambda * lambda);
                let s: f64 = (1..40).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum();
                1.0 - (2.0 * PI).sqrt() / lambda * s
            };
            assert!((theta_side - series(lambda)).abs() < 1e-12, "λ={lambda}");
            assert!((kolmogorov_sf(lambda) - series(lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn kolmogorov_known_points() {
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert_eq!(kolmogorov_sf(-1.0), 1.0);
        // 5% critical value of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.358_099) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.627_624) - 0.01).abs() < 1e-4);
        assert!(kolmogorov_sf(0.1) > 0.999_999);
        assert!(kolmogorov_sf(5.0) < 1e-20);
    }

    #[test]
    fn t_tail_matches_symmetry() {
        assert!((student_t_sf(0.0, 7.0) - 0.5).abs() < 1e-12);
        let up = student_t_sf(1.7, 12.0);
        let down = student_t_sf(-1.7, 12.0);
        assert!((up + down - 1.0).abs() < 1e-12);
        assert_eq!(student_t_sf(f64::INFINITY, 3.0), 0.0);
    }

    #[test]
    fn ks_uniform_on_grid() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0 * 20.0).collect();
        let (d, p) = ks_uniform(&xs, 0.0, 20.0);
        assert!(d <= 0.0005 + 1e-12);
        assert!(p > 0.99);
        let skewed: Vec<f64> = xs.iter().map(|x| x * x / 20.0).collect();
        let (_, p) = ks_uniform(&skewed, 0.0, 20.0);
        assert!(p < 1e-6);
    }
}
