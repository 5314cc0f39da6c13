#![allow(dead_code)]

pub mod ctmc;

use lbmf_core::{ClusterSpec, ServerType, ServiceRateCurve};

pub const RAMP_RATES: [f64; 10] = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.5, 1.5, 1.5, 1.5];
pub const FAST_RATES: [f64; 10] = [0.8, 1.6, 2.4, 3.2, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];

/// Homogeneous cluster with the first `b` ramp rates and threshold 5.
pub fn ramp_with(lambda: f64, b: usize) -> ClusterSpec {
    ClusterSpec::new(
        lambda,
        vec![
            ServerType::new(1.0, ServiceRateCurve::from_busy_rates(&RAMP_RATES[..b]))
                .with_mpl(5.min(b)),
        ],
    )
}

pub fn ramp() -> ClusterSpec {
    ramp_with(1.25, 10)
}

pub fn ramp_b5() -> ClusterSpec {
    ramp_with(1.25, 5)
}

/// Two-type cluster: unit-rate servers and faster multi-core ones.
pub fn two_types_with(gamma_slow: f64) -> ClusterSpec {
    ClusterSpec::new(
        1.6,
        vec![
            ServerType::new(gamma_slow, ServiceRateCurve::constant(1.0, 10)).with_mpl(1),
            ServerType::new(
                1.0 - gamma_slow,
                ServiceRateCurve::from_busy_rates(&FAST_RATES),
            )
            .with_mpl(5),
        ],
    )
}

pub fn two_types() -> ClusterSpec {
    two_types_with(0.75)
}

/// Largest gap between the empirical CDF of `samples` and `cdf` evaluated at
/// `grid` (both one-sided limits are checked).
pub fn ks_on_grid(samples: &mut [f64], grid: &[f64], cdf: &[f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    grid.iter()
        .zip(cdf)
        .map(|(&t, &f)| {
            let below = samples.partition_point(|&x| x < t) as f64 / n;
            let upto = samples.partition_point(|&x| x <= t) as f64 / n;
            (below - f).abs().max((upto - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}
