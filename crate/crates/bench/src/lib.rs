//! Cluster fixtures shared by the benchmarks in `benches/`.

use lbmf_core::{ClusterSpec, ServerType, ServiceRateCurve};

const RATES: [f64; 10] = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.5, 1.5, 1.5, 1.5];

/// Homogeneous cluster at load 1.25 with buffer `b`.
pub fn homogeneous(b: usize) -> ClusterSpec {
    ClusterSpec::new(
        1.25,
        vec![
            ServerType::new(1.0, ServiceRateCurve::from_busy_rates(&RATES[..b])).with_mpl(5.min(b)),
        ],
    )
}

/// Slow single-core servers next to fast multi-core ones.
pub fn heterogeneous() -> ClusterSpec {
    ClusterSpec::new(
        1.6,
        vec![
            ServerType::new(0.75, ServiceRateCurve::constant(1.0, 10)).with_mpl(1),
            ServerType::new(
                0.25,
                ServiceRateCurve::from_busy_rates(&[
                    0.8, 1.6, 2.4, 3.2, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0,
                ]),
            )
            .with_mpl(5),
        ],
    )
}
