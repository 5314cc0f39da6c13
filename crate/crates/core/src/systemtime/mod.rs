//! System time (sojourn) of admitted jobs in the stationary mean-field regime.
//!
//! A tagged job is followed through its own queue while every other queue
//! stays at the stationary distribution. `H_{i,j}` is the remaining time of a
//! job at position `i` in a queue of length `j`; its only transitions are an
//! arrival behind it `(i, j+1)` and a service completion `(i-1, j-1)`, so
//! every row is computed from already known rows with no linear solve.
//!
//! The per-length arrival rate and the entry weights depend on the regime.
//! Queues below a JSQ stationary level refill instantly; those rows are
//! marked [`Arrival::Instant`].

pub mod ilt;
pub mod lps;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClusterSpec;
use crate::stationary::{Regime, StationaryReport};

/// Below this both `lambda f_j` and `nu_j` count as zero in the ratio.
pub const RATE_ZERO_TOL: f64 = 1e-14;

/// Step for the central difference behind [`moment_mean`].
pub const MOMENT_STEP: f64 = 1e-6;

/// Arrival process seen by a queue of a given length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Arrival {
    Finite(f64),
    /// The queue is refilled the moment it reaches this length.
    Instant,
}

/// One server type's share of the tagged-job system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSystem {
    /// `mu[j]`, `j = 0..=B`.
    pub mu: Vec<f64>,
    /// Arrival process at each length `0..=B`; `arrival[B]` is always zero.
    pub arrival: Vec<Arrival>,
    /// Probability that an arrival enters at position `j` of a length-`j`
    /// queue of this type. `weight[0]` is unused and zero.
    pub weight: Vec<f64>,
}

impl TypeSystem {
    pub fn buffer(&self) -> usize {
        self.mu.len() - 1
    }

    pub fn mass(&self) -> f64 {
        self.weight.iter().sum()
    }
}

/// Tagged-job system for every server type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournSystem {
    pub regime: Regime,
    pub types: Vec<TypeSystem>,
}

impl SojournSystem {
    /// Admission probability, `1 - loss`.
    pub fn mass(&self) -> f64 {
        self.types.iter().map(TypeSystem::mass).sum()
    }

    pub fn loss_prob(&self) -> f64 {
        1.0 - self.mass()
    }
}

/// Builds the tagged-job system for a stationary point.
pub fn assemble(spec: &ClusterSpec, report: &StationaryReport) -> Result<SojournSystem> {
    if spec.types.len() != report.nu.num_types() {
        return Err(Error::InvalidArgument(
            "stationary report does not match the cluster".into(),
        ));
    }
    let lambda = spec.lambda;
    let f = report.effective_field(spec);
    let types = spec
        .types
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let b = t.buffer();
            let nu = &report.nu.per_type[k];
            let arrival = (0..=b)
                .map(|j| {
                    if j == b {
                        return Arrival::Finite(0.0);
                    }
                    match report.regime {
                        Regime::JiqCritical => Arrival::Finite(0.0),
                        Regime::JiqSupercritical => Arrival::Finite(lambda - report.z0),
                        Regime::JsqLevel { i0 } => {
                            if j + 1 < i0 {
                                Arrival::Instant
                            } else if j + 1 == i0 {
                                Arrival::Finite((lambda - report.z0) / report.y0)
                            } else {
                                Arrival::Finite(0.0)
                            }
                        }
                        Regime::JsqCritical { i0 } => {
                            if j < i0 {
                                Arrival::Instant
                            } else {
                                Arrival::Finite(0.0)
                            }
                        }
                        Regime::Continuous | Regime::JiqSubcritical => {
                            let num = lambda * f.per_type[k][j];
                            if num < RATE_ZERO_TOL && nu[j] < RATE_ZERO_TOL {
                                Arrival::Finite(0.0)
                            } else if nu[j] == 0.0 {
                                Arrival::Instant
                            } else {
                                Arrival::Finite(num / nu[j])
                            }
                        }
                    }
                })
                .collect();
            let mut weight = vec![0.0; b + 1];
            for j in 1..=b {
                weight[j] = f.per_type[k][j - 1];
            }
            TypeSystem {
                mu: t.curve.rates().to_vec(),
                arrival,
                weight,
            }
        })
        .collect();
    Ok(SojournSystem {
        regime: report.regime,
        types,
    })
}

/// Conditional expected remaining times `H_{i,j}`, indexed `[i][j]` for
/// `1 <= i <= j <= B` (other entries are zero).
pub fn expected_times(ts: &TypeSystem) -> Vec<Vec<f64>> {
    let b = ts.buffer();
    let mut h = vec![vec![0.0; b + 2]; b + 1];
    for i in 1..=b {
        for j in (i..=b).rev() {
            let below = h[i - 1][j - 1];
            h[i][j] = match ts.arrival[j] {
                Arrival::Instant => h[i][j + 1],
                Arrival::Finite(a) => {
                    let mu = ts.mu[j];
                    let up = if j < b { a * h[i][j + 1] } else { 0.0 };
                    (1.0 + up + mu * below) / (a + mu)
                }
            };
        }
    }
    h
}

/// Laplace transforms `H~_{i,j}(s)` of the remaining time, indexed `[i][j]`.
pub fn laplace_table(ts: &TypeSystem, s: Complex64) -> Vec<Vec<Complex64>> {
    let b = ts.buffer();
    let one = Complex64::new(1.0, 0.0);
    let mut h = vec![vec![Complex64::new(0.0, 0.0); b + 2]; b + 1];
    for j in 0..=b + 1 {
        h[0][j] = one;
    }
    for i in 1..=b {
        for j in (i..=b).rev() {
            let below = h[i - 1][j - 1];
            h[i][j] = match ts.arrival[j] {
                Arrival::Instant => h[i][j + 1],
                Arrival::Finite(a) => {
                    let mu = ts.mu[j];
                    let up = if j < b {
                        h[i][j + 1] * a
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    (up + below * mu) / (s + a + mu)
                }
            };
        }
    }
    h
}

/// Mean system times of admitted jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournMean {
    pub overall: f64,
    /// `None` for types that receive no jobs.
    pub per_type: Vec<Option<f64>>,
    /// `H_{i,j}` per type.
    pub table: Vec<Vec<Vec<f64>>>,
    pub loss_prob: f64,
}

/// Mean system time from the tagged-job recurrences.
pub fn mean_sojourn(spec: &ClusterSpec, report: &StationaryReport) -> Result<SojournMean> {
    let sys = assemble(spec, report)?;
    Ok(mean_of(&sys))
}

pub fn mean_of(sys: &SojournSystem) -> SojournMean {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per_type = Vec::new();
    let mut table = Vec::new();
    for ts in &sys.types {
        let h = expected_times(ts);
        let (mut n, mut d) = (0.0, 0.0);
        for j in 1..=ts.buffer() {
            n += ts.weight[j] * h[j][j];
            d += ts.weight[j];
        }
        num += n;
        den += d;
        per_type.push((d > 0.0).then(|| n / d));
        table.push(h);
    }
    SojournMean {
        overall: num / den,
        per_type,
        table,
        loss_prob: 1.0 - den,
    }
}

/// `H~(s) = sum_j w_j H~_{j,j}(s)`; at `s = 0` this is the admission
/// probability.
pub fn laplace_of(sys: &SojournSystem, s: Complex64) -> Complex64 {
    sys.types
        .iter()
        .map(|ts| {
            let h = laplace_table(ts, s);
            (1..=ts.buffer())
                .map(|j| h[j][j] * ts.weight[j])
                .sum::<Complex64>()
        })
        .sum()
}

/// Evaluates the system-time transform at `s`.
pub fn laplace_eval(
    spec: &ClusterSpec,
    report: &StationaryReport,
    s: Complex64,
) -> Result<Complex64> {
    Ok(laplace_of(&assemble(spec, report)?, s))
}

/// Reusable transform of the system time, for evaluation at many points.
#[derive(Debug, Clone)]
pub struct SojournLaplace {
    pub system: SojournSystem,
}

impl SojournLaplace {
    pub fn new(spec: &ClusterSpec, report: &StationaryReport) -> Result<Self> {
        Ok(Self {
            system: assemble(spec, report)?,
        })
    }

    /// Transform including lost jobs as missing mass.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        laplace_of(&self.system, s)
    }

    /// Transform of the system time conditioned on admission.
    pub fn eval_normalized(&self, s: Complex64) -> Complex64 {
        self.eval(s) / self.system.mass()
    }

    pub fn mean(&self) -> f64 {
        mean_of(&self.system).overall
    }
}

/// `-F'(0) / F(0)` by a central difference along the imaginary axis.
pub fn moment_mean(f: impl Fn(Complex64) -> Complex64) -> f64 {
    let h = MOMENT_STEP;
    let up = f(Complex64::new(0.0, h));
    let down = f(Complex64::new(0.0, -h));
    let deriv = (up - down) / Complex64::new(0.0, 2.0 * h);
    -deriv.re / f(Complex64::new(0.0, 0.0)).re
}
