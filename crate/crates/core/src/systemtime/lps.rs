//! System-time transform under limited processor sharing.
//!
//! Up to `M` jobs of a queue share its service rate evenly; the rest wait in
//! FIFO order. A job in service in a length-`j` queue leaves at rate
//! `mu_j / min(j, M)`, so all in-service positions share one transform
//! `X_j = H~_{1,j}`. The `X_j` couple neighbouring lengths in both directions
//! and form a tridiagonal system; waiting positions then follow by the same
//! forward recurrence as FIFO.

use num_complex::Complex64;

use super::{assemble, Arrival, SojournSystem, TypeSystem};
use crate::error::{Error, Result};
use crate::model::ClusterSpec;
use crate::stationary::{Regime, StationaryReport};

/// Transform of the system time under limited processor sharing.
#[derive(Debug, Clone)]
pub struct LpsLaplace {
    system: SojournSystem,
    mpl: Vec<usize>,
}

/// Builds the LPS transform. Only stationary points where dispatch is
/// continuous are supported.
pub fn mean_sojourn_lps(spec: &ClusterSpec, report: &StationaryReport) -> Result<LpsLaplace> {
    if report.regime != Regime::Continuous {
        return Err(Error::Unsupported(format!(
            "processor-sharing system time in the {:?} regime",
            report.regime
        )));
    }
    let mpl = spec.mpls().ok_or_else(|| {
        Error::InvalidArgument("processor sharing needs mpl for every type".into())
    })?;
    let system = assemble(spec, report)?;
    if system
        .types
        .iter()
        .any(|t| t.arrival.iter().any(|a| matches!(a, Arrival::Instant)))
    {
        return Err(Error::Unsupported(
            "processor-sharing system time with instantly refilled queues".into(),
        ));
    }
    Ok(LpsLaplace { system, mpl })
}

fn rate(a: Arrival) -> f64 {
    match a {
        Arrival::Finite(x) => x,
        Arrival::Instant => unreachable!("rejected at construction"),
    }
}

/// Solves `(s + a_j + mu_j) X_j - a_j X_{j+1} - mu_j c_j X_{j-1} = mu_j e_j`.
fn in_service(ts: &TypeSystem, m: usize, s: Complex64) -> Vec<Complex64> {
    let b = ts.buffer();
    let zero = Complex64::new(0.0, 0.0);
    // Rows 1..=b; sub/diag/sup/rhs indexed by j.
    let mut sub = vec![zero; b + 1];
    let mut diag = vec![zero; b + 1];
    let mut sup = vec![zero; b + 1];
    let mut rhs = vec![zero; b + 1];
    for j in 1..=b {
        let a = if j < b { rate(ts.arrival[j]) } else { 0.0 };
        let mu = ts.mu[j];
        let share = j.min(m) as f64;
        diag[j] = s + a + mu;
        sup[j] = Complex64::new(-a, 0.0);
        sub[j] = Complex64::new(-mu * (share - 1.0) / share, 0.0);
        rhs[j] = Complex64::new(mu / share, 0.0);
    }
    // Thomas algorithm.
    let mut cp = vec![zero; b + 1];
    let mut dp = vec![zero; b + 1];
    for j in 1..=b {
        let denom = if j == 1 {
            diag[j]
        } else {
            diag[j] - sub[j] * cp[j - 1]
        };
        cp[j] = sup[j] / denom;
        dp[j] = if j == 1 {
            rhs[j] / denom
        } else {
            (rhs[j] - sub[j] * dp[j - 1]) / denom
        };
    }
    let mut x = vec![zero; b + 2];
    for j in (1..=b).rev() {
        x[j] = dp[j] - cp[j] * x[j + 1];
    }
    x.truncate(b + 1);
    x
}

/// `H~_{j,j}(s)` for `j = 1..=B`, indexed by `j`.
fn diagonal(ts: &TypeSystem, m: usize, s: Complex64) -> Vec<Complex64> {
    let b = ts.buffer();
    let zero = Complex64::new(0.0, 0.0);
    let x = in_service(ts, m, s);
    let mut out = vec![zero; b + 1];
    for j in 1..=b.min(m) {
        out[j] = x[j];
    }
    if m >= b {
        return out;
    }
    // prev[j] holds H~_{i-1,j}; for i = M+1 that is the in-service value.
    let mut prev = x;
    prev.push(zero);
    for i in m + 1..=b {
        let mut row = vec![zero; b + 2];
        for j in (i..=b).rev() {
            let a = if j < b { rate(ts.arrival[j]) } else { 0.0 };
            let mu = ts.mu[j];
            let up = if j < b { row[j + 1] * a } else { zero };
            row[j] = (up + prev[j - 1] * mu) / (s + a + mu);
        }
        out[i] = row[i];
        prev = row;
    }
    out
}

impl LpsLaplace {
    /// Transform including lost jobs as missing mass.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.system
            .types
            .iter()
            .zip(&self.mpl)
            .map(|(ts, &m)| {
                let d = diagonal(ts, m, s);
                (1..=ts.buffer())
                    .map(|j| d[j] * ts.weight[j])
                    .sum::<Complex64>()
            })
            .sum()
    }

    pub fn eval_normalized(&self, s: Complex64) -> Complex64 {
        self.eval(s) / self.system.mass()
    }

    pub fn system(&self) -> &SojournSystem {
        &self.system
    }
}
