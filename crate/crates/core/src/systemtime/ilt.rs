//! Numerical inversion of Laplace transforms.
//!
//! The primary method is a fixed Talbot contour (Weideman and Trefethen's
//! optimized parameters) with midpoint nodes. The Euler method of Abate and
//! Whitt serves as an independent cross-check. Both assume the singularities
//! lie on or left of the imaginary axis, which holds for the system-time
//! transforms: their poles are real and negative.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TALBOT_NODES: usize = 64;
pub const EULER_TERMS: usize = 16;

/// Samples whose estimated roundoff exceeds this are flagged.
pub const FLAG_TOL: f64 = 1e-6;

const TALBOT_SIGMA: f64 = -0.6122;
const TALBOT_MU: f64 = 0.5017;
const TALBOT_ALPHA: f64 = 0.6407;
const TALBOT_NU: f64 = 0.2645;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IltSample {
    pub t: f64,
    pub value: f64,
    /// Cancellation estimate: machine epsilon times the sum of term sizes.
    pub roundoff: f64,
    pub flagged: bool,
}

/// Inverts `f` at a single `t > 0` on a Talbot contour with `n` nodes.
pub fn talbot(f: impl Fn(Complex64) -> Complex64, t: f64, n: usize) -> IltSample {
    let scale = n as f64 / t;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    let mut mag = 0.0;
    // Nodes are symmetric about the real axis; the conjugate half adds the
    // same imaginary part, so only theta > 0 is evaluated.
    for k in 0..n / 2 {
        let theta = (k as f64 + 0.5) * h;
        let at = TALBOT_ALPHA * theta;
        let cot = at.cos() / at.sin();
        let csc2 = 1.0 / (at.sin() * at.sin());
        let z = scale * Complex64::new(TALBOT_SIGMA + TALBOT_MU * theta * cot, TALBOT_NU * theta);
        let dz = scale * Complex64::new(TALBOT_MU * (cot - at * csc2), TALBOT_NU);
        let term = (z * t).exp() * f(z) * dz;
        acc += term.im;
        mag += term.norm();
    }
    let value = 2.0 / n as f64 * acc;
    let roundoff = f64::EPSILON * 2.0 / n as f64 * mag;
    IltSample {
        t,
        value,
        roundoff,
        flagged: !value.is_finite() || roundoff > FLAG_TOL,
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Euler inversion with `m` terms plus `m` Euler-summation terms.
pub fn euler(f: impl Fn(Complex64) -> Complex64, t: f64, m: usize) -> IltSample {
    let mf = m as f64;
    let beta0 = mf * std::f64::consts::LN_10 / 3.0;
    let mut xi = vec![1.0; 2 * m + 1];
    xi[0] = 0.5;
    let tail = 2f64.powi(-(m as i32));
    xi[2 * m] = tail;
    for j in 1..m {
        xi[2 * m - j] = xi[2 * m - j + 1] + tail * binomial(m, j);
    }
    let mut acc = 0.0;
    let mut mag = 0.0;
    for (k, &x) in xi.iter().enumerate() {
        let beta = Complex64::new(beta0, std::f64::consts::PI * k as f64);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * x * f(beta / t).re;
        acc += term;
        mag += term.abs();
    }
    let factor = 10f64.powf(mf / 3.0) / t;
    let value = factor * acc;
    let roundoff = f64::EPSILON * factor * mag;
    IltSample {
        t,
        value,
        roundoff,
        flagged: !value.is_finite() || roundoff > FLAG_TOL,
    }
}

/// Inverts `f` on a grid of strictly positive, increasing times.
pub fn invert<F>(f: F, t_grid: &[f64]) -> Result<Vec<IltSample>>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    check_grid(t_grid)?;
    Ok(t_grid
        .par_iter()
        .map(|&t| talbot(&f, t, TALBOT_NODES))
        .collect())
}

/// Inverts `f(s) / s`, the transform of the distribution function.
pub fn invert_cdf<F>(f: F, t_grid: &[f64]) -> Result<Vec<IltSample>>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    invert(|s| f(s) / s, t_grid)
}

fn check_grid(t: &[f64]) -> Result<()> {
    if t.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(
            "times must be positive and finite".into(),
        ));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Trapezoid rule over samples.
pub fn trapezoid(samples: &[IltSample]) -> f64 {
    samples
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].value + w[1].value))
        .sum()
}
