//! Stationary points of the mean-field dynamics.
//!
//! Continuous policies (Random, JSQ(d), JBT) are solved as a birth-death
//! self-consistency problem: given per-queue arrival rates `a_i^(k)(nu)`, each
//! type's occupancy is a truncated birth-death distribution, and `nu` is
//! iterated to a fixed point. JIQ and JSQ have discontinuous dispatch at their
//! stationary points; for those the mass sits on one or two levels and the
//! remaining unknown is a single scalar, found by bisection.

use serde::{Deserialize, Serialize};

use crate::dispatch::{field, tail_masses, DispatchField, ZERO_TOL};
use crate::error::{Error, Result};
use crate::model::{validate, ClusterSpec, Occupancy, Policy, PolicyKind};
use crate::ode;

/// Band around `lambda == capacity` treated as an exact tie.
pub const CRITICAL_TOL: f64 = 1e-10;

/// Which family of balance equations the stationary point satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Dispatch is continuous at the stationary point.
    Continuous,
    JiqSubcritical,
    JiqCritical,
    /// No idle servers; idle ones are refilled at once (the upkeep).
    JiqSupercritical,
    /// JSQ with mass on `i0 - 1` and `i0`.
    JsqLevel {
        i0: usize,
    },
    /// JSQ with all mass on `i0`, capacity there exactly matching `lambda`.
    JsqCritical {
        i0: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub policy: Policy,
    pub regime: Regime,
    pub nu: Occupancy,
    /// Arrival rate absorbed by instantly refilling emptied queues.
    pub z0: f64,
    /// Mass at the lowest occupied level that receives arrivals: the idle
    /// mass for JIQ, the mass at `i0 - 1` for JSQ. Zero otherwise.
    pub y0: f64,
    pub i0: Option<usize>,
    pub loss_prob: f64,
    /// Job arrival rate per type-`k` server.
    pub lambda_eff: Vec<f64>,
}

impl StationaryReport {
    /// Dispatch probabilities that hold the stationary point in balance.
    ///
    /// For continuous regimes this is the policy's own field at `nu`. At a
    /// discontinuity it is the selection realized by the upkeep: jobs that
    /// refill emptied queues plus the remainder spread by the policy.
    pub fn effective_field(&self, spec: &ClusterSpec) -> DispatchField {
        let lambda = spec.lambda;
        let nu = &self.nu;
        let mut f: Vec<Vec<f64>> = nu.per_type.iter().map(|v| vec![0.0; v.len()]).collect();
        match self.regime {
            Regime::Continuous | Regime::JiqSubcritical => return field(spec, &self.policy, nu),
            Regime::JiqCritical => {
                for (k, t) in spec.types.iter().enumerate() {
                    f[k][0] = t.curve.rate(1) * nu.get(k, 1) / lambda;
                }
            }
            Regime::JiqSupercritical => {
                let r = (lambda - self.z0) / lambda;
                for (k, t) in spec.types.iter().enumerate() {
                    let b = t.buffer();
                    f[k][0] = t.curve.rate(1) * nu.get(k, 1) / lambda;
                    for i in 1..b {
                        f[k][i] = r * nu.get(k, i);
                    }
                }
            }
            Regime::JsqLevel { i0 } => {
                let r = (lambda - self.z0) / lambda;
                for (k, t) in spec.types.iter().enumerate() {
                    let low = nu.get(k, i0 - 1);
                    f[k][i0 - 2] = t.curve.rate(i0 - 1) * low / lambda;
                    f[k][i0 - 1] = r * low / self.y0;
                }
            }
            Regime::JsqCritical { i0 } => {
                for (k, t) in spec.types.iter().enumerate() {
                    f[k][i0 - 1] = t.curve.rate(i0) * nu.get(k, i0) / lambda;
                }
            }
        }
        DispatchField {
            per_type: f,
            loss: self.loss_prob,
        }
    }

    /// Sup norm of the balance equations under [`Self::effective_field`].
    pub fn balance_residual(&self, spec: &ClusterSpec) -> f64 {
        let f = self.effective_field(spec);
        ode::rhs_with_field(spec, &self.nu, &f)
            .per_type
            .iter()
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Tuning for the damped fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-13,
            max_iter: 1_000_000,
        }
    }
}

/// Truncated birth-death distribution with up-rates `a` and down-rates `mu`,
/// scaled to total `gamma`.
pub fn birth_death(a: &[f64], mu: &[f64], gamma: f64) -> Vec<f64> {
    let b = mu.len() - 1;
    let mut v = vec![1.0; b + 1];
    for i in 1..=b {
        v[i] = if mu[i] > 0.0 {
            v[i - 1] * a[i - 1] / mu[i]
        } else {
            0.0
        };
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| gamma * x / s).collect()
}

fn finish_continuous(spec: &ClusterSpec, policy: &Policy, nu: Occupancy) -> StationaryReport {
    let f = field(spec, policy, &nu);
    let lambda_eff = spec
        .types
        .iter()
        .enumerate()
        .map(|(k, t)| spec.lambda * f.type_admitted(k) / t.gamma)
        .collect();
    StationaryReport {
        policy: *policy,
        regime: Regime::Continuous,
        nu,
        z0: 0.0,
        y0: 0.0,
        i0: None,
        loss_prob: f.loss,
        lambda_eff,
    }
}

/// Closed form for random assignment.
pub fn solve_random(spec: &ClusterSpec) -> StationaryReport {
    let nu = Occupancy::new(
        spec.types
            .iter()
            .map(|t| birth_death(&vec![spec.lambda; t.buffer() + 1], t.curve.rates(), t.gamma))
            .collect(),
    );
    finish_continuous(spec, &Policy::random(), nu)
}

/// Increasing-function root by bisection on `[lo, hi]`, given `g(lo) < 0 < g(hi)`
/// up to orientation.
fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    let glo = g(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn jiq_subcritical(spec: &ClusterSpec, policy: &Policy) -> StationaryReport {
    let lambda = spec.lambda;
    let g = |y0: f64| -> f64 {
        spec.types
            .iter()
            .map(|t| t.gamma * t.curve.rate(1) / (y0 * t.curve.rate(1) + lambda))
            .sum::<f64>()
            - 1.0
    };
    let y0 = if lambda == 0.0 {
        1.0
    } else {
        bisect(0.0, 1.0, g)
    };
    let mut lambda_eff = Vec::new();
    let nu = Occupancy::new(
        spec.types
            .iter()
            .map(|t| {
                let mu1 = t.curve.rate(1);
                let busy = t.gamma * lambda / (y0 * mu1 + lambda);
                let mut v = vec![0.0; t.buffer() + 1];
                v[0] = t.gamma - busy;
                v[1] = busy;
                lambda_eff.push(mu1 * busy / t.gamma);
                v
            })
            .collect(),
    );
    StationaryReport {
        policy: *policy,
        regime: Regime::JiqSubcritical,
        nu,
        z0: 0.0,
        y0,
        i0: Some(1),
        loss_prob: 0.0,
        lambda_eff,
    }
}

/// All mass on level `i0`, service there exactly matching `lambda`.
fn single_level(spec: &ClusterSpec, policy: &Policy, i0: usize) -> StationaryReport {
    let nu = Occupancy::new(
        spec.types
            .iter()
            .map(|t| {
                let mut v = vec![0.0; t.buffer() + 1];
                v[i0] = t.gamma;
                v
            })
            .collect(),
    );
    let lambda_eff = spec.types.iter().map(|t| t.curve.rate(i0)).collect();
    StationaryReport {
        policy: *policy,
        regime: if i0 == 1 {
            Regime::JiqCritical
        } else {
            Regime::JsqCritical { i0 }
        },
        nu,
        z0: spec.capacity_at(i0),
        y0: 0.0,
        i0: Some(i0),
        loss_prob: 0.0,
        lambda_eff,
    }
}

fn jiq_supercritical(spec: &ClusterSpec, policy: &Policy) -> StationaryReport {
    let lambda = spec.lambda;
    let profile = |z0: f64| -> Vec<Vec<f64>> {
        let r = lambda - z0;
        spec.types
            .iter()
            .map(|t| {
                let mu = t.curve.rates();
                let b = t.buffer();
                let mut v = vec![0.0; b + 1];
                v[1] = 1.0;
                for i in 2..=b {
                    v[i] = v[i - 1] * r / mu[i];
                }
                let s: f64 = v.iter().sum();
                v.iter().map(|x| t.gamma * x / s).collect()
            })
            .collect()
    };
    let upkeep = |v: &[Vec<f64>]| -> f64 {
        spec.types
            .iter()
            .zip(v)
            .map(|(t, x)| t.curve.rate(1) * x[1])
            .sum()
    };
    let z0 = bisect(0.0, lambda, |z| upkeep(&profile(z)) - z);
    let per_type = profile(z0);
    let r = lambda - z0;
    let full: f64 = per_type.iter().map(|v| v[v.len() - 1]).sum();
    let lambda_eff = spec
        .types
        .iter()
        .zip(&per_type)
        .map(|(t, v)| {
            let b = t.buffer();
            (t.curve.rate(1) * v[1] + r * v[1..b].iter().sum::<f64>()) / t.gamma
        })
        .collect();
    StationaryReport {
        policy: *policy,
        regime: Regime::JiqSupercritical,
        nu: Occupancy::new(per_type),
        z0,
        y0: 0.0,
        i0: Some(1),
        loss_prob: if lambda > 0.0 { r * full / lambda } else { 0.0 },
        lambda_eff,
    }
}

/// Join the idle queue.
pub fn solve_jiq(spec: &ClusterSpec) -> Result<StationaryReport> {
    let policy = Policy::jiq();
    let cap1 = spec.capacity_at(1);
    Ok(if (spec.lambda - cap1).abs() < CRITICAL_TOL {
        single_level(spec, &policy, 1)
    } else if spec.lambda < cap1 {
        jiq_subcritical(spec, &policy)
    } else {
        jiq_supercritical(spec, &policy)
    })
}

/// Lowest level `i0` whose aggregate capacity reaches `lambda`, and whether
/// it is an exact tie.
pub fn jsq_level(spec: &ClusterSpec) -> Option<(usize, bool)> {
    let top = spec.max_buffer();
    (1..=top)
        .find(|&i| spec.capacity_at(i) >= spec.lambda - CRITICAL_TOL)
        .map(|i| (i, (spec.capacity_at(i) - spec.lambda).abs() < CRITICAL_TOL))
}

/// Join the shortest queue.
pub fn solve_jsq(spec: &ClusterSpec) -> Result<StationaryReport> {
    let policy = Policy::jsq();
    let (i0, tie) = jsq_level(spec)
        .ok_or_else(|| Error::Unsupported("arrival rate exceeds every level's capacity".into()))?;
    let min_b = spec.types.iter().map(|t| t.buffer()).min().unwrap_or(0);
    if i0 > min_b {
        return Err(Error::Unsupported(format!(
            "JSQ stationary level {i0} exceeds the smallest buffer {min_b}"
        )));
    }
    if tie {
        return Ok(single_level(spec, &policy, i0));
    }
    if i0 == 1 {
        return Ok(jiq_subcritical(spec, &policy));
    }

    // c = (lambda - z0) / y0 is the arrival rate seen by each queue at i0 - 1.
    let lambda = spec.lambda;
    let served = |c: f64| -> f64 {
        spec.types
            .iter()
            .map(|t| {
                let lo = t.curve.rate(i0 - 1);
                let hi = t.curve.rate(i0);
                t.gamma * hi * (c + lo) / (hi + c)
            })
            .sum::<f64>()
            - lambda
    };
    let mut hi = 1.0;
    while served(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NonConvergence {
                what: "JSQ level balance".into(),
                residual: served(hi).abs(),
                last: None,
            });
        }
    }
    let c = bisect(0.0, hi, served);

    let mut z0 = 0.0;
    let mut y0 = 0.0;
    let mut lambda_eff = Vec::new();
    let nu = Occupancy::new(
        spec.types
            .iter()
            .map(|t| {
                let lo = t.curve.rate(i0 - 1);
                let hi = t.curve.rate(i0);
                let mut v = vec![0.0; t.buffer() + 1];
                v[i0 - 1] = t.gamma * hi / (hi + c);
                v[i0] = t.gamma - v[i0 - 1];
                z0 += lo * v[i0 - 1];
                y0 += v[i0 - 1];
                lambda_eff.push((lo + c) * v[i0 - 1] / t.gamma);
                v
            })
            .collect(),
    );
    Ok(StationaryReport {
        policy,
        regime: Regime::JsqLevel { i0 },
        nu,
        z0,
        y0,
        i0: Some(i0),
        loss_prob: 0.0,
        lambda_eff,
    })
}

/// Per-queue arrival rates `a_i^(k)` implied by a continuous policy at `nu`.
fn arrival_rates(spec: &ClusterSpec, policy: &Policy, nu: &Occupancy) -> Vec<Vec<f64>> {
    let lambda = spec.lambda;
    let inner: Vec<Vec<f64>> = match policy.kind {
        PolicyKind::Random => spec
            .types
            .iter()
            .map(|t| vec![lambda; t.buffer() + 1])
            .collect(),
        PolicyKind::JsqD(d) => {
            let z = tail_masses(nu);
            let per_len: Vec<f64> = (0..z.len() - 1)
                .map(|i| {
                    lambda
                        * (0..d as i32)
                            .map(|m| z[i].powi(m) * z[i + 1].powi(d as i32 - 1 - m))
                            .sum::<f64>()
                })
                .collect();
            spec.types
                .iter()
                .map(|t| per_len[..=t.buffer()].to_vec())
                .collect()
        }
        PolicyKind::Jbt => {
            let y: f64 = spec
                .types
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    nu.per_type[k][..t.mpl.unwrap_or(t.buffer())]
                        .iter()
                        .sum::<f64>()
                })
                .sum();
            spec.types
                .iter()
                .map(|t| {
                    let m = t.mpl.unwrap_or(t.buffer());
                    (0..=t.buffer())
                        .map(|i| {
                            if y < ZERO_TOL {
                                lambda
                            } else if i < m {
                                lambda / y
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        }
        PolicyKind::Jiq | PolicyKind::Jsq => unreachable!("discontinuous policies"),
    };
    let p = policy.control;
    inner
        .into_iter()
        .map(|a| a.into_iter().map(|x| p * x + (1.0 - p) * lambda).collect())
        .collect()
}

fn self_consistent_map(spec: &ClusterSpec, policy: &Policy, nu: &Occupancy) -> Occupancy {
    let a = arrival_rates(spec, policy, nu);
    Occupancy::new(
        spec.types
            .iter()
            .zip(&a)
            .map(|(t, ak)| birth_death(ak, t.curve.rates(), t.gamma))
            .collect(),
    )
}

/// Damped fixed-point iteration of the birth-death self-consistency map.
pub fn fixed_point(
    spec: &ClusterSpec,
    policy: &Policy,
    start: Occupancy,
    opts: FixedPointOptions,
) -> Result<Occupancy> {
    let mut nu = start;
    let mut diff = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = self_consistent_map(spec, policy, &nu);
        diff = next.sup_distance(&nu);
        if diff < opts.tol {
            return Ok(next);
        }
        let w = opts.damping;
        for (a, b) in nu.per_type.iter_mut().zip(&next.per_type) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = w * *x + (1.0 - w) * y;
            }
        }
        if !nu.per_type.iter().flatten().all(|x| x.is_finite()) {
            break;
        }
    }
    Err(Error::NonConvergence {
        what: "stationary fixed point".into(),
        residual: diff,
        last: Some(Box::new(nu)),
    })
}

fn solve_continuous(spec: &ClusterSpec, policy: &Policy) -> Result<StationaryReport> {
    let start = solve_random(spec).nu;
    let nu = match fixed_point(spec, policy, start.clone(), FixedPointOptions::default()) {
        Ok(nu) => nu,
        Err(_) => {
            let rough = ode::solve_to_stationarity(
                spec,
                policy,
                &Occupancy::empty(spec),
                ode::DEFAULT_TOL,
                ode::DEFAULT_T_MAX,
                0.01,
            )?;
            let polish = FixedPointOptions {
                damping: 0.0,
                tol: 0.0,
                max_iter: 10,
            };
            match fixed_point(spec, policy, rough.clone(), polish) {
                Ok(nu) => nu,
                Err(Error::NonConvergence { last: Some(nu), .. }) => *nu,
                Err(e) => return Err(e),
            }
        }
    };
    Ok(finish_continuous(spec, policy, nu))
}

/// Power-of-`d` choices in the mean-field limit.
pub fn solve_jsqd(spec: &ClusterSpec, d: u32) -> Result<StationaryReport> {
    solve_continuous(spec, &Policy::jsqd(d))
}

/// Join below threshold. Requires `lambda < sum_k gamma_k mu_{M_k}`.
pub fn solve_jbt(spec: &ClusterSpec) -> Result<StationaryReport> {
    check_jbt(spec, 1.0)?;
    solve_continuous(spec, &Policy::jbt())
}

fn check_jbt(spec: &ClusterSpec, control: f64) -> Result<()> {
    let mpls = spec
        .mpls()
        .ok_or_else(|| Error::InvalidArgument("JBT needs a threshold for every type".into()))?;
    let cap: f64 = spec
        .types
        .iter()
        .zip(&mpls)
        .map(|(t, &m)| t.gamma * t.curve.rate(m))
        .sum();
    if control == 1.0 && spec.lambda >= cap {
        return Err(Error::Unsupported(format!(
            "JBT needs lambda < {cap} (capacity at the thresholds), got {}",
            spec.lambda
        )));
    }
    Ok(())
}

/// Stationary point for any supported policy.
pub fn solve(spec: &ClusterSpec, policy: &Policy) -> Result<StationaryReport> {
    let violations = validate(spec, policy);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut report = match (policy.kind, policy.is_partial()) {
        (PolicyKind::Random, _) => solve_random(spec),
        (PolicyKind::Jiq, false) => solve_jiq(spec)?,
        (PolicyKind::Jsq, false) => solve_jsq(spec)?,
        (PolicyKind::Jiq | PolicyKind::Jsq, true) => {
            return Err(Error::Unsupported(format!(
                "stationary solve for {} under partial control",
                policy.kind
            )))
        }
        (PolicyKind::Jbt, _) => {
            check_jbt(spec, policy.control)?;
            solve_continuous(spec, policy)?
        }
        (PolicyKind::JsqD(_), _) => solve_continuous(spec, policy)?,
    };
    report.policy = *policy;
    Ok(report)
}

/// Mean system times from Little's law applied per server type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LittleTimes {
    /// `None` when type `k` receives no jobs.
    pub per_type: Vec<Option<f64>>,
    pub overall: f64,
}

/// Mean system time per type as mean queue length over arrival rate.
pub fn little(spec: &ClusterSpec, report: &StationaryReport) -> LittleTimes {
    let mut num = 0.0;
    let mut den = 0.0;
    let per_type = spec
        .types
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let v = &report.nu.per_type[k];
            let mass: f64 = v.iter().sum();
            let l = v.iter().enumerate().map(|(i, x)| i as f64 * x).sum::<f64>() / mass;
            let a = report.lambda_eff[k];
            num += t.gamma * l;
            den += t.gamma * a;
            (a > 0.0).then(|| l / a)
        })
        .collect();
    LittleTimes {
        per_type,
        overall: num / den,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ServerType, ServiceRateCurve};
    use approx::assert_abs_diff_eq;

    fn ramp(lambda: f64) -> ClusterSpec {
        ClusterSpec::new(
            lambda,
            vec![ServerType::new(
                1.0,
                ServiceRateCurve::from_busy_rates(&[
                    1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.5, 1.5, 1.5, 1.5,
                ]),
            )
            .with_mpl(5)],
        )
    }

    #[test]
    fn random_is_geometric_for_constant_rates() {
        let spec = ClusterSpec::new(
            0.5,
            vec![ServerType::new(1.0, ServiceRateCurve::constant(1.0, 4))],
        );
        let r = solve_random(&spec);
        let norm: f64 = (0..=4).map(|i| 0.5f64.powi(i)).sum();
        for i in 0..=4 {
            assert_abs_diff_eq!(
                r.nu.get(0, i),
                0.5f64.powi(i as i32) / norm,
                epsilon = 1e-15
            );
        }
        assert_abs_diff_eq!(r.loss_prob, r.nu.get(0, 4), epsilon = 1e-15);
    }

    #[test]
    fn jiq_homogeneous_subcritical() {
        let spec = ClusterSpec::new(
            0.7,
            vec![ServerType::new(1.0, ServiceRateCurve::constant(1.0, 3))],
        );
        let r = solve_jiq(&spec).unwrap();
        assert_eq!(r.regime, Regime::JiqSubcritical);
        assert_abs_diff_eq!(r.nu.get(0, 1), 0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(r.nu.get(0, 0), 0.3, epsilon = 1e-14);
    }

    #[test]
    fn jiq_critical() {
        let r = solve_jiq(&ramp(1.0)).unwrap();
        assert_eq!(r.regime, Regime::JiqCritical);
        assert_eq!(r.nu.get(0, 1), 1.0);
    }

    #[test]
    fn jsq_ramp_levels() {
        let r = solve_jsq(&ramp(1.25)).unwrap();
        assert_eq!(r.regime, Regime::JsqLevel { i0: 4 });
        assert_abs_diff_eq!(r.nu.get(0, 3), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.nu.get(0, 4), 0.5, epsilon = 1e-12);
        assert!(r.balance_residual(&ramp(1.25)) < 1e-12);
    }

    #[test]
    fn jsq_tie_has_single_level() {
        let r = solve_jsq(&ramp(1.3)).unwrap();
        assert_eq!(r.regime, Regime::JsqCritical { i0: 4 });
        assert_eq!(r.nu.get(0, 4), 1.0);
    }

    #[test]
    fn partial_jsq_is_unsupported() {
        let e = solve(&ramp(1.25), &Policy::jsq().with_control(0.5)).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
    }

    #[test]
    fn jbt_outside_strong_stability_is_rejected() {
        let spec = ramp(1.45);
        assert!(matches!(solve_jbt(&spec), Err(Error::Unsupported(_))));
    }

    #[test]
    fn birth_death_respects_zero_rates() {
        let v = birth_death(&[1.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 1.0], 0.6);
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 0.6, epsilon = 1e-15);
        assert_eq!(v[3], 0.0);
    }
}
