//! Transient mean-field equations.
//!
//! `dv_i/dt = lambda f_{i-1} - lambda f_i + mu_{i+1} v_{i+1} - mu_i v_i` per
//! type, integrated with the explicit midpoint rule and projected back onto
//! `{v >= 0, sum v = gamma_k}` after every step.
//!
//! Dispatch fields are evaluated as they are, with one exception. When the
//! queues a policy prefers have all drained (no idle server for JIQ, an empty
//! level just below the shortest queues for JSQ, nothing below the threshold
//! for JBT), servers that complete service into that set are refilled at once.
//! That share of the arrival rate is routed to them and only the remainder
//! follows the fallback rule. Without this the midpoint stage keeps seeing a
//! sliver of preferred queues and the state freezes on the boundary.

use crate::dispatch::{f_random, field, DispatchField, ZERO_TOL};
use crate::error::{Error, Result};
use crate::model::{ClusterSpec, Occupancy, Policy, PolicyKind, Trajectory};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_T_MAX: f64 = 1e4;

/// Time derivative of `v` for a given dispatch field.
pub fn rhs_with_field(spec: &ClusterSpec, v: &Occupancy, f: &DispatchField) -> Occupancy {
    let lambda = spec.lambda;
    let per_type = spec
        .types
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let b = t.buffer();
            let mu = t.curve.rates();
            let x = &v.per_type[k];
            let fk = &f.per_type[k];
            (0..=b)
                .map(|i| {
                    let mut d = -mu[i] * x[i];
                    if i < b {
                        d += mu[i + 1] * x[i + 1] - lambda * fk[i];
                    }
                    if i > 0 {
                        d += lambda * fk[i - 1];
                    }
                    d
                })
                .collect()
        })
        .collect();
    Occupancy::new(per_type)
}

/// Arrival rates `(type, level, rate)` that keep the drained preferred set
/// empty, or `None` when it is not drained. A set counts as drained below
/// `thr`; with a step `h > 0`, what is left in it is also routed away at rate
/// `mass / h`, so slivers vanish within a few steps instead of lingering.
fn refill_rates(
    spec: &ClusterSpec,
    policy: &Policy,
    v: &Occupancy,
    h: f64,
) -> Option<Vec<(usize, usize, f64)>> {
    let thr = if h > 0.0 {
        ZERO_TOL.max(spec.lambda * h)
    } else {
        ZERO_TOL
    };
    let drain = |x: f64| if h > 0.0 { x.max(0.0) / h } else { 0.0 };
    let served = |k: usize, i: usize| spec.types[k].curve.rate(i) * v.per_type[k][i];
    // Levels `0..top` of type k are drained; completions at `top` refill `top - 1`.
    let mut out = Vec::new();
    let mut push = |k: usize, top: usize| {
        let b = spec.types[k].buffer();
        let top = top.min(b);
        for j in 0..top {
            let mut r = drain(v.per_type[k][j]);
            if j + 1 == top {
                r += served(k, top);
            }
            out.push((k, j, r));
        }
    };
    match policy.kind {
        PolicyKind::Jiq => {
            if v.level_mass(0) >= thr {
                return None;
            }
            for k in 0..spec.types.len() {
                push(k, 1);
            }
        }
        PolicyKind::Jsq => {
            let lvl = (0..=v.max_len()).find(|&i| v.level_mass(i) >= thr)?;
            if lvl == 0 {
                return None;
            }
            for k in 0..spec.types.len() {
                push(k, lvl);
            }
        }
        PolicyKind::Jbt => {
            let mpl = |k: usize| {
                let t = &spec.types[k];
                t.mpl.unwrap_or(t.buffer()).min(t.buffer())
            };
            let below: f64 = (0..spec.types.len())
                .map(|k| v.per_type[k][..mpl(k)].iter().sum::<f64>())
                .sum();
            if below >= thr {
                return None;
            }
            for k in 0..spec.types.len() {
                push(k, mpl(k));
            }
        }
        PolicyKind::Random | PolicyKind::JsqD(_) => return None,
    }
    Some(out)
}

fn field_for_step(spec: &ClusterSpec, policy: &Policy, v: &Occupancy, h: f64) -> DispatchField {
    let Some(refill) = refill_rates(spec, policy, v, h) else {
        return field(spec, policy, v);
    };
    let total: f64 = refill.iter().map(|r| r.2).sum();
    if total <= 0.0 || spec.lambda <= 0.0 {
        return field(spec, policy, v);
    }
    let p = policy.control;
    // Share of arrivals consumed by refills, taken from the controlled part.
    let q = (total / spec.lambda).min(p);
    // The rest of the controlled part acts as if the drained set were empty.
    let mut cleared = v.clone();
    for &(k, j, _) in &refill {
        cleared.per_type[k][j] = 0.0;
    }
    let inner = field(spec, &Policy::new(policy.kind), &cleared);
    let norm = inner.admitted() + inner.loss;
    let w = if norm > 0.0 { (p - q) / norm } else { 0.0 };
    let rnd = f_random(v);
    let mut f = DispatchField {
        per_type: inner
            .per_type
            .iter()
            .zip(&rnd.per_type)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| w * x + (1.0 - p) * y)
                    .collect()
            })
            .collect(),
        loss: w * inner.loss + (1.0 - p) * rnd.loss,
    };
    for (k, j, r) in refill {
        f.per_type[k][j] += q * r / total;
    }
    f
}

/// Dispatch field used by the dynamics: [`field`] plus instant refills of a
/// drained preferred set.
pub fn dynamic_field(spec: &ClusterSpec, policy: &Policy, v: &Occupancy) -> DispatchField {
    field_for_step(spec, policy, v, 0.0)
}

/// Time derivative of `v` under `policy`.
pub fn rhs(spec: &ClusterSpec, policy: &Policy, v: &Occupancy) -> Occupancy {
    rhs_with_field(spec, v, &dynamic_field(spec, policy, v))
}

/// Sup norm of the derivative.
pub fn residual(spec: &ClusterSpec, policy: &Policy, v: &Occupancy) -> f64 {
    rhs(spec, policy, v)
        .per_type
        .iter()
        .flatten()
        .fold(0.0, |m, x| m.max(x.abs()))
}

/// Euclidean projection of `w` onto `{u >= 0, sum u = mass}`.
pub fn project_simplex(w: &mut [f64], mass: f64) {
    let sum: f64 = w.iter().sum();
    if w.iter().all(|&x| x >= 0.0) && (sum - mass).abs() <= f64::EPSILON * mass.max(1.0) {
        return;
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        acc += u;
        let t = (acc - mass) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in w.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

fn axpy(v: &Occupancy, h: f64, d: &Occupancy) -> Occupancy {
    Occupancy::new(
        v.per_type
            .iter()
            .zip(&d.per_type)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + h * y).collect())
            .collect(),
    )
}

fn step(spec: &ClusterSpec, policy: &Policy, v: &Occupancy, h: f64) -> Occupancy {
    let k1 = rhs_with_field(spec, v, &field_for_step(spec, policy, v, h));
    let mid = axpy(v, 0.5 * h, &k1);
    let k2 = rhs_with_field(spec, &mid, &field_for_step(spec, policy, &mid, h));
    let mut next = axpy(v, h, &k2);
    for (w, t) in next.per_type.iter_mut().zip(&spec.types) {
        project_simplex(w, t.gamma);
    }
    next
}

/// Caps the step for power-of-`d` dispatch. Its field varies on a scale of
/// `1 / d` near a draining level, which makes the explicit step unstable once
/// `lambda * d * dt` exceeds one.
pub fn stable_dt(spec: &ClusterSpec, policy: &Policy, dt: f64) -> f64 {
    match policy.kind {
        PolicyKind::JsqD(d) if spec.lambda > 0.0 => dt.min(1.0 / (spec.lambda * d as f64)),
        _ => dt,
    }
}

fn is_finite(v: &Occupancy) -> bool {
    v.per_type.iter().flatten().all(|x| x.is_finite())
}

/// Integrates from `v0` over `[0, horizon]`, recording the state every
/// `sample_interval`. Steps never exceed `dt` and land exactly on sample times.
pub fn integrate(
    spec: &ClusterSpec,
    policy: &Policy,
    v0: &Occupancy,
    horizon: f64,
    dt: f64,
    sample_interval: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && sample_interval > 0.0 && horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0, sample_interval > 0, horizon >= 0 (got {dt}, {sample_interval}, {horizon})"
        )));
    }
    let samples = (horizon / sample_interval + 1e-9).floor() as usize;
    let dt = stable_dt(spec, policy, dt);
    let sub = (sample_interval / dt - 1e-9).ceil().max(1.0) as usize;
    let h = sample_interval / sub as f64;

    let mut traj = Trajectory::default();
    let mut v = v0.clone();
    traj.push(0.0, v.clone());
    for m in 0..samples {
        for s in 0..sub {
            v = step(spec, policy, &v, h);
            if !is_finite(&v) {
                return Err(Error::NonFinite {
                    t: m as f64 * sample_interval + (s + 1) as f64 * h,
                });
            }
        }
        traj.push((m + 1) as f64 * sample_interval, v.clone());
    }
    Ok(traj)
}

/// Runs the dynamics until `||rhs||_inf < tol`.
pub fn solve_to_stationarity(
    spec: &ClusterSpec,
    policy: &Policy,
    v0: &Occupancy,
    tol: f64,
    t_max: f64,
    dt: f64,
) -> Result<Occupancy> {
    if !(tol > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument("need tol > 0 and dt > 0".into()));
    }
    const CHECK_EVERY: usize = 100;
    let mut v = v0.clone();
    let mut t = 0.0;
    let mut res = residual(spec, policy, &v);
    while res >= tol {
        if t >= t_max {
            return Err(Error::NonConvergence {
                what: "mean-field dynamics".into(),
                residual: res,
                last: Some(Box::new(v)),
            });
        }
        let dt = stable_dt(spec, policy, dt);
        for _ in 0..CHECK_EVERY {
            v = step(spec, policy, &v, dt);
        }
        t += CHECK_EVERY as f64 * dt;
        if !is_finite(&v) {
            return Err(Error::NonFinite { t });
        }
        res = residual(spec, policy, &v);
    }
    Ok(v)
}
