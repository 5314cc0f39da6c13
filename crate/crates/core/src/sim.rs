//! Discrete-event simulation of `N` servers.
//!
//! Jobs arrive as a Poisson stream of rate `N lambda`; a server of type `k`
//! holding `j` jobs completes its head-of-line job at rate `mu_j^(k)`. The
//! next event is drawn from the total rate, then attributed to arrivals or to
//! one (type, length) class, and finally to a uniform member of that class.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{sample_target, FiniteCluster, Target};
use crate::error::{Error, Result};
use crate::model::{ClusterSpec, Occupancy, Policy, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n: usize,
    pub horizon: f64,
    pub sample_interval: f64,
    pub seed: u64,
    /// Jobs arriving before this time are left out of the sojourn samples and
    /// the time-averaged occupancy. Defaults to half the horizon.
    pub burn_in: Option<f64>,
}

impl SimParams {
    pub fn new(n: usize, horizon: f64, sample_interval: f64, seed: u64) -> Self {
        Self {
            n,
            horizon,
            sample_interval,
            seed,
            burn_in: None,
        }
    }

    pub fn with_burn_in(mut self, t: f64) -> Self {
        self.burn_in = Some(t);
        self
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(0.5 * self.horizon)
    }
}

/// One completed job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournSample {
    pub arrival: f64,
    pub departure: f64,
    pub server_type: usize,
    /// Queue length found on arrival, not counting the job itself.
    pub length_seen: usize,
}

impl SojournSample {
    pub fn duration(&self) -> f64 {
        self.departure - self.arrival
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub trajectory: Trajectory,
    /// Completed jobs that arrived after the burn-in.
    pub sojourns: Vec<SojournSample>,
    /// Occupancy averaged over `[burn_in, horizon]`.
    pub time_avg: Occupancy,
    pub servers_per_type: Vec<usize>,
    pub arrivals: u64,
    pub losses: u64,
    /// Arrivals and losses after the burn-in.
    pub arrivals_measured: u64,
    pub losses_measured: u64,
    /// Jobs admitted after the burn-in and still present at the horizon.
    pub in_flight: u64,
}

impl SimOutput {
    pub fn mean_sojourn(&self) -> f64 {
        let n = self.sojourns.len();
        self.sojourns
            .iter()
            .map(SojournSample::duration)
            .sum::<f64>()
            / n as f64
    }

    /// Mean sojourn of jobs served by type `k`, if any.
    pub fn mean_sojourn_type(&self, k: usize) -> Option<f64> {
        let (s, c) = self
            .sojourns
            .iter()
            .filter(|x| x.server_type == k)
            .fold((0.0, 0usize), |(s, c), x| (s + x.duration(), c + 1));
        (c > 0).then(|| s / c as f64)
    }

    pub fn loss_fraction(&self) -> f64 {
        if self.arrivals_measured == 0 {
            0.0
        } else {
            self.losses_measured as f64 / self.arrivals_measured as f64
        }
    }
}

/// Splits `n` servers over types by largest remainder.
pub fn place_servers(gammas: &[f64], n: usize) -> Result<Vec<usize>> {
    if n < gammas.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} servers cannot cover {} server types",
            gammas.len()
        )));
    }
    let exact: Vec<f64> = gammas.iter().map(|g| g * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..gammas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let placed: usize = counts.iter().sum();
    for &k in order.iter().take(n.saturating_sub(placed)) {
        counts[k] += 1;
    }
    Ok(counts)
}

/// Simulates one replication; deterministic in `params.seed`.
pub fn run(spec: &ClusterSpec, policy: &Policy, params: &SimParams) -> Result<SimOutput> {
    run_stream(spec, policy, params, 0)
}

fn run_stream(
    spec: &ClusterSpec,
    policy: &Policy,
    params: &SimParams,
    stream: u64,
) -> Result<SimOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    simulate(spec, policy, params, &mut rng)
}

/// Runs `r` independent replications in parallel. Replication `i` draws from
/// stream `i` of the seeded generator, so replication 0 equals [`run`].
pub fn replicate(
    spec: &ClusterSpec,
    policy: &Policy,
    params: &SimParams,
    r: usize,
) -> Result<Vec<SimOutput>> {
    if r == 0 {
        return Err(Error::InvalidArgument(
            "need at least one replication".into(),
        ));
    }
    (0..r as u64)
        .into_par_iter()
        .map(|i| run_stream(spec, policy, params, i))
        .collect()
}

/// Simulates with a caller-supplied generator.
pub fn simulate<R: Rng>(
    spec: &ClusterSpec,
    policy: &Policy,
    params: &SimParams,
    rng: &mut R,
) -> Result<SimOutput> {
    if !(params.sample_interval > 0.0 && params.horizon >= 0.0) {
        return Err(Error::InvalidArgument(
            "need sample_interval > 0 and horizon >= 0".into(),
        ));
    }
    let gammas: Vec<f64> = spec.types.iter().map(|t| t.gamma).collect();
    let counts = place_servers(&gammas, params.n)?;
    let mut cluster = FiniteCluster::new(spec, &counts);
    let n = params.n;
    let arrival_rate = n as f64 * spec.lambda;
    let burn_in = params.burn_in();
    let horizon = params.horizon;
    let mut queues: Vec<VecDeque<(f64, usize)>> = vec![VecDeque::new(); n];

    let mut trajectory = Trajectory::default();
    let mut next_sample = 0usize;
    let mut area: Vec<Vec<f64>> = spec
        .types
        .iter()
        .map(|t| vec![0.0; t.buffer() + 1])
        .collect();
    let mut out_sojourns = Vec::new();
    let (mut arrivals, mut losses, mut arrivals_m, mut losses_m) = (0u64, 0u64, 0u64, 0u64);

    let mut t = 0.0;
    loop {
        let mut total = arrival_rate;
        for (k, st) in spec.types.iter().enumerate() {
            for j in 1..=st.buffer() {
                total += st.curve.rate(j) * cluster.count(k, j) as f64;
            }
        }
        let t_next = if total > 0.0 {
            t + rng.sample::<f64, _>(Exp1) / total
        } else {
            f64::INFINITY
        };
        let until = t_next.min(horizon);

        while next_sample as f64 * params.sample_interval <= until + 1e-12 * horizon.max(1.0) {
            trajectory.push(
                next_sample as f64 * params.sample_interval,
                cluster.occupancy(),
            );
            next_sample += 1;
        }
        let lo = t.max(burn_in);
        if until > lo {
            for (k, a) in area.iter_mut().enumerate() {
                for (i, x) in a.iter_mut().enumerate() {
                    *x += (until - lo) * cluster.count(k, i) as f64;
                }
            }
        }
        if t_next > horizon {
            break;
        }
        t = t_next;

        let mut u = rng.random::<f64>() * total;
        if u < arrival_rate {
            arrivals += 1;
            let measured = t >= burn_in;
            if measured {
                arrivals_m += 1;
            }
            match sample_target(&cluster, policy, rng) {
                Target::Server(s) => {
                    let seen = cluster.length(s);
                    cluster.push(s);
                    queues[s].push_back((t, seen));
                }
                Target::Loss => {
                    losses += 1;
                    if measured {
                        losses_m += 1;
                    }
                }
            }
            continue;
        }
        u -= arrival_rate;
        let mut chosen = None;
        'outer: for (k, st) in spec.types.iter().enumerate() {
            for j in 1..=st.buffer() {
                let c = cluster.count(k, j);
                let w = st.curve.rate(j) * c as f64;
                if u < w {
                    let r = ((u / st.curve.rate(j)) as usize).min(c - 1);
                    chosen = Some(cluster.member(k, j, r));
                    break 'outer;
                }
                u -= w;
            }
        }
        // Floating-point leftovers land on the last busy class.
        let s = match chosen {
            Some(s) => s,
            None => last_busy(spec, &cluster).expect("service event needs a busy server"),
        };
        cluster.pop(s);
        let (arr, seen) = queues[s].pop_front().expect("queue holds its jobs");
        if arr >= burn_in {
            out_sojourns.push(SojournSample {
                arrival: arr,
                departure: t,
                server_type: cluster.server_type(s),
                length_seen: seen,
            });
        }
    }

    let span = horizon - burn_in;
    let time_avg = Occupancy::new(
        area.into_iter()
            .map(|a| {
                a.into_iter()
                    .map(|x| {
                        if span > 0.0 {
                            x / (span * n as f64)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect(),
    );
    let in_flight = queues
        .iter()
        .flatten()
        .filter(|(arr, _)| *arr >= burn_in)
        .count() as u64;
    Ok(SimOutput {
        trajectory,
        sojourns: out_sojourns,
        time_avg,
        servers_per_type: counts,
        arrivals,
        losses,
        arrivals_measured: arrivals_m,
        losses_measured: losses_m,
        in_flight,
    })
}

fn last_busy(spec: &ClusterSpec, c: &FiniteCluster) -> Option<usize> {
    for (k, st) in spec.types.iter().enumerate().rev() {
        for j in (1..=st.buffer()).rev() {
            if st.curve.rate(j) > 0.0 && c.count(k, j) > 0 {
                return Some(c.member(k, j, c.count(k, j) - 1));
            }
        }
    }
    None
}
