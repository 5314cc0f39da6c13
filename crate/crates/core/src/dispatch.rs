//! Dispatch functions: where an arriving job goes, as a function of the state.
//!
//! Two forms are provided. [`field`] maps a normalized occupancy to the
//! probabilities `f_i^(k)` of joining a type-`k` queue of length `i`; this is
//! what the mean-field equations use. [`FiniteCluster`] and [`sample_target`]
//! implement the same rules for a concrete set of `N` servers.

use rand::seq::index;
use rand::Rng;

use crate::model::{ClusterSpec, Occupancy, Policy, PolicyKind};

/// Occupancies below this are treated as empty when deciding whether idle or
/// available servers exist.
pub const ZERO_TOL: f64 = 1e-12;

/// Probabilities `f_i^(k)` that an arrival joins a type-`k` queue of length
/// `i`. Entries at a full queue are always zero; that mass is in `loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchField {
    pub per_type: Vec<Vec<f64>>,
    pub loss: f64,
}

impl DispatchField {
    /// Builds a field from raw probabilities that may include full queues,
    /// moving those entries to the loss channel.
    pub fn from_raw(mut per_type: Vec<Vec<f64>>) -> Self {
        let mut loss = 0.0;
        for f in &mut per_type {
            if let Some(last) = f.last_mut() {
                loss += *last;
                *last = 0.0;
            }
        }
        Self { per_type, loss }
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.per_type[k].get(i).copied().unwrap_or(0.0)
    }

    /// Probability that an arrival is admitted.
    pub fn admitted(&self) -> f64 {
        self.per_type.iter().flatten().sum()
    }

    /// Admission probability into type `k` servers.
    pub fn type_admitted(&self, k: usize) -> f64 {
        self.per_type[k].iter().sum()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Random assignment: join a uniformly chosen server.
pub fn f_random(x: &Occupancy) -> DispatchField {
    DispatchField::from_raw(x.per_type.clone())
}

/// Join the idle queue, falling back to random when no server is idle.
pub fn f_jiq(x: &Occupancy) -> DispatchField {
    let y0 = x.level_mass(0);
    if y0 < ZERO_TOL {
        return f_random(x);
    }
    let raw = x
        .per_type
        .iter()
        .map(|v| {
            let mut f = vec![0.0; v.len()];
            f[0] = v[0] / y0;
            f
        })
        .collect();
    DispatchField::from_raw(raw)
}

/// Join the shortest queue, splitting ties in proportion to occupancy.
pub fn f_jsq(x: &Occupancy) -> DispatchField {
    let top = x.max_len();
    let Some(lvl) = (0..=top).find(|&i| x.level_mass(i) > ZERO_TOL) else {
        return f_random(x);
    };
    let y = x.level_mass(lvl);
    let raw = x
        .per_type
        .iter()
        .map(|v| {
            let mut f = vec![0.0; v.len()];
            if lvl < v.len() {
                f[lvl] = v[lvl] / y;
            }
            f
        })
        .collect();
    DispatchField::from_raw(raw)
}

/// Tail masses `z_i = sum_k sum_{j >= i} x_j^(k)` for `i = 0..=max_len+1`.
pub fn tail_masses(x: &Occupancy) -> Vec<f64> {
    let top = x.max_len();
    let mut z = vec![0.0; top + 2];
    for i in (0..=top).rev() {
        z[i] = z[i + 1] + x.level_mass(i);
    }
    z
}

/// Mean-field limit of power-of-`d` choices.
pub fn f_jsqd_limit(x: &Occupancy, d: u32) -> DispatchField {
    // Tail masses are probabilities; clamping keeps large powers bounded on
    // intermediate integrator states that stray slightly off the simplex.
    let z: Vec<f64> = tail_masses(x)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let d = d as i32;
    let raw = x
        .per_type
        .iter()
        .map(|v| {
            v.iter()
                .enumerate()
                .map(|(i, &xi)| {
                    let bracket = z[i].powi(d) - z[i + 1].powi(d);
                    ratio(xi, x.level_mass(i)) * bracket
                })
                .collect()
        })
        .collect();
    DispatchField::from_raw(raw)
}

fn binom(n: f64, d: u32) -> f64 {
    if n < d as f64 {
        return 0.0;
    }
    (0..d).fold(1.0, |acc, j| acc * (n - j as f64) / (d - j) as f64)
}

/// Power-of-`d` choices over `n` servers sampled without replacement.
///
/// `x` must be the occupancy of an `n`-server cluster; server counts are
/// recovered by rounding `x * n`. `d` larger than `n` is clamped.
pub fn f_jsqd_finite(x: &Occupancy, d: u32, n: usize) -> DispatchField {
    let d = d.min(n as u32).max(1);
    let nf = n as f64;
    let counts: Vec<Vec<f64>> = x
        .per_type
        .iter()
        .map(|v| v.iter().map(|&xi| (xi * nf).round()).collect())
        .collect();
    let top = x.max_len();
    let level = |i: usize| -> f64 {
        counts
            .iter()
            .map(|c| c.get(i).copied().unwrap_or(0.0))
            .sum()
    };
    let mut tail = vec![0.0; top + 2];
    for i in (0..=top).rev() {
        tail[i] = tail[i + 1] + level(i);
    }
    let total = binom(nf, d);
    let raw = counts
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .map(|(i, &ci)| {
                    let bracket = (binom(tail[i], d) - binom(tail[i + 1], d)) / total;
                    ratio(ci, level(i)) * bracket
                })
                .collect()
        })
        .collect();
    DispatchField::from_raw(raw)
}

/// Join a random server below its type's threshold, falling back to random.
pub fn f_jbt(x: &Occupancy, mpls: &[usize]) -> DispatchField {
    let y: f64 = x
        .per_type
        .iter()
        .zip(mpls)
        .map(|(v, &m)| v[..m.min(v.len())].iter().sum::<f64>())
        .sum();
    if y < ZERO_TOL {
        return f_random(x);
    }
    let raw = x
        .per_type
        .iter()
        .zip(mpls)
        .map(|(v, &m)| {
            v.iter()
                .enumerate()
                .map(|(i, &xi)| if i < m { xi / y } else { 0.0 })
                .collect()
        })
        .collect();
    DispatchField::from_raw(raw)
}

/// Follows `inner` with probability `p`, otherwise random assignment.
pub fn f_partial(inner: &DispatchField, x: &Occupancy, p: f64) -> DispatchField {
    if p == 1.0 {
        return inner.clone();
    }
    let rnd = f_random(x);
    let per_type = inner
        .per_type
        .iter()
        .zip(&rnd.per_type)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(u, v)| p * u + (1.0 - p) * v)
                .collect()
        })
        .collect();
    DispatchField {
        per_type,
        loss: p * inner.loss + (1.0 - p) * rnd.loss,
    }
}

/// Mean-field dispatch field of `policy` at state `x`.
pub fn field(spec: &ClusterSpec, policy: &Policy, x: &Occupancy) -> DispatchField {
    let inner = match policy.kind {
        PolicyKind::Random => f_random(x),
        PolicyKind::Jiq => f_jiq(x),
        PolicyKind::Jsq => f_jsq(x),
        PolicyKind::JsqD(d) => f_jsqd_limit(x, d),
        PolicyKind::Jbt => {
            let mpls: Vec<usize> = spec
                .types
                .iter()
                .map(|t| t.mpl.unwrap_or(t.buffer()))
                .collect();
            f_jbt(x, &mpls)
        }
    };
    f_partial(&inner, x, policy.control)
}

/// Outcome of a dispatch decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Server(usize),
    Loss,
}

/// Queue lengths of `N` concrete servers, indexed by (type, length) so that
/// every policy can pick a target in time independent of `N`.
#[derive(Debug, Clone)]
pub struct FiniteCluster {
    server_type: Vec<usize>,
    len: Vec<usize>,
    buffer: Vec<usize>,
    mpl: Vec<usize>,
    buckets: Vec<Vec<Vec<usize>>>,
    pos: Vec<usize>,
}

impl FiniteCluster {
    /// An empty cluster with `counts[k]` servers of type `k`.
    pub fn new(spec: &ClusterSpec, counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        let mut server_type = Vec::with_capacity(n);
        let mut buckets: Vec<Vec<Vec<usize>>> = spec
            .types
            .iter()
            .map(|t| vec![Vec::new(); t.buffer() + 1])
            .collect();
        let mut pos = Vec::with_capacity(n);
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                let idx = server_type.len();
                server_type.push(k);
                pos.push(buckets[k][0].len());
                buckets[k][0].push(idx);
            }
        }
        Self {
            len: vec![0; n],
            server_type,
            buffer: spec.buffers(),
            mpl: spec
                .types
                .iter()
                .map(|t| t.mpl.unwrap_or(t.buffer()))
                .collect(),
            buckets,
            pos,
        }
    }

    /// Builds a cluster from explicit types and lengths.
    pub fn from_lengths(spec: &ClusterSpec, types: &[usize], lengths: &[usize]) -> Self {
        let mut c = Self::new(spec, &vec![0; spec.num_types()]);
        for (idx, (&k, &l)) in types.iter().zip(lengths).enumerate() {
            c.server_type.push(k);
            c.len.push(l);
            c.pos.push(c.buckets[k][l].len());
            c.buckets[k][l].push(idx);
        }
        c
    }

    pub fn num_servers(&self) -> usize {
        self.len.len()
    }

    pub fn num_types(&self) -> usize {
        self.buckets.len()
    }

    #[inline]
    pub fn length(&self, server: usize) -> usize {
        self.len[server]
    }

    #[inline]
    pub fn server_type(&self, server: usize) -> usize {
        self.server_type[server]
    }

    pub fn buffer(&self, k: usize) -> usize {
        self.buffer[k]
    }

    /// Number of type-`k` servers holding `i` jobs.
    #[inline]
    pub fn count(&self, k: usize, i: usize) -> usize {
        self.buckets[k][i].len()
    }

    /// The `r`-th type-`k` server of length `i` (arbitrary but fixed order).
    #[inline]
    pub fn member(&self, k: usize, i: usize, r: usize) -> usize {
        self.buckets[k][i][r]
    }

    fn set_length(&mut self, server: usize, new_len: usize) {
        let k = self.server_type[server];
        let old = self.len[server];
        let p = self.pos[server];
        let bucket = &mut self.buckets[k][old];
        bucket.swap_remove(p);
        if let Some(&moved) = bucket.get(p) {
            self.pos[moved] = p;
        }
        self.pos[server] = self.buckets[k][new_len].len();
        self.buckets[k][new_len].push(server);
        self.len[server] = new_len;
    }

    /// Adds a job; returns `false` (and changes nothing) if the queue is full.
    pub fn push(&mut self, server: usize) -> bool {
        let l = self.len[server];
        if l >= self.buffer[self.server_type[server]] {
            return false;
        }
        self.set_length(server, l + 1);
        true
    }

    /// Removes a job from a nonempty queue.
    pub fn pop(&mut self, server: usize) {
        let l = self.len[server];
        debug_assert!(l > 0);
        self.set_length(server, l - 1);
    }

    /// Normalized occupancy of the cluster.
    pub fn occupancy(&self) -> Occupancy {
        let n = self.num_servers() as f64;
        Occupancy::new(
            self.buckets
                .iter()
                .map(|b| b.iter().map(|s| s.len() as f64 / n).collect())
                .collect(),
        )
    }

    /// Uniform pick among the union of buckets `(k, i)` with `i < limit[k]`.
    fn pick_below<R: Rng + ?Sized>(&self, limit: &[usize], rng: &mut R) -> Option<usize> {
        let total: usize = self
            .buckets
            .iter()
            .zip(limit)
            .map(|(b, &m)| b[..m.min(b.len())].iter().map(Vec::len).sum::<usize>())
            .sum();
        if total == 0 {
            return None;
        }
        let mut r = rng.random_range(0..total);
        for (b, &m) in self.buckets.iter().zip(limit) {
            for bucket in &b[..m.min(b.len())] {
                if r < bucket.len() {
                    return Some(bucket[r]);
                }
                r -= bucket.len();
            }
        }
        unreachable!("index within total count")
    }

    fn admit(&self, server: usize) -> Target {
        if self.len[server] >= self.buffer[self.server_type[server]] {
            Target::Loss
        } else {
            Target::Server(server)
        }
    }

    fn pick_random<R: Rng + ?Sized>(&self, rng: &mut R) -> Target {
        let s = rng.random_range(0..self.num_servers());
        self.admit(s)
    }

    fn pick_shortest<R: Rng + ?Sized>(&self, rng: &mut R) -> Target {
        let top = self.buffer.iter().copied().max().unwrap_or(0);
        for i in 0..=top {
            let here: usize = self
                .buckets
                .iter()
                .map(|b| b.get(i).map_or(0, Vec::len))
                .sum();
            if here == 0 {
                continue;
            }
            let mut r = rng.random_range(0..here);
            for b in &self.buckets {
                if let Some(bucket) = b.get(i) {
                    if r < bucket.len() {
                        return self.admit(bucket[r]);
                    }
                    r -= bucket.len();
                }
            }
        }
        unreachable!("cluster has at least one server")
    }

    fn pick_jsqd<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Target {
        let n = self.num_servers();
        let d = d.clamp(1, n);
        let mut best = usize::MAX;
        let mut chosen = 0;
        let mut ties = 0u32;
        for s in index::sample(rng, n, d).iter() {
            let l = self.len[s];
            if l < best {
                best = l;
                chosen = s;
                ties = 1;
            } else if l == best {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    chosen = s;
                }
            }
        }
        self.admit(chosen)
    }
}

fn sample_inner<R: Rng + ?Sized>(c: &FiniteCluster, kind: PolicyKind, rng: &mut R) -> Target {
    match kind {
        PolicyKind::Random | PolicyKind::JsqD(1) => c.pick_random(rng),
        PolicyKind::Jiq => {
            let idle = vec![1; c.num_types()];
            match c.pick_below(&idle, rng) {
                Some(s) => Target::Server(s),
                None => c.pick_random(rng),
            }
        }
        PolicyKind::Jsq => c.pick_shortest(rng),
        PolicyKind::JsqD(d) => c.pick_jsqd(d as usize, rng),
        PolicyKind::Jbt => match c.pick_below(&c.mpl, rng) {
            Some(s) => Target::Server(s),
            None => c.pick_random(rng),
        },
    }
}

/// Chooses the server an arriving job is sent to.
pub fn sample_target<R: Rng + ?Sized>(c: &FiniteCluster, policy: &Policy, rng: &mut R) -> Target {
    if policy.control < 1.0 && rng.random::<f64>() >= policy.control {
        return c.pick_random(rng);
    }
    sample_inner(c, policy.kind, rng)
}
