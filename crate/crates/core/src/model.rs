//! Cluster description: server types, service rate curves, policies and the
//! normalized occupancy state.
//!
//! Every type here is immutable once built and can be shared across threads.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Tolerance on `sum(gamma) == 1`.
pub const GAMMA_SUM_TOL: f64 = 1e-12;

/// Relative slack in the rate monotonicity checks, so that decimal inputs
/// such as `2.4 / 3` versus `3.2 / 4` compare as equal.
const RATE_TOL: f64 = 1e-12;

/// Total service rate of a single server as a function of its queue length.
///
/// `rates[i]` is the rate with `i` jobs present; `rates[0]` is always zero and
/// the buffer size is `rates.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRateCurve {
    rates: Vec<f64>,
}

impl ServiceRateCurve {
    /// Builds a curve from the full vector `[mu_0, mu_1, ..., mu_B]`.
    pub fn new(rates: Vec<f64>) -> Self {
        Self { rates }
    }

    /// Builds a curve from `[mu_1, ..., mu_B]`, prepending the implicit zero.
    pub fn from_busy_rates(busy: &[f64]) -> Self {
        let mut rates = Vec::with_capacity(busy.len() + 1);
        rates.push(0.0);
        rates.extend_from_slice(busy);
        Self { rates }
    }

    /// A curve with the same rate `mu` at every nonzero length.
    pub fn constant(mu: f64, buffer: usize) -> Self {
        Self::from_busy_rates(&vec![mu; buffer])
    }

    pub fn buffer(&self) -> usize {
        self.rates.len().saturating_sub(1)
    }

    #[inline]
    pub fn rate(&self, len: usize) -> f64 {
        self.rates[len]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Rates `mu_1..mu_B` as they appear in config files.
    pub fn busy_rates(&self) -> &[f64] {
        &self.rates[1.min(self.rates.len())..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerType {
    /// Fraction of servers of this type.
    pub gamma: f64,
    pub curve: ServiceRateCurve,
    /// Availability threshold for JBT, doubling as the multiprogramming level
    /// under limited processor sharing.
    pub mpl: Option<usize>,
}

impl ServerType {
    pub fn new(gamma: f64, curve: ServiceRateCurve) -> Self {
        Self {
            gamma,
            curve,
            mpl: None,
        }
    }

    pub fn with_mpl(mut self, mpl: usize) -> Self {
        self.mpl = Some(mpl);
        self
    }

    pub fn buffer(&self) -> usize {
        self.curve.buffer()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Arrival rate per server.
    pub lambda: f64,
    pub types: Vec<ServerType>,
}

impl ClusterSpec {
    pub fn new(lambda: f64, types: Vec<ServerType>) -> Self {
        Self { lambda, types }
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn buffers(&self) -> Vec<usize> {
        self.types.iter().map(ServerType::buffer).collect()
    }

    pub fn max_buffer(&self) -> usize {
        self.types.iter().map(ServerType::buffer).max().unwrap_or(0)
    }

    /// `sum_k gamma_k * mu_i^(k)`, with lengths beyond a type's buffer clamped
    /// to its last rate.
    pub fn capacity_at(&self, len: usize) -> f64 {
        self.types
            .iter()
            .map(|t| t.gamma * t.curve.rate(len.min(t.buffer())))
            .sum()
    }

    /// Total service capacity with every queue full.
    pub fn full_capacity(&self) -> f64 {
        self.types
            .iter()
            .map(|t| t.gamma * t.curve.rate(t.buffer()))
            .sum()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            types: self.types.clone(),
        }
    }

    /// Thresholds for every type, if all are present.
    pub fn mpls(&self) -> Option<Vec<usize>> {
        self.types.iter().map(|t| t.mpl).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    Random,
    Jiq,
    Jsq,
    JsqD(u32),
    Jbt,
}

impl PolicyKind {
    /// Short name used in CSV output and on the command line.
    pub fn name(&self) -> String {
        match self {
            PolicyKind::Random => "random".into(),
            PolicyKind::Jiq => "jiq".into(),
            PolicyKind::Jsq => "jsq".into(),
            PolicyKind::JsqD(d) => format!("jsqd:{d}"),
            PolicyKind::Jbt => "jbt".into(),
        }
    }

    /// Parses `random`, `jiq`, `jsq`, `jbt`, `jsqd:D` (also `jsq(D)` and `jsqD`).
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "random" => return Some(PolicyKind::Random),
            "jiq" => return Some(PolicyKind::Jiq),
            "jsq" => return Some(PolicyKind::Jsq),
            "jbt" => return Some(PolicyKind::Jbt),
            _ => {}
        }
        let rest = s
            .strip_prefix("jsqd:")
            .or_else(|| s.strip_prefix("jsq(").and_then(|r| r.strip_suffix(')')))
            .or_else(|| s.strip_prefix("jsqd"))
            .or_else(|| s.strip_prefix("jsq"))?;
        rest.parse().ok().map(PolicyKind::JsqD)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A dispatch policy, optionally under partial control: with probability
/// `control` a job follows `kind`, otherwise it goes to a uniformly random
/// server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub control: f64,
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, control: 1.0 }
    }

    pub fn random() -> Self {
        Self::new(PolicyKind::Random)
    }

    pub fn jiq() -> Self {
        Self::new(PolicyKind::Jiq)
    }

    pub fn jsq() -> Self {
        Self::new(PolicyKind::Jsq)
    }

    pub fn jsqd(d: u32) -> Self {
        Self::new(PolicyKind::JsqD(d))
    }

    pub fn jbt() -> Self {
        Self::new(PolicyKind::Jbt)
    }

    pub fn with_control(mut self, p: f64) -> Self {
        self.control = p;
        self
    }

    pub fn is_partial(&self) -> bool {
        self.control < 1.0
    }

    pub fn name(&self) -> String {
        if self.is_partial() {
            format!("{}@p={}", self.kind, self.control)
        } else {
            self.kind.name()
        }
    }
}

/// Normalized occupancy: `per_type[k][i]` is the fraction of all servers that
/// are of type `k` and hold `i` jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub per_type: Vec<Vec<f64>>,
}

impl Occupancy {
    pub fn new(per_type: Vec<Vec<f64>>) -> Self {
        Self { per_type }
    }

    /// All servers idle.
    pub fn empty(spec: &ClusterSpec) -> Self {
        let per_type = spec
            .types
            .iter()
            .map(|t| {
                let mut v = vec![0.0; t.buffer() + 1];
                v[0] = t.gamma;
                v
            })
            .collect();
        Self { per_type }
    }

    pub fn zeros_like(spec: &ClusterSpec) -> Self {
        Self {
            per_type: spec
                .types
                .iter()
                .map(|t| vec![0.0; t.buffer() + 1])
                .collect(),
        }
    }

    pub fn num_types(&self) -> usize {
        self.per_type.len()
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.per_type[k].get(i).copied().unwrap_or(0.0)
    }

    pub fn type_mass(&self, k: usize) -> f64 {
        self.per_type[k].iter().sum()
    }

    /// `sum_k x_i^(k)`, zero beyond a type's buffer.
    pub fn level_mass(&self, i: usize) -> f64 {
        self.per_type
            .iter()
            .map(|v| v.get(i).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn max_len(&self) -> usize {
        self.per_type.iter().map(|v| v.len()).max().unwrap_or(1) - 1
    }

    /// Mean queue length of type `k` servers.
    pub fn mean_length(&self, k: usize) -> f64 {
        let v = &self.per_type[k];
        let mass: f64 = v.iter().sum();
        v.iter().enumerate().map(|(i, x)| i as f64 * x).sum::<f64>() / mass
    }

    pub fn sup_distance(&self, other: &Occupancy) -> f64 {
        self.per_type
            .iter()
            .zip(&other.per_type)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Checks nonnegativity, `[0, 1]` bounds and per-type masses.
    pub fn check(&self, spec: &ClusterSpec, tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.per_type.len() != spec.types.len() {
            out.push(Violation::new(
                ViolationKind::Shape,
                None,
                None,
                format!(
                    "occupancy has {} types, spec has {}",
                    self.per_type.len(),
                    spec.types.len()
                ),
            ));
            return out;
        }
        for (k, (v, t)) in self.per_type.iter().zip(&spec.types).enumerate() {
            if v.len() != t.buffer() + 1 {
                out.push(Violation::new(
                    ViolationKind::Shape,
                    Some(k),
                    None,
                    format!("expected {} entries, got {}", t.buffer() + 1, v.len()),
                ));
                continue;
            }
            for (i, &x) in v.iter().enumerate() {
                if !(-tol..=1.0 + tol).contains(&x) || !x.is_finite() {
                    out.push(Violation::new(
                        ViolationKind::OccupancyRange,
                        Some(k),
                        Some(i),
                        format!("entry {x} outside [0, 1]"),
                    ));
                }
            }
            let mass: f64 = v.iter().sum();
            if (mass - t.gamma).abs() > tol {
                out.push(Violation::new(
                    ViolationKind::OccupancyMass,
                    Some(k),
                    None,
                    format!("mass {mass} differs from gamma {}", t.gamma),
                ));
            }
        }
        out
    }
}

/// Occupancy snapshots at increasing times, from either the simulator or the
/// mean-field integrator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Occupancy>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, x: Occupancy) {
        self.times.push(t);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Occupancy> {
        self.states.last()
    }

    /// Largest entrywise distance to `other` over common sample points.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sup_distance(b))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    EmptyTypes,
    Lambda,
    GammaRange,
    GammaSum,
    EmptyCurve,
    RateNonFinite,
    IdleRate,
    TotalRateDecreasing,
    PerJobRateIncreasing,
    Stability,
    MplRange,
    MplMissing,
    JsqdChoices,
    ControlRange,
    Shape,
    OccupancyRange,
    OccupancyMass,
}

/// A failed constraint together with the offending type and queue length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub server_type: Option<usize>,
    pub index: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(
        kind: ViolationKind,
        server_type: Option<usize>,
        index: Option<usize>,
        message: String,
    ) -> Self {
        Self {
            kind,
            server_type,
            index,
            message,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(k) = self.server_type {
            write!(f, " [type {k}")?;
            if let Some(i) = self.index {
                write!(f, ", i={i}")?;
            }
            write!(f, "]")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Checks a cluster and policy against the model's standing assumptions.
///
/// Returns every violated constraint; an empty list means the pair is valid.
pub fn validate(spec: &ClusterSpec, policy: &Policy) -> Vec<Violation> {
    use ViolationKind as V;
    let mut out = Vec::new();

    if !(spec.lambda.is_finite() && spec.lambda >= 0.0) {
        out.push(Violation::new(
            V::Lambda,
            None,
            None,
            format!("lambda must be a nonnegative number, got {}", spec.lambda),
        ));
    }
    if spec.types.is_empty() {
        out.push(Violation::new(
            V::EmptyTypes,
            None,
            None,
            "at least one server type is required".into(),
        ));
        return out;
    }

    let mut gamma_sum = 0.0;
    for (k, t) in spec.types.iter().enumerate() {
        gamma_sum += t.gamma;
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            out.push(Violation::new(
                V::GammaRange,
                Some(k),
                None,
                format!("gamma {} not in (0, 1]", t.gamma),
            ));
        }
        out.extend(check_curve(k, &t.curve));
        if let Some(m) = t.mpl {
            if m < 1 || m > t.buffer() {
                out.push(Violation::new(
                    V::MplRange,
                    Some(k),
                    None,
                    format!("mpl {m} not in 1..={}", t.buffer()),
                ));
            }
        }
    }
    if (gamma_sum - 1.0).abs() > GAMMA_SUM_TOL {
        out.push(Violation::new(
            V::GammaSum,
            None,
            None,
            format!("type fractions sum to {gamma_sum}, expected 1"),
        ));
    }

    let capacity = spec.full_capacity();
    if !(spec.lambda < capacity) {
        out.push(Violation::new(
            V::Stability,
            None,
            None,
            format!(
                "lambda {} must be strictly below the full-queue capacity {capacity}",
                spec.lambda
            ),
        ));
    }

    match policy.kind {
        PolicyKind::JsqD(0) => out.push(Violation::new(
            V::JsqdChoices,
            None,
            None,
            "JSQ(d) needs d >= 1".into(),
        )),
        PolicyKind::Jbt => {
            for (k, t) in spec.types.iter().enumerate() {
                if t.mpl.is_none() {
                    out.push(Violation::new(
                        V::MplMissing,
                        Some(k),
                        None,
                        "JBT needs a threshold (mpl) for every type".into(),
                    ));
                }
            }
        }
        _ => {}
    }
    if !(policy.control > 0.0 && policy.control <= 1.0) {
        out.push(Violation::new(
            V::ControlRange,
            None,
            None,
            format!("control probability {} not in (0, 1]", policy.control),
        ));
    }
    out
}

fn check_curve(k: usize, curve: &ServiceRateCurve) -> Vec<Violation> {
    use ViolationKind as V;
    let mut out = Vec::new();
    let r = curve.rates();
    if r.len() < 2 {
        out.push(Violation::new(
            V::EmptyCurve,
            Some(k),
            None,
            "buffer must hold at least one job".into(),
        ));
        return out;
    }
    for (i, &x) in r.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            out.push(Violation::new(
                V::RateNonFinite,
                Some(k),
                Some(i),
                format!("rate {x} must be finite and nonnegative"),
            ));
        }
    }
    if r[0] != 0.0 {
        out.push(Violation::new(
            V::IdleRate,
            Some(k),
            Some(0),
            format!("empty queues cannot serve, got mu_0 = {}", r[0]),
        ));
    }
    for i in 1..r.len() - 1 {
        if r[i] > r[i + 1] * (1.0 + RATE_TOL) {
            out.push(Violation::new(
                V::TotalRateDecreasing,
                Some(k),
                Some(i),
                format!("mu_{i} = {} > mu_{} = {}", r[i], i + 1, r[i + 1]),
            ));
        }
        let here = r[i] / i as f64;
        let next = r[i + 1] / (i + 1) as f64;
        if here < next * (1.0 - RATE_TOL) {
            out.push(Violation::new(
                V::PerJobRateIncreasing,
                Some(k),
                Some(i),
                format!("per-job rate rises from {here} to {next}"),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_curve() -> ServiceRateCurve {
        ServiceRateCurve::from_busy_rates(&[1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.5, 1.5, 1.5, 1.5])
    }

    #[test]
    fn ramp_is_valid() {
        let spec = ClusterSpec::new(1.25, vec![ServerType::new(1.0, ramp_curve())]);
        assert!(validate(&spec, &Policy::random()).is_empty());
        assert_eq!(spec.types[0].buffer(), 10);
    }

    #[test]
    fn stability_is_strict() {
        let spec = ClusterSpec::new(
            1.5,
            vec![ServerType::new(1.0, ServiceRateCurve::constant(1.5, 10))],
        );
        let v = validate(&spec, &Policy::random());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Stability);
    }

    #[test]
    fn decreasing_total_rate_is_flagged_at_index() {
        let spec = ClusterSpec::new(
            0.5,
            vec![ServerType::new(
                1.0,
                ServiceRateCurve::new(vec![0.0, 1.0, 0.9]),
            )],
        );
        let v = validate(&spec, &Policy::random());
        let hit = v
            .iter()
            .find(|x| x.kind == ViolationKind::TotalRateDecreasing)
            .expect("monotonicity violation");
        assert_eq!(hit.index, Some(1));
        assert_eq!(hit.server_type, Some(0));
    }

    #[test]
    fn superlinear_rate_curve_is_rejected() {
        let spec = ClusterSpec::new(
            0.5,
            vec![ServerType::new(
                1.0,
                ServiceRateCurve::new(vec![0.0, 1.0, 2.5]),
            )],
        );
        let v = validate(&spec, &Policy::random());
        assert!(v
            .iter()
            .any(|x| x.kind == ViolationKind::PerJobRateIncreasing));
    }

    #[test]
    fn jbt_requires_every_threshold() {
        let spec = ClusterSpec::new(
            1.25,
            vec![
                ServerType::new(0.5, ramp_curve()).with_mpl(5),
                ServerType::new(0.5, ramp_curve()),
            ],
        );
        let v = validate(&spec, &Policy::jbt());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::MplMissing);
        assert_eq!(v[0].server_type, Some(1));
    }

    #[test]
    fn mpl_beyond_buffer_is_rejected() {
        let spec = ClusterSpec::new(
            0.5,
            vec![ServerType::new(1.0, ServiceRateCurve::constant(1.0, 3)).with_mpl(4)],
        );
        assert!(validate(&spec, &Policy::random())
            .iter()
            .any(|x| x.kind == ViolationKind::MplRange));
    }

    #[test]
    fn gamma_sum_and_control() {
        let spec = ClusterSpec::new(
            0.5,
            vec![
                ServerType::new(0.5, ServiceRateCurve::constant(1.0, 3)),
                ServerType::new(0.4, ServiceRateCurve::constant(1.0, 3)),
            ],
        );
        let kinds: Vec<_> = validate(&spec, &Policy::jsqd(0).with_control(0.0))
            .into_iter()
            .map(|v| v.kind)
            .collect();
        assert!(kinds.contains(&ViolationKind::GammaSum));
        assert!(kinds.contains(&ViolationKind::JsqdChoices));
        assert!(kinds.contains(&ViolationKind::ControlRange));
    }

    #[test]
    fn policy_names_round_trip() {
        for k in [
            PolicyKind::Random,
            PolicyKind::Jiq,
            PolicyKind::Jsq,
            PolicyKind::JsqD(2),
            PolicyKind::JsqD(100),
            PolicyKind::Jbt,
        ] {
            assert_eq!(PolicyKind::parse(&k.name()), Some(k));
        }
        assert_eq!(PolicyKind::parse("JSQ(5)"), Some(PolicyKind::JsqD(5)));
        assert_eq!(PolicyKind::parse("jsq2"), Some(PolicyKind::JsqD(2)));
        assert_eq!(PolicyKind::parse("round-robin"), None);
    }

    #[test]
    fn occupancy_check_catches_mass_drift() {
        let spec = ClusterSpec::new(1.25, vec![ServerType::new(1.0, ramp_curve())]);
        let mut x = Occupancy::empty(&spec);
        assert!(x.check(&spec, 1e-12).is_empty());
        x.per_type[0][0] = 0.9;
        assert_eq!(x.check(&spec, 1e-12)[0].kind, ViolationKind::OccupancyMass);
    }
}
