//! JSON configuration: cluster, policy and run parameters in one document.
//!
//! ```json
//! {
//!   "lambda": 1.25,
//!   "types": [{ "gamma": 1.0, "mu": [1.0, 1.1, 1.2], "mpl": 2 }],
//!   "policy": { "kind": "jsqd", "d": 2, "p": 1.0 },
//!   "run": { "n_servers": 1000, "horizon": 200.0, "dt": 0.001, "seed": 7, "sample_interval": 1.0 }
//! }
//! ```
//!
//! `mu` starts at `mu_1`; the zero rate of an empty queue is implicit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, ClusterSpec, Policy, PolicyKind, ServerType, ServiceRateCurve};

/// Largest deviation of `sum(gamma)` from one that is silently renormalized.
pub const GAMMA_RENORMALIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_servers: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
}

fn default_horizon() -> f64 {
    100.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_sample_interval() -> f64 {
    1.0
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            n_servers: None,
            horizon: default_horizon(),
            dt: default_dt(),
            seed: None,
            sample_interval: default_sample_interval(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypeDoc {
    gamma: f64,
    mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mpl: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    lambda: f64,
    types: Vec<TypeDoc>,
    policy: PolicyDoc,
    #[serde(default)]
    run: RunParams,
}

/// A parsed and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub spec: ClusterSpec,
    pub policy: Policy,
    pub run: RunParams,
}

impl Config {
    pub fn new(spec: ClusterSpec, policy: Policy, run: RunParams) -> Self {
        Self { spec, policy, run }
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_config(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = ConfigDoc {
            lambda: self.spec.lambda,
            types: self
                .spec
                .types
                .iter()
                .map(|t| TypeDoc {
                    gamma: t.gamma,
                    mu: t.curve.busy_rates().to_vec(),
                    mpl: t.mpl,
                })
                .collect(),
            policy: policy_doc(&self.policy),
            run: self.run.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("config serializes")
    }
}

fn policy_doc(p: &Policy) -> PolicyDoc {
    let (kind, d) = match p.kind {
        PolicyKind::Random => ("random", None),
        PolicyKind::Jiq => ("jiq", None),
        PolicyKind::Jsq => ("jsq", None),
        PolicyKind::JsqD(d) => ("jsqd", Some(d)),
        PolicyKind::Jbt => ("jbt", None),
    };
    PolicyDoc {
        kind: kind.into(),
        d,
        p: (p.control != 1.0).then_some(p.control),
    }
}

fn parse_policy(doc: &PolicyDoc) -> Result<Policy> {
    let kind = match (doc.kind.to_ascii_lowercase().as_str(), doc.d) {
        ("jsqd", Some(d)) => PolicyKind::JsqD(d),
        ("jsqd", None) => {
            return Err(Error::InvalidArgument("policy kind jsqd needs d".into()));
        }
        (name, None) => PolicyKind::parse(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy kind {name:?}")))?,
        (name, Some(_)) => {
            return Err(Error::InvalidArgument(format!(
                "policy kind {name:?} does not take d"
            )));
        }
    };
    Ok(Policy {
        kind,
        control: doc.p.unwrap_or(1.0),
    })
}

/// Parses and validates a JSON configuration.
pub fn parse_config(text: &str) -> Result<Config> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut types: Vec<ServerType> = doc
        .types
        .iter()
        .map(|t| ServerType {
            gamma: t.gamma,
            curve: ServiceRateCurve::from_busy_rates(&t.mu),
            mpl: t.mpl,
        })
        .collect();

    let sum: f64 = types.iter().map(|t| t.gamma).sum();
    let dev = (sum - 1.0).abs();
    if dev > 0.0 && dev < GAMMA_RENORMALIZE_TOL {
        for t in &mut types {
            t.gamma /= sum;
        }
    }

    let spec = ClusterSpec::new(doc.lambda, types);
    let policy = parse_policy(&doc.policy)?;
    let violations = validate(&spec, &policy);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(Config {
        spec,
        policy,
        run: doc.run,
    })
}
