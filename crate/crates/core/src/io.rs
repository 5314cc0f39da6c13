//! CSV and JSON output.
//!
//! Floats are written with 17 significant digits so that files round-trip
//! exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Result;
use crate::model::{ClusterSpec, Trajectory};
use crate::sim::{SimOutput, SojournSample};
use crate::stationary::StationaryReport;
use crate::systemtime::ilt::IltSample;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows `t,k,i,fraction`.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "k", "i", "fraction"])?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        for (k, v) in x.per_type.iter().enumerate() {
            for (i, f) in v.iter().enumerate() {
                out.write_record([fmt_f64(*t), k.to_string(), i.to_string(), fmt_f64(*f)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Rows `arrival,departure,type,length_seen`.
pub fn write_sojourns<W: Write>(w: W, samples: &[SojournSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["arrival", "departure", "type", "length_seen"])?;
    for s in samples {
        out.write_record([
            fmt_f64(s.arrival),
            fmt_f64(s.departure),
            s.server_type.to_string(),
            s.length_seen.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row of arrival and loss counts after the burn-in.
pub fn write_loss<W: Write>(w: W, sim: &SimOutput) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["arrivals", "losses", "loss_prob", "in_flight"])?;
    out.write_record([
        sim.arrivals_measured.to_string(),
        sim.losses_measured.to_string(),
        fmt_f64(sim.loss_fraction()),
        sim.in_flight.to_string(),
    ])?;
    out.flush()?;
    Ok(())
}

/// Rows `t,density`.
pub fn write_density<W: Write>(w: W, samples: &[IltSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "density"])?;
    for s in samples {
        out.write_record([fmt_f64(s.t), fmt_f64(s.value)])?;
    }
    out.flush()?;
    Ok(())
}

/// Summary of an inverted system-time distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistSummary {
    pub mean: f64,
    pub loss_prob: f64,
    /// `H~(0) + loss_prob`, which should be one.
    pub mass_check: f64,
    pub method: String,
    pub nodes: usize,
    /// Times where the inversion is unreliable.
    pub flagged: Vec<f64>,
}

/// Stationary report alongside the cluster it belongs to, in the config
/// file's vocabulary.
pub fn report_json(spec: &ClusterSpec, report: &StationaryReport) -> serde_json::Value {
    let types: Vec<_> = spec
        .types
        .iter()
        .map(|t| {
            let mut v = json!({ "gamma": t.gamma, "mu": t.curve.busy_rates() });
            if let Some(m) = t.mpl {
                v["mpl"] = json!(m);
            }
            v
        })
        .collect();
    json!({
        "lambda": spec.lambda,
        "types": types,
        "policy": report.policy,
        "regime": report.regime,
        "nu": report.nu.per_type,
        "z0": report.z0,
        "i0": report.i0,
        "loss_prob": report.loss_prob,
        "lambda_eff": report.lambda_eff,
    })
}
