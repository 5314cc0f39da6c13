//! Mean-field analysis and discrete-event simulation of queue-length-based
//! load balancing in heterogeneous server clusters.
//!
//! The pipeline runs from a [`ClusterSpec`] and [`Policy`] to transient
//! trajectories ([`ode`], [`sim`]), stationary distributions ([`stationary`])
//! and system-time means and distributions ([`systemtime`]).

pub mod config;
pub mod dispatch;
pub mod error;
pub mod io;
pub mod model;
pub mod ode;
pub mod sim;
pub mod stationary;
pub mod systemtime;

pub use config::{parse_config, Config, RunParams};
pub use dispatch::{field, sample_target, DispatchField, FiniteCluster, Target};
pub use error::{Error, Result};
pub use model::{
    validate, ClusterSpec, Occupancy, Policy, PolicyKind, ServerType, ServiceRateCurve, Trajectory,
    Violation, ViolationKind,
};
pub use num_complex::Complex64;
pub use sim::{replicate, run, SimOutput, SimParams, SojournSample};
pub use stationary::{little, solve, LittleTimes, Regime, StationaryReport};
pub use systemtime::{laplace_eval, mean_sojourn, SojournLaplace, SojournMean};
