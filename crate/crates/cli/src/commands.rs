use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lbmf_core::io::{
    fmt_f64, write_density, write_loss, write_sojourns, write_trajectory, DistSummary,
};
use lbmf_core::ode;
use lbmf_core::systemtime::ilt::{invert, TALBOT_NODES};
use lbmf_core::{
    little, mean_sojourn, replicate, run, solve, validate as check, ClusterSpec, Complex64, Config,
    Occupancy, Policy, PolicyKind, SimParams, SojournLaplace,
};
use serde_json::json;

use crate::Common;

const DEFAULT_N: usize = 1000;

/// Config with command-line overrides applied.
struct Setup {
    cfg: Config,
    seed: u64,
}

fn load(common: &Common) -> Result<Setup> {
    let mut cfg = Config::from_path(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(name) = &common.policy {
        let kind = parse_kind(name)?;
        cfg.policy = Policy::new(kind).with_control(cfg.policy.control);
        let violations = check(&cfg.spec, &cfg.policy);
        if !violations.is_empty() {
            return Err(lbmf_core::Error::Validation(violations).into());
        }
    }
    let seed = common.seed.or(cfg.run.seed).unwrap_or(0);
    Ok(Setup { cfg, seed })
}

fn parse_kind(name: &str) -> Result<PolicyKind> {
    PolicyKind::parse(name)
        .ok_or_else(|| lbmf_core::Error::InvalidArgument(format!("unknown policy {name:?}")).into())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(lbmf_core::Error::from)?;
    let path = dir.join(name);
    let file = File::create(&path)
        .map_err(lbmf_core::Error::from)
        .with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn sim_params(s: &Setup, n: Option<usize>) -> SimParams {
    let n = n.or(s.cfg.run.n_servers).unwrap_or(DEFAULT_N);
    SimParams::new(n, s.cfg.run.horizon, s.cfg.run.sample_interval, s.seed)
}

pub fn transient(common: &Common, overlay_sim: bool, n: Option<usize>) -> Result<()> {
    let s = load(common)?;
    let (spec, policy, run_params) = (&s.cfg.spec, &s.cfg.policy, &s.cfg.run);
    let mf = ode::integrate(
        spec,
        policy,
        &Occupancy::empty(spec),
        run_params.horizon,
        run_params.dt,
        run_params.sample_interval,
    )?;
    write_trajectory(create(&common.out, "mf.csv")?, &mf)?;
    if overlay_sim {
        let out = run(spec, policy, &sim_params(&s, n))?;
        write_trajectory(create(&common.out, "sim.csv")?, &out.trajectory)?;
        write_loss(create(&common.out, "sim_loss.csv")?, &out)?;
    }
    Ok(())
}

enum Size {
    Finite(usize),
    Limit,
}

fn parse_size(s: &str) -> Result<Size> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") {
        return Ok(Size::Limit);
    }
    match t.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Size::Finite(n)),
        _ => Err(lbmf_core::Error::InvalidArgument(format!("bad cluster size {s:?}")).into()),
    }
}

/// Overall and per-type values of one table cell.
struct Cell {
    overall: String,
    per_type: Vec<String>,
}

impl Cell {
    fn failed(msg: String, types: usize) -> Self {
        let text = format!("error: {msg}");
        Cell {
            overall: text.clone(),
            per_type: vec![text; types],
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn limit_cell(spec: &ClusterSpec, policy: &Policy) -> Cell {
    let k = spec.types.len();
    let r = match solve(spec, policy).and_then(|r| mean_sojourn(spec, &r)) {
        Ok(r) => r,
        Err(e) => return Cell::failed(e.to_string(), k),
    };
    Cell {
        overall: fmt_f64(r.overall),
        per_type: r.per_type.iter().map(|&h| opt(h)).collect(),
    }
}

fn mean_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn sim_cell(spec: &ClusterSpec, policy: &Policy, params: &SimParams, reps: usize) -> (Cell, Cell) {
    let k = spec.types.len();
    let outs = match replicate(spec, policy, params, reps) {
        Ok(o) => o,
        Err(e) => {
            return (
                Cell::failed(e.to_string(), k),
                Cell::failed(e.to_string(), k),
            )
        }
    };
    let summarize = |xs: Vec<f64>| {
        if xs.is_empty() {
            (String::new(), String::new())
        } else {
            let (m, se) = mean_se(&xs);
            (fmt_f64(m), opt(se))
        }
    };
    let (mean, se) = summarize(
        outs.iter()
            .map(|o| o.mean_sojourn())
            .filter(|x| x.is_finite())
            .collect(),
    );
    let per: Vec<(String, String)> = (0..k)
        .map(|t| summarize(outs.iter().filter_map(|o| o.mean_sojourn_type(t)).collect()))
        .collect();
    (
        Cell {
            overall: mean,
            per_type: per.iter().map(|p| p.0.clone()).collect(),
        },
        Cell {
            overall: se,
            per_type: per.into_iter().map(|p| p.1).collect(),
        },
    )
}

pub fn table(
    common: &Common,
    policies: &[String],
    sizes: &[String],
    replications: usize,
) -> Result<()> {
    if replications == 0 {
        bail!(lbmf_core::Error::InvalidArgument(
            "replications must be at least 1".into()
        ));
    }
    let s = load(common)?;
    let spec = &s.cfg.spec;
    let policies: Vec<Policy> = match &common.policy {
        Some(_) => vec![s.cfg.policy],
        None => policies
            .iter()
            .map(|p| parse_kind(p).map(Policy::new))
            .collect::<Result<_>>()?,
    };
    let sizes: Vec<Size> = sizes.iter().map(|x| parse_size(x)).collect::<Result<_>>()?;

    let mut header = vec!["policy".to_string(), "type".to_string()];
    for size in &sizes {
        match size {
            Size::Finite(n) => {
                header.push(format!("n={n}"));
                header.push(format!("n={n}_se"));
            }
            Size::Limit => header.push("n=inf".into()),
        }
    }
    let k = spec.types.len();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for policy in &policies {
        let mut columns: Vec<Cell> = Vec::new();
        for size in &sizes {
            match *size {
                Size::Limit => columns.push(limit_cell(spec, policy)),
                Size::Finite(n) => {
                    let params =
                        SimParams::new(n, s.cfg.run.horizon, s.cfg.run.sample_interval, s.seed);
                    let (m, se) = sim_cell(spec, policy, &params, replications);
                    columns.push(m);
                    columns.push(se);
                }
            }
        }
        let mut row = vec![policy.name(), "all".into()];
        row.extend(columns.iter().map(|c| c.overall.clone()));
        rows.push(row);
        if k > 1 {
            for t in 0..k {
                let mut row = vec![policy.name(), t.to_string()];
                row.extend(columns.iter().map(|c| c.per_type[t].clone()));
                rows.push(row);
            }
        }
    }
    let mut w = csv_writer(create(&common.out, "table.csv")?);
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(lbmf_core::Error::from)?;
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

pub fn dist(
    common: &Common,
    t_max: f64,
    t_step: f64,
    bin: f64,
    overlay_sim: bool,
    n: Option<usize>,
) -> Result<()> {
    if !(t_step > 0.0 && t_max > t_step && bin > 0.0) {
        bail!(lbmf_core::Error::InvalidArgument(
            "need 0 < t-step < t-max and bin > 0".into()
        ));
    }
    let s = load(common)?;
    let (spec, policy) = (&s.cfg.spec, &s.cfg.policy);
    if spec.max_buffer() > 10 {
        eprintln!("warning: buffers above 10 make the transform evaluation slow and less accurate");
    }
    let report = solve(spec, policy)?;
    let lt = SojournLaplace::new(spec, &report)?;
    let steps = (t_max / t_step).round() as usize;
    let grid: Vec<f64> = (1..=steps).map(|j| j as f64 * t_step).collect();
    let samples = invert(|z| lt.eval_normalized(z), &grid)?;
    write_density(create(&common.out, "density.csv")?, &samples)?;

    let mass = lt.eval(Complex64::new(0.0, 0.0)).re;
    let summary = DistSummary {
        mean: lt.mean(),
        loss_prob: report.loss_prob,
        mass_check: mass + report.loss_prob,
        method: "talbot".into(),
        nodes: TALBOT_NODES,
        flagged: samples.iter().filter(|x| x.flagged).map(|x| x.t).collect(),
    };
    if !summary.flagged.is_empty() {
        eprintln!(
            "warning: {} density samples flagged as unreliable",
            summary.flagged.len()
        );
    }
    let mut w = create(&common.out, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(lbmf_core::Error::from)?;
    writeln!(w).map_err(lbmf_core::Error::from)?;

    if overlay_sim {
        let out = run(spec, policy, &sim_params(&s, n))?;
        write_sojourns(create(&common.out, "sojourns.csv")?, &out.sojourns)?;
        write_histogram(
            create(&common.out, "histogram.csv")?,
            out.sojourns.iter().map(|x| x.duration()),
            t_max,
            bin,
        )?;
    }
    Ok(())
}

/// Rows `bin_lo,bin_hi,density` over `[0, t_max]`, normalized by all samples
/// so that it is comparable with the conditional density.
fn write_histogram<W: Write>(
    w: W,
    xs: impl Iterator<Item = f64>,
    t_max: f64,
    bin: f64,
) -> Result<()> {
    let bins = (t_max / bin).ceil() as usize;
    let mut counts = vec![0u64; bins];
    let mut total = 0u64;
    for x in xs {
        total += 1;
        let j = (x / bin) as usize;
        if j < bins {
            counts[j] += 1;
        }
    }
    let mut out = csv_writer(w);
    out.write_record(["bin_lo", "bin_hi", "density"])?;
    for (j, &c) in counts.iter().enumerate() {
        let d = if total > 0 {
            c as f64 / (total as f64 * bin)
        } else {
            0.0
        };
        out.write_record([
            fmt_f64(j as f64 * bin),
            fmt_f64((j + 1) as f64 * bin),
            fmt_f64(d),
        ])?;
    }
    out.flush().map_err(lbmf_core::Error::from)?;
    Ok(())
}

pub fn jsqd_sweep(common: &Common, ds: &[u32]) -> Result<()> {
    if ds.contains(&0) {
        bail!(lbmf_core::Error::InvalidArgument(
            "d must be at least 1".into()
        ));
    }
    let s = load(common)?;
    let spec = &s.cfg.spec;
    let r = &s.cfg.run;
    let empty = Occupancy::empty(spec);
    let traj = |p: &Policy| ode::integrate(spec, p, &empty, r.horizon, r.dt, r.sample_interval);
    let jsq = traj(&Policy::jsq())?;
    write_trajectory(create(&common.out, "jsq.csv")?, &jsq)?;
    let mut w = csv_writer(create(&common.out, "sweep.csv")?);
    w.write_record(["d", "sup_distance"])?;
    for &d in ds {
        let t = traj(&Policy::jsqd(d))?;
        write_trajectory(create(&common.out, &format!("jsqd_{d}.csv"))?, &t)?;
        w.write_record([d.to_string(), fmt_f64(t.sup_distance(&jsq))])?;
    }
    w.flush().map_err(lbmf_core::Error::from)?;
    Ok(())
}

pub fn stationary(common: &Common) -> Result<()> {
    let s = load(common)?;
    let (spec, policy) = (&s.cfg.spec, &s.cfg.policy);
    let report = solve(spec, policy)?;
    let mut doc = lbmf_core::io::report_json(spec, &report);
    let l = little(spec, &report);
    doc["little"] = json!({ "overall": l.overall, "per_type": l.per_type });
    match mean_sojourn(spec, &report) {
        Ok(h) => doc["mean_sojourn"] = json!({ "overall": h.overall, "per_type": h.per_type }),
        Err(e) => doc["mean_sojourn"] = json!({ "error": e.to_string() }),
    }
    let text = serde_json::to_string_pretty(&doc).map_err(lbmf_core::Error::from)?;
    println!("{text}");
    let mut w = create(&common.out, "stationary.json")?;
    writeln!(w, "{text}").map_err(lbmf_core::Error::from)?;
    Ok(())
}

pub fn validate(config: &PathBuf) -> Result<()> {
    let cfg = Config::from_path(config).with_context(|| format!("reading {}", config.display()))?;
    println!(
        "ok: {} type(s), lambda {}, policy {}",
        cfg.spec.types.len(),
        cfg.spec.lambda,
        cfg.policy.name()
    );
    Ok(())
}
