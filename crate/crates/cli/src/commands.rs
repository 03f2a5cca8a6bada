//! The three subcommands. Each returns `Ok(true)` on success, `Ok(false)` when
//! a check fails or an evolution stops early, and `Err` on configuration or
//! I/O problems.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use frobkit_core::checks::{by_suite, CheckRecord};
use frobkit_core::coords::{flat_coordinate, DensityIndex};
use frobkit_core::geometry::{flat_field, flat_metric_entry, metric, CoordIndex};
use frobkit_core::hierarchy::{evolve_observed, hamiltonian, FlowIndex, HamiltonianIndex, HierarchyError, LoopField, LoopFunctional};
use frobkit_core::manifold::{random_point, validate, Point};
use num_complex::Complex64 as C64;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// verify

#[derive(Serialize)]
struct Summary {
    total: usize,
    passed: usize,
    failed: usize,
    failed_ids: Vec<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    version: &'static str,
    config: &'a RunConfig,
    summary: Summary,
    records: Vec<CheckRecord>,
}

pub fn verify(cfg: &RunConfig, quiet: bool) -> Result<bool> {
    let records = cfg.battery().run(&cfg.suites());
    let failed_ids: Vec<String> = records.iter().filter(|r| !r.pass).map(|r| r.id.clone()).collect();
    if !quiet {
        for (suite, recs) in by_suite(&records) {
            let ok = recs.iter().all(|r| r.pass);
            println!("{} {suite}", if ok { "PASS" } else { "FAIL" });
            for r in recs {
                let err = r.error.as_deref().map(|e| format!("  ({e})")).unwrap_or_default();
                println!("  {:<4} {:<40} {:>10.3e} <= {:.1e}{err}", if r.pass { "ok" } else { "FAIL" }, r.id, r.measured, r.tolerance);
            }
        }
    }
    let summary = Summary { total: records.len(), passed: records.len() - failed_ids.len(), failed: failed_ids.len(), failed_ids };
    println!("{} checks, {} passed, {} failed", summary.total, summary.passed, summary.failed);
    let ok = summary.failed == 0;
    write_json(&cfg.out_dir, "report.json", &Report { version: VERSION, config: cfg, summary, records })?;
    Ok(ok)
}

// ---------------------------------------------------------------------------
// evolve

pub struct EvolveArgs {
    pub flow: FlowIndex,
    pub dt: f64,
    pub steps: usize,
    pub amplitude: f64,
    pub snapshot_every: usize,
}

#[derive(Serialize)]
struct Snapshot {
    step: usize,
    time: f64,
    points: Vec<Point>,
}

fn push_complex(row: &mut Vec<String>, v: C64) {
    row.push(format!("{:e}", v.re));
    row.push(format!("{:e}", v.im));
}

pub fn evolve(cfg: &RunConfig, args: &EvolveArgs) -> Result<bool> {
    let (m, n) = (cfg.m, cfg.n);
    args.flow.check(m, n).context("flow")?;
    anyhow::ensure!(args.dt.is_finite() && args.dt != 0.0, "dt must be finite and nonzero");
    let start = random_point(&cfg.params(), cfg.seed).context("initial point")?;
    let lf = LoopField::perturbed(&start, cfg.grid_size, args.amplitude, cfg.seed).context("initial loop")?;

    let hams: Vec<HamiltonianIndex> = (1..=2 * m).map(HamiltonianIndex::H).chain((1..=2 * n).map(HamiltonianIndex::Hhat)).collect();
    let dens: Vec<DensityIndex> = (0..cfg.max_level)
        .flat_map(|p| CoordIndex::all(m, n, -2..=2).into_iter().map(move |u| DensityIndex::new(u, p)))
        .collect();
    let mut header = vec!["step".to_string(), "time".to_string()];
    let cols = hams.iter().map(|h| h.to_string()).chain(dens.iter().map(|d| format!("int_theta[{},{}]", d.u, d.p)));
    for c in cols {
        header.push(format!("{c}.re"));
        header.push(format!("{c}.im"));
    }

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let csv_path = cfg.out_dir.join("timeseries.csv");
    let mut wtr = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    wtr.write_record(&header)?;
    wtr.flush()?;

    let every = args.snapshot_every.max(1);
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut last: Option<Snapshot> = None;
    let mut io_error: Option<anyhow::Error> = None;
    let mut completed = 0;
    let outcome = evolve_observed(&lf, args.flow, args.dt, args.steps, |step, time, cur| {
        let mut row = vec![step.to_string(), format!("{time:e}")];
        for &h in &hams {
            push_complex(&mut row, hamiltonian(cur, h)?);
        }
        for &d in &dens {
            push_complex(&mut row, LoopFunctional::theta(d).value(cur)?);
        }
        if let Err(e) = wtr.write_record(&row).and_then(|_| wtr.flush().map_err(Into::into)) {
            io_error = Some(e.into());
            return Err(HierarchyError::Unsupported("output error".into()));
        }
        completed = step;
        let snap = Snapshot { step, time, points: cur.nodes.clone() };
        if step % every == 0 || step == args.steps {
            snapshots.push(snap);
        } else {
            last = Some(snap);
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let error = outcome.err().map(|e| e.to_string());
    if error.is_some() {
        // keep the last state reached
        if let Some(s) = last.filter(|s| snapshots.last().map_or(true, |t| t.step < s.step)) {
            snapshots.push(s);
        }
    }
    write_json(&cfg.out_dir, "snapshots.json", &snapshots)?;
    let status = if error.is_none() { "complete" } else { "partial" };
    write_json(
        &cfg.out_dir,
        "evolve.json",
        &json!({
            "version": VERSION,
            "config": cfg,
            "flow": args.flow.to_string(),
            "dt": args.dt,
            "amplitude": args.amplitude,
            "steps_requested": args.steps,
            "steps_completed": completed,
            "status": status,
            "error": error,
        }),
    )?;
    match &error {
        None => println!("{}: {} steps of {} written to {}", args.flow, completed, args.dt, cfg.out_dir.display()),
        Some(e) => eprintln!("{}: stopped after {completed} of {} steps: {e}", args.flow, args.steps),
    }
    Ok(error.is_none())
}

// ---------------------------------------------------------------------------
// flat

#[derive(Serialize)]
struct Coordinate {
    name: String,
    index: i64,
    value: C64,
}

pub fn flat(cfg: &RunConfig, point: Option<&Path>, t_cap: i64) -> Result<bool> {
    anyhow::ensure!(t_cap >= 0, "t_cap must be non-negative");
    let pt = match point {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let p: Point = serde_json::from_str(&text).with_context(|| format!("parsing point {}", path.display()))?;
            p.with_samples(cfg.n_samples)
        }
        None => random_point(&cfg.params(), cfg.seed).context("random point")?,
    };
    let report = validate(&pt);
    if !report.passed() {
        write_json(&cfg.out_dir, "flat.json", &json!({ "version": VERSION, "valid": false, "validation": report }))?;
        eprintln!("invalid point: {}", report.failures().join(", "));
        return Ok(false);
    }
    let (m, n, s) = (pt.m, pt.n, pt.s);
    let index = CoordIndex::all(m, n, -t_cap..=t_cap);
    let mut t = Vec::new();
    let mut h = Vec::new();
    let mut hh = Vec::new();
    for &u in &index {
        let value = flat_coordinate(&pt, u)?;
        let (list, i) = match u {
            CoordIndex::T(i) => (&mut t, i),
            CoordIndex::H(j) => (&mut h, j),
            CoordIndex::Hhat(k) => (&mut hh, k),
        };
        list.push(Coordinate { name: u.to_string(), index: i, value });
    }
    let fields = index.iter().map(|&u| flat_field(&pt, u)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut gram = Vec::new();
    let mut deviation: f64 = 0.0;
    for (a, fa) in index.iter().zip(&fields) {
        let mut row = Vec::new();
        for (b, fb) in index.iter().zip(&fields) {
            let g = metric(&pt, fa, fb)?;
            deviation = deviation.max((g - flat_metric_entry(*a, *b, m, n, s)).norm());
            row.push(g);
        }
        gram.push(row);
    }
    write_json(
        &cfg.out_dir,
        "flat.json",
        &json!({
            "version": VERSION,
            "valid": true,
            "params": { "m": m, "n": n, "s": s, "tail_depth": pt.tail_depth, "n_samples": pt.n_samples() },
            "phi": pt.phi,
            "t": t,
            "h": h,
            "hhat": hh,
            "gram": { "index": index.iter().map(|u| u.to_string()).collect::<Vec<_>>(), "matrix": gram },
            "gram_deviation": deviation,
        }),
    )?;
    println!("flat coordinates at ({m},{n},{s}) written to {}; Gram deviation {deviation:.2e}", cfg.out_dir.join("flat.json").display());
    Ok(true)
}
