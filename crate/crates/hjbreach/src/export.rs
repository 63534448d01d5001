//! Text exports: contour polylines, trajectories, oracle tables and reports.

use std::io;

use hjbreach_core::control::VerificationReport;
use hjbreach_core::oracle::ComparisonStats;
use hjbreach_core::solver::SolveReport;
use hjbreach_core::{LevelSetContour, OracleResult, Trajectory};
use serde_json::{json, Value};

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn contour_json(c: &LevelSetContour) -> Value {
    json!({
        "threshold": c.threshold,
        "slice": c.fixed.iter().map(|(d, v)| json!({"dim": d, "value": v})).collect::<Vec<_>>(),
        "polylines": c.polylines,
    })
}

/// One row per point: `x,y,polyline_id`.
pub fn contour_csv(c: &LevelSetContour) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "polyline_id"]).map_err(csv_err)?;
    for (id, line) in c.polylines.iter().enumerate() {
        for p in line {
            w.write_record([p[0].to_string(), p[1].to_string(), id.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// Columns `t, s0.., u0.., running`; the control on a row is the one applied
/// from that state, so the final row leaves it empty.
pub fn trajectory_csv(t: &Trajectory) -> io::Result<Vec<u8>> {
    let n = t.states.first().map_or(0, Vec::len);
    let m = t.controls.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("s{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("running".into());
    w.write_record(&header).map_err(csv_err)?;
    for (k, s) in t.states.iter().enumerate() {
        let mut row = vec![t.times[k].to_string()];
        row.extend(s.iter().map(f64::to_string));
        match t.controls.get(k) {
            Some(u) => row.extend(u.iter().map(f64::to_string)),
            None => row.extend((0..m).map(|_| String::new())),
        }
        row.push(t.running[k].to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn trajectory_summary(t: &Trajectory) -> Value {
    json!({
        "steps": t.controls.len(),
        "reached_target": t.reached_target,
        "first_hit_time": t.first_hit_time,
        "accumulated_cost": t.accumulated_cost,
        "exited_domain": t.exited_domain,
    })
}

/// Columns `s0.., j_star, hit_step, sequences`; `j_star` is empty when no
/// sequence hits within the horizon.
pub fn oracle_csv(results: &[OracleResult]) -> io::Result<Vec<u8>> {
    let n = results.first().map_or(0, |r| r.start.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    header.extend(["j_star", "hit_step", "sequences"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let mut row: Vec<String> = r.start.iter().map(f64::to_string).collect();
        row.push(r.cost.map_or_else(String::new, |c| c.to_string()));
        row.push(r.hit_step.map_or_else(String::new, |k| k.to_string()));
        row.push(r.sequences.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn verification_json(r: &VerificationReport) -> Value {
    json!({
        "band_cells": r.band_cells,
        "cost_tolerance": r.cost_tolerance,
        "levels": r.levels.iter().map(|l| json!({
            "level": l.level,
            "samples": l.samples,
            "predicted_inside": l.predicted_inside,
            "excluded_band": l.excluded_band,
            "successes": l.successes,
            "success_rate": l.success_rate(),
            "failures": l.failures.iter().map(|f| json!({
                "sample": f.sample,
                "state": f.state,
                "value": f.value,
                "margin": f.margin,
                "reached": f.reached,
                "cost": f.cost,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

pub fn comparison_json(s: &ComparisonStats, tolerance: f64) -> Value {
    json!({
        "probes": s.points.len(),
        "mean_abs_error": s.mean_abs_error,
        "max_abs_error": s.max_abs_error,
        "error_tolerance": tolerance,
        "fraction_within_tolerance": s.fraction_within(tolerance),
        "agreement": s.agreement.iter().map(|a| json!({
            "threshold": a.threshold,
            "compared": a.compared,
            "agreed": a.agreed,
            "excluded_band": a.excluded,
            "rate": a.rate(),
        })).collect::<Vec<_>>(),
        "points": s.points.iter().map(|p| json!({
            "state": p.state,
            "field": p.field_value,
            "oracle": p.oracle,
            "error": p.error,
        })).collect::<Vec<_>>(),
    })
}

/// Per-step statistics without wall times, which go to a separate file.
pub fn solve_report_json(r: &SolveReport) -> Value {
    json!({
        "field_digest": r.field_digest,
        "steps": r.steps.iter().map(|s| json!({
            "step": s.step,
            "max": s.max,
            "min": s.min,
            "changed": s.changed,
        })).collect::<Vec<_>>(),
    })
}

pub fn step_timings_json(r: &SolveReport) -> Value {
    json!(r.steps.iter().map(|s| s.wall_time_secs).collect::<Vec<_>>())
}
