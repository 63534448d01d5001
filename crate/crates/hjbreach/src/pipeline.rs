//! Staged execution of a resolved run: solve, extract, verify, compare.
//!
//! Every stage writes into the run directory `<output_dir>/<config digest>`
//! and registers its files. [`Pipeline::finish`] writes `manifest.json`
//! listing each artifact with its SHA-256; files holding wall-clock timings
//! are flagged volatile and carry no digest, so identical configurations
//! produce identical manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hjbreach_core::analysis::{extract_contours, mask, slice, Mask};
use hjbreach_core::control::{verify_region, VerificationReport, VerifySettings};
use hjbreach_core::oracle::{brute_force_value, compare_field, ComparisonStats, OracleSettings};
use hjbreach_core::solver::{solve_with_clock, WallClock};
use hjbreach_core::{GridSpec, LevelSetContour, OracleResult, ValueField};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{FixedDim, Resolved};
use crate::error::{ConfigError, FormatError, RunError};
use crate::export;
use crate::format::{self, sidecar_path};

pub const FIELD_FILE: &str = "field.rchf";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    /// Digest and size are left out for volatile files such as timings.
    pub sha256: Option<String>,
    pub bytes: Option<u64>,
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Results of the extract stage.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub contours: Vec<LevelSetContour>,
    pub masks: Vec<Mask>,
    /// Nodes in mask `i` missing from mask `i + 1`.
    pub nesting_violations: Vec<usize>,
}

#[derive(Debug)]
pub struct Pipeline {
    pub resolved: Resolved,
    pub dir: PathBuf,
    artifacts: Vec<Artifact>,
    stages: Vec<StageRecord>,
    timings: serde_json::Map<String, Value>,
}

fn fixed_pairs(fixed: &[FixedDim]) -> Vec<(usize, f64)> {
    fixed.iter().map(|f| (f.dim, f.value)).collect()
}

/// Full states for a lattice over the dimensions not in `fixed`.
///
/// `margin` is the fraction of each free axis left out at both ends; with
/// zero margin non-periodic axes include both endpoints and periodic axes
/// stop one spacing short of the upper end.
pub fn lattice(grid: &GridSpec, fixed: &[FixedDim], points: &[usize], margin: f64) -> Vec<Vec<f64>> {
    let free: Vec<usize> = (0..grid.dim())
        .filter(|d| !fixed.iter().any(|f| f.dim == *d))
        .collect();
    let coords: Vec<Vec<f64>> = free
        .iter()
        .zip(points)
        .map(|(&d, &p)| {
            let a = grid.axis(d);
            let range = a.upper - a.lower;
            let lo = a.lower + margin * range;
            let span = range * (1.0 - 2.0 * margin);
            let intervals = if a.periodic && margin == 0.0 { p } else { p.saturating_sub(1) };
            if p == 1 {
                vec![lo + 0.5 * span]
            } else {
                (0..p).map(|i| lo + span * i as f64 / intervals as f64).collect()
            }
        })
        .collect();
    let total: usize = coords.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; coords.len()];
    for _ in 0..total {
        let mut s = vec![0.0; grid.dim()];
        for f in fixed {
            s[f.dim] = f.value;
        }
        for (k, &d) in free.iter().enumerate() {
            s[d] = coords[k][idx[k]];
        }
        out.push(s);
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < coords[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

impl Pipeline {
    /// Creates `<base>/<config digest>`; `base` defaults to the config's
    /// `output_dir`.
    pub fn new(resolved: Resolved, base: Option<&Path>) -> Result<Self, RunError> {
        let base = base.map_or_else(|| PathBuf::from(&resolved.config.output_dir), Path::to_path_buf);
        let dir = base.join(&resolved.config_digest[..16]);
        fs::create_dir_all(&dir)?;
        let mut p = Pipeline {
            resolved,
            dir,
            artifacts: Vec::new(),
            stages: Vec::new(),
            timings: serde_json::Map::new(),
        };
        for w in &p.resolved.warnings {
            warn!("{w}");
        }
        let text = p.resolved.config.to_toml();
        p.write("config.resolved.toml", text.as_bytes(), false)?;
        Ok(p)
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    fn register(&mut self, path: &Path, volatile: bool) -> Result<(), RunError> {
        let bytes = fs::read(path)?;
        let rel = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel,
            sha256: (!volatile).then(|| crate::config::sha256_hex(&bytes)),
            bytes: (!volatile).then_some(bytes.len() as u64),
            volatile,
        });
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8], volatile: bool) -> Result<PathBuf, RunError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.register(&path, volatile)?;
        Ok(path)
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<PathBuf, RunError> {
        let text = serde_json::to_string_pretty(v).expect("json serializes");
        self.write(name, text.as_bytes(), false)
    }

    /// Runs `f` as the named stage, recording its outcome and duration.
    pub fn stage<T>(
        &mut self,
        name: &'static str,
        f: impl FnOnce(&mut Self) -> Result<T, RunError>,
    ) -> Result<T, RunError> {
        info!("stage {name}");
        let start = Instant::now();
        let out = f(self);
        self.timings
            .insert(format!("stage.{name}"), json!(start.elapsed().as_secs_f64()));
        match &out {
            Ok(_) => self.stages.push(StageRecord {
                name,
                status: "ok",
                error: None,
            }),
            Err(e) => self.stages.push(StageRecord {
                name,
                status: "failed",
                error: Some(e.to_string()),
            }),
        }
        out.map_err(|e| RunError::Stage {
            stage: name,
            source: Box::new(e),
        })
    }

    pub fn solve(&mut self) -> Result<ValueField, RunError> {
        self.stage("solve", |p| {
            let r = &p.resolved;
            info!(
                "solving {} on {:?}: {} steps of {} (horizon {})",
                r.config.system.name,
                r.grid.shape(),
                r.solver.steps,
                r.solver.dt,
                r.solver.horizon
            );
            let (field, report) = solve_with_clock(&r.problem, &r.grid, &r.solver, &WallClock::default())?;
            let path = p.dir.join(FIELD_FILE);
            format::save_field(&field, &path)?;
            p.register(&path, false)?;
            p.register(&sidecar_path(&path), false)?;
            p.write_json("solve_report.json", &export::solve_report_json(&report))?;
            p.timings
                .insert("solve.steps".into(), export::step_timings_json(&report));
            info!("field range [{}, {}]", field.min(), field.max());
            Ok(field)
        })
    }

    /// Loads a previously saved field instead of solving.
    pub fn load_field(&mut self, path: &Path) -> Result<ValueField, RunError> {
        self.stage("load", |p| {
            let field = format::load_field(path)?;
            let digest = &p.resolved.problem_digest;
            if !field.meta().problem_digest.is_empty() && field.meta().problem_digest != *digest {
                return Err(FormatError::Invalid(format!(
                    "{} was solved for a different problem",
                    path.display()
                ))
                .into());
            }
            Ok(field)
        })
    }

    fn label(&self, i: usize) -> String {
        format!("{}{}", self.resolved.config.thresholds.kind.label(), i + 1)
    }

    pub fn extract(&mut self, field: &ValueField) -> Result<Extraction, RunError> {
        self.stage("extract", |p| {
            let cfg = p.resolved.config.clone();
            let thresholds = cfg.thresholds.values.clone();
            let mut out = Extraction::default();
            if cfg.analysis.contours {
                let many = cfg.analysis.slices.len() > 1;
                for (si, sl) in cfg.analysis.slices.iter().enumerate() {
                    let fixed = fixed_pairs(&sl.fixed);
                    let plane = slice(field, &fixed)?;
                    for (i, &j) in thresholds.iter().enumerate() {
                        let mut c = extract_contours(&plane, j)?;
                        c.fixed = fixed.clone();
                        let stem = if many {
                            format!("contour_s{}_{}", si + 1, p.label(i))
                        } else {
                            format!("contour_{}", p.label(i))
                        };
                        p.write_json(&format!("{stem}.json"), &export::contour_json(&c))?;
                        p.write(&format!("{stem}.csv"), &export::contour_csv(&c)?, false)?;
                        out.contours.push(c);
                    }
                }
            }
            if cfg.analysis.masks {
                for (i, &j) in thresholds.iter().enumerate() {
                    let m = mask(field, j);
                    let path = p.dir.join(format!("mask_{}.rchf", p.label(i)));
                    format::save_mask(&m, field.meta(), &path)?;
                    p.register(&path, false)?;
                    p.register(&sidecar_path(&path), false)?;
                    out.masks.push(m);
                }
                out.nesting_violations = out
                    .masks
                    .windows(2)
                    .map(|w| w[0].violations_against(&w[1]))
                    .collect();
                if out.nesting_violations.iter().any(|&v| v > 0) {
                    warn!("masks not nested: {:?}", out.nesting_violations);
                }
            }
            let summary = json!({
                "thresholds": thresholds,
                "mask_counts": out.masks.iter().map(Mask::count).collect::<Vec<_>>(),
                "nesting_violations": out.nesting_violations,
                "contour_points": out.contours.iter().map(|c| json!({
                    "threshold": c.threshold,
                    "slice": c.fixed,
                    "polylines": c.polylines.len(),
                    "points": c.point_count(),
                })).collect::<Vec<_>>(),
            });
            p.write_json("analysis.json", &summary)?;
            Ok(out)
        })
    }

    pub fn verify_settings(&self, field: &ValueField) -> Option<(Vec<f64>, VerifySettings, Vec<Vec<f64>>)> {
        let v = self.resolved.config.verify.as_ref()?;
        let levels = v.levels.clone().unwrap_or_else(|| self.resolved.config.thresholds.values.clone());
        let mut settings = VerifySettings::for_levels(field, &self.resolved.problem, &levels);
        settings.band_cells = v.band_cells;
        if let Some(t) = v.cost_tolerance {
            settings.cost_tolerance = t;
        }
        if let Some(m) = v.max_steps {
            settings.max_steps = m;
        }
        settings.policy = self.resolved.solver.policy;
        settings.parallel = self.resolved.solver.parallel;
        let samples = lattice(field.grid(), &v.fixed, &v.points, 0.0);
        Some((levels, settings, samples))
    }

    /// Closed-loop checks; `None` when the config has no `[verify]` section.
    pub fn verify(&mut self, field: &ValueField) -> Result<Option<VerificationReport>, RunError> {
        let Some((levels, settings, samples)) = self.verify_settings(field) else {
            return Ok(None);
        };
        self.stage("verify", |p| {
            let report = verify_region(field, &p.resolved.problem, &levels, &samples, &settings)?;
            for l in &report.levels {
                info!(
                    "level {}: {}/{} closed-loop successes ({} in band)",
                    l.level, l.successes, l.predicted_inside, l.excluded_band
                );
            }
            p.write_json("verify_report.json", &export::verification_json(&report))?;
            Ok(Some(report))
        })
    }

    /// Brute-force values on the probe lattice; `None` without `[oracle]`.
    pub fn oracle(&mut self) -> Result<Option<Vec<OracleResult>>, RunError> {
        let Some(o) = self.resolved.config.oracle.clone() else {
            return Ok(None);
        };
        self.stage("oracle", |p| {
            let dt = o.dt.unwrap_or(p.resolved.solver.dt);
            let settings = OracleSettings {
                steps: o.steps,
                dt,
                budget: o.budget,
                prune: o.prune,
            };
            let probes = lattice(&p.resolved.grid, &o.fixed, &o.points, o.margin);
            info!("oracle: {} probes, {} steps of {}", probes.len(), o.steps, dt);
            let problem = &p.resolved.problem;
            let results = probes
                .par_iter()
                .map(|s| brute_force_value(problem, s, &settings))
                .collect::<Result<Vec<_>, _>>()?;
            p.write("oracle.csv", &export::oracle_csv(&results)?, false)?;
            Ok(Some(results))
        })
    }

    pub fn compare(
        &mut self,
        field: &ValueField,
        results: &[OracleResult],
    ) -> Result<ComparisonStats, RunError> {
        let Some(o) = self.resolved.config.oracle.clone() else {
            return Err(ConfigError::invalid("oracle", "comparison needs an [oracle] section").into());
        };
        self.stage("compare", |p| {
            let thresholds = o.thresholds.clone().unwrap_or_default();
            let stats = compare_field(
                field,
                results,
                &thresholds,
                o.band_cells,
                p.resolved.solver.policy,
            )?;
            let tolerance = o.dt.unwrap_or(p.resolved.solver.dt) + 0.1;
            info!(
                "oracle comparison: mean |error| {}, max {}",
                stats.mean_abs_error, stats.max_abs_error
            );
            p.write_json("comparison.json", &export::comparison_json(&stats, tolerance))?;
            Ok(stats)
        })
    }

    /// Writes the timing file and the manifest, returning the manifest path.
    pub fn finish(mut self) -> Result<PathBuf, RunError> {
        let timings = Value::Object(std::mem::take(&mut self.timings));
        let text = serde_json::to_string_pretty(&timings).expect("json serializes");
        self.write("timings.json", text.as_bytes(), true)?;
        let failed = self.stages.iter().any(|s| s.status != "ok");
        let manifest = json!({
            "tool": "hjbreach",
            "version": env!("CARGO_PKG_VERSION"),
            "status": if failed { "failed" } else { "ok" },
            "config_digest": self.resolved.config_digest,
            "problem_digest": self.resolved.problem_digest,
            "config": self.resolved.config.to_toml(),
            "warnings": self.resolved.warnings,
            "stages": self.stages,
            "artifacts": self.artifacts,
        });
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json serializes"))?;
        Ok(path)
    }
}

/// Runs every configured stage in order. The manifest is written even when
/// a stage fails; its path is returned alongside the outcome.
pub fn run(resolved: Resolved, base: Option<&Path>) -> (Result<(), RunError>, Option<PathBuf>) {
    let mut p = match Pipeline::new(resolved, base) {
        Ok(p) => p,
        Err(e) => return (Err(e), None),
    };
    let outcome = run_stages(&mut p);
    match p.finish() {
        Ok(path) => (outcome, Some(path)),
        Err(e) => (outcome.and(Err(e)), None),
    }
}

fn run_stages(p: &mut Pipeline) -> Result<(), RunError> {
    let field = p.solve()?;
    p.extract(&field)?;
    p.verify(&field)?;
    if let Some(results) = p.oracle()? {
        p.compare(&field, &results)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hjbreach_core::Axis;

    #[test]
    fn lattice_covers_free_dims_in_order() {
        let grid = GridSpec::new(vec![
            Axis::new(-1.0, 1.0, 5),
            Axis::new(0.0, 2.0, 5),
            Axis::periodic(0.0, 4.0, 8),
        ])
        .unwrap();
        let fixed = [FixedDim { dim: 2, value: 1.0 }];
        let pts = lattice(&grid, &fixed, &[3, 2], 0.0);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![-1.0, 0.0, 1.0]);
        assert_eq!(pts[1], vec![-1.0, 2.0, 1.0]);
        assert_eq!(pts[5], vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn lattice_margin_and_periodic_spacing() {
        let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 5), Axis::periodic(0.0, 4.0, 8)]).unwrap();
        let pts = lattice(&grid, &[], &[3, 4], 0.0);
        assert_eq!(pts[3], vec![-1.0, 3.0]);
        let inner = lattice(&grid, &[], &[2, 1], 0.25);
        assert_eq!(inner, vec![vec![-0.5, 2.0], vec![0.5, 2.0]]);
    }
}
