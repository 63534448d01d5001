//! Run configurations.
//!
//! A run is described by one TOML file. [`RunConfig::resolve`] materializes
//! every default, builds the problem and solver settings, and computes the
//! digests that name the output directory and tag the field files.

use std::fs;
use std::path::Path;

use hjbreach_core::analysis::beyond_validity;
use hjbreach_core::solver::{SolverConfig, DEFAULT_EPSILON, HORIZON_TOLERANCE};
use hjbreach_core::systems::{builtin_system, BuiltinParams, EndpointSelector};
use hjbreach_core::{Axis, GridSpec, OutOfDomain, Problem, TargetBox, TargetSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub grid: GridSection,
    /// Replaces the built-in target when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSection>,
    #[serde(default)]
    pub costs: CostsSection,
    pub solver: SolverSection,
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "runs".into()
}
fn default_control_count() -> usize {
    21
}
fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_band() -> f64 {
    2.0
}
fn default_budget() -> u64 {
    hjbreach_core::oracle::DEFAULT_BUDGET
}
fn default_probe_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    #[default]
    Zero,
    HeadingWell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub endpoint: EndpointKind,
    #[serde(default = "default_control_count")]
    pub control_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    #[serde(default)]
    pub periodic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub axes: Vec<AxisSection>,
}

/// Closed box; an infinite bound leaves that side open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub boxes: Vec<BoxSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CostsSection {
    /// `lambda`; defaults to the built-in system's analytic bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_floor: Option<f64>,
    /// `Lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_floor: Option<f64>,
    /// Estimate both bounds over grid nodes and controls instead.
    #[serde(default)]
    pub estimate_floors: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Saturate,
    Clamp,
}

impl From<PolicyKind> for OutOfDomain {
    fn from(p: PolicyKind) -> Self {
        match p {
            PolicyKind::Saturate => OutOfDomain::Saturate,
            PolicyKind::Clamp => OutOfDomain::Clamp,
        }
    }
}

/// With `steps`, `dt` is the step length. Otherwise `dt` is the largest
/// allowed step and the horizon (explicit, or derived from the largest
/// threshold) is split evenly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// Horizons `T`, for minimum-time problems.
    Time,
    /// Admissible costs `J`.
    #[default]
    Cost,
}

impl ThresholdKind {
    pub fn label(self) -> &'static str {
        match self {
            ThresholdKind::Time => "T",
            ThresholdKind::Cost => "J",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    pub values: Vec<f64>,
    #[serde(default)]
    pub kind: ThresholdKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDim {
    pub dim: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    #[serde(default)]
    pub fixed: Vec<FixedDim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_true")]
    pub contours: bool,
    #[serde(default = "default_true")]
    pub masks: bool,
    /// Defaults to the whole field when it is 2-D.
    #[serde(default)]
    pub slices: Vec<SliceSection>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            contours: true,
            masks: true,
            slices: Vec::new(),
        }
    }
}

/// Closed-loop checks on a lattice over the free dimensions of one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Defaults to the thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(default)]
    pub fixed: Vec<FixedDim>,
    /// Lattice points per free dimension.
    pub points: Vec<usize>,
    #[serde(default = "default_band")]
    pub band_cells: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

/// Brute-force reference values on a probe lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub steps: usize,
    /// Defaults to the solver step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Probes per dimension (free dimensions when `fixed` is set).
    pub points: Vec<usize>,
    #[serde(default)]
    pub fixed: Vec<FixedDim>,
    /// Fraction of each axis range left out on both sides.
    #[serde(default = "default_probe_margin")]
    pub margin: f64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_true")]
    pub prune: bool,
    /// Classification levels; defaults to the thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_band")]
    pub band_cells: f64,
}

/// Everything a pipeline needs, with defaults filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// The input with derived values written back, so it re-resolves to the
    /// same problem and solver settings.
    pub config: RunConfig,
    pub problem: Problem,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub warnings: Vec<String>,
    pub config_digest: String,
    pub problem_digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn finite(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, format!("{v} is not finite")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        let axes = self
            .grid
            .axes
            .iter()
            .map(|a| Axis {
                lower: a.lower,
                upper: a.upper,
                points: a.points,
                periodic: a.periodic,
            })
            .collect();
        GridSpec::new(axes).map_err(|e| ConfigError::invalid("grid.axes", e.to_string()))
    }

    fn target_set(&self, dim: usize) -> Result<Option<TargetSet>, ConfigError> {
        let Some(t) = &self.target else {
            return Ok(None);
        };
        let mut boxes = Vec::with_capacity(t.boxes.len());
        for (i, b) in t.boxes.iter().enumerate() {
            let key = format!("target.boxes[{i}]");
            if b.lower.len() != dim || b.upper.len() != dim {
                return Err(ConfigError::invalid(
                    key,
                    format!("bounds need {dim} entries"),
                ));
            }
            let bounds = b
                .lower
                .iter()
                .zip(&b.upper)
                .map(|(&lo, &hi)| {
                    if lo.is_nan() || hi.is_nan() || lo > hi {
                        Err(ConfigError::invalid(&key, format!("empty interval [{lo}, {hi}]")))
                    } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                        Ok(None)
                    } else {
                        Ok(Some((lo, hi)))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            boxes.push(TargetBox::new(bounds));
        }
        Ok(Some(TargetSet::from_boxes(boxes)))
    }

    fn check_fixed(&self, key: &str, fixed: &[FixedDim], grid: &GridSpec) -> Result<(), ConfigError> {
        for f in fixed {
            if f.dim >= grid.dim() {
                return Err(ConfigError::invalid(key, format!("no dimension {}", f.dim)));
            }
            let a = grid.axis(f.dim);
            if !a.periodic && !a.contains(f.value) {
                return Err(ConfigError::invalid(
                    key,
                    format!("{} outside [{}, {}]", f.value, a.lower, a.upper),
                ));
            }
        }
        let mut dims: Vec<usize> = fixed.iter().map(|f| f.dim).collect();
        dims.sort_unstable();
        dims.dedup();
        if dims.len() != fixed.len() {
            return Err(ConfigError::invalid(key, "a dimension is fixed twice"));
        }
        Ok(())
    }

    /// Validates, fills defaults and builds the problem.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut cfg = self.clone();
        let mut warnings = Vec::new();
        let grid = cfg.grid_spec()?;

        let endpoint = match cfg.system.endpoint {
            EndpointKind::Zero => EndpointSelector::Zero,
            EndpointKind::HeadingWell => EndpointSelector::HeadingWell,
        };
        let params = BuiltinParams {
            gamma: finite("system.gamma", cfg.system.gamma)?,
            endpoint,
            control_count: cfg.system.control_count,
        };
        let sys = builtin_system(&cfg.system.name, &params).map_err(|e| {
            ConfigError::invalid("system", e.to_string())
        })?;
        sys.model
            .check_grid(&grid)
            .map_err(|e| ConfigError::invalid("grid.axes", e.to_string()))?;

        let mut costs = sys.costs;
        if cfg.costs.estimate_floors {
            costs = costs
                .resampled(&grid, sys.model.controls())
                .map_err(|e| ConfigError::invalid("costs", e.to_string()))?;
            warnings.push(format!(
                "cost lower bounds estimated by sampling: lambda = {}, Lambda = {}",
                costs.running_floor(),
                costs.endpoint_floor()
            ));
        }
        let lambda = cfg.costs.running_floor.unwrap_or(costs.running_floor());
        let big_lambda = cfg.costs.endpoint_floor.unwrap_or(costs.endpoint_floor());
        costs = costs
            .with_floors(lambda, big_lambda)
            .map_err(|e| ConfigError::invalid("costs.running_floor", e.to_string()))?;
        if let Err(e) = costs.check_floors(&grid, sys.model.controls()) {
            warnings.push(format!("declared cost bounds violated on the grid: {e}"));
        }
        cfg.costs.running_floor = Some(lambda);
        cfg.costs.endpoint_floor = Some(big_lambda);
        cfg.costs.estimate_floors = false;

        let target = cfg.target_set(grid.dim())?.unwrap_or(sys.target);
        if cfg.target.is_none() {
            cfg.target = Some(TargetSection {
                boxes: target
                    .boxes()
                    .iter()
                    .map(|b| BoxSection {
                        lower: b
                            .bounds
                            .iter()
                            .map(|b| b.map_or(f64::NEG_INFINITY, |(lo, _)| lo))
                            .collect(),
                        upper: b
                            .bounds
                            .iter()
                            .map(|b| b.map_or(f64::INFINITY, |(_, hi)| hi))
                            .collect(),
                    })
                    .collect(),
            });
        }

        let thresholds = &cfg.thresholds.values;
        if thresholds.is_empty() {
            return Err(ConfigError::invalid("thresholds.values", "at least one value is required"));
        }
        for &t in thresholds {
            finite("thresholds.values", t)?;
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::invalid(
                "thresholds.values",
                "values must be strictly increasing",
            ));
        }
        let j_max = *thresholds.last().expect("non-empty");

        let s = &cfg.solver;
        finite("solver.dt", s.dt)?;
        if !(s.dt > 0.0) {
            return Err(ConfigError::invalid("solver.dt", "must be positive"));
        }
        if !(s.epsilon > 0.0) {
            return Err(ConfigError::invalid("solver.epsilon", "must be positive"));
        }
        let invalid_solver = |e: hjbreach_core::Error| ConfigError::invalid("solver", e.to_string());
        let solver = match (s.steps, s.horizon) {
            (Some(steps), None) => SolverConfig::fixed(s.dt, steps).map_err(invalid_solver)?,
            (Some(steps), Some(horizon)) => {
                let c = SolverConfig {
                    dt: s.dt,
                    steps,
                    horizon,
                    policy: OutOfDomain::default(),
                    parallel: false,
                };
                c.validate().map_err(invalid_solver)?;
                c
            }
            (None, Some(horizon)) => {
                SolverConfig::from_horizon(horizon, s.dt).map_err(invalid_solver)?
            }
            (None, None) => {
                SolverConfig::auto(j_max, &costs, s.epsilon, s.dt).map_err(invalid_solver)?
            }
        }
        .with_policy(s.policy.into())
        .with_parallel(s.parallel);
        cfg.solver.dt = solver.dt;
        cfg.solver.steps = Some(solver.steps);
        cfg.solver.horizon = Some(solver.horizon);

        let bound = costs.validity_bound(solver.horizon);
        if let Some(t) = beyond_validity(thresholds, bound) {
            warnings.push(format!(
                "threshold {t} is not below lambda * T + Lambda = {bound}; \
                 sub-level sets at or above it are not guaranteed reachable sets"
            ));
        }

        for (i, sl) in cfg.analysis.slices.iter().enumerate() {
            let key = format!("analysis.slices[{i}].fixed");
            cfg.check_fixed(&key, &sl.fixed, &grid)?;
            if sl.fixed.len() + 2 != grid.dim() {
                return Err(ConfigError::invalid(
                    key,
                    format!("fix exactly {} dimensions", grid.dim().saturating_sub(2)),
                ));
            }
        }
        if cfg.analysis.slices.is_empty() && grid.dim() == 2 {
            cfg.analysis.slices.push(SliceSection::default());
        }
        if cfg.analysis.contours && cfg.analysis.slices.is_empty() {
            warnings.push("no 2-D slices requested; contours skipped".into());
        }

        if let Some(v) = &mut cfg.verify {
            let levels = v.levels.get_or_insert_with(|| thresholds.clone());
            if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
                return Err(ConfigError::invalid("verify.levels", "need finite levels"));
            }
            let key = "verify.fixed";
            let fixed = v.fixed.clone();
            self.check_fixed(key, &fixed, &grid)?;
            if v.points.len() + fixed.len() != grid.dim() || v.points.iter().any(|&p| p < 1) {
                return Err(ConfigError::invalid(
                    "verify.points",
                    "need one positive count per free dimension",
                ));
            }
            if !(v.band_cells >= 0.0) {
                return Err(ConfigError::invalid("verify.band_cells", "must be non-negative"));
            }
        }

        if let Some(o) = &mut cfg.oracle {
            let dt = *o.dt.get_or_insert(solver.dt);
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(ConfigError::invalid("oracle.dt", "must be positive"));
            }
            o.thresholds.get_or_insert_with(|| thresholds.clone());
            self.check_fixed("oracle.fixed", &o.fixed, &grid)?;
            if o.points.len() + o.fixed.len() != grid.dim() || o.points.iter().any(|&p| p < 1) {
                return Err(ConfigError::invalid(
                    "oracle.points",
                    "need one positive count per free dimension",
                ));
            }
            if !(0.0..0.5).contains(&o.margin) {
                return Err(ConfigError::invalid("oracle.margin", "must lie in [0, 0.5)"));
            }
            if o.steps as f64 * dt > solver.horizon + HORIZON_TOLERANCE {
                return Err(ConfigError::invalid(
                    "oracle.steps",
                    format!(
                        "oracle horizon {} exceeds the field horizon {}",
                        o.steps as f64 * dt,
                        solver.horizon
                    ),
                ));
            }
        }

        let problem_digest = problem_digest(&cfg);
        let config_digest = config_digest(&cfg);
        let problem = Problem::new(sys.model, costs, target).with_digest(problem_digest.clone());
        Ok(Resolved {
            config: cfg,
            problem,
            grid,
            solver,
            warnings,
            config_digest,
            problem_digest,
        })
    }
}

/// Identifies model, control set, costs and target. Grid and time step are
/// left out so fields of different resolution stay comparable.
fn problem_digest(cfg: &RunConfig) -> String {
    let v = serde_json::json!({
        "system": cfg.system,
        "target": cfg.target,
        "costs": cfg.costs,
    });
    sha256_hex(v.to_string().as_bytes())
}

/// Identifies the whole run except where it is written.
fn config_digest(cfg: &RunConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("output_dir");
    }
    sha256_hex(v.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_DIM: &str = r#"
        [system]
        name = "two_dim_poly"

        [grid]
        axes = [
            { lower = -1.0, upper = 1.0, points = 21 },
            { lower = -1.0, upper = 1.0, points = 21 },
        ]

        [solver]
        dt = 0.02
        horizon = 2.1

        [thresholds]
        values = [0.5, 1.0, 1.5, 2.0]
        kind = "time"
    "#;

    #[test]
    fn explicit_horizon_splits_into_steps() {
        let r = RunConfig::from_toml(TWO_DIM).unwrap().resolve().unwrap();
        assert_eq!(r.solver.steps, 105);
        assert!((r.solver.dt - 0.02).abs() < 1e-15);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        assert_eq!(r.config.analysis.slices.len(), 1);
    }

    #[test]
    fn auto_horizon_for_planar_case_two() {
        let text = r#"
            [system]
            name = "planar_flight"
            gamma = 0.1
            endpoint = "heading_well"

            [grid]
            axes = [
                { lower = -4.0, upper = 4.0, points = 9 },
                { lower = -4.0, upper = 4.0, points = 9 },
                { lower = 0.0, upper = 6.283185307179586, points = 8, periodic = true },
            ]

            [solver]
            dt = 0.02

            [thresholds]
            values = [0.75, 1.5, 2.25, 3.0]
        "#;
        let r = RunConfig::from_toml(text).unwrap().resolve().unwrap();
        assert!((r.solver.horizon - 4.1).abs() < 1e-12);
        assert_eq!(r.solver.steps, 205);
        assert_eq!(r.config.costs.endpoint_floor, Some(-1.0));
    }

    #[test]
    fn resolved_config_resolves_to_itself() {
        let r = RunConfig::from_toml(TWO_DIM).unwrap().resolve().unwrap();
        let again = RunConfig::from_toml(&r.config.to_toml())
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(again.config, r.config);
        assert_eq!(again.config_digest, r.config_digest);
        assert_eq!(again.solver, r.solver);
    }

    #[test]
    fn thresholds_must_increase() {
        let text = TWO_DIM.replace("[0.5, 1.0, 1.5, 2.0]", "[0.5, 0.5]");
        let err = RunConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "thresholds.values"));
    }

    #[test]
    fn explicit_horizon_beyond_validity_warns() {
        let text = TWO_DIM.replace("[0.5, 1.0, 1.5, 2.0]", "[0.5, 2.5]");
        let r = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("lambda * T + Lambda"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = TWO_DIM.replace("kind = \"time\"", "kind = \"time\"\nextra = 1");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn wrong_periodicity_names_the_grid() {
        let text = TWO_DIM.replace(
            "{ lower = -1.0, upper = 1.0, points = 21 },\n        ]",
            "{ lower = -1.0, upper = 1.0, points = 21, periodic = true },\n        ]",
        );
        let err = RunConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "grid.axes"));
    }

    #[test]
    fn problem_digest_ignores_resolution() {
        let a = RunConfig::from_toml(TWO_DIM).unwrap().resolve().unwrap();
        let b = RunConfig::from_toml(&TWO_DIM.replace("points = 21", "points = 31"))
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(a.problem_digest, b.problem_digest);
        assert_ne!(a.config_digest, b.config_digest);
    }
}
