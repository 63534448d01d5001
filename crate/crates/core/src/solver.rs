//! Backward dynamic-programming recursion on the grid.
//!
//! Starting from the endpoint cost, each step replaces every node value by
//!
//! ```text
//! W'(s) = min over u of [ C_K(s, u) + W(F_K(s, u)) ]
//! ```
//!
//! where `F_K` is the frozen one-step map, `C_K` the frozen stage cost and `W`
//! is read through multilinear interpolation. Sweeps are Jacobi-style: the
//! previous field is read-only and every node writes one output slot, so the
//! sequential and the parallel sweep produce identical buffers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{integrate_step_into, stage_cost, CostSpec, Problem};
use crate::error::{Error, Result};
use crate::grid::{FieldMeta, GridSpec, OutOfDomain, ValueField};
use crate::math;
use crate::MAX_DIM;

/// Absolute change above which a node counts as updated in [`StepStats`].
pub const CHANGE_TOLERANCE: f64 = 1e-12;

/// Allowed mismatch between `steps * dt` and the horizon.
pub const HORIZON_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_EPSILON: f64 = 0.1;

/// Horizon guaranteeing `lambda * T + Lambda > j_max`:
/// `T = (j_max - Lambda) / lambda + epsilon`.
pub fn compute_horizon(j_max: f64, lambda: f64, endpoint_floor: f64, epsilon: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Assumption(alloc::format!(
            "running-cost lower bound must be positive, got {lambda}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "horizon slack must be positive, got {epsilon}"
        )));
    }
    let horizon = (j_max - endpoint_floor) / lambda + epsilon;
    debug_assert!(lambda * horizon + endpoint_floor > j_max);
    Ok(horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub steps: usize,
    pub horizon: f64,
    pub policy: OutOfDomain,
    /// Use the rayon sweep. Ignored without the `parallel` feature.
    pub parallel: bool,
}

impl SolverConfig {
    /// `steps` recursion steps of length `dt`.
    pub fn fixed(dt: f64, steps: usize) -> Result<Self> {
        let cfg = SolverConfig {
            dt,
            steps,
            horizon: dt * steps as f64,
            policy: OutOfDomain::default(),
            parallel: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Splits `horizon` into the fewest equal steps no longer than `max_dt`.
    pub fn from_horizon(horizon: f64, max_dt: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(max_dt > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "horizon {horizon} and dt {max_dt} must be positive"
            )));
        }
        let steps = math::ceil(horizon / max_dt - HORIZON_TOLERANCE) as usize;
        let steps = steps.max(1);
        let cfg = SolverConfig {
            dt: horizon / steps as f64,
            steps,
            horizon,
            policy: OutOfDomain::default(),
            parallel: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Horizon from [`compute_horizon`] for the largest admissible cost.
    pub fn auto(j_max: f64, costs: &CostSpec, epsilon: f64, max_dt: f64) -> Result<Self> {
        let horizon =
            compute_horizon(j_max, costs.running_floor(), costs.endpoint_floor(), epsilon)?;
        Self::from_horizon(horizon, max_dt)
    }

    pub fn with_policy(mut self, policy: OutOfDomain) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if math::abs(self.steps as f64 * self.dt - self.horizon) > HORIZON_TOLERANCE {
            return Err(Error::InvalidConfig(alloc::format!(
                "steps * dt = {} does not match horizon {}",
                self.steps as f64 * self.dt,
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Wall-clock source for step timings.
pub trait Clock {
    fn now_secs(&self) -> f64;
}

/// Reports zero elapsed time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_secs(&self) -> f64 {
        0.0
    }
}

#[cfg(feature = "std")]
#[derive(Debug, Clone, Copy)]
pub struct WallClock(std::time::Instant);

#[cfg(feature = "std")]
impl Default for WallClock {
    fn default() -> Self {
        WallClock(std::time::Instant::now())
    }
}

#[cfg(feature = "std")]
impl Clock for WallClock {
    fn now_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub wall_time_secs: f64,
    pub max: f64,
    pub min: f64,
    /// Nodes whose value moved by more than [`CHANGE_TOLERANCE`].
    pub changed: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub steps: Vec<StepStats>,
    pub field_digest: String,
}

/// Field holding the endpoint cost at every node, step index 0.
pub fn init_terminal(grid: &GridSpec, costs: &CostSpec) -> Result<ValueField> {
    let n = grid.dim();
    let mut s = [0.0; MAX_DIM];
    let mut values = vec![0.0; grid.node_count()];
    for (node, slot) in values.iter_mut().enumerate() {
        grid.node_at(node, &mut s[..n]);
        let v = costs.endpoint(&s[..n]);
        if !v.is_finite() {
            return Err(Error::NonFiniteTerminal { node });
        }
        *slot = v;
    }
    ValueField::new(grid.clone(), values, FieldMeta::default())
}

/// Minimum Bellman candidate at `s` and the lowest control index attaining it.
///
/// `node` only labels errors.
pub(crate) fn minimize(
    field: &ValueField,
    problem: &Problem,
    s: &[f64],
    dt: f64,
    policy: OutOfDomain,
    node: usize,
) -> Result<(f64, usize)> {
    if problem.target.contains(s) {
        // zero stage cost and identity step for every control
        let v = field.interpolate(s, policy)?;
        return Ok((v, 0));
    }
    let n = s.len();
    let mut next = [0.0; MAX_DIM];
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, u) in problem.model.controls().iter().enumerate() {
        integrate_step_into(&problem.model, s, u, dt, &mut next[..n])?;
        let v = stage_cost(&problem.costs, s, u, dt) + field.interpolate(&next[..n], policy)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteCandidate { node, control: i });
        }
        if v < best {
            best = v;
            arg = i;
        }
    }
    Ok((best, arg))
}

fn update_node(
    field: &ValueField,
    problem: &Problem,
    config: &SolverConfig,
    node: usize,
) -> Result<f64> {
    let n = field.grid().dim();
    let mut s = [0.0; MAX_DIM];
    field.grid().node_at(node, &mut s[..n]);
    minimize(field, problem, &s[..n], config.dt, config.policy, node).map(|(v, _)| v)
}

/// One recursion step: `field_k` at step `k` to the field at step `k + 1`.
pub fn bellman_step(
    field: &ValueField,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<ValueField> {
    let mut values = vec![0.0; field.grid().node_count()];

    #[cfg(feature = "parallel")]
    if config.parallel {
        use rayon::prelude::*;
        values
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(node, slot)| {
                *slot = update_node(field, problem, config, node)?;
                Ok::<(), Error>(())
            })?;
        return finish_step(field, values);
    }

    for (node, slot) in values.iter_mut().enumerate() {
        *slot = update_node(field, problem, config, node)?;
    }
    finish_step(field, values)
}

fn finish_step(field: &ValueField, values: Vec<f64>) -> Result<ValueField> {
    let mut meta = field.meta().clone();
    meta.step_index += 1;
    ValueField::new(field.grid().clone(), values, meta)
}

/// Terminal condition followed by `config.steps` recursion steps.
pub fn solve(
    problem: &Problem,
    grid: &GridSpec,
    config: &SolverConfig,
) -> Result<(ValueField, SolveReport)> {
    solve_with_clock(problem, grid, config, &NoClock)
}

pub fn solve_with_clock(
    problem: &Problem,
    grid: &GridSpec,
    config: &SolverConfig,
    clock: &dyn Clock,
) -> Result<(ValueField, SolveReport)> {
    problem.model.check_grid(grid)?;
    config.validate()?;

    let meta = FieldMeta {
        step_index: 0,
        dt: config.dt,
        horizon: config.horizon,
        problem_digest: problem.digest.clone(),
    };
    let mut field = init_terminal(grid, &problem.costs)?.with_meta(meta);
    let mut steps = Vec::with_capacity(config.steps);

    for k in 1..=config.steps {
        let start = clock.now_secs();
        let next = bellman_step(&field, problem, config).map_err(|e| Error::Step {
            step: k,
            source: alloc::boxed::Box::new(e),
        })?;
        let changed = field
            .values()
            .iter()
            .zip(next.values())
            .filter(|(a, b)| math::abs(*a - *b) > CHANGE_TOLERANCE)
            .count();
        steps.push(StepStats {
            step: k,
            wall_time_secs: clock.now_secs() - start,
            max: next.max(),
            min: next.min(),
            changed,
        });
        field = next;
    }

    let report = SolveReport {
        steps,
        field_digest: field.digest(),
    };
    Ok((field, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{uniform_controls, Constant, SystemModel, TargetBox, TargetSet};
    use crate::grid::Axis;
    use crate::systems::{builtin_system, BuiltinParams, EndpointSelector, SingleIntegrator};
    use alloc::sync::Arc;

    fn integrator_problem() -> Problem {
        Problem::new(
            SystemModel::new(
                Arc::new(SingleIntegrator),
                uniform_controls(-1.0, 1.0, 3),
                vec![None],
            )
            .unwrap(),
            CostSpec::min_time(),
            TargetSet::from_boxes(vec![TargetBox::new(vec![Some((-0.1, 0.1))])]),
        )
    }

    fn line(points: usize) -> GridSpec {
        GridSpec::new(vec![Axis::new(-1.0, 1.0, points)]).unwrap()
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(compute_horizon(2.0, 1.0, 0.0, 0.1).unwrap(), 2.1);
        assert_eq!(compute_horizon(3.0, 1.0, -1.0, 0.1).unwrap(), 4.1);
        assert_eq!(compute_horizon(3.0, 1.0, 0.0, 0.1).unwrap(), 3.1);
        assert!(matches!(
            compute_horizon(3.0, 0.0, 0.0, 0.1),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn horizon_split_matches_tables() {
        let c = SolverConfig::from_horizon(2.1, 0.02).unwrap();
        assert_eq!(c.steps, 105);
        let c = SolverConfig::from_horizon(3.1, 0.02).unwrap();
        assert_eq!(c.steps, 155);
        let c = SolverConfig::from_horizon(4.1, 0.02).unwrap();
        assert_eq!(c.steps, 205);
        let c = SolverConfig::from_horizon(3.1, 0.04).unwrap();
        assert_eq!(c.steps, 78);
        assert!((c.dt * 78.0 - 3.1).abs() < 1e-12);
    }

    #[test]
    fn terminal_field_holds_endpoint_cost() {
        let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 5), Axis::new(-1.0, 1.0, 5)]).unwrap();
        let zero = init_terminal(&grid, &CostSpec::min_time()).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let kappa = CostSpec::new(Arc::new(Constant(1.0)), Arc::new(Constant(2.5)), 1.0, 2.5).unwrap();
        let f = init_terminal(&grid, &kappa).unwrap();
        assert!(f.values().iter().all(|&v| v == 2.5));
        assert_eq!(f.meta().step_index, 0);

        let flight = builtin_system(
            "planar_flight",
            &BuiltinParams {
                gamma: 0.1,
                endpoint: EndpointSelector::HeadingWell,
                control_count: 3,
            },
        )
        .unwrap();
        let grid3 = GridSpec::new(vec![
            Axis::new(-4.0, 4.0, 9),
            Axis::new(-4.0, 4.0, 9),
            Axis::periodic(0.0, crate::systems::TWO_PI, 8),
        ])
        .unwrap();
        let f = init_terminal(&grid3, &flight.costs).unwrap();
        assert_eq!(f.value_at(&[4, 4, 0]).unwrap(), -1.0);
    }

    #[test]
    fn one_step_integrator_values() {
        let problem = integrator_problem();
        let grid = line(41);
        let cfg = SolverConfig::fixed(0.1, 1).unwrap();
        let w0 = init_terminal(&grid, &problem.costs).unwrap();
        let w1 = bellman_step(&w0, &problem, &cfg).unwrap();
        // node 23 sits at 0.15, node 21 at 0.05
        assert!((w1.value_at(&[23]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(w1.value_at(&[21]).unwrap(), 0.0);
        assert_eq!(w1.meta().step_index, 1);
    }

    #[test]
    fn all_nodes_in_target_is_a_fixed_point() {
        let mut problem = integrator_problem();
        problem.target = TargetSet::from_boxes(vec![TargetBox::new(vec![None])]);
        problem.costs =
            CostSpec::new(Arc::new(Constant(3.0)), Arc::new(Constant(0.0)), 3.0, 0.0).unwrap();
        let grid = line(11);
        let values: Vec<f64> = (0..11).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = ValueField::new(grid, values, FieldMeta::default()).unwrap();
        let cfg = SolverConfig::fixed(0.1, 1).unwrap();
        let next = bellman_step(&w, &problem, &cfg).unwrap();
        assert_eq!(next.values(), w.values());
    }

    #[test]
    fn zero_steps_returns_terminal_field() {
        let problem = integrator_problem();
        let grid = line(21);
        let cfg = SolverConfig::fixed(0.1, 0).unwrap();
        let (field, report) = solve(&problem, &grid, &cfg).unwrap();
        assert!(field.values().iter().all(|&v| v == 0.0));
        assert!(report.steps.is_empty());
    }

    #[test]
    fn min_time_bounds_and_monotone_steps() {
        let problem = integrator_problem();
        let grid = line(81);
        let cfg = SolverConfig::fixed(0.05, 12).unwrap();
        let mut field = init_terminal(&grid, &problem.costs).unwrap();
        for k in 1..=cfg.steps {
            let next = bellman_step(&field, &problem, &cfg).unwrap();
            for (a, b) in field.values().iter().zip(next.values()) {
                assert!(b >= a, "step {k}: {a} -> {b}");
                assert!(*b >= 0.0 && *b <= k as f64 * cfg.dt + 1e-12);
            }
            field = next;
        }
        let (solved, report) = solve(&problem, &grid, &cfg).unwrap();
        assert_eq!(solved.values(), field.values());
        assert!(solved.max() <= cfg.steps as f64 * cfg.dt + 1e-9);
        for w in report.steps.windows(2) {
            assert!(w[1].max >= w[0].max);
        }
    }

    #[test]
    fn mismatched_grid_periodicity_rejected() {
        let problem = integrator_problem();
        let grid = GridSpec::new(vec![Axis::periodic(-1.0, 1.0, 10)]).unwrap();
        assert!(solve(&problem, &grid, &SolverConfig::fixed(0.1, 1).unwrap()).is_err());
    }

    #[test]
    fn step_errors_carry_the_step_index() {
        let mut problem = integrator_problem();
        problem.costs = CostSpec::new(
            Arc::new(Constant(f64::INFINITY)),
            Arc::new(Constant(0.0)),
            1.0,
            0.0,
        )
        .unwrap();
        let err = solve(&problem, &line(11), &SolverConfig::fixed(0.1, 2).unwrap()).unwrap_err();
        match err {
            Error::Step { step: 1, source } => {
                assert!(matches!(*source, Error::NonFiniteCandidate { control: 0, .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_sweep_is_bit_identical() {
        let sys = builtin_system("two_dim_poly", &BuiltinParams::default()).unwrap();
        let problem = Problem::new(sys.model, sys.costs, sys.target);
        let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 41), Axis::new(-1.0, 1.0, 41)]).unwrap();
        let seq = SolverConfig::fixed(0.05, 8).unwrap();
        let par = seq.clone().with_parallel(true);
        let (a, _) = solve(&problem, &grid, &seq).unwrap();
        let (b, _) = solve(&problem, &grid, &par).unwrap();
        assert_eq!(a.values(), b.values());
    }
}
