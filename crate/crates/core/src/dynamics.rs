//! System models, target sets, cost specifications and the one-step maps.
//!
//! Inside the target set the dynamics and the running cost are frozen to zero:
//! a state that has reached the target parks there and stops accumulating cost.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::math;
use crate::MAX_DIM;

/// Continuous-time vector field `s' = f(s, u)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn derivative(&self, state: &[f64], control: &[f64], out: &mut [f64]);
}

/// Instantaneous running cost `c(s, u)`.
pub trait RunningCost: Send + Sync {
    fn running(&self, state: &[f64], control: &[f64]) -> f64;
}

/// Terminal penalty `Phi(s)`.
pub trait EndpointCost: Send + Sync {
    fn endpoint(&self, state: &[f64]) -> f64;
}

/// A constant usable as either cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl RunningCost for Constant {
    fn running(&self, _: &[f64], _: &[f64]) -> f64 {
        self.0
    }
}

impl EndpointCost for Constant {
    fn endpoint(&self, _: &[f64]) -> f64 {
        self.0
    }
}

/// Adapts a closure into [`Dynamics`].
pub struct FnDynamics<F> {
    state_dim: usize,
    control_dim: usize,
    f: F,
}

impl<F> FnDynamics<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(state_dim: usize, control_dim: usize, f: F) -> Self {
        FnDynamics {
            state_dim,
            control_dim,
            f,
        }
    }
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn derivative(&self, state: &[f64], control: &[f64], out: &mut [f64]) {
        (self.f)(state, control, out)
    }
}

/// Vector field plus the finite control set the minimizations range over.
#[derive(Clone)]
pub struct SystemModel {
    dynamics: Arc<dyn Dynamics>,
    controls: Vec<Vec<f64>>,
    /// Period `[lower, upper)` of each wrapped state component.
    wrap: Vec<Option<(f64, f64)>>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("state_dim", &self.state_dim())
            .field("controls", &self.controls)
            .field("wrap", &self.wrap)
            .finish()
    }
}

impl SystemModel {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        controls: Vec<Vec<f64>>,
        wrap: Vec<Option<(f64, f64)>>,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidConfig(alloc::format!(
                "state dimension {n} outside 1..={MAX_DIM}"
            )));
        }
        if wrap.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: wrap.len(),
            });
        }
        if controls.is_empty() {
            return Err(Error::InvalidConfig("control set is empty".into()));
        }
        let m = dynamics.control_dim();
        if let Some(bad) = controls.iter().find(|u| u.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        if let Some((lo, hi)) = wrap.iter().flatten().find(|(lo, hi)| !(hi > lo)) {
            return Err(Error::InvalidConfig(alloc::format!(
                "empty period [{lo}, {hi})"
            )));
        }
        Ok(SystemModel {
            dynamics,
            controls,
            wrap,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn wrap(&self) -> &[Option<(f64, f64)>] {
        &self.wrap
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        &*self.dynamics
    }

    pub fn derivative(&self, state: &[f64], control: &[f64], out: &mut [f64]) {
        self.dynamics.derivative(state, control, out)
    }

    /// Checks that the wrapped components agree with the grid's periodic axes.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                found: grid.dim(),
            });
        }
        for (d, (axis, wrap)) in grid.axes().iter().zip(&self.wrap).enumerate() {
            let agrees = match wrap {
                Some((lo, hi)) => axis.periodic && axis.lower == *lo && axis.upper == *hi,
                None => !axis.periodic,
            };
            if !agrees {
                return Err(Error::InvalidConfig(alloc::format!(
                    "periodicity of dimension {d} differs between model and grid"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform samples of `[lower, upper]`, endpoints included.
pub fn uniform_controls(lower: f64, upper: f64, count: usize) -> Vec<Vec<f64>> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![alloc::vec![0.5 * (lower + upper)]],
        _ => (0..count)
            .map(|i| {
                alloc::vec![lower + i as f64 * (upper - lower) / (count - 1) as f64]
            })
            .collect(),
    }
}

/// Absolute slack on box faces. Integration round-off would otherwise leave
/// states a few ulps outside a face whose node value is already the target's.
pub const TARGET_TOLERANCE: f64 = 1e-9;

/// Closed axis-aligned box; `None` leaves a dimension unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBox {
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl TargetBox {
    pub fn new(bounds: Vec<Option<(f64, f64)>>) -> Self {
        TargetBox { bounds }
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(s)
            .all(|(b, &x)| b.is_none_or(|(lo, hi)| {
                x >= lo - TARGET_TOLERANCE && x <= hi + TARGET_TOLERANCE
            }))
    }
}

pub type ImplicitFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Union of closed boxes and an optional implicit set `{ s | g(s) <= 0 }`.
#[derive(Clone, Default)]
pub struct TargetSet {
    boxes: Vec<TargetBox>,
    implicit: Option<ImplicitFn>,
}

impl fmt::Debug for TargetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetSet")
            .field("boxes", &self.boxes)
            .field("implicit", &self.implicit.is_some())
            .finish()
    }
}

impl TargetSet {
    pub fn from_boxes(boxes: Vec<TargetBox>) -> Self {
        TargetSet {
            boxes,
            implicit: None,
        }
    }

    pub fn with_implicit(mut self, g: ImplicitFn) -> Self {
        self.implicit = Some(g);
        self
    }

    pub fn boxes(&self) -> &[TargetBox] {
        &self.boxes
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(s))
            || self.implicit.as_ref().is_some_and(|g| g(s) <= 0.0)
    }
}

/// Running and endpoint costs with their global lower bounds.
#[derive(Clone)]
pub struct CostSpec {
    running: Arc<dyn RunningCost>,
    endpoint: Arc<dyn EndpointCost>,
    /// `lambda`: strictly positive lower bound of the running cost.
    running_floor: f64,
    /// `Lambda`: lower bound of the endpoint cost.
    endpoint_floor: f64,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("running_floor", &self.running_floor)
            .field("endpoint_floor", &self.endpoint_floor)
            .finish()
    }
}

/// Slack allowed when checking sampled costs against declared floors.
pub const FLOOR_SLACK: f64 = 1e-12;

impl CostSpec {
    pub fn new(
        running: Arc<dyn RunningCost>,
        endpoint: Arc<dyn EndpointCost>,
        running_floor: f64,
        endpoint_floor: f64,
    ) -> Result<Self> {
        if !(running_floor > 0.0) || !running_floor.is_finite() {
            return Err(Error::Assumption(alloc::format!(
                "running-cost lower bound must be positive, got {running_floor}"
            )));
        }
        if !endpoint_floor.is_finite() {
            return Err(Error::Assumption("endpoint-cost lower bound is not finite".into()));
        }
        Ok(CostSpec {
            running,
            endpoint,
            running_floor,
            endpoint_floor,
        })
    }

    /// Minimum-time costs: `c = 1`, `Phi = 0`.
    pub fn min_time() -> Self {
        CostSpec {
            running: Arc::new(Constant(1.0)),
            endpoint: Arc::new(Constant(0.0)),
            running_floor: 1.0,
            endpoint_floor: 0.0,
        }
    }

    /// Builds the spec with both bounds estimated as minima over grid nodes
    /// times controls. The estimate can only overshoot the true infimum.
    pub fn with_sampled_bounds(
        running: Arc<dyn RunningCost>,
        endpoint: Arc<dyn EndpointCost>,
        grid: &GridSpec,
        controls: &[Vec<f64>],
    ) -> Result<Self> {
        let (running_floor, _) = sample_running(&*running, grid, controls);
        let endpoint_floor = sample_endpoint(&*endpoint, grid);
        Self::new(running, endpoint, running_floor, endpoint_floor)
    }

    /// Same evaluators with replaced bounds.
    pub fn with_floors(&self, running_floor: f64, endpoint_floor: f64) -> Result<Self> {
        Self::new(
            self.running.clone(),
            self.endpoint.clone(),
            running_floor,
            endpoint_floor,
        )
    }

    /// Same evaluators with bounds re-estimated by sampling.
    pub fn resampled(&self, grid: &GridSpec, controls: &[Vec<f64>]) -> Result<Self> {
        Self::with_sampled_bounds(self.running.clone(), self.endpoint.clone(), grid, controls)
    }

    pub fn running_floor(&self) -> f64 {
        self.running_floor
    }

    pub fn endpoint_floor(&self) -> f64 {
        self.endpoint_floor
    }

    #[inline]
    pub fn running(&self, s: &[f64], u: &[f64]) -> f64 {
        self.running.running(s, u)
    }

    #[inline]
    pub fn endpoint(&self, s: &[f64]) -> f64 {
        self.endpoint.endpoint(s)
    }

    /// `lambda * horizon + Lambda`: values strictly below this are exact
    /// minimal performance indices.
    pub fn validity_bound(&self, horizon: f64) -> f64 {
        self.running_floor * horizon + self.endpoint_floor
    }

    /// Largest sampled running cost over grid nodes and controls.
    pub fn sampled_running_max(&self, grid: &GridSpec, controls: &[Vec<f64>]) -> f64 {
        sample_running(&*self.running, grid, controls).1
    }

    /// Verifies the declared floors against samples on the grid.
    pub fn check_floors(&self, grid: &GridSpec, controls: &[Vec<f64>]) -> Result<()> {
        let (cmin, _) = sample_running(&*self.running, grid, controls);
        if cmin < self.running_floor - FLOOR_SLACK {
            return Err(Error::Assumption(alloc::format!(
                "sampled running cost {cmin} is below the declared floor {}",
                self.running_floor
            )));
        }
        let pmin = sample_endpoint(&*self.endpoint, grid);
        if pmin < self.endpoint_floor - FLOOR_SLACK {
            return Err(Error::Assumption(alloc::format!(
                "sampled endpoint cost {pmin} is below the declared floor {}",
                self.endpoint_floor
            )));
        }
        Ok(())
    }
}

fn sample_running(c: &dyn RunningCost, grid: &GridSpec, controls: &[Vec<f64>]) -> (f64, f64) {
    let mut s = [0.0; MAX_DIM];
    let s = &mut s[..grid.dim()];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for node in 0..grid.node_count() {
        grid.node_at(node, s);
        for u in controls {
            let v = c.running(s, u);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn sample_endpoint(p: &dyn EndpointCost, grid: &GridSpec) -> f64 {
    let mut s = [0.0; MAX_DIM];
    let s = &mut s[..grid.dim()];
    let mut lo = f64::INFINITY;
    for node in 0..grid.node_count() {
        grid.node_at(node, s);
        lo = lo.min(p.endpoint(s));
    }
    lo
}

/// Model, costs and target bundled with an opaque digest identifying them.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SystemModel,
    pub costs: CostSpec,
    pub target: TargetSet,
    pub digest: String,
}

impl Problem {
    pub fn new(model: SystemModel, costs: CostSpec, target: TargetSet) -> Self {
        Problem {
            model,
            costs,
            target,
            digest: String::new(),
        }
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.digest = digest.into();
        self
    }
}

/// Advances `s` by `dt` under constant `u` with classical RK4, writing into `out`.
/// Periodic components are wrapped after the step.
pub fn integrate_step_into(
    model: &SystemModel,
    s: &[f64],
    u: &[f64],
    dt: f64,
    out: &mut [f64],
) -> Result<()> {
    let n = model.state_dim();
    if s.len() != n || out.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s.len().min(out.len()),
        });
    }
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut tmp = [0.0; MAX_DIM];
    let f = model.dynamics();

    f.derivative(s, u, &mut k1[..n]);
    for i in 0..n {
        tmp[i] = s[i] + 0.5 * dt * k1[i];
    }
    f.derivative(&tmp[..n], u, &mut k2[..n]);
    for i in 0..n {
        tmp[i] = s[i] + 0.5 * dt * k2[i];
    }
    f.derivative(&tmp[..n], u, &mut k3[..n]);
    for i in 0..n {
        tmp[i] = s[i] + dt * k3[i];
    }
    f.derivative(&tmp[..n], u, &mut k4[..n]);

    for i in 0..n {
        let slope = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
        if !slope.is_finite() {
            return Err(Error::NonFiniteDerivative);
        }
        let mut x = s[i] + dt * slope;
        if let Some((lo, hi)) = model.wrap[i] {
            x = math::wrap(x, lo, hi);
        }
        out[i] = x;
    }
    Ok(())
}

pub fn integrate_step(model: &SystemModel, s: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; s.len()];
    integrate_step_into(model, s, u, dt, &mut out)?;
    Ok(out)
}

/// One step of the frozen dynamics: identity inside the target.
pub fn frozen_step(
    model: &SystemModel,
    target: &TargetSet,
    s: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if target.contains(s) {
        return Ok(s.to_vec());
    }
    integrate_step(model, s, u, dt)
}

/// Left-endpoint rectangle rule for the running cost over one step.
#[inline]
pub fn stage_cost(costs: &CostSpec, s: &[f64], u: &[f64], dt: f64) -> f64 {
    costs.running(s, u) * dt
}

/// Stage cost of the frozen problem: zero inside the target.
#[inline]
pub fn frozen_stage_cost(
    costs: &CostSpec,
    target: &TargetSet,
    s: &[f64],
    u: &[f64],
    dt: f64,
) -> f64 {
    if target.contains(s) {
        0.0
    } else {
        stage_cost(costs, s, u, dt)
    }
}

/// Time-stamped closed-loop run with its performance index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// One fewer than `states`.
    pub controls: Vec<Vec<f64>>,
    /// Running cost accumulated after each state, same length as `states`.
    pub running: Vec<f64>,
    /// Running integral, plus the endpoint cost when the target was hit.
    pub accumulated_cost: f64,
    pub reached_target: bool,
    pub first_hit_time: Option<f64>,
    pub exited_domain: bool,
}
