//! Built-in example systems.
//!
//! * `two_dim_poly`: `x' = y + x^2`, `y' = -x + y^3 + u`, `u in [-1, 1]`,
//!   target `[-0.2, 0.2]^2`, minimum-time costs.
//! * `planar_flight`: unit-speed vehicle with turn-rate control in the wind
//!   field `(y + 0.1 y^3, -x - 0.1 x^3)`, heading periodic on `[0, 2pi)`,
//!   target `x in [-0.5, 0.5], y in [1.5, 2.5]`, running cost
//!   `1 + gamma * |(x', y')|` and an optional endpoint cost.

use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use core::f64::consts::PI;

use crate::dynamics::{
    uniform_controls, Constant, CostSpec, Dynamics, EndpointCost, RunningCost, SystemModel,
    TargetBox, TargetSet,
};
use crate::error::{Error, Result};
use crate::math;

pub const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, Default)]
pub struct TwoDimPoly;

impl Dynamics for TwoDimPoly {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn derivative(&self, s: &[f64], u: &[f64], out: &mut [f64]) {
        let (x, y) = (s[0], s[1]);
        out[0] = y + x * x;
        out[1] = -x + y * y * y + u[0];
    }
}

/// Point-mass vehicle in a rotational wind field.
#[derive(Debug, Clone, Copy)]
pub struct PlanarFlight {
    pub speed: f64,
    pub wind_cubic: f64,
}

impl Default for PlanarFlight {
    fn default() -> Self {
        PlanarFlight {
            speed: 1.0,
            wind_cubic: 0.1,
        }
    }
}

impl PlanarFlight {
    pub fn wind(&self, x: f64, y: f64) -> (f64, f64) {
        (
            y + self.wind_cubic * y * y * y,
            -x - self.wind_cubic * x * x * x,
        )
    }

    /// Ground velocity `(x', y')`.
    pub fn velocity(&self, s: &[f64]) -> (f64, f64) {
        let (wx, wy) = self.wind(s[0], s[1]);
        (
            self.speed * math::cos(s[2]) + wx,
            self.speed * math::sin(s[2]) + wy,
        )
    }
}

impl Dynamics for PlanarFlight {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn derivative(&self, s: &[f64], u: &[f64], out: &mut [f64]) {
        let (vx, vy) = self.velocity(s);
        out[0] = vx;
        out[1] = vy;
        out[2] = u[0];
    }
}

/// `1 + gamma * |ground velocity|`.
#[derive(Debug, Clone, Copy)]
pub struct PathLengthCost {
    pub flight: PlanarFlight,
    pub gamma: f64,
}

impl RunningCost for PathLengthCost {
    fn running(&self, s: &[f64], _: &[f64]) -> f64 {
        let (vx, vy) = self.flight.velocity(s);
        1.0 + self.gamma * math::sqrt(vx * vx + vy * vy)
    }
}

/// `-exp(-x^2 - y^2 - min(theta, 2pi - theta))`, minimum `-1` at the origin
/// heading east.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadingWell;

impl EndpointCost for HeadingWell {
    fn endpoint(&self, s: &[f64]) -> f64 {
        let theta = math::wrap(s[2], 0.0, TWO_PI);
        let heading = theta.min(TWO_PI - theta);
        -math::exp(-s[0] * s[0] - s[1] * s[1] - heading)
    }
}

/// `s' = u`, handy for hand-checkable examples.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleIntegrator;

impl Dynamics for SingleIntegrator {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn derivative(&self, _: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndpointSelector {
    #[default]
    Zero,
    HeadingWell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinParams {
    pub gamma: f64,
    pub endpoint: EndpointSelector,
    /// Samples of the control interval `[-1, 1]`.
    pub control_count: usize,
}

impl Default for BuiltinParams {
    fn default() -> Self {
        BuiltinParams {
            gamma: 0.0,
            endpoint: EndpointSelector::Zero,
            control_count: 21,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltinSystem {
    pub model: SystemModel,
    pub costs: CostSpec,
    pub target: TargetSet,
}

pub fn builtin_system(name: &str, params: &BuiltinParams) -> Result<BuiltinSystem> {
    if params.control_count == 0 {
        return Err(Error::InvalidConfig("control_count must be at least 1".into()));
    }
    let controls = uniform_controls(-1.0, 1.0, params.control_count);
    match name {
        "two_dim_poly" => Ok(BuiltinSystem {
            model: SystemModel::new(Arc::new(TwoDimPoly), controls, vec![None, None])?,
            costs: CostSpec::min_time(),
            target: TargetSet::from_boxes(vec![TargetBox::new(vec![
                Some((-0.2, 0.2)),
                Some((-0.2, 0.2)),
            ])]),
        }),
        "planar_flight" => {
            if !(params.gamma >= 0.0) {
                return Err(Error::InvalidConfig("gamma must be non-negative".into()));
            }
            let flight = PlanarFlight::default();
            let model = SystemModel::new(
                Arc::new(flight),
                controls,
                vec![None, None, Some((0.0, TWO_PI))],
            )?;
            let running: Arc<dyn RunningCost> = if params.gamma == 0.0 {
                Arc::new(Constant(1.0))
            } else {
                Arc::new(PathLengthCost {
                    flight,
                    gamma: params.gamma,
                })
            };
            // the ground speed reaches zero where the wind cancels the heading
            let costs = match params.endpoint {
                EndpointSelector::Zero => CostSpec::new(running, Arc::new(Constant(0.0)), 1.0, 0.0)?,
                EndpointSelector::HeadingWell => {
                    CostSpec::new(running, Arc::new(HeadingWell), 1.0, -1.0)?
                }
            };
            Ok(BuiltinSystem {
                model,
                costs,
                target: TargetSet::from_boxes(vec![TargetBox::new(vec![
                    Some((-0.5, 0.5)),
                    Some((1.5, 2.5)),
                    None,
                ])]),
            })
        }
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}
