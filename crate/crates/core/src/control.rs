//! Stationary feedback from a converged field, and closed-loop checks of the
//! reachability claims it makes.
//!
//! The control at `s` is the one-step lookahead argmin of
//! `C_K(s, u) + W(F_K(s, u))`, the same expression the solver minimizes. It
//! needs only the final field, not a time-indexed family of fields.

use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{integrate_step, stage_cost, Problem, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{OutOfDomain, ValueField};
use crate::solver::minimize;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlChoice {
    pub index: usize,
    pub control: Vec<f64>,
    /// Minimized candidate value; equals a Bellman update at `s`.
    pub value: f64,
}

fn field_dt(field: &ValueField) -> Result<f64> {
    let dt = field.meta().dt;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "field carries no positive time step (dt = {dt})"
        )));
    }
    Ok(dt)
}

/// Argmin control at `s`, ties to the lowest control index.
pub fn optimal_control(
    field: &ValueField,
    problem: &Problem,
    s: &[f64],
    policy: OutOfDomain,
) -> Result<ControlChoice> {
    if !field.grid().contains(s) {
        return Err(Error::OutOfDomain);
    }
    let dt = field_dt(field)?;
    let (value, index) = minimize(field, problem, s, dt, policy, usize::MAX)?;
    Ok(ControlChoice {
        index,
        control: problem.model.controls()[index].clone(),
        value,
    })
}

/// Runs the feedback law on the true dynamics and true running cost.
///
/// Stops at the first state inside the target (adding the endpoint cost
/// there), on leaving the domain, or after `max_steps` steps. Target hits are
/// only detected at whole steps.
pub fn simulate_closed_loop(
    field: &ValueField,
    problem: &Problem,
    s0: &[f64],
    max_steps: usize,
    policy: OutOfDomain,
) -> Result<Trajectory> {
    if !field.grid().contains(s0) {
        return Err(Error::OutOfDomain);
    }
    let dt = field_dt(field)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![s0.to_vec()],
        running: vec![0.0],
        ..Trajectory::default()
    };
    let mut s = s0.to_vec();
    let mut cost = 0.0;
    for k in 0..=max_steps {
        if problem.target.contains(&s) {
            traj.reached_target = true;
            traj.first_hit_time = Some(k as f64 * dt);
            cost += problem.costs.endpoint(&s);
            break;
        }
        if k == max_steps {
            break;
        }
        if !field.grid().contains(&s) {
            traj.exited_domain = true;
            break;
        }
        let choice = optimal_control(field, problem, &s, policy)?;
        cost += stage_cost(&problem.costs, &s, &choice.control, dt);
        s = integrate_step(&problem.model, &s, &choice.control, dt)?;
        traj.times.push((k + 1) as f64 * dt);
        traj.states.push(s.clone());
        traj.controls.push(choice.control);
        traj.running.push(cost);
    }
    traj.accumulated_cost = cost;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    /// Samples with `|W(s) - J|` within this many local cell ranges are skipped.
    pub band_cells: f64,
    /// Slack on the performance index when counting a success.
    pub cost_tolerance: f64,
    pub max_steps: usize,
    pub policy: OutOfDomain,
    pub parallel: bool,
}

impl VerifySettings {
    /// Two-cell band, `2 * dt * c_max` cost slack, and enough steps to
    /// exhaust the largest level.
    pub fn for_levels(field: &ValueField, problem: &Problem, levels: &[f64]) -> Self {
        let dt = field.meta().dt;
        let c_max = problem
            .costs
            .sampled_running_max(field.grid(), problem.model.controls());
        let cost_tolerance = 2.0 * dt * c_max;
        let j_max = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let budget = (j_max + cost_tolerance - problem.costs.endpoint_floor())
            / (problem.costs.running_floor() * dt);
        VerifySettings {
            band_cells: 2.0,
            cost_tolerance,
            max_steps: crate::math::ceil(budget.max(0.0)) as usize + 1,
            policy: OutOfDomain::Saturate,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyFailure {
    pub sample: usize,
    pub state: Vec<f64>,
    pub value: f64,
    /// `J - W(s)`.
    pub margin: f64,
    pub reached: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: f64,
    pub samples: usize,
    /// Members outside the band, i.e. the states actually simulated.
    pub predicted_inside: usize,
    /// Members skipped because they sit inside the band.
    pub excluded_band: usize,
    pub successes: usize,
    pub failures: Vec<VerifyFailure>,
}

impl LevelReport {
    pub fn success_rate(&self) -> f64 {
        if self.predicted_inside == 0 {
            1.0
        } else {
            self.successes as f64 / self.predicted_inside as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub band_cells: f64,
    pub cost_tolerance: f64,
    pub levels: Vec<LevelReport>,
}

struct SampleInfo {
    value: f64,
    /// `max - min` over the enclosing cell; `None` outside the domain.
    local_range: Option<f64>,
}

/// Closed-loop check of every predicted member of each level set.
///
/// One trajectory per sample is shared across levels; aggregation follows
/// sample order, so results do not depend on scheduling.
pub fn verify_region(
    field: &ValueField,
    problem: &Problem,
    levels: &[f64],
    samples: &[Vec<f64>],
    settings: &VerifySettings,
) -> Result<VerificationReport> {
    let mut info = Vec::with_capacity(samples.len());
    for s in samples {
        let value = field.interpolate(s, settings.policy)?;
        let local_range = if field.grid().contains(s) {
            field
                .enclosing_range(s, settings.policy)?
                .map(|(lo, hi)| hi - lo)
        } else {
            None
        };
        info.push(SampleInfo { value, local_range });
    }

    let tested = |i: &SampleInfo, level: f64| -> bool {
        match i.local_range {
            Some(range) => {
                let margin = level - i.value;
                margin >= 0.0 && margin > settings.band_cells * range
            }
            None => false,
        }
    };
    let needed: Vec<usize> = (0..samples.len())
        .filter(|&k| levels.iter().any(|&j| tested(&info[k], j)))
        .collect();

    let run = |k: &usize| {
        simulate_closed_loop(
            field,
            problem,
            &samples[*k],
            settings.max_steps,
            settings.policy,
        )
    };
    let trajectories: Vec<Trajectory> = {
        #[cfg(feature = "parallel")]
        {
            if settings.parallel {
                use rayon::prelude::*;
                needed.par_iter().map(run).collect::<Result<_>>()?
            } else {
                needed.iter().map(run).collect::<Result<_>>()?
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            needed.iter().map(run).collect::<Result<_>>()?
        }
    };

    let mut report = VerificationReport {
        band_cells: settings.band_cells,
        cost_tolerance: settings.cost_tolerance,
        levels: Vec::with_capacity(levels.len()),
    };
    for &level in levels {
        let mut lr = LevelReport {
            level,
            samples: samples.len(),
            predicted_inside: 0,
            excluded_band: 0,
            successes: 0,
            failures: Vec::new(),
        };
        for (k, i) in info.iter().enumerate() {
            let member = i.local_range.is_some() && i.value <= level;
            if !member {
                continue;
            }
            if !tested(i, level) {
                lr.excluded_band += 1;
                continue;
            }
            lr.predicted_inside += 1;
            let pos = needed.binary_search(&k).expect("simulated sample");
            let traj = &trajectories[pos];
            if traj.reached_target && traj.accumulated_cost <= level + settings.cost_tolerance {
                lr.successes += 1;
            } else {
                lr.failures.push(VerifyFailure {
                    sample: k,
                    state: samples[k].clone(),
                    value: i.value,
                    margin: level - i.value,
                    reached: traj.reached_target,
                    cost: traj.accumulated_cost,
                });
            }
        }
        report.levels.push(lr);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{uniform_controls, CostSpec, SystemModel, TargetBox, TargetSet};
    use crate::grid::{Axis, GridSpec};
    use crate::solver::{solve, SolverConfig};
    use crate::systems::SingleIntegrator;
    use alloc::sync::Arc;

    fn integrator() -> (Problem, ValueField) {
        let problem = Problem::new(
            SystemModel::new(
                Arc::new(SingleIntegrator),
                uniform_controls(-1.0, 1.0, 3),
                vec![None],
            )
            .unwrap(),
            CostSpec::min_time(),
            TargetSet::from_boxes(vec![TargetBox::new(vec![Some((-0.1, 0.1))])]),
        );
        let grid = GridSpec::new(vec![Axis::new(-1.0, 1.0, 201)]).unwrap();
        let (field, _) = solve(&problem, &grid, &SolverConfig::fixed(0.05, 30).unwrap()).unwrap();
        (problem, field)
    }

    #[test]
    fn drives_toward_target() {
        let (problem, field) = integrator();
        let c = optimal_control(&field, &problem, &[0.5], OutOfDomain::Saturate).unwrap();
        assert_eq!(c.control, vec![-1.0]);
        let c = optimal_control(&field, &problem, &[-0.5], OutOfDomain::Saturate).unwrap();
        assert_eq!(c.control, vec![1.0]);
    }

    #[test]
    fn inside_target_picks_lowest_index() {
        let (problem, field) = integrator();
        let c = optimal_control(&field, &problem, &[0.05], OutOfDomain::Saturate).unwrap();
        assert_eq!(c.index, 0);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn out_of_domain_state_rejected() {
        let (problem, field) = integrator();
        assert_eq!(
            optimal_control(&field, &problem, &[1.5], OutOfDomain::Saturate),
            Err(Error::OutOfDomain)
        );
    }

    #[test]
    fn start_in_target_is_immediate_hit() {
        let (problem, field) = integrator();
        let t = simulate_closed_loop(&field, &problem, &[0.0], 10, OutOfDomain::Saturate).unwrap();
        assert!(t.reached_target);
        assert_eq!(t.first_hit_time, Some(0.0));
        assert_eq!(t.accumulated_cost, 0.0);
        assert_eq!(t.states.len(), 1);
        assert!(t.controls.is_empty());
    }

    #[test]
    fn closed_loop_hits_at_predicted_time() {
        let (problem, field) = integrator();
        let t = simulate_closed_loop(&field, &problem, &[0.52], 40, OutOfDomain::Saturate).unwrap();
        assert!(t.reached_target);
        // nine unit-speed steps of 0.05 end at 0.07, the first state inside
        assert!((t.first_hit_time.unwrap() - 0.45).abs() < 1e-9);
        assert!((t.accumulated_cost - 0.45).abs() < 1e-9);
        assert_eq!(t.controls.len() + 1, t.states.len());
        for w in t.times.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn empty_samples_give_empty_tallies() {
        let (problem, field) = integrator();
        let settings = VerifySettings::for_levels(&field, &problem, &[0.5]);
        let r = verify_region(&field, &problem, &[0.5], &[], &settings).unwrap();
        assert_eq!(r.levels.len(), 1);
        assert_eq!(r.levels[0].predicted_inside, 0);
        assert_eq!(r.levels[0].samples, 0);
    }

    #[test]
    fn integrator_verification_succeeds() {
        let (problem, field) = integrator();
        let samples: Vec<Vec<f64>> = (0..=40).map(|i| vec![-0.9 + 0.045 * i as f64]).collect();
        let settings = VerifySettings::for_levels(&field, &problem, &[0.3, 0.6]);
        let r = verify_region(&field, &problem, &[0.3, 0.6], &samples, &settings).unwrap();
        for lr in &r.levels {
            assert!(lr.predicted_inside > 0);
            assert!(lr.successes <= lr.predicted_inside);
            assert_eq!(lr.successes, lr.predicted_inside, "{:?}", lr.failures);
        }
    }
}
