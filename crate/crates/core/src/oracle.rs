//! Exhaustive ground truth for small instances.
//!
//! Enumerates every piecewise-constant control sequence over the model's
//! finite control set, integrates the true dynamics, and stops each branch at
//! its first entry into the target. The minimum over hitting branches is the
//! exact discrete minimal performance index; no grid or interpolation is
//! involved. Branch-and-bound pruning is exact because the running cost is
//! bounded below by a positive constant and the endpoint cost by its floor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{integrate_step_into, stage_cost, Problem};
use crate::error::{Error, Result};
use crate::grid::{OutOfDomain, ValueField};
use crate::solver::HORIZON_TOLERANCE;
use crate::{math, MAX_DIM};

pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub steps: usize,
    pub dt: f64,
    /// Refuse when `controls^steps` exceeds this.
    pub budget: u64,
    pub prune: bool,
}

impl OracleSettings {
    pub fn new(steps: usize, dt: f64) -> Self {
        OracleSettings {
            steps,
            dt,
            budget: DEFAULT_BUDGET,
            prune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub start: Vec<f64>,
    /// Minimal performance index over hitting sequences.
    pub cost: Option<f64>,
    pub hit_step: Option<usize>,
    /// Branches terminated (hit, pruned or exhausted).
    pub sequences: u64,
    /// `lambda * steps * dt + Lambda`, the least value a non-hitting start
    /// can carry in the frozen problem.
    pub saturation: f64,
    /// `steps * dt`.
    pub horizon: f64,
    pub problem_digest: String,
}

impl OracleResult {
    /// Oracle cost, or the saturation value when nothing hits.
    pub fn reference_value(&self) -> f64 {
        self.cost.unwrap_or(self.saturation)
    }
}

struct Search<'a> {
    problem: &'a Problem,
    dt: f64,
    steps: usize,
    prune: bool,
    floor: f64,
    best: f64,
    best_step: Option<usize>,
    sequences: u64,
    states: Vec<[f64; MAX_DIM]>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, acc: f64) -> Result<()> {
        let n = self.problem.model.state_dim();
        let s = self.states[depth];
        for u in self.problem.model.controls() {
            let cost = acc + stage_cost(&self.problem.costs, &s[..n], u, self.dt);
            if self.prune && cost + self.floor >= self.best {
                self.sequences += 1;
                continue;
            }
            let mut next = [0.0; MAX_DIM];
            match integrate_step_into(&self.problem.model, &s[..n], u, self.dt, &mut next[..n]) {
                Ok(()) if next[..n].iter().all(|x| x.is_finite()) => {}
                // A diverged trajectory never reaches the target.
                Ok(()) | Err(Error::NonFiniteDerivative) => {
                    self.sequences += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            if self.problem.target.contains(&next[..n]) {
                self.sequences += 1;
                let total = cost + self.problem.costs.endpoint(&next[..n]);
                if total < self.best {
                    self.best = total;
                    self.best_step = Some(depth + 1);
                }
                continue;
            }
            if depth + 1 == self.steps {
                self.sequences += 1;
                continue;
            }
            self.states[depth + 1] = next;
            self.descend(depth + 1, cost)?;
        }
        Ok(())
    }
}

/// Depth-first enumeration of all control sequences of length `<= steps`.
pub fn brute_force_value(
    problem: &Problem,
    s0: &[f64],
    settings: &OracleSettings,
) -> Result<OracleResult> {
    let n = problem.model.state_dim();
    if s0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s0.len(),
        });
    }
    if !(settings.dt > 0.0) {
        return Err(Error::InvalidConfig("oracle dt must be positive".into()));
    }
    let branching = problem.model.controls().len() as u128;
    let required = (0..settings.steps).fold(1u128, |acc, _| acc.saturating_mul(branching));
    if required > settings.budget as u128 {
        return Err(Error::BudgetExceeded {
            required,
            budget: settings.budget,
        });
    }

    let costs = &problem.costs;
    let horizon = settings.steps as f64 * settings.dt;
    let mut result = OracleResult {
        start: s0.to_vec(),
        cost: None,
        hit_step: None,
        sequences: 1,
        saturation: costs.running_floor() * horizon + costs.endpoint_floor(),
        horizon,
        problem_digest: problem.digest.clone(),
    };
    if problem.target.contains(s0) {
        result.cost = Some(costs.endpoint(s0));
        result.hit_step = Some(0);
        return Ok(result);
    }
    if settings.steps == 0 {
        return Ok(result);
    }

    let mut search = Search {
        problem,
        dt: settings.dt,
        steps: settings.steps,
        prune: settings.prune,
        floor: costs.endpoint_floor(),
        best: f64::INFINITY,
        best_step: None,
        sequences: 0,
        states: vec![[0.0; MAX_DIM]; settings.steps + 1],
    };
    search.states[0][..n].copy_from_slice(s0);
    search.descend(0, 0.0)?;

    result.sequences = search.sequences;
    if search.best_step.is_some() {
        result.cost = Some(search.best);
        result.hit_step = search.best_step;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointComparison {
    pub state: Vec<f64>,
    pub field_value: f64,
    pub oracle: Option<f64>,
    /// `W - J*`; for non-hitting starts only a shortfall below the saturation
    /// value counts, so this is `min(0, W - saturation)`.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdAgreement {
    pub threshold: f64,
    pub compared: usize,
    pub agreed: usize,
    /// Points within the value band around the threshold.
    pub excluded: usize,
}

impl ThresholdAgreement {
    pub fn rate(&self) -> f64 {
        if self.compared == 0 {
            1.0
        } else {
            self.agreed as f64 / self.compared as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonStats {
    pub points: Vec<PointComparison>,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    pub agreement: Vec<ThresholdAgreement>,
}

impl ComparisonStats {
    /// Fraction of points whose absolute error is at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.points.is_empty() {
            return 1.0;
        }
        let ok = self
            .points
            .iter()
            .filter(|p| math::abs(p.error) <= tol)
            .count();
        ok as f64 / self.points.len() as f64
    }
}

/// Error statistics of a solved field against oracle results, plus level-set
/// classification agreement away from a band of `band_cells` local cell
/// ranges around each threshold.
pub fn compare_field(
    field: &ValueField,
    results: &[OracleResult],
    thresholds: &[f64],
    band_cells: f64,
    policy: OutOfDomain,
) -> Result<ComparisonStats> {
    let field_digest = &field.meta().problem_digest;
    let mut stats = ComparisonStats {
        agreement: thresholds
            .iter()
            .map(|&threshold| ThresholdAgreement {
                threshold,
                compared: 0,
                agreed: 0,
                excluded: 0,
            })
            .collect(),
        ..ComparisonStats::default()
    };
    for r in results {
        if !field_digest.is_empty()
            && !r.problem_digest.is_empty()
            && *field_digest != r.problem_digest
        {
            return Err(Error::DigestMismatch {
                field: field_digest.clone(),
                oracle: r.problem_digest.clone(),
            });
        }
        if r.horizon > field.meta().horizon + HORIZON_TOLERANCE {
            return Err(Error::InvalidConfig(alloc::format!(
                "oracle horizon {} exceeds field horizon {}",
                r.horizon,
                field.meta().horizon
            )));
        }
        let w = field.interpolate(&r.start, policy)?;
        let error = match r.cost {
            Some(c) => w - c,
            None => (w - r.saturation).min(0.0),
        };
        stats.points.push(PointComparison {
            state: r.start.clone(),
            field_value: w,
            oracle: r.cost,
            error,
        });

        let range = field
            .enclosing_range(&r.start, policy)?
            .map_or(0.0, |(lo, hi)| hi - lo);
        for a in &mut stats.agreement {
            if math::abs(w - a.threshold) <= band_cells * range {
                a.excluded += 1;
                continue;
            }
            let oracle_inside = r.cost.is_some_and(|c| c <= a.threshold);
            a.compared += 1;
            if oracle_inside == (w <= a.threshold) {
                a.agreed += 1;
            }
        }
    }
    if !stats.points.is_empty() {
        let abs: Vec<f64> = stats.points.iter().map(|p| math::abs(p.error)).collect();
        stats.mean_abs_error = abs.iter().sum::<f64>() / abs.len() as f64;
        stats.max_abs_error = abs.iter().copied().fold(0.0, f64::max);
    }
    Ok(stats)
}
