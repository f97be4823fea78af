//! Interval set-based Bellman operator.
//!
//! For a cost box `[C_lo, C_hi]` and a value box `[V_lo, V_hi]` the image of
//! the set-based operator is again a box, `[f_{C_lo}(V_lo), f_{C_hi}(V_hi)]`,
//! so set-based value iteration reduces to two decoupled classic iterations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interval::{hausdorff_interval, point_to_box_distance, IntervalMatrix, IntervalVector, PointSet};
use crate::mdp::{bellman_raw, check_epsilon, stopping_threshold, value_iteration, Mdp, ValueFunction, DEFAULT_MAX_ITERS};
use crate::random::{seeded_rng, streams};

/// Default certification accuracy for fixed-point computations.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Family of MDPs sharing `(P, gamma)` with costs ranging over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMdp {
    lower: Mdp,
    upper: Mdp,
    cost_box: IntervalMatrix,
}

impl IntervalMdp {
    pub fn new(kernel: DMatrix<f64>, cost_box: IntervalMatrix, discount: f64) -> Result<Self> {
        let lower = Mdp::new(kernel, cost_box.lo().clone(), discount)?;
        let upper = lower.with_cost(cost_box.hi().clone())?;
        Ok(Self { lower, upper, cost_box })
    }

    /// Degenerate family `{C}` around a single MDP.
    pub fn from_mdp(mdp: &Mdp) -> Self {
        Self { lower: mdp.clone(), upper: mdp.clone(), cost_box: IntervalMatrix::point(mdp.cost().clone()) }
    }

    pub fn num_states(&self) -> usize {
        self.lower.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.lower.num_actions()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        self.lower.kernel()
    }

    pub fn discount(&self) -> f64 {
        self.lower.discount()
    }

    pub fn cost_box(&self) -> &IntervalMatrix {
        &self.cost_box
    }

    /// The MDP with cost `C_lo`.
    pub fn lower_mdp(&self) -> &Mdp {
        &self.lower
    }

    /// The MDP with cost `C_hi`.
    pub fn upper_mdp(&self) -> &Mdp {
        &self.upper
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.num_states() {
            return Err(Error::dims("value box", self.num_states(), n));
        }
        Ok(())
    }
}

/// Converged (or budget-exhausted) set-based value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SetViSolution {
    pub vbox: IntervalVector,
    pub iterations: usize,
    pub converged: bool,
    /// When converged, `d_H(vbox, V*) <= certified_epsilon / 2`.
    pub certified_epsilon: f64,
    pub last_step: f64,
}

impl SetViSolution {
    /// The iterate enlarged by `certified_epsilon / 2`; contains the
    /// fixed-point box whenever `converged` holds.
    pub fn over_approximation(&self) -> IntervalVector {
        inflate(&self.vbox, self.certified_epsilon / 2.0).expect("non-negative epsilon")
    }
}

fn apply_unchecked(imdp: &IntervalMdp, lo: &DVector<f64>, hi: &DVector<f64>) -> IntervalVector {
    let (kernel, gamma) = (imdp.kernel(), imdp.discount());
    let (next_lo, _) = bellman_raw(kernel, imdp.cost_box.lo(), gamma, lo);
    let (next_hi, _) = bellman_raw(kernel, imdp.cost_box.hi(), gamma, hi);
    IntervalVector::from_endpoints_unchecked(next_lo, next_hi)
}

pub fn set_bellman_apply(imdp: &IntervalMdp, vbox: &IntervalVector) -> Result<IntervalVector> {
    imdp.check_len(vbox.len())?;
    Ok(apply_unchecked(imdp, vbox.lo(), vbox.hi()))
}

/// Iterates [`set_bellman_apply`] until
/// `d_H(V^k, V^{k-1}) * 2 gamma / (1 - gamma) < epsilon`.
pub fn set_value_iteration(
    imdp: &IntervalMdp,
    v0: &IntervalVector,
    epsilon: f64,
    max_iters: usize,
) -> Result<SetViSolution> {
    imdp.check_len(v0.len())?;
    check_epsilon(epsilon)?;
    let threshold = stopping_threshold(epsilon, imdp.discount());
    let mut current = v0.clone();
    let mut last_step = f64::INFINITY;
    for k in 1..=max_iters {
        let next = apply_unchecked(imdp, current.lo(), current.hi());
        last_step = hausdorff_interval(&next, &current)?;
        current = next;
        if last_step < threshold {
            return Ok(SetViSolution {
                vbox: current,
                iterations: k,
                converged: true,
                certified_epsilon: epsilon,
                last_step,
            });
        }
    }
    Ok(SetViSolution { vbox: current, iterations: max_iters, converged: false, certified_epsilon: epsilon, last_step })
}

/// `[V_lo*, V_hi*]` from two independent value iterations at the endpoint
/// costs; each endpoint is within `epsilon / 2` of the true one.
pub fn fixed_point_box(imdp: &IntervalMdp, epsilon: f64) -> Result<IntervalVector> {
    let zero = ValueFunction::zeros(imdp.num_states());
    let mut ends = Vec::with_capacity(2);
    for mdp in [&imdp.lower, &imdp.upper] {
        let out = value_iteration(mdp, &zero, epsilon, DEFAULT_MAX_ITERS)?;
        if !out.converged {
            return Err(Error::NotConverged { iterations: out.iterations });
        }
        ends.push(out.value.into_vector());
    }
    let hi = ends.pop().expect("two endpoints");
    let lo = ends.pop().expect("two endpoints");
    // each endpoint carries its own eps/2 error, so order them explicitly
    let (lo, hi) = (lo.zip_map(&hi, f64::min), lo.zip_map(&hi, f64::max));
    IntervalVector::new(lo, hi)
}

/// `[lo - epsilon, hi + epsilon]`.
pub fn inflate(vbox: &IntervalVector, epsilon: f64) -> Result<IntervalVector> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::param("epsilon", format!("inflation {epsilon} must be finite and >= 0")));
    }
    Ok(IntervalVector::from_endpoints_unchecked(
        vbox.lo().add_scalar(-epsilon),
        vbox.hi().add_scalar(epsilon),
    ))
}

/// Rule for drawing a cost matrix from an interval MDP's cost box.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSampler {
    /// Each entry uniform on its interval.
    UniformBox,
    /// Each entry independently at its lower or upper end with probability 1/2.
    Vertex,
    /// Uniform choice from an explicit list; every member must lie in the box.
    FiniteList(Vec<DMatrix<f64>>),
}

impl CostSampler {
    pub fn name(&self) -> &'static str {
        match self {
            CostSampler::UniformBox => "uniform-box",
            CostSampler::Vertex => "vertex",
            CostSampler::FiniteList(_) => "finite-list",
        }
    }

    pub fn check(&self, cost_box: &IntervalMatrix) -> Result<()> {
        if let CostSampler::FiniteList(list) = self {
            if list.is_empty() {
                return Err(Error::param("sampler", "finite cost list is empty"));
            }
            if let Some(index) = list.iter().position(|c| !cost_box.contains(c, 0.0)) {
                return Err(Error::CostOutsideBox { index });
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, cost_box: &IntervalMatrix, rng: &mut R) -> DMatrix<f64> {
        let (rows, cols) = cost_box.shape();
        match self {
            CostSampler::UniformBox => {
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let x = cost_box.get(r, c);
                        data.push(x.lo() + rng.gen::<f64>() * x.width());
                    }
                }
                DMatrix::from_row_slice(rows, cols, &data)
            }
            CostSampler::Vertex => {
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let x = cost_box.get(r, c);
                        data.push(if rng.gen_bool(0.5) { x.hi() } else { x.lo() });
                    }
                }
                DMatrix::from_row_slice(rows, cols, &data)
            }
            CostSampler::FiniteList(list) => list[rng.gen_range(0..list.len())].clone(),
        }
    }
}

/// Optimal value functions of the MDPs `(P, C, gamma)` for each listed cost,
/// in list order.
pub fn fixed_points_for_costs(dynamics: &Mdp, costs: &[DMatrix<f64>], epsilon: f64) -> Result<PointSet> {
    let zero = ValueFunction::zeros(dynamics.num_states());
    let points = costs
        .par_iter()
        .map(|c| {
            let mdp = dynamics.with_cost(c.clone())?;
            let out = value_iteration(&mdp, &zero, epsilon, DEFAULT_MAX_ITERS)?;
            if !out.converged {
                return Err(Error::NotConverged { iterations: out.iterations });
            }
            Ok(out.value.into_vector())
        })
        .collect::<Result<Vec<_>>>()?;
    PointSet::new(points)
}

/// Sampled approximation of the set of optimal value functions over the cost
/// box: both endpoints followed by `num_samples` uniform draws.
pub fn sampled_fixed_points(imdp: &IntervalMdp, num_samples: usize, seed: u64, epsilon: f64) -> Result<PointSet> {
    sampled_fixed_points_with(imdp, &CostSampler::UniformBox, num_samples, seed, epsilon)
}

/// [`sampled_fixed_points`] with an explicit sampler. A finite list is
/// evaluated member by member, in order, and `num_samples` is ignored.
pub fn sampled_fixed_points_with(
    imdp: &IntervalMdp,
    sampler: &CostSampler,
    num_samples: usize,
    seed: u64,
    epsilon: f64,
) -> Result<PointSet> {
    sampler.check(&imdp.cost_box)?;
    if let CostSampler::FiniteList(list) = sampler {
        return fixed_points_for_costs(&imdp.lower, list, epsilon);
    }
    if num_samples == 0 {
        return Err(Error::param("num_samples", "must be at least 1"));
    }
    let mut rng = seeded_rng(seed, streams::COST_SAMPLER);
    let mut costs = vec![imdp.cost_box.lo().clone(), imdp.cost_box.hi().clone()];
    costs.extend((0..num_samples).map(|_| sampler.sample(&imdp.cost_box, &mut rng)));
    fixed_points_for_costs(&imdp.lower, &costs, epsilon)
}

/// A value trajectory paired with synchronized interval iterates.
pub trait BoundedTrajectory {
    fn num_steps(&self) -> usize;
    fn value_at(&self, k: usize) -> &DVector<f64>;
    fn box_at(&self, k: usize) -> &IntervalVector;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub value: DVector<f64>,
    /// Synchronized iterate `V^k = F^k({v0})`.
    pub vbox: IntervalVector,
    /// Distance from `value` to the fixed-point box.
    pub dist_to_fixed_box: f64,
    /// Cost applied to produce `value`; `None` at step 0.
    pub cost: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<TrajectoryStep>,
    pub fixed_box: IntervalVector,
    pub sampler: &'static str,
    pub seed: u64,
}

impl BoundedTrajectory for TrajectoryRecord {
    fn num_steps(&self) -> usize {
        self.steps.len()
    }

    fn value_at(&self, k: usize) -> &DVector<f64> {
        &self.steps[k].value
    }

    fn box_at(&self, k: usize) -> &IntervalVector {
        &self.steps[k].vbox
    }
}

/// Runs `V^{k+1} = f_{C^k}(V^k)` with `C^k` drawn by `sampler`, alongside the
/// set iteration started from the degenerate box `{v0}`.
pub fn random_cost_trajectory(
    imdp: &IntervalMdp,
    v0: &ValueFunction,
    num_steps: usize,
    seed: u64,
    sampler: &CostSampler,
) -> Result<TrajectoryRecord> {
    if num_steps == 0 {
        return Err(Error::param("num_steps", "must be at least 1"));
    }
    imdp.check_len(v0.len())?;
    sampler.check(&imdp.cost_box)?;
    let fixed_box = fixed_point_box(imdp, DEFAULT_EPSILON)?;
    let mut rng = seeded_rng(seed, streams::COST_SAMPLER);

    let mut value = v0.as_vector().clone();
    let mut vbox = IntervalVector::point(value.clone());
    let mut steps = Vec::with_capacity(num_steps + 1);
    steps.push(TrajectoryStep {
        step: 0,
        dist_to_fixed_box: point_to_box_distance(&value, &fixed_box)?,
        value: value.clone(),
        vbox: vbox.clone(),
        cost: None,
    });
    for k in 1..=num_steps {
        let cost = sampler.sample(&imdp.cost_box, &mut rng);
        value = bellman_raw(imdp.kernel(), &cost, imdp.discount(), &value).0;
        vbox = apply_unchecked(imdp, vbox.lo(), vbox.hi());
        steps.push(TrajectoryStep {
            step: k,
            dist_to_fixed_box: point_to_box_distance(&value, &fixed_box)?,
            value: value.clone(),
            vbox: vbox.clone(),
            cost: Some(cost),
        });
    }
    Ok(TrajectoryRecord { steps, fixed_box, sampler: sampler.name(), seed })
}
