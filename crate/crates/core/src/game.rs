//! Two-player single-controller stochastic games.
//!
//! Player one controls the transition kernel; player two only influences
//! player one's immediate cost. Fixing player two's policy turns player one's
//! problem into an ordinary MDP, and ranging over every policy of player two
//! yields an interval cost set whose fixed-point box bounds player one's value
//! trajectory whatever player two does.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{point_to_box_distance, IntervalMatrix, IntervalVector};
use crate::mdp::{bellman_raw, q_matrix, Mdp, Policy, ValueFunction};
use crate::random::{seeded_rng, streams, uniform_vector};
use crate::set_bellman::{fixed_point_box, set_bellman_apply, BoundedTrajectory, IntervalMdp, DEFAULT_EPSILON};

/// How the coupling matrix `J` enters the players' costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingForm {
    /// `D1[s,a,b] = C[s,a] + J[s,a] [a == b]`, `D2[s,b,a] = C[s,b] - J[s,b] [a == b]`:
    /// player one pays `J[s,a]` on top of `C[s,a]` when player two picks the
    /// same action, and player two earns it back.
    #[default]
    Matched,
    /// `D1[s,a,b] = C[s,a] + J[s,b]`, `D2[s,b,a] = C[s,b] - J[s,a]`.
    Additive,
}

/// Single-controller game with costs stored as the tensors
/// `D1[s, a, b]` (player one) and `D2[s, b, a]` (player two).
#[derive(Debug, Clone, PartialEq)]
pub struct SingleControllerGame {
    kernel: DMatrix<f64>,
    actions_p1: usize,
    actions_p2: usize,
    d1: Vec<f64>,
    d2: Vec<f64>,
    discount_p1: f64,
    discount_p2: f64,
}

impl SingleControllerGame {
    /// `d1[(s * A1 + a) * A2 + b]` and `d2[(s * A2 + b) * A1 + a]`.
    pub fn from_tensors(
        kernel: DMatrix<f64>,
        actions_p1: usize,
        actions_p2: usize,
        d1: Vec<f64>,
        d2: Vec<f64>,
        discount_p1: f64,
        discount_p2: f64,
    ) -> Result<Self> {
        if actions_p1 == 0 || actions_p2 == 0 {
            return Err(Error::param("actions", "both players need at least one action"));
        }
        let s = kernel.nrows();
        // reuses the MDP checks on the kernel and player one's discount
        Mdp::new(kernel.clone(), DMatrix::zeros(s, actions_p1), discount_p1)?;
        check_discount("discount_p2", discount_p2)?;
        let n = s * actions_p1 * actions_p2;
        if d1.len() != n {
            return Err(Error::dims("player one cost tensor", n, d1.len()));
        }
        if d2.len() != n {
            return Err(Error::dims("player two cost tensor", n, d2.len()));
        }
        if d1.iter().chain(&d2).any(|x| !x.is_finite()) {
            return Err(Error::param("cost tensor", "entries must be finite"));
        }
        Ok(Self { kernel, actions_p1, actions_p2, d1, d2, discount_p1, discount_p2 })
    }

    /// Game with `A1 = A2 = A` built from a base cost `C` and non-negative
    /// coupling `J`, both `S x A`.
    pub fn coupled(
        kernel: DMatrix<f64>,
        base_cost: &DMatrix<f64>,
        coupling: &DMatrix<f64>,
        form: CouplingForm,
        discount_p1: f64,
        discount_p2: f64,
    ) -> Result<Self> {
        let (s, a) = base_cost.shape();
        if coupling.shape() != (s, a) {
            return Err(Error::dims("coupling", format!("{s}x{a}"), format!("{}x{}", coupling.nrows(), coupling.ncols())));
        }
        if let Some(i) = coupling.iter().position(|j| !(*j >= 0.0)) {
            return Err(Error::param("coupling", format!("entry ({}, {}) must be >= 0", i % s, i / s)));
        }
        let mut d1 = Vec::with_capacity(s * a * a);
        let mut d2 = Vec::with_capacity(s * a * a);
        for st in 0..s {
            for x in 0..a {
                for y in 0..a {
                    // d1 index (x = a, y = b), d2 index (x = b, y = a)
                    match form {
                        CouplingForm::Matched => {
                            let same = if x == y { 1.0 } else { 0.0 };
                            d1.push(base_cost[(st, x)] + coupling[(st, x)] * same);
                            d2.push(base_cost[(st, x)] - coupling[(st, x)] * same);
                        }
                        CouplingForm::Additive => {
                            d1.push(base_cost[(st, x)] + coupling[(st, y)]);
                            d2.push(base_cost[(st, x)] - coupling[(st, y)]);
                        }
                    }
                }
            }
        }
        Self::from_tensors(kernel, a, a, d1, d2, discount_p1, discount_p2)
    }

    pub fn num_states(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn actions_p1(&self) -> usize {
        self.actions_p1
    }

    pub fn actions_p2(&self) -> usize {
        self.actions_p2
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn discount_p1(&self) -> f64 {
        self.discount_p1
    }

    pub fn discount_p2(&self) -> f64 {
        self.discount_p2
    }

    pub fn d1(&self, s: usize, a: usize, b: usize) -> f64 {
        self.d1[(s * self.actions_p1 + a) * self.actions_p2 + b]
    }

    pub fn d2(&self, s: usize, b: usize, a: usize) -> f64 {
        self.d2[(s * self.actions_p2 + b) * self.actions_p1 + a]
    }

    /// Interval MDP over player one's feasible costs.
    pub fn interval_mdp(&self) -> IntervalMdp {
        IntervalMdp::new(self.kernel.clone(), interval_over_approx(self), self.discount_p1)
            .expect("game invariants imply a valid interval MDP")
    }
}

fn check_discount(name: &'static str, g: f64) -> Result<()> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::param(name, format!("{g} is not in (0, 1)")));
    }
    Ok(())
}

/// `C1[s, a] = sum_b pi2(s, b) D1[s, a, b]`.
pub fn player_one_cost(game: &SingleControllerGame, pi2: &Policy) -> Result<DMatrix<f64>> {
    pi2.check_shape(game.num_states(), game.actions_p2)?;
    Ok(DMatrix::from_fn(game.num_states(), game.actions_p1, |s, a| {
        (0..game.actions_p2).map(|b| pi2.prob(s, b) * game.d1(s, a, b)).sum()
    }))
}

/// `C2[s, b] = sum_a pi1(s, a) D2[s, b, a]`.
pub fn player_two_cost(game: &SingleControllerGame, pi1: &Policy) -> Result<DMatrix<f64>> {
    pi1.check_shape(game.num_states(), game.actions_p1)?;
    Ok(DMatrix::from_fn(game.num_states(), game.actions_p2, |s, b| {
        (0..game.actions_p1).map(|a| pi1.prob(s, a) * game.d2(s, b, a)).sum()
    }))
}

/// Player one's kernel under `pi2`. Player two does not control transitions,
/// so this is the shared kernel for every `pi2`.
pub fn player_one_kernel(game: &SingleControllerGame, pi2: &Policy) -> Result<DMatrix<f64>> {
    pi2.check_shape(game.num_states(), game.actions_p2)?;
    Ok(game.kernel.clone())
}

/// `P2[s', (s, b)] = sum_a pi1(s, a) P[s', (s, a)]`, independent of `b`.
pub fn player_two_kernel(game: &SingleControllerGame, pi1: &Policy) -> Result<DMatrix<f64>> {
    pi1.check_shape(game.num_states(), game.actions_p1)?;
    let (s_count, a1, a2) = (game.num_states(), game.actions_p1, game.actions_p2);
    let mut out = DMatrix::zeros(s_count, s_count * a2);
    for s in 0..s_count {
        let mut mixed = DVector::zeros(s_count);
        for a in 0..a1 {
            let p = pi1.prob(s, a);
            if p != 0.0 {
                mixed += game.kernel.column(s * a1 + a) * p;
            }
        }
        for b in 0..a2 {
            out.set_column(s * a2 + b, &mixed);
        }
    }
    Ok(out)
}

/// Entrywise `[min_b D1[s,a,b], max_b D1[s,a,b]]`; contains `C1(pi2)` for every
/// (mixed) `pi2`.
pub fn interval_over_approx(game: &SingleControllerGame) -> IntervalMatrix {
    let (s_count, a1) = (game.num_states(), game.actions_p1);
    let mut lo = DMatrix::zeros(s_count, a1);
    let mut hi = DMatrix::zeros(s_count, a1);
    for s in 0..s_count {
        for a in 0..a1 {
            let vals = (0..game.actions_p2).map(|b| game.d1(s, a, b));
            lo[(s, a)] = vals.clone().fold(f64::INFINITY, f64::min);
            hi[(s, a)] = vals.fold(f64::NEG_INFINITY, f64::max);
        }
    }
    IntervalMatrix::new(lo, hi).expect("min <= max")
}

/// Initial value function for a player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueInit {
    #[default]
    Zero,
    /// Entries i.i.d. uniform on `[0, 1)`.
    Uniform,
}

impl ValueInit {
    pub fn draw(self, n: usize, rng: &mut ChaCha8Rng) -> ValueFunction {
        match self {
            ValueInit::Zero => ValueFunction::zeros(n),
            ValueInit::Uniform => ValueFunction::new(uniform_vector(rng, n)).expect("finite"),
        }
    }
}

/// How player two answers player one's latest policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpponentStrategy {
    /// Value iteration minimizing `C2`; `discount` defaults to the game's `discount_p2`.
    MinVi {
        #[serde(default)]
        discount: Option<f64>,
        #[serde(default)]
        init: ValueInit,
    },
    /// Value iteration maximizing `C2`.
    MaxVi {
        #[serde(default)]
        discount: Option<f64>,
        #[serde(default)]
        init: ValueInit,
    },
    /// Always the same policy, given as one action per state.
    Fixed { policy: Vec<usize> },
    /// Independent uniformly random deterministic policy at every step.
    UniformRandom,
}

impl OpponentStrategy {
    pub fn min_vi(discount: f64) -> Self {
        OpponentStrategy::MinVi { discount: Some(discount), init: ValueInit::Zero }
    }

    pub fn max_vi(discount: f64) -> Self {
        OpponentStrategy::MaxVi { discount: Some(discount), init: ValueInit::Zero }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OpponentStrategy::MinVi { .. } => "min_vi",
            OpponentStrategy::MaxVi { .. } => "max_vi",
            OpponentStrategy::Fixed { .. } => "fixed",
            OpponentStrategy::UniformRandom => "uniform_random",
        }
    }

    /// Live opponent state for one run; `seed` drives every random choice.
    pub fn build(&self, game: &SingleControllerGame, seed: u64) -> Result<Opponent> {
        let n = game.num_states();
        let inner = match self {
            OpponentStrategy::MinVi { discount, init } | OpponentStrategy::MaxVi { discount, init } => {
                let g = discount.unwrap_or(game.discount_p2);
                check_discount("opponent discount", g)?;
                let mut rng = seeded_rng(seed, streams::P2_INIT);
                OpponentState::Vi {
                    maximize: matches!(self, OpponentStrategy::MaxVi { .. }),
                    discount: g,
                    value: init.draw(n, &mut rng).into_vector(),
                }
            }
            OpponentStrategy::Fixed { policy } => {
                if policy.len() != n {
                    return Err(Error::dims("fixed opponent policy", n, policy.len()));
                }
                OpponentState::Fixed(Policy::deterministic(policy, game.actions_p2)?)
            }
            OpponentStrategy::UniformRandom => OpponentState::Random(seeded_rng(seed, streams::OPPONENT)),
        };
        Ok(Opponent { kind: self.kind(), inner })
    }
}

#[derive(Debug, Clone)]
enum OpponentState {
    Vi { maximize: bool, discount: f64, value: DVector<f64> },
    Fixed(Policy),
    Random(ChaCha8Rng),
}

/// Stateful player-two response map `g: pi1 -> pi2`.
#[derive(Debug, Clone)]
pub struct Opponent {
    kind: &'static str,
    inner: OpponentState,
}

impl Opponent {
    /// Any fixed policy, mixed ones included.
    pub fn fixed(policy: Policy) -> Self {
        Opponent { kind: "fixed", inner: OpponentState::Fixed(policy) }
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    /// Player two's current value function for the VI strategies.
    pub fn value(&self) -> Option<&DVector<f64>> {
        match &self.inner {
            OpponentState::Vi { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn respond(&mut self, game: &SingleControllerGame, pi1: &Policy) -> Result<Policy> {
        let (n, a2) = (game.num_states(), game.actions_p2);
        match &mut self.inner {
            OpponentState::Fixed(p) => {
                p.check_shape(n, a2)?;
                Ok(p.clone())
            }
            OpponentState::Random(rng) => {
                let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..a2)).collect();
                Policy::deterministic(&actions, a2)
            }
            OpponentState::Vi { maximize, discount, value } => {
                let cost = player_two_cost(game, pi1)?;
                let kernel = player_two_kernel(game, pi1)?;
                let (next, actions) = if *maximize {
                    // max_b q = -min_b(-q); ties still break to the lowest index
                    let (neg, acts) = bellman_raw(&kernel, &(-&cost), *discount, &(-&*value));
                    (-neg, acts)
                } else {
                    bellman_raw(&kernel, &cost, *discount, value)
                };
                debug_assert!({
                    let q = q_matrix(&kernel, &cost, *discount, value);
                    (0..n).all(|s| (q[(s, actions[s])] - next[s]).abs() <= 1e-9 * (1.0 + next[s].abs()))
                });
                *value = next;
                Policy::deterministic(&actions, a2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameStep {
    pub iter: usize,
    /// Player one's value `V^k`.
    pub value: DVector<f64>,
    pub p1_policy: Policy,
    pub p2_policy: Policy,
    /// `C1(pi2^{k-1})`, the cost that produced `value`; `None` at `k = 0`.
    pub cost: Option<DMatrix<f64>>,
    /// Synchronized interval iterate `V^k`.
    pub vbox: IntervalVector,
    pub dist_to_fixed_box: f64,
    /// Player two's value `W^k` when it runs value iteration.
    pub opponent_value: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameTrajectory {
    pub steps: Vec<GameStep>,
    pub fixed_box: IntervalVector,
    pub opponent_kind: &'static str,
    /// Set when the opponent failed; `steps` holds everything recorded before.
    pub failure: Option<String>,
}

impl BoundedTrajectory for GameTrajectory {
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

/// Two-player value iteration. Both players open with action 0 everywhere;
/// then at every step player one applies one Bellman step against
/// `C1(pi2^k)`, takes the greedy policy, and player two answers it.
pub fn two_player_vi(
    game: &SingleControllerGame,
    opponent: &OpponentStrategy,
    v0: &ValueFunction,
    num_iters: usize,
    seed: u64,
) -> Result<GameTrajectory> {
    let mut live = opponent.build(game, seed)?;
    run_two_player_vi(game, &mut live, v0, num_iters)
}

/// [`two_player_vi`] with an already constructed opponent.
pub fn run_two_player_vi(
    game: &SingleControllerGame,
    opponent: &mut Opponent,
    v0: &ValueFunction,
    num_iters: usize,
) -> Result<GameTrajectory> {
    if num_iters == 0 {
        return Err(Error::param("num_iters", "must be at least 1"));
    }
    let n = game.num_states();
    if v0.len() != n {
        return Err(Error::dims("initial value function", n, v0.len()));
    }
    let imdp = game.interval_mdp();
    let fixed_box = fixed_point_box(&imdp, DEFAULT_EPSILON)?;

    let mut value = v0.as_vector().clone();
    let mut vbox = IntervalVector::point(value.clone());
    let mut pi1 = Policy::deterministic(&vec![0; n], game.actions_p1)?;
    let mut pi2 = Policy::deterministic(&vec![0; n], game.actions_p2)?;
    let mut steps = vec![GameStep {
        iter: 0,
        dist_to_fixed_box: point_to_box_distance(&value, &fixed_box)?,
        value: value.clone(),
        p1_policy: pi1.clone(),
        p2_policy: pi2.clone(),
        cost: None,
        vbox: vbox.clone(),
        opponent_value: opponent.value().cloned(),
    }];
    let mut failure = None;

    for k in 1..=num_iters {
        let cost = player_one_cost(game, &pi2)?;
        let (next, actions) = bellman_raw(&game.kernel, &cost, game.discount_p1, &value);
        value = next;
        pi1 = Policy::deterministic(&actions, game.actions_p1)?;
        vbox = set_bellman_apply(&imdp, &vbox)?;
        match opponent.respond(game, &pi1) {
            Ok(p) => pi2 = p,
            Err(e) => failure = Some(e.to_string()),
        }
        steps.push(GameStep {
            iter: k,
            dist_to_fixed_box: point_to_box_distance(&value, &fixed_box)?,
            value: value.clone(),
            p1_policy: pi1.clone(),
            p2_policy: pi2.clone(),
            cost: Some(cost),
            vbox: vbox.clone(),
            opponent_value: opponent.value().cloned(),
        });
        if failure.is_some() {
            break;
        }
    }
    Ok(GameTrajectory { steps, fixed_box, opponent_kind: opponent.kind(), failure })
}

/// Tolerances for [`containment_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainmentTolerance {
    /// Slack allowed when testing `V^k` against the interval iterate.
    pub containment: f64,
    /// Largest acceptable tail distance to the fixed-point box.
    pub tail_distance: f64,
}

impl Default for ContainmentTolerance {
    fn default() -> Self {
        Self { containment: 1e-9, tail_distance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub contained: Vec<bool>,
    pub first_violation: Option<usize>,
    /// Max of the distance to the fixed box over the last 10% of iterations.
    pub tail_distance: f64,
    pub tail_start: usize,
    pub all_contained: bool,
    pub passed: bool,
}

/// Checks `V^k ∈ V^k` (value in its synchronized interval iterate) at every
/// iteration and the tail distance to `fixed_box`.
pub fn containment_report<T: BoundedTrajectory>(
    traj: &T,
    fixed_box: &IntervalVector,
    tol: ContainmentTolerance,
) -> Result<ContainmentReport> {
    let n = traj.num_steps();
    if n == 0 {
        return Err(Error::param("trajectory", "is empty"));
    }
    let contained: Vec<bool> = (0..n).map(|k| traj.box_at(k).contains_point(traj.value_at(k), tol.containment)).collect();
    let first_violation = contained.iter().position(|c| !c);
    // step 0 is the initial value, not an iteration
    let window = (n - 1).div_ceil(10).max(1);
    let tail_start = n - window;
    let mut tail_distance: f64 = 0.0;
    for k in tail_start..n {
        tail_distance = tail_distance.max(point_to_box_distance(traj.value_at(k), fixed_box)?);
    }
    let all_contained = first_violation.is_none();
    Ok(ContainmentReport {
        passed: all_contained && tail_distance <= tol.tail_distance,
        contained,
        first_violation,
        tail_distance,
        tail_start,
        all_contained,
    })
}
