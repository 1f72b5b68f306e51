//! Finite-horizon tabular MDPs and their exact evaluation.
//!
//! Time steps are 0-based in code (`t = 0..H`); step `t` here is step
//! `t + 1` in the usual 1-based notation. Costs are incurred at every step
//! including the last one and the cost-to-go beyond the horizon is zero.

use std::borrow::Cow;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::policy::SimplexPolicy;
use crate::rng::Rng;
use crate::tol;

/// Per-step cost distribution of a state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostDist {
    Deterministic(f64),
    Bernoulli(f64),
    Uniform { lo: f64, hi: f64 },
}

impl CostDist {
    pub fn mean(&self) -> f64 {
        match *self {
            CostDist::Deterministic(c) => c,
            CostDist::Bernoulli(p) => p,
            CostDist::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            CostDist::Deterministic(c) => c,
            CostDist::Bernoulli(p) => {
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            CostDist::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
        }
    }

    /// Smallest and largest realizable cost.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            CostDist::Deterministic(c) => (c, c),
            CostDist::Bernoulli(p) => {
                let lo = if p < 1.0 { 0.0 } else { 1.0 };
                let hi = if p > 0.0 { 1.0 } else { 0.0 };
                (lo, hi)
            }
            CostDist::Uniform { lo, hi } => (lo, hi),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CostDist::Deterministic(c) if !c.is_finite() => {
                Err(Error::Config(format!("deterministic cost {c} is not finite")))
            }
            CostDist::Bernoulli(p) if !(0.0..=1.0).contains(&p) => {
                Err(Error::Config(format!("bernoulli mean {p} outside [0,1]")))
            }
            CostDist::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                Err(Error::Config(format!("uniform cost interval [{lo},{hi}] is invalid")))
            }
            _ => Ok(()),
        }
    }
}

/// Sparse transition row: `(next_state, probability)` pairs.
pub type TransitionRow = Vec<(usize, f64)>;

/// Tabular finite-horizon MDP with time-indexed transitions and costs.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transitions: Vec<TransitionRow>,
    costs: Vec<CostDist>,
    initial: Vec<f64>,
    cost_bound: f64,
}

impl FiniteMdp {
    /// Builds and validates an MDP. `transitions` and `costs` are indexed by
    /// `(t * S + s) * A + a`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<TransitionRow>,
        costs: Vec<CostDist>,
        initial: Vec<f64>,
        cost_bound: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::Config("S, A and H must all be at least 1".into()));
        }
        let cells = horizon * num_states * num_actions;
        if transitions.len() != cells || costs.len() != cells {
            return Err(Error::Config(format!(
                "expected {cells} transition/cost cells, got {}/{}",
                transitions.len(),
                costs.len()
            )));
        }
        if initial.len() != num_states {
            return Err(Error::Config("initial distribution has wrong length".into()));
        }
        check_distribution(&initial, tol::ROW_SUM, "initial distribution")?;
        for (i, row) in transitions.iter().enumerate() {
            let mut sum = 0.0;
            for &(next, p) in row {
                if next >= num_states {
                    return Err(Error::Config(format!("transition cell {i} points at state {next}")));
                }
                if !(p >= 0.0) {
                    return Err(Error::Config(format!("negative transition probability in cell {i}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > tol::ROW_SUM {
                return Err(Error::Config(format!("transition cell {i} sums to {sum}")));
            }
        }
        for cost in &costs {
            cost.validate()?;
            let (lo, hi) = cost.support();
            if lo < 0.0 || hi > cost_bound {
                return Err(Error::Config(format!(
                    "cost support [{lo},{hi}] outside [0,{cost_bound}]"
                )));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            costs,
            initial,
            cost_bound,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    #[inline]
    fn cell(&self, t: usize, s: usize, a: usize) -> usize {
        (t * self.num_states + s) * self.num_actions + a
    }

    pub fn transition(&self, t: usize, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[self.cell(t, s, a)]
    }

    pub fn cost(&self, t: usize, s: usize, a: usize) -> CostDist {
        self.costs[self.cell(t, s, a)]
    }

    pub fn mean_cost(&self, t: usize, s: usize, a: usize) -> f64 {
        self.costs[self.cell(t, s, a)].mean()
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> usize {
        sample_sparse(self.initial.iter().copied().enumerate(), rng)
    }

    /// Samples `(cost, next_state)` for taking `a` in `s` at step `t`.
    pub fn step(&self, t: usize, s: usize, a: usize, rng: &mut Rng) -> (f64, usize) {
        let cell = self.cell(t, s, a);
        let cost = self.costs[cell].sample(rng);
        let next = sample_sparse(self.transitions[cell].iter().copied(), rng);
        (cost, next)
    }
}

fn check_distribution(p: &[f64], tolerance: f64, what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Config(format!("{what} has negative or NaN entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::Config(format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn sample_sparse(entries: impl Iterator<Item = (usize, f64)>, rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in entries {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    sample_sparse(probs.iter().copied().enumerate(), rng)
}

/// Any policy that yields an action distribution for a tabular `(t, s)`.
pub trait TabularPolicy {
    fn num_actions(&self) -> usize;
    fn action_probs(&self, t: usize, s: usize) -> Result<Cow<'_, [f64]>>;
}

impl<T: TabularPolicy + ?Sized> TabularPolicy for &T {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn action_probs(&self, t: usize, s: usize) -> Result<Cow<'_, [f64]>> {
        (**self).action_probs(t, s)
    }
}

fn check_dims(mdp: &FiniteMdp, policy: &(impl TabularPolicy + ?Sized)) -> Result<()> {
    if policy.num_actions() != mdp.num_actions {
        return Err(Error::Config(format!(
            "policy has {} actions, MDP has {}",
            policy.num_actions(),
            mdp.num_actions
        )));
    }
    Ok(())
}

/// Materializes any tabular policy into a per-`(t, s)` table.
pub fn to_simplex(
    mdp: &FiniteMdp,
    policy: &(impl TabularPolicy + ?Sized),
) -> Result<SimplexPolicy> {
    check_dims(mdp, policy)?;
    let (s_n, a_n, h) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut probs = Vec::with_capacity(h * s_n * a_n);
    for t in 0..h {
        for s in 0..s_n {
            probs.extend_from_slice(&policy.action_probs(t, s)?);
        }
    }
    SimplexPolicy::from_table(s_n, a_n, h, probs)
}

/// One recorded step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S, A> {
    pub state: S,
    pub action: A,
    pub cost: f64,
    /// Probability (discrete) or density (continuous) of `action` under the
    /// behavior policy that generated the episode.
    pub behavior_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S, A> {
    pub steps: Vec<Step<S, A>>,
}

impl<S, A> Trajectory<S, A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

pub type DiscreteTrajectory = Trajectory<usize, usize>;

/// Per-step state distributions `d_t` and their average over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub per_time: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

impl StateDistribution {
    pub fn horizon(&self) -> usize {
        self.per_time.len()
    }
}

/// Forward recursion `d_{t+1}(s') = sum_{s,a} d_t(s) pi(a|s,t) P_t(s'|s,a)`.
pub fn state_distribution(
    mdp: &FiniteMdp,
    policy: &(impl TabularPolicy + ?Sized),
) -> Result<StateDistribution> {
    check_dims(mdp, policy)?;
    let (s_n, h) = (mdp.num_states, mdp.horizon);
    let mut per_time = Vec::with_capacity(h);
    per_time.push(mdp.initial.clone());
    for t in 0..h - 1 {
        let cur = &per_time[t];
        let mut next = vec![0.0; s_n];
        for (s, &ds) in cur.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let probs = policy.action_probs(t, s)?;
            for (a, &pa) in probs.iter().enumerate() {
                let w = ds * pa;
                if w == 0.0 {
                    continue;
                }
                for &(sn, p) in mdp.transition(t, s, a) {
                    next[sn] += w * p;
                }
            }
        }
        per_time.push(next);
    }
    let mut average = vec![0.0; s_n];
    for d in &per_time {
        for (avg, &x) in average.iter_mut().zip(d) {
            *avg += x;
        }
    }
    for x in &mut average {
        *x /= h as f64;
    }
    Ok(StateDistribution { per_time, average })
}

/// Exact expected cost `mu(pi)`: the sum over steps of expected step costs.
pub fn expected_cost(mdp: &FiniteMdp, policy: &(impl TabularPolicy + ?Sized)) -> Result<f64> {
    let dist = state_distribution(mdp, policy)?;
    expected_cost_with(mdp, policy, &dist)
}

pub(crate) fn expected_cost_with(
    mdp: &FiniteMdp,
    policy: &(impl TabularPolicy + ?Sized),
    dist: &StateDistribution,
) -> Result<f64> {
    let mut total = 0.0;
    for (t, d) in dist.per_time.iter().enumerate() {
        for (s, &ds) in d.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let probs = policy.action_probs(t, s)?;
            let step: f64 = probs
                .iter()
                .enumerate()
                .map(|(a, &pa)| pa * mdp.mean_cost(t, s, a))
                .sum();
            total += ds * step;
        }
    }
    Ok(total)
}

/// State-action values `Q_t(s,a)` and state values `V_t(s)` of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl QTable {
    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q[(t * self.num_states + s) * self.num_actions + a]
    }

    pub fn q_row(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.num_states + s) * self.num_actions;
        &self.q[start..start + self.num_actions]
    }

    pub fn v(&self, t: usize, s: usize) -> f64 {
        self.v[t * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Largest entry of the table.
    pub fn max_q(&self) -> f64 {
        self.q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Backward recursion for `Q_t` with `Q_{H+1} = 0`.
pub fn exact_q(mdp: &FiniteMdp, policy: &(impl TabularPolicy + ?Sized)) -> Result<QTable> {
    check_dims(mdp, policy)?;
    let (s_n, a_n, h) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut q = vec![0.0; h * s_n * a_n];
    let mut v = vec![0.0; h * s_n];
    for t in (0..h).rev() {
        for s in 0..s_n {
            for a in 0..a_n {
                let mut value = mdp.mean_cost(t, s, a);
                if t + 1 < h {
                    for &(sn, p) in mdp.transition(t, s, a) {
                        value += p * v[(t + 1) * s_n + sn];
                    }
                }
                q[(t * s_n + s) * a_n + a] = value;
            }
            let probs = policy.action_probs(t, s)?;
            let row = &q[(t * s_n + s) * a_n..(t * s_n + s + 1) * a_n];
            v[t * s_n + s] = probs.iter().zip(row).map(|(p, q)| p * q).sum();
        }
    }
    Ok(QTable {
        num_states: s_n,
        num_actions: a_n,
        horizon: h,
        q,
        v,
    })
}

/// Optimal (cost-minimizing) Q table; ties resolve to the lowest action.
pub fn optimal_q(mdp: &FiniteMdp) -> (QTable, SimplexPolicy) {
    let (s_n, a_n, h) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut q = vec![0.0; h * s_n * a_n];
    let mut v = vec![0.0; h * s_n];
    let mut table = vec![0.0; h * s_n * a_n];
    for t in (0..h).rev() {
        for s in 0..s_n {
            let mut best = (0, f64::INFINITY);
            for a in 0..a_n {
                let mut value = mdp.mean_cost(t, s, a);
                if t + 1 < h {
                    for &(sn, p) in mdp.transition(t, s, a) {
                        value += p * v[(t + 1) * s_n + sn];
                    }
                }
                q[(t * s_n + s) * a_n + a] = value;
                if value < best.1 {
                    best = (a, value);
                }
            }
            v[t * s_n + s] = best.1;
            table[(t * s_n + s) * a_n + best.0] = 1.0;
        }
    }
    let policy = SimplexPolicy::from_table(s_n, a_n, h, table)
        .expect("one-hot rows are valid simplex rows");
    (
        QTable {
            num_states: s_n,
            num_actions: a_n,
            horizon: h,
            q,
            v,
        },
        policy,
    )
}

/// Samples one episode of length `H`, recording behavior probabilities.
pub fn rollout(
    mdp: &FiniteMdp,
    policy: &(impl TabularPolicy + ?Sized),
    rng: &mut Rng,
) -> Result<DiscreteTrajectory> {
    check_dims(mdp, policy)?;
    let mut s = mdp.sample_initial(rng);
    let mut steps = Vec::with_capacity(mdp.horizon);
    for t in 0..mdp.horizon {
        let probs = policy.action_probs(t, s)?;
        validate_action_probs(&probs)?;
        let a = sample_index(&probs, rng);
        let behavior_prob = probs[a];
        let (cost, next) = mdp.step(t, s, a, rng);
        steps.push(Step {
            state: s,
            action: a,
            cost,
            behavior_prob,
        });
        s = next;
    }
    Ok(Trajectory { steps })
}

pub(crate) fn validate_action_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Policy("action distribution has negative or NaN entries".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > tol::POLICY_NORM {
        return Err(Error::Policy(format!("action distribution sums to {sum}")));
    }
    Ok(())
}

/// Per-step mixture: with probability `alpha` act by the expert, otherwise by
/// the learner. The induced action distribution is the convex combination.
#[derive(Debug, Clone, Copy)]
pub struct MixedPolicy<E, L> {
    pub expert: E,
    pub learner: L,
    pub alpha: f64,
}

pub fn mix_policies<E: TabularPolicy, L: TabularPolicy>(
    expert: E,
    learner: L,
    alpha: f64,
) -> Result<MixedPolicy<E, L>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("mixing rate {alpha} outside [0,1]")));
    }
    if expert.num_actions() != learner.num_actions() {
        return Err(Error::Config("expert and learner disagree on action count".into()));
    }
    Ok(MixedPolicy {
        expert,
        learner,
        alpha,
    })
}

impl<E: TabularPolicy, L: TabularPolicy> TabularPolicy for MixedPolicy<E, L> {
    fn num_actions(&self) -> usize {
        self.learner.num_actions()
    }

    fn action_probs(&self, t: usize, s: usize) -> Result<Cow<'_, [f64]>> {
        if self.alpha == 0.0 {
            return self.learner.action_probs(t, s);
        }
        if self.alpha == 1.0 {
            return self.expert.action_probs(t, s);
        }
        let e = self.expert.action_probs(t, s)?;
        let l = self.learner.action_probs(t, s)?;
        Ok(Cow::Owned(
            e.iter()
                .zip(l.iter())
                .map(|(pe, pl)| self.alpha * pe + (1.0 - self.alpha) * pl)
                .collect(),
        ))
    }
}

/// `|(mu(pi1) - mu(pi2)) - sum_t E_{s~d_t^{pi1}, a~pi1}[Q_t^{pi2}(s,a) - V_t^{pi2}(s)]|`.
pub fn performance_difference_residual(
    mdp: &FiniteMdp,
    pi1: &(impl TabularPolicy + ?Sized),
    pi2: &(impl TabularPolicy + ?Sized),
) -> Result<f64> {
    let d1 = state_distribution(mdp, pi1)?;
    let mu1 = expected_cost_with(mdp, pi1, &d1)?;
    let mu2 = expected_cost(mdp, pi2)?;
    let q2 = exact_q(mdp, pi2)?;
    let mut advantage_sum = 0.0;
    for (t, d) in d1.per_time.iter().enumerate() {
        for (s, &ds) in d.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let probs = pi1.action_probs(t, s)?;
            let adv: f64 = probs
                .iter()
                .enumerate()
                .map(|(a, &p)| p * (q2.q(t, s, a) - q2.v(t, s)))
                .sum();
            advantage_sum += ds * adv;
        }
    }
    Ok(((mu1 - mu2) - advantage_sum).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tree::{make_binary_tree, LeafNoise};
    use crate::env::random::make_random_tabular;
    use crate::rng::substream;

    fn depth2() -> (FiniteMdp, crate::env::tree::TreeSpec) {
        make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap()
    }

    /// Enumerates every (state, action) path; returns d_t and mu.
    fn enumerate_paths(mdp: &FiniteMdp, pi: &SimplexPolicy) -> (Vec<Vec<f64>>, f64) {
        let (s_n, h) = (mdp.num_states(), mdp.horizon());
        let mut d = vec![vec![0.0; s_n]; h];
        let mut mu = 0.0;
        fn go(
            mdp: &FiniteMdp,
            pi: &SimplexPolicy,
            t: usize,
            s: usize,
            w: f64,
            d: &mut Vec<Vec<f64>>,
            mu: &mut f64,
        ) {
            d[t][s] += w;
            for a in 0..mdp.num_actions() {
                let wa = w * pi.prob(t, s, a);
                if wa == 0.0 {
                    continue;
                }
                *mu += wa * mdp.mean_cost(t, s, a);
                if t + 1 < mdp.horizon() {
                    for &(sn, p) in mdp.transition(t, s, a) {
                        go(mdp, pi, t + 1, sn, wa * p, d, mu);
                    }
                }
            }
        }
        for (s, &p0) in mdp.initial().iter().enumerate() {
            if p0 > 0.0 {
                go(mdp, pi, 0, s, p0, &mut d, &mut mu);
            }
        }
        (d, mu)
    }

    #[test]
    fn first_step_distribution_is_initial() {
        let mdp = make_random_tabular(5, 3, 4, 1).unwrap();
        let pi = SimplexPolicy::random(5, 3, 4, &mut substream(2, &[]));
        let d = state_distribution(&mdp, &pi).unwrap();
        assert_eq!(d.per_time[0], mdp.initial());
    }

    #[test]
    fn depth_two_tree_uniform_distribution() {
        let (mdp, _) = depth2();
        let pi = SimplexPolicy::uniform(3, 2, 2);
        let d = state_distribution(&mdp, &pi).unwrap();
        assert_eq!(d.per_time[1], vec![0.0, 0.5, 0.5]);
        assert!((expected_cost(&mdp, &pi).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn expert_on_depth_two_tree() {
        let (mdp, tree) = depth2();
        let expert = tree.optimal_policy();
        assert!((expected_cost(&mdp, &expert).unwrap() - 0.2).abs() < 1e-15);
        let q = exact_q(&mdp, &expert).unwrap();
        assert!((q.q(0, 0, 0) - 0.2).abs() < 1e-15);
        assert!((q.q(0, 0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn state_distribution_matches_path_enumeration() {
        let mdp = make_random_tabular(4, 2, 3, 7).unwrap();
        let pi = SimplexPolicy::random(4, 2, 3, &mut substream(7, &[1]));
        let d = state_distribution(&mdp, &pi).unwrap();
        let (d_enum, mu_enum) = enumerate_paths(&mdp, &pi);
        for t in 0..3 {
            for s in 0..4 {
                assert!((d.per_time[t][s] - d_enum[t][s]).abs() < 1e-14);
            }
            let mass: f64 = d.per_time[t].iter().sum();
            assert!((mass - 1.0).abs() < 1e-10);
        }
        assert!((expected_cost(&mdp, &pi).unwrap() - mu_enum).abs() < 1e-13);
    }

    #[test]
    fn terminal_q_is_mean_cost() {
        let mdp = make_random_tabular(4, 3, 5, 3).unwrap();
        let pi = SimplexPolicy::uniform(4, 3, 5);
        let q = exact_q(&mdp, &pi).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                assert_eq!(q.q(4, s, a), mdp.mean_cost(4, s, a));
            }
        }
    }

    #[test]
    fn expected_cost_matches_monte_carlo() {
        let mdp = make_random_tabular(4, 2, 3, 7).unwrap();
        let pi = SimplexPolicy::random(4, 2, 3, &mut substream(7, &[2]));
        let mu = expected_cost(&mdp, &pi).unwrap();
        let mut rng = substream(99, &[]);
        let m = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let c = rollout(&mdp, &pi, &mut rng).unwrap().total_cost();
            s1 += c;
            s2 += c * c;
        }
        let mean = s1 / m as f64;
        let se = ((s2 / m as f64 - mean * mean) / m as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se + 1e-12, "{mean} vs {mu} (se {se})");
    }

    #[test]
    fn exact_q_matches_monte_carlo_start_action() {
        let mdp = make_random_tabular(4, 2, 3, 7).unwrap();
        let pi = SimplexPolicy::random(4, 2, 3, &mut substream(7, &[3]));
        let q = exact_q(&mdp, &pi).unwrap();
        let (t, s, a) = (0, 2, 1);
        let mut rng = substream(5, &[]);
        let m = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let (mut c, mut st) = mdp.step(t, s, a, &mut rng);
            for tt in t + 1..3 {
                let at = sample_index(pi.row(tt, st), &mut rng);
                let (ci, sn) = mdp.step(tt, st, at, &mut rng);
                c += ci;
                st = sn;
            }
            s1 += c;
            s2 += c * c;
        }
        let mean = s1 / m as f64;
        let se = ((s2 / m as f64 - mean * mean) / m as f64).sqrt();
        assert!((mean - q.q(t, s, a)).abs() < 3.0 * se + 1e-12);
    }

    #[test]
    fn deterministic_rollout_independent_of_seed() {
        let (mdp, tree) = depth2();
        let expert = tree.optimal_policy();
        let a = rollout(&mdp, &expert, &mut substream(1, &[])).unwrap();
        let b = rollout(&mdp, &expert, &mut substream(2, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_rollouts_split_leaves_evenly() {
        let (mdp, _) = depth2();
        let pi = SimplexPolicy::uniform(3, 2, 2);
        let mut rng = substream(4, &[]);
        let m = 100_000;
        let left = (0..m)
            .filter(|_| rollout(&mdp, &pi, &mut rng).unwrap().steps[1].state == 1)
            .count() as f64;
        let sd = (m as f64 * 0.25).sqrt();
        assert!((left - 0.5 * m as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn invalid_policy_rejected_by_rollout() {
        let (mdp, _) = depth2();
        struct Bad;
        impl TabularPolicy for Bad {
            fn num_actions(&self) -> usize {
                2
            }
            fn action_probs(&self, _: usize, _: usize) -> Result<Cow<'_, [f64]>> {
                Ok(Cow::Owned(vec![0.7, 0.7]))
            }
        }
        assert!(matches!(
            rollout(&mdp, &Bad, &mut substream(0, &[])),
            Err(Error::Policy(_))
        ));
    }

    #[test]
    fn mixing_edge_cases() {
        let e = SimplexPolicy::from_table(1, 2, 1, vec![1.0, 0.0]).unwrap();
        let l = SimplexPolicy::from_table(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(&*mix_policies(&e, &l, 1.0).unwrap().action_probs(0, 0).unwrap(), &[1.0, 0.0]);
        assert_eq!(&*mix_policies(&e, &l, 0.0).unwrap().action_probs(0, 0).unwrap(), &[0.0, 1.0]);
        assert_eq!(&*mix_policies(&e, &l, 0.5).unwrap().action_probs(0, 0).unwrap(), &[0.5, 0.5]);
        assert!(matches!(mix_policies(&e, &l, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn performance_difference_examples() {
        let (mdp, tree) = depth2();
        let expert = tree.optimal_policy();
        let uniform = SimplexPolicy::uniform(3, 2, 2);
        assert_eq!(performance_difference_residual(&mdp, &expert, &expert).unwrap(), 0.0);
        assert!(performance_difference_residual(&mdp, &expert, &uniform).unwrap() < 1e-12);
        assert!(performance_difference_residual(&mdp, &uniform, &expert).unwrap() < 1e-12);
    }

    #[test]
    fn forward_and_backward_values_agree() {
        for seed in 0..20 {
            let mdp = make_random_tabular(6, 3, 5, seed).unwrap();
            let pi = SimplexPolicy::random(6, 3, 5, &mut substream(seed, &[8]));
            let mu = expected_cost(&mdp, &pi).unwrap();
            let q = exact_q(&mdp, &pi).unwrap();
            let v1: f64 = (0..6).map(|s| mdp.initial()[s] * q.v(0, s)).sum();
            assert!((mu - v1).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let (mdp, _) = depth2();
        let pi = SimplexPolicy::uniform(3, 3, 2);
        assert!(matches!(state_distribution(&mdp, &pi), Err(Error::Config(_))));
    }
}
