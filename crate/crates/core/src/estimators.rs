//! Surrogate losses, exact and sampled gradients, importance weighting and
//! the low-rank Fisher factor.
//!
//! Sampled estimators normalize by `H * K`, with `H` the longest trajectory
//! of the batch and `K` the batch size. Per-trajectory terms are computed in
//! parallel and summed in trajectory order, so results do not depend on the
//! thread count.

use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::mdp::{state_distribution, FiniteMdp, TabularPolicy, Trajectory};
use crate::oracle::{CostToGo, DiscreteCostToGo, ExpertOracle};
use crate::policy::{AsAction, AsObservation, DifferentiablePolicy, Observation};
use crate::rng::{substream, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Exact expectation over states and actions.
    ExactDiscrete,
    /// Sampled states, all actions weighted by `grad pi(a|s)`.
    SampledDiscrete,
    /// Sampled states and actions with importance weights (discrete family).
    ImportanceDiscrete,
    /// Sampled states and actions with importance weights (gaussian family).
    SampledContinuous,
    VrDiscrete,
    VrImportanceDiscrete,
    VrContinuous,
    /// Score function on realized cost-to-go, no oracle.
    Reinforce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    pub episode: usize,
    pub rollouts: usize,
    pub kind: EstimatorKind,
}

/// Independent oracle-noise streams per trajectory of one batch.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSource {
    pub seed: u64,
    pub episode: u64,
}

impl NoiseSource {
    pub fn new(seed: u64, episode: u64) -> Self {
        Self { seed, episode }
    }

    pub fn stream(&self, trajectory: usize) -> Rng {
        substream(self.seed, &[tag::ORACLE, self.episode, trajectory as u64])
    }
}

fn batch_shape<S, A>(trajectories: &[Trajectory<S, A>]) -> Result<(usize, usize)> {
    if trajectories.is_empty() {
        return Err(Error::Input("empty trajectory set".into()));
    }
    let h = trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
    if h == 0 {
        return Err(Error::Input("all trajectories are empty".into()));
    }
    Ok((h, trajectories.len()))
}

/// Sums per-trajectory vectors in index order.
fn ordered_sum(parts: Vec<Result<Vec<f64>>>, dim: usize, scale: f64) -> Result<Vec<f64>> {
    let mut total = vec![0.0; dim];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part?) {
            *t += p;
        }
    }
    for t in &mut total {
        *t *= scale;
    }
    ensure_finite(&total, "gradient")?;
    Ok(total)
}

/// `(1/H) sum_t E_{s ~ d_t^{rollin}} E_{a ~ learner(.|s)} Q*_t(s, a)`.
pub fn surrogate_loss_exact(
    mdp: &FiniteMdp,
    oracle: &ExpertOracle<'_>,
    learner: &(impl TabularPolicy + ?Sized),
    rollin: &(impl TabularPolicy + ?Sized),
) -> Result<f64> {
    let dist = state_distribution(mdp, rollin)?;
    let mut total = 0.0;
    for (t, d) in dist.per_time.iter().enumerate() {
        for (s, &ds) in d.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let probs = learner.action_probs(t, s)?;
            let row = oracle.table().q_row(t, s);
            total += ds * probs.iter().zip(row).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    Ok(total / mdp.horizon() as f64)
}

/// `(1/H) sum_t E_{s ~ d_t^{rollin}} sum_a grad pi(a|s) Q*_t(s, a)`, exact.
pub fn exact_gradient_discrete(
    mdp: &FiniteMdp,
    oracle: &ExpertOracle<'_>,
    policy: &DifferentiablePolicy,
    rollin: &(impl TabularPolicy + ?Sized),
) -> Result<GradientEstimate> {
    let dist = state_distribution(mdp, rollin)?;
    let mut grad = vec![0.0; policy.dim()];
    let h = mdp.horizon() as f64;
    for (t, d) in dist.per_time.iter().enumerate() {
        for (s, &ds) in d.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let row = oracle.table().q_row(t, s);
            policy.accumulate_prob_weighted_grad(&Observation::index(s), row, ds / h, &mut grad)?;
        }
    }
    ensure_finite(&grad, "gradient")?;
    Ok(GradientEstimate {
        gradient: grad,
        episode: 0,
        rollouts: 0,
        kind: EstimatorKind::ExactDiscrete,
    })
}

/// `(1/(H K)) sum_{i,t} sum_a grad pi(a | s_t^i) G_t(s_t^i, a)` with `G = Q*`
/// or, with `use_advantage`, `G = Q* - V*`.
pub fn sampled_gradient_discrete<S, O>(
    trajectories: &[Trajectory<S, usize>],
    oracle: &O,
    policy: &DifferentiablePolicy,
    use_advantage: bool,
    noise: NoiseSource,
) -> Result<GradientEstimate>
where
    S: AsObservation + Sync,
    O: DiscreteCostToGo<S> + Sync,
{
    let (h, k) = batch_shape(trajectories)?;
    let dim = policy.dim();
    let parts: Vec<Result<Vec<f64>>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let mut rng = noise.stream(i);
            let mut g = vec![0.0; dim];
            for (t, step) in traj.steps.iter().enumerate() {
                let mut q = oracle.q_vector(t, &step.state, &mut rng)?;
                if use_advantage {
                    let v = oracle.v(t, &step.state)?;
                    for x in &mut q {
                        *x -= v;
                    }
                }
                policy.accumulate_prob_weighted_grad(&step.state.observation(), &q, 1.0, &mut g)?;
            }
            Ok(g)
        })
        .collect();
    Ok(GradientEstimate {
        gradient: ordered_sum(parts, dim, 1.0 / (h * k) as f64)?,
        episode: noise.episode as usize,
        rollouts: k,
        kind: if use_advantage { EstimatorKind::VrDiscrete } else { EstimatorKind::SampledDiscrete },
    })
}

fn behavior(prob: f64) -> Result<f64> {
    if prob > 0.0 && prob.is_finite() {
        Ok(prob)
    } else {
        Err(Error::Data(format!("recorded behavior probability {prob} is not positive")))
    }
}

/// `(1/(H K)) sum_{i,t} [grad pi(a_t | s_t) / pi_n(a_t | s_t)] G_t(s_t, a_t)`,
/// evaluated at the current parameters; `pi_n` is the recorded behavior
/// probability or density.
pub fn sampled_gradient_importance<S, A, O>(
    trajectories: &[Trajectory<S, A>],
    oracle: &O,
    policy: &DifferentiablePolicy,
    use_advantage: bool,
    noise: NoiseSource,
) -> Result<GradientEstimate>
where
    S: AsObservation + Sync,
    A: AsAction + Sync,
    O: CostToGo<S, A> + Sync,
{
    let (h, k) = batch_shape(trajectories)?;
    let dim = policy.dim();
    let parts: Vec<Result<Vec<f64>>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let mut rng = noise.stream(i);
            let mut g = vec![0.0; dim];
            for (t, step) in traj.steps.iter().enumerate() {
                let b = behavior(step.behavior_prob)?;
                let mut q = oracle.q(t, &step.state, &step.action, &mut rng)?;
                if use_advantage {
                    q -= oracle.v(t, &step.state)?;
                }
                let obs = step.state.observation();
                let act = step.action.action_ref();
                let ratio = policy.likelihood(&obs, act)? / b;
                policy.accumulate_log_grad(&obs, act, ratio * q, &mut g)?;
            }
            Ok(g)
        })
        .collect();
    let kind = match (policy.family().is_discrete(), use_advantage) {
        (true, false) => EstimatorKind::ImportanceDiscrete,
        (true, true) => EstimatorKind::VrImportanceDiscrete,
        (false, false) => EstimatorKind::SampledContinuous,
        (false, true) => EstimatorKind::VrContinuous,
    };
    Ok(GradientEstimate {
        gradient: ordered_sum(parts, dim, 1.0 / (h * k) as f64)?,
        episode: noise.episode as usize,
        rollouts: k,
        kind,
    })
}

/// Continuous-action gradient; the importance estimator for gaussian policies.
pub fn sampled_gradient_continuous<S, A, O>(
    trajectories: &[Trajectory<S, A>],
    oracle: &O,
    policy: &DifferentiablePolicy,
    use_advantage: bool,
    noise: NoiseSource,
) -> Result<GradientEstimate>
where
    S: AsObservation + Sync,
    A: AsAction + Sync,
    O: CostToGo<S, A> + Sync,
{
    if policy.family().is_discrete() {
        return Err(Error::Unsupported("continuous estimator needs a gaussian policy".into()));
    }
    sampled_gradient_importance(trajectories, oracle, policy, use_advantage, noise)
}

/// `(1/(H K)) sum_{i,t} [pi(a_t | s_t) / pi_n(a_t | s_t)] Q*_t(s_t, a_t)`.
pub fn surrogate_loss_importance<S, A, O>(
    trajectories: &[Trajectory<S, A>],
    oracle: &O,
    policy: &DifferentiablePolicy,
    noise: NoiseSource,
) -> Result<f64>
where
    S: AsObservation,
    A: AsAction,
    O: CostToGo<S, A>,
{
    let (h, k) = batch_shape(trajectories)?;
    let mut total = 0.0;
    for (i, traj) in trajectories.iter().enumerate() {
        let mut rng = noise.stream(i);
        for (t, step) in traj.steps.iter().enumerate() {
            let b = behavior(step.behavior_prob)?;
            let q = oracle.q(t, &step.state, &step.action, &mut rng)?;
            total += policy.likelihood(&step.state.observation(), step.action.action_ref())? / b * q;
        }
    }
    Ok(total / (h * k) as f64)
}

/// Score-function gradient on realized reward-to-go (no oracle):
/// `(1/(H K)) sum_{i,t} grad log pi(a_t | s_t) sum_{t' >= t} c_{t'}`.
pub fn reinforce_gradient<S, A>(
    trajectories: &[Trajectory<S, A>],
    policy: &DifferentiablePolicy,
    episode: usize,
) -> Result<GradientEstimate>
where
    S: AsObservation + Sync,
    A: AsAction + Sync,
{
    let (h, k) = batch_shape(trajectories)?;
    let dim = policy.dim();
    let parts: Vec<Result<Vec<f64>>> = trajectories
        .par_iter()
        .map(|traj| {
            let mut g = vec![0.0; dim];
            let mut to_go: f64 = traj.total_cost();
            for step in &traj.steps {
                policy.accumulate_log_grad(&step.state.observation(), step.action.action_ref(), to_go, &mut g)?;
                to_go -= step.cost;
            }
            Ok(g)
        })
        .collect();
    Ok(GradientEstimate {
        gradient: ordered_sum(parts, dim, 1.0 / (h * k) as f64)?,
        episode,
        rollouts: k,
        kind: EstimatorKind::Reinforce,
    })
}

/// Thin factor `S` (d x K) of the Fisher estimate `S S^T`; column `i` is
/// `sum_t grad log pi(a_t | s_t) / (H sqrt(K))` for trajectory `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherFactor {
    dim: usize,
    columns: Vec<Vec<f64>>,
}

impl FisherFactor {
    pub fn from_columns(dim: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.iter().any(|c| c.len() != dim) {
            return Err(Error::Input("factor columns differ from the dimension".into()));
        }
        Ok(Self { dim, columns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank_bound(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `S^T x`, length K.
    pub fn transpose_apply(&self, x: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| c.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `S y`, length d.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (c, &w) in self.columns.iter().zip(y) {
            for (o, &v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out
    }

    /// `S (S^T x)`.
    pub fn gram_apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply(&self.transpose_apply(x))
    }
}

pub fn fisher_factor<S, A>(trajectories: &[Trajectory<S, A>], policy: &DifferentiablePolicy) -> Result<FisherFactor>
where
    S: AsObservation + Sync,
    A: AsAction + Sync,
{
    let (h, k) = batch_shape(trajectories)?;
    let scale = 1.0 / (h as f64 * (k as f64).sqrt());
    let columns = trajectories
        .par_iter()
        .map(|traj| {
            let mut g = crate::policy::trajectory_log_gradient(policy, traj)?;
            for v in &mut g {
                *v *= scale;
            }
            ensure_finite(&g, "fisher column")?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    FisherFactor::from_columns(policy.dim(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::random::make_random_tabular;
    use crate::env::tree::{make_binary_tree, LeafNoise};
    use crate::mdp::{rollout, Step};
    use crate::oracle::OracleMode;
    use crate::policy::{PolicyFamily, SimplexPolicy};
    use rand::Rng as _;

    #[test]
    fn single_state_examples() {
        let mdp = crate::env::bandit::make_bandit_rows(1, 2, &[0.2, 0.8]).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let uni = SimplexPolicy::uniform(1, 2, 1);
        assert!((surrogate_loss_exact(&mdp, &o, &uni, &uni).unwrap() - 0.5).abs() < 1e-15);
        let pi = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 1, num_actions: 2 }, 0);
        let g = exact_gradient_discrete(&mdp, &o, &pi, &uni).unwrap().gradient;
        assert!((g[0] + 0.15).abs() < 1e-15 && (g[1] - 0.15).abs() < 1e-15);
        let flat = crate::env::bandit::make_bandit_rows(1, 2, &[0.4, 0.4]).unwrap();
        let of = ExpertOracle::optimal(&flat, OracleMode::Exact);
        let g = exact_gradient_discrete(&flat, &of, &pi, &uni).unwrap().gradient;
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn expert_surrogate_on_tree() {
        let (mdp, tree) = make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let e = tree.optimal_policy();
        // Both steps see Q* = 0.2: the root move and the leaf payment.
        assert!((surrogate_loss_exact(&mdp, &o, &e, &e).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn surrogate_matches_monte_carlo() {
        let mdp = make_random_tabular(4, 3, 3, 5).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let mut r = substream(1, &[]);
        let learner = SimplexPolicy::random(4, 3, 3, &mut r);
        let rollin = SimplexPolicy::random(4, 3, 3, &mut r);
        let exact = surrogate_loss_exact(&mdp, &o, &learner, &rollin).unwrap();
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let traj = rollout(&mdp, &rollin, &mut r).unwrap();
            let mut x = 0.0;
            for (t, st) in traj.steps.iter().enumerate() {
                let a = crate::mdp::sample_index(learner.row(t, st.state), &mut r);
                x += o.exact_q(t, st.state, a);
            }
            x /= 3.0;
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact}");
    }

    #[test]
    fn deterministic_setting_is_seed_independent() {
        let (mdp, tree) = make_binary_tree(3, &[0.1, 0.5, 0.3, 0.9], LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let e = tree.optimal_policy();
        let pi = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 7, num_actions: 2 }, 0);
        let run = |seed| {
            let t: Vec<_> = (0..3).map(|i| rollout(&mdp, &e, &mut substream(seed, &[i])).unwrap()).collect();
            sampled_gradient_discrete(&t, &o, &pi, false, NoiseSource::new(seed, 0)).unwrap().gradient
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn empty_batch_rejected() {
        let (mdp, _) = make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let pi = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 3, num_actions: 2 }, 0);
        let none: Vec<Trajectory<usize, usize>> = Vec::new();
        assert!(matches!(
            sampled_gradient_discrete(&none, &o, &pi, false, NoiseSource::new(0, 0)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn importance_weights_are_one_on_policy() {
        let (mdp, _) = make_binary_tree(3, &[0.1, 0.5, 0.3, 0.9], LeafNoise::Bernoulli).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let fam = PolicyFamily::TabularSoftmax { num_states: 7, num_actions: 2 };
        let mut r = substream(3, &[]);
        let theta = (0..14).map(|_| r.gen_range(-1.0..1.0)).collect();
        let pi = DifferentiablePolicy::with_theta(fam, theta, 0).unwrap();
        let trajs: Vec<_> = (0..50).map(|_| rollout(&mdp, &pi.tabular(), &mut r).unwrap()).collect();
        let is = surrogate_loss_importance(&trajs, &o, &pi, NoiseSource::new(0, 0)).unwrap();
        let mut plain = 0.0;
        for traj in &trajs {
            for (t, st) in traj.steps.iter().enumerate() {
                plain += o.exact_q(t, st.state, st.action);
            }
        }
        plain /= 150.0;
        assert!((is - plain).abs() < 1e-12);
    }

    #[test]
    fn bad_behavior_probability_is_data_error() {
        let (mdp, _) = make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let pi = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 3, num_actions: 2 }, 0);
        let traj = Trajectory { steps: vec![Step { state: 0usize, action: 0usize, cost: 0.0, behavior_prob: 0.0 }] };
        assert!(matches!(
            surrogate_loss_importance(&[traj], &o, &pi, NoiseSource::new(0, 0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn fisher_single_column_and_psd() {
        let pi = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 1, num_actions: 2 }, 0);
        let traj = Trajectory { steps: vec![Step { state: 0usize, action: 0usize, cost: 0.0, behavior_prob: 0.5 }] };
        let f = fisher_factor(&[traj], &pi).unwrap();
        assert_eq!(f.columns(), &[vec![0.5, -0.5]]);
        let f = FisherFactor::from_columns(2, vec![vec![2.0, 0.0]]).unwrap();
        assert_eq!(f.gram_apply(&[1.0, 0.0]), vec![4.0, 0.0]);
        let mut r = substream(2, &[]);
        let cols = (0..4).map(|_| (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let f = FisherFactor::from_columns(6, cols).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let q: f64 = x.iter().zip(f.gram_apply(&x)).map(|(a, b)| a * b).sum();
            assert!(q >= -1e-15);
        }
    }
}
