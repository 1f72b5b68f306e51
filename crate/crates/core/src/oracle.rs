//! Expert cost-to-go oracles.

use crate::error::{Error, Result};
use crate::mdp::{exact_q, optimal_q, FiniteMdp, QTable, TabularPolicy};
use crate::policy::SimplexPolicy;
use crate::rng::Rng;

/// Cost-to-go of taking `action` in `state` at step `t` and following the
/// expert afterwards.
pub trait CostToGo<S, A> {
    fn q(&self, t: usize, state: &S, action: &A, rng: &mut Rng) -> Result<f64>;

    /// Expert state value, when the oracle can provide one.
    fn v(&self, _t: usize, _state: &S) -> Result<f64> {
        Err(Error::Unsupported("oracle has no state-value estimate".into()))
    }

    /// Exact oracles return the same value on every call.
    fn is_exact(&self) -> bool;
}

pub trait DiscreteCostToGo<S>: CostToGo<S, usize> {
    /// One independent sample per action in noisy modes.
    fn q_vector(&self, t: usize, state: &S, rng: &mut Rng) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Exact,
    /// Mean of `rollouts` expert rollouts per query.
    MonteCarlo { rollouts: usize },
    /// A single rollout, i.e. one sample of the leaf reached on a tree.
    LeafSample,
}

/// How `V*` is formed for advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMode {
    /// `min_a Q*(s, a)`; the expert's value when it is greedy-optimal.
    MinQ,
    /// `E_{a ~ pi*} Q*(s, a)`; for deliberately sub-optimal experts.
    ExpertAverage,
    /// Noisy-only oracle: no value estimate.
    Unavailable,
}

/// Oracle for a finite MDP, backed by the expert's exact `Q` table.
#[derive(Debug, Clone)]
pub struct ExpertOracle<'a> {
    mdp: &'a FiniteMdp,
    expert: SimplexPolicy,
    table: QTable,
    mode: OracleMode,
    value_mode: ValueMode,
    q_max: f64,
}

impl<'a> ExpertOracle<'a> {
    pub fn new(mdp: &'a FiniteMdp, expert: SimplexPolicy, mode: OracleMode, value_mode: ValueMode) -> Result<Self> {
        if let OracleMode::MonteCarlo { rollouts: 0 } = mode {
            return Err(Error::Config("monte-carlo oracle needs at least one rollout".into()));
        }
        let table = exact_q(mdp, &expert)?;
        let q_max = reachable_max_q(mdp, &table);
        let q_max = if q_max.is_finite() { q_max } else { mdp.cost_bound() * mdp.horizon() as f64 };
        Ok(Self {
            mdp,
            expert,
            table,
            mode,
            value_mode,
            q_max,
        })
    }

    /// Oracle for the optimal policy found by dynamic programming.
    pub fn optimal(mdp: &'a FiniteMdp, mode: OracleMode) -> Self {
        let (_, expert) = optimal_q(mdp);
        Self::new(mdp, expert, mode, ValueMode::MinQ).expect("optimal policy matches its MDP")
    }

    pub fn expert(&self) -> &SimplexPolicy {
        &self.expert
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn value_mode(&self) -> ValueMode {
        self.value_mode
    }

    pub fn with_value_mode(mut self, value_mode: ValueMode) -> Self {
        self.value_mode = value_mode;
        self
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn exact_q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.table.q(t, s, a)
    }

    fn check(&self, t: usize, s: usize, a: Option<usize>) -> Result<()> {
        if t >= self.mdp.horizon() {
            return Err(Error::Range(format!("step {t} outside horizon {}", self.mdp.horizon())));
        }
        if s >= self.mdp.num_states() || a.is_some_and(|a| a >= self.mdp.num_actions()) {
            return Err(Error::Range(format!("state {s} or action {a:?} out of range")));
        }
        Ok(())
    }

    fn sample_rollout(&self, t: usize, s: usize, a: usize, rng: &mut Rng) -> Result<f64> {
        let (mut total, mut state) = self.mdp.step(t, s, a, rng);
        for tt in t + 1..self.mdp.horizon() {
            let probs = self.expert.action_probs(tt, state)?;
            let act = crate::mdp::sample_index(&probs, rng);
            let (c, next) = self.mdp.step(tt, state, act, rng);
            total += c;
            state = next;
        }
        Ok(total)
    }

    /// `Q*_t(s, a)` in the configured mode.
    pub fn query_q(&self, t: usize, s: usize, a: usize, rng: &mut Rng) -> Result<f64> {
        self.check(t, s, Some(a))?;
        match self.mode {
            OracleMode::Exact => Ok(self.table.q(t, s, a)),
            OracleMode::LeafSample => self.sample_rollout(t, s, a, rng),
            OracleMode::MonteCarlo { rollouts } => {
                let mut acc = 0.0;
                for _ in 0..rollouts {
                    acc += self.sample_rollout(t, s, a, rng)?;
                }
                Ok(acc / rollouts as f64)
            }
        }
    }

    pub fn query_q_vector(&self, t: usize, s: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        (0..self.mdp.num_actions()).map(|a| self.query_q(t, s, a, rng)).collect()
    }

    /// Expert state value under the configured value mode.
    pub fn value(&self, t: usize, s: usize) -> Result<f64> {
        self.check(t, s, None)?;
        let row = self.table.q_row(t, s);
        match self.value_mode {
            ValueMode::MinQ => Ok(row.iter().copied().fold(f64::INFINITY, f64::min)),
            ValueMode::ExpertAverage => Ok(self.table.v(t, s)),
            ValueMode::Unavailable => Err(Error::Unsupported(
                "noisy-only oracle cannot provide V* for advantages".into(),
            )),
        }
    }

    /// `A*_t(s, a) = Q*_t(s, a) - V*_t(s)` from the exact table.
    pub fn advantage(&self, t: usize, s: usize, a: usize) -> Result<f64> {
        self.check(t, s, Some(a))?;
        Ok(self.table.q(t, s, a) - self.value(t, s)?)
    }
}

/// Largest `Q` entry over `(t, s)` pairs reachable at step `t` under some
/// policy.
fn reachable_max_q(mdp: &FiniteMdp, table: &QTable) -> f64 {
    let s_n = mdp.num_states();
    let mut reach: Vec<bool> = mdp.initial().iter().map(|&p| p > 0.0).collect();
    let mut best = f64::NEG_INFINITY;
    for t in 0..mdp.horizon() {
        let mut next = vec![false; s_n];
        for s in (0..s_n).filter(|&s| reach[s]) {
            for a in 0..mdp.num_actions() {
                best = best.max(table.q(t, s, a));
                for &(sn, p) in mdp.transition(t, s, a) {
                    if p > 0.0 {
                        next[sn] = true;
                    }
                }
            }
        }
        reach = next;
    }
    best
}

impl CostToGo<usize, usize> for ExpertOracle<'_> {
    fn q(&self, t: usize, state: &usize, action: &usize, rng: &mut Rng) -> Result<f64> {
        self.query_q(t, *state, *action, rng)
    }

    fn v(&self, t: usize, state: &usize) -> Result<f64> {
        self.value(t, *state)
    }

    fn is_exact(&self) -> bool {
        self.mode == OracleMode::Exact
    }
}

impl DiscreteCostToGo<usize> for ExpertOracle<'_> {
    fn q_vector(&self, t: usize, state: &usize, rng: &mut Rng) -> Result<Vec<f64>> {
        self.query_q_vector(t, *state, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::bandit::make_bandit_rows;
    use crate::env::random::make_random_tabular;
    use crate::env::tree::{make_binary_tree, LeafNoise, RIGHT};
    use crate::rng::substream;

    #[test]
    fn monte_carlo_is_exact_on_deterministic_mdp() {
        let (mdp, _) = make_binary_tree(3, &[0.1, 0.4, 0.7, 0.2], LeafNoise::Deterministic).unwrap();
        let ex = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let mc = ExpertOracle::optimal(&mdp, OracleMode::MonteCarlo { rollouts: 3 });
        let mut rng = substream(0, &[]);
        for t in 0..3 {
            for s in 0..7 {
                for a in 0..2 {
                    let (m, e) = (mc.query_q(t, s, a, &mut rng).unwrap(), ex.query_q(t, s, a, &mut rng).unwrap());
                    assert!((m - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depth_two_values() {
        let (mdp, _) = make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        assert_eq!(o.query_q(0, 0, 0, &mut substream(0, &[])).unwrap(), 0.2);
        assert!((o.advantage(0, 0, RIGHT).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(o.advantage(0, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn leaf_samples_are_unbiased() {
        let (mdp, _) = make_binary_tree(2, &[0.3, 0.8], LeafNoise::Bernoulli).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::LeafSample);
        let mut rng = substream(4, &[]);
        let n = 100_000;
        let mean = (0..n).map(|_| o.query_q(0, 0, 0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        let se = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se);
        assert_eq!(o.q_max(), 0.8);
    }

    #[test]
    fn bandit_vectors_are_independent_bernoulli() {
        let mdp = make_bandit_rows(1, 2, &[0.25, 0.6]).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::MonteCarlo { rollouts: 1 });
        let mut rng = substream(6, &[]);
        let n = 100_000;
        let (mut m0, mut m1, mut both) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = o.query_q_vector(0, 0, &mut rng).unwrap();
            m0 += v[0];
            m1 += v[1];
            both += v[0] * v[1];
        }
        let (m0, m1, both) = (m0 / n as f64, m1 / n as f64, both / n as f64);
        assert!((m0 - 0.25).abs() < 3.0 * (0.25f64 * 0.75 / n as f64).sqrt());
        assert!((m1 - 0.6).abs() < 3.0 * (0.24f64 / n as f64).sqrt());
        // Independence: E[xy] = E[x]E[y] = 0.15.
        assert!((both - 0.15).abs() < 3.0 * (0.15f64 * 0.85 / n as f64).sqrt());
    }

    #[test]
    fn exact_table_satisfies_bellman_backup() {
        let mdp = make_random_tabular(6, 3, 5, 2).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        for t in 0..5 {
            for s in 0..6 {
                for a in 0..3 {
                    let mut backup = mdp.mean_cost(t, s, a);
                    if t + 1 < 5 {
                        for &(sn, p) in mdp.transition(t, s, a) {
                            backup += p * o.value(t + 1, sn).unwrap();
                        }
                    }
                    assert!((backup - o.exact_q(t, s, a)).abs() < 1e-12);
                    assert!(o.advantage(t, s, a).unwrap() >= -1e-12);
                }
                let min = (0..3).map(|a| o.advantage(t, s, a).unwrap()).fold(f64::INFINITY, f64::min);
                assert_eq!(min, 0.0);
            }
        }
    }

    #[test]
    fn range_and_mode_errors() {
        let (mdp, _) = make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        assert!(matches!(o.query_q(2, 0, 0, &mut substream(0, &[])), Err(Error::Range(_))));
        let noisy = o.with_value_mode(ValueMode::Unavailable);
        assert!(matches!(noisy.advantage(0, 0, 0), Err(Error::Unsupported(_))));
    }
}
