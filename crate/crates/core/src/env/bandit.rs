//! Horizon-one MDPs whose states are independent multi-armed problems.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::{CostDist, FiniteMdp};
use crate::rng::Rng;

/// `means[s * A + a]` is the Bernoulli cost mean of arm `a` in state `s`;
/// the initial distribution is uniform over states.
pub fn make_bandit_rows(num_states: usize, num_actions: usize, means: &[f64]) -> Result<FiniteMdp> {
    if means.len() != num_states * num_actions {
        return Err(Error::Config(format!(
            "expected {} arm means, got {}",
            num_states * num_actions,
            means.len()
        )));
    }
    let transitions = (0..num_states * num_actions)
        .map(|i| vec![(i / num_actions, 1.0)])
        .collect();
    let costs = means.iter().map(|&m| CostDist::Bernoulli(m)).collect();
    let initial = vec![1.0 / num_states as f64; num_states];
    FiniteMdp::new(num_states, num_actions, 1, transitions, costs, initial, 1.0)
}

/// Hard fixed-gap family: in every state one arm, chosen at random, has
/// mean `0.5 - eps` and all others `0.5 + eps`. Returns the means and the
/// optimal arm per state.
pub fn hard_bandit_means(num_states: usize, num_actions: usize, eps: f64, rng: &mut Rng) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(0.0..=0.5).contains(&eps) {
        return Err(Error::Config(format!("gap {eps} outside [0, 0.5]")));
    }
    let mut means = vec![0.5 + eps; num_states * num_actions];
    let mut best = Vec::with_capacity(num_states);
    for s in 0..num_states {
        let a = rng.gen_range(0..num_actions);
        means[s * num_actions + a] = 0.5 - eps;
        best.push(a);
    }
    Ok((means, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{expected_cost, optimal_q};
    use crate::policy::SimplexPolicy;
    use crate::rng::substream;

    #[test]
    fn zero_gap_makes_every_policy_optimal() {
        let mdp = make_bandit_rows(1, 2, &[0.5, 0.5]).unwrap();
        let (q, _) = optimal_q(&mdp);
        for pi in [vec![1.0, 0.0], vec![0.3, 0.7]] {
            let p = SimplexPolicy::from_table(1, 2, 1, pi).unwrap();
            assert_eq!(expected_cost(&mdp, &p).unwrap(), q.v(0, 0));
        }
    }

    #[test]
    fn expert_cost_is_mean_of_row_minima() {
        let means = [0.3, 0.6, 0.9, 0.1, 0.5, 0.5, 0.2, 0.4];
        let mdp = make_bandit_rows(4, 2, &means).unwrap();
        let (_, expert) = optimal_q(&mdp);
        let want = (0.3 + 0.1 + 0.5 + 0.2) / 4.0;
        assert!((expected_cost(&mdp, &expert).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn cost_decomposes_over_states() {
        let (means, _) = hard_bandit_means(8, 4, 0.1, &mut substream(2, &[])).unwrap();
        let mdp = make_bandit_rows(8, 4, &means).unwrap();
        let pi = SimplexPolicy::random(8, 4, 1, &mut substream(3, &[]));
        let direct: f64 = (0..8)
            .map(|s| (0..4).map(|a| pi.prob(0, s, a) * means[s * 4 + a]).sum::<f64>() / 8.0)
            .sum();
        assert!((expected_cost(&mdp, &pi).unwrap() - direct).abs() < 1e-14);
    }
}
