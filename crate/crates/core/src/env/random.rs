//! Random tabular MDPs for property tests and scaling runs.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::{CostDist, FiniteMdp};
use crate::rng::{substream, tag};

/// Transition rows are i.i.d. uniform entries normalized to sum to one;
/// costs are deterministic and uniform on `[0, 1]`.
pub fn make_random_tabular(num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> Result<FiniteMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(Error::Config("S, A and H must all be at least 1".into()));
    }
    let mut rng = substream(seed, &[tag::ENV]);
    let cells = horizon * num_states * num_actions;
    let mut transitions = Vec::with_capacity(cells);
    let mut costs = Vec::with_capacity(cells);
    for _ in 0..cells {
        let raw: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + f64::MIN_POSITIVE).collect();
        let z: f64 = raw.iter().sum();
        transitions.push(raw.iter().enumerate().map(|(s, p)| (s, p / z)).collect());
        costs.push(CostDist::Deterministic(rng.gen::<f64>()));
    }
    let raw: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + f64::MIN_POSITIVE).collect();
    let z: f64 = raw.iter().sum();
    let initial = raw.iter().map(|p| p / z).collect();
    FiniteMdp::new(num_states, num_actions, horizon, transitions, costs, initial, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::expected_cost;
    use crate::policy::SimplexPolicy;

    #[test]
    fn same_seed_same_mdp() {
        let a = make_random_tabular(5, 3, 4, 9).unwrap();
        let b = make_random_tabular(5, 3, 4, 9).unwrap();
        for t in 0..4 {
            for s in 0..5 {
                for u in 0..3 {
                    assert_eq!(a.transition(t, s, u), b.transition(t, s, u));
                    assert_eq!(a.cost(t, s, u), b.cost(t, s, u));
                }
            }
        }
        assert_eq!(a.initial(), b.initial());
    }

    #[test]
    fn rows_are_normalized() {
        let m = make_random_tabular(7, 2, 3, 1).unwrap();
        for t in 0..3 {
            for s in 0..7 {
                for u in 0..2 {
                    let sum: f64 = m.transition(t, s, u).iter().map(|x| x.1).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    /// Sums cost over all (state, action) paths by explicit recursion.
    fn enumerate(m: &FiniteMdp, t: usize, s: usize, w: f64) -> f64 {
        let a_n = m.num_actions();
        (0..a_n)
            .map(|a| {
                let wa = w / a_n as f64;
                let mut c = wa * m.mean_cost(t, s, a);
                if t + 1 < m.horizon() {
                    for &(sn, p) in m.transition(t, s, a) {
                        c += enumerate(m, t + 1, sn, wa * p);
                    }
                }
                c
            })
            .sum()
    }

    #[test]
    fn uniform_policy_cost_matches_enumeration() {
        let m = make_random_tabular(6, 3, 4, 11).unwrap();
        let want: f64 = (0..6).map(|s| enumerate(&m, 0, s, m.initial()[s])).sum();
        let got = expected_cost(&m, &SimplexPolicy::uniform(6, 3, 4)).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}
