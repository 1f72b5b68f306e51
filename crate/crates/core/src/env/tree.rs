//! Depth-`K` binary tree MDP.
//!
//! States use heap numbering: the root is 0 and the children of `s` are
//! `2s + 1` (left, action 0) and `2s + 2` (right, action 1). The episode
//! lasts `K` steps; the agent pays nothing on internal nodes and pays the
//! leaf's cost on the last step, whatever action it takes there.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::mdp::{CostDist, FiniteMdp};
use crate::policy::SimplexPolicy;
use crate::rng::Rng;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Family used for the leaf cost distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeafNoise {
    Deterministic,
    Bernoulli,
    /// Uniform on `[mean - half_width, mean + half_width]`.
    Uniform { half_width: f64 },
}

impl LeafNoise {
    fn dist(&self, mean: f64) -> Result<CostDist> {
        if !(0.0..=1.0).contains(&mean) {
            return Err(Error::Config(format!("leaf mean {mean} outside [0,1]")));
        }
        Ok(match *self {
            LeafNoise::Deterministic => CostDist::Deterministic(mean),
            LeafNoise::Bernoulli => CostDist::Bernoulli(mean),
            LeafNoise::Uniform { half_width } => {
                let (lo, hi) = (mean - half_width, mean + half_width);
                if lo < 0.0 || hi > 1.0 {
                    return Err(Error::Config(format!("uniform leaf [{lo},{hi}] leaves [0,1]")));
                }
                CostDist::Uniform { lo, hi }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    depth: usize,
    leaf_costs: Vec<CostDist>,
    optimal_leaf: usize,
}

impl TreeSpec {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_leaves(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn num_states(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn first_leaf(&self) -> usize {
        self.num_leaves() - 1
    }

    pub fn leaf_state(&self, leaf: usize) -> usize {
        self.first_leaf() + leaf
    }

    pub fn is_leaf(&self, s: usize) -> bool {
        s >= self.first_leaf()
    }

    pub fn leaf_costs(&self) -> &[CostDist] {
        &self.leaf_costs
    }

    pub fn optimal_leaf(&self) -> usize {
        self.optimal_leaf
    }

    /// States visited on the way from the root to `leaf`.
    pub fn path(&self, leaf: usize) -> Vec<usize> {
        let mut s = self.leaf_state(leaf);
        let mut path = vec![s];
        while s > 0 {
            s = (s - 1) / 2;
            path.push(s);
        }
        path.reverse();
        path
    }

    /// Action the base policy of `leaf` takes at `s`, when `s` lies on its
    /// path to the leaf.
    pub fn path_action(&self, leaf: usize, s: usize) -> Option<usize> {
        if self.is_leaf(s) {
            return None;
        }
        let mut c = self.leaf_state(leaf);
        while c > 0 {
            let parent = (c - 1) / 2;
            if parent == s {
                return Some(if c == 2 * s + 1 { LEFT } else { RIGHT });
            }
            c = parent;
        }
        None
    }

    /// Base-policy action with the left default off its path.
    pub fn base_action(&self, leaf: usize, s: usize) -> usize {
        self.path_action(leaf, s).unwrap_or(LEFT)
    }

    /// Deterministic policy that walks to `leaf`.
    pub fn path_policy(&self, leaf: usize) -> SimplexPolicy {
        SimplexPolicy::deterministic(self.num_states(), 2, self.depth, |_, s| self.base_action(leaf, s))
    }

    pub fn optimal_policy(&self) -> SimplexPolicy {
        self.path_policy(self.optimal_leaf)
    }

    /// Leaf reached from the root by a deterministic per-state action map.
    pub fn leaf_reached(&self, action: impl Fn(usize) -> usize) -> usize {
        let mut s = 0;
        while !self.is_leaf(s) {
            s = 2 * s + 1 + action(s);
        }
        s - self.first_leaf()
    }
}

/// Builds the tree MDP. Ties for the optimal leaf resolve to the lowest index.
pub fn make_binary_tree(depth: usize, leaf_means: &[f64], noise: LeafNoise) -> Result<(FiniteMdp, TreeSpec)> {
    if depth == 0 || depth > 30 {
        return Err(Error::Config(format!("tree depth {depth} outside 1..=30")));
    }
    let leaves = 1usize << (depth - 1);
    if leaf_means.len() != leaves {
        return Err(Error::Config(format!(
            "depth {depth} needs {leaves} leaf means, got {}",
            leaf_means.len()
        )));
    }
    let leaf_costs = leaf_means.iter().map(|&m| noise.dist(m)).collect::<Result<Vec<_>>>()?;
    let optimal_leaf = leaf_means
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &m)| if m < best.1 { (i, m) } else { best })
        .0;
    let spec = TreeSpec {
        depth,
        leaf_costs,
        optimal_leaf,
    };
    let s_n = spec.num_states();
    let first_leaf = spec.first_leaf();
    let mut transitions = Vec::with_capacity(depth * s_n * 2);
    let mut costs = Vec::with_capacity(depth * s_n * 2);
    for _t in 0..depth {
        for s in 0..s_n {
            for a in 0..2 {
                if s >= first_leaf {
                    transitions.push(vec![(s, 1.0)]);
                    costs.push(spec.leaf_costs[s - first_leaf]);
                } else {
                    transitions.push(vec![(2 * s + 1 + a, 1.0)]);
                    costs.push(CostDist::Deterministic(0.0));
                }
            }
        }
    }
    let mut initial = vec![0.0; s_n];
    initial[0] = 1.0;
    let mdp = FiniteMdp::new(s_n, 2, depth, transitions, costs, initial, 1.0)?;
    Ok((mdp, spec))
}

/// Leaf means with a single best leaf at `best` and every other leaf at
/// least `gap` worse, spread evenly up to `high` and shuffled.
pub fn gap_leaf_means(depth: usize, best: f64, gap: f64, high: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if depth == 0 || depth > 30 {
        return Err(Error::Config(format!("tree depth {depth} outside 1..=30")));
    }
    let leaves = 1usize << (depth - 1);
    if !(0.0 <= best && best + gap <= high && high <= 1.0) {
        return Err(Error::Config("need 0 <= best, best + gap <= high <= 1".into()));
    }
    let others = leaves - 1;
    let mut means: Vec<f64> = (0..others)
        .map(|i| {
            if others == 1 {
                best + gap
            } else {
                best + gap + (high - best - gap) * i as f64 / (others - 1) as f64
            }
        })
        .collect();
    means.push(best);
    means.shuffle(rng);
    Ok(means)
}
