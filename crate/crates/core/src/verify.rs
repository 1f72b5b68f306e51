//! Acceptance checks shared by `aggrevated verify` and the `acceptance`
//! test target.
//!
//! Each check builds its instances from fixed seeds, compares the library
//! against an independent computation (finite differences, a dense linear
//! solve, a numeric argmin, direct enumeration) or measures a regret
//! scaling law, and reports one line. Tolerances are the constants below.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cli;
use crate::config::{self, Algorithm, ExperimentConfig};
use crate::env::parsing::{make_parse_corpus, oracle_completion, uas, ParserState};
use crate::env::point_mass::{make_point_mass, PointMassConfig};
use crate::env::random::make_random_tabular;
use crate::env::tree::{make_binary_tree, LeafNoise};
use crate::error::Result;
use crate::estimators::{
    exact_gradient_discrete, sampled_gradient_continuous, sampled_gradient_discrete, sampled_gradient_importance,
    surrogate_loss_exact, FisherFactor, NoiseSource,
};
use crate::learner::{
    build_finite, loglog_slope, run_aggrevated, run_finite, run_tree_bandit_ucb, EgVariant, EnvSpec, ExpertSpec,
    FamilySpec, GradientSpec, Mixing, RunConfig, Schedule, TreeMeans, UpdateRule,
};
use crate::mdp::{performance_difference_residual, rollout};
use crate::optimizers::{
    cg_solve_low_rank, eg_regret_bound_check, eg_step_argmin_oracle, eg_step_closed_form, natural_step_size,
    CgSettings,
};
use crate::oracle::{ExpertOracle, OracleMode, ValueMode};
use crate::policy::{ActionRef, DifferentiablePolicy, Observation, PolicyFamily, SimplexPolicy};
use crate::rng::{substream, Rng};

/// Seed from which every instance below is derived.
pub const SEED: u64 = 20_170_301;

pub const PDL_INSTANCES: usize = 50;
pub const PDL_TOL: f64 = 1e-8;
pub const GRAD_INSTANCES: usize = 100;
pub const GRAD_REL_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
pub const ESTIMATOR_DRAWS: usize = 100_000;
pub const ESTIMATOR_SE: f64 = 3.0;
/// Share of components whose variance must drop with advantages.
pub const VR_SHARE: f64 = 0.8;
pub const EG_INSTANCES: usize = 100;
pub const EG_TOL: f64 = 1e-6;
pub const REGRET_INSTANCES: usize = 100;
pub const REGRET_ROUNDS: usize = 1000;
/// Relative slack for rounding when comparing regret with its bound.
pub const REGRET_ROUNDING: f64 = 1e-12;
pub const FTL_DEPTH: usize = 10;
pub const FTL_EPISODES: usize = 30;
pub const FTL_MAX_EPISODES: usize = 9;
pub const SLOPE_RANGE: (f64, f64) = (0.4, 0.6);
pub const EXPONENT_RANGE: (f64, f64) = (0.3, 0.7);
pub const GAP_EPISODES: usize = 10_000;
pub const GAP_MIN_RATIO: f64 = 3.0;
pub const CG_INSTANCES: usize = 20;
pub const CG_TOL: f64 = 1e-6;
pub const KL_RESIDUAL_FACTOR: f64 = 10.0;
pub const NATURAL_EPISODES: usize = 50;
/// Distance to the optimum 0.2 that counts as reaching it.
pub const REACH_TOL: f64 = 1e-3;
pub const SUPER_MARGIN: f64 = 0.1;
pub const PARSE_EPISODES: usize = 200;
pub const PARSE_MIN_UAS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.1}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Eg,
    Pdl,
    Fisher,
    RegretFast,
    RegretFull,
    /// Every criterion, in order.
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "gradients" => Suite::Gradients,
            "eg" => Suite::Eg,
            "pdl" => Suite::Pdl,
            "fisher" => Suite::Fisher,
            "regret-fast" => Suite::RegretFast,
            "regret-full" => Suite::RegretFull,
            "all" => Suite::All,
            _ => {
                return Err(format!(
                    "unknown suite {s:?}; expected gradients, eg, pdl, fisher, regret-fast, regret-full or all"
                ))
            }
        })
    }
}

impl Suite {
    pub fn criteria(self) -> &'static [u32] {
        match self {
            Suite::Gradients => &[2, 3],
            Suite::Eg => &[4, 5],
            Suite::Pdl => &[1],
            Suite::Fisher => &[11],
            Suite::RegretFast => &[6, 10, 12, 13, 14],
            Suite::RegretFull => &[7, 8, 9],
            Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
        }
    }
}

type Check = fn() -> Result<(bool, String)>;

fn lookup(id: u32) -> Option<(&'static str, Check)> {
    Some(match id {
        1 => ("performance-difference identity", pdl_identity as Check),
        2 => ("gradient correctness", gradient_correctness),
        3 => ("estimator unbiasedness", estimator_unbiasedness),
        4 => ("eg closed form vs argmin", eg_equivalence),
        5 => ("eg regret bound", eg_regret_bound),
        6 => ("ftl on the exact-oracle tree", ftl_tree),
        7 => ("weighted majority with a noisy oracle", weighted_majority_scaling),
        8 => ("ucb vs aggrevated-eg gap", imitation_vs_bandit_gap),
        9 => ("tabular eg on random mdps", random_mdp_scaling),
        10 => ("eg on bandit rows", bandit_rows_scaling),
        11 => ("natural gradient", natural_gradient),
        12 => ("super-expert", super_expert),
        13 => ("dependency parsing", parsing),
        14 => ("run determinism", determinism),
        _ => return None,
    })
}

/// Runs one criterion; an internal error counts as a failure.
pub fn run_criterion(id: u32) -> CriterionResult {
    let start = Instant::now();
    let (name, check) = lookup(id).unwrap_or(("unknown criterion", || Ok((false, "no such criterion".into()))));
    let (passed, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs a suite, calling `report` after each criterion.
pub fn run_suite(suite: Suite, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    suite
        .criteria()
        .iter()
        .map(|&id| {
            let r = run_criterion(id);
            report(&r);
            r
        })
        .collect()
}

fn in_range(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn pdl_identity() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for i in 0..PDL_INSTANCES {
        let mut rng = substream(SEED, &[1, i as u64]);
        let s = rng.gen_range(2..=20);
        let a = rng.gen_range(2..=4);
        let h = rng.gen_range(1..=10);
        let mdp = make_random_tabular(s, a, h, rng.gen())?;
        let pi1 = SimplexPolicy::random(s, a, h, &mut rng);
        let pi2 = SimplexPolicy::random(s, a, h, &mut rng);
        worst = worst.max(performance_difference_residual(&mdp, &pi1, &pi2)?);
    }
    Ok((
        worst < PDL_TOL,
        format!("{PDL_INSTANCES} random mdps, max residual {worst:.2e} (limit {PDL_TOL:.0e})"),
    ))
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn central_difference(theta: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(theta.len());
    let mut th = theta.to_vec();
    for k in 0..theta.len() {
        th[k] = theta[k] + FD_STEP;
        let up = f(&th)?;
        th[k] = theta[k] - FD_STEP;
        let down = f(&th)?;
        th[k] = theta[k];
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

fn gradient_correctness() -> Result<(bool, String)> {
    let mut worst_discrete: f64 = 0.0;
    for i in 0..GRAD_INSTANCES {
        let mut rng = substream(SEED, &[2, i as u64]);
        let s = rng.gen_range(2..=6);
        let a = rng.gen_range(2..=4);
        let h = rng.gen_range(1..=5);
        let mdp = make_random_tabular(s, a, h, rng.gen())?;
        let oracle = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let rollin = SimplexPolicy::random(s, a, h, &mut rng);
        let family = match i % 3 {
            0 => PolicyFamily::TabularSoftmax { num_states: s, num_actions: a },
            1 => PolicyFamily::LinearSoftmax { num_features: s, num_actions: a },
            _ => PolicyFamily::MlpSoftmax { num_features: s, hidden: 4, num_actions: a },
        };
        let theta: Vec<f64> = (0..family.dim()).map(|_| normal(&mut rng)).collect();
        let policy = DifferentiablePolicy::with_theta(family, theta.clone(), i as u64)?;
        let g = exact_gradient_discrete(&mdp, &oracle, &policy, &rollin)?.gradient;
        let fd = central_difference(&theta, |th| {
            let p = DifferentiablePolicy::with_theta(family, th.to_vec(), i as u64)?;
            surrogate_loss_exact(&mdp, &oracle, &p.tabular(), &rollin)
        })?;
        worst_discrete = worst_discrete.max(relative_error(&g, &fd));
    }
    let mut worst_gauss: f64 = 0.0;
    for i in 0..GRAD_INSTANCES {
        let mut rng = substream(SEED, &[2, 1_000 + i as u64]);
        let f = rng.gen_range(1..=4);
        let d = rng.gen_range(1..=2);
        let family = PolicyFamily::Gaussian { num_features: f, action_dim: d };
        let mut theta: Vec<f64> = (0..family.dim()).map(|_| normal(&mut rng)).collect();
        for ls in &mut theta[d * (f + 1)..] {
            *ls = rng.gen_range(-1.0..0.5);
        }
        let x: Vec<f64> = (0..f).map(|_| normal(&mut rng)).collect();
        let u: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let obs = Observation::features(&x);
        let policy = DifferentiablePolicy::with_theta(family, theta.clone(), 0)?;
        let g = policy.log_policy_gradient(&obs, ActionRef::Continuous(&u))?;
        let fd = central_difference(&theta, |th| {
            DifferentiablePolicy::with_theta(family, th.to_vec(), 0)?.log_likelihood(&obs, ActionRef::Continuous(&u))
        })?;
        worst_gauss = worst_gauss.max(relative_error(&g, &fd));
    }
    Ok((
        worst_discrete < GRAD_REL_TOL && worst_gauss < GRAD_REL_TOL,
        format!(
            "max relative error {worst_discrete:.2e} over {GRAD_INSTANCES} tabular/linear/mlp surrogates, \
             {worst_gauss:.2e} over {GRAD_INSTANCES} gaussian log-likelihoods (limit {GRAD_REL_TOL:.0e})"
        ),
    ))
}

/// Componentwise mean and standard error of `draws` estimates.
fn moments(draws: usize, dim: usize, sample: impl Fn(usize) -> Result<Vec<f64>> + Sync) -> Result<(Vec<f64>, Vec<f64>)> {
    let (sum, sq) = (0..draws)
        .into_par_iter()
        .map(|i| sample(i).map(|g| (g.iter().map(|x| x * x).collect::<Vec<f64>>(), g)))
        .try_fold(
            || (vec![0.0; dim], vec![0.0; dim]),
            |(mut s, mut q), r: Result<(Vec<f64>, Vec<f64>)>| {
                let (g2, g) = r?;
                for k in 0..dim {
                    s[k] += g[k];
                    q[k] += g2[k];
                }
                Ok::<_, crate::Error>((s, q))
            },
        )
        .try_reduce(
            || (vec![0.0; dim], vec![0.0; dim]),
            |(mut s, mut q), (s2, q2)| {
                for k in 0..dim {
                    s[k] += s2[k];
                    q[k] += q2[k];
                }
                Ok((s, q))
            },
        )?;
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0) * n / (n - 1.0)).collect();
    Ok((mean, var))
}

/// Number of components farther than `ESTIMATOR_SE` standard errors.
fn outliers(mean: &[f64], var: &[f64], exact: &[f64], draws: usize) -> usize {
    mean.iter()
        .zip(var)
        .zip(exact)
        .filter(|((m, v), e)| (*m - *e).abs() > ESTIMATOR_SE * (*v / draws as f64).sqrt() + 1e-12)
        .count()
}

fn estimator_unbiasedness() -> Result<(bool, String)> {
    let draws = ESTIMATOR_DRAWS;
    let mut notes = Vec::new();
    let mut ok = true;

    // Small random mdp, on-policy roll-in, single-rollout expert estimates.
    let mdp = make_random_tabular(2, 2, 3, SEED)?;
    let exact_oracle = ExpertOracle::optimal(&mdp, OracleMode::Exact);
    let noisy = ExpertOracle::new(
        &mdp,
        exact_oracle.expert().clone(),
        OracleMode::MonteCarlo { rollouts: 1 },
        ValueMode::MinQ,
    )?;
    let family = PolicyFamily::TabularSoftmax { num_states: 2, num_actions: 2 };
    let mut rng = substream(SEED, &[3, 0]);
    let theta: Vec<f64> = (0..family.dim()).map(|_| normal(&mut rng)).collect();
    let policy = DifferentiablePolicy::with_theta(family, theta, 0)?;
    let exact = exact_gradient_discrete(&mdp, &exact_oracle, &policy, &policy.tabular())?.gradient;
    for importance in [false, true] {
        let (mean, var) = moments(draws, exact.len(), |i| {
            let traj = rollout(&mdp, &policy.tabular(), &mut substream(SEED, &[3, 1, i as u64]))?;
            let noise = NoiseSource::new(SEED, i as u64);
            let g = if importance {
                sampled_gradient_importance(&[traj], &noisy, &policy, false, noise)?
            } else {
                sampled_gradient_discrete(&[traj], &noisy, &policy, false, noise)?
            };
            Ok(g.gradient)
        })?;
        let bad = outliers(&mean, &var, &exact, draws);
        ok &= bad == 0;
        notes.push(format!(
            "{} {}/{} within {ESTIMATOR_SE} se",
            if importance { "importance" } else { "all-actions" },
            exact.len() - bad,
            exact.len()
        ));
    }

    // Point mass, gaussian policy; exact gradient from differentiating the
    // moment-propagated surrogate.
    let (env, expert) = make_point_mass(PointMassConfig::default())?;
    let gfam = PolicyFamily::Gaussian { num_features: 2, action_dim: 1 };
    let gtheta = vec![-1.0, -0.5, 0.1, 0.5f64.ln()];
    let gpol = DifferentiablePolicy::with_theta(gfam, gtheta.clone(), 0)?;
    let gexact = central_difference(&gtheta, |th| {
        let learner = DifferentiablePolicy::with_theta(gfam, th.to_vec(), 0)?;
        env.exact_surrogate(&expert, &learner, &gpol)
    })?;
    let (mean, var) = moments(draws, gexact.len(), |i| {
        let traj = env.rollout(&gpol, &mut substream(SEED, &[3, 2, i as u64]))?;
        Ok(sampled_gradient_continuous(&[traj], &expert, &gpol, false, NoiseSource::new(SEED, i as u64))?.gradient)
    })?;
    let bad = outliers(&mean, &var, &gexact, draws);
    ok &= bad == 0;
    notes.push(format!("gaussian {}/{} within {ESTIMATOR_SE} se", gexact.len() - bad, gexact.len()));

    // Depth-3 tree with Bernoulli leaves: advantages keep the mean and shrink
    // the spread of the importance estimator.
    let (tree, _) = make_binary_tree(3, &[0.2, 0.5, 0.7, 0.9], LeafNoise::Bernoulli)?;
    let toracle = ExpertOracle::optimal(&tree, OracleMode::Exact);
    let tfam = PolicyFamily::TabularSoftmax { num_states: tree.num_states(), num_actions: 2 };
    let mut rng = substream(SEED, &[3, 3]);
    let ttheta: Vec<f64> = (0..tfam.dim()).map(|_| 0.5 * normal(&mut rng)).collect();
    let tpol = DifferentiablePolicy::with_theta(tfam, ttheta, 0)?;
    let texact = exact_gradient_discrete(&tree, &toracle, &tpol, &tpol.tabular())?.gradient;
    let mut vars = Vec::new();
    for advantage in [false, true] {
        let (mean, var) = moments(draws, texact.len(), |i| {
            let traj = rollout(&tree, &tpol.tabular(), &mut substream(SEED, &[3, 4, i as u64]))?;
            Ok(sampled_gradient_importance(&[traj], &toracle, &tpol, advantage, NoiseSource::new(SEED, i as u64))?
                .gradient)
        })?;
        let bad = outliers(&mean, &var, &texact, draws);
        ok &= bad == 0;
        notes.push(format!(
            "tree {} {}/{} within {ESTIMATOR_SE} se",
            if advantage { "advantage" } else { "plain" },
            texact.len() - bad,
            texact.len()
        ));
        vars.push(var);
    }
    let live: Vec<usize> = (0..texact.len()).filter(|&k| vars[0][k] > 0.0).collect();
    let reduced = live.iter().filter(|&&k| vars[1][k] <= vars[0][k]).count();
    let share = reduced as f64 / live.len().max(1) as f64;
    let (tr0, tr1): (f64, f64) = (vars[0].iter().sum(), vars[1].iter().sum());
    ok &= share >= VR_SHARE && tr1 < tr0;
    notes.push(format!(
        "covariance trace {tr0:.3e} -> {tr1:.3e}, variance reduced on {reduced}/{} components",
        live.len()
    ));
    Ok((ok, format!("{draws} draws each; {}", notes.join("; "))))
}

fn random_row(d: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

fn eg_equivalence() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for i in 0..EG_INSTANCES {
        let mut rng = substream(SEED, &[4, i as u64]);
        let d = rng.gen_range(2..=64);
        let row = random_row(d, &mut rng);
        let eta = 10f64.powf(rng.gen_range(-3.0..1.0));
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = eg_step_closed_form(&row, eta, &q)?;
        let b = eg_step_argmin_oracle(&row, eta, &q)?;
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Ok((
        worst < EG_TOL,
        format!("{EG_INSTANCES} instances, max deviation {worst:.2e} (limit {EG_TOL:.0e})"),
    ))
}

fn eg_regret_bound() -> Result<(bool, String)> {
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    let mut check = |losses: &[Vec<f64>], mu: f64| -> Result<()> {
        let (regret, bound) = eg_regret_bound_check(losses, mu)?;
        if regret > bound * (1.0 + REGRET_ROUNDING) {
            violations += 1;
        }
        tightest = tightest.min(bound - regret);
        Ok(())
    };
    for i in 0..REGRET_INSTANCES {
        let mut rng = substream(SEED, &[5, i as u64]);
        let d = rng.gen_range(2..=64);
        let mu = 10f64.powf(rng.gen_range(-2.0..0.0));
        let losses: Vec<Vec<f64>> = (0..REGRET_ROUNDS)
            .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        check(&losses, mu)?;
    }
    // Alternating losses that punish whichever expert just looked best.
    let mu = (2.0 * 2f64.ln() / REGRET_ROUNDS as f64).sqrt();
    let alternating: Vec<Vec<f64>> = (0..REGRET_ROUNDS)
        .map(|n| match n {
            0 => vec![0.5, 0.0],
            n if n % 2 == 1 => vec![0.0, 1.0],
            _ => vec![1.0, 0.0],
        })
        .collect();
    check(&alternating, mu)?;
    // Adaptive: unit loss on the currently heaviest expert.
    let d = 64;
    let mu = (2.0 * (d as f64).ln() / REGRET_ROUNDS as f64).sqrt();
    let mut w = vec![1.0 / d as f64; d];
    let mut adaptive = Vec::with_capacity(REGRET_ROUNDS);
    for _ in 0..REGRET_ROUNDS {
        let j = (0..d).fold(0, |b, i| if w[i] > w[b] { i } else { b });
        let mut y = vec![0.0; d];
        y[j] = 1.0;
        w = eg_step_closed_form(&w, mu, &y)?;
        adaptive.push(y);
    }
    check(&adaptive, mu)?;
    Ok((
        violations == 0,
        format!(
            "{} sequences of {REGRET_ROUNDS} rounds, {violations} violations, smallest slack {tightest:.3}",
            REGRET_INSTANCES + 2
        ),
    ))
}

fn ftl_tree() -> Result<(bool, String)> {
    let cfg = RunConfig {
        env: EnvSpec::Tree {
            depth: FTL_DEPTH,
            means: TreeMeans::Gap { best: 0.2, gap: 0.3, high: 0.9 },
            noise: LeafNoise::Deterministic,
        },
        rule: UpdateRule::Ftl,
        episodes: FTL_EPISODES,
        seed: SEED,
        ..RunConfig::default()
    };
    let setup = build_finite(&cfg)?;
    let c_max = setup
        .tree
        .as_ref()
        .map_or(1.0, |t| t.leaf_costs().iter().map(|c| c.mean()).fold(0.0, f64::max));
    let curve = run_aggrevated(&cfg)?.curve;
    let first = curve.records.iter().position(|r| r.inst_regret.abs() < 1e-12).map(|i| i + 1);
    let stays = first.is_some_and(|f| curve.records[f - 1..].iter().all(|r| r.inst_regret.abs() < 1e-12));
    let r_n = curve.final_regret();
    let ok = first.is_some_and(|f| f <= FTL_MAX_EPISODES) && stays && r_n <= FTL_MAX_EPISODES as f64 * c_max;
    Ok((
        ok,
        format!(
            "depth {FTL_DEPTH} ({} states): optimal from episode {} of {FTL_EPISODES}, regret constant after: {stays}, \
             R_N = {r_n:.3} <= {FTL_MAX_EPISODES} * c_max = {:.3}",
            setup.mdp.num_states(),
            first.map_or("never".into(), |f| f.to_string()),
            FTL_MAX_EPISODES as f64 * c_max
        ),
    ))
}

/// Weighted majority on Bernoulli trees; `mu = 5 sqrt(2 ln d / N)` for each
/// horizon. Returns the seed-averaged final regret.
fn weighted_majority_regret(depth: usize, episodes: usize, seeds: u64) -> Result<f64> {
    let d = (1usize << (depth - 1)) as f64;
    let runs: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let cfg = RunConfig {
                env: EnvSpec::Tree {
                    depth,
                    means: TreeMeans::Gap { best: 0.2, gap: 0.3, high: 0.5 },
                    noise: LeafNoise::Bernoulli,
                },
                rule: UpdateRule::WeightedMajority,
                oracle: OracleMode::LeafSample,
                episodes,
                rate: Schedule::Constant(5.0 * (2.0 * d.ln() / episodes as f64).sqrt()),
                seed,
                ..RunConfig::default()
            };
            Ok(run_aggrevated(&cfg)?.curve.final_regret())
        })
        .collect::<Result<_>>()?;
    Ok(runs.iter().sum::<f64>() / seeds as f64)
}

fn weighted_majority_scaling() -> Result<(bool, String)> {
    const SEEDS: u64 = 4;
    let horizons: Vec<usize> = (8..=14).map(|p| 1usize << p).collect();
    let ys = horizons
        .iter()
        .map(|&n| weighted_majority_regret(8, n, SEEDS))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = horizons.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&xs, &ys)?;
    let ks = [4usize, 6, 8];
    let mut rk = Vec::new();
    for &k in &ks[..2] {
        rk.push(weighted_majority_regret(k, 1 << 14, SEEDS)?);
    }
    rk.push(*ys.last().unwrap_or(&f64::NAN));
    let kx: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let k_exp = loglog_slope(&kx, &rk)?;
    let ok = in_range(slope, SLOPE_RANGE) && k_exp < 2.0 && rk.windows(2).all(|w| w[0] < w[1]);
    Ok((
        ok,
        format!(
            "K=8 slope {slope:.3} over N=2^8..2^14; R at N=2^14 for K=4,6,8: {:.1}, {:.1}, {:.1} (K exponent {k_exp:.2} < 2)",
            rk[0], rk[1], rk[2]
        ),
    ))
}

fn imitation_vs_bandit_gap() -> Result<(bool, String)> {
    const SEEDS: u64 = 10;
    let mut ratios = Vec::new();
    let mut parts = Vec::new();
    for depth in [4usize, 6, 8, 10] {
        let pairs: Vec<(f64, f64)> = (0..SEEDS)
            .into_par_iter()
            .map(|seed| {
                let cfg = RunConfig {
                    env: EnvSpec::Tree {
                        depth,
                        means: TreeMeans::Gap { best: 0.2, gap: 0.3, high: 0.9 },
                        noise: LeafNoise::Bernoulli,
                    },
                    rule: UpdateRule::Eg,
                    eg_variant: EgVariant::State,
                    oracle: OracleMode::MonteCarlo { rollouts: 8 },
                    episodes: GAP_EPISODES,
                    rate: Schedule::Constant(4.0),
                    seed,
                    ..RunConfig::default()
                };
                let setup = build_finite(&cfg)?;
                let eg = run_aggrevated(&cfg)?.curve.final_regret();
                let tree = setup.tree.as_ref().expect("tree environment");
                let ucb = run_tree_bandit_ucb(tree, GAP_EPISODES, seed)?.curve.final_regret();
                Ok((eg, ucb))
            })
            .collect::<Result<_>>()?;
        let eg = pairs.iter().map(|p| p.0).sum::<f64>() / SEEDS as f64;
        let ucb = pairs.iter().map(|p| p.1).sum::<f64>() / SEEDS as f64;
        ratios.push(ucb / eg);
        parts.push(format!("K={depth} ucb {ucb:.0} / eg {eg:.2} = {:.1}", ucb / eg));
    }
    let ok = ratios.windows(2).all(|w| w[0] < w[1]) && ratios.last().is_some_and(|&r| r > GAP_MIN_RATIO);
    Ok((ok, format!("N={GAP_EPISODES}, {SEEDS} seeds: {}", parts.join("; "))))
}

/// Final regret of per-(s, t) EG with a single-rollout oracle on a random
/// MDP, with `eta = (H / Q_max) sqrt(2 S ln A / N)`.
fn random_mdp_regret(states: usize, episodes: usize) -> Result<f64> {
    let (actions, horizon) = (4usize, 5usize);
    let base = RunConfig {
        env: EnvSpec::Random { states, actions, horizon },
        seed: 0,
        ..RunConfig::default()
    };
    let setup = build_finite(&base)?;
    let mode = OracleMode::MonteCarlo { rollouts: 1 };
    let oracle = ExpertOracle::new(&setup.mdp, setup.expert.clone(), mode, ValueMode::MinQ)?;
    let eta = (horizon as f64 / oracle.q_max()) * (2.0 * states as f64 * (actions as f64).ln() / episodes as f64).sqrt();
    let cfg = RunConfig {
        rule: UpdateRule::Eg,
        eg_variant: EgVariant::StateTime,
        oracle: mode,
        episodes,
        rate: Schedule::Constant(eta),
        ..base
    };
    Ok(run_finite(&cfg, &setup, &oracle)?.curve.final_regret())
}

fn random_mdp_scaling() -> Result<(bool, String)> {
    let horizons: Vec<usize> = (10..=16).step_by(2).map(|p| 1usize << p).collect();
    let ys = horizons
        .par_iter()
        .map(|&n| random_mdp_regret(16, n))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = horizons.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&xs, &ys)?;
    let sizes = [8usize, 16, 32, 64];
    let rs = sizes
        .par_iter()
        .map(|&s| if s == 16 { Ok(ys[ys.len() - 1]) } else { random_mdp_regret(s, 1 << 16) })
        .collect::<Result<Vec<_>>>()?;
    let sx: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let exponent = loglog_slope(&sx, &rs)?;
    Ok((
        in_range(slope, SLOPE_RANGE) && in_range(exponent, EXPONENT_RANGE),
        format!(
            "S=16 slope in N {slope:.3}; R at N=2^16 for S=8,16,32,64: {:.0}, {:.0}, {:.0}, {:.0} (S exponent {exponent:.3})",
            rs[0], rs[1], rs[2], rs[3]
        ),
    ))
}

fn bandit_rows_scaling() -> Result<(bool, String)> {
    let (s, a) = (16usize, 4usize);
    let horizons: Vec<usize> = (8..=16).step_by(2).map(|p| 1usize << p).collect();
    let ys = horizons
        .par_iter()
        .map(|&n| {
            let cfg = RunConfig {
                env: EnvSpec::BanditRows { states: s, actions: a, gap: 0.2 },
                rule: UpdateRule::Eg,
                eg_variant: EgVariant::StateTime,
                oracle: OracleMode::LeafSample,
                episodes: n,
                rate: Schedule::Constant((2.0 * s as f64 * (a as f64).ln() / n as f64).sqrt()),
                ..RunConfig::default()
            };
            Ok(run_aggrevated(&cfg)?.curve.final_regret())
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = horizons.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&xs, &ys)?;
    let scale: Vec<String> = horizons
        .iter()
        .zip(&ys)
        .map(|(&n, r)| format!("{:.2}", r / (s as f64 * (a as f64).ln() * n as f64).sqrt()))
        .collect();
    Ok((
        in_range(slope, SLOPE_RANGE),
        format!(
            "S={s}, A={a}, gap 0.2: slope {slope:.3} over N=2^8..2^16; R / sqrt(S ln A N) = {}",
            scale.join(", ")
        ),
    ))
}

fn natural_gradient() -> Result<(bool, String)> {
    let exact = CgSettings { max_iters: 400, tol: 1e-9, damping: 1e-3, kl: 0.01 };
    let loose = CgSettings { max_iters: 400, tol: 1e-6, ..exact };
    let mut worst_solve: f64 = 0.0;
    let mut worst_kl: f64 = 0.0;
    let mut kl_ok = true;
    for i in 0..CG_INSTANCES {
        let mut rng = substream(SEED, &[11, i as u64]);
        let d = rng.gen_range(2..=200);
        let k = rng.gen_range(1..=20);
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
        let g: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let factor = FisherFactor::from_columns(d, cols.clone())?;
        let s = DMatrix::from_fn(d, k, |r, c| cols[c][r]);
        let dense = &s * s.transpose() + DMatrix::identity(d, d) * exact.damping;
        let gv = DVector::from_column_slice(&g);
        let reference = dense
            .clone()
            .cholesky()
            .ok_or_else(|| crate::Error::Numeric("dense Fisher is not positive definite".into()))?
            .solve(&gv);
        let cg = cg_solve_low_rank(&factor, &g, &exact)?;
        let dev = cg.solution.iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_solve = worst_solve.max(dev);

        let rough = cg_solve_low_rank(&factor, &g, &loose)?;
        let eta = natural_step_size(loose.kl, &g, &rough.solution)?;
        let step = DVector::from_column_slice(&rough.solution) * eta;
        let estimate = (step.transpose() * &dense * &step)[(0, 0)];
        let gap = (estimate - loose.kl).abs();
        let allowed = KL_RESIDUAL_FACTOR * eta * eta * norm(&rough.solution) * rough.residual + 64.0 * f64::EPSILON * loose.kl;
        kl_ok &= gap <= allowed;
        worst_kl = worst_kl.max(gap / allowed);
    }
    let cfg = RunConfig {
        rule: UpdateRule::Natural,
        episodes: NATURAL_EPISODES,
        seed: SEED,
        ..RunConfig::default()
    };
    let curve = run_aggrevated(&cfg)?.curve;
    let reached = curve.records.iter().position(|r| (r.mu_pi - 0.2).abs() < REACH_TOL).map(|i| i + 1);
    let ok = worst_solve < CG_TOL && kl_ok && reached.is_some();
    Ok((
        ok,
        format!(
            "{CG_INSTANCES} low-rank solves (d<=200, K<=20) max deviation {worst_solve:.2e} from dense cholesky; \
             KL error at most {worst_kl:.2} of the residual allowance; depth-2 tree reaches mu=0.2 at episode {}",
            reached.map_or("never".into(), |n| n.to_string())
        ),
    ))
}

fn super_expert() -> Result<(bool, String)> {
    let cfg = RunConfig {
        expert: ExpertSpec::Leaf(1),
        episodes: 50,
        seed: SEED,
        ..RunConfig::default()
    };
    let out = run_aggrevated(&cfg)?;
    let mu_expert = out.curve.records.first().map_or(f64::NAN, |r| r.mu_star);
    Ok((
        out.best_score <= mu_expert - SUPER_MARGIN,
        format!(
            "expert mu {mu_expert:.3}, best learned mu {:.4} at episode {} (margin {:.3}, need {SUPER_MARGIN})",
            out.best_score,
            out.best_episode,
            mu_expert - out.best_score
        ),
    ))
}

fn parsing_config() -> RunConfig {
    RunConfig {
        env: EnvSpec::Parsing { sentences: 200, held_out: 50, max_len: 12, vocab: 40 },
        family: FamilySpec::Linear,
        rule: UpdateRule::Ogd,
        gradient: GradientSpec::AllActions,
        episodes: PARSE_EPISODES,
        rollouts: 32,
        mixing: Mixing { alpha0: 1.0, beta: 0.9 },
        rate: Schedule::Constant(100.0),
        seed: 0,
        ..RunConfig::default()
    }
}

fn parsing() -> Result<(bool, String)> {
    let cfg = parsing_config();
    let EnvSpec::Parsing { sentences, max_len, vocab, .. } = cfg.env else {
        unreachable!("parsing configuration")
    };
    let corpus = make_parse_corpus(sentences, max_len, vocab, cfg.seed)?;
    let perfect = corpus
        .iter()
        .filter(|s| uas(oracle_completion(&ParserState::new(s.len()), &s.heads).heads(), &s.heads) == 1.0)
        .count();
    let longest = corpus.iter().map(|s| s.len()).max().unwrap_or(0);
    let out = run_aggrevated(&cfg)?;
    let best_uas = 1.0 - out.best_score;
    Ok((
        perfect == corpus.len() && longest <= max_len && best_uas >= PARSE_MIN_UAS,
        format!(
            "oracle UAS 1.0 on {perfect}/{} sentences (longest {longest}); held-out UAS {best_uas:.4} at episode {} of {PARSE_EPISODES}",
            corpus.len(),
            out.best_episode
        ),
    ))
}

const DETERMINISM_CONFIGS: &[&str] = &[
    "env.kind = tree\nenv.depth = 6\nenv.noise = bernoulli\nlearner.rule = eg\noracle.mode = monte_carlo\noracle.rollouts = 2\nlearner.rollouts = 8\nlearner.episodes = 40\nrun.seed = 3\n",
    "env.kind = random\nenv.states = 6\nenv.actions = 3\nenv.horizon = 4\nlearner.rule = ogd\nlearner.gradient = importance\noracle.mode = monte_carlo\nlearner.rollouts = 16\nlearner.episodes = 30\nlearner.mixing_alpha0 = 0.5\nlearner.mixing_beta = 0.9\n",
    "env.kind = random\nenv.states = 6\nlearner.rule = natural\nlearner.gradient = all_actions\nlearner.rollouts = 16\nlearner.episodes = 30\n",
    "env.kind = point_mass\nlearner.rule = ogd\nlearner.rollouts = 16\nlearner.episodes = 20\nlearner.schedule = constant\nlearner.rate = 0.05\n",
    "env.kind = parsing\nenv.sentences = 20\nenv.held_out = 10\nlearner.rule = ogd\nlearner.rollouts = 8\nlearner.episodes = 10\nlearner.schedule = constant\nlearner.rate = 100\nlearner.mixing_alpha0 = 1\nlearner.mixing_beta = 0.9\n",
    "run.algorithm = reinforce\nenv.kind = tree\nenv.depth = 4\nenv.noise = bernoulli\nlearner.rule = ogd\nlearner.gradient = all_actions\nlearner.rollouts = 8\nlearner.episodes = 30\n",
];

fn run_bytes(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<u8>> {
    cli::run_to_dir(cfg, dir)?;
    Ok(std::fs::read(dir.join("curve.csv"))?)
}

fn determinism() -> Result<(bool, String)> {
    let root = tempfile::tempdir()?;
    let mut same = 0;
    for (i, text) in DETERMINISM_CONFIGS.iter().enumerate() {
        let base = config::parse(text)?;
        let mut single = base.clone();
        single.run.threads = 1;
        let mut wide = base.clone();
        wide.run.threads = 4;
        let a = run_bytes(&wide, &root.path().join(format!("{i}-a")))?;
        let b = run_bytes(&wide, &root.path().join(format!("{i}-b")))?;
        let c = run_bytes(&single, &root.path().join(format!("{i}-c")))?;
        let resolved = std::fs::read_to_string(root.path().join(format!("{i}-a")).join("resolved_config.txt"))?;
        let d = run_bytes(&config::parse(&resolved)?, &root.path().join(format!("{i}-d")))?;
        if a == b && a == c && a == d && !a.is_empty() {
            same += 1;
        }
    }
    let ucb = ExperimentConfig {
        algorithm: Algorithm::Ucb,
        ..config::parse("env.kind = tree\nenv.depth = 5\nenv.noise = bernoulli\nlearner.rule = eg\nlearner.episodes = 200\n")?
    };
    let ucb_same = run_bytes(&ucb, &root.path().join("ucb-a"))? == run_bytes(&ucb, &root.path().join("ucb-b"))?;
    let total = DETERMINISM_CONFIGS.len();
    Ok((
        same == total && ucb_same,
        format!(
            "{same}/{total} configurations byte-identical across repeats, 1 vs 4 threads and re-runs from resolved_config.txt; ucb repeat identical: {ucb_same}"
        ),
    ))
}
