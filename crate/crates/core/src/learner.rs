//! Training loops, RL baselines and regret bookkeeping.

use std::ops::Range;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;

use crate::env::bandit::{hard_bandit_means, make_bandit_rows};
use crate::env::parsing::{
    arc_eager_step, gold_action, make_parse_corpus, Featurizer, ParseObs, ParseOracle, ParserState, Sentence,
    NUM_ACTIONS,
};
use crate::env::point_mass::{make_point_mass, ContinuousEnv, PointMassConfig, RiccatiExpert};
use crate::env::random::make_random_tabular;
use crate::env::tree::{gap_leaf_means, make_binary_tree, LeafNoise, TreeSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    exact_gradient_discrete, fisher_factor, reinforce_gradient, sampled_gradient_continuous,
    sampled_gradient_discrete, sampled_gradient_importance, NoiseSource,
};
use crate::mdp::{
    expected_cost, mix_policies, rollout, sample_index, state_distribution, DiscreteTrajectory, FiniteMdp, Step,
    Trajectory,
};
use crate::optimizers::{
    base_policy_losses, cg_solve_low_rank, eg_step_closed_form, eg_weighted_costs, ftl_cost_sensitive,
    natural_step_size, ogd_step, weighted_majority_update, AggregatedDataset, CgSettings,
};
use crate::oracle::{ExpertOracle, OracleMode, ValueMode};
use crate::policy::{BasePolicyMixture, DifferentiablePolicy, Observation, PolicyFamily, SimplexPolicy};
use crate::rng::{substream, tag, Rng};

/// Step-size schedule indexed by the 1-based episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `eta_0 / sqrt(n)`.
    InvSqrt(f64),
}

impl Schedule {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            Schedule::Constant(eta) => eta,
            Schedule::InvSqrt(eta) => eta / (n.max(1) as f64).sqrt(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            Schedule::Constant(eta) | Schedule::InvSqrt(eta) => eta,
        }
    }
}

/// `alpha_n = alpha_0 * beta^(n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixing {
    pub alpha0: f64,
    pub beta: f64,
}

impl Mixing {
    pub const NONE: Mixing = Mixing { alpha0: 0.0, beta: 1.0 };

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha0 * self.beta.powi(n.saturating_sub(1) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Ogd,
    Eg,
    Natural,
    Ftl,
    WeightedMajority,
}

/// Row layout of the tabular EG learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgVariant {
    /// One row per state shared across steps, updated with `Q~_s`.
    State,
    /// One row per `(s, t)` with loss `d_t(s) Q*_t(s) / H`.
    StateTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeMeans {
    Explicit(Vec<f64>),
    /// One best leaf, the rest at least `gap` worse, spread up to `high`.
    Gap { best: f64, gap: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Tree { depth: usize, means: TreeMeans, noise: LeafNoise },
    Random { states: usize, actions: usize, horizon: usize },
    BanditRows { states: usize, actions: usize, gap: f64 },
    PointMass(PointMassConfig),
    Parsing { sentences: usize, held_out: usize, max_len: usize, vocab: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertSpec {
    Optimal,
    /// Tree only: the path policy to the given leaf.
    Leaf(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilySpec {
    Tabular,
    Linear,
    Mlp { hidden: usize },
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSpec {
    /// Exact expectations (finite MDPs with an exact oracle).
    Exact,
    /// Sampled states, all actions.
    AllActions,
    /// Sampled states and actions with importance weights.
    Importance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub family: FamilySpec,
    pub rule: UpdateRule,
    pub eg_variant: EgVariant,
    pub oracle: OracleMode,
    pub gradient: GradientSpec,
    pub advantage: bool,
    pub expert: ExpertSpec,
    pub episodes: usize,
    pub rollouts: usize,
    pub mixing: Mixing,
    pub rate: Schedule,
    pub seed: u64,
    pub cg: CgSettings,
    pub init_log_std: f64,
    /// Worker threads for rollouts; 0 uses the global pool.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::Tree {
                depth: 2,
                means: TreeMeans::Explicit(vec![0.2, 0.8]),
                noise: LeafNoise::Deterministic,
            },
            family: FamilySpec::Tabular,
            rule: UpdateRule::Eg,
            eg_variant: EgVariant::StateTime,
            oracle: OracleMode::Exact,
            gradient: GradientSpec::Exact,
            advantage: false,
            expert: ExpertSpec::Optimal,
            episodes: 20,
            rollouts: 1,
            mixing: Mixing::NONE,
            rate: Schedule::InvSqrt(20.0),
            seed: 0,
            cg: CgSettings::default(),
            init_log_std: 0.0,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.rollouts == 0 {
            return Err(Error::Config("episodes and rollouts must be at least 1".into()));
        }
        let Mixing { alpha0, beta } = self.mixing;
        if !((0.0..=1.0).contains(&alpha0) && (0.0..=1.0).contains(&beta)) {
            return Err(Error::Config("mixing needs alpha0 and beta in [0, 1]".into()));
        }
        if !(self.rate.base() > 0.0 && self.rate.base().is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let OracleMode::MonteCarlo { rollouts: 0 } = self.oracle {
            return Err(Error::Config("monte-carlo oracle needs at least one rollout".into()));
        }
        if self.rule == UpdateRule::Natural {
            self.cg.validate()?;
        }
        let tree = matches!(self.env, EnvSpec::Tree { .. });
        if matches!(self.rule, UpdateRule::Ftl | UpdateRule::WeightedMajority) && !tree {
            return Err(Error::Config("ftl and weighted-majority need a tree environment".into()));
        }
        if matches!(self.expert, ExpertSpec::Leaf(_)) && !tree {
            return Err(Error::Config("a leaf expert needs a tree environment".into()));
        }
        let finite = matches!(self.env, EnvSpec::Tree { .. } | EnvSpec::Random { .. } | EnvSpec::BanditRows { .. });
        if finite && matches!(self.rule, UpdateRule::Ogd | UpdateRule::Natural) && self.family != FamilySpec::Tabular {
            return Err(Error::Config("finite MDPs use the tabular family".into()));
        }
        if self.gradient == GradientSpec::Exact && matches!(self.rule, UpdateRule::Ogd | UpdateRule::Natural) {
            if !finite || self.oracle != OracleMode::Exact {
                return Err(Error::Config("exact gradients need a finite MDP and an exact oracle".into()));
            }
            if self.advantage {
                return Err(Error::Config("advantages only apply to sampled gradients".into()));
            }
        }
        if self.advantage && self.oracle != OracleMode::Exact {
            return Err(Error::Unsupported("advantage estimators need an oracle with exact V*".into()));
        }
        match &self.env {
            EnvSpec::PointMass(_) => {
                if self.family != FamilySpec::Gaussian || !matches!(self.rule, UpdateRule::Ogd | UpdateRule::Natural) {
                    return Err(Error::Config("point mass needs a gaussian policy with ogd or natural updates".into()));
                }
                if self.gradient != GradientSpec::Importance {
                    return Err(Error::Config("continuous actions need importance gradients".into()));
                }
                if self.mixing.alpha0 != 0.0 {
                    return Err(Error::Unsupported("expert mixing is not available for continuous actions".into()));
                }
            }
            EnvSpec::Parsing { sentences, held_out, max_len, .. } => {
                if !matches!(self.family, FamilySpec::Linear | FamilySpec::Mlp { .. })
                    || !matches!(self.rule, UpdateRule::Ogd | UpdateRule::Natural)
                {
                    return Err(Error::Config("parsing needs a linear or mlp policy with ogd or natural updates".into()));
                }
                if *sentences == 0 || *held_out == 0 || *max_len < 2 {
                    return Err(Error::Config("parsing needs train and held-out sentences of length >= 2".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub mu_pi: f64,
    pub mu_star: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretCurve {
    pub records: Vec<EpisodeRecord>,
}

impl RegretCurve {
    pub fn push(&mut self, mu_pi: f64, mu_star: f64, wall_ms: f64) {
        let inst = mu_pi - mu_star;
        let prev = self.records.last().map_or(0.0, |r| r.cum_regret);
        self.records.push(EpisodeRecord {
            episode: self.records.len() + 1,
            mu_pi,
            mu_star,
            inst_regret: inst,
            cum_regret: prev + inst,
            wall_ms,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn final_mu(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.mu_pi)
    }

    pub fn cum_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cum_regret).collect()
    }
}

/// Prefix sums of `mu_pi - mu_star`, recomputed from the raw values.
pub fn cumulative_regret(curve: &RegretCurve) -> Vec<f64> {
    let mut acc = 0.0;
    curve
        .records
        .iter()
        .map(|r| {
            acc += r.mu_pi - r.mu_star;
            acc
        })
        .collect()
}

/// Least-squares slope of `log series[i]` against `log(i + 1)` over `window`.
pub fn slope_fit(series: &[f64], window: Range<usize>) -> Result<f64> {
    if window.start >= window.end || window.end > series.len() {
        return Err(Error::Fit(format!("window {window:?} outside a series of {}", series.len())));
    }
    let xs: Vec<f64> = window.clone().map(|i| (i + 1) as f64).collect();
    loglog_slope(&xs, &series[window])
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Fit("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Fit("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnedPolicy {
    Simplex(SimplexPolicy),
    Parametric(DifferentiablePolicy),
    Mixture(BasePolicyMixture),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub curve: RegretCurve,
    pub best: LearnedPolicy,
    /// Validation cost of `best`: exact `mu` on finite MDPs and the point
    /// mass, `1 - UAS` on held-out sentences for parsing.
    pub best_score: f64,
    pub best_episode: usize,
}

struct Tracker {
    curve: RegretCurve,
    best: Option<(LearnedPolicy, f64, usize)>,
    clock: Instant,
}

impl Tracker {
    fn new() -> Self {
        Self {
            curve: RegretCurve::default(),
            best: None,
            clock: Instant::now(),
        }
    }

    fn record(&mut self, mu: f64, mu_star: f64, policy: impl FnOnce() -> LearnedPolicy) {
        let n = self.curve.len() + 1;
        let wall = self.clock.elapsed().as_secs_f64() * 1e3;
        self.clock = Instant::now();
        self.curve.push(mu, mu_star, wall);
        if self.best.as_ref().is_none_or(|b| mu < b.1) {
            self.best = Some((policy(), mu, n));
        }
    }

    fn finish(self) -> RunOutcome {
        let (best, best_score, best_episode) = self.best.expect("at least one episode");
        RunOutcome {
            curve: self.curve,
            best,
            best_score,
            best_episode,
        }
    }
}

/// One sampled cost-to-go vector at `(t, s)`.
type Visit = (usize, usize, Vec<f64>);

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn rollout_rng(seed: u64, episode: usize, i: usize) -> Rng {
    substream(seed, &[tag::ROLLOUT, episode as u64, i as u64])
}

/// A finite environment with its optimal or configured expert.
pub struct FiniteSetup {
    pub mdp: FiniteMdp,
    pub tree: Option<TreeSpec>,
    pub expert: SimplexPolicy,
}

pub fn build_finite(cfg: &RunConfig) -> Result<FiniteSetup> {
    let mut env_rng = substream(cfg.seed, &[tag::ENV]);
    let (mdp, tree) = match &cfg.env {
        EnvSpec::Tree { depth, means, noise } => {
            let means = match means {
                TreeMeans::Explicit(m) => m.clone(),
                TreeMeans::Gap { best, gap, high } => gap_leaf_means(*depth, *best, *gap, *high, &mut env_rng)?,
            };
            let (mdp, tree) = make_binary_tree(*depth, &means, *noise)?;
            (mdp, Some(tree))
        }
        EnvSpec::Random { states, actions, horizon } => {
            (make_random_tabular(*states, *actions, *horizon, cfg.seed)?, None)
        }
        EnvSpec::BanditRows { states, actions, gap } => {
            let (means, _) = hard_bandit_means(*states, *actions, *gap, &mut env_rng)?;
            (make_bandit_rows(*states, *actions, &means)?, None)
        }
        _ => return Err(Error::Config("not a finite environment".into())),
    };
    let expert = match (cfg.expert, &tree) {
        (ExpertSpec::Optimal, _) => crate::mdp::optimal_q(&mdp).1,
        (ExpertSpec::Leaf(j), Some(t)) => {
            if j >= t.num_leaves() {
                return Err(Error::Config(format!("expert leaf {j} outside {} leaves", t.num_leaves())));
            }
            t.path_policy(j)
        }
        (ExpertSpec::Leaf(_), None) => return Err(Error::Config("a leaf expert needs a tree".into())),
    };
    Ok(FiniteSetup { mdp, tree, expert })
}

/// Runs AggreVaTeD (or the FTL / weighted-majority learners on trees).
pub fn run_aggrevated(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    in_pool(cfg.threads, || match &cfg.env {
        EnvSpec::PointMass(pm) => run_point_mass(cfg, *pm),
        EnvSpec::Parsing { .. } => run_parsing(cfg),
        _ => {
            let setup = build_finite(cfg)?;
            let value_mode = match cfg.expert {
                ExpertSpec::Optimal => ValueMode::MinQ,
                ExpertSpec::Leaf(_) => ValueMode::ExpertAverage,
            };
            let oracle = ExpertOracle::new(&setup.mdp, setup.expert.clone(), cfg.oracle, value_mode)?;
            run_finite(cfg, &setup, &oracle)
        }
    })
}

/// Runs a configured learner against an already-built finite setup.
pub fn run_finite(cfg: &RunConfig, setup: &FiniteSetup, oracle: &ExpertOracle<'_>) -> Result<RunOutcome> {
    cfg.validate()?;
    let mdp = &setup.mdp;
    let mu_star = expected_cost(mdp, &setup.expert)?;
    let mut tracker = Tracker::new();
    match cfg.rule {
        UpdateRule::Eg => {
            let mut pi = SimplexPolicy::uniform(mdp.num_states(), mdp.num_actions(), mdp.horizon());
            for n in 1..=cfg.episodes {
                let mu = expected_cost(mdp, &pi)?;
                tracker.record(mu, mu_star, || LearnedPolicy::Simplex(pi.clone()));
                pi = eg_episode(cfg, mdp, &setup.expert, oracle, pi, n).map_err(|e| e.at_episode(n))?;
            }
        }
        UpdateRule::Ftl => {
            let tree = setup.tree.as_ref().expect("validated tree");
            let mut data = AggregatedDataset::default();
            let mut pi = SimplexPolicy::deterministic(mdp.num_states(), 2, mdp.horizon(), |_, _| 0);
            for n in 1..=cfg.episodes {
                let mu = expected_cost(mdp, &pi)?;
                tracker.record(mu, mu_star, || LearnedPolicy::Simplex(pi.clone()));
                let mut step = || -> Result<SimplexPolicy> {
                    let rollin = mix_policies(&setup.expert, &pi, cfg.mixing.alpha(n))?;
                    let noise = NoiseSource::new(cfg.seed, n as u64);
                    for i in 0..cfg.rollouts {
                        let traj = rollout(mdp, &rollin, &mut rollout_rng(cfg.seed, n, i))?;
                        let mut rng = noise.stream(i);
                        for (t, st) in traj.steps.iter().enumerate() {
                            data.push(st.state, oracle.query_q_vector(t, st.state, &mut rng)?);
                        }
                    }
                    ftl_cost_sensitive(&data, tree)
                };
                pi = step().map_err(|e| e.at_episode(n))?;
            }
        }
        UpdateRule::WeightedMajority => {
            let tree = setup.tree.as_ref().expect("validated tree");
            let means: Vec<f64> = tree.leaf_costs().iter().map(|c| c.mean()).collect();
            let mut mix = BasePolicyMixture::uniform(tree.num_leaves());
            for n in 1..=cfg.episodes {
                let mu: f64 = mix.weights().iter().zip(&means).map(|(w, c)| w * c).sum();
                tracker.record(mu, mu_star, || LearnedPolicy::Mixture(mix.clone()));
                mix = weighted_majority_episode(cfg, mdp, tree, oracle, &mix, n).map_err(|e| e.at_episode(n))?;
            }
        }
        UpdateRule::Ogd | UpdateRule::Natural => {
            let family = PolicyFamily::TabularSoftmax {
                num_states: mdp.num_states(),
                num_actions: mdp.num_actions(),
            };
            let mut policy = DifferentiablePolicy::new(family, cfg.seed);
            for n in 1..=cfg.episodes {
                let mu = expected_cost(mdp, &policy.tabular())?;
                tracker.record(mu, mu_star, || LearnedPolicy::Parametric(policy.clone()));
                let theta = gradient_episode_finite(cfg, mdp, &setup.expert, oracle, &policy, n)
                    .map_err(|e| e.at_episode(n))?;
                policy.set_theta(theta).map_err(|e| e.at_episode(n))?;
            }
        }
    }
    Ok(tracker.finish())
}

fn eg_episode(
    cfg: &RunConfig,
    mdp: &FiniteMdp,
    expert: &SimplexPolicy,
    oracle: &ExpertOracle<'_>,
    mut pi: SimplexPolicy,
    n: usize,
) -> Result<SimplexPolicy> {
    let eta = cfg.rate.at(n);
    let (s_n, a_n, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let alpha = cfg.mixing.alpha(n);
    if cfg.oracle == OracleMode::Exact {
        let dist = {
            let rollin = mix_policies(expert, &pi, alpha)?;
            state_distribution(mdp, &rollin)?
        };
        match cfg.eg_variant {
            EgVariant::State => {
                for (s, q) in eg_weighted_costs(&dist, oracle.table()).into_iter().enumerate() {
                    if let Some(q) = q {
                        let row = eg_step_closed_form(pi.row(0, s), eta, &q)?;
                        pi.set_state_rows(s, &row)?;
                    }
                }
            }
            EgVariant::StateTime => {
                for t in 0..h {
                    for s in 0..s_n {
                        let d = dist.per_time[t][s];
                        if d > 0.0 {
                            let q: Vec<f64> = oracle.table().q_row(t, s).iter().map(|v| v * d / h as f64).collect();
                            let row = eg_step_closed_form(pi.row(t, s), eta, &q)?;
                            pi.set_row(t, s, &row)?;
                        }
                    }
                }
            }
        }
        return Ok(pi);
    }
    // Noisy oracle: per-(t, s) sums of sampled cost-to-go vectors and visit counts.
    let noise = NoiseSource::new(cfg.seed, n as u64);
    let batches: Vec<Result<Vec<Visit>>> = {
        let rollin = mix_policies(expert, &pi, alpha)?;
        (0..cfg.rollouts)
            .into_par_iter()
            .map(|i| {
                let traj = rollout(mdp, &rollin, &mut rollout_rng(cfg.seed, n, i))?;
                let mut rng = noise.stream(i);
                traj.steps
                    .iter()
                    .enumerate()
                    .map(|(t, st)| Ok((t, st.state, oracle.query_q_vector(t, st.state, &mut rng)?)))
                    .collect()
            })
            .collect()
    };
    let mut sums = vec![0.0; h * s_n * a_n];
    let mut counts = vec![0usize; h * s_n];
    for batch in batches {
        for (t, s, q) in batch? {
            counts[t * s_n + s] += 1;
            for (a, v) in q.iter().enumerate() {
                sums[(t * s_n + s) * a_n + a] += v;
            }
        }
    }
    match cfg.eg_variant {
        EgVariant::State => {
            for s in 0..s_n {
                let c: usize = (0..h).map(|t| counts[t * s_n + s]).sum();
                if c == 0 {
                    continue;
                }
                let q: Vec<f64> = (0..a_n)
                    .map(|a| (0..h).map(|t| sums[(t * s_n + s) * a_n + a]).sum::<f64>() / c as f64)
                    .collect();
                let row = eg_step_closed_form(pi.row(0, s), eta, &q)?;
                pi.set_state_rows(s, &row)?;
            }
        }
        EgVariant::StateTime => {
            let scale = 1.0 / (h * cfg.rollouts) as f64;
            for t in 0..h {
                for s in 0..s_n {
                    if counts[t * s_n + s] == 0 {
                        continue;
                    }
                    let base = (t * s_n + s) * a_n;
                    let q: Vec<f64> = sums[base..base + a_n].iter().map(|v| v * scale).collect();
                    let row = eg_step_closed_form(pi.row(t, s), eta, &q)?;
                    pi.set_row(t, s, &row)?;
                }
            }
        }
    }
    Ok(pi)
}

fn weighted_majority_episode(
    cfg: &RunConfig,
    mdp: &FiniteMdp,
    tree: &TreeSpec,
    oracle: &ExpertOracle<'_>,
    mix: &BasePolicyMixture,
    n: usize,
) -> Result<BasePolicyMixture> {
    let noise = NoiseSource::new(cfg.seed, n as u64);
    let losses: Vec<Result<Vec<f64>>> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = rollout_rng(cfg.seed, n, i);
            let leaf = sample_index(mix.weights(), &mut rng);
            let mut s = mdp.sample_initial(&mut rng);
            let mut steps = Vec::with_capacity(mdp.horizon());
            for t in 0..mdp.horizon() {
                let a = tree.base_action(leaf, s);
                let (cost, next) = mdp.step(t, s, a, &mut rng);
                steps.push(Step {
                    state: s,
                    action: a,
                    cost,
                    behavior_prob: 1.0,
                });
                s = next;
            }
            let traj: DiscreteTrajectory = Trajectory { steps };
            base_policy_losses(&traj, oracle, tree, &mut noise.stream(i))
        })
        .collect();
    let mut q = vec![0.0; tree.num_leaves()];
    for l in losses {
        for (qj, v) in q.iter_mut().zip(l?) {
            *qj += v / cfg.rollouts as f64;
        }
    }
    BasePolicyMixture::new(weighted_majority_update(mix.weights(), &q, cfg.rate.at(n))?)
}

fn gradient_episode_finite(
    cfg: &RunConfig,
    mdp: &FiniteMdp,
    expert: &SimplexPolicy,
    oracle: &ExpertOracle<'_>,
    policy: &DifferentiablePolicy,
    n: usize,
) -> Result<Vec<f64>> {
    let view = policy.tabular();
    let rollin = mix_policies(expert, &view, cfg.mixing.alpha(n))?;
    let need_samples = cfg.gradient != GradientSpec::Exact || cfg.rule == UpdateRule::Natural;
    let trajectories: Vec<DiscreteTrajectory> = if need_samples {
        (0..cfg.rollouts)
            .into_par_iter()
            .map(|i| rollout(mdp, &rollin, &mut rollout_rng(cfg.seed, n, i)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let noise = NoiseSource::new(cfg.seed, n as u64);
    let grad = match cfg.gradient {
        GradientSpec::Exact => exact_gradient_discrete(mdp, oracle, policy, &rollin)?,
        GradientSpec::AllActions => sampled_gradient_discrete(&trajectories, oracle, policy, cfg.advantage, noise)?,
        GradientSpec::Importance => sampled_gradient_importance(&trajectories, oracle, policy, cfg.advantage, noise)?,
    };
    descend(cfg, policy, &grad.gradient, &trajectories, n)
}

fn descend<S, A>(
    cfg: &RunConfig,
    policy: &DifferentiablePolicy,
    grad: &[f64],
    trajectories: &[Trajectory<S, A>],
    n: usize,
) -> Result<Vec<f64>>
where
    S: crate::policy::AsObservation + Sync,
    A: crate::policy::AsAction + Sync,
{
    match cfg.rule {
        UpdateRule::Natural => {
            let factor = fisher_factor(trajectories, policy)?;
            let sol = cg_solve_low_rank(&factor, grad, &cfg.cg)?;
            match natural_step_size(cfg.cg.kl, grad, &sol.solution) {
                Ok(eta) => ogd_step(policy.theta(), &sol.solution, eta),
                Err(Error::DegenerateDirection(msg)) => {
                    log::info!("episode {n}: natural step skipped ({msg})");
                    Ok(policy.theta().to_vec())
                }
                Err(e) => Err(e),
            }
        }
        _ => ogd_step(policy.theta(), grad, cfg.rate.at(n)),
    }
}

fn run_point_mass(cfg: &RunConfig, pm: PointMassConfig) -> Result<RunOutcome> {
    let (env, expert) = make_point_mass(pm)?;
    let mu_star = expert.expected_cost(&env);
    let family = PolicyFamily::Gaussian {
        num_features: 2,
        action_dim: 1,
    };
    let mut policy = DifferentiablePolicy::new(family, cfg.seed).with_log_std(cfg.init_log_std);
    let mut tracker = Tracker::new();
    for n in 1..=cfg.episodes {
        let mu = env.exact_expected_cost(&policy)?;
        tracker.record(mu, mu_star, || LearnedPolicy::Parametric(policy.clone()));
        let theta = point_mass_episode(cfg, &env, &expert, &policy, n).map_err(|e| e.at_episode(n))?;
        policy.set_theta(theta).map_err(|e| e.at_episode(n))?;
    }
    Ok(tracker.finish())
}

fn point_mass_episode(
    cfg: &RunConfig,
    env: &ContinuousEnv,
    expert: &RiccatiExpert,
    policy: &DifferentiablePolicy,
    n: usize,
) -> Result<Vec<f64>> {
    let trajectories: Vec<_> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|i| env.rollout(policy, &mut rollout_rng(cfg.seed, n, i)))
        .collect::<Result<_>>()?;
    let noise = NoiseSource::new(cfg.seed, n as u64);
    let grad = sampled_gradient_continuous(&trajectories, expert, policy, cfg.advantage, noise)?;
    descend(cfg, policy, &grad.gradient, &trajectories, n)
}

/// Train and held-out sentences with the featurizer of a parsing run.
pub struct ParseSetup {
    pub train: Vec<Sentence>,
    pub held_out: Vec<Sentence>,
    pub featurizer: Featurizer,
}

pub fn build_parsing(cfg: &RunConfig) -> Result<ParseSetup> {
    let EnvSpec::Parsing { sentences, held_out, max_len, vocab } = cfg.env else {
        return Err(Error::Config("not a parsing environment".into()));
    };
    let mut corpus = make_parse_corpus(sentences + held_out, max_len, vocab, cfg.seed)?;
    let held = corpus.split_off(sentences);
    Ok(ParseSetup {
        train: corpus,
        held_out: held,
        featurizer: Featurizer { vocab },
    })
}

/// Greedy decode of one sentence under the masked policy.
pub fn greedy_parse(policy: &DifferentiablePolicy, sentence: &Sentence, featurizer: &Featurizer) -> Result<Vec<Option<usize>>> {
    let mut state = ParserState::new(sentence.len());
    while !state.is_terminal() {
        let x = featurizer.features(&state, sentence);
        let mask = state.legal_mask();
        let probs = policy.action_probs(&Observation::features(&x).masked(&mask))?;
        let a = (0..NUM_ACTIONS)
            .filter(|&a| mask[a])
            .fold(None, |best: Option<usize>, a| match best {
                Some(b) if probs[b] >= probs[a] => Some(b),
                _ => Some(a),
            })
            .ok_or_else(|| Error::Transition("no legal action in a non-terminal state".into()))?;
        state = arc_eager_step(&state, a)?;
    }
    Ok(state.heads().to_vec())
}

/// Token-level attachment accuracy over sentences, root tokens excluded.
pub fn corpus_uas(policy: &DifferentiablePolicy, sentences: &[Sentence], featurizer: &Featurizer) -> Result<f64> {
    let parsed: Vec<Vec<Option<usize>>> = sentences
        .par_iter()
        .map(|s| greedy_parse(policy, s, featurizer))
        .collect::<Result<_>>()?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, pred) in sentences.iter().zip(&parsed) {
        for (g, p) in s.heads.iter().zip(pred) {
            if g.is_some() {
                total += 1;
                hit += usize::from(g == p);
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}

fn parse_family(cfg: &RunConfig, featurizer: &Featurizer) -> PolicyFamily {
    match cfg.family {
        FamilySpec::Mlp { hidden } => PolicyFamily::MlpSoftmax {
            num_features: featurizer.dim(),
            hidden,
            num_actions: NUM_ACTIONS,
        },
        _ => PolicyFamily::LinearSoftmax {
            num_features: featurizer.dim(),
            num_actions: NUM_ACTIONS,
        },
    }
}

fn run_parsing(cfg: &RunConfig) -> Result<RunOutcome> {
    let setup = build_parsing(cfg)?;
    let oracle = ParseOracle { corpus: &setup.train };
    let mut policy = DifferentiablePolicy::new(parse_family(cfg, &setup.featurizer), cfg.seed);
    let mut tracker = Tracker::new();
    for n in 1..=cfg.episodes {
        let mu = 1.0 - corpus_uas(&policy, &setup.held_out, &setup.featurizer)?;
        tracker.record(mu, 0.0, || LearnedPolicy::Parametric(policy.clone()));
        let step = || -> Result<Vec<f64>> {
            let alpha = cfg.mixing.alpha(n);
            let trajectories: Vec<Trajectory<ParseObs, usize>> = (0..cfg.rollouts)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rollout_rng(cfg.seed, n, i);
                    let id = rng.gen_range(0..setup.train.len());
                    parse_rollout(&policy, &setup.train[id], id, &setup.featurizer, alpha, &mut rng)
                })
                .collect::<Result<_>>()?;
            let noise = NoiseSource::new(cfg.seed, n as u64);
            let grad = match cfg.gradient {
                GradientSpec::Importance => sampled_gradient_importance(&trajectories, &oracle, &policy, false, noise)?,
                _ => sampled_gradient_discrete(&trajectories, &oracle, &policy, false, noise)?,
            };
            descend(cfg, &policy, &grad.gradient, &trajectories, n)
        };
        let theta = step().map_err(|e| e.at_episode(n))?;
        policy.set_theta(theta).map_err(|e| e.at_episode(n))?;
    }
    Ok(tracker.finish())
}

/// Rolls in with the per-step mixture of the static oracle and the learner.
pub fn parse_rollout(
    policy: &DifferentiablePolicy,
    sentence: &Sentence,
    id: usize,
    featurizer: &Featurizer,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Trajectory<ParseObs, usize>> {
    let mut state = ParserState::new(sentence.len());
    let mut steps = Vec::new();
    while !state.is_terminal() {
        let obs = ParseObs::new(id, sentence, state.clone(), featurizer);
        let probs = policy.action_probs(&crate::policy::AsObservation::observation(&obs))?;
        let gold = gold_action(&state, &sentence.heads)
            .ok_or_else(|| Error::Transition("no legal action in a non-terminal state".into()))?;
        let mixed: Vec<f64> = (0..NUM_ACTIONS)
            .map(|a| alpha * f64::from(u8::from(a == gold)) + (1.0 - alpha) * probs[a])
            .collect();
        let a = sample_index(&mixed, rng);
        let next = arc_eager_step(&state, a)?;
        steps.push(Step {
            state: obs,
            action: a,
            cost: 0.0,
            behavior_prob: mixed[a],
        });
        state = next;
    }
    Ok(Trajectory { steps })
}

/// Score-function policy gradient on realized costs, no oracle.
pub fn run_reinforce(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    in_pool(cfg.threads, || match &cfg.env {
        EnvSpec::PointMass(pm) => {
            let (env, expert) = make_point_mass(*pm)?;
            let mu_star = expert.expected_cost(&env);
            let family = PolicyFamily::Gaussian {
                num_features: 2,
                action_dim: 1,
            };
            let mut policy = DifferentiablePolicy::new(family, cfg.seed).with_log_std(cfg.init_log_std);
            let mut tracker = Tracker::new();
            for n in 1..=cfg.episodes {
                let mu = env.exact_expected_cost(&policy)?;
                tracker.record(mu, mu_star, || LearnedPolicy::Parametric(policy.clone()));
                let step = || -> Result<Vec<f64>> {
                    let trajs: Vec<_> = (0..cfg.rollouts)
                        .into_par_iter()
                        .map(|i| env.rollout(&policy, &mut rollout_rng(cfg.seed, n, i)))
                        .collect::<Result<_>>()?;
                    let g = reinforce_gradient(&trajs, &policy, n)?;
                    ogd_step(policy.theta(), &g.gradient, cfg.rate.at(n))
                };
                policy.set_theta(step().map_err(|e| e.at_episode(n))?).map_err(|e| e.at_episode(n))?;
            }
            Ok(tracker.finish())
        }
        EnvSpec::Parsing { .. } => Err(Error::Unsupported("reinforce is not wired for parsing".into())),
        _ => {
            let setup = build_finite(cfg)?;
            let mdp = &setup.mdp;
            let mu_star = expected_cost(mdp, &setup.expert)?;
            let family = PolicyFamily::TabularSoftmax {
                num_states: mdp.num_states(),
                num_actions: mdp.num_actions(),
            };
            let mut policy = DifferentiablePolicy::new(family, cfg.seed);
            let mut tracker = Tracker::new();
            for n in 1..=cfg.episodes {
                let mu = expected_cost(mdp, &policy.tabular())?;
                tracker.record(mu, mu_star, || LearnedPolicy::Parametric(policy.clone()));
                let step = || -> Result<Vec<f64>> {
                    let view = policy.tabular();
                    let trajs: Vec<_> = (0..cfg.rollouts)
                        .into_par_iter()
                        .map(|i| rollout(mdp, &view, &mut rollout_rng(cfg.seed, n, i)))
                        .collect::<Result<_>>()?;
                    let g = reinforce_gradient(&trajs, &policy, n)?;
                    ogd_step(policy.theta(), &g.gradient, cfg.rate.at(n))
                };
                policy.set_theta(step().map_err(|e| e.at_episode(n))?).map_err(|e| e.at_episode(n))?;
            }
            Ok(tracker.finish())
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbOutcome {
    pub curve: RegretCurve,
    pub pulls: Vec<usize>,
}

/// UCB over root-to-leaf trajectories: each leaf is an arm, costs are
/// minimized with the index `mean - sqrt(2 ln n / pulls)`.
pub fn run_tree_bandit_ucb(tree: &TreeSpec, episodes: usize, seed: u64) -> Result<UcbOutcome> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let arms = tree.num_leaves();
    let means: Vec<f64> = tree.leaf_costs().iter().map(|c| c.mean()).collect();
    let mu_star = means[tree.optimal_leaf()];
    let mut rng = substream(seed, &[tag::BANDIT]);
    let mut sums = vec![0.0; arms];
    let mut pulls = vec![0usize; arms];
    let mut curve = RegretCurve::default();
    let mut clock = Instant::now();
    for n in 1..=episodes {
        let arm = match pulls.iter().position(|&p| p == 0) {
            Some(j) => j,
            None => {
                let bonus = 2.0 * (n as f64).ln();
                (0..arms)
                    .map(|j| (j, sums[j] / pulls[j] as f64 - (bonus / pulls[j] as f64).sqrt()))
                    .fold((0, f64::INFINITY), |b, (j, v)| if v < b.1 { (j, v) } else { b })
                    .0
            }
        };
        sums[arm] += tree.leaf_costs()[arm].sample(&mut rng);
        pulls[arm] += 1;
        curve.push(means[arm], mu_star, clock.elapsed().as_secs_f64() * 1e3);
        clock = Instant::now();
    }
    Ok(UcbOutcome { curve, pulls })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let sq: Vec<f64> = (1..=1000).map(|n| (n as f64).sqrt()).collect();
        assert!((slope_fit(&sq, 0..1000).unwrap() - 0.5).abs() < 1e-9);
        let lin: Vec<f64> = (1..=100).map(|n| 3.0 * n as f64).collect();
        assert!((slope_fit(&lin, 10..100).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(slope_fit(&[0.0, 1.0], 0..2), Err(Error::Fit(_))));
    }

    #[test]
    fn regret_prefix_sums() {
        let mut c = RegretCurve::default();
        for _ in 0..10 {
            c.push(0.5, 0.3, 0.0);
        }
        assert!((c.final_regret() - 2.0).abs() < 1e-12);
        assert_eq!(cumulative_regret(&c), c.cum_series());
        let mut flat = RegretCurve::default();
        flat.push(0.2, 0.2, 0.0);
        assert_eq!(flat.final_regret(), 0.0);
    }

    #[test]
    fn mixing_schedule() {
        let m = Mixing { alpha0: 1.0, beta: 0.9 };
        assert_eq!(m.alpha(1), 1.0);
        assert!((m.alpha(3) - 0.81).abs() < 1e-15);
        assert_eq!(Mixing::NONE.alpha(7), 0.0);
    }

    #[test]
    fn depth_two_eg_reaches_expert() {
        let out = run_aggrevated(&RunConfig::default()).unwrap();
        assert!((out.best_score - 0.2).abs() < 1e-3);
    }

    #[test]
    fn full_mixing_rolls_in_with_the_expert() {
        let cfg = RunConfig {
            env: EnvSpec::Random { states: 5, actions: 3, horizon: 4 },
            mixing: Mixing { alpha0: 1.0, beta: 1.0 },
            oracle: OracleMode::MonteCarlo { rollouts: 1 },
            episodes: 3,
            rollouts: 50,
            ..Default::default()
        };
        let setup = build_finite(&cfg).unwrap();
        let expert_d = state_distribution(&setup.mdp, &setup.expert).unwrap();
        let uniform = SimplexPolicy::uniform(5, 3, 4);
        let rollin = mix_policies(&setup.expert, &uniform, 1.0).unwrap();
        assert_eq!(state_distribution(&setup.mdp, &rollin).unwrap(), expert_d);
        run_aggrevated(&cfg).unwrap();
    }

    #[test]
    fn ucb_single_leaf_has_no_regret() {
        let (_, tree) = make_binary_tree(1, &[0.4], LeafNoise::Bernoulli).unwrap();
        assert_eq!(run_tree_bandit_ucb(&tree, 50, 0).unwrap().curve.final_regret(), 0.0);
    }
}
