//! Experiment files: flat `section.key = value` lines with `#` comments.
//!
//! ```text
//! # depth-2 tree, exact oracle
//! env.kind = tree
//! env.depth = 2
//! env.means = 0.2, 0.8
//! learner.rule = eg
//! learner.episodes = 20
//! ```
//!
//! Only `env.kind` and `learner.rule` are required; everything else has a
//! default. Keys that do not apply to the chosen environment or learner are
//! rejected, as are unknown and repeated keys. [`render`] writes every
//! resolved value back out so that a run can be reproduced from its
//! `resolved_config.txt` alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::env::point_mass::PointMassConfig;
use crate::env::tree::LeafNoise;
use crate::error::{Error, Result};
use crate::learner::{
    EgVariant, EnvSpec, ExpertSpec, FamilySpec, GradientSpec, Mixing, RunConfig, Schedule, TreeMeans, UpdateRule,
};
use crate::oracle::OracleMode;

/// Which driver consumes the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Aggrevated,
    Reinforce,
    /// UCB over root-to-leaf trajectories; tree environments only.
    Ucb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub run: RunConfig,
    /// Record per-episode wall-clock milliseconds instead of zeros.
    pub wall_clock: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithm == Algorithm::Ucb && !matches!(self.run.env, EnvSpec::Tree { .. }) {
            return Err(Error::Config("ucb needs a tree environment".into()));
        }
        self.run.validate()
    }
}

const KNOWN: &[&str] = &[
    "run.algorithm",
    "run.seed",
    "run.threads",
    "env.kind",
    "env.depth",
    "env.means",
    "env.best",
    "env.gap",
    "env.high",
    "env.noise",
    "env.half_width",
    "env.states",
    "env.actions",
    "env.horizon",
    "env.dt",
    "env.q_pos",
    "env.q_vel",
    "env.r",
    "env.init_mean",
    "env.init_std",
    "env.sentences",
    "env.held_out",
    "env.max_len",
    "env.vocab",
    "policy.family",
    "policy.hidden",
    "policy.init_log_std",
    "learner.rule",
    "learner.eg_variant",
    "learner.gradient",
    "learner.advantage",
    "learner.episodes",
    "learner.rollouts",
    "learner.schedule",
    "learner.rate",
    "learner.mixing_alpha0",
    "learner.mixing_beta",
    "natural.max_iters",
    "natural.tol",
    "natural.damping",
    "natural.kl",
    "oracle.mode",
    "oracle.rollouts",
    "expert.kind",
    "expert.leaf",
    "output.wall_clock",
];

/// Raw `key -> (line, value)` entries with consumption tracking.
struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `section.key = value`, found {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN.contains(&key) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("`{key}` has no value"),
                });
            }
            if let Some((first, _)) = map.insert(key.to_string(), (line, value.to_string())) {
                return Err(Error::Parse {
                    line,
                    message: format!("`{key}` repeats line {first}"),
                });
            }
        }
        Ok(Self { map })
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("cannot read `{key}` from {v:?}"),
            }),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.take_raw(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((line, v)) = self.take_raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| Error::Parse {
                line,
                message: format!("cannot read `{key}` as a comma-separated list of numbers"),
            })
    }

    fn pair(&mut self, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
        let line = self.map.get(key).map_or(0, |e| e.0);
        match self.list(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
            Some(_) => Err(Error::Parse {
                line,
                message: format!("`{key}` needs exactly two numbers"),
            }),
        }
    }

    /// Fails on the first entry nobody consumed.
    fn finish(self, context: &str) -> Result<()> {
        match self.map.iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(Error::Parse {
                line: *line,
                message: format!("`{key}` does not apply to {context}"),
            }),
            None => Ok(()),
        }
    }
}

fn choice<T: Copy>(key: &str, (line, value): (usize, String), options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::Parse {
                line,
                message: format!("`{key}` must be one of {}, found {value:?}", names.join(", ")),
            }
        })
}

fn choice_or<T: Copy>(e: &mut Entries, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
    match e.take_raw(key) {
        None => Ok(default),
        Some(entry) => choice(key, entry, options),
    }
}

const RULES: &[(&str, UpdateRule)] = &[
    ("ogd", UpdateRule::Ogd),
    ("eg", UpdateRule::Eg),
    ("natural", UpdateRule::Natural),
    ("ftl", UpdateRule::Ftl),
    ("weighted_majority", UpdateRule::WeightedMajority),
];

#[derive(Clone, Copy)]
enum EnvKind {
    Tree,
    Random,
    BanditRows,
    PointMass,
    Parsing,
}

const ENV_KINDS: &[(&str, EnvKind)] = &[
    ("tree", EnvKind::Tree),
    ("random", EnvKind::Random),
    ("bandit_rows", EnvKind::BanditRows),
    ("point_mass", EnvKind::PointMass),
    ("parsing", EnvKind::Parsing),
];

#[derive(Clone, Copy)]
enum NoiseKind {
    Deterministic,
    Bernoulli,
    Uniform,
}

#[derive(Clone, Copy)]
enum FamilyKind {
    Tabular,
    Linear,
    Mlp,
    Gaussian,
}

#[derive(Clone, Copy)]
enum OracleKind {
    Exact,
    MonteCarlo,
    LeafSample,
}

#[derive(Clone, Copy)]
enum ScheduleKind {
    Constant,
    InvSqrt,
}

fn parse_env(e: &mut Entries) -> Result<(EnvSpec, &'static str)> {
    let kind_entry = e.required("env.kind")?;
    let kind = choice("env.kind", kind_entry, ENV_KINDS)?;
    Ok(match kind {
        EnvKind::Tree => {
            let depth = e.or("env.depth", 2usize)?;
            let means = match e.list("env.means")? {
                Some(v) => TreeMeans::Explicit(v),
                None => TreeMeans::Gap {
                    best: e.or("env.best", 0.2)?,
                    gap: e.or("env.gap", 0.3)?,
                    high: e.or("env.high", 0.9)?,
                },
            };
            let noise = match choice_or(
                e,
                "env.noise",
                NoiseKind::Deterministic,
                &[
                    ("deterministic", NoiseKind::Deterministic),
                    ("bernoulli", NoiseKind::Bernoulli),
                    ("uniform", NoiseKind::Uniform),
                ],
            )? {
                NoiseKind::Deterministic => LeafNoise::Deterministic,
                NoiseKind::Bernoulli => LeafNoise::Bernoulli,
                NoiseKind::Uniform => LeafNoise::Uniform {
                    half_width: e.or("env.half_width", 0.1)?,
                },
            };
            (EnvSpec::Tree { depth, means, noise }, "env.kind = tree")
        }
        EnvKind::Random => (
            EnvSpec::Random {
                states: e.or("env.states", 8usize)?,
                actions: e.or("env.actions", 4usize)?,
                horizon: e.or("env.horizon", 5usize)?,
            },
            "env.kind = random",
        ),
        EnvKind::BanditRows => (
            EnvSpec::BanditRows {
                states: e.or("env.states", 16usize)?,
                actions: e.or("env.actions", 4usize)?,
                gap: e.or("env.gap", 0.2)?,
            },
            "env.kind = bandit_rows",
        ),
        EnvKind::PointMass => {
            let d = PointMassConfig::default();
            (
                EnvSpec::PointMass(PointMassConfig {
                    horizon: e.or("env.horizon", d.horizon)?,
                    dt: e.or("env.dt", d.dt)?,
                    q_pos: e.or("env.q_pos", d.q_pos)?,
                    q_vel: e.or("env.q_vel", d.q_vel)?,
                    r: e.or("env.r", d.r)?,
                    init_mean: e.pair("env.init_mean", d.init_mean)?,
                    init_std: e.pair("env.init_std", d.init_std)?,
                }),
                "env.kind = point_mass",
            )
        }
        EnvKind::Parsing => (
            EnvSpec::Parsing {
                sentences: e.or("env.sentences", 200usize)?,
                held_out: e.or("env.held_out", 50usize)?,
                max_len: e.or("env.max_len", 12usize)?,
                vocab: e.or("env.vocab", 40usize)?,
            },
            "env.kind = parsing",
        ),
    })
}

fn default_family(env: &EnvSpec) -> FamilyKind {
    match env {
        EnvSpec::PointMass(_) => FamilyKind::Gaussian,
        EnvSpec::Parsing { .. } => FamilyKind::Linear,
        _ => FamilyKind::Tabular,
    }
}

fn default_gradient(env: &EnvSpec, oracle: OracleMode) -> GradientSpec {
    match env {
        EnvSpec::PointMass(_) => GradientSpec::Importance,
        EnvSpec::Parsing { .. } => GradientSpec::AllActions,
        _ if oracle == OracleMode::Exact => GradientSpec::Exact,
        _ => GradientSpec::AllActions,
    }
}

/// Parses an experiment file.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let mut e = Entries::parse(text)?;
    let d = RunConfig::default();
    let algorithm = choice_or(
        &mut e,
        "run.algorithm",
        Algorithm::Aggrevated,
        &[
            ("aggrevated", Algorithm::Aggrevated),
            ("reinforce", Algorithm::Reinforce),
            ("ucb", Algorithm::Ucb),
        ],
    )?;
    let seed = e.or("run.seed", d.seed)?;
    let threads = e.or("run.threads", d.threads)?;
    let (env, context) = parse_env(&mut e)?;

    let rule_entry = e.required("learner.rule")?;
    let rule = choice("learner.rule", rule_entry, RULES)?;
    let family = match choice_or(
        &mut e,
        "policy.family",
        default_family(&env),
        &[
            ("tabular", FamilyKind::Tabular),
            ("linear", FamilyKind::Linear),
            ("mlp", FamilyKind::Mlp),
            ("gaussian", FamilyKind::Gaussian),
        ],
    )? {
        FamilyKind::Tabular => FamilySpec::Tabular,
        FamilyKind::Linear => FamilySpec::Linear,
        FamilyKind::Mlp => FamilySpec::Mlp {
            hidden: e.or("policy.hidden", 16usize)?,
        },
        FamilyKind::Gaussian => FamilySpec::Gaussian,
    };
    let init_log_std = if family == FamilySpec::Gaussian {
        e.or("policy.init_log_std", d.init_log_std)?
    } else {
        d.init_log_std
    };

    let oracle = match choice_or(
        &mut e,
        "oracle.mode",
        OracleKind::Exact,
        &[
            ("exact", OracleKind::Exact),
            ("monte_carlo", OracleKind::MonteCarlo),
            ("leaf_sample", OracleKind::LeafSample),
        ],
    )? {
        OracleKind::Exact => OracleMode::Exact,
        OracleKind::MonteCarlo => OracleMode::MonteCarlo {
            rollouts: e.or("oracle.rollouts", 1usize)?,
        },
        OracleKind::LeafSample => OracleMode::LeafSample,
    };
    let expert = match choice_or(&mut e, "expert.kind", false, &[("optimal", false), ("leaf", true)])? {
        false => ExpertSpec::Optimal,
        true => ExpertSpec::Leaf(e.or("expert.leaf", 0usize)?),
    };

    let eg_variant = if rule == UpdateRule::Eg {
        choice_or(
            &mut e,
            "learner.eg_variant",
            d.eg_variant,
            &[("state", EgVariant::State), ("state_time", EgVariant::StateTime)],
        )?
    } else {
        d.eg_variant
    };
    let parametric = matches!(rule, UpdateRule::Ogd | UpdateRule::Natural) || algorithm == Algorithm::Reinforce;
    let gradient = if parametric {
        choice_or(
            &mut e,
            "learner.gradient",
            default_gradient(&env, oracle),
            &[
                ("exact", GradientSpec::Exact),
                ("all_actions", GradientSpec::AllActions),
                ("importance", GradientSpec::Importance),
            ],
        )?
    } else {
        d.gradient
    };
    let advantage = e.or("learner.advantage", false)?;
    let episodes = e.or("learner.episodes", d.episodes)?;
    let rollouts = e.or("learner.rollouts", d.rollouts)?;
    let schedule = choice_or(
        &mut e,
        "learner.schedule",
        ScheduleKind::InvSqrt,
        &[("constant", ScheduleKind::Constant), ("inv_sqrt", ScheduleKind::InvSqrt)],
    )?;
    let eta: f64 = e.or("learner.rate", 20.0)?;
    let rate = match schedule {
        ScheduleKind::Constant => Schedule::Constant(eta),
        ScheduleKind::InvSqrt => Schedule::InvSqrt(eta),
    };
    let mixing = Mixing {
        alpha0: e.or("learner.mixing_alpha0", 0.0)?,
        beta: e.or("learner.mixing_beta", 1.0)?,
    };
    let mut cg = d.cg;
    if rule == UpdateRule::Natural {
        cg.max_iters = e.or("natural.max_iters", cg.max_iters)?;
        cg.tol = e.or("natural.tol", cg.tol)?;
        cg.damping = e.or("natural.damping", cg.damping)?;
        cg.kl = e.or("natural.kl", cg.kl)?;
    }
    let wall_clock = e.or("output.wall_clock", false)?;
    e.finish(&format!("this configuration ({context}, learner.rule = {})", rule_name(rule)))?;

    let cfg = ExperimentConfig {
        algorithm,
        run: RunConfig {
            env,
            family,
            rule,
            eg_variant,
            oracle,
            gradient,
            advantage,
            expert,
            episodes,
            rollouts,
            mixing,
            rate,
            seed,
            cg,
            init_log_std,
            threads,
        },
        wall_clock,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn rule_name(rule: UpdateRule) -> &'static str {
    RULES.iter().find(|(_, r)| *r == rule).map_or("?", |(n, _)| n)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Every resolved key, one per line, in a fixed order.
pub fn render(cfg: &ExperimentConfig) -> String {
    let r = &cfg.run;
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put(
        "run.algorithm",
        match cfg.algorithm {
            Algorithm::Aggrevated => "aggrevated",
            Algorithm::Reinforce => "reinforce",
            Algorithm::Ucb => "ucb",
        }
        .into(),
    );
    put("run.seed", r.seed.to_string());
    put("run.threads", r.threads.to_string());
    match &r.env {
        EnvSpec::Tree { depth, means, noise } => {
            put("env.kind", "tree".into());
            put("env.depth", depth.to_string());
            match means {
                TreeMeans::Explicit(v) => put("env.means", join(v)),
                TreeMeans::Gap { best, gap, high } => {
                    put("env.best", best.to_string());
                    put("env.gap", gap.to_string());
                    put("env.high", high.to_string());
                }
            }
            match noise {
                LeafNoise::Deterministic => put("env.noise", "deterministic".into()),
                LeafNoise::Bernoulli => put("env.noise", "bernoulli".into()),
                LeafNoise::Uniform { half_width } => {
                    put("env.noise", "uniform".into());
                    put("env.half_width", half_width.to_string());
                }
            }
        }
        EnvSpec::Random { states, actions, horizon } => {
            put("env.kind", "random".into());
            put("env.states", states.to_string());
            put("env.actions", actions.to_string());
            put("env.horizon", horizon.to_string());
        }
        EnvSpec::BanditRows { states, actions, gap } => {
            put("env.kind", "bandit_rows".into());
            put("env.states", states.to_string());
            put("env.actions", actions.to_string());
            put("env.gap", gap.to_string());
        }
        EnvSpec::PointMass(pm) => {
            put("env.kind", "point_mass".into());
            put("env.horizon", pm.horizon.to_string());
            put("env.dt", pm.dt.to_string());
            put("env.q_pos", pm.q_pos.to_string());
            put("env.q_vel", pm.q_vel.to_string());
            put("env.r", pm.r.to_string());
            put("env.init_mean", join(&pm.init_mean));
            put("env.init_std", join(&pm.init_std));
        }
        EnvSpec::Parsing { sentences, held_out, max_len, vocab } => {
            put("env.kind", "parsing".into());
            put("env.sentences", sentences.to_string());
            put("env.held_out", held_out.to_string());
            put("env.max_len", max_len.to_string());
            put("env.vocab", vocab.to_string());
        }
    }
    match r.family {
        FamilySpec::Tabular => put("policy.family", "tabular".into()),
        FamilySpec::Linear => put("policy.family", "linear".into()),
        FamilySpec::Mlp { hidden } => {
            put("policy.family", "mlp".into());
            put("policy.hidden", hidden.to_string());
        }
        FamilySpec::Gaussian => {
            put("policy.family", "gaussian".into());
            put("policy.init_log_std", r.init_log_std.to_string());
        }
    }
    put("learner.rule", rule_name(r.rule).into());
    if r.rule == UpdateRule::Eg {
        let v = match r.eg_variant {
            EgVariant::State => "state",
            EgVariant::StateTime => "state_time",
        };
        put("learner.eg_variant", v.into());
    }
    if matches!(r.rule, UpdateRule::Ogd | UpdateRule::Natural) || cfg.algorithm == Algorithm::Reinforce {
        let g = match r.gradient {
            GradientSpec::Exact => "exact",
            GradientSpec::AllActions => "all_actions",
            GradientSpec::Importance => "importance",
        };
        put("learner.gradient", g.into());
    }
    put("learner.advantage", r.advantage.to_string());
    put("learner.episodes", r.episodes.to_string());
    put("learner.rollouts", r.rollouts.to_string());
    let (schedule, eta) = match r.rate {
        Schedule::Constant(eta) => ("constant", eta),
        Schedule::InvSqrt(eta) => ("inv_sqrt", eta),
    };
    put("learner.schedule", schedule.into());
    put("learner.rate", eta.to_string());
    put("learner.mixing_alpha0", r.mixing.alpha0.to_string());
    put("learner.mixing_beta", r.mixing.beta.to_string());
    if r.rule == UpdateRule::Natural {
        put("natural.max_iters", r.cg.max_iters.to_string());
        put("natural.tol", r.cg.tol.to_string());
        put("natural.damping", r.cg.damping.to_string());
        put("natural.kl", r.cg.kl.to_string());
    }
    match r.oracle {
        OracleMode::Exact => put("oracle.mode", "exact".into()),
        OracleMode::MonteCarlo { rollouts } => {
            put("oracle.mode", "monte_carlo".into());
            put("oracle.rollouts", rollouts.to_string());
        }
        OracleMode::LeafSample => put("oracle.mode", "leaf_sample".into()),
    }
    match r.expert {
        ExpertSpec::Optimal => put("expert.kind", "optimal".into()),
        ExpertSpec::Leaf(j) => {
            put("expert.kind", "leaf".into());
            put("expert.leaf", j.to_string());
        }
    }
    put("output.wall_clock", cfg.wall_clock.to_string());
    out
}

/// Replaces (or appends) `key = value` in experiment text; used by sweeps.
pub fn with_override(text: &str, key: &str, value: &str) -> String {
    let mut out = String::new();
    let mut found = false;
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("");
        let is_key = content.split_once('=').is_some_and(|(k, _)| k.trim() == key);
        if is_key {
            if !found {
                let _ = writeln!(out, "{key} = {value}");
            }
            found = true;
        } else {
            let _ = writeln!(out, "{line}");
        }
    }
    if !found {
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TREE: &str = "# depth-2 tree\nenv.kind = tree\nenv.means = 0.2, 0.8\nlearner.rule = eg\n";

    #[test]
    fn minimal_tree_matches_defaults() {
        let cfg = parse(TREE).unwrap();
        assert_eq!(cfg.run, RunConfig::default());
        assert_eq!(cfg.algorithm, Algorithm::Aggrevated);
        assert!(!cfg.wall_clock);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = parse("env.kind = tree\nlearner.rule = eg\nlearner.speed = 3\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("learner.speed"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn misplaced_and_repeated_keys() {
        let e = parse("env.kind = tree\nenv.states = 4\nlearner.rule = eg\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse("env.kind = tree\nlearner.rule = eg\nrun.seed = 1\nrun.seed = 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
        let e = parse("env.kind = tree\nlearner.rule = eg\nlearner.rate = 0,5\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(matches!(parse("env.kind = tree\n").unwrap_err(), Error::Config(_)));
        assert!(matches!(parse("env.kind = forest\nlearner.rule = eg").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn render_round_trips() {
        let texts = [
            TREE.to_string(),
            "env.kind = tree\nenv.depth = 6\nenv.noise = uniform\nenv.half_width = 0.05\nlearner.rule = weighted_majority\noracle.mode = leaf_sample\nlearner.schedule = constant\nlearner.rate = 0.1\n".into(),
            "env.kind = random\nenv.states = 5\nlearner.rule = natural\nnatural.kl = 0.02\noracle.mode = exact\nrun.seed = 7\n".into(),
            "env.kind = point_mass\nenv.init_mean = 0.5, -0.25\nlearner.rule = ogd\nlearner.rollouts = 8\npolicy.init_log_std = -1\n".into(),
            "env.kind = parsing\nenv.sentences = 20\nlearner.rule = ogd\npolicy.family = mlp\npolicy.hidden = 8\nlearner.mixing_alpha0 = 1\nlearner.mixing_beta = 0.9\n".into(),
            "run.algorithm = ucb\nenv.kind = tree\nenv.depth = 4\nenv.noise = bernoulli\nlearner.rule = eg\nexpert.kind = leaf\nexpert.leaf = 3\noutput.wall_clock = true\n".into(),
            "env.kind = tree\nlearner.rule = eg\noracle.mode = monte_carlo\noracle.rollouts = 1\nlearner.rate = 0.30000000000000004\n".into(),
        ];
        for t in texts {
            let cfg = parse(&t).unwrap();
            let text = render(&cfg);
            assert_eq!(parse(&text).unwrap(), cfg, "{text}");
            assert_eq!(render(&parse(&text).unwrap()), text);
        }
    }

    #[test]
    fn override_replaces_or_appends() {
        let t = with_override(TREE, "env.depth", "4");
        assert_eq!(parse(&t).unwrap().run.env, EnvSpec::Tree {
            depth: 4,
            means: TreeMeans::Explicit(vec![0.2, 0.8]),
            noise: LeafNoise::Deterministic
        });
        let t = with_override(&t, "env.depth", "3");
        assert_eq!(t.matches("env.depth").count(), 1);
    }
}
