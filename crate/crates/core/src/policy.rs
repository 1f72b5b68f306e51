//! Policy representations: per-`(s, t)` simplex tables, parametric softmax
//! families, a gaussian family for continuous actions, and mixtures of
//! deterministic tree paths.

use std::borrow::Cow;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use crate::env::tree::TreeSpec;
use crate::error::{ensure_finite, Error, Result};
use crate::mdp::{TabularPolicy, Trajectory};
use crate::rng::{self, Rng};
use crate::tol;

/// Table of action distributions indexed by `(t, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPolicy {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    probs: Vec<f64>,
}

impl SimplexPolicy {
    pub fn uniform(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions * horizon],
        }
    }

    /// Rows drawn uniformly from the simplex.
    pub fn random(num_states: usize, num_actions: usize, horizon: usize, rng: &mut Rng) -> Self {
        let mut probs = Vec::with_capacity(num_states * num_actions * horizon);
        for _ in 0..num_states * horizon {
            let row: Vec<f64> = (0..num_actions).map(|_| Exp1.sample(rng)).collect();
            let z: f64 = row.iter().sum();
            probs.extend(row.iter().map(|x| x / z));
        }
        Self {
            num_states,
            num_actions,
            horizon,
            probs,
        }
    }

    pub fn from_table(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != num_states * num_actions * horizon {
            return Err(Error::Config(format!(
                "simplex table has {} entries, expected {}",
                probs.len(),
                num_states * num_actions * horizon
            )));
        }
        for (i, row) in probs.chunks(num_actions).enumerate() {
            check_row(row).map_err(|e| Error::Config(format!("row {i}: {e}")))?;
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            probs,
        })
    }

    /// Deterministic policy from one action per `(t, s)`.
    pub fn deterministic(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        action: impl Fn(usize, usize) -> usize,
    ) -> Self {
        let mut probs = vec![0.0; num_states * num_actions * horizon];
        for t in 0..horizon {
            for s in 0..num_states {
                probs[(t * num_states + s) * num_actions + action(t, s)] = 1.0;
            }
        }
        Self {
            num_states,
            num_actions,
            horizon,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let i = (t * self.num_states + s) * self.num_actions;
        &self.probs[i..i + self.num_actions]
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[(t * self.num_states + s) * self.num_actions + a]
    }

    /// Replaces one row after validating it.
    pub fn set_row(&mut self, t: usize, s: usize, row: &[f64]) -> Result<()> {
        if row.len() != self.num_actions {
            return Err(Error::Input("row length differs from action count".into()));
        }
        check_row(row)?;
        let i = (t * self.num_states + s) * self.num_actions;
        self.probs[i..i + self.num_actions].copy_from_slice(row);
        Ok(())
    }

    /// Writes `row` for state `s` at every time step.
    pub fn set_state_rows(&mut self, s: usize, row: &[f64]) -> Result<()> {
        for t in 0..self.horizon {
            self.set_row(t, s, row)?;
        }
        Ok(())
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }
}

fn check_row(row: &[f64]) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Input("simplex row has negative or NaN entries".into()));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol::SIMPLEX_ROW * row.len().max(1) as f64 {
        return Err(Error::Input(format!("simplex row sums to {sum}")));
    }
    Ok(())
}

impl TabularPolicy for SimplexPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, t: usize, s: usize) -> Result<Cow<'_, [f64]>> {
        if t >= self.horizon || s >= self.num_states {
            return Err(Error::Range(format!("(t={t}, s={s}) outside policy table")));
        }
        Ok(Cow::Borrowed(self.row(t, s)))
    }
}

/// Parametric policy families. Parameter layouts are row-major:
///
/// * `TabularSoftmax`: `theta[s * A + a]`
/// * `LinearSoftmax`: `W (A x F)`, then `b (A)`
/// * `MlpSoftmax`: `W1 (Hd x F)`, `b1 (Hd)`, `W2 (A x Hd)`, `b2 (A)`
/// * `Gaussian`: `W (D x F)`, `b (D)`, `log_std (D)`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyFamily {
    TabularSoftmax { num_states: usize, num_actions: usize },
    LinearSoftmax { num_features: usize, num_actions: usize },
    MlpSoftmax { num_features: usize, hidden: usize, num_actions: usize },
    Gaussian { num_features: usize, action_dim: usize },
}

impl PolicyFamily {
    pub fn dim(&self) -> usize {
        match *self {
            PolicyFamily::TabularSoftmax { num_states, num_actions } => num_states * num_actions,
            PolicyFamily::LinearSoftmax { num_features, num_actions } => {
                num_actions * (num_features + 1)
            }
            PolicyFamily::MlpSoftmax { num_features, hidden, num_actions } => {
                hidden * (num_features + 1) + num_actions * (hidden + 1)
            }
            PolicyFamily::Gaussian { num_features, action_dim } => action_dim * (num_features + 2),
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, PolicyFamily::Gaussian { .. })
    }

    /// Number of discrete actions, or the action dimension for gaussians.
    pub fn num_outputs(&self) -> usize {
        match *self {
            PolicyFamily::TabularSoftmax { num_actions, .. }
            | PolicyFamily::LinearSoftmax { num_actions, .. }
            | PolicyFamily::MlpSoftmax { num_actions, .. } => num_actions,
            PolicyFamily::Gaussian { action_dim, .. } => action_dim,
        }
    }

    pub fn tag(&self) -> u32 {
        match self {
            PolicyFamily::TabularSoftmax { .. } => 1,
            PolicyFamily::LinearSoftmax { .. } => 2,
            PolicyFamily::MlpSoftmax { .. } => 3,
            PolicyFamily::Gaussian { .. } => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyFamily::TabularSoftmax { .. } => "tabular_softmax",
            PolicyFamily::LinearSoftmax { .. } => "linear_softmax",
            PolicyFamily::MlpSoftmax { .. } => "mlp_softmax",
            PolicyFamily::Gaussian { .. } => "gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// Tabular state id; for feature-based families this is a one-hot input.
    Index(usize),
    Features(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub input: Input<'a>,
    /// Legal-action mask for discrete families; illegal actions get zero
    /// probability and contribute nothing to gradients.
    pub mask: Option<&'a [bool]>,
}

impl<'a> Observation<'a> {
    pub fn index(s: usize) -> Self {
        Self {
            input: Input::Index(s),
            mask: None,
        }
    }

    pub fn features(x: &'a [f64]) -> Self {
        Self {
            input: Input::Features(x),
            mask: None,
        }
    }

    pub fn masked(mut self, mask: &'a [bool]) -> Self {
        self.mask = Some(mask);
        self
    }
}

/// States that can be presented to a parametric policy.
pub trait AsObservation {
    fn observation(&self) -> Observation<'_>;
}

impl AsObservation for usize {
    fn observation(&self) -> Observation<'_> {
        Observation::index(*self)
    }
}

impl AsObservation for Vec<f64> {
    fn observation(&self) -> Observation<'_> {
        Observation::features(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ActionRef<'a> {
    Discrete(usize),
    Continuous(&'a [f64]),
}

pub trait AsAction {
    fn action_ref(&self) -> ActionRef<'_>;
}

impl AsAction for usize {
    fn action_ref(&self) -> ActionRef<'_> {
        ActionRef::Discrete(*self)
    }
}

impl AsAction for Vec<f64> {
    fn action_ref(&self) -> ActionRef<'_> {
        ActionRef::Continuous(self)
    }
}

/// Policy `pi(.|s; theta)` with analytic score functions.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiablePolicy {
    family: PolicyFamily,
    theta: Vec<f64>,
    seed: u64,
}

struct Forward {
    /// Hidden pre-activations (mlp only).
    pre: Vec<f64>,
    /// Logits for softmax families, means for gaussian.
    out: Vec<f64>,
}

impl DifferentiablePolicy {
    /// Initial parameters: zeros for tabular and linear families (uniform
    /// policy), fan-in scaled uniform for the hidden layer of the mlp, zero
    /// mean map and unit standard deviation for the gaussian.
    pub fn new(family: PolicyFamily, seed: u64) -> Self {
        let mut theta = vec![0.0; family.dim()];
        if let PolicyFamily::MlpSoftmax { num_features, hidden, num_actions } = family {
            let mut r = rng::substream(seed, &[rng::tag::INIT]);
            let b1 = 1.0 / (num_features as f64).sqrt();
            for w in &mut theta[..hidden * num_features] {
                *w = r.gen_range(-b1..b1);
            }
            let b2 = 1.0 / (hidden as f64).sqrt();
            let w2 = hidden * (num_features + 1);
            for w in &mut theta[w2..w2 + num_actions * hidden] {
                *w = r.gen_range(-b2..b2);
            }
        }
        Self { family, theta, seed }
    }

    pub fn with_theta(family: PolicyFamily, theta: Vec<f64>, seed: u64) -> Result<Self> {
        if theta.len() != family.dim() {
            return Err(Error::Config(format!(
                "{} expects {} parameters, got {}",
                family.name(),
                family.dim(),
                theta.len()
            )));
        }
        ensure_finite(&theta, "theta")?;
        Ok(Self { family, theta, seed })
    }

    /// Sets every log standard deviation of a gaussian policy.
    pub fn with_log_std(mut self, log_std: f64) -> Self {
        if let PolicyFamily::Gaussian { num_features, action_dim } = self.family {
            let off = action_dim * (num_features + 1);
            for v in &mut self.theta[off..] {
                *v = log_std;
            }
        }
        self
    }

    pub fn family(&self) -> PolicyFamily {
        self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Replaces parameters, rejecting non-finite values.
    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        *self = Self::with_theta(self.family, theta, self.seed)?;
        Ok(())
    }

    fn input_len(&self) -> Option<usize> {
        match self.family {
            PolicyFamily::TabularSoftmax { .. } => None,
            PolicyFamily::LinearSoftmax { num_features, .. }
            | PolicyFamily::MlpSoftmax { num_features, .. }
            | PolicyFamily::Gaussian { num_features, .. } => Some(num_features),
        }
    }

    fn check_obs(&self, obs: &Observation<'_>) -> Result<()> {
        match (self.family, obs.input) {
            (PolicyFamily::TabularSoftmax { num_states, .. }, Input::Index(s)) => {
                if s >= num_states {
                    return Err(Error::Input(format!("state {s} outside {num_states} states")));
                }
            }
            (PolicyFamily::TabularSoftmax { .. }, Input::Features(_)) => {
                return Err(Error::Input("tabular softmax needs a state index".into()));
            }
            (_, Input::Index(i)) => {
                let f = self.input_len().unwrap_or(0);
                if i >= f {
                    return Err(Error::Input(format!("one-hot index {i} outside {f} features")));
                }
            }
            (_, Input::Features(x)) => {
                let f = self.input_len().unwrap_or(0);
                if x.len() != f {
                    return Err(Error::Input(format!("observation has {} features, expected {f}", x.len())));
                }
            }
        }
        if let Some(mask) = obs.mask {
            if !self.family.is_discrete() || mask.len() != self.family.num_outputs() {
                return Err(Error::Input("action mask does not match the policy".into()));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::Input("action mask has no legal action".into()));
            }
        }
        Ok(())
    }

    /// `out[r] = sum_f W[r, f] x_f + b[r]` for a row-major block at `w_off`.
    fn affine(&self, w_off: usize, b_off: usize, rows: usize, cols: usize, input: Input<'_>) -> Vec<f64> {
        let w = &self.theta[w_off..w_off + rows * cols];
        let b = &self.theta[b_off..b_off + rows];
        match input {
            Input::Index(i) => (0..rows).map(|r| w[r * cols + i] + b[r]).collect(),
            Input::Features(x) => (0..rows)
                .map(|r| {
                    let row = &w[r * cols..(r + 1) * cols];
                    row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[r]
                })
                .collect(),
        }
    }

    fn forward(&self, obs: &Observation<'_>) -> Result<Forward> {
        self.check_obs(obs)?;
        let fwd = match self.family {
            PolicyFamily::TabularSoftmax { num_actions, .. } => {
                let Input::Index(s) = obs.input else { unreachable!() };
                Forward {
                    pre: Vec::new(),
                    out: self.theta[s * num_actions..(s + 1) * num_actions].to_vec(),
                }
            }
            PolicyFamily::LinearSoftmax { num_features, num_actions } => Forward {
                pre: Vec::new(),
                out: self.affine(0, num_actions * num_features, num_actions, num_features, obs.input),
            },
            PolicyFamily::MlpSoftmax { num_features, hidden, num_actions } => {
                let pre = self.affine(0, hidden * num_features, hidden, num_features, obs.input);
                let h: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
                let w2 = hidden * (num_features + 1);
                let out = self.affine(w2, w2 + num_actions * hidden, num_actions, hidden, Input::Features(&h));
                Forward { pre, out }
            }
            PolicyFamily::Gaussian { num_features, action_dim } => Forward {
                pre: Vec::new(),
                out: self.affine(0, action_dim * num_features, action_dim, num_features, obs.input),
            },
        };
        ensure_finite(&fwd.out, "policy output")?;
        Ok(fwd)
    }

    /// Accumulates `scale * J^T g_out` into `grad`, where `J` is the Jacobian
    /// of the output head (logits or gaussian means) with respect to theta.
    fn backward(&self, obs: &Observation<'_>, fwd: &Forward, g_out: &[f64], scale: f64, grad: &mut [f64]) {
        let add_outer = |grad: &mut [f64], w_off: usize, b_off: usize, cols: usize, g: &[f64], input: Input<'_>| {
            for (r, &gr) in g.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let gr = gr * scale;
                match input {
                    Input::Index(i) => grad[w_off + r * cols + i] += gr,
                    Input::Features(x) => {
                        for (gw, &xf) in grad[w_off + r * cols..w_off + (r + 1) * cols].iter_mut().zip(x) {
                            *gw += gr * xf;
                        }
                    }
                }
                grad[b_off + r] += gr;
            }
        };
        match self.family {
            PolicyFamily::TabularSoftmax { num_actions, .. } => {
                let Input::Index(s) = obs.input else { unreachable!() };
                for (gt, &g) in grad[s * num_actions..(s + 1) * num_actions].iter_mut().zip(g_out) {
                    *gt += scale * g;
                }
            }
            PolicyFamily::LinearSoftmax { num_features, num_actions } => {
                add_outer(grad, 0, num_actions * num_features, num_features, g_out, obs.input);
            }
            PolicyFamily::Gaussian { num_features, action_dim } => {
                add_outer(grad, 0, action_dim * num_features, num_features, g_out, obs.input);
            }
            PolicyFamily::MlpSoftmax { num_features, hidden, num_actions } => {
                let w2 = hidden * (num_features + 1);
                let h: Vec<f64> = fwd.pre.iter().map(|&z| z.max(0.0)).collect();
                add_outer(grad, w2, w2 + num_actions * hidden, hidden, g_out, Input::Features(&h));
                let w2m = &self.theta[w2..w2 + num_actions * hidden];
                let g_h: Vec<f64> = (0..hidden)
                    .map(|j| {
                        if fwd.pre[j] > 0.0 {
                            (0..num_actions).map(|a| w2m[a * hidden + j] * g_out[a]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                add_outer(grad, 0, hidden * num_features, num_features, &g_h, obs.input);
            }
        }
    }

    fn softmax(&self, logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        let legal = |a: usize| mask.is_none_or(|m| m[a]);
        let max = logits
            .iter()
            .enumerate()
            .filter(|&(a, _)| legal(a))
            .map(|(_, &z)| z)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(a, &z)| if legal(a) { (z - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = p.iter().sum();
        for x in &mut p {
            *x /= z;
        }
        p
    }

    fn require_discrete(&self) -> Result<()> {
        if self.family.is_discrete() {
            Ok(())
        } else {
            Err(Error::Unsupported("operation needs a discrete policy family".into()))
        }
    }

    fn require_gaussian(&self) -> Result<()> {
        if self.family.is_discrete() {
            Err(Error::Unsupported("operation needs a gaussian policy".into()))
        } else {
            Ok(())
        }
    }

    /// Action probabilities of a discrete family.
    pub fn action_probs(&self, obs: &Observation<'_>) -> Result<Vec<f64>> {
        self.require_discrete()?;
        let fwd = self.forward(obs)?;
        Ok(self.softmax(&fwd.out, obs.mask))
    }

    /// Raw logits of a discrete family.
    pub fn logits(&self, obs: &Observation<'_>) -> Result<Vec<f64>> {
        self.require_discrete()?;
        Ok(self.forward(obs)?.out)
    }

    fn std_dev(&self) -> Vec<f64> {
        match self.family {
            PolicyFamily::Gaussian { num_features, action_dim } => {
                let off = action_dim * (num_features + 1);
                self.theta[off..off + action_dim]
                    .iter()
                    .map(|&l| l.exp().max(tol::SIGMA_MIN))
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// `(mean, std)` of a gaussian policy.
    pub fn gaussian_params(&self, obs: &Observation<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.require_gaussian()?;
        let fwd = self.forward(obs)?;
        Ok((fwd.out, self.std_dev()))
    }

    /// Probability (discrete) or density (continuous) of an action.
    pub fn likelihood(&self, obs: &Observation<'_>, action: ActionRef<'_>) -> Result<f64> {
        Ok(self.log_likelihood(obs, action)?.exp())
    }

    pub fn log_likelihood(&self, obs: &Observation<'_>, action: ActionRef<'_>) -> Result<f64> {
        match action {
            ActionRef::Discrete(a) => {
                let p = self.action_probs(obs)?;
                let pa = *p.get(a).ok_or_else(|| Error::Input(format!("action {a} out of range")))?;
                Ok(pa.ln())
            }
            ActionRef::Continuous(u) => {
                let (mean, std) = self.gaussian_params(obs)?;
                if u.len() != mean.len() {
                    return Err(Error::Input("action dimension mismatch".into()));
                }
                Ok(u.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((&u, &m), &s)| {
                        let z = (u - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    })
                    .sum())
            }
        }
    }

    /// Adds `scale * grad log pi(action | obs)` into `grad`.
    pub fn accumulate_log_grad(
        &self,
        obs: &Observation<'_>,
        action: ActionRef<'_>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let fwd = self.forward(obs)?;
        match action {
            ActionRef::Discrete(a) => {
                self.require_discrete()?;
                let p = self.softmax(&fwd.out, obs.mask);
                let pa = *p.get(a).ok_or_else(|| Error::Input(format!("action {a} out of range")))?;
                if !(pa > 0.0) {
                    return Err(Error::Numeric(format!("action {a} has zero probability")));
                }
                let mut g: Vec<f64> = p.iter().map(|&x| -x).collect();
                g[a] += 1.0;
                self.backward(obs, &fwd, &g, scale, grad);
            }
            ActionRef::Continuous(u) => {
                self.require_gaussian()?;
                let PolicyFamily::Gaussian { num_features, action_dim } = self.family else {
                    unreachable!()
                };
                if u.len() != action_dim {
                    return Err(Error::Input("action dimension mismatch".into()));
                }
                let off = action_dim * (num_features + 1);
                let std = self.std_dev();
                let mut g_mean = vec![0.0; action_dim];
                for j in 0..action_dim {
                    let z = (u[j] - fwd.out[j]) / std[j];
                    g_mean[j] = z / std[j];
                    if self.theta[off + j].exp() > tol::SIGMA_MIN {
                        grad[off + j] += scale * (z * z - 1.0);
                    }
                }
                self.backward(obs, &fwd, &g_mean, scale, grad);
            }
        }
        Ok(())
    }

    /// `grad log pi(action | obs)` as a fresh vector.
    pub fn log_policy_gradient(&self, obs: &Observation<'_>, action: ActionRef<'_>) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        self.accumulate_log_grad(obs, action, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale * sum_a grad pi(a | obs) q[a]` into `grad`. Illegal
    /// actions under the mask are ignored.
    pub fn accumulate_prob_weighted_grad(
        &self,
        obs: &Observation<'_>,
        q: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.require_discrete()?;
        if q.len() != self.family.num_outputs() {
            return Err(Error::Input("cost vector length differs from action count".into()));
        }
        let fwd = self.forward(obs)?;
        let p = self.softmax(&fwd.out, obs.mask);
        let mean: f64 = p.iter().zip(q).filter(|(&pa, _)| pa > 0.0).map(|(pa, qa)| pa * qa).sum();
        let g: Vec<f64> = p
            .iter()
            .zip(q)
            .map(|(&pa, &qa)| if pa > 0.0 { pa * (qa - mean) } else { 0.0 })
            .collect();
        self.backward(obs, &fwd, &g, scale, grad);
        Ok(())
    }

    /// Samples an action and returns it with its probability or density.
    pub fn sample_discrete(&self, obs: &Observation<'_>, rng: &mut Rng) -> Result<(usize, f64)> {
        let p = self.action_probs(obs)?;
        let a = crate::mdp::sample_index(&p, rng);
        Ok((a, p[a]))
    }

    pub fn sample_continuous(&self, obs: &Observation<'_>, rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
        let (mean, std) = self.gaussian_params(obs)?;
        let u: Vec<f64> = mean
            .iter()
            .zip(&std)
            .map(|(&m, &s)| m + s * Distribution::<f64>::sample(&rand_distr::StandardNormal, rng))
            .collect::<Vec<f64>>();
        let density = self.likelihood(obs, ActionRef::Continuous(&u))?;
        Ok((u, density))
    }
}

/// Discrete parametric policy viewed as a tabular policy over state ids.
#[derive(Debug, Clone, Copy)]
pub struct TabularView<'a> {
    pub policy: &'a DifferentiablePolicy,
}

impl TabularPolicy for TabularView<'_> {
    fn num_actions(&self) -> usize {
        self.policy.family.num_outputs()
    }

    fn action_probs(&self, _t: usize, s: usize) -> Result<Cow<'_, [f64]>> {
        Ok(Cow::Owned(self.policy.action_probs(&Observation::index(s))?))
    }
}

impl DifferentiablePolicy {
    pub fn tabular(&self) -> TabularView<'_> {
        TabularView { policy: self }
    }
}

/// `sum_t grad log pi(a_t | s_t)` over one trajectory.
pub fn trajectory_log_gradient<S: AsObservation, A: AsAction>(
    policy: &DifferentiablePolicy,
    trajectory: &Trajectory<S, A>,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; policy.dim()];
    for step in &trajectory.steps {
        policy.accumulate_log_grad(&step.state.observation(), step.action.action_ref(), 1.0, &mut g)?;
    }
    Ok(g)
}

/// Weights over the deterministic root-to-leaf policies of a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePolicyMixture {
    weights: Vec<f64>,
}

impl BasePolicyMixture {
    pub fn uniform(num_leaves: usize) -> Self {
        Self {
            weights: vec![1.0 / num_leaves as f64; num_leaves],
        }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_row(&weights).map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// State-level policy equivalent to drawing a base policy at the root.
pub fn mixture_as_simplex(mix: &BasePolicyMixture, tree: &TreeSpec) -> Result<SimplexPolicy> {
    let leaves = tree.num_leaves();
    if mix.weights.len() != leaves {
        return Err(Error::Config(format!(
            "mixture has {} weights for {leaves} leaves",
            mix.weights.len()
        )));
    }
    let s_n = tree.num_states();
    let first_leaf = s_n - leaves;
    let mut mass = vec![0.0; s_n];
    mass[first_leaf..].copy_from_slice(&mix.weights);
    for s in (0..first_leaf).rev() {
        mass[s] = mass[2 * s + 1] + mass[2 * s + 2];
    }
    let mut pi = SimplexPolicy::uniform(s_n, 2, tree.depth());
    for s in 0..first_leaf {
        if mass[s] > 0.0 {
            let left = mass[2 * s + 1] / mass[s];
            pi.set_state_rows(s, &[left, 1.0 - left])?;
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tree::{make_binary_tree, LeafNoise};
    use crate::mdp::expected_cost;
    use crate::rng::{substream, Rng};
    use proptest::prelude::*;

    fn families() -> Vec<PolicyFamily> {
        vec![
            PolicyFamily::TabularSoftmax { num_states: 4, num_actions: 3 },
            PolicyFamily::LinearSoftmax { num_features: 5, num_actions: 3 },
            PolicyFamily::MlpSoftmax { num_features: 5, hidden: 6, num_actions: 3 },
            PolicyFamily::Gaussian { num_features: 5, action_dim: 2 },
        ]
    }

    fn random_policy(family: PolicyFamily, rng: &mut Rng) -> DifferentiablePolicy {
        let theta = (0..family.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DifferentiablePolicy::with_theta(family, theta, 0).unwrap()
    }

    fn log_lik_at(p: &DifferentiablePolicy, theta: &[f64], obs: &Observation<'_>, a: ActionRef<'_>) -> f64 {
        let q = DifferentiablePolicy::with_theta(p.family(), theta.to_vec(), 0).unwrap();
        q.log_likelihood(obs, a).unwrap()
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 3, num_actions: 4 }, 0);
        assert_eq!(p.action_probs(&Observation::index(2)).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn logit_shift_invariance() {
        let fam = PolicyFamily::TabularSoftmax { num_states: 2, num_actions: 3 };
        let mut theta = vec![0.3, -1.2, 0.7, 0.1, 0.2, 0.3];
        let a = DifferentiablePolicy::with_theta(fam, theta.clone(), 0).unwrap();
        for v in &mut theta[3..] {
            *v += 5.0;
        }
        let b = DifferentiablePolicy::with_theta(fam, theta, 0).unwrap();
        let pa = a.action_probs(&Observation::index(1)).unwrap();
        let pb = b.action_probs(&Observation::index(1)).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_matches_reference_forward() {
        let fam = PolicyFamily::MlpSoftmax { num_features: 4, hidden: 5, num_actions: 3 };
        let p = DifferentiablePolicy::new(fam, 3);
        let x = [0.5, -1.0, 2.0, 0.25];
        let th = p.theta();
        // Straight-line re-implementation with explicit offsets.
        let mut h = [0.0; 5];
        for j in 0..5 {
            let mut z = th[20 + j];
            for f in 0..4 {
                z += th[j * 4 + f] * x[f];
            }
            h[j] = if z > 0.0 { z } else { 0.0 };
        }
        let mut logits = [0.0; 3];
        for a in 0..3 {
            let mut z = th[25 + 15 + a];
            for j in 0..5 {
                z += th[25 + a * 5 + j] * h[j];
            }
            logits[a] = z;
        }
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let zs: f64 = e.iter().sum();
        let got = p.action_probs(&Observation::features(&x)).unwrap();
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..3 {
            assert!((got[a] - e[a] / zs).abs() < 1e-15);
        }
    }

    #[test]
    fn tabular_log_gradient_example() {
        let p = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 2, num_actions: 2 }, 0);
        let g = p.log_policy_gradient(&Observation::index(1), ActionRef::Discrete(1)).unwrap();
        assert_eq!(g, vec![0.0, 0.0, -0.5, 0.5]);
    }

    #[test]
    fn gaussian_score_at_mean_is_zero_for_mean_parameters() {
        let fam = PolicyFamily::Gaussian { num_features: 3, action_dim: 1 };
        let p = random_policy(fam, &mut substream(1, &[]));
        let x = [0.3, 0.1, -0.7];
        let obs = Observation::features(&x);
        let (m, _) = p.gaussian_params(&obs).unwrap();
        let g = p.log_policy_gradient(&obs, ActionRef::Continuous(&m)).unwrap();
        assert!(g[..4].iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn log_gradients_match_central_differences() {
        let mut rng = substream(11, &[]);
        for fam in families() {
            for _ in 0..25 {
                let p = random_policy(fam, &mut rng);
                let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let obs = match fam {
                    PolicyFamily::TabularSoftmax { .. } => Observation::index(rng.gen_range(0..4)),
                    _ => Observation::features(&x),
                };
                let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let a = if fam.is_discrete() {
                    ActionRef::Discrete(rng.gen_range(0..3))
                } else {
                    ActionRef::Continuous(&u)
                };
                let g = p.log_policy_gradient(&obs, a).unwrap();
                let h = 1e-5;
                let mut fd = vec![0.0; p.dim()];
                for i in 0..p.dim() {
                    let mut tp = p.theta().to_vec();
                    let mut tm = tp.clone();
                    tp[i] += h;
                    tm[i] -= h;
                    fd[i] = (log_lik_at(&p, &tp, &obs, a) - log_lik_at(&p, &tm, &obs, a)) / (2.0 * h);
                }
                let num: f64 = g.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
                assert!(num / den < 1e-5, "{}: rel err {}", fam.name(), num / den);
            }
        }
    }

    #[test]
    fn score_has_zero_mean_for_discrete_families() {
        let mut rng = substream(5, &[]);
        for fam in families().into_iter().filter(|f| f.is_discrete()) {
            let p = random_policy(fam, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let obs = match fam {
                PolicyFamily::TabularSoftmax { .. } => Observation::index(2),
                _ => Observation::features(&x),
            };
            let probs = p.action_probs(&obs).unwrap();
            let mut total = vec![0.0; p.dim()];
            for (a, &pa) in probs.iter().enumerate() {
                p.accumulate_log_grad(&obs, ActionRef::Discrete(a), pa, &mut total).unwrap();
            }
            assert!(total.iter().all(|v| v.abs() < 1e-10));
            let mut w = vec![0.0; p.dim()];
            p.accumulate_prob_weighted_grad(&obs, &[2.5, 2.5, 2.5], 1.0, &mut w).unwrap();
            assert!(w.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn masked_actions_get_zero_probability() {
        let fam = PolicyFamily::LinearSoftmax { num_features: 2, num_actions: 4 };
        let p = random_policy(fam, &mut substream(2, &[]));
        let x = [1.0, -0.5];
        let mask = [true, false, true, false];
        let obs = Observation::features(&x).masked(&mask);
        let probs = p.action_probs(&obs).unwrap();
        assert_eq!(probs[1], 0.0);
        assert_eq!(probs[3], 0.0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            p.log_policy_gradient(&obs, ActionRef::Discrete(1)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let fam = PolicyFamily::TabularSoftmax { num_states: 1, num_actions: 2 };
        assert!(matches!(
            DifferentiablePolicy::with_theta(fam, vec![f64::NAN, 0.0], 0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn deterministic_region_has_zero_trajectory_gradient() {
        let fam = PolicyFamily::TabularSoftmax { num_states: 2, num_actions: 2 };
        let p = DifferentiablePolicy::with_theta(fam, vec![800.0, 0.0, 0.0, 800.0], 0).unwrap();
        let traj = Trajectory {
            steps: vec![
                crate::mdp::Step { state: 0usize, action: 0usize, cost: 0.0, behavior_prob: 1.0 },
                crate::mdp::Step { state: 1usize, action: 1usize, cost: 0.0, behavior_prob: 1.0 },
            ],
        };
        assert!(trajectory_log_gradient(&p, &traj).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_trajectory_gradient_equals_log_gradient() {
        let fam = PolicyFamily::TabularSoftmax { num_states: 3, num_actions: 2 };
        let p = random_policy(fam, &mut substream(8, &[]));
        let traj = Trajectory {
            steps: vec![crate::mdp::Step { state: 2usize, action: 1usize, cost: 0.0, behavior_prob: 0.5 }],
        };
        assert_eq!(
            trajectory_log_gradient(&p, &traj).unwrap(),
            p.log_policy_gradient(&Observation::index(2), ActionRef::Discrete(1)).unwrap()
        );
    }

    #[test]
    fn mixture_conversions() {
        let (mdp2, tree2) = make_binary_tree(2, &[0.2, 0.8], LeafNoise::Deterministic).unwrap();
        let pi = mixture_as_simplex(&BasePolicyMixture::uniform(2), &tree2).unwrap();
        assert_eq!(pi.row(0, 0), &[0.5, 0.5]);
        let point = BasePolicyMixture::new(vec![0.0, 1.0]).unwrap();
        let pi = mixture_as_simplex(&point, &tree2).unwrap();
        assert_eq!(pi.row(0, 0), &[0.0, 1.0]);
        assert!((expected_cost(&mdp2, &pi).unwrap() - 0.8).abs() < 1e-15);

        let means = [0.1, 0.9, 0.4, 0.3];
        let (mdp3, tree3) = make_binary_tree(3, &means, LeafNoise::Bernoulli).unwrap();
        let mut r = substream(4, &[]);
        let w: Vec<f64> = (0..4).map(|_| r.gen::<f64>()).collect();
        let z: f64 = w.iter().sum();
        let mix = BasePolicyMixture::new(w.iter().map(|x| x / z).collect()).unwrap();
        let mu = expected_cost(&mdp3, &mixture_as_simplex(&mix, &tree3).unwrap()).unwrap();
        let want: f64 = mix.weights().iter().zip(&means).map(|(w, m)| w * m).sum();
        assert!((mu - want).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn softmax_outputs_are_distributions(theta in proptest::collection::vec(-30.0f64..30.0, 6)) {
            let fam = PolicyFamily::TabularSoftmax { num_states: 2, num_actions: 3 };
            let p = DifferentiablePolicy::with_theta(fam, theta, 0).unwrap();
            for s in 0..2 {
                let probs = p.action_probs(&Observation::index(s)).unwrap();
                prop_assert!(probs.iter().all(|&x| x >= 0.0));
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
