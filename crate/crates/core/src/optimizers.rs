//! Update rules: online gradient descent, exponentiated gradient, natural
//! gradient via conjugate gradient on a low-rank Fisher factor, and the
//! follow-the-leader / weighted-majority learners used on trees.

use crate::env::tree::{TreeSpec, LEFT, RIGHT};
use crate::error::{ensure_finite, Error, Result};
use crate::estimators::FisherFactor;
use crate::mdp::{DiscreteTrajectory, QTable, StateDistribution};
use crate::oracle::ExpertOracle;
use crate::policy::{BasePolicyMixture, SimplexPolicy};
use crate::rng::Rng;
use crate::tol;

/// `theta - eta * gradient`.
pub fn ogd_step(theta: &[f64], gradient: &[f64], eta: f64) -> Result<Vec<f64>> {
    if theta.len() != gradient.len() {
        return Err(Error::Input("parameter and gradient lengths differ".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Numeric(format!("step size {eta} must be positive and finite")));
    }
    ensure_finite(theta, "theta")?;
    ensure_finite(gradient, "gradient")?;
    let next: Vec<f64> = theta.iter().zip(gradient).map(|(t, g)| t - eta * g).collect();
    ensure_finite(&next, "updated theta")?;
    Ok(next)
}

/// Per-state simplex rows with their current step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct EgState {
    pub policy: SimplexPolicy,
    pub rates: Vec<f64>,
}

/// `Q~_s = sum_t d_t(s) Q*_t(s) / (H dbar(s))`; `None` for unvisited states.
pub fn eg_weighted_costs(dist: &StateDistribution, q_star: &QTable) -> Vec<Option<Vec<f64>>> {
    let h = dist.horizon();
    let a_n = q_star.num_actions();
    (0..dist.average.len())
        .map(|s| {
            let dbar = dist.average[s];
            if dbar <= 0.0 {
                return None;
            }
            let mut out = vec![0.0; a_n];
            for t in 0..h {
                let w = dist.per_time[t][s];
                if w == 0.0 {
                    continue;
                }
                for (o, q) in out.iter_mut().zip(q_star.q_row(t, s)) {
                    *o += w * q;
                }
            }
            for o in &mut out {
                *o /= h as f64 * dbar;
            }
            Some(out)
        })
        .collect()
}

/// `pi'[i] = pi[i] exp(-eta q[i]) / Z`, with the max exponent subtracted.
/// Zero entries stay zero.
pub fn eg_step_closed_form(row: &[f64], eta: f64, q: &[f64]) -> Result<Vec<f64>> {
    check_eg_inputs(row, eta, q)?;
    let expo: Vec<f64> = row
        .iter()
        .zip(q)
        .map(|(&p, &c)| if p > 0.0 { p.ln() - eta * c } else { f64::NEG_INFINITY })
        .collect();
    let max = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = expo.iter().map(|&e| (e - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

fn check_eg_inputs(row: &[f64], eta: f64, q: &[f64]) -> Result<()> {
    if row.len() != q.len() {
        return Err(Error::Input("row and cost vector lengths differ".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Input(format!("step size {eta} must be nonnegative")));
    }
    ensure_finite(q, "cost vector")?;
    if row.iter().any(|&p| !(p >= 0.0)) || !row.iter().any(|&p| p > 0.0) {
        return Err(Error::Input("row must be nonnegative with positive mass".into()));
    }
    Ok(())
}

/// Minimizes `x.q + (1/eta) KL(x || row)` over the simplex by damped
/// Newton iterations on the support of `row`, independent of the closed
/// form. Stops when the stationarity residual of the `eta`-scaled objective
/// drops below `1e-10`.
pub fn eg_step_argmin_oracle(row: &[f64], eta: f64, q: &[f64]) -> Result<Vec<f64>> {
    check_eg_inputs(row, eta, q)?;
    let support: Vec<usize> = (0..row.len()).filter(|&i| row[i] > 0.0).collect();
    let z: f64 = support.iter().map(|&i| row[i]).sum();
    let prior: Vec<f64> = support.iter().map(|&i| row[i] / z).collect();
    if eta == 0.0 {
        let mut out = vec![0.0; row.len()];
        for (k, &i) in support.iter().enumerate() {
            out[i] = prior[k];
        }
        return Ok(out);
    }
    // Scaled objective eta x.q + KL(x || prior) has the same minimizer.
    let qs: Vec<f64> = support.iter().map(|&i| eta * q[i]).collect();
    let objective = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&qs)
            .zip(&prior)
            .map(|((&xi, &qi), &pi)| xi * qi + xi * (xi / pi).ln())
            .sum()
    };
    let mut x = prior.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..500 {
        let g: Vec<f64> = x
            .iter()
            .zip(&qs)
            .zip(&prior)
            .map(|((&xi, &qi), &pi)| qi + (xi / pi).ln() + 1.0)
            .collect();
        // Inverse Hessian is diag(x); nu keeps the step on sum(x) = 1.
        let nu = -g.iter().zip(&x).map(|(gi, xi)| gi * xi).sum::<f64>() / x.iter().sum::<f64>();
        residual = g.iter().map(|gi| (gi + nu).abs()).fold(0.0, f64::max);
        if residual < 1e-10 {
            break;
        }
        let dx: Vec<f64> = g.iter().zip(&x).map(|(gi, xi)| -(gi + nu) * xi).collect();
        let mut step = 1.0f64;
        for (xi, di) in x.iter().zip(&dx) {
            if *di < 0.0 {
                step = step.min(-0.9 * xi / di);
            }
        }
        let f0 = objective(&x);
        let slope: f64 = g.iter().zip(&dx).map(|(a, b)| a * b).sum();
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + step * di).collect();
            if objective(&trial) <= f0 + 1e-4 * step * slope || step < 1e-12 {
                let s: f64 = trial.iter().sum();
                x = trial.iter().map(|v| v / s).collect();
                break;
            }
            step *= 0.5;
        }
    }
    if !(residual < 1e-10) {
        return Err(Error::Oracle(format!("argmin did not converge (residual {residual:e})")));
    }
    let mut out = vec![0.0; row.len()];
    for (k, &i) in support.iter().enumerate() {
        out[i] = x[k];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    pub kl: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-10,
            damping: 1e-3,
            kl: 0.01,
        }
    }
}

impl CgSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.kl > 0.0 && self.damping >= 0.0 && self.max_iters > 0) {
            return Err(Error::Config("CG needs tol > 0, kl > 0, damping >= 0, max_iters > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    /// `|| g - (S S^T + lambda I) delta ||`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient on `(S S^T + lambda I) delta = g` using only
/// `S^T x` and `S y` products.
pub fn cg_solve_low_rank(factor: &FisherFactor, g: &[f64], settings: &CgSettings) -> Result<CgOutcome> {
    settings.validate()?;
    if g.len() != factor.dim() {
        return Err(Error::Input("gradient length differs from the factor dimension".into()));
    }
    ensure_finite(g, "gradient")?;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = factor.gram_apply(x);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += settings.damping * xi;
        }
        y
    };
    let mut x = vec![0.0; g.len()];
    let mut r = g.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < settings.max_iters && rr.sqrt() > settings.tol {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        ensure_finite(&[alpha, rr_new], "CG iterate")?;
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    ensure_finite(&x, "CG solution")?;
    let ax = apply(&x);
    let residual = g.iter().zip(&ax).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let converged = residual <= settings.tol;
    if !converged {
        log::warn!("CG stopped after {iterations} iterations with residual {residual:e}");
    }
    Ok(CgOutcome {
        solution: x,
        residual,
        iterations,
        converged,
    })
}

/// `eta = sqrt(kl / (g . delta))`.
pub fn natural_step_size(kl: f64, g: &[f64], delta: &[f64]) -> Result<f64> {
    if !(kl > 0.0) {
        return Err(Error::Config("KL budget must be positive".into()));
    }
    let gd = dot(g, delta);
    if !(gd > 0.0) {
        return Err(Error::DegenerateDirection(format!("g . delta = {gd:e} is not positive")));
    }
    Ok((kl / gd).sqrt())
}

/// `(state, cost-to-go vector)` pairs gathered across episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregatedDataset {
    entries: Vec<(usize, Vec<f64>)>,
}

impl AggregatedDataset {
    pub fn push(&mut self, state: usize, costs: Vec<f64>) {
        self.entries.push((state, costs));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, Vec<f64>)] {
        &self.entries
    }
}

/// Cost-sensitive classification over deterministic per-state policies:
/// each seen state takes the action with the least summed cost-to-go (ties
/// to the lowest index); unseen states go left.
pub fn ftl_cost_sensitive(dataset: &AggregatedDataset, tree: &TreeSpec) -> Result<SimplexPolicy> {
    if dataset.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let s_n = tree.num_states();
    let mut sums: Vec<Option<[f64; 2]>> = vec![None; s_n];
    for (s, c) in &dataset.entries {
        if *s >= s_n || c.len() != 2 {
            return Err(Error::Input(format!("entry for state {s} does not fit the tree")));
        }
        let acc = sums[*s].get_or_insert([0.0; 2]);
        acc[0] += c[0];
        acc[1] += c[1];
    }
    Ok(SimplexPolicy::deterministic(s_n, 2, tree.depth(), |_, s| match sums[s] {
        Some([l, r]) if r < l => 1,
        _ => LEFT,
    }))
}

/// `w'[j] ∝ w[j] exp(-mu q[j])` with the max exponent subtracted.
pub fn weighted_majority_update(weights: &[f64], q: &[f64], mu: f64) -> Result<Vec<f64>> {
    eg_step_closed_form(weights, mu, q)
}

/// Linear loss vector of one episode: `q[j] = sum_{s in tau} Q~(s, pi^j(s)) / (K + 1)`,
/// one noisy query per distinct `(state, action)` pair on the trajectory.
///
/// Off its own path a base policy takes the expert's action, so the base
/// policy of the expert's leaf coincides with the expert on every state.
pub fn base_policy_losses(
    trajectory: &DiscreteTrajectory,
    oracle: &ExpertOracle<'_>,
    tree: &TreeSpec,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let leaves = tree.num_leaves();
    let mut q = vec![0.0; leaves];
    for (t, step) in trajectory.steps.iter().enumerate() {
        let s = step.state;
        let row = oracle.expert().row(t, s);
        let expert_action = if row[RIGHT] > row[LEFT] { RIGHT } else { LEFT };
        let mut sample = [None::<f64>; 2];
        for (j, qj) in q.iter_mut().enumerate() {
            let a = tree.path_action(j, s).unwrap_or(expert_action);
            let v = match sample[a] {
                Some(v) => v,
                None => {
                    let v = oracle.query_q(t, s, a, rng)?;
                    sample[a] = Some(v);
                    v
                }
            };
            *qj += v;
        }
    }
    let norm = (tree.depth() + 1) as f64;
    for v in &mut q {
        *v /= norm;
    }
    Ok(q)
}

/// One weighted-majority step over the base policies of a tree.
pub fn weighted_majority_step(
    mix: &BasePolicyMixture,
    trajectory: &DiscreteTrajectory,
    oracle: &ExpertOracle<'_>,
    tree: &TreeSpec,
    mu: f64,
    rng: &mut Rng,
) -> Result<BasePolicyMixture> {
    if !(mu > 0.0) {
        return Err(Error::Config("weighted-majority step size must be positive".into()));
    }
    let q = base_policy_losses(trajectory, oracle, tree, rng)?;
    BasePolicyMixture::new(weighted_majority_update(mix.weights(), &q, mu)?)
}

/// Runs EG on linear losses from the uniform point and returns the regret
/// against the best fixed simplex point together with
/// `ln(d)/mu + (mu/2) sum_n sum_i w_n[i] y_n[i]^2`.
pub fn eg_regret_bound_check(losses: &[Vec<f64>], mu: f64) -> Result<(f64, f64)> {
    let d = losses.first().map_or(0, |y| y.len());
    if d == 0 || losses.iter().any(|y| y.len() != d) {
        return Err(Error::Input("loss vectors must share a positive dimension".into()));
    }
    let mut w = vec![1.0 / d as f64; d];
    let mut learner = 0.0;
    let mut second = 0.0;
    let mut totals = vec![0.0; d];
    for y in losses {
        learner += dot(&w, y);
        second += w.iter().zip(y).map(|(wi, yi)| wi * yi * yi).sum::<f64>();
        for (t, yi) in totals.iter_mut().zip(y) {
            *t += yi;
        }
        w = eg_step_closed_form(&w, mu, y)?;
    }
    // A linear objective over the simplex is minimized at a vertex.
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((learner - best, (d as f64).ln() / mu + 0.5 * mu * second))
}

/// Checks that `row` is a valid simplex element.
pub fn is_simplex_row(row: &[f64]) -> bool {
    row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol::SIMPLEX_ROW * row.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::random::make_random_tabular;
    use crate::env::tree::{make_binary_tree, LeafNoise};
    use crate::mdp::{expected_cost, optimal_q, state_distribution};
    use crate::oracle::OracleMode;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn ogd_examples() {
        assert_eq!(ogd_step(&[1.0, 1.0], &[1.0, -1.0], 0.1).unwrap(), vec![0.9, 1.1]);
        assert_eq!(ogd_step(&[0.3, 0.4], &[0.0, 0.0], 0.5).unwrap(), vec![0.3, 0.4]);
        let once = ogd_step(&[0.0, 0.0], &[1.0, 2.0], 0.25).unwrap();
        assert_eq!(ogd_step(&once, &[1.0, 2.0], 0.25).unwrap(), vec![-0.5, -1.0]);
        assert!(matches!(ogd_step(&[f64::NAN], &[0.0], 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn weighted_costs_match_direct_summation() {
        let mdp = make_random_tabular(5, 3, 4, 3).unwrap();
        let (q, _) = optimal_q(&mdp);
        let pi = SimplexPolicy::random(5, 3, 4, &mut substream(1, &[]));
        let d = state_distribution(&mdp, &pi).unwrap();
        let got = eg_weighted_costs(&d, &q);
        for s in 0..5 {
            let num: Vec<f64> = (0..3)
                .map(|a| (0..4).map(|t| d.per_time[t][s] * q.q(t, s, a)).sum::<f64>())
                .collect();
            let den: f64 = (0..4).map(|t| d.per_time[t][s]).sum();
            let row = got[s].as_ref().unwrap();
            for a in 0..3 {
                assert!((row[a] - num[a] / den).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_costs_single_step_is_q() {
        let mdp = make_random_tabular(4, 2, 1, 3).unwrap();
        let (q, _) = optimal_q(&mdp);
        let d = state_distribution(&mdp, &SimplexPolicy::uniform(4, 2, 1)).unwrap();
        for (s, row) in eg_weighted_costs(&d, &q).iter().enumerate() {
            assert_eq!(row.as_deref().unwrap(), q.q_row(0, s));
        }
    }

    #[test]
    fn eg_closed_form_examples() {
        let row = [0.5, 0.5];
        assert_eq!(eg_step_closed_form(&row, 0.0, &[0.2, 0.8]).unwrap(), row.to_vec());
        let out = eg_step_closed_form(&row, 1.0, &[0.2, 0.8]).unwrap();
        let e = (-0.6f64).exp();
        assert!((out[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((out[0] - 0.6457).abs() < 1e-4);
        let shifted = eg_step_closed_form(&row, 1.0, &[5.2, 5.8]).unwrap();
        assert!((shifted[0] - out[0]).abs() < 1e-15);
        let zeros = eg_step_closed_form(&[0.0, 0.4, 0.6], 3.0, &[-9.0, 1.0, 0.0]).unwrap();
        assert_eq!(zeros[0], 0.0);
        assert!(matches!(eg_step_closed_form(&[0.0, 0.0], 1.0, &[0.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn argmin_oracle_limits() {
        let row = [0.2, 0.3, 0.5];
        let out = eg_step_argmin_oracle(&row, 1e-9, &[1.0, 0.0, 0.5]).unwrap();
        for (a, b) in out.iter().zip(&row) {
            assert!((a - b).abs() < 1e-8);
        }
        let out = eg_step_argmin_oracle(&row, 2.0, &[0.7, 0.7, 0.7]).unwrap();
        for (a, b) in out.iter().zip(&row) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn argmin_agrees_with_closed_form() {
        let mut r = substream(5, &[]);
        for _ in 0..100 {
            let d = r.gen_range(2..8);
            let raw: Vec<f64> = (0..d).map(|_| r.gen_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let q: Vec<f64> = (0..d).map(|_| r.gen_range(0.0..1.0)).collect();
            let eta = r.gen_range(0.1..5.0);
            let a = eg_step_closed_form(&row, eta, &q).unwrap();
            let b = eg_step_argmin_oracle(&row, eta, &q).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cg_examples() {
        let f = FisherFactor::from_columns(2, vec![vec![1.0, 0.0]]).unwrap();
        let s = CgSettings { damping: 1.0, ..Default::default() };
        let out = cg_solve_low_rank(&f, &[1.0, 0.0], &s).unwrap();
        assert!((out.solution[0] - 0.5).abs() < 1e-14 && out.solution[1].abs() < 1e-14);
        let zero = cg_solve_low_rank(&f, &[0.0, 0.0], &s).unwrap();
        assert_eq!(zero.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn step_size_examples() {
        assert!((natural_step_size(0.01, &[2.0], &[2.0]).unwrap() - 0.05).abs() < 1e-15);
        let a = natural_step_size(0.01, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let b = natural_step_size(0.01, &[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(matches!(
            natural_step_size(0.01, &[1.0], &[-1.0]),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn ftl_goes_left_at_root_after_one_episode() {
        let means = [0.9, 0.7, 0.1, 0.5];
        let (mdp, tree) = make_binary_tree(3, &means, LeafNoise::Deterministic).unwrap();
        let o = ExpertOracle::optimal(&mdp, OracleMode::Exact);
        let mut data = AggregatedDataset::default();
        for t in 0..3 {
            let s = tree.path(0)[t];
            data.push(s, o.query_q_vector(t, s, &mut substream(0, &[])).unwrap());
        }
        let pi = ftl_cost_sensitive(&data, &tree).unwrap();
        assert_eq!(pi.row(0, 0), &[0.0, 1.0]);
        let mut tie = AggregatedDataset::default();
        tie.push(0, vec![0.5, 0.5]);
        assert_eq!(ftl_cost_sensitive(&tie, &tree).unwrap().row(0, 0), &[1.0, 0.0]);
        assert!(expected_cost(&mdp, &pi).unwrap() <= 0.5);
    }

    #[test]
    fn weighted_majority_examples() {
        let w = weighted_majority_update(&[0.5, 0.5], &[1.0, 0.0], 2f64.ln()).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = weighted_majority_update(&[0.2, 0.8], &[0.4, 0.4], 3.0).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn regret_bound_examples() {
        let zeros = vec![vec![0.0; 4]; 50];
        let (r, b) = eg_regret_bound_check(&zeros, 0.5).unwrap();
        assert_eq!(r, 0.0);
        assert!((b - 4f64.ln() / 0.5).abs() < 1e-12);
        let alt: Vec<Vec<f64>> = (0..1000)
            .map(|n| if n % 2 == 0 { vec![1.0, -1.0] } else { vec![-1.0, 1.0] })
            .collect();
        let (r, b) = eg_regret_bound_check(&alt, 0.1).unwrap();
        assert!(r <= b);
    }

    proptest! {
        #[test]
        fn eg_keeps_rows_on_the_simplex(
            raw in proptest::collection::vec(0.0f64..1.0, 2..6),
            q in proptest::collection::vec(-3.0f64..3.0, 6),
            eta in 0.0f64..20.0,
        ) {
            prop_assume!(raw.iter().any(|&x| x > 0.0));
            let z: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let out = eg_step_closed_form(&row, eta, &q[..row.len()]).unwrap();
            prop_assert!(is_simplex_row(&out));
            for (a, b) in row.iter().zip(&out) {
                prop_assert!(*a > 0.0 || *b == 0.0);
            }
        }
    }
}
