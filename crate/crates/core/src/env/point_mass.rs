//! Double-integrator point mass with quadratic costs and a finite-horizon
//! Riccati expert.
//!
//! State `s = (position, velocity)`, scalar force `u`,
//! `s' = A s + B u` with `A = [[1, dt], [0, 1]]`, `B = [dt^2 / 2, dt]`, and
//! step cost `s^T Q s + r u^2` with `Q = diag(q_pos, q_vel)`. The cost is
//! zero at the origin with zero force, so it is already nonnegative with
//! minimum zero.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mdp::{Step, Trajectory};
use crate::policy::{ActionRef, DifferentiablePolicy, Observation, PolicyFamily};
use crate::rng::Rng;

type M2 = [[f64; 2]; 2];
type M3 = [[f64; 3]; 3];

pub type ContinuousTrajectory = Trajectory<Vec<f64>, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q_pos: f64,
    pub q_vel: f64,
    pub r: f64,
    pub init_mean: [f64; 2],
    pub init_std: [f64; 2],
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            q_pos: 1.0,
            q_vel: 0.1,
            r: 0.01,
            init_mean: [1.0, 0.0],
            init_std: [0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousEnv {
    cfg: PointMassConfig,
    a: M2,
    b: [f64; 2],
    q: M2,
}

/// Time-varying quadratic cost-to-go of the Riccati controller.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiExpert {
    /// `M_t` over `z = (s, u)`: `Q*_t(s, u) = z^T M_t z`.
    m: Vec<M3>,
    /// `P_t`: `V*_t(s) = s^T P_t s`; `P_H = 0`.
    p: Vec<M2>,
    /// Feedback gains: `u*_t = -K_t s`.
    gains: Vec<[f64; 2]>,
}

pub fn make_point_mass(cfg: PointMassConfig) -> Result<(ContinuousEnv, RiccatiExpert)> {
    if cfg.horizon < 2 {
        return Err(Error::Config("point mass needs a horizon of at least 2".into()));
    }
    if !(cfg.q_pos > 0.0 && cfg.q_vel > 0.0 && cfg.r > 0.0) {
        return Err(Error::Config("cost weights must be positive definite".into()));
    }
    if !(cfg.dt > 0.0) || cfg.init_std.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Config("dt must be positive and init_std nonnegative".into()));
    }
    let dt = cfg.dt;
    let env = ContinuousEnv {
        cfg,
        a: [[1.0, dt], [0.0, 1.0]],
        b: [0.5 * dt * dt, dt],
        q: [[cfg.q_pos, 0.0], [0.0, cfg.q_vel]],
    };
    let expert = env.riccati();
    Ok((env, expert))
}

fn mat2_vec(m: &M2, v: &[f64]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn quad2(m: &M2, v: &[f64]) -> f64 {
    let mv = mat2_vec(m, v);
    v[0] * mv[0] + v[1] * mv[1]
}

fn quad3(m: &M3, z: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += z[i] * m[i][j] * z[j];
        }
    }
    acc
}

/// Linear-gaussian policy parameters `(w, bias, std)` with `u = w.s + bias + std * eps`.
fn linear_gaussian(policy: &DifferentiablePolicy) -> Result<([f64; 2], f64, f64)> {
    match policy.family() {
        PolicyFamily::Gaussian { num_features: 2, action_dim: 1 } => {
            let th = policy.theta();
            let obs = [0.0, 0.0];
            let (_, std) = policy.gaussian_params(&Observation::features(&obs))?;
            Ok(([th[0], th[1]], th[2], std[0]))
        }
        _ => Err(Error::Unsupported("point mass needs a gaussian policy over 2 features with 1 action".into())),
    }
}

impl ContinuousEnv {
    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.cfg
    }

    pub fn step_cost(&self, s: &[f64], u: f64) -> f64 {
        quad2(&self.q, s) + self.cfg.r * u * u
    }

    /// Returns `(cost, next_state)`.
    pub fn step(&self, s: &[f64], u: f64) -> (f64, Vec<f64>) {
        let cost = self.step_cost(s, u);
        let next = mat2_vec(&self.a, s);
        (cost, vec![next[0] + self.b[0] * u, next[1] + self.b[1] * u])
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        (0..2)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                self.cfg.init_mean[i] + self.cfg.init_std[i] * z
            })
            .collect()
    }

    /// Samples an episode under a gaussian policy; records action densities.
    pub fn rollout(&self, policy: &DifferentiablePolicy, rng: &mut Rng) -> Result<ContinuousTrajectory> {
        let mut s = self.sample_initial(rng);
        let mut steps = Vec::with_capacity(self.cfg.horizon);
        for _ in 0..self.cfg.horizon {
            let (u, density) = policy.sample_continuous(&Observation::features(&s), rng)?;
            if !(density > 0.0) {
                return Err(Error::Policy("sampled action has zero density".into()));
            }
            let (cost, next) = self.step(&s, u[0]);
            steps.push(Step {
                state: s,
                action: u,
                cost,
                behavior_prob: density,
            });
            s = next;
        }
        Ok(Trajectory { steps })
    }

    fn riccati(&self) -> RiccatiExpert {
        let h = self.cfg.horizon;
        let (a, b, q, r) = (self.a, self.b, self.q, self.cfg.r);
        let mut p = vec![[[0.0; 2]; 2]; h + 1];
        let mut m = vec![[[0.0; 3]; 3]; h];
        let mut gains = vec![[0.0; 2]; h];
        for t in (0..h).rev() {
            let pn = p[t + 1];
            // A^T P A, A^T P B, B^T P B
            let mut atpa = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            atpa[i][j] += a[k][i] * pn[k][l] * a[l][j];
                        }
                    }
                }
            }
            let pb = mat2_vec(&pn, &b);
            let atpb = [a[0][0] * pb[0] + a[1][0] * pb[1], a[0][1] * pb[0] + a[1][1] * pb[1]];
            let btpb = b[0] * pb[0] + b[1] * pb[1];
            let muu = r + btpb;
            let mt = &mut m[t];
            for i in 0..2 {
                for j in 0..2 {
                    mt[i][j] = q[i][j] + atpa[i][j];
                }
                mt[i][2] = atpb[i];
                mt[2][i] = atpb[i];
            }
            mt[2][2] = muu;
            gains[t] = [atpb[0] / muu, atpb[1] / muu];
            for i in 0..2 {
                for j in 0..2 {
                    p[t][i][j] = mt[i][j] - atpb[i] * atpb[j] / muu;
                }
            }
        }
        RiccatiExpert { m, p, gains }
    }

    /// Exact `mu(pi)` for a linear-gaussian policy via moment propagation.
    pub fn exact_expected_cost(&self, policy: &DifferentiablePolicy) -> Result<f64> {
        let (w, bias, std) = linear_gaussian(policy)?;
        let mut total = 0.0;
        self.propagate(w, bias, std, |_, mean, cov| {
            let es = quad2(&self.q, mean) + trace_prod(&self.q, cov);
            let mu_u = w[0] * mean[0] + w[1] * mean[1] + bias;
            let var_u = quad2(cov, &w) + std * std;
            total += es + self.cfg.r * (mu_u * mu_u + var_u);
        });
        Ok(total)
    }

    /// Calls `visit(t, mean, cov)` with the state moments at each step under
    /// the linear-gaussian policy `(w, bias, std)`.
    fn propagate(&self, w: [f64; 2], bias: f64, std: f64, mut visit: impl FnMut(usize, &[f64; 2], &M2)) {
        let c = &self.cfg;
        let mut mean = c.init_mean;
        let mut cov = [[c.init_std[0].powi(2), 0.0], [0.0, c.init_std[1].powi(2)]];
        let (a, b) = (self.a, self.b);
        let ac = [
            [a[0][0] + b[0] * w[0], a[0][1] + b[0] * w[1]],
            [a[1][0] + b[1] * w[0], a[1][1] + b[1] * w[1]],
        ];
        for t in 0..c.horizon {
            visit(t, &mean, &cov);
            let m2 = mat2_vec(&ac, &mean);
            mean = [m2[0] + b[0] * bias, m2[1] + b[1] * bias];
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            next[i][j] += ac[i][k] * cov[k][l] * ac[j][l];
                        }
                    }
                    next[i][j] += std * std * b[i] * b[j];
                }
            }
            cov = next;
        }
    }

    /// Exact surrogate `(1/H) sum_t E_{s ~ d_t^{rollin}} E_{u ~ learner}[Q*_t(s, u)]`
    /// for linear-gaussian learner and roll-in policies.
    pub fn exact_surrogate(
        &self,
        expert: &RiccatiExpert,
        learner: &DifferentiablePolicy,
        rollin: &DifferentiablePolicy,
    ) -> Result<f64> {
        let (w, bias, std) = linear_gaussian(rollin)?;
        let (lw, lb, ls) = linear_gaussian(learner)?;
        let mut total = 0.0;
        self.propagate(w, bias, std, |t, mean, cov| {
            let ez = [mean[0], mean[1], lw[0] * mean[0] + lw[1] * mean[1] + lb];
            let cw = mat2_vec(cov, &lw);
            let cz = [
                [cov[0][0], cov[0][1], cw[0]],
                [cov[1][0], cov[1][1], cw[1]],
                [cw[0], cw[1], quad2(cov, &lw) + ls * ls],
            ];
            let m = &expert.m[t];
            let mut tr = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    tr += m[i][j] * cz[j][i];
                }
            }
            total += tr + quad3(m, &ez);
        });
        Ok(total / self.cfg.horizon as f64)
    }
}

fn trace_prod(a: &M2, b: &M2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]
}

impl RiccatiExpert {
    pub fn horizon(&self) -> usize {
        self.m.len()
    }

    pub fn q(&self, t: usize, s: &[f64], u: f64) -> f64 {
        quad3(&self.m[t], &[s[0], s[1], u])
    }

    pub fn v(&self, t: usize, s: &[f64]) -> f64 {
        quad2(&self.p[t], s)
    }

    pub fn action(&self, t: usize, s: &[f64]) -> f64 {
        -(self.gains[t][0] * s[0] + self.gains[t][1] * s[1])
    }

    /// Expert cost from the initial distribution: `tr(P_0 S_0) + m_0^T P_0 m_0`.
    pub fn expected_cost(&self, env: &ContinuousEnv) -> f64 {
        let c = env.config();
        let cov = [[c.init_std[0].powi(2), 0.0], [0.0, c.init_std[1].powi(2)]];
        trace_prod(&self.p[0], &cov) + quad2(&self.p[0], &c.init_mean)
    }
}

impl crate::oracle::CostToGo<Vec<f64>, Vec<f64>> for RiccatiExpert {
    fn q(&self, t: usize, state: &Vec<f64>, action: &Vec<f64>, _rng: &mut Rng) -> Result<f64> {
        if t >= self.horizon() {
            return Err(Error::Range(format!("step {t} beyond horizon {}", self.horizon())));
        }
        Ok(RiccatiExpert::q(self, t, state, action[0]))
    }

    fn v(&self, t: usize, state: &Vec<f64>) -> Result<f64> {
        if t >= self.horizon() {
            return Err(Error::Range(format!("step {t} beyond horizon {}", self.horizon())));
        }
        Ok(RiccatiExpert::v(self, t, state))
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Density of action `u` under `policy` at `s`, for importance ratios.
pub fn action_density(policy: &DifferentiablePolicy, s: &[f64], u: &[f64]) -> Result<f64> {
    policy.likelihood(&Observation::features(s), ActionRef::Continuous(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn env() -> (ContinuousEnv, RiccatiExpert) {
        make_point_mass(PointMassConfig::default()).unwrap()
    }

    #[test]
    fn origin_with_zero_force_costs_nothing() {
        let (e, _) = env();
        let mut s = vec![0.0, 0.0];
        for _ in 0..e.horizon() {
            let (c, next) = e.step(&s, 0.0);
            assert_eq!(c, 0.0);
            s = next;
        }
    }

    #[test]
    fn expert_action_attains_value() {
        let (_, x) = env();
        let s = [0.7, -0.3];
        for t in 0..10 {
            let u = x.action(t, &s);
            assert!((x.q(t, &s, u) - x.v(t, &s)).abs() < 1e-12);
            assert!(x.q(t, &s, u + 0.1) > x.v(t, &s));
        }
    }

    #[test]
    fn riccati_q_matches_simulation() {
        let (e, x) = env();
        let s0 = [0.4, 0.2];
        for t in 0..e.horizon() {
            for &u in &[-1.0, 0.0, 0.5] {
                let (mut total, mut s) = e.step(&s0, u);
                for tt in t + 1..e.horizon() {
                    let (c, n) = e.step(&s, x.action(tt, &s));
                    total += c;
                    s = n;
                }
                assert!((total - x.q(t, &s0, u)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_positive_weights_rejected() {
        let cfg = PointMassConfig { r: 0.0, ..Default::default() };
        assert!(matches!(make_point_mass(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn moment_cost_matches_monte_carlo() {
        let (e, _) = env();
        let fam = PolicyFamily::Gaussian { num_features: 2, action_dim: 1 };
        let pi = DifferentiablePolicy::with_theta(fam, vec![-2.0, -1.0, 0.1, (0.3f64).ln()], 0).unwrap();
        let exact = e.exact_expected_cost(&pi).unwrap();
        let mut rng = substream(1, &[]);
        let n = 50_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let c = e.rollout(&pi, &mut rng).unwrap().total_cost();
            s1 += c;
            s2 += c * c;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact}");
    }

    #[test]
    fn expert_expected_cost_matches_value_average() {
        let (e, x) = env();
        let mut rng = substream(2, &[]);
        let n = 50_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let s = e.sample_initial(&mut rng);
            let v = x.v(0, &s);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - x.expected_cost(&e)).abs() < 3.0 * se);
    }
}
