//! Finite MDP representation, exact occupancy computation, and rollouts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Tabular MDP: transition tensor `P[s][a][s']` stored flat, initial
/// distribution `rho0`, and discount `gamma` in (0,1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    transitions: Vec<f64>,
    pub rho0: Vec<f64>,
    pub gamma: f64,
}

fn check_distribution(p: &[f64], what: &'static str) -> Result<()> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid(what, "negative or non-finite entry"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(what, format!("sums to {sum}, expected 1")));
    }
    Ok(())
}

fn sample_categorical(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rho0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("mdp", "num_states and num_actions must be positive"));
        }
        if transitions.len() != num_states * num_actions * num_states {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                num_states * num_actions * num_states
            )));
        }
        if rho0.len() != num_states {
            return Err(Error::DimensionMismatch("rho0 length != num_states".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{gamma} not in (0,1)")));
        }
        check_distribution(&rho0, "rho0")?;
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = &transitions[(s * num_actions + a) * num_states..][..num_states];
                check_distribution(row, "transition row")?;
            }
        }
        Ok(Self { num_states, num_actions, transitions, rho0, gamma })
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + s_next]
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[(s * self.num_actions + a) * self.num_states..][..self.num_states]
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_categorical(rng, &self.rho0)
    }

    pub fn sample_next(&self, rng: &mut ChaCha8Rng, s: usize, a: usize) -> usize {
        sample_categorical(rng, self.transition_row(s, a))
    }
}

/// Row-stochastic policy table `pi[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch("policy table size".into()));
        }
        for s in 0..num_states {
            check_distribution(&probs[s * num_actions..][..num_actions], "policy row")?;
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    /// Deterministic policy from an action-per-state table.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != num_states {
            return Err(Error::DimensionMismatch("actions length != num_states".into()));
        }
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::invalid("policy", format!("action {a} out of range")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self { num_states, num_actions, probs })
    }

    /// Mix this policy with the uniform policy: (1-eps)*pi + eps*uniform.
    pub fn smoothed(&self, eps: f64) -> Self {
        let u = eps / self.num_actions as f64;
        let probs = self.probs.iter().map(|&p| (1.0 - eps) * p + u).collect();
        Self { num_states: self.num_states, num_actions: self.num_actions, probs }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..][..self.num_actions]
    }

    pub fn sample_action(&self, rng: &mut ChaCha8Rng, s: usize) -> usize {
        sample_categorical(rng, self.row(s))
    }
}

/// Normalized discounted state-action visitation distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub num_states: usize,
    pub num_actions: usize,
    pub d: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(num_states: usize, num_actions: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch("occupancy length".into()));
        }
        if d.iter().any(|&x| x < -1e-12 || !x.is_finite()) {
            return Err(Error::invalid("occupancy", "negative or non-finite entry"));
        }
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::invalid("occupancy", format!("sums to {sum}")));
        }
        Ok(Self { num_states, num_actions, d: d.iter().map(|&x| x.max(0.0)).collect() })
    }

    #[inline]
    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.num_actions + a]
    }

    /// State marginal d(s) = sum_a d(s,a).
    pub fn state_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_states];
        for s in 0..self.num_states {
            m[s] = self.d[s * self.num_actions..][..self.num_actions].iter().sum();
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureVariant {
    OneHot,
    Coordinate,
    CustomTable,
}

/// State feature map phi: S -> R^d, stored as a dense table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMap {
    pub dim: usize,
    pub variant: FeatureVariant,
    table: Vec<f64>,
    num_states: usize,
}

impl FeatureMap {
    pub fn one_hot(num_states: usize) -> Self {
        let mut table = vec![0.0; num_states * num_states];
        for s in 0..num_states {
            table[s * num_states + s] = 1.0;
        }
        Self { dim: num_states, variant: FeatureVariant::OneHot, table, num_states }
    }

    /// Grid coordinates normalized to [0,1]^2; states indexed row-major.
    pub fn grid_coordinates(width: usize, height: usize) -> Self {
        let num_states = width * height;
        let mut table = Vec::with_capacity(num_states * 2);
        for s in 0..num_states {
            let row = s / width;
            let col = s % width;
            table.push(if width > 1 { col as f64 / (width - 1) as f64 } else { 0.0 });
            table.push(if height > 1 { row as f64 / (height - 1) as f64 } else { 0.0 });
        }
        Self { dim: 2, variant: FeatureVariant::Coordinate, table, num_states }
    }

    pub fn custom(num_states: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != num_states * dim {
            return Err(Error::DimensionMismatch("feature table size".into()));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("feature map", "non-finite entry"));
        }
        Ok(Self { dim, variant: FeatureVariant::CustomTable, table, num_states })
    }

    #[inline]
    pub fn of(&self, s: usize) -> &[f64] {
        &self.table[s * self.dim..][..self.dim]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Lift the state feature map to a d x (S*A) matrix with columns
    /// phi(s,a) := phi(s), as used by the occupancy-level diversity gradient.
    pub fn lift_state_action(&self, num_actions: usize) -> Vec<Vec<f64>> {
        let mut cols = Vec::with_capacity(self.num_states * num_actions);
        for s in 0..self.num_states {
            for _ in 0..num_actions {
                cols.push(self.of(s).to_vec());
            }
        }
        cols
    }
}

/// One sampled episode; step 0 is the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize, usize)>,
}

/// Sample a trajectory of `horizon` transitions from (rho0, pi, P).
pub fn rollout(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut s = mdp.sample_initial(rng);
    for _ in 0..horizon {
        let a = policy.sample_action(rng, s);
        let s_next = mdp.sample_next(rng, s, a);
        steps.push((s, a, s_next));
        s = s_next;
    }
    Ok(Trajectory { steps })
}

/// Exact occupancy d(s,a) = (1-gamma) sum_t gamma^t Pr[s_t=s, a_t=a],
/// computed by solving (I - gamma P_pi^T) x = (1-gamma) rho0 for the state
/// marginal and multiplying by the policy.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    let n = mdp.num_states;
    if policy.num_states != n || policy.num_actions != mdp.num_actions {
        return Err(Error::DimensionMismatch("policy does not match MDP".into()));
    }
    // P_pi[s][s'] = sum_a pi(a|s) P[s][a][s']
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let row = mdp.transition_row(s, a);
            for s_next in 0..n {
                // transpose: coefficient of x[s] in equation for s_next
                a_mat[(s_next, s)] -= mdp.gamma * pa * row[s_next];
            }
        }
    }
    let b = DVector::from_iterator(n, mdp.rho0.iter().map(|&r| (1.0 - mdp.gamma) * r));
    let x = a_mat
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numeric("singular occupancy system".into()))?;
    let mut d = vec![0.0; n * mdp.num_actions];
    for s in 0..n {
        for a in 0..mdp.num_actions {
            d[s * mdp.num_actions + a] = x[s] * policy.prob(s, a);
        }
    }
    OccupancyMeasure::new(n, mdp.num_actions, d)
}

/// Discounted visitation estimate from sampled episodes: step t carries
/// weight gamma^t and the result is normalized to sum to 1. Mass beyond the
/// rollout horizon is ignored (bias <= gamma^H).
pub fn empirical_occupancy(
    trajectories: &[Trajectory],
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> Result<OccupancyMeasure> {
    if trajectories.is_empty() {
        return Err(Error::Empty("trajectories"));
    }
    let mut d = vec![0.0; num_states * num_actions];
    let mut total = 0.0;
    for traj in trajectories {
        let mut w = 1.0;
        for &(s, a, _) in &traj.steps {
            d[s * num_actions + a] += w;
            total += w;
            w *= gamma;
        }
    }
    for x in &mut d {
        *x /= total;
    }
    OccupancyMeasure::new(num_states, num_actions, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn chain2() -> (TabularMdp, TabularPolicy) {
        // s0 -> s1 -> s1, single action, gamma = 0.5
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0],
            0.5,
        )
        .unwrap();
        let pi = TabularPolicy::deterministic(2, 1, &[0, 0]).unwrap();
        (mdp, pi)
    }

    #[test]
    fn single_state_occupancy_is_one() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap();
        let pi = TabularPolicy::deterministic(1, 1, &[0]).unwrap();
        let d = exact_occupancy(&mdp, &pi).unwrap();
        assert!((d.at(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain2_occupancy_closed_form() {
        let (mdp, pi) = chain2();
        let d = exact_occupancy(&mdp, &pi).unwrap();
        // (1-gamma) at s0, gamma at s1 (geometric series)
        assert!((d.at(0, 0) - 0.5).abs() < 1e-12);
        assert!((d.at(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occupancy_sums_to_one_and_satisfies_flow() {
        let mut r = rng::single(7);
        let (mdp, pi) = random_mdp(&mut r, 6, 3, 0.9);
        let d = exact_occupancy(&mdp, &pi).unwrap();
        let sum: f64 = d.d.iter().sum();
        assert!((sum - 1.0).abs() < 1e-8);
        // Bellman flow: sum_a d(s,a) = (1-g) rho0(s) + g sum_{s',a'} P[s'][a'][s] d(s',a')
        let marg = d.state_marginal();
        for s in 0..mdp.num_states {
            let mut inflow = (1.0 - mdp.gamma) * mdp.rho0[s];
            for sp in 0..mdp.num_states {
                for ap in 0..mdp.num_actions {
                    inflow += mdp.gamma * mdp.p(sp, ap, s) * d.at(sp, ap);
                }
            }
            assert!((marg[s] - inflow).abs() < 1e-8, "flow residual at {s}");
        }
    }

    use crate::testutil::random_mdp;

    #[test]
    fn deterministic_rollout_ignores_seed() {
        let (mdp, pi) = chain2();
        let t1 = rollout(&mdp, &pi, 5, &mut rng::single(1)).unwrap();
        let t2 = rollout(&mdp, &pi, 5, &mut rng::single(2)).unwrap();
        assert_eq!(t1.steps, t2.steps);
        assert_eq!(t1.steps[0], (0, 0, 1));
        assert!(t1.steps[1..].iter().all(|&(s, _, sn)| s == 1 && sn == 1));
    }

    #[test]
    fn rollout_same_seed_identical() {
        let mut r = rng::single(3);
        let (mdp, pi) = random_mdp(&mut r, 4, 2, 0.8);
        let t1 = rollout(&mdp, &pi, 20, &mut rng::single(42)).unwrap();
        let t2 = rollout(&mdp, &pi, 20, &mut rng::single(42)).unwrap();
        assert_eq!(t1.steps, t2.steps);
    }

    #[test]
    fn empirical_single_state_is_exact() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.7).unwrap();
        let pi = TabularPolicy::deterministic(1, 1, &[0]).unwrap();
        let trajs: Vec<_> = (0..10)
            .map(|i| rollout(&mdp, &pi, 5, &mut rng::single(i)).unwrap())
            .collect();
        let d = empirical_occupancy(&trajs, 1, 1, 0.7).unwrap();
        assert!((d.at(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_matches_exact_on_chain() {
        let (mdp, pi) = chain2();
        let trajs: Vec<_> = (0..20_000)
            .map(|i| rollout(&mdp, &pi, 20, &mut rng::stream(11, &[i])).unwrap())
            .collect();
        let emp = empirical_occupancy(&trajs, 2, 1, mdp.gamma).unwrap();
        let exact = exact_occupancy(&mdp, &pi).unwrap();
        let l1: f64 = emp.d.iter().zip(&exact.d).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 0.02, "l1 = {l1}");
    }

    #[test]
    fn empirical_converges_with_episode_count() {
        let mut r = rng::single(5);
        let (mdp, pi) = random_mdp(&mut r, 4, 2, 0.8);
        let exact = exact_occupancy(&mdp, &pi).unwrap();
        let mut errs = Vec::new();
        for &n in &[1000usize, 100_000] {
            let mut avg = 0.0;
            for seed in 0..5u64 {
                let trajs: Vec<_> = (0..n as u64)
                    .map(|i| rollout(&mdp, &pi, 50, &mut rng::stream(seed, &[i])).unwrap())
                    .collect();
                let emp = empirical_occupancy(&trajs, 4, 2, mdp.gamma).unwrap();
                let l1: f64 = emp.d.iter().zip(&exact.d).map(|(a, b)| (a - b).abs()).sum();
                avg += l1 / 5.0;
            }
            errs.push(avg);
        }
        assert!(errs[1] < errs[0], "errors {errs:?} not decreasing");
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(TabularMdp::new(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![1.0, 0.0], 0.5).is_err());
        assert!(TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.9, 0.0], 0.5).is_err());
        assert!(TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], 1.0).is_err());
        assert!(TabularPolicy::new(1, 2, vec![0.7, 0.2]).is_err());
    }
}
