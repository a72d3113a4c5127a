//! Brute-force ground truth: the exact KL-regularized solve via the convex
//! dual, exact KL quantities, the relaxed-constraint bound, and central
//! finite differences.

use crate::error::{Error, Result};
use crate::mdp::{OccupancyMeasure, TabularMdp};

/// Output of the exact regularized solve.
pub struct RegularizedSolution {
    pub v_star: Vec<f64>,
    pub d_star: OccupancyMeasure,
    pub dual_value: f64,
    pub primal_value: f64,
    /// importance ratios eta = d_star / d_O
    pub eta: Vec<f64>,
}

struct DualProblem<'a> {
    mdp: &'a TabularMdp,
    rewards: &'a [f64],
    d_o: &'a [f64],
}

impl DualProblem<'_> {
    /// Dual objective (1-g) <rho0, V> + log sum_{s,a} d_O(s,a) exp(delta)
    /// and its gradient; the softmax weights are exactly d_star.
    fn eval(&self, v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mdp = self.mdp;
        let (ns, na, g) = (mdp.num_states, mdp.num_actions, mdp.gamma);
        let mut deltas = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let tv: f64 =
                    mdp.transition_row(s, a).iter().zip(v).map(|(p, vi)| p * vi).sum();
                deltas[s * na + a] = self.rewards[s * na + a] + g * tv - v[s];
            }
        }
        let m = deltas
            .iter()
            .zip(self.d_o)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&d, _)| d)
            .fold(f64::NEG_INFINITY, f64::max);
        let terms: Vec<f64> =
            deltas.iter().zip(self.d_o).map(|(&d, &w)| w * (d - m).exp()).collect();
        let zsum: f64 = terms.iter().sum();
        let obj =
            (1.0 - g) * mdp.rho0.iter().zip(v).map(|(r, vi)| r * vi).sum::<f64>() + m + zsum.ln();
        // d_star(s,a) = d_O exp(delta) / normalizer
        let d_star: Vec<f64> = terms.iter().map(|&t| t / zsum).collect();
        // grad_V = (1-g) rho0 + g P^T d_star - marginal(d_star)
        let mut grad = vec![0.0; ns];
        for s in 0..ns {
            grad[s] = (1.0 - g) * mdp.rho0[s];
        }
        for s in 0..ns {
            for a in 0..na {
                let w = d_star[s * na + a];
                grad[s] -= w;
                if w > 0.0 {
                    for (s_next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        grad[s_next] += g * w * p;
                    }
                }
            }
        }
        (obj, grad, d_star)
    }
}

/// Solve min_V of the dual of max_d <d, R> - KL(d || d_O) by gradient
/// descent with backtracking line search until ||grad||_inf <= tolerance,
/// then recover the primal occupancy d_star = eta * d_O.
pub fn exact_regularized_solve(
    mdp: &TabularMdp,
    rewards: &[f64],
    d_o: &OccupancyMeasure,
    tolerance: f64,
) -> Result<RegularizedSolution> {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    if rewards.len() != ns * na {
        return Err(Error::DimensionMismatch("rewards length".into()));
    }
    if d_o.d.iter().any(|&x| x <= 0.0) {
        return Err(Error::invalid("d_O", "must be strictly positive on all (s,a)"));
    }
    let problem = DualProblem { mdp, rewards, d_o: &d_o.d };
    let mut v = vec![0.0; ns];
    let (mut obj, mut grad, mut d_star) = problem.eval(&v);
    let mut step = 1.0;
    for _ in 0..500_000 {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= tolerance {
            break;
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        loop {
            let v_try: Vec<f64> = v.iter().zip(&grad).map(|(vi, gi)| vi - step * gi).collect();
            let (obj_try, grad_try, d_try) = problem.eval(&v_try);
            if obj_try <= obj - 1e-4 * step * g2 || step < 1e-16 {
                v = v_try;
                obj = obj_try;
                grad = grad_try;
                d_star = d_try;
                step = (step * 2.0).min(1e4);
                break;
            }
            step *= 0.5;
        }
    }
    let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if gnorm > tolerance {
        return Err(Error::Numeric(format!(
            "dual solve stalled with gradient norm {gnorm} > {tolerance}"
        )));
    }
    let eta: Vec<f64> = d_star.iter().zip(&d_o.d).map(|(d, o)| d / o).collect();
    let kl: f64 = d_star
        .iter()
        .zip(&d_o.d)
        .filter(|(&d, _)| d > 0.0)
        .map(|(&d, &o)| d * (d / o).ln())
        .sum();
    let primal =
        d_star.iter().zip(rewards).map(|(d, r)| d * r).sum::<f64>() - kl;
    Ok(RegularizedSolution {
        v_star: v,
        d_star: OccupancyMeasure::new(ns, na, d_star)?,
        dual_value: obj,
        primal_value: primal,
        eta,
    })
}

/// KL(d1 || d2) = sum d1 log(d1/d2), 0 log 0 := 0. Errors on a support
/// violation, reporting the offending index.
pub fn exact_kl(d1: &[f64], d2: &[f64]) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(Error::DimensionMismatch("kl inputs".into()));
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in d1.iter().zip(d2).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::SupportViolation { index: i });
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc)
}

/// Exact value of the relaxed imitation bound:
/// -E_{d_i(s)}[log(d_E(s)/d_O(s))] + KL(d_i(S,A) || d_O(S,A)).
pub fn relaxed_bound_exact(
    d_i: &OccupancyMeasure,
    d_e_states: &[f64],
    d_o: &OccupancyMeasure,
) -> Result<f64> {
    if d_e_states.len() != d_i.num_states {
        return Err(Error::DimensionMismatch("expert state distribution".into()));
    }
    let di_states = d_i.state_marginal();
    let do_states = d_o.state_marginal();
    let mut expectation = 0.0;
    for (s, &p) in di_states.iter().enumerate() {
        if p > 0.0 {
            if d_e_states[s] <= 0.0 || do_states[s] <= 0.0 {
                return Err(Error::SupportViolation { index: s });
            }
            expectation += p * (d_e_states[s] / do_states[s]).ln();
        }
    }
    Ok(-expectation + exact_kl(&d_i.d, &d_o.d)?)
}

/// Central finite differences (f(x + h e_j) - f(x - h e_j)) / 2h.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::invalid("h", "must be positive"));
    }
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        grad[j] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_occupancy, TabularPolicy};
    use crate::rng;
    use rand::Rng;

    fn full_support_instance(
        seed: u64,
        ns: usize,
        na: usize,
    ) -> (TabularMdp, OccupancyMeasure) {
        let mut r = rng::single(seed);
        let (mdp, pi) = crate::testutil::random_mdp(&mut r, ns, na, 0.9);
        let pi = pi.smoothed(0.05);
        let d_o = exact_occupancy(&mdp, &pi).unwrap();
        (mdp, d_o)
    }

    #[test]
    fn zero_reward_recovers_d_o() {
        let (mdp, d_o) = full_support_instance(1, 5, 2);
        let sol = exact_regularized_solve(&mdp, &vec![0.0; 10], &d_o, 1e-8).unwrap();
        for (a, b) in sol.d_star.d.iter().zip(&d_o.d) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for e in &sol.eta {
            assert!((e - 1.0).abs() < 1e-5);
        }
        assert!(exact_kl(&sol.d_star.d, &d_o.d).unwrap() < 1e-9);
    }

    #[test]
    fn solved_instance_is_feasible_with_small_gap() {
        let (mdp, d_o) = full_support_instance(2, 10, 3);
        let mut r = rng::single(99);
        let rewards: Vec<f64> = (0..30).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let sol = exact_regularized_solve(&mdp, &rewards, &d_o, 1e-6).unwrap();
        assert!((sol.dual_value - sol.primal_value).abs() <= 1e-3);
        // Bellman flow residual of d_star
        let marg = sol.d_star.state_marginal();
        for s in 0..mdp.num_states {
            let mut inflow = (1.0 - mdp.gamma) * mdp.rho0[s];
            for sp in 0..mdp.num_states {
                for ap in 0..mdp.num_actions {
                    inflow += mdp.gamma * mdp.p(sp, ap, s) * sol.d_star.at(sp, ap);
                }
            }
            assert!((marg[s] - inflow).abs() <= 1e-4);
        }
        // mean of eta under d_O is 1
        let mean: f64 = sol.eta.iter().zip(&d_o.d).map(|(e, w)| e * w).sum();
        assert!((mean - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_zero_support() {
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], 0.5).unwrap();
        let pi = TabularPolicy::deterministic(2, 1, &[0, 0]).unwrap();
        let d = exact_occupancy(&mdp, &pi).unwrap();
        // replace with a measure containing a zero
        let bad = OccupancyMeasure::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(exact_regularized_solve(&mdp, &[0.0, 0.0], &bad, 1e-6).is_err());
        drop(d);
    }

    #[test]
    fn kl_cases() {
        assert!(exact_kl(&[0.5, 0.5], &[0.5, 0.5]).unwrap().abs() < 1e-15);
        let kl = exact_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - 2.0_f64.ln()).abs() < 1e-12);
        match exact_kl(&[0.5, 0.5], &[1.0, 0.0]) {
            Err(Error::SupportViolation { index: 1 }) => {}
            other => panic!("expected support violation, got {other:?}"),
        }
    }

    #[test]
    fn kl_chain_rule() {
        // KL over (S,A) = KL over S + E_{d1(s)} KL(pi1 || pi2)
        let mut r = rng::single(44);
        for _ in 0..5 {
            let (mdp, pi1) = crate::testutil::random_mdp(&mut r, 4, 3, 0.85);
            let (_, pi2) = crate::testutil::random_mdp(&mut r, 4, 3, 0.85);
            let d1 = exact_occupancy(&mdp, &pi1).unwrap();
            let d2 = exact_occupancy(&mdp, &pi2).unwrap();
            let joint = exact_kl(&d1.d, &d2.d).unwrap();
            let m1 = d1.state_marginal();
            let m2 = d2.state_marginal();
            let state_kl = exact_kl(&m1, &m2).unwrap();
            let mut cond = 0.0;
            for s in 0..4 {
                cond += m1[s] * exact_kl(pi1.row(s), pi2.row(s)).unwrap();
            }
            assert!((joint - (state_kl + cond)).abs() < 1e-9);
        }
    }

    #[test]
    fn relaxed_bound_cases() {
        let (mdp, d_o) = full_support_instance(5, 4, 2);
        let do_states = d_o.state_marginal();
        // d_i = d_O and d_E = d_O marginal -> both terms vanish
        let v = relaxed_bound_exact(&d_o, &do_states, &d_o).unwrap();
        assert!(v.abs() < 1e-12);
        // inequality sweep: RHS >= KL(d_i(S) || d_E(S))
        let mut r = rng::single(50);
        for _ in 0..100 {
            let (_, pi_i) = crate::testutil::random_mdp(&mut r, 4, 2, 0.9);
            let (_, pi_e) = crate::testutil::random_mdp(&mut r, 4, 2, 0.9);
            let d_i = exact_occupancy(&mdp, &pi_i.smoothed(0.05)).unwrap();
            let d_e = exact_occupancy(&mdp, &pi_e.smoothed(0.05)).unwrap();
            let de_states = d_e.state_marginal();
            let rhs = relaxed_bound_exact(&d_i, &de_states, &d_o).unwrap();
            let lhs = exact_kl(&d_i.state_marginal(), &de_states).unwrap();
            assert!(rhs >= lhs - 1e-9, "rhs {rhs} < lhs {lhs}");
        }
    }

    #[test]
    fn finite_difference_basics() {
        let f = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let x = [0.3, -1.2, 4.0];
        let g = finite_difference(&f, &x, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&x) {
            assert!((a - b).abs() < 1e-8);
        }
        let c = |_: &[f64]| 7.0;
        let g = finite_difference(&c, &x, 1e-5).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-9));
        assert!(finite_difference(&f, &x, 0.0).is_err());
    }
}
