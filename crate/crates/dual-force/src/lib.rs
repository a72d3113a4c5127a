//! Dual-Force: offline learning of diverse skills on tabular MDPs.
//!
//! Given a state-only expert dataset and a mixed offline dataset, the
//! trainer learns a set of policies whose state occupancies stay within a
//! KL budget of the expert's, using off-policy DICE estimators, a Van der
//! Waals successor-feature diversity signal, bounded Lagrange multipliers,
//! and a functional reward encoding for non-stationary-reward conditioning.
//! Everything is verified against exact brute-force oracles in `oracle`.

pub mod config;
pub mod dataset;
pub mod dice;
pub mod discriminator;
pub mod diversity;
pub mod error;
pub mod eval;
pub mod fre;
pub mod lagrange;
pub mod mdp;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod scenario;
pub mod skills;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil {
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use crate::mdp::{TabularMdp, TabularPolicy};

    /// Random dense MDP and policy with full-support rows.
    pub fn random_mdp(
        r: &mut ChaCha8Rng,
        num_states: usize,
        num_actions: usize,
        gamma: f64,
    ) -> (TabularMdp, TabularPolicy) {
        let mut trans = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let mut row: Vec<f64> = (0..num_states).map(|_| r.random::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            trans.extend(row);
        }
        let mut rho: Vec<f64> = (0..num_states).map(|_| r.random::<f64>() + 0.05).collect();
        let s: f64 = rho.iter().sum();
        rho.iter_mut().for_each(|x| *x /= s);
        let mdp = TabularMdp::new(num_states, num_actions, trans, rho, gamma).unwrap();
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            let mut row: Vec<f64> = (0..num_actions).map(|_| r.random::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            probs.extend(row);
        }
        let pi = TabularPolicy::new(num_states, num_actions, probs).unwrap();
        (mdp, pi)
    }
}
