//! Off-policy DICE machinery: dual value objective, TD errors, softmax
//! importance weights, off-policy expectations, and the finite-sample
//! KL-constraint estimator.

use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, TabularMdp};
use crate::nn::{self, Adam, Mlp};

/// TD deltas are clipped to this range before exponentiation.
pub const DELTA_CLIP: f64 = 50.0;

/// Dual value function V over states; either a plain tabular vector or a
/// small network over (state features ++ latent z).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DualValue {
    Tabular { v: Vec<f64> },
    Conditioned { net: Mlp, latent_dim: usize },
}

impl DualValue {
    pub fn tabular(num_states: usize) -> Self {
        DualValue::Tabular { v: vec![0.0; num_states] }
    }

    pub fn conditioned(
        feature_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let net = Mlp::new(&[feature_dim + latent_dim, hidden, hidden, 1], rng)?;
        Ok(DualValue::Conditioned { net, latent_dim })
    }

    pub fn eval(&self, s: usize, features: &FeatureMap, z: Option<&[f64]>) -> f64 {
        match self {
            DualValue::Tabular { v } => v[s],
            DualValue::Conditioned { net, latent_dim } => {
                let phi = features.of(s);
                let mut input = Vec::with_capacity(phi.len() + latent_dim);
                input.extend_from_slice(phi);
                match z {
                    Some(z) => input.extend_from_slice(z),
                    None => input.extend(std::iter::repeat(0.0).take(*latent_dim)),
                }
                net.eval_scalar(&input)
            }
        }
    }

    pub fn param_hash(&self) -> u64 {
        match self {
            DualValue::Tabular { v } => nn::hash_f64s(v),
            DualValue::Conditioned { net, .. } => net.param_hash(),
        }
    }
}

/// How the backup 𝒯V(s,a) is formed.
#[derive(Clone, Copy)]
pub enum BackupMode<'a> {
    /// V(s') from the dataset's sampled next state.
    Sampled,
    /// Full expectation over the true transition kernel.
    Exact(&'a TabularMdp),
}

fn value_table(
    value: &DualValue,
    num_states: usize,
    features: &FeatureMap,
    z: Option<&[f64]>,
) -> Vec<f64> {
    (0..num_states).map(|s| value.eval(s, features, z)).collect()
}

/// TD error delta(s,a) = R(s,a) + gamma * TV(s,a) - V(s), per dataset record.
pub fn td_errors(
    value: &DualValue,
    rewards: &[f64],
    dataset: &OfflineDataset,
    gamma: f64,
    features: &FeatureMap,
    z: Option<&[f64]>,
    mode: BackupMode,
) -> Result<Vec<f64>> {
    if rewards.len() != dataset.transitions.len() {
        return Err(Error::DimensionMismatch("rewards vs dataset".into()));
    }
    let vtab = value_table(value, dataset.meta.num_states, features, z);
    let deltas = dataset
        .transitions
        .iter()
        .zip(rewards)
        .map(|(t, &r)| {
            let backup = match mode {
                BackupMode::Sampled => vtab[t.next_state],
                BackupMode::Exact(mdp) => mdp
                    .transition_row(t.state, t.action)
                    .iter()
                    .zip(&vtab)
                    .map(|(p, v)| p * v)
                    .sum(),
            };
            r + gamma * backup - vtab[t.state]
        })
        .collect();
    Ok(deltas)
}

/// log( mean_j exp(x_j) ) with max-subtraction; returns the number of
/// entries clipped to [-DELTA_CLIP, DELTA_CLIP].
pub fn log_mean_exp_clipped(xs: &[f64]) -> Result<(f64, usize)> {
    if xs.is_empty() {
        return Err(Error::Empty("log-mean-exp input"));
    }
    let mut clipped = 0usize;
    let vals: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x.abs() > DELTA_CLIP {
                clipped += 1;
                x.clamp(-DELTA_CLIP, DELTA_CLIP)
            } else {
                x
            }
        })
        .collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = vals.iter().map(|&x| (x - m).exp()).sum();
    Ok((m + (sum / vals.len() as f64).ln(), clipped))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClipStats {
    pub clipped: usize,
    pub total: usize,
}

/// Dual objective (1-gamma) E_{rho0}[V] + log E_{d_O} exp(delta). The
/// initial-state expectation is taken over the dataset's initial-flagged
/// records.
pub fn dual_objective(
    value: &DualValue,
    rewards: &[f64],
    dataset: &OfflineDataset,
    gamma: f64,
    features: &FeatureMap,
    z: Option<&[f64]>,
    mode: BackupMode,
) -> Result<(f64, ClipStats)> {
    let initials = dataset.initial_indices();
    if initials.is_empty() {
        return Err(Error::invalid("dataset", "no initial states for the dual objective"));
    }
    let deltas = td_errors(value, rewards, dataset, gamma, features, z, mode)?;
    let v0: f64 = initials
        .iter()
        .map(|&i| value.eval(dataset.transitions[i].state, features, z))
        .sum::<f64>()
        / initials.len() as f64;
    let (lme, clipped) = log_mean_exp_clipped(&deltas)?;
    Ok((
        (1.0 - gamma) * v0 + lme,
        ClipStats { clipped, total: deltas.len() },
    ))
}

/// Probability-simplex weights over dataset records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetWeights {
    pub w: Vec<f64>,
}

impl DatasetWeights {
    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn check_simplex(&self) -> Result<()> {
        if self.w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::invalid("weights", "negative or non-finite"));
        }
        let sum: f64 = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::invalid("weights", format!("sum {sum}")));
        }
        Ok(())
    }

    /// Importance-ratio estimates eta_tilde = |D| * w; mean(eta_tilde) = 1.
    pub fn ratio_estimates(&self) -> Vec<f64> {
        let n = self.w.len() as f64;
        self.w.iter().map(|&x| n * x).collect()
    }
}

/// softmax over the dataset with max-subtraction (clips deltas first).
pub fn softmax_weights_with_stats(deltas: &[f64]) -> Result<(DatasetWeights, usize)> {
    if deltas.is_empty() {
        return Err(Error::Empty("delta vector"));
    }
    if deltas.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("deltas", "non-finite entry"));
    }
    let mut clipped = 0usize;
    let vals: Vec<f64> = deltas
        .iter()
        .map(|&x| {
            if x.abs() > DELTA_CLIP {
                clipped += 1;
                x.clamp(-DELTA_CLIP, DELTA_CLIP)
            } else {
                x
            }
        })
        .collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = vals.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    Ok((DatasetWeights { w }, clipped))
}

pub fn softmax_weights(deltas: &[f64]) -> Result<DatasetWeights> {
    softmax_weights_with_stats(deltas).map(|(w, _)| w)
}

/// E_{d_i}[f] ~= sum_j w_j f_j.
pub fn importance_estimate(weights: &DatasetWeights, f_values: &[f64]) -> Result<f64> {
    if weights.len() != f_values.len() {
        return Err(Error::DimensionMismatch("weights vs f-values".into()));
    }
    Ok(weights.w.iter().zip(f_values).map(|(w, f)| w * f).sum())
}

/// Finite-sample estimate of the relaxed imitation constraint:
/// phi = log|D| + sum_j w_j (log w_j - log_odds_j), with 0 log 0 := 0.
pub fn kl_constraint_estimate(
    weights: &DatasetWeights,
    log_odds_values: &[f64],
    dataset_size: usize,
) -> Result<f64> {
    if weights.len() != log_odds_values.len() {
        return Err(Error::DimensionMismatch("weights vs log-odds".into()));
    }
    let mut acc = (dataset_size as f64).ln();
    for (&w, &lo) in weights.w.iter().zip(log_odds_values) {
        if w > 0.0 {
            acc += w * (w.ln() - lo);
        }
    }
    Ok(acc)
}

/// One gradient-descent step on the dual objective. `batch` restricts the
/// log-mean-exp term to the given records (amortized mode); the
/// initial-state term always uses the dataset's initial records. Pass an
/// optimizer for Adam, or None for plain SGD.
#[allow(clippy::too_many_arguments)]
pub fn value_gradient_step(
    value: &mut DualValue,
    rewards: &[f64],
    dataset: &OfflineDataset,
    batch: Option<&[usize]>,
    gamma: f64,
    features: &FeatureMap,
    z: Option<&[f64]>,
    learning_rate: f64,
    mode: BackupMode,
    opt: Option<&mut Adam>,
) -> Result<()> {
    if learning_rate < 0.0 {
        return Err(Error::invalid("learning_rate", "must be >= 0"));
    }
    if learning_rate == 0.0 && opt.is_none() {
        return Ok(());
    }
    let initials = dataset.initial_indices();
    if initials.is_empty() {
        return Err(Error::invalid("dataset", "no initial states"));
    }
    let owned_indices: Vec<usize>;
    let indices: &[usize] = match batch {
        Some(b) => b,
        None => {
            owned_indices = (0..dataset.transitions.len()).collect();
            &owned_indices
        }
    };
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    // softmax weights over the batch deltas
    let vtab = value_table(value, dataset.meta.num_states, features, z);
    let deltas: Vec<f64> = indices
        .iter()
        .map(|&j| {
            let t = &dataset.transitions[j];
            let backup: f64 = match mode {
                BackupMode::Sampled => vtab[t.next_state],
                BackupMode::Exact(mdp) => mdp
                    .transition_row(t.state, t.action)
                    .iter()
                    .zip(&vtab)
                    .map(|(p, v)| p * v)
                    .sum(),
            };
            rewards[j] + gamma * backup - vtab[t.state]
        })
        .collect();
    let (batch_w, _) = softmax_weights_with_stats(&deltas)?;

    match value {
        DualValue::Tabular { v } => {
            let mut grad = vec![0.0; v.len()];
            let init_scale = (1.0 - gamma) / initials.len() as f64;
            for &i in &initials {
                grad[dataset.transitions[i].state] += init_scale;
            }
            for (&j, &wj) in indices.iter().zip(&batch_w.w) {
                let t = &dataset.transitions[j];
                grad[t.state] -= wj;
                match mode {
                    BackupMode::Sampled => grad[t.next_state] += gamma * wj,
                    BackupMode::Exact(mdp) => {
                        for (s_next, &p) in mdp.transition_row(t.state, t.action).iter().enumerate()
                        {
                            grad[s_next] += gamma * wj * p;
                        }
                    }
                }
            }
            match opt {
                Some(adam) => adam.step(v, &grad),
                None => nn::sgd_step(v, &grad, learning_rate),
            }
        }
        DualValue::Conditioned { net, latent_dim } => {
            // accumulate dJ/dV(s) per state, then backprop once per state
            let mut state_grad = vec![0.0; dataset.meta.num_states];
            let init_scale = (1.0 - gamma) / initials.len() as f64;
            for &i in &initials {
                state_grad[dataset.transitions[i].state] += init_scale;
            }
            for (&j, &wj) in indices.iter().zip(&batch_w.w) {
                let t = &dataset.transitions[j];
                state_grad[t.state] -= wj;
                match mode {
                    BackupMode::Sampled => state_grad[t.next_state] += gamma * wj,
                    BackupMode::Exact(mdp) => {
                        for (s_next, &p) in mdp.transition_row(t.state, t.action).iter().enumerate()
                        {
                            state_grad[s_next] += gamma * wj * p;
                        }
                    }
                }
            }
            let mut grads = vec![0.0; net.params.len()];
            let latent_dim = *latent_dim;
            for (s, &g) in state_grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let phi = features.of(s);
                let mut input = Vec::with_capacity(phi.len() + latent_dim);
                input.extend_from_slice(phi);
                match z {
                    Some(z) => input.extend_from_slice(z),
                    None => input.extend(std::iter::repeat(0.0).take(latent_dim)),
                }
                let cache = net.forward(&input);
                net.backward(&cache, &[g], &mut grads);
            }
            match opt {
                Some(adam) => adam.step(&mut net.params, &grads),
                None => nn::sgd_step(&mut net.params, &grads, learning_rate),
            }
        }
    }
    Ok(())
}
