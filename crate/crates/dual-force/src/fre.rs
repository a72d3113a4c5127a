//! Functional Reward Encoding: unsupervised reward families, a
//! permutation-invariant set encoder/decoder trained with an information
//! bottleneck, and mean latent embeddings for arbitrary rewards.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FeatureMap;
use crate::nn::{normal_pair, Adam, Mlp};
use crate::rng;

/// Gridworld layout used by the engineered reward family (and by the
/// built-in scenarios). States are indexed row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridInfo {
    pub width: usize,
    pub height: usize,
    pub goal: usize,
    pub corridor_rows: Vec<usize>,
}

/// A state-reward function from one of the unsupervised families.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RewardFunction {
    /// r(s) = <weights, phi(s)>
    Linear { weights: Vec<f64> },
    /// random two-layer network over features
    Mlp { net: Mlp },
    /// hand-built per-state table (goal indicator, corridor preference,
    /// or rightward-progress bonus)
    Engineered { name: String, table: Vec<f64> },
}

impl RewardFunction {
    pub fn eval(&self, s: usize, features: &FeatureMap) -> f64 {
        match self {
            RewardFunction::Linear { weights } => {
                weights.iter().zip(features.of(s)).map(|(w, x)| w * x).sum()
            }
            RewardFunction::Mlp { net } => net.eval_scalar(features.of(s)),
            RewardFunction::Engineered { table, .. } => table[s],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardFamilyConfig {
    pub num_linear: usize,
    pub num_mlp: usize,
    pub num_engineered: usize,
    /// hidden layer shapes cycled through for the MLP family
    pub mlp_hidden: Vec<(usize, usize)>,
    pub linear_scale: f64,
}

impl Default for RewardFamilyConfig {
    fn default() -> Self {
        Self {
            num_linear: 8,
            num_mlp: 8,
            num_engineered: 6,
            mlp_hidden: vec![(16, 8), (16, 16), (32, 16)],
            linear_scale: 1.0,
        }
    }
}

/// Deterministic sample of reward functions from the configured families.
pub fn generate_reward_family(
    config: &RewardFamilyConfig,
    features: &FeatureMap,
    grid: Option<&GridInfo>,
    seed: u64,
) -> Result<Vec<RewardFunction>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, &[0xf8e]);
    for _ in 0..config.num_linear {
        let mut weights = Vec::with_capacity(features.dim);
        while weights.len() < features.dim {
            let (a, b) = normal_pair(&mut r);
            weights.push(a * config.linear_scale);
            if weights.len() < features.dim {
                weights.push(b * config.linear_scale);
            }
        }
        out.push(RewardFunction::Linear { weights });
    }
    if config.num_mlp > 0 && config.mlp_hidden.is_empty() {
        return Err(Error::invalid("reward family", "mlp family needs hidden shapes"));
    }
    for k in 0..config.num_mlp {
        let (h1, h2) = config.mlp_hidden[k % config.mlp_hidden.len()];
        let net = Mlp::new(&[features.dim, h1, h2, 1], &mut r)?;
        out.push(RewardFunction::Mlp { net });
    }
    if config.num_engineered > 0 {
        let grid = grid.ok_or_else(|| {
            Error::invalid("reward family", "engineered rewards require a grid layout")
        })?;
        for k in 0..config.num_engineered {
            out.push(engineered_reward(grid, k));
        }
    }
    Ok(out)
}

fn engineered_reward(grid: &GridInfo, k: usize) -> RewardFunction {
    let n = grid.width * grid.height;
    match k % 3 {
        0 => {
            let mut table = vec![0.0; n];
            table[grid.goal] = 1.0;
            RewardFunction::Engineered { name: "goal-indicator".into(), table }
        }
        1 => {
            let rows = if grid.corridor_rows.is_empty() { vec![0] } else { grid.corridor_rows.clone() };
            let row = rows[(k / 3) % rows.len()];
            let table = (0..n).map(|s| if s / grid.width == row { 1.0 } else { 0.0 }).collect();
            RewardFunction::Engineered { name: format!("corridor-row-{row}"), table }
        }
        _ => {
            // rightward progress, the step-direction analog
            let denom = (grid.width.max(2) - 1) as f64;
            let table = (0..n).map(|s| (s % grid.width) as f64 / denom).collect();
            RewardFunction::Engineered { name: "progress-right".into(), table }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub beta_kl: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// encoder subset size t
    pub enc_samples: usize,
    /// decoder subset size per update
    pub dec_samples: usize,
}

impl Default for FreConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: 64,
            beta_kl: 1e-3,
            epochs: 300,
            learning_rate: 1e-3,
            enc_samples: 64,
            dec_samples: 64,
        }
    }
}

/// Mean-pooled set encoder with a Gaussian bottleneck and a reward decoder.
/// Encoding is exactly permutation-invariant: inputs are canonicalized
/// (sorted, multiplicity-reduced) before pooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreModel {
    embedder: Mlp,
    latent: Mlp,
    decoder: Mlp,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub beta_kl: f64,
}

/// Latent embedding z in R^{d_z}.
pub type LatentEmbedding = Vec<f64>;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Sorted unique (state, reward) pairs with multiplicities divided by their
/// gcd; this makes encode bit-identical under permutation and uniform
/// duplication of the input set.
fn canonicalize(samples: &[(usize, f64)]) -> Vec<(usize, f64, u64)> {
    let mut keyed: Vec<(usize, u64, f64)> =
        samples.iter().map(|&(s, r)| (s, r.to_bits(), r)).collect();
    keyed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out: Vec<(usize, f64, u64)> = Vec::new();
    for (s, bits, r) in keyed {
        match out.last_mut() {
            Some(last) if last.0 == s && last.1.to_bits() == bits => last.2 += 1,
            _ => out.push((s, r, 1)),
        }
    }
    let g = out.iter().fold(0u64, |acc, &(_, _, c)| gcd(acc, c));
    if g > 1 {
        for item in &mut out {
            item.2 /= g;
        }
    }
    out
}

/// Weighted mean/std with the variance floored at 1e-6; rewards are
/// standardized per encoded set, so encode(a*r + b) == encode(r) for a > 0.
fn standardize_stats(canon: &[(usize, f64, u64)]) -> (f64, f64) {
    let total: f64 = canon.iter().map(|&(_, _, c)| c as f64).sum();
    let mean: f64 = canon.iter().map(|&(_, r, c)| c as f64 * r).sum::<f64>() / total;
    let var: f64 =
        canon.iter().map(|&(_, r, c)| c as f64 * (r - mean) * (r - mean)).sum::<f64>() / total;
    (mean, var.max(1e-6).sqrt())
}

/// Standardized reward, clamped so near-constant sample sets (variance at
/// the floor) cannot produce huge targets that destabilize training.
fn standardize(r: f64, mean: f64, std: f64) -> f64 {
    ((r - mean) / std).clamp(-5.0, 5.0)
}

struct EncodeTrace {
    canon: Vec<(usize, f64, u64)>,
    std_rewards: Vec<f64>,
    weights: Vec<f64>,
    pooled: Vec<f64>,
    mean: Vec<f64>,
    logvar: Vec<f64>,
}

impl FreModel {
    pub fn new(feature_dim: usize, config: &FreConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let h = config.hidden;
        let mut latent = Mlp::new(&[h, 2 * config.latent_dim], rng)?;
        // start with small posterior variance (logvar bias = -4) so the
        // reparameterization noise does not drown the latent signal early on
        let nb = latent.params.len();
        for b in &mut latent.params[nb - config.latent_dim..] {
            *b = -4.0;
        }
        Ok(Self {
            embedder: Mlp::new(&[feature_dim + 1, h, h], rng)?,
            latent,
            decoder: Mlp::new(&[config.latent_dim + feature_dim, h, 1], rng)?,
            latent_dim: config.latent_dim,
            feature_dim,
            beta_kl: config.beta_kl,
        })
    }

    fn encode_trace(&self, samples: &[(usize, f64)], features: &FeatureMap) -> Result<EncodeTrace> {
        if samples.is_empty() {
            return Err(Error::Empty("encoder sample set"));
        }
        let canon = canonicalize(samples);
        let (mean_r, std_r) = standardize_stats(&canon);
        let total: f64 = canon.iter().map(|&(_, _, c)| c as f64).sum();
        let mut pooled = vec![0.0; self.embedder.output_dim()];
        let mut std_rewards = Vec::with_capacity(canon.len());
        let mut weights = Vec::with_capacity(canon.len());
        for &(s, r, c) in &canon {
            let rt = standardize(r, mean_r, std_r);
            std_rewards.push(rt);
            let w = c as f64 / total;
            weights.push(w);
            let mut input = features.of(s).to_vec();
            input.push(rt);
            let h = self.embedder.forward(&input);
            for (p, &x) in pooled.iter_mut().zip(h.output()) {
                *p += w * x;
            }
        }
        let lat = self.latent.forward(&pooled);
        let (mean, logvar) = lat.output().split_at(self.latent_dim);
        Ok(EncodeTrace {
            canon,
            std_rewards,
            weights,
            pooled,
            mean: mean.to_vec(),
            logvar: logvar.iter().map(|&lv| lv.clamp(-6.0, 2.0)).collect(),
        })
    }

    /// Deterministic inference: the latent mean of the canonicalized set.
    pub fn encode(&self, samples: &[(usize, f64)], features: &FeatureMap) -> Result<LatentEmbedding> {
        Ok(self.encode_trace(samples, features)?.mean)
    }

    /// Predicted (standardized-scale) reward at `state` given a latent.
    pub fn decode(&self, z: &[f64], state: usize, features: &FeatureMap) -> f64 {
        let mut input = Vec::with_capacity(self.latent_dim + self.feature_dim);
        input.extend_from_slice(z);
        input.extend_from_slice(features.of(state));
        self.decoder.eval_scalar(&input)
    }

    /// Mean embedding over `m` random state subsets of size `t`.
    pub fn mean_embedding(
        &self,
        reward: impl Fn(usize) -> f64,
        states_pool: &[usize],
        features: &FeatureMap,
        m: usize,
        t: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<LatentEmbedding> {
        if m == 0 || t == 0 {
            return Err(Error::invalid("mean_embedding", "m and t must be >= 1"));
        }
        if states_pool.len() < t {
            return Err(Error::invalid(
                "mean_embedding",
                format!("pool of {} smaller than subset size {t}", states_pool.len()),
            ));
        }
        let mut acc = vec![0.0; self.latent_dim];
        for _ in 0..m {
            let subset = sample_without_replacement(states_pool, t, rng);
            let samples: Vec<(usize, f64)> = subset.iter().map(|&s| (s, reward(s))).collect();
            let z = self.encode(&samples, features)?;
            for (a, &x) in acc.iter_mut().zip(&z) {
                *a += x / m as f64;
            }
        }
        Ok(acc)
    }

    pub fn param_hash(&self) -> u64 {
        self.embedder
            .param_hash()
            .wrapping_mul(31)
            .wrapping_add(self.latent.param_hash())
            .wrapping_mul(31)
            .wrapping_add(self.decoder.param_hash())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Held-out decode MSE (mean latent, standardized targets shared with
    /// the encoder subset's statistics). Also returns the constant
    /// mean-predictor baseline MSE on the same targets.
    pub fn decode_mse(
        &self,
        reward: &RewardFunction,
        features: &FeatureMap,
        enc_states: &[usize],
        dec_states: &[usize],
    ) -> Result<(f64, f64)> {
        let samples: Vec<(usize, f64)> =
            enc_states.iter().map(|&s| (s, reward.eval(s, features))).collect();
        let trace = self.encode_trace(&samples, features)?;
        let (mean_r, std_r) = standardize_stats(&trace.canon);
        let targets: Vec<f64> =
            dec_states.iter().map(|&s| standardize(reward.eval(s, features), mean_r, std_r)).collect();
        let mse = dec_states
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let p = self.decode(&trace.mean, s, features);
                (p - t) * (p - t)
            })
            .sum::<f64>()
            / targets.len() as f64;
        let tmean = targets.iter().sum::<f64>() / targets.len() as f64;
        let baseline =
            targets.iter().map(|&t| (t - tmean) * (t - tmean)).sum::<f64>() / targets.len() as f64;
        Ok((mse, baseline))
    }
}

pub fn sample_without_replacement(
    pool: &[usize],
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    debug_assert!(t <= pool.len());
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..t {
        let j = i + rng.random_range(0..idx.len() - i);
        idx.swap(i, j);
    }
    idx[..t].iter().map(|&i| pool[i]).collect()
}

/// Pretrain the encoder/decoder on the reward families: gradient descent on
/// decode MSE plus beta_kl * KL(latent || standard normal), reparameterized
/// sampling during training, mean latent at inference.
pub fn pretrain_fre(
    states_pool: &[usize],
    rewards: &[RewardFunction],
    features: &FeatureMap,
    config: &FreConfig,
    seed: u64,
) -> Result<(FreModel, Vec<f64>)> {
    if states_pool.is_empty() {
        return Err(Error::Empty("states pool"));
    }
    if rewards.is_empty() {
        return Err(Error::Empty("reward list"));
    }
    let mut init_rng = rng::stream(seed, &[0xf2e, 0]);
    let mut model = FreModel::new(features.dim, config, &mut init_rng)?;
    let mut opt_emb = Adam::new(model.embedder.params.len(), config.learning_rate);
    let mut opt_lat = Adam::new(model.latent.params.len(), config.learning_rate);
    let mut opt_dec = Adam::new(model.decoder.params.len(), config.learning_rate);
    let enc_t = config.enc_samples.min(states_pool.len());
    let dec_t = config.dec_samples.min(states_pool.len());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut r = rng::stream(seed, &[0xf2e, 1, epoch as u64]);
        let mut order: Vec<usize> = (0..rewards.len()).collect();
        for i in 0..order.len() {
            let j = i + r.random_range(0..order.len() - i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for &ri in &order {
            let reward = &rewards[ri];
            let enc_states = sample_without_replacement(states_pool, enc_t, &mut r);
            let dec_states = sample_without_replacement(states_pool, dec_t, &mut r);
            let samples: Vec<(usize, f64)> =
                enc_states.iter().map(|&s| (s, reward.eval(s, features))).collect();
            let trace = model.encode_trace(&samples, features)?;
            let (mean_r, std_r) = standardize_stats(&trace.canon);

            // reparameterized latent
            let mut z = vec![0.0; model.latent_dim];
            let mut eps = vec![0.0; model.latent_dim];
            let mut i = 0;
            while i < model.latent_dim {
                let (a, b) = normal_pair(&mut r);
                eps[i] = a;
                if i + 1 < model.latent_dim {
                    eps[i + 1] = b;
                }
                i += 2;
            }
            for k in 0..model.latent_dim {
                z[k] = trace.mean[k] + (0.5 * trace.logvar[k]).exp() * eps[k];
            }

            // decode loss and gradient wrt z / decoder params
            let mut dec_grads = vec![0.0; model.decoder.params.len()];
            let mut grad_z = vec![0.0; model.latent_dim];
            let mut mse = 0.0;
            for &s in &dec_states {
                let target = standardize(reward.eval(s, features), mean_r, std_r);
                let mut input = Vec::with_capacity(model.latent_dim + model.feature_dim);
                input.extend_from_slice(&z);
                input.extend_from_slice(features.of(s));
                let cache = model.decoder.forward(&input);
                let pred = cache.output()[0];
                let err = pred - target;
                mse += err * err / dec_states.len() as f64;
                let gout = 2.0 * err / dec_states.len() as f64;
                let gin = model.decoder.backward(&cache, &[gout], &mut dec_grads);
                for k in 0..model.latent_dim {
                    grad_z[k] += gin[k];
                }
            }

            // KL(N(mu, sigma^2) || N(0,1)) term and gradients
            let mut kl = 0.0;
            let mut grad_mean = vec![0.0; model.latent_dim];
            let mut grad_logvar = vec![0.0; model.latent_dim];
            for k in 0..model.latent_dim {
                let (mu, lv) = (trace.mean[k], trace.logvar[k]);
                kl += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
                grad_mean[k] = model.beta_kl * mu;
                grad_logvar[k] = model.beta_kl * 0.5 * (lv.exp() - 1.0);
                // path through z = mu + exp(lv/2) * eps
                grad_mean[k] += grad_z[k];
                grad_logvar[k] += grad_z[k] * 0.5 * (0.5 * lv).exp() * eps[k];
            }
            epoch_loss += (mse + model.beta_kl * kl) / rewards.len() as f64;

            // backprop through latent head and pooled embedder
            let mut lat_grads = vec![0.0; model.latent.params.len()];
            let mut lat_out_grad = grad_mean;
            lat_out_grad.extend_from_slice(&grad_logvar);
            let lat_cache = model.latent.forward(&trace.pooled);
            let grad_pooled = model.latent.backward(&lat_cache, &lat_out_grad, &mut lat_grads);

            let mut emb_grads = vec![0.0; model.embedder.params.len()];
            for ((&(s, _, _), &rt), &w) in
                trace.canon.iter().zip(&trace.std_rewards).zip(&trace.weights)
            {
                let mut input = features.of(s).to_vec();
                input.push(rt);
                let cache = model.embedder.forward(&input);
                let gout: Vec<f64> = grad_pooled.iter().map(|&g| g * w).collect();
                model.embedder.backward(&cache, &gout, &mut emb_grads);
            }

            opt_dec.step(&mut model.decoder.params, &dec_grads);
            opt_lat.step(&mut model.latent.params, &lat_grads);
            opt_emb.step(&mut model.embedder.params, &emb_grads);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite FRE loss at epoch {epoch}")));
        }
        losses.push(epoch_loss);
    }
    Ok((model, losses))
}
