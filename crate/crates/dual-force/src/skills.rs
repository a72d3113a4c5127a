//! Skill storage and policy updates: softmax policies (tabular or
//! latent-conditioned), weighted behavioral cloning, Polyak averaging of
//! dataset weights, and a recallable skill bank keyed by embeddings.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::dice::DatasetWeights;
use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, TabularPolicy};
use crate::nn::{self, Adam, Mlp};

/// Softmax policy over actions; either a per-state logit table or a network
/// over (state features ++ skill latent).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyModel {
    Tabular { num_states: usize, num_actions: usize, logits: Vec<f64> },
    Conditioned { net: Mlp, num_actions: usize, latent_dim: usize },
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl PolicyModel {
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        PolicyModel::Tabular {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * num_actions],
        }
    }

    pub fn conditioned(
        feature_dim: usize,
        latent_dim: usize,
        num_actions: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let net = Mlp::new(&[feature_dim + latent_dim, hidden, hidden, num_actions], rng)?;
        Ok(PolicyModel::Conditioned { net, num_actions, latent_dim })
    }

    pub fn num_actions(&self) -> usize {
        match self {
            PolicyModel::Tabular { num_actions, .. } => *num_actions,
            PolicyModel::Conditioned { num_actions, .. } => *num_actions,
        }
    }

    fn logits_at(&self, s: usize, features: &FeatureMap, z: Option<&[f64]>) -> Vec<f64> {
        match self {
            PolicyModel::Tabular { num_actions, logits, .. } => {
                logits[s * num_actions..][..*num_actions].to_vec()
            }
            PolicyModel::Conditioned { net, latent_dim, .. } => {
                let phi = features.of(s);
                let mut input = Vec::with_capacity(phi.len() + latent_dim);
                input.extend_from_slice(phi);
                match z {
                    Some(z) => input.extend_from_slice(z),
                    None => input.extend(std::iter::repeat(0.0).take(*latent_dim)),
                }
                net.forward(&input).output().to_vec()
            }
        }
    }

    pub fn action_probs(&self, s: usize, features: &FeatureMap, z: Option<&[f64]>) -> Vec<f64> {
        softmax(&self.logits_at(s, features, z))
    }

    /// Materialize as a dense tabular policy (fixing z for conditioned nets).
    pub fn to_tabular(&self, features: &FeatureMap, z: Option<&[f64]>) -> Result<TabularPolicy> {
        let num_states = features.num_states();
        let num_actions = self.num_actions();
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            probs.extend(self.action_probs(s, features, z));
        }
        TabularPolicy::new(num_states, num_actions, probs)
    }

    pub fn param_count(&self) -> usize {
        match self {
            PolicyModel::Tabular { logits, .. } => logits.len(),
            PolicyModel::Conditioned { net, .. } => net.params.len(),
        }
    }

    pub fn param_hash(&self) -> u64 {
        match self {
            PolicyModel::Tabular { logits, .. } => nn::hash_f64s(logits),
            PolicyModel::Conditioned { net, .. } => net.param_hash(),
        }
    }
}

/// Weighted behavioral cloning loss over `batch` (full dataset when None):
/// -(|D|/|B|) sum_{i in B} w_i log pi(a_i | s_i). Returns the loss; applies
/// one Adam (or plain SGD) step.
pub fn policy_bc_step(
    policy: &mut PolicyModel,
    dataset: &OfflineDataset,
    weights: &DatasetWeights,
    batch: Option<&[usize]>,
    features: &FeatureMap,
    z: Option<&[f64]>,
    learning_rate: f64,
    opt: Option<&mut Adam>,
) -> Result<f64> {
    if weights.len() != dataset.transitions.len() {
        return Err(Error::DimensionMismatch("weights vs dataset".into()));
    }
    let owned: Vec<usize>;
    let indices: &[usize] = match batch {
        Some(b) => {
            if b.is_empty() {
                return Err(Error::Empty("batch"));
            }
            b
        }
        None => {
            owned = (0..dataset.transitions.len()).collect();
            &owned
        }
    };
    let scale = dataset.transitions.len() as f64 / indices.len() as f64;
    let mut loss = 0.0;
    match policy {
        PolicyModel::Tabular { num_actions, logits, .. } => {
            let na = *num_actions;
            let mut grads = vec![0.0; logits.len()];
            for &i in indices {
                let t = &dataset.transitions[i];
                let w = weights.w[i];
                let p = softmax(&logits[t.state * na..][..na]);
                loss -= scale * w * p[t.action].max(1e-300).ln();
                for a in 0..na {
                    let ind = if a == t.action { 1.0 } else { 0.0 };
                    grads[t.state * na + a] += scale * w * (p[a] - ind);
                }
            }
            match opt {
                Some(o) => o.step(logits, &grads),
                None => nn::sgd_step(logits, &grads, learning_rate),
            }
        }
        PolicyModel::Conditioned { net, num_actions, latent_dim } => {
            let na = *num_actions;
            let mut grads = vec![0.0; net.params.len()];
            // the network input depends only on the state, so pool the
            // weighted action counts and backprop once per visited state
            let mut mass = vec![0.0f64; features.num_states() * na];
            for &i in indices {
                let t = &dataset.transitions[i];
                mass[t.state * na + t.action] += scale * weights.w[i];
            }
            for s in 0..features.num_states() {
                let row = &mass[s * na..(s + 1) * na];
                let total: f64 = row.iter().sum();
                if total == 0.0 {
                    continue;
                }
                let phi = features.of(s);
                let mut input = Vec::with_capacity(phi.len() + *latent_dim);
                input.extend_from_slice(phi);
                match z {
                    Some(z) => input.extend_from_slice(z),
                    None => input.extend(std::iter::repeat(0.0).take(*latent_dim)),
                }
                let cache = net.forward(&input);
                let p = softmax(cache.output());
                let gout: Vec<f64> = (0..na)
                    .map(|a| {
                        loss -= row[a] * p[a].max(1e-300).ln();
                        total * p[a] - row[a]
                    })
                    .collect();
                net.backward(&cache, &gout, &mut grads);
            }
            match opt {
                Some(o) => o.step(&mut net.params, &grads),
                None => nn::sgd_step(&mut net.params, &grads, learning_rate),
            }
        }
    }
    Ok(loss)
}

/// Random initial dataset weights: independent Exp(1) draws normalized to
/// the simplex, so every record starts with positive weight and different
/// skills start from different points.
pub fn init_weights(n: usize, rng: &mut ChaCha8Rng) -> Result<DatasetWeights> {
    if n == 0 {
        return Err(Error::Empty("dataset weights"));
    }
    let mut w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    Ok(DatasetWeights { w })
}

/// w_new <- (1 - alpha) * w_old + alpha * w_target (stays on the simplex).
pub fn polyak_update(old: &mut DatasetWeights, target: &DatasetWeights, alpha: f64) -> Result<()> {
    if old.len() != target.len() {
        return Err(Error::DimensionMismatch("polyak weight lengths".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} not in [0,1]")));
    }
    for (o, &t) in old.w.iter_mut().zip(&target.w) {
        *o = (1.0 - alpha) * *o + alpha * t;
    }
    Ok(())
}

/// One row of the per-skill training log; written to metrics.csv and to the
/// skill bank's embedding history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub phi: f64,
    pub sigma_mu: f64,
    pub ell: f64,
    pub dual_obj: f64,
    pub vdw_obj: f64,
    /// Monte-Carlo return of the skill at this iteration, when the trainer
    /// was given the hidden reward for logging.
    #[serde(default)]
    pub mean_return: Option<f64>,
    #[serde(default)]
    pub return_stderr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillSlot {
    pub policy: PolicyModel,
    pub mu: f64,
    pub latest_z: Option<Vec<f64>>,
    pub embeddings: Vec<EmbeddingRecord>,
}

/// Trained skills plus their embedding histories; serializable to a
/// directory of JSON files for the recall/eval tools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillBank {
    pub num_states: usize,
    pub num_actions: usize,
    pub skills: Vec<SkillSlot>,
}

impl SkillBank {
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (i, slot) in self.skills.iter().enumerate() {
            std::fs::write(dir.join(format!("skill_{i}.json")), serde_json::to_string_pretty(slot)?)?;
        }
        let index = serde_json::json!({
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "num_skills": self.skills.len(),
        });
        std::fs::write(dir.join("bank.json"), serde_json::to_string_pretty(&index)?)?;
        let histories: Vec<&Vec<EmbeddingRecord>> =
            self.skills.iter().map(|s| &s.embeddings).collect();
        std::fs::write(dir.join("embeddings.json"), serde_json::to_string_pretty(&histories)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("bank.json"))?)?;
        let n = index["num_skills"]
            .as_u64()
            .ok_or(Error::MissingConfig("num_skills"))? as usize;
        let mut skills = Vec::with_capacity(n);
        for i in 0..n {
            let slot: SkillSlot =
                serde_json::from_str(&std::fs::read_to_string(dir.join(format!("skill_{i}.json")))?)?;
            skills.push(slot);
        }
        Ok(Self {
            num_states: index["num_states"].as_u64().ok_or(Error::MissingConfig("num_states"))?
                as usize,
            num_actions: index["num_actions"]
                .as_u64()
                .ok_or(Error::MissingConfig("num_actions"))? as usize,
            skills,
        })
    }

    /// Nearest stored skill by L2 distance between `z` and each skill's
    /// final embedding. Returns (index, distance).
    pub fn recall(&self, z: &[f64]) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, slot) in self.skills.iter().enumerate() {
            let zi = slot.latest_z.as_ref().ok_or_else(|| {
                Error::invalid("skill bank", format!("skill {i} has no stored embedding"))
            })?;
            if zi.len() != z.len() {
                return Err(Error::DimensionMismatch("query latent length".into()));
            }
            let d = zi.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.ok_or(Error::Empty("skill bank"))
    }
}
