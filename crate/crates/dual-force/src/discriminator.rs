//! State discriminator separating expert states from offline states; its
//! log-odds is the imitation reward. At the optimum
//! c(s) = d_E(s) / (d_E(s) + d_O(s)).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExpertDataset, OfflineDataset};
use crate::error::{Error, Result};
use crate::mdp::FeatureMap;
use crate::rng;

pub const DEFAULT_CLIP_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorMode {
    ExactCount,
    LearnedLogistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Discriminator {
    /// Per-state table built from empirical state frequencies.
    ExactCount { c: Vec<f64>, clip_floor: f64 },
    /// Logistic scorer over state features, trained with a gradient
    /// penalty at interpolated inputs.
    LearnedLogistic {
        weights: Vec<f64>,
        bias: f64,
        features: FeatureMap,
        clip_floor: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub mode: DiscriminatorMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub grad_penalty_coef: f64,
    pub penalty_samples: usize,
    pub clip_floor: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            mode: DiscriminatorMode::ExactCount,
            epochs: 2000,
            learning_rate: 1.0,
            grad_penalty_coef: 10.0,
            penalty_samples: 64,
            clip_floor: DEFAULT_CLIP_FLOOR,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn state_frequencies(states: impl Iterator<Item = usize>, num_states: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_states];
    let mut total = 0.0;
    for s in states {
        counts[s] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// Fit result: the discriminator plus the per-epoch training objective
/// (empty for exact-count mode).
pub struct DiscriminatorFit {
    pub discriminator: Discriminator,
    pub objective_per_epoch: Vec<f64>,
}

pub fn fit_discriminator(
    expert: &ExpertDataset,
    offline: &OfflineDataset,
    config: &DiscConfig,
    features: &FeatureMap,
    seed: u64,
) -> Result<DiscriminatorFit> {
    if expert.states.is_empty() {
        return Err(Error::Empty("expert dataset"));
    }
    if offline.transitions.is_empty() {
        return Err(Error::Empty("offline dataset"));
    }
    match config.mode {
        DiscriminatorMode::ExactCount => {
            let n = offline.meta.num_states;
            let de = state_frequencies(expert.states.iter().copied(), n);
            let dof = state_frequencies(offline.transitions.iter().map(|t| t.state), n);
            let floor = config.clip_floor;
            let c = (0..n)
                .map(|s| {
                    let denom = de[s] + dof[s];
                    let raw = if denom > 0.0 { de[s] / denom } else { 0.0 };
                    raw.clamp(floor, 1.0 - floor)
                })
                .collect();
            Ok(DiscriminatorFit {
                discriminator: Discriminator::ExactCount { c, clip_floor: floor },
                objective_per_epoch: Vec::new(),
            })
        }
        DiscriminatorMode::LearnedLogistic => fit_logistic(expert, offline, config, features, seed),
    }
}

struct LogisticProblem<'a> {
    expert_x: Vec<&'a [f64]>,
    offline_x: Vec<&'a [f64]>,
    /// interpolation points for the gradient penalty, fixed at fit start
    penalty_x: Vec<Vec<f64>>,
    coef: f64,
}

impl LogisticProblem<'_> {
    /// Objective (to maximize) and its gradient in (weights, bias).
    fn eval(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let d = w.len();
        let mut obj = 0.0;
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        let ne = self.expert_x.len() as f64;
        for x in &self.expert_x {
            let z: f64 = w.iter().zip(*x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
            let c = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
            obj += c.ln() / ne;
            let g = (1.0 - c) / ne; // d/dz log sigmoid(z)
            for (gi, xi) in gw.iter_mut().zip(*x) {
                *gi += g * xi;
            }
            gb += g;
        }
        let no = self.offline_x.len() as f64;
        for x in &self.offline_x {
            let z: f64 = w.iter().zip(*x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
            let c = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
            obj += (1.0 - c).ln() / no;
            let g = -c / no;
            for (gi, xi) in gw.iter_mut().zip(*x) {
                *gi += g * xi;
            }
            gb += g;
        }
        if self.coef > 0.0 && !self.penalty_x.is_empty() {
            // ||grad_x c(x)|| = sigmoid'(z) * ||w||; penalize (norm - 1)^2
            let np = self.penalty_x.len() as f64;
            let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &self.penalty_x {
                let z: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
                let c = sigmoid(z);
                let sp = c * (1.0 - c); // sigmoid'
                let spp = sp * (1.0 - 2.0 * c); // sigmoid''
                let g = sp * wnorm;
                obj -= self.coef * (g - 1.0) * (g - 1.0) / np;
                let scale = -2.0 * self.coef * (g - 1.0) / np;
                for i in 0..d {
                    gw[i] += scale * (spp * x[i] * wnorm + sp * w[i] / wnorm);
                }
                gb += scale * spp * wnorm;
            }
        }
        (obj, gw, gb)
    }
}

fn fit_logistic(
    expert: &ExpertDataset,
    offline: &OfflineDataset,
    config: &DiscConfig,
    features: &FeatureMap,
    seed: u64,
) -> Result<DiscriminatorFit> {
    let d = features.dim;
    let expert_x: Vec<&[f64]> = expert.states.iter().map(|&s| features.of(s)).collect();
    let offline_x: Vec<&[f64]> =
        offline.transitions.iter().map(|t| features.of(t.state)).collect();
    let mut r = rng::stream(seed, &[0xd15c]);
    let penalty_x: Vec<Vec<f64>> = (0..config.penalty_samples)
        .map(|_| {
            let xe = expert_x[r.random_range(0..expert_x.len())];
            let xo = offline_x[r.random_range(0..offline_x.len())];
            let u: f64 = r.random();
            xe.iter().zip(xo).map(|(a, b)| u * a + (1.0 - u) * b).collect()
        })
        .collect();
    let problem = LogisticProblem { expert_x, offline_x, penalty_x, coef: config.grad_penalty_coef };

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut step = config.learning_rate;
    let (mut obj, mut gw, mut gb) = problem.eval(&w, b);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        // backtracking ascent keeps the full-batch objective non-decreasing
        loop {
            let w_try: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi + step * gi).collect();
            let b_try = b + step * gb;
            let (obj_try, gw_try, gb_try) = problem.eval(&w_try, b_try);
            if obj_try >= obj || step < 1e-12 {
                w = w_try;
                b = b_try;
                obj = obj_try;
                gw = gw_try;
                gb = gb_try;
                step = (step * 2.0).min(config.learning_rate * 8.0);
                break;
            }
            step *= 0.5;
        }
        history.push(obj);
    }
    Ok(DiscriminatorFit {
        discriminator: Discriminator::LearnedLogistic {
            weights: w,
            bias: b,
            features: features.clone(),
            clip_floor: config.clip_floor,
        },
        objective_per_epoch: history,
    })
}

impl Discriminator {
    pub fn clip_floor(&self) -> f64 {
        match self {
            Discriminator::ExactCount { clip_floor, .. } => *clip_floor,
            Discriminator::LearnedLogistic { clip_floor, .. } => *clip_floor,
        }
    }

    /// c(s) in [clip_floor, 1 - clip_floor].
    pub fn c(&self, s: usize) -> f64 {
        match self {
            Discriminator::ExactCount { c, .. } => c[s],
            Discriminator::LearnedLogistic { weights, bias, features, clip_floor } => {
                let z: f64 =
                    weights.iter().zip(features.of(s)).map(|(w, x)| w * x).sum::<f64>() + bias;
                sigmoid(z).clamp(*clip_floor, 1.0 - *clip_floor)
            }
        }
    }

    /// log(c / (1-c)); bounded by the clip floor.
    pub fn log_odds(&self, s: usize) -> f64 {
        let c = self.c(s);
        (c / (1.0 - c)).ln()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
