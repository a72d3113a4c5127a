//! The main training loop: alternating diversity-snapshot, value/policy,
//! and multiplier phases, plus the single-skill imitation baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::dice::{
    dual_objective, softmax_weights, td_errors, value_gradient_step, BackupMode, DatasetWeights,
    DualValue,
};
use crate::discriminator::Discriminator;
use crate::diversity::{l2_distance, nearest_rival, successor_features, SuccessorFeatures};
use crate::error::{Error, Result};
use crate::fre::FreModel;
use crate::lagrange::{combined_reward, sigmoid, Multipliers};
use crate::mdp::{FeatureMap, TabularMdp};
use crate::nn::Adam;
use crate::rng;
use crate::skills::{
    init_weights, policy_bc_step, polyak_update, EmbeddingRecord, PolicyModel, SkillBank, SkillSlot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Latent-conditioned value/policy networks, sampled backups.
    Amortized,
    /// Tabular value and policy with exact model backups and the
    /// closed-form weighted-ML policy update. Requires the true MDP.
    ExactTabular,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub num_skills: usize,
    pub max_iterations: usize,
    pub polyak_alpha: f64,
    pub value_lr: f64,
    pub policy_lr: f64,
    pub multiplier_lr: f64,
    /// KL budget epsilon in nats
    pub epsilon: f64,
    /// equilibrium distance; None picks 0.5 * feature-space diameter
    pub ell0: Option<f64>,
    /// FRE subsets per embedding (m) and subset size (t)
    pub fre_subsets: usize,
    pub fre_subset_size: usize,
    pub batch_size: Option<usize>,
    pub value_steps_per_iter: usize,
    pub hidden: usize,
    /// stop once max_i ||psi_i^{k+1} - psi_i^k|| stays below this ...
    pub snapshot_tol: f64,
    /// ... for this many consecutive iterations
    pub patience: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub parallel: bool,
    pub log_every: usize,
    /// rollout episodes per logged return estimate
    pub eval_episodes: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            num_skills: 3,
            max_iterations: 5000,
            polyak_alpha: 0.05,
            value_lr: 3e-4,
            policy_lr: 3e-4,
            multiplier_lr: 0.05,
            epsilon: 1.0,
            ell0: None,
            fre_subsets: 8,
            fre_subset_size: 64,
            batch_size: None,
            value_steps_per_iter: 1,
            hidden: 64,
            snapshot_tol: 1e-6,
            patience: 50,
            mode: TrainMode::Amortized,
            seed: 0,
            parallel: false,
            log_every: 10,
            eval_episodes: 30,
        }
    }
}

/// Half the feature-space diameter: a scale at which skills can actually
/// separate without the attractive tail dominating immediately.
pub fn default_ell0(features: &FeatureMap) -> f64 {
    let n = features.num_states();
    let mut diam = 0.0f64;
    for a in 0..n {
        for b in (a + 1)..n {
            diam = diam.max(l2_distance(features.of(a), features.of(b)));
        }
    }
    0.5 * diam.max(f64::MIN_POSITIVE)
}

pub struct TrainInputs<'a> {
    pub dataset: &'a OfflineDataset,
    pub discriminator: &'a Discriminator,
    pub features: &'a FeatureMap,
    pub fre: Option<&'a FreModel>,
    /// required for ExactTabular mode
    pub mdp: Option<&'a TabularMdp>,
    /// per-state evaluation reward; when given together with the MDP, each
    /// logged embedding also records a Monte-Carlo return estimate
    pub hidden_reward: Option<&'a [f64]>,
}

/// One metrics.csv row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub skill: usize,
    pub phi: f64,
    pub sigma_mu: f64,
    pub ell: f64,
    pub dual_obj: f64,
    pub vdw_obj: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,skill,phi,sigma_mu,ell,dual_obj,vdw_obj,embedding\n");
        for r in &self.rows {
            let z = r
                .z
                .iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
                r.iteration, r.skill, r.phi, r.sigma_mu, r.ell, r.dual_obj, r.vdw_obj, z
            ));
        }
        out
    }
}

pub struct TrainResult {
    pub bank: SkillBank,
    pub metrics: MetricsLog,
    pub weights: Vec<DatasetWeights>,
    pub values: Vec<DualValue>,
    pub multipliers: Multipliers,
    pub iterations_run: usize,
    pub converged: bool,
    pub ell0: f64,
}

struct SkillState {
    weights: DatasetWeights,
    value: DualValue,
    value_opt: Adam,
    policy: PolicyModel,
    policy_opt: Adam,
    z: Vec<f64>,
    prev_psi: Option<Vec<f64>>,
    // per-iteration stats filled during the update phase
    phi: f64,
    dual_obj: f64,
    embeddings: Vec<EmbeddingRecord>,
}

pub fn dual_force_train(inputs: &TrainInputs, config: &TrainerConfig) -> Result<TrainResult> {
    train_loop(inputs, config, false)
}

/// Pure imitation baseline: one skill, reward = discriminator log-odds, no
/// diversity force and no multiplier updates.
pub fn smodice_baseline_train(inputs: &TrainInputs, config: &TrainerConfig) -> Result<TrainResult> {
    let mut cfg = config.clone();
    cfg.num_skills = 1;
    train_loop(inputs, &cfg, true)
}

fn train_loop(inputs: &TrainInputs, config: &TrainerConfig, baseline: bool) -> Result<TrainResult> {
    let ds = inputs.dataset;
    ds.validate()?;
    let n_rec = ds.transitions.len();
    let features = inputs.features;
    if features.num_states() != ds.meta.num_states {
        return Err(Error::DimensionMismatch("features vs dataset".into()));
    }
    if config.num_skills == 0 {
        return Err(Error::invalid("num_skills", "must be >= 1"));
    }
    if config.mode == TrainMode::ExactTabular && inputs.mdp.is_none() {
        return Err(Error::MissingConfig("mdp (required for exact-tabular mode)"));
    }
    let gamma = ds.meta.gamma;
    let ell0 = match config.ell0 {
        Some(x) if x > 0.0 => x,
        Some(x) => return Err(Error::invalid("ell0", format!("{x} must be positive"))),
        None => default_ell0(features),
    };

    // per-record state features and discriminator log-odds, fixed all run
    let record_features: Vec<&[f64]> =
        ds.transitions.iter().map(|t| features.of(t.state)).collect();
    let lo_table: Vec<f64> =
        (0..ds.meta.num_states).map(|s| inputs.discriminator.log_odds(s)).collect();
    let lo_records: Vec<f64> = ds.transitions.iter().map(|t| lo_table[t.state]).collect();
    let mut state_pool: Vec<usize> = {
        let mut seen = vec![false; ds.meta.num_states];
        for t in &ds.transitions {
            seen[t.state] = true;
            seen[t.next_state] = true;
        }
        (0..ds.meta.num_states).filter(|&s| seen[s]).collect()
    };
    state_pool.sort_unstable();
    let fre_t = config.fre_subset_size.min(state_pool.len()).max(1);

    let latent_dim = inputs.fre.map_or(0, |f| f.latent_dim);
    let mut skills: Vec<SkillState> = (0..config.num_skills)
        .map(|i| -> Result<SkillState> {
            let weights = init_weights(n_rec, &mut rng::stream(config.seed, &[0x17, i as u64]))?;
            let value = match config.mode {
                TrainMode::ExactTabular => DualValue::tabular(ds.meta.num_states),
                TrainMode::Amortized => DualValue::conditioned(
                    features.dim,
                    latent_dim,
                    config.hidden,
                    &mut rng::stream(config.seed, &[0x18, i as u64]),
                )?,
            };
            let policy = match config.mode {
                TrainMode::ExactTabular => {
                    PolicyModel::tabular(ds.meta.num_states, ds.meta.num_actions)
                }
                TrainMode::Amortized => PolicyModel::conditioned(
                    features.dim,
                    latent_dim,
                    ds.meta.num_actions,
                    config.hidden,
                    &mut rng::stream(config.seed, &[0x19, i as u64]),
                )?,
            };
            let nvp = match &value {
                DualValue::Tabular { v } => v.len(),
                DualValue::Conditioned { net, .. } => net.params.len(),
            };
            Ok(SkillState {
                value_opt: Adam::new(nvp, config.value_lr),
                policy_opt: Adam::new(policy.param_count(), config.policy_lr),
                weights,
                value,
                policy,
                z: vec![0.0; latent_dim],
                prev_psi: None,
                phi: 0.0,
                dual_obj: 0.0,
                embeddings: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;

    let mut multipliers = Multipliers::new(config.num_skills);
    let mut metrics = MetricsLog::default();
    let mut streak = 0usize;
    let mut converged = false;
    let mut iterations_run = 0usize;

    for k in 0..config.max_iterations {
        iterations_run = k + 1;

        // ---- phase 1: frozen diversity snapshot -------------------------
        let psis: Vec<SuccessorFeatures> = skills
            .iter()
            .map(|s| successor_features(&s.weights, &record_features))
            .collect::<Result<_>>()?;
        let mut snapshot_drift = 0.0f64;
        for (s, psi) in skills.iter_mut().zip(&psis) {
            if let Some(prev) = &s.prev_psi {
                snapshot_drift = snapshot_drift.max(l2_distance(prev, &psi.psi));
            } else {
                snapshot_drift = f64::INFINITY;
            }
            s.prev_psi = Some(psi.psi.clone());
        }

        // (rival diff, ell, vdw coefficient) per skill; a lone skill has no
        // diversity force
        let forces: Vec<(Vec<f64>, f64, f64)> = (0..config.num_skills)
            .map(|i| -> Result<(Vec<f64>, f64, f64)> {
                if baseline || config.num_skills < 2 {
                    return Ok((vec![0.0; features.dim], 0.0, 0.0));
                }
                let (j, ell) = nearest_rival(&psis, i)?;
                let diff: Vec<f64> =
                    psis[i].psi.iter().zip(&psis[j].psi).map(|(a, b)| a - b).collect();
                let coef = 1.0 - (ell / ell0).powi(3);
                Ok((diff, ell, coef))
            })
            .collect::<Result<_>>()?;

        let mus = multipliers.mu.clone();
        let seed = config.seed;
        let mode = config.mode;
        let mdp = inputs.mdp;
        let fre = inputs.fre;
        let log_now = k % config.log_every.max(1) == 0 || k + 1 == config.max_iterations;

        // ---- phases 2+3 per skill: rewards, value, weights, policy ------
        let update = |(i, s): (usize, &mut SkillState)| -> Result<f64> {
            let (diff, _ell, coef) = &forces[i];
            let state_reward = |st: usize| -> f64 {
                let beta: f64 = if baseline {
                    0.0
                } else {
                    coef * features.of(st).iter().zip(diff).map(|(f, d)| f * d).sum::<f64>()
                };
                if baseline {
                    lo_table[st]
                } else {
                    combined_reward(beta, lo_table[st], mus[i])
                }
            };
            let rewards: Vec<f64> =
                ds.transitions.iter().map(|t| state_reward(t.state)).collect();

            if let Some(fre) = fre {
                let mut zr = rng::stream(seed, &[0x21, i as u64, k as u64]);
                s.z = fre.mean_embedding(
                    state_reward,
                    &state_pool,
                    features,
                    config.fre_subsets.max(1),
                    fre_t,
                    &mut zr,
                )?;
            }
            let z = if latent_dim > 0 { Some(s.z.as_slice()) } else { None };

            let backup = || match mode {
                TrainMode::ExactTabular => BackupMode::Exact(mdp.unwrap()),
                TrainMode::Amortized => BackupMode::Sampled,
            };
            for step in 0..config.value_steps_per_iter.max(1) {
                let batch = config.batch_size.map(|b| {
                    let mut br = rng::stream(seed, &[0x20, i as u64, k as u64, step as u64]);
                    crate::fre::sample_without_replacement(
                        &(0..n_rec).collect::<Vec<_>>(),
                        b.min(n_rec),
                        &mut br,
                    )
                });
                value_gradient_step(
                    &mut s.value,
                    &rewards,
                    ds,
                    batch.as_deref(),
                    gamma,
                    features,
                    z,
                    config.value_lr,
                    backup(),
                    Some(&mut s.value_opt),
                )?;
            }

            // full-dataset weight refresh, then Polyak averaging
            let deltas = td_errors(&s.value, &rewards, ds, gamma, features, z, backup())?;
            let target = softmax_weights(&deltas)?;
            polyak_update(&mut s.weights, &target, config.polyak_alpha)?;

            match mode {
                TrainMode::ExactTabular => {
                    set_weighted_ml_policy(&mut s.policy, ds, &s.weights)?;
                }
                TrainMode::Amortized => {
                    let batch = config.batch_size.map(|b| {
                        let mut br = rng::stream(seed, &[0x22, i as u64, k as u64]);
                        crate::fre::sample_without_replacement(
                            &(0..n_rec).collect::<Vec<_>>(),
                            b.min(n_rec),
                            &mut br,
                        )
                    });
                    policy_bc_step(
                        &mut s.policy,
                        ds,
                        &s.weights,
                        batch.as_deref(),
                        features,
                        z,
                        config.policy_lr,
                        Some(&mut s.policy_opt),
                    )?;
                }
            }

            s.phi = crate::dice::kl_constraint_estimate(&s.weights, &lo_records, n_rec)?;
            if log_now {
                s.dual_obj = dual_objective(&s.value, &rewards, ds, gamma, features, z, backup())?.0;
            }
            Ok(s.phi)
        };

        let phis: Vec<f64> = if config.parallel {
            skills
                .par_iter_mut()
                .enumerate()
                .map(update)
                .collect::<Result<Vec<f64>>>()?
        } else {
            skills.iter_mut().enumerate().map(update).collect::<Result<Vec<f64>>>()?
        };

        // ---- phase 4: multiplier ascent ---------------------------------
        if !baseline {
            multipliers.step(&phis, config.epsilon, config.multiplier_lr)?;
        }

        if log_now {
            for (i, s) in skills.iter_mut().enumerate() {
                let ell = forces[i].1;
                let vdw_term = if baseline || config.num_skills < 2 {
                    0.0
                } else {
                    0.5 * ell * ell - 0.2 * ell.powi(5) / ell0.powi(3)
                };
                let sigma_mu = if baseline { 1.0 } else { sigmoid(multipliers.mu[i]) };
                let (mean_return, return_stderr) = match (inputs.hidden_reward, inputs.mdp) {
                    (Some(hr), Some(mdp)) => {
                        let z = if latent_dim > 0 { Some(s.z.as_slice()) } else { None };
                        let pi = s.policy.to_tabular(features, z)?;
                        let ecfg = crate::eval::EvalConfig {
                            episodes: config.eval_episodes,
                            seed: config.seed,
                            ..crate::eval::EvalConfig::default()
                        };
                        let tag = ((i as u64) << 32) | k as u64;
                        let e = crate::eval::rollout_eval(mdp, &pi, hr, features, &ecfg, tag)?;
                        (Some(e.mean_return), Some(e.stderr))
                    }
                    _ => (None, None),
                };
                metrics.rows.push(MetricsRow {
                    iteration: k,
                    skill: i,
                    phi: s.phi,
                    sigma_mu,
                    ell,
                    dual_obj: s.dual_obj,
                    vdw_obj: vdw_term,
                    z: s.z.clone(),
                });
                s.embeddings.push(EmbeddingRecord {
                    iteration: k,
                    z: s.z.clone(),
                    phi: s.phi,
                    sigma_mu,
                    ell,
                    dual_obj: s.dual_obj,
                    vdw_obj: vdw_term,
                    mean_return,
                    return_stderr,
                });
            }
        }

        if snapshot_drift < config.snapshot_tol {
            streak += 1;
            if streak >= config.patience {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }

    let bank = SkillBank {
        num_states: ds.meta.num_states,
        num_actions: ds.meta.num_actions,
        skills: skills
            .iter()
            .map(|s| SkillSlot {
                policy: s.policy.clone(),
                mu: 0.0,
                latest_z: Some(s.z.clone()),
                embeddings: s.embeddings.clone(),
            })
            .collect(),
    };
    let mut bank = bank;
    for (slot, &mu) in bank.skills.iter_mut().zip(&multipliers.mu) {
        slot.mu = mu;
    }
    Ok(TrainResult {
        bank,
        metrics,
        weights: skills.iter().map(|s| s.weights.clone()).collect(),
        values: skills.iter().map(|s| s.value.clone()).collect(),
        multipliers,
        iterations_run,
        converged,
        ell0,
    })
}

/// Closed-form weighted-ML policy: pi(a|s) proportional to the total weight
/// of dataset records at (s, a); unvisited states fall back to uniform.
fn set_weighted_ml_policy(
    policy: &mut PolicyModel,
    ds: &OfflineDataset,
    weights: &DatasetWeights,
) -> Result<()> {
    let PolicyModel::Tabular { num_states, num_actions, logits } = policy else {
        return Err(Error::invalid("policy", "closed-form update needs a tabular policy"));
    };
    let (ns, na) = (*num_states, *num_actions);
    let mut mass = vec![0.0f64; ns * na];
    for (t, &w) in ds.transitions.iter().zip(&weights.w) {
        mass[t.state * na + t.action] += w;
    }
    for s in 0..ns {
        let row = &mut mass[s * na..(s + 1) * na];
        let total: f64 = row.iter().sum();
        for a in 0..na {
            let p = if total > 0.0 { (row[a] / total).max(1e-12) } else { 1.0 / na as f64 };
            logits[s * na + a] = p.ln();
        }
    }
    Ok(())
}
