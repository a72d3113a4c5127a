//! Offline and expert datasets: generation, JSON serialization, and the
//! expert-coverage check enforced at load time.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout, TabularMdp, TabularPolicy, Trajectory};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub is_initial: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub seed: u64,
    pub generator: String,
}

#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone)]
pub struct ExpertDataset {
    pub meta: DatasetMeta,
    pub states: Vec<usize>,
}

// Wire format: {"meta": {...}, "transitions": [[s, a, s', 0|1], ...]}
#[derive(Serialize, Deserialize)]
struct OfflineWire {
    meta: DatasetMeta,
    transitions: Vec<(usize, usize, usize, u8)>,
}

#[derive(Serialize, Deserialize)]
struct ExpertWire {
    meta: DatasetMeta,
    states: Vec<usize>,
}

impl OfflineDataset {
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Empty("offline dataset"));
        }
        for t in &self.transitions {
            if t.state >= self.meta.num_states
                || t.next_state >= self.meta.num_states
                || t.action >= self.meta.num_actions
            {
                return Err(Error::invalid("dataset", "state or action index out of bounds"));
            }
        }
        if !self.transitions.iter().any(|t| t.is_initial) {
            return Err(Error::invalid("dataset", "no initial-flagged transition"));
        }
        Ok(())
    }

    pub fn initial_indices(&self) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_initial)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let wire = OfflineWire {
            meta: self.meta.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|t| (t.state, t.action, t.next_state, t.is_initial as u8))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: OfflineWire = serde_json::from_str(s)?;
        let ds = OfflineDataset {
            meta: wire.meta,
            transitions: wire
                .transitions
                .into_iter()
                .map(|(s, a, sn, f)| Transition {
                    state: s,
                    action: a,
                    next_state: sn,
                    is_initial: f != 0,
                })
                .collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ExpertDataset {
    pub fn to_json(&self) -> Result<String> {
        let wire = ExpertWire { meta: self.meta.clone(), states: self.states.clone() };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: ExpertWire = serde_json::from_str(s)?;
        Ok(ExpertDataset { meta: wire.meta, states: wire.states })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Load an expert dataset and enforce expert coverage: every expert
    /// state must appear among the offline dataset's states.
    pub fn load_checked(path: impl AsRef<Path>, offline: &OfflineDataset) -> Result<Self> {
        let expert = Self::from_json(&std::fs::read_to_string(path)?)?;
        check_expert_coverage(&expert, offline)?;
        Ok(expert)
    }
}

/// Assumption-1 enforcement: d_E(s) > 0 must imply d_O(s) > 0, which on
/// finite datasets means every expert state occurs in the offline data.
pub fn check_expert_coverage(expert: &ExpertDataset, offline: &OfflineDataset) -> Result<()> {
    if expert.states.is_empty() {
        return Err(Error::Empty("expert dataset"));
    }
    let mut seen = vec![false; offline.meta.num_states];
    for t in &offline.transitions {
        seen[t.state] = true;
        seen[t.next_state] = true;
    }
    for &s in &expert.states {
        if s >= offline.meta.num_states {
            return Err(Error::invalid("expert dataset", format!("state {s} out of bounds")));
        }
        if !seen[s] {
            return Err(Error::ExpertCoverage { state: s });
        }
    }
    Ok(())
}

/// Concatenated rollouts with the per-episode policy drawn from a mixture.
pub fn generate_offline_dataset(
    mdp: &TabularMdp,
    behavior_policies: &[(TabularPolicy, f64)],
    episodes: usize,
    horizon: usize,
    seed: u64,
    generator: &str,
) -> Result<OfflineDataset> {
    if behavior_policies.is_empty() {
        return Err(Error::Empty("behavior policies"));
    }
    let wsum: f64 = behavior_policies.iter().map(|(_, w)| w).sum();
    if (wsum - 1.0).abs() > 1e-9 || behavior_policies.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::invalid("mixture weights", "must form a distribution"));
    }
    let mut transitions = Vec::with_capacity(episodes * horizon);
    for ep in 0..episodes {
        let mut r = rng::stream(seed, &[0xda7a, ep as u64]);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut idx = behavior_policies.len() - 1;
        for (i, (_, w)) in behavior_policies.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let traj = rollout(mdp, &behavior_policies[idx].0, horizon, &mut r)?;
        for (t, &(s, a, sn)) in traj.steps.iter().enumerate() {
            transitions.push(Transition {
                state: s,
                action: a,
                next_state: sn,
                is_initial: t == 0,
            });
        }
    }
    let ds = OfflineDataset {
        meta: DatasetMeta {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            gamma: mdp.gamma,
            seed,
            generator: generator.to_string(),
        },
        transitions,
    };
    ds.validate()?;
    Ok(ds)
}

/// State-only expert samples gathered from expert-policy rollouts.
pub fn generate_expert_dataset(
    mdp: &TabularMdp,
    expert_policy: &TabularPolicy,
    episodes: usize,
    horizon: usize,
    seed: u64,
    generator: &str,
) -> Result<ExpertDataset> {
    let mut states = Vec::with_capacity(episodes * horizon);
    for ep in 0..episodes {
        let mut r = rng::stream(seed, &[0xe8e7, ep as u64]);
        let traj: Trajectory = rollout(mdp, expert_policy, horizon, &mut r)?;
        states.extend(traj.steps.iter().map(|&(s, _, _)| s));
    }
    Ok(ExpertDataset {
        meta: DatasetMeta {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            gamma: mdp.gamma,
            seed,
            generator: generator.to_string(),
        },
        states,
    })
}
