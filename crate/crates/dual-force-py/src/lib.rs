//! Python bindings for the dual-force crate: scenario construction, dataset
//! generation, discriminator fitting, FRE pretraining, training, evaluation,
//! and skill recall.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dual_force::config::RunConfig;
use dual_force::dataset::{generate_expert_dataset, generate_offline_dataset, ExpertDataset, OfflineDataset};
use dual_force::discriminator::{fit_discriminator, Discriminator};
use dual_force::eval::{evaluate_skills, EvalConfig};
use dual_force::fre::{generate_reward_family, pretrain_fre, FreModel};
use dual_force::scenario;
use dual_force::skills::SkillBank;
use dual_force::trainer::{dual_force_train, smodice_baseline_train, TrainInputs, TrainMode};

fn err(e: dual_force::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// One of the built-in benchmark environments.
#[pyclass(name = "Scenario")]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self { inner: scenario::by_name(name).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.mdp.num_states
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.mdp.num_actions
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.mdp.gamma
    }

    #[getter]
    fn hidden_reward(&self) -> Vec<f64> {
        self.inner.hidden_reward.clone()
    }

    fn features_of(&self, state: usize) -> PyResult<Vec<f64>> {
        if state >= self.inner.mdp.num_states {
            return Err(PyValueError::new_err(format!("state {state} out of range")));
        }
        Ok(self.inner.features.of(state).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name='{}', states={}, actions={}, gamma={})",
            self.inner.name, self.inner.mdp.num_states, self.inner.mdp.num_actions, self.inner.mdp.gamma
        )
    }
}

#[pyclass(name = "OfflineDataset")]
struct PyOfflineDataset {
    inner: OfflineDataset,
}

#[pymethods]
impl PyOfflineDataset {
    fn __len__(&self) -> usize {
        self.inner.transitions.len()
    }

    /// Transitions as (state, action, next_state, is_initial) tuples.
    fn transitions(&self) -> Vec<(usize, usize, usize, bool)> {
        self.inner
            .transitions
            .iter()
            .map(|t| (t.state, t.action, t.next_state, t.is_initial))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self { inner: OfflineDataset::from_json(s).map_err(err)? })
    }
}

#[pyclass(name = "ExpertDataset")]
struct PyExpertDataset {
    inner: ExpertDataset,
}

#[pymethods]
impl PyExpertDataset {
    fn __len__(&self) -> usize {
        self.inner.states.len()
    }

    fn states(&self) -> Vec<usize> {
        self.inner.states.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }
}

#[pyclass(name = "Discriminator")]
struct PyDiscriminator {
    inner: Discriminator,
}

#[pymethods]
impl PyDiscriminator {
    fn c(&self, state: usize) -> f64 {
        self.inner.c(state)
    }

    fn log_odds(&self, state: usize) -> f64 {
        self.inner.log_odds(state)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }
}

#[pyclass(name = "FreModel")]
struct PyFreModel {
    inner: FreModel,
}

#[pymethods]
impl PyFreModel {
    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim
    }

    /// Encode a set of (state, reward) samples to the latent mean.
    fn encode(&self, scenario: &PyScenario, samples: Vec<(usize, f64)>) -> PyResult<Vec<f64>> {
        self.inner.encode(&samples, &scenario.inner.features).map_err(err)
    }

    /// Predicted standardized reward at `state` under latent `z`.
    fn decode(&self, scenario: &PyScenario, z: Vec<f64>, state: usize) -> f64 {
        self.inner.decode(&z, state, &scenario.inner.features)
    }

    fn param_hash(&self) -> u64 {
        self.inner.param_hash()
    }
}

#[pyclass(name = "SkillBank")]
struct PySkillBank {
    inner: SkillBank,
}

#[pymethods]
impl PySkillBank {
    #[getter]
    fn num_skills(&self) -> usize {
        self.inner.skills.len()
    }

    /// Action distribution of one trained skill at a state.
    fn action_probs(&self, scenario: &PyScenario, skill: usize, state: usize) -> PyResult<Vec<f64>> {
        let slot = self
            .inner
            .skills
            .get(skill)
            .ok_or_else(|| PyValueError::new_err(format!("skill {skill} out of range")))?;
        Ok(slot
            .policy
            .action_probs(state, &scenario.inner.features, slot.latest_z.as_deref()))
    }

    /// Final latent embedding of each skill.
    fn embeddings(&self) -> Vec<Option<Vec<f64>>> {
        self.inner.skills.iter().map(|s| s.latest_z.clone()).collect()
    }

    /// Nearest skill to a latent: returns (index, distance).
    fn recall(&self, z: Vec<f64>) -> PyResult<(usize, f64)> {
        self.inner.recall(&z).map_err(err)
    }

    fn save_dir(&self, path: &str) -> PyResult<()> {
        self.inner.save_dir(path).map_err(err)
    }

    #[staticmethod]
    fn load_dir(path: &str) -> PyResult<Self> {
        Ok(Self { inner: SkillBank::load_dir(path).map_err(err)? })
    }
}

/// Generate offline (behavior-mixture) and expert datasets for a scenario.
#[pyfunction]
#[pyo3(signature = (scenario, offline_episodes=30, expert_episodes=20, horizon=None, seed=0))]
fn gen_data(
    scenario: &PyScenario,
    offline_episodes: usize,
    expert_episodes: usize,
    horizon: Option<usize>,
    seed: u64,
) -> PyResult<(PyOfflineDataset, PyExpertDataset)> {
    let s = &scenario.inner;
    let h = horizon.unwrap_or(s.default_horizon);
    let offline = generate_offline_dataset(&s.mdp, &s.behaviors, offline_episodes, h, seed, &s.name)
        .map_err(err)?;
    let expert = generate_expert_dataset(
        &s.mdp,
        &s.expert_policy,
        expert_episodes,
        h,
        seed.wrapping_add(1),
        &s.name,
    )
    .map_err(err)?;
    Ok((PyOfflineDataset { inner: offline }, PyExpertDataset { inner: expert }))
}

/// Fit the state discriminator c(s) ~ d_E / (d_E + d_O).
#[pyfunction]
#[pyo3(signature = (scenario, expert, offline, seed=0))]
fn fit_disc(
    scenario: &PyScenario,
    expert: &PyExpertDataset,
    offline: &PyOfflineDataset,
    seed: u64,
) -> PyResult<PyDiscriminator> {
    let cfg = dual_force::discriminator::DiscConfig::default();
    let fit = fit_discriminator(&expert.inner, &offline.inner, &cfg, &scenario.inner.features, seed)
        .map_err(err)?;
    Ok(PyDiscriminator { inner: fit.discriminator })
}

/// Pretrain the functional reward encoding on the unsupervised families.
/// Returns the model and the per-epoch loss curve.
#[pyfunction]
#[pyo3(signature = (scenario, epochs=300, latent_dim=8, seed=0))]
fn pretrain_fre_model(
    scenario: &PyScenario,
    epochs: usize,
    latent_dim: usize,
    seed: u64,
) -> PyResult<(PyFreModel, Vec<f64>)> {
    let s = &scenario.inner;
    let mut rcfg = dual_force::fre::RewardFamilyConfig::default();
    if s.grid.is_none() {
        rcfg.num_engineered = 0;
    }
    let fam = generate_reward_family(&rcfg, &s.features, s.grid.as_ref(), seed).map_err(err)?;
    let mut mcfg = dual_force::fre::FreConfig::default();
    mcfg.epochs = epochs;
    mcfg.latent_dim = latent_dim;
    let pool: Vec<usize> = (0..s.mdp.num_states).collect();
    let (model, losses) = pretrain_fre(&pool, &fam, &s.features, &mcfg, seed).map_err(err)?;
    Ok((PyFreModel { inner: model }, losses))
}

/// Run Dual-Force training; returns the skill bank and the metrics CSV.
#[pyfunction]
#[pyo3(signature = (scenario, offline, disc, fre=None, num_skills=3, max_iterations=500, seed=0, exact=true, baseline=false))]
#[allow(clippy::too_many_arguments)]
fn train(
    scenario: &PyScenario,
    offline: &PyOfflineDataset,
    disc: &PyDiscriminator,
    fre: Option<&PyFreModel>,
    num_skills: usize,
    max_iterations: usize,
    seed: u64,
    exact: bool,
    baseline: bool,
) -> PyResult<(PySkillBank, String)> {
    let s = &scenario.inner;
    let mut cfg = dual_force::trainer::TrainerConfig::default();
    cfg.num_skills = num_skills;
    cfg.max_iterations = max_iterations;
    cfg.seed = seed;
    if exact {
        cfg.mode = TrainMode::ExactTabular;
        cfg.value_lr = 3e-2;
        cfg.value_steps_per_iter = 5;
        cfg.polyak_alpha = 0.2;
    }
    let inputs = TrainInputs {
        dataset: &offline.inner,
        discriminator: &disc.inner,
        features: &s.features,
        fre: fre.map(|f| &f.inner),
        mdp: Some(&s.mdp),
        hidden_reward: Some(&s.hidden_reward),
    };
    let result = if baseline {
        smodice_baseline_train(&inputs, &cfg).map_err(err)?
    } else {
        dual_force_train(&inputs, &cfg).map_err(err)?
    };
    Ok((PySkillBank { inner: result.bank }, result.metrics.to_csv()))
}

/// Evaluate trained skills under the scenario's hidden reward. Returns a
/// JSON report (returns, distances, acceptance decisions).
#[pyfunction]
#[pyo3(signature = (scenario, bank, episodes=30, seed=0))]
fn evaluate(scenario: &PyScenario, bank: &PySkillBank, episodes: usize, seed: u64) -> PyResult<String> {
    let s = &scenario.inner;
    let cfg = EvalConfig { episodes, seed, ..EvalConfig::default() };
    let policies = bank
        .inner
        .skills
        .iter()
        .map(|slot| slot.policy.to_tabular(&s.features, slot.latest_z.as_deref()))
        .collect::<dual_force::Result<Vec<_>>>()
        .map_err(err)?;
    let report = evaluate_skills(&s.mdp, &s.features, &s.hidden_reward, &policies, &s.expert_policy, &cfg)
        .map_err(err)?;
    serde_json::to_string_pretty(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Parse and echo a run configuration, applying defaults and rejecting
/// unknown keys.
#[pyfunction]
fn normalize_config(json: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json(json).map_err(err)?;
    cfg.to_json().map_err(err)
}

#[pymodule]
fn dual_force_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyOfflineDataset>()?;
    m.add_class::<PyExpertDataset>()?;
    m.add_class::<PyDiscriminator>()?;
    m.add_class::<PyFreModel>()?;
    m.add_class::<PySkillBank>()?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(fit_disc, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_fre_model, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    Ok(())
}
