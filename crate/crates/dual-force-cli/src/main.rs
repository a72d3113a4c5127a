//! Command-line pipeline driver: each subcommand runs one stage and reads
//! its inputs from --out-dir, so stages can be re-run or swapped
//! independently. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dual_force::config::RunConfig;
use dual_force::dataset::{
    generate_expert_dataset, generate_offline_dataset, ExpertDataset, OfflineDataset,
};
use dual_force::discriminator::{fit_discriminator, Discriminator};
use dual_force::error::{Error, Result};
use dual_force::eval::{evaluate_skills, export_report, EvalReport};
use dual_force::fre::{generate_reward_family, pretrain_fre, FreModel, RewardFunction};
use dual_force::scenario::{self, Scenario};
use dual_force::skills::SkillBank;
use dual_force::trainer::{
    dual_force_train, smodice_baseline_train, MetricsLog, TrainInputs, TrainMode,
};

#[derive(Parser)]
#[command(name = "dual-force", version, about = "Offline diverse-skill learning on tabular MDPs")]
struct Cli {
    /// Path to a JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Scenario name when no config file is given
    #[arg(long, global = true)]
    scenario: Option<String>,

    /// Directory for stage artifacts
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Override every stage seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the effective configuration and exit
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Amortized,
    Exact,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline and expert datasets
    GenData,
    /// Fit the discriminator on the generated datasets
    FitDisc,
    /// Sample the unsupervised reward family
    GenRewards,
    /// Pretrain the functional reward encoding on the reward family
    PretrainFre,
    /// Run Dual-Force training
    Train {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// rayon worker threads (0 = default)
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// run the single-skill imitation baseline instead
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate the trained skill bank against the hidden reward
    Eval,
    /// Find the trained skill nearest to a latent embedding
    Recall {
        /// comma-separated latent coordinates
        #[arg(long)]
        latent: String,
    },
    /// Re-export evaluation artifacts from the saved report
    Export,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.scenario) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::for_scenario(name),
        (None, None) => {
            return Err(Error::MissingConfig("either --config or --scenario is required"))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.datasets.seed = seed;
        cfg.fre.seed = seed;
        cfg.trainer.seed = seed;
        cfg.eval.seed = seed;
    }
    // fail early on unknown scenario names
    scenario::by_name(&cfg.scenario)?;
    Ok(cfg)
}

fn load_stage<T>(path: &Path, what: &'static str, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::invalid(what, format!("cannot read {} (run the earlier stage first): {e}", path.display()))
    })?;
    parse(&text)
}

fn horizon(cfg: &RunConfig, scen: &Scenario) -> usize {
    cfg.datasets.horizon.unwrap_or(scen.default_horizon)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if cli.print_config {
        println!("{}", cfg.to_json()?);
        return Ok(());
    }
    let scen = scenario::by_name(&cfg.scenario)?;
    let out = &cli.out_dir;
    std::fs::create_dir_all(out)?;

    match &cli.command {
        Command::GenData => {
            let h = horizon(&cfg, &scen);
            let offline = generate_offline_dataset(
                &scen.mdp,
                &scen.behaviors,
                cfg.datasets.offline_episodes,
                h,
                cfg.datasets.seed,
                &format!("{}:behavior-mixture", scen.name),
            )?;
            let expert = generate_expert_dataset(
                &scen.mdp,
                &scen.expert_policy,
                cfg.datasets.expert_episodes,
                h,
                cfg.datasets.seed.wrapping_add(1),
                &format!("{}:expert", scen.name),
            )?;
            offline.save(out.join("offline.json"))?;
            expert.save(out.join("expert.json"))?;
            println!(
                "wrote {} offline transitions and {} expert states to {}",
                offline.transitions.len(),
                expert.states.len(),
                out.display()
            );
        }
        Command::FitDisc => {
            let offline = OfflineDataset::load(out.join("offline.json"))?;
            let expert = ExpertDataset::load_checked(out.join("expert.json"), &offline)?;
            let fit = fit_discriminator(
                &expert,
                &offline,
                &cfg.discriminator,
                &scen.features,
                cfg.datasets.seed,
            )?;
            std::fs::write(out.join("discriminator.json"), fit.discriminator.to_json()?)?;
            let mut csv = String::from("epoch,objective\n");
            for (i, o) in fit.objective_per_epoch.iter().enumerate() {
                csv.push_str(&format!("{i},{o:.9}\n"));
            }
            std::fs::write(out.join("disc_objective.csv"), csv)?;
            println!("wrote discriminator.json ({} epochs)", fit.objective_per_epoch.len());
        }
        Command::GenRewards => {
            let mut rcfg = cfg.fre.rewards.clone();
            if scen.grid.is_none() && rcfg.num_engineered > 0 {
                eprintln!("note: {} has no grid layout; skipping engineered rewards", scen.name);
                rcfg.num_engineered = 0;
            }
            let fam =
                generate_reward_family(&rcfg, &scen.features, scen.grid.as_ref(), cfg.fre.seed)?;
            std::fs::write(out.join("rewards.json"), serde_json::to_string_pretty(&fam)?)?;
            println!("wrote {} reward functions", fam.len());
        }
        Command::PretrainFre => {
            let fam: Vec<RewardFunction> = load_stage(&out.join("rewards.json"), "rewards", |s| {
                Ok(serde_json::from_str(s)?)
            })?;
            let pool: Vec<usize> = (0..scen.mdp.num_states).collect();
            let (model, losses) =
                pretrain_fre(&pool, &fam, &scen.features, &cfg.fre.model, cfg.fre.seed)?;
            std::fs::write(out.join("fre.json"), model.to_json()?)?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l:.9}\n"));
            }
            std::fs::write(out.join("fre_loss.csv"), csv)?;
            println!("wrote fre.json (final loss {:.6})", losses.last().unwrap());
        }
        Command::Train { mode, threads, baseline } => {
            if *threads > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(*threads)
                    .build_global()
                    .map_err(|e| Error::invalid("threads", e.to_string()))?;
            }
            let offline = OfflineDataset::load(out.join("offline.json"))?;
            let disc = load_stage(&out.join("discriminator.json"), "discriminator", |s| {
                Discriminator::from_json(s)
            })?;
            let fre = match std::fs::read_to_string(out.join("fre.json")) {
                Ok(s) => Some(FreModel::from_json(&s)?),
                Err(_) => None,
            };
            let mut tcfg = cfg.trainer.clone();
            if let Some(m) = mode {
                tcfg.mode = match m {
                    ModeArg::Amortized => TrainMode::Amortized,
                    ModeArg::Exact => TrainMode::ExactTabular,
                };
            }
            tcfg.parallel = *threads != 1;
            let inputs = TrainInputs {
                dataset: &offline,
                discriminator: &disc,
                features: &scen.features,
                fre: fre.as_ref(),
                mdp: Some(&scen.mdp),
                hidden_reward: Some(&scen.hidden_reward),
            };
            let result = if *baseline {
                smodice_baseline_train(&inputs, &tcfg)?
            } else {
                dual_force_train(&inputs, &tcfg)?
            };
            result.bank.save_dir(out.join("bank"))?;
            std::fs::write(out.join("metrics.csv"), result.metrics.to_csv())?;
            std::fs::write(
                out.join("metrics.json"),
                serde_json::to_string_pretty(&result.metrics)?,
            )?;
            println!(
                "trained {} skill(s) for {} iterations (converged: {}, ell0 = {:.4})",
                result.bank.skills.len(),
                result.iterations_run,
                result.converged,
                result.ell0
            );
        }
        Command::Eval => {
            let bank = SkillBank::load_dir(out.join("bank"))?;
            let policies = bank
                .skills
                .iter()
                .map(|s| s.policy.to_tabular(&scen.features, s.latest_z.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate_skills(
                &scen.mdp,
                &scen.features,
                &scen.hidden_reward,
                &policies,
                &scen.expert_policy,
                &cfg.eval,
            )?;
            let metrics: MetricsLog =
                load_stage(&out.join("metrics.json"), "metrics", |s| Ok(serde_json::from_str(s)?))?;
            let eval_dir = out.join("eval");
            std::fs::create_dir_all(&eval_dir)?;
            std::fs::write(eval_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            export_report(&eval_dir, &report, &metrics)?;
            for (i, (s, acc)) in report.skills.iter().zip(&report.accepted).enumerate() {
                println!(
                    "skill {i}: return {:.4} +- {:.4} ({})",
                    s.mean_return,
                    s.stderr,
                    if *acc { "accepted" } else { "rejected" }
                );
            }
            println!("expert: return {:.4}", report.expert.mean_return);
        }
        Command::Recall { latent } => {
            let bank = SkillBank::load_dir(out.join("bank"))?;
            let z: Vec<f64> = latent
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid("latent", format!("{t:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            let (idx, dist) = bank.recall(&z)?;
            println!("{}", serde_json::json!({ "skill": idx, "distance": dist }));
        }
        Command::Export => {
            let eval_dir = out.join("eval");
            let report: EvalReport =
                load_stage(&eval_dir.join("report.json"), "eval report", |s| {
                    Ok(serde_json::from_str(s)?)
                })?;
            let metrics: MetricsLog =
                load_stage(&out.join("metrics.json"), "metrics", |s| Ok(serde_json::from_str(s)?))?;
            export_report(&eval_dir, &report, &metrics)?;
            println!("re-exported evaluation artifacts to {}", eval_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
