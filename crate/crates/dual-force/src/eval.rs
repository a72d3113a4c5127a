//! Rollout evaluation of trained skills against the hidden reward, pairwise
//! successor-feature distances, the acceptance rule, and report export
//! (metrics.csv, distances.csv, skills_projection.svg, accepted.json).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::diversity::l2_distance;
use crate::error::{Error, Result};
use crate::mdp::{rollout, FeatureMap, TabularMdp, TabularPolicy};
use crate::rng;
use crate::trainer::MetricsLog;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// rollout length; None uses ceil(log(1e-4) / log(gamma))
    pub horizon: Option<usize>,
    /// accept skills whose mean return reaches this fraction of the expert's
    pub accept_threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 30, horizon: None, accept_threshold: 0.5, seed: 0 }
    }
}

/// Monte-Carlo estimates for one policy: normalized discounted return under
/// the hidden reward and the normalized successor-feature vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillEval {
    pub mean_return: f64,
    pub stderr: f64,
    pub sf: Vec<f64>,
}

fn default_horizon(gamma: f64) -> usize {
    ((1e-4f64).ln() / gamma.ln()).ceil().max(1.0) as usize
}

/// Per-episode normalized return (1-gamma) sum_t gamma^t r(s_t) and SF
/// (1-gamma) sum_t gamma^t phi(s_t), averaged over episodes.
pub fn rollout_eval(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    hidden_reward: &[f64],
    features: &FeatureMap,
    config: &EvalConfig,
    stream_tag: u64,
) -> Result<SkillEval> {
    if hidden_reward.len() != mdp.num_states {
        return Err(Error::DimensionMismatch("hidden reward vs states".into()));
    }
    if config.episodes == 0 {
        return Err(Error::invalid("episodes", "must be >= 1"));
    }
    let horizon = config.horizon.unwrap_or_else(|| default_horizon(mdp.gamma));
    let mut returns = Vec::with_capacity(config.episodes);
    let mut sf = vec![0.0; features.dim];
    for ep in 0..config.episodes {
        let mut r = rng::stream(config.seed, &[0xe7a1, stream_tag, ep as u64]);
        let traj = rollout(mdp, policy, horizon, &mut r)?;
        let mut ret = 0.0;
        let mut w = 1.0 - mdp.gamma;
        for &(s, _, _) in &traj.steps {
            ret += w * hidden_reward[s];
            for (acc, &f) in sf.iter_mut().zip(features.of(s)) {
                *acc += w * f / config.episodes as f64;
            }
            w *= mdp.gamma;
        }
        returns.push(ret);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let stderr = if returns.len() > 1 {
        let var = returns.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>()
            / (returns.len() - 1) as f64;
        (var / returns.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(SkillEval { mean_return: mean, stderr, sf })
}

/// Symmetric pairwise L2 distance matrix between SF vectors.
pub fn sf_distance_matrix(sfs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if sfs.is_empty() {
        return Err(Error::Empty("successor features"));
    }
    let n = sfs.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if sfs[i].len() != sfs[j].len() {
                return Err(Error::DimensionMismatch("SF vector lengths".into()));
            }
            let d = l2_distance(&sfs[i], &sfs[j]);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// A skill is accepted when its mean return reaches threshold * expert's.
pub fn accept_skills(skill_returns: &[f64], expert_return: f64, threshold: f64) -> Vec<bool> {
    skill_returns.iter().map(|&r| r >= threshold * expert_return).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub skills: Vec<SkillEval>,
    pub expert: SkillEval,
    pub distances: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub threshold: f64,
}

/// Evaluate every skill policy and the expert under the hidden reward.
pub fn evaluate_skills(
    mdp: &TabularMdp,
    features: &FeatureMap,
    hidden_reward: &[f64],
    policies: &[TabularPolicy],
    expert: &TabularPolicy,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if policies.is_empty() {
        return Err(Error::Empty("skill policies"));
    }
    let skills: Vec<SkillEval> = policies
        .iter()
        .enumerate()
        .map(|(i, p)| rollout_eval(mdp, p, hidden_reward, features, config, i as u64))
        .collect::<Result<_>>()?;
    let expert_eval =
        rollout_eval(mdp, expert, hidden_reward, features, config, u64::MAX)?;
    let sfs: Vec<Vec<f64>> = skills.iter().map(|s| s.sf.clone()).collect();
    let distances = sf_distance_matrix(&sfs)?;
    let returns: Vec<f64> = skills.iter().map(|s| s.mean_return).collect();
    let accepted = accept_skills(&returns, expert_eval.mean_return, config.accept_threshold);
    Ok(EvalReport {
        skills,
        expert: expert_eval,
        distances,
        accepted,
        threshold: config.accept_threshold,
    })
}

/// Project points onto their top two principal components.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if points.is_empty() {
        return Err(Error::Empty("projection points"));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch("point dimensions".into()));
    }
    let n = points.len();
    let mean: Vec<f64> =
        (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]) / n as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    // top-2 eigenvectors by eigenvalue
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let axis = |rank: usize| -> Vec<f64> {
        if rank < d {
            eig.eigenvectors.column(order[rank]).iter().cloned().collect()
        } else {
            vec![0.0; d]
        }
    };
    let (e1, e2) = (axis(0), axis(1));
    Ok(points
        .iter()
        .map(|p| {
            let x = p.iter().zip(&e1).zip(&mean).map(|((v, a), m)| (v - m) * a).sum();
            let y = p.iter().zip(&e2).zip(&mean).map(|((v, a), m)| (v - m) * a).sum();
            (x, y)
        })
        .collect())
}

/// Scatter plot of the PCA projection as a standalone SVG string. Labels are
/// "skill 0..n-1" plus "expert" for the final point.
pub fn projection_svg(points: &[(f64, f64)]) -> String {
    const W: f64 = 480.0;
    const PAD: f64 = 48.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let span = |lo: f64, hi: f64| if hi - lo < 1e-12 { 1.0 } else { hi - lo };
    let (sx, sy) = (span(xmin, xmax), span(ymin, ymax));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{W}\" viewBox=\"0 0 {W} {W}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{W}\" fill=\"white\"/>");
    for (i, &(x, y)) in points.iter().enumerate() {
        let px = PAD + (x - xmin) / sx * (W - 2.0 * PAD);
        let py = W - PAD - (y - ymin) / sy * (W - 2.0 * PAD);
        let last = i + 1 == points.len();
        let (color, label) = if last {
            ("#d62728".to_string(), "expert".to_string())
        } else {
            ("#1f77b4".to_string(), format!("skill {i}"))
        };
        let _ = writeln!(svg, "<circle cx=\"{px:.3}\" cy=\"{py:.3}\" r=\"6\" fill=\"{color}\"/>");
        let _ = writeln!(
            svg,
            "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" font-family=\"sans-serif\">{label}</text>",
            px + 9.0,
            py + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write metrics.csv, distances.csv, skills_projection.svg, and
/// accepted.json into `dir`. All output is deterministic: re-exporting the
/// same report produces byte-identical files.
pub fn export_report(
    dir: impl AsRef<Path>,
    report: &EvalReport,
    metrics: &MetricsLog,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics.to_csv())?;

    let n = report.distances.len();
    let mut dist = String::from("skill");
    for j in 0..n {
        let _ = write!(dist, ",{j}");
    }
    dist.push('\n');
    for (i, row) in report.distances.iter().enumerate() {
        let _ = write!(dist, "{i}");
        for v in row {
            let _ = write!(dist, ",{v:.9}");
        }
        dist.push('\n');
    }
    std::fs::write(dir.join("distances.csv"), dist)?;

    let mut pts: Vec<Vec<f64>> = report.skills.iter().map(|s| s.sf.clone()).collect();
    pts.push(report.expert.sf.clone());
    let proj = pca_2d(&pts)?;
    std::fs::write(dir.join("skills_projection.svg"), projection_svg(&proj))?;

    let accepted = serde_json::json!({
        "threshold": report.threshold,
        "expert_return": report.expert.mean_return,
        "skills": report
            .skills
            .iter()
            .zip(&report.accepted)
            .enumerate()
            .map(|(i, (s, &a))| serde_json::json!({
                "index": i,
                "mean_return": s.mean_return,
                "stderr": s.stderr,
                "accepted": a,
            }))
            .collect::<Vec<_>>(),
    });
    std::fs::write(dir.join("accepted.json"), serde_json::to_string_pretty(&accepted)?)?;
    Ok(())
}
