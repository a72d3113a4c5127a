//! Successor features and the Van der Waals diversity signal: nearest-rival
//! distances, objective values, per-state reward, and the closed-form
//! occupancy-level gradient.

use serde::{Deserialize, Serialize};

use crate::dice::DatasetWeights;
use crate::error::{Error, Result};
use crate::mdp::OccupancyMeasure;

/// Per-skill successor-feature vector psi = E_{d_i(s)}[phi(s)].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuccessorFeatures {
    pub psi: Vec<f64>,
}

/// psi = sum_j w_j phi(s_j) over dataset records.
pub fn successor_features(
    weights: &DatasetWeights,
    record_features: &[&[f64]],
) -> Result<SuccessorFeatures> {
    if weights.len() != record_features.len() {
        return Err(Error::DimensionMismatch("weights vs features".into()));
    }
    if record_features.is_empty() {
        return Err(Error::Empty("record features"));
    }
    let dim = record_features[0].len();
    let mut psi = vec![0.0; dim];
    for (&w, phi) in weights.w.iter().zip(record_features) {
        if phi.len() != dim {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        for (p, &f) in psi.iter_mut().zip(*phi) {
            *p += w * f;
        }
    }
    Ok(SuccessorFeatures { psi })
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest rival of skill i: argmin_{j != i} ||psi_i - psi_j||, ties broken
/// by lowest index.
pub fn nearest_rival(psis: &[SuccessorFeatures], i: usize) -> Result<(usize, f64)> {
    if psis.len() < 2 {
        return Err(Error::invalid("psis", "need at least 2 skills"));
    }
    if i >= psis.len() {
        return Err(Error::invalid("skill index", format!("{i} out of range")));
    }
    let mut best = None;
    for (j, other) in psis.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = l2_distance(&psis[i].psi, &other.psi);
        match best {
            None => best = Some((j, d)),
            Some((_, bd)) if d < bd => best = Some((j, d)),
            _ => {}
        }
    }
    Ok(best.unwrap())
}

/// VdW per-state reward beta(s) = (1 - (l/l0)^3) <phi(s), psi_i - psi_rival>.
/// `ell` must equal ||psi_i - psi_rival|| (caller supplies the snapshot value).
pub fn vdw_reward(
    features_of_s: &[f64],
    psi_i: &[f64],
    psi_rival: &[f64],
    ell: f64,
    ell0: f64,
) -> Result<f64> {
    if ell0 <= 0.0 {
        return Err(Error::invalid("ell0", "must be positive"));
    }
    let actual = l2_distance(psi_i, psi_rival);
    if (actual - ell).abs() > 1e-9 {
        return Err(Error::invalid(
            "ell",
            format!("supplied {ell} but ||psi_i - psi_rival|| = {actual}"),
        ));
    }
    let coef = 1.0 - (ell / ell0).powi(3);
    let inner: f64 = features_of_s
        .iter()
        .zip(psi_i.iter().zip(psi_rival))
        .map(|(f, (a, b))| f * (a - b))
        .sum();
    Ok(coef * inner)
}

/// VdW objective: sum_i 0.5 l_i^2 - 0.2 l_i^5 / l0^3 over nearest-rival
/// distances.
pub fn vdw_objective(psis: &[SuccessorFeatures], ell0: f64) -> Result<f64> {
    if ell0 <= 0.0 {
        return Err(Error::invalid("ell0", "must be positive"));
    }
    if psis.len() < 2 {
        return Err(Error::invalid("psis", "need at least 2 skills"));
    }
    let mut total = 0.0;
    for i in 0..psis.len() {
        let (_, ell) = nearest_rival(psis, i)?;
        total += 0.5 * ell * ell - 0.2 * ell.powi(5) / ell0.powi(3);
    }
    Ok(total)
}

/// Repulsive-only objective: 0.5 sum_i min_{j != i} ||psi_i - psi_j||^2.
pub fn repulsive_objective(psis: &[SuccessorFeatures]) -> Result<f64> {
    if psis.len() < 2 {
        return Err(Error::invalid("psis", "need at least 2 skills"));
    }
    let mut total = 0.0;
    for i in 0..psis.len() {
        let (_, ell) = nearest_rival(psis, i)?;
        total += 0.5 * ell * ell;
    }
    Ok(total)
}

/// Gradient of 0.5 ||Phi d_i - Phi d_j||^2 with respect to d_i:
/// Phi^T (psi_i - psi_j). `phi_columns` holds phi(s,a) per (s,a) index.
pub fn diversity_gradient(
    phi_columns: &[Vec<f64>],
    d_i: &OccupancyMeasure,
    d_j: &OccupancyMeasure,
) -> Result<Vec<f64>> {
    let n = phi_columns.len();
    if d_i.d.len() != n || d_j.d.len() != n {
        return Err(Error::DimensionMismatch("occupancies vs feature columns".into()));
    }
    if n == 0 {
        return Err(Error::Empty("feature columns"));
    }
    let dim = phi_columns[0].len();
    let mut diff = vec![0.0; dim]; // psi_i - psi_j
    for (col, (&di, &dj)) in phi_columns.iter().zip(d_i.d.iter().zip(&d_j.d)) {
        if col.len() != dim {
            return Err(Error::DimensionMismatch("ragged feature columns".into()));
        }
        for (acc, &f) in diff.iter_mut().zip(col) {
            *acc += f * (di - dj);
        }
    }
    Ok(phi_columns
        .iter()
        .map(|col| col.iter().zip(&diff).map(|(f, g)| f * g).sum())
        .collect())
}
