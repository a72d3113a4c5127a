//! Built-in benchmark environments: a two-state chain and two deterministic
//! gridworlds, each with an expert policy, behavior mixture, and a hidden
//! evaluation reward that the learner never observes.

use crate::error::{Error, Result};
use crate::fre::GridInfo;
use crate::mdp::{FeatureMap, TabularMdp, TabularPolicy};

/// Everything needed to generate data and evaluate on one environment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mdp: TabularMdp,
    pub features: FeatureMap,
    pub grid: Option<GridInfo>,
    pub expert_policy: TabularPolicy,
    /// (policy, mixture weight) pairs for offline data collection
    pub behaviors: Vec<(TabularPolicy, f64)>,
    /// per-state reward used only at evaluation time
    pub hidden_reward: Vec<f64>,
    pub default_horizon: usize,
}

pub const SCENARIO_NAMES: [&str; 3] = ["chain2", "grid8-corridors", "grid-obstacle"];

pub fn by_name(name: &str) -> Result<Scenario> {
    match name {
        "chain2" => Ok(chain2()),
        "grid8-corridors" => Ok(grid8_corridors()),
        "grid-obstacle" => Ok(grid_obstacle()),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

/// Two states, two actions (stay / advance), absorbing second state.
pub fn chain2() -> Scenario {
    let mdp = TabularMdp::new(
        2,
        2,
        vec![
            1.0, 0.0, 0.0, 1.0, // s0: stay, advance
            0.0, 1.0, 0.0, 1.0, // s1 absorbing
        ],
        vec![1.0, 0.0],
        0.5,
    )
    .unwrap();
    let expert = TabularPolicy::deterministic(2, 2, &[1, 1]).unwrap();
    let behaviors = vec![(TabularPolicy::uniform(2, 2), 1.0)];
    Scenario {
        name: "chain2".into(),
        features: FeatureMap::one_hot(2),
        grid: None,
        expert_policy: expert,
        behaviors,
        hidden_reward: vec![0.0, 1.0],
        default_horizon: 16,
        mdp,
    }
}

const UP: usize = 0;
const DOWN: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

/// Deterministic grid dynamics: moves off the edge or into a blocked cell
/// leave the state unchanged. States are row-major.
fn grid_mdp(width: usize, height: usize, blocked: &[usize], start: usize, gamma: f64) -> TabularMdp {
    let n = width * height;
    let is_blocked = |s: usize| blocked.contains(&s);
    let mut trans = vec![0.0; n * 4 * n];
    for s in 0..n {
        let (row, col) = (s / width, s % width);
        for a in 0..4 {
            let (r2, c2) = match a {
                UP => (row.saturating_sub(1), col),
                DOWN => ((row + 1).min(height - 1), col),
                LEFT => (row, col.saturating_sub(1)),
                _ => (row, (col + 1).min(width - 1)),
            };
            let mut dest = r2 * width + c2;
            if is_blocked(dest) || is_blocked(s) {
                dest = s;
            }
            trans[(s * 4 + a) * n + dest] = 1.0;
        }
    }
    let mut rho0 = vec![0.0; n];
    rho0[start] = 1.0;
    TabularMdp::new(n, 4, trans, rho0, gamma).unwrap()
}

/// Deterministic policy that walks toward `target_row`, then right toward
/// the end of that corridor, staying put at the corridor's last column.
fn corridor_walker(width: usize, height: usize, target_row: usize) -> TabularPolicy {
    let n = width * height;
    let actions: Vec<usize> = (0..n)
        .map(|s| {
            let (row, col) = (s / width, s % width);
            if row < target_row {
                DOWN
            } else if row > target_row {
                UP
            } else if col + 1 < width {
                RIGHT
            } else {
                RIGHT // clips in place at the corridor end
            }
        })
        .collect();
    TabularPolicy::deterministic(n, 4, &actions).unwrap()
}

/// 8x8 grid. Start top-left, goal top-right; the expert walks the top row.
/// Offline data comes from smoothed corridor walkers along rows 0, 3, 7.
pub fn grid8_corridors() -> Scenario {
    let (w, h) = (8, 8);
    let goal = 7; // (row 0, col 7)
    let mdp = grid_mdp(w, h, &[], 0, 0.97);
    let expert = corridor_walker(w, h, 0);
    let rows = [0usize, 3, 7];
    let behaviors: Vec<(TabularPolicy, f64)> = rows
        .iter()
        .map(|&r| (corridor_walker(w, h, r).smoothed(0.05), 1.0 / rows.len() as f64))
        .collect();
    let mut hidden_reward = vec![0.0; w * h];
    hidden_reward[goal] = 1.0;
    Scenario {
        name: "grid8-corridors".into(),
        features: FeatureMap::one_hot(w * h),
        grid: Some(GridInfo { width: w, height: h, goal, corridor_rows: rows.to_vec() }),
        expert_policy: expert,
        behaviors,
        hidden_reward,
        default_horizon: 100,
        mdp,
    }
}

/// 5x5 grid with the center cell blocked. Start mid-left, goal mid-right;
/// two detour routes (over and under the obstacle) supply the offline data.
pub fn grid_obstacle() -> Scenario {
    let (w, h) = (5, 5);
    let blocked = 2 * w + 2; // (2,2)
    let start = 2 * w; // (2,0)
    let goal = 2 * w + 4; // (2,4)
    let mdp = grid_mdp(w, h, &[blocked], start, 0.95);

    // route through a detour row, returning to row 2 once past the obstacle
    let route = |detour_row: usize| -> TabularPolicy {
        let actions: Vec<usize> = (0..w * h)
            .map(|s| {
                let (row, col) = (s / w, s % w);
                if s == goal {
                    RIGHT // clips in place
                } else if col < 3 && row != detour_row && !(col > 2 && row == 2) {
                    if row < detour_row { DOWN } else { UP }
                } else if col < 3 {
                    RIGHT
                } else if row < 2 {
                    DOWN
                } else if row > 2 {
                    UP
                } else {
                    RIGHT
                }
            })
            .collect();
        TabularPolicy::deterministic(w * h, 4, &actions).unwrap()
    };
    let expert = route(1);
    let behaviors = vec![
        (route(1).smoothed(0.05), 0.5),
        (route(3).smoothed(0.05), 0.5),
    ];
    let mut hidden_reward = vec![0.0; w * h];
    hidden_reward[goal] = 1.0;
    Scenario {
        name: "grid-obstacle".into(),
        features: FeatureMap::one_hot(w * h),
        grid: Some(GridInfo { width: w, height: h, goal, corridor_rows: vec![1, 3] }),
        expert_policy: expert,
        behaviors,
        hidden_reward,
        default_horizon: 80,
        mdp,
    }
}
