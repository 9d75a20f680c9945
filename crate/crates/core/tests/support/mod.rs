//! Independent reference implementations the library is checked against.
#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64;
use rand::Rng;
use vpp_core::dispatch::{BatteryMode, EvMode};
use vpp_core::network::{Bus, BusKind, Line};
use vpp_core::Feeder;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

/// Backward/forward sweep on a radial feeder. Loads in kW/kvar per bus,
/// returns voltage magnitudes in per unit.
pub fn sweep_voltages(feeder: &Feeder, p_kw: &[f64], q_kvar: &[f64]) -> Vec<f64> {
    let n = feeder.len();
    let z_base = feeder.base_kv().powi(2) / feeder.base_mva();
    let s_base_kw = feeder.base_mva() * 1000.0;
    let slack = feeder.slack_id() - 1;
    let order: Vec<usize> = feeder.bfs_order().map(|b| b - 1).collect();
    let mut parent = vec![None; n];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    for l in feeder.lines() {
        let (a, b) = (l.from_bus - 1, l.to_bus - 1);
        let child = if feeder.parent_id(l.to_bus) == Some(l.from_bus) { b } else { a };
        let par = if child == b { a } else { b };
        parent[child] = Some(par);
        z[child] = Complex64::new(l.resistance, l.reactance) / z_base;
    }
    let s: Vec<Complex64> = (0..n)
        .map(|i| if i == slack { Complex64::new(0.0, 0.0) } else { Complex64::new(p_kw[i], q_kvar[i]) / s_base_kw })
        .collect();
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    for _ in 0..500 {
        let mut i_branch: Vec<Complex64> = (0..n).map(|k| (s[k] / v[k]).conj()).collect();
        for &k in order.iter().rev() {
            if let Some(p) = parent[k] {
                let flow = i_branch[k];
                i_branch[p] += flow;
            }
        }
        let mut delta: f64 = 0.0;
        for &k in &order {
            if let Some(p) = parent[k] {
                let nv = v[p] - z[k] * i_branch[k];
                delta = delta.max((nv - v[k]).norm());
                v[k] = nv;
            }
        }
        if delta < 1e-13 {
            break;
        }
    }
    v.iter().map(|c| c.norm()).collect()
}

/// A random tree rooted at bus 1 with realistic distribution impedances.
pub fn random_radial(rng: &mut impl Rng, n: usize) -> Feeder {
    let mut buses = vec![Bus {
        id: 1,
        base_load_p: 0.0,
        base_load_q: 0.0,
        kind: BusKind::Slack,
    }];
    let mut lines = Vec::new();
    for id in 2..=n {
        buses.push(Bus {
            id,
            base_load_p: rng.random_range(0.0..150.0),
            base_load_q: rng.random_range(0.0..80.0),
            kind: BusKind::Load,
        });
        let parent = rng.random_range(1..id);
        lines.push(Line {
            from_bus: parent,
            to_bus: id,
            resistance: rng.random_range(0.05..0.6),
            reactance: rng.random_range(0.03..0.4),
        });
    }
    Feeder::new(buses, lines, 12.66, 1.0).expect("valid random feeder")
}

/// Intervals in `[first, last]` whose value ranks among the `k` lowest,
/// earlier intervals winning ties, by counting rather than sorting.
pub fn lowest_k(values: &[f64], first: usize, last: usize, k: usize) -> Vec<bool> {
    (first..=last)
        .map(|t| {
            let rank = (first..=last).filter(|&j| values[j] < values[t] || (values[j] == values[t] && j < t)).count();
            rank < k
        })
        .collect()
}

/// Intervals in `[first, last]` among the top half (rounded up) by value,
/// earlier intervals winning ties.
pub fn highest_half(values: &[f64], first: usize, last: usize) -> Vec<bool> {
    let len = last - first + 1;
    let k = len.div_ceil(2);
    (first..=last)
        .map(|t| {
            let rank = (first..=last).filter(|&j| values[j] > values[t] || (values[j] == values[t] && j < t)).count();
            rank < k
        })
        .collect()
}

/// The EV pricing pseudocode as printed: exchange sort swapping on `>=`,
/// then membership of `t_now` among the first `k` entries.
pub fn literal_ev_pricing(prices: &[f64], t_now: usize, t_last: usize, k: usize) -> bool {
    let mut idx: Vec<usize> = (t_now..=t_last).collect();
    let mut y: Vec<f64> = idx.iter().map(|&i| prices[i]).collect();
    let len = y.len();
    for i in 0..len.saturating_sub(1) {
        for j in i + 1..len {
            if y[i] >= y[j] {
                y.swap(i, j);
                idx.swap(i, j);
            }
        }
    }
    idx.iter().take(k).any(|&i| i == t_now)
}

/// EV mode table, with the idle rows for absent or full vehicles.
pub fn ev_mode_truth(rho_at_least_one: bool, cheap: bool, connected: bool, full: bool) -> EvMode {
    match (connected && !full, rho_at_least_one, cheap) {
        (false, _, _) => EvMode::Idle,
        (true, true, _) => EvMode::UncoordinatedG2V,
        (true, false, true) => EvMode::CoordinatedG2V,
        (true, false, false) => EvMode::CoordinatedV2G,
    }
}

/// Battery mode table; modes the SoC cannot support become idle.
pub fn battery_mode_truth(rho_at_least_one: bool, sunny: bool, full: bool, empty: bool) -> BatteryMode {
    let mode = match (rho_at_least_one, sunny) {
        (true, _) => BatteryMode::UncoordinatedG2B,
        (false, true) => BatteryMode::CoordinatedG2B,
        (false, false) => BatteryMode::CoordinatedB2G,
    };
    match mode {
        BatteryMode::UncoordinatedG2B | BatteryMode::CoordinatedG2B if full => BatteryMode::Idle,
        BatteryMode::CoordinatedB2G if empty => BatteryMode::Idle,
        m => m,
    }
}
