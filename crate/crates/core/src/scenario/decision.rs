use serde::{Deserialize, Serialize};

use crate::der::ControllableLoad;
use crate::dispatch::{cl_flags, curtailment_bounds};
use crate::error::Result;
use crate::optimizer::Boxes;

/// Position of every gene in the flat optimizer genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionLayout {
    pub stations: usize,
    pub intervals: usize,
    pub loads: usize,
}

impl DecisionLayout {
    pub fn len(&self) -> usize {
        self.stations * (1 + 2 * self.intervals) + self.intervals * (1 + self.loads)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn solar(&self, s: usize) -> usize {
        s
    }

    pub fn incentive(&self, t: usize) -> usize {
        self.stations + t
    }

    pub fn ev_fraction(&self, s: usize, t: usize) -> usize {
        self.stations + self.intervals + s * self.intervals + t
    }

    pub fn battery_fraction(&self, s: usize, t: usize) -> usize {
        self.stations + self.intervals * (1 + self.stations) + s * self.intervals + t
    }

    pub fn curtailment(&self, l: usize, t: usize) -> usize {
        self.stations + self.intervals * (1 + 2 * self.stations) + l * self.intervals + t
    }
}

/// The decoded genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    /// kWp per station.
    pub solar_capacity: Vec<f64>,
    /// $/kWh per interval.
    pub incentive_price: Vec<f64>,
    /// Per station and interval, in `[0, 1]`.
    pub ev_dispatch_fraction: Vec<Vec<f64>>,
    pub battery_dispatch_fraction: Vec<Vec<f64>>,
    /// kW per controllable load and interval; positive curtails.
    pub curtailment: Vec<Vec<f64>>,
}

impl DecisionVector {
    pub fn decode(layout: &DecisionLayout, genes: &[f64]) -> Self {
        let (s_n, t_n) = (layout.stations, layout.intervals);
        let grid = |f: &dyn Fn(usize, usize) -> usize, rows: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|r| (0..t_n).map(|t| genes[f(r, t)]).collect()).collect()
        };
        Self {
            solar_capacity: (0..s_n).map(|s| genes[layout.solar(s)]).collect(),
            incentive_price: (0..t_n).map(|t| genes[layout.incentive(t)]).collect(),
            ev_dispatch_fraction: grid(&|s, t| layout.ev_fraction(s, t), s_n),
            battery_dispatch_fraction: grid(&|s, t| layout.battery_fraction(s, t), s_n),
            curtailment: grid(&|l, t| layout.curtailment(l, t), layout.loads),
        }
    }

    pub fn encode(&self, layout: &DecisionLayout) -> Vec<f64> {
        let mut g = vec![0.0; layout.len()];
        for (s, &v) in self.solar_capacity.iter().enumerate() {
            g[layout.solar(s)] = v;
        }
        for (t, &v) in self.incentive_price.iter().enumerate() {
            g[layout.incentive(t)] = v;
        }
        for s in 0..layout.stations {
            for t in 0..layout.intervals {
                g[layout.ev_fraction(s, t)] = self.ev_dispatch_fraction[s][t];
                g[layout.battery_fraction(s, t)] = self.battery_dispatch_fraction[s][t];
            }
        }
        for (l, row) in self.curtailment.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                g[layout.curtailment(l, t)] = v;
            }
        }
        g
    }
}

/// Pricing flags of every load at its own window, full horizon.
pub fn load_flags(loads: &[ControllableLoad], market: &[f64]) -> Result<Vec<Vec<bool>>> {
    loads.iter().map(|l| cl_flags(market, l.t_start, l.t_stop)).collect()
}

/// Gene boxes. Curtailment may only be positive in flagged intervals and
/// only negative elsewhere, within the no-new-peak limits; each load's
/// adjustments form a zero-sum group.
pub fn decision_boxes(
    layout: &DecisionLayout,
    solar_kwp: (f64, f64),
    market: &[f64],
    mu: (f64, f64),
    loads: &[ControllableLoad],
    flags: &[Vec<bool>],
) -> Boxes {
    let n = layout.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for s in 0..layout.stations {
        lower[layout.solar(s)] = solar_kwp.0;
        upper[layout.solar(s)] = solar_kwp.1;
        for t in 0..layout.intervals {
            upper[layout.ev_fraction(s, t)] = 1.0;
            upper[layout.battery_fraction(s, t)] = 1.0;
        }
    }
    for t in 0..layout.intervals {
        lower[layout.incentive(t)] = mu.0 * market[t];
        upper[layout.incentive(t)] = mu.1 * market[t];
    }
    let mut groups = Vec::with_capacity(loads.len());
    for (l, load) in loads.iter().enumerate() {
        let b = curtailment_bounds(&load.nominal_kw);
        for t in 0..layout.intervals {
            let i = layout.curtailment(l, t);
            if flags[l][t] {
                upper[i] = b.upper_kw[t];
            } else {
                lower[i] = b.lower_kw[t];
            }
        }
        groups.push((0..layout.intervals).map(|t| layout.curtailment(l, t)).collect());
    }
    Boxes {
        lower,
        upper,
        zero_sum_groups: groups,
    }
}
