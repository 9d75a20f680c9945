//! Stakeholder objectives, utopia normalization, constraint accounting and
//! the penalized scalar fitness minimized by the optimizer.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::der::{self, ChargerSpec, SolarModuleSpec};
use crate::dispatch::CurtailmentBounds;
use crate::error::{Error, Result};
use crate::time::TimeGrid;

pub const OBJECTIVE_COUNT: usize = 5;
pub const OBJECTIVE_NAMES: [&str; OBJECTIVE_COUNT] = ["f1_profit", "f2_capex", "f3_dr_cost", "f4_undesirable", "f5_grid_cost"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Profit is maximized, every other objective minimized.
pub const OBJECTIVE_SENSES: [Sense; OBJECTIVE_COUNT] =
    [Sense::Maximize, Sense::Minimize, Sense::Minimize, Sense::Minimize, Sense::Minimize];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    /// Operator revenue from energy exchanged at the DER nodes, $.
    pub f1_profit: f64,
    /// Daily solar capital and maintenance cost, $/day.
    pub f2_capex: f64,
    /// Energy bills of charging stations and controllable loads, $.
    pub f3_dr_cost: f64,
    /// EV degradation cost plus consumer discomfort.
    pub f4_undesirable: f64,
    /// Cost of energy imported from the upstream grid, $.
    pub f5_grid_cost: f64,
}

impl ObjectiveVector {
    pub fn to_array(self) -> [f64; OBJECTIVE_COUNT] {
        [self.f1_profit, self.f2_capex, self.f3_dr_cost, self.f4_undesirable, self.f5_grid_cost]
    }

    pub fn from_array(a: [f64; OBJECTIVE_COUNT]) -> Self {
        Self {
            f1_profit: a[0],
            f2_capex: a[1],
            f3_dr_cost: a[2],
            f4_undesirable: a[3],
            f5_grid_cost: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtopiaBounds {
    pub min: [f64; OBJECTIVE_COUNT],
    pub max: [f64; OBJECTIVE_COUNT],
}

impl UtopiaBounds {
    /// Per-objective minimum and maximum over a set of observed candidates.
    pub fn from_candidates(candidates: &[ObjectiveVector]) -> Result<Self> {
        let mut min = [f64::INFINITY; OBJECTIVE_COUNT];
        let mut max = [f64::NEG_INFINITY; OBJECTIVE_COUNT];
        for c in candidates {
            for (i, v) in c.to_array().into_iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        let bounds = Self { min, max };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..OBJECTIVE_COUNT {
            if !(self.min[i] < self.max[i]) {
                return Err(Error::DegenerateBounds {
                    objective: OBJECTIVE_NAMES[i],
                    min: self.min[i],
                    max: self.max[i],
                });
            }
        }
        Ok(())
    }

    pub fn normalize(&self, values: &ObjectiveVector) -> Result<[f64; OBJECTIVE_COUNT]> {
        let raw = values.to_array();
        let mut out = [0.0; OBJECTIVE_COUNT];
        for i in 0..OBJECTIVE_COUNT {
            out[i] = normalize_utopia(raw[i], (self.min[i], self.max[i]), OBJECTIVE_SENSES[i])?;
        }
        Ok(out)
    }
}

/// Distance from the best observed value as a fraction of the observed
/// range, clamped to `[0, 1]`.
pub fn normalize_utopia(value: f64, bounds: (f64, f64), sense: Sense) -> Result<f64> {
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(Error::DegenerateBounds {
            objective: "value",
            min: lo,
            max: hi,
        });
    }
    let f = match sense {
        Sense::Minimize => (value - lo) / (hi - lo),
        Sense::Maximize => (hi - value) / (hi - lo),
    };
    Ok(f.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    /// Market price per interval, $/kWh.
    pub market: Vec<f64>,
    /// Incentive price offered to charging stations, $/kWh.
    pub incentive: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    pub daily_budget: f64,
    pub weights: [f64; OBJECTIVE_COUNT],
    pub lambda1: f64,
    /// Share of station demand that solar must cover in daytime intervals.
    pub lambda2: f64,
}

impl PriceSchedule {
    pub fn validate(&self, intervals: usize) -> Result<()> {
        if self.market.len() != intervals || self.incentive.len() != intervals {
            return Err(Error::validation("prices", format!("profiles must have {intervals} intervals")));
        }
        if self.market.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::validation("prices.market", "must be finite and non-negative"));
        }
        if !(0.0 <= self.mu1 && self.mu1 < self.mu2) {
            return Err(Error::validation("mu1", "requires 0 <= mu1 < mu2"));
        }
        if self.weights.iter().any(|&w| w < 0.0) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::validation("weights", "must be non-negative and sum to 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda1) || !(0.0..=1.0).contains(&self.lambda2) {
            return Err(Error::validation("lambda", "must lie in [0, 1]"));
        }
        if self.daily_budget < 0.0 {
            return Err(Error::validation("daily_budget", "must be non-negative"));
        }
        Ok(())
    }

    /// Price applied to a node's exchange: incentive when it delivers,
    /// market price when it draws from the grid.
    pub fn exchange_price(&self, t: usize, injection_kw: f64) -> f64 {
        if injection_kw > 0.0 {
            self.incentive[t]
        } else {
            self.market[t]
        }
    }
}

/// Per-interval flows at one DER node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationTrace {
    pub node: usize,
    pub solar_capacity_kwp: f64,
    pub solar_kw: Vec<f64>,
    /// Net EV charging power (negative during V2G).
    pub ev_kw: Vec<f64>,
    /// Net swap-battery charging power.
    pub battery_kw: Vec<f64>,
    /// Solar output that could not be used and was curtailed.
    pub spilled_kw: Vec<f64>,
}

impl StationTrace {
    /// Power the node exports to the feeder (negative when importing).
    pub fn injection_kw(&self, t: usize) -> f64 {
        self.solar_kw[t] - self.spilled_kw[t] - self.ev_kw[t] - self.battery_kw[t]
    }
}

/// SoC and power history of one battery, EV or swap station pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceTrace {
    pub station: usize,
    pub battery_kwh: f64,
    pub rated_kw: f64,
    /// State at the start of every interval plus the final state.
    pub soc: Vec<f64>,
    pub power_kw: Vec<f64>,
    pub discharging: Vec<bool>,
    /// SoC handed over at the departure or swap deadline, if it falls
    /// inside the horizon.
    pub deadline_soc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadTrace {
    pub node: usize,
    pub nominal_kw: Vec<f64>,
    pub adjustment_kw: Vec<f64>,
    pub flags: Vec<bool>,
    pub beta: f64,
    pub bounds: CurtailmentBounds,
}

/// Everything a simulated day produces that objectives and constraints
/// are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub grid: TimeGrid,
    pub prices: PriceSchedule,
    pub daytime: Vec<bool>,
    pub stations: Vec<StationTrace>,
    pub evs: Vec<DeviceTrace>,
    pub batteries: Vec<DeviceTrace>,
    pub loads: Vec<LoadTrace>,
    /// Demand of buses outside demand response, summed per interval.
    pub fixed_load_kw: Vec<f64>,
    pub grid_import_kw: Vec<f64>,
    pub loss_kw: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
}

pub fn evaluate_objectives(state: &ScheduleState, solar: &SolarModuleSpec, charger: &ChargerSpec) -> Result<ObjectiveVector> {
    let dt = state.grid.dt_h;
    let prices = &state.prices;
    let mut f1 = 0.0;
    let mut f3 = 0.0;
    for s in &state.stations {
        for t in 0..state.grid.intervals {
            let inj = s.injection_kw(t);
            f1 += prices.exchange_price(t, inj) * inj * dt;
        }
        f3 += der::cs_energy_cost(&s.ev_kw, &prices.incentive, dt);
    }
    let per_kwp = solar.daily_cost_per_kwp()?;
    let f2 = state.stations.iter().map(|s| per_kwp * s.solar_capacity_kwp).sum();
    let mut f4 = 0.0;
    for ev in &state.evs {
        f4 += der::degradation_cost(&ev.soc, &ev.discharging, charger, ev.battery_kwh);
    }
    for l in &state.loads {
        f3 += der::cl_energy_cost(&l.nominal_kw, &l.adjustment_kw, &prices.market, dt);
        f4 += der::discomfort_cost(&l.nominal_kw, &l.adjustment_kw, &l.flags, l.beta)?;
    }
    let f5 = state.grid_import_kw.iter().zip(&prices.market).map(|(p, a)| a * p * dt).sum();
    Ok(ObjectiveVector {
        f1_profit: f1,
        f2_capex: f2,
        f3_dr_cost: f3,
        f4_undesirable: f4,
        f5_grid_cost: f5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    SolarCapacity,
    EvPower,
    BatteryPower,
    IncentiveBand,
    Curtailment,
    EvSoc,
    BatterySoc,
    DepartureSoc,
    SwapSoc,
    LoadNeutrality,
    DiscomfortCap,
    Fairness,
    SolarCoverage,
    DailyBudget,
    Voltage,
    DaytimeVoltage,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; CONSTRAINT_COUNT] = [
        ConstraintKind::SolarCapacity,
        ConstraintKind::EvPower,
        ConstraintKind::BatteryPower,
        ConstraintKind::IncentiveBand,
        ConstraintKind::Curtailment,
        ConstraintKind::EvSoc,
        ConstraintKind::BatterySoc,
        ConstraintKind::DepartureSoc,
        ConstraintKind::SwapSoc,
        ConstraintKind::LoadNeutrality,
        ConstraintKind::DiscomfortCap,
        ConstraintKind::Fairness,
        ConstraintKind::SolarCoverage,
        ConstraintKind::DailyBudget,
        ConstraintKind::Voltage,
        ConstraintKind::DaytimeVoltage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::SolarCapacity => "solar_capacity",
            ConstraintKind::EvPower => "ev_power",
            ConstraintKind::BatteryPower => "battery_power",
            ConstraintKind::IncentiveBand => "incentive_band",
            ConstraintKind::Curtailment => "curtailment",
            ConstraintKind::EvSoc => "ev_soc",
            ConstraintKind::BatterySoc => "battery_soc",
            ConstraintKind::DepartureSoc => "departure_soc",
            ConstraintKind::SwapSoc => "swap_soc",
            ConstraintKind::LoadNeutrality => "load_neutrality",
            ConstraintKind::DiscomfortCap => "discomfort_cap",
            ConstraintKind::Fairness => "fairness",
            ConstraintKind::SolarCoverage => "solar_coverage",
            ConstraintKind::DailyBudget => "daily_budget",
            ConstraintKind::Voltage => "voltage",
            ConstraintKind::DaytimeVoltage => "daytime_voltage",
        }
    }
}

pub const CONSTRAINT_COUNT: usize = 16;

/// Violations below this magnitude, in natural units, count as satisfied.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-6;

/// Limits that are not part of the price schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingLimits {
    pub solar_capacity_kwp: (f64, f64),
    pub soc: (f64, f64),
    pub voltage_pu: (f64, f64),
}

/// Violation magnitude per constraint, in natural units, together with
/// the scale each one is divided by in the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub violation: [f64; CONSTRAINT_COUNT],
    pub scale: [f64; CONSTRAINT_COUNT],
}

impl Default for ConstraintReport {
    fn default() -> Self {
        Self {
            violation: [0.0; CONSTRAINT_COUNT],
            scale: [1.0; CONSTRAINT_COUNT],
        }
    }
}

impl Index<ConstraintKind> for ConstraintReport {
    type Output = f64;

    fn index(&self, kind: ConstraintKind) -> &f64 {
        &self.violation[kind as usize]
    }
}

impl ConstraintReport {
    pub fn set(&mut self, kind: ConstraintKind, violation: f64, scale: f64) {
        let v = if violation > CONSTRAINT_TOLERANCE { violation } else { 0.0 };
        self.violation[kind as usize] = v;
        self.scale[kind as usize] = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    }

    pub fn is_feasible(&self) -> bool {
        self.violation.iter().all(|&v| v == 0.0)
    }

    /// Sum of squared scaled violations.
    pub fn scaled_penalty(&self) -> f64 {
        self.violation.iter().zip(&self.scale).map(|(v, s)| (v / s).powi(2)).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (ConstraintKind, f64)> + '_ {
        ConstraintKind::ALL.iter().map(move |&k| (k, self[k]))
    }
}

fn outside(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(0.0) + (v - hi).max(0.0)
}

fn device_violations(devices: &[DeviceTrace], soc: (f64, f64)) -> (f64, f64, f64, f64) {
    let (mut power, mut soc_v, mut deadline) = (0.0, 0.0, 0.0);
    let mut rated_max = 0.0_f64;
    for d in devices {
        rated_max = rated_max.max(d.rated_kw);
        power += d.power_kw.iter().map(|&p| outside(p, -d.rated_kw, d.rated_kw)).sum::<f64>();
        soc_v += d.soc.iter().map(|&s| outside(s, soc.0, soc.1)).sum::<f64>();
        if let Some(s) = d.deadline_soc {
            deadline += (s - soc.1).abs();
        }
    }
    (power, soc_v, deadline, rated_max)
}

pub fn evaluate_constraints(state: &ScheduleState, limits: &OperatingLimits) -> ConstraintReport {
    use ConstraintKind as K;
    let prices = &state.prices;
    let dt = state.grid.dt_h;
    let mut r = ConstraintReport::default();

    let (lo, hi) = limits.solar_capacity_kwp;
    let solar: f64 = state.stations.iter().map(|s| outside(s.solar_capacity_kwp, lo, hi)).sum();
    r.set(K::SolarCapacity, solar, hi - lo);

    let soc_width = limits.soc.1 - limits.soc.0;
    let (ev_p, ev_soc, ev_dep, ev_rated) = device_violations(&state.evs, limits.soc);
    r.set(K::EvPower, ev_p, ev_rated);
    r.set(K::EvSoc, ev_soc, soc_width);
    r.set(K::DepartureSoc, ev_dep, soc_width);
    let (b_p, b_soc, b_swap, b_rated) = device_violations(&state.batteries, limits.soc);
    r.set(K::BatteryPower, b_p, b_rated);
    r.set(K::BatterySoc, b_soc, soc_width);
    r.set(K::SwapSoc, b_swap, soc_width);

    let band: f64 = prices
        .market
        .iter()
        .zip(&prices.incentive)
        .map(|(&a, &g)| outside(g, prices.mu1 * a, prices.mu2 * a))
        .sum();
    let mean_alpha = prices.market.iter().sum::<f64>() / prices.market.len().max(1) as f64;
    r.set(K::IncentiveBand, band, (prices.mu2 - prices.mu1) * mean_alpha);

    let (mut curt, mut neutral, mut cap) = (0.0, 0.0, 0.0);
    let mut peak = 0.0_f64;
    let mut cap_scale = 0.0_f64;
    for l in &state.loads {
        let p_max = l.nominal_kw.iter().copied().fold(0.0, f64::max);
        peak = peak.max(p_max);
        for t in 0..l.adjustment_kw.len() {
            curt += outside(l.adjustment_kw[t], l.bounds.lower_kw[t], l.bounds.upper_kw[t]);
        }
        neutral += l.adjustment_kw.iter().sum::<f64>().abs();
        let curtailed: f64 = l.adjustment_kw.iter().zip(&l.flags).filter(|(_, &f)| f).map(|(x, _)| x).sum();
        let allowance = prices.lambda1 * l.nominal_kw.iter().sum::<f64>();
        cap += (curtailed - allowance).max(0.0);
        cap_scale = cap_scale.max(allowance);
    }
    r.set(K::Curtailment, curt, peak);
    r.set(K::LoadNeutrality, neutral, peak);
    r.set(K::DiscomfortCap, cap, cap_scale);

    let (fair, fair_scale) = fairness_violation(state);
    r.set(K::Fairness, fair, fair_scale);

    let mut coverage = 0.0;
    let mut demand_scale = 0.0_f64;
    for s in &state.stations {
        for t in 0..state.grid.intervals {
            let demand = s.ev_kw[t] + s.battery_kw[t];
            demand_scale = demand_scale.max(demand.abs());
            if state.daytime[t] {
                coverage += (prices.lambda2 * demand - s.solar_kw[t]).max(0.0);
            }
        }
    }
    r.set(K::SolarCoverage, coverage, demand_scale);

    let mut payout = 0.0;
    for s in &state.stations {
        for t in 0..state.grid.intervals {
            let inj = s.injection_kw(t);
            if inj > 0.0 {
                payout += prices.incentive[t] * inj * dt;
            }
        }
    }
    r.set(K::DailyBudget, (payout - prices.daily_budget).max(0.0), prices.daily_budget);

    let (v_lo, v_hi) = limits.voltage_pu;
    let volt: f64 = state
        .v_min
        .iter()
        .zip(&state.v_max)
        .map(|(&mn, &mx)| (v_lo - mn).max(0.0) + (mx - v_hi).max(0.0))
        .sum();
    r.set(K::Voltage, volt, v_hi - v_lo);
    r
}

/// Total amount by which the daytime minimum voltage falls below a
/// reference day's, typically the uncontrolled one on the same feeder.
pub fn daytime_voltage_shortfall(state: &ScheduleState, reference_v_min: &[f64]) -> f64 {
    state
        .v_min
        .iter()
        .zip(reference_v_min)
        .zip(&state.daytime)
        .filter(|(_, &day)| day)
        .map(|((&v, &r), _)| (r - v).max(0.0))
        .sum()
}

/// Pairwise mismatch between savings ratios and discomfort ratios for
/// consumers with identical discomfort coefficients, cross-multiplied.
fn fairness_violation(state: &ScheduleState) -> (f64, f64) {
    let alpha = &state.prices.market;
    let stats: Vec<(f64, f64, f64)> = state
        .loads
        .iter()
        .map(|l| {
            let savings: f64 = l.adjustment_kw.iter().zip(alpha).map(|(x, a)| a * x).sum();
            let discomfort = der::discomfort_cost(&l.nominal_kw, &l.adjustment_kw, &l.flags, l.beta).unwrap_or(0.0);
            (l.beta, savings, discomfort)
        })
        .collect();
    let (mut viol, mut scale) = (0.0, 0.0_f64);
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let (b1, s1, d1) = stats[i];
            let (b2, s2, d2) = stats[j];
            if b1 != b2 || d1 == 0.0 || d2 == 0.0 {
                continue;
            }
            viol += (s1 * d2 - s2 * d1).abs();
            scale = scale.max((s1 * d2).abs()).max((s2 * d1).abs());
        }
    }
    (viol, scale)
}

/// Weighted sum of normalized objectives plus a quadratic penalty on the
/// scaled constraint violations. Lower is better.
pub fn penalized_fitness(
    normalized: &[f64; OBJECTIVE_COUNT],
    weights: &[f64; OBJECTIVE_COUNT],
    report: &ConstraintReport,
    penalty_coeff: f64,
) -> f64 {
    weighted_sum(normalized, weights) + penalty_coeff * report.scaled_penalty()
}

pub fn weighted_sum(normalized: &[f64; OBJECTIVE_COUNT], weights: &[f64; OBJECTIVE_COUNT]) -> f64 {
    normalized.iter().zip(weights).map(|(f, w)| f * w).sum()
}
