//! Coordination rules that turn fleet state into per-interval actions:
//! priority factors, pricing flags, mode tables, curtailment limits and
//! feasible power windows.

use serde::{Deserialize, Serialize};

use crate::der::Direction;
use crate::error::{Error, Result};

/// A battery this close to full is treated as full.
const FULL_EPS: f64 = 1e-12;

/// Share of every interval's load that may be curtailed.
pub const CONTROLLABLE_SHARE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvMode {
    Idle,
    UncoordinatedG2V,
    CoordinatedG2V,
    CoordinatedV2G,
}

impl EvMode {
    /// Binary charging indicator: 1 in charging modes, 0 in V2G.
    pub fn z(self) -> u8 {
        match self {
            EvMode::CoordinatedV2G => 0,
            _ => 1,
        }
    }
}

impl Direction for EvMode {
    fn is_discharging(&self) -> bool {
        *self == EvMode::CoordinatedV2G
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryMode {
    Idle,
    UncoordinatedG2B,
    CoordinatedG2B,
    CoordinatedB2G,
}

impl BatteryMode {
    pub fn z(self) -> u8 {
        match self {
            BatteryMode::CoordinatedB2G => 0,
            _ => 1,
        }
    }
}

impl Direction for BatteryMode {
    fn is_discharging(&self) -> bool {
        *self == BatteryMode::CoordinatedB2G
    }
}

/// What a mode allows the power to do, independent of the device type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerClass {
    Idle,
    /// Charge at the cap, no freedom.
    Uncoordinated,
    /// Charge anywhere in `[0, cap]`.
    Charge,
    /// Discharge anywhere in `[-cap, 0]`.
    Discharge,
}

impl From<EvMode> for PowerClass {
    fn from(m: EvMode) -> Self {
        match m {
            EvMode::Idle => PowerClass::Idle,
            EvMode::UncoordinatedG2V => PowerClass::Uncoordinated,
            EvMode::CoordinatedG2V => PowerClass::Charge,
            EvMode::CoordinatedV2G => PowerClass::Discharge,
        }
    }
}

impl From<BatteryMode> for PowerClass {
    fn from(m: BatteryMode) -> Self {
        match m {
            BatteryMode::Idle => PowerClass::Idle,
            BatteryMode::UncoordinatedG2B => PowerClass::Uncoordinated,
            BatteryMode::CoordinatedG2B => PowerClass::Charge,
            BatteryMode::CoordinatedB2G => PowerClass::Discharge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentBounds {
    pub upper_kw: Vec<f64>,
    /// Non-positive: the largest allowed load increment per interval.
    pub lower_kw: Vec<f64>,
}

/// Hours of charging at rated power needed to reach `soc_max`.
pub fn required_charge_time_h(soc_now: f64, soc_max: f64, battery_kwh: f64, eta_in: f64, rated_kw: f64) -> f64 {
    ((soc_max - soc_now).max(0.0)) * battery_kwh / (eta_in * rated_kw)
}

fn priority_factor(
    soc_now: f64,
    soc_max: f64,
    battery_kwh: f64,
    eta_in: f64,
    rated_kw: f64,
    remaining_h: f64,
    horizon_h: f64,
) -> f64 {
    let base = soc_max - soc_now;
    if base <= FULL_EPS {
        return 0.0;
    }
    let needed = required_charge_time_h(soc_now, soc_max, battery_kwh, eta_in, rated_kw);
    base.powf((remaining_h - needed) / horizon_h)
}

/// Charging urgency of a parked EV. Values in `[0, 1)` leave slack for
/// coordination; `>= 1` means it must charge at rated power until it
/// departs. Times are in hours.
#[allow(clippy::too_many_arguments)]
pub fn ev_priority_factor(
    soc_now: f64,
    soc_max: f64,
    battery_kwh: f64,
    eta_g2v: f64,
    rated_kw: f64,
    t_now_h: f64,
    t_depart_h: f64,
    horizon_h: f64,
) -> f64 {
    priority_factor(soc_now, soc_max, battery_kwh, eta_g2v, rated_kw, t_depart_h - t_now_h, horizon_h)
}

/// Same as [`ev_priority_factor`], against the swap time of the EV
/// registered for this battery.
#[allow(clippy::too_many_arguments)]
pub fn battery_priority_factor(
    soc_now: f64,
    soc_max: f64,
    battery_kwh: f64,
    eta_g2b: f64,
    rated_kw: f64,
    t_now_h: f64,
    t_swap_h: f64,
    horizon_h: f64,
) -> f64 {
    priority_factor(soc_now, soc_max, battery_kwh, eta_g2b, rated_kw, t_swap_h - t_now_h, horizon_h)
}

fn intervals_needed(needed_h: f64, dt_h: f64) -> usize {
    let k = needed_h / dt_h - 1e-9;
    if k <= 0.0 {
        0
    } else {
        k.ceil() as usize
    }
}

fn check_window(prices: &[f64], first: usize, last: usize) -> Result<()> {
    if first > last || last >= prices.len() {
        return Err(Error::EmptyWindow { start: first, end: last });
    }
    Ok(())
}

/// Marks the `ceil(needed_h / dt_h)` cheapest intervals of the inclusive
/// window `[t_now, t_last]`. Equal prices favour the earlier interval.
/// The returned mask covers the window; element 0 is the flag for `t_now`.
pub fn ev_pricing_factor(prices: &[f64], t_now: usize, t_last: usize, needed_h: f64, dt_h: f64) -> Result<Vec<bool>> {
    check_window(prices, t_now, t_last)?;
    let k = intervals_needed(needed_h, dt_h);
    let mut idx: Vec<usize> = (t_now..=t_last).collect();
    idx.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]).then(a.cmp(&b)));
    let mut mask = vec![false; idx.len()];
    for &i in idx.iter().take(k) {
        mask[i - t_now] = true;
    }
    Ok(mask)
}

/// Flag for `t_now` alone, without allocating: `t_now` is selected iff
/// fewer than `k` later intervals are strictly cheaper.
pub fn ev_pricing_flag(prices: &[f64], t_now: usize, t_last: usize, needed_h: f64, dt_h: f64) -> Result<bool> {
    check_window(prices, t_now, t_last)?;
    let k = intervals_needed(needed_h, dt_h);
    if k == 0 {
        return Ok(false);
    }
    let p = prices[t_now];
    let cheaper = prices[t_now + 1..=t_last].iter().filter(|&&q| q < p).count();
    Ok(cheaper < k)
}

/// Flags the most expensive half (rounded up) of the inclusive window
/// `[t_start, t_last]` for curtailment. Equal prices favour the earlier
/// interval.
pub fn cl_pricing_factor(prices: &[f64], t_start: usize, t_last: usize) -> Result<Vec<bool>> {
    check_window(prices, t_start, t_last)?;
    let len = t_last - t_start + 1;
    let marked = len.div_ceil(2);
    let mut idx: Vec<usize> = (t_start..=t_last).collect();
    idx.sort_by(|&a, &b| prices[b].total_cmp(&prices[a]).then(a.cmp(&b)));
    let mut mask = vec![false; len];
    for &i in idx.iter().take(marked) {
        mask[i - t_start] = true;
    }
    Ok(mask)
}

/// [`cl_pricing_factor`] expanded to the full horizon for a window
/// `t_start..t_stop`.
pub fn cl_flags(prices: &[f64], t_start: usize, t_stop: usize) -> Result<Vec<bool>> {
    if t_stop == 0 {
        return Err(Error::EmptyWindow { start: t_start, end: t_stop });
    }
    let window = cl_pricing_factor(prices, t_start, t_stop - 1)?;
    let mut flags = vec![false; prices.len()];
    flags[t_start..t_stop].copy_from_slice(&window);
    Ok(flags)
}

pub fn ev_mode_select(rho: f64, pricing_flag: bool, connected: bool, soc_now: f64, soc_max: f64) -> EvMode {
    if !connected || soc_now >= soc_max - FULL_EPS {
        EvMode::Idle
    } else if rho >= 1.0 {
        EvMode::UncoordinatedG2V
    } else if pricing_flag {
        EvMode::CoordinatedG2V
    } else {
        EvMode::CoordinatedV2G
    }
}

/// Irradiance decides between solar-backed charging and night-time
/// discharge. Modes that the SoC cannot support fall back to idle.
pub fn battery_mode_select(
    rho: f64,
    irradiance: f64,
    sigma_threshold: f64,
    soc_now: f64,
    soc_bounds: (f64, f64),
) -> BatteryMode {
    let (soc_min, soc_max) = soc_bounds;
    let full = soc_now >= soc_max - FULL_EPS;
    let empty = soc_now <= soc_min + FULL_EPS;
    let mode = if rho >= 1.0 {
        BatteryMode::UncoordinatedG2B
    } else if irradiance >= sigma_threshold {
        BatteryMode::CoordinatedG2B
    } else {
        BatteryMode::CoordinatedB2G
    };
    match mode {
        BatteryMode::UncoordinatedG2B | BatteryMode::CoordinatedG2B if full => BatteryMode::Idle,
        BatteryMode::CoordinatedB2G if empty => BatteryMode::Idle,
        m => m,
    }
}

pub fn curtailment_bounds(nominal_kw: &[f64]) -> CurtailmentBounds {
    let peak = nominal_kw.iter().copied().fold(0.0_f64, f64::max);
    CurtailmentBounds {
        upper_kw: nominal_kw.iter().map(|p| CONTROLLABLE_SHARE * p).collect(),
        lower_kw: nominal_kw.iter().map(|p| p - peak).collect(),
    }
}

/// Hard power limits for one interval, `(min, max)` in kW.
/// `eta = (charging, discharging)` efficiencies.
pub fn feasible_power_range(
    mode: impl Into<PowerClass>,
    rated_kw: f64,
    soc_now: f64,
    soc_bounds: (f64, f64),
    battery_kwh: f64,
    eta: (f64, f64),
    dt_h: f64,
) -> (f64, f64) {
    let (soc_min, soc_max) = soc_bounds;
    let charge_cap = rated_kw.min((soc_max - soc_now).max(0.0) * battery_kwh / (eta.0 * dt_h));
    let discharge_cap = rated_kw.min((soc_now - soc_min).max(0.0) * battery_kwh * eta.1 / dt_h);
    match mode.into() {
        PowerClass::Idle => (0.0, 0.0),
        PowerClass::Uncoordinated => (charge_cap, charge_cap),
        PowerClass::Charge => (0.0, charge_cap),
        PowerClass::Discharge => (-discharge_cap, 0.0),
    }
}

/// Smallest power this interval that still lets the device reach
/// `soc_max` by charging at rated power for the `remaining_after_h` hours
/// that follow. Negative values are the discharge the deadline tolerates.
pub fn deadline_floor_kw(
    soc_now: f64,
    soc_max: f64,
    battery_kwh: f64,
    eta: (f64, f64),
    rated_kw: f64,
    remaining_after_h: f64,
    dt_h: f64,
) -> f64 {
    let soc_needed = soc_max - remaining_after_h.max(0.0) * eta.0 * rated_kw / battery_kwh;
    if soc_needed > soc_now {
        (soc_needed - soc_now) * battery_kwh / (eta.0 * dt_h)
    } else {
        -(soc_now - soc_needed) * battery_kwh * eta.1 / dt_h
    }
}

/// One device competing for a station-level dispatch share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchSlot {
    pub rho: f64,
    pub min_kw: f64,
    pub max_kw: f64,
    pub power_kw: f64,
}

/// Places the station's coordinated power at `fraction` of the way from
/// its aggregate minimum to its aggregate maximum. Headroom above each
/// slot's minimum is granted in descending priority order, so the most
/// urgent devices charge first and the least urgent keep discharging
/// longest. Returns the station total.
pub fn allocate_by_priority(slots: &mut [DispatchSlot], order: &mut Vec<usize>, fraction: f64) -> f64 {
    let fraction = fraction.clamp(0.0, 1.0);
    order.clear();
    order.extend(0..slots.len());
    order.sort_by(|&a, &b| slots[b].rho.total_cmp(&slots[a].rho).then(a.cmp(&b)));
    let headroom: f64 = slots.iter().map(|s| s.max_kw - s.min_kw).sum();
    let mut budget = fraction * headroom;
    let mut total = 0.0;
    for &i in order.iter() {
        let s = &mut slots[i];
        let extra = budget.min(s.max_kw - s.min_kw).max(0.0);
        budget -= extra;
        s.power_kw = s.min_kw + extra;
        total += s.power_kw;
    }
    total
}
