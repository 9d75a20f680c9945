use super::config::ScenarioConfig;
use super::decision::DecisionVector;
use super::fleet::DeviceFleet;
use crate::der::{battery_soc_step, ev_soc_step, solar_power, ChargerSpec};
use crate::dispatch::{
    allocate_by_priority, battery_mode_select, battery_priority_factor, cl_flags, curtailment_bounds, deadline_floor_kw,
    ev_mode_select, ev_pricing_flag, ev_priority_factor, feasible_power_range, required_charge_time_h, DispatchSlot,
    PowerClass,
};
use crate::error::{Error, Result};
use crate::network::{solve_power_flow, PowerFlowOptions};
use crate::objective::{DeviceTrace, LoadTrace, PriceSchedule, ScheduleState, StationTrace};

#[derive(Clone, Copy)]
enum Control<'a> {
    Coordinated(&'a DecisionVector),
    Uncontrolled(&'a [f64]),
}

/// Runs one day under the VPP's decision: priority and pricing factors,
/// mode selection, station-level dispatch, SoC updates, swaps and a power
/// flow per interval.
pub fn simulate_schedule(config: &ScenarioConfig, fleet: &DeviceFleet, decision: &DecisionVector) -> Result<ScheduleState> {
    simulate(config, fleet, Control::Coordinated(decision))
}

/// The comparison day: every EV and pack charges at rated power until
/// full, nothing discharges, loads follow their nominal profile, solar
/// only serves the station it sits at and any surplus is spilled. Charging
/// is billed at the market price.
pub fn run_uncontrolled_baseline(config: &ScenarioConfig, fleet: &DeviceFleet, solar_capacity_kwp: &[f64]) -> Result<ScheduleState> {
    simulate(config, fleet, Control::Uncontrolled(solar_capacity_kwp))
}

struct Device {
    kwh: f64,
    rated: f64,
    soc: f64,
    trace: DeviceTrace,
}

impl Device {
    fn new(station: usize, kwh: f64, rated: f64, soc: f64, intervals: usize) -> Self {
        let mut s = Vec::with_capacity(intervals + 1);
        s.push(soc);
        Self {
            kwh,
            rated,
            soc,
            trace: DeviceTrace {
                station,
                battery_kwh: kwh,
                rated_kw: rated,
                soc: s,
                power_kw: Vec::with_capacity(intervals),
                discharging: Vec::with_capacity(intervals),
                deadline_soc: None,
            },
        }
    }
}

/// Device limits for one interval after the deadline floor is applied. A
/// device whose mode cannot keep its deadline reachable is switched to
/// coordinated charging from the floor upwards.
#[allow(clippy::too_many_arguments)]
fn range_with_floor(
    class: PowerClass,
    d: &Device,
    bounds: (f64, f64),
    eta: (f64, f64),
    dt: f64,
    remaining_after_h: Option<f64>,
) -> (f64, f64) {
    let (mut lo, mut hi) = feasible_power_range(class, d.rated, d.soc, bounds, d.kwh, eta, dt);
    if let Some(rem) = remaining_after_h {
        let floor = deadline_floor_kw(d.soc, bounds.1, d.kwh, eta, d.rated, rem, dt);
        if floor > lo {
            lo = floor;
            if lo > hi {
                let (_, cap) = feasible_power_range(PowerClass::Charge, d.rated, d.soc, bounds, d.kwh, eta, dt);
                hi = cap;
                lo = floor.min(cap);
            }
        }
    }
    (lo, hi)
}

/// Largest station demand its own solar can cover in a coordinated
/// daytime interval.
fn coverage_cap(config: &ScenarioConfig, coordinated: bool, t: usize, solar_kw: f64) -> Option<f64> {
    let share = config.file.policy.lambda2;
    (coordinated && config.daytime[t] && share > 0.0).then(|| solar_kw / share)
}

/// Lowers a dispatch share until the station total fits under `cap`,
/// never below the devices' own minimums.
fn capped_fraction(slots: &[DispatchSlot], fraction: f64, cap: Option<f64>) -> f64 {
    let Some(cap) = cap else { return fraction };
    let lo: f64 = slots.iter().map(|s| s.min_kw).sum();
    let headroom: f64 = slots.iter().map(|s| s.max_kw - s.min_kw).sum();
    if headroom <= 0.0 || lo + fraction * headroom <= cap {
        return fraction;
    }
    ((cap - lo) / headroom).clamp(0.0, fraction)
}

fn advance(
    devices: &mut [Device],
    slots: &[DispatchSlot],
    active: &[usize],
    step: impl Fn(f64, f64, f64, bool) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut k = 0;
    for (i, d) in devices.iter_mut().enumerate() {
        let p = if k < active.len() && active[k] == i {
            k += 1;
            slots[k - 1].power_kw
        } else {
            0.0
        };
        if p != 0.0 {
            d.soc = step(d.soc, p, d.kwh, p > 0.0)?;
        }
        d.trace.power_kw.push(p);
        d.trace.discharging.push(p < 0.0);
        d.trace.soc.push(d.soc);
        total += p;
    }
    Ok(total)
}

fn simulate(config: &ScenarioConfig, fleet: &DeviceFleet, control: Control<'_>) -> Result<ScheduleState> {
    let grid = config.grid;
    let (n_t, dt, horizon) = (grid.intervals, grid.dt_h, grid.horizon_h());
    let charger: &ChargerSpec = &config.file.charger;
    let policy = &config.file.policy;
    let weather = &config.file.weather;
    let market = &config.file.market_price;
    let bounds = (charger.soc_min, charger.soc_max);
    let ev_eta = (charger.eta_g2v, charger.eta_v2g);
    let bat_eta = (charger.eta_g2b, charger.eta_b2g);

    let (solar_caps, incentive, decision) = match control {
        Control::Coordinated(d) => (&d.solar_capacity[..], d.incentive_price.clone(), Some(d)),
        Control::Uncontrolled(c) => (c, market.clone(), None),
    };
    if solar_caps.len() != fleet.stations.len() {
        return Err(Error::validation("solar_capacity", "one capacity per station is required"));
    }

    let mut stations = Vec::with_capacity(fleet.stations.len());
    let mut ev_traces = Vec::with_capacity(fleet.ev_count());
    let mut bat_traces = Vec::new();
    let mut slots = Vec::new();
    let mut active = Vec::new();
    let mut order = Vec::new();
    for (s, st) in fleet.stations.iter().enumerate() {
        let solar_kw = (0..n_t)
            .map(|t| solar_power(&config.solar, solar_caps[s], weather.irradiance[t], weather.ambient_temp[t]))
            .collect::<Result<Vec<_>>>()?;
        let mut evs: Vec<Device> = st.evs.iter().map(|e| Device::new(s, e.battery_kwh, e.rated_kw, e.soc_arrival, n_t)).collect();
        let mut bats: Vec<Device> =
            st.batteries.iter().map(|b| Device::new(s, b.battery_kwh, b.rated_kw, b.soc_initial, n_t)).collect();
        let mut ev_kw = vec![0.0; n_t];
        let mut battery_kw = vec![0.0; n_t];
        for t in 0..n_t {
            let now_h = t as f64 * dt;

            slots.clear();
            active.clear();
            for (i, (d, rec)) in evs.iter().zip(&st.evs).enumerate() {
                if t < rec.t_arrive || t >= rec.t_depart {
                    continue;
                }
                let depart_h = rec.t_depart as f64 * dt;
                let (rho, flag) = if decision.is_some() {
                    let rho = ev_priority_factor(d.soc, bounds.1, d.kwh, ev_eta.0, d.rated, now_h, depart_h, horizon);
                    let need = required_charge_time_h(d.soc, bounds.1, d.kwh, ev_eta.0, d.rated);
                    (rho, ev_pricing_flag(&incentive, t, rec.t_depart - 1, need, dt)?)
                } else {
                    (f64::INFINITY, true)
                };
                let mode = ev_mode_select(rho, flag, true, d.soc, bounds.1);
                let rem = decision.map(|_| (rec.t_depart - t - 1) as f64 * dt);
                let (lo, hi) = range_with_floor(mode.into(), d, bounds, ev_eta, dt, rem);
                slots.push(DispatchSlot {
                    rho,
                    min_kw: lo,
                    max_kw: hi,
                    power_kw: lo,
                });
                active.push(i);
            }
            let cover = coverage_cap(config, decision.is_some(), t, solar_kw[t]);
            let fraction = decision.map_or(1.0, |d| d.ev_dispatch_fraction[s][t]);
            let fraction = capped_fraction(&slots, fraction, cover);
            allocate_by_priority(&mut slots, &mut order, fraction);
            ev_kw[t] = advance(&mut evs, &slots, &active, |soc, p, kwh, ch| ev_soc_step(soc, p, dt, kwh, charger, ch))?;

            slots.clear();
            active.clear();
            for (i, (d, rec)) in bats.iter_mut().zip(&st.batteries).enumerate() {
                if t == rec.t_swap {
                    d.trace.deadline_soc = Some(d.soc);
                    d.soc = rec.incoming_soc;
                    *d.trace.soc.last_mut().expect("trajectory starts non-empty") = d.soc;
                }
                let before_swap = t < rec.t_swap;
                let rho = match (decision.is_some(), before_swap) {
                    (false, _) => f64::INFINITY,
                    (true, true) => {
                        battery_priority_factor(d.soc, bounds.1, d.kwh, bat_eta.0, d.rated, now_h, rec.t_swap as f64 * dt, horizon)
                    }
                    (true, false) => 0.0,
                };
                let mode = battery_mode_select(rho, weather.irradiance[t], policy.sigma, d.soc, bounds);
                let rem = match decision {
                    Some(_) if before_swap => Some((rec.t_swap - t - 1) as f64 * dt),
                    _ => None,
                };
                let (lo, hi) = range_with_floor(mode.into(), d, bounds, bat_eta, dt, rem);
                slots.push(DispatchSlot {
                    rho,
                    min_kw: lo,
                    max_kw: hi,
                    power_kw: lo,
                });
                active.push(i);
            }
            let fraction = decision.map_or(1.0, |d| d.battery_dispatch_fraction[s][t]);
            let cover = cover.map(|c| c - ev_kw[t]);
            let fraction = capped_fraction(&slots, fraction, cover);
            allocate_by_priority(&mut slots, &mut order, fraction);
            battery_kw[t] =
                advance(&mut bats, &slots, &active, |soc, p, kwh, ch| battery_soc_step(soc, p, dt, kwh, charger, ch))?;
        }
        let spilled_kw = (0..n_t)
            .map(|t| match decision {
                Some(_) => 0.0,
                None => (solar_kw[t] - ev_kw[t] - battery_kw[t]).max(0.0),
            })
            .collect();
        for (d, rec) in evs.iter_mut().zip(&st.evs) {
            d.trace.deadline_soc = Some(d.trace.soc[rec.t_depart]);
        }
        ev_traces.extend(evs.into_iter().map(|d| d.trace));
        bat_traces.extend(bats.into_iter().map(|d| d.trace));
        stations.push(StationTrace {
            node: st.node,
            solar_capacity_kwp: solar_caps[s],
            solar_kw,
            ev_kw,
            battery_kw,
            spilled_kw,
        });
    }

    let mut loads = Vec::with_capacity(fleet.loads.len());
    for (l, load) in fleet.loads.iter().enumerate() {
        let adjustment_kw = match decision {
            Some(d) => d.curtailment[l].iter().map(|x| x * fleet.adjustment_scale).collect(),
            None => vec![0.0; n_t],
        };
        loads.push(LoadTrace {
            node: load.node,
            flags: cl_flags(market, load.t_start, load.t_stop)?,
            bounds: curtailment_bounds(&load.nominal_kw),
            nominal_kw: load.nominal_kw.clone(),
            adjustment_kw,
            beta: load.beta,
        });
    }

    let q_ratio = reactive_ratios(config);
    let n_bus = config.feeder.len();
    let mut grid_import_kw = Vec::with_capacity(n_t);
    let mut loss_kw = Vec::with_capacity(n_t);
    let mut v_min = Vec::with_capacity(n_t);
    let mut v_max = Vec::with_capacity(n_t);
    let mut p = vec![0.0; n_bus];
    let mut q = vec![0.0; n_bus];
    for t in 0..n_t {
        p.iter_mut().for_each(|v| *v = 0.0);
        q.iter_mut().for_each(|v| *v = 0.0);
        for (bus, profile) in &fleet.fixed_loads {
            p[bus - 1] += profile[t];
            q[bus - 1] += profile[t] * q_ratio[bus - 1];
        }
        for l in &loads {
            let demand = l.nominal_kw[t] - l.adjustment_kw[t];
            p[l.node - 1] += demand;
            q[l.node - 1] += demand * q_ratio[l.node - 1];
        }
        for st in &stations {
            p[st.node - 1] -= st.injection_kw(t);
        }
        let sol = solve_power_flow(&config.feeder, &p, &q, PowerFlowOptions::default()).map_err(|e| Error::Interval {
            interval: t,
            source: Box::new(e),
        })?;
        let slack = config.feeder.slack_id() - 1;
        let load_buses = sol.voltage_mag.iter().enumerate().filter(|&(i, _)| i != slack).map(|(_, &v)| v);
        let (mn, mx) = load_buses.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        grid_import_kw.push(sol.slack_injection);
        loss_kw.push(sol.total_loss);
        v_min.push(mn);
        v_max.push(mx);
    }

    Ok(ScheduleState {
        grid,
        prices: PriceSchedule {
            market: market.clone(),
            incentive,
            mu1: policy.mu1,
            mu2: policy.mu2,
            daily_budget: policy.daily_budget,
            weights: policy.weights,
            lambda1: policy.lambda1,
            lambda2: policy.lambda2,
        },
        daytime: config.daytime.clone(),
        stations,
        evs: ev_traces,
        batteries: bat_traces,
        loads,
        fixed_load_kw: (0..n_t).map(|t| fleet.fixed_loads.iter().map(|(_, p)| p[t]).sum()).collect(),
        grid_import_kw,
        loss_kw,
        v_min,
        v_max,
    })
}

/// kvar drawn per kW of demand at each bus.
fn reactive_ratios(config: &ScenarioConfig) -> Vec<f64> {
    let loads = &config.file.loads;
    if loads.reactive_from_feeder {
        let (p0, q0) = config.feeder.nominal_loads();
        p0.iter().zip(&q0).map(|(&p, &q)| if p > 0.0 { q / p } else { 0.0 }).collect()
    } else {
        let pf = loads.power_factor;
        vec![(1.0 - pf * pf).sqrt() / pf; config.feeder.len()]
    }
}
