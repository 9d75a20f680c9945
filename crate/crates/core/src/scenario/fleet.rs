use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{default_uncertainty, BatteryModel, Grouping, ScenarioConfig};
use crate::der::{ControllableLoad, EvRecord, SwapBatteryRecord};
use crate::dispatch::required_charge_time_h;
use crate::stochastic::{UncertainVariable, UncertaintyKind};

/// Individual draws for one vehicle before any day-level shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvDraw {
    pub station: usize,
    pub model: BatteryModel,
    pub arrival_h: f64,
    pub departure_h: f64,
    pub soc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryDraw {
    pub station: usize,
    pub model: BatteryModel,
    pub soc_initial: f64,
    pub swap_h: f64,
    pub incoming_soc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadDraw {
    pub node: usize,
    pub category: usize,
    pub start_h: f64,
    pub stop_h: f64,
}

/// The seeded population of devices. Uncertain day-level quantities are
/// applied on top of it by [`FleetTemplate::realize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetTemplate {
    pub evs: Vec<EvDraw>,
    pub batteries: Vec<BatteryDraw>,
    pub loads: Vec<LoadDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFleet {
    pub node: usize,
    pub evs: Vec<EvRecord>,
    pub batteries: Vec<SwapBatteryRecord>,
}

/// Every device of one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceFleet {
    pub stations: Vec<StationFleet>,
    pub loads: Vec<ControllableLoad>,
    /// Demand of buses outside demand response, kW per interval.
    pub fixed_loads: Vec<(usize, Vec<f64>)>,
    /// Ratio between this day's demand level and the nominal one; load
    /// adjustments scale with it.
    pub adjustment_scale: f64,
}

impl DeviceFleet {
    pub fn ev_count(&self) -> usize {
        self.stations.iter().map(|s| s.evs.len()).sum()
    }
}

/// Which fleet quantity an uncertain variable shifts, and at which
/// station (`None` = all).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableTarget {
    pub kind: UncertaintyKind,
    pub station: Option<usize>,
}

fn lookup(config: &ScenarioConfig, kind: UncertaintyKind) -> UncertainVariable {
    config
        .variable(kind)
        .cloned()
        .unwrap_or_else(|| default_uncertainty().into_iter().find(|v| v.kind == kind).expect("every kind has a default"))
}

/// The uncertain variables of the scenario, expanded per station when the
/// grouping asks for it.
pub fn uncertain_variables(config: &ScenarioConfig) -> (Vec<UncertainVariable>, Vec<VariableTarget>) {
    let mut vars = Vec::new();
    let mut targets = Vec::new();
    for v in &config.file.uncertainty.variables {
        let per_station = config.file.uncertainty.grouping == Grouping::PerStation
            && matches!(v.kind, UncertaintyKind::EvArrival | UncertaintyKind::EvDeparture | UncertaintyKind::EvSoc);
        if per_station {
            for s in 0..config.station_count() {
                let mut sv = v.clone();
                sv.id = format!("{}_{}", v.id, config.file.der_nodes[s]);
                vars.push(sv);
                targets.push(VariableTarget { kind: v.kind, station: Some(s) });
            }
        } else {
            vars.push(v.clone());
            targets.push(VariableTarget { kind: v.kind, station: None });
        }
    }
    (vars, targets)
}

fn clamped(normal: &Normal<f64>, v: &UncertainVariable, rng: &mut ChaCha8Rng) -> f64 {
    normal.sample(rng).clamp(v.min, v.max)
}

fn normal_of(v: &UncertainVariable) -> Normal<f64> {
    Normal::new(v.mean, v.std).expect("validated std")
}

/// Draws every device of the scenario from the distributions of the
/// uncertainty table, clamped to their ranges. Windows that open after
/// they close are redrawn.
pub fn sample_fleet(config: &ScenarioConfig, seed: u64) -> FleetTemplate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arr = lookup(config, UncertaintyKind::EvArrival);
    let dep = lookup(config, UncertaintyKind::EvDeparture);
    let soc = lookup(config, UncertaintyKind::EvSoc);
    let start = lookup(config, UncertaintyKind::DrStart);
    let stop = lookup(config, UncertaintyKind::DrStop);
    let (n_arr, n_dep, n_soc) = (normal_of(&arr), normal_of(&dep), normal_of(&soc));
    let (n_start, n_stop) = (normal_of(&start), normal_of(&stop));
    let fleet = &config.file.fleet;
    let models = &fleet.ev_models;

    let mut evs = Vec::new();
    let mut batteries = Vec::new();
    for station in 0..config.station_count() {
        for k in 0..fleet.evs_per_station {
            let (a, d) = window_pair(&n_arr, &arr, &n_dep, &dep, &mut rng);
            evs.push(EvDraw {
                station,
                model: models[k % models.len()],
                arrival_h: a,
                departure_h: d,
                soc: clamped(&n_soc, &soc, &mut rng),
            });
        }
        for k in 0..fleet.batteries_per_station {
            batteries.push(BatteryDraw {
                station,
                model: models[k % models.len()],
                soc_initial: clamped(&n_soc, &soc, &mut rng),
                swap_h: clamped(&n_arr, &arr, &mut rng),
                incoming_soc: clamped(&n_soc, &soc, &mut rng),
            });
        }
    }
    let mut loads = Vec::new();
    for (category, c) in config.file.loads.categories.iter().enumerate() {
        for &node in &c.nodes {
            let (s, e) = window_pair(&n_start, &start, &n_stop, &stop, &mut rng);
            loads.push(LoadDraw {
                node,
                category,
                start_h: s,
                stop_h: e,
            });
        }
    }
    loads.sort_by_key(|l| l.node);
    FleetTemplate { evs, batteries, loads }
}

fn window_pair(
    n_open: &Normal<f64>,
    open: &UncertainVariable,
    n_close: &Normal<f64>,
    close: &UncertainVariable,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    for _ in 0..1000 {
        let a = clamped(n_open, open, rng);
        let d = clamped(n_close, close, rng);
        if a < d {
            return (a, d);
        }
    }
    (open.min, close.max)
}

/// Day-level shifts decoded from one concentration point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Shifts {
    arrival: f64,
    departure: f64,
    soc: f64,
}

impl FleetTemplate {
    /// Builds the day's devices with each uncertain variable at `values`
    /// (same order as [`uncertain_variables`]). Time and SoC variables
    /// shift every individual draw by `value - mean`; the load-scale
    /// variable multiplies demand.
    pub fn realize(&self, config: &ScenarioConfig, values: &[f64], nominal_scale: f64) -> DeviceFleet {
        let (vars, targets) = uncertain_variables(config);
        let grid = config.grid;
        let dt = grid.dt_h;
        let charger = &config.file.charger;
        let stations = config.station_count();
        let mut shifts = vec![
            Shifts {
                arrival: 0.0,
                departure: 0.0,
                soc: 0.0
            };
            stations
        ];
        let (mut dr_start, mut dr_stop, mut scale) = (0.0, 0.0, 1.0);
        for ((v, t), &x) in vars.iter().zip(&targets).zip(values) {
            let shift = x - v.mean;
            let apply = |shifts: &mut Vec<Shifts>, f: &dyn Fn(&mut Shifts)| match t.station {
                Some(s) => f(&mut shifts[s]),
                None => shifts.iter_mut().for_each(f),
            };
            match t.kind {
                UncertaintyKind::EvArrival => apply(&mut shifts, &|s| s.arrival = shift),
                UncertaintyKind::EvDeparture => apply(&mut shifts, &|s| s.departure = shift),
                UncertaintyKind::EvSoc => apply(&mut shifts, &|s| s.soc = shift),
                UncertaintyKind::DrStart => dr_start = shift,
                UncertaintyKind::DrStop => dr_stop = shift,
                UncertaintyKind::LoadScale => scale = x,
            }
        }
        let arr = lookup(config, UncertaintyKind::EvArrival);
        let dep = lookup(config, UncertaintyKind::EvDeparture);
        let soc_v = lookup(config, UncertaintyKind::EvSoc);
        let start_v = lookup(config, UncertaintyKind::DrStart);
        let stop_v = lookup(config, UncertaintyKind::DrStop);
        let slot = |h: f64, lo: f64, hi: f64| -> usize { (h.clamp(lo, hi) / dt).round() as usize };
        let soc_of = |s: f64| s.clamp(soc_v.min.max(charger.soc_min), soc_v.max.min(charger.soc_max));

        let mut out: Vec<StationFleet> = (0..stations)
            .map(|s| StationFleet {
                node: config.file.der_nodes[s],
                evs: Vec::new(),
                batteries: Vec::new(),
            })
            .collect();
        for (id, e) in self.evs.iter().enumerate() {
            let sh = shifts[e.station];
            let soc = soc_of(e.soc + sh.soc);
            let t_arrive = slot(e.arrival_h + sh.arrival, arr.min, arr.max).min(grid.intervals - 1);
            let mut t_depart = slot(e.departure_h + sh.departure, dep.min, dep.max).min(grid.intervals);
            let need_h = required_charge_time_h(soc, charger.soc_max, e.model.battery_kwh, charger.eta_g2v, e.model.rated_kw);
            let need = ((need_h / dt) - 1e-9).ceil().max(1.0) as usize;
            t_depart = t_depart.max(t_arrive + need).min(grid.intervals);
            out[e.station].evs.push(EvRecord {
                id,
                battery_kwh: e.model.battery_kwh,
                rated_kw: e.model.rated_kw,
                soc_arrival: soc,
                t_arrive,
                t_depart,
                node: config.file.der_nodes[e.station],
            });
        }
        let (day_first, day_last) = config.daytime_window().unwrap_or((0, grid.intervals - 1));
        for (id, b) in self.batteries.iter().enumerate() {
            let sh = shifts[b.station];
            let t_swap = slot(b.swap_h + sh.arrival, arr.min, arr.max).clamp(day_first, day_last);
            out[b.station].batteries.push(SwapBatteryRecord {
                id,
                battery_kwh: b.model.battery_kwh,
                rated_kw: b.model.rated_kw,
                soc_initial: soc_of(b.soc_initial),
                t_swap,
                incoming_soc: soc_of(b.incoming_soc + sh.soc),
                node: config.file.der_nodes[b.station],
            });
        }

        let (peaks, _) = config.feeder.nominal_loads();
        let categories = &config.file.loads.categories;
        let loads = self
            .loads
            .iter()
            .map(|l| {
                let c = &categories[l.category];
                let peak = peaks[l.node - 1];
                let t_start = slot(l.start_h + dr_start, start_v.min, start_v.max).min(grid.intervals - 1);
                let t_stop = slot(l.stop_h + dr_stop, stop_v.min, stop_v.max).max(t_start + 1).min(grid.intervals);
                ControllableLoad {
                    node: l.node,
                    nominal_kw: c.profile.iter().map(|f| peak * f * scale).collect(),
                    beta: c.beta,
                    t_start,
                    t_stop,
                }
            })
            .collect::<Vec<_>>();
        let mut fixed_loads = Vec::new();
        for bus in 1..=config.feeder.len() {
            if bus == config.feeder.slack_id() || loads.iter().any(|l| l.node == bus) {
                continue;
            }
            let peak = peaks[bus - 1];
            fixed_loads.push((bus, config.file.loads.default_profile.iter().map(|f| peak * f * scale).collect()));
        }
        DeviceFleet {
            stations: out,
            loads,
            fixed_loads,
            adjustment_scale: scale / nominal_scale,
        }
    }
}
