use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::der::{ChargerSpec, SolarModuleSpec, WeatherProfile};
use crate::error::{Error, Result};
use crate::network::Feeder;
use crate::optimizer::OptimizerConfig;
use crate::stochastic::{MomentModel, UncertainVariable, UncertaintyKind};
use crate::time::TimeGrid;

fn default_base_kv() -> f64 {
    12.66
}
fn default_base_mva() -> f64 {
    1.0
}
fn default_der_nodes() -> Vec<usize> {
    vec![8, 15, 21, 23, 30]
}
fn default_intervals() -> usize {
    24
}
fn default_dt() -> f64 {
    1.0
}
fn default_evs() -> usize {
    100
}
fn default_batteries() -> usize {
    10
}
fn default_power_factor() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default = "default_dt")]
    pub dt_h: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            intervals: default_intervals(),
            dt_h: default_dt(),
        }
    }
}

/// Module datasheet as given by manufacturers, with temperature
/// coefficients in %/°C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarSection {
    pub p_nom_kwp: f64,
    pub v_mpp: f64,
    pub i_mpp: f64,
    pub v_oc: f64,
    pub i_sc: f64,
    pub k_v_pct_per_c: f64,
    pub k_i_pct_per_c: f64,
    pub t_nominal: f64,
    pub lifetime_years: f64,
    pub install_cost: f64,
    pub maint_cost: f64,
    pub interest_rate: f64,
    pub capacity_min_kwp: f64,
    pub capacity_max_kwp: f64,
}

impl SolarSection {
    pub fn module(&self) -> SolarModuleSpec {
        SolarModuleSpec {
            p_nom_kwp: self.p_nom_kwp,
            v_mpp: self.v_mpp,
            i_mpp: self.i_mpp,
            v_oc: self.v_oc,
            i_sc: self.i_sc,
            k_v: self.k_v_pct_per_c * self.v_oc / 100.0,
            k_i: self.k_i_pct_per_c * self.i_sc / 100.0,
            t_nominal: self.t_nominal,
            lifetime_years: self.lifetime_years,
            install_cost: self.install_cost,
            maint_cost: self.maint_cost,
            interest_rate: self.interest_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryModel {
    pub battery_kwh: f64,
    pub rated_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    #[serde(default = "default_evs")]
    pub evs_per_station: usize,
    #[serde(default = "default_batteries")]
    pub batteries_per_station: usize,
    /// Vehicle models, assigned to EVs in rotation. Swap-station packs
    /// use the same models.
    pub ev_models: Vec<BatteryModel>,
    /// Seed for the individual vehicle draws.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCategory {
    pub name: String,
    pub beta: f64,
    /// Multiplier applied to each node's peak demand, per interval.
    pub profile: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    /// Use each feeder row's own Q/P ratio instead of `power_factor`.
    #[serde(default)]
    pub reactive_from_feeder: bool,
    /// Profile for load buses not listed in any category; these buses do
    /// not take part in demand response.
    pub default_profile: Vec<f64>,
    #[serde(default)]
    pub categories: Vec<LoadCategory>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One variable per quantity, shared by every station.
    #[default]
    Fleet,
    /// Arrival, departure and arrival SoC per station.
    PerStation,
}

fn table_variable(id: &str, kind: UncertaintyKind, mean: f64, std: f64, min: f64, max: f64) -> UncertainVariable {
    UncertainVariable {
        id: id.into(),
        kind,
        mean,
        std,
        min,
        max,
    }
}

/// Arrival/departure and DR window statistics of the reference study,
/// plus a 2% spread on demand.
pub fn default_uncertainty() -> Vec<UncertainVariable> {
    use UncertaintyKind::*;
    vec![
        table_variable("ev_arrival", EvArrival, 8.0, 3.0, 1.0, 20.0),
        table_variable("ev_departure", EvDeparture, 17.0, 3.0, 11.0, 24.0),
        table_variable("ev_soc", EvSoc, 0.5, 0.25, 0.3, 0.9),
        table_variable("dr_start", DrStart, 8.0, 3.0, 1.0, 20.0),
        table_variable("dr_stop", DrStop, 17.0, 3.0, 11.0, 24.0),
        table_variable("load_scale", LoadScale, 1.0, 0.02, 0.9, 1.1),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub moment_model: MomentModel,
    #[serde(default = "default_uncertainty")]
    pub variables: Vec<UncertainVariable>,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        Self {
            grouping: Grouping::default(),
            moment_model: MomentModel::default(),
            variables: default_uncertainty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub mu1: f64,
    pub mu2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Irradiance separating day from night, kW/m².
    pub sigma: f64,
    pub daily_budget: f64,
    pub weights: [f64; 5],
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            mu1: 0.6,
            mu2: 0.9,
            lambda1: 0.2,
            lambda2: 0.6,
            sigma: 0.05,
            daily_budget: 1000.0,
            weights: [0.2; 5],
            v_min: 0.90,
            v_max: 1.05,
        }
    }
}

/// Budget of the single-objective runs that locate the utopia bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtopiaSection {
    pub population: usize,
    pub iterations: usize,
}

impl Default for UtopiaSection {
    fn default() -> Self {
        Self {
            population: 20,
            iterations: 40,
        }
    }
}

/// The scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub feeder: PathBuf,
    #[serde(default = "default_base_kv")]
    pub base_kv: f64,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default = "default_der_nodes")]
    pub der_nodes: Vec<usize>,
    #[serde(default)]
    pub time: TimeSection,
    pub market_price: Vec<f64>,
    pub weather: WeatherProfile,
    pub solar: SolarSection,
    #[serde(default)]
    pub charger: ChargerSpec,
    pub fleet: FleetSection,
    pub loads: LoadSection,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub utopia: UtopiaSection,
}

/// A validated scenario with its feeder loaded.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub file: ScenarioFile,
    pub source: PathBuf,
    pub feeder: Feeder,
    pub grid: TimeGrid,
    pub solar: SolarModuleSpec,
    /// `s^t >= sigma`, per interval.
    pub daytime: Vec<bool>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioFile> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        reason: e.message().trim().to_string(),
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    let file = parse_scenario(&text, path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    ScenarioConfig::from_file(file, base, path)
}

fn check_len(field: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::validation(field, format!("expected {n} values, found {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(field, "values must be finite"));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Validates `file`, resolving the feeder path against `base_dir`.
    pub fn from_file(file: ScenarioFile, base_dir: &Path, source: &Path) -> Result<Self> {
        let grid = TimeGrid::new(file.time.intervals, file.time.dt_h)?;
        let feeder_path = base_dir.join(&file.feeder);
        let feeder = Feeder::from_csv_path(&feeder_path, file.base_kv, file.base_mva)?;
        let n = grid.intervals;
        check_len("market_price", &file.market_price, n)?;
        if file.market_price.iter().any(|&a| a < 0.0) {
            return Err(Error::validation("market_price", "must be non-negative"));
        }
        check_len("weather.irradiance", &file.weather.irradiance, n)?;
        check_len("weather.ambient_temp", &file.weather.ambient_temp, n)?;
        if file.weather.irradiance.iter().any(|&s| s < 0.0) {
            return Err(Error::validation("weather.irradiance", "must be non-negative"));
        }
        let solar = file.solar.module();
        solar.validate().map_err(|e| Error::validation("solar", e.to_string()))?;
        let s = &file.solar;
        if !(0.0 <= s.capacity_min_kwp && s.capacity_min_kwp <= s.capacity_max_kwp) {
            return Err(Error::validation("solar.capacity_min_kwp", "requires 0 <= min <= max"));
        }
        file.charger.validate().map_err(|e| Error::validation("charger", e.to_string()))?;

        let p = &file.policy;
        if !(0.0 <= p.mu1 && p.mu1 < p.mu2) {
            return Err(Error::validation("policy.mu1", "requires 0 <= mu1 < mu2"));
        }
        if p.weights.iter().any(|&w| w < 0.0) || (p.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::validation("policy.weights", "must be non-negative and sum to 1"));
        }
        for (field, v) in [("policy.lambda1", p.lambda1), ("policy.lambda2", p.lambda2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(field, "must lie in [0, 1]"));
            }
        }
        if !(p.sigma >= 0.0) || !(p.daily_budget >= 0.0) || !(p.v_min < p.v_max) {
            return Err(Error::validation("policy", "requires sigma >= 0, daily_budget >= 0, v_min < v_max"));
        }

        let slack = feeder.slack_id();
        let bus_ok = |b: usize| b >= 1 && b <= feeder.len() && b != slack;
        let mut seen = BTreeSet::new();
        for &d in &file.der_nodes {
            if !bus_ok(d) || !seen.insert(d) {
                return Err(Error::validation("der_nodes", format!("node {d} is not a distinct load bus of the feeder")));
            }
        }
        let loads = &file.loads;
        if !(loads.power_factor > 0.0 && loads.power_factor <= 1.0) {
            return Err(Error::validation("loads.power_factor", "must lie in (0, 1]"));
        }
        check_len("loads.default_profile", &loads.default_profile, n)?;
        let mut assigned = BTreeSet::new();
        for c in &loads.categories {
            check_len(&format!("loads.categories.{}.profile", c.name), &c.profile, n)?;
            if c.profile.iter().any(|&v| v < 0.0) || !(c.beta > 0.0) {
                return Err(Error::validation(
                    format!("loads.categories.{}", c.name),
                    "profile must be non-negative and beta positive",
                ));
            }
            for &node in &c.nodes {
                if !bus_ok(node) || !assigned.insert(node) {
                    return Err(Error::validation(
                        format!("loads.categories.{}.nodes", c.name),
                        format!("node {node} is not a load bus or is listed twice"),
                    ));
                }
            }
        }

        let fleet = &file.fleet;
        if fleet.ev_models.is_empty() && (fleet.evs_per_station > 0 || fleet.batteries_per_station > 0) {
            return Err(Error::validation("fleet.ev_models", "at least one model is required"));
        }
        let eta = file.charger.eta_g2v.min(file.charger.eta_g2b);
        let soc_span = file.charger.soc_max - file.charger.soc_min;
        for m in &fleet.ev_models {
            if !(m.battery_kwh > 0.0 && m.rated_kw > 0.0) {
                return Err(Error::validation("fleet.ev_models", "capacity and rating must be positive"));
            }
            // A vehicle arriving at the latest admissible hour, empty, must
            // still fill up before the end of the day.
            let full_charge_h = soc_span * m.battery_kwh / (eta * m.rated_kw);
            let latest_arrival = file.uncertainty.variables.iter().find(|v| v.kind == UncertaintyKind::EvArrival).map_or(20.0, |v| v.max);
            if full_charge_h > grid.horizon_h() - latest_arrival + 1e-9 {
                return Err(Error::validation(
                    "fleet.ev_models",
                    format!("{} kWh at {} kW needs {full_charge_h:.2} h to charge, more than remains after the latest arrival", m.battery_kwh, m.rated_kw),
                ));
            }
        }

        let unc = &file.uncertainty;
        let mut kinds = BTreeSet::new();
        for v in &unc.variables {
            v.validate()?;
            if !kinds.insert(v.kind as u8) {
                return Err(Error::validation(format!("uncertainty.{}", v.id), "each kind may appear once"));
            }
        }
        file.optimizer.validate()?;
        if file.utopia.population < 4 {
            return Err(Error::validation("utopia.population", "must be at least 4"));
        }

        let daytime: Vec<bool> = file.weather.irradiance.iter().map(|&s| s >= p.sigma).collect();
        if fleet.batteries_per_station > 0 {
            // A pack must be able to fill up from empty before the first
            // daytime swap.
            let first_day_h = daytime.iter().position(|&d| d).map_or(0.0, |t| t as f64 * grid.dt_h);
            let eta = file.charger.eta_g2b;
            for m in &fleet.ev_models {
                let full_charge_h = soc_span * m.battery_kwh / (eta * m.rated_kw);
                if full_charge_h > first_day_h + 1e-9 {
                    return Err(Error::validation(
                        "fleet.ev_models",
                        format!("a {} kWh pack needs {full_charge_h:.2} h to charge, more than the night before the first swap", m.battery_kwh),
                    ));
                }
            }
        }
        Ok(Self {
            solar,
            grid,
            feeder,
            daytime,
            source: source.to_path_buf(),
            file,
        })
    }

    pub fn station_count(&self) -> usize {
        self.file.der_nodes.len()
    }

    pub fn variable(&self, kind: UncertaintyKind) -> Option<&UncertainVariable> {
        self.file.uncertainty.variables.iter().find(|v| v.kind == kind)
    }

    /// First and last daytime interval, if any.
    pub fn daytime_window(&self) -> Option<(usize, usize)> {
        let first = self.daytime.iter().position(|&d| d)?;
        let last = self.daytime.iter().rposition(|&d| d)?;
        Some((first, last))
    }
}
