//! Device physics and cost models: solar output, EV and swap-battery state
//! of charge, degradation, energy cost and consumer discomfort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SOC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolarModuleSpec {
    /// Nominal module rating, kWp.
    pub p_nom_kwp: f64,
    pub v_mpp: f64,
    pub i_mpp: f64,
    pub v_oc: f64,
    pub i_sc: f64,
    /// Absolute voltage temperature coefficient, V/°C.
    pub k_v: f64,
    /// Absolute current temperature coefficient, A/°C.
    pub k_i: f64,
    /// Nominal operating cell temperature, °C.
    pub t_nominal: f64,
    pub lifetime_years: f64,
    /// Installation cost, $/kWp.
    pub install_cost: f64,
    /// Maintenance cost, $/kWp-year.
    pub maint_cost: f64,
    pub interest_rate: f64,
}

impl SolarModuleSpec {
    pub fn fill_factor(&self) -> Result<f64> {
        let ff = (self.v_mpp * self.i_mpp) / (self.v_oc * self.i_sc);
        if !(ff > 0.0 && ff < 1.0) {
            return Err(Error::InvalidSpec(format!("fill factor {ff} outside (0, 1)")));
        }
        Ok(ff)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_nom_kwp > 0.0) {
            return Err(Error::InvalidSpec("module rating must be positive".into()));
        }
        if !(self.v_mpp < self.v_oc) || !(self.i_mpp < self.i_sc) {
            return Err(Error::InvalidSpec("MPP point must lie inside (V_oc, I_sc)".into()));
        }
        self.fill_factor().map(|_| ())
    }

    /// Daily cost per installed kWp: (CRF * install + maintenance) / 365.
    pub fn daily_cost_per_kwp(&self) -> Result<f64> {
        let crf = capital_recovery_factor(self.interest_rate, self.lifetime_years)?;
        Ok((crf * self.install_cost + self.maint_cost) / 365.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherProfile {
    /// kW/m² per interval.
    pub irradiance: Vec<f64>,
    /// °C per interval.
    pub ambient_temp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargerSpec {
    pub eta_g2v: f64,
    pub eta_v2g: f64,
    pub eta_g2b: f64,
    pub eta_b2g: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub a_d: f64,
    pub b_d: f64,
    /// Battery investment cost, $/kWh.
    pub c_b: f64,
}

impl Default for ChargerSpec {
    fn default() -> Self {
        Self {
            eta_g2v: 0.9,
            eta_v2g: 0.9,
            eta_g2b: 0.9,
            eta_b2g: 0.9,
            soc_min: 0.3,
            soc_max: 0.9,
            a_d: 1.0,
            b_d: 0.5,
            c_b: 100.0,
        }
    }
}

impl ChargerSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [
            ("eta_g2v", self.eta_g2v),
            ("eta_v2g", self.eta_v2g),
            ("eta_g2b", self.eta_g2b),
            ("eta_b2g", self.eta_b2g),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidSpec(format!("{name} = {eta} outside (0, 1]")));
            }
        }
        if !(0.0 < self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(Error::InvalidSpec("need 0 < soc_min < soc_max <= 1".into()));
        }
        if !(self.b_d > 0.0 && self.b_d < 1.0) {
            return Err(Error::InvalidSpec("b_d must lie in (0, 1)".into()));
        }
        if !(self.a_d > 0.0) || !(self.c_b >= 0.0) {
            return Err(Error::InvalidSpec("a_d must be positive and c_b non-negative".into()));
        }
        Ok(())
    }
}

/// An EV parked at a charging station. Connected during intervals
/// `t_arrive..t_depart`; its departure SoC is the SoC at the end of
/// interval `t_depart - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRecord {
    pub id: usize,
    pub battery_kwh: f64,
    pub rated_kw: f64,
    pub soc_arrival: f64,
    pub t_arrive: usize,
    pub t_depart: usize,
    pub node: usize,
}

/// A battery stocked at a swapping station. At the start of interval
/// `t_swap` it is handed to the registered EV and replaced by that EV's
/// battery at `incoming_soc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapBatteryRecord {
    pub id: usize,
    pub battery_kwh: f64,
    pub rated_kw: f64,
    pub soc_initial: f64,
    pub t_swap: usize,
    pub incoming_soc: f64,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllableLoad {
    pub node: usize,
    /// kW per interval.
    pub nominal_kw: Vec<f64>,
    pub beta: f64,
    /// Preferred demand-response window is `t_start..t_stop`.
    pub t_start: usize,
    pub t_stop: usize,
}

/// Anything that can tell whether it is feeding stored energy back to the
/// grid in a given interval.
pub trait Direction {
    fn is_discharging(&self) -> bool;
}

impl Direction for bool {
    fn is_discharging(&self) -> bool {
        *self
    }
}

/// Solar station output in kW for one interval.
pub fn solar_power(
    spec: &SolarModuleSpec,
    capacity_kwp: f64,
    irradiance: f64,
    t_ambient: f64,
) -> Result<f64> {
    let ff = spec.fill_factor()?;
    if capacity_kwp <= 0.0 || irradiance <= 0.0 {
        return Ok(0.0);
    }
    let modules = (capacity_kwp / spec.p_nom_kwp - 1e-12).ceil();
    let t_cell = t_ambient + irradiance * (spec.t_nominal - 20.0) / 0.8;
    // Voltage term uses the absolute cell temperature.
    let v = spec.v_oc - spec.k_v * t_cell;
    let i = irradiance * (spec.i_sc + spec.k_i * (t_cell - 25.0));
    if v <= 0.0 || i <= 0.0 {
        return Ok(0.0);
    }
    Ok(modules * ff * v * i / 1000.0)
}

fn soc_step(
    soc_prev: f64,
    power_kw: f64,
    dt_h: f64,
    battery_kwh: f64,
    eta_in: f64,
    eta_out: f64,
    charging: bool,
    bounds: (f64, f64),
) -> Result<f64> {
    if charging && power_kw < 0.0 || !charging && power_kw > 0.0 {
        return Err(Error::InvalidSpec(format!(
            "power {power_kw} kW inconsistent with {} mode",
            if charging { "charging" } else { "discharging" }
        )));
    }
    let energy = power_kw * dt_h / battery_kwh;
    let soc = if charging {
        soc_prev + eta_in * energy
    } else {
        soc_prev + energy / eta_out
    };
    let (lo, hi) = bounds;
    if soc < lo - SOC_TOL || soc > hi + SOC_TOL {
        return Err(Error::SocOutOfRange {
            soc,
            min: lo,
            max: hi,
        });
    }
    Ok(soc.clamp(lo, hi))
}

/// Advances an EV's SoC by one interval. Power is positive when charging
/// (G2V) and negative when discharging (V2G).
pub fn ev_soc_step(
    soc_prev: f64,
    power_kw: f64,
    dt_h: f64,
    battery_kwh: f64,
    charger: &ChargerSpec,
    mode_charging: bool,
) -> Result<f64> {
    soc_step(
        soc_prev,
        power_kw,
        dt_h,
        battery_kwh,
        charger.eta_g2v,
        charger.eta_v2g,
        mode_charging,
        (charger.soc_min, charger.soc_max),
    )
}

/// Swap-station counterpart of [`ev_soc_step`] using the G2B/B2G efficiencies.
pub fn battery_soc_step(
    soc_prev: f64,
    power_kw: f64,
    dt_h: f64,
    battery_kwh: f64,
    charger: &ChargerSpec,
    mode_charging: bool,
) -> Result<f64> {
    soc_step(
        soc_prev,
        power_kw,
        dt_h,
        battery_kwh,
        charger.eta_g2b,
        charger.eta_b2g,
        mode_charging,
        (charger.soc_min, charger.soc_max),
    )
}

/// Cycle-aging cost of discharging intervals.
///
/// `soc_trajectory[k]` is the SoC at the start of step `k` and
/// `soc_trajectory[k + 1]` the SoC after it, so the trajectory is one
/// longer than `modes`. Only discharging steps accrue cost.
pub fn degradation_cost<M: Direction>(
    soc_trajectory: &[f64],
    modes: &[M],
    charger: &ChargerSpec,
    battery_kwh: f64,
) -> f64 {
    let exponent = 1.0 - charger.b_d;
    let scale = charger.c_b * battery_kwh / charger.a_d;
    soc_trajectory
        .windows(2)
        .zip(modes)
        .filter(|(_, m)| m.is_discharging())
        .map(|(w, _)| {
            let dod_prev = (1.0 - w[0]).max(0.0);
            let dod = (1.0 - w[1]).max(0.0);
            (dod.powf(exponent) - dod_prev.powf(exponent)) * scale
        })
        .sum()
}

/// Charging station bill at the incentive price. `station_power_kw` holds
/// the summed EV power per interval (negative when exporting).
pub fn cs_energy_cost(station_power_kw: &[f64], incentive_price: &[f64], dt_h: f64) -> f64 {
    station_power_kw
        .iter()
        .zip(incentive_price)
        .map(|(p, g)| g * p * dt_h)
        .sum()
}

/// Consumer bill after adjustment; `adjustment_kw` is positive for
/// curtailment and negative for added load.
pub fn cl_energy_cost(nominal_kw: &[f64], adjustment_kw: &[f64], market_price: &[f64], dt_h: f64) -> f64 {
    nominal_kw
        .iter()
        .zip(adjustment_kw)
        .zip(market_price)
        .map(|((p0, x), a)| a * (p0 - x) * dt_h)
        .sum()
}

pub fn discomfort_cost(nominal_kw: &[f64], adjustment_kw: &[f64], flags: &[bool], beta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (t, ((&p0, &x), &flag)) in nominal_kw.iter().zip(adjustment_kw).zip(flags).enumerate() {
        if !flag || x == 0.0 {
            continue;
        }
        if p0 == 0.0 {
            return Err(Error::DegenerateLoad { interval: t });
        }
        total += (beta * x / p0).exp_m1();
    }
    Ok(total)
}

pub fn capital_recovery_factor(rate: f64, lifetime_years: f64) -> Result<f64> {
    if !(lifetime_years >= 1.0) || !(rate >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "capital recovery needs r >= 0 and L >= 1, got r={rate}, L={lifetime_years}"
        )));
    }
    if rate == 0.0 {
        return Ok(1.0 / lifetime_years);
    }
    let growth = (1.0 + rate).powf(lifetime_years);
    Ok(rate * growth / (growth - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_module() -> SolarModuleSpec {
        SolarModuleSpec {
            p_nom_kwp: 0.24,
            v_mpp: 30.0,
            i_mpp: 8.0,
            v_oc: 37.5,
            i_sc: 8.5,
            k_v: 0.1,
            k_i: 0.005,
            t_nominal: 44.0,
            lifetime_years: 25.0,
            install_cost: 1000.0,
            maint_cost: 15.0,
            interest_rate: 0.05,
        }
    }

    #[test]
    fn solar_zero_irradiance() {
        assert_eq!(solar_power(&example_module(), 10.0, 0.0, 25.0).unwrap(), 0.0);
    }

    #[test]
    fn solar_single_module_hand_value() {
        // T_c = 55, V_s = 32, I_s = 8.65, FF = 240/318.75
        let p = solar_power(&example_module(), 0.24, 1.0, 25.0).unwrap();
        let expected = 240.0 / 318.75 * 32.0 * 8.65 / 1000.0;
        assert!((p - expected).abs() < 1e-12);
        assert!((p * 1000.0 - 208.4).abs() < 0.05);
    }

    #[test]
    fn solar_module_count_is_ceiling() {
        let spec = example_module();
        let one = solar_power(&spec, spec.p_nom_kwp, 1.0, 25.0).unwrap();
        let p = solar_power(&spec, 2.5 * spec.p_nom_kwp, 1.0, 25.0).unwrap();
        assert!((p - 3.0 * one).abs() < 1e-12);
    }

    #[test]
    fn solar_invalid_fill_factor() {
        let mut spec = example_module();
        spec.v_mpp = 40.0;
        assert!(matches!(solar_power(&spec, 1.0, 1.0, 25.0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn soc_steps() {
        let c = ChargerSpec::default();
        assert_eq!(ev_soc_step(0.5, 0.0, 1.0, 50.0, &c, true).unwrap(), 0.5);
        let up = ev_soc_step(0.40, 10.0, 1.0, 50.0, &c, true).unwrap();
        assert!((up - 0.58).abs() < 1e-12);
        let down = ev_soc_step(0.58, -9.0, 1.0, 50.0, &c, false).unwrap();
        assert!((down - 0.38).abs() < 1e-12);

        let b = ChargerSpec {
            eta_g2b: 0.95,
            eta_b2g: 0.95,
            ..c
        };
        assert!((battery_soc_step(0.3, 20.0, 1.0, 100.0, &b, true).unwrap() - 0.49).abs() < 1e-12);
        assert!((battery_soc_step(0.9, -19.0, 1.0, 100.0, &b, false).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(battery_soc_step(0.6, 0.0, 1.0, 100.0, &b, false).unwrap(), 0.6);
    }

    #[test]
    fn soc_step_out_of_range() {
        let c = ChargerSpec::default();
        let err = ev_soc_step(0.85, 10.0, 1.0, 50.0, &c, true).unwrap_err();
        assert!(matches!(err, Error::SocOutOfRange { .. }));
        let err = ev_soc_step(0.31, -10.0, 1.0, 50.0, &c, false).unwrap_err();
        assert!(matches!(err, Error::SocOutOfRange { .. }));
    }

    #[test]
    fn degradation_examples() {
        let c = ChargerSpec::default();
        assert_eq!(degradation_cost(&[0.5, 0.6, 0.7], &[false, false], &c, 50.0), 0.0);
        let cost = degradation_cost(&[0.9, 0.8], &[true], &c, 50.0);
        let expected = (0.2_f64.sqrt() - 0.1_f64.sqrt()) * 5000.0;
        assert!((cost - expected).abs() < 1e-9);
        assert!((cost - 654.92).abs() / 654.92 < 1e-4);
        assert_eq!(degradation_cost(&[0.7, 0.7], &[true], &c, 50.0), 0.0);
        assert_eq!(degradation_cost::<bool>(&[], &[], &c, 50.0), 0.0);
    }

    #[test]
    fn energy_costs() {
        assert_eq!(cs_energy_cost(&[0.0, 0.0], &[0.06, 0.06], 1.0), 0.0);
        assert!((cs_energy_cost(&[10.0, 10.0], &[0.06, 0.06], 1.0) - 1.2).abs() < 1e-12);
        assert_eq!(cs_energy_cost(&[10.0, -10.0], &[0.05, 0.05], 1.0), 0.0);

        let p0 = [100.0, 100.0];
        let alpha = [0.1, 0.1];
        assert!((cl_energy_cost(&p0, &[0.0, 0.0], &alpha, 1.0) - 20.0).abs() < 1e-12);
        assert!((cl_energy_cost(&p0, &[50.0, -50.0], &alpha, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(cl_energy_cost(&p0, &p0, &alpha, 1.0), 0.0);
    }

    #[test]
    fn discomfort_examples() {
        assert_eq!(discomfort_cost(&[10.0], &[0.0], &[true], 1.0).unwrap(), 0.0);
        let d = discomfort_cost(&[10.0], &[5.0], &[true], 1.0).unwrap();
        assert!((d - (0.5_f64.exp() - 1.0)).abs() < 1e-12);
        assert!((d - 0.64872).abs() < 1e-5);
        assert_eq!(discomfort_cost(&[10.0, 10.0], &[5.0, -5.0], &[false, false], 1.0).unwrap(), 0.0);
        let err = discomfort_cost(&[0.0], &[1.0], &[true], 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateLoad { interval: 0 }));
    }

    #[test]
    fn crf_examples() {
        assert!((capital_recovery_factor(0.0, 20.0).unwrap() - 0.05).abs() < 1e-15);
        let crf = capital_recovery_factor(0.05, 20.0).unwrap();
        assert!((crf - 0.080243).abs() < 1e-6);
        assert!((capital_recovery_factor(0.07, 1.0).unwrap() - 1.07).abs() < 1e-12);
        // Continuity at the zero-interest limit.
        let near = capital_recovery_factor(1e-9, 20.0).unwrap();
        assert!((near - 0.05).abs() < 1e-8);
        assert!(capital_recovery_factor(0.05, 0.5).is_err());
    }
}
