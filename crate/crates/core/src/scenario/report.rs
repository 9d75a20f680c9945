use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{objective_value, RunResult, VppModel};
use crate::der::cl_energy_cost;
use crate::error::Result;
use crate::objective::{evaluate_objectives, ScheduleState, UtopiaBounds, OBJECTIVE_NAMES};
use crate::stochastic::weighted_moments;

/// Day totals compared between the controlled and uncontrolled runs.
pub const SUMMARY_ROWS: [&str; 8] = [
    "grid_energy_mwh",
    "vpp_delivery_mwh",
    "loss_mwh",
    "grid_cost",
    "vpp_profit",
    "ev_charging_cost",
    "cl_cost",
    "cs_net_energy_mwh",
];

/// Feeder-level flows of one interval at the centre realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub t: usize,
    pub grid_import_kw: f64,
    /// Solar output the stations put to use.
    pub vpp_delivery_kw: f64,
    /// Net export from the stations to the feeder.
    pub vpp_export_kw: f64,
    pub cs_demand_kw: f64,
    pub bss_kw: f64,
    pub consumer_load_kw: f64,
    pub curtailment_kw: f64,
    pub market_price: f64,
    pub incentive_price: f64,
    pub loss_kw: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

impl IntervalRow {
    /// Supply minus demand; zero up to the power-flow tolerance.
    pub fn balance_residual_kw(&self) -> f64 {
        self.grid_import_kw + self.vpp_delivery_kw
            - (self.consumer_load_kw - self.curtailment_kw + self.cs_demand_kw + self.bss_kw + self.loss_kw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub label: String,
    pub intervals: Vec<IntervalRow>,
    /// Keyed by [`SUMMARY_ROWS`].
    pub summary: Vec<(String, Stat)>,
    /// Keyed by the objective names.
    pub objectives: Vec<(String, Stat)>,
    pub f_obj: Option<Stat>,
}

impl ScheduleReport {
    pub fn empty(label: &str) -> Self {
        Self {
            label: label.into(),
            intervals: Vec::new(),
            summary: Vec::new(),
            objectives: Vec::new(),
            f_obj: None,
        }
    }

    pub fn summary_stat(&self, name: &str) -> Option<Stat> {
        self.summary.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

pub fn interval_rows(state: &ScheduleState) -> Vec<IntervalRow> {
    (0..state.grid.intervals)
        .map(|t| {
            let sum = |f: &dyn Fn(usize) -> f64| -> f64 { (0..state.stations.len()).map(f).sum() };
            let st = &state.stations;
            IntervalRow {
                t,
                grid_import_kw: state.grid_import_kw[t],
                vpp_delivery_kw: sum(&|s| st[s].solar_kw[t] - st[s].spilled_kw[t]),
                vpp_export_kw: sum(&|s| st[s].injection_kw(t)),
                cs_demand_kw: sum(&|s| st[s].ev_kw[t]),
                bss_kw: sum(&|s| st[s].battery_kw[t]),
                consumer_load_kw: state.fixed_load_kw[t] + state.loads.iter().map(|l| l.nominal_kw[t]).sum::<f64>(),
                curtailment_kw: state.loads.iter().map(|l| l.adjustment_kw[t]).sum(),
                market_price: state.prices.market[t],
                incentive_price: state.prices.incentive[t],
                loss_kw: state.loss_kw[t],
                v_min_pu: state.v_min[t],
                v_max_pu: state.v_max[t],
            }
        })
        .collect()
}

/// The day totals named in [`SUMMARY_ROWS`], in that order.
pub fn day_quantities(state: &ScheduleState, vpp_profit: f64) -> [f64; 8] {
    let dt = state.grid.dt_h;
    let alpha = &state.prices.market;
    let gamma = &state.prices.incentive;
    let n = state.grid.intervals;
    let purchased: Vec<f64> = state.grid_import_kw.iter().map(|p| p.max(0.0)).collect();
    let delivered: f64 = state.stations.iter().map(|s| (0..n).map(|t| s.injection_kw(t).max(0.0)).sum::<f64>()).sum();
    let ev_cost: f64 = state.stations.iter().map(|s| (0..n).map(|t| gamma[t] * s.ev_kw[t] * dt).sum::<f64>()).sum();
    let cs_energy: f64 = state.stations.iter().map(|s| s.ev_kw.iter().chain(&s.battery_kw).sum::<f64>()).sum();
    [
        purchased.iter().sum::<f64>() * dt / 1000.0,
        delivered * dt / 1000.0,
        state.loss_kw.iter().sum::<f64>() * dt / 1000.0,
        purchased.iter().zip(alpha).map(|(p, a)| p * a * dt).sum(),
        vpp_profit,
        ev_cost,
        state.loads.iter().map(|l| cl_energy_cost(&l.nominal_kw, &l.adjustment_kw, alpha, dt)).sum(),
        cs_energy * dt / 1000.0,
    ]
}

/// Combines the states of every concentration (centre first) with the
/// point weights. Interval series come from the centre state.
pub fn build_report(model: &VppModel, label: &str, states: &[ScheduleState], bounds: Option<&UtopiaBounds>) -> Result<ScheduleReport> {
    let cfg = &model.config;
    let mut samples = Vec::with_capacity(states.len());
    for (state, &w) in states.iter().zip(&model.point_weights) {
        let objectives = evaluate_objectives(state, &cfg.solar, &cfg.file.charger)?;
        let mut out: Vec<f64> = day_quantities(state, objectives.f1_profit).to_vec();
        out.extend(objectives.to_array());
        if let Some(b) = bounds {
            out.push(objective_value(model, b, state)?);
        }
        samples.push((w, out));
    }
    let est = weighted_moments(&samples);
    let stat = |i: usize| Stat {
        mean: est.mean[i],
        std: est.std[i],
    };
    Ok(ScheduleReport {
        label: label.into(),
        intervals: states.first().map(interval_rows).unwrap_or_default(),
        summary: SUMMARY_ROWS.iter().enumerate().map(|(i, n)| (n.to_string(), stat(i))).collect(),
        objectives: OBJECTIVE_NAMES.iter().enumerate().map(|(i, n)| (n.to_string(), stat(8 + i))).collect(),
        f_obj: bounds.map(|_| stat(8 + OBJECTIVE_NAMES.len())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl ExportFormat {
    fn csv(self) -> bool {
        matches!(self, ExportFormat::Csv | ExportFormat::Both)
    }

    fn json(self) -> bool {
        matches!(self, ExportFormat::Json | ExportFormat::Both)
    }
}

const INTERVAL_HEADER: [&str; 13] = [
    "t",
    "grid_import_kw",
    "vpp_delivery_kw",
    "vpp_export_kw",
    "cs_demand_kw",
    "bss_kw",
    "consumer_load_kw",
    "curtailment_kw",
    "market_price",
    "incentive_price",
    "loss_kw",
    "v_min_pu",
    "v_max_pu",
];

fn interval_values(r: &IntervalRow) -> [f64; 12] {
    [
        r.grid_import_kw,
        r.vpp_delivery_kw,
        r.vpp_export_kw,
        r.cs_demand_kw,
        r.bss_kw,
        r.consumer_load_kw,
        r.curtailment_kw,
        r.market_price,
        r.incentive_price,
        r.loss_kw,
        r.v_min_pu,
        r.v_max_pu,
    ]
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn summary_json(report: &ScheduleReport) -> serde_json::Value {
    let pairs = |rows: &[(String, Stat)]| -> serde_json::Map<String, serde_json::Value> {
        rows.iter()
            .map(|(n, s)| (n.clone(), serde_json::json!({ "mean": s.mean, "std": s.std })))
            .collect()
    };
    serde_json::json!({
        "label": report.label,
        "summary": pairs(&report.summary),
        "objectives": pairs(&report.objectives),
        "f_obj": report.f_obj.map(|s| serde_json::json!({ "mean": s.mean, "std": s.std })),
    })
}

/// Writes `<label>_intervals.csv` and `<label>_plot.csv` (long format:
/// series, t, value) and/or `<label>_summary.json` into `dir`.
pub fn export_report(report: &ScheduleReport, format: ExportFormat, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if format.csv() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(INTERVAL_HEADER)?;
        for r in &report.intervals {
            let mut rec = vec![r.t.to_string()];
            rec.extend(interval_values(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        write_file(&dir.join(format!("{}_intervals.csv", report.label)), &w.into_inner().map_err(|e| e.into_error())?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["series", "t", "value"])?;
        for (k, name) in INTERVAL_HEADER.iter().enumerate().skip(1) {
            for r in &report.intervals {
                w.write_record([name.to_string(), r.t.to_string(), interval_values(r)[k - 1].to_string()])?;
            }
        }
        write_file(&dir.join(format!("{}_plot.csv", report.label)), &w.into_inner().map_err(|e| e.into_error())?)?;
    }
    if format.json() {
        let text = serde_json::to_string_pretty(&summary_json(report))?;
        write_file(&dir.join(format!("{}_summary.json", report.label)), text.as_bytes())?;
    }
    Ok(())
}

/// Percentage by which `controlled` undercuts `baseline`; 0 when the
/// baseline is zero up to rounding.
pub fn reduction_pct(baseline: f64, controlled: f64) -> f64 {
    if baseline.abs() < 1e-9 {
        0.0
    } else {
        100.0 * (baseline - controlled) / baseline
    }
}

/// Both reports, `comparison.json` and `trace.csv`.
pub fn export_run(result: &RunResult, format: ExportFormat, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    export_report(&result.baseline, format, dir)?;
    if let Some(c) = &result.controlled {
        export_report(c, format, dir)?;
    }
    if format.json() {
        let mut rows = serde_json::Map::new();
        for name in SUMMARY_ROWS {
            let b = result.baseline.summary_stat(name);
            let c = result.controlled.as_ref().and_then(|r| r.summary_stat(name));
            let pair = |s: Option<Stat>| s.map(|s| serde_json::json!({ "mean": s.mean, "std": s.std }));
            let reduction = b.zip(c).map(|(b, c)| reduction_pct(b.mean, c.mean));
            rows.insert(
                name.to_string(),
                serde_json::json!({ "uncontrolled": pair(b), "controlled": pair(c), "reduction_pct": reduction }),
            );
        }
        let constraints: Option<serde_json::Map<String, serde_json::Value>> = result
            .constraints
            .as_ref()
            .map(|r| r.entries().map(|(k, v)| (k.name().to_string(), serde_json::json!(v))).collect());
        let doc = serde_json::json!({
            "scenario": result.scenario,
            "seed": result.seed,
            "status": result.status,
            "best_fitness": result.best_fitness,
            "rows": rows,
            "constraints": constraints,
            "utopia": result.utopia,
            "decision": result.decision,
            "monte_carlo": result.monte_carlo,
        });
        write_file(&dir.join("comparison.json"), serde_json::to_string_pretty(&doc)?.as_bytes())?;
    }
    if format.csv() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iter", "best_fitness", "mean_fitness", "violations"])?;
        for r in &result.trace {
            w.write_record([r.iter.to_string(), r.best_fitness.to_string(), r.mean_fitness.to_string(), r.violations.to_string()])?;
        }
        write_file(&dir.join("trace.csv"), &w.into_inner().map_err(|e| e.into_error())?)?;
    }
    Ok(())
}
