//! Python module `vpp_sched`: scenario runs, power flow and the pricing
//! rules, backed by the Rust core.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vpp_core::dispatch;
use vpp_core::network::solve_power_flow as solve;
use vpp_core::scenario::report::SUMMARY_ROWS;
use vpp_core::scenario::{self, ExportFormat, RunOptions, RunStatus};
use vpp_core::{Error, Feeder, PowerFlowOptions};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parse { .. } | Error::Validation { .. } | Error::InvalidNetwork(_) | Error::InvalidSpec(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_format(format: &str) -> PyResult<ExportFormat> {
    match format {
        "csv" => Ok(ExportFormat::Csv),
        "json" => Ok(ExportFormat::Json),
        "both" => Ok(ExportFormat::Both),
        other => Err(PyValueError::new_err(format!("format must be csv, json or both, got {other:?}"))),
    }
}

/// A validated scenario file.
#[pyclass(frozen)]
struct Scenario {
    inner: scenario::ScenarioConfig,
}

#[pymethods]
impl Scenario {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        scenario::load_scenario(&path).map(|inner| Scenario { inner }).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.file.name.clone()
    }

    #[getter]
    fn bus_count(&self) -> usize {
        self.inner.feeder.len()
    }

    #[getter]
    fn station_count(&self) -> usize {
        self.inner.station_count()
    }

    #[getter]
    fn market_price(&self) -> Vec<f64> {
        self.inner.file.market_price.clone()
    }

    /// Optimizes the day, or only simulates the uncontrolled one.
    #[pyo3(signature = (seed=None, mc_samples=0, baseline_only=false))]
    fn run(&self, py: Python<'_>, seed: Option<u64>, mc_samples: usize, baseline_only: bool) -> PyResult<RunResult> {
        let config = self.inner.clone();
        let options = RunOptions {
            seed,
            mc_samples,
            baseline_only,
        };
        let inner = py.detach(move || scenario::run(config, &options)).map_err(to_py)?;
        Ok(RunResult { inner })
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, buses={}, stations={})", self.name(), self.bus_count(), self.station_count())
    }
}

#[pyclass(frozen)]
struct RunResult {
    inner: scenario::RunResult,
}

#[pymethods]
impl RunResult {
    /// "feasible", "infeasible" or "baseline_only".
    #[getter]
    fn status(&self) -> &'static str {
        match self.inner.status {
            RunStatus::Feasible => "feasible",
            RunStatus::Infeasible { .. } => "infeasible",
            RunStatus::BaselineOnly => "baseline_only",
        }
    }

    #[getter]
    fn violation(&self) -> f64 {
        match self.inner.status {
            RunStatus::Infeasible { violation } => violation,
            _ => 0.0,
        }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn best_fitness(&self) -> Option<f64> {
        self.inner.best_fitness
    }

    /// Row name to `(uncontrolled mean, controlled mean)`.
    fn summary(&self) -> BTreeMap<String, (f64, Option<f64>)> {
        SUMMARY_ROWS
            .iter()
            .filter_map(|&name| {
                let b = self.inner.baseline.summary_stat(name)?.mean;
                let c = self.inner.controlled.as_ref().and_then(|r| r.summary_stat(name)).map(|s| s.mean);
                Some((name.to_string(), (b, c)))
            })
            .collect()
    }

    /// Best fitness per iteration.
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.iter().map(|r| r.best_fitness).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[pyo3(signature = (out_dir, format="both"))]
    fn export(&self, out_dir: PathBuf, format: &str) -> PyResult<()> {
        scenario::export_run(&self.inner, parse_format(format)?, &out_dir).map_err(to_py)
    }
}

/// Power flow at the feeder's nominal loads. Returns
/// `(voltage magnitudes, loss kW, iterations)`.
#[pyfunction]
#[pyo3(signature = (feeder_csv, base_kv=12.66, base_mva=1.0))]
fn power_flow(feeder_csv: PathBuf, base_kv: f64, base_mva: f64) -> PyResult<(Vec<f64>, f64, usize)> {
    let feeder = Feeder::from_csv_path(feeder_csv, base_kv, base_mva).map_err(to_py)?;
    let (p, q) = feeder.nominal_loads();
    let sol = solve(&feeder, &p, &q, PowerFlowOptions::default()).map_err(to_py)?;
    Ok((sol.voltage_mag, sol.total_loss, sol.iterations))
}

/// Intervals of `[t_now, t_last]` an EV needing `needed_h` hours would charge in.
#[pyfunction]
#[pyo3(signature = (prices, t_now, t_last, needed_h, dt_h=1.0))]
fn ev_pricing_flags(prices: Vec<f64>, t_now: usize, t_last: usize, needed_h: f64, dt_h: f64) -> PyResult<Vec<bool>> {
    dispatch::ev_pricing_factor(&prices, t_now, t_last, needed_h, dt_h).map_err(to_py)
}

/// Intervals of `[t_start, t_last]` marked for curtailment.
#[pyfunction]
fn load_pricing_flags(prices: Vec<f64>, t_start: usize, t_last: usize) -> PyResult<Vec<bool>> {
    dispatch::cl_pricing_factor(&prices, t_start, t_last).map_err(to_py)
}

#[pymodule]
fn vpp_sched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(power_flow, m)?)?;
    m.add_function(wrap_pyfunction!(ev_pricing_flags, m)?)?;
    m.add_function(wrap_pyfunction!(load_pricing_flags, m)?)?;
    Ok(())
}
