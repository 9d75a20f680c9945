//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod support;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpp_core::der::{capital_recovery_factor, degradation_cost, discomfort_cost, ev_soc_step, solar_power, ChargerSpec, SolarModuleSpec};
use vpp_core::dispatch::*;
use vpp_core::network::solve_power_flow;
use vpp_core::scenario::report::reduction_pct;
use vpp_core::scenario::*;
use vpp_core::stochastic::{pem_concentrations, MomentModel, UncertainVariable, UncertaintyKind};
use vpp_core::{Feeder, PowerFlowOptions};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pem_identities() -> Outcome {
    for m in 1..=10 {
        let vars: Vec<UncertainVariable> = (0..m)
            .map(|i| UncertainVariable {
                id: format!("x{i}"),
                kind: UncertaintyKind::LoadScale,
                mean: 1.0 + i as f64,
                std: 0.1 * (1 + i) as f64,
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
            })
            .collect();
        let set = pem_concentrations(&vars, MomentModel::Gaussian).map_err(|e| e.to_string())?;
        ensure((set.total_weight() - 1.0).abs() < 1e-12, || format!("m={m}: total weight {}", set.total_weight()))?;
        for (i, v) in vars.iter().enumerate() {
            let own: f64 = set.concentrations.iter().filter(|c| c.variable == i).map(|c| c.weight).sum();
            let share = own + set.centre_weight / m as f64;
            ensure((share - 1.0 / m as f64).abs() < 1e-12, || format!("m={m}: variable {i} weight {share}"))?;
            let mut xi: Vec<f64> = set
                .concentrations
                .iter()
                .filter(|c| c.variable == i)
                .map(|c| (c.location - v.mean) / v.std)
                .collect();
            xi.sort_by(f64::total_cmp);
            let s3 = 3f64.sqrt();
            ensure((xi[0] + s3).abs() < 1e-12 && (xi[1] - s3).abs() < 1e-12, || format!("m={m}: xi {xi:?}"))?;
        }
    }
    Ok("m = 1..10".into())
}

fn pem_vs_monte_carlo() -> Outcome {
    let cfg = load_scenario(support::data_path("smoke.toml")).map_err(|e| e.to_string())?;
    let options = RunOptions {
        mc_samples: 100_000,
        ..Default::default()
    };
    let result = run(cfg, &options).map_err(|e| e.to_string())?;
    let pem = result.controlled.as_ref().and_then(|r| r.f_obj).ok_or("no objective estimate")?.mean;
    let mc = result.monte_carlo.as_ref().ok_or("no Monte Carlo estimate")?.mean[0];
    let rel = (pem - mc).abs() / mc.abs();
    let detail = format!("PEM {pem:.5} vs MC {mc:.5}, rel. error {:.3}%", 100.0 * rel);
    ensure(rel <= 0.02, || detail.clone())?;
    Ok(detail)
}

fn power_flow_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(2..=33);
        let feeder = support::random_radial(&mut rng, n);
        let (p, q) = feeder.nominal_loads();
        let sol = solve_power_flow(&feeder, &p, &q, PowerFlowOptions::default()).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = support::sweep_voltages(&feeder, &p, &q);
        for (a, b) in sol.voltage_mag.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < 1e-6, || format!("largest deviation {worst:.3e} pu"))?;
    let feeder = Feeder::from_csv_path(support::data_path("feeder33.csv"), 12.66, 1.0).map_err(|e| e.to_string())?;
    let (p, q) = feeder.nominal_loads();
    let sol = solve_power_flow(&feeder, &p, &q, PowerFlowOptions::default()).map_err(|e| e.to_string())?;
    ensure(sol.iterations <= 10 && sol.max_mismatch < 1e-8, || {
        format!("33-bus: {} iterations, mismatch {:.2e}", sol.iterations, sol.max_mismatch)
    })?;
    Ok(format!(
        "max |dV| {worst:.2e} pu; 33-bus {} iterations, mismatch {:.1e}, loss {:.1} kW",
        sol.iterations, sol.max_mismatch, sol.total_loss
    ))
}

fn dispatch_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vectors = 500;
    for case in 0..vectors {
        let n = rng.random_range(1..=24);
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(1..8) as f64 * 0.015).collect();
        let first = rng.random_range(0..n);
        let last = rng.random_range(first..n);
        let k = rng.random_range(0..=last - first + 1);
        let mask = ev_pricing_factor(&prices, first, last, k as f64, 1.0).map_err(|e| e.to_string())?;
        ensure(mask == support::lowest_k(&prices, first, last, k), || format!("EV flags differ, case {case}"))?;
        let cl = cl_pricing_factor(&prices, first, last).map_err(|e| e.to_string())?;
        ensure(cl == support::highest_half(&prices, first, last), || format!("load flags differ, case {case}"))?;
    }
    let mut rows = 0;
    for rho in [0.0, 0.7, 1.0, 1.5] {
        for flag in [false, true] {
            for connected in [false, true] {
                for soc in [0.3, 0.6, 0.9] {
                    let got = ev_mode_select(rho, flag, connected, soc, 0.9);
                    let want = support::ev_mode_truth(rho >= 1.0, flag, connected, soc >= 0.9);
                    ensure(got == want, || format!("EV mode rho={rho} p={flag} c={connected} soc={soc}: {got:?}"))?;
                    rows += 1;
                }
            }
        }
        for irradiance in [0.0, 0.1, 0.9] {
            for soc in [0.3, 0.6, 0.9] {
                let got = battery_mode_select(rho, irradiance, 0.1, soc, (0.3, 0.9));
                let want = support::battery_mode_truth(rho >= 1.0, irradiance >= 0.1, soc >= 0.9, soc <= 0.3);
                ensure(got == want, || format!("battery mode rho={rho} s={irradiance} soc={soc}: {got:?}"))?;
                rows += 1;
            }
        }
    }
    Ok(format!("{vectors} price vectors per rule, {rows} mode-table rows"))
}

fn departure_guarantee() -> Outcome {
    let base = load_scenario(support::data_path("smoke.toml")).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut evs, mut worst) = (0usize, 0.0_f64);
    for seed in 0..1000u64 {
        let mut cfg = base.clone();
        cfg.file.fleet.seed = seed;
        let model = VppModel::new(cfg).map_err(|e| e.to_string())?;
        let b = &model.boxes;
        let mut genes: Vec<f64> = b.lower.iter().zip(&b.upper).map(|(&lo, &hi)| lo + rng.random::<f64>() * (hi - lo)).collect();
        model.repair_genes(&mut genes);
        let point = seed as usize % model.fleets.len();
        let state = model.simulate_point(point, &model.decode(&genes)).map_err(|e| e.to_string())?;
        for d in &state.evs {
            worst = worst.max((d.deadline_soc.unwrap_or(f64::NAN) - 0.9).abs());
            evs += 1;
        }
    }
    ensure(worst < 1e-6, || format!("departure SoC off by {worst:.3e}"))?;
    Ok(format!("{evs} EVs over 1000 fleets, max |SoC - 0.9| = {worst:.1e}"))
}

fn spot_checks() -> Outcome {
    let module = SolarModuleSpec {
        p_nom_kwp: 0.24,
        v_mpp: 30.0,
        i_mpp: 8.0,
        v_oc: 37.5,
        i_sc: 8.5,
        k_v: 0.1,
        k_i: 0.005,
        t_nominal: 44.0,
        lifetime_years: 20.0,
        install_cost: 0.0,
        maint_cost: 0.0,
        interest_rate: 0.05,
    };
    let c = ChargerSpec::default();
    let up = ev_soc_step(0.40, 10.0, 1.0, 50.0, &c, true).map_err(|e| e.to_string())?;
    let values = [
        ("solar W", solar_power(&module, 0.24, 1.0, 25.0).map_err(|e| e.to_string())? * 1000.0, 208.4),
        ("SoC up", up, 0.58),
        ("SoC down", ev_soc_step(0.58, -9.0, 1.0, 50.0, &c, false).map_err(|e| e.to_string())?, 0.38),
        ("degradation $", degradation_cost(&[0.9, 0.8], &[true], &c, 50.0), 654.92),
        ("discomfort", discomfort_cost(&[1.0], &[0.5], &[true], 1.0).map_err(|e| e.to_string())?, 0.64872),
        ("CRF", capital_recovery_factor(0.05, 20.0).map_err(|e| e.to_string())?, 0.080243),
    ];
    let mut parts = Vec::new();
    for (name, got, want) in values {
        let rel = (got - want).abs() / want;
        ensure(rel < 1e-4, || format!("{name}: {got} vs {want}"))?;
        parts.push(format!("{name} {got:.5}"));
    }
    Ok(parts.join(", "))
}

fn export_bytes(result: &RunResult) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    export_run(result, ExportFormat::Both, dir.path()).map_err(|e| e.to_string())?;
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let cfg = load_scenario(support::data_path("smoke.toml")).map_err(|e| e.to_string())?;
    let once = |threads: usize| -> Result<Vec<(String, Vec<u8>)>, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let result = pool.install(|| run(cfg.clone(), &RunOptions::default())).map_err(|e| e.to_string())?;
        export_bytes(&result)
    };
    let a = once(1)?;
    let b = once(1)?;
    let c = once(4)?;
    ensure(a == b, || "repeated runs differ".into())?;
    ensure(a == c, || "runs differ across thread counts".into())?;
    Ok(format!("{} files identical across repeats and thread counts", a.len()))
}

/// The full bundled run shared by the remaining criteria.
struct FullRun {
    model: VppModel,
    result: RunResult,
    elapsed: Duration,
}

fn full_run() -> Result<FullRun, String> {
    let cfg = load_scenario(support::data_path("scenario33.toml")).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let result = run(cfg.clone(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let model = VppModel::new(cfg).map_err(|e| e.to_string())?;
    Ok(FullRun { model, result, elapsed })
}

fn incentive_band(full: &FullRun) -> Outcome {
    let d = full.result.decision.as_ref().ok_or("no decision")?;
    let alpha = &full.model.config.file.market_price;
    for (t, &g) in d.incentive_price.iter().enumerate() {
        ensure(0.6 * alpha[t] <= g && g <= 0.9 * alpha[t], || format!("t={t}: gamma {g} vs alpha {}", alpha[t]))?;
    }
    Ok(format!("{} intervals inside [0.6, 0.9] x market price", d.incentive_price.len()))
}

fn load_limits(full: &FullRun) -> Outcome {
    let d = full.result.decision.as_ref().ok_or("no decision")?;
    let state = full.model.simulate_point(0, d).map_err(|e| e.to_string())?;
    let (mut worst_sum, mut worst_cap, mut worst_peak) = (0.0_f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for l in &state.loads {
        worst_sum = worst_sum.max(l.adjustment_kw.iter().sum::<f64>().abs());
        let curtailed: f64 = l.adjustment_kw.iter().zip(&l.flags).filter(|(_, &f)| f).map(|(x, _)| x).sum();
        worst_cap = worst_cap.max(curtailed - 0.2 * l.nominal_kw.iter().sum::<f64>());
        let peak = l.nominal_kw.iter().copied().fold(0.0, f64::max);
        for (p0, x) in l.nominal_kw.iter().zip(&l.adjustment_kw) {
            worst_peak = worst_peak.max(p0 - x - peak);
        }
    }
    ensure(worst_sum < 1e-6, || format!("adjustments sum to {worst_sum:.3e} kW"))?;
    ensure(worst_cap <= 1e-9, || format!("curtailment exceeds the allowance by {worst_cap:.3e} kWh"))?;
    ensure(worst_peak <= 1e-9, || format!("adjusted load exceeds the peak by {worst_peak:.3e} kW"))?;
    Ok(format!(
        "{} loads: max |sum x| {worst_sum:.1e} kW, allowance slack {:.1} kWh, peak slack {:.1} kW",
        state.loads.len(),
        -worst_cap,
        -worst_peak
    ))
}

fn directional_claims(full: &FullRun) -> Outcome {
    let ctrl = full.result.controlled.as_ref().ok_or("no controlled report")?;
    let base = &full.result.baseline;
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for (row, reference) in [("grid_energy_mwh", 20.99), ("loss_mwh", 22.43), ("ev_charging_cost", 34.42), ("cl_cost", 3.28)] {
        let b = base.summary_stat(row).ok_or("missing row")?.mean;
        let c = ctrl.summary_stat(row).ok_or("missing row")?.mean;
        let r = reduction_pct(b, c);
        parts.push(format!("{row} -{r:.2}% (ref. -{reference}%)"));
        if !(c < b) {
            failed.push(row);
        }
    }
    let budget = Duration::from_secs(15 * 60);
    let detail = format!("{}; run {:.0} s", parts.join(", "), full.elapsed.as_secs_f64());
    ensure(failed.is_empty() && full.elapsed <= budget, || detail.clone())?;
    Ok(detail)
}

fn voltage_compliance(full: &FullRun) -> Outcome {
    let ctrl = full.result.controlled.as_ref().ok_or("no controlled report")?;
    let base = &full.result.baseline;
    let daytime = &full.model.config.daytime;
    let mut worst_gap = f64::INFINITY;
    for (c, b) in ctrl.intervals.iter().zip(&base.intervals) {
        if daytime[c.t] {
            worst_gap = worst_gap.min(c.v_min_pu - b.v_min_pu);
        }
    }
    let d = full.result.decision.as_ref().ok_or("no decision")?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in 0..full.model.fleets.len() {
        let s = full.model.simulate_point(p, d).map_err(|e| e.to_string())?;
        lo = s.v_min.iter().copied().fold(lo, f64::min);
        hi = s.v_max.iter().copied().fold(hi, f64::max);
    }
    let detail = format!("daytime min-voltage margin over baseline {worst_gap:+.4} pu; all buses in [{lo:.4}, {hi:.4}] pu");
    ensure(worst_gap >= 0.0 && lo >= 0.90 && hi <= 1.05, || detail.clone())?;
    Ok(detail)
}

fn report(index: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let elapsed = start.elapsed();
    let over = budget.is_some_and(|b| elapsed > b);
    let (ok, detail) = match outcome {
        Ok(d) if over => (false, format!("{d}; took {:.1} s, over budget", elapsed.as_secs_f64())),
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("{} {index:>2} {name}: {detail} [{:.2} s]", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    ok
}

fn main() {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "point-estimate identities", Some(secs(1)), pem_identities);
    ok &= report(2, "point estimate vs Monte Carlo", Some(secs(300)), pem_vs_monte_carlo);
    ok &= report(3, "power flow vs sweep oracle", Some(secs(30)), power_flow_oracle);
    ok &= report(4, "pricing flags and mode tables", Some(secs(10)), dispatch_oracles);
    ok &= report(5, "departure state of charge", Some(secs(60)), departure_guarantee);

    let full = full_run();
    match &full {
        Ok(full) => {
            ok &= report(6, "incentive band", None, || incentive_band(full));
            ok &= report(7, "load neutrality and discomfort cap", None, || load_limits(full));
            ok &= report(8, "reductions against the uncontrolled day", None, || directional_claims(full));
        }
        Err(e) => {
            for (i, name) in [(6, "incentive band"), (7, "load neutrality and discomfort cap"), (8, "reductions against the uncontrolled day")] {
                ok &= report(i, name, None, || Err(format!("full run failed: {e}")));
            }
        }
    }
    ok &= report(9, "formula spot checks", None, spot_checks);
    ok &= report(10, "determinism", None, determinism);
    match &full {
        Ok(full) => ok &= report(11, "voltage compliance", None, || voltage_compliance(full)),
        Err(e) => ok &= report(11, "voltage compliance", None, || Err(format!("full run failed: {e}"))),
    }
    if !ok {
        std::process::exit(1);
    }
}
