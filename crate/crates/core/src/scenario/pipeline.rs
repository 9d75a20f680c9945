use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::decision::{decision_boxes, load_flags, DecisionLayout, DecisionVector};
use super::fleet::{sample_fleet, uncertain_variables, DeviceFleet, FleetTemplate};
use super::report::{build_report, ScheduleReport};
use super::simulate::{run_uncontrolled_baseline, simulate_schedule};
use crate::error::{Error, Result};
use crate::objective::{
    daytime_voltage_shortfall, evaluate_constraints, evaluate_objectives, weighted_sum, ConstraintKind, ConstraintReport,
    ObjectiveVector, OperatingLimits, ScheduleState, Sense, UtopiaBounds, OBJECTIVE_COUNT, OBJECTIVE_SENSES,
};
use crate::optimizer::{self, repair, Boxes, Evaluation, OptimizerConfig, Problem, StandardJaya, TraceRow};
use crate::stochastic::{monte_carlo_oracle, pem_concentrations, ConcentrationSet, Estimate, UncertainVariable, UncertaintyKind};

/// Daytime voltage shortfalls are measured against this many pu.
const DAYTIME_VOLTAGE_SCALE_PU: f64 = 0.01;

/// A scenario together with everything that does not depend on the
/// decision: the sampled fleet, its realization at every PEM
/// concentration (centre first) and the gene boxes.
#[derive(Debug, Clone)]
pub struct VppModel {
    pub config: ScenarioConfig,
    pub template: FleetTemplate,
    pub variables: Vec<UncertainVariable>,
    pub concentrations: ConcentrationSet,
    pub point_weights: Vec<f64>,
    pub fleets: Vec<DeviceFleet>,
    pub layout: DecisionLayout,
    pub boxes: Boxes,
    pub limits: OperatingLimits,
    /// Curtailment flags of every load at the centre realization.
    pub flags: Vec<Vec<bool>>,
    nominal_scale: f64,
}

impl VppModel {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let template = sample_fleet(&config, config.file.fleet.seed);
        let (variables, _) = uncertain_variables(&config);
        let concentrations = pem_concentrations(&variables, config.file.uncertainty.moment_model)?;
        let points = concentrations.points();
        let nominal_scale = variables
            .iter()
            .position(|v| v.kind == UncertaintyKind::LoadScale)
            .map_or(1.0, |i| concentrations.centre[i]);
        let fleets: Vec<DeviceFleet> = points.iter().map(|p| template.realize(&config, &p.values, nominal_scale)).collect();
        let centre = &fleets[0];
        let layout = DecisionLayout {
            stations: config.station_count(),
            intervals: config.grid.intervals,
            loads: centre.loads.len(),
        };
        let flags = load_flags(&centre.loads, &config.file.market_price)?;
        let policy = &config.file.policy;
        let solar = &config.file.solar;
        let boxes = decision_boxes(
            &layout,
            (solar.capacity_min_kwp, solar.capacity_max_kwp),
            &config.file.market_price,
            (policy.mu1, policy.mu2),
            &centre.loads,
            &flags,
        );
        let limits = OperatingLimits {
            solar_capacity_kwp: (solar.capacity_min_kwp, solar.capacity_max_kwp),
            soc: (config.file.charger.soc_min, config.file.charger.soc_max),
            voltage_pu: (policy.v_min, policy.v_max),
        };
        Ok(Self {
            point_weights: points.iter().map(|p| p.weight).collect(),
            config,
            template,
            variables,
            concentrations,
            fleets,
            layout,
            boxes,
            limits,
            flags,
            nominal_scale,
        })
    }

    pub fn centre_fleet(&self) -> &DeviceFleet {
        &self.fleets[0]
    }

    /// The day's devices with the uncertain variables at `values`.
    pub fn realize(&self, values: &[f64]) -> DeviceFleet {
        self.template.realize(&self.config, values, self.nominal_scale)
    }

    pub fn decode(&self, genes: &[f64]) -> DecisionVector {
        DecisionVector::decode(&self.layout, genes)
    }

    /// No load shifting, the highest admissible incentive, greedy
    /// charging and mid-range solar.
    pub fn heuristic_genes(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len()];
        for s in 0..l.stations {
            x[l.solar(s)] = 0.5 * (self.boxes.lower[l.solar(s)] + self.boxes.upper[l.solar(s)]);
            for t in 0..l.intervals {
                x[l.ev_fraction(s, t)] = 1.0;
                x[l.battery_fraction(s, t)] = 1.0;
            }
        }
        for t in 0..l.intervals {
            x[l.incentive(t)] = self.boxes.upper[l.incentive(t)];
        }
        x
    }

    /// Box and zero-sum repair followed by the load-level rules: each
    /// load's curtailment is scaled into its discomfort allowance, and loads
    /// sharing a discomfort coefficient are scaled until their savings per
    /// unit of discomfort agree.
    pub fn repair_genes(&self, x: &mut [f64]) {
        repair(x, &self.boxes);
        let l = self.layout;
        let lambda1 = self.config.file.policy.lambda1;
        for (n, load) in self.centre_fleet().loads.iter().enumerate() {
            let curtailed: f64 = (0..l.intervals).filter(|&t| self.flags[n][t]).map(|t| x[l.curtailment(n, t)]).sum();
            let allowance = lambda1 * load.nominal_kw.iter().sum::<f64>();
            if curtailed > allowance {
                let k = allowance / curtailed * (1.0 - 1e-12);
                (0..l.intervals).for_each(|t| x[l.curtailment(n, t)] *= k);
            }
        }
        self.equalize_fairness(x);
    }

    fn equalize_fairness(&self, x: &mut [f64]) {
        let l = self.layout;
        let alpha = &self.config.file.market_price;
        let loads = &self.centre_fleet().loads;
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (n, load) in loads.iter().enumerate() {
            groups.entry(load.beta.to_bits()).or_default().push(n);
        }
        for members in groups.values().filter(|m| m.len() > 1) {
            let mut parts: Vec<FairnessTerm> = Vec::new();
            for &n in members {
                let row: Vec<f64> = (0..l.intervals).map(|t| x[l.curtailment(n, t)]).collect();
                let term = FairnessTerm::new(n, &row, &loads[n].nominal_kw, &self.flags[n], loads[n].beta, alpha);
                if term.discomfort(1.0) > 0.0 {
                    parts.push(term);
                }
            }
            if parts.len() < 2 {
                continue;
            }
            let mut scale = vec![1.0; parts.len()];
            if parts.iter().any(|p| p.savings <= 0.0) {
                for (k, p) in parts.iter().enumerate() {
                    if p.savings <= 0.0 {
                        scale[k] = 0.0;
                    }
                }
            }
            let live: Vec<usize> = (0..parts.len()).filter(|&k| scale[k] > 0.0).collect();
            if live.len() >= 2 {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for &c in &live {
                    let kappa = parts[c].ratio_at_full();
                    let s: Vec<f64> = live.iter().map(|&k| parts[k].scale_for(kappa)).collect();
                    let total: f64 = live.iter().zip(&s).map(|(&k, s)| s * parts[k].savings).sum();
                    if best.as_ref().is_none_or(|(b, _)| total > *b) {
                        best = Some((total, s));
                    }
                }
                if let Some((_, s)) = best {
                    for (&k, s) in live.iter().zip(s) {
                        scale[k] = s;
                    }
                }
            }
            for (p, s) in parts.iter().zip(scale) {
                if s != 1.0 {
                    (0..l.intervals).for_each(|t| x[l.curtailment(p.load, t)] *= s);
                }
            }
        }
    }

    pub fn simulate_point(&self, point: usize, decision: &DecisionVector) -> Result<ScheduleState> {
        simulate_schedule(&self.config, &self.fleets[point], decision).map_err(|e| Error::Evaluation {
            concentration: point,
            source: Box::new(e),
        })
    }

    pub fn baseline_point(&self, point: usize, solar_kwp: &[f64]) -> Result<ScheduleState> {
        run_uncontrolled_baseline(&self.config, &self.fleets[point], solar_kwp).map_err(|e| Error::Evaluation {
            concentration: point,
            source: Box::new(e),
        })
    }

    /// Constraint report of the centre day. Daytime voltages are held to
    /// those of the uncontrolled day with the same solar build-out.
    pub fn constraints(&self, centre: &ScheduleState) -> Result<ConstraintReport> {
        let mut report = evaluate_constraints(centre, &self.limits);
        let solar: Vec<f64> = centre.stations.iter().map(|s| s.solar_capacity_kwp).collect();
        let reference = self.baseline_point(0, &solar)?;
        let shortfall = daytime_voltage_shortfall(centre, &reference.v_min);
        report.set(ConstraintKind::DaytimeVoltage, shortfall, DAYTIME_VOLTAGE_SCALE_PU);
        Ok(report)
    }
}

/// Savings and discomfort of one load as its adjustment row is scaled by
/// `s`: savings grow linearly, discomfort convexly, so their ratio falls
/// as `s` grows.
struct FairnessTerm {
    load: usize,
    savings: f64,
    /// `(beta * x / p0)` at every flagged interval with a non-zero `x`.
    exponents: Vec<f64>,
}

impl FairnessTerm {
    fn new(load: usize, row: &[f64], nominal: &[f64], flags: &[bool], beta: f64, alpha: &[f64]) -> Self {
        let savings = row.iter().zip(alpha).map(|(x, a)| a * x).sum();
        let exponents = (0..row.len())
            .filter(|&t| flags[t] && row[t] != 0.0 && nominal[t] > 0.0)
            .map(|t| beta * row[t] / nominal[t])
            .collect();
        Self { load, savings, exponents }
    }

    fn discomfort(&self, s: f64) -> f64 {
        self.exponents.iter().map(|e| (e * s).exp_m1()).sum()
    }

    fn discomfort_slope(&self, s: f64) -> f64 {
        self.exponents.iter().map(|e| e * (e * s).exp()).sum()
    }

    fn ratio_at_full(&self) -> f64 {
        self.savings / self.discomfort(1.0)
    }

    /// Scale at which savings / discomfort equals `kappa`, or 0 when the
    /// ratio cannot reach it for any scale in `(0, 1]`.
    fn scale_for(&self, kappa: f64) -> f64 {
        let full = self.ratio_at_full();
        if kappa < full * (1.0 - 1e-12) {
            return 0.0;
        }
        if kappa <= full {
            return 1.0;
        }
        if kappa >= self.savings / self.discomfort_slope(0.0) {
            return 0.0;
        }
        let g = |s: f64| self.savings * s - kappa * self.discomfort(s);
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut s = 1.0;
        for _ in 0..100 {
            let v = g(s);
            if v > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let slope = self.savings - kappa * self.discomfort_slope(s);
            let mut next = if slope != 0.0 { s - v / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 1e-15 * s.max(1e-300) {
                s = next;
                break;
            }
            s = next;
        }
        s
    }
}

/// What the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Expected weighted sum of normalized objectives over all concentrations.
    Weighted(UtopiaBounds),
    /// One raw objective at the centre, oriented for minimization and
    /// divided by a reference magnitude.
    Single { objective: usize, scale: f64 },
}

pub struct VppProblem<'a> {
    pub model: &'a VppModel,
    pub target: Target,
    pub penalty_coeff: f64,
}

impl VppProblem<'_> {
    /// Scalar objective (without penalty), the centre state and its
    /// constraint report.
    pub fn score(&self, genes: &[f64]) -> Result<(f64, ScheduleState, ConstraintReport)> {
        let model = self.model;
        let decision = model.decode(genes);
        let centre = model.simulate_point(0, &decision)?;
        let report = model.constraints(&centre)?;
        let charger = &model.config.file.charger;
        let solar = &model.config.solar;
        let value = match self.target {
            Target::Single { objective, scale } => {
                let v = evaluate_objectives(&centre, solar, charger)?.to_array()[objective];
                let signed = if OBJECTIVE_SENSES[objective] == Sense::Maximize { -v } else { v };
                signed / scale
            }
            Target::Weighted(bounds) => {
                let weights = &model.config.file.policy.weights;
                let mut total = model.point_weights[0] * weighted_sum(&bounds.normalize(&evaluate_objectives(&centre, solar, charger)?)?, weights);
                for p in 1..model.fleets.len() {
                    let state = model.simulate_point(p, &decision)?;
                    let f = weighted_sum(&bounds.normalize(&evaluate_objectives(&state, solar, charger)?)?, weights);
                    total += model.point_weights[p] * f;
                }
                total
            }
        };
        Ok((value, centre, report))
    }
}

impl Problem for VppProblem<'_> {
    fn boxes(&self) -> &Boxes {
        &self.model.boxes
    }

    fn repair(&self, x: &mut [f64]) {
        self.model.repair_genes(x);
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let (value, _, report) = self.score(x)?;
        let violation = report.scaled_penalty();
        Ok(Evaluation {
            fitness: value + self.penalty_coeff * violation,
            violation,
        })
    }

    fn heuristic_seed(&self) -> Option<Vec<f64>> {
        Some(self.model.heuristic_genes())
    }
}

/// Objective weights `F_obj` is built from, evaluated for one realized day.
pub fn objective_value(model: &VppModel, bounds: &UtopiaBounds, state: &ScheduleState) -> Result<f64> {
    let objectives = evaluate_objectives(state, &model.config.solar, &model.config.file.charger)?;
    Ok(weighted_sum(&bounds.normalize(&objectives)?, &model.config.file.policy.weights))
}

/// Runs one short single-objective search per objective and takes the
/// best and worst value of each objective across their optima, the
/// heuristic seed included.
pub fn estimate_utopia_bounds(model: &VppModel, seed: u64) -> Result<UtopiaBounds> {
    let cfg = &model.config;
    let seed_genes = {
        let mut x = model.heuristic_genes();
        model.repair_genes(&mut x);
        x
    };
    let reference = evaluate_objectives(&model.simulate_point(0, &model.decode(&seed_genes))?, &cfg.solar, &cfg.file.charger)?;
    let reference = reference.to_array();
    let mut candidates = vec![ObjectiveVector::from_array(reference)];
    for objective in 0..OBJECTIVE_COUNT {
        let run_cfg = OptimizerConfig {
            population: cfg.file.utopia.population,
            iterations: cfg.file.utopia.iterations,
            seed: seed.wrapping_add(objective as u64 + 1),
            elitism: cfg.file.optimizer.elitism.min(cfg.file.utopia.population - 1),
            penalty_coeff: cfg.file.optimizer.penalty_coeff,
        };
        let problem = VppProblem {
            model,
            target: Target::Single {
                objective,
                scale: reference[objective].abs().max(1.0),
            },
            penalty_coeff: run_cfg.penalty_coeff,
        };
        let result = optimizer::run(&problem, &run_cfg, &StandardJaya)?;
        let state = model.simulate_point(0, &model.decode(&result.best))?;
        candidates.push(evaluate_objectives(&state, &cfg.solar, &cfg.file.charger)?);
    }
    UtopiaBounds::from_candidates(&candidates)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Replaces the optimizer seed of the scenario.
    pub seed: Option<u64>,
    /// Monte-Carlo samples used to cross-check the PEM estimate of the
    /// final objective; 0 skips the check.
    pub mc_samples: usize,
    /// Only simulate the uncontrolled day.
    pub baseline_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    Feasible,
    Infeasible { violation: f64 },
    BaselineOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub status: RunStatus,
    pub decision: Option<DecisionVector>,
    pub utopia: Option<UtopiaBounds>,
    pub best_fitness: Option<f64>,
    pub trace: Vec<TraceRow>,
    pub constraints: Option<ConstraintReport>,
    pub controlled: Option<ScheduleReport>,
    pub baseline: ScheduleReport,
    /// Monte-Carlo mean and standard deviation of the final objective.
    pub monte_carlo: Option<Estimate>,
}

impl RunResult {
    /// `Err(InfeasibleBest)` when the optimum still violates a constraint.
    pub fn check(&self) -> Result<()> {
        match self.status {
            RunStatus::Infeasible { violation } => Err(Error::InfeasibleBest { violation }),
            _ => Ok(()),
        }
    }
}

/// Baseline states at every concentration.
pub fn baseline_states(model: &VppModel, solar_kwp: &[f64]) -> Result<Vec<ScheduleState>> {
    (0..model.fleets.len()).map(|p| model.baseline_point(p, solar_kwp)).collect()
}

pub fn controlled_states(model: &VppModel, decision: &DecisionVector) -> Result<Vec<ScheduleState>> {
    (0..model.fleets.len()).map(|p| model.simulate_point(p, decision)).collect()
}

/// Utopia estimation, optimization, and the controlled and uncontrolled
/// reports of the best schedule.
pub fn run(config: ScenarioConfig, options: &RunOptions) -> Result<RunResult> {
    let mut config = config;
    if let Some(seed) = options.seed {
        config.file.optimizer.seed = seed;
    }
    let seed = config.file.optimizer.seed;
    let model = VppModel::new(config)?;
    let name = model.config.file.name.clone();

    if options.baseline_only {
        let solar: Vec<f64> = model.decode(&model.heuristic_genes()).solar_capacity;
        let states = baseline_states(&model, &solar)?;
        return Ok(RunResult {
            scenario: name,
            seed,
            status: RunStatus::BaselineOnly,
            decision: None,
            utopia: None,
            best_fitness: None,
            trace: Vec::new(),
            constraints: None,
            controlled: None,
            baseline: build_report(&model, "uncontrolled", &states, None)?,
            monte_carlo: None,
        });
    }

    let bounds = estimate_utopia_bounds(&model, seed)?;
    let problem = VppProblem {
        model: &model,
        target: Target::Weighted(bounds),
        penalty_coeff: model.config.file.optimizer.penalty_coeff,
    };
    let result = optimizer::run(&problem, &model.config.file.optimizer, &StandardJaya)?;
    let decision = model.decode(&result.best);
    let controlled = controlled_states(&model, &decision)?;
    let constraints = model.constraints(&controlled[0])?;
    let baseline = baseline_states(&model, &decision.solar_capacity)?;
    let controlled_report = build_report(&model, "controlled", &controlled, Some(&bounds))?;
    let baseline_report = build_report(&model, "uncontrolled", &baseline, Some(&bounds))?;

    let monte_carlo = if options.mc_samples > 0 {
        Some(monte_carlo_oracle(
            &model.variables,
            |values| {
                let fleet = model.realize(values);
                let state = simulate_schedule(&model.config, &fleet, &decision)?;
                Ok(vec![objective_value(&model, &bounds, &state)?])
            },
            options.mc_samples,
            seed,
        )?)
    } else {
        None
    };

    let status = if constraints.is_feasible() {
        RunStatus::Feasible
    } else {
        RunStatus::Infeasible {
            violation: constraints.scaled_penalty(),
        }
    };
    Ok(RunResult {
        scenario: name,
        seed,
        status,
        decision: Some(decision),
        utopia: Some(bounds),
        best_fitness: Some(result.best_evaluation.fitness),
        trace: result.trace,
        constraints: Some(constraints),
        controlled: Some(controlled_report),
        baseline: baseline_report,
        monte_carlo,
    })
}
