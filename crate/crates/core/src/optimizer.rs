//! Population-based minimizer of the Jaya family with elitism and greedy
//! acceptance, generic over the problem being solved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-gene bounds plus groups of genes whose sum must be zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Boxes {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub zero_sum_groups: Vec<Vec<usize>>,
}

impl Boxes {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            zero_sum_groups: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| lo <= v && v <= hi)
    }
}

/// Shift `c` such that `sum(clamp(x_i - c))` is as close to zero as the
/// bounds allow.
fn zero_sum_shift(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let total = |c: f64| -> f64 { x.iter().zip(lo).zip(hi).map(|((v, l), h)| (v - c).clamp(*l, *h)).sum() };
    let mut a = x.iter().zip(hi).map(|(v, h)| v - h).fold(f64::INFINITY, f64::min);
    let mut b = x.iter().zip(lo).map(|(v, l)| v - l).fold(f64::NEG_INFINITY, f64::max);
    if total(a) <= 0.0 {
        return a;
    }
    if total(b) >= 0.0 {
        return b;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if total(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    // Solve the linear piece exactly for the genes that are not clamped.
    let c = 0.5 * (a + b);
    let (mut free_sum, mut free_n, mut fixed) = (0.0, 0usize, 0.0);
    for ((v, l), h) in x.iter().zip(lo).zip(hi) {
        let y = v - c;
        if y <= *l {
            fixed += l;
        } else if y >= *h {
            fixed += h;
        } else {
            free_sum += v;
            free_n += 1;
        }
    }
    if free_n == 0 {
        c
    } else {
        (free_sum + fixed) / free_n as f64
    }
}

/// Clamps every gene into its box, then shifts each zero-sum group by a
/// common offset so it sums to zero without leaving the box.
pub fn repair(x: &mut [f64], boxes: &Boxes) {
    for ((v, lo), hi) in x.iter_mut().zip(&boxes.lower).zip(&boxes.upper) {
        *v = if v.is_nan() { *lo } else { v.clamp(*lo, *hi) };
    }
    let mut vals = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for group in &boxes.zero_sum_groups {
        vals.clear();
        lo.clear();
        hi.clear();
        for &i in group {
            vals.push(x[i]);
            lo.push(boxes.lower[i]);
            hi.push(boxes.upper[i]);
        }
        let c = zero_sum_shift(&vals, &lo, &hi);
        for (k, &i) in group.iter().enumerate() {
            x[i] = (vals[k] - c).clamp(lo[k], hi[k]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Value being minimized, penalty included.
    pub fitness: f64,
    /// Scaled constraint violation; zero when feasible.
    pub violation: f64,
}

impl Evaluation {
    pub const FAILED: Evaluation = Evaluation {
        fitness: f64::INFINITY,
        violation: f64::INFINITY,
    };
}

pub trait Problem: Sync {
    fn boxes(&self) -> &Boxes;

    /// Projects a candidate back into the feasible decision space.
    fn repair(&self, x: &mut [f64]) {
        repair(x, self.boxes());
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;

    /// A hand-built starting candidate placed into the initial population.
    fn heuristic_seed(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Moves one candidate given the current best and worst.
pub trait UpdateRule: Sync {
    fn propose(&self, x: &[f64], best: &[f64], worst: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]);
}

/// `x' = x + r1 (best - |x|) - r2 (worst - |x|)` with fresh `r1, r2` per gene.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardJaya;

impl UpdateRule for StandardJaya {
    fn propose(&self, x: &[f64], best: &[f64], worst: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for i in 0..x.len() {
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            out[i] = x[i] + r1 * (best[i] - x[i].abs()) - r2 * (worst[i] - x[i].abs());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub population: usize,
    pub iterations: usize,
    pub seed: u64,
    pub penalty_coeff: f64,
    pub elitism: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            population: 40,
            iterations: 300,
            seed: 42,
            penalty_coeff: 1e3,
            elitism: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::validation("optimizer.population", "must be at least 4"));
        }
        if self.elitism >= self.population {
            return Err(Error::validation("optimizer.elitism", "must be smaller than the population"));
        }
        if !(self.penalty_coeff >= 0.0) {
            return Err(Error::validation("optimizer.penalty_coeff", "must be non-negative"));
        }
        Ok(())
    }
}

const INIT_STREAM: u64 = u64::MAX;

fn candidate_rng(seed: u64, iteration: usize, candidate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | candidate as u64);
    rng
}

/// Uniform random candidates inside the boxes.
pub fn init_population(config: &OptimizerConfig, boxes: &Boxes, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..config.population)
        .map(|_| {
            boxes
                .lower
                .iter()
                .zip(&boxes.upper)
                .map(|(&lo, &hi)| if hi > lo { lo + rng.random::<f64>() * (hi - lo) } else { lo })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub best_fitness: f64,
    /// Mean over candidates with a finite fitness.
    pub mean_fitness: f64,
    /// Number of candidates that violate a constraint.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: Vec<f64>,
    pub best_evaluation: Evaluation,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub members: Vec<Vec<f64>>,
    pub evaluations: Vec<Evaluation>,
}

impl Population {
    /// Candidate indices from best to worst; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.members.len()).collect();
        order.sort_by(|&a, &b| self.evaluations[a].fitness.total_cmp(&self.evaluations[b].fitness).then(a.cmp(&b)));
        order
    }

    fn trace_row(&self, iter: usize) -> TraceRow {
        let finite: Vec<f64> = self.evaluations.iter().map(|e| e.fitness).filter(|f| f.is_finite()).collect();
        let best = self.evaluations.iter().map(|e| e.fitness).fold(f64::INFINITY, f64::min);
        TraceRow {
            iter,
            best_fitness: best,
            mean_fitness: if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            violations: self.evaluations.iter().filter(|e| e.violation > 0.0).count(),
        }
    }
}

fn evaluate_or_fail<P: Problem + ?Sized>(problem: &P, x: &[f64]) -> Evaluation {
    problem.evaluate(x).unwrap_or(Evaluation::FAILED)
}

/// Moves every non-elite candidate toward the best and away from the
/// worst, keeping a move only if it strictly improves the fitness.
pub fn jaya_step<P: Problem + ?Sized, R: UpdateRule>(
    problem: &P,
    rule: &R,
    population: &mut Population,
    config: &OptimizerConfig,
    iteration: usize,
) {
    let order = population.ranking();
    let best = population.members[order[0]].clone();
    let worst = population.members[*order.last().expect("non-empty population")].clone();
    if best == worst {
        return;
    }
    let mut elite = vec![false; population.members.len()];
    for &i in order.iter().take(config.elitism) {
        elite[i] = true;
    }
    let updates: Vec<Option<(Vec<f64>, Evaluation)>> = (0..population.members.len())
        .into_par_iter()
        .map(|i| {
            if elite[i] {
                return None;
            }
            let x = &population.members[i];
            let mut rng = candidate_rng(config.seed, iteration, i);
            let mut trial = vec![0.0; x.len()];
            rule.propose(x, &best, &worst, &mut rng, &mut trial);
            problem.repair(&mut trial);
            let eval = evaluate_or_fail(problem, &trial);
            (eval.fitness < population.evaluations[i].fitness).then_some((trial, eval))
        })
        .collect();
    for (i, u) in updates.into_iter().enumerate() {
        if let Some((x, e)) = u {
            population.members[i] = x;
            population.evaluations[i] = e;
        }
    }
}

pub fn initial_population<P: Problem + ?Sized>(problem: &P, config: &OptimizerConfig) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    let mut members = init_population(config, problem.boxes(), &mut rng);
    if let Some(seed) = problem.heuristic_seed() {
        members[0] = seed;
    }
    for m in &mut members {
        problem.repair(m);
    }
    let evaluations = members.par_iter().map(|m| evaluate_or_fail(problem, m)).collect();
    Population { members, evaluations }
}

pub fn run<P: Problem + ?Sized, R: UpdateRule>(problem: &P, config: &OptimizerConfig, rule: &R) -> Result<OptimizationResult> {
    config.validate()?;
    let mut pop = initial_population(problem, config);
    let mut trace = vec![pop.trace_row(0)];
    for iter in 1..=config.iterations {
        jaya_step(problem, rule, &mut pop, config, iter);
        trace.push(pop.trace_row(iter));
    }
    let best = pop.ranking()[0];
    Ok(OptimizationResult {
        best: pop.members[best].clone(),
        best_evaluation: pop.evaluations[best],
        trace,
    })
}
