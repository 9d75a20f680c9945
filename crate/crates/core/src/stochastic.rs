//! Hong's (2m+1) point-estimate method for propagating demand uncertainty,
//! with a Monte Carlo sampler to check it against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    EvArrival,
    EvDeparture,
    EvSoc,
    DrStart,
    DrStop,
    LoadScale,
}

/// A Gaussian input truncated to `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainVariable {
    pub id: String,
    pub kind: UncertaintyKind,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl UncertainVariable {
    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0) || !(self.min <= self.mean && self.mean <= self.max) {
            return Err(Error::validation(
                format!("uncertainty.{}", self.id),
                "requires std >= 0 and min <= mean <= max",
            ));
        }
        Ok(())
    }
}

/// Which distribution the point estimates are fitted to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentModel {
    /// The untruncated Gaussian: skewness 0, kurtosis 3.
    Gaussian,
    /// The Gaussian restricted to `[min, max]`, which is what gets sampled.
    #[default]
    Truncated,
}

/// Mean, standard deviation and standardized third and fourth central
/// moments of a variable under the chosen model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

const QUADRATURE_PANELS: usize = 4000;

/// Composite Simpson rule.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = QUADRATURE_PANELS;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Mean, std and raw standardized moments `(lambda3, lambda4)` of a
/// Gaussian `N(mean, std^2)` restricted to `[lo, hi]`, by quadrature.
pub fn truncated_gaussian_moments(mean: f64, std: f64, lo: f64, hi: f64) -> Moments {
    let a = lo.max(mean - 12.0 * std);
    let b = hi.min(mean + 12.0 * std);
    let pdf = |u: f64| (-0.5 * ((u - mean) / std).powi(2)).exp();
    let mass = integrate(pdf, a, b);
    let m1 = integrate(|u| u * pdf(u), a, b) / mass;
    let central = |j: i32| integrate(|u| (u - m1).powi(j) * pdf(u), a, b) / mass;
    let var = central(2);
    let sd = var.sqrt();
    Moments {
        mean: m1,
        std: sd,
        lambda3: central(3) / sd.powi(3),
        lambda4: central(4) / (var * var),
    }
}

/// `None` when the variable has no spread and is held at its mean.
pub fn standard_central_moments(var: &UncertainVariable, model: MomentModel) -> Option<Moments> {
    if var.std <= 0.0 {
        return None;
    }
    Some(match model {
        MomentModel::Gaussian => Moments {
            mean: var.mean,
            std: var.std,
            lambda3: 0.0,
            lambda4: 3.0,
        },
        MomentModel::Truncated => truncated_gaussian_moments(var.mean, var.std, var.min, var.max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    /// Index into the variable list.
    pub variable: usize,
    pub location: f64,
    pub weight: f64,
    /// 1 or 2; the third point of every variable is the shared centre.
    pub k: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSet {
    pub variables: Vec<UncertainVariable>,
    /// Value every variable takes when it is not being perturbed.
    pub centre: Vec<f64>,
    /// Combined weight of the all-centre evaluation.
    pub centre_weight: f64,
    pub concentrations: Vec<Concentration>,
}

/// One evaluation of the deterministic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    pub weight: f64,
    pub values: Vec<f64>,
}

impl ConcentrationSet {
    pub fn uncertain_count(&self) -> usize {
        self.concentrations.len() / 2
    }

    /// The centre point first, then two points per uncertain variable.
    pub fn points(&self) -> Vec<ConcentrationPoint> {
        let mut out = Vec::with_capacity(1 + self.concentrations.len());
        out.push(ConcentrationPoint {
            weight: self.centre_weight,
            values: self.centre.clone(),
        });
        for c in &self.concentrations {
            let mut values = self.centre.clone();
            values[c.variable] = c.location;
            out.push(ConcentrationPoint { weight: c.weight, values });
        }
        out
    }

    pub fn total_weight(&self) -> f64 {
        self.centre_weight + self.concentrations.iter().map(|c| c.weight).sum::<f64>()
    }
}

pub fn pem_concentrations(variables: &[UncertainVariable], model: MomentModel) -> Result<ConcentrationSet> {
    let moments: Vec<Option<Moments>> = variables.iter().map(|v| standard_central_moments(v, model)).collect();
    let m = moments.iter().filter(|m| m.is_some()).count();
    let centre = variables
        .iter()
        .zip(&moments)
        .map(|(v, mo)| mo.map_or(v.mean, |mo| mo.mean))
        .collect();
    let mut set = ConcentrationSet {
        variables: variables.to_vec(),
        centre,
        centre_weight: if m == 0 { 1.0 } else { 0.0 },
        concentrations: Vec::with_capacity(2 * m),
    };
    for (i, mo) in moments.iter().enumerate() {
        let Some(mo) = mo else { continue };
        let (l3, l4) = (mo.lambda3, mo.lambda4);
        let disc = l4 - 0.75 * l3 * l3;
        if disc < 0.0 || (l4 - l3 * l3).abs() < 1e-12 {
            return Err(Error::InvalidMoments {
                variable: variables[i].id.clone(),
                lambda3: l3,
                lambda4: l4,
            });
        }
        let xi1 = l3 / 2.0 + disc.sqrt();
        let xi2 = l3 / 2.0 - disc.sqrt();
        let w1 = 1.0 / (xi1 * (xi1 - xi2));
        let w2 = -1.0 / (xi2 * (xi1 - xi2));
        set.centre_weight += 1.0 / m as f64 - 1.0 / (l4 - l3 * l3);
        for (k, xi, w) in [(1, xi1, w1), (2, xi2, w2)] {
            set.concentrations.push(Concentration {
                variable: i,
                location: mo.mean + xi * mo.std,
                weight: w,
                k,
            });
        }
    }
    Ok(set)
}

/// Mean and standard deviation of every model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Weighted mean and standard deviation of a set of `(weight, outputs)`
/// pairs, accumulated in order.
pub fn weighted_moments(samples: &[(f64, Vec<f64>)]) -> Estimate {
    let width = samples.first().map_or(0, |s| s.1.len());
    let mut m1 = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    for (w, out) in samples {
        for (j, &g) in out.iter().enumerate() {
            m1[j] += w * g;
            m2[j] += w * g * g;
        }
    }
    let std = m1.iter().zip(&m2).map(|(a, b)| (b - a * a).max(0.0).sqrt()).collect();
    Estimate { mean: m1, std }
}

/// Evaluates the model at every concentration in parallel and combines
/// the results with the point weights in a fixed order.
pub fn pem_estimate<F>(set: &ConcentrationSet, evaluator: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let points = set.points();
    let outputs: Vec<(f64, Vec<f64>)> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            evaluator(&p.values)
                .map(|out| (p.weight, out))
                .map_err(|e| Error::Evaluation {
                    concentration: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    Ok(weighted_moments(&outputs))
}

/// Draw from `N(mean, std^2)` conditioned on `[min, max]` by rejection.
pub fn sample_truncated(var: &UncertainVariable, rng: &mut impl Rng) -> f64 {
    if var.std <= 0.0 {
        return var.mean;
    }
    let normal = Normal::new(var.mean, var.std).expect("std checked positive");
    loop {
        let u = normal.sample(rng);
        if (var.min..=var.max).contains(&u) {
            return u;
        }
    }
}

pub fn monte_carlo_oracle<F>(variables: &[UncertainVariable], evaluator: F, n_samples: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..n_samples.max(1))
        .map(|_| variables.iter().map(|v| sample_truncated(v, &mut rng)).collect())
        .collect();
    let w = 1.0 / draws.len() as f64;
    let outputs: Vec<(f64, Vec<f64>)> = draws
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            evaluator(d).map(|out| (w, out)).map_err(|e| Error::Evaluation {
                concentration: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(weighted_moments(&outputs))
}
