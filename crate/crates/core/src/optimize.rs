//! Box-constrained differential evolution (DE/rand/1/bin).
//!
//! Trial vectors are generated sequentially from a seeded ChaCha stream and
//! evaluated in parallel, so results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DeConfig {
    pub population: usize,
    pub generations: usize,
    pub differential_weight: f64,
    pub crossover: f64,
    /// Stop once max − min of the population objective is at most
    /// `tolerance · (1 + |best|)`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 1000,
            differential_weight: 0.8,
            crossover: 0.9,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(invalid("population", "needs at least 4 members"));
        }
        if self.generations == 0 {
            return Err(invalid("generations", "must be positive"));
        }
        if !(self.differential_weight > 0.0 && self.differential_weight <= 2.0) {
            return Err(invalid("differential_weight", "must lie in (0, 2]"));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(invalid("crossover", "must lie in [0, 1]"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("bounds", "lower and upper must be non-empty and of equal length"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(invalid("bounds", format!("[{l}, {u}] is not a finite interval")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| v >= l && v <= u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub generations: usize,
    pub evaluations: usize,
    /// False when the generation budget ran out before the population
    /// collapsed; `best` is then the best point seen.
    pub converged: bool,
}

/// Minimises `objective` over `bounds`. Non-finite objective values are
/// treated as +∞.
pub fn differential_evolution<F>(objective: F, bounds: &Bounds, config: &DeConfig) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let dim = bounds.dimension();
    let np = config.population;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let score = |x: &Vec<f64>| {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut population: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            (0..dim)
                .map(|j| {
                    let (l, u) = (bounds.lower[j], bounds.upper[j]);
                    l + (u - l) * rng.random::<f64>()
                })
                .collect()
        })
        .collect();
    let mut values: Vec<f64> = population.par_iter().map(score).collect();
    let mut evaluations = np;

    let mut generation = 0;
    let mut converged = spread_settled(&values, config.tolerance);
    while !converged && generation < config.generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let [a, b, c] = distinct_others(&mut rng, np, i);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let take = j == forced || rng.random::<f64>() < config.crossover;
                        if !take {
                            return population[i][j];
                        }
                        let v = population[a][j] + config.differential_weight * (population[b][j] - population[c][j]);
                        let (l, u) = (bounds.lower[j], bounds.upper[j]);
                        // Out-of-box components land between the parent and the violated edge.
                        if v < l {
                            0.5 * (l + population[i][j])
                        } else if v > u {
                            0.5 * (u + population[i][j])
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_values: Vec<f64> = trials.par_iter().map(score).collect();
        evaluations += np;
        for (i, (trial, value)) in trials.into_iter().zip(trial_values).enumerate() {
            if value <= values[i] {
                population[i] = trial;
                values[i] = value;
            }
        }
        generation += 1;
        converged = spread_settled(&values, config.tolerance);
    }

    let best_index = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("population is non-empty");
    Ok(DeResult {
        best: population[best_index].clone(),
        value: values[best_index],
        generations: generation,
        evaluations,
        converged,
    })
}

fn spread_settled(values: &[f64], tolerance: f64) -> bool {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best.is_finite() && worst.is_finite() && worst - best <= tolerance * (1.0 + best.abs())
}

fn distinct_others<R: Rng>(rng: &mut R, n: usize, exclude: usize) -> [usize; 3] {
    let mut picked = [usize::MAX; 3];
    for k in 0..3 {
        loop {
            let candidate = rng.random_range(0..n);
            if candidate != exclude && !picked[..k].contains(&candidate) {
                picked[k] = candidate;
                break;
            }
        }
    }
    picked
}
