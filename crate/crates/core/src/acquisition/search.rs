//! Derivative-free maximization over the unit cube.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::seed;
use crate::sobol::sobol_points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Compass search from quasi-random starting points.
    PatternSearchRestarts,
    /// Differential evolution seeded around each starting point.
    Evolutionary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

const INITIAL_STEP: f64 = 0.25;
const MIN_STEP: f64 = 1e-6;

/// Compass search: try `±step` along each coordinate in turn, move on the
/// first improvement, halve the step after a sweep without one.
pub fn pattern_search<F>(f: &mut F, start: Vec<f64>, budget: usize) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = start;
    let mut best = f(&x);
    let mut evals = 1;
    let mut step = INITIAL_STEP;
    while evals < budget && step >= MIN_STEP {
        let mut improved = false;
        'coords: for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                if evals >= budget {
                    break 'coords;
                }
                let v = (x[i] + dir * step).clamp(0.0, 1.0);
                if v == x[i] {
                    continue;
                }
                let old = x[i];
                x[i] = v;
                let val = f(&x);
                evals += 1;
                if val > best {
                    best = val;
                    improved = true;
                    continue 'coords;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    SearchResult {
        x,
        value: best,
        evaluations: evals,
    }
}

/// DE/rand/1/bin with the population seeded around `start`.
pub fn differential_evolution<F>(f: &mut F, start: Vec<f64>, budget: usize, seed: u64) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let pop_size = (5 * dim).clamp(8, 40).min(budget.max(1));
    let mut rng = seed::rng(seed, "differential-evolution", 0);
    let mut pop = vec![start];
    while pop.len() < pop_size {
        pop.push((0..dim).map(|_| rng.gen::<f64>()).collect());
    }
    let mut fit: Vec<f64> = pop.iter().map(|p| f(p)).collect();
    let mut evals = pop.len();
    while evals < budget {
        for i in 0..pop_size {
            if evals >= budget {
                break;
            }
            let pick = |rng: &mut rand_chacha::ChaCha8Rng| loop {
                let r = rng.gen_range(0..pop_size);
                if r != i {
                    break r;
                }
            };
            let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let forced = rng.gen_range(0..dim);
            let trial: Vec<f64> = (0..dim)
                .map(|d| {
                    if d == forced || rng.gen::<f64>() < 0.9 {
                        (pop[a][d] + 0.5 * (pop[b][d] - pop[c][d])).clamp(0.0, 1.0)
                    } else {
                        pop[i][d]
                    }
                })
                .collect();
            let v = f(&trial);
            evals += 1;
            if v > fit[i] {
                pop[i] = trial;
                fit[i] = v;
            }
        }
    }
    let best = (0..pop_size).fold(0, |b, i| if fit[i] > fit[b] { i } else { b });
    SearchResult {
        x: pop[best].clone(),
        value: fit[best],
        evaluations: evals,
    }
}

/// Starting points: a Sobol sequence shifted by a seeded random offset
/// (modulo one), so different seeds explore different starts.
pub fn starting_points(dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = seed::rng(seed, "search-starts", 0);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    Ok(sobol_points(dim, count)?
        .into_iter()
        .map(|p| p.iter().zip(&shift).map(|(a, s)| (a + s).fract()).collect())
        .collect())
}

/// Best result over `restarts` runs; ties keep the earliest restart.
pub fn multistart<F>(
    f: &mut F,
    dim: usize,
    optimizer: Optimizer,
    restarts: usize,
    budget: usize,
    seed: u64,
) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best: Option<SearchResult> = None;
    let mut total = 0;
    for (r, start) in starting_points(dim, restarts.max(1), seed)?.into_iter().enumerate() {
        let res = match optimizer {
            Optimizer::PatternSearchRestarts => pattern_search(f, start, budget),
            Optimizer::Evolutionary => differential_evolution(f, start, budget, seed::derive(seed, "restart", r as u64)),
        };
        total += res.evaluations;
        if best.as_ref().is_none_or(|b| res.value > b.value) {
            best = Some(res);
        }
    }
    let mut best = best.expect("at least one restart");
    best.evaluations = total;
    Ok(best)
}
