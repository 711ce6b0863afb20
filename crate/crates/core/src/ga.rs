//! Real-coded genetic algorithm for box-constrained minimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{uniform, Bounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaSettings {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub blend_alpha: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each coordinate's range.
    pub mutation_sigma: f64,
    pub elitism: usize,
    /// Fitness assigned to failed evaluations.
    pub penalty: f64,
}

impl Default for GaSettings {
    fn default() -> Self {
        Self {
            population: 30,
            generations: 60,
            tournament: 3,
            blend_alpha: 0.5,
            mutation_rate: 0.1,
            mutation_sigma: 0.05,
            elitism: 2,
            penalty: 1e30,
        }
    }
}

impl GaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.tournament == 0 || self.elitism >= self.population {
            return Err(Error::InvalidInput(format!(
                "GA needs population >= 2, tournament >= 1 and elitism < population (got {}, {}, {})",
                self.population, self.tournament, self.elitism
            )));
        }
        if !(self.blend_alpha >= 0.0) || !(0.0..=1.0).contains(&self.mutation_rate) || !(self.mutation_sigma >= 0.0) {
            return Err(Error::InvalidInput("GA operator parameters out of range".into()));
        }
        Ok(())
    }

    /// Fitness evaluations of a full run.
    pub fn budget(&self) -> usize {
        self.population + self.generations * (self.population - self.elitism)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub evaluations: usize,
    pub failures: usize,
    pub history: Vec<Generation>,
}

/// Minimize `fitness` over `bounds`. `None` from the fitness marks a failed
/// evaluation, which receives the penalty value.
pub fn minimize<F>(fitness: F, bounds: &Bounds, settings: &GaSettings, seed: u64) -> Result<GaResult>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    settings.validate()?;
    let d = bounds.dim();
    let width: Vec<f64> = (0..d).map(|j| bounds.width(j)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut evaluations, mut failures) = (0, 0);
    let evaluate = |pop: &[Vec<f64>], evaluations: &mut usize, failures: &mut usize| -> Vec<f64> {
        let vals: Vec<Option<f64>> = pop.par_iter().map(|x| fitness(x).filter(|v| v.is_finite())).collect();
        *evaluations += pop.len();
        *failures += vals.iter().filter(|v| v.is_none()).count();
        vals.into_iter().map(|v| v.unwrap_or(settings.penalty)).collect()
    };

    let mut pop = uniform(bounds, settings.population, rng.random());
    let mut fit = evaluate(&pop, &mut evaluations, &mut failures);
    let mut history = Vec::with_capacity(settings.generations + 1);
    let record = |g: usize, fit: &[f64], evals: usize| Generation {
        generation: g,
        best: fit.iter().cloned().fold(f64::INFINITY, f64::min),
        mean: fit.iter().sum::<f64>() / fit.len() as f64,
        evaluations: evals,
    };
    history.push(record(0, &fit, evaluations));

    let normals: Vec<Normal<f64>> =
        width.iter().map(|w| Normal::new(0.0, (settings.mutation_sigma * w).max(0.0)).unwrap()).collect();
    for g in 1..=settings.generations {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let mut next: Vec<Vec<f64>> = order[..settings.elitism].iter().map(|&i| pop[i].clone()).collect();
        let next_fit_elite: Vec<f64> = order[..settings.elitism].iter().map(|&i| fit[i]).collect();
        let mut children = Vec::with_capacity(settings.population - settings.elitism);
        while children.len() < settings.population - settings.elitism {
            let mut pick = || {
                (0..settings.tournament)
                    .map(|_| rng.random_range(0..pop.len()))
                    .min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)))
                    .unwrap()
            };
            let (pa, pb) = (pick(), pick());
            let child: Vec<f64> = (0..d)
                .map(|j| {
                    let (a, b) = (pop[pa][j], pop[pb][j]);
                    let (lo, hi) = (a.min(b), a.max(b));
                    let span = hi - lo;
                    let mut x = rng.random_range(0.0..=1.0) * (span * (1.0 + 2.0 * settings.blend_alpha))
                        + lo
                        - settings.blend_alpha * span;
                    if rng.random::<f64>() < settings.mutation_rate {
                        x += normals[j].sample(&mut rng);
                    }
                    x.clamp(bounds.lower[j], bounds.upper[j])
                })
                .collect();
            children.push(child);
        }
        let child_fit = evaluate(&children, &mut evaluations, &mut failures);
        next.extend(children);
        pop = next;
        fit = next_fit_elite.into_iter().chain(child_fit).collect();
        history.push(record(g, &fit, evaluations));
    }
    let best = (0..pop.len()).min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b))).unwrap();
    Ok(GaResult { best: pop[best].clone(), best_fitness: fit[best], evaluations, failures, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn square() -> Bounds {
        Bounds::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn finds_quadratic_minimum_within_budget() {
        let target = [0.3, -1.1];
        let f = |x: &[f64]| Some((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2));
        let s = GaSettings::default();
        let r = minimize(f, &square(), &s, 5).unwrap();
        assert!(r.evaluations <= 1830);
        assert_eq!(r.evaluations, s.budget());
        assert!((r.best[0] - 0.3).abs() < 0.05 * 2.0 && (r.best[1] + 1.1).abs() < 0.05 * 4.0);
        for w in r.history.windows(2) {
            assert!(w[1].best <= w[0].best);
        }
    }

    #[test]
    fn every_individual_is_inside_the_box() {
        let seen = Mutex::new(Vec::new());
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            Some(-x[0] - x[1])
        };
        minimize(f, &square(), &GaSettings { generations: 15, ..Default::default() }, 1).unwrap();
        let b = square();
        assert!(seen.into_inner().unwrap().iter().all(|x| b.contains(x)));
    }

    #[test]
    fn failures_are_penalized_and_run_is_deterministic() {
        let f = |x: &[f64]| if x[0] > 0.5 { None } else { Some(x[0] * x[0] + x[1] * x[1]) };
        let s = GaSettings { generations: 10, ..Default::default() };
        let a = minimize(f, &square(), &s, 9).unwrap();
        let b = minimize(f, &square(), &s, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.best[0] <= 0.5);
        assert!(a.best_fitness < 1e30);
    }

    #[test]
    fn rejects_bad_settings() {
        let f = |_: &[f64]| Some(0.0);
        assert!(minimize(f, &square(), &GaSettings { elitism: 30, ..Default::default() }, 0).is_err());
    }
}
