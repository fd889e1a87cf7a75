//! Constrained expected improvement with the over-exploitation correction.

use rand::Rng;
use rand_distr::{Distribution, Normal as Gauss};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::Surrogate;
use super::CaseSpec;
use crate::error::Result;

fn std_normal() -> Normal {
    Normal::standard()
}

/// Closed-form expected improvement for minimization.
pub fn expected_improvement_at(mean: f64, sigma: f64, best: f64) -> f64 {
    let gap = best - mean;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let n = std_normal();
    (gap * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

pub fn expected_improvement(s: &Surrogate, x: &[f64], best: f64) -> f64 {
    let (m, v) = s.predict(x);
    expected_improvement_at(m, v.sqrt(), best)
}

/// Feasibility model for one constraint: a GP regressed on ±1 labels, read
/// as `P(f > 0)`, or certainty when every observation satisfied it.
#[derive(Debug, Clone)]
pub enum Feasibility {
    AlwaysMet,
    Classifier(Surrogate),
}

impl Feasibility {
    pub fn probability(&self, x: &[f64]) -> f64 {
        let Feasibility::Classifier(s) = self else {
            return 1.0;
        };
        let (m, v) = s.predict(x);
        if v <= 0.0 {
            return match m.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => 0.0,
                _ => 0.5,
            };
        }
        std_normal().cdf(m / v.sqrt())
    }
}

/// Objective surrogate plus one feasibility model per constraint.
#[derive(Debug, Clone)]
pub struct ConstrainedModel {
    pub objective: Surrogate,
    pub constraints: Vec<Feasibility>,
    /// Best feasible objective so far, if any point is feasible.
    pub best_feasible: Option<f64>,
    /// Unit-cube location the local candidate cloud is centered on.
    pub anchor: Option<Vec<f64>>,
}

impl ConstrainedModel {
    pub fn probability_feasible(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.probability(x)).product()
    }

    /// EI times the feasibility probability; pure feasibility search before
    /// the first feasible point.
    pub fn acquisition(&self, objective: &Surrogate, x: &[f64]) -> f64 {
        let pof = self.probability_feasible(x);
        match self.best_feasible {
            Some(best) => expected_improvement(objective, x, best) * pof,
            None => pof,
        }
    }
}

/// Over-exploitation check. When the posterior standard deviation at the
/// proposal falls below `sigma_tol` times the signal std, returns a copy of
/// the surrogate whose signal variance is inflated by powers of ten until the
/// proposal clears the threshold (or the inflation cap is reached).
pub fn ei_plus_adjust(s: &Surrogate, x_proposed: &[f64], sigma_tol: f64) -> Result<Option<Surrogate>> {
    let threshold = sigma_tol * s.signal_std();
    if s.predict(x_proposed).1.sqrt() >= threshold {
        return Ok(None);
    }
    let mut factor = 1.0;
    let mut inflated = s.clone();
    while factor < 1e6 {
        factor *= 10.0;
        inflated = s.with_inflated_signal(factor)?;
        if inflated.predict(x_proposed).1.sqrt() >= threshold {
            break;
        }
    }
    Ok(Some(inflated))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Candidate pool: `active_set` scrambled Sobol points over the box plus the
/// same number of Gaussian perturbations around the model's anchor, all
/// snapped to the step grid (unit-cube coordinates).
pub fn candidate_pool<R: Rng>(case: &CaseSpec, anchor: Option<&[f64]>, rng: &mut R) -> Vec<Vec<f64>> {
    let d = case.dim();
    let scramble: u32 = rng.random();
    let mut pool: Vec<Vec<f64>> = (0..case.active_set as u32)
        .map(|i| {
            let u: Vec<f64> = (0..d as u32).map(|k| sobol_burley::sample(i, k, scramble) as f64).collect();
            case.snap_unit(&u)
        })
        .collect();
    if let Some(a) = anchor {
        for scale in [0.1, 0.03, 0.01].iter().cycle().take(case.active_set) {
            let g = Gauss::new(0.0, *scale).expect("positive scale");
            let u: Vec<f64> = a.iter().map(|c| (c + g.sample(rng)).clamp(0.0, 1.0)).collect();
            pool.push(case.snap_unit(&u));
        }
    }
    pool
}

/// Compass search on the grid starting from `start`, accepting strict gains.
fn refine(case: &CaseSpec, model: &ConstrainedModel, objective: &Surrogate, start: Vec<f64>) -> Vec<f64> {
    let mut x = start;
    let mut fx = model.acquisition(objective, &x);
    let mut budget = 200;
    for step in [0.05, 0.02, 0.005, 0.001] {
        let mut improved = true;
        while improved && budget > 0 {
            improved = false;
            for k in 0..case.dim() {
                for sign in [-1.0, 1.0] {
                    let mut y = x.clone();
                    y[k] = (y[k] + sign * step).clamp(0.0, 1.0);
                    let y = case.snap_unit(&y);
                    if y == x {
                        continue;
                    }
                    budget -= 1;
                    let fy = model.acquisition(objective, &y);
                    if fy > fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
        }
    }
    x
}

/// Next point to evaluate, in unit-cube coordinates on the step grid.
/// Points already in the objective's training set are skipped when any
/// alternative exists, since the episode runner is deterministic.
pub fn propose_next<R: Rng>(model: &ConstrainedModel, case: &CaseSpec, rng: &mut R) -> Result<Vec<f64>> {
    let pool = candidate_pool(case, model.anchor.as_deref(), rng);
    let seen = |u: &Vec<f64>| model.objective.inputs().iter().any(|p| p == u);
    let pick = |objective: &Surrogate| {
        let acq: Vec<f64> = pool
            .iter()
            .map(|u| if seen(u) { -1.0 } else { model.acquisition(objective, u) })
            .collect();
        let start = pool[argmax(&acq)].clone();
        let x = refine(case, model, objective, start.clone());
        if seen(&x) {
            start
        } else {
            x
        }
    };
    let x = pick(&model.objective);
    if model.best_feasible.is_none() {
        return Ok(x);
    }
    match ei_plus_adjust(&model.objective, &x, case.sigma_tol)? {
        None => Ok(x),
        Some(inflated) => Ok(pick(&inflated)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes_opt::gp::Hyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_values() {
        assert_eq!(expected_improvement_at(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement_at(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement_at(0.5, 0.0, 1.0), 0.5);
        assert!((expected_improvement_at(3.0, 1.0, 3.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (mu, sigma, best) in [(0.3_f64, 0.7_f64, 0.5_f64), (1.0, 0.5, 0.8), (-1.0, 0.1, -0.9)] {
            let g = Gauss::new(mu, sigma).unwrap();
            let n = 1_000_000;
            let mc = (0..n).map(|_| (best - g.sample(&mut rng)).max(0.0_f64)).sum::<f64>() / n as f64;
            let ei = expected_improvement_at(mu, sigma, best);
            assert!((mc - ei).abs() < 1e-3, "{mc} vs {ei}");
        }
    }

    #[test]
    fn inflation_leaves_training_data_alone() {
        let h = Hyper {
            signal_var: 1.0,
            length_scales: vec![0.3],
            noise_var: 1e-6,
        };
        let s = Surrogate::condition(vec![vec![0.1], vec![0.5], vec![0.9]], vec![1.0, 0.0, 2.0], h).unwrap();
        assert!(ei_plus_adjust(&s, &[0.3], 1e-3).unwrap().is_none());
        let inflated = ei_plus_adjust(&s, &[0.5], 0.05).unwrap().expect("needs inflation");
        assert_eq!(inflated.inputs(), s.inputs());
        assert_eq!(inflated.targets(), s.targets());
        assert!(inflated.hyper().signal_var > s.hyper().signal_var);
        assert_eq!(s.hyper().signal_var, 1.0);
    }
}
