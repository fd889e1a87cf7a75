//! Constrained Bayesian optimization of the thrust actions: minimize the
//! propellant burned per MU subject to capture-quality, lock-count and
//! final-mass constraints.

mod acquisition;
mod gp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use acquisition::{
    candidate_pool, ei_plus_adjust, expected_improvement, expected_improvement_at, propose_next, ConstrainedModel,
    Feasibility,
};
pub use gp::{fit_surrogate, GpOptions, Hyper, Surrogate};

use crate::capture_metrics::SuccessThresholds;
use crate::error::{Error, Result};
use crate::simulator::{run_episode, EpisodeResult, Scenario, ThrustActions};

/// Objective value assigned to diverged evaluations.
pub const DIVERGED_PENALTY: f64 = 1e3;
/// Penalty per unit of normalized constraint violation (kg).
pub const VIOLATION_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Psi1,
    Psi2,
    Psi3,
    Psi4,
    Theta,
    InitialMass,
    Thrust,
}

impl Variable {
    pub fn name(self) -> &'static str {
        match self {
            Variable::Psi1 => "psi1",
            Variable::Psi2 => "psi2",
            Variable::Psi3 => "psi3",
            Variable::Psi4 => "psi4",
            Variable::Theta => "theta",
            Variable::InitialMass => "m0",
            Variable::Thrust => "thrust",
        }
    }

    pub fn get(self, a: &ThrustActions) -> f64 {
        match self {
            Variable::Psi1 => a.psi_deg[0],
            Variable::Psi2 => a.psi_deg[1],
            Variable::Psi3 => a.psi_deg[2],
            Variable::Psi4 => a.psi_deg[3],
            Variable::Theta => a.theta_deg,
            Variable::InitialMass => a.initial_mass,
            Variable::Thrust => a.thrust,
        }
    }

    pub fn set(self, a: &mut ThrustActions, v: f64) {
        match self {
            Variable::Psi1 => a.psi_deg[0] = v,
            Variable::Psi2 => a.psi_deg[1] = v,
            Variable::Psi3 => a.psi_deg[2] = v,
            Variable::Psi4 => a.psi_deg[3] = v,
            Variable::Theta => a.theta_deg = v,
            Variable::InitialMass => a.initial_mass = v,
            Variable::Thrust => a.thrust = v,
        }
    }
}

/// Bounds and grid step of one action variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub variable: Variable,
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl Bound {
    pub fn new(variable: Variable, lower: f64, upper: f64, step: f64) -> Self {
        Self {
            variable,
            lower,
            upper,
            step,
        }
    }

    fn intervals(&self) -> f64 {
        ((self.upper - self.lower) / self.step).round()
    }

    /// Nearest grid value inside the bounds. Decimal steps are reproduced
    /// exactly (`85.3`, not `85.30000000000001`).
    pub fn snap(&self, v: f64) -> f64 {
        let k = ((v - self.lower) / self.step).round().clamp(0.0, self.intervals());
        let inv = 1.0 / self.step;
        if (inv - inv.round()).abs() < 1e-9 && inv >= 1.0 {
            let inv = inv.round();
            ((self.lower * inv).round() + k) / inv
        } else {
            self.lower + k * self.step
        }
    }

    /// Whether `v` lies on the grid and inside the bounds.
    pub fn on_grid(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper && (self.snap(v) - v).abs() <= 1e-9 * self.step.max(v.abs())
    }

    fn to_unit(&self, v: f64) -> f64 {
        if self.upper > self.lower {
            (v - self.lower) / (self.upper - self.lower)
        } else {
            0.0
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        self.snap(self.lower + u * (self.upper - self.lower))
    }
}

/// One optimization case: active variables, fixed values for the rest, and
/// search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case: u8,
    pub bounds: Vec<Bound>,
    /// Values of the inactive variables.
    pub base: ThrustActions,
    pub budget: usize,
    pub initial_samples: usize,
    /// Quasi-random candidates drawn per proposal.
    pub active_set: usize,
    pub thresholds: SuccessThresholds,
    /// Over-exploitation threshold relative to the signal standard deviation.
    pub sigma_tol: f64,
    /// Hyperparameters are re-fitted every this many iterations.
    pub refit_every: usize,
    /// Hyperparameter bounds for the objective surrogate.
    pub gp: GpOptions,
    /// Hyperparameter bounds for the feasibility classifiers.
    pub classifier: GpOptions,
}

impl CaseSpec {
    /// Case 1 optimizes the four azimuths and the polar angle; case 2 adds
    /// the initial MU mass; case 3 adds the thrust magnitude.
    pub fn new(case: u8) -> Result<Self> {
        use Variable::*;
        let mut bounds = vec![
            Bound::new(Psi1, 70.0, 90.0, 0.1),
            Bound::new(Psi2, 35.0, 55.0, 0.1),
            Bound::new(Psi3, 70.0, 90.0, 0.1),
            Bound::new(Psi4, 35.0, 55.0, 0.1),
            Bound::new(Theta, 35.0, 55.0, 0.1),
        ];
        match case {
            1 => {}
            2 => bounds.push(Bound::new(InitialMass, 2.0, 2.5, 0.001)),
            3 => {
                bounds.push(Bound::new(InitialMass, 2.0, 2.5, 0.001));
                bounds.push(Bound::new(Thrust, 5.0, 12.0, 0.0001));
            }
            _ => return Err(Error::invalid(format!("unknown optimization case {case}"))),
        }
        Ok(Self {
            case,
            bounds,
            base: ThrustActions {
                initial_mass: 2.5,
                thrust: 8.9,
                ..ThrustActions::default()
            },
            budget: 500,
            initial_samples: 80,
            active_set: 200,
            thresholds: SuccessThresholds::default(),
            sigma_tol: 1e-3,
            refit_every: 5,
            gp: GpOptions::default(),
            classifier: GpOptions::classifier(),
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn variables(&self) -> Vec<Variable> {
        self.bounds.iter().map(|b| b.variable).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::invalid("no active variables"));
        }
        for b in &self.bounds {
            if !(b.step > 0.0 && b.lower <= b.upper && b.lower.is_finite() && b.upper.is_finite()) {
                return Err(Error::invalid(format!("bad bounds for {}", b.variable.name())));
            }
            let n = (b.upper - b.lower) / b.step;
            if (n - n.round()).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "range of {} is not a whole number of steps",
                    b.variable.name()
                )));
            }
        }
        if self.initial_samples < 2 || self.active_set == 0 || self.refit_every == 0 {
            return Err(Error::invalid(
                "need at least 2 initial samples, a non-empty active set and refit_every > 0",
            ));
        }
        if !(self.sigma_tol > 0.0) {
            return Err(Error::invalid("sigma_tol must be positive"));
        }
        Ok(())
    }

    pub fn snap(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, b)| b.snap(*v)).collect()
    }

    /// Snap a unit-cube point to the grid, staying in unit coordinates.
    pub fn snap_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(u, b)| b.to_unit(b.from_unit(*u))).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, b)| b.to_unit(*v)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(u, b)| b.from_unit(*u)).collect()
    }

    pub fn on_grid(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, b)| b.on_grid(*v))
    }

    /// Full action set for active-variable values `x`.
    pub fn actions(&self, x: &[f64]) -> ThrustActions {
        let mut a = self.base.clone();
        for (v, b) in x.iter().zip(&self.bounds) {
            b.variable.set(&mut a, *v);
        }
        a
    }
}

/// Quantities the optimizer needs from one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Propellant burned per MU (kg).
    pub fuel: f64,
    pub cqi: f64,
    pub locked_pairs: u32,
    pub final_mass: f64,
    pub diverged: bool,
}

impl From<&EpisodeResult> for Outcome {
    fn from(r: &EpisodeResult) -> Self {
        Self {
            fuel: r.fuel_consumed,
            cqi: r.settled_cqi,
            locked_pairs: r.locked_pairs,
            final_mass: r.final_mu_mass,
            diverged: r.diverged,
        }
    }
}

impl Outcome {
    pub fn diverged() -> Self {
        Self {
            fuel: f64::NAN,
            cqi: f64::INFINITY,
            locked_pairs: 0,
            final_mass: f64::NAN,
            diverged: true,
        }
    }
}

/// Episode runner for `scenario` with the actions replaced per call.
/// Simulation errors count as divergence.
pub fn episode_runner(scenario: &Scenario) -> impl Fn(&ThrustActions) -> Outcome + Sync + '_ {
    move |actions| {
        let mut s = scenario.clone();
        s.actions = actions.clone();
        match run_episode(&s) {
            Ok(r) => Outcome::from(&r),
            Err(_) => Outcome::diverged(),
        }
    }
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Active-variable values.
    pub x: Vec<f64>,
    pub fuel: f64,
    pub cqi: f64,
    pub locked_pairs: u32,
    pub final_mass: f64,
    pub diverged: bool,
    pub feasible: bool,
    pub penalized: f64,
}

impl EvalRecord {
    fn new(iteration: usize, x: Vec<f64>, out: Outcome, th: &SuccessThresholds) -> Self {
        let feasible = !out.diverged && th.cqi_ok(out.cqi) && th.locks_ok(out.locked_pairs) && th.mass_ok(out.final_mass);
        Self {
            iteration,
            x,
            fuel: out.fuel,
            cqi: out.cqi,
            locked_pairs: out.locked_pairs,
            final_mass: out.final_mass,
            diverged: out.diverged,
            feasible,
            penalized: penalized(&out, th),
        }
    }

    fn constraint_flags(&self, th: &SuccessThresholds) -> [bool; 3] {
        if self.diverged {
            return [false; 3];
        }
        [
            th.cqi_ok(self.cqi),
            th.locks_ok(self.locked_pairs),
            th.mass_ok(self.final_mass),
        ]
    }
}

/// Fuel plus a weighted sum of normalized constraint violations.
pub fn penalized(out: &Outcome, th: &SuccessThresholds) -> f64 {
    if out.diverged || !out.fuel.is_finite() {
        return DIVERGED_PENALTY;
    }
    let cqi = ((out.cqi - th.max_cqi) / th.max_cqi).clamp(0.0, 100.0);
    let min_locks = th.min_locked_pairs.max(1) as f64;
    let locks = ((min_locks - out.locked_pairs as f64) / min_locks).max(0.0);
    let mass = ((th.min_final_mass - out.final_mass) / th.min_final_mass).max(0.0);
    out.fuel + VIOLATION_WEIGHT * (cqi + locks + mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRun {
    pub best: EvalRecord,
    pub history: Vec<EvalRecord>,
    /// Best feasible fuel after each evaluation (`inf` until one is found).
    pub incumbent: Vec<f64>,
    pub feasible_found: bool,
}

fn best_record(history: &[EvalRecord]) -> EvalRecord {
    let feasible = history
        .iter()
        .filter(|r| r.feasible)
        .min_by(|a, b| a.fuel.total_cmp(&b.fuel).then(a.iteration.cmp(&b.iteration)));
    feasible
        .or_else(|| {
            history
                .iter()
                .min_by(|a, b| a.penalized.total_cmp(&b.penalized).then(a.iteration.cmp(&b.iteration)))
        })
        .expect("history is non-empty")
        .clone()
}

/// Per-model hyperparameters carried between iterations.
struct Models {
    hypers: Vec<Option<Hyper>>,
}

impl Models {
    fn fit(
        &mut self,
        idx: usize,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        refit: bool,
        opts: &GpOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Surrogate> {
        let constant = y.iter().all(|v| *v == y[0]);
        if constant {
            let h = Hyper::isotropic(x[0].len(), 0.3);
            return Surrogate::condition(x, y, h);
        }
        if !refit {
            if let Some(h) = &self.hypers[idx] {
                if let Ok(s) = Surrogate::condition(x.clone(), y.clone(), h.clone()) {
                    return Ok(s);
                }
            }
        }
        let s = fit_surrogate(x, y, opts, self.hypers[idx].as_ref(), rng)?;
        self.hypers[idx] = Some(s.hyper().clone());
        Ok(s)
    }
}

fn build_model(
    case: &CaseSpec,
    history: &[EvalRecord],
    models: &mut Models,
    refit: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ConstrainedModel>> {
    let th = &case.thresholds;
    let valid: Vec<&EvalRecord> = history.iter().filter(|r| !r.diverged && r.fuel.is_finite()).collect();
    if valid.len() < 2 {
        return Ok(None);
    }
    let objective = models.fit(
        0,
        valid.iter().map(|r| case.to_unit(&r.x)).collect(),
        valid.iter().map(|r| r.fuel).collect(),
        refit,
        &case.gp,
        rng,
    )?;
    let xs: Vec<Vec<f64>> = history.iter().map(|r| case.to_unit(&r.x)).collect();
    let mut constraints = Vec::with_capacity(3);
    for k in 0..3 {
        let labels: Vec<f64> = history
            .iter()
            .map(|r| if r.constraint_flags(th)[k] { 1.0 } else { -1.0 })
            .collect();
        constraints.push(if labels.iter().all(|l| *l > 0.0) {
            Feasibility::AlwaysMet
        } else {
            Feasibility::Classifier(models.fit(k + 1, xs.clone(), labels, refit, &case.classifier, rng)?)
        });
    }
    let best = best_record(history);
    Ok(Some(ConstrainedModel {
        objective,
        constraints,
        best_feasible: best.feasible.then_some(best.fuel),
        anchor: Some(case.to_unit(&best.x)),
    }))
}

/// Run the optimization: a quasi-random initial design followed by `budget`
/// sequential fit/propose/evaluate iterations.
pub fn optimize<F>(case: &CaseSpec, runner: F, seed: u64) -> Result<BoRun>
where
    F: Fn(&ThrustActions) -> Outcome + Sync,
{
    case.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = case.thresholds;

    let scramble: u32 = rng.random();
    let design: Vec<Vec<f64>> = (0..case.initial_samples as u32)
        .map(|i| {
            let u: Vec<f64> = (0..case.dim() as u32).map(|k| sobol_burley::sample(i, k, scramble) as f64).collect();
            case.from_unit(&u)
        })
        .collect();
    let outcomes: Vec<Outcome> = design.par_iter().map(|x| runner(&case.actions(x))).collect();
    let mut history: Vec<EvalRecord> = design
        .into_iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (x, out))| EvalRecord::new(i, x, out, &th))
        .collect();

    let mut models = Models {
        hypers: vec![None; 4],
    };
    for it in 0..case.budget {
        let refit = it % case.refit_every == 0;
        let u = match build_model(case, &history, &mut models, refit, &mut rng)? {
            Some(model) => propose_next(&model, case, &mut rng)?,
            None => {
                let u: Vec<f64> = (0..case.dim()).map(|_| rng.random()).collect();
                case.snap_unit(&u)
            }
        };
        let x = case.from_unit(&u);
        let out = runner(&case.actions(&x));
        history.push(EvalRecord::new(history.len(), x, out, &th));
    }

    let mut incumbent = Vec::with_capacity(history.len());
    let mut best = f64::INFINITY;
    for r in &history {
        if r.feasible {
            best = best.min(r.fuel);
        }
        incumbent.push(best);
    }
    Ok(BoRun {
        best: best_record(&history),
        feasible_found: best.is_finite(),
        incumbent,
        history,
    })
}

#[cfg(test)]
mod tests;
