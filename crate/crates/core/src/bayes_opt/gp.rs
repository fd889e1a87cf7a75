//! Gaussian-process regression with an anisotropic squared-exponential kernel.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_JITTER: f64 = 1e-4;

/// Kernel hyperparameters, in standardized target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl Hyper {
    pub fn isotropic(dim: usize, length: f64) -> Self {
        Self {
            signal_var: 1.0,
            length_scales: vec![length; dim],
            noise_var: 1e-6,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.signal_var.ln()];
        v.extend(self.length_scales.iter().map(|l| l.ln()));
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            signal_var: v[0].exp(),
            length_scales: v[1..=d].iter().map(|x| x.exp()).collect(),
            noise_var: v[d + 1].exp(),
        }
    }
}

/// Box bounds on the hyperparameters and the local-search budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpOptions {
    pub signal_var: (f64, f64),
    pub length_scale: (f64, f64),
    pub noise_var: (f64, f64),
    /// Random restarts added to the default start when there is no warm start.
    pub restarts: usize,
    pub max_iters: u64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            signal_var: (1e-2, 1e2),
            length_scale: (1e-2, 1e1),
            noise_var: (1e-8, 1.0),
            restarts: 1,
            max_iters: 40,
        }
    }
}

impl GpOptions {
    /// Bounds for regression on ±1 feasibility labels: labels are a step
    /// function, so length scales are kept above a tenth of the box and a
    /// noise floor absorbs the discontinuity.
    pub fn classifier() -> Self {
        Self {
            length_scale: (0.1, 10.0),
            noise_var: (1e-3, 1.0),
            ..Self::default()
        }
    }

    fn log_bounds(&self, dim: usize) -> Vec<(f64, f64)> {
        let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
        let mut b = vec![ln(self.signal_var)];
        b.extend(std::iter::repeat_n(ln(self.length_scale), dim));
        b.push(ln(self.noise_var));
        b
    }
}

/// Fitted GP posterior over inputs in the unit cube.
#[derive(Debug, Clone)]
pub struct Surrogate {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: Hyper,
    /// Lower Cholesky factor of the standardized kernel matrix.
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn se(a: &[f64], b: &[f64], h: &Hyper) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.length_scales)
        .map(|((p, q), l)| ((p - q) / l).powi(2))
        .sum();
    h.signal_var * (-0.5 * r2).exp()
}

fn kernel_matrix(x: &[Vec<f64>], h: &Hyper) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = se(&x[i], &x[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `k + noise·I`, adding jitter up to `MAX_JITTER` if needed.
fn factor(mut k: DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-12) {
            return Err(Error::Numerical("kernel matrix is not positive definite".into()));
        }
    }
}

fn standardize(y: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 1e-300 { var.sqrt() } else { 1.0 };
    (mean, scale, DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale)))
}

/// Negative log marginal likelihood and its gradient in bounded coordinates.
/// The raw parameter `u` maps to log-hyperparameters through a scaled sigmoid.
struct Evidence<'a> {
    /// Squared coordinate differences, one `n × n` matrix per dimension.
    sq: Vec<DMatrix<f64>>,
    y: &'a DVector<f64>,
    bounds: Vec<(f64, f64)>,
    cache: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl<'a> Evidence<'a> {
    fn to_log(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(u, (a, b))| a + (b - a) * sigmoid(*u)).collect()
    }

    fn from_log(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.bounds)
            .map(|(v, (a, b))| {
                let p = ((v - a) / (b - a)).clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            })
            .collect()
    }

    fn evaluate(&self, u: &[f64]) -> (f64, Vec<f64>) {
        if let Some((cu, c, g)) = self.cache.borrow().as_ref() {
            if cu.as_slice() == u {
                return (*c, g.clone());
            }
        }
        let out = self.compute(u);
        *self.cache.borrow_mut() = Some((u.to_vec(), out.0, out.1.clone()));
        out
    }

    fn new(x: &[Vec<f64>], y: &'a DVector<f64>, bounds: Vec<(f64, f64)>) -> Self {
        let n = x.len();
        let d = x[0].len();
        let sq = (0..d)
            .map(|k| DMatrix::from_fn(n, n, |i, j| (x[i][k] - x[j][k]).powi(2)))
            .collect();
        Self {
            sq,
            y,
            bounds,
            cache: RefCell::new(None),
        }
    }

    fn compute(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let logp = self.to_log(u);
        let h = Hyper::from_log(&logp);
        let n = self.y.len();
        let d = h.length_scales.len();
        let mut r2: DMatrix<f64> = DMatrix::zeros(n, n);
        for (sq, l) in self.sq.iter().zip(&h.length_scales) {
            r2 += sq / (l * l);
        }
        let kse = r2.map(|v| h.signal_var * (-0.5 * v).exp());
        let Ok((chol, _)) = factor(kse.clone(), h.noise_var) else {
            return (1e10, vec![0.0; u.len()]);
        };
        let alpha = chol.solve(self.y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum::<f64>() * 2.0;
        let nll = 0.5 * self.y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let w = &alpha * alpha.transpose() - chol.inverse();

        // d(-LML)/d(log θ_j) = -½ tr(W ∂K/∂log θ_j)
        let wk = w.component_mul(&kse);
        let mut g_log = vec![0.0; d + 2];
        g_log[0] = wk.sum();
        for (k, l) in h.length_scales.iter().enumerate() {
            g_log[1 + k] = wk.dot(&self.sq[k]) / (l * l);
        }
        g_log[d + 1] = w.trace() * h.noise_var;
        let grad = g_log
            .iter()
            .zip(u)
            .zip(&self.bounds)
            .map(|((g, u), (a, b))| {
                let s = sigmoid(*u);
                -0.5 * g * (b - a) * s * (1.0 - s)
            })
            .collect();
        (nll, grad)
    }
}

impl CostFunction for &Evidence<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.evaluate(u).0)
    }
}

impl Gradient for &Evidence<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.evaluate(u).1)
    }
}

impl Surrogate {
    /// Condition a GP with fixed hyperparameters on `(x, y)`.
    pub fn condition(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: Hyper) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid("surrogate needs matching, non-empty inputs and targets"));
        }
        let dim = x[0].len();
        if x.iter().any(|p| p.len() != dim) || hyper.length_scales.len() != dim {
            return Err(Error::invalid("input dimension mismatch"));
        }
        if !(hyper.signal_var > 0.0 && hyper.noise_var >= 0.0 && hyper.length_scales.iter().all(|l| *l > 0.0)) {
            return Err(Error::invalid("hyperparameters must be positive"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("targets must be finite"));
        }
        let (y_mean, y_scale, ys) = standardize(&y);
        let (chol, jitter) = factor(kernel_matrix(&x, &hyper), hyper.noise_var)?;
        let alpha = chol.solve(&ys);
        Ok(Self {
            x,
            y,
            y_mean,
            y_scale,
            hyper,
            l: chol.unpack(),
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    /// Jitter that had to be added to the kernel diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Prior standard deviation of the latent function in target units.
    pub fn signal_std(&self) -> f64 {
        self.hyper.signal_var.sqrt() * self.y_scale
    }

    /// Posterior mean and latent-function variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|p| se(p, x, &self.hyper)));
        let mean = ks.dot(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(&ks)
            .unwrap_or_else(|| DVector::zeros(ks.len()));
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_scale * mean, var * self.y_scale * self.y_scale)
    }

    /// Copy with the signal variance multiplied by `factor`, refactored.
    pub fn with_inflated_signal(&self, factor: f64) -> Result<Self> {
        let mut h = self.hyper.clone();
        h.signal_var *= factor;
        Surrogate::condition(self.x.clone(), self.y.clone(), h)
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let (_, _, ys) = standardize(&self.y);
        let n = self.y.len() as f64;
        let log_det: f64 = self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        -0.5 * ys.dot(&self.alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Fit hyperparameters by maximizing the log marginal likelihood with
/// L-BFGS from several starts, then condition on the data.
pub fn fit_surrogate<R: Rng>(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    opts: &GpOptions,
    warm: Option<&Hyper>,
    rng: &mut R,
) -> Result<Surrogate> {
    if x.len() < 2 {
        return Err(Error::invalid("fitting a surrogate needs at least two points"));
    }
    let dim = x[0].len();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    let (_, _, ys) = standardize(&y);
    let problem = Evidence::new(&x, &ys, opts.log_bounds(dim));

    let clamp = |h: Hyper| {
        let lb = opts.log_bounds(dim);
        let v: Vec<f64> = h.to_log().iter().zip(&lb).map(|(v, (a, b))| v.clamp(*a, *b)).collect();
        v
    };
    // A warm start replaces the multi-start search.
    let starts: Vec<Vec<f64>> = match warm.filter(|w| w.length_scales.len() == dim) {
        Some(w) => vec![problem.from_log(&clamp(w.clone()))],
        None => std::iter::once(problem.from_log(&clamp(Hyper::isotropic(dim, 0.3))))
            .chain((0..opts.restarts).map(|_| (0..dim + 2).map(|_| rng.random_range(-2.0..2.0)).collect()))
            .collect(),
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for u0 in starts {
        let mut cand = vec![(problem.evaluate(&u0).0, u0.clone())];
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
        let run = Executor::new(&problem, solver)
            .configure(|s| s.param(u0).max_iters(opts.max_iters))
            .run();
        if let Ok(res) = run {
            if let Some(p) = res.state.best_param.clone() {
                cand.push((res.state.best_cost, p));
            }
        }
        for (c, p) in cand {
            if c.is_finite() && best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                best = Some((c, p));
            }
        }
    }
    let (_, u) = best.ok_or_else(|| Error::Numerical("marginal likelihood search failed".into()))?;
    let hyper = Hyper::from_log(&problem.to_log(&u));
    Surrogate::condition(x, y, hyper)
}
