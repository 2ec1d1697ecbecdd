//! Quasi-Newton minimization with BFGS inverse-Hessian updates and
//! back-tracking (Armijo) line search.
//!
//! Iterates `w_{k+1} = w_k + delta_k` with `delta_k = -alpha_k S_k g_k`,
//! starting from `S_0 = I`. After each step the direction matrix is updated
//! with the rank-two BFGS inverse formula using `gamma_k = g_{k+1} - g_k`.
//! The loop stops once `|delta_k| < epsilon` or `max_iters` is reached.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable function of a flat weight vector.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns the value at `w` and writes the gradient into `grad`.
    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, w: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.eval(w, &mut g)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        (**self).eval(w, grad)
    }
}

/// Adapts a closure `|w, grad| -> value` into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(w, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QnConfig {
    /// Convergence tolerance on the step norm.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Step shrink factor between line-search trials, in (0, 1).
    pub ls_shrink: f64,
    /// Armijo sufficient-decrease constant, in (0, 1).
    pub ls_c: f64,
    pub ls_max_steps: usize,
    /// Relative curvature floor: the update is skipped (S reset to I) unless
    /// `gamma'delta > curvature_floor * |delta| * |gamma|`.
    pub curvature_floor: f64,
}

impl Default for QnConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_iters: 500,
            ls_shrink: 0.5,
            ls_c: 1e-4,
            ls_max_steps: 50,
            curvature_floor: 1e-12,
        }
    }
}

impl QnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        if self.max_iters == 0 || self.ls_max_steps == 0 {
            return bad("max_iters and ls_max_steps must be positive");
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return bad("ls_shrink must lie in (0, 1)");
        }
        if !(self.ls_c > 0.0 && self.ls_c < 1.0) {
            return bad("ls_c must lie in (0, 1)");
        }
        if self.curvature_floor.is_nan() || self.curvature_floor < 0.0 {
            return bad("curvature_floor must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QnTrace {
    pub iterations: usize,
    /// Objective value at w_0 followed by the value after every iteration.
    pub values: Vec<f64>,
    /// Step norm of every iteration.
    pub step_norms: Vec<f64>,
    pub converged: bool,
    pub final_step_norm: f64,
    /// Number of times the direction matrix was reset to the identity.
    pub resets: usize,
    /// Why the run stopped without converging, if it did.
    pub diagnostic: Option<String>,
}

impl QnTrace {
    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// CSV with columns `iteration,objective,step_norm`; row 0 is the start point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,objective,step_norm")?;
        for (i, v) in self.values.iter().enumerate() {
            let step = if i == 0 { 0.0 } else { self.step_norms[i - 1] };
            writeln!(out, "{i},{v:.17e},{step:.17e}")?;
        }
        Ok(())
    }
}

/// Accepted line-search step.
#[derive(Debug, Clone, PartialEq)]
pub struct LineStep {
    pub alpha: f64,
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Back-tracking line search along `direction` from `w`.
///
/// Tries `alpha = 1, shrink, shrink^2, ...` and accepts the first step with
/// `F(w + alpha d) <= F(w) + c alpha g'd`. `value` is `F(w)`.
pub fn backtrack(
    obj: &dyn Objective,
    w: &[f64],
    value: f64,
    gradient: &[f64],
    direction: &[f64],
    cfg: &QnConfig,
) -> Result<LineStep> {
    let slope = dot(gradient, direction);
    if slope.is_nan() || slope >= 0.0 {
        return Err(Error::Optimizer(format!(
            "line search needs a descent direction (g'd = {slope:e})"
        )));
    }
    let mut trial = vec![0.0; w.len()];
    let mut grad = vec![0.0; w.len()];
    let mut alpha = 1.0;
    for _ in 0..cfg.ls_max_steps {
        for ((t, &wi), &di) in trial.iter_mut().zip(w).zip(direction) {
            *t = wi + alpha * di;
        }
        let f = obj.eval(&trial, &mut grad);
        if f.is_finite() && f <= value + cfg.ls_c * alpha * slope {
            return Ok(LineStep {
                alpha,
                value: f,
                gradient: grad,
            });
        }
        alpha *= cfg.ls_shrink;
    }
    Err(Error::Optimizer(format!(
        "no sufficient decrease within {} line-search steps",
        cfg.ls_max_steps
    )))
}

/// Rank-two BFGS update of the inverse-Hessian approximation.
///
/// Returns `None` when the curvature `gamma'delta` is at or below the floor;
/// the caller then restarts from the identity.
pub fn bfgs_update(
    s: &DMatrix<f64>,
    delta: &[f64],
    gamma: &[f64],
    curvature_floor: f64,
) -> Option<DMatrix<f64>> {
    let n = delta.len();
    let curvature = dot(gamma, delta);
    let floor = curvature_floor * norm(delta) * norm(gamma);
    if !curvature.is_finite() || floor.is_nan() || curvature <= floor {
        return None;
    }
    let g = DVector::from_column_slice(gamma);
    let sg = s * &g;
    let gsg = g.dot(&sg);
    let a = (1.0 + gsg / curvature) / curvature;
    let mut next = s.clone();
    for j in 0..n {
        for i in 0..n {
            next[(i, j)] += a * delta[i] * delta[j] - (delta[i] * sg[j] + sg[i] * delta[j]) / curvature;
        }
    }
    Some(next)
}

/// Minimizes `obj` from `w0`.
///
/// A failed line search is not an error: the best point so far is returned
/// with `converged = false` and a diagnostic in the trace.
pub fn minimize(obj: &dyn Objective, w0: &[f64], cfg: &QnConfig) -> Result<(Vec<f64>, QnTrace)> {
    cfg.validate()?;
    let n = obj.dim();
    if w0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: w0.len(),
        });
    }
    let mut w = w0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&w, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer("objective or gradient not finite at the start point".into()));
    }

    let mut trace = QnTrace {
        values: vec![f],
        ..QnTrace::default()
    };
    let mut s = DMatrix::<f64>::identity(n, n);
    let mut s_is_identity = true;

    while trace.iterations < cfg.max_iters {
        if g.iter().all(|&v| v == 0.0) {
            trace.converged = true;
            break;
        }
        let mut direction = neg_mat_vec(&s, &g);
        let slope = dot(&g, &direction);
        if slope.is_nan() || slope >= 0.0 {
            s = DMatrix::identity(n, n);
            s_is_identity = true;
            trace.resets += 1;
            direction = g.iter().map(|v| -v).collect();
        }
        let step = match backtrack(obj, &w, f, &g, &direction, cfg) {
            Ok(step) => step,
            Err(first) if !s_is_identity => {
                s = DMatrix::identity(n, n);
                trace.resets += 1;
                direction = g.iter().map(|v| -v).collect();
                match backtrack(obj, &w, f, &g, &direction, cfg) {
                    Ok(step) => step,
                    Err(_) => {
                        trace.diagnostic = Some(first.to_string());
                        break;
                    }
                }
            }
            Err(e) => {
                trace.diagnostic = Some(e.to_string());
                break;
            }
        };

        let delta: Vec<f64> = direction.iter().map(|d| step.alpha * d).collect();
        let gamma: Vec<f64> = step.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (wi, di) in w.iter_mut().zip(&delta) {
            *wi += di;
        }
        f = step.value;
        g = step.gradient;
        let step_norm = norm(&delta);

        match bfgs_update(&s, &delta, &gamma, cfg.curvature_floor) {
            Some(next) => {
                s = next;
                s_is_identity = false;
            }
            None => {
                s = DMatrix::identity(n, n);
                s_is_identity = true;
                trace.resets += 1;
            }
        }

        trace.iterations += 1;
        trace.values.push(f);
        trace.step_norms.push(step_norm);
        trace.final_step_norm = step_norm;
        if step_norm < cfg.epsilon {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged && trace.diagnostic.is_none() {
        trace.diagnostic = Some(format!("iteration limit {} reached", cfg.max_iters));
    }
    Ok((w, trace))
}

/// Largest relative error between the analytic gradient and central finite
/// differences with step `h`, measured as `|g - g_fd| / max(|g|, |g_fd|, 1e-12)`.
pub fn gradient_check(obj: &dyn Objective, w: &[f64], h: f64) -> f64 {
    let n = obj.dim();
    let mut g = vec![0.0; n];
    obj.eval(w, &mut g);
    let mut fd = vec![0.0; n];
    let mut x = w.to_vec();
    for i in 0..n {
        x[i] = w[i] + h;
        let up = obj.value(&x);
        x[i] = w[i] - h;
        let down = obj.value(&x);
        x[i] = w[i];
        fd[i] = (up - down) / (2.0 * h);
    }
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&g).max(norm(&fd)).max(1e-12)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn neg_mat_vec(s: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let v = s * DVector::from_column_slice(g);
    v.iter().map(|x| -x).collect()
}
