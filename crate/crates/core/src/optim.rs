//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Search directions come from the standard two-loop recursion over the last
//! `history` curvature pairs, with the initial Hessian scaled by
//! `s'y / y'y`. The line search brackets a step and zooms with safeguarded
//! cubic interpolation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    /// Number of stored curvature pairs `m`.
    pub history: usize,
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm is at or below this value.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { history: 10, max_iter: 500, grad_tol: 1e-8, c1: 1e-4, c2: 0.9, max_line_search: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub iterations: usize,
    pub final_value: f64,
    pub final_gradient_norm: f64,
    pub converged: bool,
    pub history_size: usize,
    pub line_search_evals: usize,
    pub function_evals: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Error)]
pub enum OptimError {
    #[error("objective or gradient is not finite at iteration {iteration}")]
    NonFinite { iteration: usize, last_x: Vec<f64>, report: OptimizerReport },

    #[error("line search failed twice in a row at iteration {iteration} (f = {value:e})")]
    LineSearch { iteration: usize, value: f64, last_x: Vec<f64>, report: OptimizerReport },
}

impl OptimError {
    /// Last iterate with a finite objective.
    pub fn last_x(&self) -> &[f64] {
        match self {
            OptimError::NonFinite { last_x, .. } | OptimError::LineSearch { last_x, .. } => last_x,
        }
    }

    pub fn report(&self) -> &OptimizerReport {
        match self {
            OptimError::NonFinite { report, .. } | OptimError::LineSearch { report, .. } => report,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Computes `-H g` by the two-loop recursion.
fn two_loop(pairs: &VecDeque<Pair>, g: &[f64], dir: &mut [f64]) {
    dir.iter_mut().zip(g).for_each(|(d, gi)| *d = -gi);
    let mut alpha = vec![0.0; pairs.len()];
    for (k, p) in pairs.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, dir);
        alpha[k] = a;
        dir.iter_mut().zip(&p.y).for_each(|(d, y)| *d -= a * y);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        dir.iter_mut().for_each(|d| *d *= gamma);
    }
    for (k, p) in pairs.iter().enumerate() {
        let b = p.rho * dot(&p.y, dir);
        dir.iter_mut().zip(&p.s).for_each(|(d, s)| *d += (alpha[k] - b) * s);
    }
}

/// Evaluation state shared by the line search.
struct Probe<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    trial: Vec<f64>,
    grad: Vec<f64>,
    evals: usize,
}

#[derive(Clone, Copy)]
struct Sample {
    step: f64,
    value: f64,
    slope: f64,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Probe<'_, F> {
    fn eval(&mut self, step: f64) -> Sample {
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.dir) {
            *t = x + step * d;
        }
        let value = (self.f)(&self.trial, &mut self.grad);
        self.evals += 1;
        if value.is_finite() && all_finite(&self.grad) {
            Sample { step, value, slope: dot(&self.grad, self.dir) }
        } else {
            Sample { step, value: f64::INFINITY, slope: f64::NAN }
        }
    }
}

/// Minimizer of the cubic through two samples, or `None` if it does not exist.
fn cubic_min(a: Sample, b: Sample) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.step - a.step).signum() * disc.sqrt();
    let t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Strong-Wolfe line search. On success the probe's `trial`/`grad` hold the accepted point.
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    probe: &mut Probe<'_, F>,
    f0: f64,
    slope0: f64,
    initial_step: f64,
    opts: &LbfgsOptions,
) -> Option<Sample> {
    let origin = Sample { step: 0.0, value: f0, slope: slope0 };
    let armijo = |s: &Sample| s.value <= f0 + opts.c1 * s.step * slope0;
    let curvature = |s: &Sample| s.slope.abs() <= -opts.c2 * slope0;

    let mut prev = origin;
    let mut step = initial_step;
    let mut first = true;
    let (mut lo, mut hi);
    loop {
        if probe.evals >= opts.max_line_search {
            return None;
        }
        let cur = probe.eval(step);
        if !armijo(&cur) || (!first && cur.value >= prev.value) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        prev = cur;
        step *= 2.0;
        first = false;
    }

    loop {
        if probe.evals >= opts.max_line_search {
            return None;
        }
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1.0) {
            return None;
        }
        let guess = if hi.value.is_finite() { cubic_min(lo, hi) } else { None };
        let margin = 0.1 * width;
        let step = match guess {
            Some(t) if t > a + margin && t < b - margin => t,
            _ => 0.5 * (lo.step + hi.step),
        };
        let cur = probe.eval(step);
        if !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Some(cur);
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

/// Minimizes `f` from `x0`. The objective writes its gradient into the second
/// argument and returns the function value.
///
/// A failed line search drops the curvature history and retries along the
/// steepest-descent direction; a second consecutive failure is an error
/// carrying the last accepted iterate.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<(Vec<f64>, OptimizerReport), OptimError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut report = OptimizerReport {
        iterations: 0,
        final_value: fx,
        final_gradient_norm: norm(&g),
        converged: false,
        history_size: opts.history,
        line_search_evals: 0,
        function_evals: 1,
        termination: Termination::MaxIterations,
    };
    if !fx.is_finite() || !all_finite(&g) {
        return Err(OptimError::NonFinite { iteration: 0, last_x: x, report });
    }

    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(opts.history);
    let mut dir = vec![0.0; n];
    let mut steepest = false;

    loop {
        let gnorm = norm(&g);
        report.final_value = fx;
        report.final_gradient_norm = gnorm;
        if gnorm <= opts.grad_tol {
            report.converged = true;
            report.termination = Termination::GradientTolerance;
            return Ok((x, report));
        }
        if report.iterations >= opts.max_iter {
            report.termination = Termination::MaxIterations;
            return Ok((x, report));
        }

        if steepest || pairs.is_empty() {
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        } else {
            two_loop(&pairs, &g, &mut dir);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -gnorm * gnorm;
        }
        let initial_step = if pairs.is_empty() { (1.0 / norm(&dir)).min(1.0) } else { 1.0 };

        let mut probe = Probe { f: &mut f, x: &x, dir: &dir, trial: vec![0.0; n], grad: vec![0.0; n], evals: 0 };
        let accepted = line_search(&mut probe, fx, slope, initial_step, opts);
        let Probe { trial, grad, evals, .. } = probe;
        report.line_search_evals += evals;
        report.function_evals += evals;

        let Some(sample) = accepted else {
            if steepest || pairs.is_empty() {
                return Err(OptimError::LineSearch { iteration: report.iterations, value: fx, last_x: x, report });
            }
            pairs.clear();
            steepest = true;
            continue;
        };
        steepest = false;

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == opts.history {
                pairs.pop_front();
            }
            pairs.push_back(Pair { rho: 1.0 / sy, s, y });
        }
        x = trial;
        g = grad;
        fx = sample.value;
        report.iterations += 1;
    }
}
