//! Limited-memory BFGS with a strong-Wolfe line search, used to fit all
//! hyperparameters (always in an unconstrained parameterization).

use std::collections::VecDeque;

/// Stopping rules and memory size of the quasi-Newton minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Converged when the gradient infinity-norm drops to this value.
    pub grad_tol: f64,
    /// Converged when the relative objective change drops to this value.
    pub rel_tol: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value at the start point and at every accepted iterate.
    pub trace: Vec<f64>,
}

impl OptimResult {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::RelativeChange
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

/// Evaluate the objective; any failure or non-finite output counts as +inf.
fn eval<F>(f: &mut F, x: &[f64]) -> Option<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (v, g) = f(x)?;
    if v.is_finite() && g.iter().all(|c| c.is_finite()) {
        Some((v, g))
    } else {
        None
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS_EVALS: usize = 40;

/// Minimizer of the cubic interpolating two points with values and slopes,
/// safeguarded into the interior of the bracket.
fn cubic_step(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (a + b);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (min, max) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (max - min);
    if !t.is_finite() || t < min + margin || t > max - margin {
        mid
    } else {
        t
    }
}

fn line_search<F>(
    f: &mut F,
    x: &[f64],
    value: f64,
    grad: &[f64],
    dir: &[f64],
    initial: f64,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let slope0 = dot(grad, dir);
    if slope0 >= 0.0 {
        return None;
    }
    let mut prev = Point {
        alpha: 0.0,
        value,
        slope: slope0,
        grad: grad.to_vec(),
    };
    let mut alpha = initial;
    let mut evals = 0;
    // bracketing phase
    let (mut lo, mut hi) = loop {
        if evals >= MAX_LS_EVALS {
            return None;
        }
        evals += 1;
        let trial = axpy(x, alpha, dir);
        let Some((v, g)) = eval(f, &trial) else {
            // infeasible: shrink towards the last good point
            alpha = prev.alpha + 0.25 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 {
                return None;
            }
            continue;
        };
        let cur = Point {
            alpha,
            value: v,
            slope: dot(&g, dir),
            grad: g,
        };
        if cur.value > value + C1 * alpha * slope0 || (prev.alpha > 0.0 && cur.value >= prev.value)
        {
            break (prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        alpha *= 2.0;
        prev = cur;
    };
    // zoom phase
    while evals < MAX_LS_EVALS {
        evals += 1;
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let alpha = cubic_step(&lo, &hi);
        let trial = axpy(x, alpha, dir);
        let Some((v, g)) = eval(f, &trial) else {
            hi = Point {
                alpha,
                value: f64::INFINITY,
                slope: f64::INFINITY,
                grad: Vec::new(),
            };
            continue;
        };
        let cur = Point {
            alpha,
            value: v,
            slope: dot(&g, dir),
            grad: g,
        };
        if cur.value > value + C1 * alpha * slope0 || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // Fall back to the best sufficient-decrease point found, if any.
    (lo.alpha > 0.0 && lo.value <= value + C1 * lo.alpha * slope0).then_some(lo)
}

/// Two-loop recursion: returns -H g.
fn search_direction(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimize `f` from `x0`. `f` returns the objective and its gradient, or
/// `None` where it cannot be evaluated. Returns `None` if `x0` itself cannot
/// be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &OptimizerConfig) -> Option<OptimResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = eval(&mut f, x0)?;
    let mut x = x0.to_vec();
    let mut trace = vec![value];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let termination = loop {
        if inf_norm(&grad) <= config.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        let mut dir = search_direction(&grad, &history);
        let mut initial = if history.is_empty() {
            (1.0 / inf_norm(&grad)).min(1.0)
        } else {
            1.0
        };
        if dot(&dir, &grad) >= 0.0 {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            initial = (1.0 / inf_norm(&grad)).min(1.0);
        }
        let step = match line_search(&mut f, &x, value, &grad, &dir, initial) {
            Some(p) => p,
            None if !history.is_empty() => {
                // retry once along steepest descent with fresh memory
                history.clear();
                let sd: Vec<f64> = grad.iter().map(|g| -g).collect();
                let init = (1.0 / inf_norm(&grad)).min(1.0);
                match line_search(&mut f, &x, value, &grad, &sd, init) {
                    Some(p) => {
                        dir = sd;
                        p
                    }
                    None => break Termination::LineSearchFailed,
                }
            }
            None => break Termination::LineSearchFailed,
        };
        iterations += 1;
        let x_new = axpy(&x, step.alpha, &dir);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == config.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let change = (value - step.value).abs();
        let scale = value.abs().max(step.value.abs()).max(1.0);
        x = x_new;
        value = step.value;
        grad = step.grad;
        trace.push(value);
        if change <= config.rel_tol * scale {
            break Termination::RelativeChange;
        }
    };
    Some(OptimResult {
        x,
        value,
        gradient: grad,
        iterations,
        termination,
        trace,
    })
}
