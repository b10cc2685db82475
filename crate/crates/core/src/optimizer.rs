//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! [`minimize`] is generic over a callback returning the objective value and
//! its gradient. Every accepted step satisfies the sufficient-decrease
//! condition, so the sequence of accepted values never increases; the EM
//! inner loop relies on this when it truncates the optimizer after a few
//! steps.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::loglinear::dot;

/// Curvature pairs with `s·y` at or below this are dropped.
const MIN_CURVATURE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Iteration cap for one call.
    pub max_steps: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_backtracks: usize,
    /// Stop once the infinity norm of the gradient falls to this value.
    pub grad_tol: f64,
    /// After an acceptable step, try the secant minimizer along the search
    /// line once and keep it if it is better and still acceptable.
    pub refine_step: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_steps: 100,
            c1: 1e-4,
            c2: 0.9,
            max_backtracks: 50,
            grad_tol: 1e-8,
            refine_step: true,
        }
    }
}

impl OptimizerConfig {
    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return invalid(format!(
                "line search constants must satisfy 0 < c1 < c2 < 1 (c1={}, c2={})",
                self.c1, self.c2
            ));
        }
        if self.memory == 0 {
            return invalid("L-BFGS memory must be at least 1");
        }
        if self.max_backtracks == 0 {
            return invalid("line search needs at least one evaluation");
        }
        if !(self.grad_tol >= 0.0) {
            return invalid("gradient tolerance must be non-negative");
        }
        Ok(())
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub value: f64,
    /// Infinity norm of the gradient at the new iterate.
    pub grad_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient infinity norm reached `grad_tol`.
    Converged,
    /// `max_steps` iterations were taken.
    MaxSteps,
    /// The line search ran out of evaluations; the best point seen is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub trace: Vec<StepRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl Minimum {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

struct Point {
    alpha: f64,
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

struct Evaluator<'a, F> {
    f: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Evaluator<'_, F> {
    fn at(&mut self, x: &[f64], d: &[f64], alpha: f64) -> Point {
        let x: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (value, grad) = (self.f)(&x);
        self.evaluations += 1;
        let slope = dot(&grad, d);
        Point {
            alpha,
            x,
            value,
            grad,
            slope,
        }
    }
}

fn finite_point(p: &Point) -> bool {
    p.value.is_finite() && p.slope.is_finite()
}

/// Minimizer of the cubic interpolating value and slope at both ends,
/// safeguarded to the interior of the bracket; falls back to bisection.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !finite_point(hi) {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        mid
    } else {
        t
    }
}

enum Search {
    Accepted(Point),
    Failed(Option<Point>),
}

fn line_search<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    eval: &mut Evaluator<'_, F>,
    origin: &Point,
    d: &[f64],
    cfg: &OptimizerConfig,
) -> Search {
    let f0 = origin.value;
    let slope0 = origin.slope;
    let armijo = |p: &Point| p.value <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -cfg.c2 * slope0;

    let mut used = 0;
    let mut best: Option<Point> = None;
    let keep_best = |p: &Point, best: &mut Option<Point>| {
        if p.value < f0 && best.as_ref().is_none_or(|b| p.value < b.value) {
            *best = Some(Point {
                alpha: p.alpha,
                x: p.x.clone(),
                value: p.value,
                grad: p.grad.clone(),
                slope: p.slope,
            });
        }
    };

    let mut prev = Point {
        alpha: 0.0,
        x: origin.x.clone(),
        value: f0,
        grad: origin.grad.clone(),
        slope: slope0,
    };
    let mut alpha = 1.0;
    let (mut lo, mut hi);
    loop {
        if used >= cfg.max_backtracks {
            return Search::Failed(best);
        }
        let p = eval.at(&origin.x, d, alpha);
        used += 1;
        if finite_point(&p) {
            keep_best(&p, &mut best);
        }
        if !finite_point(&p) || !armijo(&p) || (used > 1 && p.value >= prev.value) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return Search::Accepted(p);
        }
        if p.slope >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        alpha = 2.0 * p.alpha;
        prev = p;
    }

    loop {
        if used >= cfg.max_backtracks {
            return Search::Failed(best);
        }
        let alpha = interpolate(&lo, &hi);
        if alpha == lo.alpha || alpha == hi.alpha {
            return Search::Failed(best);
        }
        let p = eval.at(&origin.x, d, alpha);
        used += 1;
        if finite_point(&p) {
            keep_best(&p, &mut best);
        }
        if !finite_point(&p) || !armijo(&p) || p.value >= lo.value {
            hi = p;
            continue;
        }
        if curvature(&p) {
            return Search::Accepted(p);
        }
        if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
            hi = lo;
        }
        lo = p;
    }
}

/// Tries the secant step `α·s0/(s0 − sα)` along `d` and keeps it when it
/// lowers the value while still satisfying the strong Wolfe conditions.
fn refine<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    eval: &mut Evaluator<'_, F>,
    origin: &Point,
    d: &[f64],
    accepted: Point,
    cfg: &OptimizerConfig,
) -> Point {
    let denom = origin.slope - accepted.slope;
    if accepted.slope.abs() <= 1e-12 * origin.slope.abs() || denom >= 0.0 {
        return accepted;
    }
    let alpha = accepted.alpha * origin.slope / denom;
    if !alpha.is_finite() || alpha <= 0.0 || (alpha - accepted.alpha).abs() <= 1e-12 * accepted.alpha {
        return accepted;
    }
    let p = eval.at(&origin.x, d, alpha);
    let ok = finite_point(&p)
        && p.value < accepted.value
        && p.value <= origin.value + cfg.c1 * alpha * origin.slope
        && p.slope.abs() <= -cfg.c2 * origin.slope;
    if ok {
        p
    } else {
        accepted
    }
}

/// Two-loop recursion: returns `−H·g` for the implicit inverse Hessian.
fn search_direction(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f` from `x0` with at most `cfg.max_steps` L-BFGS iterations.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &OptimizerConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut eval = Evaluator {
        f: &mut f,
        evaluations: 0,
    };
    let (value, grad) = (eval.f)(x0);
    eval.evaluations += 1;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return invalid("objective or gradient is not finite at the starting point");
    }
    if grad.len() != x0.len() {
        return invalid(format!(
            "gradient has length {} but the point has length {}",
            grad.len(),
            x0.len()
        ));
    }

    let mut current = Point {
        alpha: 0.0,
        x: x0.to_vec(),
        value,
        grad,
        slope: 0.0,
    };
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut trace = Vec::new();
    let mut termination = Termination::MaxSteps;

    if inf_norm(&current.grad) <= cfg.grad_tol {
        termination = Termination::Converged;
    }

    while termination == Termination::MaxSteps && trace.len() < cfg.max_steps {
        let mut d = search_direction(&current.grad, &history);
        let mut slope = dot(&current.grad, &d);
        if !(slope < 0.0) {
            history.clear();
            d = current.grad.iter().map(|g| -g).collect();
            slope = -dot(&current.grad, &current.grad);
        }
        current.slope = slope;

        let next = match line_search(&mut eval, &current, &d, cfg) {
            Search::Accepted(p) if cfg.refine_step => refine(&mut eval, &current, &d, p, cfg),
            Search::Accepted(p) => p,
            Search::Failed(best) => {
                termination = Termination::LineSearchFailed;
                match best {
                    Some(p) => p,
                    None => break,
                }
            }
        };

        let s: Vec<f64> = next.x.iter().zip(&current.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&current.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > MIN_CURVATURE {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let grad_norm = inf_norm(&next.grad);
        trace.push(StepRecord {
            value: next.value,
            grad_norm,
            step_length: next.alpha,
        });
        current = next;
        if termination == Termination::MaxSteps && grad_norm <= cfg.grad_tol {
            termination = Termination::Converged;
        }
    }

    Ok(Minimum {
        x: current.x,
        value: current.value,
        gradient: current.grad,
        trace,
        termination,
        evaluations: eval.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    fn assert_monotone(m: &Minimum, start: f64) {
        let mut last = start;
        for step in &m.trace {
            assert!(step.value <= last, "{} > {}", step.value, last);
            last = step.value;
        }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let f = |x: &[f64]| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]);
        let m = minimize(f, &[0.0], &OptimizerConfig::default()).unwrap();
        assert!((m.x[0] - 3.0).abs() < 1e-6);
        assert!(m.steps() <= 10);
        assert_eq!(m.termination, Termination::Converged);
        assert_monotone(&m, 9.0);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = OptimizerConfig::default().with_max_steps(200);
        let m = minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!(m.steps() <= 200);
        assert_monotone(&m, rosenbrock(&[-1.2, 1.0]).0);
    }

    #[test]
    fn first_direction_is_steepest_descent() {
        let scales = [1.0, 4.0, 0.25];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&scales).map(|(xi, a)| a * xi * xi).sum();
            let g = x.iter().zip(&scales).map(|(xi, a)| 2.0 * a * xi).collect();
            (v, g)
        };
        let x0 = [1.0, -2.0, 3.0];
        let (_, g0) = f(&x0);
        let m = minimize(f, &x0, &OptimizerConfig::default().with_max_steps(1)).unwrap();
        assert_eq!(m.steps(), 1);
        let step: Vec<f64> = m.x.iter().zip(&x0).map(|(a, b)| a - b).collect();
        let ratio = -step[0] / g0[0];
        assert!(ratio > 0.0);
        for (s, g) in step.iter().zip(&g0) {
            assert!((s + ratio * g).abs() < 1e-12);
        }
    }

    #[test]
    fn isotropic_quadratic_in_one_step() {
        let f = |x: &[f64]| (dot(x, x), x.iter().map(|v| 2.0 * v).collect());
        let m = minimize(f, &[3.0, -4.0, 0.5], &OptimizerConfig::default()).unwrap();
        assert!(m.x.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(m.steps(), 1);
    }

    #[test]
    fn step_cap_is_honored() {
        for k in 0..5 {
            let cfg = OptimizerConfig::default().with_max_steps(k);
            let m = minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
            assert!(m.steps() <= k);
        }
    }

    #[test]
    fn rejects_non_finite_start() {
        let f = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(minimize(f, &[0.0], &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let f = |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]);
        let cfg = OptimizerConfig {
            c1: 0.9,
            c2: 0.1,
            ..Default::default()
        };
        assert!(minimize(f, &[1.0], &cfg).is_err());
        let cfg = OptimizerConfig {
            memory: 0,
            ..Default::default()
        };
        assert!(minimize(f, &[1.0], &cfg).is_err());
    }

    #[test]
    fn unbounded_region_is_handled() {
        // Infinite outside |x| < 2; the line search must back off.
        let f = |x: &[f64]| {
            if x[0].abs() >= 2.0 {
                (f64::INFINITY, vec![f64::NAN])
            } else {
                ((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)])
            }
        };
        let m = minimize(f, &[-1.0], &OptimizerConfig::default()).unwrap();
        assert!((m.x[0] - 1.5).abs() < 1e-6, "{:?}", m.x);
    }
}
