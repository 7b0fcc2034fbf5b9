//! Early-learning curve fitting and the memorization trigger.
//!
//! A class's training IoU is modelled as `f(t) = a (1 - exp(-b t^c))` with
//! `0 < a <= 1`, `b >= 0`, `c >= 0`. The fit runs a damped Gauss-Newton
//! (Levenberg-Marquardt) iteration in an unconstrained parameterization
//!
//! ```text
//! a = A_MIN + (1 - A_MIN) * sigmoid(alpha)
//! b = exp(beta),  beta  <= ln(B_MAX)
//! c = exp(gamma), gamma <= ln(C_MAX)
//! ```
//!
//! from a fixed grid of starting points, and keeps the lowest residual.
//! A class enters memorization once the slope of the fitted curve has changed
//! by more than a fraction `r` of its value at `t = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ClassIoUSeries;

pub const A_MIN: f64 = 1e-6;
pub const B_MAX: f64 = 100.0;
pub const C_MAX: f64 = 10.0;
const BETA_MIN: f64 = -40.0;
const GAMMA_MIN: f64 = -20.0;

/// Default number of defined points before a fit (and hence a trigger) is attempted.
pub const DEFAULT_MIN_POINTS: usize = 5;
/// Default slope-change threshold.
pub const DEFAULT_R: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub min_points: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { min_points: DEFAULT_MIN_POINTS, max_iterations: 200, grad_tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sse: f64,
    pub converged: bool,
    pub points_used: usize,
}

impl FitResult {
    pub fn eval(&self, t: f64) -> f64 {
        curve_value(self.a, self.b, self.c, t)
    }
}

#[inline]
pub fn curve_value(a: f64, b: f64, c: f64, t: f64) -> f64 {
    a * (1.0 - (-b * t.powf(c)).exp())
}

/// Closed-form slope `a b c exp(-b t^c) t^(c-1)`, defined for `t >= 1`.
pub fn curve_derivative(fit: &FitResult, t: f64) -> f64 {
    debug_assert!(t >= 1.0, "derivative requested at t = {t} < 1");
    let (a, b, c) = (fit.a, fit.b, fit.c);
    if b == 0.0 || c == 0.0 {
        return 0.0;
    }
    a * b * c * (-b * t.powf(c)).exp() * t.powf(c - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub class: u8,
    pub triggered: bool,
    pub relative_slope_change: f64,
    pub epoch_evaluated: usize,
}

/// Relative slope change `|f'(1) - f'(t)| / |f'(1)|`; 0 when `f'(1) == 0`.
pub fn relative_slope_change(fit: &FitResult, t: f64) -> f64 {
    let d1 = curve_derivative(fit, 1.0);
    if d1 == 0.0 {
        return 0.0;
    }
    ((d1 - curve_derivative(fit, t)) / d1).abs()
}

/// Decides whether `class` has entered memorization at epoch `t`.
pub fn check_trigger(class: u8, fit: &FitResult, t: usize, r: f64) -> TriggerDecision {
    let t = t.max(1);
    let ratio = relative_slope_change(fit, t as f64);
    TriggerDecision { class, triggered: ratio > r, relative_slope_change: ratio, epoch_evaluated: t }
}

/// First integer `t` in `1..=max_t` at which a fixed curve satisfies the trigger.
pub fn trigger_epoch_on_curve(fit: &FitResult, r: f64, max_t: usize) -> Option<usize> {
    (1..=max_t).find(|&t| relative_slope_change(fit, t as f64) > r)
}

/// Fits the curve to the defined entries of a training-IoU series.
pub fn fit_curve(series: &ClassIoUSeries, opts: &FitOptions) -> Result<FitResult> {
    fit_points(&series.defined_points(), opts)
}

/// Fits the curve to `(t, y)` points.
pub fn fit_points(points: &[(f64, f64)], opts: &FitOptions) -> Result<FitResult> {
    if points.len() < opts.min_points.max(1) {
        return Err(Error::NotEnoughData { needed: opts.min_points.max(1), got: points.len() });
    }
    if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("curve-fit input".to_string()));
    }
    let y_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let a0 = y_max.clamp(2.0 * A_MIN, 1.0 - 1e-6);

    let mut starts: Vec<[f64; 3]> = Vec::with_capacity(12);
    for b0 in [0.01, 0.1, 1.0] {
        for c0 in [0.5, 1.0, 2.0] {
            starts.push([a0, b0, c0]);
        }
    }
    starts.push([(a0 * 0.9).max(2.0 * A_MIN), 0.03, 0.7]);
    starts.push([a0, 0.3, 1.5]);
    starts.push([(a0 * 1.1).min(1.0 - 1e-6), 3.0, 0.3]);

    // f == 0 is only reachable at b = 0, outside the open exp(beta) range.
    let flat_sse: f64 = points.iter().map(|p| p.1 * p.1).sum();
    let mut best = FitResult { a: a0.max(A_MIN), b: 0.0, c: 1.0, sse: flat_sse, converged: true, points_used: points.len() };

    for s in starts {
        let fit = levenberg_marquardt(points, to_unconstrained(s), opts);
        if fit.sse < best.sse || (fit.sse == best.sse && fit.converged && !best.converged) {
            best = fit;
        }
    }
    Ok(best)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn to_unconstrained([a, b, c]: [f64; 3]) -> [f64; 3] {
    let s = ((a - A_MIN) / (1.0 - A_MIN)).clamp(1e-12, 1.0 - 1e-12);
    [(s / (1.0 - s)).ln(), b.ln(), c.ln()]
}

fn project(theta: [f64; 3]) -> [f64; 3] {
    [
        theta[0].clamp(-40.0, 40.0),
        theta[1].clamp(BETA_MIN, B_MAX.ln()),
        theta[2].clamp(GAMMA_MIN, C_MAX.ln()),
    ]
}

fn to_params(theta: [f64; 3]) -> (f64, f64, f64) {
    (A_MIN + (1.0 - A_MIN) * sigmoid(theta[0]), theta[1].exp(), theta[2].exp())
}

fn sse_at(points: &[(f64, f64)], theta: [f64; 3]) -> f64 {
    let (a, b, c) = to_params(theta);
    points.iter().map(|&(t, y)| (curve_value(a, b, c, t) - y).powi(2)).sum()
}

/// Returns `(J^T J, J^T r, sse)` in unconstrained coordinates.
fn normal_equations(points: &[(f64, f64)], theta: [f64; 3]) -> ([[f64; 3]; 3], [f64; 3], f64) {
    let (a, b, c) = to_params(theta);
    let s = sigmoid(theta[0]);
    let da = (1.0 - A_MIN) * s * (1.0 - s);
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    let mut sse = 0.0;
    for &(t, y) in points {
        let tc = t.powf(c);
        let e = (-b * tc).exp();
        let r = a * (1.0 - e) - y;
        let j = [(1.0 - e) * da, a * e * tc * b, a * e * b * tc * t.ln() * c];
        for i in 0..3 {
            jtr[i] += j[i] * r;
            for k in 0..3 {
                jtj[i][k] += j[i] * j[k];
            }
        }
        sse += r * r;
    }
    (jtj, jtr, sse)
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = rhs[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (v, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= f * p;
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = a[i][3];
        for k in i + 1..3 {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn levenberg_marquardt(points: &[(f64, f64)], start: [f64; 3], opts: &FitOptions) -> FitResult {
    let mut theta = project(start);
    let mut lambda = 1e-3;
    let mut converged = false;
    let (mut jtj, mut jtr, mut sse) = normal_equations(points, theta);
    for _ in 0..opts.max_iterations {
        let gnorm = jtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= opts.grad_tol || sse == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[i][i] += lambda * (jtj[i][i] + 1e-12);
            }
            let Some(delta) = solve3(damped, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 4.0;
                continue;
            };
            let cand = project([theta[0] + delta[0], theta[1] + delta[1], theta[2] + delta[2]]);
            let cand_sse = sse_at(points, cand);
            if cand_sse < sse {
                let step = (0..3).map(|i| (cand[i] - theta[i]).abs()).fold(0.0, f64::max);
                theta = cand;
                (jtj, jtr, sse) = normal_equations(points, theta);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if step < 1e-14 {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let (a, b, c) = to_params(theta);
    FitResult { a, b, c, sse, converged, points_used: points.len() }
}

/// Causal trigger search over a series: at each recorded epoch with enough
/// history, refit on the prefix and evaluate the trigger at that epoch.
pub fn first_trigger_epoch(series: &ClassIoUSeries, r: f64, opts: &FitOptions) -> Result<Option<(usize, FitResult)>> {
    let mut prefix = ClassIoUSeries::new(series.class);
    for &(t, v) in &series.points {
        prefix.push(t, v)?;
        if prefix.defined_points().len() < opts.min_points {
            continue;
        }
        let fit = fit_curve(&prefix, opts)?;
        if check_trigger(series.class, &fit, t, r).triggered {
            return Ok(Some((t, fit)));
        }
    }
    Ok(None)
}
