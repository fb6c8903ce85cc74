//! Independent solution of the pencil equation through its Volterra integral
//! form, solved by Picard iteration:
//!
//! ```text
//! phi(x) = cos(lambda x) + s (h/lambda) sin(lambda x) + int_0^x sin(lambda (x-t))/lambda Q(t) phi(t) dt
//! psi(x) = sin(lambda x)/lambda                        + int_0^x sin(lambda (x-t))/lambda Q(t) psi(t) dt
//! ```
//!
//! with `Q = q + 2 lambda p`. The sign `s` is `+1` for the convention that
//! matches `phi'(0) = h phi(0)`, `-1` for the classical printed form.

use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::problem::PencilProblem;

pub const DEFAULT_GRID: usize = 20_000;
pub const PICARD_TOL: f64 = 1e-10;
pub const PICARD_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    /// Starts from `phi(0) = 1`, `phi'(0) = +-h`.
    Phi,
    /// Starts from `psi(0) = 0`, `psi'(0) = 1`.
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HConvention {
    /// `+ (h/lambda) sin(lambda x)`: agrees with `y'(0) - h y(0) = 0`.
    #[default]
    MatchBoundary,
    /// `- (h/lambda) sin(lambda x)`: the classical printed form, `phi'(0) = -h`.
    AsPrinted,
}

#[derive(Debug, Clone)]
pub struct SolutionTrace {
    pub lambda: f64,
    pub which: Which,
    /// Samples at `x_i = i pi / (len - 1)`.
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl SolutionTrace {
    pub fn step(&self) -> f64 {
        PI / (self.values.len() - 1) as f64
    }

    pub fn abscissa(&self, i: usize) -> f64 {
        if i + 1 == self.values.len() {
            PI
        } else {
            i as f64 * self.step()
        }
    }
}

pub fn solve_volterra(
    problem: &PencilProblem,
    lambda: f64,
    which: Which,
    convention: HConvention,
) -> Result<SolutionTrace> {
    solve_volterra_on(problem, lambda, which, convention, DEFAULT_GRID)
}

/// As [`solve_volterra`] on a uniform grid of `intervals + 1` points.
pub fn solve_volterra_on(
    problem: &PencilProblem,
    lambda: f64,
    which: Which,
    convention: HConvention,
    intervals: usize,
) -> Result<SolutionTrace> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CoreError::Domain { x: lambda });
    }
    let intervals = intervals.max(8);
    let step = PI / intervals as f64;
    let xs: Vec<f64> = (0..=intervals)
        .map(|i| if i == intervals { PI } else { i as f64 * step })
        .collect();
    let (cos_l, sin_l): (Vec<f64>, Vec<f64>) = xs.iter().map(|x| ((lambda * x).cos(), (lambda * x).sin())).unzip();
    let effective: Vec<f64> = xs.iter().map(|&x| problem.effective(lambda, x)).collect();

    let s = match convention {
        HConvention::MatchBoundary => 1.0,
        HConvention::AsPrinted => -1.0,
    };
    let free: Vec<f64> = (0..xs.len())
        .map(|i| match which {
            Which::Phi => cos_l[i] + s * problem.h / lambda * sin_l[i],
            Which::Psi => sin_l[i] / lambda,
        })
        .collect();

    let mut current = free.clone();
    let mut weighted_c = vec![0.0; xs.len()];
    let mut weighted_s = vec![0.0; xs.len()];
    for iteration in 1..=PICARD_MAX_ITER {
        for i in 0..xs.len() {
            let g = effective[i] * current[i];
            weighted_c[i] = cos_l[i] * g;
            weighted_s[i] = sin_l[i] * g;
        }
        let c = cumulative_integral(&weighted_c, step);
        let sn = cumulative_integral(&weighted_s, step);
        let mut change = 0.0f64;
        for i in 0..xs.len() {
            // sin(l(x - t)) = sin(lx) cos(lt) - cos(lx) sin(lt)
            let next = free[i] + (sin_l[i] * c[i] - cos_l[i] * sn[i]) / lambda;
            change = change.max((next - current[i]).abs());
            current[i] = next;
        }
        if change <= PICARD_TOL {
            return Ok(SolutionTrace {
                lambda,
                which,
                values: current,
                iterations: iteration,
            });
        }
    }
    Err(CoreError::NonConvergence {
        what: "Picard iteration",
        detail: format!("no convergence within {PICARD_MAX_ITER} iterations at lambda = {lambda}"),
    })
}

/// Fourth-order running integral `F_i = int_0^{x_i} f` on a uniform grid.
pub fn cumulative_integral(f: &[f64], step: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n < 4 {
        for i in 1..n {
            out[i] = out[i - 1] + 0.5 * step * (f[i - 1] + f[i]);
        }
        return out;
    }
    let w = step / 24.0;
    for i in 0..n - 1 {
        let piece = if i == 0 {
            9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]
        } else if i == n - 2 {
            f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1]
        } else {
            -f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]
        };
        out[i + 1] = out[i] + w * piece;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::RealFunction;
    use crate::problem::BoundaryCase;

    fn sup_error(trace: &SolutionTrace, exact: impl Fn(f64) -> f64) -> f64 {
        trace
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - exact(trace.abscissa(i))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn free_solutions() {
        let prob = PencilProblem::free(BoundaryCase::Robin);
        let phi = solve_volterra(&prob, 3.0, Which::Phi, HConvention::MatchBoundary).unwrap();
        assert!(sup_error(&phi, |x| (3.0 * x).cos()) <= 1e-10);
        let psi = solve_volterra(&prob, 3.0, Which::Psi, HConvention::MatchBoundary).unwrap();
        assert!(sup_error(&psi, |x| (3.0 * x).sin() / 3.0) <= 1e-10);
        assert!(psi.values[0].abs() <= 1e-12);
        assert!((phi.values[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn h_conventions_differ_by_sign() {
        let mut prob = PencilProblem::free(BoundaryCase::Robin);
        prob.h = 0.5;
        let a = solve_volterra(&prob, 2.0, Which::Phi, HConvention::MatchBoundary).unwrap();
        let b = solve_volterra(&prob, 2.0, Which::Phi, HConvention::AsPrinted).unwrap();
        assert!(sup_error(&a, |x| (2.0 * x).cos() + 0.25 * (2.0 * x).sin()) <= 1e-10);
        assert!(sup_error(&b, |x| (2.0 * x).cos() - 0.25 * (2.0 * x).sin()) <= 1e-10);
    }

    #[test]
    fn constant_coefficients_match_closed_form() {
        // Q = 2 lambda p0 + q0 constant: phi = cos(mu x), mu^2 = lambda^2 - Q
        let prob = PencilProblem::new(
            RealFunction::constant(0.3),
            RealFunction::constant(1.2),
            0.0,
            0.0,
            BoundaryCase::Robin,
        );
        let lambda = 6.0;
        let mu = (lambda * lambda - 2.0 * lambda * 0.3 - 1.2f64).sqrt();
        let phi = solve_volterra(&prob, lambda, Which::Phi, HConvention::MatchBoundary).unwrap();
        assert!(sup_error(&phi, |x| (mu * x).cos()) <= 1e-9);
    }

    #[test]
    fn cumulative_rule_is_fourth_order_exact_on_cubics() {
        let n = 11;
        let step = 0.1;
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * step).powi(3)).collect();
        let out = cumulative_integral(&f, step);
        for (i, v) in out.iter().enumerate() {
            let x = i as f64 * step;
            assert!((v - x.powi(4) / 4.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn rejects_bad_lambda() {
        let prob = PencilProblem::free(BoundaryCase::Robin);
        assert!(solve_volterra(&prob, 0.0, Which::Phi, HConvention::MatchBoundary).is_err());
    }
}
