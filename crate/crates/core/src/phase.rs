//! Prüfer-type phase integration of the pencil equation.
//!
//! With `y = rho sin(theta)` and `y' = lambda rho cos(theta)` the equation
//! becomes
//!
//! ```text
//! theta'   = lambda - (Q/lambda) sin^2(theta)
//! (ln rho)' = (Q/lambda) sin(theta) cos(theta),     Q = 2 lambda p + q
//! ```
//!
//! `theta` can only cross multiples of `pi` upwards, so zeros of `y` are
//! counted and located by phase crossings. The integrator carries the drift
//! `theta - lambda x`, which stays small, so rounding does not accumulate
//! with the size of the phase.

use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::problem::{BoundaryCase, PencilProblem};

/// Absolute local error accepted per extrapolation step.
pub const LOCAL_TOL: f64 = 1e-12;
/// Steps below this length abort the integration.
pub const MIN_STEP: f64 = 1e-13;
/// Sample spacing keeps phase increments at or below `pi / 8`.
const SAMPLES_PER_RADIAN_RATE: f64 = 8.0;
const MIN_SAMPLES: usize = 64;
/// Phase rates needing more samples than this are rejected as intractable.
pub const MAX_SAMPLES: usize = 2_000_000;

/// Midpoint step counts for the Gragg-Bulirsch-Stoer table.
const GBS_SEQUENCE: [usize; 6] = [2, 4, 6, 8, 10, 12];
/// Earliest row at which an extrapolated value may be accepted.
const GBS_MIN_ROW: usize = 3;

pub type State = [f64; 2];

/// `(theta, ln rho)` along `[0, pi]` on a uniform grid.
#[derive(Debug, Clone)]
pub struct PhaseTrace {
    pub lambda: f64,
    pub theta: Vec<f64>,
    /// `theta - lambda x` at each sample.
    pub drift: Vec<f64>,
    pub log_amplitude: Vec<f64>,
    pub sample_step: f64,
}

impl PhaseTrace {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn abscissa(&self, i: usize) -> f64 {
        if i + 1 == self.theta.len() {
            PI
        } else {
            i as f64 * self.sample_step
        }
    }

    /// Number of upward crossings of `k pi`, `k >= 1`, strictly inside `(0, pi)`.
    pub fn crossing_count(&self) -> usize {
        interior_crossings(self.theta[0], *self.theta.last().unwrap())
    }

    /// Solution value `rho sin(theta)` at every sample.
    pub fn solution(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.log_amplitude)
            .map(|(t, r)| r.exp() * t.sin())
            .collect()
    }
}

/// Number of integers `k >= 1` with `k pi` strictly between the endpoint phases.
pub fn interior_crossings(theta0: f64, theta_end: f64) -> usize {
    let first = (theta0 / PI).floor() as i64 + 1;
    let last = (theta_end / PI).ceil() as i64 - 1;
    (last - first.max(1) + 1).max(0) as usize
}

/// Integrator for one `(problem, lambda)` pair.
pub struct PhaseSolver<'a> {
    problem: &'a PencilProblem,
    lambda: f64,
}

impl<'a> PhaseSolver<'a> {
    pub fn new(problem: &'a PencilProblem, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(CoreError::NonConvergence {
                what: "phase integration",
                detail: format!("lambda must be finite and positive, got {lambda}"),
            });
        }
        Ok(Self { problem, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Initial `(theta, ln rho)` encoding the left boundary condition, with
    /// the amplitude normalized to `phi(0) = 1` or `psi'(0) = 1`.
    pub fn initial_state(&self) -> State {
        let lam = self.lambda;
        match self.problem.case {
            BoundaryCase::Robin => {
                // cot(theta0) = h / lambda, theta0 in (0, pi)
                let theta0 = lam.atan2(self.problem.h);
                [theta0, -theta0.sin().ln()]
            }
            BoundaryCase::Dirichlet => [0.0, -lam.ln()],
        }
    }

    /// Phase value at `pi` satisfying the right boundary condition for index `n`.
    pub fn right_target(&self, n: usize) -> f64 {
        n as f64 * PI + self.lambda.atan2(-self.problem.big_h)
    }

    #[inline]
    pub fn rhs(&self, x: f64, y: &State) -> State {
        let d = self.drift_rhs(x, y[0]);
        [self.lambda + d[0], d[1]]
    }

    /// Right-hand side for `(theta - lambda x, ln rho)` given `theta`.
    #[inline]
    fn drift_rhs(&self, x: f64, theta: f64) -> State {
        let qeff = self.problem.effective(self.lambda, x) / self.lambda;
        let (s, c) = theta.sin_cos();
        [-qeff * s * s, qeff * s * c]
    }

    #[inline]
    fn drift_rhs_at(&self, x: f64, u: &State) -> State {
        self.drift_rhs(x, u[0] + self.lambda * x)
    }

    fn samples(&self) -> Result<usize> {
        let lam = self.lambda;
        let sup_q = 2.0 * lam * self.problem.p.sup_bound() + self.problem.q.sup_bound();
        let rate = lam + sup_q / lam;
        let m = (SAMPLES_PER_RADIAN_RATE * rate).ceil();
        if !(m <= MAX_SAMPLES as f64) {
            return Err(CoreError::NonConvergence {
                what: "phase integration",
                detail: format!("phase rate {rate:e} at lambda = {lam} needs more than {MAX_SAMPLES} samples"),
            });
        }
        Ok((m as usize).max(MIN_SAMPLES))
    }

    /// Integrates `(theta, ln rho)` from `(x0, y0)` to `x1`.
    pub fn advance(&self, x0: f64, y0: State, x1: f64) -> Result<State> {
        let u = self.advance_drift(x0, [y0[0] - self.lambda * x0, y0[1]], x1)?;
        Ok([u[0] + self.lambda * x1, u[1]])
    }

    /// Integrates `(theta - lambda x, ln rho)` from `(x0, u0)` to `x1`, halving
    /// the step until every extrapolation step meets `LOCAL_TOL`.
    pub fn advance_drift(&self, x0: f64, y0: State, x1: f64) -> Result<State> {
        if x1 == x0 {
            return Ok(y0);
        }
        let mut stack = vec![(x1, 0u32)];
        let mut x = x0;
        let mut y = y0;
        while let Some(&(target, depth)) = stack.last() {
            match self.gbs_step(x, &y, target - x) {
                Some(next) => {
                    x = target;
                    y = next;
                    stack.pop();
                }
                None => {
                    let half = 0.5 * (target - x);
                    if half.abs() < MIN_STEP || depth > 60 {
                        return Err(CoreError::NonConvergence {
                            what: "phase integration",
                            detail: format!("step control hit {half:e} near x = {x}"),
                        });
                    }
                    stack.push((x + half, depth + 1));
                }
            }
        }
        Ok(y)
    }

    /// One extrapolated modified-midpoint step; `None` when the error
    /// estimate never drops below tolerance.
    fn gbs_step(&self, x0: f64, y0: &State, big_h: f64) -> Option<State> {
        let f0 = self.drift_rhs_at(x0, y0);
        let mut table: Vec<State> = Vec::with_capacity(GBS_SEQUENCE.len());
        for (row, &nsub) in GBS_SEQUENCE.iter().enumerate() {
            let est = self.modified_midpoint(x0, y0, &f0, big_h, nsub);
            // Aitken-Neville extrapolation in h^2
            let mut current = est;
            let mut next_table = Vec::with_capacity(row + 1);
            next_table.push(current);
            for k in 1..=row {
                let ratio = (nsub as f64 / GBS_SEQUENCE[row - k] as f64).powi(2);
                let prev = table[k - 1];
                let mut v = [0.0; 2];
                for c in 0..2 {
                    v[c] = current[c] + (current[c] - prev[c]) / (ratio - 1.0);
                }
                current = v;
                next_table.push(current);
            }
            if row >= GBS_MIN_ROW {
                let lower = next_table[row - 1];
                let err = (current[0] - lower[0]).abs().max((current[1] - lower[1]).abs());
                if err <= LOCAL_TOL {
                    return Some(current);
                }
            }
            table = next_table;
        }
        None
    }

    fn modified_midpoint(&self, x0: f64, y0: &State, f0: &State, big_h: f64, n: usize) -> State {
        let h = big_h / n as f64;
        let mut zm = *y0;
        let mut z = [y0[0] + h * f0[0], y0[1] + h * f0[1]];
        for m in 1..n {
            let f = self.drift_rhs_at(x0 + m as f64 * h, &z);
            let zn = [zm[0] + 2.0 * h * f[0], zm[1] + 2.0 * h * f[1]];
            zm = z;
            z = zn;
        }
        let f = self.drift_rhs_at(x0 + big_h, &z);
        [
            0.5 * (z[0] + zm[0] + h * f[0]),
            0.5 * (z[1] + zm[1] + h * f[1]),
        ]
    }

    /// `(theta - lambda x, ln rho)` at `pi`.
    fn end_drift(&self) -> Result<State> {
        let m = self.samples()?;
        let step = PI / m as f64;
        let mut u = self.initial_state();
        for i in 0..m {
            let x0 = i as f64 * step;
            let x1 = if i + 1 == m { PI } else { (i + 1) as f64 * step };
            u = self.advance_drift(x0, u, x1)?;
        }
        Ok(u)
    }

    /// State at `pi` only.
    pub fn end_state(&self) -> Result<State> {
        let u = self.end_drift()?;
        Ok([u[0] + self.lambda * PI, u[1]])
    }

    /// `theta(pi) - right_target(n)`, evaluated without forming the large
    /// phase; the function whose root is `lambda_n`.
    pub fn miss(&self, n: usize) -> Result<f64> {
        let u = self.end_drift()?;
        Ok(u[0] + (self.lambda - n as f64) * PI - self.lambda.atan2(-self.problem.big_h))
    }

    /// Dense samples on a uniform grid over `[0, pi]`.
    pub fn trace(&self) -> Result<PhaseTrace> {
        self.trace_with_samples(0)
    }

    /// Dense samples with at least `min_samples` intervals.
    pub fn trace_with_samples(&self, min_samples: usize) -> Result<PhaseTrace> {
        let m = min_samples.max(self.samples()?);
        let step = PI / m as f64;
        let mut theta = Vec::with_capacity(m + 1);
        let mut drift = Vec::with_capacity(m + 1);
        let mut log_amplitude = Vec::with_capacity(m + 1);
        let mut u = self.initial_state();
        theta.push(u[0]);
        drift.push(u[0]);
        log_amplitude.push(u[1]);
        for i in 0..m {
            let x0 = i as f64 * step;
            let x1 = if i + 1 == m { PI } else { (i + 1) as f64 * step };
            u = self.advance_drift(x0, u, x1)?;
            theta.push(u[0] + self.lambda * x1);
            drift.push(u[0]);
            log_amplitude.push(u[1]);
        }
        Ok(PhaseTrace {
            lambda: self.lambda,
            theta,
            drift,
            log_amplitude,
            sample_step: step,
        })
    }

    /// State at an arbitrary `x`, re-integrated from the nearest sample at or below `x`.
    pub fn state_at(&self, trace: &PhaseTrace, x: f64) -> Result<State> {
        let last = trace.len() - 1;
        let i = ((x / trace.sample_step).floor() as usize).min(last);
        let u = self.advance_drift(trace.abscissa(i), [trace.drift[i], trace.log_amplitude[i]], x)?;
        Ok([u[0] + self.lambda * x, u[1]])
    }

    /// Solution value `rho sin(theta)` at an arbitrary `x`.
    pub fn solution_at(&self, trace: &PhaseTrace, x: f64) -> Result<f64> {
        let y = self.state_at(trace, x)?;
        Ok(y[1].exp() * y[0].sin())
    }
}

/// Phase trace for `(problem, lambda)`.
pub fn integrate_phase(problem: &PencilProblem, lambda: f64) -> Result<PhaseTrace> {
    PhaseSolver::new(problem, lambda)?.trace()
}
