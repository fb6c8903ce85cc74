//! Reconstruction of `q`, `h` and `q^(m)` from nodal data.
//!
//! Every reconstruction consumes only nodes, eigenvalues and `p`; the true
//! `q` enters solely through the optional error evaluation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::function::RealFunction;
use crate::nodal::{difference_quotient, difference_quotient_with_base, locate, NodalCase, NodalSet};
use crate::quadrature::{abs_integral_with, integrate_panels, osc_unchecked, Phase};
use crate::spectrum::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionMode {
    /// Formulas evaluated exactly as classically stated.
    Paper,
    /// Normalizations that reproduce constant-coefficient problems.
    Corrected,
}

impl ReconstructionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconstructionMode::Paper => "paper",
            ReconstructionMode::Corrected => "corrected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub n_used: usize,
    pub lambda_used: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub mode: ReconstructionMode,
    /// Derivative order reconstructed (`0` for `q` itself).
    pub order: u32,
    /// Grid indices with no enclosing usable interval (nearest one was used).
    pub flagged: Vec<usize>,
    pub l1_error_vs_truth: Option<f64>,
}

/// `size` midpoints of a uniform partition of `[0, pi]`.
pub fn uniform_grid(size: usize) -> Vec<f64> {
    (0..size).map(|i| (i as f64 + 0.5) * PI / size as f64).collect()
}

/// Per-interval data of one level: `F_n` is a function of the interval index
/// `j` (0-based, `I_j = [X_j, X_{j+1}]`) and of `x`.
struct Profile<'a> {
    nodes: &'a [f64],
    /// Usable interval indices are `0..usable`.
    usable: usize,
    eval: Box<dyn Fn(usize, f64) -> f64 + 'a>,
}

impl Profile<'_> {
    /// Interval used at `x`, and whether it had to be clamped.
    fn interval(&self, x: f64) -> (usize, bool) {
        let j = locate(self.nodes, x);
        if j == 0 {
            (0, true)
        } else if j > self.usable {
            (self.usable - 1, true)
        } else {
            (j - 1, false)
        }
    }

    fn value(&self, x: f64) -> (f64, bool) {
        let (j, clamped) = self.interval(x);
        ((self.eval)(j, x), clamped)
    }

    /// `int_0^pi |F - truth|`, integrating piece by piece between nodes.
    fn l1_distance<T: Fn(f64) -> f64>(&self, truth: T) -> f64 {
        let mut breaks = Vec::with_capacity(self.nodes.len() + 2);
        breaks.push(0.0);
        breaks.extend_from_slice(self.nodes);
        breaks.push(PI);
        breaks
            .windows(2)
            .map(|w| {
                let (j, _) = self.interval(0.5 * (w[0] + w[1]));
                abs_integral_with(|x| (self.eval)(j, x) - truth(x), w[0], w[1], 16)
            })
            .sum()
    }

    fn sample(&self, grid: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let mut values = Vec::with_capacity(grid.len());
        let mut flagged = Vec::new();
        for (i, &x) in grid.iter().enumerate() {
            let (v, clamped) = self.value(x);
            if clamped {
                flagged.push(i);
            }
            values.push(v);
        }
        (values, flagged)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if let Some(&bad) = grid.iter().find(|x| !(0.0..=PI).contains(*x)) {
        return Err(CoreError::Domain { x: bad });
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::Inconsistent("reconstruction grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Mean of `p` over each nodal interval.
fn interval_means(p: &RealFunction, nodes: &[f64]) -> Vec<f64> {
    nodes
        .windows(2)
        .map(|w| integrate_panels(|t| p.value(t), w[0], w[1], 1) / (w[1] - w[0]))
        .collect()
}

fn q_profile<'a>(
    nodes: &'a [f64],
    lambda: f64,
    p: &'a RealFunction,
    mode: ReconstructionMode,
) -> Result<Profile<'a>> {
    if nodes.len() < 2 {
        return Err(CoreError::InsufficientData {
            needed: 2,
            got: nodes.len(),
        });
    }
    let lengths: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
    let usable = lengths.len();
    let eval: Box<dyn Fn(usize, f64) -> f64 + 'a> = match mode {
        // 2 lambda [lambda^2 l_j - lambda pi - p(x)]
        ReconstructionMode::Paper => {
            Box::new(move |j, x| 2.0 * lambda * (lambda * lambda * lengths[j] - lambda * PI - p.value(x)))
        }
        // local wavenumber pi / l_j of lambda^2 - 2 lambda p - q, with p averaged over I_j
        ReconstructionMode::Corrected => {
            let means = interval_means(p, nodes);
            let values: Vec<f64> = lengths
                .iter()
                .zip(&means)
                .map(|(l, pm)| {
                    let k = PI / l;
                    lambda * lambda - 2.0 * lambda * pm - k * k
                })
                .collect();
            Box::new(move |j, _| values[j])
        }
    };
    Ok(Profile { nodes, usable, eval })
}

/// `F_n` on `grid` from level `n` of `X`.
pub fn reconstruct_q(
    x: &NodalSet,
    n: usize,
    lambda: f64,
    p: &RealFunction,
    grid: &[f64],
    mode: ReconstructionMode,
) -> Result<ReconstructionResult> {
    check_grid(grid)?;
    let profile = q_profile(x.level(n)?, lambda, p, mode)?;
    let (values, flagged) = profile.sample(grid);
    Ok(ReconstructionResult {
        n_used: n,
        lambda_used: lambda,
        grid: grid.to_vec(),
        values,
        mode,
        order: 0,
        flagged,
        l1_error_vs_truth: None,
    })
}

/// `||F_n - truth||_1` over `[0, pi]`, exact up to quadrature on each nodal interval.
pub fn reconstruction_l1_error(
    x: &NodalSet,
    n: usize,
    lambda: f64,
    p: &RealFunction,
    mode: ReconstructionMode,
    truth: &RealFunction,
) -> Result<f64> {
    let profile = q_profile(x.level(n)?, lambda, p, mode)?;
    Ok(profile.l1_distance(|t| truth.value(t)))
}

fn deriv_profile<'a>(
    nodes: &'a [f64],
    lambda: f64,
    p: &'a RealFunction,
    m: u32,
    mode: ReconstructionMode,
) -> Result<Profile<'a>> {
    let mu = m as usize;
    if m == 0 {
        return q_profile(nodes, lambda, p, mode);
    }
    if nodes.len() < mu + 2 {
        return Err(CoreError::InsufficientData {
            needed: mu + 2,
            got: nodes.len(),
        });
    }
    let lengths: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
    let eval: Box<dyn Fn(usize, f64) -> f64 + 'a> = match mode {
        // (2 lambda^{3/2}/pi) delta^m l_j - 2 lambda delta^m p(x_j) - 2 lambda p^(m)(x)
        ReconstructionMode::Paper => {
            let dl = difference_quotient(&lengths, mu)?;
            let dp = if p.is_zero() {
                vec![0.0; nodes.len() - mu]
            } else {
                let samples: Vec<f64> = nodes.iter().map(|&t| p.value(t)).collect();
                difference_quotient(&samples, mu)?
            };
            let w = 2.0 * lambda.powf(1.5) / PI;
            Box::new(move |j, x| {
                w * dl[j] - 2.0 * lambda * dp[j.min(dp.len() - 1)] - 2.0 * lambda * p.eval_unchecked(x, m)
            })
        }
        // (2 lambda^3/pi) delta^m r_j over base l_j, where r_j strips the exact
        // constant-p length pi/sqrt(lambda^2 - 2 lambda P_j) from l_j
        ReconstructionMode::Corrected => {
            let means = interval_means(p, nodes);
            let mut reduced = Vec::with_capacity(lengths.len());
            for (j, (l, pm)) in lengths.iter().zip(&means).enumerate() {
                let k2 = lambda * lambda - 2.0 * lambda * pm;
                if !(k2 > 0.0) {
                    return Err(CoreError::Inconsistent(format!(
                        "lambda = {lambda} lies below the p-barrier on interval {}",
                        j + 1
                    )));
                }
                reduced.push(l - PI / k2.sqrt() + PI / lambda);
            }
            let d = difference_quotient_with_base(&reduced, &lengths, mu)?;
            let w = 2.0 * lambda.powi(3) / PI;
            Box::new(move |j, _| w * d[j])
        }
    };
    Ok(Profile {
        nodes,
        usable: lengths.len() - mu,
        eval,
    })
}

/// `q^(m)` on `grid` from level `n`.
pub fn reconstruct_q_deriv(
    x: &NodalSet,
    n: usize,
    lambda: f64,
    p: &RealFunction,
    m: u32,
    grid: &[f64],
    mode: ReconstructionMode,
) -> Result<ReconstructionResult> {
    check_grid(grid)?;
    let profile = deriv_profile(x.level(n)?, lambda, p, m, mode)?;
    let (values, flagged) = profile.sample(grid);
    Ok(ReconstructionResult {
        n_used: n,
        lambda_used: lambda,
        grid: grid.to_vec(),
        values,
        mode,
        order: m,
        flagged,
        l1_error_vs_truth: None,
    })
}

/// `||F_n^(m) - truth^(m)||_1` over `[0, pi]`.
pub fn deriv_l1_error(
    x: &NodalSet,
    n: usize,
    lambda: f64,
    p: &RealFunction,
    m: u32,
    mode: ReconstructionMode,
    truth: &RealFunction,
) -> Result<f64> {
    let profile = deriv_profile(x.level(n)?, lambda, p, m, mode)?;
    Ok(profile.l1_distance(|t| truth.eval_unchecked(t, m)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HMode {
    /// `2 lambda pi (j - 1/2 - lambda X_j / pi)`, extrapolated in `n`.
    Paper,
    /// Adds back `int_0^{X_j} [1 + cos 2 lambda t][q_est + 2 lambda p] dt` and
    /// divides by the calibration constant `kappa`.
    Calibrated { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HRecovery {
    /// `(n, estimate at level n)`.
    pub sequence: Vec<(usize, f64)>,
    /// Extrapolated limit over the last three levels.
    pub estimate: f64,
}

/// Limit at `1/lambda -> 0` of the quadratic through the last three points
/// `(lambda_i, v_i)`; with fewer points, the last value.
pub fn richardson(points: &[(f64, f64)]) -> f64 {
    let k = points.len();
    if k < 3 {
        return points.last().map_or(f64::NAN, |p| p.1);
    }
    let pts = &points[k - 3..];
    // Lagrange interpolation in s = 1/lambda evaluated at s = 0
    let s: Vec<f64> = pts.iter().map(|p| 1.0 / p.0).collect();
    let mut total = 0.0;
    for i in 0..3 {
        let mut w = 1.0;
        for j in 0..3 {
            if i != j {
                w *= s[j] / (s[j] - s[i]);
            }
        }
        total += w * pts[i].1;
    }
    total
}

/// Recover `h` from the `j`-th node over `levels`.
pub fn recover_h(
    x: &NodalSet,
    spectrum: &Spectrum,
    j: usize,
    levels: &[usize],
    q_est: &dyn Fn(f64) -> f64,
    p: &RealFunction,
    mode: HMode,
) -> Result<HRecovery> {
    if x.case_tag == NodalCase::CaseII {
        return Err(CoreError::CaseMismatch(x.case_tag.to_string()));
    }
    if j == 0 {
        return Err(CoreError::InsufficientData { needed: 1, got: 0 });
    }
    let mut points = Vec::with_capacity(levels.len());
    let mut sequence = Vec::with_capacity(levels.len());
    for &n in levels {
        let lambda = spectrum.lambda(n).ok_or(CoreError::MissingLevel { n })?;
        let xs = x.level(n)?;
        let xj = *xs.get(j - 1).ok_or(CoreError::InsufficientData { needed: j, got: xs.len() })?;
        let raw = 2.0 * lambda * PI * (j as f64 - 0.5 - lambda * xj / PI);
        let value = match mode {
            HMode::Paper => raw,
            HMode::Calibrated { kappa } => {
                let f = |t: f64| q_est(t) + 2.0 * lambda * p.value(t);
                let correction = integrate_panels(f, 0.0, xj, 4) + osc_unchecked(f, 2.0 * lambda, Phase::Cos, 0.0, xj);
                (raw + correction) / kappa
            }
        };
        points.push((lambda, value));
        sequence.push((n, value));
    }
    Ok(HRecovery {
        estimate: richardson(&points),
        sequence,
    })
}

/// `n`-th eigenvalue of `p = q = 0`, `H = 0` with `y'(0) = h y(0)`: the root of
/// `lambda sin(lambda pi) = h cos(lambda pi)` in `(n, n + 1/2)` (`h > 0`) or
/// `(n - 1/2, n)` (`h < 0`).
pub fn free_robin_eigenvalue(h: f64, n: usize) -> f64 {
    let nf = n as f64;
    if h == 0.0 {
        return nf;
    }
    let g = |l: f64| l * (l * PI).sin() - h * (l * PI).cos();
    let (mut lo, mut hi) = if h > 0.0 { (nf, nf + 0.5) } else { (nf - 0.5, nf) };
    let lo_sign = g(lo) < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) < 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact `j`-th node of that eigenfunction, `cos(lambda x) + (h/lambda) sin(lambda x) = 0`.
pub fn free_robin_node(h: f64, lambda: f64, j: usize) -> f64 {
    ((j as f64 - 0.5) * PI + (h / lambda).atan()) / lambda
}

/// Ratio of the extrapolated paper-mode estimator to `h` on exact free nodes.
pub fn calibration_constant(h: f64, levels: &[usize]) -> f64 {
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|&n| {
            let lambda = free_robin_eigenvalue(h, n);
            let x1 = free_robin_node(h, lambda, 1);
            (lambda, 2.0 * lambda * PI * (0.5 - lambda * x1 / PI))
        })
        .collect();
    richardson(&points) / h
}

pub const CALIBRATION_LEVELS: [usize; 3] = [16, 32, 64];

/// Calibration constant from the `h = 1/2` free oracle.
pub fn default_kappa() -> f64 {
    static KAPPA: OnceLock<f64> = OnceLock::new();
    *KAPPA.get_or_init(|| calibration_constant(0.5, &CALIBRATION_LEVELS))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalAverage {
    pub n: usize,
    /// `lambda_n int_{x_j}^{x_{j+1}} q`.
    pub raw: f64,
    /// `raw / pi`.
    pub normalized: f64,
}

/// `lambda_n` times the integral of `q` over the nodal interval containing `x`,
/// for every level present in both `X` and the spectrum.
pub fn local_average_check(
    x_set: &NodalSet,
    q: &RealFunction,
    spectrum: &Spectrum,
    x: f64,
) -> Result<Vec<LocalAverage>> {
    if !(x > 0.0 && x < PI) {
        return Err(CoreError::Domain { x });
    }
    let mut out = Vec::new();
    for n in x_set.level_indices() {
        let Some(lambda) = spectrum.lambda(n) else {
            continue;
        };
        let nodes = x_set.level(n)?;
        let j = locate(nodes, x);
        if j == 0 || j >= nodes.len() {
            continue;
        }
        let (a, b) = (nodes[j - 1], nodes[j]);
        let raw = lambda * integrate_panels(|t| q.value(t), a, b, 2);
        out.push(LocalAverage {
            n,
            raw,
            normalized: raw / PI,
        });
    }
    Ok(out)
}
