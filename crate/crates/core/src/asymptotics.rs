//! Closed asymptotic forms for eigenvalues and nodes, and the case (I)/(II)
//! classification of nodal double sequences.

use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::function::RealFunction;
use crate::nodal::{NodalCase, NodalSet};
use crate::problem::{BoundaryCase, PencilProblem};
use crate::quadrature::{integrate_panels, osc_unchecked, Phase};

/// `lambda_n ~ n + c0 + c1/n` (Robin start) or
/// `lambda_n ~ (n + 1/2) + c0 + c1/(n + 1/2)` (Dirichlet start).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalAsymptotics {
    pub c0: f64,
    pub c1: f64,
    pub case: BoundaryCase,
}

fn highest_frequency(f: &RealFunction) -> u32 {
    f.cos_coeffs()
        .iter()
        .chain(f.sin_coeffs())
        .map(|&(k, _)| k)
        .max()
        .unwrap_or(0)
}

fn integrate_full<F: Fn(f64) -> f64>(f: F, freq: u32) -> f64 {
    integrate_panels(f, 0.0, PI, (8 * freq as usize).max(32))
}

/// `c0 = (1/pi) int p`, `c1 = (1/pi) [h + H + (1/2) int (q + p^2)]`.
///
/// For the Dirichlet start `h` drops out of `c1`.
pub fn compute_c0_c1(problem: &PencilProblem) -> NodalAsymptotics {
    let freq = 2 * highest_frequency(&problem.p).max(highest_frequency(&problem.q));
    let p_mean = integrate_full(|x| problem.p.value(x), freq);
    let half_energy = 0.5
        * integrate_full(
            |x| {
                let p = problem.p.value(x);
                problem.q.value(x) + p * p
            },
            freq,
        );
    let h = match problem.case {
        BoundaryCase::Robin => problem.h,
        BoundaryCase::Dirichlet => 0.0,
    };
    NodalAsymptotics {
        c0: p_mean / PI,
        c1: (h + problem.big_h + half_energy) / PI,
        case: problem.case,
    }
}

fn leading_index(case: BoundaryCase, n: usize) -> f64 {
    match case {
        BoundaryCase::Robin => n as f64,
        BoundaryCase::Dirichlet => n as f64 + 0.5,
    }
}

/// `n + c0 + c1/n`, shifted by one half for the Dirichlet start.
pub fn lambda_asymptotic(n: usize, asym: &NodalAsymptotics) -> f64 {
    let m = leading_index(asym.case, n);
    m + asym.c0 + asym.c1 / m
}

/// Bracket centre for the eigenvalue search; never below a small positive floor.
pub fn lambda_seed(asym: &NodalAsymptotics, case: BoundaryCase, n: usize) -> f64 {
    let m = leading_index(case, n);
    let seed = m + asym.c0 + asym.c1 / m;
    if seed.is_finite() && seed > 0.1 {
        seed
    } else {
        m.max(0.1)
    }
}

/// The `h`-dependent node shift used by the Robin nodal expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HShift {
    /// `-h / (2 lambda^2)`, the classical printed form.
    AsPrinted,
    /// `+h / lambda^2`, the shift of the exact `p = q = 0` nodes under `y'(0) = h y(0)`.
    #[default]
    Calibrated,
}

impl HShift {
    pub fn apply(self, h: f64, lambda: f64) -> f64 {
        match self {
            HShift::AsPrinted => -h / (2.0 * lambda * lambda),
            HShift::Calibrated => h / (lambda * lambda),
        }
    }
}

/// Asymptotic nodes and lengths at a given eigenvalue.
///
/// `x_j = x_j^0 + shift + (1/(2 lambda^2)) int_0^{x_j^0} [1 +- cos 2 lambda t] (q + 2 lambda p) dt`,
/// with `x_j^0 = (j - 1/2) pi / lambda` (Robin, `+`) or `j pi / lambda` (Dirichlet, `-`);
/// the self-referential upper limit is replaced by the leading term. Lengths
/// integrate the same kernel between consecutive asymptotic nodes.
pub fn nodes_asymptotic(
    problem: &PencilProblem,
    lambda: f64,
    n: usize,
    shift: HShift,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CoreError::Domain { x: lambda });
    }
    let (offset, sign, h_shift) = match problem.case {
        BoundaryCase::Robin => (0.5, 1.0, shift.apply(problem.h, lambda)),
        BoundaryCase::Dirichlet => (0.0, -1.0, 0.0),
    };
    let omega = 2.0 * lambda;
    let effective = |t: f64| problem.q.value(t) + 2.0 * lambda * problem.p.value(t);
    let kernel_integral = |a: f64, b: f64| -> f64 {
        if b <= a {
            return 0.0;
        }
        let plain = integrate_panels(effective, a, b, ((b - a) * 16.0 / PI).ceil().max(1.0) as usize);
        plain + sign * osc_unchecked(effective, omega, Phase::Cos, a, b)
    };
    let scale = 0.5 / (lambda * lambda);

    let leading: Vec<f64> = (1..=n)
        .map(|j| (j as f64 - offset) * PI / lambda)
        .take_while(|&x| x < PI)
        .collect();
    let mut nodes = Vec::with_capacity(leading.len());
    let mut cumulative = 0.0;
    let mut prev = 0.0;
    for &x0 in &leading {
        cumulative += kernel_integral(prev, x0);
        prev = x0;
        nodes.push(x0 + h_shift + scale * cumulative);
    }
    let lengths = nodes
        .windows(2)
        .map(|w| PI / lambda + scale * kernel_integral(w[0].clamp(0.0, PI), w[1].clamp(0.0, PI)))
        .collect();
    Ok((nodes, lengths))
}

/// Thresholds for [`classify_case`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyConfig {
    /// Trailing levels inspected.
    pub window: usize,
    /// Bounded if the trailing max of `n^2 r_n` is at most this multiple of its median...
    pub max_over_median: f64,
    /// ...and its log-log slope in `n` does not exceed this.
    pub max_slope: f64,
    /// `n^2 r_n` below this everywhere counts as bounded outright.
    pub floor: f64,
    /// Fallback when neither pattern is `O(1/n^2)`: residual in units of the
    /// mean spacing must stay below this for exactly one pattern.
    pub spacing_fraction: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            window: 5,
            max_over_median: 10.0,
            max_slope: 0.5,
            floor: 1e-8,
            spacing_fraction: 0.25,
        }
    }
}

/// Residuals of one level against both patterns, after fitting the scale
/// `nu = (K - 1) pi / (X_K - X_1)` that plays the role of `n`.
fn pattern_residuals(xs: &[f64]) -> Option<(f64, [f64; 2])> {
    let k = xs.len();
    if k < 2 {
        return None;
    }
    let nu = (k - 1) as f64 * PI / (xs[k - 1] - xs[0]);
    let mut r = [0.0f64; 2];
    for (i, &x) in xs.iter().enumerate() {
        let idx = (i + 1) as f64;
        r[0] = r[0].max((x - (idx - 0.5) * PI / nu).abs());
        r[1] = r[1].max((x - idx * PI / nu).abs());
    }
    Some((nu, r))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn bounded(series: &[(f64, f64)], cfg: &ClassifyConfig) -> bool {
    if series.iter().all(|(_, v)| *v <= cfg.floor) {
        return true;
    }
    let tail = &series[series.len().saturating_sub(cfg.window)..];
    let values: Vec<f64> = tail.iter().map(|p| p.1).collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    max <= cfg.max_over_median * median(&values) && log_log_slope(tail) <= cfg.max_slope
}

/// Decide whether `X` follows the case (I) or case (II) pattern.
///
/// Primary test: `n^2 r_n` bounded for exactly one pattern. When neither is
/// (nodes of problems with non-constant `p` drift by `O(1/n)` from any
/// equispaced pattern), the pattern whose trailing residual stays a small
/// fraction of the mean spacing wins. `Unknown` means indeterminate.
pub fn classify_case(x: &NodalSet, cfg: &ClassifyConfig) -> Result<NodalCase> {
    const MIN_LEVELS: usize = 5;
    let mut scaled: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut spacing: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for n in x.level_indices() {
        let Some((nu, r)) = pattern_residuals(x.level(n)?) else {
            continue;
        };
        let nf = n as f64;
        for c in 0..2 {
            scaled[c].push((nf, nf * nf * r[c]));
            spacing[c].push(nu * r[c] / PI);
        }
    }
    if scaled[0].len() < MIN_LEVELS {
        return Err(CoreError::InsufficientData {
            needed: MIN_LEVELS,
            got: scaled[0].len(),
        });
    }
    let pick = |flags: [bool; 2]| match flags {
        [true, false] => Some(NodalCase::CaseI),
        [false, true] => Some(NodalCase::CaseII),
        _ => None,
    };
    if let Some(case) = pick([bounded(&scaled[0], cfg), bounded(&scaled[1], cfg)]) {
        return Ok(case);
    }
    let tail_max = |s: &[f64]| s[s.len().saturating_sub(cfg.window)..].iter().copied().fold(0.0, f64::max);
    let near = [
        tail_max(&spacing[0]) <= cfg.spacing_fraction,
        tail_max(&spacing[1]) <= cfg.spacing_fraction,
    ];
    Ok(pick(near).unwrap_or(NodalCase::Unknown))
}
