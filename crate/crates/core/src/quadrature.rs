//! Composite Gauss-Legendre quadrature on subintervals of `[0, pi]`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{CoreError, Result};
use crate::function::RealFunction;

/// Points per Gauss-Legendre panel.
pub const GAUSS_POINTS: usize = 10;
/// Panels per length `pi` at the default resolution.
pub const PANELS_PER_PI: f64 = 16.0;
/// Panels per oscillation period for oscillatory integrands.
pub const PANELS_PER_PERIOD: f64 = 10.0;
/// Scan resolution used to find kinks of `|f - g|`.
pub const SIGN_SCAN_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cos,
    Sin,
}

/// Nodes and weights of the n-point rule on `[-1, 1]`, by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn default_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GAUSS_POINTS))
}

/// Composite rule with `panels` equal panels; no domain checks.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b == a {
        return 0.0;
    }
    let (nodes, weights) = default_rule();
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        let mut s = 0.0;
        for (t, w) in nodes.iter().zip(weights) {
            s += w * f(mid + half * t);
        }
        total += half * s;
    }
    total
}

pub fn default_panels(a: f64, b: f64) -> usize {
    ((PANELS_PER_PI * (b - a) / PI).ceil() as usize).max(1)
}

fn oscillatory_panels(omega: f64, a: f64, b: f64) -> usize {
    let periods = omega * (b - a) / (2.0 * PI);
    default_panels(a, b).max((PANELS_PER_PERIOD * periods).ceil() as usize)
}

fn check_bounds(a: f64, b: f64) -> Result<()> {
    if !(0.0..=PI).contains(&a) || !(0.0..=PI).contains(&b) || a > b {
        return Err(CoreError::Bounds { a, b });
    }
    Ok(())
}

/// `int_a^b f` at the default resolution, `0 <= a <= b <= pi`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    check_bounds(a, b)?;
    Ok(integrate_panels(f, a, b, default_panels(a, b)))
}

/// `int_a^b f(t) cos(omega t) dt` (or `sin`), resolving every oscillation.
pub fn integrate_osc<F: Fn(f64) -> f64>(
    f: F,
    omega: f64,
    phase: Phase,
    a: f64,
    b: f64,
) -> Result<f64> {
    check_bounds(a, b)?;
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(CoreError::Parse(format!("frequency must be finite and >= 0, got {omega}")));
    }
    Ok(osc_unchecked(f, omega, phase, a, b))
}

pub(crate) fn osc_unchecked<F: Fn(f64) -> f64>(f: F, omega: f64, phase: Phase, a: f64, b: f64) -> f64 {
    let panels = oscillatory_panels(omega, a, b);
    match phase {
        Phase::Cos => integrate_panels(|t| f(t) * (omega * t).cos(), a, b, panels),
        Phase::Sin => integrate_panels(|t| f(t) * (omega * t).sin(), a, b, panels),
    }
}

/// `int_a^b |f^(m) - g^(m)|`, split at the sign changes of the difference.
pub fn l1_distance(f: &RealFunction, g: &RealFunction, m: u32, a: f64, b: f64) -> Result<f64> {
    check_bounds(a, b)?;
    let diff = |x: f64| f.eval_unchecked(x, m) - g.eval_unchecked(x, m);
    Ok(abs_integral(diff, a, b))
}

/// `int_a^b |d|` for a smooth `d`, splitting at roots found on a uniform scan.
pub fn abs_integral<F: Fn(f64) -> f64>(d: F, a: f64, b: f64) -> f64 {
    abs_integral_with(d, a, b, SIGN_SCAN_POINTS)
}

/// [`abs_integral`] with a caller-chosen scan resolution.
pub fn abs_integral_with<F: Fn(f64) -> f64>(d: F, a: f64, b: f64, scan: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let scan = scan.max(1);
    let step = (b - a) / scan as f64;
    let mut breaks = vec![a];
    let mut x0 = a;
    let mut d0 = d(a);
    for i in 1..=scan {
        let x1 = if i == scan { b } else { a + i as f64 * step };
        let d1 = d(x1);
        if d0 != 0.0 && d1 != 0.0 && (d0 < 0.0) != (d1 < 0.0) {
            breaks.push(bisect_root(&d, x0, x1, d0));
        } else if d1 == 0.0 && i < scan {
            breaks.push(x1);
        }
        x0 = x1;
        d0 = d1;
    }
    breaks.push(b);
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let panels = default_panels(w[0], w[1]);
            integrate_panels(|x| d(x).abs(), w[0], w[1], panels)
        })
        .sum()
}

fn bisect_root<F: Fn(f64) -> f64>(d: &F, mut lo: f64, mut hi: f64, d_lo: f64) -> f64 {
    let lo_negative = d_lo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (d(mid) < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(GAUSS_POINTS);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        // degree 18 monomial: int_{-1}^{1} t^18 = 2/19
        let s: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(18)).sum();
        assert_abs_diff_eq!(s, 2.0 / 19.0, epsilon = 1e-14);
    }

    #[test]
    fn plain_examples() {
        assert_abs_diff_eq!(integrate(|_| 1.0, 0.0, PI).unwrap(), PI, epsilon = 1e-13);
        assert_abs_diff_eq!(integrate(|x| (2.0 * x).cos(), 0.0, PI).unwrap(), 0.0, epsilon = 1e-13);
        // antiderivative of sin^2(3x) is x/2 - sin(6x)/12
        let exact = PI / 2.0;
        assert_abs_diff_eq!(
            integrate(|x| (3.0 * x).sin().powi(2), 0.0, PI).unwrap(),
            exact,
            epsilon = 1e-10
        );
    }

    #[test]
    fn bounds_are_validated() {
        assert!(integrate(|_| 1.0, 1.0, 0.5).is_err());
        assert!(integrate(|_| 1.0, -0.1, 0.5).is_err());
        assert!(integrate_osc(|_| 1.0, 1.0, Phase::Cos, 0.0, 4.0).is_err());
        assert!(l1_distance(&RealFunction::zero(), &RealFunction::zero(), 0, 0.0, 3.5).is_err());
    }

    #[test]
    fn oscillatory_examples() {
        for n in 1..30 {
            let w = 2.0 * n as f64;
            assert_abs_diff_eq!(integrate_osc(|_| 1.0, w, Phase::Cos, 0.0, PI).unwrap(), 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(integrate_osc(|_| 1.0, 0.0, Phase::Cos, 0.0, PI).unwrap(), PI, epsilon = 1e-13);
        // integration by parts: int_0^pi x sin(50x) = -pi cos(50 pi)/50
        let exact = -PI * (50.0 * PI).cos() / 50.0;
        assert_abs_diff_eq!(integrate_osc(|x| x, 50.0, Phase::Sin, 0.0, PI).unwrap(), exact, epsilon = 1e-9);
        assert_abs_diff_eq!(exact, -PI / 50.0, epsilon = 1e-15);
    }

    #[test]
    fn high_frequency_against_closed_form() {
        // int_0^pi e^{x/3} cos(w x) dx in closed form
        let w = 257.0;
        let a = 1.0 / 3.0;
        let exact = ((a * PI).exp() * (a * (w * PI).cos() + w * (w * PI).sin()) - a) / (a * a + w * w);
        let got = integrate_osc(|x| (a * x).exp(), w, Phase::Cos, 0.0, PI).unwrap();
        assert_abs_diff_eq!(got, exact, epsilon = 1e-9);
    }

    #[test]
    fn zero_frequency_matches_plain_rule() {
        let f = |x: f64| (x * 1.3).sin() + x * x;
        for (a, b) in [(0.0, PI), (0.2, 1.7), (1.0, 1.0)] {
            let p = integrate(f, a, b).unwrap();
            let o = integrate_osc(f, 0.0, Phase::Cos, a, b).unwrap();
            assert!((p - o).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn l1_examples() {
        let s = RealFunction::sin_term(1, 1.0);
        let z = RealFunction::zero();
        assert_eq!(l1_distance(&s, &s, 0, 0.0, PI).unwrap(), 0.0);
        assert_abs_diff_eq!(l1_distance(&s, &z, 0, 0.0, PI).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l1_distance(&s, &z, 1, 0.0, PI).unwrap(), 2.0, epsilon = 1e-12);
        // |cos 3x| over [0, pi] integrates to 2
        let c3 = RealFunction::cos_term(3, 1.0);
        assert_abs_diff_eq!(l1_distance(&c3, &z, 0, 0.0, PI).unwrap(), 2.0, epsilon = 1e-12);
    }
}
