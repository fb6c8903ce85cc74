//! Closed-form potentials on `[0, pi]`.
//!
//! A [`RealFunction`] is a finite sum of cosines, sines and monomials, so
//! every derivative is available exactly by term-wise differentiation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use crate::error::{CoreError, Result};

/// `f(x) = sum a_k cos(kx) + sum b_k sin(kx) + sum c_d x^d` on `[0, pi]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealFunction {
    cos: Vec<(u32, f64)>,
    sin: Vec<(u32, f64)>,
    poly: Vec<(u32, f64)>,
}

impl RealFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::zero().with_poly(0, c)
    }

    pub fn cos_term(k: u32, a: f64) -> Self {
        Self::zero().with_cos(k, a)
    }

    pub fn sin_term(k: u32, b: f64) -> Self {
        Self::zero().with_sin(k, b)
    }

    /// Adds `a cos(kx)`. Repeated frequencies are merged.
    pub fn with_cos(mut self, k: u32, a: f64) -> Self {
        push_merged(&mut self.cos, k, a);
        self
    }

    /// Adds `b sin(kx)`; `k = 0` contributes nothing and is dropped.
    pub fn with_sin(mut self, k: u32, b: f64) -> Self {
        if k > 0 {
            push_merged(&mut self.sin, k, b);
        }
        self
    }

    pub fn with_poly(mut self, degree: u32, c: f64) -> Self {
        push_merged(&mut self.poly, degree, c);
        self
    }

    pub fn cos_coeffs(&self) -> &[(u32, f64)] {
        &self.cos
    }

    pub fn sin_coeffs(&self) -> &[(u32, f64)] {
        &self.sin
    }

    pub fn poly_coeffs(&self) -> &[(u32, f64)] {
        &self.poly
    }

    /// True when every coefficient vanishes.
    pub fn is_zero(&self) -> bool {
        self.cos
            .iter()
            .chain(&self.sin)
            .chain(&self.poly)
            .all(|&(_, c)| c == 0.0)
    }

    /// The `m`-th derivative at `x`, checked against the domain.
    pub fn eval(&self, x: f64, m: u32) -> Result<f64> {
        if !(0.0..=PI).contains(&x) {
            return Err(CoreError::Domain { x });
        }
        Ok(self.eval_unchecked(x, m))
    }

    /// Value at `x` without the domain check; used in inner loops.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for &(k, a) in &self.cos {
            s += a * (k as f64 * x).cos();
        }
        for &(k, b) in &self.sin {
            s += b * (k as f64 * x).sin();
        }
        for &(d, c) in &self.poly {
            s += c * x.powi(d as i32);
        }
        s
    }

    /// `m`-th derivative without the domain check.
    pub fn eval_unchecked(&self, x: f64, m: u32) -> f64 {
        if m == 0 {
            return self.value(x);
        }
        let shift = m as f64 * FRAC_PI_2;
        let mut s = 0.0;
        for &(k, a) in &self.cos {
            if k > 0 {
                let kf = k as f64;
                s += a * kf.powi(m as i32) * (kf * x + shift).cos();
            }
        }
        for &(k, b) in &self.sin {
            let kf = k as f64;
            s += b * kf.powi(m as i32) * (kf * x + shift).sin();
        }
        for &(d, c) in &self.poly {
            if d >= m {
                let falling: f64 = (d - m + 1..=d).map(|i| i as f64).product();
                s += c * falling * x.powi((d - m) as i32);
            }
        }
        s
    }

    /// Exact derivative as a new function.
    pub fn derivative(&self, m: u32) -> RealFunction {
        let mut out = RealFunction::zero();
        for &(k, a) in &self.cos {
            let (c, s) = rotate(a, 0.0, k, m);
            out = out.with_cos(k, c).with_sin(k, s);
        }
        for &(k, b) in &self.sin {
            let (c, s) = rotate(0.0, b, k, m);
            out = out.with_cos(k, c).with_sin(k, s);
        }
        for &(d, c) in &self.poly {
            if d >= m {
                let falling: f64 = (d - m + 1..=d).map(|i| i as f64).product();
                out = out.with_poly(d - m, c * falling);
            }
        }
        out.pruned()
    }

    /// `self + other`.
    pub fn add(&self, other: &RealFunction) -> RealFunction {
        let mut out = self.clone();
        for &(k, a) in &other.cos {
            out = out.with_cos(k, a);
        }
        for &(k, b) in &other.sin {
            out = out.with_sin(k, b);
        }
        for &(d, c) in &other.poly {
            out = out.with_poly(d, c);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> RealFunction {
        let map = |v: &[(u32, f64)]| v.iter().map(|&(k, c)| (k, c * s)).collect();
        RealFunction {
            cos: map(&self.cos),
            sin: map(&self.sin),
            poly: map(&self.poly),
        }
    }

    /// Crude bound on `sup |f|` over `[0, pi]` (sum of term maxima).
    pub fn sup_bound(&self) -> f64 {
        let trig: f64 = self.cos.iter().chain(&self.sin).map(|(_, c)| c.abs()).sum();
        let poly: f64 = self
            .poly
            .iter()
            .map(|&(d, c)| c.abs() * PI.powi(d as i32))
            .sum();
        trig + poly
    }

    fn pruned(mut self) -> Self {
        for v in [&mut self.cos, &mut self.sin, &mut self.poly] {
            v.retain(|&(_, c)| c != 0.0);
        }
        self
    }

    /// Parses the key-value block `cos = [[k, a], ...]`, `sin = ...`, `poly = ...`.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CoreError::Parse(e.to_string()))?;
        Self::from_table(&table)
    }

    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let mut f = RealFunction::zero();
        for (key, value) in table {
            let pairs = parse_pairs(key, value)?;
            for (k, c) in pairs {
                f = match key.as_str() {
                    "cos" => f.with_cos(k, c),
                    "sin" if k == 0 => {
                        return Err(CoreError::Parse("sin frequency must be >= 1".into()))
                    }
                    "sin" => f.with_sin(k, c),
                    "poly" => f.with_poly(k, c),
                    other => return Err(CoreError::Parse(format!("unknown key `{other}`"))),
                };
            }
        }
        Ok(f)
    }

    /// Renders the key-value block; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, v) in [("cos", &self.cos), ("sin", &self.sin), ("poly", &self.poly)] {
            if v.is_empty() {
                continue;
            }
            let items: Vec<String> = v.iter().map(|(k, c)| format!("[{k}, {c:?}]")).collect();
            out.push_str(&format!("{key} = [{}]\n", items.join(", ")));
        }
        out
    }
}

impl fmt::Display for RealFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        for &(k, a) in &self.cos {
            terms.push(format!("{a}*cos({k}x)"));
        }
        for &(k, b) in &self.sin {
            terms.push(format!("{b}*sin({k}x)"));
        }
        for &(d, c) in &self.poly {
            terms.push(format!("{c}*x^{d}"));
        }
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

fn push_merged(v: &mut Vec<(u32, f64)>, k: u32, c: f64) {
    match v.iter_mut().find(|(kk, _)| *kk == k) {
        Some(entry) => entry.1 += c,
        None => v.push((k, c)),
    }
}

/// Derivative of `a cos(kx) + b sin(kx)`, m times, as new (cos, sin) coefficients.
fn rotate(a: f64, b: f64, k: u32, m: u32) -> (f64, f64) {
    if k == 0 {
        return if m == 0 { (a, 0.0) } else { (0.0, 0.0) };
    }
    let (mut c, mut s) = (a, b);
    let kf = k as f64;
    for _ in 0..m {
        // d/dx [c cos + s sin] = -k c sin + k s cos
        let nc = kf * s;
        let ns = -kf * c;
        c = nc;
        s = ns;
    }
    (c, s)
}

fn parse_pairs(key: &str, value: &toml::Value) -> Result<Vec<(u32, f64)>> {
    let bad = || CoreError::Parse(format!("`{key}` must be a list of [index, coefficient] pairs"));
    let arr = value.as_array().ok_or_else(bad)?;
    arr.iter()
        .map(|item| {
            let pair = item.as_array().filter(|p| p.len() == 2).ok_or_else(bad)?;
            let k = pair[0]
                .as_integer()
                .filter(|k| *k >= 0 && *k <= u32::MAX as i64)
                .ok_or_else(bad)? as u32;
            let c = match &pair[1] {
                toml::Value::Float(c) => *c,
                toml::Value::Integer(c) => *c as f64,
                _ => return Err(bad()),
            };
            if !c.is_finite() {
                return Err(bad());
            }
            Ok((k, c))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_function_evaluates_to_zero() {
        let f = RealFunction::zero();
        assert!(f.is_zero());
        assert_eq!(f.eval(1.0, 0).unwrap(), 0.0);
        assert_eq!(f.eval(2.5, 3).unwrap(), 0.0);
    }

    #[test]
    fn cos_derivative_at_origin() {
        let f = RealFunction::cos_term(2, 1.0);
        assert_abs_diff_eq!(f.eval(0.0, 1).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(0.0, 2).unwrap(), -4.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_value() {
        let f = RealFunction::constant(0.3);
        assert_eq!(f.eval(PI / 2.0, 0).unwrap(), 0.3);
        assert_eq!(f.eval(PI / 2.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn domain_is_enforced() {
        let f = RealFunction::constant(1.0);
        assert!(matches!(f.eval(-1e-9, 0), Err(CoreError::Domain { .. })));
        assert!(f.eval(PI + 1e-9, 0).is_err());
        assert!(f.eval(PI, 0).is_ok());
    }

    #[test]
    fn polynomial_derivatives() {
        let f = RealFunction::zero().with_poly(3, 2.0).with_poly(1, -1.0);
        // f = 2x^3 - x, f' = 6x^2 - 1, f'' = 12x, f''' = 12, f'''' = 0
        assert_abs_diff_eq!(f.eval(1.5, 1).unwrap(), 6.0 * 2.25 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.eval(1.5, 2).unwrap(), 18.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.eval(1.5, 3).unwrap(), 12.0, epsilon = 1e-12);
        assert_eq!(f.eval(1.5, 4).unwrap(), 0.0);
    }

    #[test]
    fn derivative_function_matches_pointwise_derivative() {
        let f = RealFunction::sin_term(3, 1.0)
            .with_cos(1, 0.2)
            .with_poly(2, 0.5);
        for m in 0..4 {
            let g = f.derivative(m);
            for i in 0..=20 {
                let x = PI * i as f64 / 20.0;
                assert_abs_diff_eq!(g.value(x), f.eval_unchecked(x, m), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let f = RealFunction::cos_term(0, 0.3)
            .with_sin(3, -1.25)
            .with_poly(2, 1e-3);
        let back = RealFunction::parse(&f.to_text()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn parse_accepts_integer_coefficients_and_rejects_garbage() {
        let f = RealFunction::parse("sin = [[3, 1]]\npoly = [[0, 0.5]]").unwrap();
        assert_abs_diff_eq!(f.value(PI / 6.0), 1.5, epsilon = 1e-14);
        assert!(RealFunction::parse("tan = [[1, 1.0]]").is_err());
        assert!(RealFunction::parse("sin = [[0, 1.0]]").is_err());
        assert!(RealFunction::parse("cos = [1, 2]").is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let f = RealFunction::sin_term(3, 1.0)
            .with_cos(2, -0.4)
            .with_poly(3, 0.05);
        let h = 1e-5;
        for m in 1..4 {
            for i in 1..20 {
                let x = PI * i as f64 / 20.0;
                let fd = (f.eval_unchecked(x + h, m - 1) - f.eval_unchecked(x - h, m - 1)) / (2.0 * h);
                assert_abs_diff_eq!(f.eval_unchecked(x, m), fd, epsilon = 1e-6);
            }
        }
    }
}
