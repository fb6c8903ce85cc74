//! Nodal stability functionals `S_n`, `S_{m,n}` and their finite-data limsups.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{classify_case, log_log_slope, ClassifyConfig};
use crate::error::{CoreError, Result};
use crate::function::RealFunction;
use crate::nodal::{difference_quotient, locate, NodalCase, NodalSet};
use crate::quadrature::l1_distance;
use crate::FORMAT_VERSION;

pub const DEFAULT_WINDOW: usize = 8;

/// Weight on the nodal-length sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    /// `n^2 pi` in `S_n`, `lambda^{1/2}` in `S_{m,n}`.
    Printed,
    /// `n^2` in `S_n`, `lambda^2` in `S_{m,n}`: the weights under which the
    /// limits equal half the `L1` distance of the potentials.
    #[default]
    Corrected,
}

fn padded(xs: &[f64], len: usize) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.resize(len, PI);
    v
}

fn lengths(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

fn length_weight(n: usize, weights: Weights) -> f64 {
    let nf = n as f64;
    match weights {
        Weights::Printed => nf * nf * PI,
        Weights::Corrected => nf * nf,
    }
}

/// `S_n = w_n sum_k |L_k - Lbar_k| + n int_0^pi |p - pbar|`, the shorter level
/// padded with `X_k = pi`.
pub fn s_n(
    x: &NodalSet,
    xbar: &NodalSet,
    p: &RealFunction,
    pbar: &RealFunction,
    n: usize,
    weights: Weights,
) -> Result<f64> {
    let (a, b) = (x.level(n)?, xbar.level(n)?);
    let len = a.len().max(b.len());
    let (la, lb) = (lengths(&padded(a, len)), lengths(&padded(b, len)));
    let sum: f64 = la.iter().zip(&lb).map(|(u, v)| (u - v).abs()).sum();
    Ok(length_weight(n, weights) * sum + n as f64 * l1_distance(p, pbar, 0, 0.0, PI)?)
}

/// Same quantity as [`s_n`], computed by truncating to the common node count
/// and adding the boundary terms the padding would have produced.
pub fn s_n_truncated(
    x: &NodalSet,
    xbar: &NodalSet,
    p: &RealFunction,
    pbar: &RealFunction,
    n: usize,
    weights: Weights,
) -> Result<f64> {
    let (a, b) = (x.level(n)?, xbar.level(n)?);
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let k = short.len();
    let mut sum: f64 = lengths(short)
        .iter()
        .zip(lengths(&long[..k]))
        .map(|(u, v)| (u - v).abs())
        .sum();
    if long.len() > k && k > 0 {
        // the padded short level jumps to pi where the long one continues
        sum += ((PI - short[k - 1]) - (long[k] - long[k - 1])).abs();
        sum += lengths(&long[k..]).iter().sum::<f64>();
    }
    Ok(length_weight(n, weights) * sum + n as f64 * l1_distance(p, pbar, 0, 0.0, PI)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimsupEstimate {
    pub value: f64,
    /// Log-log slope of the trailing window, a stabilization diagnostic.
    pub slope: f64,
}

/// Maximum of the trailing `window` values.
pub fn limsup_estimate(values: &[(usize, f64)], window: usize) -> Result<LimsupEstimate> {
    if window == 0 || values.len() < window {
        return Err(CoreError::InsufficientData {
            needed: window.max(1),
            got: values.len(),
        });
    }
    let tail = &values[values.len() - window..];
    let value = tail.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = tail.iter().map(|&(n, v)| (n as f64, v)).collect();
    Ok(LimsupEstimate {
        value,
        slope: log_log_slope(&pts),
    })
}

/// `x / (1 + x)`, with `x = inf` mapped to `1`.
pub fn to_dsigma(d0: f64) -> f64 {
    if d0.is_infinite() {
        1.0
    } else {
        d0 / (1.0 + d0)
    }
}

/// Inverse of [`to_dsigma`].
pub fn from_dsigma(ds: f64) -> f64 {
    if ds >= 1.0 {
        f64::INFINITY
    } else {
        ds / (1.0 - ds)
    }
}

/// Case used for the metric short-circuit: the classified case when it is
/// decisive, otherwise the stored tag.
pub fn effective_case(x: &NodalSet, cfg: &ClassifyConfig) -> NodalCase {
    match classify_case(x, cfg) {
        Ok(NodalCase::Unknown) | Err(_) => x.case_tag,
        Ok(c) => c,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsigmaEstimate {
    pub per_n: Vec<(usize, f64)>,
    /// `None` when the sets belong to different cases (the distance is unbounded).
    pub d0_hat: Option<f64>,
    pub dsigma_hat: f64,
    pub slope: f64,
    pub same_case: bool,
}

/// `(d0, d_Sigma)` estimated over `levels` with a trailing window.
#[allow(clippy::too_many_arguments)]
pub fn dsigma(
    x: &NodalSet,
    xbar: &NodalSet,
    p: &RealFunction,
    pbar: &RealFunction,
    levels: &[usize],
    window: usize,
    weights: Weights,
    cfg: &ClassifyConfig,
) -> Result<DsigmaEstimate> {
    let (ca, cb) = (effective_case(x, cfg), effective_case(xbar, cfg));
    if ca != cb && ca != NodalCase::Unknown && cb != NodalCase::Unknown {
        return Ok(DsigmaEstimate {
            per_n: Vec::new(),
            d0_hat: None,
            dsigma_hat: 1.0,
            slope: 0.0,
            same_case: false,
        });
    }
    let per_n = levels
        .iter()
        .map(|&n| s_n(x, xbar, p, pbar, n, weights).map(|s| (n, s)))
        .collect::<Result<Vec<_>>>()?;
    let est = limsup_estimate(&per_n, window)?;
    Ok(DsigmaEstimate {
        per_n,
        d0_hat: Some(est.value),
        dsigma_hat: to_dsigma(est.value),
        slope: est.slope,
        same_case: true,
    })
}

/// `delta^m` of `p` sampled at the nodes; identically zero for `p = 0`.
fn p_quotients(p: &RealFunction, nodes: &[f64], m: usize) -> Result<Vec<f64>> {
    if p.is_zero() {
        return Ok(vec![0.0; nodes.len().saturating_sub(m)]);
    }
    let samples: Vec<f64> = nodes.iter().map(|&t| p.value(t)).collect();
    difference_quotient(&samples, m)
}

/// Terms of `S_{m,n}` kept separately for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmnTerms {
    pub lengths: f64,
    pub node_p: f64,
    pub derivative_p: f64,
}

impl SmnTerms {
    pub fn total(&self) -> f64 {
        self.lengths + self.node_p + self.derivative_p
    }
}

/// The three terms of `S_{m,n}` at eigenvalue `lambda`:
/// `w sum_{k <= K-m-2} |delta^m L_k - delta^m Lbar_k|`
/// `+ lambda int_{X_1}^{X_{K-m-1}} |delta^m pbar(x_Jbar) - delta^m p(x_J)|`
/// `+ lambda int_0^pi |pbar^(m) - p^(m)|`.
#[allow(clippy::too_many_arguments)]
pub fn s_mn_terms(
    x: &NodalSet,
    xbar: &NodalSet,
    p: &RealFunction,
    pbar: &RealFunction,
    m: u32,
    n: usize,
    lambda: f64,
    weights: Weights,
) -> Result<SmnTerms> {
    let mu = m as usize;
    if m == 0 {
        return Err(CoreError::InsufficientData { needed: 1, got: 0 });
    }
    let (a, b) = (x.level(n)?, xbar.level(n)?);
    // padding with pi would make later lengths vanish and the quotients
    // undefined, so both levels are cut to the common count
    let k = a.len().min(b.len());
    if k < mu + 3 {
        return Err(CoreError::InsufficientData {
            needed: mu + 3,
            got: k,
        });
    }
    let (a, b) = (&a[..k], &b[..k]);
    let da = difference_quotient(&lengths(a), mu)?;
    let db = difference_quotient(&lengths(b), mu)?;
    let upper = k - mu - 2;
    let w = match weights {
        Weights::Printed => lambda.sqrt(),
        Weights::Corrected => lambda * lambda,
    };
    let length_term = w * da[..upper].iter().zip(&db[..upper]).map(|(u, v)| (u - v).abs()).sum::<f64>();

    let pa = p_quotients(p, a, mu)?;
    let pb = p_quotients(pbar, b, mu)?;
    let (lo, hi) = (a[0], a[k - mu - 2]);
    let mut breaks: Vec<f64> = a.iter().chain(b).copied().filter(|t| *t > lo && *t < hi).collect();
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut node_term = 0.0;
    for w2 in breaks.windows(2) {
        let mid = 0.5 * (w2[0] + w2[1]);
        let (ja, jb) = (locate(a, mid), locate(b, mid));
        if ja == 0 || jb == 0 {
            continue;
        }
        let (Some(u), Some(v)) = (pa.get(ja - 1), pb.get(jb - 1)) else {
            continue;
        };
        node_term += (v - u).abs() * (w2[1] - w2[0]);
    }
    Ok(SmnTerms {
        lengths: length_term,
        node_p: lambda * node_term,
        derivative_p: lambda * l1_distance(pbar, p, m, 0.0, PI)?,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn s_mn(
    x: &NodalSet,
    xbar: &NodalSet,
    p: &RealFunction,
    pbar: &RealFunction,
    m: u32,
    n: usize,
    lambda: f64,
    weights: Weights,
) -> Result<f64> {
    s_mn_terms(x, xbar, p, pbar, m, n, lambda, weights).map(|t| t.total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderMetrics {
    pub values: Vec<(usize, f64)>,
    pub dm_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub weights: Weights,
    pub per_n: Vec<(usize, f64)>,
    /// `None` encodes an unbounded distance (different cases).
    pub d0_hat: Option<f64>,
    pub dsigma_hat: f64,
    pub per_m: BTreeMap<u32, OrderMetrics>,
    pub window: usize,
    pub verdict_same_case: bool,
}

impl MetricReport {
    pub fn from_estimate(est: &DsigmaEstimate, window: usize, weights: Weights) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            weights,
            per_n: est.per_n.clone(),
            d0_hat: est.d0_hat,
            dsigma_hat: est.dsigma_hat,
            per_m: BTreeMap::new(),
            window,
            verdict_same_case: est.same_case,
        }
    }

    /// `n, S_n, S_1_n, ...`; missing entries are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,S_n");
        for m in self.per_m.keys() {
            out.push_str(&format!(",S_{m}_n"));
        }
        out.push('\n');
        let mut rows: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
        let cols = self.per_m.len() + 1;
        for &(n, s) in &self.per_n {
            rows.entry(n).or_insert_with(|| vec![None; cols])[0] = Some(s);
        }
        for (c, om) in self.per_m.values().enumerate() {
            for &(n, s) in &om.values {
                rows.entry(n).or_insert_with(|| vec![None; cols])[c + 1] = Some(s);
            }
        }
        for (n, vals) in rows {
            out.push_str(&n.to_string());
            for v in vals {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelfCheckReport {
    /// `dsigma_hat` for every ordered pair `(a, b)`.
    pub distances: Vec<Vec<f64>>,
    pub max_index_deviation: usize,
    /// Level at which the index deviation was measured.
    pub deviation_level: Option<usize>,
    pub violations: Vec<String>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const TRIANGLE_SLACK: f64 = 1e-12;
pub const INDEX_GRID: usize = 1000;

/// Pseudometric axioms of `d_Sigma` on all pairs and triples, plus the bound
/// `|J_n(z) - Jbar_n(z)| <= 1` at the largest common level of same-case pairs.
/// Violations are collected, never raised.
pub fn pseudometric_selfcheck(
    sets: &[(&NodalSet, &RealFunction)],
    levels: &[usize],
    window: usize,
    weights: Weights,
    cfg: &ClassifyConfig,
) -> Result<SelfCheckReport> {
    let k = sets.len();
    let mut report = SelfCheckReport::default();
    if k < 3 {
        report.violations.push(format!("need at least 3 sets, got {k}"));
        return Ok(report);
    }
    let mut d = vec![vec![0.0; k]; k];
    let mut same = vec![vec![true; k]; k];
    for i in 0..k {
        for j in 0..k {
            let est = dsigma(sets[i].0, sets[j].0, sets[i].1, sets[j].1, levels, window, weights, cfg)?;
            d[i][j] = est.dsigma_hat;
            same[i][j] = est.same_case;
        }
    }
    for i in 0..k {
        if d[i][i] != 0.0 {
            report.violations.push(format!("d(X{i}, X{i}) = {} != 0", d[i][i]));
        }
        for j in 0..k {
            if d[i][j] < 0.0 {
                report.violations.push(format!("d(X{i}, X{j}) = {} < 0", d[i][j]));
            }
            if d[i][j] != d[j][i] {
                report.violations.push(format!("d(X{i}, X{j}) = {} != d(X{j}, X{i}) = {}", d[i][j], d[j][i]));
            }
            for l in 0..k {
                if d[i][l] > d[i][j] + d[j][l] + TRIANGLE_SLACK {
                    report.violations.push(format!(
                        "triangle inequality fails for ({i}, {j}, {l}): {} > {} + {}",
                        d[i][l], d[i][j], d[j][l]
                    ));
                }
            }
        }
    }
    if let Some(&top) = levels.iter().filter(|&&n| sets.iter().all(|s| s.0.has_level(n))).max() {
        report.deviation_level = Some(top);
        for i in 0..k {
            for j in i + 1..k {
                if !same[i][j] {
                    continue;
                }
                let dev = max_index_deviation(sets[i].0, sets[j].0, top)?;
                report.max_index_deviation = report.max_index_deviation.max(dev);
                if dev > 1 {
                    report
                        .violations
                        .push(format!("|J - Jbar| = {dev} > 1 between X{i} and X{j} at n = {top}"));
                }
            }
        }
    }
    report.distances = d;
    Ok(report)
}

/// `max_z |J_n(z) - Jbar_n(z)|` over a uniform grid of `INDEX_GRID` points.
pub fn max_index_deviation(x: &NodalSet, xbar: &NodalSet, n: usize) -> Result<usize> {
    let (a, b) = (x.level(n)?, xbar.level(n)?);
    Ok((0..INDEX_GRID)
        .map(|i| {
            let z = (i as f64 + 0.5) * PI / INDEX_GRID as f64;
            locate(a, z).abs_diff(locate(b, z))
        })
        .max()
        .unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodal::NodalSource;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn free(levels: std::ops::RangeInclusive<usize>) -> NodalSet {
        NodalSet::free(levels, NodalCase::CaseI).unwrap()
    }

    #[test]
    fn identical_sets_vanish() {
        let x = free(10..=20);
        let z = RealFunction::zero();
        assert_eq!(s_n(&x, &x, &z, &z, 12, Weights::Printed).unwrap(), 0.0);
        assert_eq!(s_mn(&x, &x, &z, &z, 1, 12, 12.0, Weights::Printed).unwrap(), 0.0);
        let est = dsigma(&x, &x, &z, &z, &(10..=20).collect::<Vec<_>>(), 8, Weights::Printed, &ClassifyConfig::default()).unwrap();
        assert_eq!((est.d0_hat, est.dsigma_hat), (Some(0.0), 0.0));
    }

    #[test]
    fn shifted_boundary_lengths() {
        // move the first node left and the last node right by eps
        let n = 10;
        let eps = 1e-3 / (n * n) as f64;
        let x = free(n..=n);
        let mut shifted = x.level(n).unwrap().to_vec();
        shifted[0] -= eps;
        shifted[n - 1] += eps;
        let y = NodalSet::from_levels([(n, shifted)], NodalCase::CaseI, NodalSource::Synthetic).unwrap();
        let z = RealFunction::zero();
        let s = s_n(&x, &y, &z, &z, n, Weights::Printed).unwrap();
        assert_abs_diff_eq!(s, 2.0 * PI * 1e-3, epsilon = 1e-12);
    }

    #[test]
    fn case_one_vs_case_two_is_maximal() {
        let a = free(10..=30);
        let b = NodalSet::free(10..=30, NodalCase::CaseII).unwrap();
        let z = RealFunction::zero();
        let levels: Vec<usize> = (10..=30).collect();
        let est = dsigma(&a, &b, &z, &z, &levels, 8, Weights::Corrected, &ClassifyConfig::default()).unwrap();
        assert_eq!(est.dsigma_hat, 1.0);
        assert!(!est.same_case);
        assert_eq!(est.d0_hat, None);
    }

    #[test]
    fn limsup_examples() {
        let c: Vec<(usize, f64)> = (1..=10).map(|n| (n, 2.5)).collect();
        assert_eq!(limsup_estimate(&c, 8).unwrap().value, 2.5);
        let s: Vec<(usize, f64)> = (1..=20).map(|n| (n, 1.0 + 1.0 / n as f64)).collect();
        assert_eq!(limsup_estimate(&s, 8).unwrap().value, 1.0 + 1.0 / 13.0);
        assert!(limsup_estimate(&s[..5], 8).is_err());
        assert_eq!(to_dsigma(3.0), 0.75);
    }

    #[test]
    fn csv_layout() {
        let mut r = MetricReport {
            format_version: FORMAT_VERSION,
            weights: Weights::Corrected,
            per_n: vec![(1, 0.5), (2, 0.25)],
            d0_hat: Some(0.5),
            dsigma_hat: to_dsigma(0.5),
            per_m: BTreeMap::new(),
            window: 2,
            verdict_same_case: true,
        };
        r.per_m.insert(
            1,
            OrderMetrics {
                values: vec![(2, 1.5)],
                dm_hat: 1.5,
            },
        );
        assert_eq!(r.to_csv(), "n,S_n,S_1_n\n1,0.5,\n2,0.25,1.5\n");
    }

    #[test]
    fn selfcheck_on_copies() {
        let x = free(10..=20);
        let z = RealFunction::zero();
        let levels: Vec<usize> = (10..=20).collect();
        let r = pseudometric_selfcheck(&[(&x, &z), (&x, &z), (&x, &z)], &levels, 8, Weights::Corrected, &ClassifyConfig::default()).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert_eq!(r.max_index_deviation, 0);
        assert!(r.distances.iter().flatten().all(|d| *d == 0.0));
    }

    fn perturbed_level(n: usize, seeds: &[f64]) -> Vec<f64> {
        (1..=n)
            .map(|k| (k as f64 - 0.5) * PI / n as f64 + 0.2 / (n * n) as f64 * seeds[k % seeds.len()])
            .collect()
    }

    proptest! {
        #[test]
        fn s_n_is_symmetric(a in prop::collection::vec(-1.0f64..1.0, 5), b in prop::collection::vec(-1.0f64..1.0, 5), n in 3usize..30) {
            let x = NodalSet::from_levels([(n, perturbed_level(n, &a))], NodalCase::CaseI, NodalSource::Synthetic).unwrap();
            let y = NodalSet::from_levels([(n, perturbed_level(n, &b))], NodalCase::CaseI, NodalSource::Synthetic).unwrap();
            let p = RealFunction::sin_term(1, a[0]);
            let pb = RealFunction::sin_term(1, b[0]);
            prop_assert_eq!(s_n(&x, &y, &p, &pb, n, Weights::Printed).unwrap(), s_n(&y, &x, &pb, &p, n, Weights::Printed).unwrap());
            prop_assert!(s_n(&x, &y, &p, &pb, n, Weights::Corrected).unwrap() >= 0.0);
        }

        #[test]
        fn padding_equals_truncation(a in prop::collection::vec(-1.0f64..1.0, 5), n in 4usize..30, drop in 1usize..3) {
            let full = perturbed_level(n, &a);
            let short = full[..n - drop].to_vec();
            let x = NodalSet::from_levels([(n, full)], NodalCase::CaseI, NodalSource::Synthetic).unwrap();
            let y = NodalSet::from_levels([(n, short)], NodalCase::CaseI, NodalSource::Synthetic).unwrap();
            let z = RealFunction::zero();
            let padded = s_n(&x, &y, &z, &z, n, Weights::Printed).unwrap();
            let truncated = s_n_truncated(&x, &y, &z, &z, n, Weights::Printed).unwrap();
            prop_assert!((padded - truncated).abs() <= 1e-12 * padded.max(1.0));
        }

        #[test]
        fn dsigma_round_trip(d0 in 0.0f64..1e6) {
            let ds = to_dsigma(d0);
            prop_assert!((0.0..1.0).contains(&ds));
            prop_assert!((from_dsigma(ds) - d0).abs() <= 1e-12 * d0.max(1.0) * (1.0 + d0));
        }
    }
}
