//! Nodal double sequences `X = {X_k^n}` and the difference-quotient operators.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodalCase {
    /// `X_k^n = (k - 1/2) pi / n + O(1/n^2)`.
    CaseI,
    /// `X_k^n = k pi / n + O(1/n^2)`.
    CaseII,
    Unknown,
}

impl fmt::Display for NodalCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodalCase::CaseI => "case I",
            NodalCase::CaseII => "case II",
            NodalCase::Unknown => "unknown case",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodalSource {
    Solver,
    Asymptotic,
    Synthetic,
    File,
}

/// Levels `n -> X_1^n < ... < X_K(n)^n`, all inside `(0, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalSet {
    levels: BTreeMap<usize, Vec<f64>>,
    pub case_tag: NodalCase,
    pub source: NodalSource,
}

impl NodalSet {
    pub fn new(levels: BTreeMap<usize, Vec<f64>>, case_tag: NodalCase, source: NodalSource) -> Result<Self> {
        let mut prev_len = 0;
        for (&n, xs) in &levels {
            if n == 0 {
                return Err(CoreError::Inconsistent("level index must be >= 1".into()));
            }
            if let Some(bad) = xs.iter().find(|x| !(**x > 0.0 && **x < PI)) {
                return Err(CoreError::Inconsistent(format!(
                    "node {bad} at level {n} lies outside (0, pi)"
                )));
            }
            if xs.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CoreError::Inconsistent(format!(
                    "level {n} is not strictly increasing"
                )));
            }
            if xs.len() < prev_len {
                return Err(CoreError::Inconsistent(format!(
                    "node count drops to {} at level {n}",
                    xs.len()
                )));
            }
            prev_len = xs.len();
        }
        Ok(Self {
            levels,
            case_tag,
            source,
        })
    }

    pub fn from_levels<I>(levels: I, case_tag: NodalCase, source: NodalSource) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, Vec<f64>)>,
    {
        Self::new(levels.into_iter().collect(), case_tag, source)
    }

    /// `X_k^n = (k - 1/2) pi / n` (case I) or `k pi / (n + 1/2)` (free
    /// Dirichlet-Neumann zeros) for every requested level, `k = 1..=n`.
    pub fn free(levels: impl IntoIterator<Item = usize>, case: NodalCase) -> Result<Self> {
        let build = |n: usize| -> Vec<f64> {
            (1..=n)
                .map(|k| match case {
                    NodalCase::CaseII => k as f64 * PI / (n as f64 + 0.5),
                    _ => (k as f64 - 0.5) * PI / n as f64,
                })
                .collect()
        };
        Self::from_levels(levels.into_iter().map(|n| (n, build(n))), case, NodalSource::Synthetic)
    }

    pub fn level(&self, n: usize) -> Result<&[f64]> {
        self.levels
            .get(&n)
            .map(Vec::as_slice)
            .ok_or(CoreError::MissingLevel { n })
    }

    pub fn has_level(&self, n: usize) -> bool {
        self.levels.contains_key(&n)
    }

    pub fn level_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.keys().copied()
    }

    pub fn levels(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `L_k^n = X_{k+1}^n - X_k^n`, `k = 1..K(n)-1`.
    pub fn grid_lengths(&self, n: usize) -> Result<Vec<f64>> {
        let xs = self.level(n)?;
        if xs.len() < 2 {
            return Err(CoreError::InsufficientData {
                needed: 2,
                got: xs.len(),
            });
        }
        Ok(xs.windows(2).map(|w| w[1] - w[0]).collect())
    }

    /// Largest `j` with `X_j^n <= x` (virtual `X_0^n = 0`), so `0..=K(n)`.
    pub fn locate_index(&self, n: usize, x: f64) -> Result<usize> {
        Ok(locate(self.level(n)?, x))
    }
}

/// Number of entries `<= x` in an increasing slice.
pub fn locate(xs: &[f64], x: f64) -> usize {
    xs.partition_point(|&v| v <= x)
}

/// `delta^m a`, dividing by the base sequence `a_j` at every order.
pub fn difference_quotient(a: &[f64], m: usize) -> Result<Vec<f64>> {
    difference_quotient_with_base(a, a, m)
}

/// The `delta^m` recursion applied to `values` with divisors taken from `base`:
/// `D^1 v_j = (v_{j+1} - v_j) / base_j`, `D^m v_j = (D^{m-1} v_{j+1} - D^{m-1} v_j) / base_j`.
///
/// Linear in `values`; `difference_quotient(a, m)` is the case `values = base = a`.
pub fn difference_quotient_with_base(values: &[f64], base: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(values.to_vec());
    }
    if values.len() <= m {
        return Err(CoreError::InsufficientData {
            needed: m + 1,
            got: values.len(),
        });
    }
    if base.len() < values.len() - 1 {
        return Err(CoreError::InsufficientData {
            needed: values.len() - 1,
            got: base.len(),
        });
    }
    let mut current = values.to_vec();
    for _ in 0..m {
        let mut next = Vec::with_capacity(current.len() - 1);
        for j in 0..current.len() - 1 {
            let d = base[j];
            if d == 0.0 {
                // 1-based index, as sequences are written a_1, a_2, ...
                return Err(CoreError::DivisionByZero { index: j + 1 });
            }
            next.push((current[j + 1] - current[j]) / d);
        }
        current = next;
    }
    Ok(current)
}
