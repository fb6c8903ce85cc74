use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::function::RealFunction;

/// Which initial condition pins the solution at `x = 0`.
///
/// `RobinInit` is `y'(0) - h y(0) = 0`; `DirichletInit` is `y(0) = 0, y'(0) = 1`.
/// Both use `y'(pi) + H y(pi) = 0` at the right end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCase {
    #[serde(alias = "robininit")]
    Robin,
    #[serde(alias = "dirichletinit")]
    Dirichlet,
}

impl fmt::Display for BoundaryCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCase::Robin => write!(f, "robin"),
            BoundaryCase::Dirichlet => write!(f, "dirichlet"),
        }
    }
}

/// One instance of `y'' + [lambda^2 - 2 lambda p(x) - q(x)] y = 0` on `(0, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PencilProblem {
    pub p: RealFunction,
    pub q: RealFunction,
    pub h: f64,
    pub big_h: f64,
    pub case: BoundaryCase,
    /// Highest derivative order downstream experiments will request.
    pub max_order: u32,
}

impl PencilProblem {
    pub fn new(p: RealFunction, q: RealFunction, h: f64, big_h: f64, case: BoundaryCase) -> Self {
        Self {
            p,
            q,
            h,
            big_h,
            case,
            max_order: 1,
        }
    }

    /// `p = q = 0`, `h = H = 0`.
    pub fn free(case: BoundaryCase) -> Self {
        Self::new(RealFunction::zero(), RealFunction::zero(), 0.0, 0.0, case)
    }

    pub fn with_max_order(mut self, n: u32) -> Self {
        self.max_order = n;
        self
    }

    /// Effective potential `2 lambda p(x) + q(x)`.
    #[inline]
    pub fn effective(&self, lambda: f64, x: f64) -> f64 {
        2.0 * lambda * self.p.value(x) + self.q.value(x)
    }

    /// Content hash over a canonical rendering of every field.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        hex::encode(&hasher.finalize()[..16])
    }

    fn canonical_text(&self) -> String {
        format!(
            "[p]\n{}[q]\n{}h={:016x}\nH={:016x}\ncase={}\nN={}\n",
            self.p.to_text(),
            self.q.to_text(),
            self.h.to_bits(),
            self.big_h.to_bits(),
            self.case,
            self.max_order
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_content() {
        let a = PencilProblem::free(BoundaryCase::Robin);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.h = 1e-300;
        assert_ne!(a.digest(), b.digest());
        let c = PencilProblem::free(BoundaryCase::Dirichlet);
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 32);
    }
}
