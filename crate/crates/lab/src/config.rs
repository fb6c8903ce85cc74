//! Experiment configuration files.
//!
//! ```toml
//! [problem]
//! case = "robin"          # or "dirichlet"
//! h = 0.0
//! H = 0.0
//! p = { sin = [[1, 0.2]] }
//! q = { sin = [[3, 1.0]] }
//!
//! [problem.bar]           # optional comparison problem; unset keys are inherited
//! q = { sin = [[3, 1.0]], cos = [[1, 0.2]] }
//!
//! [run]
//! n_min = 16
//! n_max = 128
//! grid_size = 256
//! window = 8
//! modes = ["paper", "corrected"]
//! ```

use std::path::{Path, PathBuf};

use pencil_core::inverse::ReconstructionMode;
use pencil_core::{BoundaryCase, PencilProblem, RealFunction};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    case: Option<BoundaryCase>,
    h: Option<f64>,
    #[serde(rename = "H")]
    big_h: Option<f64>,
    max_order: Option<u32>,
    p: Option<toml::Table>,
    q: Option<toml::Table>,
    bar: Option<Box<RawProblem>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    n_min: Option<usize>,
    n_max: Option<usize>,
    grid_size: Option<usize>,
    window: Option<usize>,
    modes: Option<Vec<ReconstructionMode>>,
    levels: Option<Vec<usize>>,
    h_levels: Option<Vec<usize>>,
    node_index: Option<usize>,
    orders: Option<Vec<u32>>,
    workers: Option<usize>,
    output_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: PencilProblem,
    pub bar: Option<PencilProblem>,
    pub n_min: usize,
    pub n_max: usize,
    pub grid_size: usize,
    pub window: usize,
    pub modes: Vec<ReconstructionMode>,
    /// Levels for reconstruction tables; doubling from `n_min` when unset.
    pub levels: Option<Vec<usize>>,
    /// Levels for `h` extrapolation; the last three reconstruction levels when unset.
    pub h_levels: Option<Vec<usize>>,
    pub node_index: usize,
    pub orders: Vec<u32>,
    /// Worker threads; `0` lets the pool decide.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

fn function(table: Option<&toml::Table>, field: &'static str) -> Result<Option<RealFunction>, ConfigError> {
    table
        .map(|t| {
            RealFunction::from_table(t).map_err(|e| ConfigError::Invalid {
                field,
                reason: e.to_string(),
            })
        })
        .transpose()
}

fn finite(v: f64, field: &'static str) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::Invalid {
            field,
            reason: format!("{v} is not finite"),
        })
    }
}

fn build_problem(raw: &RawProblem, base: Option<&PencilProblem>, prefix: bool) -> Result<PencilProblem, ConfigError> {
    let (fp, fq, fh, fbh) = if prefix {
        ("problem.bar.p", "problem.bar.q", "problem.bar.h", "problem.bar.H")
    } else {
        ("problem.p", "problem.q", "problem.h", "problem.H")
    };
    let p = function(raw.p.as_ref(), fp)?.or_else(|| base.map(|b| b.p.clone())).unwrap_or_default();
    let q = function(raw.q.as_ref(), fq)?.or_else(|| base.map(|b| b.q.clone())).unwrap_or_default();
    let h = finite(raw.h.or(base.map(|b| b.h)).unwrap_or(0.0), fh)?;
    let big_h = finite(raw.big_h.or(base.map(|b| b.big_h)).unwrap_or(0.0), fbh)?;
    let case = raw.case.or(base.map(|b| b.case)).unwrap_or(BoundaryCase::Robin);
    let max_order = raw.max_order.or(base.map(|b| b.max_order)).unwrap_or(1);
    Ok(PencilProblem::new(p, q, h, big_h, case).with_max_order(max_order))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let problem = build_problem(&raw.problem, None, false)?;
        let bar = raw
            .problem
            .bar
            .as_deref()
            .map(|b| {
                if b.bar.is_some() {
                    return Err(ConfigError::Invalid {
                        field: "problem.bar.bar",
                        reason: "comparison problems do not nest".into(),
                    });
                }
                build_problem(b, Some(&problem), true)
            })
            .transpose()?;
        let run = raw.run;
        let cfg = Self {
            problem,
            bar,
            n_min: run.n_min.unwrap_or(16),
            n_max: run.n_max.unwrap_or(128),
            grid_size: run.grid_size.unwrap_or(256),
            window: run.window.unwrap_or(8),
            modes: run
                .modes
                .unwrap_or_else(|| vec![ReconstructionMode::Paper, ReconstructionMode::Corrected]),
            levels: run.levels,
            h_levels: run.h_levels,
            node_index: run.node_index.unwrap_or(1),
            orders: run.orders.unwrap_or_else(|| vec![1]),
            workers: run.workers.unwrap_or(0),
            output_dir: run.output_dir,
            cache_dir: run.cache_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, reason: String| Err(ConfigError::Invalid { field, reason });
        if self.n_min < 1 {
            return invalid("n_min", "must be at least 1".into());
        }
        if self.window < 1 {
            return invalid("window", "must be at least 1".into());
        }
        if self.n_max < self.n_min + self.window {
            return invalid(
                "n_max",
                format!(
                    "must be at least n_min + window = {} (got {})",
                    self.n_min + self.window,
                    self.n_max
                ),
            );
        }
        if self.grid_size < 64 {
            return invalid("grid_size", format!("must be at least 64 (got {})", self.grid_size));
        }
        if self.modes.is_empty() {
            return invalid("modes", "at least one reconstruction mode is required".into());
        }
        if self.node_index < 1 {
            return invalid("node_index", "nodes are numbered from 1".into());
        }
        if let Some(&m) = self.orders.iter().find(|&&m| m == 0 || m > self.problem.max_order) {
            return invalid(
                "orders",
                format!("order {m} outside 1..=max_order ({})", self.problem.max_order),
            );
        }
        for (field, levels) in [("levels", &self.levels), ("h_levels", &self.h_levels)] {
            if let Some(ls) = levels {
                if ls.is_empty() || ls.iter().any(|&n| n < 1 || n > self.n_max) {
                    return invalid(field, format!("levels must lie in 1..=n_max ({})", self.n_max));
                }
            }
        }
        if let Some(bar) = &self.bar {
            if bar.case != self.problem.case {
                // allowed: the stability study reports the case short-circuit
            }
        }
        Ok(())
    }

    /// Reconstruction levels: explicit, or `n_min, 2 n_min, ...` capped by `n_max`.
    pub fn reconstruction_levels(&self) -> Vec<usize> {
        if let Some(ls) = &self.levels {
            let mut v = ls.clone();
            v.sort_unstable();
            v.dedup();
            return v;
        }
        let mut v = Vec::new();
        let mut n = self.n_min;
        while n <= self.n_max {
            v.push(n);
            n *= 2;
        }
        if v.last() != Some(&self.n_max) {
            v.push(self.n_max);
        }
        v
    }

    pub fn h_levels(&self) -> Vec<usize> {
        if let Some(ls) = &self.h_levels {
            let mut v = ls.clone();
            v.sort_unstable();
            v.dedup();
            return v;
        }
        let r = self.reconstruction_levels();
        r[r.len().saturating_sub(3)..].to_vec()
    }

    /// Every level from `n_min` to `n_max`.
    pub fn metric_levels(&self) -> Vec<usize> {
        (self.n_min..=self.n_max).collect()
    }

    /// Trivial problem used by `selfcheck`.
    pub fn bundled_trivial() -> Self {
        Self::parse(BUNDLED_TRIVIAL).expect("bundled config is valid")
    }
}

pub const BUNDLED_TRIVIAL: &str = r#"
[problem]
case = "robin"
h = 0.0
H = 0.0

[problem.bar]

[run]
n_min = 8
n_max = 32
grid_size = 128
window = 8
modes = ["paper", "corrected"]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let c = ExperimentConfig::bundled_trivial();
        assert!(c.problem.p.is_zero() && c.problem.q.is_zero());
        assert_eq!(c.bar.as_ref(), Some(&c.problem));
        assert_eq!(c.reconstruction_levels(), vec![8, 16, 32]);
        assert_eq!(c.h_levels(), vec![8, 16, 32]);
    }

    #[test]
    fn bar_inherits_unset_fields() {
        let c = ExperimentConfig::parse(
            r#"
            [problem]
            h = 0.5
            p = { sin = [[1, 0.2]] }
            q = { sin = [[3, 1.0]] }
            [problem.bar]
            q = { cos = [[1, 0.2]] }
            "#,
        )
        .unwrap();
        let bar = c.bar.unwrap();
        assert_eq!(bar.p, c.problem.p);
        assert_eq!(bar.h, 0.5);
        assert_eq!(bar.q, RealFunction::cos_term(1, 0.2));
    }

    #[test]
    fn validation_names_the_field() {
        let err = ExperimentConfig::parse("[problem]\n[run]\nn_min = 40\nn_max = 20\n").unwrap_err();
        assert!(err.to_string().contains("n_max"), "{err}");
        let err = ExperimentConfig::parse("[problem]\n[run]\ngrid_size = 10\n").unwrap_err();
        assert!(err.to_string().contains("grid_size"));
        let err = ExperimentConfig::parse("[problem]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax(_)));
        let err = ExperimentConfig::parse("[problem]\nq = { tan = [[1, 1.0]] }\n").unwrap_err();
        assert!(err.to_string().contains("problem.q"));
    }
}
