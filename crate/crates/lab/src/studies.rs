//! Studies: each turns a config into CSV tables plus a JSON report.
//!
//! Tables and reports are pure functions of the config (and of cache
//! contents, which reproduce solver output exactly); wall-clock timings are
//! kept separately so serialized output stays bit-identical across runs.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use pencil_core::asymptotics::{classify_case, compute_c0_c1, lambda_asymptotic, log_log_slope, nodes_asymptotic, ClassifyConfig, HShift};
use pencil_core::cache::Cache;
use pencil_core::inverse::{
    calibration_constant, default_kappa, deriv_l1_error, local_average_check, reconstruct_q, reconstruction_l1_error, recover_h,
    uniform_grid, HMode, ReconstructionMode, CALIBRATION_LEVELS,
};
use pencil_core::metrics::{dsigma, from_dsigma, limsup_estimate, s_mn, to_dsigma, MetricReport, OrderMetrics, Weights};
use pencil_core::quadrature::l1_distance;
use pencil_core::spectrum::{compute_levels, nodal_set, RESIDUAL_TOL};
use pencil_core::{BoundaryCase, CoreError, NodalSet, PencilProblem, Spectrum, FORMAT_VERSION};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: CoreError,
    },
    /// The config is valid but unsuitable for the requested study.
    #[error("{0}")]
    Unsuitable(String),
}

impl StudyError {
    pub fn is_nonconvergence(&self) -> bool {
        matches!(
            self,
            StudyError::Core {
                source: CoreError::NonConvergence { .. } | CoreError::Bracket { .. } | CoreError::Certification { .. },
                ..
            }
        )
    }
}

fn at(stage: &'static str) -> impl Fn(CoreError) -> StudyError {
    move |source| StudyError::Core { stage, source }
}

pub type StudyResult<T> = std::result::Result<T, StudyError>;

/// Where spectra and nodes come from.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub cache: Option<Cache>,
}

impl Context {
    pub fn solve(&self, problem: &PencilProblem, levels: &[usize]) -> pencil_core::Result<(Spectrum, NodalSet)> {
        match &self.cache {
            Some(c) => c.levels(problem, levels),
            None => {
                let s = compute_levels(problem, levels)?;
                let x = nodal_set(problem, &s)?;
                Ok((s, x))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub csv: String,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub study: &'static str,
    pub tables: Vec<Table>,
    /// Deterministic run report (config echo, results, certification).
    pub report: Value,
    pub timings: Vec<(&'static str, Duration)>,
}

impl StudyOutput {
    pub fn table(&self, name: &str) -> Option<&str> {
        self.tables.iter().find(|t| t.name == name).map(|t| t.csv.as_str())
    }

    /// Plain-text summary, the only output carrying timings.
    pub fn summary(&self) -> String {
        let mut s = format!("study {}\n", self.study);
        for t in &self.tables {
            let _ = writeln!(s, "table {} ({} rows)", t.name, t.csv.lines().count().saturating_sub(1));
        }
        for (stage, d) in &self.timings {
            let _ = writeln!(s, "stage {stage}: {:.3} s", d.as_secs_f64());
        }
        if let Some(r) = self.report.get("results") {
            let _ = writeln!(s, "{}", serde_json::to_string_pretty(r).unwrap_or_default());
        }
        s
    }
}

#[derive(Default)]
struct Stages(Vec<(&'static str, Duration)>);

impl Stages {
    fn run<T>(&mut self, name: &'static str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.push((name, t.elapsed()));
        out
    }
}

fn problem_echo(p: &PencilProblem) -> Value {
    json!({
        "digest": p.digest(),
        "case": p.case.to_string(),
        "h": p.h,
        "H": p.big_h,
        "p": p.p.to_text(),
        "q": p.q.to_text(),
        "max_order": p.max_order,
    })
}

fn config_echo(cfg: &ExperimentConfig) -> Value {
    json!({
        "problem": problem_echo(&cfg.problem),
        "bar": cfg.bar.as_ref().map(problem_echo),
        "n_min": cfg.n_min,
        "n_max": cfg.n_max,
        "grid_size": cfg.grid_size,
        "window": cfg.window,
        "modes": cfg.modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "reconstruction_levels": cfg.reconstruction_levels(),
        "h_levels": cfg.h_levels(),
        "node_index": cfg.node_index,
        "orders": cfg.orders,
    })
}

/// Hash of the config echo; every table of a run is listed under it.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(&config_echo(cfg)).expect("echo serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..16])
}

fn certification(spectra: &[&Spectrum]) -> Value {
    let entries = spectra.iter().flat_map(|s| &s.entries);
    let (count, worst) = entries.fold((0usize, 0.0f64), |(c, w), e| (c + 1, w.max(e.residual)));
    json!({
        "levels": count,
        "max_residual": worst,
        "tolerance": RESIDUAL_TOL,
        "certified": worst <= RESIDUAL_TOL,
    })
}

fn finish(
    study: &'static str,
    cfg: &ExperimentConfig,
    tables: Vec<Table>,
    results: Value,
    cert: Value,
    discrepancies: Vec<Value>,
    stages: Stages,
) -> StudyOutput {
    let report = json!({
        "format_version": FORMAT_VERSION,
        "study": study,
        "config_digest": config_digest(cfg),
        "config": config_echo(cfg),
        "tables": tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
        "certification": cert,
        "discrepancies": discrepancies,
        "results": results,
    });
    StudyOutput {
        study,
        tables,
        report,
        timings: stages.0,
    }
}

/// Shortest round-trip rendering, in exponent form for very small or large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Convergence order `-d log err / d log n`; `None` when errors are at round-off.
fn order(errors: &[(usize, f64)]) -> Option<f64> {
    if errors.iter().all(|e| e.1 <= 1e-8) {
        return None;
    }
    let pts: Vec<(f64, f64)> = errors.iter().map(|&(n, e)| (n as f64, e.max(f64::MIN_POSITIVE))).collect();
    Some(-log_log_slope(&pts))
}

fn bar(cfg: &ExperimentConfig, study: &str) -> StudyResult<PencilProblem> {
    cfg.bar
        .clone()
        .ok_or_else(|| StudyError::Unsuitable(format!("{study} needs a [problem.bar] section")))
}

/// Metric weights implied by the reconstruction modes, corrected first.
pub fn weights_for(modes: &[ReconstructionMode]) -> Vec<Weights> {
    let mut w = Vec::new();
    if modes.contains(&ReconstructionMode::Corrected) {
        w.push(Weights::Corrected);
    }
    if modes.contains(&ReconstructionMode::Paper) {
        w.push(Weights::Printed);
    }
    w
}

fn weight_name(w: Weights) -> &'static str {
    match w {
        Weights::Corrected => "corrected",
        Weights::Printed => "printed",
    }
}

/// Eigenvalues with their asymptotic prediction.
pub fn forward(cfg: &ExperimentConfig, ctx: &Context) -> StudyResult<StudyOutput> {
    let mut stages = Stages::default();
    let levels: Vec<usize> = (1..=cfg.n_max).collect();
    let mut problems = vec![("problem", cfg.problem.clone())];
    if let Some(b) = &cfg.bar {
        problems.push(("bar", b.clone()));
    }
    let mut tables = Vec::new();
    let mut results = Map::new();
    let mut spectra = Vec::new();
    for (label, problem) in &problems {
        let (spectrum, _) = stages.run("spectrum", || ctx.solve(problem, &levels)).map_err(at("spectrum"))?;
        let asym = compute_c0_c1(problem);
        let mut csv = String::from("n,lambda,residual,node_count,lambda_asymptotic,scaled_remainder\n");
        let mut remainders = Vec::new();
        for e in &spectrum.entries {
            let a = lambda_asymptotic(e.n, &asym);
            let r = e.n as f64 * (e.lambda - a);
            remainders.push(r.abs());
            let _ = writeln!(csv, "{},{},{},{},{},{}", e.n, e.lambda, num(e.residual), e.node_count, a, num(r));
        }
        let half = remainders.len() / 2;
        let trend = |s: &[f64]| s.iter().copied().fold(0.0, f64::max);
        results.insert(
            label.to_string(),
            json!({
                "c0": asym.c0,
                "c1": asym.c1,
                "max_scaled_remainder_first_half": trend(&remainders[..half]),
                "max_scaled_remainder_second_half": trend(&remainders[half..]),
            }),
        );
        let name = if *label == "problem" { "forward.csv" } else { "forward_bar.csv" };
        tables.push(Table { name: name.into(), csv });
        spectra.push(spectrum);
    }
    let cert = certification(&spectra.iter().collect::<Vec<_>>());
    Ok(finish("forward", cfg, tables, Value::Object(results), cert, Vec::new(), stages))
}

/// Solver nodes at every level `n_min..=n_max`, next to their asymptotic form.
pub fn nodes(cfg: &ExperimentConfig, ctx: &Context) -> StudyResult<StudyOutput> {
    let mut stages = Stages::default();
    let levels = cfg.metric_levels();
    let problem = &cfg.problem;
    let (spectrum, set) = stages.run("spectrum", || ctx.solve(problem, &levels)).map_err(at("spectrum"))?;
    let asymptotic = stages
        .run("asymptotics", || {
            levels
                .par_iter()
                .map(|&n| nodes_asymptotic(problem, spectrum.lambda(n).unwrap_or(n as f64), n, HShift::default()).map(|a| a.0))
                .collect::<pencil_core::Result<Vec<_>>>()
        })
        .map_err(at("asymptotic nodes"))?;
    let mut csv = String::from("n,j,x_j,x_asymptotic,difference\n");
    let mut deviations = Vec::new();
    for (&n, asym) in levels.iter().zip(&asymptotic) {
        let xs = set.level(n).map_err(at("nodes"))?;
        let mut worst = 0.0f64;
        for (j, &x) in xs.iter().enumerate() {
            let a = asym.get(j).copied();
            if let Some(a) = a {
                worst = worst.max((x - a).abs());
            }
            let _ = writeln!(csv, "{n},{},{x},{},{}", j + 1, opt(a), opt(a.map(|a| x - a)));
        }
        deviations.push(json!({ "n": n, "nodes": xs.len(), "max_asymptotic_deviation": worst }));
    }
    let classified = classify_case(&set, &ClassifyConfig::default())
        .map(|c| c.to_string())
        .unwrap_or_else(|e| format!("unclassified: {e}"));
    let results = json!({
        "case_tag": set.case_tag.to_string(),
        "classified_case": classified,
        "levels": deviations,
    });
    let cert = certification(&[&spectrum]);
    Ok(finish("nodes", cfg, vec![Table { name: "nodes.csv".into(), csv }], results, cert, Vec::new(), stages))
}

/// Piecewise-linear interpolant through `(grid, values)`, constant beyond the ends.
pub fn interpolant(grid: Vec<f64>, values: Vec<f64>) -> impl Fn(f64) -> f64 {
    move |t| {
        let k = grid.partition_point(|&g| g <= t);
        if k == 0 {
            values[0]
        } else if k == grid.len() {
            values[k - 1]
        } else {
            let w = (t - grid[k - 1]) / (grid[k] - grid[k - 1]);
            values[k - 1] + w * (values[k] - values[k - 1])
        }
    }
}

/// Corrected reconstruction of `q` at level `n`, interpolated between grid points.
pub fn q_estimate(
    set: &NodalSet,
    spectrum: &Spectrum,
    n: usize,
    p: &pencil_core::RealFunction,
    grid_size: usize,
) -> pencil_core::Result<impl Fn(f64) -> f64> {
    let lambda = spectrum.lambda(n).ok_or(CoreError::MissingLevel { n })?;
    let r = reconstruct_q(set, n, lambda, p, &uniform_grid(grid_size), ReconstructionMode::Corrected)?;
    Ok(interpolant(r.grid, r.values))
}

fn h_mode(mode: ReconstructionMode) -> HMode {
    match mode {
        ReconstructionMode::Paper => HMode::Paper,
        ReconstructionMode::Corrected => HMode::Calibrated { kappa: default_kappa() },
    }
}

/// `h` from the configured node over `h_levels`, with `q` taken from the
/// corrected reconstruction at the finest level.
fn h_table(cfg: &ExperimentConfig, spectrum: &Spectrum, set: &NodalSet) -> StudyResult<(String, Value)> {
    let problem = &cfg.problem;
    if problem.case != BoundaryCase::Robin {
        return Err(StudyError::Unsuitable("h recovery needs a robin problem".into()));
    }
    let levels = cfg.h_levels();
    let top = *levels.last().expect("validated non-empty");
    let q_est = q_estimate(set, spectrum, top, &problem.p, cfg.grid_size).map_err(at("h recovery"))?;
    let mut csv = String::from("n,lambda_n,mode,estimate\n");
    let mut estimates = Map::new();
    for &mode in &cfg.modes {
        let rec = recover_h(set, spectrum, cfg.node_index, &levels, &q_est, &problem.p, h_mode(mode)).map_err(at("h recovery"))?;
        for &(n, v) in &rec.sequence {
            let _ = writeln!(csv, "{n},{},{},{v}", opt(spectrum.lambda(n)), mode.as_str());
        }
        estimates.insert(mode.as_str().into(), json!(rec.estimate));
    }
    let calibration: Vec<Value> = [0.25, 0.5, 1.0]
        .iter()
        .map(|&h| json!({ "h": h, "kappa": calibration_constant(h, &CALIBRATION_LEVELS) }))
        .collect();
    let value = json!({
        "h_true": problem.h,
        "node_index": cfg.node_index,
        "levels": levels,
        "estimates": estimates,
        "kappa": default_kappa(),
        "calibration": calibration,
    });
    Ok((csv, value))
}

/// Reconstruction of `q` from nodes, with `h` recovery and local averages.
pub fn convergence(cfg: &ExperimentConfig, ctx: &Context) -> StudyResult<StudyOutput> {
    let mut stages = Stages::default();
    let problem = &cfg.problem;
    let rec_levels = cfg.reconstruction_levels();
    let mut all: Vec<usize> = rec_levels.iter().chain(&cfg.h_levels()).copied().collect();
    all.sort_unstable();
    all.dedup();
    let (spectrum, set) = stages.run("spectrum", || ctx.solve(problem, &all)).map_err(at("spectrum"))?;
    let grid = uniform_grid(cfg.grid_size);

    let jobs: Vec<(usize, ReconstructionMode)> = rec_levels.iter().flat_map(|&n| cfg.modes.iter().map(move |&m| (n, m))).collect();
    let rows = stages
        .run("reconstruction", || {
            jobs.par_iter()
                .map(|&(n, mode)| {
                    let lambda = spectrum.lambda(n).ok_or(CoreError::MissingLevel { n })?;
                    let mut r = reconstruct_q(&set, n, lambda, &problem.p, &grid, mode)?;
                    r.l1_error_vs_truth = Some(reconstruction_l1_error(&set, n, lambda, &problem.p, mode, &problem.q)?);
                    Ok(r)
                })
                .collect::<pencil_core::Result<Vec<_>>>()
        })
        .map_err(at("reconstruction"))?;

    let mut conv = String::from("n,lambda_n,mode,l1_error,scaled_error,flagged\n");
    let mut recon = String::from("x,value,n,lambda_n,mode\n");
    for r in &rows {
        let err = r.l1_error_vs_truth.unwrap_or(f64::NAN);
        let _ = writeln!(
            conv,
            "{},{},{},{},{},{}",
            r.n_used,
            r.lambda_used,
            r.mode.as_str(),
            num(err),
            num(r.n_used as f64 * err),
            r.flagged.len()
        );
        for (x, v) in r.grid.iter().zip(&r.values) {
            let _ = writeln!(recon, "{x},{},{},{},{}", num(*v), r.n_used, r.lambda_used, r.mode.as_str());
        }
    }

    let mut per_mode = Map::new();
    for &mode in &cfg.modes {
        let errors: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| (r.n_used, r.l1_error_vs_truth.unwrap_or(f64::NAN)))
            .collect();
        let c_fit = errors.iter().map(|&(n, e)| n as f64 * e).fold(0.0, f64::max);
        per_mode.insert(
            mode.as_str().into(),
            json!({ "errors": errors, "order": order(&errors), "c_fit": c_fit }),
        );
    }
    let discrepancies = paper_vs_corrected(&rows.iter().map(|r| (r.n_used, r.mode, r.l1_error_vs_truth)).collect::<Vec<_>>(), "l1_error_q");

    let mut tables = vec![
        Table { name: "convergence.csv".into(), csv: conv },
        Table { name: "reconstruction.csv".into(), csv: recon },
    ];
    let mut results = Map::new();
    results.insert("reconstruction".into(), Value::Object(per_mode));

    if problem.case == BoundaryCase::Robin {
        let (csv, value) = stages.run("h recovery", || h_table(cfg, &spectrum, &set))?;
        tables.push(Table { name: "h_recovery.csv".into(), csv });
        results.insert("h_recovery".into(), value);
    }

    let mut local = String::from("x,n,raw,normalized,q_x\n");
    for x in [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0] {
        let avgs = local_average_check(&set, &problem.q, &spectrum, x).map_err(at("local averages"))?;
        for a in avgs {
            let _ = writeln!(local, "{x},{},{},{},{}", a.n, a.raw, a.normalized, problem.q.value(x));
        }
    }
    tables.push(Table { name: "local_averages.csv".into(), csv: local });

    let asym = compute_c0_c1(problem);
    let residuals: Vec<(usize, f64)> = spectrum
        .entries
        .iter()
        .map(|e| (e.n, e.n as f64 * (e.lambda - lambda_asymptotic(e.n, &asym))))
        .collect();
    results.insert("asymptotic_residuals".into(), json!(residuals));

    let cert = certification(&[&spectrum]);
    Ok(finish("reconstruct", cfg, tables, Value::Object(results), cert, discrepancies, stages))
}

fn paper_vs_corrected(rows: &[(usize, ReconstructionMode, Option<f64>)], quantity: &str) -> Vec<Value> {
    let find = |n: usize, m: ReconstructionMode| rows.iter().find(|r| r.0 == n && r.1 == m).and_then(|r| r.2);
    let mut levels: Vec<usize> = rows.iter().map(|r| r.0).collect();
    levels.dedup();
    levels
        .into_iter()
        .filter_map(|n| {
            let (p, c) = (find(n, ReconstructionMode::Paper)?, find(n, ReconstructionMode::Corrected)?);
            Some(json!({ "quantity": quantity, "n": n, "paper": p, "corrected": c }))
        })
        .collect()
}

/// `h` recovery on its own.
pub fn recover_h_study(cfg: &ExperimentConfig, ctx: &Context) -> StudyResult<StudyOutput> {
    let mut stages = Stages::default();
    let mut all = cfg.h_levels();
    all.push(*all.last().expect("validated non-empty"));
    all.dedup();
    let (spectrum, set) = stages.run("spectrum", || ctx.solve(&cfg.problem, &all)).map_err(at("spectrum"))?;
    let (csv, value) = stages.run("h recovery", || h_table(cfg, &spectrum, &set))?;
    let cert = certification(&[&spectrum]);
    Ok(finish(
        "recover-h",
        cfg,
        vec![Table { name: "recover_h.csv".into(), csv }],
        value,
        cert,
        Vec::new(),
        stages,
    ))
}

fn identity_ratio(distance: f64, d: Option<f64>) -> Option<f64> {
    match d {
        Some(d) if d > 0.0 => Some(distance / (2.0 * d)),
        _ => None,
    }
}

/// `S_n`, `d0`, `d_Sigma` and the identity `||q - qbar||_1 = 2 d0`.
pub fn stability(cfg: &ExperimentConfig, ctx: &Context) -> StudyResult<StudyOutput> {
    let mut stages = Stages::default();
    let b = bar(cfg, "stability")?;
    let a = &cfg.problem;
    let levels = cfg.metric_levels();
    let (sa, xa) = stages.run("spectrum", || ctx.solve(a, &levels)).map_err(at("spectrum"))?;
    let (sb, xb) = stages.run("spectrum bar", || ctx.solve(&b, &levels)).map_err(at("spectrum bar"))?;
    let distance = l1_distance(&a.q, &b.q, 0, 0.0, PI).map_err(at("potential distance"))?;
    let cls = ClassifyConfig::default();
    let weights = weights_for(&cfg.modes);
    let estimates = stages
        .run("metrics", || {
            weights
                .iter()
                .map(|&w| dsigma(&xa, &xb, &a.p, &b.p, &levels, cfg.window, w, &cls))
                .collect::<pencil_core::Result<Vec<_>>>()
        })
        .map_err(at("metrics"))?;

    let mut header = String::from("n,S_n,ratio");
    for &w in &weights[1..] {
        let _ = write!(header, ",S_n_{0},ratio_{0}", weight_name(w));
    }
    let mut csv = header + "\n";
    for (i, &n) in levels.iter().enumerate() {
        if estimates[0].per_n.is_empty() {
            break;
        }
        let _ = write!(csv, "{n}");
        for est in &estimates {
            let s = est.per_n[i].1;
            let _ = write!(csv, ",{s},{}", opt(identity_ratio(distance, Some(s))));
        }
        csv.push('\n');
    }

    let mut reports = Map::new();
    let mut results = Map::new();
    for (&w, est) in weights.iter().zip(&estimates) {
        let report = MetricReport::from_estimate(est, cfg.window, w);
        let roundtrip = est.d0_hat.map(|d0| (from_dsigma(to_dsigma(d0)) - d0).abs() / d0.max(1.0));
        let verdict = match est.d0_hat {
            None => "different cases: d_Sigma = 1".to_string(),
            Some(d0) if d0 == 0.0 && distance == 0.0 => "exact-zero distance".to_string(),
            Some(_) => "finite".to_string(),
        };
        results.insert(
            weight_name(w).into(),
            json!({
                "d0_hat": est.d0_hat,
                "dsigma_hat": est.dsigma_hat,
                "trailing_slope": est.slope,
                "ratio": identity_ratio(distance, est.d0_hat),
                "dsigma_roundtrip_error": roundtrip,
                "verdict": verdict,
            }),
        );
        reports.insert(weight_name(w).into(), serde_json::to_value(&report).expect("report serializes"));
    }
    results.insert("potential_distance".into(), json!(distance));
    results.insert("same_case".into(), json!(estimates[0].same_case));

    let primary = MetricReport::from_estimate(&estimates[0], cfg.window, weights[0]);
    let tables = vec![
        Table { name: "stability.csv".into(), csv },
        Table { name: "metric_report.csv".into(), csv: primary.to_csv() },
        Table {
            name: "metric_report.json".into(),
            csv: serde_json::to_string_pretty(&Value::Object(reports)).expect("reports serialize") + "\n",
        },
    ];
    let cert = certification(&[&sa, &sb]);
    Ok(finish("stability", cfg, tables, Value::Object(results), cert, Vec::new(), stages))
}

/// `S_{m,n}`, `d_m` and the identity `||q^(m) - qbar^(m)||_1 = 2 d_m`, plus
/// reconstruction of `q^(m)`.
pub fn high_order(cfg: &ExperimentConfig, ctx: &Context) -> StudyResult<StudyOutput> {
    let mut stages = Stages::default();
    let b = bar(cfg, "high-order")?;
    let a = &cfg.problem;
    let levels = cfg.metric_levels();
    let rec_levels = cfg.reconstruction_levels();
    let mut all: Vec<usize> = levels.iter().chain(&rec_levels).copied().collect();
    all.sort_unstable();
    all.dedup();
    let (sa, xa) = stages.run("spectrum", || ctx.solve(a, &all)).map_err(at("spectrum"))?;
    let (sb, xb) = stages.run("spectrum bar", || ctx.solve(&b, &levels)).map_err(at("spectrum bar"))?;
    let weights = weights_for(&cfg.modes);

    let mut header = String::from("m,n");
    for &w in &weights {
        let _ = write!(header, ",S_mn_{}", weight_name(w));
    }
    let mut csv = header + "\n";
    let cls = ClassifyConfig::default();
    let mut reports = stages
        .run("metrics", || {
            weights
                .iter()
                .map(|&w| {
                    dsigma(&xa, &xb, &a.p, &b.p, &levels, cfg.window, w, &cls).map(|e| MetricReport::from_estimate(&e, cfg.window, w))
                })
                .collect::<pencil_core::Result<Vec<_>>>()
        })
        .map_err(at("metrics"))?;
    let mut per_order = Map::new();
    let mut recon = String::from("m,n,lambda_n,mode,l1_error\n");
    let mut discrepancies = Vec::new();
    for &m in &cfg.orders {
        let distance = l1_distance(&a.q, &b.q, m, 0.0, PI).map_err(at("derivative distance"))?;
        let values = stages
            .run("metrics", || {
                weights
                    .iter()
                    .map(|&w| {
                        levels
                            .par_iter()
                            .map(|&n| {
                                let lambda = sa.lambda(n).ok_or(CoreError::MissingLevel { n })?;
                                s_mn(&xa, &xb, &a.p, &b.p, m, n, lambda, w).map(|s| (n, s))
                            })
                            .collect::<pencil_core::Result<Vec<_>>>()
                    })
                    .collect::<pencil_core::Result<Vec<_>>>()
            })
            .map_err(at("metrics"))?;
        for (i, &n) in levels.iter().enumerate() {
            let _ = write!(csv, "{m},{n}");
            for v in &values {
                let _ = write!(csv, ",{}", v[i].1);
            }
            csv.push('\n');
        }
        let mut by_weight = Map::new();
        for ((&w, v), report) in weights.iter().zip(&values).zip(reports.iter_mut()) {
            let est = limsup_estimate(v, cfg.window).map_err(at("metrics"))?;
            by_weight.insert(
                weight_name(w).into(),
                json!({ "dm_hat": est.value, "trailing_slope": est.slope, "ratio": identity_ratio(distance, Some(est.value)) }),
            );
            report.per_m.insert(m, OrderMetrics { values: v.clone(), dm_hat: est.value });
        }

        let jobs: Vec<(usize, ReconstructionMode)> = rec_levels.iter().flat_map(|&n| cfg.modes.iter().map(move |&md| (n, md))).collect();
        let errors = stages
            .run("derivative reconstruction", || {
                jobs.par_iter()
                    .map(|&(n, mode)| {
                        let lambda = sa.lambda(n).ok_or(CoreError::MissingLevel { n })?;
                        deriv_l1_error(&xa, n, lambda, &a.p, m, mode, &a.q).map(|e| (n, lambda, mode, e))
                    })
                    .collect::<pencil_core::Result<Vec<_>>>()
            })
            .map_err(at("derivative reconstruction"))?;
        let mut orders = Map::new();
        for &mode in &cfg.modes {
            let errs: Vec<(usize, f64)> = errors.iter().filter(|e| e.2 == mode).map(|e| (e.0, e.3)).collect();
            orders.insert(mode.as_str().into(), json!({ "errors": errs, "order": order(&errs) }));
        }
        for &(n, lambda, mode, e) in &errors {
            let _ = writeln!(recon, "{m},{n},{lambda},{},{}", mode.as_str(), num(e));
        }
        discrepancies.extend(paper_vs_corrected(
            &errors.iter().map(|e| (e.0, e.2, Some(e.3))).collect::<Vec<_>>(),
            "l1_error_q_derivative",
        ));
        per_order.insert(
            m.to_string(),
            json!({ "distance": distance, "metrics": by_weight, "reconstruction": orders }),
        );
    }

    let json_reports: Map<String, Value> = weights
        .iter()
        .zip(&reports)
        .map(|(&w, r)| (weight_name(w).to_string(), serde_json::to_value(r).expect("report serializes")))
        .collect();
    let tables = vec![
        Table { name: "high_order.csv".into(), csv },
        Table { name: "high_order_reconstruction.csv".into(), csv: recon },
        Table { name: "metric_report.csv".into(), csv: reports[0].to_csv() },
        Table {
            name: "metric_report.json".into(),
            csv: serde_json::to_string_pretty(&Value::Object(json_reports)).expect("reports serialize") + "\n",
        },
    ];
    let cert = certification(&[&sa, &sb]);
    Ok(finish("high-order", cfg, tables, Value::Object(per_order), cert, discrepancies, stages))
}
