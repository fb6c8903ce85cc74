//! Named self-check targets: the trivial-problem discrepancy table and the
//! acceptance criteria `c1`..`c11`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use pencil_core::asymptotics::{compute_c0_c1, lambda_asymptotic, log_log_slope, ClassifyConfig};
use pencil_core::inverse::{
    calibration_constant, default_kappa, deriv_l1_error, reconstruct_q, reconstruction_l1_error, recover_h, uniform_grid, HMode,
    ReconstructionMode, CALIBRATION_LEVELS,
};
use pencil_core::metrics::{dsigma, from_dsigma, limsup_estimate, pseudometric_selfcheck, s_mn, to_dsigma, Weights};
use pencil_core::phase::PhaseSolver;
use pencil_core::quadrature::l1_distance;
use pencil_core::spectrum::{compute_levels, compute_spectrum, nodal_set, orthogonality_terms};
use pencil_core::volterra::{solve_volterra, HConvention, Which};
use pencil_core::{BoundaryCase, NodalCase, NodalSet, PencilProblem, RealFunction, Result};

use crate::config::ExperimentConfig;
use crate::studies::{self, num, Context, StudyOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {}: {} -- {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "trivial exactness"),
    (2, "constant-coefficient oracle"),
    (3, "eigenvalue asymptotics"),
    (4, "reconstruction convergence"),
    (5, "h recovery"),
    (6, "Lipschitz identity"),
    (7, "case separation"),
    (8, "pseudometric axioms"),
    (9, "high-order identity"),
    (10, "solver cross-validation"),
    (11, "determinism"),
];

/// Target names accepted by `selfcheck --target`: `c1`..`c11`.
pub fn parse_target(name: &str) -> Option<u8> {
    let id: u8 = name.strip_prefix('c')?.parse().ok()?;
    CRITERIA.iter().any(|c| c.0 == id).then_some(id)
}

/// Runs criterion `id`; solver errors count as failures.
pub fn run(id: u8) -> Outcome {
    let title = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let result = match id {
        1 => c1(),
        2 => c2(),
        3 => c3(),
        4 => c4(),
        5 => c5(),
        6 => c6(),
        7 => c7(),
        8 => c8(),
        9 => c9(),
        10 => c10(),
        11 => c11(),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id,
        title,
        passed,
        detail,
    }
}

fn robin(p: RealFunction, q: RealFunction) -> PencilProblem {
    PencilProblem::new(p, q, 0.0, 0.0, BoundaryCase::Robin)
}

fn sin3() -> RealFunction {
    RealFunction::sin_term(3, 1.0)
}

fn p_small() -> RealFunction {
    RealFunction::sin_term(1, 0.2)
}

/// `q = sin 3x` and `q + 0.2 cos x`, both with `p = 0.2 sin x`.
fn smooth_pair() -> (PencilProblem, PencilProblem) {
    let a = robin(p_small(), sin3());
    let b = robin(p_small(), sin3().with_cos(1, 0.2));
    (a, b)
}

fn solve(problem: &PencilProblem, levels: &[usize]) -> Result<(pencil_core::Spectrum, NodalSet)> {
    let s = compute_levels(problem, levels)?;
    let x = nodal_set(problem, &s)?;
    Ok((s, x))
}

fn sup_abs(values: &[f64], target: f64) -> f64 {
    values.iter().map(|v| (v - target).abs()).fold(0.0, f64::max)
}

fn max_node_error(set: &NodalSet, exact: impl Fn(usize, usize) -> f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for n in set.level_indices() {
        let xs = set.level(n)?;
        if xs.len() != n {
            return Ok(f64::INFINITY);
        }
        for (j, &x) in xs.iter().enumerate() {
            worst = worst.max((x - exact(n, j + 1)).abs());
        }
    }
    Ok(worst)
}

type Check = Result<(bool, String)>;

fn c1() -> Check {
    let problem = PencilProblem::free(BoundaryCase::Robin);
    let spectrum = compute_spectrum(&problem, 50)?;
    let lambda_err = spectrum.entries.iter().map(|e| (e.lambda - e.n as f64).abs()).fold(0.0, f64::max);
    let set = nodal_set(&problem, &spectrum)?;
    let node_err = max_node_error(&set, |n, j| (j as f64 - 0.5) * PI / n as f64)?;
    let grid = uniform_grid(256);
    let mut f_err = 0.0f64;
    for n in 2..=50 {
        let lambda = spectrum.lambda(n).unwrap_or(f64::NAN);
        let r = reconstruct_q(&set, n, lambda, &problem.p, &grid, ReconstructionMode::Corrected)?;
        f_err = f_err.max(sup_abs(&r.values, 0.0));
    }
    let ok = lambda_err <= 1e-8 && node_err <= 1e-8 && f_err <= 1e-9;
    Ok((ok, format!("max|lambda-n| {lambda_err:.2e}, max node error {node_err:.2e}, sup|F_n| {f_err:.2e}")))
}

fn c2() -> Check {
    let (p0, q0) = (0.3, 1.2);
    let problem = robin(RealFunction::constant(p0), RealFunction::constant(q0));
    let mut levels: Vec<usize> = (1..=50).collect();
    levels.extend([64, 128]);
    let (spectrum, set) = solve(&problem, &levels)?;
    let exact = |n: usize| p0 + (p0 * p0 + q0 + (n * n) as f64).sqrt();
    let lambda_err = (1..=50)
        .map(|n| (spectrum.lambda(n).unwrap_or(f64::NAN) - exact(n)).abs())
        .fold(0.0, f64::max);
    let node_err = max_node_error(&set, |n, j| (j as f64 - 0.5) * PI / n as f64)?;
    let grid = uniform_grid(256);
    let mut errors = Vec::new();
    for n in [16, 32, 64, 128] {
        let lambda = spectrum.lambda(n).unwrap_or(f64::NAN);
        let r = reconstruct_q(&set, n, lambda, &problem.p, &grid, ReconstructionMode::Corrected)?;
        errors.push((n, sup_abs(&r.values, q0)));
    }
    let c_fit = errors.iter().map(|&(n, e)| n as f64 * e).fold(0.0, f64::max);
    let at_roundoff = errors.iter().all(|e| e.1 <= 1e-8);
    let slope = -log_log_slope(&errors.iter().map(|&(n, e)| (n as f64, e.max(f64::MIN_POSITIVE))).collect::<Vec<_>>());
    let order_ok = at_roundoff || slope >= 0.8;
    let ok = lambda_err <= 1e-8 && node_err <= 1e-9 && c_fit <= 20.0 && order_ok;
    Ok((
        ok,
        format!(
            "max|lambda-exact| {lambda_err:.2e}, max node error {node_err:.2e}, C {c_fit:.2e}, {}",
            if at_roundoff { "errors at round-off".to_string() } else { format!("order {slope:.2}") }
        ),
    ))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

fn c3() -> Check {
    let (a, b) = smooth_pair();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, problem) in [("q", &a), ("qbar", &b)] {
        let spectrum = compute_spectrum(problem, 100)?;
        let asym = compute_c0_c1(problem);
        let scaled: Vec<f64> = spectrum
            .entries
            .iter()
            .filter(|e| e.n > 50)
            .map(|e| e.n as f64 * (e.lambda - lambda_asymptotic(e.n, &asym)).abs())
            .collect();
        let medians: Vec<f64> = scaled.chunks(10).map(median).collect();
        let nonincreasing = medians.windows(2).all(|w| w[1] <= w[0]);
        ok &= nonincreasing;
        details.push(format!(
            "{name}: window medians {}",
            medians.iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>().join(" ")
        ));
    }
    Ok((ok, details.join("; ")))
}

fn c4() -> Check {
    let problem = robin(p_small(), sin3());
    let (spectrum, set) = solve(&problem, &[16, 64])?;
    let mode = ReconstructionMode::Corrected;
    let l1 = |n: usize| reconstruction_l1_error(&set, n, spectrum.lambda(n).unwrap_or(f64::NAN), &problem.p, mode, &problem.q);
    let (e16, e64) = (l1(16)?, l1(64)?);
    let points = [0.5, 1.0, 1.5, 2.0, 2.5];
    let pointwise = |n: usize| -> Result<Vec<f64>> {
        let r = reconstruct_q(&set, n, spectrum.lambda(n).unwrap_or(f64::NAN), &problem.p, &points, mode)?;
        Ok(r.values.iter().zip(&points).map(|(v, &x)| (v - problem.q.value(x)).abs()).collect())
    };
    let (p16, p64) = (pointwise(16)?, pointwise(64)?);
    let decreasing = p16.iter().zip(&p64).all(|(a, b)| b < a);
    let ok = e64 <= 0.6 * e16 && decreasing;
    let pairs: Vec<String> = p16.iter().zip(&p64).map(|(a, b)| format!("{a:.1e}->{b:.1e}")).collect();
    Ok((ok, format!("L1 {e16:.3e} -> {e64:.3e} (ratio {:.3}); pointwise {}", e64 / e16, pairs.join(" "))))
}

fn c5() -> Check {
    let h = 0.5;
    let problem = PencilProblem::new(RealFunction::zero(), RealFunction::zero(), h, 0.0, BoundaryCase::Robin);
    let levels = [16, 32, 64];
    let (spectrum, set) = solve(&problem, &levels)?;
    let q_est = studies::q_estimate(&set, &spectrum, 64, &problem.p, 256)?;
    let rec = recover_h(&set, &spectrum, 1, &levels, &q_est, &problem.p, HMode::Calibrated { kappa: default_kappa() })?;
    let kappas: Vec<f64> = [0.25, 0.5, 1.0].iter().map(|&h| calibration_constant(h, &CALIBRATION_LEVELS)).collect();
    let mean = kappas.iter().sum::<f64>() / 3.0;
    let spread = kappas.iter().map(|k| (k - mean).abs()).fold(0.0, f64::max) / mean.abs();
    let ok = (rec.estimate - h).abs() <= 2e-2 && spread <= 0.05;
    Ok((
        ok,
        format!(
            "calibrated h {:.6} (target {h}); kappa {} (spread {:.1e})",
            rec.estimate,
            kappas.iter().map(|k| format!("{k:.6}")).collect::<Vec<_>>().join(" "),
            spread
        ),
    ))
}

fn c6() -> Check {
    let (a, b) = smooth_pair();
    let levels: Vec<usize> = (64..=128).collect();
    let (_, xa) = solve(&a, &levels)?;
    let (_, xb) = solve(&b, &levels)?;
    let distance = l1_distance(&a.q, &b.q, 0, 0.0, PI)?;
    let est = dsigma(&xa, &xb, &a.p, &b.p, &levels, 8, Weights::Corrected, &ClassifyConfig::default())?;
    let Some(d0) = est.d0_hat else {
        return Ok((false, "pair classified as different cases".into()));
    };
    let ratio = distance / (2.0 * d0);
    let round_trip = [d0, 0.0, 1e-3, 0.37, 1.0, 12.5]
        .iter()
        .map(|&d| (from_dsigma(to_dsigma(d)) - d).abs() / d.max(1.0))
        .chain([0.0, 0.25, 0.5, 0.9].iter().map(|&s| (to_dsigma(from_dsigma(s)) - s).abs()))
        .fold(0.0, f64::max);
    let ok = (0.8..=1.2).contains(&ratio) && round_trip <= 1e-12;
    Ok((ok, format!("||q-qbar||_1 {distance:.5}, d0 {d0:.5}, ratio {ratio:.4}, round trip {round_trip:.1e}")))
}

fn c7() -> Check {
    let levels: Vec<usize> = (8..=40).collect();
    let x1 = NodalSet::free(levels.clone(), NodalCase::CaseI)?;
    let x2 = NodalSet::free(levels.clone(), NodalCase::CaseII)?;
    let z = RealFunction::zero();
    let mut values = Vec::new();
    for w in [Weights::Corrected, Weights::Printed] {
        values.push(dsigma(&x1, &x2, &z, &z, &levels, 8, w, &ClassifyConfig::default())?.dsigma_hat);
        values.push(dsigma(&x2, &x1, &z, &z, &levels, 8, w, &ClassifyConfig::default())?.dsigma_hat);
    }
    let ok = values.iter().all(|&v| v == 1.0);
    Ok((ok, format!("dsigma_hat {values:?}")))
}

fn c8() -> Check {
    let levels: Vec<usize> = (48..=64).collect();
    let p = p_small();
    let problems = [
        robin(p.clone(), sin3()),
        robin(p.clone(), sin3().with_cos(1, 0.2)),
        robin(p.clone(), sin3().with_sin(2, 0.1)),
    ];
    let sets = problems
        .iter()
        .map(|pr| solve(pr, &levels).map(|s| s.1))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&NodalSet, &RealFunction)> = sets.iter().map(|s| (s, &p)).collect();
    let report = pseudometric_selfcheck(&pairs, &levels, 8, Weights::Corrected, &ClassifyConfig::default())?;
    let ok = report.passed() && report.deviation_level == Some(64) && report.max_index_deviation <= 1;
    Ok((
        ok,
        format!(
            "max |J-Jbar| {} at n={:?}; violations: {}",
            report.max_index_deviation,
            report.deviation_level,
            if report.violations.is_empty() { "none".to_string() } else { report.violations.join("; ") }
        ),
    ))
}

fn c9() -> Check {
    let (a, b) = smooth_pair();
    let levels: Vec<usize> = (64..=128).collect();
    let mut with_32 = levels.clone();
    with_32.insert(0, 32);
    let (sa, xa) = solve(&a, &with_32)?;
    let (_, xb) = solve(&b, &levels)?;
    let values = levels
        .iter()
        .map(|&n| s_mn(&xa, &xb, &a.p, &b.p, 1, n, sa.lambda(n).unwrap_or(f64::NAN), Weights::Corrected).map(|s| (n, s)))
        .collect::<Result<Vec<_>>>()?;
    let dm = limsup_estimate(&values, 8)?.value;
    let distance = l1_distance(&a.q, &b.q, 1, 0.0, PI)?;
    let ratio = distance / (2.0 * dm);
    let err = |n: usize| deriv_l1_error(&xa, n, sa.lambda(n).unwrap_or(f64::NAN), &a.p, 1, ReconstructionMode::Corrected, &a.q);
    let (e32, e128) = (err(32)?, err(128)?);
    let ok = (0.7..=1.3).contains(&ratio) && e128 <= 0.7 * e32;
    Ok((
        ok,
        format!("||q'-qbar'||_1 {distance:.5}, d1 {dm:.5}, ratio {ratio:.4}; q' error {e32:.3e} -> {e128:.3e}"),
    ))
}

fn c10() -> Check {
    let robin_problem = PencilProblem::new(p_small(), sin3(), 0.7, 0.3, BoundaryCase::Robin);
    let dirichlet_problem = PencilProblem::new(p_small(), sin3(), 0.0, 0.3, BoundaryCase::Dirichlet);
    let mut sup = 0.0f64;
    for (problem, which) in [(&robin_problem, Which::Phi), (&dirichlet_problem, Which::Psi)] {
        for lambda in [1.5, 4.0, 9.5, 15.25, 20.0] {
            let v = solve_volterra(problem, lambda, which, HConvention::MatchBoundary)?;
            let solver = PhaseSolver::new(problem, lambda)?;
            let trace = solver.trace()?;
            for i in (0..v.values.len()).step_by(50) {
                let y = solver.solution_at(&trace, v.abscissa(i))?;
                sup = sup.max((y - v.values[i]).abs());
            }
        }
    }
    let mut worst = 0.0f64;
    for problem in [&robin_problem, &dirichlet_problem] {
        let spectrum = compute_spectrum(problem, 12)?;
        for m in 1..=12 {
            for n in m + 1..=12 {
                let (_, defect, norms) = orthogonality_terms(problem, &spectrum, m, n)?;
                worst = worst.max(defect / norms);
            }
        }
    }
    let ok = sup <= 1e-6 && worst <= 1e-6;
    Ok((ok, format!("Volterra vs phase sup {sup:.2e}; worst orthogonality defect / norms {worst:.2e}")))
}

/// Small two-problem config exercising every study.
pub const DETERMINISM_CONFIG: &str = r#"
[problem]
p = { sin = [[1, 0.2]] }
q = { sin = [[3, 1.0]] }
h = 0.5

[problem.bar]
q = { sin = [[3, 1.0]], cos = [[1, 0.2]] }

[run]
n_min = 12
n_max = 32
grid_size = 64
window = 8
"#;

type Study = fn(&ExperimentConfig, &Context) -> studies::StudyResult<StudyOutput>;

pub const STUDIES: [(&str, Study); 6] = [
    ("forward", studies::forward),
    ("nodes", studies::nodes),
    ("reconstruct", studies::convergence),
    ("recover-h", studies::recover_h_study),
    ("stability", studies::stability),
    ("high-order", studies::high_order),
];

fn c11() -> Check {
    let cfg = ExperimentConfig::parse(DETERMINISM_CONFIG).expect("bundled config is valid");
    let scratch = std::env::temp_dir().join(format!("pencil-determinism-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&scratch);
    let cached = Context {
        cache: Some(pencil_core::cache::Cache::new(&scratch)),
    };
    let mut mismatches = Vec::new();
    let mut tables = 0;
    for (name, study) in STUDIES {
        let run = |ctx: &Context| study(&cfg, ctx).map_err(|e| pencil_core::CoreError::Inconsistent(format!("{name}: {e}")));
        let first = run(&Context::default())?;
        let second = run(&Context::default())?;
        let cold = run(&cached)?;
        let warm = run(&cached)?;
        for other in [&second, &cold, &warm] {
            if other.tables != first.tables || other.report != first.report {
                mismatches.push(name);
                break;
            }
        }
        tables += first.tables.len();
    }
    let _ = std::fs::remove_dir_all(&scratch);
    mismatches.dedup();
    Ok((
        mismatches.is_empty(),
        format!(
            "{} studies, {tables} tables, repeated cold and warm-cache runs; mismatches: {}",
            STUDIES.len(),
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join(", ") }
        ),
    ))
}

/// One row of the trivial-problem table.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub check: &'static str,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl Discrepancy {
    /// Excess of `|value - expected|` over the tolerance; zero when within.
    pub fn excess(&self) -> f64 {
        let d = (self.value - self.expected).abs() - self.tolerance;
        if d.is_nan() {
            f64::INFINITY
        } else {
            d.max(0.0)
        }
    }
}

pub fn discrepancy_csv(rows: &[Discrepancy]) -> String {
    let mut csv = String::from("check,value,expected,tolerance,discrepancy\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.check,
            num(r.value),
            num(r.expected),
            num(r.tolerance),
            num(r.excess())
        );
    }
    csv
}

/// Exact answers for the free problem (`p = q = 0`, `h = H = 0`) in `cfg`,
/// compared against what the studies produce.
pub fn trivial_discrepancies(cfg: &ExperimentConfig, ctx: &Context) -> studies::StudyResult<Vec<Discrepancy>> {
    let wrap = |e| studies::StudyError::Core { stage: "selfcheck", source: e };
    let problem = &cfg.problem;
    let levels = cfg.metric_levels();
    let (spectrum, set) = ctx.solve(problem, &levels).map_err(wrap)?;
    let mut rows = Vec::new();
    let mut push = |check, value, expected, tolerance| {
        rows.push(Discrepancy {
            check,
            value,
            expected,
            tolerance,
        })
    };
    let lambda_err = spectrum.entries.iter().map(|e| (e.lambda - e.n as f64).abs()).fold(0.0, f64::max);
    push("max_eigenvalue_error", lambda_err, 0.0, 1e-8);
    let miscounted = spectrum.entries.iter().filter(|e| e.node_count != e.n).count();
    push("miscounted_levels", miscounted as f64, 0.0, 0.0);
    let node_err = max_node_error(&set, |n, j| (j as f64 - 0.5) * PI / n as f64).map_err(wrap)?;
    push("max_node_error", node_err, 0.0, 1e-8);
    let asym = compute_c0_c1(problem);
    push("asymptotic_c0", asym.c0, 0.0, 1e-12);
    push("asymptotic_c1", asym.c1, 0.0, 1e-12);

    let grid = uniform_grid(cfg.grid_size);
    for (mode, check) in [
        (ReconstructionMode::Corrected, "sup_reconstruction_corrected"),
        (ReconstructionMode::Paper, "sup_reconstruction_paper"),
    ] {
        let mut worst = 0.0f64;
        for &n in &levels {
            let r = reconstruct_q(&set, n, spectrum.lambda(n).unwrap_or(f64::NAN), &problem.p, &grid, mode).map_err(wrap)?;
            worst = worst.max(sup_abs(&r.values, 0.0));
        }
        push(check, worst, 0.0, 1e-9);
    }

    let out = studies::convergence(cfg, ctx)?;
    let h_est = |mode: &str| {
        out.report["results"]["h_recovery"]["estimates"][mode]
            .as_f64()
            .unwrap_or(f64::NAN)
    };
    push("h_paper", h_est("paper"), 0.0, 1e-6);
    push("h_calibrated", h_est("corrected"), 0.0, 1e-6);

    let stab = studies::stability(cfg, ctx)?;
    let d0 = stab.report["results"]["corrected"]["d0_hat"].as_f64().unwrap_or(f64::NAN);
    push("d0_identical", d0, 0.0, 0.0);
    let ds = stab.report["results"]["corrected"]["dsigma_hat"].as_f64().unwrap_or(f64::NAN);
    push("dsigma_identical", ds, 0.0, 0.0);
    let high = studies::high_order(cfg, ctx)?;
    let dm = high.report["results"]["1"]["metrics"]["corrected"]["dm_hat"].as_f64().unwrap_or(f64::NAN);
    push("d1_identical", dm, 0.0, 0.0);
    Ok(rows)
}
