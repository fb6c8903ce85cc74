//! Eigenvalues and nodal points by phase shooting.

use std::cell::RefCell;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::asymptotics::{compute_c0_c1, lambda_seed};
use crate::error::{CoreError, Result};
use crate::phase::{PhaseSolver, PhaseTrace};
use crate::nodal::{NodalCase, NodalSet, NodalSource};
use crate::problem::{BoundaryCase, PencilProblem};
use crate::quadrature::integrate_panels;

/// Accepted miss-distance at a certified eigenvalue.
pub const RESIDUAL_TOL: f64 = 1e-10;
const BRACKET_HALF_WIDTH: f64 = 0.45;
const BRACKET_MAX_EXPANSION: f64 = 3.0;
const LAMBDA_FLOOR: f64 = 0.05;
/// Target phase accuracy for refined nodes.
/// Node refinement stops once `|theta - k pi|` is within this many ulps of `k pi`.
const NODE_PHASE_ULPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumEntry {
    pub n: usize,
    pub lambda: f64,
    pub residual: f64,
    pub node_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub entries: Vec<SpectrumEntry>,
    pub problem_digest: String,
}

impl Spectrum {
    pub fn lambda(&self, n: usize) -> Option<f64> {
        self.entry(n).map(|e| e.lambda)
    }

    pub fn entry(&self, n: usize) -> Option<&SpectrumEntry> {
        self.entries
            .binary_search_by_key(&n, |e| e.n)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Checks ordering, residuals and node counts.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.residual <= RESIDUAL_TOL) {
                return Err(CoreError::Inconsistent(format!(
                    "residual {:e} at n = {} exceeds tolerance",
                    e.residual, e.n
                )));
            }
        }
        for w in self.entries.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.n <= a.n || b.lambda <= a.lambda {
                return Err(CoreError::Inconsistent(format!(
                    "eigenvalues not increasing between n = {} and n = {}",
                    a.n, b.n
                )));
            }
            if b.node_count - a.node_count != b.n - a.n {
                return Err(CoreError::Inconsistent(format!(
                    "node counts {} -> {} do not follow indices {} -> {}",
                    a.node_count, b.node_count, a.n, b.n
                )));
            }
        }
        Ok(())
    }
}

/// Signed distance of the phase at `pi` from the right-boundary target for index `n`.
pub fn miss_distance(problem: &PencilProblem, lambda: f64, n: usize) -> Result<f64> {
    PhaseSolver::new(problem, lambda)?.miss(n)
}

/// Certified `(lambda_n, |miss|)`.
pub fn find_eigenvalue(problem: &PencilProblem, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(CoreError::InsufficientData { needed: 1, got: 0 });
    }
    let asym = compute_c0_c1(problem);
    let seed = lambda_seed(&asym, problem.case, n);
    let miss = |lam: f64| miss_distance(problem, lam, n);

    let mut lo = (seed - BRACKET_HALF_WIDTH).max(LAMBDA_FLOOR);
    let mut hi = seed + BRACKET_HALF_WIDTH;
    let mut f_lo = miss(lo)?;
    let mut f_hi = miss(hi)?;
    while f_lo > 0.0 {
        if lo <= LAMBDA_FLOOR || seed - lo >= BRACKET_MAX_EXPANSION {
            return Err(CoreError::Bracket { n });
        }
        hi = lo;
        f_hi = f_lo;
        lo = (lo - BRACKET_HALF_WIDTH).max(LAMBDA_FLOOR);
        f_lo = miss(lo)?;
    }
    while f_hi < 0.0 {
        if hi - seed >= BRACKET_MAX_EXPANSION {
            return Err(CoreError::Bracket { n });
        }
        lo = hi;
        f_lo = f_hi;
        hi += BRACKET_HALF_WIDTH;
        f_hi = miss(hi)?;
    }

    let (lambda, residual) = brent(&miss, lo, hi, f_lo, f_hi)?;
    if residual > RESIDUAL_TOL {
        return Err(CoreError::NonConvergence {
            what: "eigenvalue search",
            detail: format!("n = {n}: residual {residual:e} at lambda = {lambda}"),
        });
    }
    let trace = PhaseSolver::new(problem, lambda)?.trace()?;
    let found = trace.crossing_count();
    if found != n {
        return Err(CoreError::Certification { n, found });
    }
    Ok((lambda, residual))
}

/// Brent's method on a sign-changing bracket; returns the root and `|f(root)|`.
fn brent<F>(f: &F, a0: f64, b0: f64, fa0: f64, fb0: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, fa0, fb0);
    if fa == 0.0 {
        return Ok((a, 0.0));
    }
    if fb == 0.0 {
        return Ok((b, 0.0));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-15;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= 1e-13 {
            return Ok((b, fb.abs()));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(CoreError::NonConvergence {
        what: "eigenvalue search",
        detail: "Brent iteration cap reached".into(),
    })
}

/// Spectrum for `n = 1..=n_max`.
pub fn compute_spectrum(problem: &PencilProblem, n_max: usize) -> Result<Spectrum> {
    let levels: Vec<usize> = (1..=n_max).collect();
    compute_levels(problem, &levels)
}

/// Spectrum restricted to the given indices (sorted, deduplicated).
pub fn compute_levels(problem: &PencilProblem, levels: &[usize]) -> Result<Spectrum> {
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if levels.first() == Some(&0) {
        return Err(CoreError::InsufficientData { needed: 1, got: 0 });
    }
    let entries = levels
        .par_iter()
        .map(|&n| {
            find_eigenvalue(problem, n)
                .map(|(lambda, residual)| SpectrumEntry {
                    n,
                    lambda,
                    residual,
                    node_count: n,
                })
                .map_err(|e| annotate(e, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let spectrum = Spectrum {
        entries,
        problem_digest: problem.digest(),
    };
    spectrum.validate()?;
    Ok(spectrum)
}

fn annotate(e: CoreError, n: usize) -> CoreError {
    match e {
        CoreError::NonConvergence { what, detail } => CoreError::NonConvergence {
            what,
            detail: format!("[n = {n}] {detail}"),
        },
        other => other,
    }
}

/// Nodes of every eigenfunction in `spectrum`, tagged by boundary case.
pub fn nodal_set(problem: &PencilProblem, spectrum: &Spectrum) -> Result<NodalSet> {
    let levels = spectrum
        .entries
        .par_iter()
        .map(|e| find_nodes(problem, e.lambda).map(|xs| (e.n, xs)).map_err(|err| annotate(err, e.n)))
        .collect::<Result<Vec<_>>>()?;
    NodalSet::from_levels(levels, case_tag(problem.case), NodalSource::Solver)
}

/// Nodal pattern expected from each boundary case.
pub fn case_tag(case: BoundaryCase) -> NodalCase {
    match case {
        BoundaryCase::Robin => NodalCase::CaseI,
        BoundaryCase::Dirichlet => NodalCase::CaseII,
    }
}

/// Interior zeros of the eigenfunction at `lambda`, refined on the phase.
pub fn find_nodes(problem: &PencilProblem, lambda: f64) -> Result<Vec<f64>> {
    let solver = PhaseSolver::new(problem, lambda)?;
    let trace = solver.trace()?;
    nodes_from_trace(&solver, &trace)
}

pub(crate) fn nodes_from_trace(solver: &PhaseSolver<'_>, trace: &PhaseTrace) -> Result<Vec<f64>> {
    let mut nodes = Vec::with_capacity(trace.crossing_count());
    let last = trace.len() - 1;
    for i in 0..last {
        let (t0, t1) = (trace.theta[i], trace.theta[i + 1]);
        // every k with t0 < k pi <= t1, excluding the endpoint x = pi
        let k_first = (t0 / PI).floor() as i64 + 1;
        let k_last = (t1 / PI).floor() as i64;
        for k in k_first.max(1)..=k_last {
            if i + 1 == last && (t1 - k as f64 * PI).abs() == 0.0 {
                continue;
            }
            let x = refine_crossing(solver, trace, i, k as f64 * PI)?;
            if x > 0.0 && x < PI {
                nodes.push(x);
            }
        }
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::Inconsistent(
            "refined nodes are not strictly increasing".into(),
        ));
    }
    Ok(nodes)
}

/// Safeguarded Newton on `theta(x) - k pi` within sample interval `i`,
/// evaluated as `(lambda x - k pi) + drift(x)`.
fn refine_crossing(solver: &PhaseSolver<'_>, trace: &PhaseTrace, i: usize, target: f64) -> Result<f64> {
    let lambda = solver.lambda();
    let x_lo0 = trace.abscissa(i);
    let u_lo0 = [trace.drift[i], trace.log_amplitude[i]];
    let (mut lo, mut hi) = (x_lo0, trace.abscissa(i + 1));
    // linear interpolation as the starting guess
    let (t0, t1) = (trace.theta[i], trace.theta[i + 1]);
    let mut x = lo + (hi - lo) * ((target - t0) / (t1 - t0)).clamp(0.0, 1.0);
    for _ in 0..100 {
        let u = solver.advance_drift(x_lo0, u_lo0, x)?;
        let g = (lambda * x - target) + u[0];
        if g.abs() <= NODE_PHASE_ULPS * f64::EPSILON * target {
            return Ok(x);
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = solver.rhs(x, &[u[0] + lambda * x, u[1]])[0];
        let mut next = x - g / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == x || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(next);
        }
        x = next;
    }
    Err(CoreError::NonConvergence {
        what: "node refinement",
        detail: format!("no convergence for phase target {target}"),
    })
}

/// `|int_0^pi [2p - lambda_m - lambda_n] phi_m phi_n dx|`, which vanishes for
/// eigenfunctions of distinct eigenvalues.
pub fn orthogonality_defect(problem: &PencilProblem, spectrum: &Spectrum, m: usize, n: usize) -> Result<f64> {
    let (_, defect, _) = orthogonality_terms(problem, spectrum, m, n)?;
    Ok(defect)
}

/// `(lambda_m, defect, ||phi_m||_2 ||phi_n||_2)`.
pub fn orthogonality_terms(
    problem: &PencilProblem,
    spectrum: &Spectrum,
    m: usize,
    n: usize,
) -> Result<(f64, f64, f64)> {
    let lm = spectrum.lambda(m).ok_or(CoreError::MissingLevel { n: m })?;
    let ln = spectrum.lambda(n).ok_or(CoreError::MissingLevel { n })?;
    let sm = PhaseSolver::new(problem, lm)?;
    let sn = PhaseSolver::new(problem, ln)?;
    let tm = sm.trace()?;
    let tn = sn.trace()?;
    // one panel per two samples of the finer trace resolves both eigenfunctions
    let panels = (tm.len().max(tn.len()) / 2).max(16);
    let failure: RefCell<Option<CoreError>> = RefCell::new(None);
    let value = |solver: &PhaseSolver<'_>, trace: &PhaseTrace, x: f64| {
        solver.solution_at(trace, x).unwrap_or_else(|e| {
            failure.borrow_mut().get_or_insert(e);
            0.0
        })
    };
    let weight = |x: f64| 2.0 * problem.p.value(x) - lm - ln;
    let integral = integrate_panels(|x| weight(x) * value(&sm, &tm, x) * value(&sn, &tn, x), 0.0, PI, panels);
    let norm_m = integrate_panels(|x| value(&sm, &tm, x).powi(2), 0.0, PI, panels);
    let norm_n = integrate_panels(|x| value(&sn, &tn, x).powi(2), 0.0, PI, panels);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok((lm, integral.abs(), (norm_m * norm_n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::RealFunction;
    use crate::problem::BoundaryCase;
    use approx::assert_abs_diff_eq;

    fn constant_case() -> PencilProblem {
        PencilProblem::new(
            RealFunction::constant(0.3),
            RealFunction::constant(1.2),
            0.0,
            0.0,
            BoundaryCase::Robin,
        )
    }

    #[test]
    fn free_robin_eigenvalue() {
        let (lam, res) = find_eigenvalue(&PencilProblem::free(BoundaryCase::Robin), 7).unwrap();
        assert_abs_diff_eq!(lam, 7.0, epsilon = 1e-8);
        assert!(res <= RESIDUAL_TOL);
    }

    #[test]
    fn constant_case_closed_form() {
        let (lam, _) = find_eigenvalue(&constant_case(), 5).unwrap();
        let exact = 0.3 + (0.09f64 + 1.2 + 25.0).sqrt();
        assert_abs_diff_eq!(lam, exact, epsilon = 1e-8);
        assert_abs_diff_eq!(exact, 5.42738, epsilon = 1e-5);
    }

    #[test]
    fn free_dirichlet_against_lambda_scan() {
        // brute-force oracle: scan the miss-distance sign on a 1e-4 grid
        let prob = PencilProblem::free(BoundaryCase::Dirichlet);
        let n = 3;
        let mut prev = None;
        let mut bracket = None;
        let mut lam = 2.0;
        while lam < 5.0 {
            let theta_end = lam * PI; // exact phase for p = q = 0
            let target = n as f64 * PI + lam.atan2(0.0);
            let s = theta_end - target;
            if let Some((l0, s0)) = prev {
                if s0 < 0.0 && s >= 0.0 {
                    bracket = Some((l0, lam));
                    break;
                }
            }
            prev = Some((lam, s));
            lam += 1e-4;
        }
        let (mut a, mut b) = bracket.unwrap();
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            let s = m * PI - (n as f64 * PI + m.atan2(0.0));
            if s < 0.0 {
                a = m
            } else {
                b = m
            }
        }
        let (got, _) = find_eigenvalue(&prob, n).unwrap();
        assert_abs_diff_eq!(got, 0.5 * (a + b), epsilon = 1e-9);
        assert_abs_diff_eq!(got, 3.5, epsilon = 1e-9);
    }

    #[test]
    fn spectrum_of_free_problem() {
        let s = compute_spectrum(&PencilProblem::free(BoundaryCase::Robin), 10).unwrap();
        for e in &s.entries {
            assert_abs_diff_eq!(e.lambda, e.n as f64, epsilon = 1e-8);
            assert_eq!(e.node_count, e.n);
        }
        s.validate().unwrap();
    }

    #[test]
    fn free_nodes_are_zeros_of_cos() {
        let nodes = find_nodes(&PencilProblem::free(BoundaryCase::Robin), 4.0).unwrap();
        assert_eq!(nodes.len(), 4);
        for (j, x) in nodes.iter().enumerate() {
            assert_abs_diff_eq!(*x, (2 * j + 1) as f64 * PI / 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_case_nodes_equispaced() {
        let prob = constant_case();
        let (lam, _) = find_eigenvalue(&prob, 5).unwrap();
        let nodes = find_nodes(&prob, lam).unwrap();
        assert_eq!(nodes.len(), 5);
        for (j, x) in nodes.iter().enumerate() {
            assert_abs_diff_eq!(*x, (j as f64 + 0.5) * PI / 5.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn dirichlet_free_nodes() {
        let prob = PencilProblem::free(BoundaryCase::Dirichlet);
        let (lam, _) = find_eigenvalue(&prob, 6).unwrap();
        let nodes = find_nodes(&prob, lam).unwrap();
        assert_eq!(nodes.len(), 6);
        for (j, x) in nodes.iter().enumerate() {
            assert_abs_diff_eq!(*x, (j + 1) as f64 * PI / lam, epsilon = 1e-10);
        }
    }

    #[test]
    fn orthogonality_examples() {
        let free = PencilProblem::free(BoundaryCase::Robin);
        let s = compute_spectrum(&free, 5).unwrap();
        assert!(orthogonality_defect(&free, &s, 2, 5).unwrap() <= 1e-9);

        let c = constant_case();
        let s = compute_spectrum(&c, 3).unwrap();
        assert!(orthogonality_defect(&c, &s, 1, 3).unwrap() <= 1e-8);
    }

    #[test]
    fn missing_level_is_reported() {
        let free = PencilProblem::free(BoundaryCase::Robin);
        let s = compute_levels(&free, &[2]).unwrap();
        assert!(matches!(
            orthogonality_defect(&free, &s, 2, 3),
            Err(CoreError::MissingLevel { n: 3 })
        ));
    }
}
