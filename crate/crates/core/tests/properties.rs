use std::f64::consts::PI;

use pencil_core::asymptotics::{nodes_asymptotic, ClassifyConfig, HShift};
use pencil_core::inverse::{deriv_l1_error, reconstruct_q, reconstruct_q_deriv, uniform_grid, ReconstructionMode};
use pencil_core::metrics::{dsigma, s_n, MetricReport, OrderMetrics, Weights};
use pencil_core::phase::PhaseSolver;
use pencil_core::quadrature::{integrate, integrate_osc, l1_distance, Phase};
use pencil_core::spectrum::{compute_levels, compute_spectrum, nodal_set};
use pencil_core::{BoundaryCase, NodalCase, NodalSet, NodalSource, PencilProblem, RealFunction};
use proptest::prelude::*;

fn smooth_function() -> impl Strategy<Value = RealFunction> {
    (
        prop::collection::vec((0u32..4, -1.0f64..1.0), 0..3),
        prop::collection::vec((1u32..4, -1.0f64..1.0), 0..3),
        prop::collection::vec((0u32..3, -0.5f64..0.5), 0..2),
    )
        .prop_map(|(c, s, p)| {
            let mut f = RealFunction::zero();
            for (k, a) in c {
                f = f.with_cos(k, a);
            }
            for (k, b) in s {
                f = f.with_sin(k, b);
            }
            for (d, a) in p {
                f = f.with_poly(d, a);
            }
            f
        })
}

fn test_family() -> Vec<PencilProblem> {
    let p = RealFunction::sin_term(1, 0.2);
    vec![
        PencilProblem::new(p.clone(), RealFunction::sin_term(3, 1.0), 0.0, 0.0, BoundaryCase::Robin),
        PencilProblem::new(p.clone(), RealFunction::sin_term(3, 1.0).with_cos(1, 0.2), 0.7, 0.3, BoundaryCase::Robin),
        PencilProblem::new(p, RealFunction::cos_term(2, 0.5), 0.0, 0.4, BoundaryCase::Dirichlet),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integration_is_additive(f in smooth_function(), a in 0.0f64..1.0, b in 1.0f64..2.0, c in 2.0f64..PI) {
        let g = |x: f64| f.value(x);
        let whole = integrate(g, a, c).unwrap();
        let split = integrate(g, a, b).unwrap() + integrate(g, b, c).unwrap();
        prop_assert!((whole - split).abs() <= 1e-12 * whole.abs().max(1.0));
    }

    #[test]
    fn zero_frequency_is_plain_integration(f in smooth_function(), a in 0.0f64..1.5, b in 1.5f64..PI) {
        let g = |x: f64| f.value(x);
        let plain = integrate(g, a, b).unwrap();
        let osc = integrate_osc(g, 0.0, Phase::Cos, a, b).unwrap();
        prop_assert!((plain - osc).abs() <= 1e-12 * plain.abs().max(1.0));
    }

    #[test]
    fn l1_distance_is_a_pseudometric(f in smooth_function(), g in smooth_function(), h in smooth_function()) {
        let d = |u: &RealFunction, v: &RealFunction| l1_distance(u, v, 0, 0.0, PI).unwrap();
        let (fg, gf) = (d(&f, &g), d(&g, &f));
        prop_assert!((fg - gf).abs() <= 1e-10);
        prop_assert!(d(&f, &h) <= fg + d(&g, &h) + 1e-10);
        prop_assert!(d(&f, &f) <= 1e-10);
    }

    #[test]
    fn s_n_of_solver_pairs_is_symmetric(k in 0usize..3, l in 0usize..3, n in 8usize..24) {
        let fam = test_family();
        let (a, b) = (&fam[k], &fam[l]);
        prop_assume!(a.case == b.case);
        let xa = nodal_set(a, &compute_levels(a, &[n]).unwrap()).unwrap();
        let xb = nodal_set(b, &compute_levels(b, &[n]).unwrap()).unwrap();
        prop_assert_eq!(
            s_n(&xa, &xb, &a.p, &b.p, n, Weights::Corrected).unwrap(),
            s_n(&xb, &xa, &b.p, &a.p, n, Weights::Corrected).unwrap()
        );
    }
}

#[test]
fn eigenvalues_increase_with_one_more_node_each() {
    for problem in test_family() {
        let s = compute_spectrum(&problem, 40).unwrap();
        for w in s.entries.windows(2) {
            assert!(w[1].lambda > w[0].lambda);
            assert_eq!(w[1].node_count, w[0].node_count + 1);
        }
        assert_eq!(s.entries[0].node_count, 1);
    }
}

#[test]
fn phase_increases_at_every_node() {
    for problem in test_family() {
        let s = compute_levels(&problem, &[3, 17, 40]).unwrap();
        let x = nodal_set(&problem, &s).unwrap();
        for e in &s.entries {
            let solver = PhaseSolver::new(&problem, e.lambda).unwrap();
            let trace = solver.trace().unwrap();
            for &node in x.level(e.n).unwrap() {
                let y = solver.state_at(&trace, node).unwrap();
                assert!(solver.rhs(node, &y)[0] > 0.0);
            }
        }
    }
}

#[test]
fn spectra_are_deterministic() {
    for problem in test_family() {
        let a = compute_spectrum(&problem, 25).unwrap();
        let b = compute_spectrum(&problem, 25).unwrap();
        assert_eq!(a, b);
        assert_eq!(nodal_set(&problem, &a).unwrap().levels(), nodal_set(&problem, &b).unwrap().levels());
    }
}

#[test]
fn asymptotic_lengths_are_pi_over_n_to_second_order() {
    for problem in test_family().into_iter().filter(|p| p.case == BoundaryCase::Robin) {
        let levels = [32, 64, 128];
        let s = compute_levels(&problem, &levels).unwrap();
        let scaled: Vec<f64> = levels
            .iter()
            .map(|&n| {
                let (_, lengths) = nodes_asymptotic(&problem, s.lambda(n).unwrap(), n, HShift::default()).unwrap();
                let nf = n as f64;
                nf * nf * lengths.iter().map(|l| (l - PI / nf).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(scaled[2] <= 1.5 * scaled[0] && scaled.iter().all(|v| v.is_finite()), "{scaled:?}");
    }
}

#[test]
fn reconstruction_sees_only_nodes_lambda_and_p() {
    // a bare copy of the solver's nodes, stripped of any link to the problem,
    // gives the same reconstruction
    let problem = &test_family()[0];
    let s = compute_levels(problem, &[24]).unwrap();
    let solver_set = nodal_set(problem, &s).unwrap();
    let copy = NodalSet::from_levels(
        [(24, solver_set.level(24).unwrap().to_vec())],
        NodalCase::Unknown,
        NodalSource::Synthetic,
    )
    .unwrap();
    let grid = uniform_grid(128);
    let lambda = s.lambda(24).unwrap();
    for mode in [ReconstructionMode::Paper, ReconstructionMode::Corrected] {
        let a = reconstruct_q(&solver_set, 24, lambda, &problem.p, &grid, mode).unwrap();
        let b = reconstruct_q(&copy, 24, lambda, &problem.p, &grid, mode).unwrap();
        assert_eq!(a.values, b.values);
        let a = reconstruct_q_deriv(&solver_set, 24, lambda, &problem.p, 1, &grid, mode).unwrap();
        let b = reconstruct_q_deriv(&copy, 24, lambda, &problem.p, 1, &grid, mode).unwrap();
        assert_eq!(a.values, b.values);
    }
}

#[test]
fn derivative_reconstruction_of_constant_q_vanishes() {
    let problem = PencilProblem::new(
        RealFunction::sin_term(1, 0.2),
        RealFunction::constant(1.2),
        0.0,
        0.0,
        BoundaryCase::Robin,
    );
    let s = compute_levels(&problem, &[64]).unwrap();
    let x = nodal_set(&problem, &s).unwrap();
    let err = deriv_l1_error(&x, 64, s.lambda(64).unwrap(), &problem.p, 1, ReconstructionMode::Corrected, &problem.q).unwrap();
    assert!(err <= 0.1, "{err}");
}

#[test]
fn same_case_nodal_distance_stays_bounded() {
    let fam = test_family();
    let levels = [16, 32, 64, 96, 128];
    let sa = compute_levels(&fam[0], &levels).unwrap();
    let sb = compute_levels(&fam[1], &levels).unwrap();
    let (xa, xb) = (nodal_set(&fam[0], &sa).unwrap(), nodal_set(&fam[1], &sb).unwrap());
    let values: Vec<f64> = levels
        .iter()
        .map(|&n| s_n(&xa, &xb, &fam[0].p, &fam[1].p, n, Weights::Corrected).unwrap())
        .collect();
    let (lo, hi) = values.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi <= 3.0 * lo, "{values:?}");
}

#[test]
fn metric_report_round_trips_through_json() {
    let levels: Vec<usize> = (8..=20).collect();
    let x = NodalSet::free(levels.clone(), NodalCase::CaseI).unwrap();
    let z = RealFunction::zero();
    let est = dsigma(&x, &x, &z, &z, &levels, 8, Weights::Corrected, &ClassifyConfig::default()).unwrap();
    let mut report = MetricReport::from_estimate(&est, 8, Weights::Corrected);
    report.per_m.insert(1, OrderMetrics { values: vec![(8, 0.0), (9, 0.0)], dm_hat: 0.0 });
    let text = serde_json::to_string(&report).unwrap();
    let back: MetricReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert!(text.contains("\"format_version\":1"));
    assert!(report.to_csv().starts_with("n,S_n,S_1_n\n"));
}
