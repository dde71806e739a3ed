//! Property tests for the structural invariants of each stage.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use tunnelkit::agmon::fast_march;
use tunnelkit::asymptotics::fit_sweep;
use tunnelkit::eig::{low_spectrum_with, SolverOptions};
use tunnelkit::interaction::{build_interaction, dirichlet_modes, well_system, WindowPolicy, SystemOptions};
use tunnelkit::mesh::{build_domain, discrete_gradient, gradient_norm_sq, Boundary, DomainGraph, DomainSpec, NodeField};
use tunnelkit::operator::{assemble, dirichlet_restrict};
use tunnelkit::potential::{field_from_fn, find_wells, EndoField};

fn domain_spec() -> impl Strategy<Value = DomainSpec> {
    prop_oneof![
        (8usize..60).prop_map(|n| DomainSpec::interval(-1.0, 2.0, n, Boundary::DirichletOuter)),
        (8usize..60).prop_map(|n| DomainSpec::interval(0.0, 1.0, n, Boundary::Periodic)),
        (8usize..16, 8usize..16).prop_map(|(a, b)| DomainSpec::rectangle([0.0, 1.0], [-1.0, 1.0], a, b)),
        (8usize..16, 8usize..16).prop_map(|(a, b)| DomainSpec::torus([0.0, 2.0], [0.0, 1.0], a, b)),
        (8usize..20, 8usize..20).prop_map(|(a, b)| DomainSpec::sphere(1.0, a, b)),
    ]
}

fn graph(spec: &DomainSpec) -> Arc<DomainGraph> {
    Arc::new(build_domain(spec).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edges_are_symmetric_and_volumes_positive(spec in domain_spec()) {
        let g = graph(&spec);
        prop_assert!(g.volumes().iter().all(|&v| v > 0.0));
        for i in 0..g.node_count() {
            for &(j, e) in g.neighbors(i) {
                let edge = g.edges()[e];
                prop_assert!(g.neighbors(j).iter().any(|&(k, f)| k == i && f == e));
                prop_assert!((edge.a, edge.b) == (i, j) || (edge.a, edge.b) == (j, i));
                prop_assert!(edge.conductance > 0.0);
            }
        }
    }

    #[test]
    fn pole_gradient_is_finite(c in -2.0f64..2.0, k in 1i32..4, rings in 8usize..24, lon in 8usize..24) {
        let g = graph(&DomainSpec::sphere(1.0, rings, lon));
        let f = field_from_fn(&g, |p| c * p[0].cos().powi(k) + p[0].sin().powi(2));
        let grad = discrete_gradient(&g, &f).unwrap();
        let norm = gradient_norm_sq(&g, &grad);
        let [n, s] = g.pole_nodes().unwrap();
        prop_assert!(norm[n].is_finite() && norm[s].is_finite());
    }

    #[test]
    fn operator_symmetric_semibounded_and_interlacing(
        a in 0.5f64..2.0,
        shift in -0.3f64..0.3,
        hbar in 0.05f64..0.5,
        w0 in -1.0f64..1.0,
        w1 in -1.0f64..1.0,
        left in 10usize..25,
        right in 10usize..25,
    ) {
        let g = graph(&DomainSpec::interval(-2.0, 2.0, 61, Boundary::DirichletOuter));
        let v = field_from_fn(&g, |p| a * (p[0] - shift).powi(2));
        let n = g.node_count();
        let w = EndoField::constant(n, &[w0, 0.5 * (w0 + w1), 0.5 * (w0 + w1), w1], 2).unwrap();
        let op = assemble(&g, &v, &w, hbar).unwrap();
        prop_assert!(op.matrix().is_symmetric_exact());
        let full = SymmetricEigen::new(op.matrix().to_dense()).eigenvalues;
        let min = full.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -hbar * w.max_norm() - 1e-12);

        let wells = find_wells(&v, &g).unwrap();
        let c = wells[0].node;
        let region: Vec<bool> = (0..n).map(|i| i + left >= c && i <= c + right).collect();
        let sub = dirichlet_restrict(&op, &region, &wells).unwrap();
        prop_assert!(sub.matrix().is_symmetric_exact());
        let mut f: Vec<f64> = full.iter().copied().collect();
        f.sort_by(f64::total_cmp);
        let mut d: Vec<f64> = SymmetricEigen::new(sub.matrix().to_dense()).eigenvalues.iter().copied().collect();
        d.sort_by(f64::total_cmp);
        for (x, y) in d.iter().zip(&f) {
            prop_assert!(*x >= *y - 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn eigenpairs_ordered_orthonormal_with_residuals(
        a in 0.5f64..3.0,
        b in 0.0f64..1.0,
        hbar in 0.05f64..0.3,
        k in 1usize..6,
        n in 40usize..120,
    ) {
        let g = graph(&DomainSpec::interval(-2.0, 2.0, n, Boundary::DirichletOuter));
        let v = field_from_fn(&g, |p| a * p[0] * p[0] + b * p[0].powi(4));
        let op = assemble(&g, &v, &EndoField::zero(g.node_count(), 1), hbar).unwrap();
        for threshold in [usize::MAX, 0] {
            let opts = SolverOptions { dense_threshold: threshold, ..Default::default() };
            let (pairs, _) = low_spectrum_with(&op, k, None, &opts).unwrap();
            prop_assert_eq!(pairs.len(), k);
            let norm = op.matrix().gershgorin_norm();
            for p in &pairs {
                prop_assert!(p.residual <= 1e-8 * (p.value.abs() + norm));
            }
            prop_assert!(pairs.windows(2).all(|w| w[0].value <= w[1].value));
            for i in 0..k {
                for j in 0..k {
                    let dot: f64 = (0..g.node_count())
                        .map(|m| g.volume(m) * pairs[i].vector.values[m] * pairs[j].vector.values[m])
                        .sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - expect).abs() < 1e-8, "<v{i}, v{j}> = {dot}");
                }
            }
        }
    }

    #[test]
    fn agmon_distance_invariants(
        c in prop::collection::vec(-1.5f64..1.5, 2..4),
        n in 201usize..401,
    ) {
        let mut c = c;
        c.sort_by(f64::total_cmp);
        prop_assume!(c.windows(2).all(|w| w[1] - w[0] > 0.5));
        let g = graph(&DomainSpec::interval(-2.0, 2.0, n, Boundary::DirichletOuter));
        let v = field_from_fn(&g, |p| c.iter().map(|ci| (p[0] - ci).powi(2)).product());
        let wells = find_wells(&v, &g).unwrap();
        prop_assert_eq!(wells.len(), c.len());
        let fields: Vec<_> = wells.iter().enumerate().map(|(j, w)| fast_march(&g, &v, w, j).unwrap()).collect();
        for f in &fields {
            prop_assert!(f.d.iter().all(|&d| d >= 0.0));
            let min = f.d.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(f.d[f.well.node], min);
            prop_assert!(min <= f.tau_fm);
            prop_assert!(f.accepted_order.windows(2).all(|w| f.d[w[0]] <= f.d[w[1]] + 1e-12));
        }
        let m = wells.len();
        let s = |i: usize, j: usize| fields[i].distance_at(&g, wells[j].coords);
        let tau = fields.iter().map(|f| f.tau_fm).fold(0.0, f64::max);
        for i in 0..m {
            for j in 0..m {
                prop_assert!((s(i, j) - s(j, i)).abs() <= tau);
                for k in 0..m {
                    prop_assert!(s(i, k) <= s(i, j) + s(j, k) + 2.0 * tau);
                }
            }
        }
    }

    #[test]
    fn fit_recovers_exact_models(
        s in 0.5f64..3.0,
        p in -1.0f64..1.5,
        c in -2.0f64..2.0,
        h0 in 0.05f64..0.1,
        count in 4usize..8,
    ) {
        let hbar: Vec<f64> = (0..count).map(|i| h0 * (1.0 + 0.15 * i as f64)).collect();
        let delta: Vec<f64> = hbar.iter().map(|h| c.exp() * h.powf(p) * (-s / h).exp()).collect();
        let f = fit_sweep(&hbar, &delta).unwrap();
        prop_assert!((f.s - s).abs() <= 1e-8 * s);
        prop_assert!((f.p - p).abs() <= 1e-6);
        prop_assert!((f.c - c).abs() <= 1e-6);
    }
}

/// m~ is exactly symmetric and its spectrum is unchanged by orthogonal
/// changes of basis inside each well.
#[test]
fn interaction_matrix_basis_covariance() {
    let g = graph(&DomainSpec::interval(-2.0, 2.0, 801, Boundary::DirichletOuter));
    let v = field_from_fn(&g, |p| (1.0 - p[0] * p[0]).powi(2));
    let n = g.node_count();
    let w = EndoField::constant(n, &[-0.3, 0.0, 0.0, 0.3], 2).unwrap();
    let wells = tunnelkit::potential::find_wells_endo(&v, &w, &g).unwrap();
    let sys = well_system(&g, &v, &w, &wells, &SystemOptions::default()).unwrap();
    let policy = WindowPolicy { clusters: 2, probe: 4 };
    let modes = dirichlet_modes(&sys, 0.1, &policy, &SolverOptions::default()).unwrap();
    let im = build_interaction(&sys, &modes, 0.1).unwrap();
    let m = im.m_tilde.len();
    for a in 0..m {
        for b in 0..m {
            assert_eq!(im.m_tilde[a][b].to_bits(), im.m_tilde[b][a].to_bits());
        }
    }
    let mt = DMatrix::from_fn(m, m, |a, b| im.m_tilde[a][b]);
    let mut base: Vec<f64> = SymmetricEigen::new(mt.clone()).eigenvalues.iter().copied().collect();
    base.sort_by(f64::total_cmp);
    for trial in 0..16 {
        let angles: Vec<f64> = (0..wells.len())
            .map(|j| ((trial * 7 + j * 13) as f64 * 0.731).sin() * 3.0)
            .collect();
        let mut q = DMatrix::zeros(m, m);
        for (j, t) in angles.iter().enumerate() {
            let idx: Vec<usize> = (0..m).filter(|&a| im.index[a].well == j).collect();
            assert_eq!(idx.len(), 2);
            let (c, s) = (t.cos(), t.sin());
            q[(idx[0], idx[0])] = c;
            q[(idx[0], idx[1])] = -s;
            q[(idx[1], idx[0])] = s;
            q[(idx[1], idx[1])] = c;
        }
        let rotated = &q * &mt * q.transpose();
        let mut ev: Vec<f64> = SymmetricEigen::new(rotated).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(&base) {
            assert!((x - y).abs() <= 1e-9 * y.abs(), "{x} vs {y}");
        }
    }
}

#[test]
fn discrete_gradient_converges_on_torus() {
    let mut errs = Vec::new();
    let mut hs = Vec::new();
    for n in [16, 32, 64] {
        let g = graph(&DomainSpec::torus([0.0, 1.0], [0.0, 1.0], n, n));
        let tau = std::f64::consts::TAU;
        let f = field_from_fn(&g, |p| (tau * p[0]).sin() * (tau * p[1]).cos());
        let grad = discrete_gradient(&g, &f).unwrap();
        let err = (0..g.node_count())
            .map(|i| {
                let p = g.coords(i);
                let gx = tau * (tau * p[0]).cos() * (tau * p[1]).cos();
                let gy = -tau * (tau * p[0]).sin() * (tau * p[1]).sin();
                (grad[i][0] - gx).abs().max((grad[i][1] - gy).abs())
            })
            .fold(0.0, f64::max);
        errs.push(err);
        hs.push(1.0 / n as f64);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.8, "order {order} from {errs:?}");
    }
    let _ = hs;
    let _ = NodeField::zeros(1, 1);
}
