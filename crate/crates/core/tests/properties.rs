use faer::Mat;
use proptest::prelude::*;

use vertexnoise::diagnostics::{classify, frac_norm, FracNormSpec, Verdict};
use vertexnoise::fem::Discretization;
use vertexnoise::graph::{validate_graph, EdgeSpec, GraphSpec, MetricGraph};
use vertexnoise::rng;
use vertexnoise::sde::{ou_variance_factor, phi1, Covariance};
use vertexnoise::solver::{Drift, MildProblem};
use vertexnoise::spectral::SpectralBasis;
use vertexnoise::surjectivity::surjectivity_construct;

/// Random tree: every new vertex hangs off an earlier one.
fn tree() -> impl Strategy<Value = GraphSpec> {
    (2usize..6)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                proptest::collection::vec(0.5f64..2.0, n - 1),
                proptest::collection::vec(0.5f64..2.0, n - 1),
                proptest::collection::vec(0.0f64..1.0, n - 1),
            )
        })
        .prop_map(|(n, parents, lengths, cond, pot)| {
            let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let edges = (1..n)
                .map(|i| {
                    let p = parents[i - 1].index(i);
                    EdgeSpec::new(&names[p], &names[i], lengths[i - 1])
                        .with_conductance(cond[i - 1])
                        .with_potential(pot[i - 1])
                })
                .collect();
            GraphSpec::from_parts(&refs, edges)
        })
}

fn coarse(g: &MetricGraph) -> Discretization {
    Discretization::new(g, 0.0125).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn toml_round_trip(spec in tree()) {
        let text = spec.to_toml_string();
        let back = GraphSpec::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        let g = validate_graph(&back).unwrap();
        prop_assert_eq!(g.boundary_dim(), 2 * g.n_edges());
        prop_assert_eq!(g.n_components(), 1);
    }

    #[test]
    fn form_matrices(spec in tree()) {
        let g = validate_graph(&spec).unwrap();
        let d = coarse(&g);
        let ones = vec![1.0; d.n_dofs()];
        prop_assert!((d.forms.m.quad_form(&ones, &ones) - g.total_length()).abs() < 1e-10);
        prop_assert!(d.forms.m.max_asymmetry() == 0.0 && d.forms.k.max_asymmetry() == 0.0);
        // energy of a constant is the potential integral
        let pot: f64 = g.edges().iter().map(|e| e.coeffs.potential * e.length).sum();
        prop_assert!((d.forms.k.quad_form(&ones, &ones) - pot).abs() < 1e-10);
    }

    #[test]
    fn spectrum_is_orthonormal_and_ordered(spec in tree()) {
        let g = validate_graph(&spec).unwrap();
        let d = coarse(&g);
        let b = SpectralBasis::compute(&d, 8).unwrap();
        for w in b.lambdas.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(b.lambdas.iter().all(|l| *l <= 0.0));
        for i in 0..8 {
            for j in 0..8 {
                let ip = b.mass.quad_form(&b.modes[i], &b.modes[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((ip - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn surjection_residual(spec in tree(), seed in any::<u64>()) {
        let g = validate_graph(&spec).unwrap();
        let z = rng::normals(seed, 0, 0, g.boundary_dim());
        let s = surjectivity_construct(&g, &z).unwrap();
        prop_assert!(s.contraction < 1.0);
        let scale = z.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        prop_assert!(s.residual_inf() < 1e-9 * scale);
    }

    #[test]
    fn linear_flow_contracts(spec in tree(), seed in any::<u64>()) {
        let g = validate_graph(&spec).unwrap();
        let b = SpectralBasis::compute(&coarse(&g), 8).unwrap();
        let zero = Drift::zero(g.n_edges());
        let pr = MildProblem::new(&b, &zero, None, 0.05, 0.5).unwrap();
        let u0 = rng::normals(seed, 1, 0, 8);
        let norms = pr.solve(&u0, 0).unwrap().norms();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_root(entries in proptest::collection::vec(-1.0f64..1.0, 9)) {
        // A Aᵀ is PSD
        let a = Mat::from_fn(3, 3, |i, j| entries[3 * i + j]);
        let q = Mat::from_fn(3, 3, |i, j| (0..3).map(|k| a[(i, k)] * a[(j, k)]).sum::<f64>());
        let c = Covariance::new(q.clone()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| c.sqrt[(i, k)] * c.sqrt[(k, j)]).sum();
                prop_assert!((s - q[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn variance_factor_bounds(lam in -1e4f64..0.0, t in 0.0f64..10.0) {
        let v = ou_variance_factor(lam, t);
        prop_assert!(v >= 0.0 && v <= t * (1.0 + 1e-12));
        prop_assert!(ou_variance_factor(lam, t + 0.1) >= v);
        if lam < -1e-3 {
            prop_assert!(v <= 1.0 / (-2.0 * lam) * (1.0 + 1e-12));
        }
        prop_assert!(phi1(lam * t) > 0.0 && phi1(lam * t) <= 1.0);
    }

    #[test]
    fn frac_norm_homogeneous_and_monotone(
        coeffs in proptest::collection::vec(-3.0f64..3.0, 6),
        a1 in -0.9f64..0.9,
        da in 0.0f64..0.5,
        s in -4.0f64..4.0,
    ) {
        let g = validate_graph(&GraphSpec::interval(1.0)).unwrap();
        let b = SpectralBasis::compute(&Discretization::new(&g, 1.0 / 64.0).unwrap(), 6).unwrap();
        let a2 = (a1 + da).min(0.99);
        let lo = FracNormSpec::new(1.0, a1).unwrap();
        let hi = FracNormSpec::new(1.0, a2).unwrap();
        prop_assert!(frac_norm(&coeffs, &lo, &b) <= frac_norm(&coeffs, &hi, &b) * (1.0 + 1e-12));
        let scaled: Vec<f64> = coeffs.iter().map(|c| s * c).collect();
        let n = frac_norm(&coeffs, &lo, &b);
        prop_assert!((frac_norm(&scaled, &lo, &b) - s.abs() * n).abs() < 1e-10 * (1.0 + n));
    }

    #[test]
    fn verdict_rule_is_consistent(slope in -3.0f64..1.0, se in 0.0f64..0.5) {
        let ci = (slope - 1.96 * se, slope + 1.96 * se);
        match classify(slope, ci) {
            Verdict::Converging => prop_assert!(slope < -1.15 && ci.1 < -1.0),
            Verdict::Diverging => prop_assert!(slope > -0.85 && ci.0 > -1.0),
            Verdict::Inconclusive => prop_assert!(!(slope < -1.15 && ci.1 < -1.0) && !(slope > -0.85 && ci.0 > -1.0)),
        }
    }

    #[test]
    fn rng_streams_are_keyed(seed in any::<u64>(), path in 0u64..1000, step in 0u64..1000) {
        let a = rng::normals(seed, path, step, 4);
        prop_assert_eq!(&a, &rng::normals(seed, path, step, 4));
        prop_assert_ne!(&a, &rng::normals(seed, path + 1, step, 4));
        prop_assert_ne!(&a, &rng::normals(seed, path, step + 1, 4));
        // prefixes agree, so longer draws extend shorter ones
        prop_assert_eq!(&a[..2], &rng::normals(seed, path, step, 2)[..]);
    }
}
