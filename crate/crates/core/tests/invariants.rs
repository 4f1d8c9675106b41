use vertexnoise::diagnostics::{frac_norm, regularity_series_k, FracNormSpec, Verdict};
use vertexnoise::fem::Discretization;
use vertexnoise::graph::{validate_graph, GraphSpec};
use vertexnoise::sde::{build_drive_k, simulate_ensemble, Covariance, NoiseConfig};
use vertexnoise::solver::{project_nodal, Drift, MildProblem, NoiseSource};
use vertexnoise::spectral::SpectralBasis;
use vertexnoise::stats;

fn interval_basis(h: f64, n: usize) -> (Discretization, SpectralBasis) {
    let g = validate_graph(&GraphSpec::interval(1.0)).unwrap();
    let d = Discretization::new(&g, h).unwrap();
    let b = SpectralBasis::compute(&d, n).unwrap().with_shift(1.0).unwrap();
    (d, b)
}

/// Lowest reconstructed value over the whole run, starting from `(x - 0.3)²`.
fn linear_flow_minimum(h: f64) -> f64 {
    let (d, b) = interval_basis(h, ((1.0 / h) as usize + 1) / 4);
    let u0 = d.mesh.interpolate(|_, x| (x - 0.3).powi(2));
    let c0 = project_nodal(&b, &u0).coeffs;
    let zero = Drift::zero(1);
    let pr = MildProblem::new(&b, &zero, None, 0.01, 0.2).unwrap();
    let s = pr.solve(&c0, 0).unwrap();
    s.coeffs[1..]
        .iter()
        .flat_map(|c| b.reconstruct(c))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn linear_flow_is_asymptotically_positive() {
    let coarse = linear_flow_minimum(1.0 / 64.0);
    let fine = linear_flow_minimum(1.0 / 128.0);
    assert!(coarse >= -1.0 / 64.0, "{coarse}");
    assert!(fine >= -1.0 / 128.0, "{fine}");
    assert!(fine.min(0.0) >= coarse.min(0.0), "{coarse} {fine}");
}

#[test]
fn closed_form_matches_monte_carlo() {
    let (_, b) = interval_basis(1.0 / 512.0, 100);
    let q = Covariance::identity(2);
    let ens = build_drive_k(&b).with_covariance(&q).unwrap();
    let cfg = NoiseConfig::new(q.clone(), 31, 0.05, 0.5).unwrap();
    let times = [0.1, 0.5];
    let sample = simulate_ensemble(&ens, &cfg, 4000, &times).unwrap();
    for alpha in [-0.2, 0.0, 0.2] {
        let spec = FracNormSpec::new(1.0, alpha).unwrap();
        for (c, t) in times.iter().enumerate() {
            let exact = regularity_series_k(&b, &q, alpha, *t).unwrap().total();
            let norms: Vec<f64> = sample
                .values
                .iter()
                .map(|p| frac_norm(&p[c], &spec, &b).powi(2))
                .collect();
            let mean = stats::mean(&norms);
            let se = (stats::variance(&norms) / norms.len() as f64).sqrt();
            assert!(
                (mean - exact).abs() < 3.0 * se,
                "alpha {alpha} t {t}: {mean} vs {exact} (se {se})"
            );
        }
    }
}

#[test]
fn verdicts_survive_refinement() {
    let q = Covariance::identity(2);
    let verdicts = |h: f64, n: usize| -> Vec<Verdict> {
        let (_, b) = interval_basis(h, n);
        [0.05, 0.45]
            .iter()
            .map(|a| regularity_series_k(&b, &q, *a, 1.0).unwrap().verdict)
            .collect()
    };
    let base = verdicts(1.0 / 512.0, 100);
    assert_eq!(base, vec![Verdict::Converging, Verdict::Diverging]);
    assert_eq!(verdicts(1.0 / 1024.0, 100), base);
    assert_eq!(verdicts(1.0 / 1024.0, 200), base);
}

#[test]
fn cubic_drift_with_noise_is_stable_under_dt_halving() {
    let (_, b) = interval_basis(1.0 / 64.0, 16);
    let drift = Drift::odd_polynomial(vec![vec![0.0, 1.0, 0.0, -1.0]]).unwrap();
    let mut u0 = vec![0.0; 16];
    u0[0] = 0.5;
    let second_moment = |dt: f64| -> f64 {
        let cfg = NoiseConfig::new(Covariance::identity(2), 77, dt, 1.0).unwrap();
        let src = NoiseSource::new(build_drive_k(&b), &cfg).unwrap();
        let pr = MildProblem::new(&b, &drift, Some(&src), dt, 1.0).unwrap();
        let paths = pr.ensemble(&u0, 2000).unwrap();
        let finals: Vec<f64> = paths
            .iter()
            .map(|p| {
                let n = p.norms();
                assert!(n.iter().all(|x| x.is_finite() && *x < 10.0));
                n.last().unwrap().powi(2)
            })
            .collect();
        stats::mean(&finals)
    };
    let coarse = second_moment(1.0 / 32.0);
    let fine = second_moment(1.0 / 64.0);
    assert!((coarse - fine).abs() < 0.05 * fine, "{coarse} {fine}");
}
