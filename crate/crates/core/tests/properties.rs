use approx::assert_relative_eq;
use binar::calibration::{sample_all, sample_sup_functional, CalibrationA, CalibrationConfig};
use binar::estimation::{log_partial_likelihood, score, score_gradient};
use binar::linalg::Matrix;
use binar::model::{inverse_link, link_eval, simulate_series, Init, ModelSpec, ParamVector, SeriesSample};
use binar::monitoring::{rho, weight, MonitorConfig, MonitorState};
use binar::rng;
use binar::special::chi_square_sf;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn benchmark_series(m: usize, seed: u64) -> SeriesSample<f64> {
    simulate_series(&ModelSpec::benchmark(), m, seed, Init::default()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_is_gradient_of_log_pl(seed in 0u64..1000, b0 in -2.0..0.5f64, b1 in -0.3..0.3f64, b2 in -0.5..1.0f64) {
        let s = benchmark_series(120, seed);
        let beta = ParamVector::new(b0, b1, &[b2]);
        let g = score(&s, 10, &beta).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            let fd = (log_partial_likelihood(&s, 10, &up).unwrap() - log_partial_likelihood(&s, 10, &dn).unwrap()) / (2.0 * h);
            prop_assert!(rel_err(g.values[i], fd) < 1e-6, "coord {i}: {} vs {fd}", g.values[i]);
        }
    }

    #[test]
    fn gradient_is_jacobian_of_score(seed in 0u64..1000, b0 in -2.0..0.5f64, b1 in -0.3..0.3f64, b2 in -0.5..1.0f64) {
        let s = benchmark_series(120, seed);
        let beta = ParamVector::new(b0, b1, &[b2]);
        let hess = score_gradient(&s, 10, &beta).unwrap().values;
        let h = 1e-6;
        for j in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up.as_mut_slice()[j] += h;
            dn.as_mut_slice()[j] -= h;
            let gu = score(&s, 10, &up).unwrap().values;
            let gd = score(&s, 10, &dn).unwrap().values;
            for i in 0..3 {
                let fd = (gu[i] - gd[i]) / (2.0 * h);
                prop_assert!(rel_err(hess[(i, j)], fd) < 1e-6);
            }
        }
    }

    #[test]
    fn link_round_trip(eta in -20.0..20.0f64, n in 1u32..50) {
        let mu = inverse_link(eta, n);
        prop_assert!(mu > 0.0 && mu < n as f64);
        assert_relative_eq!(link_eval(mu, n).unwrap(), eta, epsilon = 1e-7, max_relative = 1e-9);
    }

    #[test]
    fn weight_matches_rho(m in 1usize..5000, k in 1usize..15000, gamma in 0.0..0.49f64) {
        let direct = weight(m, k, gamma).unwrap();
        let via_rho = (m as f64).powf(-0.5) * rho(k as f64 / m as f64, gamma).unwrap();
        prop_assert!((direct - via_rho).abs() <= 1e-14 * via_rho.max(1.0));
    }

    #[test]
    fn running_sum_is_recomputable(seed in 0u64..500, prefix in 1usize..300) {
        let full = benchmark_series(400, seed);
        let training = full.prefix(100).unwrap();
        let beta = binar::fit_mple(&training, 10, &Default::default()).unwrap().beta_hat;
        let config = MonitorConfig { m: 100, horizon: 3.0, gamma: 0.25, alpha: 0.05, threshold_c: f64::INFINITY, a: Matrix::identity(3) };
        let x_m = *training.x().last().unwrap();
        let mut state = MonitorState::new(beta.clone(), 10, x_m, config).unwrap();
        let stream = full.suffix_stream(100);
        for (x, w) in &stream[..prefix] {
            state.update(*x, w).unwrap();
        }
        // batch recomputation over the monitored segment, conditioning on X_m
        let mut xs = vec![x_m];
        let mut ws = Vec::new();
        for (x, w) in &stream[..prefix] {
            xs.push(*x);
            ws.extend_from_slice(w);
        }
        let seg = SeriesSample::new(xs, ws, 1, None).unwrap();
        let batch = score(&seg, 10, &beta).unwrap().values;
        prop_assert_eq!(state.running_sum(), &batch[..]);
    }

    #[test]
    fn calibration_is_free_of_sigma(seed in 0u64..1000, a in 0.2..3.0f64, b in -0.5..0.5f64, c in 0.2..3.0f64) {
        let s1 = Matrix::from_rows(&[vec![a, b * a.sqrt() * c.sqrt(), 0.0], vec![b * a.sqrt() * c.sqrt(), c, 0.1], vec![0.0, 0.1, 1.0]]).unwrap();
        prop_assume!(s1.cholesky().is_ok());
        let base = |sigma: Matrix<f64>| CalibrationConfig {
            sigma, a: CalibrationA::InverseSigma, horizon: 3.0, grid_m: 100, reps: 100,
            gammas: vec![0.0, 0.4], alphas: vec![0.05], master_seed: seed,
        };
        let x = sample_all(&base(s1), &[0.0, 0.4]).unwrap();
        let y = sample_all(&base(Matrix::identity(3)), &[0.0, 0.4]).unwrap();
        prop_assert_eq!(x, y);
    }
}

#[test]
fn explicit_inverse_sigma_matches_whitened_path() {
    let sigma = Matrix::from_rows(&[vec![2.0, 0.3, 0.1], vec![0.3, 1.5, -0.2], vec![0.1, -0.2, 0.7]]).unwrap();
    let explicit = CalibrationConfig {
        sigma: sigma.clone(),
        a: CalibrationA::Explicit(sigma.inverse_spd().unwrap()),
        horizon: 3.0,
        grid_m: 1000,
        reps: 100,
        gammas: vec![0.0],
        alphas: vec![0.05],
        master_seed: 11,
    };
    let whitened = CalibrationConfig {
        sigma: Matrix::identity(3),
        a: CalibrationA::Explicit(Matrix::identity(3)),
        ..explicit.clone()
    };
    for g in [0.0f64, 0.25, 0.4] {
        for rep in 0..20 {
            let u: f64 = sample_sup_functional(&explicit, g, rep).unwrap();
            let v: f64 = sample_sup_functional(&whitened, g, rep).unwrap();
            assert!((u - v).abs() <= 1e-10 * v.max(1.0), "rep {rep}: {u} vs {v}");
        }
    }
}

/// Straight transcription of the recipe: cumulative standard-normal vectors,
/// one more draw for `W₂(1)`, supremum of `ρ²(s)‖W₁(s) − sW₂(1)‖²`.
fn straight_line_sup(seed: u64, rep: u64, dim: usize, grid_m: usize, horizon: f64, gamma: f64) -> f64 {
    let mut rng = rng::stream(seed, rep);
    let steps = (horizon * grid_m as f64).floor() as usize;
    let mut walk = vec![vec![0.0; dim]; steps + 1];
    for k in 1..=steps {
        let prev = walk[k - 1].clone();
        for (cur, p) in walk[k].iter_mut().zip(prev) {
            let z: f64 = rng.sample(StandardNormal);
            *cur = p + z;
        }
    }
    let w2: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut best = f64::NEG_INFINITY;
    for (k, row) in walk.iter().enumerate().skip(1) {
        let s = k as f64 / grid_m as f64;
        let r = s.powf(-gamma) * (s + 1.0).powf(gamma - 1.0);
        let q: f64 = (0..dim).map(|j| (row[j] / (grid_m as f64).sqrt() - s * w2[j]).powi(2)).sum();
        best = best.max(r * r * q);
    }
    best
}

#[test]
fn sup_functional_matches_straight_line_oracle() {
    for a in [CalibrationA::InverseSigma, CalibrationA::Explicit(Matrix::identity(3))] {
        let config = CalibrationConfig {
            sigma: Matrix::identity(3),
            a,
            horizon: 3.0,
            grid_m: 1000,
            reps: 100,
            gammas: vec![0.0],
            alphas: vec![0.05],
            master_seed: 2024,
        };
        for rep in [0, 1, 57] {
            let got = sample_sup_functional(&config, 0.0, rep).unwrap();
            let want = straight_line_sup(2024, rep, 3, 1000, 3.0, 0.0);
            assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
        }
    }
}

/// `P(χ²_df > x)` by integrating the density with `t = u²`, which removes the
/// `t^{-1/2}` singularity at the origin for `df = 1`.
fn chi_square_sf_quadrature(x: f64, df: f64) -> f64 {
    let k = df / 2.0;
    let ln_norm = -(k * 2f64.ln() + statrs::function::gamma::ln_gamma(k));
    // integrand in u: 2u · t^{k-1} e^{-t/2} with t = u²
    let f = |u: f64| {
        if u == 0.0 {
            return if df == 1.0 { 2.0 * ln_norm.exp() } else { 0.0 };
        }
        let t = u * u;
        2.0 * u * ((k - 1.0) * t.ln() - t / 2.0 + ln_norm).exp()
    };
    // composite Simpson on [0, √x]
    let b = x.sqrt();
    let n = 20_000;
    let h = b / n as f64;
    let mut acc = f(0.0) + f(b);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - acc * h / 3.0
}

#[test]
fn chi_square_sf_matches_quadrature() {
    for df in [1.0, 2.0, 3.0, 5.0] {
        for i in 0..=50 {
            let x = i as f64;
            let exact = chi_square_sf(x, df);
            let quad = chi_square_sf_quadrature(x, df);
            assert!((exact - quad).abs() < 1e-8, "df {df} x {x}: {exact} vs {quad}");
        }
    }
    assert!((chi_square_sf(3.841, 1.0) - 0.05).abs() < 1e-3);
}
