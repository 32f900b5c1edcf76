use mfobs::kernel::{hermite_umf, output_adjoint_from, AdjointGainTable, GainEvaluator, GainGrid};
use mfobs::modop::{quadrature_weights, Quadrature};
use mfobs::observer::{error_bound, AlgebraicObserver, CoefficientSource, ObserverOptions};
use mfobs::ocf::{companion, to_ocf, LtvPlant};
use mfobs::plants;
use mfobs::sampled::{window_l2, StabilityReport};
use mfobs::sim::{presets, run, ObserverMode};
use mfobs::timefun::{GridSpec, MatrixSignal};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn observable_plant(n: usize, vals: &[f64]) -> Option<LtvPlant> {
    let a = DMatrix::from_fn(n, n, |i, j| vals[i * n + j]);
    let c = DMatrix::from_fn(1, n, |_, j| vals[n * n + j]);
    let plant = LtvPlant::new(
        MatrixSignal::constant(a),
        MatrixSignal::constant(DMatrix::identity(n, n)),
        MatrixSignal::constant(c),
        MatrixSignal::zeros(n, 1),
    )
    .ok()?;
    let det = mfobs::ocf::observability_matrix(&plant, 0.0).ok()?.determinant().abs();
    (det > 0.05).then_some(plant)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ocf_of_random_lti_plants(n in 2usize..=3, vals in prop::collection::vec(-1.5f64..1.5, 12)) {
        let Some(plant) = observable_plant(n, &vals) else { return Ok(()); };
        let grid = GridSpec::new(0.0, 1.0, 0.25).unwrap();
        let ocf = to_ocf(&plant, &grid).unwrap();
        prop_assert!(ocf.constant);
        let e1 = DMatrix::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { 0.0 });
        for t in grid.points() {
            let p = ocf.p.value(t).unwrap();
            let pinv = ocf.p_inv.value(t).unwrap();
            let cp = plant.c().value(t).unwrap() * &p;
            prop_assert!((cp - &e1).amax() <= 1e-8);
            let a = plant.a().value(t).unwrap();
            let pdot = ocf.p.eval(t, 1).unwrap();
            let res = &pinv * (&a * &p - pdot) - ocf.companion_at(t).unwrap();
            prop_assert!(res.amax() <= 1e-6);
            prop_assert!((p - ocf.p.value(0.0).unwrap()).amax() <= 1e-10);
            prop_assert!((ocf.a.value(t).unwrap() - ocf.a.value(0.0).unwrap()).amax() <= 1e-10);
        }
    }

    #[test]
    fn free_parameters_never_move_boundary_values(
        n in 2usize..=4,
        extra in 1usize..=3,
        horizon in 0.5f64..2.0,
        seed in 0u64..1000,
    ) {
        let k = hermite_umf(n, horizon, extra).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..n * extra).map(|_| normal.sample(&mut rng)).collect();
        prop_assert!(k.with_free_parameters(&free).unwrap().boundary_residual() <= 1e-12);
    }

    #[test]
    fn stability_report_is_self_consistent(
        k1 in 0.1f64..5.0, k3 in 0.0f64..5.0, ea in 0.0f64..10.0, ep in 0.0f64..10.0,
        l in 0.0f64..10.0, horizon in 0.1f64..3.0, t_bar in 0.001f64..0.5,
    ) {
        let r = StabilityReport::from_parts(k1, 0.0, k3, ea, ep, 1.0, l, horizon, t_bar);
        prop_assert!(r.consistency_residual() <= 1e-12);
        prop_assert!(r.with_t_bar(2.0 * t_bar).product >= r.product);
    }
}

/// Partial integration: int phi_i L[xi] = int (L* phi)_i xi + boundary terms at sigma = T.
#[test]
fn adjoint_identity_by_partial_integration() {
    for n in 2..=3 {
        let horizon = 1.5;
        let k = hermite_umf(n, horizon, 1).unwrap().with_free_parameters(&vec![0.3; n]).unwrap();
        let a: Vec<f64> = (0..n).map(|i| 0.4 - 0.3 * i as f64).collect();
        // xi(s) = sin(1.3 s) + s^2 / 2, derivatives in closed form
        let xi = |s: f64, j: usize| -> f64 {
            let trig = 1.3f64.powi(j as i32) * (1.3 * s + j as f64 * std::f64::consts::FRAC_PI_2).sin();
            trig + match j {
                0 => s * s / 2.0,
                1 => s,
                2 => 1.0,
                _ => 0.0,
            }
        };
        // L[xi] = xi^(n) + sum_k a[n-1-k] xi^(k)
        let l_xi = |s: f64| xi(s, n) + (0..n).map(|kk| a[n - 1 - kk] * xi(s, kk)).sum::<f64>();
        let h = 1e-3;
        let count = (horizon / h).round() as usize + 1;
        let w = quadrature_weights(count, h, Quadrature::Simpson).unwrap();
        let mut lhs = DVector::zeros(n);
        let mut rhs = DVector::zeros(n);
        for (j, wj) in w.iter().enumerate() {
            let s = j as f64 * h;
            let d = k.derivatives(s);
            lhs += d.column(0) * (l_xi(s) * wj);
            rhs += output_adjoint_from(&d, &a) * (xi(s, 0) * wj);
        }
        // boundary: sum_k coef_k sum_{j<k} (-1)^j phi^(j) xi^(k-1-j), evaluated at T (phi vanishes at 0)
        let d_end = k.derivatives(horizon);
        let mut boundary = DVector::zeros(n);
        for order in 1..=n {
            let coef = if order == n { 1.0 } else { a[n - 1 - order] };
            for j in 0..order {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                boundary += d_end.column(j) * (coef * sign * xi(horizon, order - 1 - j));
            }
        }
        let residual = (lhs - rhs - boundary).amax();
        assert!(residual <= 1e-6, "n = {n}: residual {residual:e}");
    }
}

#[test]
fn gains_change_continuously_with_free_parameters() {
    let plant = plants::oscillator_linear_part();
    let grid = GridSpec::new(0.0, 1.0, 0.5).unwrap();
    let ocf = to_ocf(&plant, &grid).unwrap();
    let gg = GainGrid {
        sigma_step: 0.01,
        t_start: 0.0,
        t_end: 1.0,
        t_step: 0.5,
    };
    let eval = GainEvaluator::new(&ocf, 2.0, &gg).unwrap();
    let base = hermite_umf(2, 2.0, 2).unwrap();
    let free = vec![0.2, -0.1, 0.05, 0.3];
    let j0 = eval.cost(&base.with_free_parameters(&free).unwrap(), 1.0);
    let mut prev = f64::INFINITY;
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let moved: Vec<f64> = free.iter().map(|v| v + eps).collect();
        let diff = (eval.cost(&base.with_free_parameters(&moved).unwrap(), 1.0) - j0).abs();
        assert!(diff <= prev + 1e-12);
        prev = diff;
    }
    assert!(prev < 1e-2);
}

fn continuous_error(step: f64) -> f64 {
    let mut sc = presets::lti_oscillator(0.22).unwrap();
    sc.mode = ObserverMode::Continuous;
    sc.noise.variance = 0.0;
    sc.kernel.optimize = false;
    sc.step = step;
    sc.t_end = 5.0;
    let tr = run(&sc).unwrap();
    tr.t.iter()
        .zip(&tr.ez_norm)
        .filter(|(t, _)| **t >= 2.0 - 1e-12)
        .map(|(_, e)| *e)
        .fold(0.0, f64::max)
}

#[test]
fn estimate_error_scales_with_step_squared() {
    let c: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&h| continuous_error(h) / (h * h)).collect();
    let (lo, hi) = c.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    assert!(hi / lo < 1.5, "fitted constants {c:?}");
}

fn oscillator_observer(step: f64) -> (AlgebraicObserver, AdjointGainTable) {
    let plant = plants::oscillator_linear_part();
    let grid = GridSpec::new(0.0, 1.0, 0.5).unwrap();
    let ocf = to_ocf(&plant, &grid).unwrap();
    let kernel = hermite_umf(2, 2.0, 0).unwrap();
    let table = AdjointGainTable::compute(
        &ocf,
        &kernel,
        &GainGrid {
            sigma_step: step,
            t_start: 0.0,
            t_end: 1.0,
            t_step: 0.5,
        },
        None,
    )
    .unwrap();
    let source = CoefficientSource::new(&plant, &ocf).unwrap();
    (AlgebraicObserver::new(source, kernel, 2, ObserverOptions::new(step)).unwrap(), table)
}

/// Oscillator `x' = A x + u` with `u = [sin(w t), 0.2]`, `x(0) = [1, 0]`, in closed form:
/// `y'' + y = 0.2 + w cos(w t)`. Returns `(x, u)`.
fn oscillator_solution(t: f64) -> (DVector<f64>, DVector<f64>) {
    let w: f64 = 0.7;
    let k = 1.0 / (1.0 - w * w);
    let c = 0.8 - w * k;
    let x1 = c * t.cos() + 0.2 + w * k * (w * t).cos();
    let x2 = -c * t.sin() - k * (w * t).sin();
    (DVector::from_vec(vec![x1, x2]), DVector::from_vec(vec![(w * t).sin(), 0.2]))
}

#[test]
fn estimate_depends_only_on_the_last_horizon() {
    let h = 1e-3;
    let (mut full, _) = oscillator_observer(h);
    let (mut late, _) = oscillator_observer(h);
    let start = 3000;
    for k in 0..=5000 {
        let t = k as f64 * h;
        let (x, u) = oscillator_solution(t);
        let y = x[0];
        full.push(t, y, &u).unwrap();
        if k >= start {
            late.push(t, y, &u).unwrap();
        }
    }
    let t = 5.0;
    let a = full.estimate(t).unwrap();
    let b = late.estimate(t).unwrap();
    assert!(!a.filling && !b.filling);
    assert!((&a.z_hat - &b.z_hat).amax() <= 1e-12);
    // and both reconstruct the true state (x = z for this plant)
    assert!((a.z_hat - oscillator_solution(t).0).amax() < 1e-5);
}

#[test]
fn measured_error_never_exceeds_the_l2_bound() {
    let h: f64 = 1e-3;
    let width = (2.0 / h).round() as usize;
    let mut violations = 0;
    let mut checked = 0;
    let mut worst_ratio = 0.0_f64;
    for seed in 0..100 {
        let (mut obs, table) = oscillator_observer(h);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nu = Vec::new();
        let mut errs = Vec::new();
        for k in 0..=3000 {
            let t = k as f64 * h;
            let (x, u) = oscillator_solution(t);
            let n = normal.sample(&mut rng);
            nu.push(n);
            obs.push(t, x[0] + n, &u).unwrap();
            let est = obs.estimate(t).unwrap();
            errs.push((est.z_hat - x).norm());
        }
        let nu_l2 = window_l2(&nu, h, width);
        for k in width..errs.len() {
            let b = error_bound(&table, 0.0, nu_l2[k], k as f64 * h).bound + 1e-5;
            checked += 1;
            worst_ratio = worst_ratio.max(errs[k] / b);
            if errs[k] > b {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0, "{violations} of {checked}; worst ratio {worst_ratio}");
    assert!(worst_ratio > 0.01, "bound is vacuous: worst ratio {worst_ratio}");
}

#[test]
fn companion_form_is_consistent_with_ordering() {
    let a = DVector::from_vec(vec![0.5, 2.0]);
    let m = companion(&a);
    assert_eq!(m, DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -2.0, 0.0]));
}
