use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use modehop::diagnostics::{pooled_mean, recov, rem, RunningMoments};
use modehop::harness::{parse_config, ExperimentConfig, TargetSpec};
use modehop::hmc::{leapfrog, HmcParams};
use modehop::modefinder::{
    find_new_mode, geodesic_start_proposal, residual_objective, ModeFinderConfig, ModeRegistry, ModelKind, SearchBox,
};
use modehop::numerics::{
    bfgs_maximize, distance, finite_diff_gradient, fixed_point_solve, symmetric_eigenvalues, Cholesky, Mat,
};
use modehop::regeneration::{regeneration_log_probability, regeneration_probability, ClockKind, SamplerKind, ScheduleMode, SearchLatency};
use modehop::targets::{
    gmm_generate_benchmark, sensor_generate_instance, GaussianMixture, Observation, SensorNetwork, Target, WeightScheme,
};
use modehop::wormhole::{generalized_leapfrog_step, metric, mollifier, Wormhole, WormholeNetwork};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let a = Mat::from_row_major(d, normals(rng, d * d));
    let mut m = a.matmul(&a.transpose());
    m.add_diagonal(d as f64 * 0.1);
    m
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().map(|v| v.abs()).fold(1.0, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cholesky_round_trip(seed in any::<u64>(), d in 1usize..=100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_spd(&mut rng, d);
        let back = Cholesky::new(&m).unwrap().reconstruct();
        let scale = m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(back.max_abs_diff(&m) <= 1e-10 * scale);
    }

    #[test]
    fn bfgs_solves_concave_quadratics(seed in any::<u64>(), d in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, d);
        let c = normals(&mut rng, d);
        let start = normals(&mut rng, d);
        // f = -½ (x-c)ᵀA(x-c)
        let f = |x: &[f64]| {
            let r: Vec<f64> = x.iter().zip(&c).map(|(p, q)| p - q).collect();
            let ar = a.mul_vec(&r);
            (-0.5 * r.iter().zip(&ar).map(|(p, q)| p * q).sum::<f64>(), ar.iter().map(|v| -v).collect())
        };
        let res = bfgs_maximize(&f, &start, 1e-9, 1000);
        prop_assert!(res.gradient_norm <= 1e-8, "{res:?}");
        prop_assert!(res.iterations <= 2 * d + 5, "{} iterations in d = {d}", res.iterations);
    }

    #[test]
    fn fixed_point_meets_its_contract(seed in any::<u64>(), k in 0.05f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = normals(&mut rng, 4);
        let map = |z: &[f64]| z.iter().zip(&b).map(|(zi, bi)| k * zi.sin() + bi).collect::<Vec<f64>>();
        let fp = fixed_point_solve(map, &[0.0; 4], 1e-10, 1000).unwrap();
        prop_assert!(distance(&map(&fp.point), &fp.point) <= 1e-10);
        prop_assert_eq!(distance(&map(&fp.point), &fp.point), fp.residual);
    }

    #[test]
    fn gmm_gradient_matches_finite_differences(seed in any::<u64>()) {
        let g = gmm_generate_benchmark(5, 3, WeightScheme::Proportional, seed % 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Near a random component so the density is not vanishingly small.
        let k = rng.random_range(0..3);
        let x: Vec<f64> = g.means()[k].iter().map(|m| m + 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let an = g.grad_log_density(&x).unwrap();
        let fd = finite_diff_gradient(|p| g.log_density(p), &x, 1e-5).unwrap();
        prop_assert!(rel_close(&an, &fd, 1e-4), "{an:?} vs {fd:?}");
    }

    #[test]
    fn sensor_gradient_matches_finite_differences(seed in any::<u64>()) {
        let s = sensor_generate_instance(4, 0.3, 0.02, seed % 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = s.truth().unwrap().iter().map(|t| t + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let an = s.grad_log_density(&x).unwrap();
        let fd = finite_diff_gradient(|p| s.log_density(p), &x, 1e-7).unwrap();
        prop_assert!(rel_close(&an, &fd, 1e-4), "{an:?} vs {fd:?}");
    }

    #[test]
    fn gmm_permutation_invariance(seed in any::<u64>()) {
        let g = gmm_generate_benchmark(3, 4, WeightScheme::Proportional, seed % 100).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..4).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let h = GaussianMixture::new(
            order.iter().map(|&i| g.weights()[i]).collect(),
            order.iter().map(|&i| g.means()[i].clone()).collect(),
            order.iter().map(|&i| g.covariances()[i].clone()).collect(),
        ).unwrap();
        let x: Vec<f64> = (0..3).map(|_| 10.0 * rng.random::<f64>()).collect();
        prop_assert!((g.log_density(&x) - h.log_density(&x)).abs() <= 1e-12 * (1.0 + g.log_density(&x).abs()));
    }

    #[test]
    fn sensor_pair_order_invariance(seed in any::<u64>()) {
        let s = sensor_generate_instance(4, 0.3, 0.02, seed % 100).unwrap();
        let mut pairs: Vec<Observation> = s.pairs().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..pairs.len()).rev() {
            pairs.swap(i, rng.random_range(0..=i));
        }
        let t = SensorNetwork::new(4, 0.3, 0.02, vec![], pairs).unwrap();
        let x: Vec<f64> = s.truth().unwrap().iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (a, b) = (s.log_density(&x), t.log_density(&x));
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn leapfrog_is_reversible(seed in any::<u64>(), eps in 0.01f64..0.5, n in 1usize..40) {
        let g = gmm_generate_benchmark(4, 3, WeightScheme::Equal, seed % 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = g.means()[0].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect();
        let p0 = normals(&mut rng, 4);
        let params = HmcParams::new(eps, n);
        let (x1, p1) = leapfrog(&g, &x0, &p0, eps, n, &params).unwrap();
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (x2, p2) = leapfrog(&g, &x1, &back, eps, n, &params).unwrap();
        prop_assert!(distance(&x2, &x0) <= 1e-10 * (1.0 + modehop::numerics::norm(&x0)));
        let p2n: Vec<f64> = p2.iter().map(|v| -v).collect();
        prop_assert!(distance(&p2n, &p0) <= 1e-10 * (1.0 + modehop::numerics::norm(&p0)));
    }

    #[test]
    fn empty_network_step_matches_leapfrog(seed in any::<u64>(), eps in 0.01f64..0.5) {
        let g = GaussianMixture::standard_normal(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normals(&mut rng, 5);
        let v = normals(&mut rng, 5);
        let (xa, va, _) = generalized_leapfrog_step(&WormholeNetwork::empty(), &g, &x, &v, eps).unwrap();
        let (xb, vb) = leapfrog(&g, &x, &v, eps, 1, &HmcParams::new(eps, 1)).unwrap();
        prop_assert!(distance(&xa, &xb) <= 1e-12 && distance(&va, &vb) <= 1e-12);
    }

    #[test]
    fn metric_eigenvalues_in_range(seed in any::<u64>(), eps_w in 1e-6f64..1.0, f in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| 6.0 * rng.random::<f64>()).collect()).collect();
        let net = WormholeNetwork::new(&modes, eps_w, f, 0.68, true).unwrap();
        for _ in 0..1000 {
            // Mix points on segments with points anywhere.
            let x: Vec<f64> = if rng.random::<bool>() {
                let t: f64 = rng.random();
                let (a, b) = (&modes[0], &modes[rng.random_range(1..3)]);
                a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
            } else {
                (0..3).map(|_| 8.0 * rng.random::<f64>() - 1.0).collect()
            };
            let g = metric(&net, &x);
            prop_assert!(g.is_symmetric(0.0));
            let ev = symmetric_eigenvalues(&g);
            prop_assert!(ev[0] >= eps_w * (1.0 - 1e-12) && ev[2] <= 1.0 + 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn mollifier_is_one_exactly_on_the_segment(seed in any::<u64>(), f in 0.01f64..2.0, t in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..3).map(|_| 4.0 * rng.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0 + 3.0 * rng.random::<f64>()).collect();
        let w = Wormhole::new(a.clone(), b.clone(), 1e-4, f).unwrap();
        let on: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + t * (q - p)).collect();
        prop_assert_eq!(mollifier(&w, &on), 1.0);
        let off: Vec<f64> = on.iter().map(|v| v + 0.05 + 0.5 * rng.random::<f64>()).collect();
        let m = mollifier(&w, &off);
        prop_assert!(m > 0.0 && m < 1.0);
    }

    #[test]
    fn metric_contracts_along_the_wormhole(seed in any::<u64>(), k in -100.0f64..100.0, eps_w in 1e-6f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = normals(&mut rng, 4);
        let b: Vec<f64> = a.iter().map(|v| v + 2.0 + rng.random::<f64>()).collect();
        let w = Wormhole::new(a, b, eps_w, 0.1).unwrap();
        let v: Vec<f64> = w.direction.iter().map(|u| k * u).collect();
        let want = eps_w * k * k;
        prop_assert!((w.quad(&v) - want).abs() <= 1e-12 * want.max(1.0));
        prop_assert!((w.metric().quad_form(&v) - want).abs() <= 1e-12 * (k * k).max(1.0));
    }

    #[test]
    fn regeneration_probability_in_unit_interval(
        a in 1e-300f64..1e300, b in 1e-300f64..1e300, c in 1e-300f64..1e300,
        d in 1e-300f64..1e300, e in 1e-300f64..1e300,
    ) {
        let r = regeneration_probability(a, b, c, d, e);
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn regeneration_is_one_when_q_equals_pi(p in 1e-200f64..1e200, p1 in 1e-200f64..1e200) {
        prop_assert_eq!(regeneration_probability(p, p, p1, p1, 1.0), 1.0);
        prop_assert_eq!(regeneration_log_probability(0.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn rem_zero_iff_equal_and_nonnegative(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference: Vec<f64> = (0..d).map(|_| 1.0 + rng.random::<f64>()).collect();
        let est: Vec<f64> = reference.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        prop_assert_eq!(rem(&reference, &reference).unwrap(), 0.0);
        let r = rem(&est, &reference).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(r == 0.0, est == reference);
        let m = Mat::from_diag(&reference);
        prop_assert_eq!(recov(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn rem_is_scale_covariant(seed in any::<u64>(), e in -20i32..20, a in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference: Vec<f64> = (0..5).map(|_| 1.0 + rng.random::<f64>()).collect();
        let est: Vec<f64> = reference.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let base = rem(&est, &reference).unwrap();
        // Powers of two scale without rounding.
        let p = 2f64.powi(e);
        let scaled = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<f64>>();
        prop_assert_eq!(rem(&scaled(&est, p), &scaled(&reference, p)).unwrap(), base);
        prop_assert!((rem(&scaled(&est, a), &scaled(&reference, a)).unwrap() - base).abs() <= 1e-12 * base.max(1e-300));
    }

    #[test]
    fn pooled_mean_is_concatenated_mean(seed in any::<u64>(), n in 2usize..200, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| normals(&mut rng, d).iter().map(|v| 3.0 + v).collect()).collect();
        let split = rng.random_range(1..n);
        let mut a = RunningMoments::new(d);
        let mut b = RunningMoments::new(d);
        let mut all = RunningMoments::new(d);
        for (i, x) in xs.iter().enumerate() {
            if i < split { a.push(x) } else { b.push(x) }
            all.push(x);
        }
        let pooled = pooled_mean((a.count(), a.mean()), (b.count(), b.mean())).unwrap();
        let direct: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        prop_assert!(rel_close(&pooled, &direct, 1e-12));
        a.merge(&b);
        prop_assert!(rel_close(a.mean(), all.mean(), 1e-12));
    }

    #[test]
    fn straight_geodesic_on_flat_field(seed in any::<u64>(), c in -5.0f64..5.0, steps in 1usize..300, h in 1e-3f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = normals(&mut rng, 3);
        let v0 = normals(&mut rng, 3);
        let n0 = modehop::numerics::norm(&v0);
        let phi = |x: &[f64]| (c, vec![0.0; x.len()]);
        let r = geodesic_start_proposal(phi, &x0, &v0, steps, h, 0.7, None);
        // Equal values everywhere: the last point wins.
        for i in 0..3 {
            let want = x0[i] + steps as f64 * h * v0[i] / n0;
            prop_assert!((r.point[i] - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn config_round_trip(
        seed in any::<u64>(), chains in 1usize..16, step in 1e-4f64..2.0, f in 1e-3f64..1.0,
        alpha in proptest::option::of(1e-3f64..5.0), budget in proptest::option::of(1.0f64..1e4),
        kde in any::<bool>(), hmc in any::<bool>(), sched in 0usize..3, wall in any::<bool>(), zero in any::<bool>(),
    ) {
        let mut c = ExperimentConfig::new(TargetSpec::Sensor { n: 5 });
        c.seed = seed;
        c.chains = chains;
        c.hmc.step_size = step;
        c.wormhole.influence = f;
        c.modefinder.alpha = alpha;
        c.budget_seconds = budget;
        c.modefinder.model = if kde { ModelKind::Kde } else { ModelKind::Gaussian };
        c.sampler = if hmc { SamplerKind::Hmc } else { SamplerKind::Whmc };
        c.schedule = [ScheduleMode::AllModesFirst, ScheduleMode::OnTheFly, ScheduleMode::ForcedUpdate][sched];
        c.clock = if wall { ClockKind::Wall } else { ClockKind::Logical };
        c.search_latency = if zero { SearchLatency::Zero } else { SearchLatency::Work };
        let back = parse_config(&c.to_text()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(parse_config(&back.to_text()).unwrap(), back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn registry_modes_are_true_stationary_points_and_spread(seed in any::<u64>()) {
        let g = gmm_generate_benchmark(3, 4, WeightScheme::Proportional, seed % 30).unwrap();
        let (lo, hi) = g.generator_box().unwrap();
        let cfg = ModeFinderConfig::new(SearchBox::inflated_cube(3, lo, hi, 0.2));
        let mut reg = ModeRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..6 {
            let out = find_new_mode(&g, &reg, &cfg, &mut rng);
            reg.absorb(out, 0.0);
        }
        for r in reg.records() {
            let gn = modehop::numerics::norm(&g.grad_log_density(&r.location).unwrap());
            prop_assert!(gn <= 1e-6, "gradient norm {gn}");
        }
        let recs = reg.records();
        for j in 0..recs.len() {
            for i in 0..j {
                prop_assert!(distance(&recs[i].location, &recs[j].location) > recs[j].scale_radius());
            }
        }
    }
}

#[test]
fn empty_registry_residual_keeps_argmax() {
    // Bimodal 1-D mixture on a grid.
    let g = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![-2.0], vec![3.0]],
        vec![Mat::from_diag(&[0.5]), Mat::from_diag(&[1.5])],
    )
    .unwrap();
    let reg = ModeRegistry::new();
    let phi = residual_objective(&g, &reg, 1.0);
    let grid: Vec<f64> = (0..=2000).map(|i| -6.0 + 12.0 * i as f64 / 2000.0).collect();
    let argmax = |f: &dyn Fn(f64) -> f64| grid.iter().copied().max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let a = argmax(&|x| g.log_density(&[x]));
    let b = argmax(&|x| phi(&[x]).0);
    assert_eq!(a, b);
}

#[test]
fn leapfrog_preserves_volume_on_harmonic_potential() {
    let g = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![Mat::from_diag(&[1.0, 4.0])]).unwrap();
    let params = HmcParams::new(0.1, 25);
    let z0 = [0.3, -0.7, 0.5, 1.1];
    let flow = |z: &[f64]| {
        let (x, p) = leapfrog(&g, &z[..2], &z[2..], 0.1, 25, &params).unwrap();
        [x, p].concat()
    };
    let h = 1e-6;
    let mut jac = Mat::zeros(4);
    for j in 0..4 {
        let mut a = z0.to_vec();
        let mut b = z0.to_vec();
        a[j] += h;
        b[j] -= h;
        let (fa, fb) = (flow(&a), flow(&b));
        for i in 0..4 {
            jac[(i, j)] = (fa[i] - fb[i]) / (2.0 * h);
        }
    }
    assert!((jac.determinant() - 1.0).abs() < 1e-6, "{}", jac.determinant());
}

#[test]
fn running_covariance_matches_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs: Vec<Vec<f64>> = (0..10_000).map(|_| normals(&mut rng, 3).iter().map(|v| 5.0 + 2.0 * v).collect()).collect();
    let mut m = RunningMoments::new(3);
    xs.iter().for_each(|x| m.push(x));
    let mean: Vec<f64> = (0..3).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / 1e4).collect();
    let mut c = Mat::zeros(3);
    for x in &xs {
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / 9999.0;
            }
        }
    }
    assert!(m.covariance().max_abs_diff(&c) <= 1e-10 * c.frobenius());
}
