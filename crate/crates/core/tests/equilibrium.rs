use mdpcg::game::{nash_gap, nash_gap_with_threshold, player_costs, potential, q_values, JointDistribution};
use mdpcg::mdp::{flow_residual, Dims, InitialDistribution, TransitionKernel};
use mdpcg::solver::{
    best_responses, estimate_curvature, extract_certificate, frank_wolfe, fw_gap, verify_certificate,
    GameInstance, SolveOptions,
};
use mdpcg::game::{CongestionGrouping, CostModel, CostPrimitive, ImpactFactors};
use mdpcg_testkit::{minimize_potential, oracle_instance, random_instance, random_shape, PotentialMinimum, Shape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn oracle(inst: &GameInstance<f64>) -> PotentialMinimum {
    minimize_potential(
        inst,
        |x| potential(x, inst.model()).unwrap(),
        |x| player_costs(x, inst.model()).unwrap(),
        20_000,
    )
}

fn exact_opts(max_iters: usize) -> SolveOptions<f64> {
    SolveOptions {
        max_iters,
        gap_tol: 1e-300,
        move_tol: 1e-300,
        ..SolveOptions::default()
    }
}

#[test]
fn frank_wolfe_reaches_oracle_minimum() {
    for seed in [0, 1] {
        let inst = oracle_instance(seed);
        let best = oracle(&inst);
        let sol = frank_wolfe(&inst, &exact_opts(10_000)).unwrap();
        let f = sol.trace.last().unwrap().potential;
        assert!((f - best.potential).abs() <= 1e-4, "seed {seed}: {f} vs {}", best.potential);
        assert!(f >= best.potential - 1e-9);
    }
}

#[test]
fn oracle_minimizer_is_a_nash_equilibrium() {
    for seed in 0..3 {
        let inst = oracle_instance(seed);
        let best = oracle(&inst);
        for i in 0..inst.players() {
            assert!(flow_residual(best.x.player(i), inst.kernel(i), inst.initial(i)).unwrap() < 1e-10);
        }
        let gap = nash_gap(&best.x, inst.model(), inst.kernels()).unwrap();
        assert!(gap.gap <= 1e-4, "seed {seed}: gap {}", gap.gap);

        let cert = extract_certificate(&best.x, &inst).unwrap();
        assert!(cert.residuals.stationarity <= 1e-6);
        assert!(cert.residuals.dual_min >= -1e-9);
        assert!(cert.residuals.complementary <= 1e-6);
        let verdict = verify_certificate(&best.x, &cert, &inst, 1e-4).unwrap();
        assert!(verdict.passed(), "{:?}", verdict.failed);

        let (costs, b) = best_responses(&inst, &best.x, 1.0, false).unwrap();
        assert!(fw_gap(&best.x, &b, &costs).unwrap() <= 1e-8);

        // a passing certificate bounds the gap
        let tol = 1e-6;
        if verify_certificate(&best.x, &cert, &inst, tol).unwrap().passed() {
            let q = q_values(&best.x, inst.model(), inst.kernels()).unwrap();
            let qmax = q.iter().flat_map(|t| t.as_slice()).fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(gap.gap <= tol * (1.0 + qmax));
        }
    }
}

#[test]
fn rate_envelope_and_strong_convexity() {
    for seed in [0, 3] {
        let inst = oracle_instance(seed);
        let best = oracle(&inst);
        let curvature = estimate_curvature(&inst, 2000, seed).unwrap();
        let c_hat = 4.0 * curvature.value;
        let alpha = inst.model().strong_convexity_bound();
        assert!(alpha > 0.0);
        let opts = exact_opts(1);
        let sol = frank_wolfe(&inst, &SolveOptions { max_iters: 300, ..opts }).unwrap();
        for r in &sol.trace.records {
            let excess = r.potential - best.potential;
            assert!(excess <= 2.0 * c_hat / (r.k as f64 + 2.0), "k {}: {excess}", r.k);
        }
        let sol = frank_wolfe(&inst, &SolveOptions { max_iters: 200, ..exact_opts(1) }).unwrap();
        let excess = sol.trace.last().unwrap().potential - best.potential;
        let dist: f64 = sol.x.squared_distance(&best.x);
        assert!(alpha / 2.0 * dist <= excess + 1e-8);
        let g10 = sol.trace.records[9].potential - best.potential;
        let g100 = sol.trace.records[99].potential - best.potential;
        assert!(g100 <= 0.15 * g10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // the gap over coordinates with mass above `support` is at most
    // complementarity / support
    #[test]
    fn complementarity_bounds_supported_gap(seed in any::<u64>(), iters in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(&mut rng);
        let inst = random_instance(&mut rng, shape);
        let x = frank_wolfe(&inst, &exact_opts(iters)).unwrap().x;
        let cert = extract_certificate(&x, &inst).unwrap();
        prop_assert!(cert.residuals.stationarity <= 1e-9 * (1.0 + cert.nu.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))));
        for support in [1e-6, 1e-3, 1e-1] {
            let gap = nash_gap_with_threshold(&x, inst.model(), inst.kernels(), support).unwrap();
            prop_assert!(gap.gap <= cert.residuals.complementary / support * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn iterates_remain_feasible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = random_shape(&mut rng);
        let inst = random_instance(&mut rng, shape);
        let sol = frank_wolfe(&inst, &exact_opts(60)).unwrap();
        for i in 0..shape.players {
            prop_assert!(flow_residual(sol.x.player(i), inst.kernel(i), inst.initial(i)).unwrap() <= 1e-9);
        }
        prop_assert!(sol.trace.len() <= 60);
    }
}

fn identical_players(order: [f64; 3]) -> GameInstance<f64> {
    let dims = Dims::new(2, 3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let kernel = mdpcg_testkit::random_kernel(&mut rng, dims);
    let other = mdpcg_testkit::random_kernel(&mut rng, dims);
    let slopes = order;
    let model = CostModel::from_fn(
        dims,
        ImpactFactors::new(vec![1.0, 1.0, 1.0]).unwrap(),
        CongestionGrouping::per_state(3),
        |_, _| CostPrimitive::exponential(0.3, 1.0),
        |_, _, _| CostPrimitive::zero(),
        move |i, _, s, _| CostPrimitive::linear(-(s as f64) * 0.2, slopes[i]),
    )
    .unwrap();
    let kernels = order
        .iter()
        .map(|s| if *s == 1.0 { kernel.clone() } else { other.clone() })
        .collect::<Vec<TransitionKernel<f64>>>();
    let z = vec![InitialDistribution::uniform(3).unwrap(); 3];
    GameInstance::new(kernels, z, model).unwrap()
}

#[test]
fn gap_invariant_under_relabeling_identical_players() {
    let a = identical_players([1.0, 1.0, 2.0]);
    let b = identical_players([2.0, 1.0, 1.0]);
    let xa = frank_wolfe(&a, &exact_opts(40)).unwrap().x;
    let xb = JointDistribution::new(vec![xa.player(2).clone(), xa.player(1).clone(), xa.player(0).clone()]).unwrap();
    let ga = nash_gap(&xa, a.model(), a.kernels()).unwrap();
    let gb = nash_gap(&xb, b.model(), b.kernels()).unwrap();
    assert!((ga.gap - gb.gap).abs() <= 1e-12);
    assert_eq!(ga.per_player[0], gb.per_player[2]);
    let swapped = JointDistribution::new(vec![xa.player(1).clone(), xa.player(0).clone(), xa.player(2).clone()]).unwrap();
    let gs = nash_gap(&swapped, a.model(), a.kernels()).unwrap();
    assert!((ga.gap - gs.gap).abs() <= 1e-12);
}

#[test]
fn quadratic_curvature_reaches_diameter() {
    let dims = Dims::new(2, 1, 2).unwrap();
    let model = CostModel::from_fn(
        dims,
        ImpactFactors::uniform(1).unwrap(),
        CongestionGrouping::per_state(1),
        |_, _| CostPrimitive::zero(),
        |_, _, _| CostPrimitive::zero(),
        |_, _, _, _| CostPrimitive::linear(0.0, 1.0),
    )
    .unwrap();
    let inst = GameInstance::new(
        vec![TransitionKernel::identity(dims)],
        vec![InitialDistribution::point_mass(1, 0).unwrap()],
        model,
    )
    .unwrap();
    // every stage carries a unit mass on one of two actions: diameter² = 2·(T + 1)
    let c = estimate_curvature(&inst, 2000, 0).unwrap();
    assert!(c.value <= 6.0 + 1e-9);
    assert!(c.value >= 6.0 - 1e-9);
    let few = estimate_curvature(&inst, 3, 0).unwrap();
    assert!(few.value <= c.value);
}

#[test]
fn single_precision_tracks_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = Shape { players: 2, states: 3, actions: 2, horizon: 3 };
    let inst = random_instance(&mut rng, shape);
    let sol64 = frank_wolfe(&inst, &exact_opts(50)).unwrap();

    let dims = inst.dims();
    let cast = |v: &[f64]| v.iter().map(|x| *x as f32).collect::<Vec<f32>>();
    let kernels: Vec<TransitionKernel<f32>> = inst
        .kernels()
        .iter()
        .map(|k| TransitionKernel::from_fn(dims, |t, to, from, a| k.prob(t, to, from, a) as f32))
        .collect();
    let initial = inst
        .initials()
        .iter()
        .map(|z| InitialDistribution::new(cast(z.as_slice())).unwrap())
        .collect();
    let m = inst.model();
    let p32 = |p: &CostPrimitive<f64>| CostPrimitive::new(p.c0 as f32, p.c1 as f32, p.c2 as f32, p.c3 as f32).unwrap();
    let model = CostModel::from_fn(
        dims,
        ImpactFactors::new(cast(m.alpha().as_slice())).unwrap(),
        m.grouping().clone(),
        |t, g| p32(m.f(t, g)),
        |t, s, a| p32(m.g(t, s, a)),
        |i, t, s, a| p32(m.h(i, t, s, a)),
    )
    .unwrap();
    let inst32 = GameInstance::new(kernels, initial, model).unwrap();
    let sol32 = frank_wolfe(&inst32, &SolveOptions { max_iters: 50, gap_tol: 1e-30, move_tol: 1e-30, ..SolveOptions::default() }).unwrap();
    let (f64v, f32v) = (sol64.trace.last().unwrap().potential, sol32.trace.last().unwrap().potential);
    assert!((f64v - f32v as f64).abs() <= 1e-3 * (1.0 + f64v.abs()), "{f64v} vs {f32v}");
}
