mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use sor_sinkhorn::bounds::delta_bound;
use sor_sinkhorn::compositional::{birkhoff_contraction, eta, hilbert_norm};
use sor_sinkhorn::generate::{ExperimentSpec, Family, MarginalKind};
use sor_sinkhorn::par::Execution;
use sor_sinkhorn::spectral::{iteration_matrix_m, omega_opt, rho, theta_squared};
use sor_sinkhorn::trace::TraceEvent;
use sor_sinkhorn::workflows::reference_solution;
use sor_sinkhorn::{solve, PositiveKernel, PositiveVector, RelaxationPolicy, SolverConfig};

#[test]
fn theta_sq_is_second_eigenvalue_of_m() {
    for seed in 0..5 {
        let p = uniform_problem(seed, 6 + seed as usize, 9, 0.1, 1.0);
        let plan = reference_solution(&p, 100_000).unwrap().plan;
        let m = iteration_matrix_m(&plan, p.a(), p.b()).unwrap();
        let mut ev: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        assert!((ev[0] - 1.0).abs() < 1e-10, "top eigenvalue {}", ev[0]);
        let t2 = theta_squared(&plan, p.a(), p.b()).unwrap();
        assert!((t2 - ev[1]).abs() < 1e-10, "theta^2 {t2} vs eigenvalue {}", ev[1]);
    }
}

#[test]
fn theta_sq_dominates_delta_on_random_square_problems() {
    for seed in 0..50 {
        let p = uniform_problem(1_000 + seed, 10, 10, 0.01, 1.0);
        let delta = delta_bound(&p).unwrap().delta;
        let plan = reference_solution(&p, 100_000).unwrap().plan;
        let t2 = theta_sq_of(&plan, &p);
        assert!(delta > 0.0 && delta < 1.0, "seed {seed}: delta {delta}");
        assert!(t2 >= delta, "seed {seed}: theta^2 {t2} < delta {delta}");
    }
}

#[test]
fn adaptive_switch_reaches_optimal_rate() {
    let p = ExperimentSpec::new(Family::RgbGaussian, 200, 0.01, 0).build().unwrap();
    let plan = reference_solution(&p, 50_000).unwrap().plan;
    let rho_opt = omega_opt_oracle(theta_sq_of(&plan, &p)) - 1.0;
    let config = SolverConfig::with_policy(RelaxationPolicy::adaptive_svd(50)).tol(1e-13).max_iter(50_000);
    let out = solve(&p, &config, None).unwrap();
    assert!(out.converged());
    assert!(out.trace.events().iter().any(|e| matches!(e, TraceEvent::Switched { .. })));
    let rate = out.trace.tail_rate(20, 1e-14).unwrap();
    assert!((rate / rho_opt - 1.0).abs() < 0.15, "tail rate {rate} vs rho_opt {rho_opt}");
}

#[test]
fn execution_modes_agree_bitwise() {
    let p = ExperimentSpec::new(Family::Grid1d, 300, 0.01, 0).build().unwrap();
    let run = |exec| {
        let mut config = SolverConfig::with_policy(RelaxationPolicy::fixed(1.7)).tol(1e-9).max_iter(2_000);
        config.execution = exec;
        solve(&p, &config, None).unwrap()
    };
    let (seq, par) = (run(Execution::Sequential), run(Execution::Parallel));
    assert_eq!(seq.iterations(), par.iterations());
    assert_eq!(seq.state.log_u, par.state.log_u);
    assert_eq!(seq.state.log_v, par.state.log_v);
}

#[test]
fn standard_run_from_uniform_marginals_matches_plan_sums() {
    let mut spec = ExperimentSpec::new(Family::RandomDense, 12, 0.5, 7);
    spec.marginals = MarginalKind::Uniform;
    let p = spec.build().unwrap();
    let out = solve(&p, &SolverConfig::default().tol(1e-12), None).unwrap();
    let plan = out.plan(p.kernel()).unwrap();
    assert!(plan_residual(&plan, &p) < 1e-11);
}

fn kernel_strategy() -> impl Strategy<Value = PositiveKernel> {
    (2usize..6, 2usize..6)
        .prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(0.01f64..10.0, m * n)))
        .prop_map(|(m, n, k)| PositiveKernel::from_linear(m, n, k).unwrap())
}

proptest! {
    #[test]
    fn hilbert_norm_ignores_scaling(x in prop::collection::vec(0.01f64..100.0, 2..8), c in 0.01f64..100.0) {
        let v = PositiveVector::new(x.clone()).unwrap();
        let w = PositiveVector::new(x.iter().map(|t| c * t).collect()).unwrap();
        prop_assert!((hilbert_norm(&v) - hilbert_norm(&w)).abs() <= 1e-12 * (1.0 + hilbert_norm(&v)));
    }

    #[test]
    fn eta_matches_brute_force(k in kernel_strategy()) {
        assert_relative_eq!(eta(&k), eta_brute(&k), max_relative = 1e-12);
        let l = birkhoff_contraction(&k);
        prop_assert!((0.0..1.0).contains(&l));
        prop_assert!((l - lambda_brute(&k)).abs() < 1e-12);
    }

    #[test]
    fn kernel_contracts_hilbert_distance(
        k in kernel_strategy(),
        seed in any::<u64>(),
    ) {
        let (x, y) = random_start(seed, k.cols(), k.cols(), 3.0);
        let (x, y): (Vec<f64>, Vec<f64>) = (x.iter().map(|t| t.exp()).collect(), y.iter().map(|t| t.exp()).collect());
        let lhs = hilbert(&k.apply(&x), &k.apply(&y));
        prop_assert!(lhs <= birkhoff_contraction(&k) * hilbert(&x, &y) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn rate_curve_is_minimised_at_omega_opt(theta in 0.01f64..0.99, omega in 0.01f64..1.99) {
        let w = omega_opt(theta).unwrap();
        let r = rho(theta, omega).unwrap();
        prop_assert!(r >= w - 1.0 - 1e-12);
        prop_assert!(r < 1.0);
        prop_assert!((r - rho_oracle(theta * theta, omega)).abs() < 1e-9);
    }

    #[test]
    fn m_has_unit_spectral_bound(seed in 0u64..1_000) {
        let p = uniform_problem(seed, 4, 5, 0.1, 1.0);
        let plan = reference_solution(&p, 100_000).unwrap().plan;
        let m: DMatrix<f64> = iteration_matrix_m(&plan, p.a(), p.b()).unwrap();
        let max = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(max <= 1.0 + 1e-10);
    }
}
