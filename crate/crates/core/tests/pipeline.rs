use koopman_sde::collocation::{assemble, make_grid, solve_collocation, DiffusionAssembly};
use koopman_sde::feynman_kac::{fk_batch, FkConfig};
use koopman_sde::validation::{conditioning_sweep, experiment_configs, run_pipeline, Overrides};
use koopman_sde::{GaussianKernel, GridSpec, ModelSpec};

fn overrides() -> Overrides {
    Overrides { seed: 11, n_paths: 2000 }
}

#[test]
fn quadratic_conditioning_improves_with_noise() {
    let base = experiment_configs("test2_quadratic", &overrides()).unwrap()[0].clone();
    let rows: Vec<_> = conditioning_sweep(&[0.5, 0.0, 0.3], &base)
        .unwrap()
        .into_iter()
        .map(Result::unwrap)
        .collect();
    assert!(rows[0].condition_number > rows[1].condition_number);
    assert!(rows[1].condition_number > rows[2].condition_number);
    assert!(rows[1].pde_residual_mean < rows[0].pde_residual_mean);
    for r in &rows {
        assert!(r.rmse_vs_exact.is_none());
        assert!(r.semigroup_error.is_finite() && r.semigroup_error >= 0.0);
    }
}

#[test]
fn zero_noise_reduces_to_the_deterministic_system() {
    let setup = ModelSpec::Quadratic { sigma: 0.0 }.build().unwrap();
    let grid = make_grid(&setup.domain, GridSpec::Uniform1d(50)).unwrap();
    let kern = GaussianKernel::new(0.8).unwrap();
    for mode in [DiffusionAssembly::Trace, DiffusionAssembly::VectorFields] {
        let sys = assemble(&setup.system, &setup.decomposition, &setup.eigenpair, &kern, &grid, 1e-4, mode).unwrap();
        assert!(sys.diff_mat.iter().all(|v| *v == 0.0));
        let lambda = setup.eigenpair.eigenvalue;
        let n = grid.len();
        let deterministic = &sys.drift_mat - lambda * &sys.gram + nalgebra::DMatrix::identity(n, n) * 1e-4;
        assert_eq!(sys.system_matrix, deterministic);
    }
}

#[test]
fn linear_models_have_vanishing_correction() {
    for name in ["test1_ou", "test3_linear2d"] {
        for cfg in experiment_configs(name, &overrides()).unwrap() {
            let out = run_pipeline(&cfg).unwrap();
            assert!(out.report.max_abs_h <= 1e-12, "{name}");
            assert!(out.report.rmse_vs_exact.unwrap() <= 1e-12, "{name}");
            assert!(out.report.semigroup_error <= 10.0, "{name}");
        }
    }
}

#[test]
fn batch_is_independent_of_thread_count() {
    let setup = ModelSpec::Quadratic { sigma: 0.3 }.build().unwrap();
    let pos = koopman_sde::EigenPair::new(0.5, vec![1.0]).unwrap();
    let pts: Vec<Vec<f64>> = [-0.9, -0.2, 0.4, 1.0].iter().map(|x| vec![*x]).collect();
    let cfg = FkConfig { n_paths: 300, seed: 5, t_max: 10.0, ..FkConfig::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fk_batch(&setup.system, &setup.decomposition, &pos, &setup.domain, &pts, &cfg))
            .into_iter()
            .map(Result::unwrap)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(5));
}

#[test]
fn collocation_solution_is_thread_count_independent() {
    let setup = ModelSpec::Linear2d.build().unwrap();
    let grid = make_grid(&setup.domain, GridSpec::Tensor(8)).unwrap();
    let kern = GaussianKernel::new(1.0).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            solve_collocation(&setup.system, &setup.decomposition, &setup.eigenpair, &kern, &grid, 1e-4, DiffusionAssembly::Trace)
                .unwrap()
                .solution
                .coefficients()
                .to_vec()
        })
    };
    assert_eq!(run(1), run(3));
}
