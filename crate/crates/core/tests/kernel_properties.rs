use koopman_sde::GaussianKernel;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    (1usize..=4).prop_flat_map(|d| {
        (
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-2.0..2.0f64, d),
            0.3..2.0f64,
            prop::collection::vec(-1.0..1.0f64, d * d),
        )
    })
}

fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_central_differences((x, y, l, _) in case()) {
        let k = GaussianKernel::new(l).unwrap();
        let g = k.grad_x(&x, &y).unwrap();
        let fd = fd_gradient(|p| k.eval(p, &y).unwrap(), &x, 1e-5 * l);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) + k.eval(&x, &y).unwrap() / l;
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn hessian_matches_differenced_gradient((x, y, l, _) in case()) {
        let k = GaussianKernel::new(l).unwrap();
        let hess = k.hessian_x(&x, &y).unwrap();
        let d = x.len();
        let scale = hess.amax() + k.eval(&x, &y).unwrap() / (l * l);
        for c in 0..d {
            let col = fd_gradient(|p| k.grad_x(p, &y).unwrap()[c], &x, 1e-5 * l);
            for r in 0..d {
                prop_assert!((hess[(c, r)] - col[r]).abs() <= 1e-6 * scale);
            }
        }
        prop_assert!((&hess - hess.transpose()).amax() == 0.0);
    }

    #[test]
    fn trace_entry_is_half_trace_of_a_times_hessian((x, y, l, b) in case()) {
        let k = GaussianKernel::new(l).unwrap();
        let d = x.len();
        let sigma = DMatrix::from_column_slice(d, d, &b);
        let a = &sigma * sigma.transpose();
        let direct = 0.5 * (&a * k.hessian_x(&x, &y).unwrap()).trace();
        let entry = k.diffusion_trace_entry(&x, &y, &a).unwrap();
        prop_assert!((entry - direct).abs() <= 1e-12 * (1.0 + direct.abs()));

        let cols: Vec<Vec<f64>> = (0..d).map(|j| sigma.column(j).iter().copied().collect()).collect();
        let vf = k.diffusion_entry_vector_fields(&x, &y, &cols).unwrap();
        prop_assert!((vf - entry).abs() <= 1e-12 * (1.0 + entry.abs()));
    }
}
