use aggrevated::estimators::FisherFactor;
use aggrevated::optimizers::{cg_solve_low_rank, natural_step_size, CgSettings};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_solve(cols: &[Vec<f64>], d: usize, damping: f64, g: &[f64]) -> DVector<f64> {
    let s = DMatrix::from_fn(d, cols.len(), |r, c| cols[c][r]);
    let a = &s * s.transpose() + DMatrix::identity(d, d) * damping;
    a.cholesky().unwrap().solve(&DVector::from_column_slice(g))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cg_matches_dense_cholesky(
        (d, cols, g) in (2usize..60, 1usize..12).prop_flat_map(|(d, k)| (
            Just(d),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), k),
            prop::collection::vec(-1.0f64..1.0, d),
        ))
    ) {
        let settings = CgSettings { max_iters: 200, tol: 1e-10, damping: 1e-2, kl: 0.01 };
        let factor = FisherFactor::from_columns(d, cols.clone()).unwrap();
        let cg = cg_solve_low_rank(&factor, &g, &settings).unwrap();
        let reference = dense_solve(&cols, d, settings.damping, &g);
        for (a, b) in cg.solution.iter().zip(reference.iter()) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn scaled_step_spends_the_kl_budget() {
    let d = 5;
    let cols = vec![vec![1.0, 0.5, 0.0, -0.2, 0.3], vec![0.0, 1.0, 0.7, 0.1, -0.4]];
    let g = vec![0.3, -0.2, 0.1, 0.05, 0.4];
    let settings = CgSettings { max_iters: 100, tol: 1e-12, damping: 0.1, kl: 0.02 };
    let factor = FisherFactor::from_columns(d, cols.clone()).unwrap();
    let delta = cg_solve_low_rank(&factor, &g, &settings).unwrap().solution;
    let eta = natural_step_size(settings.kl, &g, &delta).unwrap();
    let s = DMatrix::from_fn(d, 2, |r, c| cols[c][r]);
    let a = &s * s.transpose() + DMatrix::identity(d, d) * settings.damping;
    let step = DVector::from_column_slice(&delta) * eta;
    let kl = (step.transpose() * a * &step)[(0, 0)];
    assert!((kl - settings.kl).abs() < 1e-10);
}
