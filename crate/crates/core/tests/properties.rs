use nalgebra::DMatrix;
use proptest::prelude::*;

use topocavity::em::free_space_green;
use topocavity::optimizer::DesignGrid;
use topocavity::quantum::diagonalize_scaled;
use topocavity::topo::{range_truncate, winding_number, ChiralBloch, WINDING_POINTS};
use topocavity::units::k0;

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-800.0..800.0f64)
}

/// Random chirally symmetric chain: couplings only between opposite sublattices.
fn chiral_chain(n_cells: usize) -> impl Strategy<Value = DMatrix<f64>> {
    let n = 2 * n_cells;
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
        DMatrix::from_fn(n, n, |a, b| {
            if (a + b) % 2 == 0 {
                0.0
            } else {
                let (lo, hi) = (a.min(b), a.max(b));
                v[lo * n + hi] / (hi - lo) as f64
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_is_reciprocal(a in point(), b in point()) {
        prop_assume!((0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>() > 1.0);
        let k = k0();
        let g12 = free_space_green(&a, &b, k).unwrap();
        let g21 = free_space_green(&b, &a, k).unwrap();
        prop_assert_eq!(g12, g21.transpose());
    }

    #[test]
    fn grid_text_round_trips(n_r in 2usize..8, n_z in 1usize..8, fill in prop::collection::vec(1.0..4.0f64, 64), k in 0usize..1000) {
        let mut grid = DesignGrid::vacuum(n_r, n_z, 700.0, 715.2, 4.0).unwrap();
        let cells: Vec<usize> = grid.design_cells().collect();
        for (idx, eps) in cells.into_iter().zip(fill) {
            grid.set(idx, eps).unwrap();
        }
        grid.set_iteration(k);
        let back = DesignGrid::from_text(&grid.to_text(&["note".into()])).unwrap();
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn truncation_is_idempotent(j in chiral_chain(5), n_cut in 1usize..=5) {
        let t = range_truncate(&j, 5, n_cut).unwrap();
        prop_assert_eq!(range_truncate(&t, 5, n_cut).unwrap(), t.clone());
        prop_assert_eq!(t.clone(), t.transpose());
    }

    #[test]
    fn chiral_spectrum_is_symmetric(j in chiral_chain(4)) {
        let s = diagonalize_scaled(&j, 1.0);
        let n = s.len();
        for a in 0..n {
            prop_assert!((s.eigenvalues[a] + s.eigenvalues[n - 1 - a]).abs() < 1e-10);
        }
    }

    #[test]
    fn winding_is_scale_invariant(t1 in 0.05..2.0f64, t2 in 0.05..2.0f64, c in 0.1..10.0f64) {
        prop_assume!((t1 - t2).abs() > 1e-3);
        let w = winding_number(&ChiralBloch::ssh(t1, t2), WINDING_POINTS).unwrap();
        prop_assert_eq!(w, if t1 < t2 { 1 } else { 0 });
        prop_assert_eq!(winding_number(&ChiralBloch::ssh(c * t1, c * t2), WINDING_POINTS).unwrap(), w);
    }
}
