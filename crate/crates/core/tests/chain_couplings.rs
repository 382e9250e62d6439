use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topocavity::chain::{
    build_couplings, build_geometry, design_system, find_dissipation_zero, purcell_factors, replicate_design,
    tiled_permittivities, vacuum_couplings, CouplingFile, CouplingMatrices, Replication,
};
use topocavity::em::{ResolutionProfile, SolverOptions};
use topocavity::optimizer::DesignGrid;
use topocavity::units::k0;

const X_STAR: f64 = 4.493409457909064;

/// Closed-form longitudinal couplings `(J, γ)` in units of `γ0` at `x = k0·r`.
fn closed_form(x: f64) -> (f64, f64) {
    let j = 1.5 * (x.cos() / x.powi(3) + x.sin() / (x * x));
    let g = 3.0 * (x.sin() / x.powi(3) - x.cos() / (x * x));
    (j, g)
}

fn star_geometry(n_cells: usize) -> topocavity::chain::ChainGeometry {
    build_geometry(n_cells, find_dissipation_zero(k0()).unwrap().distance, 1.0).unwrap()
}

fn coarse_grid(geometry: &topocavity::chain::ChainGeometry) -> DesignGrid {
    DesignGrid::for_pitch(geometry.radius, geometry.cell_height, ResolutionProfile::Coarse.pitch_nm(), 4.0).unwrap()
}

fn random_grid(geometry: &topocavity::chain::ChainGeometry, rng: &mut ChaCha8Rng, fill: f64) -> DesignGrid {
    let mut grid = coarse_grid(geometry);
    let cells: Vec<usize> = grid.design_cells().collect();
    for idx in cells {
        if rng.gen::<f64>() < fill {
            grid.set(idx, rng.gen_range(1.0..=4.0)).unwrap();
        }
    }
    grid
}

fn solve(geometry: &topocavity::chain::ChainGeometry, grid: &DesignGrid) -> CouplingMatrices {
    let replication = Replication::default();
    let system = design_system(grid, geometry, replication, k0(), SolverOptions::default()).unwrap();
    let eps = tiled_permittivities(grid, replication.total_cells(geometry));
    let solution = system.assemble(&eps).unwrap();
    build_couplings(geometry, &solution).unwrap()
}

#[test]
fn vacuum_nearest_neighbour_at_dissipation_zero() {
    let geometry = star_geometry(12);
    let c = vacuum_couplings(&geometry, k0());
    assert!(c.dissipative[(0, 1)].abs() < 1e-8);
    assert!((c.coherent[(0, 1)] + 0.0761).abs() < 5e-5, "J12 = {}", c.coherent[(0, 1)]);
    for i in 0..24 {
        assert!((c.dissipative[(i, i)] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn vacuum_pair_at_half_wavelength() {
    let geometry = build_geometry(1, PI / k0(), 1.0).unwrap();
    let c = vacuum_couplings(&geometry, k0());
    assert!((c.dissipative[(0, 1)] - 3.0 / (PI * PI)).abs() < 1e-12);
    assert!((c.dissipative[(0, 1)] - 0.3040).abs() < 1e-4);
}

#[test]
fn vacuum_golden_table() {
    for x in [PI / 2.0, PI, X_STAR, 2.0 * X_STAR] {
        let geometry = build_geometry(1, x / k0(), 1.0).unwrap();
        let c = vacuum_couplings(&geometry, k0());
        let (j, g) = closed_form(x);
        assert!((c.coherent[(0, 1)] - j).abs() < 1e-10 * j.abs().max(1e-3), "J at x = {x}");
        assert!((c.dissipative[(0, 1)] - g).abs() < 1e-10 * g.abs().max(1e-3), "γ at x = {x}");
    }
}

#[test]
fn vacuum_couplings_match_closed_form_for_all_pairs() {
    let geometry = star_geometry(12);
    let c = vacuum_couplings(&geometry, k0());
    for i in 0..24 {
        for j in 0..24 {
            if i == j {
                continue;
            }
            let (jj, gg) = closed_form(X_STAR * (i as f64 - j as f64).abs());
            assert!((c.coherent[(i, j)] - jj).abs() < 1e-10);
            assert!((c.dissipative[(i, j)] - gg).abs() < 1e-10);
        }
    }
}

#[test]
fn vacuum_couplings_decay_under_far_field_envelope() {
    let geometry = star_geometry(12);
    let c = vacuum_couplings(&geometry, k0());
    let mut last_envelope = f64::INFINITY;
    for m in 2..24 {
        let x = X_STAR * m as f64;
        let envelope = 1.5 * (1.0 / (x * x) + 1.0 / x.powi(3));
        assert!(c.coherent[(0, m)].abs() <= envelope + 1e-15, "m = {m}");
        assert!(envelope < last_envelope);
        last_envelope = envelope;
    }
    assert!(c.coherent[(0, 23)].abs() < c.coherent[(0, 2)].abs());
}

#[test]
fn geometry_examples() {
    let g = build_geometry(12, 358.0, 1.0).unwrap();
    let z = g.site_positions();
    assert_eq!(z.len(), 24);
    assert!((z[23] - z[0] - 23.0 * 358.0).abs() < 1e-9);
    let g1 = build_geometry(1, 10.0, 1.0).unwrap();
    assert_eq!(g1.site_positions(), vec![-5.0, 5.0]);
}

#[test]
fn replication_tiles_the_unit_cell() {
    let geometry = star_geometry(3);
    let mut grid = coarse_grid(&geometry);
    let cells: Vec<usize> = grid.design_cells().collect();
    for &idx in &cells {
        grid.set(idx, 2.0).unwrap();
    }
    let single = replicate_design(&grid, &star_geometry(1), Replication::default()).unwrap();
    let triple = replicate_design(&grid, &geometry, Replication::default()).unwrap();
    assert_eq!(triple.voxel_count(), 3 * single.voxel_count());
    assert_eq!(triple.rings().len(), 3 * single.rings().len());
    let lo = triple.rings().iter().map(|r| r.shape.z - 0.5 * r.shape.d_z).fold(f64::INFINITY, f64::min);
    let hi = triple.rings().iter().map(|r| r.shape.z + 0.5 * r.shape.d_z).fold(f64::NEG_INFINITY, f64::max);
    assert!((hi - lo - 3.0 * geometry.cell_height).abs() < 1e-9);
    assert!((hi + lo).abs() < 1e-9);
}

#[test]
fn single_cell_replication_is_the_unit_cell() {
    let geometry = star_geometry(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = random_grid(&geometry, &mut rng, 0.4);
    let cloud = replicate_design(&grid, &geometry, Replication::default()).unwrap();
    let expected = grid.values().iter().filter(|&&e| e != 1.0).count();
    assert_eq!(cloud.rings().len(), expected);
    for ring in cloud.rings() {
        assert!(ring.shape.z.abs() <= 0.5 * geometry.cell_height);
        assert!(ring.shape.rho <= geometry.radius);
    }
}

#[test]
fn mirror_symmetric_design_gives_mirror_symmetric_cloud() {
    let geometry = star_geometry(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let half = random_grid(&geometry, &mut rng, 0.3);
    let mut grid = half.clone();
    let mirrored = half.mirrored();
    for idx in grid.design_cells().collect::<Vec<_>>() {
        grid.set(idx, half.values()[idx].max(mirrored.values()[idx])).unwrap();
    }
    assert_eq!(grid, grid.mirrored());
    let cloud = replicate_design(&grid, &geometry, Replication::default()).unwrap();
    let key = |rho: f64, z: f64, e: f64| ((rho * 1e6).round() as i64, (z * 1e6).round() as i64, e.to_bits());
    let mut a: Vec<_> = cloud.rings().iter().map(|r| key(r.shape.rho, r.shape.z, r.permittivity)).collect();
    let mut b: Vec<_> = cloud.rings().iter().map(|r| key(r.shape.rho, -r.shape.z, r.permittivity)).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);

    let c = solve(&geometry, &grid);
    let p = purcell_factors(&c);
    let n = p.len();
    for i in 0..n {
        assert!((p[i] - p[n - 1 - i]).abs() < 1e-6 * p[i], "site {i}: {} vs {}", p[i], p[n - 1 - i]);
    }
}

#[test]
fn dissipative_matrix_is_psd_for_random_designs() {
    let geometry = star_geometry(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let grid = random_grid(&geometry, &mut rng, 0.25);
        let c = solve(&geometry, &grid);
        assert_eq!(c.coherent, c.coherent.transpose());
        assert_eq!(c.dissipative, c.dissipative.transpose());
        let eig = SymmetricEigen::new(c.dissipative.clone()).eigenvalues;
        let max = eig.max();
        assert!(eig.min() > -1e-8 * max, "min eigenvalue {}", eig.min());
    }
}

#[test]
fn empty_design_reproduces_vacuum() {
    let geometry = star_geometry(2);
    let c = solve(&geometry, &coarse_grid(&geometry));
    let v = vacuum_couplings(&geometry, k0());
    assert!((&c.coherent - &v.coherent).amax() < 1e-12);
    assert!((&c.dissipative - &v.dissipative).amax() < 1e-12);
}

#[test]
fn coupling_file_round_trips_a_design() {
    let geometry = star_geometry(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = solve(&geometry, &random_grid(&geometry, &mut rng, 0.3));
    let text = serde_json::to_string_pretty(&CouplingFile::new(&geometry, &c)).unwrap();
    let back: CouplingFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.couplings().unwrap(), c);
    assert_eq!(back.sites.len(), 4);
}
