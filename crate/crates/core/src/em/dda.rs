//! Full three-dimensional coupled-dipole (DDA) solver.
//!
//! Each voxel `i` carries an induced dipole `α_i E_i` where the exciting field
//! solves
//!
//! ```text
//! E_i = E_inc(r_i) + k² Σ_{j≠i} G0(r_i, r_j) α_j E_j .
//! ```
//!
//! The total Green's tensor follows by superposition,
//! `G(r1, r2) = G0(r1, r2) + k² Σ_i G0(r1, r_i) α_i E_i[r2]`, with
//! `E_inc = G0(·, r2)` for each source polarisation.

use std::collections::HashMap;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;

use super::green::{green_unchecked, Dyadic, Vec3};
use super::linsolve::{gmres, DenseLu, SolverOptions};
use super::voxel::{polarizability, polarizability_derivative, Voxel, VoxelCloud};
use crate::{Error, Result};

type C3 = [Complex64; 3];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

enum Backend {
    Empty,
    Dense(DenseLu),
    Iterative,
}

/// Assembled coupled-dipole system for a voxel cloud. Immutable and `Sync`.
pub struct ScatteringSolution {
    k0: f64,
    voxels: Vec<Voxel>,
    alpha: Vec<Complex64>,
    index: HashMap<[u64; 3], usize>,
    backend: Backend,
    options: SolverOptions,
}

/// Set of voxels whose permittivity is perturbed together (one design ring).
#[derive(Debug, Clone, PartialEq)]
pub struct BornCell {
    pub voxels: Vec<Voxel>,
}

fn key(p: &Vec3) -> [u64; 3] {
    [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]
}

fn g0(r1: &Vec3, r2: &Vec3, k0: f64) -> Option<Dyadic> {
    let d = [r1[0] - r2[0], r1[1] - r2[1], r1[2] - r2[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    (r > 0.0).then(|| green_unchecked(&d, r, k0))
}

/// Free-space tensor with the radiative self value `i k/6π · I` at coincidence.
fn g0_regular(r1: &Vec3, r2: &Vec3, k0: f64) -> Dyadic {
    g0(r1, r2, k0).unwrap_or_else(|| {
        let mut d = Dyadic::zeros();
        for i in 0..3 {
            d.0[i][i] = Complex64::new(0.0, k0 / (6.0 * std::f64::consts::PI));
        }
        d
    })
}

/// Builds the coupled-dipole system for `cloud` at wavenumber `k0` (1/nm).
pub fn assemble_scattering(
    cloud: &VoxelCloud,
    k0: f64,
    options: &SolverOptions,
) -> Result<ScatteringSolution> {
    let voxels = cloud.voxels().to_vec();
    if voxels.len() > options.max_voxels {
        return Err(Error::Invalid(format!(
            "{} voxels exceed the configured budget of {}",
            voxels.len(),
            options.max_voxels
        )));
    }
    let alpha: Vec<Complex64> = voxels
        .iter()
        .map(|v| polarizability(v.permittivity, v.volume, k0))
        .collect();
    let index = voxels.iter().enumerate().map(|(i, v)| (key(&v.position), i)).collect();
    let n = 3 * voxels.len();
    let backend = if voxels.is_empty() {
        Backend::Empty
    } else if n <= options.dense_limit {
        let k2 = k0 * k0;
        let mut a = Mat::<Complex64>::zeros(n, n);
        for i in 0..voxels.len() {
            for j in 0..voxels.len() {
                if i == j {
                    for c in 0..3 {
                        a[(3 * i + c, 3 * j + c)] = Complex64::new(1.0, 0.0);
                    }
                    continue;
                }
                let g = green_unchecked_pair(&voxels[i].position, &voxels[j].position, k0);
                let s = alpha[j] * k2;
                for r in 0..3 {
                    for c in 0..3 {
                        a[(3 * i + r, 3 * j + c)] = -g.0[r][c] * s;
                    }
                }
            }
        }
        Backend::Dense(DenseLu::factor(&a))
    } else {
        Backend::Iterative
    };
    Ok(ScatteringSolution { k0, voxels, alpha, index, backend, options: *options })
}

fn green_unchecked_pair(r1: &Vec3, r2: &Vec3, k0: f64) -> Dyadic {
    g0(r1, r2, k0).expect("voxel positions are distinct")
}

impl ScatteringSolution {
    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn polarizabilities(&self) -> &[Complex64] {
        &self.alpha
    }

    fn check_probe(&self, p: &Vec3) -> Result<()> {
        match self.voxels.iter().position(|v| v.contains(p)) {
            Some(i) => Err(Error::Domain(format!("probe {p:?} lies inside voxel {i}"))),
            None => Ok(()),
        }
    }

    /// Exciting fields at every voxel for each incident field set.
    fn solve(&self, incident: &[Vec<C3>]) -> Result<Vec<Vec<C3>>> {
        let m = self.voxels.len();
        match &self.backend {
            Backend::Empty => Ok(incident.to_vec()),
            Backend::Dense(lu) => {
                let rhs = Mat::from_fn(3 * m, incident.len(), |i, j| incident[j][i / 3][i % 3]);
                let x = lu.solve(&rhs)?;
                Ok((0..incident.len())
                    .map(|j| (0..m).map(|i| [x[(3 * i, j)], x[(3 * i + 1, j)], x[(3 * i + 2, j)]]).collect())
                    .collect())
            }
            Backend::Iterative => incident
                .iter()
                .map(|inc| {
                    let b: Vec<Complex64> = inc.iter().flat_map(|c| c.iter().copied()).collect();
                    let x = gmres(|v, out| self.apply_system(v, out), &b, &self.options)?;
                    Ok(x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
                })
                .collect(),
        }
    }

    /// `y = (I − k² G0 α) x` computed on the fly.
    fn apply_system(&self, x: &[Complex64], y: &mut [Complex64]) {
        let k2 = self.k0 * self.k0;
        let rows: Vec<C3> = (0..self.voxels.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
                for (j, vj) in self.voxels.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let g = green_unchecked_pair(&self.voxels[i].position, &vj.position, self.k0);
                    let s = self.alpha[j] * k2;
                    let p = [x[3 * j] * s, x[3 * j + 1] * s, x[3 * j + 2] * s];
                    let f = g.apply(&p);
                    for c in 0..3 {
                        acc[c] -= f[c];
                    }
                }
                acc
            })
            .collect();
        for (i, r) in rows.iter().enumerate() {
            y[3 * i..3 * i + 3].copy_from_slice(r);
        }
    }

    /// Exciting fields at all voxels for the three polarisations of a unit
    /// dipole at `source`. Entry `[c][i]` is the field at voxel `i` due to a
    /// `c`-polarised source.
    fn source_fields(&self, source: &Vec3) -> Result<[Vec<C3>; 3]> {
        let inc: Vec<Vec<C3>> = (0..3)
            .map(|c| {
                self.voxels
                    .iter()
                    .map(|v| green_unchecked_pair(&v.position, source, self.k0).column(c))
                    .collect()
            })
            .collect();
        let mut sol = self.solve(&inc)?.into_iter();
        Ok([sol.next().unwrap(), sol.next().unwrap(), sol.next().unwrap()])
    }

    /// Field at `point` radiated by the induced dipoles.
    fn scattered_from(&self, point: &Vec3, fields: &[C3], skip: Option<usize>) -> C3 {
        let k2 = self.k0 * self.k0;
        let mut acc = [ZERO; 3];
        for (i, (v, e)) in self.voxels.iter().zip(fields).enumerate() {
            if Some(i) == skip {
                continue;
            }
            let s = self.alpha[i] * k2;
            let p = [e[0] * s, e[1] * s, e[2] * s];
            let f = green_unchecked_pair(point, &v.position, self.k0).apply(&p);
            for c in 0..3 {
                acc[c] += f[c];
            }
        }
        acc
    }

    fn scattered_tensor(&self, r1: &Vec3, fields: &[Vec<C3>; 3]) -> Dyadic {
        let mut out = Dyadic::zeros();
        for (c, f) in fields.iter().enumerate() {
            let col = self.scattered_from(r1, f, None);
            for r in 0..3 {
                out.0[r][c] = col[r];
            }
        }
        out
    }

    /// Total Green's tensor `G0 + G_scat` between two points outside every voxel.
    ///
    /// At coincident points only the radiative part `i k/6π · I` of `G0` is
    /// included.
    pub fn total_green(&self, r1: &Vec3, r2: &Vec3) -> Result<Dyadic> {
        self.check_probe(r1)?;
        self.check_probe(r2)?;
        let fields = self.source_fields(r2)?;
        Ok(g0_regular(r1, r2, self.k0) + self.scattered_tensor(r1, &fields))
    }

    /// `G(r_i, r_j)` for all pairs of `points` with one solve per source point.
    pub fn green_matrix(&self, points: &[Vec3]) -> Result<Vec<Vec<Dyadic>>> {
        for p in points {
            self.check_probe(p)?;
        }
        let fields = points
            .iter()
            .map(|p| self.source_fields(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(points
            .iter()
            .map(|ri| {
                points
                    .iter()
                    .zip(&fields)
                    .map(|(rj, f)| g0_regular(ri, rj, self.k0) + self.scattered_tensor(ri, f))
                    .collect()
            })
            .collect())
    }

    /// Field tensor `F[c][a]` at `at` (component `c`) for an `a`-polarised dipole at
    /// the source whose solved fields are given; the voxel at `at`, if any, is
    /// excluded from the sum so that this is the exciting field.
    fn exciting_tensor(&self, at: &Vec3, source: &Vec3, fields: &[Vec<C3>; 3]) -> Result<Dyadic> {
        let own = self.index.get(&key(at)).copied();
        if own.is_none() {
            self.check_probe(at)?;
        }
        let mut out = g0(at, source, self.k0).ok_or_else(|| {
            Error::Domain(format!("perturbed voxel at {at:?} coincides with a probe"))
        })?;
        for (a, f) in fields.iter().enumerate() {
            let col = self.scattered_from(at, f, own);
            for c in 0..3 {
                out.0[c][a] += col[c];
            }
        }
        Ok(out)
    }

    /// First-order change of `G(r_i, r_j)` for every probe pair when each voxel
    /// of `cell` changes permittivity by `delta_eps`.
    ///
    /// Uses `δG(ri, rj) = k² Σ_v δα_v F_v[ri]ᵀ F_v[rj]` with `F_v[p]` the exciting
    /// field at voxel `v` due to a dipole at `p`; one solve per distinct probe point.
    pub fn born_sensitivity(
        &self,
        cell: &BornCell,
        delta_eps: f64,
        probes: &[(Vec3, Vec3)],
    ) -> Result<Vec<Dyadic>> {
        if delta_eps == 0.0 {
            return Ok(vec![Dyadic::zeros(); probes.len()]);
        }
        let mut points: Vec<Vec3> = Vec::new();
        for (a, b) in probes {
            for p in [a, b] {
                if !points.iter().any(|q| key(q) == key(p)) {
                    points.push(*p);
                }
            }
        }
        let fields = points
            .iter()
            .map(|p| self.source_fields(p))
            .collect::<Result<Vec<_>>>()?;
        let lookup = |p: &Vec3| points.iter().position(|q| key(q) == key(p)).unwrap();
        let k2 = self.k0 * self.k0;

        let mut out = vec![Dyadic::zeros(); probes.len()];
        for v in &cell.voxels {
            let dalpha =
                polarizability_derivative(v.permittivity, v.volume, self.k0) * delta_eps * k2;
            let tensors = points
                .iter()
                .zip(&fields)
                .map(|(p, f)| self.exciting_tensor(&v.position, p, f))
                .collect::<Result<Vec<_>>>()?;
            for (o, (ri, rj)) in out.iter_mut().zip(probes) {
                let fi = &tensors[lookup(ri)];
                let fj = &tensors[lookup(rj)];
                for a in 0..3 {
                    for b in 0..3 {
                        let s: Complex64 = (0..3).map(|c| fi.0[c][a] * fj.0[c][b]).sum();
                        o.0[a][b] += dalpha * s;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::green::free_space_green;
    use std::f64::consts::PI;

    fn k() -> f64 {
        2.0 * PI / 500.0
    }

    #[test]
    fn empty_cloud_gives_free_space() {
        let sol = assemble_scattering(&VoxelCloud::empty(), k(), &SolverOptions::default()).unwrap();
        let (a, b) = ([0.0, 10.0, 0.0], [30.0, -40.0, 200.0]);
        let g = sol.total_green(&a, &b).unwrap();
        let g0 = free_space_green(&a, &b, k()).unwrap();
        assert!((g.zz() - g0.zz()).norm() < 1e-15);
    }

    #[test]
    fn probe_inside_voxel_is_rejected() {
        let cloud = VoxelCloud::new(vec![Voxel {
            position: [0.0, 0.0, 0.0],
            volume: 1000.0,
            permittivity: 2.0,
        }])
        .unwrap();
        let sol = assemble_scattering(&cloud, k(), &SolverOptions::default()).unwrap();
        let err = sol.total_green(&[1.0, 1.0, 1.0], &[0.0, 0.0, 300.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn iterative_backend_matches_dense() {
        let voxels: Vec<Voxel> = (0..12)
            .map(|i| Voxel {
                position: [40.0 * (i % 3) as f64, 40.0 * (i / 3) as f64, 100.0],
                volume: 40f64.powi(3),
                permittivity: 1.5 + 0.2 * i as f64,
            })
            .collect();
        let cloud = VoxelCloud::new(voxels).unwrap();
        let dense = assemble_scattering(&cloud, k(), &SolverOptions::default()).unwrap();
        let opts = SolverOptions { dense_limit: 3, tolerance: 1e-12, ..Default::default() };
        let iter = assemble_scattering(&cloud, k(), &opts).unwrap();
        let (a, b) = ([0.0, 0.0, -50.0], [20.0, 10.0, 300.0]);
        let gd = dense.total_green(&a, &b).unwrap();
        let gi = iter.total_green(&a, &b).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((gd.0[r][c] - gi.0[r][c]).norm() < 1e-9 * gd.max_abs());
            }
        }
    }

    #[test]
    fn voxel_budget_is_enforced() {
        let cloud = VoxelCloud::new(vec![
            Voxel { position: [0.0; 3], volume: 1.0, permittivity: 2.0 },
            Voxel { position: [5.0, 0.0, 0.0], volume: 1.0, permittivity: 2.0 },
        ])
        .unwrap();
        let opts = SolverOptions { max_voxels: 1, ..Default::default() };
        assert!(matches!(assemble_scattering(&cloud, k(), &opts), Err(Error::Invalid(_))));
    }

    #[test]
    fn zero_increment_gives_zero_sensitivity() {
        let cloud = VoxelCloud::empty();
        let sol = assemble_scattering(&cloud, k(), &SolverOptions::default()).unwrap();
        let cell = BornCell {
            voxels: vec![Voxel { position: [100.0, 0.0, 0.0], volume: 125.0, permittivity: 1.0 }],
        };
        let d = sol
            .born_sensitivity(&cell, 0.0, &[([0.0; 3], [0.0, 0.0, 300.0])])
            .unwrap();
        assert_eq!(d[0].max_abs(), 0.0);
    }
}
