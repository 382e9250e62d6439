//! Axisymmetric coupled-dipole solver for ring-structured dielectrics probed by
//! longitudinal dipoles on the symmetry axis.
//!
//! A `z`-polarised dipole on the axis excites only the rotationally invariant
//! TM field (`E_ρ`, `E_z`). Every voxel of a ring then carries the same local
//! field, so the full coupled-dipole system restricted to this sector reduces
//! to two unknowns per ring. The ring-to-ring kernel `K_ab` is the field at the
//! `φ = 0` voxel of ring `a` produced by the whole voxel ring `b` (self voxel
//! excluded), expressed in the local `(ρ̂, ẑ)` frames. It depends only on the
//! geometry and is computed once per [`AxialSystem`].

use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;

use super::green::{free_space_green_zz_axial, green_unchecked};
use super::linsolve::{gmres, DenseLu, SolverOptions};
use super::voxel::{polarizability, polarizability_derivative, RingCloud, RingShape};
use crate::{Error, Result};

type C2 = [Complex64; 2];
type Block = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ZERO_BLOCK: Block = [[ZERO; 2]; 2];

enum Kernel {
    Dense { n: usize, blocks: Vec<Block> },
    /// Translation-invariant lattice of `cells` identical cells with `per_cell`
    /// rings each; blocks indexed by `(offset + cells − 1, l1, l2)`.
    Periodic { cells: usize, per_cell: usize, blocks: Vec<Block> },
}

/// Fixed set of ring positions with its precomputed interaction kernel.
pub struct AxialSystem {
    k0: f64,
    shapes: Vec<RingShape>,
    kernel: Kernel,
    options: SolverOptions,
}

fn ring_block(target: &RingShape, source: &RingShape, k0: f64) -> Block {
    let r0 = [target.rho, 0.0, target.z];
    let mut k = ZERO_BLOCK;
    for m in 0..source.n_phi {
        let rv = source.voxel_position(m);
        let d = [r0[0] - rv[0], r0[1] - rv[1], r0[2] - rv[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r <= 1e-9 * (1.0 + target.rho.abs() + target.z.abs()) {
            continue;
        }
        let g = green_unchecked(&d, r, k0).0;
        let (s, c) = source.voxel_angle(m).sin_cos();
        k[0][0] += g[0][0] * c + g[0][1] * s;
        k[0][1] += g[0][2];
        k[1][0] += g[2][0] * c + g[2][1] * s;
        k[1][1] += g[2][2];
    }
    k
}

/// Free-space field `(E_ρ, E_z)` at the `φ = 0` voxel of `ring` from a unit
/// `z` dipole at `(0, 0, z_source)`.
fn incident(ring: &RingShape, z_source: f64, k0: f64) -> C2 {
    let d = [ring.rho, 0.0, ring.z - z_source];
    let r = (d[0] * d[0] + d[2] * d[2]).sqrt();
    let g = green_unchecked(&d, r, k0).0;
    [g[0][2], g[2][2]]
}

impl AxialSystem {
    /// Kernel for an arbitrary ring set (all `n²` blocks are computed).
    pub fn new(shapes: Vec<RingShape>, k0: f64, options: SolverOptions) -> Self {
        let n = shapes.len();
        let blocks: Vec<Block> = (0..n * n)
            .into_par_iter()
            .map(|idx| ring_block(&shapes[idx / n], &shapes[idx % n], k0))
            .collect();
        AxialSystem { k0, shapes, kernel: Kernel::Dense { n, blocks }, options }
    }

    pub fn from_cloud(cloud: &RingCloud, k0: f64, options: SolverOptions) -> Self {
        Self::new(cloud.shapes(), k0, options)
    }

    /// Kernel for `cells` copies of `cell_shapes` whose centres are spaced by
    /// `period` along `z` and centred on the origin. Ring `c·C + l` is ring `l`
    /// of cell `c`.
    pub fn periodic(
        cell_shapes: &[RingShape],
        cells: usize,
        period: f64,
        k0: f64,
        options: SolverOptions,
    ) -> Self {
        let per = cell_shapes.len();
        let centre = |c: usize| (c as f64 - 0.5 * (cells as f64 - 1.0)) * period;
        let shapes: Vec<RingShape> = (0..cells)
            .flat_map(|c| cell_shapes.iter().map(move |s| s.translated(centre(c))))
            .collect();
        let offsets = 2 * cells.max(1) - 1;
        let blocks: Vec<Block> = (0..offsets * per * per)
            .into_par_iter()
            .map(|idx| {
                let o = (idx / (per * per)) as f64 - (cells as f64 - 1.0);
                let l1 = (idx / per) % per;
                let l2 = idx % per;
                ring_block(&cell_shapes[l1], &cell_shapes[l2].translated(o * period), k0)
            })
            .collect();
        AxialSystem {
            k0,
            shapes,
            kernel: Kernel::Periodic { cells, per_cell: per, blocks },
            options,
        }
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn shapes(&self) -> &[RingShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    fn block(&self, a: usize, b: usize) -> &Block {
        match &self.kernel {
            Kernel::Dense { n, blocks } => &blocks[a * n + b],
            Kernel::Periodic { cells, per_cell, blocks } => {
                let (ca, la) = (a / per_cell, a % per_cell);
                let (cb, lb) = (b / per_cell, b % per_cell);
                let o = cb + cells - 1 - ca;
                &blocks[(o * per_cell + la) * per_cell + lb]
            }
        }
    }

    /// Assembles the scattering problem for per-ring permittivities. Rings at
    /// `ε = 1` are left out of the linear system.
    pub fn assemble(self: &Arc<Self>, permittivities: &[f64]) -> Result<AxialSolution> {
        if permittivities.len() != self.shapes.len() {
            return Err(Error::Invalid(format!(
                "{} permittivities for {} rings",
                permittivities.len(),
                self.shapes.len()
            )));
        }
        if let Some(e) = permittivities.iter().find(|e| !(**e >= 1.0) || !e.is_finite()) {
            return Err(Error::Invalid(format!("ring permittivity {e} outside [1, ∞)")));
        }
        let active: Vec<usize> = (0..self.shapes.len()).filter(|&i| permittivities[i] != 1.0).collect();
        let voxels: usize = active.iter().map(|&i| self.shapes[i].n_phi).sum();
        if voxels > self.options.max_voxels {
            return Err(Error::Invalid(format!(
                "{voxels} voxels exceed the configured budget of {}",
                self.options.max_voxels
            )));
        }
        let alpha: Vec<Complex64> = active
            .iter()
            .map(|&i| polarizability(permittivities[i], self.shapes[i].voxel_volume, self.k0))
            .collect();
        let n = 2 * active.len();
        let k2 = self.k0 * self.k0;
        let backend = if active.is_empty() {
            Backend::Empty
        } else if n <= self.options.dense_limit {
            let mut a = Mat::<Complex64>::zeros(n, n);
            for (p, &ra) in active.iter().enumerate() {
                for (q, &rb) in active.iter().enumerate() {
                    let blk = self.block(ra, rb);
                    let s = alpha[q] * k2;
                    for r in 0..2 {
                        for c in 0..2 {
                            a[(2 * p + r, 2 * q + c)] = -blk[r][c] * s;
                        }
                    }
                }
                a[(2 * p, 2 * p)] += Complex64::new(1.0, 0.0);
                a[(2 * p + 1, 2 * p + 1)] += Complex64::new(1.0, 0.0);
            }
            Backend::Dense(DenseLu::factor(&a))
        } else {
            Backend::Iterative
        };
        Ok(AxialSolution {
            system: Arc::clone(self),
            permittivities: permittivities.to_vec(),
            active,
            alpha,
            backend,
        })
    }
}

enum Backend {
    Empty,
    Dense(DenseLu),
    Iterative,
}

/// Factorised axisymmetric scattering problem. Immutable; cheap to query for
/// many on-axis sources.
pub struct AxialSolution {
    system: Arc<AxialSystem>,
    permittivities: Vec<f64>,
    active: Vec<usize>,
    alpha: Vec<Complex64>,
    backend: Backend,
}

/// Exciting fields at every ring of the system for a set of on-axis sources.
#[derive(Debug, Clone)]
pub struct SourceFields {
    pub sources: Vec<f64>,
    /// `fields[s][ring] = (E_ρ, E_z)`.
    pub fields: Vec<Vec<C2>>,
}

impl AxialSolution {
    pub fn system(&self) -> &Arc<AxialSystem> {
        &self.system
    }

    pub fn permittivities(&self) -> &[f64] {
        &self.permittivities
    }

    pub fn active_rings(&self) -> &[usize] {
        &self.active
    }

    fn check_sources(&self, sources: &[f64]) -> Result<()> {
        for &z in sources {
            if let Some(&i) = self.active.iter().find(|&&i| self.system.shapes[i].contains_axis_point(z)) {
                return Err(Error::Domain(format!("probe at z = {z} lies inside ring {i}")));
            }
        }
        Ok(())
    }

    fn apply_system(&self, x: &[Complex64], y: &mut [Complex64]) {
        let k2 = self.system.k0 * self.system.k0;
        let rows: Vec<C2> = self
            .active
            .par_iter()
            .enumerate()
            .map(|(p, &ra)| {
                let mut acc = [x[2 * p], x[2 * p + 1]];
                for (q, &rb) in self.active.iter().enumerate() {
                    let blk = self.system.block(ra, rb);
                    let s = self.alpha[q] * k2;
                    let (u, v) = (x[2 * q] * s, x[2 * q + 1] * s);
                    acc[0] -= blk[0][0] * u + blk[0][1] * v;
                    acc[1] -= blk[1][0] * u + blk[1][1] * v;
                }
                acc
            })
            .collect();
        for (p, r) in rows.iter().enumerate() {
            y[2 * p] = r[0];
            y[2 * p + 1] = r[1];
        }
    }

    /// Exciting fields at the active rings for each source.
    fn solve_active(&self, sources: &[f64]) -> Result<Vec<Vec<C2>>> {
        let shapes = &self.system.shapes;
        let k0 = self.system.k0;
        let inc: Vec<Vec<C2>> = sources
            .iter()
            .map(|&z| self.active.iter().map(|&i| incident(&shapes[i], z, k0)).collect())
            .collect();
        let m = self.active.len();
        match &self.backend {
            Backend::Empty => Ok(inc),
            Backend::Dense(lu) => {
                let rhs = Mat::from_fn(2 * m, sources.len(), |i, j| inc[j][i / 2][i % 2]);
                let x = lu.solve(&rhs)?;
                Ok((0..sources.len())
                    .map(|j| (0..m).map(|p| [x[(2 * p, j)], x[(2 * p + 1, j)]]).collect())
                    .collect())
            }
            Backend::Iterative => inc
                .iter()
                .map(|e| {
                    let b: Vec<Complex64> = e.iter().flat_map(|c| c.iter().copied()).collect();
                    let x = gmres(|v, out| self.apply_system(v, out), &b, &self.system.options)?;
                    Ok(x.chunks(2).map(|c| [c[0], c[1]]).collect())
                })
                .collect(),
        }
    }

    /// Exciting fields at every ring (active or not) for unit `z` dipoles at
    /// the given axial positions.
    pub fn source_fields(&self, sources: &[f64]) -> Result<SourceFields> {
        self.check_sources(sources)?;
        let solved = self.solve_active(sources)?;
        let sys = &self.system;
        let k2 = sys.k0 * sys.k0;
        // Induced ring dipole amplitudes k² α E per source.
        let induced: Vec<Vec<C2>> = solved
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&self.alpha)
                    .map(|(f, a)| [f[0] * a * k2, f[1] * a * k2])
                    .collect()
            })
            .collect();
        let mut slot = vec![usize::MAX; sys.shapes.len()];
        for (p, &i) in self.active.iter().enumerate() {
            slot[i] = p;
        }
        let per_ring: Vec<Vec<C2>> = (0..sys.shapes.len())
            .into_par_iter()
            .map(|b| {
                if slot[b] != usize::MAX {
                    return solved.iter().map(|e| e[slot[b]]).collect();
                }
                sources
                    .iter()
                    .zip(&induced)
                    .map(|(&z, ind)| {
                        let mut t = incident(&sys.shapes[b], z, sys.k0);
                        for (q, &a) in self.active.iter().enumerate() {
                            let blk = sys.block(b, a);
                            let (u, v) = (ind[q][0], ind[q][1]);
                            t[0] += blk[0][0] * u + blk[0][1] * v;
                            t[1] += blk[1][0] * u + blk[1][1] * v;
                        }
                        t
                    })
                    .collect()
            })
            .collect();
        let fields = (0..sources.len())
            .map(|s| per_ring.iter().map(|r| r[s]).collect())
            .collect();
        Ok(SourceFields { sources: sources.to_vec(), fields })
    }

    /// Scattered part of `G_zz` between sources `s` and `t` of `fields`.
    pub fn scattered_zz(&self, fields: &SourceFields, s: usize, t: usize) -> Complex64 {
        let sys = &self.system;
        let k2 = sys.k0 * sys.k0;
        let zs = fields.sources[s];
        let mut acc = ZERO;
        for (q, &a) in self.active.iter().enumerate() {
            let shape = &sys.shapes[a];
            let e = incident(shape, zs, sys.k0);
            let f = fields.fields[t][a];
            acc += self.alpha[q] * (shape.n_phi as f64) * (e[0] * f[0] + e[1] * f[1]);
        }
        acc * k2
    }

    /// Total `G_zz` between sources `s` and `t`. At coincident points the
    /// free-space part contributes only its radiative value `i k/6π`.
    pub fn green_zz(&self, fields: &SourceFields, s: usize, t: usize) -> Complex64 {
        let dz = fields.sources[s] - fields.sources[t];
        free_space_green_zz_axial(dz, self.system.k0) + self.scattered_zz(fields, s, t)
    }

    /// `G_zz(z_i, z_j)` for all pairs of on-axis points.
    pub fn green_zz_matrix(&self, points: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let f = self.source_fields(points)?;
        Ok((0..points.len())
            .map(|i| (0..points.len()).map(|j| self.green_zz(&f, i, j)).collect())
            .collect())
    }

    /// First-order change of `G_zz` for each source pair when every ring in
    /// `rings` changes permittivity by `delta_eps`:
    /// `δG_st = k² δε Σ_b n_b (dα_b/dε) F_b[s]·F_b[t]`.
    pub fn born_delta_zz(
        &self,
        fields: &SourceFields,
        rings: &[usize],
        delta_eps: f64,
        pairs: &[(usize, usize)],
    ) -> Vec<Complex64> {
        let sys = &self.system;
        let k2 = sys.k0 * sys.k0;
        let mut out = vec![ZERO; pairs.len()];
        if delta_eps == 0.0 {
            return out;
        }
        for &b in rings {
            let shape = &sys.shapes[b];
            let w = polarizability_derivative(self.permittivities[b], shape.voxel_volume, sys.k0)
                * (shape.n_phi as f64 * delta_eps * k2);
            for (o, &(s, t)) in out.iter_mut().zip(pairs) {
                let (fs, ft) = (fields.fields[s][b], fields.fields[t][b]);
                *o += w * (fs[0] * ft[0] + fs[1] * ft[1]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn k() -> f64 {
        2.0 * PI / 500.0
    }

    fn shell(pitch: f64) -> Vec<RingShape> {
        let mut v = Vec::new();
        let nz = (200.0 / pitch).round() as usize;
        for j in 0..nz {
            let z = -100.0 + (j as f64 + 0.5) * pitch;
            v.push(RingShape::annulus(150.0, z, pitch, pitch, pitch));
        }
        v
    }

    #[test]
    fn periodic_kernel_matches_dense() {
        let cell = shell(50.0);
        let per = AxialSystem::periodic(&cell, 3, 200.0, k(), SolverOptions::default());
        let dense = AxialSystem::new(per.shapes().to_vec(), k(), SolverOptions::default());
        for a in 0..per.len() {
            for b in 0..per.len() {
                let (x, y) = (per.block(a, b), dense.block(a, b));
                for r in 0..2 {
                    for c in 0..2 {
                        assert!((x[r][c] - y[r][c]).norm() <= 1e-12 * (1.0 + y[r][c].norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_is_weighted_symmetric() {
        let sys = AxialSystem::new(shell(40.0), k(), SolverOptions::default());
        for a in 0..sys.len() {
            for b in 0..sys.len() {
                let na = sys.shapes()[a].n_phi as f64;
                let nb = sys.shapes()[b].n_phi as f64;
                let (x, y) = (sys.block(a, b), sys.block(b, a));
                for r in 0..2 {
                    for c in 0..2 {
                        let lhs = x[r][c] * na;
                        let rhs = y[c][r] * nb;
                        assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn vacuum_assembly_is_free_space() {
        let sys = Arc::new(AxialSystem::new(shell(50.0), k(), SolverOptions::default()));
        let sol = sys.assemble(&vec![1.0; sys.len()]).unwrap();
        let g = sol.green_zz_matrix(&[-300.0, 57.0]).unwrap();
        assert_eq!(g[0][1], free_space_green_zz_axial(357.0, k()));
        assert_eq!(g[0][0].im, k() / (6.0 * PI));
    }

    #[test]
    fn probe_inside_active_ring_is_rejected() {
        let shapes = vec![RingShape::on_axis(0.0, 20.0)];
        let sys = Arc::new(AxialSystem::new(shapes, k(), SolverOptions::default()));
        let sol = sys.assemble(&[2.0]).unwrap();
        assert!(matches!(sol.source_fields(&[5.0]), Err(Error::Domain(_))));
        assert!(sol.source_fields(&[50.0]).is_ok());
    }

    #[test]
    fn iterative_matches_dense() {
        let sys = Arc::new(AxialSystem::new(shell(25.0), k(), SolverOptions::default()));
        let eps: Vec<f64> = (0..sys.len()).map(|i| 1.0 + 3.0 * ((i * 5) % 7) as f64 / 6.0).collect();
        let dense = sys.assemble(&eps).unwrap();
        let it_sys = Arc::new(AxialSystem::new(
            shell(25.0),
            k(),
            SolverOptions { dense_limit: 2, tolerance: 1e-12, ..Default::default() },
        ));
        let iter = it_sys.assemble(&eps).unwrap();
        let pts = [-200.0, 180.0];
        let a = dense.green_zz_matrix(&pts).unwrap();
        let b = iter.green_zz_matrix(&pts).unwrap();
        assert!((a[0][1] - b[0][1]).norm() < 1e-9 * a[0][1].norm());
    }
}
