//! Qubit chain geometry and the coupling matrices of the master equation.
//!
//! Sites sit on the `z` axis with uniform spacing `d`; unit cell `c` holds the
//! pair `(2c, 2c+1)` = (A, B) and spans a height `h = 2d`. Couplings follow
//! from the total Green's tensor evaluated between sites,
//! `J_ij = (3π/k) Re G_zz` and `γ_ij = (6π/k) Im G_zz`, which puts both in units
//! of the free-space decay rate `γ0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{
    free_space_green_zz_axial, AxialSolution, AxialSystem, Ring, RingCloud, RingShape,
    SolverOptions,
};
use crate::optimizer::DesignGrid;
use crate::units::{coherent_coupling, dissipative_coupling};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub index: usize,
    pub cell: usize,
    pub sublattice: Sublattice,
    pub z_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGeometry {
    pub n_cells: usize,
    /// Nearest-neighbour spacing `d` (nm).
    pub spacing: f64,
    /// Unit-cell height `h = 2d` (nm).
    pub cell_height: f64,
    /// Design-domain radius `R = h` (nm).
    pub radius: f64,
    /// Transition dipole magnitude (e·nm); only used for physical-unit labels.
    pub dipole_magnitude: f64,
    /// Dipole orientation; always longitudinal.
    pub dipole: [f64; 3],
    pub sites: Vec<Site>,
}

/// Places `2·n_cells` longitudinal dipoles at spacing `d`, centred on the origin.
pub fn build_geometry(n_cells: usize, d: f64, dipole_magnitude: f64) -> Result<ChainGeometry> {
    if n_cells == 0 {
        return Err(Error::Invalid("chain needs at least one unit cell".into()));
    }
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Invalid(format!("spacing must be positive, got {d}")));
    }
    let n = 2 * n_cells;
    let sites = (0..n)
        .map(|i| Site {
            index: i,
            cell: i / 2,
            sublattice: if i % 2 == 0 { Sublattice::A } else { Sublattice::B },
            z_nm: (i as f64 - 0.5 * (n as f64 - 1.0)) * d,
        })
        .collect();
    Ok(ChainGeometry {
        n_cells,
        spacing: d,
        cell_height: 2.0 * d,
        radius: 2.0 * d,
        dipole_magnitude,
        dipole: [0.0, 0.0, 1.0],
        sites,
    })
}

impl ChainGeometry {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn site_positions(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.z_nm).collect()
    }

    /// Cell used for target evaluation.
    pub fn central_cell(&self) -> usize {
        (self.n_cells - 1) / 2
    }

    /// Site indices (A, B) of the central cell.
    pub fn central_pair(&self) -> (usize, usize) {
        let c = self.central_cell();
        (2 * c, 2 * c + 1)
    }

    /// Axial centre of cell `c` (the midpoint of its A–B pair).
    pub fn cell_centre(&self, c: usize) -> f64 {
        (c as f64 - 0.5 * (self.n_cells as f64 - 1.0)) * self.cell_height
    }
}

/// Spacing at which the free-space nearest-neighbour dissipative coupling vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationZero {
    /// `d` in nm.
    pub distance: f64,
    /// `k0·d`, the first positive root of `tan x = x`.
    pub x: f64,
}

/// First nontrivial zero of `Im G0_zz(z, z + d)`, searched in `k0·d ∈ (π, 3π/2)`.
pub fn find_dissipation_zero(k0: f64) -> Result<DissipationZero> {
    find_dissipation_zero_in(k0, PI, 1.5 * PI)
}

/// Bisection for `sin x − x cos x = 0` (equivalently `tan x = x`) on `[lo, hi]`.
pub fn find_dissipation_zero_in(k0: f64, lo: f64, hi: f64) -> Result<DissipationZero> {
    let f = |x: f64| x.sin() - x * x.cos();
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a), f(b));
    if !(fa * fb < 0.0) {
        return Err(Error::Bracket { lo, hi });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let x = 0.5 * (a + b);
    if (x.tan() - x).abs() >= 1e-9 {
        return Err(Error::Bracket { lo, hi });
    }
    Ok(DissipationZero { distance: x / k0, x })
}

/// Ring cells of one unit-cell design grid, centred on the cell origin.
pub fn unit_cell_shapes(grid: &DesignGrid) -> Vec<RingShape> {
    let (dr, dz) = (grid.radial_step(), grid.axial_step());
    let mut shapes = Vec::with_capacity(grid.cell_count());
    for i in 0..grid.n_r() {
        for j in 0..grid.n_z() {
            let rho = (i as f64 + 0.5) * dr;
            let z = -0.5 * grid.height() + (j as f64 + 0.5) * dz;
            shapes.push(RingShape::annulus(rho, z, dr, dz, dr));
        }
    }
    shapes
}

fn check_grid(grid: &DesignGrid, geometry: &ChainGeometry) -> Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    if !close(grid.radius(), geometry.radius) || !close(grid.height(), geometry.cell_height) {
        return Err(Error::Geometry(format!(
            "design grid spans R = {}, h = {} but the chain unit cell is R = {}, h = {}",
            grid.radius(),
            grid.height(),
            geometry.radius,
            geometry.cell_height
        )));
    }
    Ok(())
}

/// Tiling options for the replicated structure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Replication {
    /// Extra copies of the design added beyond each end of the chain. Zero
    /// truncates the structure flush with the outermost cells.
    pub end_padding_cells: usize,
}

impl Replication {
    pub fn total_cells(&self, geometry: &ChainGeometry) -> usize {
        geometry.n_cells + 2 * self.end_padding_cells
    }
}

/// Tiles the unit-cell design along the chain so each cell encloses one A–B pair.
/// Vacuum cells are omitted.
pub fn replicate_design(
    grid: &DesignGrid,
    geometry: &ChainGeometry,
    replication: Replication,
) -> Result<RingCloud> {
    check_grid(grid, geometry)?;
    let shapes = unit_cell_shapes(grid);
    let cells = replication.total_cells(geometry);
    let mut rings = Vec::new();
    for c in 0..cells {
        let centre = (c as f64 - 0.5 * (cells as f64 - 1.0)) * geometry.cell_height;
        for (s, &eps) in shapes.iter().zip(grid.values()) {
            if eps != 1.0 {
                rings.push(Ring { shape: s.translated(centre), permittivity: eps });
            }
        }
    }
    RingCloud::new(rings)
}

/// Periodic axisymmetric system covering every ring cell of the replicated design.
///
/// Ring `c·C + l` is design cell `l` in tile `c`; use [`tiled_permittivities`]
/// for the matching permittivity vector.
pub fn design_system(
    grid: &DesignGrid,
    geometry: &ChainGeometry,
    replication: Replication,
    k0: f64,
    options: SolverOptions,
) -> Result<Arc<AxialSystem>> {
    check_grid(grid, geometry)?;
    let shapes = unit_cell_shapes(grid);
    let cells = replication.total_cells(geometry);
    Ok(Arc::new(AxialSystem::periodic(&shapes, cells, geometry.cell_height, k0, options)))
}

/// Grid values repeated for every tile of [`design_system`].
pub fn tiled_permittivities(grid: &DesignGrid, cells: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(cells * grid.cell_count());
    for _ in 0..cells {
        v.extend_from_slice(grid.values());
    }
    v
}

/// Coherent and dissipative couplings in units of `γ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    /// `J`, symmetric with zero diagonal.
    pub coherent: DMatrix<f64>,
    /// `Γ`, symmetric positive semidefinite.
    pub dissipative: DMatrix<f64>,
    /// Site indices (A, B) whose decay rates define the collective rate.
    pub central_pair: (usize, usize),
}

impl CouplingMatrices {
    pub fn new(
        coherent: DMatrix<f64>,
        dissipative: DMatrix<f64>,
        central_pair: (usize, usize),
    ) -> Result<Self> {
        let n = coherent.nrows();
        if coherent.ncols() != n || dissipative.shape() != (n, n) {
            return Err(Error::Invalid("coupling matrices must be square and equal size".into()));
        }
        if central_pair.0 >= n || central_pair.1 >= n {
            return Err(Error::Invalid("central pair outside the chain".into()));
        }
        let scale = coherent.amax().max(dissipative.amax()).max(1e-300);
        for i in 0..n {
            for j in 0..n {
                if (coherent[(i, j)] - coherent[(j, i)]).abs() > 1e-12 * scale
                    || (dissipative[(i, j)] - dissipative[(j, i)]).abs() > 1e-12 * scale
                {
                    return Err(Error::Invalid(format!("coupling matrices not symmetric at ({i}, {j})")));
                }
            }
            if coherent[(i, i)] != 0.0 {
                return Err(Error::Invalid("coherent coupling must have a zero diagonal".into()));
            }
        }
        Ok(CouplingMatrices { coherent, dissipative, central_pair })
    }

    pub fn n_sites(&self) -> usize {
        self.coherent.nrows()
    }

    /// `γ = √(γ_A γ_B)` of the central pair.
    pub fn collective_rate(&self) -> f64 {
        let (a, b) = self.central_pair;
        (self.dissipative[(a, a)] * self.dissipative[(b, b)]).sqrt()
    }
}

fn couplings_from_green(g: &[Vec<num_complex::Complex64>], k0: f64, central_pair: (usize, usize)) -> CouplingMatrices {
    let n = g.len();
    let mut j = DMatrix::zeros(n, n);
    let mut gamma = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            // Average the two reciprocal evaluations so both matrices are exactly symmetric.
            let re = 0.5 * (g[a][b].re + g[b][a].re);
            let im = 0.5 * (g[a][b].im + g[b][a].im);
            if a != b {
                j[(a, b)] = coherent_coupling(re, k0);
            }
            gamma[(a, b)] = dissipative_coupling(im, k0);
        }
    }
    CouplingMatrices { coherent: j, dissipative: gamma, central_pair }
}

/// Couplings of the chain inside the structure described by `solution`.
pub fn build_couplings(geometry: &ChainGeometry, solution: &AxialSolution) -> Result<CouplingMatrices> {
    let g = solution.green_zz_matrix(&geometry.site_positions())?;
    Ok(couplings_from_green(&g, solution.system().k0(), geometry.central_pair()))
}

/// Closed-form couplings of the chain in vacuum.
pub fn vacuum_couplings(geometry: &ChainGeometry, k0: f64) -> CouplingMatrices {
    let z = geometry.site_positions();
    let g: Vec<Vec<_>> = z
        .iter()
        .map(|a| z.iter().map(|b| free_space_green_zz_axial(a - b, k0)).collect())
        .collect();
    couplings_from_green(&g, k0, geometry.central_pair())
}

/// Purcell factors: the diagonal of `Γ` in units of `γ0`.
pub fn purcell_factors(couplings: &CouplingMatrices) -> Vec<f64> {
    couplings.dissipative.diagonal().iter().copied().collect()
}

/// Interchange format for coupling matrices (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingFile {
    pub schema: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    pub units: String,
    pub n_sites: usize,
    pub central_pair: [usize; 2],
    pub collective_rate: f64,
    pub sites: Vec<Site>,
    pub coherent: Vec<f64>,
    pub dissipative: Vec<f64>,
}

pub const COUPLING_SCHEMA: &str = "topocavity.couplings/1";

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

impl CouplingFile {
    pub fn new(geometry: &ChainGeometry, couplings: &CouplingMatrices) -> Self {
        CouplingFile {
            schema: COUPLING_SCHEMA.into(),
            meta: BTreeMap::new(),
            units: "gamma0".into(),
            n_sites: couplings.n_sites(),
            central_pair: [couplings.central_pair.0, couplings.central_pair.1],
            collective_rate: couplings.collective_rate(),
            sites: geometry.sites.clone(),
            coherent: row_major(&couplings.coherent),
            dissipative: row_major(&couplings.dissipative),
        }
    }

    pub fn couplings(&self) -> Result<CouplingMatrices> {
        if self.schema != COUPLING_SCHEMA {
            return Err(Error::Parse(format!("unsupported coupling schema {}", self.schema)));
        }
        let n = self.n_sites;
        if self.coherent.len() != n * n || self.dissipative.len() != n * n {
            return Err(Error::Parse(format!("expected {} matrix entries", n * n)));
        }
        CouplingMatrices::new(
            DMatrix::from_row_slice(n, n, &self.coherent),
            DMatrix::from_row_slice(n, n, &self.dissipative),
            (self.central_pair[0], self.central_pair[1]),
        )
    }
}
