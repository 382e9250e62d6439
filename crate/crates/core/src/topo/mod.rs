//! Topological diagnostics of the qubit chain: range truncation, winding
//! number of chirally symmetric truncations, edge localisation and disorder
//! robustness.
//!
//! Sites alternate between sublattices starting with A, as built by
//! [`crate::chain::build_geometry`].

mod disorder;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use disorder::{disorder_fidelity, DisorderReport, DisorderRow, DisorderSpec};

use crate::quantum::Spectrum;
use crate::{Error, Result};

/// Keeps `J_ij` only for sites closer than `n_cut` unit cells.
///
/// With equispaced sites the distance condition `|z_i − z_j| < n_cut·h` is
/// evaluated exactly on site indices as `|i − j| < 2·n_cut`.
pub fn range_truncate(j: &DMatrix<f64>, n_cells: usize, n_cut: usize) -> Result<DMatrix<f64>> {
    if n_cut < 1 || n_cut > n_cells {
        return Err(Error::Invalid(format!("range cutoff {n_cut} outside 1..={n_cells}")));
    }
    if j.nrows() != 2 * n_cells || j.ncols() != 2 * n_cells {
        return Err(Error::Invalid(format!(
            "coupling matrix is {}×{}, expected {} sites",
            j.nrows(),
            j.ncols(),
            2 * n_cells
        )));
    }
    Ok(DMatrix::from_fn(j.nrows(), j.ncols(), |a, b| {
        if a.abs_diff(b) < 2 * n_cut {
            j[(a, b)]
        } else {
            0.0
        }
    }))
}

/// Off-diagonal Bloch component of a chirally symmetric chain,
/// `q(k) = Σ_m t_m e^{ikm}` with `t_m = J(B_c, A_{c+m})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiralBloch {
    /// `(m, t_m)` pairs.
    pub terms: Vec<(i64, f64)>,
}

impl ChiralBloch {
    /// Nearest-neighbour SSH with intra-cell `t1` and inter-cell `t2`.
    pub fn ssh(t1: f64, t2: f64) -> Self {
        ChiralBloch { terms: vec![(0, t1), (1, t2)] }
    }

    /// Inter-sublattice hoppings ordered by range: `t[0]` intra-cell, `t[1]`
    /// inter-cell, then `A_c–B_{c+1}`, `B_c–A_{c+2}`, ... (site distances
    /// `d, d, 3d, 3d, 5d, ...`).
    pub fn from_ranges(t: &[f64]) -> Self {
        let terms = t
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = (i / 2) as i64;
                (if i % 2 == 0 { -p } else { p + 1 }, v)
            })
            .collect();
        ChiralBloch { terms }
    }

    /// Reads the bulk hoppings from `B` of cell `cell` in a chain coupling
    /// matrix. Same-sublattice couplings above `tol · max|J|` break chiral
    /// symmetry and are rejected.
    pub fn from_chain(j: &DMatrix<f64>, cell: usize, tol: f64) -> Result<Self> {
        let n = j.nrows();
        if !n.is_multiple_of(2) || 2 * cell + 1 >= n {
            return Err(Error::Invalid("cell outside the chain".into()));
        }
        let scale = j.amax();
        for a in 0..n {
            for b in (a + 2..n).step_by(2) {
                if j[(a, b)].abs() > tol * scale {
                    return Err(Error::Invalid(format!(
                        "same-sublattice coupling J[{a}][{b}] = {} breaks chiral symmetry",
                        j[(a, b)]
                    )));
                }
            }
        }
        let b = 2 * cell + 1;
        let terms = (0..n / 2)
            .map(|c| (c as i64 - cell as i64, j[(b, 2 * c)]))
            .filter(|&(_, t)| t != 0.0)
            .collect();
        Ok(ChiralBloch { terms })
    }

    pub fn q(&self, k: f64) -> Complex64 {
        self.terms.iter().map(|&(m, t)| Complex64::from_polar(t, k * m as f64)).sum()
    }
}

pub const WINDING_POINTS: usize = 4096;

/// Winding of `q(k)` around the origin over the Brillouin zone.
pub fn winding_number(bloch: &ChiralBloch, points: usize) -> Result<i64> {
    if points < 3 {
        return Err(Error::Invalid("need at least three Brillouin-zone points".into()));
    }
    let scale: f64 = bloch.terms.iter().map(|t| t.1.abs()).sum();
    if scale == 0.0 {
        return Err(Error::GapClosing { k: 0.0, magnitude: 0.0 });
    }
    let mut total = 0.0;
    let mut prev = bloch.q(0.0);
    for i in 0..=points {
        let k = 2.0 * PI * i as f64 / points as f64;
        let q = if i == points { bloch.q(0.0) } else { bloch.q(k) };
        if q.norm() < 1e-12 * scale {
            return Err(Error::GapClosing { k, magnitude: q.norm() });
        }
        if i > 0 {
            total += (q / prev).arg();
        }
        prev = q;
    }
    let w = total / (2.0 * PI);
    if (w - w.round()).abs() > 0.25 {
        return Err(Error::Invalid(format!("phase winding {w} not resolved at {points} points")));
    }
    Ok(w.round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    /// `|φ(1)|²`
    pub first_site: f64,
    /// `|φ(2N)|²`
    pub last_site: f64,
    /// `Σ_A |φ|² − Σ_B |φ|²`
    pub polarization: f64,
    /// Inverse participation ratio `Σ |φ|⁴`.
    pub ipr: f64,
}

pub fn state_metrics(phi: &[f64]) -> StateMetrics {
    let p: Vec<f64> = phi.iter().map(|x| x * x).collect();
    StateMetrics {
        first_site: p.first().copied().unwrap_or(0.0),
        last_site: p.last().copied().unwrap_or(0.0),
        polarization: p.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).sum(),
        ipr: p.iter().map(|v| v * v).sum(),
    }
}

/// Metrics of every eigenstate, in spectrum order.
pub fn edge_metrics(spectrum: &Spectrum) -> Vec<StateMetrics> {
    spectrum.eigenvectors.iter().map(|v| state_metrics(v)).collect()
}
