//! Single-excitation spectrum and open-system dynamics of the qubit chain.
//!
//! Energies and rates are reported relative to `ω0` in units of the collective
//! decay rate `γ = √(γ_A γ_B)` of the supplied couplings.

mod dynamics;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use dynamics::{evolve_single_excitation, DynamicsTrace, InitialState, Propagator};

use crate::chain::CouplingMatrices;
use crate::{Error, Result};

/// Eigen-decomposition of `J / γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// `γ` in units of `γ0` used to normalise the energies.
    pub energy_unit: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[α]` is the gauge-fixed state `φ_α` in the site basis.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Zero-based indices of the two midgap states, `(N − 1, N)`.
    pub edge_indices: (usize, usize),
}

/// Energy unit for `c`: its collective rate, or `γ0` when that is not positive.
pub fn energy_unit(c: &CouplingMatrices) -> f64 {
    let rate = c.collective_rate();
    if rate.is_finite() && rate > 0.0 {
        rate
    } else {
        log::warn!("collective decay rate {rate} is not positive, using γ0 as the energy unit");
        1.0
    }
}

pub fn diagonalize(c: &CouplingMatrices) -> Spectrum {
    diagonalize_scaled(&c.coherent, energy_unit(c))
}

/// Diagonalises `j / unit` for a symmetric `j`.
pub fn diagonalize_scaled(j: &DMatrix<f64>, unit: f64) -> Spectrum {
    let n = j.nrows();
    let eig = SymmetricEigen::new(j / unit);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let eigenvalues = order.iter().map(|&a| eig.eigenvalues[a]).collect();
    let eigenvectors = order
        .iter()
        .map(|&a| fix_gauge(eig.eigenvectors.column(a).iter().copied().collect()))
        .collect();
    Spectrum {
        energy_unit: unit,
        eigenvalues,
        eigenvectors,
        edge_indices: (n / 2).checked_sub(1).map_or((0, 0), |e| (e, e + 1)),
    }
}

/// Makes the largest-magnitude component positive (first one on ties).
fn fix_gauge(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(pivot) = v.iter().position(|x| x.abs() >= max * (1.0 - 1e-9)) {
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Columns are the eigenvectors.
    pub fn eigenvector_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, a| self.eigenvectors[a][i])
    }

    /// `ω_{N+2} − ω_{N−1}` (one-based) for a chain of `2N` sites; `None` below four sites.
    pub fn bandgap(&self) -> Option<f64> {
        let n = self.len() / 2;
        if n < 2 {
            return None;
        }
        Some(self.eigenvalues[n + 1] - self.eigenvalues[n - 2])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `Γ` in the eigenbasis of `J`, normalised to the spectrum's energy unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDissipator {
    pub matrix: DMatrix<f64>,
    /// RMS of the entries coupling the two edge states to the bulk states.
    pub edge_bulk_mixing: f64,
}

pub fn dissipator_in_eigenbasis(c: &CouplingMatrices, spectrum: &Spectrum) -> Result<EigenDissipator> {
    if spectrum.len() != c.n_sites() {
        return Err(Error::Invalid(format!(
            "spectrum has {} states but the chain has {} sites",
            spectrum.len(),
            c.n_sites()
        )));
    }
    let phi = spectrum.eigenvector_matrix();
    let mut m = phi.transpose() * &c.dissipative * &phi / spectrum.energy_unit;
    // Exact symmetry, so downstream consumers see a symmetric matrix bit for bit.
    let n = m.nrows();
    for a in 0..n {
        for b in a + 1..n {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    let (e1, e2) = spectrum.edge_indices;
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in [e1, e2] {
        for b in (0..n).filter(|&b| b != e1 && b != e2) {
            sum += m[(e, b)] * m[(e, b)];
            count += 1;
        }
    }
    let edge_bulk_mixing = if count == 0 { 0.0 } else { (sum / count as f64).sqrt() };
    Ok(EigenDissipator { matrix: m, edge_bulk_mixing })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Open SSH chain with intra-cell `t1`, inter-cell `t2` and `Γ = I`.
    pub(crate) fn ssh(n_cells: usize, t1: f64, t2: f64) -> CouplingMatrices {
        let n = 2 * n_cells;
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            let t = if i % 2 == 0 { t1 } else { t2 };
            j[(i, i + 1)] = t;
            j[(i + 1, i)] = t;
        }
        CouplingMatrices::new(j, DMatrix::identity(n, n), (0, 1)).unwrap()
    }

    #[test]
    fn dimerized_limit_has_exact_zero_modes_on_the_ends() {
        let s = diagonalize(&ssh(12, 0.0, 1.0));
        let (a, b) = s.edge_indices;
        assert_eq!((a, b), (11, 12));
        assert_eq!(s.eigenvalues[a], 0.0);
        assert_eq!(s.eigenvalues[b], 0.0);
        for &e in &[a, b] {
            let v = &s.eigenvectors[e];
            let ends = v[0] * v[0] + v[23] * v[23];
            assert!((ends - 1.0).abs() < 1e-12);
        }
    }

    /// Number of eigenvalues below `x` of the symmetric tridiagonal matrix with
    /// zero diagonal and off-diagonal `t` (Sturm sequence).
    fn count_below(t: &[f64], x: f64) -> usize {
        let mut count = 0;
        let mut d = -x;
        if d < 0.0 {
            count += 1;
        }
        for &ti in t {
            let prev = if d == 0.0 { 1e-300 } else { d };
            d = -x - ti * ti / prev;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `index`-th eigenvalue (ascending, zero-based) by bisection.
    fn sturm_eigenvalue(t: &[f64], index: usize) -> f64 {
        let (mut lo, mut hi) = (-4.0, 4.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(t, mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn ssh_hoppings(n_cells: usize, t1: f64, t2: f64) -> Vec<f64> {
        (0..2 * n_cells - 1).map(|i| if i % 2 == 0 { t1 } else { t2 }).collect()
    }

    #[test]
    fn nontrivial_ssh_midgap_and_gap() {
        let s = diagonalize(&ssh(12, 0.5, 1.0));
        let (a, b) = s.edge_indices;
        assert!(s.eigenvalues[a].abs() < 0.01 && s.eigenvalues[b].abs() < 0.01);
        let gap = s.bandgap().unwrap();
        let t = ssh_hoppings(12, 0.5, 1.0);
        let oracle = sturm_eigenvalue(&t, 13) - sturm_eigenvalue(&t, 10);
        assert!((gap - oracle).abs() < 1e-10, "gap {gap} vs {oracle}");
        // Open-chain bulk states lie inside the infinite-chain bands.
        assert!(gap > 1.0);
    }

    #[test]
    fn long_ssh_gap_approaches_bulk_value() {
        let s = diagonalize(&ssh(200, 0.5, 1.0));
        let gap = s.bandgap().unwrap();
        assert!((gap - 1.0).abs() < 0.01, "gap {gap}");
    }

    #[test]
    fn zero_coupling_is_degenerate() {
        let s = diagonalize(&ssh(3, 0.0, 0.0));
        assert!(s.eigenvalues.iter().all(|&w| w == 0.0));
        assert_eq!(s.bandgap(), Some(0.0));
    }

    #[test]
    fn eigenpairs_are_orthonormal_and_accurate() {
        let c = ssh(5, 0.3, -0.8);
        let s = diagonalize(&c);
        let phi = s.eigenvector_matrix();
        let overlap = phi.transpose() * &phi;
        assert!((overlap - DMatrix::identity(10, 10)).amax() < 1e-10);
        let norm = c.coherent.norm();
        for (w, v) in s.eigenvalues.iter().zip(&s.eigenvectors) {
            let v = nalgebra::DVector::from_column_slice(v);
            assert!((&c.coherent * &v - &v * *w).norm() < 1e-9 * norm);
        }
    }

    #[test]
    fn gauge_makes_the_largest_component_positive() {
        let s = diagonalize(&ssh(4, 0.4, 1.0));
        for v in &s.eigenvectors {
            let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let first = v.iter().find(|x| x.abs() >= m * (1.0 - 1e-9)).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn identity_dissipator_is_invariant() {
        let c = ssh(6, 0.5, 1.0);
        let s = diagonalize(&c);
        let d = dissipator_in_eigenbasis(&c, &s).unwrap();
        assert!((d.matrix - DMatrix::identity(12, 12)).amax() < 1e-12);
        assert!(d.edge_bulk_mixing < 1e-12);
    }

    #[test]
    fn spectrum_json_round_trip() {
        let s = diagonalize(&ssh(2, 0.5, 1.0));
        assert_eq!(Spectrum::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}
