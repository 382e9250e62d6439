//! Free-space dyadic Green's function.
//!
//! ```text
//! G0(r1, r2) = e^{ikr}/(4πr) · [ (1 + i/x − 1/x²) I + (−1 − 3i/x + 3/x²) r̂r̂ ],  x = kr
//! ```
//!
//! The imaginary part is regular at coincidence and is evaluated through
//! spherical Bessel functions, `Im G0 = k/4π · [(j0 − j1/x) I + j2 r̂r̂]`,
//! with series expansions at small `x` so that `Im G0(r, r) = k/6π` is reached
//! smoothly.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = [f64; 3];

/// 3×3 complex tensor, indexed `[row][column]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dyadic(pub [[Complex64; 3]; 3]);

impl Dyadic {
    pub fn zeros() -> Self {
        Dyadic([[Complex64::new(0.0, 0.0); 3]; 3])
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[j][i];
            }
        }
        out
    }

    pub fn zz(&self) -> Complex64 {
        self.0[2][2]
    }

    /// `G · v` for a complex vector.
    pub fn apply(&self, v: &[Complex64; 3]) -> [Complex64; 3] {
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (i, row) in self.0.iter().enumerate() {
            out[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        out
    }

    pub fn column(&self, j: usize) -> [Complex64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

impl Add for Dyadic {
    type Output = Dyadic;
    fn add(mut self, rhs: Dyadic) -> Dyadic {
        self += rhs;
        self
    }
}

impl AddAssign for Dyadic {
    fn add_assign(&mut self, rhs: Dyadic) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl Mul<Complex64> for Dyadic {
    type Output = Dyadic;
    fn mul(mut self, s: Complex64) -> Dyadic {
        for row in self.0.iter_mut() {
            for c in row.iter_mut() {
                *c *= s;
            }
        }
        self
    }
}

/// Below this `x = kr` the imaginary part switches to its Taylor series.
const SERIES_CUTOFF: f64 = 0.05;

/// `(j0(x) − j1(x)/x, j2(x))`.
fn bessel_combination(x: f64) -> (f64, f64) {
    if x < SERIES_CUTOFF {
        let x2 = x * x;
        let x4 = x2 * x2;
        let x6 = x4 * x2;
        let j0 = 1.0 - x2 / 6.0 + x4 / 120.0 - x6 / 5040.0;
        let j1_over_x = 1.0 / 3.0 - x2 / 30.0 + x4 / 840.0 - x6 / 45360.0;
        let j2 = x2 / 15.0 - x4 / 210.0 + x6 / 7560.0;
        (j0 - j1_over_x, j2)
    } else {
        let (s, c) = x.sin_cos();
        let j0 = s / x;
        let j1_over_x = (s / x - c) / (x * x);
        let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
        (j0 - j1_over_x, j2)
    }
}

/// Free-space dyadic Green's function between two distinct points (nm, 1/nm).
pub fn free_space_green(r1: &Vec3, r2: &Vec3, k0: f64) -> Result<Dyadic> {
    let d = [r1[0] - r2[0], r1[1] - r2[1], r1[2] - r2[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::Domain(format!(
            "free-space Green's function needs distinct points, got {r1:?} and {r2:?}"
        )));
    }
    Ok(green_unchecked(&d, r, k0))
}

/// Kernel of [`free_space_green`] for a displacement `d` of length `r > 0`.
pub(crate) fn green_unchecked(d: &Vec3, r: f64, k0: f64) -> Dyadic {
    let x = k0 * r;
    let inv_x = 1.0 / x;
    let inv_x2 = inv_x * inv_x;
    let scale = k0 / (4.0 * PI);
    let (s, c) = x.sin_cos();
    // Real parts of e^{ix}/x · (1 + i/x − 1/x²) and e^{ix}/x · (−1 − 3i/x + 3/x²).
    let re_a = (c * (1.0 - inv_x2) - s * inv_x) * inv_x;
    let re_b = (c * (3.0 * inv_x2 - 1.0) + 3.0 * s * inv_x) * inv_x;
    let (im_a, im_b) = bessel_combination(x);
    let a = Complex64::new(scale * re_a, scale * im_a);
    let b = Complex64::new(scale * re_b, scale * im_b);
    let u = [d[0] / r, d[1] / r, d[2] / r];
    let mut g = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = b * (u[i] * u[j]);
        }
        g[i][i] += a;
    }
    Dyadic(g)
}

/// `G0_zz` for two points on a common line parallel to `z`, separated by `dz`.
///
/// Equals `(k/4π)·e^{ix}·(2/x³ − 2i/x²)` with `x = k|dz|`. At `dz = 0` only the
/// regular imaginary part `i·k/6π` is returned.
pub fn free_space_green_zz_axial(dz: f64, k0: f64) -> Complex64 {
    let r = dz.abs();
    let scale = k0 / (4.0 * PI);
    if r == 0.0 {
        return Complex64::new(0.0, k0 / (6.0 * PI));
    }
    let x = k0 * r;
    let (s, c) = x.sin_cos();
    let re = 2.0 * (c / x + s) / (x * x);
    let (im_a, im_b) = bessel_combination(x);
    Complex64::new(scale * re, scale * (im_a + im_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form_zz(x: f64, k: f64) -> Complex64 {
        let e = Complex64::new(0.0, x).exp();
        e * Complex64::new(2.0 / x.powi(3), -2.0 / (x * x)) * (k / (4.0 * PI))
    }

    #[test]
    fn coincident_points_are_rejected() {
        let r = [1.0, 2.0, 3.0];
        assert!(matches!(free_space_green(&r, &r, 0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn half_wavelength_golden_value() {
        let lambda = 500.0;
        let k = 2.0 * PI / lambda;
        let g = free_space_green(&[0.0, 0.0, lambda / 2.0], &[0.0; 3], k).unwrap();
        let expected = Complex64::new(-2.0 / PI.powi(3), 2.0 / (PI * PI)) * (k / (4.0 * PI));
        assert!((g.zz() - expected).norm() <= 1e-12 * expected.norm());
    }

    #[test]
    fn axial_helper_matches_tensor() {
        let k = 2.0 * PI / 500.0;
        for &dz in &[3.0, 120.0, 357.6, -900.0] {
            let g = free_space_green(&[0.0, 0.0, dz], &[0.0; 3], k).unwrap();
            let h = free_space_green_zz_axial(dz, k);
            assert!((g.zz() - h).norm() < 1e-13 * h.norm());
            let x = k * dz.abs();
            assert!((h - closed_form_zz(x, k)).norm() < 1e-12 * h.norm());
        }
    }

    #[test]
    fn imaginary_part_is_continuous_through_series_cutoff() {
        let k = 1.0;
        let below = free_space_green_zz_axial(SERIES_CUTOFF * (1.0 - 1e-9), k).im;
        let above = free_space_green_zz_axial(SERIES_CUTOFF * (1.0 + 1e-9), k).im;
        assert!((below - above).abs() < 1e-13);
    }

    #[test]
    fn transverse_components_for_axial_separation() {
        let k = 0.0125;
        let g = free_space_green(&[0.0, 0.0, 400.0], &[0.0; 3], k).unwrap();
        // Off-diagonal entries vanish and xx == yy.
        assert!(g.0[0][1].norm() < 1e-18 && g.0[0][2].norm() < 1e-18);
        assert!((g.0[0][0] - g.0[1][1]).norm() < 1e-18);
    }
}
