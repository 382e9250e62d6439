//! Voxel and ring discretisations of a dielectric body.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::green::Vec3;
use crate::units::{EPS_MAX, LAMBDA0_NM};
use crate::{Error, Result};

/// Radiatively corrected Clausius–Mossotti polarisability of a cubic voxel.
///
/// `α_CM = 3V(ε−1)/(ε+2)` and `α = α_CM / (1 − i k³ α_CM / 6π)`, so that
/// `Im(1/α) = −k³/6π` for real `ε` and the coupled-dipole system is lossless.
pub fn polarizability(permittivity: f64, volume: f64, k0: f64) -> Complex64 {
    let cm = 3.0 * volume * (permittivity - 1.0) / (permittivity + 2.0);
    let rad = k0.powi(3) / (6.0 * PI);
    Complex64::new(cm, 0.0) / Complex64::new(1.0, -rad * cm)
}

/// `dα/dε` of [`polarizability`].
pub fn polarizability_derivative(permittivity: f64, volume: f64, k0: f64) -> Complex64 {
    let cm = 3.0 * volume * (permittivity - 1.0) / (permittivity + 2.0);
    let dcm = 9.0 * volume / (permittivity + 2.0).powi(2);
    let rad = k0.powi(3) / (6.0 * PI);
    let denom = Complex64::new(1.0, -rad * cm);
    Complex64::new(dcm, 0.0) / (denom * denom)
}

/// Voxel pitch presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionProfile {
    /// 45 nm pitch for quick runs.
    Coarse,
    /// `λ0 / (10 √ε_max)`, 25 nm at the reference wavelength.
    Default,
    /// Explicit pitch in nm.
    Custom(f64),
}

impl ResolutionProfile {
    pub fn pitch_nm(&self) -> f64 {
        match self {
            ResolutionProfile::Coarse => 45.0,
            ResolutionProfile::Default => LAMBDA0_NM / (10.0 * EPS_MAX.sqrt()),
            ResolutionProfile::Custom(p) => *p,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ResolutionProfile::Coarse => "coarse".into(),
            ResolutionProfile::Default => "default".into(),
            ResolutionProfile::Custom(p) => format!("custom:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    pub position: Vec3,
    pub volume: f64,
    pub permittivity: f64,
}

impl Voxel {
    /// Edge length of the equivalent cube.
    pub fn side(&self) -> f64 {
        self.volume.cbrt()
    }

    /// Whether `p` lies inside the equivalent cube.
    pub fn contains(&self, p: &Vec3) -> bool {
        let half = 0.5 * self.side();
        (0..3).all(|i| (p[i] - self.position[i]).abs() < half)
    }
}

/// Set of polarisable voxels. Vacuum voxels (`ε = 1`) are dropped on construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoxelCloud {
    voxels: Vec<Voxel>,
}

impl VoxelCloud {
    pub fn new(voxels: Vec<Voxel>) -> Result<Self> {
        for v in &voxels {
            if !(v.permittivity >= 1.0) || !v.permittivity.is_finite() {
                return Err(Error::Invalid(format!(
                    "voxel permittivity {} outside [1, ∞)",
                    v.permittivity
                )));
            }
            if !(v.volume > 0.0) {
                return Err(Error::Invalid(format!("voxel volume {} not positive", v.volume)));
            }
        }
        let voxels: Vec<Voxel> = voxels.into_iter().filter(|v| v.permittivity != 1.0).collect();
        check_overlap(&voxels)?;
        Ok(VoxelCloud { voxels })
    }

    pub fn empty() -> Self {
        VoxelCloud::default()
    }

    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn max_permittivity(&self) -> f64 {
        self.voxels.iter().map(|v| v.permittivity).fold(1.0, f64::max)
    }

    /// Index of the voxel containing `p`, if any.
    pub fn voxel_containing(&self, p: &Vec3) -> Option<usize> {
        self.voxels.iter().position(|v| v.contains(p))
    }
}

/// Two voxels overlap when their centres are closer than half their mean side.
fn check_overlap(voxels: &[Voxel]) -> Result<()> {
    let Some(cell) = voxels.iter().map(|v| v.side()).reduce(f64::max) else {
        return Ok(());
    };
    let key = |p: &Vec3| {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, v) in voxels.iter().enumerate() {
        buckets.entry(key(&v.position)).or_default().push(i);
    }
    for (i, v) in voxels.iter().enumerate() {
        let (a, b, c) = key(&v.position);
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    let Some(list) = buckets.get(&(a + da, b + db, c + dc)) else {
                        continue;
                    };
                    for &j in list.iter().filter(|&&j| j > i) {
                        let w = &voxels[j];
                        let d = dist(&v.position, &w.position);
                        if d < 0.25 * (v.side() + w.side()) {
                            return Err(Error::Geometry(format!(
                                "voxels {i} and {j} overlap (centre distance {d:.3} nm)"
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Azimuthally symmetric ring of `n_phi` identical voxels around the `z` axis.
///
/// Voxel `m` sits at angle `2πm / n_phi`. A ring with `rho = 0` is a single
/// voxel on the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingShape {
    pub rho: f64,
    pub z: f64,
    pub d_rho: f64,
    pub d_z: f64,
    pub n_phi: usize,
    pub voxel_volume: f64,
}

impl RingShape {
    /// Annular cell `[rho − dρ/2, rho + dρ/2] × [z − dz/2, z + dz/2]` split into
    /// voxels whose arc length is close to `pitch`.
    pub fn annulus(rho: f64, z: f64, d_rho: f64, d_z: f64, pitch: f64) -> Self {
        let n_phi = ((2.0 * PI * rho / pitch).round() as usize).max(3);
        RingShape {
            rho,
            z,
            d_rho,
            d_z,
            n_phi,
            voxel_volume: 2.0 * PI * rho * d_rho * d_z / n_phi as f64,
        }
    }

    /// Single cubic voxel of side `side` centred on the axis.
    pub fn on_axis(z: f64, side: f64) -> Self {
        RingShape {
            rho: 0.0,
            z,
            d_rho: side,
            d_z: side,
            n_phi: 1,
            voxel_volume: side.powi(3),
        }
    }

    pub fn translated(&self, dz: f64) -> Self {
        RingShape { z: self.z + dz, ..*self }
    }

    pub fn total_volume(&self) -> f64 {
        self.voxel_volume * self.n_phi as f64
    }

    pub fn voxel_angle(&self, m: usize) -> f64 {
        2.0 * PI * m as f64 / self.n_phi as f64
    }

    pub fn voxel_position(&self, m: usize) -> Vec3 {
        let (s, c) = self.voxel_angle(m).sin_cos();
        [self.rho * c, self.rho * s, self.z]
    }

    /// Whether the on-axis point `(0, 0, z)` falls inside the ring cross-section.
    pub fn contains_axis_point(&self, z: f64) -> bool {
        self.rho - 0.5 * self.d_rho < 1e-12 && (z - self.z).abs() < 0.5 * self.d_z
    }

    fn overlaps(&self, other: &RingShape) -> bool {
        let tol = 1e-9;
        (self.rho - other.rho).abs() < 0.5 * (self.d_rho + other.d_rho) - tol
            && (self.z - other.z).abs() < 0.5 * (self.d_z + other.d_z) - tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub shape: RingShape,
    pub permittivity: f64,
}

/// Axisymmetric dielectric described ring by ring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RingCloud {
    rings: Vec<Ring>,
}

impl RingCloud {
    /// Validates permittivities and rejects overlapping ring cross-sections.
    /// Vacuum rings are kept; they simply carry no polarisability.
    pub fn new(rings: Vec<Ring>) -> Result<Self> {
        for r in &rings {
            if !(r.permittivity >= 1.0) || !r.permittivity.is_finite() {
                return Err(Error::Invalid(format!(
                    "ring permittivity {} outside [1, ∞)",
                    r.permittivity
                )));
            }
        }
        let mut order: Vec<usize> = (0..rings.len()).collect();
        order.sort_by(|&a, &b| rings[a].shape.z.total_cmp(&rings[b].shape.z));
        let max_dz = rings.iter().map(|r| r.shape.d_z).fold(0.0, f64::max);
        for (pos, &i) in order.iter().enumerate() {
            for &j in &order[pos + 1..] {
                if rings[j].shape.z - rings[i].shape.z >= max_dz {
                    break;
                }
                if rings[i].shape.overlaps(&rings[j].shape) {
                    return Err(Error::Geometry(format!(
                        "rings {i} and {j} overlap at rho = {:.2}, z = {:.2}",
                        rings[i].shape.rho, rings[i].shape.z
                    )));
                }
            }
        }
        Ok(RingCloud { rings })
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    pub fn shapes(&self) -> Vec<RingShape> {
        self.rings.iter().map(|r| r.shape).collect()
    }

    pub fn permittivities(&self) -> Vec<f64> {
        self.rings.iter().map(|r| r.permittivity).collect()
    }

    /// Number of non-vacuum voxels after azimuthal expansion.
    pub fn voxel_count(&self) -> usize {
        self.rings
            .iter()
            .filter(|r| r.permittivity != 1.0)
            .map(|r| r.shape.n_phi)
            .sum()
    }

    /// Expands every ring into its discrete voxels.
    pub fn to_voxels(&self) -> Result<VoxelCloud> {
        let mut voxels = Vec::with_capacity(self.voxel_count());
        for r in self.rings.iter().filter(|r| r.permittivity != 1.0) {
            for m in 0..r.shape.n_phi {
                voxels.push(Voxel {
                    position: r.shape.voxel_position(m),
                    volume: r.shape.voxel_volume,
                    permittivity: r.permittivity,
                });
            }
        }
        VoxelCloud::new(voxels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_voxels_are_dropped() {
        let cloud = VoxelCloud::new(vec![
            Voxel { position: [0.0; 3], volume: 1.0, permittivity: 1.0 },
            Voxel { position: [5.0, 0.0, 0.0], volume: 1.0, permittivity: 2.0 },
        ])
        .unwrap();
        assert_eq!(cloud.len(), 1);
    }

    #[test]
    fn duplicate_voxels_are_a_geometry_error() {
        let v = Voxel { position: [1.0, 2.0, 3.0], volume: 8.0, permittivity: 2.0 };
        let err = VoxelCloud::new(vec![v, v]).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn sub_unity_permittivity_is_rejected() {
        let v = Voxel { position: [0.0; 3], volume: 1.0, permittivity: 0.5 };
        assert!(matches!(VoxelCloud::new(vec![v]), Err(Error::Invalid(_))));
    }

    #[test]
    fn radiative_correction_fixes_imaginary_inverse() {
        let k = 2.0 * PI / 500.0;
        for &eps in &[1.5, 2.0, 4.0] {
            let a = polarizability(eps, 45f64.powi(3), k);
            let inv = Complex64::new(1.0, 0.0) / a;
            assert!((inv.im + k.powi(3) / (6.0 * PI)).abs() < 1e-12 * inv.norm());
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let k = 2.0 * PI / 500.0;
        let v = 45f64.powi(3);
        let h = 1e-6;
        for &eps in &[1.0, 2.3, 3.9] {
            let fd = (polarizability(eps + h, v, k) - polarizability(eps - h, v, k)) / (2.0 * h);
            let an = polarizability_derivative(eps, v, k);
            assert!((fd - an).norm() < 1e-6 * an.norm());
        }
    }

    #[test]
    fn annulus_conserves_volume() {
        let r = RingShape::annulus(300.0, 0.0, 45.0, 45.0, 45.0);
        let exact = PI * (322.5f64.powi(2) - 277.5f64.powi(2)) * 45.0;
        assert!((r.total_volume() - exact).abs() < 1e-9 * exact);
        assert_eq!(r.n_phi, 42);
    }

    #[test]
    fn default_pitch_is_25nm() {
        assert!((ResolutionProfile::Default.pitch_nm() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_rings_are_rejected() {
        let a = RingShape::annulus(100.0, 0.0, 40.0, 40.0, 40.0);
        let b = RingShape::annulus(110.0, 10.0, 40.0, 40.0, 40.0);
        let rings = vec![
            Ring { shape: a, permittivity: 2.0 },
            Ring { shape: b, permittivity: 2.0 },
        ];
        assert!(matches!(RingCloud::new(rings), Err(Error::Geometry(_))));
        let c = a.translated(40.0);
        let ok = vec![
            Ring { shape: a, permittivity: 2.0 },
            Ring { shape: c, permittivity: 2.0 },
        ];
        assert!(RingCloud::new(ok).is_ok());
    }
}
