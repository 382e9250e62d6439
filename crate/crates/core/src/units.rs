//! Unit system.
//!
//! Lengths are in nanometres and the reference vacuum wavelength is 500 nm.
//! Couplings and rates are expressed in units of the free-space decay rate
//! `γ0` of a single qubit, with `ħ = 1`.

use std::f64::consts::PI;

/// Reference vacuum wavelength (nm).
pub const LAMBDA0_NM: f64 = 500.0;

/// `ħγ0` in μeV for a transition dipole of 1 e·nm at 500 nm.
pub const GAMMA0_MICRO_EV: f64 = 3.81;

/// Upper permittivity bound of the design space.
pub const EPS_MAX: f64 = 4.0;

/// Free-space wavenumber (1/nm) for a wavelength in nm.
pub fn wavenumber(lambda_nm: f64) -> f64 {
    2.0 * PI / lambda_nm
}

/// Wavenumber at the reference wavelength.
pub fn k0() -> f64 {
    wavenumber(LAMBDA0_NM)
}

/// Self value of `Im G_zz(r, r)` in vacuum, `k0/6π`.
///
/// Dividing `Im G` by this constant yields rates in units of `γ0`, so an
/// isolated qubit in vacuum decays at exactly `1.0`.
pub fn gamma0_normalization(k0: f64) -> f64 {
    k0 / (6.0 * PI)
}

/// Physical value of `ħγ0` (μeV) for a dipole of `dipole_e_nm` e·nm.
pub fn gamma0_micro_ev(dipole_e_nm: f64) -> f64 {
    GAMMA0_MICRO_EV * dipole_e_nm * dipole_e_nm
}

/// Coherent coupling `J_ij / γ0` from `Re G_zz`.
pub fn coherent_coupling(re_g: f64, k0: f64) -> f64 {
    0.5 * re_g / gamma0_normalization(k0)
}

/// Dissipative coupling `γ_ij / γ0` from `Im G_zz`.
pub fn dissipative_coupling(im_g: f64, k0: f64) -> f64 {
    im_g / gamma0_normalization(k0)
}
