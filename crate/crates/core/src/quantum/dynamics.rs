//! Single-excitation dynamics under `H_eff = J − iΓ/2`.
//!
//! With one excitation and lowering-operator jumps the excited block of the
//! density matrix stays pure, `ρ_e(t) = ψ(t)ψ(t)†` with `ψ̇ = −i H_eff ψ`, and the
//! jumps only feed the ground state, whose population is `1 − ‖ψ‖²`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{diagonalize, Spectrum};
use crate::chain::CouplingMatrices;
use crate::{Error, Result};

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Normalised site amplitudes.
    Amplitudes(Vec<Complex64>),
    /// Zero-based index into the ascending spectrum.
    Eigenstate(usize),
    Site(usize),
}

impl InitialState {
    pub fn describe(&self) -> String {
        match self {
            InitialState::Amplitudes(_) => "amplitudes".into(),
            InitialState::Eigenstate(a) => format!("eigenstate {}", a + 1),
            InitialState::Site(m) => format!("site {}", m + 1),
        }
    }

    fn amplitudes(&self, spectrum: &Spectrum) -> Result<Vec<C>> {
        let n = spectrum.len();
        let psi = match self {
            InitialState::Amplitudes(v) => {
                if v.len() != n {
                    return Err(Error::Invalid(format!("initial state has {} amplitudes, chain has {n} sites", v.len())));
                }
                v.clone()
            }
            InitialState::Eigenstate(a) => spectrum
                .eigenvectors
                .get(*a)
                .ok_or_else(|| Error::Invalid(format!("eigenstate index {a} out of range")))?
                .iter()
                .map(|&x| C::new(x, 0.0))
                .collect(),
            InitialState::Site(m) => {
                if *m >= n {
                    return Err(Error::Invalid(format!("site index {m} out of range")));
                }
                (0..n).map(|i| C::new(if i == *m { 1.0 } else { 0.0 }, 0.0)).collect()
            }
        };
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("initial state has norm {norm}, expected 1")));
        }
        Ok(psi)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagator {
    /// Matrix exponential per distinct output interval.
    #[default]
    Exponential,
    /// Dormand-Prince 5(4) with adaptive steps.
    Adaptive { rtol: f64, atol: f64 },
}

impl Propagator {
    pub fn adaptive() -> Self {
        Propagator::Adaptive { rtol: 1e-9, atol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub initial: String,
    /// `γ / γ0` used for the time axis.
    pub energy_unit: f64,
    /// Times in units of `1/γ`.
    pub times: Vec<f64>,
    /// `[t][m]`
    pub site_populations: Vec<Vec<f64>>,
    /// `[t][α]`
    pub eigen_populations: Vec<Vec<f64>>,
    pub ground: Vec<f64>,
}

impl DynamicsTrace {
    /// Times in units of `1/γ0`.
    pub fn times_gamma0(&self) -> Vec<f64> {
        self.times.iter().map(|t| t / self.energy_unit).collect()
    }

    pub fn excited(&self) -> Vec<f64> {
        self.site_populations.iter().map(|p| p.iter().sum()).collect()
    }

    /// Summed population of `sites` over time.
    pub fn site_group(&self, sites: &[usize]) -> Vec<f64> {
        self.site_populations.iter().map(|p| sites.iter().map(|&m| p[m]).sum()).collect()
    }

    /// Summed population of eigenstates `states` over time.
    pub fn eigen_group(&self, states: &[usize]) -> Vec<f64> {
        self.eigen_populations.iter().map(|p| states.iter().map(|&a| p[a]).sum()).collect()
    }

    /// First time (units `1/γ`, linearly interpolated) at which `series` falls
    /// below `1/e` of its initial value; `None` if it never does.
    pub fn decay_time(&self, series: &[f64]) -> Option<f64> {
        let threshold = series.first()? / std::f64::consts::E;
        for i in 1..series.len() {
            if series[i] < threshold {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let (p0, p1) = (series[i - 1], series[i]);
                return Some(t0 + (t1 - t0) * (p0 - threshold) / (p0 - p1));
            }
        }
        None
    }

    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut s = String::new();
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(s, "# initial: {}", self.initial);
        let n = self.site_populations.first().map_or(0, Vec::len);
        let mut header = vec!["t_gamma".to_string(), "t_gamma0".to_string(), "ground".to_string()];
        header.extend((1..=n).map(|m| format!("site_{m}")));
        header.extend((1..=n).map(|a| format!("eigen_{a}")));
        let _ = writeln!(s, "{}", header.join(","));
        let t0 = self.times_gamma0();
        for i in 0..self.times.len() {
            let _ = write!(s, "{},{},{}", self.times[i], t0[i], self.ground[i]);
            for p in self.site_populations[i].iter().chain(&self.eigen_populations[i]) {
                let _ = write!(s, ",{p}");
            }
            s.push('\n');
        }
        s
    }
}

/// `H_eff = (J − iΓ/2)/γ`.
fn effective_hamiltonian(c: &CouplingMatrices, unit: f64) -> DMatrix<C> {
    let n = c.n_sites();
    DMatrix::from_fn(n, n, |i, j| C::new(c.coherent[(i, j)], -0.5 * c.dissipative[(i, j)]) / unit)
}

pub fn evolve_single_excitation(
    c: &CouplingMatrices,
    initial: &InitialState,
    times: &[f64],
    propagator: Propagator,
) -> Result<DynamicsTrace> {
    if times.is_empty() {
        return Err(Error::Invalid("empty time grid".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid("times must be finite, non-negative and ascending".into()));
    }
    let spectrum = diagonalize(c);
    let psi0 = DVector::from_vec(initial.amplitudes(&spectrum)?);
    let h = effective_hamiltonian(c, spectrum.energy_unit);
    let states = match propagator {
        Propagator::Exponential => propagate_expm(&h, psi0, times),
        Propagator::Adaptive { rtol, atol } => propagate_dopri(&h, psi0, times, rtol, atol)?,
    };
    let phi = spectrum.eigenvector_matrix().map(|x| C::new(x, 0.0));
    let mut trace = DynamicsTrace {
        initial: initial.describe(),
        energy_unit: spectrum.energy_unit,
        times: times.to_vec(),
        site_populations: Vec::with_capacity(times.len()),
        eigen_populations: Vec::with_capacity(times.len()),
        ground: Vec::with_capacity(times.len()),
    };
    for psi in &states {
        let sites: Vec<f64> = psi.iter().map(|a| a.norm_sqr()).collect();
        let eigen: Vec<f64> = phi.tr_mul(psi).iter().map(|a| a.norm_sqr()).collect();
        let excited: f64 = sites.iter().sum();
        trace.ground.push((1.0 - excited).max(0.0));
        trace.site_populations.push(sites);
        trace.eigen_populations.push(eigen);
    }
    Ok(trace)
}

fn propagate_expm(h: &DMatrix<C>, psi0: DVector<C>, times: &[f64]) -> Vec<DVector<C>> {
    let mut out = Vec::with_capacity(times.len());
    let mut psi = psi0;
    let mut t = 0.0;
    let mut cached: Option<(f64, DMatrix<C>)> = None;
    for &target in times {
        let dt = target - t;
        if dt > 0.0 {
            let reuse = matches!(&cached, Some((d, _)) if (d - dt).abs() <= 1e-12 * dt);
            if !reuse {
                cached = Some((dt, (h * C::new(0.0, -dt)).exp()));
            }
            psi = &cached.as_ref().unwrap().1 * &psi;
            t = target;
        }
        out.push(psi.clone());
    }
    out
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B_ERR: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

fn propagate_dopri(h: &DMatrix<C>, psi0: DVector<C>, times: &[f64], rtol: f64, atol: f64) -> Result<Vec<DVector<C>>> {
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(Error::Invalid("integrator tolerances must be positive".into()));
    }
    let minus_i = C::new(0.0, -1.0);
    let rhs = |y: &DVector<C>| (h * y) * minus_i;
    let scale = h.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-12);
    let mut step = 0.1 / scale;
    let mut out = Vec::with_capacity(times.len());
    let mut y = psi0;
    let mut t = 0.0;
    let mut k1 = rhs(&y);
    for &target in times {
        while t < target {
            let h_step = step.min(target - t);
            let mut k: Vec<DVector<C>> = vec![k1.clone()];
            for stage in A.iter() {
                let mut ys = y.clone();
                for (kj, &a) in k.iter().zip(stage.iter()) {
                    if a != 0.0 {
                        ys.axpy(C::new(a * h_step, 0.0), kj, C::new(1.0, 0.0));
                    }
                }
                k.push(rhs(&ys));
            }
            // The last stage is evaluated at the fifth-order solution (FSAL).
            let mut y_new = y.clone();
            for (kj, &a) in k.iter().zip(A[5].iter()) {
                y_new.axpy(C::new(a * h_step, 0.0), kj, C::new(1.0, 0.0));
            }
            let mut err: f64 = 0.0;
            for i in 0..y.len() {
                let mut e = C::new(0.0, 0.0);
                for (kj, &b) in k.iter().zip(B_ERR.iter()) {
                    e += kj[i] * b;
                }
                let tol = atol + rtol * y[i].norm().max(y_new[i].norm());
                err = err.max((e * h_step).norm() / tol);
            }
            if !err.is_finite() {
                return Err(Error::Integrator { time: t, reason: "non-finite error estimate".into() });
            }
            if err <= 1.0 {
                t = if h_step == target - t { target } else { t + h_step };
                y = y_new;
                k1 = k.pop().expect("seven stages");
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            step = h_step * factor;
            if step < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::Integrator { time: t, reason: "step size underflow".into() });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_qubit() -> CouplingMatrices {
        CouplingMatrices::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), (0, 0)).unwrap()
    }

    #[test]
    fn single_qubit_decays_exponentially() {
        let times = [0.0, 1.0, 5.0, 10.0];
        for p in [Propagator::Exponential, Propagator::adaptive()] {
            let tr = evolve_single_excitation(&single_qubit(), &InitialState::Site(0), &times, p).unwrap();
            for (t, e) in times.iter().zip(tr.excited()) {
                let exact = (-t).exp();
                assert!((e - exact).abs() <= 1e-6 * exact, "{p:?} t = {t}: {e} vs {exact}");
            }
        }
    }

    #[test]
    fn hermitian_limit_is_unitary() {
        let n = 6;
        let j = DMatrix::from_fn(n, n, |i, k| if i == k { 0.0 } else { 1.0 / (1.0 + (i as f64 - k as f64).abs()) });
        let mut gamma = DMatrix::zeros(n, n);
        gamma[(0, 0)] = 1e-300;
        gamma[(1, 1)] = 1e-300;
        let c = CouplingMatrices::new(j, gamma, (0, 1)).unwrap();
        let times: Vec<f64> = (0..50).map(|i| 0.37 * i as f64).collect();
        for p in [Propagator::Exponential, Propagator::adaptive()] {
            let tr = evolve_single_excitation(&c, &InitialState::Site(2), &times, p).unwrap();
            for e in tr.excited() {
                assert!((e - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_unnormalised_state() {
        let err = evolve_single_excitation(
            &single_qubit(),
            &InitialState::Amplitudes(vec![C::new(0.5, 0.0)]),
            &[0.0],
            Propagator::Exponential,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn propagators_agree() {
        let n = 4;
        let j = DMatrix::from_fn(n, n, |i, k| if i == k { 0.0 } else { 0.3 / (i as f64 - k as f64).abs() });
        let g = DMatrix::from_fn(n, n, |i, k| if i == k { 1.0 } else { 0.2 / (i as f64 - k as f64).powi(2) });
        let c = CouplingMatrices::new(j, g, (1, 2)).unwrap();
        let times: Vec<f64> = (0..21).map(|i| 0.5 * i as f64).collect();
        let a = evolve_single_excitation(&c, &InitialState::Eigenstate(1), &times, Propagator::Exponential).unwrap();
        let b = evolve_single_excitation(&c, &InitialState::Eigenstate(1), &times, Propagator::adaptive()).unwrap();
        for (pa, pb) in a.site_populations.iter().zip(&b.site_populations) {
            for (x, y) in pa.iter().zip(pb) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn decay_time_interpolates() {
        let tr = evolve_single_excitation(&single_qubit(), &InitialState::Site(0), &[0.0, 0.5, 1.0, 1.5], Propagator::Exponential)
            .unwrap();
        let tau = tr.decay_time(&tr.excited()).unwrap();
        assert!((tau - 1.0).abs() < 0.1);
    }
}
