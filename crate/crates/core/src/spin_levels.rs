//! Single-ion spin Hamiltonian with zero-field splitting and Zeeman term.
//!
//! `H = D Sz² + E (Sx² − Sy²) + (g μB/h) B0 (sin φ Sx + cos φ Sz)`, all in GHz.
//! The field lies in the x–z plane of the ion frame at angle φ from the easy
//! axis; the spectrum only depends on that angle.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::units::{mt_to_t, MU_B_GHZ_PER_T};

/// Largest spin quantum number accepted (matrix dimension 101).
pub const MAX_SPIN: f64 = 50.0;

/// h / k_B in kelvin per GHz.
const KELVIN_PER_GHZ: f64 = 0.047_992_430_7;

fn default_spin() -> f64 {
    3.5
}
fn default_g() -> f64 {
    2.0
}
fn default_n_spins() -> f64 {
    1.0
}

/// Parameters of one spin ensemble (one crystal domain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinEnsembleParams {
    /// Spin quantum number S (half-integer or integer).
    #[serde(default = "default_spin")]
    pub s: f64,
    /// Axial zero-field splitting, GHz.
    pub d_ghz: f64,
    /// Rhombic zero-field splitting, GHz.
    #[serde(default)]
    pub e_ghz: f64,
    #[serde(default = "default_g")]
    pub g: f64,
    /// Angle between B0 and the easy z-axis, degrees.
    pub phi_deg: f64,
    /// Relative ensemble size; also weights domains against each other.
    #[serde(default = "default_n_spins")]
    pub n_spins: f64,
    /// Optional replacement for the zero-field qubit gap Δ(0), GHz.
    ///
    /// When set, [`qubit_gap`] returns `raw(B0) − raw(0) + zero_field_gap_ghz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_field_gap_ghz: Option<f64>,
    #[serde(default)]
    pub temperature_k: f64,
}

impl Default for SpinEnsembleParams {
    fn default() -> Self {
        // GdW10 zero-field splitting as used throughout the examples.
        Self {
            s: 3.5,
            d_ghz: -1.23,
            e_ghz: 0.0031,
            g: 2.0,
            phi_deg: 49.0,
            n_spins: 1.0,
            zero_field_gap_ghz: None,
            temperature_k: 0.0,
        }
    }
}

impl SpinEnsembleParams {
    pub fn dim(&self) -> usize {
        (2.0 * self.s).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let two_s = 2.0 * self.s;
        if !(self.s > 0.0) || (two_s - two_s.round()).abs() > 1e-12 {
            return Err(Error::validation("s", format!("2S+1 must be an integer >= 2, got S = {}", self.s)));
        }
        if self.s > MAX_SPIN {
            return Err(Error::validation("s", format!("S = {} exceeds the supported maximum {MAX_SPIN}", self.s)));
        }
        if !self.d_ghz.is_finite() || !self.e_ghz.is_finite() {
            return Err(Error::validation("d_ghz", "zero-field splitting must be finite"));
        }
        if self.e_ghz.abs() > self.d_ghz.abs() / 3.0 + 1e-15 {
            return Err(Error::validation(
                "e_ghz",
                format!("|E| = {} exceeds |D|/3 = {}", self.e_ghz.abs(), self.d_ghz.abs() / 3.0),
            ));
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(Error::validation("g", "g-factor must be positive"));
        }
        if !(0.0..360.0).contains(&self.phi_deg) {
            return Err(Error::validation("phi_deg", format!("must lie in [0, 360), got {}", self.phi_deg)));
        }
        if !(self.n_spins.is_finite() && self.n_spins > 0.0) {
            return Err(Error::validation("n_spins", "must be positive"));
        }
        if !(self.temperature_k.is_finite() && self.temperature_k >= 0.0) {
            return Err(Error::validation("temperature_k", "must be non-negative"));
        }
        if let Some(gap) = self.zero_field_gap_ghz {
            if !gap.is_finite() {
                return Err(Error::validation("zero_field_gap_ghz", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Spin operators in the |m⟩ basis, m ascending from −S to +S.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: DMatrix<Complex64>,
    pub sy: DMatrix<Complex64>,
    pub sz: DMatrix<Complex64>,
    pub s_plus: DMatrix<Complex64>,
    pub s_minus: DMatrix<Complex64>,
}

impl SpinOperators {
    pub fn new(s: f64) -> Self {
        let n = (2.0 * s).round() as usize + 1;
        let zero = Complex64::new(0.0, 0.0);
        let mut sz = DMatrix::from_element(n, n, zero);
        let mut s_plus = DMatrix::from_element(n, n, zero);
        for k in 0..n {
            let m = k as f64 - s;
            sz[(k, k)] = Complex64::new(m, 0.0);
            if k + 1 < n {
                s_plus[(k + 1, k)] = Complex64::new((s * (s + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
            }
        }
        let s_minus = s_plus.adjoint();
        let half = Complex64::new(0.5, 0.0);
        let sx = (&s_plus + &s_minus) * half;
        let sy = (&s_plus - &s_minus) * Complex64::new(0.0, -0.5);
        Self {
            sx,
            sy,
            sz,
            s_plus,
            s_minus,
        }
    }
}

/// One allowed transition `i → j` (indices into the sorted energies, `i < j`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub i: usize,
    pub j: usize,
    pub frequency_ghz: f64,
    /// `|⟨j|S+|i⟩|² + |⟨j|S−|i⟩|²`, the transverse dipole strength.
    pub weight: f64,
}

/// Sorted spectrum plus the full transition table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSet {
    pub energies: Vec<f64>,
    pub transitions: Vec<Transition>,
    #[serde(skip)]
    pub states: Option<DMatrix<Complex64>>,
}

impl LevelSet {
    /// The transition out of the lowest level with the largest dipole weight.
    pub fn qubit_transition(&self) -> Option<Transition> {
        self.transitions
            .iter()
            .filter(|t| t.i == 0)
            .copied()
            .reduce(|best, t| if t.weight > best.weight * (1.0 + 1e-9) { t } else { best })
    }

    /// Boltzmann populations at `temperature_k`; all weight in level 0 at 0 K.
    pub fn populations(&self, temperature_k: f64) -> Vec<f64> {
        let n = self.energies.len();
        if temperature_k <= 0.0 {
            let mut p = vec![0.0; n];
            p[0] = 1.0;
            return p;
        }
        let e0 = self.energies[0];
        let w: Vec<f64> = self
            .energies
            .iter()
            .map(|e| (-(e - e0) * KELVIN_PER_GHZ / temperature_k).exp())
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    /// Population difference across the qubit transition, 1 at zero temperature.
    pub fn qubit_polarization(&self, temperature_k: f64) -> f64 {
        match self.qubit_transition() {
            Some(t) => {
                let p = self.populations(temperature_k);
                p[t.i] - p[t.j]
            }
            None => 0.0,
        }
    }
}

fn check_field(b0_mt: f64) -> Result<()> {
    if !(b0_mt.is_finite() && b0_mt >= 0.0) {
        return Err(Error::validation("b0_mT", format!("field must be finite and >= 0, got {b0_mt}")));
    }
    Ok(())
}

/// Builds the spin Hamiltonian (GHz) at field `b0_mt`.
pub fn build_hamiltonian(params: &SpinEnsembleParams, b0_mt: f64) -> Result<DMatrix<Complex64>> {
    params.validate()?;
    check_field(b0_mt)?;
    let ops = SpinOperators::new(params.s);
    Ok(hamiltonian_from(&ops, params, b0_mt))
}

fn hamiltonian_from(ops: &SpinOperators, params: &SpinEnsembleParams, b0_mt: f64) -> DMatrix<Complex64> {
    let c = |x: f64| Complex64::new(x, 0.0);
    let zeeman = params.g * MU_B_GHZ_PER_T * mt_to_t(b0_mt);
    let phi = params.phi_deg.to_radians();
    let mut h = &ops.sz * &ops.sz * c(params.d_ghz);
    if params.e_ghz != 0.0 {
        h += (&ops.sx * &ops.sx - &ops.sy * &ops.sy) * c(params.e_ghz);
    }
    if zeeman != 0.0 {
        h += &ops.sx * c(zeeman * phi.sin()) + &ops.sz * c(zeeman * phi.cos());
    }
    // Symmetrize away rounding in the operator products.
    let adj = h.adjoint();
    (h + adj) * c(0.5)
}

/// Diagonalizes the Hamiltonian and tabulates every `i < j` transition.
pub fn energy_levels(params: &SpinEnsembleParams, b0_mt: f64) -> Result<LevelSet> {
    params.validate()?;
    check_field(b0_mt)?;
    let ops = SpinOperators::new(params.s);
    let h = hamiltonian_from(&ops, params, b0_mt);
    let (energies, states) = linalg::hermitian_eigen(h)?;

    let up = states.adjoint() * &ops.s_plus * &states;
    let down = states.adjoint() * &ops.s_minus * &states;
    let n = energies.len();
    let mut transitions = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            transitions.push(Transition {
                i,
                j,
                frequency_ghz: energies[j] - energies[i],
                weight: up[(j, i)].norm_sqr() + down[(j, i)].norm_sqr(),
            });
        }
    }
    Ok(LevelSet {
        energies,
        transitions,
        states: Some(states),
    })
}

/// Raw Hamiltonian qubit frequency, ignoring any Δ(0) override.
pub fn qubit_gap_raw(params: &SpinEnsembleParams, b0_mt: f64) -> Result<f64> {
    let levels = energy_levels(params, b0_mt)?;
    levels
        .qubit_transition()
        .map(|t| t.frequency_ghz)
        .ok_or_else(|| Error::DegenerateMode("spin has a single level".into()))
}

/// Qubit transition frequency Δ(B0) in GHz.
pub fn qubit_gap(params: &SpinEnsembleParams, b0_mt: f64) -> Result<f64> {
    let raw = qubit_gap_raw(params, b0_mt)?;
    match params.zero_field_gap_ghz {
        Some(gap0) => Ok(raw - qubit_gap_raw(params, 0.0)? + gap0),
        None => Ok(raw),
    }
}
