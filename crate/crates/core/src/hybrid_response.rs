//! Transmission of magnon and spin modes side-coupled to one transmission line.
//!
//! For modes `k` with frequencies `ω_k`, external rates `e_k` and total rates
//! `t_k` (MHz), and a real coupling matrix `C`,
//!
//! ```text
//! S21(ω) = 1 − i vᵀ M⁻¹ v,   v_k = √(e_k/2)
//! M = diag(ω − ω_k + i t_k/2) + C + i √(e_k e_l)/2  (k ≠ l, line crosstalk)
//! ```
//!
//! The two-mode case is the usual magnon–spin anticrossing; extra magnon
//! modes (stacking clusters) or spin modes (crystal domains) just enlarge `M`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afm_modes::{
    self, find_branch, mode_rf_field, Branch, EquilibriumOptions, FieldConfig, MagnetParams, StackingConfig, C3,
};
use crate::error::{Error, Result};
use crate::saturation;
use crate::spin_levels::{self, SpinEnsembleParams};
use crate::units::ghz_to_mhz;

fn default_true() -> bool {
    true
}

/// Collective coupling and decay rates, all `/2π` in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingParams {
    #[serde(rename = "G")]
    pub g: f64,
    pub kappa_e: f64,
    pub kappa_i: f64,
    pub gamma_e: f64,
    pub gamma_i: f64,
    #[serde(default = "default_true")]
    pub include_line_crosstalk: bool,
}

impl CouplingParams {
    /// Rates of the bulk-crystal sample near its main anticrossing.
    pub fn sample1() -> Self {
        Self {
            g: 130.0,
            kappa_e: 50.0,
            kappa_i: 75.0,
            gamma_e: 10.0,
            gamma_i: 20.0,
            include_line_crosstalk: true,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_e + self.kappa_i
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_e + self.gamma_i
    }

    pub fn cooperativity(&self) -> f64 {
        self.g * self.g / (self.kappa() * self.gamma())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("G", self.g),
            ("kappa_e", self.kappa_e),
            ("kappa_i", self.kappa_i),
            ("gamma_e", self.gamma_e),
            ("gamma_i", self.gamma_i),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, format!("rate must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One oscillator seen by the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub freq_ghz: f64,
    pub ext_mhz: f64,
    pub int_mhz: f64,
}

/// A set of oscillators with real pairwise couplings (MHz).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModeSet {
    pub modes: Vec<Oscillator>,
    pub couplings: Vec<(usize, usize, f64)>,
    pub crosstalk: bool,
}

impl ModeSet {
    pub fn pair(magnon_freq_ghz: f64, spin_freq_ghz: f64, cp: &CouplingParams) -> Self {
        Self {
            modes: vec![
                Oscillator {
                    freq_ghz: magnon_freq_ghz,
                    ext_mhz: cp.kappa_e,
                    int_mhz: cp.kappa_i,
                },
                Oscillator {
                    freq_ghz: spin_freq_ghz,
                    ext_mhz: cp.gamma_e,
                    int_mhz: cp.gamma_i,
                },
            ],
            couplings: vec![(0, 1, cp.g)],
            crosstalk: cp.include_line_crosstalk,
        }
    }

    /// `A` such that `M = ω·1 − A`, frequencies in MHz relative to `origin_ghz`.
    fn dynamics(&self, origin_ghz: f64) -> DMatrix<Complex64> {
        let n = self.modes.len();
        let mut a = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (k, m) in self.modes.iter().enumerate() {
            a[(k, k)] = Complex64::new(ghz_to_mhz(m.freq_ghz - origin_ghz), -(m.ext_mhz + m.int_mhz) / 2.0);
        }
        if self.crosstalk {
            for k in 0..n {
                for l in 0..n {
                    if k != l {
                        a[(k, l)] -= Complex64::new(0.0, (self.modes[k].ext_mhz * self.modes[l].ext_mhz).sqrt() / 2.0);
                    }
                }
            }
        }
        for &(k, l, g) in &self.couplings {
            a[(k, l)] -= g;
            a[(l, k)] -= g;
        }
        a
    }

    fn drive(&self) -> DVector<Complex64> {
        DVector::from_iterator(
            self.modes.len(),
            self.modes.iter().map(|m| Complex64::new((m.ext_mhz / 2.0).sqrt(), 0.0)),
        )
    }

    pub fn s21(&self, omega_ghz: f64) -> Result<Complex64> {
        let origin = omega_ghz;
        let a = self.dynamics(origin);
        let v = self.drive();
        let m = -a;
        transmit(&m, &v, omega_ghz)
    }

    /// Transmission over a frequency axis, reusing the mode matrix.
    pub fn s21_trace(&self, f_axis_ghz: &[f64]) -> Result<Vec<Complex64>> {
        let origin = f_axis_ghz.first().copied().unwrap_or(0.0);
        let a = self.dynamics(origin);
        let v = self.drive();
        let n = self.modes.len();
        f_axis_ghz
            .iter()
            .map(|&f| {
                let w = Complex64::new(ghz_to_mhz(f - origin), 0.0);
                let m = DMatrix::from_fn(n, n, |r, c| if r == c { w - a[(r, c)] } else { -a[(r, c)] });
                transmit(&m, &v, f)
            })
            .collect()
    }

    /// Complex normal-mode frequencies `(f GHz, linewidth MHz)` and right
    /// eigenvectors of the lossy dynamics, ascending in frequency.
    pub fn normal_modes(&self) -> Vec<(f64, f64, DVector<Complex64>)> {
        let origin = self.modes.iter().map(|m| m.freq_ghz).sum::<f64>() / self.modes.len().max(1) as f64;
        let a = self.dynamics(origin);
        let mut out = Vec::new();
        if a.nrows() == 2 {
            // Closed form keeps the branch bookkeeping exact.
            let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            let mean = (p + s) / 2.0;
            let root = (((p - s) / 2.0).powi(2) + q * r).sqrt();
            for lambda in [mean - root, mean + root] {
                let v = if (lambda - p).norm() + q.norm() > (lambda - s).norm() + r.norm() {
                    DVector::from_vec(vec![q, lambda - p])
                } else {
                    DVector::from_vec(vec![lambda - s, r])
                };
                out.push((lambda, v));
            }
        } else {
            let eig = a.clone().eigenvalues().map(|e| e.iter().copied().collect::<Vec<_>>());
            for lambda in eig.unwrap_or_default() {
                let shifted = &a - DMatrix::from_diagonal_element(a.nrows(), a.nrows(), lambda);
                let svd = shifted.svd(false, true);
                let v_t = svd.v_t.expect("requested");
                let (idx, _) = svd
                    .singular_values
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
                out.push((lambda, v_t.row(idx).adjoint()));
            }
        }
        let mut out: Vec<(f64, f64, DVector<Complex64>)> = out
            .into_iter()
            .map(|(lambda, v)| {
                let norm = v.norm();
                let v = if norm > 0.0 { v / Complex64::new(norm, 0.0) } else { v };
                (origin + lambda.re * 1e-3, -2.0 * lambda.im, v)
            })
            .collect();
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out
    }
}

fn transmit(m: &DMatrix<Complex64>, v: &DVector<Complex64>, omega_ghz: f64) -> Result<Complex64> {
    if m.nrows() == 2 {
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        if det == Complex64::new(0.0, 0.0) {
            return Err(Error::Pole { omega_ghz });
        }
        let x0 = (m[(1, 1)] * v[0] - m[(0, 1)] * v[1]) / det;
        let x1 = (m[(0, 0)] * v[1] - m[(1, 0)] * v[0]) / det;
        return Ok(Complex64::new(1.0, 0.0) - Complex64::i() * (v[0] * x0 + v[1] * x1));
    }
    let x = m.clone().lu().solve(v).ok_or(Error::Pole { omega_ghz })?;
    if x.iter().any(|z| !z.is_finite()) {
        return Err(Error::Pole { omega_ghz });
    }
    Ok(Complex64::new(1.0, 0.0) - Complex64::i() * v.dot(&x))
}

/// Transmission of one magnon mode coupled to one spin mode.
pub fn s21(omega_ghz: f64, magnon_freq_ghz: f64, spin_freq_ghz: f64, cp: &CouplingParams) -> Result<Complex64> {
    cp.validate()?;
    ModeSet::pair(magnon_freq_ghz, spin_freq_ghz, cp).s21(omega_ghz)
}

/// One hybrid normal mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolaritonBranch {
    pub frequency_ghz: f64,
    pub linewidth_mhz: f64,
    /// `atan(G / |Δ − ω_M|)`, shared by both branches.
    pub mixing_angle_xi: f64,
    /// Squared magnon amplitude: `cos²(ξ/2)` on the magnon-like branch, `sin²(ξ/2)` on the other.
    pub magnon_fraction: f64,
    /// Share of the line coupling; the two branches sum to 1.
    pub brightness: f64,
}

/// Lower and upper polariton of a magnon–spin pair.
pub fn polariton_branches(magnon_freq_ghz: f64, spin_freq_ghz: f64, cp: &CouplingParams) -> Result<[PolaritonBranch; 2]> {
    cp.validate()?;
    let set = ModeSet::pair(magnon_freq_ghz, spin_freq_ghz, cp);
    let modes = set.normal_modes();
    let detuning = ghz_to_mhz(spin_freq_ghz - magnon_freq_ghz).abs();
    let xi = cp.g.atan2(detuning);
    let (major, minor) = ((xi / 2.0).cos().powi(2), (xi / 2.0).sin().powi(2));
    // Without coupling the branches are the bare modes; with it the lower
    // branch is magnon-like exactly when the magnon is the lower bare mode.
    let lower_is_magnon = magnon_freq_ghz <= spin_freq_ghz;
    let (ke, ge) = (cp.kappa_e.sqrt(), cp.gamma_e.sqrt());
    let raw: Vec<f64> = modes
        .iter()
        .map(|(_, _, v)| (v[0] * ke + v[1] * ge).norm_sqr())
        .collect();
    let total: f64 = raw.iter().sum();
    let branch = |idx: usize| {
        let magnon_like = (idx == 0) == lower_is_magnon;
        PolaritonBranch {
            frequency_ghz: modes[idx].0,
            linewidth_mhz: modes[idx].1,
            mixing_angle_xi: xi,
            magnon_fraction: if magnon_like { major } else { minor },
            brightness: if total > 0.0 { raw[idx] / total } else { 0.0 },
        }
    };
    Ok([branch(0), branch(1)])
}

/// Spin-local frame `(x, y, z)` for an easy axis at `phi` from the field,
/// tilted within the plane spanned by the field and the in-plane normal to it.
pub fn spin_frame(field: &FieldConfig, phi_deg: f64) -> (afm_modes::V3, afm_modes::V3, afm_modes::V3) {
    let u_b = field.direction();
    let u_perp = afm_modes::V3::new(0.0, 0.0, 1.0).cross(&u_b);
    let p = phi_deg.to_radians();
    let z = u_b * p.cos() + u_perp * p.sin();
    let x = u_b * p.sin() - u_perp * p.cos();
    let y = z.cross(&x);
    (x, y, z)
}

/// Amplitude of the circular drive component that co-rotates with the spin
/// transition: 1 for a matched circular field, `1/√2` for a linear transverse
/// one, 0 for the counter-rotating circular field.
pub fn chiral_projection(mode_field: &C3, spins: &SpinEnsembleParams, field: &FieldConfig) -> Result<f64> {
    let norm = mode_field.norm();
    if !(norm > 1e-300) {
        return Err(Error::DegenerateMode("zero mode field".into()));
    }
    let v = mode_field / Complex64::new(norm, 0.0);
    let (x, y, _) = spin_frame(field, spins.phi_deg);
    let c = |u: &afm_modes::V3| v.x * u.x + v.y * u.y + v.z * u.z;
    let (vx, vy) = (c(&x), c(&y));
    // For an easy axis pointing against the field the ground state sits at
    // the opposite end of the ladder, so the transition turns the other way.
    let sense = if spins.phi_deg.to_radians().cos() >= 0.0 { -1.0 } else { 1.0 };
    Ok((vx + Complex64::i() * sense * vy).norm() / 2f64.sqrt())
}

/// Geometry whose chiral projection defines unit coupling scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiralReference {
    pub b0_mt: f64,
    pub theta_deg: f64,
    pub phi_deg: f64,
    #[serde(default = "default_branch")]
    pub branch: Branch,
}

fn default_branch() -> Branch {
    Branch::Acoustic
}

impl Default for ChiralReference {
    /// Acoustic mode with the field along the medium axis near its crossing.
    fn default() -> Self {
        Self {
            b0_mt: 250.0,
            theta_deg: 90.0,
            phi_deg: 54.0,
            branch: Branch::Acoustic,
        }
    }
}

impl ChiralReference {
    pub fn projection(&self, mag: &MagnetParams, spins: &SpinEnsembleParams) -> Result<f64> {
        let field = FieldConfig::from_mt(self.b0_mt, self.theta_deg);
        let modes = afm_modes::modes_at(mag, &field)?;
        let mode = find_branch(&modes, self.branch).ok_or_else(|| Error::DegenerateMode("reference branch missing".into()))?;
        let spins = SpinEnsembleParams {
            phi_deg: self.phi_deg,
            ..spins.clone()
        };
        chiral_projection(&mode_rf_field(mode)?, &spins, &field)
    }
}

/// Chiral projection relative to a reference geometry.
pub fn chiral_factor(
    mode_field: &C3,
    spins: &SpinEnsembleParams,
    field: &FieldConfig,
    reference: &ChiralReference,
    mag: &MagnetParams,
) -> Result<f64> {
    let r = reference.projection(mag, spins)?;
    if !(r > 0.0) {
        return Err(Error::DegenerateMode("reference geometry has zero chiral projection".into()));
    }
    Ok(chiral_projection(mode_field, spins, field)? / r)
}

/// Uniform field sweep at fixed in-plane angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSweep {
    #[serde(rename = "start_mT")]
    pub start_mt: f64,
    #[serde(rename = "stop_mT")]
    pub stop_mt: f64,
    pub steps: usize,
    #[serde(default)]
    pub theta_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqAxis {
    #[serde(rename = "start_GHz")]
    pub start_ghz: f64,
    #[serde(rename = "stop_GHz")]
    pub stop_ghz: f64,
    pub steps: usize,
}

fn linspace(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![start];
    }
    let step = (stop - start) / (steps - 1) as f64;
    (0..steps)
        .map(|i| if i + 1 == steps { stop } else { start + step * i as f64 })
        .collect()
}

fn check_axis(path: &str, start: f64, stop: f64, steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(Error::validation(format!("{path}.steps"), format!("need at least 2 points, got {steps}")));
    }
    if !(start.is_finite() && stop.is_finite()) || start >= stop {
        return Err(Error::validation(path, format!("need finite start < stop, got {start}..{stop}")));
    }
    Ok(())
}

impl FieldSweep {
    pub fn validate(&self) -> Result<()> {
        check_axis("field_sweep", self.start_mt, self.stop_mt, self.steps)?;
        if self.start_mt < 0.0 {
            return Err(Error::validation("field_sweep.start_mT", "field must be >= 0"));
        }
        FieldConfig::from_mt(self.start_mt, self.theta_deg)
            .validate()
            .map_err(|e| e.under("field_sweep"))
    }

    pub fn axis(&self) -> Vec<f64> {
        linspace(self.start_mt, self.stop_mt, self.steps)
    }
}

impl FreqAxis {
    pub fn validate(&self) -> Result<()> {
        check_axis("f_axis", self.start_ghz, self.stop_ghz, self.steps)
    }

    pub fn axis(&self) -> Vec<f64> {
        linspace(self.start_ghz, self.stop_ghz, self.steps)
    }
}

fn check_monotone(name: &str, axis: &[f64]) -> Result<()> {
    if axis.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation(name, "axis must be strictly increasing"));
    }
    Ok(())
}

/// Complex transmission on a (field, frequency) grid, row-major by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMap {
    #[serde(rename = "b0_axis_mT")]
    pub b0_axis_mt: Vec<f64>,
    #[serde(rename = "f_axis_GHz")]
    pub f_axis_ghz: Vec<f64>,
    pub s21: Vec<Complex64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Real-valued map on the same grid (magnitudes or processed spectra).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMap {
    #[serde(rename = "b0_axis_mT")]
    pub b0_axis_mt: Vec<f64>,
    #[serde(rename = "f_axis_GHz")]
    pub f_axis_ghz: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl SpectrumMap {
    pub fn validate(&self) -> Result<()> {
        check_monotone("b0_axis_mT", &self.b0_axis_mt)?;
        check_monotone("f_axis_GHz", &self.f_axis_ghz)?;
        if self.s21.len() != self.b0_axis_mt.len() * self.f_axis_ghz.len() {
            return Err(Error::validation("s21", "matrix size does not match the axes"));
        }
        Ok(())
    }

    pub fn row(&self, field_idx: usize) -> &[Complex64] {
        let nf = self.f_axis_ghz.len();
        &self.s21[field_idx * nf..(field_idx + 1) * nf]
    }

    pub fn magnitude(&self) -> RealMap {
        self.map_values(|z| z.norm())
    }

    pub fn phase(&self) -> RealMap {
        self.map_values(|z| z.arg())
    }

    fn map_values(&self, f: impl Fn(&Complex64) -> f64) -> RealMap {
        RealMap {
            b0_axis_mt: self.b0_axis_mt.clone(),
            f_axis_ghz: self.f_axis_ghz.clone(),
            values: self.s21.iter().map(f).collect(),
            metadata: self.metadata.clone(),
        }
    }
}

impl RealMap {
    pub fn validate(&self) -> Result<()> {
        check_monotone("b0_axis_mT", &self.b0_axis_mt)?;
        check_monotone("f_axis_GHz", &self.f_axis_ghz)?;
        if self.values.len() != self.b0_axis_mt.len() * self.f_axis_ghz.len() {
            return Err(Error::validation("values", "matrix size does not match the axes"));
        }
        Ok(())
    }

    pub fn row(&self, field_idx: usize) -> &[f64] {
        let nf = self.f_axis_ghz.len();
        &self.values[field_idx * nf..(field_idx + 1) * nf]
    }

    pub fn get(&self, field_idx: usize, freq_idx: usize) -> f64 {
        self.values[field_idx * self.f_axis_ghz.len() + freq_idx]
    }
}

/// Spin-ensemble drive applied during a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    pub saturation: saturation::SaturationParams,
    pub power_mw: f64,
}

/// Model choices for [`spectrum_map`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapOptions {
    /// Magnon branch used in single-mode mode (default acoustic).
    pub branch: Option<Branch>,
    /// Scale couplings by the chiral factor relative to this geometry.
    pub chiral: Option<ChiralReference>,
    /// Replace the single magnon mode by the stacking-chain ensemble.
    pub stacking: Option<StackingConfig>,
    pub drive: Option<Drive>,
    pub seed: u64,
}

/// Seed of the `index`-th field point, independent of evaluation order.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The line-coupled modes at one field point.
pub fn modes_at_field(
    mag: &MagnetParams,
    spins: &[SpinEnsembleParams],
    field: &FieldConfig,
    cp: &CouplingParams,
    opts: &MapOptions,
    point_index: usize,
) -> Result<ModeSet> {
    let eq_opts = EquilibriumOptions {
        seed: point_seed(opts.seed, point_index),
        ..Default::default()
    };
    let cp = match &opts.drive {
        Some(d) => saturation::saturated_coupling(cp, saturation::equilibrium_fraction(d.power_mw, &d.saturation)?)?,
        None => *cp,
    };
    // Magnon modes: (frequency, line-coupling share, rf field direction).
    let magnons: Vec<(f64, f64, Option<C3>)> = match &opts.stacking {
        Some(st) => afm_modes::stacking_spectrum_with(mag, field, st, &eq_opts)?
            .into_iter()
            .map(|m| {
                let n = m.net_orbit.norm();
                let dir = (n > 0.0).then(|| m.net_orbit / Complex64::new(n, 0.0));
                (m.frequency_ghz, m.weight, dir)
            })
            .collect(),
        None => {
            let eq = afm_modes::equilibrium_with(mag, field, &eq_opts)?;
            let modes = afm_modes::linearized_modes(mag, field, &eq)?;
            let mode = find_branch(&modes, opts.branch.unwrap_or(Branch::Acoustic))
                .ok_or_else(|| Error::DegenerateMode("requested branch missing".into()))?;
            let dir = if opts.chiral.is_some() { Some(mode_rf_field(mode)?) } else { None };
            vec![(mode.frequency_ghz, 1.0, dir)]
        }
    };
    let total_spins: f64 = spins.iter().map(|s| s.n_spins).sum();
    let mut set = ModeSet {
        crosstalk: cp.include_line_crosstalk,
        ..Default::default()
    };
    for &(f, w, _) in &magnons {
        set.modes.push(Oscillator {
            freq_ghz: f,
            ext_mhz: cp.kappa_e * w,
            int_mhz: cp.kappa_i,
        });
    }
    let b0_mt = field.b0_t * 1e3;
    for spin in spins {
        let levels = spin_levels::energy_levels(spin, b0_mt)?;
        let share = spin.n_spins / total_spins * levels.qubit_polarization(spin.temperature_k);
        let ext = cp.gamma_e * share;
        let idx = set.modes.len();
        set.modes.push(Oscillator {
            freq_ghz: spin_levels::qubit_gap(spin, b0_mt)?,
            ext_mhz: ext,
            int_mhz: cp.gamma() - ext,
        });
        let reference = match &opts.chiral {
            Some(r) => Some(r.projection(mag, spin)?),
            None => None,
        };
        for (k, &(_, w, dir)) in magnons.iter().enumerate() {
            let chiral = match (reference, dir) {
                (Some(r), Some(d)) => chiral_projection(&d, spin, field)? / r,
                (Some(_), None) => 0.0,
                (None, _) => 1.0,
            };
            let g = cp.g * (w * share).sqrt() * chiral;
            if g != 0.0 {
                set.couplings.push((k, idx, g));
            }
        }
    }
    Ok(set)
}

/// Simulated transmission map over a field sweep.
pub fn spectrum_map(
    mag: &MagnetParams,
    spins: &[SpinEnsembleParams],
    sweep: &FieldSweep,
    f_axis: &FreqAxis,
    cp: &CouplingParams,
    opts: &MapOptions,
) -> Result<SpectrumMap> {
    mag.validate().map_err(|e| e.under("magnet"))?;
    if spins.is_empty() {
        return Err(Error::validation("spins", "need at least one spin ensemble"));
    }
    for (i, s) in spins.iter().enumerate() {
        s.validate().map_err(|e| e.under(&format!("spins[{i}]")))?;
    }
    sweep.validate()?;
    f_axis.validate()?;
    cp.validate().map_err(|e| e.under("coupling"))?;
    let fields = sweep.axis();
    let freqs = f_axis.axis();
    let rows: Vec<Vec<Complex64>> = fields
        .par_iter()
        .enumerate()
        .map(|(i, &b)| {
            let field = FieldConfig::from_mt(b, sweep.theta_deg);
            modes_at_field(mag, spins, &field, cp, opts, i)?.s21_trace(&freqs)
        })
        .collect::<Result<_>>()?;
    let metadata = serde_json::json!({
        "magnet": mag,
        "spins": spins,
        "field_sweep": sweep,
        "f_axis": f_axis,
        "coupling": cp,
        "branch": opts.branch.unwrap_or(Branch::Acoustic),
        "chiral_reference": opts.chiral,
        "stacking": opts.stacking,
        "drive": opts.drive,
        "seed": opts.seed,
    });
    Ok(SpectrumMap {
        b0_axis_mt: fields,
        f_axis_ghz: freqs,
        s21: rows.into_iter().flatten().collect(),
        metadata,
    })
}
