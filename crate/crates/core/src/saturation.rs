//! Drive-power saturation of the spin ensemble.
//!
//! A drive of power `P` (mW) produces `Λ² = α P` (MHz²). The steady-state
//! fraction of spins still able to absorb is `n = 1 / (1 + 4Λ²/(γ_i γ_∥))`,
//! which sets both the dip visibility and the renormalized coupling
//! `G_eff = G √n`. The magnon stays linear at every power.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_response::CouplingParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// Drive conversion, MHz² per mW.
    pub alpha: f64,
    /// Longitudinal spin relaxation rate, MHz.
    pub gamma_par: f64,
    pub gamma_e: f64,
    pub gamma_i: f64,
}

impl SaturationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma_par", self.gamma_par),
            ("gamma_e", self.gamma_e),
            ("gamma_i", self.gamma_i),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_e + self.gamma_i
    }
}

fn check_power(p_in_mw: f64) -> Result<()> {
    if !(p_in_mw.is_finite() && p_in_mw >= 0.0) && p_in_mw != f64::INFINITY {
        return Err(Error::validation("p_in", format!("power must be >= 0 mW, got {p_in_mw}")));
    }
    Ok(())
}

/// Fraction `N_eq/N` of spins left unsaturated at drive power `p_in_mw`.
pub fn equilibrium_fraction(p_in_mw: f64, sp: &SaturationParams) -> Result<f64> {
    sp.validate()?;
    check_power(p_in_mw)?;
    if sp.gamma() == 0.0 {
        return Err(Error::UndefinedVisibility);
    }
    if p_in_mw == 0.0 {
        return Ok(1.0);
    }
    let relax = sp.gamma_i * sp.gamma_par;
    if relax == 0.0 {
        // Without relaxation any finite drive saturates completely.
        return Ok(if sp.alpha == 0.0 { 1.0 } else { 0.0 });
    }
    let drive = 4.0 * sp.alpha * p_in_mw;
    if drive.is_infinite() {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + drive / relax))
}

/// Linear-scale dip visibility `Υ = (γ_e/γ) · N_eq/N`.
pub fn visibility(p_in_mw: f64, sp: &SaturationParams) -> Result<f64> {
    let n = equilibrium_fraction(p_in_mw, sp)?;
    Ok(sp.gamma_e / sp.gamma() * n)
}

pub fn effective_coupling(g_mhz: f64, n_fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&n_fraction) {
        return Err(Error::validation("n_fraction", format!("must lie in [0, 1], got {n_fraction}")));
    }
    if !(g_mhz.is_finite() && g_mhz >= 0.0) {
        return Err(Error::validation("G", format!("must be >= 0, got {g_mhz}")));
    }
    Ok(g_mhz * n_fraction.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "p_mw")]
pub enum Threshold {
    /// Strong coupling is lost above this power, mW.
    Finite(f64),
    /// Loss-free limit: strongly coupled at every finite power.
    AlwaysStrong,
}

impl Threshold {
    pub fn milliwatts(&self) -> f64 {
        match *self {
            Threshold::Finite(p) => p,
            Threshold::AlwaysStrong => f64::INFINITY,
        }
    }
}

fn strong_fraction(g_mhz: f64, kappa: f64, gamma: f64) -> Result<f64> {
    let limit = kappa.max(gamma);
    if !(g_mhz > limit) {
        return Err(Error::NeverStrong { g_mhz, limit_mhz: limit });
    }
    Ok((limit / g_mhz).powi(2))
}

/// Power at which `G_eff` drops to `max(κ, γ)`.
pub fn threshold_power(g_mhz: f64, kappa: f64, gamma: f64, sp: &SaturationParams) -> Result<Threshold> {
    sp.validate()?;
    let n_star = strong_fraction(g_mhz, kappa, gamma)?;
    if n_star == 0.0 || sp.alpha == 0.0 {
        return Ok(Threshold::AlwaysStrong);
    }
    let relax = sp.gamma_i * sp.gamma_par;
    Ok(Threshold::Finite((1.0 / n_star - 1.0) * relax / (4.0 * sp.alpha)))
}

/// Drive conversion `α` that puts the strong-coupling threshold at `p_threshold_mw`.
pub fn calibrate_alpha(g_mhz: f64, kappa: f64, gamma: f64, p_threshold_mw: f64, gamma_par: f64, gamma_i: f64) -> Result<f64> {
    if !(p_threshold_mw.is_finite() && p_threshold_mw > 0.0) {
        return Err(Error::validation("p_threshold", "must be a positive finite power"));
    }
    let n_star = strong_fraction(g_mhz, kappa, gamma)?;
    Ok((1.0 / n_star - 1.0) * gamma_i * gamma_par / (4.0 * p_threshold_mw))
}

/// Least-squares estimate of `α` from measured `(P mW, Υ)` pairs, with the
/// rates in `sp` held fixed (its `alpha` is ignored).
pub fn fit_alpha(powers_mw: &[f64], visibilities: &[f64], sp: &SaturationParams) -> Result<f64> {
    if powers_mw.len() != visibilities.len() || powers_mw.len() < 2 {
        return Err(Error::validation("data", "need at least two (power, visibility) pairs of equal length"));
    }
    let relax = sp.gamma_i * sp.gamma_par;
    if relax <= 0.0 {
        return Err(Error::validation("gamma_par", "saturation fit needs gamma_i * gamma_par > 0"));
    }
    let v0 = sp.gamma_e / sp.gamma();
    let model = |alpha: f64, p: f64| v0 / (1.0 + 4.0 * alpha * p / relax);
    let cost = |log_alpha: f64| -> f64 {
        let alpha = log_alpha.exp();
        powers_mw
            .iter()
            .zip(visibilities)
            .map(|(&p, &v)| (model(alpha, p) - v).powi(2))
            .sum()
    };
    // Initial guess from the linearized form v0/Υ − 1 = (4α/relax) P.
    let (mut num, mut den) = (0.0, 0.0);
    for (&p, &v) in powers_mw.iter().zip(visibilities) {
        if v > 0.0 {
            num += (v0 / v - 1.0) * p;
            den += p * p;
        }
    }
    let guess = if num > 0.0 && den > 0.0 { num / den * relax / 4.0 } else { 1.0 };
    // Golden-section search on log α around the guess.
    let (mut lo, mut hi) = (guess.ln() - 5.0, guess.ln() + 5.0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = cost(x2);
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Coupling parameters of a partially saturated ensemble.
///
/// Saturated spins stop coupling coherently (`G → G√n`, `γ_e → n γ_e`) but
/// the transition keeps its total linewidth, so the lost external share is
/// booked as intrinsic loss.
pub fn saturated_coupling(cp: &CouplingParams, n_fraction: f64) -> Result<CouplingParams> {
    let g = effective_coupling(cp.g, n_fraction)?;
    Ok(CouplingParams {
        g,
        gamma_e: cp.gamma_e * n_fraction,
        gamma_i: cp.gamma_i + cp.gamma_e * (1.0 - n_fraction),
        ..*cp
    })
}
