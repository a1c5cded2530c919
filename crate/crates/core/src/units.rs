//! Unit conventions shared across modules.
//!
//! Energies are frequencies (E/h) in GHz, rates in MHz, fields in mT at the
//! public surface and tesla inside the magnet model.

/// Bohr magneton over Planck's constant, GHz per tesla.
pub const MU_B_GHZ_PER_T: f64 = 13.996_244_9;

#[inline]
pub fn mt_to_t(b_mt: f64) -> f64 {
    b_mt * 1e-3
}

#[inline]
pub fn t_to_mt(b_t: f64) -> f64 {
    b_t * 1e3
}

#[inline]
pub fn ghz_to_mhz(f: f64) -> f64 {
    f * 1e3
}

#[inline]
pub fn mhz_to_ghz(f: f64) -> f64 {
    f / 1e3
}

/// Power in milliwatts from dBm.
#[inline]
pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

#[inline]
pub fn mw_to_dbm(p_mw: f64) -> f64 {
    10.0 * p_mw.log10()
}

/// Gyromagnetic ratio over 2π for Landé factor `g`, GHz per tesla.
#[inline]
pub fn gyro_ghz_per_t(g: f64) -> f64 {
    g * MU_B_GHZ_PER_T
}
