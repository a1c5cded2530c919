//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use magnonqed::afm_modes::MagnetParams;
use magnonqed::hybrid_response::{CouplingParams, ModeSet, RealMap};
use magnonqed::spin_levels::SpinEnsembleParams;
use magnonqed::units::MU_B_GHZ_PER_T;

/// Cyclic Jacobi diagonalization of a real symmetric matrix (row-major),
/// eigenvalues ascending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Spin Hamiltonian built directly from ladder-operator matrix elements in
/// the |m⟩ basis (m = −S..S); real because the field lies in the xz-plane.
pub fn spin_hamiltonian(p: &SpinEnsembleParams, b0_mt: f64) -> Vec<Vec<f64>> {
    let n = (2.0 * p.s).round() as usize + 1;
    let m = |k: usize| -p.s + k as f64;
    // ⟨m+1|S+|m⟩
    let up = |k: usize| (p.s * (p.s + 1.0) - m(k) * (m(k) + 1.0)).sqrt();
    let z = p.g * MU_B_GHZ_PER_T * b0_mt * 1e-3;
    let (sp, cp) = p.phi_deg.to_radians().sin_cos();
    let mut h = vec![vec![0.0; n]; n];
    for k in 0..n {
        h[k][k] = p.d_ghz * m(k) * m(k) + z * cp * m(k);
        if k + 1 < n {
            // Sx = (S+ + S−)/2
            let x = 0.5 * up(k) * z * sp;
            h[k + 1][k] += x;
            h[k][k + 1] += x;
        }
        if k + 2 < n {
            // Sx² − Sy² = (S+² + S−²)/2
            let e = 0.5 * p.e_ghz * up(k) * up(k + 1);
            h[k + 2][k] += e;
            h[k][k + 2] += e;
        }
    }
    h
}

/// Closed-form two-sublattice resonances (GHz) in the collinear phases.
pub mod afmr {
    use super::MagnetParams;
    use magnonqed::units::gyro_ghz_per_t;

    pub fn zero_field(m: &MagnetParams) -> [f64; 2] {
        let g = gyro_ghz_per_t(m.g);
        sorted([
            g * ((2.0 * m.h_e + m.h_a) * m.h_c).sqrt(),
            g * (m.h_a * (2.0 * m.h_e + m.h_c)).sqrt(),
        ])
    }

    /// Néel order along the easy axis with the field along it.
    pub fn easy_axis(m: &MagnetParams, b: f64) -> [f64; 2] {
        let g = gyro_ghz_per_t(m.g);
        let (he, ha, hc) = (m.h_e, m.h_a, m.h_c);
        let mean = b * b + he * (ha + hc) + ha * hc;
        let root = (b * b * (ha + hc) * (4.0 * he + ha + hc) + he * he * (ha - hc).powi(2)).sqrt();
        sorted([g * (mean - root).sqrt(), g * (mean + root).sqrt()])
    }

    /// Both moments along the medium axis.
    pub fn saturated_a(m: &MagnetParams, b: f64) -> [f64; 2] {
        let g = gyro_ghz_per_t(m.g);
        let x = b - m.h_a;
        let y = x - 2.0 * m.h_e;
        sorted([g * (x * (x + m.h_c)).sqrt(), g * (y * (y + m.h_c)).sqrt()])
    }

    /// Both moments along the easy axis.
    pub fn saturated_b(m: &MagnetParams, b: f64) -> [f64; 2] {
        let g = gyro_ghz_per_t(m.g);
        let y = b - 2.0 * m.h_e;
        sorted([
            g * ((b + m.h_a) * (b + m.h_c)).sqrt(),
            g * ((y + m.h_a) * (y + m.h_c)).sqrt(),
        ])
    }

    fn sorted(mut f: [f64; 2]) -> [f64; 2] {
        f.sort_by(f64::total_cmp);
        f
    }
}

/// Magnon and spin lines crossing at `(200 mT, 25 GHz)` with slopes of 2 and
/// 20 MHz/mT, window ±4G in detuning, frequency step resolving the narrower line.
pub fn linear_crossing_map(cp: &CouplingParams, max_points: usize) -> (RealMap, (f64, f64)) {
    crossing_map_sized(cp, cp.g, max_points)
}

/// As [`linear_crossing_map`] with the window sized for coupling `g`.
pub fn crossing_map_sized(cp: &CouplingParams, g: f64, max_points: usize) -> (RealMap, (f64, f64)) {
    let half_b = 4.0 * g / 18.0;
    let nb = 61;
    let b: Vec<f64> = (0..nb)
        .map(|i| 200.0 - half_b + 2.0 * half_b * i as f64 / (nb - 1) as f64)
        .collect();
    let span = (4.0 * g + 4.0 * cp.kappa().max(cp.gamma())) / 1e3 + 0.002 * half_b;
    let step = ((cp.kappa().min(cp.gamma()) / 3.0).min(g / 20.0) / 1e3).max(2.0 * span / max_points as f64);
    let nf = (2.0 * span / step) as usize + 1;
    let f: Vec<f64> = (0..nf).map(|k| 25.0 - span + step * k as f64).collect();
    let mut values = Vec::with_capacity(nb * nf);
    for &bb in &b {
        let s = ModeSet::pair(25.0 + 0.002 * (bb - 200.0), 25.0 + 0.020 * (bb - 200.0), cp)
            .s21_trace(&f)
            .unwrap();
        values.extend(s.iter().map(|z| z.norm()));
    }
    (
        RealMap {
            b0_axis_mt: b,
            f_axis_ghz: f,
            values,
            metadata: serde_json::Value::Null,
        },
        (200.0 - half_b, 200.0 + half_b),
    )
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
