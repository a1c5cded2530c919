//! Spectral post-processing and Lorentzian dip fitting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_response::{RealMap, SpectrumMap};
use crate::units::mhz_to_ghz;

/// Levenberg–Marquardt iteration cap.
pub const MAX_ITERATIONS: usize = 200;
/// Convergence threshold on the scaled gradient (cosine between residual and Jacobian columns).
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
/// Dip detection threshold in units of the trace's median absolute deviation.
pub const PROMINENCE_MADS: f64 = 3.0;

const MIN_POINTS: usize = 8;

/// One transmission trace at fixed field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    #[serde(rename = "f_axis_GHz")]
    pub f_axis_ghz: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn new(f_axis_ghz: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let t = Self { f_axis_ghz, values };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_axis_ghz.len() != self.values.len() {
            return Err(Error::validation("trace", "frequency axis and values differ in length"));
        }
        if self.f_axis_ghz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("trace.f_axis_GHz", "must be strictly increasing"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("trace.values", "contains non-finite values"));
        }
        Ok(())
    }

    fn windowed(&self, window: Option<(f64, f64)>) -> Result<Trace> {
        self.validate()?;
        let t = match window {
            None => self.clone(),
            Some((a, b)) => {
                let (lo, hi) = (a.min(b), a.max(b));
                let (f, v) = self
                    .f_axis_ghz
                    .iter()
                    .zip(&self.values)
                    .filter(|(f, _)| (lo..=hi).contains(*f))
                    .map(|(f, v)| (*f, *v))
                    .unzip();
                Trace { f_axis_ghz: f, values: v }
            }
        };
        if t.values.len() < MIN_POINTS {
            return Err(Error::validation(
                "window",
                format!("need at least {MIN_POINTS} points in the fit window, got {}", t.values.len()),
            ));
        }
        Ok(t)
    }

    fn min_step(&self) -> f64 {
        self.f_axis_ghz.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Lorentzian dip `baseline − depth·(w/2)²/((f − f_m)² + (w/2)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    #[serde(rename = "f_m_GHz")]
    pub f_m_ghz: f64,
    /// Full width at half depth, MHz.
    #[serde(rename = "w_m_MHz")]
    pub w_m_mhz: f64,
    pub depth: f64,
    pub baseline: f64,
    /// Jacobian covariance of `(f_m [GHz], w_m [MHz], depth, baseline)`,
    /// scaled by the residual variance.
    pub covariance: [[f64; 4]; 4],
    pub residual_norm: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn eval(&self, f_ghz: f64) -> f64 {
        lorentzian(&[self.f_m_ghz, self.w_m_mhz, self.depth, self.baseline], f_ghz, None)
    }

    /// One-sigma uncertainties of `(f_m, w_m)` in (GHz, MHz).
    pub fn std_errors(&self) -> (f64, f64) {
        (self.covariance[0][0].max(0.0).sqrt(), self.covariance[1][1].max(0.0).sqrt())
    }
}

/// Dip parameters `[f_m GHz, w MHz, depth, baseline]`; writes `∂/∂p` into
/// `jac[..4]` when given.
fn lorentzian(p: &[f64], f: f64, jac: Option<&mut [f64]>) -> f64 {
    let (fm, w, d, b) = (p[0], p[1], p[2], p[3]);
    let half = mhz_to_ghz(w) / 2.0;
    let h = half * half;
    let x = f - fm;
    let den = x * x + h;
    let l = h / den;
    if let Some(j) = jac {
        j[0] = -d * 2.0 * h * x / (den * den);
        j[1] = -d * (x * x) / (den * den) * mhz_to_ghz(mhz_to_ghz(w)) / 2.0;
        j[2] = -l;
        j[3] = 1.0;
    }
    b - d * l
}

/// Two dips on a shared baseline: `[f1, w1, d1, f2, w2, d2, baseline]`.
fn double_lorentzian(p: &[f64], f: f64, jac: Option<&mut [f64]>) -> f64 {
    let first = [p[0], p[1], p[2], 0.0];
    let second = [p[3], p[4], p[5], 0.0];
    match jac {
        Some(j) => {
            let mut j1 = [0.0; 4];
            let mut j2 = [0.0; 4];
            let v = lorentzian(&first, f, Some(&mut j1)) + lorentzian(&second, f, Some(&mut j2)) + p[6];
            j[..3].copy_from_slice(&j1[..3]);
            j[3..6].copy_from_slice(&j2[..3]);
            j[6] = 1.0;
            v
        }
        None => lorentzian(&first, f, None) + lorentzian(&second, f, None) + p[6],
    }
}

type Model = fn(&[f64], f64, Option<&mut [f64]>) -> f64;

struct LmOutcome {
    params: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
    jtj: DMatrix<f64>,
}

fn residuals(model: Model, p: &[f64], x: &[f64], y: &[f64], jac: Option<&mut DMatrix<f64>>) -> DVector<f64> {
    let mut r = DVector::zeros(x.len());
    match jac {
        Some(j) => {
            let mut row = vec![0.0; p.len()];
            for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                r[i] = model(p, xi, Some(&mut row)) - yi;
                for (k, v) in row.iter().enumerate() {
                    j[(i, k)] = *v;
                }
            }
        }
        None => {
            for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
                r[i] = model(p, xi, None) - yi;
            }
        }
    }
    r
}

/// Damped Gauss–Newton with Marquardt scaling and Nielsen's damping update;
/// the cost never increases between accepted steps.
///
/// `problem(p, jac)` returns the residual vector and fills the Jacobian when asked.
fn levenberg_marquardt(problem: &dyn Fn(&[f64], Option<&mut DMatrix<f64>>) -> DVector<f64>, p0: Vec<f64>) -> LmOutcome {
    let np = p0.len();
    let mut p = p0;
    let mut r = problem(&p, None);
    let mut jac = DMatrix::zeros(r.len(), np);
    r = problem(&p, Some(&mut jac));
    let mut cost = 0.5 * r.norm_squared();
    let mut a = jac.transpose() * &jac;
    let mut g = jac.transpose() * &r;
    let mut mu = 1e-3;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let scaled_grad = (0..np)
            .map(|k| g[k].abs() / (a[(k, k)] * 2.0 * cost).sqrt().max(1e-300))
            .fold(0.0, f64::max);
        if cost == 0.0 || scaled_grad <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let diag: Vec<f64> = (0..np).map(|k| a[(k, k)].max(1e-30)).collect();
        let mut damped = a.clone();
        for k in 0..np {
            damped[(k, k)] += mu * diag[k];
        }
        let Some(chol) = damped.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&g));
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step.norm() <= 1e-14 * (p_norm + 1e-14) {
            converged = true;
            break;
        }
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let r_trial = problem(&trial, None);
        let cost_trial = 0.5 * r_trial.norm_squared();
        let scaled_step = DVector::from_iterator(np, (0..np).map(|k| mu * diag[k] * step[k]));
        let predicted = 0.5 * step.dot(&(scaled_step - &g));
        let rho = if predicted > 0.0 { (cost - cost_trial) / predicted } else { -1.0 };
        if rho > 0.0 && cost_trial.is_finite() {
            let rel = (cost - cost_trial) / cost;
            p = trial;
            r = problem(&p, Some(&mut jac));
            cost = 0.5 * r.norm_squared();
            a = jac.transpose() * &jac;
            g = jac.transpose() * &r;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            if rel < 1e-15 {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e30 {
                // No descent direction left at machine precision.
                converged = true;
                break;
            }
        }
    }
    LmOutcome {
        params: p,
        cost,
        iterations,
        converged,
        jtj: a,
    }
}

fn fit_curve(model: Model, x: &[f64], y: &[f64], p0: Vec<f64>) -> LmOutcome {
    levenberg_marquardt(&|p, jac| residuals(model, p, x, y, jac), p0)
}

fn covariance(out: &LmOutcome, n_points: usize) -> DMatrix<f64> {
    let np = out.params.len();
    let dof = n_points.saturating_sub(np).max(1) as f64;
    let sigma2 = 2.0 * out.cost / dof;
    let inv = out
        .jtj
        .clone()
        .pseudo_inverse(1e-300)
        .unwrap_or_else(|_| DMatrix::from_element(np, np, f64::NAN));
    inv * sigma2
}

fn sub_covariance(cov: &DMatrix<f64>, idx: [usize; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[r][c] = cov[(i, j)];
        }
    }
    out
}

/// Candidate dip: trace index and topographic prominence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dip {
    pub index: usize,
    pub prominence: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median absolute deviation of `values`.
pub fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    median(&mut dev)
}

fn smooth(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 3).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Prominence threshold used by the dip detector.
pub fn prominence_threshold(values: &[f64]) -> f64 {
    let range = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let scale = values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    (PROMINENCE_MADS * mad(values)).max(1e-9 * scale).max(1e-6 * range).max(1e-300)
}

/// Outcome of a dip search.
#[derive(Debug, Clone, PartialEq)]
pub struct DipScan {
    /// Dips above threshold, deepest first.
    pub dips: Vec<Dip>,
    /// Largest prominence of any interior minimum.
    pub best_prominence: f64,
    pub threshold: f64,
}

impl DipScan {
    fn none_found(&self) -> Error {
        Error::NoDipFound {
            prominence: self.best_prominence,
            threshold: self.threshold,
        }
    }
}

/// Interior local minima with prominence above the threshold, deepest first.
pub fn find_dips(values: &[f64]) -> DipScan {
    let threshold = prominence_threshold(values);
    let s = smooth(values);
    let n = s.len();
    let mut dips = Vec::new();
    let mut best = 0.0f64;
    let mut i = 1;
    while i + 1 < n {
        if s[i] < s[i - 1] {
            // Walk across a flat bottom.
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] > s[i] {
                let centre = (i + j) / 2;
                let prominence = topographic_prominence(&s, i, j);
                best = best.max(prominence);
                if prominence > threshold {
                    // Report the lowest raw sample near the smoothed minimum.
                    let lo = i.saturating_sub(2);
                    let hi = (j + 3).min(n);
                    let index = (lo..hi).fold(centre, |b, k| if values[k] < values[b] { k } else { b });
                    dips.push(Dip { index, prominence });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    dips.sort_by(|a, b| values[a.index].total_cmp(&values[b.index]));
    DipScan {
        dips,
        best_prominence: best,
        threshold,
    }
}

fn topographic_prominence(s: &[f64], lo: usize, hi: usize) -> f64 {
    let v = s[lo];
    let mut left_max = v;
    for k in (0..lo).rev() {
        if s[k] < v {
            break;
        }
        left_max = left_max.max(s[k]);
    }
    let mut right_max = v;
    for &x in &s[hi + 1..] {
        if x < v {
            break;
        }
        right_max = right_max.max(x);
    }
    left_max.min(right_max) - v
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Full width (MHz) where the dip at `idx` rises back above half depth.
fn half_depth_width(t: &Trace, idx: usize, baseline: f64) -> f64 {
    let level = 0.5 * (baseline + t.values[idx]);
    let mut lo = idx;
    while lo > 0 && t.values[lo - 1] < level {
        lo -= 1;
    }
    let mut hi = idx;
    while hi + 1 < t.values.len() && t.values[hi + 1] < level {
        hi += 1;
    }
    let lo_f = if lo > 0 { t.f_axis_ghz[lo - 1] } else { t.f_axis_ghz[lo] };
    let hi_f = if hi + 1 < t.values.len() { t.f_axis_ghz[hi + 1] } else { t.f_axis_ghz[hi] };
    ((hi_f - lo_f) * 1e3 * 0.8).max(2e3 * t.min_step())
}

fn finish_single(t: &Trace, out: &LmOutcome) -> Result<LorentzianFit> {
    let p = &out.params;
    let cov = covariance(out, t.values.len());
    let fit = LorentzianFit {
        f_m_ghz: p[0],
        w_m_mhz: p[1].abs(),
        depth: p[2],
        baseline: p[3],
        covariance: sub_covariance(&cov, [0, 1, 2, 3]),
        residual_norm: (2.0 * out.cost).sqrt(),
        iterations: out.iterations,
    };
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            best: Box::new(fit),
        });
    }
    check_fit(t, &fit)?;
    Ok(fit)
}

fn check_fit(t: &Trace, fit: &LorentzianFit) -> Result<()> {
    if !(fit.depth >= 0.0) {
        return Err(Error::DegenerateFit(format!("fitted feature at {:.6} GHz is a peak, not a dip", fit.f_m_ghz)));
    }
    if !(fit.w_m_mhz > 0.0) {
        return Err(Error::DegenerateFit("zero linewidth".into()));
    }
    let (lo, hi) = (t.f_axis_ghz[0], t.f_axis_ghz[t.f_axis_ghz.len() - 1]);
    if !(lo..=hi).contains(&fit.f_m_ghz) {
        return Err(Error::DegenerateFit(format!("centre {:.6} GHz left the fit window", fit.f_m_ghz)));
    }
    Ok(())
}

/// Single Lorentzian dip fit to the deepest prominent minimum in `window` (GHz).
pub fn fit_dip(trace: &Trace, window: Option<(f64, f64)>) -> Result<LorentzianFit> {
    let t = trace.windowed(window)?;
    let scan = find_dips(&t.values);
    let Some(dip) = scan.dips.first() else {
        return Err(scan.none_found());
    };
    let baseline = quantile(&t.values, 0.9);
    let idx = dip.index;
    let p0 = vec![
        t.f_axis_ghz[idx],
        half_depth_width(&t, idx, baseline),
        (baseline - t.values[idx]).max(0.0),
        baseline,
    ];
    let out = fit_curve(lorentzian, &t.f_axis_ghz, &t.values, p0);
    finish_single(&t, &out)
}

/// Two Lorentzian dips on a shared baseline, returned in ascending centre order.
///
/// `init` optionally gives starting centres (GHz) in any order; otherwise the
/// two deepest prominent minima are used.
pub fn fit_double_dip(trace: &Trace, init: Option<(f64, f64)>) -> Result<(LorentzianFit, LorentzianFit)> {
    let t = trace.windowed(None)?;
    let baseline = quantile(&t.values, 0.9);
    let nearest = |f: f64| -> usize {
        t.f_axis_ghz
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &x)| if (x - f).abs() < acc.1 { (i, (x - f).abs()) } else { acc })
            .0
    };
    let (i1, i2) = match init {
        Some((a, b)) => (nearest(a.min(b)), nearest(a.max(b))),
        None => {
            let scan = find_dips(&t.values);
            let dips = &scan.dips;
            match dips.len() {
                0 => return Err(scan.none_found()),
                1 => return Err(Error::DegenerateFit("only one dip resolved".into())),
                _ => (dips[0].index.min(dips[1].index), dips[0].index.max(dips[1].index)),
            }
        }
    };
    let sep_mhz = (t.f_axis_ghz[i2] - t.f_axis_ghz[i1]) * 1e3;
    let width = |i: usize| half_depth_width(&t, i, baseline).min(sep_mhz.max(2e3 * t.min_step()));
    let p0 = vec![
        t.f_axis_ghz[i1],
        width(i1),
        (baseline - t.values[i1]).max(0.0),
        t.f_axis_ghz[i2],
        width(i2),
        (baseline - t.values[i2]).max(0.0),
        baseline,
    ];
    let out = fit_curve(double_lorentzian, &t.f_axis_ghz, &t.values, p0);
    let cov = covariance(&out, t.values.len());
    let p = &out.params;
    let make = |o: usize, idx: [usize; 4]| LorentzianFit {
        f_m_ghz: p[o],
        w_m_mhz: p[o + 1].abs(),
        depth: p[o + 2],
        baseline: p[6],
        covariance: sub_covariance(&cov, idx),
        residual_norm: (2.0 * out.cost).sqrt(),
        iterations: out.iterations,
    };
    let mut a = make(0, [0, 1, 2, 6]);
    let mut b = make(3, [3, 4, 5, 6]);
    if a.f_m_ghz > b.f_m_ghz {
        std::mem::swap(&mut a, &mut b);
    }
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            best: Box::new(a),
        });
    }
    if (b.f_m_ghz - a.f_m_ghz).abs() < t.min_step() {
        return Err(Error::DegenerateFit(format!(
            "centres {:.6} and {:.6} GHz closer than the grid step",
            a.f_m_ghz, b.f_m_ghz
        )));
    }
    check_fit(&t, &a)?;
    check_fit(&t, &b)?;
    Ok((a, b))
}

/// Field derivative (per mT) of a real map: centred differences inside,
/// one-sided at the first and last field.
pub fn pseudo_derivative(map: &RealMap) -> Result<RealMap> {
    map.validate()?;
    let nb = map.b0_axis_mt.len();
    let nf = map.f_axis_ghz.len();
    if nb < 2 {
        return Err(Error::validation("b0_axis_mT", "pseudo-derivative needs at least two field points"));
    }
    let mut values = vec![0.0; nb * nf];
    for i in 0..nb {
        let (lo, hi) = match i {
            0 => (0, 1),
            _ if i == nb - 1 => (nb - 2, nb - 1),
            _ => (i - 1, i + 1),
        };
        let db = map.b0_axis_mt[hi] - map.b0_axis_mt[lo];
        for k in 0..nf {
            values[i * nf + k] = (map.get(hi, k) - map.get(lo, k)) / db;
        }
    }
    Ok(RealMap {
        values,
        ..map.clone()
    })
}

/// Removes the per-frequency median over field.
pub fn background_subtract(map: &RealMap) -> Result<RealMap> {
    map.validate()?;
    let nb = map.b0_axis_mt.len();
    let nf = map.f_axis_ghz.len();
    let mut values = map.values.clone();
    for k in 0..nf {
        let mut column: Vec<f64> = (0..nb).map(|i| map.get(i, k)).collect();
        let m = median(&mut column);
        for i in 0..nb {
            values[i * nf + k] -= m;
        }
    }
    Ok(RealMap {
        values,
        ..map.clone()
    })
}

/// Result of an anticrossing analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingExtract {
    #[serde(rename = "G_MHz")]
    pub g_mhz: f64,
    #[serde(rename = "crossing_field_mT")]
    pub crossing_field_mt: f64,
    #[serde(rename = "kappa_MHz")]
    pub kappa_mhz: f64,
    #[serde(rename = "gamma_MHz")]
    pub gamma_mhz: f64,
    pub cooperativity: f64,
    #[serde(rename = "min_separation_MHz")]
    pub min_separation_mhz: f64,
}

impl CouplingExtract {
    pub fn from_rates(g_mhz: f64, kappa_mhz: f64, gamma_mhz: f64, crossing_field_mt: f64, min_separation_mhz: f64) -> Self {
        Self {
            g_mhz,
            crossing_field_mt,
            kappa_mhz,
            gamma_mhz,
            cooperativity: g_mhz * g_mhz / (kappa_mhz * gamma_mhz),
            min_separation_mhz,
        }
    }
}

struct FieldFit {
    field: f64,
    lower: LorentzianFit,
    upper: LorentzianFit,
}

impl FieldFit {
    fn separation_mhz(&self) -> f64 {
        (self.upper.f_m_ghz - self.lower.f_m_ghz) * 1e3
    }
}

/// Knobs of the anticrossing analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// The refinement model includes the line-mediated dissipative cross term.
    pub line_crosstalk: bool,
    /// Report the Lorentzian estimate without the coupled-mode refinement.
    pub lorentzian_only: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            line_crosstalk: true,
            lorentzian_only: false,
        }
    }
}

/// Anticrossing analysis of a complex map; see [`extract_coupling_with`].
pub fn extract_coupling(map: &SpectrumMap, window_mt: (f64, f64)) -> Result<CouplingExtract> {
    map.validate()?;
    extract_coupling_with(&map.magnitude(), window_mt, &ExtractOptions::default())
}

/// [`extract_coupling_with`] with default options on an `|S21|` map.
pub fn extract_coupling_magnitude(map: &RealMap, window_mt: (f64, f64)) -> Result<CouplingExtract> {
    extract_coupling_with(map, window_mt, &ExtractOptions::default())
}

/// Coupling, linewidths and cooperativity from an `|S21|` map.
///
/// Each trace in the field window is squared (a single notch resonance is an
/// exact Lorentzian in `|S21|²`) and fitted with two dips. The Lorentzian
/// estimate — half the minimum separation with a damping correction,
/// linewidths from the outermost two-dip traces after undoing their residual
/// hybridization — then seeds
/// an amplitude-only fit of the two-mode transmission model to every trace in
/// the window, with quadratic magnon and spin dispersions. The refinement
/// removes the outward bias of Lorentzian centres near the crossing, where
/// the coupled lineshape is not a sum of independent dips, and copes with a
/// branch going dark there. The crossing is reported as not resolved when the
/// fitted `2G` stays below the mean linewidth `(κ + γ)/2`.
pub fn extract_coupling_with(map: &RealMap, window_mt: (f64, f64), opts: &ExtractOptions) -> Result<CouplingExtract> {
    map.validate()?;
    let (lo, hi) = (window_mt.0.min(window_mt.1), window_mt.0.max(window_mt.1));
    let idx: Vec<usize> = (0..map.b0_axis_mt.len())
        .filter(|&i| (lo..=hi).contains(&map.b0_axis_mt[i]))
        .collect();
    if idx.len() < 3 {
        return Err(Error::validation("window", "field window must contain at least three field points"));
    }
    let squared: Vec<Vec<f64>> = idx.iter().map(|&i| map.row(i).iter().map(|v| v * v).collect()).collect();
    let fits: Vec<Option<FieldFit>> = idx
        .par_iter()
        .zip(squared.par_iter())
        .map(|(&i, values)| {
            let trace = Trace {
                f_axis_ghz: map.f_axis_ghz.clone(),
                values: values.clone(),
            };
            fit_double_dip(&trace, None).ok().map(|(lower, upper)| FieldFit {
                field: map.b0_axis_mt[i],
                lower,
                upper,
            })
        })
        .collect();
    let best = fits
        .iter()
        .enumerate()
        .filter_map(|(k, f)| f.as_ref().map(|f| (k, f.separation_mhz())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::CrossingNotResolved("no trace in the window shows two dips".into()))?
        .0;
    // Outermost two-dip traces on either side, each with its inner neighbour
    // for the dispersion slope.
    let present: Vec<&FieldFit> = fits.iter().flatten().collect();
    if present.len() < 4 {
        return Err(Error::CrossingNotResolved("fewer than four traces show two dips".into()));
    }
    let low = Edge::new(present[0], present[1]);
    let high = Edge::new(present[present.len() - 1], present[present.len() - 2]);

    // Near the crossing one branch may go dark, so the minimum separation is
    // refined only when it sits inside a run of two-dip traces; otherwise the
    // crossing comes from the edge dispersions.
    let mut start = best;
    while start > 0 && fits[start - 1].is_some() {
        start -= 1;
    }
    let mut end = best;
    while end + 1 < fits.len() && fits[end + 1].is_some() {
        end += 1;
    }
    let (crossing_field, sep_min) = if best > start && best < end {
        let run: Vec<&FieldFit> = fits[start..=end].iter().flatten().collect();
        refine_minimum(&run, best - start)
    } else {
        let sep = fits[best].as_ref().map_or(f64::NAN, |f| f.separation_mhz());
        (Edge::dispersion_crossing(&low, &high), sep)
    };
    if !(crossing_field > low.field && crossing_field < high.field) {
        return Err(Error::CrossingNotResolved(format!(
            "no crossing between {:.3} and {:.3} mT",
            low.field, high.field
        )));
    }

    let mut g = sep_min / 2.0;
    let (mut kappa, mut gamma) = (0.0, 0.0);
    for _ in 0..20 {
        let (mut k_sum, mut g_sum) = (0.0, 0.0);
        for e in [&low, &high] {
            let (k, gm) = e.unmixed_widths(g);
            k_sum += k;
            g_sum += gm;
        }
        kappa = (k_sum / 2.0).max(0.0);
        gamma = (g_sum / 2.0).max(0.0);
        g = ((sep_min / 2.0).powi(2) + ((kappa - gamma) / 4.0).powi(2)).sqrt();
    }
    if opts.lorentzian_only {
        return resolved(CouplingExtract::from_rates(g, kappa, gamma, crossing_field, sep_min));
    }

    let fields: Vec<f64> = idx.iter().map(|&i| map.b0_axis_mt[i]).collect();
    let model = CrossingModel {
        x: fields.iter().map(|b| b - crossing_field).collect(),
        f_axis_ghz: &map.f_axis_ghz,
        data: &squared,
        crosstalk: opts.line_crosstalk,
    };
    let p0 = model.initial(&low, &high, crossing_field, g, kappa, gamma);
    let out = levenberg_marquardt(&|p, jac| model.residuals(p, jac), p0);
    let p = &out.params;
    let g_fit = p[6].abs();
    let kappa_fit = p[7].abs() + p[8].abs();
    let gamma_fit = p[9].abs() + p[10].abs();
    if !(g_fit.is_finite() && kappa_fit > 0.0 && gamma_fit > 0.0) {
        return Err(Error::Solver {
            solver: "anticrossing model fit",
            residual: (2.0 * out.cost).sqrt(),
        });
    }
    let crossing = crossing_field + model_crossing(p);
    resolved(CouplingExtract::from_rates(g_fit, kappa_fit, gamma_fit, crossing, sep_min))
}

/// A splitting counts as resolved when `2G` exceeds the mean linewidth.
fn resolved(e: CouplingExtract) -> Result<CouplingExtract> {
    if e.g_mhz > (e.kappa_mhz + e.gamma_mhz) / 4.0 {
        Ok(e)
    } else {
        Err(Error::CrossingNotResolved(format!(
            "G = {:.3} MHz is below the resolvable splitting for linewidths {:.3} and {:.3} MHz",
            e.g_mhz, e.kappa_mhz, e.gamma_mhz
        )))
    }
}

/// Vertex of a parabola fitted to separation² around the discrete minimum.
fn refine_minimum(run: &[&FieldFit], centre: usize) -> (f64, f64) {
    let raw = (run[centre].field, run[centre].separation_mhz());
    let lo = centre.saturating_sub(3);
    let hi = (centre + 3).min(run.len() - 1);
    if hi - lo < 2 {
        return raw;
    }
    let b0 = run[centre].field;
    let rows = hi - lo + 1;
    let a = DMatrix::from_fn(rows, 3, |r, c| (run[lo + r].field - b0).powi(c as i32));
    let y = DVector::from_fn(rows, |r, _| run[lo + r].separation_mhz().powi(2));
    let Ok(coef) = a.svd(true, true).solve(&y, 1e-14) else {
        return raw;
    };
    let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
    if !(c2 > 0.0) {
        return raw;
    }
    let x = -c1 / (2.0 * c2);
    let (span_lo, span_hi) = (run[lo].field - b0, run[hi].field - b0);
    let v = c0 + c1 * x + c2 * x * x;
    if !(span_lo..=span_hi).contains(&x) || !(v > 0.0) || v > raw.1 * raw.1 {
        return raw;
    }
    (b0 + x, v.sqrt())
}

/// Branch fits at an outer trace, split into magnon-like and spin-like by
/// dispersion: the flatter branch is taken as the magnon.
struct Edge<'a> {
    field: f64,
    separation: f64,
    magnon: &'a LorentzianFit,
    spin: &'a LorentzianFit,
}

impl<'a> Edge<'a> {
    fn new(edge: &'a FieldFit, inner: &'a FieldFit) -> Self {
        let db = inner.field - edge.field;
        let slope_lower = ((inner.lower.f_m_ghz - edge.lower.f_m_ghz) / db).abs();
        let slope_upper = ((inner.upper.f_m_ghz - edge.upper.f_m_ghz) / db).abs();
        let (magnon, spin) = if slope_lower <= slope_upper {
            (&edge.lower, &edge.upper)
        } else {
            (&edge.upper, &edge.lower)
        };
        Self {
            field: edge.field,
            separation: edge.separation_mhz(),
            magnon,
            spin,
        }
    }

    /// Field where straight-line magnon and spin dispersions through the two
    /// edges intersect.
    fn dispersion_crossing(low: &Edge, high: &Edge) -> f64 {
        let db = high.field - low.field;
        let a1 = (high.magnon.f_m_ghz - low.magnon.f_m_ghz) / db;
        let d1 = (high.spin.f_m_ghz - low.spin.f_m_ghz) / db;
        low.field + (low.spin.f_m_ghz - low.magnon.f_m_ghz) / (a1 - d1)
    }

    /// Bare `(κ, γ)` from the branch widths, given the coupling: each branch
    /// width is the mixing-weighted average of the bare linewidths.
    fn unmixed_widths(&self, g: f64) -> (f64, f64) {
        let cos2 = (1.0 - (2.0 * g / self.separation).powi(2)).max(0.0).sqrt();
        let (c2, s2) = ((1.0 + cos2) / 2.0, (1.0 - cos2) / 2.0);
        let norm = (c2 - s2).max(1e-3);
        let (wm, ws) = (self.magnon.w_m_mhz, self.spin.w_m_mhz);
        ((c2 * wm - s2 * ws) / norm, (c2 * ws - s2 * wm) / norm)
    }
}

/// Internal share of a dip's linewidth from its depth: a bare notch
/// resonance reaches `|S21|² = (rate_int/rate)²` at its centre.
fn internal_share(fit: &LorentzianFit) -> f64 {
    if fit.baseline > 0.0 {
        ((fit.baseline - fit.depth) / fit.baseline).clamp(0.0, 1.0).sqrt()
    } else {
        0.5
    }
}

/// Two-mode transmission model over a set of traces.
///
/// Parameters: magnon dispersion `a0 + a1 x + a2 x²` and spin dispersion
/// `d0 + d1 x + d2 x²` (GHz, `x` in mT from the crossing estimate), `G`,
/// `κ_e`, `κ_i`, `γ_e`, `γ_i` (MHz) and a baseline scale.
struct CrossingModel<'a> {
    x: Vec<f64>,
    f_axis_ghz: &'a [f64],
    data: &'a [Vec<f64>],
    crosstalk: bool,
}

const STEP_FLOORS: [f64; 12] = [1.0, 1e-3, 1e-5, 1.0, 1e-3, 1e-5, 1.0, 1.0, 1.0, 1.0, 1.0, 1e-2];

impl CrossingModel<'_> {
    fn initial(&self, low: &Edge, high: &Edge, crossing: f64, g: f64, kappa: f64, gamma: f64) -> Vec<f64> {
        let db = high.field - low.field;
        let a1 = (high.magnon.f_m_ghz - low.magnon.f_m_ghz) / db;
        let d1 = (high.spin.f_m_ghz - low.spin.f_m_ghz) / db;
        let a0 = low.magnon.f_m_ghz + a1 * (crossing - low.field);
        let d0 = low.spin.f_m_ghz + d1 * (crossing - low.field);
        let centre = 0.5 * (a0 + d0);
        let k_int = 0.5 * (internal_share(low.magnon) + internal_share(high.magnon));
        let g_int = 0.5 * (internal_share(low.spin) + internal_share(high.spin));
        let scale = 0.5 * (low.magnon.baseline + high.magnon.baseline);
        vec![
            centre,
            a1,
            0.0,
            centre,
            d1,
            0.0,
            g,
            kappa * (1.0 - k_int),
            kappa * k_int,
            gamma * (1.0 - g_int),
            gamma * g_int,
            scale,
        ]
    }

    fn eval(&self, p: &[f64]) -> DVector<f64> {
        let nf = self.f_axis_ghz.len();
        let mut r = DVector::zeros(self.x.len() * nf);
        let cp = crate::hybrid_response::CouplingParams {
            g: p[6].abs(),
            kappa_e: p[7].abs(),
            kappa_i: p[8].abs(),
            gamma_e: p[9].abs(),
            gamma_i: p[10].abs(),
            include_line_crosstalk: self.crosstalk,
        };
        for (t, &x) in self.x.iter().enumerate() {
            let wm = p[0] + p[1] * x + p[2] * x * x;
            let d = p[3] + p[4] * x + p[5] * x * x;
            let set = crate::hybrid_response::ModeSet::pair(wm, d, &cp);
            match set.s21_trace(self.f_axis_ghz) {
                Ok(s) => {
                    for (k, z) in s.iter().enumerate() {
                        r[t * nf + k] = p[11] * z.norm_sqr() - self.data[t][k];
                    }
                }
                Err(_) => {
                    for k in 0..nf {
                        r[t * nf + k] = 1e3;
                    }
                }
            }
        }
        r
    }

    /// Residuals with a forward-difference Jacobian.
    fn residuals(&self, p: &[f64], jac: Option<&mut DMatrix<f64>>) -> DVector<f64> {
        let r = self.eval(p);
        if let Some(j) = jac {
            let cols: Vec<DVector<f64>> = (0..p.len())
                .into_par_iter()
                .map(|k| {
                    let h = 1e-7 * p[k].abs().max(STEP_FLOORS[k]);
                    let mut q = p.to_vec();
                    q[k] += h;
                    (self.eval(&q) - &r) / h
                })
                .collect();
            for (k, c) in cols.iter().enumerate() {
                j.set_column(k, c);
            }
        }
        r
    }
}

/// Offset (mT) of the fitted crossing from the expansion point.
fn model_crossing(p: &[f64]) -> f64 {
    let (c0, c1, c2) = (p[0] - p[3], p[1] - p[4], p[2] - p[5]);
    let linear = if c1 != 0.0 { -c0 / c1 } else { 0.0 };
    if c2.abs() < 1e-300 {
        return linear;
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return linear;
    }
    let roots = [(-c1 + disc.sqrt()) / (2.0 * c2), (-c1 - disc.sqrt()) / (2.0 * c2)];
    if roots[0].abs() < roots[1].abs() {
        roots[0]
    } else {
        roots[1]
    }
}
