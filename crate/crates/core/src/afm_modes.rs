//! Macrospin model of a layered antiferromagnet: static equilibrium and
//! linearized Landau–Lifshitz modes.
//!
//! Vectors live in the crystal frame `(a, b, c) = (x, y, z)`: `b` is the easy
//! axis, `a` the medium axis (anisotropy field `H_a`) and `c` the hard axis
//! (`H_c`). Energies are per layer moment in tesla:
//!
//! ```text
//! E = Σ_bonds J m_i·m_j + Σ_k [ H_a/2 (m_k·a)² + H_c/2 (m_k·c)² − B·m_k ]
//! ```
//!
//! The two-sublattice model is the two-layer case with a single bond `J = H_E`.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::units::gyro_ghz_per_t;

pub type V3 = Vector3<f64>;
pub type C3 = Vector3<Complex64>;

/// Ellipticity below which a precession is labelled linear.
pub const LINEAR_ELLIPTICITY: f64 = 0.1;

const A_AXIS: V3 = V3::new(1.0, 0.0, 0.0);
const B_AXIS: V3 = V3::new(0.0, 1.0, 0.0);
const C_AXIS: V3 = V3::new(0.0, 0.0, 1.0);

fn default_g() -> f64 {
    2.0
}

/// Exchange and anisotropy fields of the antiferromagnet, tesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetParams {
    pub h_e: f64,
    pub h_a: f64,
    pub h_c: f64,
    #[serde(default = "default_g")]
    pub g: f64,
}

impl Default for MagnetParams {
    /// CrSBr fields from the bare-crystal resonance fit.
    fn default() -> Self {
        Self {
            h_e: 0.392,
            h_a: 0.380,
            h_c: 1.32,
            g: 2.0,
        }
    }
}

impl MagnetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_e.is_finite() && self.h_e > 0.0) {
            return Err(Error::validation("h_e", format!("exchange field must be > 0, got {}", self.h_e)));
        }
        if !(self.h_a.is_finite() && self.h_a >= 0.0) {
            return Err(Error::validation("h_a", format!("must be >= 0, got {}", self.h_a)));
        }
        if !(self.h_c.is_finite() && self.h_c >= 0.0) {
            return Err(Error::validation("h_c", format!("must be >= 0, got {}", self.h_c)));
        }
        if self.h_c < self.h_a {
            return Err(Error::validation(
                "h_c",
                format!("H_c >= H_a violated (hard axis must be harder than medium axis): H_c = {}, H_a = {}", self.h_c, self.h_a),
            ));
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(Error::validation("g", "g-factor must be positive"));
        }
        Ok(())
    }

    /// Field along `a` above which both sublattices are saturated, tesla.
    pub fn saturation_field_a(&self) -> f64 {
        2.0 * self.h_e + self.h_a
    }
}

/// Static field: magnitude and in-plane angle from the easy `b` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub b0_t: f64,
    pub theta_deg: f64,
}

impl FieldConfig {
    pub fn new(b0_t: f64, theta_deg: f64) -> Self {
        Self { b0_t, theta_deg }
    }

    pub fn from_mt(b0_mt: f64, theta_deg: f64) -> Self {
        Self::new(b0_mt * 1e-3, theta_deg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b0_t.is_finite() && self.b0_t >= 0.0) {
            return Err(Error::validation("b0", format!("must be >= 0, got {}", self.b0_t)));
        }
        if !(0.0..=90.0).contains(&self.theta_deg) {
            return Err(Error::validation("theta_deg", format!("must lie in [0, 90], got {}", self.theta_deg)));
        }
        Ok(())
    }

    /// Unit vector along the field (defined even at zero magnitude).
    pub fn direction(&self) -> V3 {
        let t = self.theta_deg.to_radians();
        V3::new(t.sin(), t.cos(), 0.0)
    }

    pub fn vector(&self) -> V3 {
        self.direction() * self.b0_t
    }
}

/// Layer-resolved macrospin energy with arbitrary pairwise exchange bonds.
#[derive(Debug, Clone)]
pub struct MacrospinChain {
    pub n: usize,
    /// `(i, j, J)` with `J > 0` antiferromagnetic, tesla.
    pub bonds: Vec<(usize, usize, f64)>,
    pub h_a: f64,
    pub h_c: f64,
    pub field: V3,
    pub gyro: f64,
}

impl MacrospinChain {
    pub fn two_sublattice(mag: &MagnetParams, field: V3) -> Self {
        Self {
            n: 2,
            bonds: vec![(0, 1, mag.h_e)],
            h_a: mag.h_a,
            h_c: mag.h_c,
            field,
            gyro: gyro_ghz_per_t(mag.g),
        }
    }

    pub fn energy(&self, m: &[V3]) -> f64 {
        let mut e = 0.0;
        for &(i, j, coupling) in &self.bonds {
            e += coupling * m[i].dot(&m[j]);
        }
        for mk in m {
            let ma = mk.dot(&A_AXIS);
            let mc = mk.dot(&C_AXIS);
            e += 0.5 * self.h_a * ma * ma + 0.5 * self.h_c * mc * mc - self.field.dot(mk);
        }
        e
    }

    /// Euclidean gradient ∂E/∂m_k (minus the effective field).
    pub fn gradient(&self, m: &[V3]) -> Vec<V3> {
        let mut g: Vec<V3> = m
            .iter()
            .map(|mk| A_AXIS * (self.h_a * mk.x) + C_AXIS * (self.h_c * mk.z) - self.field)
            .collect();
        for &(i, j, coupling) in &self.bonds {
            g[i] += m[j] * coupling;
            g[j] += m[i] * coupling;
        }
        g
    }

    fn projected_gradient(&self, m: &[V3]) -> Vec<V3> {
        self.gradient(m)
            .into_iter()
            .zip(m)
            .map(|(g, mk)| g - mk * g.dot(mk))
            .collect()
    }

    /// Riemannian Hessian in the tangent basis returned by [`tangent_basis`].
    pub fn tangent_hessian(&self, m: &[V3]) -> DMatrix<f64> {
        let n = self.n;
        let grad = self.gradient(m);
        let bases: Vec<(V3, V3)> = m.iter().map(tangent_basis).collect();
        let mut k = DMatrix::zeros(2 * n, 2 * n);
        for site in 0..n {
            let (e1, e2) = bases[site];
            let lambda = m[site].dot(&grad[site]);
            let basis = [e1, e2];
            for (p, u) in basis.iter().enumerate() {
                for (q, v) in basis.iter().enumerate() {
                    let aniso = self.h_a * u.x * v.x + self.h_c * u.z * v.z;
                    k[(2 * site + p, 2 * site + q)] = aniso - if p == q { lambda } else { 0.0 };
                }
            }
        }
        for &(i, j, coupling) in &self.bonds {
            let bi = [bases[i].0, bases[i].1];
            let bj = [bases[j].0, bases[j].1];
            for p in 0..2 {
                for q in 0..2 {
                    let v = coupling * bi[p].dot(&bj[q]);
                    k[(2 * i + p, 2 * j + q)] += v;
                    k[(2 * j + q, 2 * i + p)] += v;
                }
            }
        }
        k
    }

    /// Real linearized Landau–Lifshitz generator `γ J K` acting on tangent
    /// coordinates. The gyromagnetic ratio is cyclic, so the eigenvalues are
    /// `±i f` with `f` the mode frequencies in GHz.
    pub fn dynamical_matrix(&self, m: &[V3]) -> DMatrix<f64> {
        let k = self.tangent_hessian(m);
        let mut jk = DMatrix::zeros(2 * self.n, 2 * self.n);
        for site in 0..self.n {
            for col in 0..2 * self.n {
                // d(α)/dt = −γ (Kx)_β ,  d(β)/dt = γ (Kx)_α
                jk[(2 * site, col)] = -self.gyro * k[(2 * site + 1, col)];
                jk[(2 * site + 1, col)] = self.gyro * k[(2 * site, col)];
            }
        }
        jk
    }
}

/// Orthonormal tangent pair `(e1, e2)` at `m` with `e1 × e2 = m`.
pub fn tangent_basis(m: &V3) -> (V3, V3) {
    let reference = if m.z.abs() < 0.9 { C_AXIS } else { A_AXIS };
    let e1 = reference.cross(m).normalize();
    let e2 = m.cross(&e1);
    (e1, e2)
}

/// Static configuration of all layer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub moments: Vec<V3>,
    pub energy: f64,
    pub gradient_norm: f64,
}

impl Equilibrium {
    pub fn m1(&self) -> V3 {
        self.moments[0]
    }
    pub fn m2(&self) -> V3 {
        self.moments[1]
    }

    /// True once every moment lies along the field to `tol`.
    pub fn is_saturated(&self, field: &FieldConfig, tol: f64) -> bool {
        let dir = field.direction();
        self.moments.iter().all(|m| m.dot(&dir) > 1.0 - tol)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0x5_eed0_fa7f,
            max_iter: 20_000,
            tolerance: 1e-11,
        }
    }
}

struct Relaxed {
    moments: Vec<V3>,
    energy: f64,
    grad_norm: f64,
}

fn norm_of(v: &[V3]) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn retract(m: &[V3], step: &[f64], bases: &[(V3, V3)]) -> Vec<V3> {
    m.iter()
        .enumerate()
        .map(|(k, mk)| (mk + bases[k].0 * step[2 * k] + bases[k].1 * step[2 * k + 1]).normalize())
        .collect()
}

/// Riemannian descent with Armijo backtracking, finished by Newton steps.
fn relax(chain: &MacrospinChain, start: Vec<V3>, opts: &EquilibriumOptions) -> Relaxed {
    let mut m: Vec<V3> = start.into_iter().map(|v| v.normalize()).collect();
    let mut energy = chain.energy(&m);
    let mut step = 0.2;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let pg = chain.projected_gradient(&m);
        grad_norm = norm_of(&pg);
        if grad_norm < opts.tolerance {
            break;
        }
        if grad_norm < 1e-2 {
            let bases: Vec<(V3, V3)> = m.iter().map(tangent_basis).collect();
            let k = chain.tangent_hessian(&m);
            if let Some(chol) = k.clone().cholesky() {
                let g_t = DMatrix::from_fn(2 * chain.n, 1, |r, _| {
                    let site = r / 2;
                    let e = if r % 2 == 0 { bases[site].0 } else { bases[site].1 };
                    -pg[site].dot(&e)
                });
                let delta = chol.solve(&g_t);
                let trial = retract(&m, delta.as_slice(), &bases);
                let trial_grad = norm_of(&chain.projected_gradient(&trial));
                if trial_grad < grad_norm {
                    m = trial;
                    energy = chain.energy(&m);
                    continue;
                }
            }
        }
        let mut t = step;
        let mut accepted = false;
        while t > 1e-14 {
            let trial: Vec<V3> = m
                .iter()
                .zip(&pg)
                .map(|(mk, gk)| (mk - gk * t).normalize())
                .collect();
            let e_trial = chain.energy(&trial);
            if e_trial <= energy - 1e-4 * t * grad_norm * grad_norm {
                m = trial;
                energy = e_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (t * 2.0).min(10.0);
    }
    let grad_norm = norm_of(&chain.projected_gradient(&m)).min(grad_norm);
    Relaxed {
        energy: chain.energy(&m),
        moments: m,
        grad_norm,
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> V3 {
    loop {
        let v = V3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Candidate starting points: Néel, flopped, canted and saturated states,
/// each nudged off any symmetric saddle.
fn analytic_seeds(chain: &MacrospinChain, rng: &mut ChaCha8Rng) -> Vec<Vec<V3>> {
    let n = chain.n;
    let alternating = |axis: V3| -> Vec<V3> {
        (0..n).map(|k| if k % 2 == 0 { axis } else { -axis }).collect()
    };
    let dir = if chain.field.norm() > 0.0 {
        chain.field.normalize()
    } else {
        B_AXIS
    };
    let perp = C_AXIS.cross(&dir);
    let canted: Vec<V3> = (0..n)
        .map(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            (dir * 0.5 + perp * (s * 0.85)).normalize()
        })
        .collect();
    let mut seeds = vec![
        alternating(B_AXIS),
        alternating(A_AXIS),
        canted,
        vec![dir; n],
    ];
    for seed in seeds.iter_mut() {
        for m in seed.iter_mut() {
            *m = (*m + random_unit(rng) * 1e-3).normalize();
        }
    }
    seeds
}

/// Global-minimum search over analytic seeds plus random restarts.
pub fn relax_chain(chain: &MacrospinChain, opts: &EquilibriumOptions) -> Result<Equilibrium> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = analytic_seeds(chain, &mut rng);
    for _ in 0..opts.restarts {
        starts.push((0..chain.n).map(|_| random_unit(&mut rng)).collect());
    }
    let mut best: Option<Relaxed> = None;
    let mut best_unconverged = f64::INFINITY;
    for start in starts {
        let r = relax(chain, start, opts);
        if r.grad_norm >= 1e-8 {
            best_unconverged = best_unconverged.min(r.grad_norm);
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => r.energy < b.energy - 1e-12,
        };
        if better {
            best = Some(r);
        }
    }
    let best = best.ok_or(Error::Solver {
        solver: "equilibrium minimizer",
        residual: best_unconverged,
    })?;
    let mut moments = best.moments;
    // Sign convention for the degenerate sublattice exchange / global flip.
    if chain.n == 2 && moments[0].dot(&B_AXIS) < -1e-12 {
        moments.swap(0, 1);
    } else if chain.field.norm() == 0.0 && moments[0].dot(&B_AXIS) < -1e-12 {
        for m in moments.iter_mut() {
            *m = -*m;
        }
    }
    Ok(Equilibrium {
        energy: chain.energy(&moments),
        gradient_norm: norm_of(&chain.projected_gradient(&moments)),
        moments,
    })
}

/// Two-sublattice ground state for the given field.
pub fn equilibrium(mag: &MagnetParams, field: &FieldConfig) -> Result<Equilibrium> {
    equilibrium_with(mag, field, &EquilibriumOptions::default())
}

pub fn equilibrium_with(mag: &MagnetParams, field: &FieldConfig, opts: &EquilibriumOptions) -> Result<Equilibrium> {
    mag.validate()?;
    field.validate()?;
    relax_chain(&MacrospinChain::two_sublattice(mag, field.vector()), opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chirality {
    #[serde(rename = "LH")]
    LeftHanded,
    #[serde(rename = "RH")]
    RightHanded,
    #[serde(rename = "linear")]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Acoustic,
    Optical,
}

/// One linearized eigenmode.
///
/// Dynamic vectors use the `Re[v e^{−iωt}]` convention and are scaled to unit
/// symplectic norm, so `|net_orbit|²` is proportional to the coupling of the
/// mode to a uniform drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution {
    pub frequency_ghz: f64,
    pub sublattice_ellipses: Vec<C3>,
    pub net_orbit: C3,
    pub chirality: Chirality,
    pub ellipticity: f64,
    pub branch_label: Branch,
}

/// Minor/major axis ratio of the ellipse traced by `Re[v e^{−iωt}]` and the
/// signed rotation sense about `axis` (positive = counter-clockwise).
pub fn polarization(v: &C3, axis: &V3) -> (f64, f64) {
    let p = v.map(|z| z.re);
    let q = v.map(|z| z.im);
    let pp = p.dot(&p);
    let qq = q.dot(&q);
    let pq = p.dot(&q);
    let tr = pp + qq;
    if tr <= 0.0 {
        return (0.0, 0.0);
    }
    let disc = ((pp - qq).powi(2) + 4.0 * pq * pq).sqrt();
    let major = 0.5 * (tr + disc);
    let minor = (0.5 * (tr - disc)).max(0.0);
    let ellipticity = (minor / major).sqrt();
    // Re[(p + iq) e^{-iωt}] = p cos ωt + q sin ωt turns from p towards q.
    let sense = p.cross(&q).dot(axis);
    (ellipticity, sense)
}

fn classify(v: &C3, axis: &V3) -> (Chirality, f64) {
    let (ellipticity, sense) = polarization(v, axis);
    let chirality = if ellipticity < LINEAR_ELLIPTICITY {
        Chirality::Linear
    } else if sense >= 0.0 {
        Chirality::RightHanded
    } else {
        Chirality::LeftHanded
    };
    (chirality, ellipticity)
}

/// Positive-frequency modes of a chain: `(f GHz, per-site δm)`, ascending.
fn chain_modes(chain: &MacrospinChain, moments: &[V3]) -> Result<Vec<(f64, Vec<C3>)>> {
    let n = chain.n;
    let k = chain.tangent_hessian(moments);
    let scale = k.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
    let (stiff, u) = linalg::symmetric_eigen(k)?;
    let tol = 1e-9 * scale;
    if let Some((idx, &worst)) = stiff.iter().enumerate().find(|(_, &s)| s < -tol) {
        return Err(Error::Unstable {
            branch: format!("stiffness eigenvector {idx}"),
            stiffness: worst,
        });
    }
    let sqrt_k = &u * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(2 * n, stiff.iter().map(|s| s.max(0.0).sqrt()))) * u.transpose();
    let inv_sqrt_k = &u
        * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            2 * n,
            stiff.iter().map(|&s| if s > tol { 1.0 / s.sqrt() } else { 0.0 }),
        ))
        * u.transpose();
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for site in 0..n {
        j[(2 * site, 2 * site + 1)] = -1.0;
        j[(2 * site + 1, 2 * site)] = 1.0;
    }
    let a = &sqrt_k * j * &sqrt_k;
    // ω y = i γ A y with A real antisymmetric: a Hermitian problem.
    let herm = a.map(|x| Complex64::new(0.0, chain.gyro * x));
    let (omegas, ys) = linalg::hermitian_eigen(herm)?;
    let bases: Vec<(V3, V3)> = moments.iter().map(tangent_basis).collect();
    let inv_c = inv_sqrt_k.map(|x| Complex64::new(x, 0.0));
    let mut out = Vec::with_capacity(n);
    for idx in n..2 * n {
        let omega = omegas[idx].max(0.0);
        let x = &inv_c * ys.column(idx);
        let amp = Complex64::new(omega.sqrt(), 0.0);
        let dm: Vec<C3> = (0..n)
            .map(|site| {
                let (e1, e2) = bases[site];
                let (xa, xb) = (x[2 * site] * amp, x[2 * site + 1] * amp);
                C3::new(
                    xa * e1.x + xb * e2.x,
                    xa * e1.y + xb * e2.y,
                    xa * e1.z + xb * e2.z,
                )
            })
            .collect();
        out.push((omega, dm));
    }
    Ok(out)
}

fn in_phase_score(dm: &[C3]) -> f64 {
    let total: f64 = dm.iter().map(|v| v.norm_squared()).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let out_of_plane = (dm[0].z.conj() * dm[1].z).re;
    if out_of_plane.abs() > 1e-9 * total {
        out_of_plane / total
    } else {
        ((dm[0] + dm[1]).norm_squared() - (dm[0] - dm[1]).norm_squared()) / (4.0 * total)
    }
}

/// Linearized modes of the two-sublattice model about `eq`, ascending in
/// frequency. The acoustic label goes to the mode whose hard-axis (`c`)
/// sublattice components precess in phase.
pub fn linearized_modes(mag: &MagnetParams, field: &FieldConfig, eq: &Equilibrium) -> Result<Vec<ModeSolution>> {
    mag.validate()?;
    field.validate()?;
    if eq.moments.len() != 2 {
        return Err(Error::validation("equilibrium", "two-sublattice model needs exactly two moments"));
    }
    let chain = MacrospinChain::two_sublattice(mag, field.vector());
    let raw = chain_modes(&chain, &eq.moments)?;
    let scores: Vec<f64> = raw.iter().map(|(_, dm)| in_phase_score(dm)).collect();
    let acoustic_idx = if scores[0] >= scores[1] { 0 } else { 1 };
    let axis = field.direction();
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(idx, (f, dm))| {
            let net = dm[0] + dm[1];
            let (chirality, ellipticity) = classify(&net, &axis);
            ModeSolution {
                frequency_ghz: f,
                sublattice_ellipses: dm,
                net_orbit: net,
                chirality,
                ellipticity,
                branch_label: if idx == acoustic_idx { Branch::Acoustic } else { Branch::Optical },
            }
        })
        .collect())
}

/// Convenience: equilibrium followed by linearization.
pub fn modes_at(mag: &MagnetParams, field: &FieldConfig) -> Result<Vec<ModeSolution>> {
    let eq = equilibrium(mag, field)?;
    linearized_modes(mag, field, &eq)
}

pub fn find_branch(modes: &[ModeSolution], branch: Branch) -> Option<&ModeSolution> {
    modes.iter().find(|m| m.branch_label == branch)
}

/// Unit-normalized dynamic field direction of a mode.
pub fn mode_rf_field(mode: &ModeSolution) -> Result<C3> {
    let norm = mode.net_orbit.norm();
    let scale: f64 = mode.sublattice_ellipses.iter().map(|v| v.norm()).sum();
    if !(norm > 1e-9 * scale.max(1e-300)) {
        return Err(Error::DegenerateMode(format!(
            "mode at {:.4} GHz has no net dynamic magnetization",
            mode.frequency_ghz
        )));
    }
    Ok(mode.net_orbit / Complex64::new(norm, 0.0))
}

/// Random stacking-fault chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackingConfig {
    pub n_layers: usize,
    pub fault_probability: f64,
    /// Multiplier on the exchange of a faulted bond (negative = ferromagnetic).
    pub fault_coupling_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::validation("n_layers", format!("must be >= 2, got {}", self.n_layers)));
        }
        if !(0.0..=1.0).contains(&self.fault_probability) {
            return Err(Error::validation("fault_probability", "must lie in [0, 1]"));
        }
        if !self.fault_coupling_scale.is_finite() {
            return Err(Error::validation("fault_coupling_scale", "must be finite"));
        }
        Ok(())
    }

    /// Per-bond exchange on a ring of `n_layers` layers.
    ///
    /// Each layer has two neighbours carrying `H_E/2` each, so an unfaulted
    /// ring feels the same exchange field as the two-sublattice model (and the
    /// two-layer ring reduces to it exactly).
    pub fn bonds(&self, h_e: f64) -> Vec<(usize, usize, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_layers)
            .map(|k| {
                let faulted = rng.random::<f64>() < self.fault_probability;
                let scale = if faulted { self.fault_coupling_scale } else { 1.0 };
                (k, (k + 1) % self.n_layers, 0.5 * h_e * scale)
            })
            .collect()
    }

    pub fn chain(&self, mag: &MagnetParams, field: &FieldConfig) -> MacrospinChain {
        MacrospinChain {
            n: self.n_layers,
            bonds: self.bonds(mag.h_e),
            h_a: mag.h_a,
            h_c: mag.h_c,
            field: field.vector(),
            gyro: gyro_ghz_per_t(mag.g),
        }
    }
}

/// One mode of the layered chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingMode {
    pub frequency_ghz: f64,
    /// Share of the uniform-drive coupling; weights of one spectrum sum to 1.
    pub weight: f64,
    pub net_orbit: C3,
}

/// Eigenmodes of the faulted N-layer chain with their uniform-drive weights.
pub fn stacking_spectrum(mag: &MagnetParams, field: &FieldConfig, cfg: &StackingConfig) -> Result<Vec<StackingMode>> {
    stacking_spectrum_with(mag, field, cfg, &EquilibriumOptions::default())
}

pub fn stacking_spectrum_with(
    mag: &MagnetParams,
    field: &FieldConfig,
    cfg: &StackingConfig,
    opts: &EquilibriumOptions,
) -> Result<Vec<StackingMode>> {
    mag.validate()?;
    field.validate()?;
    cfg.validate()?;
    let chain = cfg.chain(mag, field);
    let eq = relax_chain(&chain, opts)?;
    let raw = chain_modes(&chain, &eq.moments)?;
    let nets: Vec<C3> = raw
        .iter()
        .map(|(_, dm)| dm.iter().fold(C3::zeros(), |acc, v| acc + v))
        .collect();
    let total: f64 = nets.iter().map(|v| v.norm_squared()).sum();
    Ok(raw
        .into_iter()
        .zip(nets)
        .map(|((f, _), net)| StackingMode {
            frequency_ghz: f,
            weight: if total > 0.0 { net.norm_squared() / total } else { 0.0 },
            net_orbit: net,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crsbr() -> MagnetParams {
        MagnetParams::default()
    }

    #[test]
    fn neel_state_at_zero_field() {
        let eq = equilibrium(&crsbr(), &FieldConfig::new(0.0, 0.0)).unwrap();
        assert!((eq.m1() - B_AXIS).norm() < 1e-9, "{:?}", eq.m1());
        assert!((eq.m2() + B_AXIS).norm() < 1e-9);
        assert!(eq.gradient_norm < 1e-8);
    }

    #[test]
    fn saturated_along_a_above_one_tesla() {
        let eq = equilibrium(&crsbr(), &FieldConfig::new(1.5, 90.0)).unwrap();
        assert!((eq.m1() - A_AXIS).norm() < 1e-8);
        assert!((eq.m2() - A_AXIS).norm() < 1e-8);
    }

    #[test]
    fn symmetric_canting_matches_closed_form() {
        let mag = crsbr();
        let eq = equilibrium(&mag, &FieldConfig::new(0.3, 90.0)).unwrap();
        assert!((eq.m1().y + eq.m2().y).abs() < 1e-10);
        let sin_cant = 0.3 / mag.saturation_field_a();
        assert!((eq.m1().x - sin_cant).abs() < 1e-9);
        assert!((eq.m1().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_medium_axis_harder_than_hard_axis() {
        let mag = MagnetParams { h_a: 2.0, ..crsbr() };
        let err = mag.validate().unwrap_err();
        assert!(err.to_string().contains("H_c >= H_a"));
    }

    #[test]
    fn acoustic_mode_along_c_for_field_along_a() {
        let mag = crsbr();
        let field = FieldConfig::new(0.3, 90.0);
        let modes = modes_at(&mag, &field).unwrap();
        let ac = find_branch(&modes, Branch::Acoustic).unwrap();
        let v = mode_rf_field(ac).unwrap();
        assert!(v.z.norm() > v.x.norm());
        assert!(v.z.norm() > 0.8);
        assert!(v.x.norm() < 1e-8);
    }

    #[test]
    fn circular_dominant_opposite_handedness_along_easy_axis() {
        let modes = modes_at(&crsbr(), &FieldConfig::new(0.2, 0.0)).unwrap();
        assert_ne!(modes[0].chirality, Chirality::Linear);
        assert_ne!(modes[1].chirality, Chirality::Linear);
        assert_ne!(modes[0].chirality, modes[1].chirality);
        let ac = find_branch(&modes, Branch::Acoustic).unwrap();
        assert_eq!(ac.chirality, Chirality::LeftHanded);
        assert!(ac.ellipticity > 0.5);
        let v = mode_rf_field(ac).unwrap();
        assert!(v.y.norm() < 1e-8);
    }

    #[test]
    fn polarization_of_reference_vectors() {
        let i = Complex64::i();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let rh = C3::new(one, i, zero);
        let (e, s) = polarization(&rh, &C_AXIS);
        assert!((e - 1.0).abs() < 1e-12 && s > 0.0);
        let lin = C3::new(one, one * 2.0, zero);
        assert!(polarization(&lin, &C_AXIS).0 < 1e-12);
        assert_eq!(classify(&C3::new(one, -i, zero), &C_AXIS).0, Chirality::LeftHanded);
    }

    #[test]
    fn compensated_mode_is_rejected() {
        let zero = C3::zeros();
        let one = Complex64::new(1.0, 0.0);
        let mode = ModeSolution {
            frequency_ghz: 1.0,
            sublattice_ellipses: vec![C3::new(one, zero.y, zero.z), C3::new(-one, zero.y, zero.z)],
            net_orbit: zero,
            chirality: Chirality::Linear,
            ellipticity: 0.0,
            branch_label: Branch::Optical,
        };
        assert!(matches!(mode_rf_field(&mode), Err(Error::DegenerateMode(_))));
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let mag = crsbr();
        let chain = MacrospinChain::two_sublattice(&mag, FieldConfig::new(0.3, 90.0).vector());
        let eq = relax_chain(&chain, &EquilibriumOptions::default()).unwrap();
        let k = chain.tangent_hessian(&eq.moments);
        let bases: Vec<(V3, V3)> = eq.moments.iter().map(tangent_basis).collect();
        let h = 1e-5;
        for col in 0..4 {
            let mut step = [0.0; 4];
            step[col] = h;
            let plus = retract(&eq.moments, &step, &bases);
            step[col] = -h;
            let minus = retract(&eq.moments, &step, &bases);
            let ep = chain.energy(&plus);
            let em = chain.energy(&minus);
            let e0 = chain.energy(&eq.moments);
            let second = (ep - 2.0 * e0 + em) / (h * h);
            assert!((second - k[(col, col)]).abs() < 1e-4 * k[(col, col)].abs().max(1.0), "{col}: {second} vs {}", k[(col, col)]);
        }
    }

    #[test]
    fn stacking_is_deterministic_per_seed() {
        let cfg = StackingConfig {
            n_layers: 6,
            fault_probability: 0.3,
            fault_coupling_scale: -0.5,
            seed: 11,
        };
        let field = FieldConfig::new(0.2, 90.0);
        let a = stacking_spectrum(&crsbr(), &field, &cfg).unwrap();
        let b = stacking_spectrum(&crsbr(), &field, &cfg).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.iter().map(|m| m.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stacking_config_validation() {
        let cfg = StackingConfig {
            n_layers: 1,
            fault_probability: 0.1,
            fault_coupling_scale: 1.0,
            seed: 0,
        };
        assert!(cfg.validate().is_err());
        let cfg = StackingConfig { n_layers: 4, fault_probability: 1.5, ..cfg };
        assert!(cfg.validate().is_err());
    }
}
