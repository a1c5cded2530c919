//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is printed even when
//! output capture is on; exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{afmr, jacobi_eigenvalues, rel, spin_hamiltonian};
use magnonqed::afm_modes::*;
use magnonqed::error::Error;
use magnonqed::hybrid_response::*;
use magnonqed::io::{self, ExperimentConfig};
use magnonqed::saturation::*;
use magnonqed::specfit::*;
use magnonqed::spin_levels::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Field (T) at which the two-sublattice model with the default magnet
/// parameters becomes fully aligned along `a`; regression constant.
const SATURATION_FIELD_T: f64 = 1.164;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn load(name: &str) -> ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).expect("config loads")
}

fn cooperativity_identity() -> Outcome {
    let cfg = load("sample1.json");
    let start = Instant::now();
    let map = cfg.simulate().map_err(|e| e.to_string())?;
    let e = extract_coupling(&map, (140.0, 230.0)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let grid = (map.b0_axis_mt.len(), map.f_axis_ghz.len());
    check(grid == (200, 400), || format!("grid {grid:?}"))?;
    check((e.cooperativity / 4.5 - 1.0).abs() <= 0.15, || format!("c = {:.3}", e.cooperativity))?;
    check(elapsed < 10.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "c = {:.3} (G {:.1}, κ {:.1}, γ {:.1} MHz) in {:.2} s",
        e.cooperativity, e.g_mhz, e.kappa_mhz, e.gamma_mhz, elapsed
    ))
}

fn splitting_law() -> Outcome {
    let mut worst: f64 = 0.0;
    for (g, ke, ki, ge, gi) in [(130.0, 8.0, 5.0, 2.0, 11.0), (80.0, 3.0, 5.0, 1.0, 6.0), (200.0, 10.0, 10.0, 4.0, 16.0)] {
        let cp = CouplingParams {
            g,
            kappa_e: ke,
            kappa_i: ki,
            gamma_e: ge,
            gamma_i: gi,
            include_line_crosstalk: true,
        };
        check(cp.kappa() <= g / 10.0 && cp.gamma() <= g / 10.0, || "linewidths too large".into())?;
        let f: Vec<f64> = (0..4001).map(|k| 24.5 + 1e-3 * 0.25 * k as f64).collect();
        let s = ModeSet::pair(25.0, 25.0, &cp).s21_trace(&f).map_err(|e| e.to_string())?;
        let t = Trace::new(f, s.iter().map(|z| z.norm()).collect()).map_err(|e| e.to_string())?;
        let (a, b) = fit_double_dip(&t, None).map_err(|e| e.to_string())?;
        let sep = (b.f_m_ghz - a.f_m_ghz) * 1e3;
        worst = worst.max((sep / (2.0 * g) - 1.0).abs());
    }
    check(worst < 0.01, || format!("worst deviation {worst:.2e}"))?;
    Ok(format!("worst |Δf/2G − 1| = {worst:.2e}"))
}

fn closed_loop_recovery() -> Outcome {
    let mut cases = Vec::new();
    for g in [60.0, 130.0, 250.0] {
        for kr in [0.25, 0.6, 1.0] {
            for gr in [0.1, 0.3, 0.6] {
                cases.push((g, kr * g, gr * g));
            }
        }
    }
    let results: Vec<(f64, f64, f64, Result<f64, String>)> = cases
        .par_iter()
        .map(|&(g, k, gm)| {
            let cp = CouplingParams {
                g,
                kappa_e: 0.4 * k,
                kappa_i: 0.6 * k,
                gamma_e: gm / 3.0,
                gamma_i: 2.0 * gm / 3.0,
                include_line_crosstalk: true,
            };
            let (map, window) = common::linear_crossing_map(&cp, 1200);
            let r = extract_coupling_magnitude(&map, window).map(|e| e.g_mhz).map_err(|e| e.to_string());
            (g, k, gm, r)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (g, k, gm, r) in &results {
        let got = r.clone().map_err(|e| format!("G={g} κ={k} γ={gm}: {e}"))?;
        let err = (got / g - 1.0).abs();
        check(err < 0.05, || format!("G={g} κ={k} γ={gm}: recovered {got:.3}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{} cases, worst relative G error {worst:.2e}", results.len()))
}

fn saturation_anchors() -> Outcome {
    let sp = SaturationParams {
        alpha: 0.25,
        gamma_par: 5.0,
        gamma_e: 10.0,
        gamma_i: 20.0,
    };
    let low = visibility(0.0, &sp).map_err(|e| e.to_string())?;
    check(low == sp.gamma_e / sp.gamma(), || format!("Υ(0) = {low}"))?;
    // 4αP = γ_i γ∥ at P = 100 mW for these values, exactly representable.
    let half = visibility(100.0, &sp).map_err(|e| e.to_string())?;
    check(half == low / 2.0, || format!("Υ at half saturation = {half}, want {}", low / 2.0))?;

    let cp = CouplingParams::sample1();
    let alpha = calibrate_alpha(cp.g, cp.kappa(), cp.gamma(), 1.0, 5.0, cp.gamma_i).map_err(|e| e.to_string())?;
    let cal = SaturationParams { alpha, ..sp };
    let p = threshold_power(cp.g, cp.kappa(), cp.gamma(), &cal).map_err(|e| e.to_string())?.milliwatts();
    check((p - 1.0).abs() < 1e-6, || format!("threshold {p} mW"))?;
    Ok(format!("Υ(0) = {low}, half-point exact, threshold {p:.12} mW (α = {alpha:.4} MHz²/mW)"))
}

fn chiral_suppression() -> Outcome {
    let mag = MagnetParams::default();
    let lh = load("sample2_lh.json");
    let ac = load("sample2_acoustic.json");
    let reference = lh.chiral_reference.ok_or("LH config lacks a chiral reference")?;
    // Projection of the LH mode at its crossing, relative to the acoustic one.
    let field = FieldConfig::from_mt(92.0, lh.field_sweep.theta_deg);
    let modes = modes_at(&mag, &field).map_err(|e| e.to_string())?;
    let mode = find_branch(&modes, Branch::Acoustic).ok_or("missing branch")?;
    check(mode.chirality == Chirality::LeftHanded, || format!("mode is {:?}", mode.chirality))?;
    let spins = &lh.spins[0];
    let factor = chiral_factor(&mode_rf_field(mode).map_err(|e| e.to_string())?, spins, &field, &reference, &mag)
        .map_err(|e| e.to_string())?;
    check((0.4..=0.6).contains(&factor), || format!("chiral factor {factor:.3}"))?;

    let lh_map = lh.simulate().map_err(|e| e.to_string())?;
    let lh_result = extract_coupling(&lh_map, (40.0, 160.0));
    check(matches!(lh_result, Err(Error::CrossingNotResolved(_))), || format!("LH map: {lh_result:?}"))?;
    let ac_map = ac.simulate().map_err(|e| e.to_string())?;
    let e = extract_coupling(&ac_map, (190.0, 310.0)).map_err(|e| format!("acoustic map: {e}"))?;
    check(e.g_mhz > (e.kappa_mhz + e.gamma_mhz) / 4.0, || format!("acoustic {e:?}"))?;
    Ok(format!(
        "LH factor {factor:.3}; LH map unresolved; acoustic map resolved with G = {:.1} MHz at {:.1} mT",
        e.g_mhz, e.crossing_field_mt
    ))
}

fn dark_state() -> Outcome {
    let mag = MagnetParams::default();
    let cfg = load("sample2_acoustic.json");
    let spins = &cfg.spins[0];
    let cp = cfg.coupling;
    let mut scan = Vec::new();
    for k in 0..241 {
        let b = 190.0 + 0.5 * k as f64;
        let field = FieldConfig::from_mt(b, cfg.field_sweep.theta_deg);
        let modes = modes_at(&mag, &field).map_err(|e| e.to_string())?;
        let wm = find_branch(&modes, Branch::Acoustic).ok_or("missing branch")?.frequency_ghz;
        let d = qubit_gap(spins, b).map_err(|e| e.to_string())?;
        let br = polariton_branches(wm, d, &cp).map_err(|e| e.to_string())?;
        scan.push((b, (d - wm) * 1e3, br));
    }
    let crossing = scan
        .windows(2)
        .find(|w| w[0].1.signum() != w[1].1.signum())
        .map(|w| w[0].0)
        .ok_or("no crossing in scan")?;
    for branch in 0..2 {
        let other = 1 - branch;
        let dark = scan
            .iter()
            .min_by(|a, b| (a.2[branch].brightness / a.2[other].brightness).total_cmp(&(b.2[branch].brightness / b.2[other].brightness)))
            .unwrap();
        let ratio = dark.2[branch].brightness / dark.2[other].brightness;
        if ratio >= 0.05 {
            continue;
        }
        let bright = scan
            .iter()
            .max_by(|a, b| a.2[branch].brightness.total_cmp(&b.2[branch].brightness))
            .unwrap();
        let dark_side = (dark.0 - crossing).signum();
        let bright_side = (bright.0 - crossing).signum();
        check(dark_side != bright_side, || "dark and bright points on the same side".into())?;
        let name = if branch == 0 { "lower" } else { "upper" };
        return Ok(format!(
            "{name} branch dark ({:.1}% of the other) at {:.1} mT, detuning {:+.0} MHz; brightest at {:.1} mT; crossing {:.1} mT",
            100.0 * ratio,
            dark.0,
            dark.1,
            bright.0,
            crossing
        ));
    }
    Err("no branch falls below 5% brightness".into())
}

fn afm_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let h_a = rng.random_range(0.05..0.8);
        let mag = MagnetParams {
            h_e: rng.random_range(0.1..1.0),
            h_a,
            h_c: rng.random_range(h_a..2.5),
            g: rng.random_range(1.9..2.1),
        };
        let b_neel = rng.random_range(0.0..0.5) * (mag.h_a * mag.h_e).sqrt().min(mag.h_e);
        let b_sat_a = (mag.h_a + 2.0 * mag.h_e) * rng.random_range(1.05..1.5);
        let b_sat_b = (2.0 * mag.h_e + mag.h_c) * rng.random_range(1.05..1.5);
        let cases = [
            (FieldConfig::new(0.0, 0.0), afmr::zero_field(&mag)),
            (FieldConfig::new(b_neel, 0.0), afmr::easy_axis(&mag, b_neel)),
            (FieldConfig::new(b_sat_a, 90.0), afmr::saturated_a(&mag, b_sat_a)),
            (FieldConfig::new(b_sat_b, 0.0), afmr::saturated_b(&mag, b_sat_b)),
        ];
        for (field, want) in cases {
            let modes = modes_at(&mag, &field).map_err(|e| e.to_string())?;
            for k in 0..2 {
                worst = worst.max(rel(modes[k].frequency_ghz, want[k]));
            }
        }
        // Energy gradient against central differences at random moments.
        let chain = MacrospinChain::two_sublattice(&mag, FieldConfig::new(rng.random_range(0.0..1.5), rng.random_range(0.0..90.0)).vector());
        let m: Vec<V3> = (0..2)
            .map(|_| V3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize())
            .collect();
        let d: Vec<V3> = (0..2)
            .map(|_| V3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let h = 1e-5;
        let shift = |s: f64| m.iter().zip(&d).map(|(a, b)| a + b * s).collect::<Vec<_>>();
        let fd = (chain.energy(&shift(h)) - chain.energy(&shift(-h))) / (2.0 * h);
        let an: f64 = chain.gradient(&m).iter().zip(&d).map(|(g, v)| g.dot(v)).sum();
        check((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), || format!("gradient {an} vs finite difference {fd}"))?;
    }
    check(worst < 1e-6, || format!("worst relative AFMR deviation {worst:.2e}"))?;
    Ok(format!("400 collinear cases, worst relative deviation {worst:.2e}; gradients match"))
}

fn saturation_field() -> Outcome {
    let mag = MagnetParams::default();
    let saturated = |b: f64| -> Result<bool, String> {
        let field = FieldConfig::new(b, 90.0);
        Ok(equilibrium(&mag, &field).map_err(|e| e.to_string())?.is_saturated(&field, 1e-12))
    };
    let (mut lo, mut hi) = (0.1, 3.0);
    check(!saturated(lo)? && saturated(hi)?, || "no transition in 0.1..3 T".into())?;
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if saturated(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    check((0.7..=1.3).contains(&hi), || format!("transition at {hi} T"))?;
    check((hi - SATURATION_FIELD_T).abs() < 1e-5, || format!("transition moved: {hi} T vs recorded {SATURATION_FIELD_T} T"))?;
    Ok(format!("fully aligned above {hi:.6} T (recorded {SATURATION_FIELD_T} T)"))
}

fn spin_level_properties() -> Outcome {
    for s in [0.5, 1.5, 2.5, 3.5] {
        let e = energy_levels(&SpinEnsembleParams { s, ..Default::default() }, 0.0)
            .map_err(|e| e.to_string())?
            .energies;
        for pair in e.chunks(2) {
            check((pair[1] - pair[0]).abs() < 1e-9, || format!("S={s}: {e:?}"))?;
        }
    }
    let free = SpinEnsembleParams {
        s: 0.5,
        d_ghz: 0.0,
        e_ghz: 0.0,
        ..Default::default()
    };
    let slope = (qubit_gap(&free, 1000.0).map_err(|e| e.to_string())? - qubit_gap(&free, 0.0).map_err(|e| e.to_string())?) / 1.0;
    check((slope - 27.99).abs() < 5e-3, || format!("slope {slope}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(-3.0..3.0);
        let p = SpinEnsembleParams {
            s: rng.random_range(1..=7) as f64 / 2.0,
            d_ghz: d,
            e_ghz: rng.random_range(0.0..1.0) * d.abs() / 3.0,
            g: rng.random_range(1.8..2.2),
            phi_deg: rng.random_range(0.0..360.0),
            ..Default::default()
        };
        let b = rng.random_range(0.0..1000.0);
        let got = energy_levels(&p, b).map_err(|e| e.to_string())?.energies;
        let want = jacobi_eigenvalues(spin_hamiltonian(&p, b));
        for (a, w) in got.iter().zip(&want) {
            worst = worst.max((a - w).abs());
        }
    }
    check(worst < 1e-9, || format!("worst level deviation {worst:.2e} GHz"))?;
    Ok(format!("Kramers pairs degenerate, slope {slope:.4} GHz/T, 1000 draws within {worst:.1e} GHz"))
}

fn determinism_and_formats() -> Outcome {
    let mut cfg = load("sample1.json");
    cfg.stacking = Some(StackingConfig {
        n_layers: 6,
        fault_probability: 0.3,
        fault_coupling_scale: -0.5,
        seed: 0,
    });
    cfg.field_sweep.steps = 40;
    cfg.seed = 77;
    let a = cfg.simulate().map_err(|e| e.to_string())?;
    let b = cfg.simulate().map_err(|e| e.to_string())?;
    let csv_a = io::real_map_to_csv(&a.magnitude()).map_err(|e| e.to_string())?;
    let csv_b = io::real_map_to_csv(&b.magnitude()).map_err(|e| e.to_string())?;
    check(csv_a == csv_b, || "CSV differs between identical runs".into())?;
    let json_a = io::to_json(io::SPECTRUM_KIND, &a).map_err(|e| e.to_string())?;
    check(json_a == io::to_json(io::SPECTRUM_KIND, &b).map_err(|e| e.to_string())?, || "JSON differs".into())?;

    let back = io::real_map_from_csv(&csv_a).map_err(|e| e.to_string())?;
    check(back.values == a.magnitude().values && back.f_axis_ghz == a.f_axis_ghz && back.b0_axis_mt == a.b0_axis_mt, || {
        "CSV round trip lost precision".into()
    })?;
    let back: SpectrumMap = io::from_json(io::SPECTRUM_KIND, &json_a).map_err(|e| e.to_string())?;
    check(back.s21 == a.s21 && back.metadata == a.metadata, || "JSON round trip lost precision".into())?;
    let phase_csv = io::real_map_to_csv(&a.phase()).map_err(|e| e.to_string())?;
    let phase = io::real_map_from_csv(&phase_csv).map_err(|e| e.to_string())?;
    check(phase.values == a.phase().values, || "phase CSV round trip lost precision".into())?;
    let cfg_json = serde_json::to_string(&cfg).map_err(|e| e.to_string())?;
    check(ExperimentConfig::from_json(&cfg_json).map_err(|e| e.to_string())? == cfg, || "config round trip".into())?;
    let extract = CouplingExtract::from_rates(130.1, 125.3, 29.7, 180.2, 270.9);
    let text = io::to_json("coupling_extract", &extract).map_err(|e| e.to_string())?;
    let back: CouplingExtract = io::from_json("coupling_extract", &text).map_err(|e| e.to_string())?;
    check(back == extract, || "extract round trip".into())?;
    Ok(format!("{} bytes of CSV and {} of JSON reproduced and round-tripped", csv_a.len(), json_a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("cooperativity identity", cooperativity_identity),
        ("splitting law", splitting_law),
        ("closed-loop G recovery", closed_loop_recovery),
        ("saturation anchors", saturation_anchors),
        ("chiral suppression", chiral_suppression),
        ("dark state", dark_state),
        ("AFM oracle equivalence", afm_oracles),
        ("saturation field", saturation_field),
        ("spin-level properties", spin_level_properties),
        ("determinism and formats", determinism_and_formats),
    ];
    // Panics are reported as failures of their criterion.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("AC{:<2} PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("AC{:<2} FAIL  {name}: {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
