//! `magnonqed` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid config or input, 3 solver failure,
//! 4 nothing to fit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};
use serde::Serialize;

use magnonqed::afm_modes::{self, find_branch, Branch, Chirality, FieldConfig};
use magnonqed::error::Error;
use magnonqed::hybrid_response::point_seed;
use magnonqed::io::{self, ExperimentConfig};
use magnonqed::saturation;
use magnonqed::specfit::{self, LorentzianFit, Trace};
use magnonqed::spin_levels;
use magnonqed::units::{dbm_to_mw, mw_to_dbm};

#[derive(Parser)]
#[command(name = "magnonqed", version, about = "Hybrid spin–magnon transmission spectra: simulate and fit")]
struct Cli {
    /// Worker threads for per-field parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-simulate a transmission map.
    Simulate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Drive power at the sample, dBm (needs a saturation section).
        #[arg(long, allow_hyphen_values = true)]
        power_dbm: Option<f64>,
        /// Also write the phase companion `<out>.phase.csv`.
        #[arg(long)]
        phase: bool,
    },
    /// Fit Lorentzian dips to every trace of a map.
    FitDips {
        /// Map file (CSV or JSON).
        map: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fit two dips on a shared baseline.
        #[arg(long)]
        double: bool,
        /// Frequency window F1:F2 in GHz.
        #[arg(long, value_parser = parse_range)]
        window: Option<(f64, f64)>,
        /// Only fit the trace nearest to this field, mT.
        #[arg(long)]
        field_mt: Option<f64>,
    },
    /// Spin energy levels and qubit gap over the config field sweep.
    SpinLevels {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Magnon branches over the config field sweep.
    MagnonModes {
        #[command(flatten)]
        common: ConfigArgs,
        /// Report every mode of the stacking chain instead of the two-sublattice pair.
        #[arg(long)]
        stacking: bool,
    },
    /// Visibility and effective coupling versus drive power.
    SaturationCurve {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, default_value_t = -30.0, allow_hyphen_values = true)]
        dbm_start: f64,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        dbm_stop: f64,
        #[arg(long, default_value_t = 101)]
        steps: usize,
    },
    /// Coupling, linewidths and cooperativity from an anticrossing.
    ExtractCoupling {
        map: PathBuf,
        /// Field window B1:B2 in mT.
        #[arg(long, value_parser = parse_range)]
        field_window: (f64, f64),
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    if !(lo < hi) {
        return Err(format!("range must satisfy LO < HI, got {s:?}"));
    }
    Ok((lo, hi))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation { .. } | Error::Parse(_) | Error::Io { .. } => 2,
        Error::NoDipFound { .. } | Error::DegenerateFit(_) | Error::CrossingNotResolved(_) => 4,
        _ => 3,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(common: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    info!("loaded {}", common.config.display());
    Ok(cfg)
}

fn chirality(c: Chirality) -> &'static str {
    match c {
        Chirality::LeftHanded => "LH",
        Chirality::RightHanded => "RH",
        Chirality::Linear => "linear",
    }
}

#[derive(Serialize)]
struct TraceFits {
    #[serde(rename = "b0_mT")]
    b0_mt: f64,
    fits: Vec<LorentzianFit>,
}

#[derive(Serialize)]
struct DipReport {
    double: bool,
    traces: Vec<TraceFits>,
    skipped: usize,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            common,
            format,
            power_dbm,
            phase,
        } => {
            let mut cfg = load(&common)?;
            if power_dbm.is_some() {
                cfg.power_dbm = power_dbm;
            }
            let map = cfg.simulate()?;
            match (format, common.out.as_deref()) {
                (Format::Json, out) => emit(out, &io::to_json(io::SPECTRUM_KIND, &map)?),
                (Format::Csv, Some(path)) => io::write_spectrum_csv(path, &map, phase),
                (Format::Csv, None) => {
                    if phase {
                        return Err(Error::validation("phase", "the phase companion needs --out"));
                    }
                    emit(None, &io::real_map_to_csv(&map.magnitude())?)
                }
            }
        }
        Command::FitDips {
            map,
            out,
            double,
            window,
            field_mt,
        } => {
            let m = io::read_magnitude_map(&map)?;
            let rows: Vec<usize> = match field_mt {
                Some(b) => vec![(0..m.b0_axis_mt.len())
                    .min_by(|&i, &j| (m.b0_axis_mt[i] - b).abs().total_cmp(&(m.b0_axis_mt[j] - b).abs()))
                    .expect("validated map has rows")],
                None => (0..m.b0_axis_mt.len()).collect(),
            };
            let mut traces = Vec::new();
            let mut last_err = None;
            let mut skipped = 0;
            for i in rows {
                let trace = Trace::new(m.f_axis_ghz.clone(), m.row(i).to_vec())?;
                let result = if double {
                    let windowed = match window {
                        Some((lo, hi)) => {
                            let keep: Vec<usize> = (0..trace.f_axis_ghz.len())
                                .filter(|&k| (lo..=hi).contains(&trace.f_axis_ghz[k]))
                                .collect();
                            Trace::new(
                                keep.iter().map(|&k| trace.f_axis_ghz[k]).collect(),
                                keep.iter().map(|&k| trace.values[k]).collect(),
                            )?
                        }
                        None => trace,
                    };
                    specfit::fit_double_dip(&windowed, None).map(|(a, b)| vec![a, b])
                } else {
                    specfit::fit_dip(&trace, window).map(|f| vec![f])
                };
                match result {
                    Ok(fits) => traces.push(TraceFits {
                        b0_mt: m.b0_axis_mt[i],
                        fits,
                    }),
                    Err(e @ Error::Validation { .. }) => return Err(e),
                    Err(e) => {
                        debug!("field {} mT: {e}", m.b0_axis_mt[i]);
                        last_err = Some(e);
                        skipped += 1;
                    }
                }
            }
            if traces.is_empty() {
                return Err(last_err.unwrap_or_else(|| Error::DegenerateFit("no traces".into())));
            }
            let report = DipReport { double, traces, skipped };
            emit(out.as_deref(), &io::to_json("dip_fits", &report)?)
        }
        Command::SpinLevels { common } => {
            let cfg = load(&common)?;
            let dim = cfg.spins.iter().map(|s| s.dim()).max().unwrap_or(0);
            let mut header = vec!["b0_mT".to_string(), "domain".to_string(), "qubit_gap_GHz".to_string()];
            header.extend((0..dim).map(|k| format!("E{k}_GHz")));
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut rows = Vec::new();
            for b in cfg.field_sweep.axis() {
                for (d, spin) in cfg.spins.iter().enumerate() {
                    let levels = spin_levels::energy_levels(spin, b)?;
                    let mut row = vec![io::fmt_f64(b), d.to_string(), io::fmt_f64(spin_levels::qubit_gap(spin, b)?)];
                    row.extend(levels.energies.iter().map(|&e| io::fmt_f64(e)));
                    row.resize(header.len(), String::new());
                    rows.push(row);
                }
            }
            emit(common.out.as_deref(), &io::table_to_csv(&header_refs, &rows)?)
        }
        Command::MagnonModes { common, stacking } => {
            let cfg = load(&common)?;
            let theta = cfg.field_sweep.theta_deg;
            let fields = cfg.field_sweep.axis();
            if stacking {
                let st = cfg
                    .map_options()?
                    .stacking
                    .ok_or_else(|| Error::validation("stacking", "--stacking needs a stacking section in the config"))?;
                let mut rows = Vec::new();
                for (i, &b) in fields.iter().enumerate() {
                    let opts = afm_modes::EquilibriumOptions {
                        seed: point_seed(cfg.seed, i),
                        ..Default::default()
                    };
                    let modes = afm_modes::stacking_spectrum_with(&cfg.magnet, &FieldConfig::from_mt(b, theta), &st, &opts)?;
                    for (k, m) in modes.iter().enumerate() {
                        rows.push(vec![io::fmt_f64(b), k.to_string(), io::fmt_f64(m.frequency_ghz), io::fmt_f64(m.weight)]);
                    }
                }
                return emit(
                    common.out.as_deref(),
                    &io::table_to_csv(&["b0_mT", "mode", "f_GHz", "weight"], &rows)?,
                );
            }
            let mut rows = Vec::new();
            for (i, &b) in fields.iter().enumerate() {
                let field = FieldConfig::from_mt(b, theta);
                let opts = afm_modes::EquilibriumOptions {
                    seed: point_seed(cfg.seed, i),
                    ..Default::default()
                };
                let eq = afm_modes::equilibrium_with(&cfg.magnet, &field, &opts)?;
                let modes = afm_modes::linearized_modes(&cfg.magnet, &field, &eq)?;
                let mut row = vec![io::fmt_f64(b)];
                for branch in [Branch::Acoustic, Branch::Optical] {
                    let m = find_branch(&modes, branch).expect("two branches");
                    row.push(io::fmt_f64(m.frequency_ghz));
                    row.push(chirality(m.chirality).to_string());
                    row.push(io::fmt_f64(m.ellipticity));
                }
                rows.push(row);
            }
            let header = [
                "b0_mT",
                "acoustic_GHz",
                "acoustic_chirality",
                "acoustic_ellipticity",
                "optical_GHz",
                "optical_chirality",
                "optical_ellipticity",
            ];
            emit(common.out.as_deref(), &io::table_to_csv(&header, &rows)?)
        }
        Command::SaturationCurve {
            common,
            dbm_start,
            dbm_stop,
            steps,
        } => {
            let cfg = load(&common)?;
            let sp = cfg
                .saturation_params()?
                .ok_or_else(|| Error::validation("saturation", "config has no saturation section"))?;
            if steps < 2 || !(dbm_start < dbm_stop) {
                return Err(Error::validation("dbm range", "need dbm_start < dbm_stop and at least 2 steps"));
            }
            let mut rows = Vec::new();
            for k in 0..steps {
                let dbm = dbm_start + (dbm_stop - dbm_start) * k as f64 / (steps - 1) as f64;
                let p = dbm_to_mw(dbm);
                let n = saturation::equilibrium_fraction(p, &sp)?;
                rows.push(vec![
                    io::fmt_f64(dbm),
                    io::fmt_f64(p),
                    io::fmt_f64(saturation::visibility(p, &sp)?),
                    io::fmt_f64(n),
                    io::fmt_f64(saturation::effective_coupling(cfg.coupling.g, n)?),
                ]);
            }
            info!("alpha = {} MHz^2/mW, threshold = {} dBm", sp.alpha, {
                let t = saturation::threshold_power(cfg.coupling.g, cfg.coupling.kappa(), cfg.coupling.gamma(), &sp);
                t.map(|t| mw_to_dbm(t.milliwatts())).unwrap_or(f64::NAN)
            });
            emit(
                common.out.as_deref(),
                &io::table_to_csv(&["p_dBm", "p_mW", "visibility", "n_fraction", "G_eff_MHz"], &rows)?,
            )
        }
        Command::ExtractCoupling { map, field_window, out } => {
            let m = io::read_magnitude_map(&map)?;
            let extract = specfit::extract_coupling_magnitude(&m, field_window)?;
            emit(out.as_deref(), &io::to_json("coupling_extract", &extract)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAGNONQED_LOG", "warn")).init();
    let cli = Cli::parse();
    let pool = match cli.jobs {
        Some(0) => {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
