//! Command-line front end: `simulate`, `analyze`, `sweep`, `calibrate`, `infer`.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric or fit error, 4 inference
//! flag (bracket or insensitivity).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::analyze_partial;
use crate::calibration::{fit_bfield, fit_light_shift, fit_no_bath_trace, fit_release_curve, fit_zeeman};
use crate::config::RunConfig;
use crate::engine::synthesize_fringe;
use crate::error::{Error, Result};
use crate::inference::{infer_density, infer_temperature, Measurement, ObservedSignals, Posterior1D};
use crate::io::{self, sha256_hex, SCHEMA_VERSION};
use crate::phys::{units, KB};

#[derive(Debug, Parser)]
#[command(name = "ramsey-probe", version, about = "Ramsey-probe simulation and analysis of a thermal bath")]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// overrides the configured seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// starting order of both quadrature dimensions
    #[arg(long, global = true)]
    pub quadrature_order: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a fringe grid from the configured bath and model
    Simulate,
    /// Fit a fringe CSV: per-time fringes, visibility decay, phase slope
    Analyze {
        /// fringe CSV (`t_ms,phase_deg,p,p_err`)
        input: PathBuf,
        /// background detuning to subtract; default from the sidecar or config
        #[arg(long, allow_hyphen_values = true)]
        background_detuning_hz: Option<f64>,
    },
    /// Synthesize and analyze over the configured sweep values
    Sweep,
    /// Run one calibration fit and append it to the calibration ledger
    Calibrate {
        kind: CalibrationKind,
        /// CSV with columns `x,y[,y_err]`
        input: PathBuf,
    },
    /// Invert the forward pipeline for density or temperature
    Infer {
        kind: InferenceKind,
        #[arg(long, allow_hyphen_values = true)]
        delta_hz: Option<f64>,
        #[arg(long)]
        delta_err_hz: Option<f64>,
        #[arg(long)]
        t2_ms: Option<f64>,
        #[arg(long)]
        t2_err_ms: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    /// x: coil field (mG), y: transferred population
    Bfield,
    /// x: trap power (W), y: shift (Hz)
    Lightshift,
    /// x: field (mG), y: shift (Hz)
    Zeeman,
    /// x: trap depth E0/k_B (nK), y: remaining fraction
    Release,
    /// x: time (ms), y: detected atom number
    Nobath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceKind {
    Density,
    Temperature,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) | Error::Fit { .. } | Error::UnboundedTemperature(_) => 3,
        Error::Bracket(_) | Error::Insensitive(_) => 4,
        _ => 2,
    }
}

/// Parses `std::env::args`, runs the command, returns the exit code.
pub fn run_from_env() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => match run(&cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // already initialized when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(order) = cli.quadrature_order {
        config.quadrature.energy_order = order;
        config.quadrature.density_order = order;
        config.quadrature.max_order = config.quadrature.max_order.max(order);
    }
    config.to_orders().validate()?;
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Simulate => simulate(&config, &cli.out),
        Command::Analyze {
            input,
            background_detuning_hz,
        } => analyze(&config, &cli.out, input, *background_detuning_hz),
        Command::Sweep => sweep(&config, &cli.out),
        Command::Calibrate { kind, input } => calibrate(&config, &cli.out, *kind, input),
        Command::Infer {
            kind,
            delta_hz,
            delta_err_hz,
            t2_ms,
            t2_err_ms,
        } => infer(&config, &cli.out, *kind, (*delta_hz, *delta_err_hz), (*t2_ms, *t2_err_ms)),
    }
}

fn simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let protocol = config.to_protocol()?;
    let bath = config.to_bath()?;
    let model = config.to_model()?;
    let noise = config.to_noise(config.seed);
    let series = synthesize_fringe(&protocol, &bath, &model, &noise, &config.to_orders())?;
    let csv = io::fringe_csv(&series);
    fs::write(out.join("fringe.csv"), &csv)?;
    let meta = json!({
        "schema_version": SCHEMA_VERSION,
        "csv_schema_version": SCHEMA_VERSION,
        "artifact": "fringe",
        "scenario": config.scenario,
        "config_hash": config.hash(),
        "csv_sha256": sha256_hex(csv.as_bytes()),
        "seed": config.seed,
        "background_detuning_hz": units::to_hz(protocol.effective_background_detuning()),
        "protocol": protocol,
        "bath": bath,
        "model": model,
        "noise": noise,
        "quadrature": config.to_orders(),
    });
    io::write_json(&out.join("fringe.meta.json"), &meta)
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn analyze(config: &RunConfig, out: &Path, input: &Path, background_hz: Option<f64>) -> Result<()> {
    let bytes = fs::read(input)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse("input is not UTF-8".into()))?;
    let series = io::parse_fringe_csv(&text)?;
    let sidecar: Option<Value> = fs::read_to_string(sidecar_path(input))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let configured = units::to_hz(config.to_protocol()?.effective_background_detuning());
    let (background, source) = match (background_hz, &sidecar) {
        (Some(b), _) => (b, "command line"),
        (None, Some(meta)) => match meta.get("background_detuning_hz").and_then(Value::as_f64) {
            Some(b) => (b, "sidecar"),
            None => (configured, "config"),
        },
        (None, None) => (configured, "config"),
    };
    let result = analyze_partial(&series, units::hz(background));
    let summary = json!({
        "delta_hz": result.slope.as_ref().map(|s| units::to_hz(s.delta)),
        "delta_err_hz": result.slope.as_ref().map(|s| units::to_hz(s.delta_err)),
        "t2_ms": result.decay.as_ref().map(|d| finite_or_null(d.t2 / units::MILLISECOND)),
        "t2_err_ms": result.decay.as_ref().map(|d| finite_or_null(d.t2_err / units::MILLISECOND)),
        "no_decay": result.decay.as_ref().map(|d| d.no_decay),
    });
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "artifact": "analysis",
        "input_sha256": sha256_hex(&bytes),
        "input_config_hash": sidecar.as_ref().and_then(|m| m.get("config_hash")).cloned(),
        "config_hash": config.hash(),
        "background_detuning_hz": background,
        "background_detuning_source": source,
        "summary": summary,
        "warning_count": result.warnings.len(),
        "result": result,
    });
    io::write_json(&out.join("analysis.json"), &doc)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn sweep(config: &RunConfig, out: &Path) -> Result<()> {
    let plan = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep: missing [sweep] table".into()))?;
    if plan.values.len() < 2 {
        return Err(Error::Config("sweep.values: need at least 2 values".into()));
    }
    let protocol = config.to_protocol()?;
    let model = config.to_model()?;
    let base = config.to_bath()?;
    let mut csv = format!("{},delta_hz,delta_err_hz,t2_ms,t2_err_ms\n", plan.parameter);
    for (k, &value) in plan.values.iter().enumerate() {
        let bath = match plan.parameter.as_str() {
            "temperature_nK" => base.with_temperature(value * units::NANOKELVIN)?,
            _ => base.with_peak_density(value * units::PER_CM3)?,
        };
        let noise = config.to_noise(config.seed.wrapping_add(k as u64));
        let series = synthesize_fringe(&protocol, &bath, &model, &noise, &config.to_orders())?;
        let result = analyze_partial(&series, protocol.effective_background_detuning());
        let slope = result
            .slope
            .ok_or_else(|| Error::Numeric(format!("sweep value {value}: phase slope fit failed")))?;
        let decay = result
            .decay
            .ok_or_else(|| Error::Numeric(format!("sweep value {value}: decay fit failed")))?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            value,
            units::to_hz(slope.delta),
            units::to_hz(slope.delta_err),
            decay.t2 / units::MILLISECOND,
            decay.t2_err / units::MILLISECOND,
        ));
    }
    fs::write(out.join("sweep.csv"), &csv)?;
    let meta = json!({
        "schema_version": SCHEMA_VERSION,
        "csv_schema_version": SCHEMA_VERSION,
        "artifact": "sweep",
        "parameter": plan.parameter,
        "config_hash": config.hash(),
        "csv_sha256": sha256_hex(csv.as_bytes()),
    });
    io::write_json(&out.join("sweep.meta.json"), &meta)
}

/// Ledger timestamp: `SOURCE_DATE_EPOCH` when set, otherwise the input
/// file's modification time, so reruns on the same file agree.
fn ledger_timestamp(input: &Path) -> Result<u64> {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("SOURCE_DATE_EPOCH: cannot parse {v:?}")));
    }
    let modified = fs::metadata(input)?.modified()?;
    Ok(modified
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0))
}

fn calibrate(config: &RunConfig, out: &Path, kind: CalibrationKind, input: &Path) -> Result<()> {
    let bytes = fs::read(input)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse("input is not UTF-8".into()))?;
    let rows = io::parse_xy_csv(&text)?;
    let xy = |fx: f64, fy: f64| -> Vec<(f64, f64)> { rows.iter().map(|r| (r.x * fx, r.y * fy)).collect() };
    let result: Value = match kind {
        CalibrationKind::Bfield => {
            let fit = fit_bfield(
                &xy(units::MILLIGAUSS, 1.0),
                units::hz(config.protocol.rabi_frequency_Hz),
                units::hz(config.calibration.microwave_frequency_Hz),
            )?;
            json!({
                "omega_bg_hz": units::to_hz(fit.omega_bg),
                "omega_bg_err_hz": units::to_hz(fit.omega_bg_err),
                "b_coil_mG": fit.b_coil / units::MILLIGAUSS,
                "b_coil_err_mG": fit.b_coil_err / units::MILLIGAUSS,
                "fit": json!(fit),
            })
        }
        CalibrationKind::Lightshift => {
            let fit = fit_light_shift(&xy(1.0, units::hz(1.0)))?;
            json!({
                "slope_hz_per_w": units::to_hz(fit.fit.slope),
                "slope_err_hz_per_w": units::to_hz(fit.fit.slope_err),
                "intercept_hz": units::to_hz(fit.fit.intercept),
                "theory_deviation": fit.theory_deviation,
                "theory_flag": fit.theory_flag,
            })
        }
        CalibrationKind::Zeeman => {
            let fit = fit_zeeman(&xy(units::MILLIGAUSS, units::hz(1.0)))?;
            let per_g2 = units::GAUSS * units::GAUSS;
            json!({
                "a_hz_per_g2": units::to_hz(fit.a) * per_g2,
                "a_err_hz_per_g2": units::to_hz(fit.a_err) * per_g2,
                "c_hz": units::to_hz(fit.c),
                "c_err_hz": units::to_hz(fit.c_err),
                "theory_hz_per_g2": units::to_hz(fit.theory) * per_g2,
            })
        }
        CalibrationKind::Release => {
            let fit = fit_release_curve(&xy(KB * units::NANOKELVIN, 1.0))?;
            json!({
                "temperature_nK": fit.temperature / units::NANOKELVIN,
                "temperature_err_nK": fit.temperature_err / units::NANOKELVIN,
                "fit": json!(fit),
            })
        }
        CalibrationKind::Nobath => {
            let fit = fit_no_bath_trace(&xy(units::MILLISECOND, 1.0))?;
            json!({
                "detuning_hz": units::to_hz(fit.detuning),
                "detuning_err_hz": units::to_hz(fit.detuning_err),
                "t2_ms": fit.t2 / units::MILLISECOND,
                "t2_err_ms": fit.t2_err / units::MILLISECOND,
                "fit": json!(fit),
            })
        }
    };

    let ledger_path = out.join("calibration.json");
    let mut ledger: Value = match fs::read_to_string(&ledger_path) {
        Ok(s) => serde_json::from_str(&s)
            .map_err(|e| Error::Parse(format!("{}: {e}", ledger_path.display())))?,
        Err(_) => json!({ "schema_version": SCHEMA_VERSION, "artifact": "calibration", "entries": [] }),
    };
    let input_hash = sha256_hex(&bytes);
    let config_hash = config.hash();
    let entries = ledger
        .get_mut("entries")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::Parse("calibration ledger has no entries array".into()))?;
    let kind_name = serde_json::to_value(kind).expect("kind serializes");
    let seen = entries.iter().any(|e| {
        e.get("kind") == Some(&kind_name)
            && e.get("input_sha256").and_then(Value::as_str) == Some(input_hash.as_str())
            && e.get("config_hash").and_then(Value::as_str) == Some(config_hash.as_str())
    });
    if seen {
        return Ok(());
    }
    entries.push(json!({
        "kind": kind_name,
        "timestamp": ledger_timestamp(input)?,
        "input_sha256": input_hash,
        "config_hash": config_hash,
        "result": result,
    }));
    io::write_json(&ledger_path, &ledger)
}

fn measurement(value: Option<f64>, err: Option<f64>, scale: f64) -> Result<Option<Measurement>> {
    match (value, err) {
        (None, None) => Ok(None),
        (None, Some(_)) => Err(Error::Config("an uncertainty was given without its value".into())),
        (Some(v), None) => Ok(Some(Measurement::exact(v * scale))),
        (Some(v), Some(e)) => Ok(Some(Measurement::with_sigma(v * scale, e * scale))),
    }
}

fn infer(
    config: &RunConfig,
    out: &Path,
    kind: InferenceKind,
    delta: (Option<f64>, Option<f64>),
    t2: (Option<f64>, Option<f64>),
) -> Result<()> {
    let observed = ObservedSignals {
        delta: measurement(delta.0, delta.1, units::hz(1.0))?,
        t2: measurement(t2.0, t2.1, units::MILLISECOND)?,
    };
    let forward = config.forward_model()?;
    let (outcome, unit_name, unit) = match kind {
        InferenceKind::Density => (
            infer_density(&observed, config.bath.temperature_nK * units::NANOKELVIN, &forward, config.density_bracket()),
            "per_cm3",
            units::PER_CM3,
        ),
        InferenceKind::Temperature => {
            let t2 = observed
                .t2
                .ok_or_else(|| Error::Config("temperature inference needs --t2-ms".into()))?;
            if observed.delta.is_some() {
                return Err(Error::Config("temperature inference uses T2 only".into()));
            }
            (
                infer_temperature(t2, config.bath.peak_density_per_cm3 * units::PER_CM3, &forward, config.temperature_bracket()),
                "nK",
                units::NANOKELVIN,
            )
        }
    };
    let path = out.join("inference.json");
    let header = |status: &str| {
        json!({
            "schema_version": SCHEMA_VERSION,
            "artifact": "inference",
            "kind": kind,
            "status": status,
            "config_hash": config.hash(),
            "observed": observed,
            "unit": unit_name,
        })
    };
    match outcome {
        Ok(post) => {
            let mut doc = header("ok");
            let scaled = scaled_posterior(&post, unit);
            doc["estimate"] = json!(scaled.estimate);
            doc["interval"] = json!([scaled.lower, scaled.upper]);
            doc["flags"] = json!(post.flags);
            doc["evaluations"] = json!(post.evaluations);
            doc["curve"] = json!(scaled.curve);
            io::write_json(&path, &doc)
        }
        Err(e @ (Error::Bracket(_) | Error::Insensitive(_))) => {
            let mut doc = header(match e {
                Error::Bracket(_) => "bracket",
                _ => "insensitive",
            });
            doc["detail"] = json!(e.to_string());
            io::write_json(&path, &doc)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn scaled_posterior(p: &Posterior1D, unit: f64) -> Posterior1D {
    Posterior1D {
        estimate: p.estimate / unit,
        lower: p.lower / unit,
        upper: p.upper / unit,
        curve: p
            .curve
            .iter()
            .map(|c| crate::inference::CurvePoint {
                parameter: c.parameter / unit,
                misfit: c.misfit,
            })
            .collect(),
        flags: p.flags.clone(),
        evaluations: p.evaluations,
    }
}
