//! Calibrations of the bath-free shifts and of the impurity temperature:
//! microwave field spectroscopy, trap light shift, second-order Zeeman shift,
//! release-curve thermometry and the no-bath Ramsey trace.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::engine::no_bath_trace;
use crate::error::{Error, Result};
use crate::fit::{least_squares, linear_least_squares, FitOptions};
use crate::phys::{quadratic_zeeman_coefficient, units, KB};

/// Linear Zeeman conversion of the spectroscopy transition, 0.7 MHz/G, in
/// rad/s per tesla.
pub const LINEAR_ZEEMAN: f64 = 2.0 * PI * 0.7e6 / units::GAUSS;

/// Theoretical light-shift slope, 2 pi x 1104 Hz/W.
pub const LIGHT_SHIFT_THEORY: f64 = 2.0 * PI * 1104.0;

/// Relative deviation from [`LIGHT_SHIFT_THEORY`] that raises the flag.
pub const LIGHT_SHIFT_TOLERANCE: f64 = 0.05;

/// Fraction threshold for release data carrying no temperature scale.
const SATURATED_FRACTION: f64 = 1e-3;

/// Selects the pulse area in the spectroscopy lineshape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lineshape {
    /// `sin^2(0.5 * 2 pi sqrt(W^2 + D^2) / (2 W))`, a pi pulse on resonance
    #[default]
    PiPulse,
    /// Rabi flopping for an explicit pulse duration (s)
    Duration { seconds: f64 },
}

/// Excited-state population after a square pulse, with detuning
/// `D = w_coil + w_bg - w_MW`.
pub fn rabi_lineshape(omega_coil: f64, rabi: f64, omega_bg: f64, omega_mw: f64) -> Result<f64> {
    rabi_lineshape_with(Lineshape::PiPulse, omega_coil, rabi, omega_bg, omega_mw)
}

pub fn rabi_lineshape_with(shape: Lineshape, omega_coil: f64, rabi: f64, omega_bg: f64, omega_mw: f64) -> Result<f64> {
    if !(rabi > 0.0) {
        return Err(Error::Domain(format!("Rabi frequency must be positive, got {rabi}")));
    }
    let d = omega_coil + omega_bg - omega_mw;
    let generalized2 = rabi * rabi + d * d;
    let generalized = generalized2.sqrt();
    let angle = match shape {
        Lineshape::PiPulse => 0.5 * 2.0 * PI * generalized / (2.0 * rabi),
        Lineshape::Duration { seconds } => {
            if !(seconds >= 0.0) {
                return Err(Error::Domain("pulse duration must be nonnegative".into()));
            }
            0.5 * generalized * seconds
        }
    };
    let s = angle.sin();
    Ok(rabi * rabi / generalized2 * s * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BFieldCalibration {
    /// background offset of the transition (rad/s)
    pub omega_bg: f64,
    pub omega_bg_err: f64,
    /// coil field bringing the transition onto the microwave (T)
    pub b_coil: f64,
    pub b_coil_err: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Fits `w_bg` to a spectrum of `(B_coil (T), population)` points.
pub fn fit_bfield(points: &[(f64, f64)], rabi: f64, omega_mw: f64) -> Result<BFieldCalibration> {
    if points.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "field spectroscopy needs >= 5 points, got {}",
            points.len()
        )));
    }
    if !(rabi > 0.0) {
        return Err(Error::Domain(format!("Rabi frequency must be positive, got {rabi}")));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let peak = sorted
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if peak == 0 || peak + 1 == sorted.len() {
        return Err(Error::Range("spectrum peak is not bracketed by the data".into()));
    }
    let init = omega_mw - LINEAR_ZEEMAN * sorted[peak].0;
    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        sorted
            .iter()
            .map(|&(b, y)| Ok(y - rabi_lineshape(LINEAR_ZEEMAN * b, rabi, p[0], omega_mw)?))
            .collect()
    };
    let report = least_squares(residuals, &[init], &FitOptions::default())?;
    let omega_bg = report.params[0];
    Ok(BFieldCalibration {
        omega_bg,
        omega_bg_err: report.sigmas[0],
        b_coil: (omega_mw - omega_bg) / LINEAR_ZEEMAN,
        b_coil_err: report.sigmas[0] / LINEAR_ZEEMAN,
        residual_norm: report.residual_norm(),
        iterations: report.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCalibration {
    pub slope: f64,
    pub slope_err: f64,
    pub intercept: f64,
    pub intercept_err: f64,
    pub chi2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightShiftCalibration {
    pub fit: LinearCalibration,
    /// `|slope - theory| / theory`
    pub theory_deviation: f64,
    pub theory_flag: bool,
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn linear(rows: Vec<Vec<f64>>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<LinearCalibration> {
    let fit = linear_least_squares(&rows, &y, sigma.as_deref())?;
    Ok(LinearCalibration {
        slope: fit.coefficients[1],
        slope_err: fit.sigmas[1],
        intercept: fit.coefficients[0],
        intercept_err: fit.sigmas[0],
        chi2: fit.chi2,
    })
}

/// Straight line through `(P (W), shift (rad/s))`.
pub fn fit_light_shift(points: &[(f64, f64)]) -> Result<LightShiftCalibration> {
    if distinct(points.iter().map(|p| p.0)) < 2 {
        return Err(Error::Domain("light-shift fit needs >= 2 distinct powers".into()));
    }
    let fit = linear(
        points.iter().map(|p| vec![1.0, p.0]).collect(),
        points.iter().map(|p| p.1).collect(),
        None,
    )?;
    let theory_deviation = (fit.slope - LIGHT_SHIFT_THEORY).abs() / LIGHT_SHIFT_THEORY;
    Ok(LightShiftCalibration {
        theory_flag: theory_deviation > LIGHT_SHIFT_TOLERANCE,
        theory_deviation,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeemanCalibration {
    /// curvature `a` (rad/s per T^2)
    pub a: f64,
    pub a_err: f64,
    /// field-independent offset `c`, attributed to the trap light shift (rad/s)
    pub c: f64,
    pub c_err: f64,
    /// coefficient computed from the atomic constants (rad/s per T^2)
    pub theory: f64,
    pub chi2: f64,
}

/// `delta = a B^2 + c` through `(B (T), shift (rad/s))`.
pub fn fit_zeeman(points: &[(f64, f64)]) -> Result<ZeemanCalibration> {
    if distinct(points.iter().map(|p| p.0)) < 3 || distinct(points.iter().map(|p| p.0 * p.0)) < 2 {
        return Err(Error::Domain("Zeeman fit needs >= 3 distinct fields".into()));
    }
    let fit = linear(
        points.iter().map(|p| vec![1.0, p.0 * p.0]).collect(),
        points.iter().map(|p| p.1).collect(),
        None,
    )?;
    Ok(ZeemanCalibration {
        a: fit.slope,
        a_err: fit.slope_err,
        c: fit.intercept,
        c_err: fit.intercept_err,
        theory: quadratic_zeeman_coefficient(),
        chi2: fit.chi2,
    })
}

/// Fraction of a Maxwell-Boltzmann gas with energy below `E0`:
/// `P(3/2, E0 / k_B T)`.
pub fn release_curve(depth: f64, temperature: f64) -> Result<f64> {
    if !(depth >= 0.0) {
        return Err(Error::Domain(format!("trap depth must be nonnegative, got {depth}")));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if depth.is_infinite() {
        return Ok(1.0);
    }
    if depth == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_lr(1.5, depth / (KB * temperature)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseCalibration {
    /// temperature (K)
    pub temperature: f64,
    pub temperature_err: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Median of the Gamma(3/2) distribution.
const GAMMA_HALF_MEDIAN: f64 = 1.182_987;

/// One-parameter fit of the release curve to `(E0 (J), fraction)` points.
pub fn fit_release_curve(points: &[(f64, f64)]) -> Result<ReleaseCalibration> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "release curve needs >= 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.0 >= 0.0) || !p.1.is_finite()) {
        return Err(Error::Domain("release points need E0 >= 0 and finite fractions".into()));
    }
    let positive: Vec<&(f64, f64)> = points.iter().filter(|p| p.0 > 0.0).collect();
    if positive.iter().all(|p| p.1 >= 1.0 - SATURATED_FRACTION) {
        return Err(Error::UnboundedTemperature(
            "all fractions are ~1: temperature is below the resolved scale".into(),
        ));
    }
    if positive.iter().all(|p| p.1 <= SATURATED_FRACTION) {
        return Err(Error::UnboundedTemperature(
            "all fractions are ~0: temperature is above the resolved scale".into(),
        ));
    }
    let nearest_half = positive
        .iter()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .expect("non-empty");
    let init = nearest_half.0 / (GAMMA_HALF_MEDIAN * KB);
    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        points
            .iter()
            .map(|&(e, f)| Ok(f - release_curve(e, p[0])?))
            .collect()
    };
    let options = FitOptions::bounded(vec![1e-6 * init], vec![1e6 * init]);
    let report = least_squares(residuals, &[init], &options)?;
    Ok(ReleaseCalibration {
        temperature: report.params[0],
        temperature_err: report.sigmas[0],
        residual_norm: report.residual_norm(),
        iterations: report.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoBathCalibration {
    pub amplitude: f64,
    pub offset: f64,
    /// magnitude of the background detuning (rad/s); the trace is even in it
    pub detuning: f64,
    pub t2: f64,
    pub amplitude_err: f64,
    pub offset_err: f64,
    pub detuning_err: f64,
    pub t2_err: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Fits the bath-free atom-number trace `(t (s), N)`; the detuning is
/// initialized from the periodogram peak.
pub fn fit_no_bath_trace(points: &[(f64, f64)]) -> Result<NoBathCalibration> {
    if points.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "no-bath trace needs >= 8 points, got {}",
            points.len()
        )));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.iter().any(|p| !(p.0 >= 0.0)) || !sorted.windows(2).all(|w| w[0].0 < w[1].0) {
        return Err(Error::Domain("trace times must be distinct and nonnegative".into()));
    }
    let span = sorted.last().unwrap().0 - sorted[0].0;
    let mean = sorted.iter().map(|p| p.1).sum::<f64>() / sorted.len() as f64;
    let min_dt = sorted
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .fold(f64::INFINITY, f64::min);

    let nyquist = PI / min_dt;
    let steps = 4 * sorted.len().max(64);
    let power = |w: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for &(t, y) in &sorted {
            c += (y - mean) * (w * t).cos();
            s += (y - mean) * (w * t).sin();
        }
        c * c + s * s
    };
    let detuning_init = (1..=steps)
        .map(|k| nyquist * k as f64 / steps as f64)
        .max_by(|a, b| power(*a).total_cmp(&power(*b)))
        .unwrap_or(1.0 / span);

    let first = sorted[0].1;
    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        sorted
            .iter()
            .map(|&(t, y)| Ok(y - no_bath_trace(t, p[0], p[1], p[2], p[3])?))
            .collect()
    };
    let init = [2.0 * (mean - first).max(1e-12), first, detuning_init, 0.5 * span];
    let options = FitOptions::bounded(
        vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, 1e-6 * span],
        vec![f64::INFINITY; 4],
    );
    let report = least_squares(residuals, &init, &options)?;
    let p = &report.params;
    Ok(NoBathCalibration {
        amplitude: p[0],
        offset: p[1],
        detuning: p[2],
        t2: p[3],
        amplitude_err: report.sigmas[0],
        offset_err: report.sigmas[1],
        detuning_err: report.sigmas[2],
        t2_err: report.sigmas[3],
        residual_norm: report.residual_norm(),
        iterations: report.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys::units::*;

    #[test]
    fn lineshape_cases() {
        let w = hz(15.4e3);
        assert_eq!(rabi_lineshape(1e6, w, 0.0, 1e6).unwrap(), 1.0);
        let p = rabi_lineshape(3f64.sqrt() * w, w, 0.0, 0.0).unwrap();
        assert!(p.abs() < 1e-30, "{p}");
        assert!(rabi_lineshape(1e4 * w, w, 0.0, 0.0).unwrap() < 1e-7);
        assert!(rabi_lineshape(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn explicit_duration_matches_pi_pulse() {
        let w = hz(15.4e3);
        for d in [0.0, 0.3 * w, 2.0 * w, -1.7 * w] {
            let a = rabi_lineshape(d, w, 0.0, 0.0).unwrap();
            let b = rabi_lineshape_with(Lineshape::Duration { seconds: PI / w }, d, w, 0.0, 0.0).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn release_curve_values() {
        let t = 1.7e-6;
        let kt = KB * t;
        assert_eq!(release_curve(0.0, t).unwrap(), 0.0);
        assert_eq!(release_curve(f64::INFINITY, t).unwrap(), 1.0);
        assert!((release_curve(60.0 * kt, t).unwrap() - 1.0).abs() < 1e-15);
        // erf(sqrt x) - 2 sqrt(x / pi) e^{-x} at x = 1.5
        let x: f64 = 1.5;
        let oracle = statrs::function::erf::erf(x.sqrt()) - 2.0 * (x / PI).sqrt() * (-x).exp();
        let v = release_curve(1.5 * kt, t).unwrap();
        assert!((v - oracle).abs() < 1e-10, "{v} {oracle}");
        assert!((v - 0.608).abs() < 1e-3);
    }

    #[test]
    fn light_shift_flag() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (0.1 * k as f64, hz(1083.0) * 0.1 * k as f64)).collect();
        let fit = fit_light_shift(&pts).unwrap();
        assert!(!fit.theory_flag);
        let far: Vec<(f64, f64)> = pts.iter().map(|(p, d)| (*p, 1.2 * d)).collect();
        assert!(fit_light_shift(&far).unwrap().theory_flag);
        assert!(fit_light_shift(&[(0.1, 1.0), (0.1, 2.0)]).is_err());
    }
}
