//! Extraction of the dephasing time and the interaction shift from fringes.
//!
//! Each time slice is fitted with `A sin^2[(phi0 - phi)/2] + C`; the
//! visibility `A / (A + 2C)` decays as `V0 exp(-t^2/T2^2) + B`; the fringe
//! phase, unwrapped and corrected for the background detuning, grows linearly
//! with slope `delta` up to `T2`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::FringeSeries;
use crate::error::{Error, Result};
use crate::fit::{least_squares, linear_least_squares, FitOptions, FitReport, LinearFit};

/// Relative visibility spread below which no decay is reported.
const FLAT_VISIBILITY: f64 = 1e-9;

/// `(N_bath - N0_min) / (N0_max - N0_min)`
pub fn normalize_counts(n_bath: f64, n0_max: f64, n0_min: f64) -> Result<f64> {
    if !(n0_max > n0_min) {
        return Err(Error::DegenerateReference(format!(
            "reference maximum {n0_max} must exceed minimum {n0_min}"
        )));
    }
    if n0_min < 0.0 {
        return Err(Error::Domain(format!("reference minimum must be >= 0, got {n0_min}")));
    }
    Ok((n_bath - n0_min) / (n0_max - n0_min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub offset: f64,
    /// fringe phase in `[0, 2 pi)`
    pub phase: f64,
    pub amplitude_err: f64,
    pub offset_err: f64,
    pub phase_err: f64,
    /// covariance of `(A, C)` for visibility propagation
    pub amplitude_offset_cov: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn fringe_model(phi: f64, a: f64, c: f64, phi0: f64) -> f64 {
    let s = ((phi0 - phi) / 2.0).sin();
    a * s * s + c
}

/// Fits one time slice. Initialization from the first Fourier component
/// (linear least squares on `1, cos phi, sin phi`), then refinement.
pub fn fit_fringe(phases: &[f64], populations: &[f64], errors: Option<&[f64]>) -> Result<FringeFit> {
    let n = phases.len();
    if populations.len() != n || errors.is_some_and(|e| e.len() != n) {
        return Err(Error::Config("phase, population and error lengths differ".into()));
    }
    if n < 4 {
        return Err(Error::InsufficientData(format!("fringe fit needs >= 4 phases, got {n}")));
    }
    let lo = phases.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = phases.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > PI) {
        return Err(Error::InsufficientData("fringe phases must span more than pi".into()));
    }
    let sigma = errors.filter(|e| e.iter().all(|v| *v > 0.0));

    let rows: Vec<Vec<f64>> = phases.iter().map(|p| vec![1.0, p.cos(), p.sin()]).collect();
    let lin = linear_least_squares(&rows, populations, sigma)?;
    let [c0, c1, c2] = [lin.coefficients[0], lin.coefficients[1], lin.coefficients[2]];
    let a_init = 2.0 * c1.hypot(c2);
    let scale = populations.iter().map(|p| p.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if a_init <= 1e-13 * scale {
        let mean = populations.iter().sum::<f64>() / n as f64;
        let resid: f64 = populations.iter().map(|p| (p - mean).powi(2)).sum();
        return Ok(FringeFit {
            amplitude: 0.0,
            offset: mean,
            phase: 0.0,
            amplitude_err: lin.sigmas[1].hypot(lin.sigmas[2]) * 2.0,
            offset_err: lin.sigmas[0],
            phase_err: f64::INFINITY,
            amplitude_offset_cov: 0.0,
            residual_norm: resid.sqrt(),
            iterations: 0,
        });
    }
    let phi_init = (-c2).atan2(-c1);
    let c_init = (c0 - a_init / 2.0).max(0.0);

    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(phases
            .iter()
            .zip(populations)
            .enumerate()
            .map(|(i, (phi, y))| {
                let r = y - fringe_model(*phi, p[0], p[1], p[2]);
                sigma.map_or(r, |s| r / s[i])
            })
            .collect())
    };
    let options = FitOptions {
        lower: Some(vec![0.0, 0.0, f64::NEG_INFINITY]),
        upper: Some(vec![f64::INFINITY, f64::INFINITY, f64::INFINITY]),
        absolute_sigma: sigma.is_some(),
        ..FitOptions::default()
    };
    let report = least_squares(residuals, &[a_init, c_init, phi_init], &options)?;
    let phase = report.params[2].rem_euclid(2.0 * PI);
    Ok(FringeFit {
        amplitude: report.params[0],
        offset: report.params[1],
        phase: if phase >= 2.0 * PI { 0.0 } else { phase },
        amplitude_err: report.sigmas[0],
        offset_err: report.sigmas[1],
        phase_err: report.sigmas[2],
        amplitude_offset_cov: report.covariance[0][1],
        residual_norm: report.residual_norm(),
        iterations: report.iterations,
    })
}

/// `A / (A + 2C)`
pub fn visibility(amplitude: f64, offset: f64) -> Result<f64> {
    if amplitude < 0.0 || offset < 0.0 {
        return Err(Error::Domain(format!(
            "amplitude and offset must be >= 0, got A={amplitude}, C={offset}"
        )));
    }
    let denom = amplitude + 2.0 * offset;
    if !(denom > 0.0) {
        return Err(Error::DegenerateReference("A + 2C = 0".into()));
    }
    Ok(amplitude / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPoint {
    pub t: f64,
    pub v: f64,
    pub err: f64,
}

/// Visibility with its uncertainty propagated from the `(A, C)` covariance.
pub fn visibility_point(t: f64, fit: &FringeFit) -> Result<VisibilityPoint> {
    let v = visibility(fit.amplitude, fit.offset)?;
    let d = (fit.amplitude + 2.0 * fit.offset).powi(2);
    let ga = 2.0 * fit.offset / d;
    let gc = -2.0 * fit.amplitude / d;
    let var = ga * ga * fit.amplitude_err.powi(2)
        + gc * gc * fit.offset_err.powi(2)
        + 2.0 * ga * gc * fit.amplitude_offset_cov;
    Ok(VisibilityPoint {
        t,
        v,
        err: var.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub v0: f64,
    /// dephasing time (s); infinite when no decay is detected
    pub t2: f64,
    pub b: f64,
    pub v0_err: f64,
    pub t2_err: f64,
    pub b_err: f64,
    pub no_decay: bool,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Gaussian decay `V0 exp(-t^2/T2^2) + B` with `V0, B >= 0`, `T2 > 0`.
/// Weighted by `err` when `weighted` is set.
pub fn fit_visibility_decay(points: &[VisibilityPoint], weighted: bool) -> Result<DecayFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs >= 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.t >= 0.0) || !p.v.is_finite()) {
        return Err(Error::Domain("visibility points need t >= 0 and finite V".into()));
    }
    if !points.windows(2).all(|w| w[0].t < w[1].t) {
        return Err(Error::Domain("visibility times must be strictly increasing".into()));
    }
    let vmax = points.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
    let vmin = points.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
    let mean = points.iter().map(|p| p.v).sum::<f64>() / points.len() as f64;
    if vmax - vmin <= FLAT_VISIBILITY * vmax.abs().max(1.0) {
        return Ok(DecayFit {
            v0: 0.0,
            t2: f64::INFINITY,
            b: mean.max(0.0),
            v0_err: 0.0,
            t2_err: f64::INFINITY,
            b_err: 0.0,
            no_decay: true,
            residual_norm: 0.0,
            iterations: 0,
        });
    }
    if points.windows(2).all(|w| w[1].v >= w[0].v) {
        return Err(Error::fit(
            "visibility increases monotonically with time (unphysical decay)",
            0,
            f64::NAN,
        ));
    }

    let sigma: Option<Vec<f64>> = weighted
        .then(|| points.iter().map(|p| p.err).collect::<Vec<_>>())
        .filter(|s| s.iter().all(|e| *e > 0.0 && e.is_finite()));
    let t_max = points.last().map(|p| p.t).unwrap_or(1.0);
    let b_init = vmin.max(0.0);
    let v0_init = (points[0].v - b_init).max(1e-3 * vmax.max(1e-12));
    let target = b_init + v0_init / std::f64::consts::E;
    let t2_init = points
        .iter()
        .find(|p| p.v <= target)
        .map(|p| p.t)
        .filter(|t| *t > 0.0)
        .unwrap_or(0.5 * t_max);

    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let r = q.v - (p[0] * (-(q.t / p[1]).powi(2)).exp() + p[2]);
                sigma.as_ref().map_or(r, |s| r / s[i])
            })
            .collect())
    };
    let options = FitOptions {
        lower: Some(vec![0.0, 1e-9 * t_max.max(1e-12), 0.0]),
        upper: Some(vec![f64::INFINITY, f64::INFINITY, f64::INFINITY]),
        absolute_sigma: sigma.is_some(),
        ..FitOptions::default()
    };
    let report: FitReport = least_squares(residuals, &[v0_init, t2_init, b_init], &options)?;
    let [v0, t2, b] = [report.params[0], report.params[1], report.params[2]];
    let no_decay = v0 == 0.0 || t2 > 1e3 * t_max;
    Ok(DecayFit {
        v0,
        t2: if no_decay { f64::INFINITY } else { t2 },
        b,
        v0_err: report.sigmas[0],
        t2_err: if no_decay { f64::INFINITY } else { report.sigmas[1] },
        b_err: report.sigmas[2],
        no_decay,
        residual_norm: report.residual_norm(),
        iterations: report.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    /// interaction phase after unwrapping and background removal (rad)
    pub phase: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub points: Vec<PhasePoint>,
    /// times at which the unwrapping step was ambiguous
    pub ambiguous_times: Vec<f64>,
}

impl PhaseSeries {
    /// Ambiguity warnings for steps ending at or before `window`.
    pub fn warnings_within(&self, window: f64) -> Vec<String> {
        self.ambiguous_times
            .iter()
            .filter(|t| **t <= window)
            .map(|t| format!("phase unwrapping ambiguous at t = {:.4} ms", t * 1e3))
            .collect()
    }
}

/// Unwraps the fringe phases by the nearest-branch rule and subtracts
/// `delta_bg t`. A step whose two nearest branches differ by less than
/// `pi/2` in magnitude is reported as ambiguous.
pub fn extract_phase_series(times: &[f64], fits: &[FringeFit], background_detuning: f64) -> Result<PhaseSeries> {
    if times.len() != fits.len() {
        return Err(Error::Config("times and fringe fits differ in length".into()));
    }
    if !times.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain("times must be strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(times.len());
    let mut ambiguous_times = Vec::new();
    let mut unwrapped: Option<f64> = None;
    for (t, fit) in times.iter().zip(fits) {
        let current = match unwrapped {
            None => fit.phase,
            Some(prev) => {
                let step = (fit.phase - prev).rem_euclid(2.0 * PI);
                let step = if step > PI { step - 2.0 * PI } else { step };
                if step.abs() > 0.75 * PI {
                    ambiguous_times.push(*t);
                }
                prev + step
            }
        };
        unwrapped = Some(current);
        points.push(PhasePoint {
            t: *t,
            phase: current - background_detuning * t,
            err: fit.phase_err,
        });
    }
    Ok(PhaseSeries { points, ambiguous_times })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// interaction detuning (rad/s)
    pub delta: f64,
    pub delta_err: f64,
    pub intercept: f64,
    pub points_used: usize,
    pub chi2: f64,
}

/// Straight-line fit `Phi = delta t + c` over the points with `t <= window`.
pub fn fit_phase_slope(points: &[PhasePoint], window: f64, weighted: bool) -> Result<SlopeFit> {
    let used: Vec<&PhasePoint> = points.iter().filter(|p| p.t <= window).collect();
    if used.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} phase points within the slope window",
            used.len()
        )));
    }
    let rows: Vec<Vec<f64>> = used.iter().map(|p| vec![1.0, p.t]).collect();
    let y: Vec<f64> = used.iter().map(|p| p.phase).collect();
    let sigma: Option<Vec<f64>> = weighted
        .then(|| used.iter().map(|p| p.err).collect::<Vec<_>>())
        .filter(|s| s.iter().all(|e| *e > 0.0 && e.is_finite()));
    let fit: LinearFit = linear_least_squares(&rows, &y, sigma.as_deref())?;
    Ok(SlopeFit {
        delta: fit.coefficients[1],
        delta_err: fit.sigmas[1],
        intercept: fit.coefficients[0],
        points_used: used.len(),
        chi2: fit.chi2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSliceFit {
    pub t: f64,
    pub fit: FringeFit,
}

/// Everything the two-pass pipeline produces for one fringe series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub fits: Vec<TimeSliceFit>,
    pub visibility: Vec<VisibilityPoint>,
    pub decay: DecayFit,
    pub phases: Vec<PhasePoint>,
    pub slope: SlopeFit,
    pub warnings: Vec<String>,
}

/// Fits every slice, the visibility decay, then the phase slope inside the
/// fitted `T2`. Uncertainty weighting is used only when the series carries
/// per-point errors.
pub fn analyze(series: &FringeSeries, background_detuning: f64) -> Result<Analysis> {
    let weighted = series.errors.is_some();
    let fits: Vec<FringeFit> = (0..series.n_times())
        .into_par_iter()
        .map(|ti| fit_fringe(&series.phases, series.row(ti), series.row_errors(ti)))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let visibility: Vec<VisibilityPoint> = series
        .times
        .iter()
        .zip(&fits)
        .map(|(t, f)| {
            visibility_point(*t, f).unwrap_or(VisibilityPoint {
                t: *t,
                v: 0.0,
                err: f64::INFINITY,
            })
        })
        .collect();
    let decay = fit_visibility_decay(&visibility, weighted)?;
    if decay.no_decay {
        warnings.push("no decay detected".to_string());
    }
    let phase_series = extract_phase_series(&series.times, &fits, background_detuning)?;
    let window = decay.t2;
    let slope = fit_phase_slope(&phase_series.points, window, weighted)?;
    warnings.extend(phase_series.warnings_within(window));
    Ok(Analysis {
        fits: series
            .times
            .iter()
            .zip(fits)
            .map(|(t, fit)| TimeSliceFit { t: *t, fit })
            .collect(),
        visibility,
        decay,
        phases: phase_series.points,
        slope,
        warnings,
    })
}

/// Pipeline output that tolerates failing steps; failures become warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialAnalysis {
    pub fits: Vec<TimeSliceFit>,
    pub visibility: Vec<VisibilityPoint>,
    pub decay: Option<DecayFit>,
    pub phases: Vec<PhasePoint>,
    pub slope: Option<SlopeFit>,
    pub warnings: Vec<String>,
}

/// As [`analyze`], but slices whose fit fails are dropped and later stages
/// that cannot run are left empty.
pub fn analyze_partial(series: &FringeSeries, background_detuning: f64) -> PartialAnalysis {
    let weighted = series.errors.is_some();
    let attempts: Vec<Result<FringeFit>> = (0..series.n_times())
        .into_par_iter()
        .map(|ti| fit_fringe(&series.phases, series.row(ti), series.row_errors(ti)))
        .collect();
    let mut warnings = Vec::new();
    let mut fits = Vec::new();
    for (t, attempt) in series.times.iter().zip(attempts) {
        match attempt {
            Ok(fit) => fits.push(TimeSliceFit { t: *t, fit }),
            Err(e) => warnings.push(format!("fringe fit at t = {:.4} ms failed: {e}", t * 1e3)),
        }
    }
    let visibility: Vec<VisibilityPoint> = fits
        .iter()
        .filter_map(|f| match visibility_point(f.t, &f.fit) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("visibility at t = {:.4} ms: {e}", f.t * 1e3));
                None
            }
        })
        .collect();
    let decay = match fit_visibility_decay(&visibility, weighted) {
        Ok(d) => {
            if d.no_decay {
                warnings.push("no decay detected".to_string());
            }
            Some(d)
        }
        Err(e) => {
            warnings.push(format!("visibility decay fit failed: {e}"));
            None
        }
    };
    let times: Vec<f64> = fits.iter().map(|f| f.t).collect();
    let slice_fits: Vec<FringeFit> = fits.iter().map(|f| f.fit.clone()).collect();
    let (phases, slope) = match extract_phase_series(&times, &slice_fits, background_detuning) {
        Ok(ps) => {
            let window = decay.as_ref().map_or(f64::INFINITY, |d| d.t2);
            warnings.extend(ps.warnings_within(window));
            let slope = match fit_phase_slope(&ps.points, window, weighted) {
                Ok(s) => Some(s),
                Err(e) => {
                    warnings.push(format!("phase slope fit failed: {e}"));
                    None
                }
            };
            (ps.points, slope)
        }
        Err(e) => {
            warnings.push(format!("phase extraction failed: {e}"));
            (Vec::new(), None)
        }
    };
    PartialAnalysis {
        fits,
        visibility,
        decay,
        phases,
        slope,
        warnings,
    }
}
