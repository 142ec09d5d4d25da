//! Inversion of the forward pipeline for bath density or temperature,
//! bootstrap intervals, and collision-count estimates.
//!
//! Forward observables are produced the way measured ones are: a noiseless
//! fringe grid is synthesized and passed through [`analysis::analyze`], so
//! any bias of the extraction cancels in the inversion.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, fit_fringe};
use crate::bath::BathState;
use crate::engine::{cell_rng, synthesize_fringe, FringeSeries, NoiseModel, QuadratureOrders, RamseyProtocol};
use crate::error::{Error, Result};
use crate::phys::{rb_cs_reduced_mass, units, KB, M_CS, M_RB};
use crate::scattering::{mean_a, ScatteringModel};

/// Relative parameter tolerance of the golden-section refinement.
pub const PARAMETER_TOLERANCE: f64 = 1e-4;

/// Spread of a forward observable, relative to the observation scale, below
/// which it carries no information.
const SENSITIVITY_THRESHOLD: f64 = 1e-6;

/// Slack, in measurement sigmas, of the forward-range check.
const RANGE_SIGMAS: f64 = 3.0;

/// Points of the coarse logarithmic scan.
const SCAN_POINTS: usize = 13;

/// Analyzed observables of one fringe series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// interaction detuning (rad/s)
    pub delta: f64,
    /// dephasing time (s), infinite when no decay is resolved
    pub t2: f64,
}

/// The forward map `(n0, T) -> (delta, T2)` through synthesis and analysis.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub protocol: RamseyProtocol,
    pub model: ScatteringModel,
    pub orders: QuadratureOrders,
    pub trap_frequencies: [f64; 3],
}

impl ForwardModel {
    pub fn observe(&self, peak_density: f64, temperature: f64) -> Result<Observables> {
        let bath = BathState::from_peak_density(peak_density, temperature, self.trap_frequencies)?;
        let series = synthesize_fringe(&self.protocol, &bath, &self.model, &NoiseModel::None, &self.orders)?;
        let result = analysis::analyze(&series, self.protocol.effective_background_detuning())?;
        Ok(Observables {
            delta: result.slope.delta,
            t2: result.decay.t2,
        })
    }
}

/// One observed quantity with an optional 1-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub sigma: Option<f64>,
}

impl Measurement {
    pub fn exact(value: f64) -> Self {
        Self { value, sigma: None }
    }

    pub fn with_sigma(value: f64, sigma: f64) -> Self {
        Self {
            value,
            sigma: Some(sigma),
        }
    }

    fn scale(&self) -> Result<f64> {
        let s = self.sigma.unwrap_or(self.value.abs());
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!(
                "observable {} needs a positive uncertainty scale",
                self.value
            )));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ObservedSignals {
    pub delta: Option<Measurement>,
    pub t2: Option<Measurement>,
}

impl ObservedSignals {
    fn has_sigmas(&self) -> bool {
        [self.delta, self.t2]
            .iter()
            .flatten()
            .all(|m| m.sigma.is_some())
    }

    /// `sum ((forward - observed) / sigma)^2`; sigma defaults to |observed|.
    pub fn misfit(&self, forward: &Observables) -> Result<f64> {
        let mut total = 0.0;
        for (m, f) in [(self.delta, forward.delta), (self.t2, forward.t2)] {
            if let Some(m) = m {
                let r = (f - m.value) / m.scale()?;
                total += if r.is_finite() { r * r } else { f64::INFINITY };
            }
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub parameter: f64,
    pub misfit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior1D {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub curve: Vec<CurvePoint>,
    pub flags: Vec<String>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
}

impl Bracket {
    pub fn density_default() -> Self {
        Self {
            lower: 0.05e13 * units::PER_CM3,
            upper: 5e13 * units::PER_CM3,
        }
    }

    pub fn temperature_default() -> Self {
        Self {
            lower: 100.0 * units::NANOKELVIN,
            upper: 1500.0 * units::NANOKELVIN,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0) || !(self.upper > self.lower) || !self.upper.is_finite() {
            return Err(Error::Config(format!(
                "invalid search bracket [{:e}, {:e}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Estimates the peak density from `delta` and/or `T2` at known temperature.
pub fn infer_density(
    observed: &ObservedSignals,
    temperature: f64,
    forward: &ForwardModel,
    bracket: Bracket,
) -> Result<Posterior1D> {
    if observed.delta.is_none() && observed.t2.is_none() {
        return Err(Error::Config("density inference needs delta and/or T2".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain("known temperature must be positive".into()));
    }
    minimize(observed, bracket, false, |n0| forward.observe(n0, temperature))
}

/// Estimates the bath temperature from `T2` at known peak density.
pub fn infer_temperature(
    observed_t2: Measurement,
    peak_density: f64,
    forward: &ForwardModel,
    bracket: Bracket,
) -> Result<Posterior1D> {
    if !(observed_t2.value > 0.0) {
        return Err(Error::Domain("observed T2 must be positive".into()));
    }
    let observed = ObservedSignals {
        delta: None,
        t2: Some(observed_t2),
    };
    minimize(&observed, bracket, true, |t| forward.observe(peak_density, t))
}

fn minimize<F>(observed: &ObservedSignals, bracket: Bracket, check_monotone: bool, forward: F) -> Result<Posterior1D>
where
    F: Fn(f64) -> Result<Observables> + Sync,
{
    bracket.validate()?;
    let (lo, hi) = (bracket.lower.ln(), bracket.upper.ln());
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let scan: Vec<(f64, Option<Observables>, f64)> = grid
        .par_iter()
        .map(|&u| {
            let x = u.exp();
            match forward(x) {
                Ok(obs) => Ok((u, Some(obs), observed.misfit(&obs)?)),
                Err(e @ Error::Config(_)) => Err(e),
                Err(_) => Ok((u, None, f64::INFINITY)),
            }
        })
        .collect::<Result<_>>()?;
    let mut evaluations = scan.len();
    let mut flags = Vec::new();

    let forward_values: Vec<&Observables> = scan.iter().filter_map(|s| s.1.as_ref()).collect();
    // spread of the forward observable compared with the observation scale
    let insensitive = |get: fn(&Observables) -> f64, m: &Measurement| -> Result<bool> {
        let vals: Vec<f64> = forward_values.iter().map(|o| get(o)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Ok(vals.iter().all(|v| !v.is_finite()));
        }
        let vmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(vmax - vmin <= SENSITIVITY_THRESHOLD * m.scale()?)
    };
    let mut sensitive = false;
    if let Some(m) = &observed.delta {
        sensitive |= !insensitive(|o| o.delta, m)?;
    }
    if let Some(m) = &observed.t2 {
        sensitive |= !insensitive(|o| o.t2, m)?;
    }
    if forward_values.len() < 2 || !sensitive {
        return Err(Error::Insensitive(
            "forward observables do not change across the bracket".into(),
        ));
    }

    // an observation the forward map never reaches has no meaningful minimum
    let range_check = |name: &str, get: fn(&Observables) -> f64, m: &Measurement| -> Result<()> {
        let vals: Vec<f64> = forward_values.iter().map(|o| get(o)).filter(|v| !v.is_nan()).collect();
        let vmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = m.sigma.map_or(1e-9 * m.value.abs(), |s| RANGE_SIGMAS * s);
        if m.value < vmin - slack || m.value > vmax + slack {
            return Err(Error::Bracket(format!(
                "observed {name} {:e} outside forward range [{vmin:e}, {vmax:e}] over [{:e}, {:e}]",
                m.value, bracket.lower, bracket.upper
            )));
        }
        Ok(())
    };
    if let Some(m) = &observed.delta {
        range_check("delta", |o| o.delta, m)?;
    }
    if let Some(m) = &observed.t2 {
        range_check("T2", |o| o.t2, m)?;
    }

    if check_monotone {
        let t2s: Vec<f64> = forward_values.iter().map(|o| o.t2).collect();
        let up = t2s.windows(2).all(|w| w[1] >= w[0]);
        let down = t2s.windows(2).all(|w| w[1] <= w[0]);
        if up || down {
            flags.push("forward T2 monotone over bracket".to_string());
        } else {
            flags.push("forward T2 not monotone over bracket".to_string());
        }
    }
    let misfits: Vec<f64> = scan.iter().map(|s| s.2).collect();
    let local_minima = (0..misfits.len())
        .filter(|&i| {
            let left = i == 0 || misfits[i] < misfits[i - 1];
            let right = i + 1 == misfits.len() || misfits[i] <= misfits[i + 1];
            left && right && misfits[i].is_finite()
        })
        .count();
    if local_minima > 1 {
        flags.push("multimodal objective".to_string());
    }

    let best = misfits
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    if !misfits[best].is_finite() {
        return Err(Error::Insensitive("forward model failed across the bracket".into()));
    }
    let mut curve: Vec<CurvePoint> = scan
        .iter()
        .map(|s| CurvePoint {
            parameter: s.0.exp(),
            misfit: s.2,
        })
        .collect();

    let objective = |u: f64| -> Result<f64> {
        match forward(u.exp()) {
            Ok(obs) => observed.misfit(&obs),
            Err(_) => Ok(f64::INFINITY),
        }
    };
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let (u_best, f_best, extra) = golden_section(&objective, a, b, misfits[best], grid[best])?;
    evaluations += extra.len();
    curve.extend(extra.iter().map(|&(u, f)| CurvePoint {
        parameter: u.exp(),
        misfit: f,
    }));
    curve.sort_by(|p, q| p.parameter.total_cmp(&q.parameter));

    let edge = (u_best - lo).abs() <= PARAMETER_TOLERANCE || (hi - u_best).abs() <= PARAMETER_TOLERANCE;
    if edge {
        return Err(Error::Bracket(format!(
            "misfit minimum at bracket edge {:e}; true value likely outside [{:e}, {:e}]",
            u_best.exp(),
            bracket.lower,
            bracket.upper
        )));
    }

    let estimate = u_best.exp();
    let (lower, upper) = if observed.has_sigmas() {
        let target = f_best + 1.0;
        let left = crossing(&objective, u_best, lo, target, &mut evaluations)?;
        let right = crossing(&objective, u_best, hi, target, &mut evaluations)?;
        if left.is_none() || right.is_none() {
            flags.push("interval extends to bracket edge".to_string());
        }
        (left.unwrap_or(lo).exp(), right.unwrap_or(hi).exp())
    } else {
        flags.push("no observable uncertainties: interval not resolved".to_string());
        (estimate, estimate)
    };
    Ok(Posterior1D {
        estimate,
        lower: lower.min(estimate),
        upper: upper.max(estimate),
        curve,
        flags,
        evaluations,
    })
}

type Trace = Vec<(f64, f64)>;

/// Golden-section search on `[a, b]` with a known interior point.
fn golden_section(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, f_mid: f64, mid: f64) -> Result<(f64, f64, Trace)> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut trace = Vec::new();
    let mut best = (mid, f_mid);
    if a == b {
        return Ok((mid, f_mid, trace));
    }
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    trace.push((x1, f1));
    trace.push((x2, f2));
    while (b - a) > PARAMETER_TOLERANCE {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1)?;
            trace.push((x1, f1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2)?;
            trace.push((x2, f2));
        }
    }
    for &(u, v) in &trace {
        if v < best.1 {
            best = (u, v);
        }
    }
    Ok((best.0, best.1, trace))
}

/// Bisection for the point between `from` and `to` where `f = target`;
/// `None` when `f` stays below the target up to `to`.
fn crossing(f: &impl Fn(f64) -> Result<f64>, from: f64, to: f64, target: f64, evaluations: &mut usize) -> Result<Option<f64>> {
    *evaluations += 1;
    if f(to)? < target {
        return Ok(None);
    }
    let (mut inside, mut outside) = (from, to);
    while (outside - inside).abs() > PARAMETER_TOLERANCE {
        let m = 0.5 * (inside + outside);
        *evaluations += 1;
        if f(m)? < target {
            inside = m;
        } else {
            outside = m;
        }
    }
    Ok(Some(0.5 * (inside + outside)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub estimate: f64,
    /// 16th percentile
    pub lower: f64,
    /// 84th percentile
    pub upper: f64,
    pub resamples: usize,
    pub failures: usize,
}

/// Residual bootstrap through an arbitrary extraction. Residuals of the
/// per-time fringe fits are pooled, inflated by `sqrt(m / (m - p))`, and
/// redrawn onto the fitted fringes; each resample uses its own seed stream.
pub fn bootstrap<F>(series: &FringeSeries, extract: F, resamples: usize, seed: u64) -> Result<BootstrapInterval>
where
    F: Fn(&FringeSeries) -> Result<f64> + Sync,
{
    if resamples < 100 {
        return Err(Error::Config(format!("bootstrap needs >= 100 resamples, got {resamples}")));
    }
    let estimate = extract(series)?;
    let mut fitted = Vec::with_capacity(series.populations.len());
    for ti in 0..series.n_times() {
        let fit = fit_fringe(&series.phases, series.row(ti), series.row_errors(ti))?;
        for &phi in &series.phases {
            let s = ((fit.phase - phi) / 2.0).sin();
            fitted.push(fit.amplitude * s * s + fit.offset);
        }
    }
    let m = fitted.len();
    let params = 3 * series.n_times();
    if m <= params {
        return Err(Error::InsufficientData("no residual degrees of freedom".into()));
    }
    let inflation = (m as f64 / (m - params) as f64).sqrt();
    let residuals: Vec<f64> = series
        .populations
        .iter()
        .zip(&fitted)
        .map(|(y, f)| (y - f) * inflation)
        .collect();

    let draws: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = cell_rng(seed, k as u64);
            let populations: Vec<f64> = fitted
                .iter()
                .map(|f| (f + residuals[rng.random_range(0..m)]).clamp(0.0, 1.0))
                .collect();
            let resampled = FringeSeries {
                populations,
                ..series.clone()
            };
            extract(&resampled).ok().filter(|v| v.is_finite())
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let failures = resamples - values.len();
    if values.len() < 2 {
        return Err(Error::Numeric("bootstrap extraction failed on nearly all resamples".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        estimate,
        lower: percentile(&values, 0.16),
        upper: percentile(&values, 0.84),
        resamples,
        failures,
    })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Impurity temperature before thermalization with the bath, 1.7 uK.
pub const IMPURITY_TEMPERATURE: f64 = 1.7 * units::MICROKELVIN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionCounts {
    pub ground: f64,
    pub excited: f64,
    pub mean_density: f64,
    /// mean relative speed (m/s)
    pub relative_speed: f64,
    pub a_ground_mean: f64,
    pub effective_temperature: f64,
}

/// `T_eff = (m_Cs T_Rb + m_Rb T_Cs) / (m_Rb + m_Cs)`, the temperature of the
/// relative motion of two thermal species.
pub fn effective_temperature(bath_temperature: f64, impurity_temperature: f64) -> f64 {
    (M_CS * bath_temperature + M_RB * impurity_temperature) / (M_RB + M_CS)
}

/// Expected number of ground- and excited-state collisions within `T2`:
/// `<n> 4 pi a^2 v_rel T2`.
pub fn collision_counts(
    bath: &BathState,
    model: &ScatteringModel,
    field: f64,
    t2: f64,
    impurity_temperature: f64,
) -> Result<CollisionCounts> {
    if !(t2 > 0.0) {
        return Err(Error::Domain(format!("T2 must be positive, got {t2}")));
    }
    if !(impurity_temperature > 0.0) {
        return Err(Error::Domain("impurity temperature must be positive".into()));
    }
    let t_eff = effective_temperature(bath.temperature, impurity_temperature);
    let v_rel = (8.0 * KB * t_eff / (PI * rb_cs_reduced_mass())).sqrt();
    let mean_density = bath.mean_sampled_density();
    let a_g = mean_a(field, bath.temperature, model)?;
    let a_e = model.a_excited();
    let per_area = mean_density * v_rel * t2 * 4.0 * PI;
    Ok(CollisionCounts {
        ground: per_area * a_g * a_g,
        excited: per_area * a_e * a_e,
        mean_density,
        relative_speed: v_rel,
        a_ground_mean: a_g,
        effective_temperature: t_eff,
    })
}
