//! Forward synthesis of Ramsey signals.
//!
//! The microscopic model averages `cos^2(delta(n, E) t / 2 + phi / 2)` over the
//! density seen by the impurity and over thermal collision energies. Writing
//! `cos^2(x/2) = (1 + cos x) / 2`, every phase point at a given time follows
//! from one complex number, the coherence `z(t) = <exp(i delta t)>`:
//!
//! ```text
//! p(t, phi) = 1/2 + Re[exp(i phi) z(t)] / 2
//! ```
//!
//! Phase conventions: [`ramsey_population`] takes `phi` in the cos^2 form
//! above. A [`FringeSeries`] is indexed by the final-pulse phase of the
//! closed-form model, `p = 1/2 + (sin^2[(D t - phi)/2] - 1/2) exp(-t^2/T2^2)`,
//! which is the cos^2 form evaluated at `pi - phi`; with that mapping the
//! fitted fringe phase equals `+arg z(t)`, so the sign of the detuning is
//! preserved through the analysis chain.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{detuning_per_density_length, BathState};
use crate::error::{Error, Result};
use crate::phys::{units, MaxwellBoltzmann};
use crate::quadrature::{Rule, MAX_LAGUERRE_ORDER};
use crate::scattering::ScatteringModel;

/// Largest tolerated change of the coherence between refinement levels.
/// Populations are `(1 + Re ...)/2`, so they move by at most half of this.
pub const COHERENCE_TOLERANCE: f64 = 1e-4;

/// Population in the cos^2 convention at phase `phi` for coherence `z`.
pub fn population_from_coherence(z: Complex64, phi: f64) -> f64 {
    (0.5 + 0.5 * (Complex64::from_polar(1.0, phi) * z).re).clamp(0.0, 1.0)
}

/// Sequence parameters of the Ramsey measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyProtocol {
    /// free-evolution times (s), strictly increasing
    pub times: Vec<f64>,
    /// final-pulse phases (rad)
    pub phases: Vec<f64>,
    /// magnetic field (T)
    pub field: f64,
    /// bath-independent detuning (rad/s)
    pub background_detuning: f64,
    /// dephasing time without bath (s)
    pub background_t2: f64,
    /// bare Rabi frequency (rad/s); metadata only, pulses are ideal
    pub rabi_frequency: f64,
    /// add the background detuning and no-bath dephasing to the model
    pub include_background: bool,
}

impl Default for RamseyProtocol {
    fn default() -> Self {
        Self {
            times: default_times(),
            phases: default_phases(30.0),
            field: 198.5 * units::MILLIGAUSS,
            background_detuning: units::hz(-135.0),
            background_t2: 27.2 * units::MILLISECOND,
            rabi_frequency: units::hz(15.4e3),
            include_background: true,
        }
    }
}

/// 0.1 ms to 12 ms in 0.1 ms steps.
pub fn default_times() -> Vec<f64> {
    (1..=120).map(|k| k as f64 * 0.1 * units::MILLISECOND).collect()
}

/// `[0, 360)` degrees in steps of `step_deg`, in radians.
pub fn default_phases(step_deg: f64) -> Vec<f64> {
    let n = (360.0 / step_deg).round() as usize;
    (0..n).map(|k| units::deg(k as f64 * step_deg)).collect()
}

impl RamseyProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.phases.is_empty() {
            return Err(Error::Config("time and phase grids must be non-empty".into()));
        }
        if self.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Config("times must be finite and nonnegative".into()));
        }
        if !self.times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("times must be strictly increasing".into()));
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("phases must be finite".into()));
        }
        if !(self.background_t2 > 0.0) {
            return Err(Error::Config("background T2 must be positive".into()));
        }
        if !self.field.is_finite() || !self.background_detuning.is_finite() {
            return Err(Error::Config("field and background detuning must be finite".into()));
        }
        Ok(())
    }

    /// Background detuning actually present in synthesized data.
    pub fn effective_background_detuning(&self) -> f64 {
        if self.include_background {
            self.background_detuning
        } else {
            0.0
        }
    }

    /// Background factor `exp(i d_bg t) exp(-t^2 / T2_bg^2)`, or one.
    pub fn background_factor(&self, t: f64) -> Complex64 {
        if !self.include_background {
            return Complex64::ONE;
        }
        let envelope = (-(t / self.background_t2).powi(2)).exp();
        Complex64::from_polar(envelope, self.background_detuning * t)
    }
}

/// Starting orders of the adaptive double quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOrders {
    pub energy: usize,
    pub density: usize,
    /// refinement stops with an error past this many nodes per dimension
    pub max_order: usize,
}

impl Default for QuadratureOrders {
    fn default() -> Self {
        Self {
            energy: 64,
            density: 64,
            max_order: 4096,
        }
    }
}

impl QuadratureOrders {
    pub fn uniform(order: usize) -> Self {
        Self {
            energy: order,
            density: order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.energy < 2 || self.density < 2 {
            return Err(Error::Config("quadrature orders must be >= 2".into()));
        }
        if self.max_order < self.energy.max(self.density) {
            return Err(Error::Config("max quadrature order below starting order".into()));
        }
        Ok(())
    }
}

/// `p = 1/2 + (sin^2[(D t - phi)/2] - 1/2) exp(-t^2/T2^2)`; `T2 = inf` switches
/// the dephasing off.
pub fn fringe_closed_form(t: f64, phi: f64, detuning: f64, t2: f64) -> Result<f64> {
    if !(t >= 0.0) || !(t2 > 0.0) {
        return Err(Error::Domain(format!("need t >= 0 and T2 > 0, got t={t}, T2={t2}")));
    }
    let s = ((detuning * t - phi) / 2.0).sin();
    Ok(0.5 + (s * s - 0.5) * (-(t / t2).powi(2)).exp())
}

/// No-bath Ramsey trace at zero final-pulse phase:
/// `0.5 A (1 - exp(-t^2/T2^2) cos(d t)) + C`.
pub fn no_bath_trace(t: f64, amplitude: f64, offset: f64, detuning: f64, t2: f64) -> Result<f64> {
    if !(t >= 0.0) || !(t2 > 0.0) {
        return Err(Error::Domain(format!("need t >= 0 and T2 > 0, got t={t}, T2={t2}")));
    }
    Ok(0.5 * amplitude * (1.0 - (-(t / t2).powi(2)).exp() * (detuning * t).cos()) + offset)
}

/// Double average over explicit density and energy rules. Holds the
/// precomputed detuning rates `2 pi hbar n_i da_j / mu`.
#[derive(Debug, Clone)]
pub struct RamseyIntegrand {
    density_weights: Vec<f64>,
    energy_weights: Vec<f64>,
    /// row-major `[density][energy]` detuning rates (rad/s)
    rates: Vec<f64>,
}

impl RamseyIntegrand {
    pub fn new(density: &Rule, energy: &Rule, model: &ScatteringModel, field: f64) -> Result<Self> {
        let c = detuning_per_density_length();
        let delta_a = energy
            .nodes
            .iter()
            .map(|&e| model.delta_a(field, e))
            .collect::<Result<Vec<_>>>()?;
        let mut rates = Vec::with_capacity(density.len() * energy.len());
        for &n in &density.nodes {
            if n < 0.0 {
                return Err(Error::Domain("density nodes must be nonnegative".into()));
            }
            rates.extend(delta_a.iter().map(|da| c * n * da));
        }
        Ok(Self {
            density_weights: density.weights.clone(),
            energy_weights: energy.weights.clone(),
            rates,
        })
    }

    /// Interaction coherence `<exp(i delta t)>` (no background terms).
    pub fn coherence(&self, t: f64) -> Complex64 {
        let ne = self.energy_weights.len();
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, wd) in self.density_weights.iter().enumerate() {
            let row = &self.rates[i * ne..(i + 1) * ne];
            let (mut rr, mut ri) = (0.0, 0.0);
            for (rate, we) in row.iter().zip(&self.energy_weights) {
                let (s, c) = (rate * t).sin_cos();
                rr += we * c;
                ri += we * s;
            }
            re += wd * rr;
            im += wd * ri;
        }
        Complex64::new(re, im)
    }

    /// Population in the cos^2 convention, interaction only.
    pub fn population(&self, t: f64, phi: f64) -> f64 {
        population_from_coherence(self.coherence(t), phi)
    }
}

/// Adaptive evaluator of the interaction coherence for one bath, model and
/// field. Refinement levels double the energy and density orders
/// independently; rules are built on first use and shared across times.
pub struct CoherenceModel {
    energy_levels: Vec<Rule>,
    density_levels: Vec<Rule>,
    model: ScatteringModel,
    field: f64,
    cache: Mutex<HashMap<(usize, usize), std::sync::Arc<RamseyIntegrand>>>,
    /// skip quadrature for models without interaction
    trivial: bool,
}

impl CoherenceModel {
    pub fn new(bath: &BathState, model: &ScatteringModel, field: f64, orders: &QuadratureOrders) -> Result<Self> {
        orders.validate()?;
        let mb = MaxwellBoltzmann::new(bath.temperature)?;
        let mut energy_levels = Vec::new();
        let mut order = orders.energy;
        while order <= orders.max_order {
            let rule = if order <= MAX_LAGUERRE_ORDER.min(128) {
                mb.gauss_rule(order)?
            } else {
                mb.paneled_rule(order.max(256))?
            };
            energy_levels.push(rule);
            order *= 2;
        }
        let mut density_levels = Vec::new();
        let mut order = orders.density;
        while order <= orders.max_order {
            density_levels.push(bath.density_weight_measure(order)?);
            order *= 2;
        }
        let silent_model = model.is_energy_independent() && model.delta_a(field, 0.0)? == 0.0;
        Ok(Self {
            energy_levels,
            density_levels,
            model: model.clone(),
            field,
            cache: Mutex::new(HashMap::new()),
            trivial: bath.peak_density == 0.0 || silent_model,
        })
    }

    fn integrand(&self, ie: usize, id: usize) -> Result<std::sync::Arc<RamseyIntegrand>> {
        if let Some(found) = self.cache.lock().expect("cache poisoned").get(&(ie, id)) {
            return Ok(found.clone());
        }
        let built = std::sync::Arc::new(RamseyIntegrand::new(
            &self.density_levels[id],
            &self.energy_levels[ie],
            &self.model,
            self.field,
        )?);
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert((ie, id), built.clone());
        Ok(built)
    }

    /// Interaction coherence at time `t`, refined until one more doubling in
    /// each dimension changes it by less than [`COHERENCE_TOLERANCE`].
    pub fn coherence(&self, t: f64) -> Result<Complex64> {
        if self.trivial || t == 0.0 {
            return Ok(Complex64::ONE);
        }
        let half = 0.5 * COHERENCE_TOLERANCE;
        let (mut ie, mut id) = (0, 0);
        loop {
            if ie + 1 >= self.energy_levels.len() || id + 1 >= self.density_levels.len() {
                return Err(Error::Numeric(format!(
                    "double quadrature at t = {t:e} s not converged within the maximum order"
                )));
            }
            let z = self.integrand(ie, id)?.coherence(t);
            let ze = self.integrand(ie + 1, id)?.coherence(t);
            let zd = self.integrand(ie, id + 1)?.coherence(t);
            let refine_e = (ze - z).norm() > half;
            let refine_d = (zd - z).norm() > half;
            if !refine_e && !refine_d {
                return Ok(ze);
            }
            ie += refine_e as usize;
            id += refine_d as usize;
        }
    }
}

/// Population `p(t, phi)` in the cos^2 convention, with the
/// background terms applied when the protocol enables them.
pub fn ramsey_population(
    t: f64,
    phi: f64,
    bath: &BathState,
    model: &ScatteringModel,
    protocol: &RamseyProtocol,
    orders: &QuadratureOrders,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    let engine = CoherenceModel::new(bath, model, protocol.field, orders)?;
    let z = engine.coherence(t)? * protocol.background_factor(t);
    Ok(population_from_coherence(z, phi))
}

/// Measured or synthetic populations on a rectangular `times x phases` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeSeries {
    pub times: Vec<f64>,
    pub phases: Vec<f64>,
    /// row-major `[time][phase]`
    pub populations: Vec<f64>,
    pub errors: Option<Vec<f64>>,
}

impl FringeSeries {
    pub fn new(times: Vec<f64>, phases: Vec<f64>, populations: Vec<f64>, errors: Option<Vec<f64>>) -> Result<Self> {
        let cells = times.len() * phases.len();
        if populations.len() != cells || errors.as_ref().is_some_and(|e| e.len() != cells) {
            return Err(Error::Config(format!(
                "fringe grid {}x{} does not match {} populations",
                times.len(),
                phases.len(),
                populations.len()
            )));
        }
        if let Some(bad) = populations.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!(
                "population {} at cell {bad} outside [0, 1]",
                populations[bad]
            )));
        }
        if let Some(errs) = &errors {
            if errs.iter().any(|e| !(*e >= 0.0)) {
                return Err(Error::Domain("population errors must be nonnegative".into()));
            }
        }
        Ok(Self {
            times,
            phases,
            populations,
            errors,
        })
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn row(&self, ti: usize) -> &[f64] {
        let np = self.phases.len();
        &self.populations[ti * np..(ti + 1) * np]
    }

    pub fn row_errors(&self, ti: usize) -> Option<&[f64]> {
        let np = self.phases.len();
        self.errors.as_ref().map(|e| &e[ti * np..(ti + 1) * np])
    }
}

/// Shot-noise options for synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// binomial atom counting: `atoms_per_shot x repetitions` trials per cell
    Binomial {
        atoms_per_shot: u32,
        repetitions: u32,
        seed: u64,
    },
    /// additive Gaussian noise on the population, clamped to [0, 1]
    Gaussian { sigma: f64, seed: u64 },
}

impl NoiseModel {
    pub fn binomial(seed: u64) -> Self {
        NoiseModel::Binomial {
            atoms_per_shot: 10,
            repetitions: 1,
            seed,
        }
    }

    /// Draws the noisy value for grid cell `cell`, with a seed derived from
    /// the base seed and the cell index only.
    pub fn apply(&self, p: f64, cell: u64) -> Result<(f64, Option<f64>)> {
        match *self {
            NoiseModel::None => Ok((p, None)),
            NoiseModel::Binomial {
                atoms_per_shot,
                repetitions,
                seed,
            } => {
                let trials = u64::from(atoms_per_shot) * u64::from(repetitions);
                if trials == 0 {
                    return Err(Error::Config("binomial noise needs at least one trial".into()));
                }
                let mut rng = cell_rng(seed, cell);
                let dist = Binomial::new(trials, p.clamp(0.0, 1.0))
                    .map_err(|e| Error::Numeric(e.to_string()))?;
                let n = trials as f64;
                let est = dist.sample(&mut rng) as f64 / n;
                // floored at half a count so empty or full cells keep a weight
                let err = (est * (1.0 - est) / n).sqrt().max(0.5 / n);
                Ok((est, Some(err)))
            }
            NoiseModel::Gaussian { sigma, seed } => {
                if !(sigma > 0.0) {
                    return Err(Error::Config("Gaussian noise needs sigma > 0".into()));
                }
                let mut rng = cell_rng(seed, cell);
                let xi: f64 = Normal::new(0.0, sigma)
                    .map_err(|e| Error::Numeric(e.to_string()))?
                    .sample(&mut rng);
                Ok(((p + xi).clamp(0.0, 1.0), Some(sigma)))
            }
        }
    }
}

pub(crate) fn cell_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How the time axis is split into independent work units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkPlan {
    /// number of contiguous time blocks processed in parallel
    pub partitions: usize,
}

impl Default for WorkPlan {
    fn default() -> Self {
        Self {
            partitions: rayon::current_num_threads().max(1),
        }
    }
}

/// Synthesizes the fringe grid of `protocol` from the microscopic model.
pub fn synthesize_fringe(
    protocol: &RamseyProtocol,
    bath: &BathState,
    model: &ScatteringModel,
    noise: &NoiseModel,
    orders: &QuadratureOrders,
) -> Result<FringeSeries> {
    synthesize_fringe_with_plan(protocol, bath, model, noise, orders, &WorkPlan::default())
}

/// As [`synthesize_fringe`]; the output does not depend on `plan`.
pub fn synthesize_fringe_with_plan(
    protocol: &RamseyProtocol,
    bath: &BathState,
    model: &ScatteringModel,
    noise: &NoiseModel,
    orders: &QuadratureOrders,
    plan: &WorkPlan,
) -> Result<FringeSeries> {
    protocol.validate()?;
    let engine = CoherenceModel::new(bath, model, protocol.field, orders)?;
    let nt = protocol.times.len();
    let block = nt.div_ceil(plan.partitions.max(1)).max(1);
    let coherences: Vec<Complex64> = protocol
        .times
        .par_chunks(block)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&t| Ok(engine.coherence(t)? * protocol.background_factor(t)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    fringe_from_coherences(protocol, &coherences, noise)
}

/// Builds the fringe grid (final-pulse-phase convention) from per-time
/// coherences.
pub fn fringe_from_coherences(
    protocol: &RamseyProtocol,
    coherences: &[Complex64],
    noise: &NoiseModel,
) -> Result<FringeSeries> {
    let np = protocol.phases.len();
    let mut populations = Vec::with_capacity(coherences.len() * np);
    let mut errors = Vec::with_capacity(coherences.len() * np);
    for (ti, z) in coherences.iter().enumerate() {
        for (pi, &phi) in protocol.phases.iter().enumerate() {
            let clean = population_from_coherence(*z, PI - phi);
            let (p, e) = noise.apply(clean, (ti * np + pi) as u64)?;
            populations.push(p);
            errors.push(e.unwrap_or(0.0));
        }
    }
    let errors = match noise {
        NoiseModel::None => None,
        _ => Some(errors),
    };
    FringeSeries::new(protocol.times.clone(), protocol.phases.clone(), populations, errors)
}

/// Fringe grid of the closed-form model with detuning `D` and dephasing `T2`.
pub fn synthesize_closed_form(protocol: &RamseyProtocol, detuning: f64, t2: f64, noise: &NoiseModel) -> Result<FringeSeries> {
    protocol.validate()?;
    let coherences: Vec<Complex64> = protocol
        .times
        .iter()
        .map(|&t| Complex64::from_polar((-(t / t2).powi(2)).exp(), detuning * t))
        .collect();
    fringe_from_coherences(protocol, &coherences, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys::{units::*, A0};
    use crate::scattering::ResonanceModel;

    fn bath(n0_cm3: f64, t_nk: f64) -> BathState {
        BathState::from_peak_density(n0_cm3 * PER_CM3, t_nk * NANOKELVIN, [hz(80.0), hz(80.0), hz(20.0)]).unwrap()
    }

    #[test]
    fn closed_form_limits() {
        assert_eq!(fringe_closed_form(0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((fringe_closed_form(0.0, PI, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let t2 = 1e-3;
        let t = 5e-3;
        let p = fringe_closed_form(t, 0.3, 100.0, t2).unwrap();
        assert!((p - 0.5).abs() <= (-(t / t2).powi(2)).exp());
        assert!(fringe_closed_form(-1.0, 0.0, 1.0, 1.0).is_err());
        assert!(fringe_closed_form(1.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn no_bath_trace_limits() {
        assert_eq!(no_bath_trace(0.0, 0.8, 0.1, 5.0, 1.0).unwrap(), 0.1);
        let late = no_bath_trace(50.0, 0.8, 0.1, 5.0, 1.0).unwrap();
        assert!((late - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_bath_trace_period() {
        // the envelope shifts the extrema, not the crossings of 1/2
        let d = hz(135.0);
        let t2 = 27.2e-3;
        let dt = 1e-6;
        let samples: Vec<f64> = (0..20_000)
            .map(|k| no_bath_trace(k as f64 * dt, 1.0, 0.0, d, t2).unwrap())
            .collect();
        let crossings: Vec<f64> = (1..samples.len())
            .filter(|&k| (samples[k] - 0.5).signum() != (samples[k - 1] - 0.5).signum())
            .map(|k| k as f64 * dt)
            .collect();
        assert!(crossings.len() >= 3);
        let period = crossings[2] - crossings[0];
        assert!((period - 7.407e-3).abs() < 2e-5, "{period}");
    }

    #[test]
    fn population_at_zero_time_is_one() {
        let b = bath(1.0e13, 850.0);
        let m = ScatteringModel::default();
        let protocol = RamseyProtocol {
            include_background: false,
            ..Default::default()
        };
        let p = ramsey_population(0.0, 0.0, &b, &m, &protocol, &QuadratureOrders::default()).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn degenerate_rules_reduce_to_closed_form() {
        let m = ScatteringModel::from(ResonanceModel::constant(1500.0 * A0, 539.0 * A0));
        let n = 1e19;
        let density = Rule { nodes: vec![n], weights: vec![1.0] };
        let energy = Rule { nodes: vec![1e-30], weights: vec![1.0] };
        let integrand = RamseyIntegrand::new(&density, &energy, &m, 0.0).unwrap();
        let delta = crate::bath::interaction_detuning(n, m.delta_a(0.0, 0.0).unwrap()).unwrap();
        for &t in &[0.0, 1e-4, 7e-4, 3e-3] {
            for &phi in &[0.0, 1.0, 2.5, 4.0] {
                let p5 = integrand.population(t, PI - phi);
                let p2 = fringe_closed_form(t, phi, delta, f64::INFINITY).unwrap();
                assert!((p5 - p2).abs() <= 1e-12 * p2.abs().max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn zero_density_gives_pure_background_phase() {
        let b = bath(0.0, 850.0);
        let protocol = RamseyProtocol {
            times: vec![1e-3, 2e-3],
            ..Default::default()
        };
        let series = synthesize_fringe(&protocol, &b, &ScatteringModel::default(), &NoiseModel::None, &QuadratureOrders::default()).unwrap();
        for (ti, &t) in protocol.times.iter().enumerate() {
            let env = (-(t / protocol.background_t2).powi(2)).exp();
            for (pi, &phi) in protocol.phases.iter().enumerate() {
                let expected = fringe_closed_form(t, phi, protocol.background_detuning, f64::INFINITY).unwrap();
                let expected = 0.5 + (expected - 0.5) * env;
                assert!((series.row(ti)[pi] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn seeded_noise_is_reproducible_and_partition_independent() {
        let b = bath(1.0e13, 850.0);
        let m = ScatteringModel::default();
        let protocol = RamseyProtocol {
            times: (1..=12).map(|k| k as f64 * 0.25e-3).collect(),
            ..Default::default()
        };
        let noise = NoiseModel::binomial(42);
        let orders = QuadratureOrders::default();
        let a = synthesize_fringe_with_plan(&protocol, &b, &m, &noise, &orders, &WorkPlan { partitions: 1 }).unwrap();
        let c = synthesize_fringe_with_plan(&protocol, &b, &m, &noise, &orders, &WorkPlan { partitions: 5 }).unwrap();
        assert_eq!(a, c);
        let other = synthesize_fringe(&protocol, &b, &m, &NoiseModel::binomial(43), &orders).unwrap();
        assert_ne!(a.populations, other.populations);
        for p in &a.populations {
            assert!((p * 10.0 - (p * 10.0).round()).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_periodicity() {
        let b = bath(1.5e13, 400.0);
        let m = ScatteringModel::default();
        let protocol = RamseyProtocol::default();
        let orders = QuadratureOrders::default();
        for &t in &[0.3e-3, 1.1e-3] {
            for &phi in &[0.0, 0.7, 2.0] {
                let a = ramsey_population(t, phi, &b, &m, &protocol, &orders).unwrap();
                let c = ramsey_population(t, phi + 2.0 * PI, &b, &m, &protocol, &orders).unwrap();
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn protocol_validation() {
        let mut p = RamseyProtocol::default();
        assert!(p.validate().is_ok());
        p.times = vec![1e-3, 1e-3];
        assert!(p.validate().is_err());
        p.times = vec![-1e-3];
        assert!(p.validate().is_err());
        let p = RamseyProtocol { background_t2: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn fringe_series_validation() {
        assert!(FringeSeries::new(vec![0.0], vec![0.0, 1.0], vec![0.5, 1.2], None).is_err());
        assert!(FringeSeries::new(vec![0.0], vec![0.0, 1.0], vec![0.5], None).is_err());
        assert!(FringeSeries::new(vec![0.0], vec![0.0, 1.0], vec![0.5, 0.2], None).is_ok());
    }
}
