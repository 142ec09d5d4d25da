//! Energy- and field-dependent Rb-Cs s-wave scattering length near the
//! low-field Feshbach resonance, and its thermal statistics.
//!
//! The resonance is parameterized as a regularized dispersive profile whose
//! position slides linearly with collision energy:
//!
//! ```text
//! a_g(B, E) = a_bg [1 - dB (B - B_res) / ((B - B_res)^2 + gamma^2)],
//! B_res(E)  = B0 + (dB/dE) E
//! ```
//!
//! clamped to `[-a_cap, a_cap]`. A tabulated `a(B, E)` grid (bilinear
//! interpolation) can replace it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phys::{units, MaxwellBoltzmann, A0, KB};
use crate::quadrature::Rule;

/// Relative change on order doubling above which a thermal average is
/// considered unconverged.
pub const THERMAL_AVERAGE_TOLERANCE: f64 = 1e-4;

const MAX_PANELED_ORDER: usize = 8192;

/// Parameters of the regularized dispersive resonance, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceModel {
    /// background scattering length (m)
    pub a_bg: f64,
    /// resonance position at zero collision energy (T)
    pub b0: f64,
    /// magnetic width (T); zero gives the constant-`a_bg` model
    pub width: f64,
    /// linear energy shift of the resonance position (T/J)
    pub energy_shift: f64,
    /// regularization width (T)
    pub regularization: f64,
    /// hard cap on |a| (m)
    pub cap: f64,
    /// excited-state scattering length (m), energy independent
    pub a_excited: f64,
}

impl Default for ResonanceModel {
    /// Documented default parameter set. `B0` and `a_e` are the measured
    /// anchors; the remaining values are placeholders chosen so that the
    /// thermal-mean ground-state scattering length stays a few times `a_e`
    /// over 200-1000 nK.
    fn default() -> Self {
        Self {
            a_bg: 1200.0 * A0,
            b0: 198.5 * units::MILLIGAUSS,
            width: 30.0 * units::MILLIGAUSS,
            energy_shift: 0.2 * units::MILLIGAUSS / (KB * units::NANOKELVIN),
            regularization: 10.0 * units::MILLIGAUSS,
            cap: 25_000.0 * A0,
            a_excited: 539.0 * A0,
        }
    }
}

impl ResonanceModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.a_bg,
            self.b0,
            self.width,
            self.energy_shift,
            self.regularization,
            self.cap,
            self.a_excited,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("resonance parameters must be finite".into()));
        }
        if !(self.regularization > 0.0) {
            return Err(Error::Config("regularization width must be positive".into()));
        }
        if !(self.cap > self.a_bg.abs()) {
            return Err(Error::Config(
                "scattering-length cap must exceed |a_bg|".into(),
            ));
        }
        Ok(())
    }

    /// A model with no resonance: `a_g = a_bg` everywhere.
    pub fn constant(a_bg: f64, a_excited: f64) -> Self {
        Self {
            a_bg,
            width: 0.0,
            a_excited,
            ..Self::default()
        }
    }

    /// Resonance position for collision energy `energy`.
    pub fn resonance_position(&self, energy: f64) -> f64 {
        self.b0 + self.energy_shift * energy
    }

    pub fn a_ground(&self, field: f64, energy: f64) -> f64 {
        let d = field - self.resonance_position(energy);
        let g = self.regularization;
        let a = self.a_bg * (1.0 - self.width * d / (d * d + g * g));
        a.clamp(-self.cap, self.cap)
    }
}

/// Scattering length tabulated on a rectangular `(B, E)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedModel {
    /// field grid (T), strictly increasing
    pub fields: Vec<f64>,
    /// energy grid (J), strictly increasing
    pub energies: Vec<f64>,
    /// `values[i * energies.len() + j] = a(fields[i], energies[j])` (m)
    pub values: Vec<f64>,
    pub a_excited: f64,
}

impl TabulatedModel {
    pub fn new(fields: Vec<f64>, energies: Vec<f64>, values: Vec<f64>, a_excited: f64) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|p| p[0] < p[1]);
        if !increasing(&fields) || !increasing(&energies) {
            return Err(Error::Config(
                "scattering table grid must be strictly increasing with >= 2 points per axis".into(),
            ));
        }
        if values.len() != fields.len() * energies.len() {
            return Err(Error::Config(format!(
                "scattering table has {} values for a {}x{} grid",
                values.len(),
                fields.len(),
                energies.len()
            )));
        }
        Ok(Self {
            fields,
            energies,
            values,
            a_excited,
        })
    }

    /// Reads a CSV with header `B_mG,E_over_kB_nK,a_over_a0`. Rows may come in
    /// any order but must fill the full rectangular grid.
    pub fn from_csv(path: &Path, a_excited: f64) -> Result<Self> {
        crate::io::read_scattering_table(path, a_excited)
    }

    /// Bilinear interpolation; queries outside the grid use the edge values.
    pub fn a_ground(&self, field: f64, energy: f64) -> f64 {
        let (i, u) = locate(&self.fields, field);
        let (j, v) = locate(&self.energies, energy);
        let ne = self.energies.len();
        let at = |a: usize, b: usize| self.values[a * ne + b];
        (1.0 - u) * (1.0 - v) * at(i, j)
            + u * (1.0 - v) * at(i + 1, j)
            + (1.0 - u) * v * at(i, j + 1)
            + u * v * at(i + 1, j + 1)
    }
}

fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let last = grid.len() - 2;
    let i = match grid.partition_point(|&g| g <= x) {
        0 => 0,
        k => (k - 1).min(last),
    };
    let t = ((x - grid[i]) / (grid[i + 1] - grid[i])).clamp(0.0, 1.0);
    (i, t)
}

/// The model used by the forward engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScatteringModel {
    Resonance(ResonanceModel),
    Tabulated(TabulatedModel),
}

impl Default for ScatteringModel {
    fn default() -> Self {
        ScatteringModel::Resonance(ResonanceModel::default())
    }
}

impl From<ResonanceModel> for ScatteringModel {
    fn from(m: ResonanceModel) -> Self {
        ScatteringModel::Resonance(m)
    }
}

impl ScatteringModel {
    pub fn a_ground(&self, field: f64, energy: f64) -> Result<f64> {
        if energy < 0.0 || energy.is_nan() {
            return Err(Error::Domain(format!(
                "collision energy must be nonnegative, got {energy:e}"
            )));
        }
        Ok(self.a_ground_unchecked(field, energy))
    }

    pub(crate) fn a_ground_unchecked(&self, field: f64, energy: f64) -> f64 {
        match self {
            ScatteringModel::Resonance(m) => m.a_ground(field, energy),
            ScatteringModel::Tabulated(t) => t.a_ground(field, energy),
        }
    }

    pub fn a_excited(&self) -> f64 {
        match self {
            ScatteringModel::Resonance(m) => m.a_excited,
            ScatteringModel::Tabulated(t) => t.a_excited,
        }
    }

    /// `a_e - a_g(B, E)`
    pub fn delta_a(&self, field: f64, energy: f64) -> Result<f64> {
        Ok(self.a_excited() - self.a_ground(field, energy)?)
    }

    /// True when `a_g` does not depend on the collision energy.
    pub fn is_energy_independent(&self) -> bool {
        match self {
            ScatteringModel::Resonance(m) => m.width == 0.0 || m.energy_shift == 0.0,
            ScatteringModel::Tabulated(t) => t
                .values
                .chunks(t.energies.len())
                .all(|row| row.iter().all(|&v| v == row[0])),
        }
    }
}

/// First two thermal moments of the ground-state scattering length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermalMoments {
    pub mean: f64,
    pub second: f64,
    variance: f64,
}

impl ThermalMoments {
    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Thermal average of `f(E)` with automatic rule selection: Gauss-Laguerre at
/// orders 64 and 128, then paneled rules doubling until two successive
/// estimates agree to [`THERMAL_AVERAGE_TOLERANCE`].
pub(crate) fn thermal_average<const K: usize>(
    temperature: f64,
    f: impl Fn(f64) -> [f64; K],
) -> Result<[f64; K]> {
    let mb = MaxwellBoltzmann::new(temperature)?;
    let eval = |rule: &Rule| {
        let mut acc = [0.0; K];
        for (e, w) in rule.iter() {
            let v = f(e);
            for k in 0..K {
                acc[k] += w * v[k];
            }
        }
        acc
    };
    let converged = |a: &[f64; K], b: &[f64; K]| {
        a.iter().zip(b).all(|(x, y)| {
            let scale = x.abs().max(y.abs());
            scale == 0.0 || (x - y).abs() <= THERMAL_AVERAGE_TOLERANCE * scale
        })
    };

    let mut prev = eval(&mb.gauss_rule(64)?);
    let next = eval(&mb.gauss_rule(128)?);
    if converged(&prev, &next) {
        return Ok(next);
    }
    prev = next;
    let mut order = 256;
    while order <= MAX_PANELED_ORDER {
        let next = eval(&mb.paneled_rule(order)?);
        if converged(&prev, &next) {
            return Ok(next);
        }
        prev = next;
        order *= 2;
    }
    Err(Error::Numeric(format!(
        "thermal average at T = {temperature:e} K did not converge up to order {MAX_PANELED_ORDER}"
    )))
}

fn moments(field: f64, temperature: f64, model: &ScatteringModel) -> Result<ThermalMoments> {
    // moments about a reference value avoid cancellation when the spread is small
    let reference = model.a_ground_unchecked(field, KB * temperature.max(0.0));
    let [d1, d2] = thermal_average(temperature, |e| {
        let d = model.a_ground_unchecked(field, e) - reference;
        [d, d * d]
    })?;
    let mean = reference + d1;
    let variance = (d2 - d1 * d1).max(0.0);
    Ok(ThermalMoments { mean, second: variance + mean * mean, variance })
}

/// Thermal mean of the ground-state scattering length (m).
pub fn mean_a(field: f64, temperature: f64, model: &ScatteringModel) -> Result<f64> {
    Ok(moments(field, temperature, model)?.mean)
}

/// Thermal variance `<a^2> - <a>^2` (m^2).
pub fn var_a(field: f64, temperature: f64, model: &ScatteringModel) -> Result<f64> {
    Ok(moments(field, temperature, model)?.variance())
}

/// Both thermal moments in one pass.
pub fn thermal_moments(field: f64, temperature: f64, model: &ScatteringModel) -> Result<ThermalMoments> {
    moments(field, temperature, model)
}

/// Probability mass of the scattering length over equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` bin edges (m)
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn mean(&self) -> f64 {
        self.centers().iter().zip(&self.masses).map(|(c, m)| c * m).sum()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
}

/// Order of the energy rule whose weights are binned.
const HISTOGRAM_ORDER: usize = 2048;

/// Distribution of `a_g` over the thermal collision energies, obtained by
/// pushing the energy-rule weights through `a_ground`.
pub fn a_histogram(
    field: f64,
    temperature: f64,
    model: &ScatteringModel,
    bins: usize,
) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Config(format!("histogram needs >= 2 bins, got {bins}")));
    }
    let rule = MaxwellBoltzmann::new(temperature)?.paneled_rule(HISTOGRAM_ORDER)?;
    let values: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&e| model.a_ground_unchecked(field, e))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, width) = if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        // degenerate distribution: unit-a0 bins with the value in the first
        (lo - 0.5 * A0, A0)
    };
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut masses = vec![0.0; bins];
    for (a, w) in values.iter().zip(&rule.weights) {
        let k = (((a - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        masses[k] += w;
    }
    Ok(Histogram { edges, masses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys::units::MILLIGAUSS;

    fn model() -> ResonanceModel {
        ResonanceModel::default()
    }

    #[test]
    fn far_detuned_limit() {
        let m = model();
        let a = m.a_ground(m.b0 + 1e4 * m.width.abs(), 0.0);
        assert!((a / m.a_bg - 1.0).abs() < 1e-3);
        let a = m.a_ground(m.b0 - 1e4 * m.width.abs(), 0.0);
        assert!((a / m.a_bg - 1.0).abs() < 1e-3);
    }

    #[test]
    fn crossing_at_resonance_center() {
        let m = model();
        let e = KB * 300e-9;
        assert_eq!(m.a_ground(m.resonance_position(e), e), m.a_bg);
    }

    #[test]
    fn extrema_at_regularization_width() {
        let m = model();
        let e = KB * 100e-9;
        let br = m.resonance_position(e);
        let g = m.regularization;
        let ratio = m.width / (2.0 * g);
        assert!((m.a_ground(br + g, e) / (m.a_bg * (1.0 - ratio)) - 1.0).abs() < 1e-12);
        assert!((m.a_ground(br - g, e) / (m.a_bg * (1.0 + ratio)) - 1.0).abs() < 1e-12);
        // and they are extrema of the profile in B
        for db in [-0.01, 0.01] {
            assert!(m.a_ground(br - g + db * g, e) < m.a_ground(br - g, e));
        }
    }

    #[test]
    fn clamp_applies_only_above_cap() {
        let m = ResonanceModel {
            regularization: 1e-3 * MILLIGAUSS,
            cap: 5000.0 * A0,
            ..model()
        };
        let br = m.resonance_position(0.0);
        let a = m.a_ground(br - m.regularization, 0.0);
        assert_eq!(a, m.cap);
        let far = m.a_ground(br + 100.0 * MILLIGAUSS, 0.0);
        assert!(far.abs() < m.cap);
    }

    #[test]
    fn delta_a_cases() {
        let m = ScatteringModel::from(ResonanceModel::constant(539.0 * A0, 539.0 * A0));
        assert_eq!(m.delta_a(0.0, 0.0).unwrap(), 0.0);
        let d = ScatteringModel::default();
        let far = d.delta_a(1.0, 0.0).unwrap();
        assert!((far - (539.0 - 1200.0) * A0).abs() < 1e-3 * A0 * 1200.0);
        // plug-in value at the working point
        let r = model();
        let e = KB * 600e-9;
        let det = r.b0 - r.resonance_position(e);
        let expected = r.a_excited - r.a_bg * (1.0 - r.width * det / (det * det + r.regularization.powi(2)));
        assert_eq!(d.delta_a(198.5 * MILLIGAUSS, e).unwrap(), expected);
        assert!(d.delta_a(0.0, -1.0).is_err());
    }

    #[test]
    fn constant_model_statistics() {
        let m = ScatteringModel::from(ResonanceModel::constant(1000.0 * A0, 539.0 * A0));
        let mean = mean_a(198.5 * MILLIGAUSS, 500e-9, &m).unwrap();
        assert!((mean / (1000.0 * A0) - 1.0).abs() < 1e-14);
        let var = var_a(198.5 * MILLIGAUSS, 500e-9, &m).unwrap();
        assert!(var >= 0.0 && var < 1e-12 * (1000.0 * A0).powi(2));
        let hist = a_histogram(198.5 * MILLIGAUSS, 500e-9, &m, 10).unwrap();
        assert_eq!(hist.masses.iter().filter(|&&w| w > 0.0).count(), 1);
    }

    #[test]
    fn zero_temperature_limit() {
        let m = ScatteringModel::default();
        let b = 198.5 * MILLIGAUSS;
        let mean = mean_a(b, 1e-12, &m).unwrap();
        let a0 = m.a_ground(b, 0.0).unwrap();
        assert!((mean / a0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn histogram_consistency() {
        let m = ScatteringModel::default();
        let b = 198.5 * MILLIGAUSS;
        let hist = a_histogram(b, 600e-9, &m, 50).unwrap();
        let total: f64 = hist.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let mean = mean_a(b, 600e-9, &m).unwrap();
        assert!((hist.mean() - mean).abs() <= hist.bin_width());
        assert!(a_histogram(b, 600e-9, &m, 1).is_err());
    }

    #[test]
    fn tabulated_bilinear() {
        let t = TabulatedModel::new(
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![1.0, 3.0, 2.0, 6.0],
            0.5,
        )
        .unwrap();
        assert_eq!(t.a_ground(0.0, 0.0), 1.0);
        assert_eq!(t.a_ground(1.0, 2.0), 6.0);
        assert!((t.a_ground(0.5, 1.0) - 3.0).abs() < 1e-15);
        // clamped outside the grid
        assert_eq!(t.a_ground(-5.0, -1.0), 1.0);
        assert!(TabulatedModel::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0; 4], 0.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(model().validate().is_ok());
        assert!(ResonanceModel { regularization: 0.0, ..model() }.validate().is_err());
        assert!(ResonanceModel { cap: 100.0 * A0, ..model() }.validate().is_err());
    }

    #[test]
    fn sign_changes_once_across_resonance() {
        let m = model();
        let e = KB * 400e-9;
        let br = m.resonance_position(e);
        let mut changes = 0;
        let mut prev = None;
        for k in -200..=200 {
            if k == 0 {
                continue;
            }
            let b = br + k as f64 * 0.5 * MILLIGAUSS;
            let s = (m.a_ground(b, e) - m.a_bg).signum();
            if let Some(p) = prev {
                if p != s {
                    changes += 1;
                }
            }
            prev = Some(s);
        }
        assert_eq!(changes, 1);
    }
}
