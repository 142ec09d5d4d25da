//! The thermal Rb cloud: Gaussian density field in a harmonic trap, the
//! impurity position distribution over it, and the interaction detuning.
//!
//! The impurity position is distributed as the normalized bath density. The
//! integrand of the dephasing average depends on position only through
//! `n(r)`, so the 3D average collapses onto the scaled radius
//! `s = |(x_i / sigma_i)|`: `n = n0 exp(-s^2/2)` and `s` follows the chi
//! distribution with three degrees of freedom (shell volume `s^2` times the
//! Gaussian position probability).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phys::{rb_cs_reduced_mass, HBAR, KB, M_RB};
use crate::quadrature::{maxwell_speed_rule, Rule};

/// Upper end of the scaled-radius rule; the chi-3 tail beyond is ~1e-13.
pub const SCALED_RADIUS_CUTOFF: f64 = 8.0;

const CONSISTENCY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathState {
    /// peak density n(0) (m^-3)
    pub peak_density: f64,
    /// temperature (K)
    pub temperature: f64,
    /// trap angular frequencies (rad/s)
    pub trap_frequencies: [f64; 3],
    pub atom_number: f64,
}

impl BathState {
    /// Builds the state from the peak density, deriving the atom number.
    pub fn from_peak_density(peak_density: f64, temperature: f64, trap_frequencies: [f64; 3]) -> Result<Self> {
        check_positive("temperature", temperature)?;
        check_trap(&trap_frequencies)?;
        if !(peak_density >= 0.0) || !peak_density.is_finite() {
            return Err(Error::Domain(format!(
                "peak density must be nonnegative, got {peak_density:e}"
            )));
        }
        let volume = gaussian_volume(temperature, &trap_frequencies);
        Ok(Self {
            peak_density,
            temperature,
            trap_frequencies,
            atom_number: peak_density * volume,
        })
    }

    pub fn from_atom_number(atom_number: f64, temperature: f64, trap_frequencies: [f64; 3]) -> Result<Self> {
        check_positive("atom number", atom_number)?;
        check_positive("temperature", temperature)?;
        check_trap(&trap_frequencies)?;
        let volume = gaussian_volume(temperature, &trap_frequencies);
        Ok(Self {
            peak_density: atom_number / volume,
            temperature,
            trap_frequencies,
            atom_number,
        })
    }

    /// Full constructor; `atom_number` must match the peak density to 1e-6.
    pub fn new(peak_density: f64, temperature: f64, trap_frequencies: [f64; 3], atom_number: f64) -> Result<Self> {
        check_positive("peak density", peak_density)?;
        let state = Self::from_peak_density(peak_density, temperature, trap_frequencies)?;
        if ((atom_number - state.atom_number) / state.atom_number).abs() > CONSISTENCY_TOLERANCE {
            return Err(Error::Domain(format!(
                "atom number {atom_number:e} inconsistent with peak density (expected {:e})",
                state.atom_number
            )));
        }
        Ok(Self { atom_number, ..state })
    }

    /// Same trap and temperature, different peak density.
    pub fn with_peak_density(&self, peak_density: f64) -> Result<Self> {
        Self::from_peak_density(peak_density, self.temperature, self.trap_frequencies)
    }

    /// Same trap and peak density, different temperature.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        Self::from_peak_density(self.peak_density, temperature, self.trap_frequencies)
    }

    /// Gaussian widths `sqrt(k_B T / (m_Rb w_i^2))` (m).
    pub fn widths(&self) -> [f64; 3] {
        self.trap_frequencies
            .map(|w| (KB * self.temperature / (M_RB * w * w)).sqrt())
    }

    pub fn density_at(&self, position: [f64; 3]) -> f64 {
        let quad: f64 = position
            .iter()
            .zip(&self.trap_frequencies)
            .map(|(x, w)| w * w * x * x)
            .sum();
        self.peak_density * (-M_RB * quad / (2.0 * KB * self.temperature)).exp()
    }

    /// Mean density seen by an impurity distributed like the bath:
    /// `n0 / 2^{3/2}`.
    pub fn mean_sampled_density(&self) -> f64 {
        self.peak_density / 2f64.powf(1.5)
    }

    /// Distribution of `n(r)` for positions drawn from the normalized bath
    /// density, as density nodes (m^-3) with normalized weights.
    pub fn density_weight_measure(&self, order: usize) -> Result<Rule> {
        if order < 2 {
            return Err(Error::Config(format!(
                "density measure order must be >= 2, got {order}"
            )));
        }
        let mut rule = maxwell_speed_rule(SCALED_RADIUS_CUTOFF, order)?;
        for s in &mut rule.nodes {
            *s = self.peak_density * (-0.5 * *s * *s).exp();
        }
        Ok(rule)
    }
}

fn gaussian_volume(temperature: f64, trap: &[f64; 3]) -> f64 {
    let widths = trap.map(|w| (KB * temperature / (M_RB * w * w)).sqrt());
    (2.0 * PI).powf(1.5) * widths.iter().product::<f64>()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be positive, got {v:e}")));
    }
    Ok(())
}

fn check_trap(trap: &[f64; 3]) -> Result<()> {
    trap.iter().try_for_each(|&w| check_positive("trap frequency", w))
}

/// Density of the cloud at `position` (m).
pub fn density_at(position: [f64; 3], bath: &BathState) -> f64 {
    bath.density_at(position)
}

pub fn density_weight_measure(bath: &BathState, order: usize) -> Result<Rule> {
    bath.density_weight_measure(order)
}

/// Interaction-induced detuning `2 pi hbar n da / mu` (rad/s).
pub fn interaction_detuning(density: f64, delta_a: f64) -> Result<f64> {
    if density < 0.0 || density.is_nan() {
        return Err(Error::Domain(format!(
            "density must be nonnegative, got {density:e}"
        )));
    }
    Ok(detuning_per_density_length() * density * delta_a)
}

/// `2 pi hbar / mu` for Rb-Cs (m^2/s).
pub fn detuning_per_density_length() -> f64 {
    2.0 * PI * HBAR / rb_cs_reduced_mass()
}
