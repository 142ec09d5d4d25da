//! Physical constants (CODATA 2018) and the elementary thermal and atomic
//! formulas shared by the other modules.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{self, Rule};

/// Reduced Planck constant (J s)
pub const HBAR: f64 = 1.054_571_817e-34;
/// Planck constant (J s)
pub const H: f64 = 6.626_070_15e-34;
/// Boltzmann constant (J/K)
pub const KB: f64 = 1.380_649e-23;
/// Bohr magneton (J/T)
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Bohr radius (m)
pub const A0: f64 = 5.291_772_109_03e-11;
/// Unified atomic mass unit (kg)
pub const AMU: f64 = 1.660_539_066_60e-27;
/// 87Rb atomic mass (kg)
pub const M_RB: f64 = 86.909_180_527 * AMU;
/// 133Cs atomic mass (kg)
pub const M_CS: f64 = 132.905_451_961 * AMU;
/// Cs ground-state hyperfine splitting, h x 9 192 631 770 Hz (J)
pub const CS_HFS_SPLITTING: f64 = H * 9_192_631_770.0;
/// Cs 6S1/2 fine-structure Lande factor
pub const CS_G_J: f64 = 2.002_540_32;
/// Cs nuclear g-factor, taken with its sign
pub const CS_G_I: f64 = -0.000_398_853_95;

/// Upper end of the paneled energy rule, in units of `k_B T`.
pub const PANEL_ENERGY_CUTOFF: f64 = 12.0;

/// Conversions between the convenience units used at the I/O boundary and SI.
pub mod units {
    use std::f64::consts::PI;

    pub const NANOKELVIN: f64 = 1e-9;
    pub const MICROKELVIN: f64 = 1e-6;
    /// One milligauss in tesla.
    pub const MILLIGAUSS: f64 = 1e-7;
    /// One gauss in tesla.
    pub const GAUSS: f64 = 1e-4;
    pub const MILLISECOND: f64 = 1e-3;
    /// One cm^-3 in m^-3.
    pub const PER_CM3: f64 = 1e6;

    /// Cyclic frequency (Hz) to angular frequency (rad/s).
    pub fn hz(f: f64) -> f64 {
        2.0 * PI * f
    }

    /// Angular frequency (rad/s) to cyclic frequency (Hz).
    pub fn to_hz(omega: f64) -> f64 {
        omega / (2.0 * PI)
    }

    pub fn deg(d: f64) -> f64 {
        d.to_radians()
    }
}

/// `m1 m2 / (m1 + m2)`
pub fn reduced_mass(m1: f64, m2: f64) -> Result<f64> {
    if !(m1 > 0.0) || !(m2 > 0.0) {
        return Err(Error::Domain(format!(
            "masses must be positive, got {m1:e} and {m2:e}"
        )));
    }
    Ok(m1 * m2 / (m1 + m2))
}

/// Rb-Cs reduced mass.
pub fn rb_cs_reduced_mass() -> f64 {
    M_RB * M_CS / (M_RB + M_CS)
}

/// Maxwell-Boltzmann distribution of collision energies at temperature `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellBoltzmann {
    temperature: f64,
}

impl MaxwellBoltzmann {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Domain(format!(
                "temperature must be positive and finite, got {temperature:e}"
            )));
        }
        Ok(Self { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn thermal_energy(&self) -> f64 {
        KB * self.temperature
    }

    /// `2 pi (pi k_B T)^{-3/2} sqrt(E) exp(-E / k_B T)`, in 1/J.
    pub fn pdf(&self, energy: f64) -> Result<f64> {
        if energy < 0.0 || energy.is_nan() {
            return Err(Error::Domain(format!(
                "collision energy must be nonnegative, got {energy:e}"
            )));
        }
        let kt = self.thermal_energy();
        Ok(2.0 * PI * (PI * kt).powf(-1.5) * energy.sqrt() * (-energy / kt).exp())
    }

    /// Generalized Gauss-Laguerre rule (alpha = 1/2) in `E / k_B T`, nodes in J.
    pub fn gauss_rule(&self, order: usize) -> Result<Rule> {
        check_order(order)?;
        let kt = self.thermal_energy();
        let mut rule = quadrature::gauss_laguerre(order, 0.5)?;
        for e in &mut rule.nodes {
            *e *= kt;
        }
        Ok(rule)
    }

    /// Composite Gauss-Legendre rule on `[0, 12 k_B T]`, built in the speed
    /// variable `v = sqrt(E / k_B T)` so the `sqrt(E)` edge is resolved.
    /// Weights renormalized to one over the truncated range.
    pub fn paneled_rule(&self, order: usize) -> Result<Rule> {
        check_order(order)?;
        let kt = self.thermal_energy();
        // v = s / sqrt(2) maps the MB speed density onto chi-3.
        let mut rule = quadrature::maxwell_speed_rule((2.0 * PANEL_ENERGY_CUTOFF).sqrt(), order)?;
        for s in &mut rule.nodes {
            *s = 0.5 * *s * *s * kt;
        }
        Ok(rule)
    }
}

fn check_order(order: usize) -> Result<()> {
    if order < 2 {
        return Err(Error::Config(format!(
            "quadrature order must be >= 2, got {order}"
        )));
    }
    Ok(())
}

/// Maxwell-Boltzmann collision-energy density in 1/J.
pub fn mb_pdf(energy: f64, temperature: f64) -> Result<f64> {
    MaxwellBoltzmann::new(temperature)?.pdf(energy)
}

/// Energy nodes (J) and normalized weights for averages over the
/// Maxwell-Boltzmann distribution.
pub fn mb_quadrature(temperature: f64, order: usize) -> Result<Rule> {
    MaxwellBoltzmann::new(temperature)?.gauss_rule(order)
}

/// Second-order Zeeman coefficient of the Cs clock transition, rad/s per T^2.
pub fn quadratic_zeeman_coefficient() -> f64 {
    let dg = CS_G_J - CS_G_I;
    dg * dg * MU_B * MU_B / (2.0 * HBAR * CS_HFS_SPLITTING)
}

/// Second-order Zeeman shift of the clock transition (rad/s). Even in `B`.
pub fn quadratic_zeeman(field: f64) -> Result<f64> {
    if !field.is_finite() {
        return Err(Error::Domain(format!("field must be finite, got {field}")));
    }
    Ok(quadratic_zeeman_coefficient() * field * field)
}

/// Differential light shift of the dipole trap, linear in beam power.
pub fn light_shift(power: f64, slope: f64) -> Result<f64> {
    if power < 0.0 || power.is_nan() {
        return Err(Error::Domain(format!(
            "trap power must be nonnegative, got {power}"
        )));
    }
    Ok(slope * power)
}
