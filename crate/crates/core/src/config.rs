//! Run configuration in TOML with unit-explicit keys, converted to SI at load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bath::BathState;
use crate::engine::{default_phases, NoiseModel, QuadratureOrders, RamseyProtocol};
use crate::error::{Error, Result};
use crate::inference::{Bracket, ForwardModel, IMPURITY_TEMPERATURE};
use crate::io::{sha256_hex, SCHEMA_VERSION};
use crate::phys::{units, A0, KB};
use crate::scattering::{ResonanceModel, ScatteringModel, TabulatedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    /// accept parameters outside the documented validity ranges
    pub override_validity: bool,
    pub bath: BathConfig,
    pub model: ModelConfig,
    pub protocol: ProtocolConfig,
    pub noise: NoiseConfig,
    pub quadrature: QuadratureConfig,
    pub sweep: Option<SweepConfig>,
    pub inference: InferenceConfig,
    pub calibration: CalibrationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: "default".into(),
            seed: 1,
            override_validity: false,
            bath: BathConfig::default(),
            model: ModelConfig::default(),
            protocol: ProtocolConfig::default(),
            noise: NoiseConfig::default(),
            quadrature: QuadratureConfig::default(),
            sweep: None,
            inference: InferenceConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct BathConfig {
    pub temperature_nK: f64,
    pub peak_density_per_cm3: f64,
    pub trap_frequencies_Hz: [f64; 3],
    /// impurity temperature entering the relative collision speed
    pub impurity_temperature_nK: f64,
    /// use the bath temperature for the impurity as well
    pub impurity_thermalized: bool,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            temperature_nK: 850.0,
            peak_density_per_cm3: 1.0e13,
            trap_frequencies_Hz: [80.0, 120.0, 20.0],
            impurity_temperature_nK: IMPURITY_TEMPERATURE / units::NANOKELVIN,
            impurity_thermalized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct ModelConfig {
    /// "resonance" or "table"
    pub kind: String,
    pub a_bg_a0: f64,
    pub b0_mG: f64,
    pub width_mG: f64,
    pub energy_shift_mG_per_nK: f64,
    pub regularization_mG: f64,
    pub cap_a0: f64,
    pub a_excited_a0: f64,
    /// CSV with `B_mG,E_over_kB_nK,a_over_a0`, relative to the config file
    pub table_path: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let m = ResonanceModel::default();
        Self {
            kind: "resonance".into(),
            a_bg_a0: m.a_bg / A0,
            b0_mG: m.b0 / units::MILLIGAUSS,
            width_mG: m.width / units::MILLIGAUSS,
            energy_shift_mG_per_nK: m.energy_shift * KB * units::NANOKELVIN / units::MILLIGAUSS,
            regularization_mG: m.regularization / units::MILLIGAUSS,
            cap_a0: m.cap / A0,
            a_excited_a0: m.a_excited / A0,
            table_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct ProtocolConfig {
    pub bfield_mG: f64,
    /// explicit time grid; overrides start/stop/step
    pub times_ms: Option<Vec<f64>>,
    pub t_start_ms: f64,
    pub t_stop_ms: f64,
    pub t_step_ms: f64,
    pub phase_step_deg: f64,
    pub background_detuning_Hz: f64,
    pub background_t2_ms: f64,
    pub rabi_frequency_Hz: f64,
    pub include_background: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            bfield_mG: 198.5,
            times_ms: None,
            t_start_ms: 0.1,
            t_stop_ms: 12.0,
            t_step_ms: 0.1,
            phase_step_deg: 30.0,
            background_detuning_Hz: -135.0,
            background_t2_ms: 27.2,
            rabi_frequency_Hz: 15.4e3,
            include_background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// "none", "binomial" or "gaussian"
    pub kind: String,
    pub atoms_per_shot: u32,
    pub repetitions: u32,
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: "none".into(),
            atoms_per_shot: 10,
            repetitions: 1,
            sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub energy_order: usize,
    pub density_order: usize,
    pub max_order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = QuadratureOrders::default();
        Self {
            energy_order: q.energy,
            density_order: q.density,
            max_order: q.max_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// "peak_density_per_cm3" or "temperature_nK"
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct InferenceConfig {
    pub density_bracket_per_cm3: [f64; 2],
    pub temperature_bracket_nK: [f64; 2],
}

impl Default for InferenceConfig {
    fn default() -> Self {
        let d = Bracket::density_default();
        let t = Bracket::temperature_default();
        Self {
            density_bracket_per_cm3: [d.lower / units::PER_CM3, d.upper / units::PER_CM3],
            temperature_bracket_nK: [t.lower / units::NANOKELVIN, t.upper / units::NANOKELVIN],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct CalibrationConfig {
    /// microwave frequency of the field spectroscopy, relative to the clock line
    pub microwave_frequency_Hz: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            microwave_frequency_Hz: 0.7e6 * 0.1985,
        }
    }
}

/// Documented validity range of one parameter.
struct Range {
    key: &'static str,
    value: f64,
    min: f64,
    max: f64,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(table) = &config.model.table_path {
            if table.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.model.table_path = Some(base.join(table));
            }
        }
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !["resonance", "table"].contains(&self.model.kind.as_str()) {
            return Err(Error::Config(format!("model.kind: unknown kind {:?}", self.model.kind)));
        }
        if self.model.kind == "table" && self.model.table_path.is_none() {
            return Err(Error::Config("model.table_path is required for kind = \"table\"".into()));
        }
        if !["none", "binomial", "gaussian"].contains(&self.noise.kind.as_str()) {
            return Err(Error::Config(format!("noise.kind: unknown kind {:?}", self.noise.kind)));
        }
        if let Some(s) = &self.sweep {
            if !["peak_density_per_cm3", "temperature_nK"].contains(&s.parameter.as_str()) {
                return Err(Error::Config(format!("sweep.parameter: cannot sweep {:?}", s.parameter)));
            }
        }
        let b = &self.bath;
        let p = &self.protocol;
        let mut ranges = vec![
            Range { key: "bath.temperature_nK", value: b.temperature_nK, min: 10.0, max: 1e4 },
            Range { key: "bath.peak_density_per_cm3", value: b.peak_density_per_cm3, min: 0.0, max: 1e15 },
            Range { key: "bath.impurity_temperature_nK", value: b.impurity_temperature_nK, min: 10.0, max: 1e5 },
            Range { key: "protocol.bfield_mG", value: p.bfield_mG, min: 0.0, max: 1e4 },
            Range { key: "protocol.background_t2_ms", value: p.background_t2_ms, min: 1e-3, max: 1e6 },
            Range { key: "protocol.phase_step_deg", value: p.phase_step_deg, min: 1.0, max: 90.0 },
            Range { key: "model.a_excited_a0", value: self.model.a_excited_a0, min: -1e5, max: 1e5 },
        ];
        for (k, w) in b.trap_frequencies_Hz.iter().enumerate() {
            ranges.push(Range {
                key: ["bath.trap_frequencies_Hz[0]", "bath.trap_frequencies_Hz[1]", "bath.trap_frequencies_Hz[2]"][k],
                value: *w,
                min: 0.1,
                max: 1e5,
            });
        }
        if let Some(s) = &self.sweep {
            let (min, max) = if s.parameter == "temperature_nK" { (10.0, 1e4) } else { (0.0, 1e15) };
            for v in &s.values {
                ranges.push(Range { key: "sweep.values", value: *v, min, max });
            }
        }
        for r in &ranges {
            if !r.value.is_finite() {
                return Err(Error::Config(format!("{}: value must be finite", r.key)));
            }
            if !self.override_validity && !(r.min..=r.max).contains(&r.value) {
                return Err(Error::Config(format!(
                    "{}: {} outside validity range [{}, {}] (set override_validity = true to accept)",
                    r.key, r.value, r.min, r.max
                )));
            }
        }
        self.to_bath()?;
        self.to_protocol()?.validate()?;
        if self.model.kind == "resonance" {
            self.resonance().validate()?;
        }
        Ok(())
    }

    fn resonance(&self) -> ResonanceModel {
        let m = &self.model;
        ResonanceModel {
            a_bg: m.a_bg_a0 * A0,
            b0: m.b0_mG * units::MILLIGAUSS,
            width: m.width_mG * units::MILLIGAUSS,
            energy_shift: m.energy_shift_mG_per_nK * units::MILLIGAUSS / (KB * units::NANOKELVIN),
            regularization: m.regularization_mG * units::MILLIGAUSS,
            cap: m.cap_a0 * A0,
            a_excited: m.a_excited_a0 * A0,
        }
    }

    pub fn trap_frequencies(&self) -> [f64; 3] {
        self.bath.trap_frequencies_Hz.map(units::hz)
    }

    pub fn to_bath(&self) -> Result<BathState> {
        BathState::from_peak_density(
            self.bath.peak_density_per_cm3 * units::PER_CM3,
            self.bath.temperature_nK * units::NANOKELVIN,
            self.trap_frequencies(),
        )
        .map_err(|e| Error::Config(format!("bath: {e}")))
    }

    pub fn to_model(&self) -> Result<ScatteringModel> {
        match self.model.kind.as_str() {
            "table" => {
                let path = self.model.table_path.as_ref().expect("validated");
                let table = TabulatedModel::from_csv(path, self.model.a_excited_a0 * A0)
                    .map_err(|e| Error::Config(format!("model.table_path: {e}")))?;
                Ok(ScatteringModel::Tabulated(table))
            }
            _ => Ok(ScatteringModel::Resonance(self.resonance())),
        }
    }

    pub fn to_protocol(&self) -> Result<RamseyProtocol> {
        let p = &self.protocol;
        let times_ms = match &p.times_ms {
            Some(t) => t.clone(),
            None => {
                if !(p.t_step_ms > 0.0) || !(p.t_stop_ms >= p.t_start_ms) {
                    return Err(Error::Config("protocol: need t_step_ms > 0 and t_stop_ms >= t_start_ms".into()));
                }
                let n = ((p.t_stop_ms - p.t_start_ms) / p.t_step_ms + 1e-9).floor() as usize + 1;
                (0..n).map(|k| p.t_start_ms + k as f64 * p.t_step_ms).collect()
            }
        };
        if 360.0 % p.phase_step_deg > 1e-9 {
            return Err(Error::Config("protocol.phase_step_deg must divide 360".into()));
        }
        let protocol = RamseyProtocol {
            times: times_ms.iter().map(|t| t * units::MILLISECOND).collect(),
            phases: default_phases(p.phase_step_deg),
            field: p.bfield_mG * units::MILLIGAUSS,
            background_detuning: units::hz(p.background_detuning_Hz),
            background_t2: p.background_t2_ms * units::MILLISECOND,
            rabi_frequency: units::hz(p.rabi_frequency_Hz),
            include_background: p.include_background,
        };
        protocol
            .validate()
            .map_err(|e| Error::Config(format!("protocol: {e}")))?;
        Ok(protocol)
    }

    pub fn to_noise(&self, seed: u64) -> NoiseModel {
        match self.noise.kind.as_str() {
            "binomial" => NoiseModel::Binomial {
                atoms_per_shot: self.noise.atoms_per_shot,
                repetitions: self.noise.repetitions,
                seed,
            },
            "gaussian" => NoiseModel::Gaussian {
                sigma: self.noise.sigma,
                seed,
            },
            _ => NoiseModel::None,
        }
    }

    pub fn to_orders(&self) -> QuadratureOrders {
        QuadratureOrders {
            energy: self.quadrature.energy_order,
            density: self.quadrature.density_order,
            max_order: self.quadrature.max_order,
        }
    }

    pub fn impurity_temperature(&self) -> f64 {
        if self.bath.impurity_thermalized {
            self.bath.temperature_nK * units::NANOKELVIN
        } else {
            self.bath.impurity_temperature_nK * units::NANOKELVIN
        }
    }

    pub fn forward_model(&self) -> Result<ForwardModel> {
        Ok(ForwardModel {
            protocol: self.to_protocol()?,
            model: self.to_model()?,
            orders: self.to_orders(),
            trap_frequencies: self.trap_frequencies(),
        })
    }

    pub fn density_bracket(&self) -> Bracket {
        let [lo, hi] = self.inference.density_bracket_per_cm3;
        Bracket {
            lower: lo * units::PER_CM3,
            upper: hi * units::PER_CM3,
        }
    }

    pub fn temperature_bracket(&self) -> Bracket {
        let [lo, hi] = self.inference.temperature_bracket_nK;
        Bracket {
            lower: lo * units::NANOKELVIN,
            upper: hi * units::NANOKELVIN,
        }
    }
}
