//! Capacitance-to-digital converter with CAPDAC offset, noise and drift, and
//! the wheel encoder that triggers sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the converter's direct input range.
pub const RANGE_PF: f64 = 15.0;
pub const CAPDAC_MAX_PF: f64 = 100.0;

pub const FLAG_RECALIBRATED: u8 = 0b01;
pub const FLAG_SATURATED: u8 = 0b10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderModel {
    pub pulses_per_rev: u32,
    pub wheel_diameter_mm: f64,
}

impl Default for EncoderModel {
    fn default() -> Self {
        EncoderModel {
            pulses_per_rev: 16,
            wheel_diameter_mm: 58.5,
        }
    }
}

impl EncoderModel {
    pub fn validate(&self) -> Result<()> {
        if self.pulses_per_rev == 0 {
            return Err(Error::InvalidParameter("pulses_per_rev must be at least 1".into()));
        }
        if !(self.wheel_diameter_mm.is_finite() && self.wheel_diameter_mm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wheel_diameter_mm must be positive, got {}",
                self.wheel_diameter_mm
            )));
        }
        Ok(())
    }

    pub fn circumference_mm(&self) -> f64 {
        std::f64::consts::PI * self.wheel_diameter_mm
    }

    pub fn tick_distance_mm(&self) -> f64 {
        self.circumference_mm() / self.pulses_per_rev as f64
    }
}

/// Converter configuration; the live part (offset, RNG) is in [`Converter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConverterConfig {
    /// Offset at the start of every line.
    pub capdac_offset_pf: f64,
    pub capdac_step_pf: f64,
    pub resolution_pf: f64,
    pub noise_sigma_pf: f64,
    pub drift_pf_per_m: f64,
    pub rng_seed: u64,
}

impl Default for ConverterConfig {
    fn default() -> Self {
        ConverterConfig {
            capdac_offset_pf: 0.0,
            capdac_step_pf: 3.125,
            resolution_pf: 0.0005,
            noise_sigma_pf: 0.0,
            drift_pf_per_m: 0.0,
            rng_seed: 0,
        }
    }
}

impl ConverterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.capdac_step_pf.is_finite() && self.capdac_step_pf > 0.0) {
            return bad(format!("capdac_step_pf must be positive, got {}", self.capdac_step_pf));
        }
        if !(self.resolution_pf.is_finite() && self.resolution_pf > 0.0) {
            return bad(format!("resolution_pf must be positive, got {}", self.resolution_pf));
        }
        if !(self.noise_sigma_pf.is_finite() && self.noise_sigma_pf >= 0.0) {
            return bad(format!("noise_sigma_pf must be >= 0, got {}", self.noise_sigma_pf));
        }
        if !self.drift_pf_per_m.is_finite() {
            return bad("drift_pf_per_m must be finite".into());
        }
        let k = self.capdac_offset_pf / self.capdac_step_pf;
        if !(0.0..=CAPDAC_MAX_PF).contains(&self.capdac_offset_pf) || (k - k.round()).abs() > 1e-9 {
            return bad(format!(
                "capdac_offset_pf must be a multiple of {} in [0, {CAPDAC_MAX_PF}], got {}",
                self.capdac_step_pf, self.capdac_offset_pf
            ));
        }
        Ok(())
    }

    /// Fresh converter for one scan line. Each line draws from its own
    /// ChaCha stream so lines are independent and order-free.
    pub fn for_line(&self, line: usize) -> Converter {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(line as u64);
        Converter {
            config: *self,
            capdac_pf: self.capdac_offset_pf,
            rng,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub tick: u32,
    pub along_track_mm: f64,
    pub raw_pf: f64,
    pub capdac_pf: f64,
    pub calibrated_pf: f64,
    pub recalibrated: bool,
    pub saturated: bool,
}

impl ScanSample {
    pub fn flags(&self) -> u8 {
        (self.recalibrated as u8 * FLAG_RECALIBRATED) | (self.saturated as u8 * FLAG_SATURATED)
    }

    pub fn capdac_index(&self, step_pf: f64) -> u8 {
        (self.capdac_pf / step_pf).round().clamp(0.0, 255.0) as u8
    }
}

#[derive(Debug, Clone)]
pub struct Converter {
    config: ConverterConfig,
    capdac_pf: f64,
    rng: ChaCha8Rng,
}

impl Converter {
    pub fn capdac_pf(&self) -> f64 {
        self.capdac_pf
    }

    pub fn config(&self) -> &ConverterConfig {
        &self.config
    }

    /// Convert one true capacitance. Drift accrues with distance along the line.
    pub fn measure(&mut self, true_pf: f64, tick: u32, along_track_mm: f64) -> ScanSample {
        let c = &self.config;
        let noise = if c.noise_sigma_pf > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            c.noise_sigma_pf * z
        } else {
            0.0
        };
        let sensed = true_pf + noise + c.drift_pf_per_m * along_track_mm / 1000.0;
        let mut recalibrated = false;
        if (sensed - self.capdac_pf).abs() > RANGE_PF {
            let k = (sensed / c.capdac_step_pf).round();
            let max_k = (CAPDAC_MAX_PF / c.capdac_step_pf + 1e-9).floor();
            self.capdac_pf = k.clamp(0.0, max_k) * c.capdac_step_pf;
            recalibrated = true;
        }
        let delta = sensed - self.capdac_pf;
        let saturated = delta.abs() > RANGE_PF;
        let clipped = delta.clamp(-RANGE_PF, RANGE_PF);
        let raw = (clipped / c.resolution_pf).round() * c.resolution_pf;
        ScanSample {
            tick,
            along_track_mm,
            raw_pf: raw,
            capdac_pf: self.capdac_pf,
            calibrated_pf: raw + self.capdac_pf,
            recalibrated,
            saturated,
        }
    }
}
