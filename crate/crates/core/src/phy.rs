//! LoRa physical layer model: bands, modem presets, time-on-air, log-distance
//! path loss with log-normal shadowing, and the per-packet reception decision.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Receiver noise figure used to derive preset sensitivities (SX126x class).
pub const NOISE_FIGURE_DB: f64 = 6.0;
/// Thermal noise density at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// Default noise floor used for SNR reporting.
pub const DEFAULT_NOISE_FLOOR_DBM: f64 = -120.0;
/// Default shadowing standard deviation for urban links.
pub const DEFAULT_SHADOWING_SIGMA_DB: f64 = 6.0;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("invalid radio configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("cannot read radio config {path}: {reason}")]
    Load { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandLabel {
    #[serde(rename = "EU868", alias = "eu868", alias = "868")]
    Eu868,
    #[serde(rename = "EU433", alias = "eu433", alias = "433")]
    Eu433,
}

impl BandLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BandLabel::Eu868 => "EU868",
            BandLabel::Eu433 => "EU433",
        }
    }

    /// Human label used in summary tables ("868 MHz").
    pub fn frequency_label(self) -> &'static str {
        match self {
            BandLabel::Eu868 => "868 MHz",
            BandLabel::Eu433 => "433 MHz",
        }
    }
}

impl fmt::Display for BandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandLabel {
    type Err = PhyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EU868" | "868" | "868MHZ" | "868 MHZ" => Ok(BandLabel::Eu868),
            "EU433" | "433" | "433MHZ" | "433 MHZ" => Ok(BandLabel::Eu433),
            other => Err(PhyError::Config(format!("unknown band {other:?}"))),
        }
    }
}

/// A regulatory band together with the transmit power used on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub label: BandLabel,
    pub center_hz: f64,
    pub tx_power_dbm: f64,
    /// Fraction of airtime allowed per rolling hour.
    pub duty_cycle_limit: f64,
}

impl FrequencyBand {
    /// EU868 at the 869.4–869.65 MHz sub-band (10 % duty cycle), 25 mW.
    pub fn eu868() -> Self {
        Self {
            label: BandLabel::Eu868,
            center_hz: 869.525e6,
            tx_power_dbm: mw_to_dbm(25.0),
            duty_cycle_limit: 0.10,
        }
    }

    /// EU433 (433.05–434.79 MHz, 10 % duty cycle), 10 mW.
    pub fn eu433() -> Self {
        Self {
            label: BandLabel::Eu433,
            center_hz: 433.875e6,
            tx_power_dbm: mw_to_dbm(10.0),
            duty_cycle_limit: 0.10,
        }
    }

    pub fn for_label(label: BandLabel) -> Self {
        match label {
            BandLabel::Eu868 => Self::eu868(),
            BandLabel::Eu433 => Self::eu433(),
        }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.duty_cycle_limit > 0.0 && self.duty_cycle_limit <= 1.0) {
            return Err(PhyError::Config(format!(
                "duty cycle limit {} outside (0, 1]",
                self.duty_cycle_limit
            )));
        }
        if !(self.center_hz.is_finite() && self.center_hz > 0.0) {
            return Err(PhyError::Config("center frequency must be positive".into()));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(PhyError::Config("tx power must be finite".into()));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_hz
    }

    /// Free-space loss at `d0_m`; used as the reference term of the log-distance model.
    pub fn free_space_loss_db(&self, d0_m: f64) -> f64 {
        20.0 * (4.0 * std::f64::consts::PI * d0_m / self.wavelength_m()).log10()
    }
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PresetName {
    LongFast,
    ShortFast,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::LongFast => "LongFast",
            PresetName::ShortFast => "ShortFast",
        }
    }

    /// Range-test send interval recommended for the preset, in seconds.
    pub fn range_test_interval_s(self) -> f64 {
        match self {
            PresetName::LongFast => 30.0,
            PresetName::ShortFast => 15.0,
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = PhyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['_', '-', ' '], "").as_str() {
            "longfast" => Ok(PresetName::LongFast),
            "shortfast" => Ok(PresetName::ShortFast),
            other => Err(PhyError::Config(format!("unknown modem preset {other:?}"))),
        }
    }
}

/// Named bundle of LoRa modulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModemPreset {
    pub name: PresetName,
    pub spreading_factor: u8,
    pub bandwidth_hz: u32,
    /// Denominator `x` of the 4/x coding rate.
    pub coding_rate_denominator: u8,
    pub preamble_symbols: u16,
    pub snr_floor_db: f64,
    pub sensitivity_dbm: f64,
}

impl ModemPreset {
    /// SF11 / 250 kHz / 4/5.
    pub fn long_fast() -> Self {
        Self::from_params(PresetName::LongFast, 11, 250_000, 5, 16)
    }

    /// SF7 / 250 kHz / 4/5.
    pub fn short_fast() -> Self {
        Self::from_params(PresetName::ShortFast, 7, 250_000, 5, 16)
    }

    pub fn for_name(name: PresetName) -> Self {
        match name {
            PresetName::LongFast => Self::long_fast(),
            PresetName::ShortFast => Self::short_fast(),
        }
    }

    /// Builds a preset, deriving the SNR floor and sensitivity from SF and bandwidth.
    pub fn from_params(
        name: PresetName,
        spreading_factor: u8,
        bandwidth_hz: u32,
        coding_rate_denominator: u8,
        preamble_symbols: u16,
    ) -> Self {
        let snr_floor_db = snr_floor_for_sf(spreading_factor);
        Self {
            name,
            spreading_factor,
            bandwidth_hz,
            coding_rate_denominator,
            preamble_symbols,
            snr_floor_db,
            sensitivity_dbm: sensitivity_for(bandwidth_hz, snr_floor_db),
        }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(PhyError::Config(format!(
                "spreading factor {} outside 7..=12",
                self.spreading_factor
            )));
        }
        if !(5..=8).contains(&self.coding_rate_denominator) {
            return Err(PhyError::Config(format!(
                "coding rate 4/{} outside 4/5..4/8",
                self.coding_rate_denominator
            )));
        }
        if self.bandwidth_hz == 0 {
            return Err(PhyError::Config("bandwidth must be positive".into()));
        }
        if self.preamble_symbols == 0 {
            return Err(PhyError::Config("preamble must be at least one symbol".into()));
        }
        if !self.snr_floor_db.is_finite() || !self.sensitivity_dbm.is_finite() {
            return Err(PhyError::Config("thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn symbol_time_ms(&self) -> f64 {
        f64::from(1u32 << self.spreading_factor) / f64::from(self.bandwidth_hz) * 1000.0
    }

    /// Low data rate optimisation is mandated once a symbol lasts 16 ms or more.
    pub fn low_data_rate_optimize(&self) -> bool {
        self.symbol_time_ms() >= 16.0
    }
}

/// Demodulation SNR floor: -7.5 dB at SF7, 2.5 dB lower per SF step.
pub fn snr_floor_for_sf(spreading_factor: u8) -> f64 {
    -7.5 - 2.5 * (f64::from(spreading_factor) - 7.0)
}

pub fn sensitivity_for(bandwidth_hz: u32, snr_floor_db: f64) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * f64::from(bandwidth_hz).log10() + NOISE_FIGURE_DB + snr_floor_db
}

/// Log-distance path loss with optional log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub reference_loss_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    pub shadowing_sigma_db: f64,
}

impl PathLossModel {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.exponent >= 2.0) {
            return Err(PhyError::Config(format!(
                "path loss exponent {} below free space (2.0)",
                self.exponent
            )));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(PhyError::Config("shadowing sigma must be >= 0".into()));
        }
        if !(self.d0_m > 0.0) {
            return Err(PhyError::Config("reference distance must be > 0".into()));
        }
        if !self.reference_loss_db.is_finite() {
            return Err(PhyError::Config("reference loss must be finite".into()));
        }
        Ok(())
    }

    pub fn with_shadowing(mut self, sigma_db: f64) -> Self {
        self.shadowing_sigma_db = sigma_db;
        self
    }

    /// Loss without the shadowing term.
    pub fn median_loss_db(&self, distance_m: f64) -> Result<f64, PhyError> {
        if !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(PhyError::Domain(format!("distance {distance_m} m must be > 0")));
        }
        Ok(self.reference_loss_db + 10.0 * self.exponent * (distance_m / self.d0_m).log10())
    }
}

/// Outcome of one packet crossing one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub distance_m: f64,
    pub rssi_dbm: f64,
    pub snr_db: f64,
    pub received: bool,
}

/// Time on air in milliseconds for an explicit-header frame with CRC.
pub fn airtime_ms(preset: &ModemPreset, payload_bytes: usize) -> Result<f64, PhyError> {
    preset.validate()?;
    if payload_bytes == 0 {
        return Err(PhyError::Config("payload must be at least one byte".into()));
    }
    if payload_bytes > 255 {
        return Err(PhyError::Config(format!(
            "payload of {payload_bytes} bytes exceeds the 255-byte LoRa frame"
        )));
    }
    let t_sym = preset.symbol_time_ms();
    let sf = f64::from(preset.spreading_factor);
    let de = if preset.low_data_rate_optimize() { 1.0 } else { 0.0 };
    let crc = 1.0;
    let implicit_header = 0.0;
    let preamble_ms = (f64::from(preset.preamble_symbols) + 4.25) * t_sym;
    let numerator = 8.0 * payload_bytes as f64 - 4.0 * sf + 28.0 + 16.0 * crc - 20.0 * implicit_header;
    let blocks = (numerator / (4.0 * (sf - 2.0 * de))).ceil().max(0.0);
    let payload_symbols = 8.0 + blocks * f64::from(preset.coding_rate_denominator);
    Ok(preamble_ms + payload_symbols * t_sym)
}

/// Whole milliseconds of airtime, rounded up; the simulator clock is integral.
pub fn airtime_ms_ceil(preset: &ModemPreset, payload_bytes: usize) -> Result<u64, PhyError> {
    airtime_ms(preset, payload_bytes).map(|t| t.ceil() as u64)
}

pub fn path_loss_db<R: Rng + ?Sized>(model: &PathLossModel, distance_m: f64, rng: &mut R) -> Result<f64, PhyError> {
    let median = model.median_loss_db(distance_m)?;
    if model.shadowing_sigma_db == 0.0 {
        return Ok(median);
    }
    let normal = Normal::new(0.0, model.shadowing_sigma_db).map_err(|e| PhyError::Config(format!("shadowing: {e}")))?;
    Ok(median + normal.sample(rng))
}

pub fn sample_link<R: Rng + ?Sized>(
    band: &FrequencyBand,
    preset: &ModemPreset,
    model: &PathLossModel,
    distance_m: f64,
    noise_floor_dbm: f64,
    rng: &mut R,
) -> Result<LinkSample, PhyError> {
    let loss = path_loss_db(model, distance_m, rng)?;
    Ok(link_sample_from_loss(band, preset, distance_m, loss, noise_floor_dbm))
}

/// Reception decision for an already known path loss.
pub fn link_sample_from_loss(
    band: &FrequencyBand,
    preset: &ModemPreset,
    distance_m: f64,
    loss_db: f64,
    noise_floor_dbm: f64,
) -> LinkSample {
    let rssi_dbm = band.tx_power_dbm - loss_db;
    let snr_db = rssi_dbm - noise_floor_dbm;
    LinkSample {
        distance_m,
        rssi_dbm,
        snr_db,
        received: rssi_dbm >= preset.sensitivity_dbm && snr_db >= preset.snr_floor_db,
    }
}

/// Solves for the exponent whose median received power hits the preset
/// sensitivity exactly at `target_max_range_m`. Reference loss is free space at 1 m.
pub fn calibrate_exponent(
    band: &FrequencyBand,
    preset: &ModemPreset,
    target_max_range_m: f64,
) -> Result<PathLossModel, PhyError> {
    band.validate()?;
    preset.validate()?;
    let d0_m = 1.0;
    if !(target_max_range_m > d0_m) || !target_max_range_m.is_finite() {
        return Err(PhyError::Calibration(format!(
            "target range {target_max_range_m} m must exceed the reference distance {d0_m} m"
        )));
    }
    let reference_loss_db = band.free_space_loss_db(d0_m);
    let budget = band.tx_power_dbm - preset.sensitivity_dbm - reference_loss_db;
    let exponent = budget / (10.0 * (target_max_range_m / d0_m).log10());
    if !(exponent >= 2.0) {
        return Err(PhyError::Calibration(format!(
            "reaching {target_max_range_m} m would need exponent {exponent:.3} < 2.0"
        )));
    }
    Ok(PathLossModel {
        reference_loss_db,
        d0_m,
        exponent,
        shadowing_sigma_db: 0.0,
    })
}

/// Maximum distances observed in the Zürich urban range tests, used as
/// calibration targets when no explicit exponent is configured.
pub fn field_max_range_m(band: BandLabel, preset: PresetName) -> f64 {
    match (band, preset) {
        (BandLabel::Eu868, PresetName::LongFast) => 1274.0,
        (BandLabel::Eu868, PresetName::ShortFast) => 786.0,
        (BandLabel::Eu433, PresetName::LongFast) => 576.0,
        (BandLabel::Eu433, PresetName::ShortFast) => 281.0,
    }
}

/// Radio parameters as loaded from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    #[serde(default = "default_band")]
    pub band: BandLabel,
    #[serde(default = "default_preset")]
    pub preset: PresetName,
    /// Path-loss exponent; calibrated against the field range when absent.
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default = "default_sigma")]
    pub sigma_db: f64,
    #[serde(default = "default_noise_floor")]
    pub noise_floor_dbm: f64,
}

fn default_band() -> BandLabel {
    BandLabel::Eu868
}
fn default_preset() -> PresetName {
    PresetName::LongFast
}
fn default_sigma() -> f64 {
    DEFAULT_SHADOWING_SIGMA_DB
}
fn default_noise_floor() -> f64 {
    DEFAULT_NOISE_FLOOR_DBM
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            band: default_band(),
            preset: default_preset(),
            exponent: None,
            sigma_db: default_sigma(),
            noise_floor_dbm: default_noise_floor(),
        }
    }
}

/// Fully resolved radio: band, preset, channel model and noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radio {
    pub band: FrequencyBand,
    pub preset: ModemPreset,
    pub model: PathLossModel,
    pub noise_floor_dbm: f64,
}

impl Radio {
    pub fn sample<R: Rng + ?Sized>(&self, distance_m: f64, rng: &mut R) -> Result<LinkSample, PhyError> {
        sample_link(
            &self.band,
            &self.preset,
            &self.model,
            distance_m,
            self.noise_floor_dbm,
            rng,
        )
    }
}

impl RadioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PhyError> {
        toml::from_str(s).map_err(|e| PhyError::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, PhyError> {
        serde_json::from_str(s).map_err(|e| PhyError::Config(e.to_string()))
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, PhyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PhyError::Load {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn resolve(&self) -> Result<Radio, PhyError> {
        let band = FrequencyBand::for_label(self.band);
        let preset = ModemPreset::for_name(self.preset);
        let model = match self.exponent {
            Some(exponent) => PathLossModel {
                reference_loss_db: band.free_space_loss_db(1.0),
                d0_m: 1.0,
                exponent,
                shadowing_sigma_db: self.sigma_db,
            },
            None => calibrate_exponent(&band, &preset, field_max_range_m(self.band, self.preset))?
                .with_shadowing(self.sigma_db),
        };
        model.validate()?;
        Ok(Radio {
            band,
            preset,
            model,
            noise_floor_dbm: self.noise_floor_dbm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example_model() -> PathLossModel {
        PathLossModel {
            reference_loss_db: 31.7,
            d0_m: 1.0,
            exponent: 3.4,
            shadowing_sigma_db: 0.0,
        }
    }

    #[test]
    fn airtime_matches_hand_evaluated_formula() {
        // Values from direct evaluation of the Semtech time-on-air formula.
        let short = airtime_ms(&ModemPreset::short_fast(), 10).unwrap();
        let long = airtime_ms(&ModemPreset::long_fast(), 10).unwrap();
        assert!((short - 24.704).abs() < 1e-9, "{short}");
        assert!((long - 313.344).abs() < 1e-9, "{long}");
        assert!((airtime_ms(&ModemPreset::long_fast(), 255).unwrap() - 2156.544).abs() < 1e-9);
        assert!((airtime_ms(&ModemPreset::short_fast(), 1).unwrap() - 17.024).abs() < 1e-9);
    }

    #[test]
    fn airtime_rejects_empty_payload_and_bad_presets() {
        assert!(matches!(
            airtime_ms(&ModemPreset::short_fast(), 0),
            Err(PhyError::Config(_))
        ));
        let mut bad = ModemPreset::long_fast();
        bad.spreading_factor = 13;
        assert!(airtime_ms(&bad, 10).is_err());
        let mut bad = ModemPreset::long_fast();
        bad.coding_rate_denominator = 4;
        assert!(airtime_ms(&bad, 10).is_err());
    }

    #[test]
    fn path_loss_reference_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = example_model();
        assert!((path_loss_db(&m, 1.0, &mut rng).unwrap() - 31.7).abs() < 1e-12);
        assert!((path_loss_db(&m, 10.0, &mut rng).unwrap() - 65.7).abs() < 1e-12);
        assert!(matches!(path_loss_db(&m, 0.0, &mut rng), Err(PhyError::Domain(_))));
        assert!(matches!(path_loss_db(&m, -5.0, &mut rng), Err(PhyError::Domain(_))));
    }

    #[test]
    fn presets_and_bands_respect_invariants() {
        let lf = ModemPreset::long_fast();
        let sf = ModemPreset::short_fast();
        assert!(lf.spreading_factor > sf.spreading_factor);
        assert!(lf.snr_floor_db < sf.snr_floor_db);
        assert_eq!(snr_floor_for_sf(7), -7.5);
        assert_eq!(snr_floor_for_sf(11), -17.5);
        assert!((lf.sensitivity_dbm + 131.52).abs() < 0.01);
        assert!((sf.sensitivity_dbm + 121.52).abs() < 0.01);
        assert!((FrequencyBand::eu868().tx_power_dbm - 13.979).abs() < 1e-3);
        assert!((FrequencyBand::eu433().tx_power_dbm - 10.0).abs() < 1e-12);
        FrequencyBand::eu868().validate().unwrap();
        let mut b = FrequencyBand::eu433();
        b.duty_cycle_limit = 0.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn strongest_link_received_and_far_link_lost() {
        let band = FrequencyBand::eu868();
        let preset = ModemPreset::long_fast();
        let model = calibrate_exponent(&band, &preset, 1274.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let near = sample_link(&band, &preset, &model, model.d0_m, -120.0, &mut rng).unwrap();
        assert!(near.received);
        let far = sample_link(&band, &preset, &model, 20_000.0, -120.0, &mut rng).unwrap();
        assert!(!far.received);
    }

    #[test]
    fn calibration_hits_field_ranges() {
        for (band, preset, target) in [
            (FrequencyBand::eu868(), ModemPreset::long_fast(), 1274.0),
            (FrequencyBand::eu433(), ModemPreset::short_fast(), 281.0),
        ] {
            let model = calibrate_exponent(&band, &preset, target).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let s = sample_link(&band, &preset, &model, target, -120.0, &mut rng).unwrap();
            assert!((s.rssi_dbm - preset.sensitivity_dbm).abs() < 0.01);
            assert!(s.received);
            let beyond = sample_link(&band, &preset, &model, target + 1.0, -120.0, &mut rng).unwrap();
            assert!(!beyond.received);
        }
    }

    #[test]
    fn calibration_rejects_degenerate_and_unreachable_targets() {
        let band = FrequencyBand::eu868();
        let preset = ModemPreset::long_fast();
        assert!(matches!(
            calibrate_exponent(&band, &preset, 1.0),
            Err(PhyError::Calibration(_))
        ));
        // Free space would carry the link hundreds of kilometres; 10 000 km needs n < 2.
        assert!(matches!(
            calibrate_exponent(&band, &preset, 1.0e7),
            Err(PhyError::Calibration(_))
        ));
    }

    #[test]
    fn monte_carlo_reception_at_1250m_follows_gaussian_margin() {
        // Oracle: P(received) = Phi(margin / sigma) with the margin from the
        // calibrated median curve. 10k draws keep the standard error near 0.005.
        let band = FrequencyBand::eu868();
        let preset = ModemPreset::long_fast();
        let model = calibrate_exponent(&band, &preset, 1274.0).unwrap().with_shadowing(6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                sample_link(&band, &preset, &model, 1250.0, -120.0, &mut rng)
                    .unwrap()
                    .received
            })
            .count();
        let p = hits as f64 / n as f64;
        let margin = 10.0 * model.exponent * (1274.0f64 / 1250.0).log10();
        let expected = 0.5 * (1.0 + erf(margin / 6.0 / std::f64::consts::SQRT_2));
        assert!((expected - 0.5202).abs() < 0.001, "oracle {expected}");
        assert!((p - expected).abs() < 0.02, "p={p} expected={expected}");
    }

    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592)
                * t
                * (-x * x).exp();
        if x >= 0.0 {
            y
        } else {
            -y
        }
    }

    #[test]
    fn radio_config_parses_toml_and_json() {
        let cfg = RadioConfig::from_toml_str(
            "band = \"EU433\"\npreset = \"ShortFast\"\nsigma_db = 0.0\nnoise_floor_dbm = -118.0\n",
        )
        .unwrap();
        let radio = cfg.resolve().unwrap();
        assert_eq!(radio.band.label, BandLabel::Eu433);
        assert_eq!(radio.preset.name, PresetName::ShortFast);
        assert!(
            (radio.model.median_loss_db(281.0).unwrap() - (radio.band.tx_power_dbm - radio.preset.sensitivity_dbm))
                .abs()
                < 1e-9
        );
        let cfg = RadioConfig::from_json_str(r#"{"band":"EU868","preset":"LongFast","exponent":3.2}"#).unwrap();
        assert_eq!(cfg.resolve().unwrap().model.exponent, 3.2);
        assert!(RadioConfig::from_json_str(r#"{"band":"EU868","exponent":1.5}"#)
            .unwrap()
            .resolve()
            .is_err());
        assert!(RadioConfig::from_toml_str("bogus = 1").is_err());
    }

    proptest! {
        #[test]
        fn airtime_monotone_in_payload(a in 1usize..255, b in 1usize..255, sf in 7u8..=12) {
            let preset = ModemPreset::from_params(PresetName::LongFast, sf, 250_000, 5, 16);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(airtime_ms(&preset, lo).unwrap() <= airtime_ms(&preset, hi).unwrap());
            prop_assert!(airtime_ms(&preset, lo).unwrap() > 0.0);
        }

        #[test]
        fn airtime_orders_by_spreading_factor(len in 1usize..255) {
            let sf11 = ModemPreset::from_params(PresetName::LongFast, 11, 250_000, 5, 16);
            let sf7 = ModemPreset::from_params(PresetName::ShortFast, 7, 250_000, 5, 16);
            prop_assert!(airtime_ms(&sf11, len).unwrap() > airtime_ms(&sf7, len).unwrap());
        }

        #[test]
        fn deterministic_loss_strictly_increasing(d1 in 0.5f64..50_000.0, step in 0.01f64..1000.0, n in 2.0f64..6.0) {
            let model = PathLossModel { reference_loss_db: 30.0, d0_m: 1.0, exponent: n, shadowing_sigma_db: 0.0 };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let a = path_loss_db(&model, d1, &mut rng).unwrap();
            let a2 = path_loss_db(&model, d1, &mut rng).unwrap();
            let b = path_loss_db(&model, d1 + step, &mut rng).unwrap();
            prop_assert_eq!(a, a2);
            prop_assert!(b > a);
        }

        #[test]
        fn reception_is_conjunction_of_thresholds(
            d in 1.0f64..5000.0, sigma in 0.0f64..12.0, noise in -130.0f64..-100.0, seed in any::<u64>(),
            long in any::<bool>(), eu868 in any::<bool>(),
        ) {
            let band = if eu868 { FrequencyBand::eu868() } else { FrequencyBand::eu433() };
            let preset = if long { ModemPreset::long_fast() } else { ModemPreset::short_fast() };
            let model = PathLossModel { reference_loss_db: 31.0, d0_m: 1.0, exponent: 3.5, shadowing_sigma_db: sigma };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_link(&band, &preset, &model, d, noise, &mut rng).unwrap();
            prop_assert_eq!(s.received, s.rssi_dbm >= preset.sensitivity_dbm && s.snr_db >= preset.snr_floor_db);
            prop_assert!((s.snr_db - (s.rssi_dbm - noise)).abs() < 1e-9);
        }

        #[test]
        fn calibration_round_trip(target in 50.0f64..3000.0, long in any::<bool>(), eu868 in any::<bool>()) {
            let band = if eu868 { FrequencyBand::eu868() } else { FrequencyBand::eu433() };
            let preset = if long { ModemPreset::long_fast() } else { ModemPreset::short_fast() };
            if let Ok(model) = calibrate_exponent(&band, &preset, target) {
                let rssi = band.tx_power_dbm - model.median_loss_db(target).unwrap();
                prop_assert!((rssi - preset.sensitivity_dbm).abs() < 0.01);
            }
        }
    }
}
