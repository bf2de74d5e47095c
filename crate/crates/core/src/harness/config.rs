use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dpd::{ImbalanceSet, OffsetMode};
use crate::error::{invalid, Error, Result};
use crate::optics::{FiberParams, LaserParams, ModulatorParams, PdParams};
use crate::receiver::ReceiverParams;
use crate::rx::{LmsConfig, SYNC_PSR_THRESHOLD_DB};
use crate::signal::RrcSpec;
use crate::tx::{FrequencyResponse, SubcarrierPlan};

/// Schema version written into manifests.
pub const CONFIG_VERSION: u32 = 1;

/// Where the optional AWGN loading is injected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AwgnLocation {
    /// Complex noise on the unit-RMS composite drive, before DPD.
    #[default]
    Drive,
    /// Complex noise on the modulated field, relative to its signal power.
    Optical,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwgnConfig {
    pub snr_db: f64,
    pub location: AwgnLocation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatorConfig {
    /// Inner MZI extinction ratio, applied to both I and Q.
    pub er_i_db: f64,
    /// Outer MZI extinction ratio.
    pub er_o_db: f64,
    /// Q inner MZI extinction ratio when it differs from `er_i_db`.
    pub er_q_db: Option<f64>,
    pub v_pi_v: f64,
    pub v_bias_i_v: f64,
    pub v_bias_q_v: f64,
    /// Arm phase per unit of composite amplitude without pre-distortion.
    pub drive_scale_rad: f64,
}

impl ModulatorConfig {
    pub fn imbalance(&self) -> Result<ImbalanceSet> {
        let base = ImbalanceSet::from_er_db(self.er_i_db, self.er_o_db)?;
        match self.er_q_db {
            Some(er_q) => ImbalanceSet::new(base.g_i, crate::dpd::er_to_imbalance(er_q)?, base.g_p),
            None => Ok(base),
        }
    }

    pub fn params(&self) -> Result<ModulatorParams> {
        let mut m = ModulatorParams::null_biased(self.imbalance()?, self.v_pi_v);
        m.v_bias_i = self.v_bias_i_v;
        m.v_bias_q = self.v_bias_q_v;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpdConfig {
    pub enabled: bool,
    pub alpha: f64,
    /// Target amplitude per unit of composite amplitude fed to the DPD.
    pub drive_scale: f64,
    pub offset_mode: OffsetMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxConfig {
    pub n_bands: usize,
    pub symbol_rate_hz: f64,
    pub guard_band_hz: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    pub rrc_span_symbols: usize,
    pub payload_symbols: usize,
    pub preamble_symbols: usize,
    /// DAC clipping level above the drive RMS; `inf` disables clipping.
    pub clipping_ratio_db: f64,
    /// DAC resolution; 0 disables quantization.
    pub dac_enob: u32,
    pub response: FrequencyResponse,
    pub pre_emphasis_max_boost_db: f64,
}

impl TxConfig {
    pub fn plan(&self) -> SubcarrierPlan {
        SubcarrierPlan {
            n_bands: self.n_bands,
            symbol_rate_hz: self.symbol_rate_hz,
            guard_band_hz: self.guard_band_hz,
            rolloff: self.rolloff,
        }
    }

    pub fn rrc(&self) -> RrcSpec {
        RrcSpec {
            rolloff: self.rolloff,
            span_symbols: self.rrc_span_symbols,
            samples_per_symbol: self.samples_per_symbol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub theta_deg: f64,
    pub delta_theta_deg: f64,
    pub delta_theta_1_deg: f64,
    pub delta_theta_2_deg: f64,
    pub carrier_filter_bw_hz: f64,
    /// ADC resolution; 0 disables quantization.
    pub adc_enob: u32,
}

impl ReceiverConfig {
    pub fn params(&self) -> ReceiverParams {
        ReceiverParams {
            theta_rad: self.theta_deg.to_radians(),
            delta_theta_rad: self.delta_theta_deg.to_radians(),
            delta_theta_1_rad: self.delta_theta_1_deg.to_radians(),
            delta_theta_2_rad: self.delta_theta_2_deg.to_radians(),
            carrier_filter_bw_hz: self.carrier_filter_bw_hz,
            ..ReceiverParams::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxPath {
    /// Closed-form reconstruction, then CD compensation.
    #[default]
    Analytic,
    /// Per-branch CD compensation and a 3×1 adaptive equalizer per band.
    Lms,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxDspConfig {
    pub path: RxPath,
    pub lms: LmsConfig,
    pub sync_threshold_db: f64,
}

/// Full description of one link run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub rop_dbm: f64,
    pub awgn: AwgnConfig,
    pub laser: LaserParams,
    pub modulator: ModulatorConfig,
    pub dpd: DpdConfig,
    pub tx: TxConfig,
    pub fiber: FiberParams,
    pub receiver: ReceiverConfig,
    pub photodiode: PdParams,
    pub rxdsp: RxDspConfig,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sample_rate_hz: 160e9,
            rop_dbm: 0.0,
            awgn: AwgnConfig { snr_db: 26.0, location: AwgnLocation::Drive },
            laser: LaserParams::default(),
            modulator: ModulatorConfig {
                er_i_db: 7.0,
                er_o_db: 25.0,
                er_q_db: None,
                v_pi_v: 4.0,
                v_bias_i_v: 0.0,
                v_bias_q_v: 0.0,
                drive_scale_rad: 0.8,
            },
            dpd: DpdConfig { enabled: true, alpha: 0.08, drive_scale: 0.2, offset_mode: OffsetMode::Literal },
            tx: TxConfig {
                n_bands: 2,
                symbol_rate_hz: 40e9,
                guard_band_hz: 4e9,
                rolloff: 0.01,
                samples_per_symbol: 2,
                rrc_span_symbols: 256,
                payload_symbols: 1 << 16,
                preamble_symbols: 512,
                clipping_ratio_db: 10.0,
                dac_enob: 6,
                response: FrequencyResponse::SuperGaussian { order: 5, bandwidth_3db_hz: 35e9 },
                pre_emphasis_max_boost_db: 12.0,
            },
            fiber: FiberParams::default(),
            receiver: ReceiverConfig {
                theta_deg: 120.0,
                delta_theta_deg: 0.0,
                delta_theta_1_deg: 0.0,
                delta_theta_2_deg: 0.0,
                carrier_filter_bw_hz: 2e9,
                adc_enob: 6,
            },
            photodiode: PdParams::default(),
            rxdsp: RxDspConfig { path: RxPath::Analytic, lms: LmsConfig::default(), sync_threshold_db: SYNC_PSR_THRESHOLD_DB },
        }
    }
}

impl LinkConfig {
    /// Reduced payload for quick runs and CI.
    pub fn fast() -> Self {
        let mut c = Self::default();
        c.tx.payload_symbols = 1 << 14;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(invalid("sample_rate_hz", "must be positive"));
        }
        if !self.rop_dbm.is_finite() {
            return Err(invalid("rop_dbm", "must be finite"));
        }
        if self.awgn.location != AwgnLocation::Off && !self.awgn.snr_db.is_finite() {
            return Err(invalid("awgn.snr_db", "must be finite when noise loading is on"));
        }
        self.laser.validate()?;
        self.modulator.params()?;
        if !(self.dpd.alpha >= 0.0 && self.dpd.alpha.is_finite()) {
            return Err(invalid("dpd.alpha", "must be finite and >= 0"));
        }
        if !(self.dpd.drive_scale > 0.0 && self.dpd.drive_scale.is_finite()) {
            return Err(invalid("dpd.drive_scale", "must be positive"));
        }
        if !(self.modulator.drive_scale_rad > 0.0 && self.modulator.drive_scale_rad.is_finite()) {
            return Err(invalid("modulator.drive_scale_rad", "must be positive"));
        }
        self.tx.plan().validate()?;
        self.tx.rrc().validate()?;
        if 2.0 * self.tx.plan().band_edge_hz() >= self.sample_rate_hz {
            return Err(invalid("sample_rate_hz", "too low for the subcarrier plan"));
        }
        if self.tx.payload_symbols == 0 {
            return Err(invalid("tx.payload_symbols", "must be >= 1"));
        }
        if self.tx.preamble_symbols < 64 {
            return Err(invalid("tx.preamble_symbols", "must be >= 64"));
        }
        if self.tx.clipping_ratio_db.is_nan() || self.tx.clipping_ratio_db <= 0.0 {
            return Err(invalid("tx.clipping_ratio_db", "must be positive or inf"));
        }
        if !(self.tx.pre_emphasis_max_boost_db >= 0.0) {
            return Err(invalid("tx.pre_emphasis_max_boost_db", "must be >= 0"));
        }
        self.fiber.validate()?;
        self.receiver.params().validate(self.tx.guard_band_hz)?;
        self.photodiode.validate()?;
        self.rxdsp.lms.validate()?;
        Ok(())
    }

    /// Canonical text form used for manifests and the digest.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn digest(&self) -> String {
        let text = self.to_toml().unwrap_or_else(|e| format!("unserializable: {e}"));
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses a possibly partial TOML document; missing fields keep their
    /// defaults, unknown fields are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = Self::default().to_value()?;
        merge(&mut base, user);
        Self::from_value(base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Sets one field by dotted path, e.g. `("modulator.er_i_db", "6")`.
    /// The value is parsed as a TOML literal, falling back to a bare string.
    pub fn with_override(&self, path: &str, value: &str) -> Result<Self> {
        let mut root = self.to_value()?;
        let parsed = parse_literal(value);
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("malformed key path '{path}'")));
        }
        let mut node = &mut root;
        for (depth, key) in keys.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("'{}' is not a table", keys[..depth].join("."))))?;
            if depth + 1 == keys.len() {
                if !table.contains_key(*key) && !is_optional_leaf(path) {
                    return Err(Error::Config(format!("unknown config field '{path}'")));
                }
                table.insert((*key).to_string(), parsed);
                break;
            }
            node = table
                .get_mut(*key)
                .ok_or_else(|| Error::Config(format!("unknown config section '{}'", keys[..=depth].join("."))))?;
        }
        Self::from_value(root)
    }

    fn to_value(&self) -> Result<toml::Value> {
        toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn from_value(v: toml::Value) -> Result<Self> {
        let cfg: Self = v.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// Option fields vanish from the serialized form when unset.
fn is_optional_leaf(path: &str) -> bool {
    matches!(path, "modulator.er_q_db" | "laser.rin_dbc_hz")
}

fn parse_literal(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn merge(base: &mut toml::Value, user: toml::Table) {
    let Some(table) = base.as_table_mut() else { return };
    for (k, v) in user {
        match (table.get_mut(&k), v) {
            (Some(existing @ toml::Value::Table(_)), toml::Value::Table(sub)) => merge(existing, sub),
            (_, v) => {
                table.insert(k, v);
            }
        }
    }
}
