//! Declarative scenario files: nodes, links and a sweep, written in TOML.
//!
//! A scenario is the single source of truth for a simulation run. Parsing
//! applies an optional `link_defaults` table underneath every link (link
//! values win), so the typed [`Scenario`] always carries fully resolved links
//! and serializing it back yields an equivalent file.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{
    exponential_correlation, max_doppler_hz, ChannelSpec, DopplerModel, DopplerSpectrum, PdpModel,
    PowerDelayProfile, TwdpParams,
};
use crate::coding::{CodeConfig, DecoderAlg, Scheme};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackConfig, SinrAveraging};
use crate::mimo::{Detector, MimoMode};
use crate::waveform::{Numerology, WaveformConfig, WaveformKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub global: GlobalConfig,
    #[serde(rename = "nodes")]
    pub nodes: Vec<NodeConfig>,
    #[serde(rename = "links")]
    pub links: Vec<LinkConfig>,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub carrier_frequency_hz: f64,
    /// Thermal noise density; -174 dBm/Hz is the usual room-temperature value.
    #[serde(default = "default_noise_density")]
    pub noise_power_dbm_per_hz: f64,
}

fn default_noise_density() -> f64 {
    -174.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    Bs,
    Ue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub role: NodeRole,
    #[serde(default = "default_antennas")]
    pub n_antennas: usize,
    #[serde(default)]
    pub tx_power_dbm: f64,
}

fn default_antennas() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinkRole {
    #[default]
    Desired,
    Interference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub id: String,
    /// Transmitting and receiving node ids.
    pub tx: String,
    pub rx: String,
    #[serde(default)]
    pub role: LinkRole,
    pub pathloss_db: f64,
    pub waveform: WaveformSection,
    pub allocation: AllocationSection,
    #[serde(default)]
    pub channel: ChannelSection,
    /// Absent section means uncoded transmission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding: Option<CodingSection>,
    #[serde(default)]
    pub modulation: ModulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimo: Option<MimoSection>,
    /// Presence enables adaptive modulation and coding driven by CQI reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noma: Option<NomaSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSection {
    pub kind: WaveformKind,
    /// Numerology preset over the common 5.76 MHz grid; alternative to the
    /// explicit fields below.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scs_khz: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcarrier_spacing_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fft_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cp_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols_per_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wola_rolloff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ufmc_subband_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ufmc_filter_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ufmc_stopband_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fofdm_filter_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fofdm_passband_subcarriers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fbmc_overlap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    /// First occupied bin on the centered grid (DC sits at fft_size / 2).
    pub first_subcarrier: usize,
    pub n_subcarriers: usize,
    /// Caps the QAM symbols per frame; default fills the frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_symbols: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub model: PdpModel,
    pub rms_delay_spread_ns: Option<f64>,
    /// Custom profile taps; required iff `model = "custom"`.
    pub taps: Option<Vec<TapSection>>,
    pub doppler: DopplerSpectrum,
    pub velocity_kmh: Option<f64>,
    pub max_doppler_hz: Option<f64>,
    /// Continue the fading processes across frame boundaries instead of
    /// redrawing them (block fading) every frame.
    pub correlated_across_frames: bool,
    /// TWDP fading; `inf` is a legal K-factor (no diffuse component).
    pub twdp_k_factor: Option<f64>,
    pub twdp_delta: Option<f64>,
    /// Exponential antenna correlation coefficients.
    pub corr_rho_tx: Option<f64>,
    pub corr_rho_rx: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            model: PdpModel::Flat,
            rms_delay_spread_ns: None,
            taps: None,
            doppler: DopplerSpectrum::None,
            velocity_kmh: None,
            max_doppler_hz: None,
            correlated_across_frames: false,
            twdp_k_factor: None,
            twdp_delta: None,
            corr_rho_tx: None,
            corr_rho_rx: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSection {
    pub delay_ns: f64,
    pub power_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodingSection {
    pub scheme: Scheme,
    pub decoder: DecoderAlg,
    #[serde(default = "default_crc")]
    pub crc_length: usize,
    /// Fixed code rate; superseded by the CQI table under adaptive MCS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_rate: Option<f64>,
    /// Explicit transport block size; default fills the allocation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_length: Option<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub polar_design_snr_db: f64,
}

fn default_crc() -> usize {
    16
}
fn default_iterations() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSection {
    pub qam_order: usize,
}

impl Default for ModulationSection {
    fn default() -> Self {
        ModulationSection { qam_order: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MimoSection {
    pub mode: MimoMode,
    pub detector: Detector,
    /// Fixed transmission rank; default lets RI feedback decide.
    pub rank: Option<usize>,
    /// Fixed codebook index; default lets PMI feedback decide.
    pub pmi: Option<usize>,
}

impl Default for MimoSection {
    fn default() -> Self {
        MimoSection {
            mode: MimoMode::default(),
            detector: Detector::default(),
            rank: None,
            pmi: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackSection {
    pub delay_frames: usize,
    pub sinr_averaging: SinrAveraging,
    pub bler_target: f64,
    /// Caps the modulation order the CQI selection may pick.
    pub max_qam_order: usize,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        let base = FeedbackConfig::default();
        FeedbackSection {
            delay_frames: base.delay_frames,
            sinr_averaging: base.sinr_averaging,
            bler_target: base.bler_target,
            max_qam_order: 64,
        }
    }
}

impl FeedbackSection {
    pub fn to_config(&self) -> FeedbackConfig {
        FeedbackConfig {
            delay_frames: self.delay_frames,
            sinr_averaging: self.sinr_averaging,
            bler_target: self.bler_target,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NomaReceiver {
    /// Joint max-log demapping over the superposed constellation.
    #[default]
    MlComposite,
    /// Decode the far user first, cancel it, then decode the near user.
    Sic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NomaSection {
    /// The cell-edge link superposed on this link's allocation.
    pub far_link: String,
    /// Index into the fixed (near, far) power-split table.
    #[serde(default = "default_power_ratio")]
    pub power_ratio_index: usize,
    #[serde(default)]
    pub receiver: NomaReceiver,
}

fn default_power_ratio() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    PathlossDb,
    TxPowerDbm,
    VelocityKmh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub frames_per_point: usize,
    pub master_seed: u64,
    /// Links the parameter applies to; default all links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_links: Option<Vec<String>>,
    /// Nodes a `tx_power_dbm` sweep applies to; default all nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_nodes: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; the CLI flag takes precedence.
    pub directory: Option<String>,
    pub dump_frames: bool,
}

// ---------------------------------------------------------------------------
// Parsing with link defaults
// ---------------------------------------------------------------------------

/// Recursively merges `defaults` underneath `value`: table entries missing
/// from `value` are copied in, nested tables merge, everything else keeps the
/// link's own value.
fn merge_defaults(value: &mut toml::Value, defaults: &toml::Value) {
    if let (toml::Value::Table(v), toml::Value::Table(d)) = (value, defaults) {
        for (key, dval) in d {
            match v.get_mut(key) {
                Some(existing) => merge_defaults(existing, dval),
                None => {
                    v.insert(key.clone(), dval.clone());
                }
            }
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::validation("<root>", format!("TOML parse failure: {e}")))?;
        if let toml::Value::Table(root) = &mut value {
            if let Some(defaults) = root.remove("link_defaults") {
                if let Some(toml::Value::Array(links)) = root.get_mut("links") {
                    for link in links {
                        merge_defaults(link, &defaults);
                    }
                }
            }
        }
        let scenario: Scenario = value
            .try_into()
            .map_err(|e| Error::validation("<root>", e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::contract(format!("scenario serialization failed: {e}")))
    }

    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, id: &str) -> Option<&LinkConfig> {
        self.links.iter().find(|l| l.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.global.carrier_frequency_hz > 0.0) {
            return Err(Error::validation(
                "global.carrier_frequency_hz",
                "must be positive",
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::validation("nodes", "at least one node required"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let key = |f: &str| format!("nodes[{i}].{f}");
            if n.id.is_empty() {
                return Err(Error::validation(key("id"), "must be non-empty"));
            }
            if self.nodes.iter().filter(|m| m.id == n.id).count() > 1 {
                return Err(Error::validation(key("id"), format!("duplicate id `{}`", n.id)));
            }
            if n.n_antennas == 0 {
                return Err(Error::validation(key("n_antennas"), "must be >= 1"));
            }
        }
        if self.links.is_empty() {
            return Err(Error::validation("links", "at least one link required"));
        }
        let mut sample_rate: Option<f64> = None;
        for (i, l) in self.links.iter().enumerate() {
            let key = |f: &str| format!("links[{i}].{f}");
            if l.id.is_empty() {
                return Err(Error::validation(key("id"), "must be non-empty"));
            }
            if self.links.iter().filter(|m| m.id == l.id).count() > 1 {
                return Err(Error::validation(key("id"), format!("duplicate id `{}`", l.id)));
            }
            for (field, id) in [("tx", &l.tx), ("rx", &l.rx)] {
                if self.node(id).is_none() {
                    return Err(Error::validation(
                        key(field),
                        format!("unknown node `{id}`"),
                    ));
                }
            }
            if l.tx == l.rx {
                return Err(Error::validation(key("rx"), "tx and rx must differ"));
            }
            let wf = l.waveform_config().map_err(|e| match e {
                Error::Validation { .. } => e,
                other => Error::validation(key("waveform"), other.to_string()),
            })?;
            wf.validate()
                .map_err(|e| Error::validation(key("waveform"), e.to_string()))?;
            let fs = wf.numerology.sample_rate();
            match sample_rate {
                None => sample_rate = Some(fs),
                Some(prev) if (prev - fs).abs() > 1e-6 => {
                    return Err(Error::validation(
                        key("waveform"),
                        format!("sampling rate {fs} Hz conflicts with {prev} Hz used elsewhere"),
                    ));
                }
                _ => {}
            }
            let n = wf.numerology.fft_size;
            if l.allocation.n_subcarriers == 0 {
                return Err(Error::validation(key("allocation.n_subcarriers"), "must be >= 1"));
            }
            if l.allocation.first_subcarrier + l.allocation.n_subcarriers > n {
                return Err(Error::validation(
                    key("allocation"),
                    format!("allocation exceeds the {n}-bin grid"),
                ));
            }
            if !matches!(l.modulation.qam_order, 4 | 16 | 64 | 256) {
                return Err(Error::validation(
                    key("modulation.qam_order"),
                    "must be 4, 16, 64 or 256",
                ));
            }
            l.channel_section_check()
                .map_err(|e| Error::validation(key("channel"), e.to_string()))?;
            if let Some(coding) = &l.coding {
                if coding.code_rate.is_none() && l.feedback.is_none() {
                    return Err(Error::validation(
                        key("coding.code_rate"),
                        "required without adaptive MCS feedback",
                    ));
                }
                if !matches!(coding.crc_length, 0 | 8 | 16 | 24) {
                    return Err(Error::validation(
                        key("coding.crc_length"),
                        "must be 0, 8, 16 or 24",
                    ));
                }
                if !coding.decoder.legal_for(coding.scheme) {
                    return Err(Error::validation(
                        key("coding.decoder"),
                        format!("{:?} is not legal for {:?}", coding.decoder, coding.scheme),
                    ));
                }
            }
            if let Some(mimo) = &l.mimo {
                let n_tx = self.node(&l.tx).expect("checked").n_antennas;
                let n_rx = self.node(&l.rx).expect("checked").n_antennas;
                if let Some(rank) = mimo.rank {
                    if rank == 0 || rank > n_tx.min(n_rx) {
                        return Err(Error::validation(
                            key("mimo.rank"),
                            format!("rank {rank} impossible with {n_tx} tx / {n_rx} rx antennas"),
                        ));
                    }
                }
                if mimo.mode == MimoMode::TransmitDiversity && n_tx != 2 {
                    return Err(Error::validation(
                        key("mimo.mode"),
                        "transmit diversity requires exactly 2 tx antennas",
                    ));
                }
            }
            if let Some(noma) = &l.noma {
                let far = self.link(&noma.far_link).ok_or_else(|| {
                    Error::validation(key("noma.far_link"), format!("unknown link `{}`", noma.far_link))
                })?;
                if far.id == l.id {
                    return Err(Error::validation(key("noma.far_link"), "cannot pair with itself"));
                }
                if far.tx != l.tx {
                    return Err(Error::validation(
                        key("noma.far_link"),
                        "superposed links must share the transmitter",
                    ));
                }
                if noma.power_ratio_index >= crate::topology::MUST_RATIOS.len() {
                    return Err(Error::validation(
                        key("noma.power_ratio_index"),
                        format!("only {} power splits defined", crate::topology::MUST_RATIOS.len()),
                    ));
                }
            }
        }
        if self.sweep.values.is_empty() {
            return Err(Error::validation("sweep.values", "at least one value required"));
        }
        if self.sweep.frames_per_point == 0 {
            return Err(Error::validation("sweep.frames_per_point", "must be >= 1"));
        }
        if let Some(targets) = &self.sweep.target_links {
            for t in targets {
                if self.link(t).is_none() {
                    return Err(Error::validation(
                        "sweep.target_links",
                        format!("unknown link `{t}`"),
                    ));
                }
            }
        }
        if let Some(targets) = &self.sweep.target_nodes {
            for t in targets {
                if self.node(t).is_none() {
                    return Err(Error::validation(
                        "sweep.target_nodes",
                        format!("unknown node `{t}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Builders into module configurations
// ---------------------------------------------------------------------------

impl LinkConfig {
    pub fn waveform_config(&self) -> Result<WaveformConfig> {
        let w = &self.waveform;
        let numerology = match (w.scs_khz, w.fft_size) {
            (Some(scs), None) => Numerology::from_scs_khz(scs)?,
            (None, Some(fft_size)) => {
                let scs = w.subcarrier_spacing_hz.ok_or_else(|| {
                    Error::config("explicit numerology needs subcarrier_spacing_hz")
                })?;
                Numerology {
                    subcarrier_spacing_hz: scs,
                    fft_size,
                    cp_samples: w
                        .cp_samples
                        .ok_or_else(|| Error::config("explicit numerology needs cp_samples"))?,
                    symbols_per_frame: w.symbols_per_frame.unwrap_or(14),
                }
            }
            _ => {
                return Err(Error::config(
                    "waveform needs either scs_khz or an explicit fft_size numerology",
                ))
            }
        };
        let mut cfg = WaveformConfig::new(w.kind, numerology);
        cfg.wola_rolloff = w.wola_rolloff;
        if let Some(v) = w.ufmc_subband_size {
            cfg.ufmc_subband_size = v;
        }
        cfg.ufmc_filter_length = w.ufmc_filter_length;
        if let Some(v) = w.ufmc_stopband_db {
            cfg.ufmc_stopband_db = v;
        }
        cfg.fofdm_filter_length = w.fofdm_filter_length;
        // Default the f-OFDM passband to the allocation so the filter only
        // keeps the subcarriers this link actually occupies.
        cfg.fofdm_passband_subcarriers = Some(
            w.fofdm_passband_subcarriers
                .unwrap_or(self.allocation.n_subcarriers),
        );
        // Center the subband filter on the allocation (offset from DC, which
        // sits at centered index N/2; a half-bin offset is legal).
        cfg.fofdm_center_bin = Some(
            self.allocation.first_subcarrier as f64
                + (self.allocation.n_subcarriers as f64 - 1.0) / 2.0
                - cfg.numerology.fft_size as f64 / 2.0,
        );
        if let Some(v) = w.fbmc_overlap {
            cfg.fbmc_overlap = v;
        }
        Ok(cfg)
    }

    fn channel_section_check(&self) -> Result<()> {
        let c = &self.channel;
        if c.model == PdpModel::Custom && c.taps.is_none() {
            return Err(Error::config("custom profile needs explicit taps"));
        }
        if c.model != PdpModel::Custom && c.taps.is_some() {
            return Err(Error::config("taps are only legal with model = \"custom\""));
        }
        if c.doppler != DopplerSpectrum::None
            && c.velocity_kmh.is_none()
            && c.max_doppler_hz.is_none()
        {
            return Err(Error::config(
                "a Doppler spectrum needs velocity_kmh or max_doppler_hz",
            ));
        }
        if c.twdp_k_factor.is_some() != c.twdp_delta.is_some() {
            return Err(Error::config("TWDP needs both twdp_k_factor and twdp_delta"));
        }
        if c.twdp_k_factor.is_some() && c.doppler != DopplerSpectrum::None {
            return Err(Error::config("TWDP fading requires doppler = \"none\""));
        }
        Ok(())
    }

    /// Channel model for this link given the nodes' antenna counts and the
    /// scenario-wide carrier frequency.
    pub fn channel_spec(
        &self,
        carrier_hz: f64,
        n_tx: usize,
        n_rx: usize,
        sampling_rate: f64,
    ) -> Result<ChannelSpec> {
        let c = &self.channel;
        let pdp = match c.model {
            PdpModel::Custom => PowerDelayProfile::from_pairs(
                &c.taps
                    .as_ref()
                    .expect("validated")
                    .iter()
                    .map(|t| (t.delay_ns, t.power_db))
                    .collect::<Vec<_>>(),
            )?,
            model => PowerDelayProfile::from_model(model, c.rms_delay_spread_ns.map(|t| t * 1e-9))?,
        };
        let max_doppler = match (c.max_doppler_hz, c.velocity_kmh) {
            (Some(fd), _) => fd,
            (None, Some(v)) => max_doppler_hz(v / 3.6, carrier_hz),
            (None, None) => 0.0,
        };
        let doppler = DopplerModel {
            spectrum: c.doppler,
            max_doppler_hz: max_doppler,
            correlated_across_frames: c.correlated_across_frames,
        };
        let twdp = match (c.twdp_k_factor, c.twdp_delta) {
            (Some(k), Some(delta)) => Some(TwdpParams { k_factor: k, delta }),
            _ => None,
        };
        let corr: Option<(DMatrix<Complex64>, DMatrix<Complex64>)> =
            match (c.corr_rho_tx, c.corr_rho_rx) {
                (None, None) => None,
                (rho_tx, rho_rx) => Some((
                    exponential_correlation(n_tx, rho_tx.unwrap_or(0.0)),
                    exponential_correlation(n_rx, rho_rx.unwrap_or(0.0)),
                )),
            };
        Ok(ChannelSpec {
            pdp,
            doppler,
            twdp,
            corr,
            n_rx,
            n_tx,
            sampling_rate,
            pathloss_db: self.pathloss_db,
        })
    }

    /// Fixed-MCS code configuration for a given transport block size.
    pub fn code_config(&self, info_length: usize) -> Result<Option<CodeConfig>> {
        let Some(coding) = &self.coding else {
            return Ok(None);
        };
        let rate = coding
            .code_rate
            .ok_or_else(|| Error::config("fixed MCS needs coding.code_rate"))?;
        Ok(Some(self.code_config_at(info_length, rate)))
    }

    /// Code configuration with an explicit rate (used by adaptive MCS).
    pub fn code_config_at(&self, info_length: usize, code_rate: f64) -> CodeConfig {
        let coding = self.coding.as_ref().expect("coding section present");
        CodeConfig {
            scheme: coding.scheme,
            info_length,
            crc_length: coding.crc_length,
            code_rate,
            decoder: coding.decoder,
            iterations_or_list_size: coding.iterations,
            polar_design_snr_db: coding.polar_design_snr_db,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[global]
carrier_frequency_hz = 2.5e9

[[nodes]]
id = "bs"
role = "bs"
tx_power_dbm = 30.0

[[nodes]]
id = "ue"
role = "ue"

[link_defaults]
waveform = { kind = "cp-ofdm", scs_khz = 15 }
modulation = { qam_order = 16 }

[[links]]
id = "dl"
tx = "bs"
rx = "ue"
pathloss_db = 90.0
allocation = { first_subcarrier = 156, n_subcarriers = 72 }

[sweep]
parameter = "pathloss_db"
values = [80.0, 90.0, 100.0]
frames_per_point = 10
master_seed = 1
"#;

    #[test]
    fn parses_with_link_defaults_merged() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.links.len(), 1);
        let l = &s.links[0];
        assert_eq!(l.waveform.kind, WaveformKind::CpOfdm);
        assert_eq!(l.waveform.scs_khz, Some(15));
        assert_eq!(l.modulation.qam_order, 16);
        assert_eq!(l.channel.model, PdpModel::Flat);
        assert!(l.coding.is_none());
    }

    #[test]
    fn link_values_override_defaults() {
        let text = MINIMAL.replace(
            "allocation = { first_subcarrier = 156, n_subcarriers = 72 }",
            "allocation = { first_subcarrier = 156, n_subcarriers = 72 }\nmodulation = { qam_order = 64 }",
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s.links[0].modulation.qam_order, 64);
    }

    #[test]
    fn round_trip_identity() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        let text = s.to_toml_string().unwrap();
        let s2 = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn validation_reports_key_paths() {
        let text = MINIMAL.replace("rx = \"ue\"", "rx = \"nobody\"");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        match err {
            Error::Validation { key, .. } => assert_eq!(key, "links[0].rx"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 99");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn rejects_oversized_allocation() {
        let text = MINIMAL.replace("n_subcarriers = 72 }", "n_subcarriers = 400 }");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("allocation"), "{err}");
    }

    #[test]
    fn rejects_mixed_sampling_rates() {
        // No link_defaults here: each link carries its own waveform so the
        // second one can use an explicit (slower) numerology.
        let text = r#"
schema_version = 1

[global]
carrier_frequency_hz = 2.5e9

[[nodes]]
id = "bs"
role = "bs"

[[nodes]]
id = "ue"
role = "ue"

[[links]]
id = "dl"
tx = "bs"
rx = "ue"
pathloss_db = 90.0
waveform = { kind = "cp-ofdm", scs_khz = 15 }
allocation = { first_subcarrier = 156, n_subcarriers = 72 }

[[links]]
id = "dl2"
tx = "bs"
rx = "ue"
pathloss_db = 90.0
waveform = { kind = "cp-ofdm", subcarrier_spacing_hz = 15e3, fft_size = 128, cp_samples = 9 }
allocation = { first_subcarrier = 28, n_subcarriers = 72 }

[sweep]
parameter = "pathloss_db"
values = [80.0]
frames_per_point = 1
master_seed = 1
"#;
        let err = Scenario::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("sampling rate"), "{err}");
    }

    #[test]
    fn channel_spec_builder_converts_units() {
        let text = MINIMAL.replace(
            "pathloss_db = 90.0",
            "pathloss_db = 90.0\nchannel = { model = \"tdl-a\", rms_delay_spread_ns = 45.0, doppler = \"jakes\", velocity_kmh = 200.0 }",
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        let spec = s.links[0]
            .channel_spec(s.global.carrier_frequency_hz, 1, 1, 5.76e6)
            .unwrap();
        // 200 km/h at 2.5 GHz: fd = v / lambda = 55.56 * 2.5e9 / c.
        let fd = (200.0 / 3.6) * 2.5e9 / crate::channel::SPEED_OF_LIGHT;
        approx::assert_abs_diff_eq!(spec.doppler.max_doppler_hz, fd, epsilon = 1e-9);
        assert_eq!(spec.pdp.taps.len(), 23);
    }

    #[test]
    fn infinite_twdp_k_factor_parses() {
        let text = MINIMAL.replace(
            "pathloss_db = 90.0",
            "pathloss_db = 90.0\nchannel = { twdp_k_factor = inf, twdp_delta = 0.0 }",
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        assert!(s.links[0].channel.twdp_k_factor.unwrap().is_infinite());
    }
}
