//! Channel coding: convolutional, turbo, LDPC and polar codes with CRC
//! attachment, filler handling, rate matching and LLR-domain decoding.
//!
//! All encoders produce a [`CodedBlock`] whose `codeword_bits` already have
//! the configured target length `ceil((info + crc) / rate)`; all decoders take
//! LLRs of exactly that length (positive LLR = bit 0 more likely).

pub mod bcjr;
pub mod convolutional;
pub mod crc;
pub mod ldpc;
pub mod polar;
pub mod ratematch;
pub mod turbo;

pub use crc::{crc_attach, Crc};

use crate::error::{Error, Result};

/// LLRs are clipped to this magnitude before decoding to keep exp-domain
/// arithmetic finite.
pub const LLR_CLIP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Convolutional,
    Turbo,
    Ldpc,
    Polar,
}

/// Decoding algorithms; each is legal only for specific schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderAlg {
    LogMap,
    LinearLogMap,
    MaxLogMap,
    SumProduct,
    PwlMinSum,
    MinSum,
    Sc,
    ListSc,
    CrcListSc,
}

impl DecoderAlg {
    pub fn legal_for(self, scheme: Scheme) -> bool {
        use DecoderAlg::*;
        match scheme {
            Scheme::Turbo => matches!(self, LogMap | LinearLogMap | MaxLogMap),
            Scheme::Convolutional => matches!(self, LogMap | MaxLogMap),
            Scheme::Ldpc => matches!(self, SumProduct | PwlMinSum | MinSum),
            Scheme::Polar => matches!(self, Sc | ListSc | CrcListSc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CodeConfig {
    pub scheme: Scheme,
    /// Information bits, not counting the CRC.
    pub info_length: usize,
    /// CRC length in {0, 8, 16, 24}; 0 disables the CRC.
    pub crc_length: usize,
    /// Code rate in (0, 1], counting info + CRC against transmitted bits.
    pub code_rate: f64,
    pub decoder: DecoderAlg,
    /// Decoding iterations (turbo/LDPC) or list size (polar); ignored for
    /// convolutional codes.
    #[serde(default = "default_iterations")]
    pub iterations_or_list_size: usize,
    /// Design SNR in dB for the polar-code construction.
    #[serde(default)]
    pub polar_design_snr_db: f64,
}

fn default_iterations() -> usize {
    8
}

impl CodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.info_length == 0 {
            return Err(Error::config("info_length must be >= 1"));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(Error::config(format!(
                "code_rate must be in (0, 1], got {}",
                self.code_rate
            )));
        }
        if !matches!(self.crc_length, 0 | 8 | 16 | 24) {
            return Err(Error::config(format!(
                "unsupported crc_length {}",
                self.crc_length
            )));
        }
        if !self.decoder.legal_for(self.scheme) {
            return Err(Error::config(format!(
                "decoder {:?} is not legal for scheme {:?}",
                self.decoder, self.scheme
            )));
        }
        if self.scheme != Scheme::Convolutional && self.iterations_or_list_size == 0 {
            return Err(Error::config("iterations_or_list_size must be >= 1"));
        }
        if self.scheme == Scheme::Convolutional && self.code_rate > 1.0 / 3.0 + 1e-12 {
            return Err(Error::config(
                "convolutional mother rate 1/3 cannot be punctured above 1/3 here",
            ));
        }
        if self.scheme == Scheme::Polar && self.decoder == DecoderAlg::CrcListSc && self.crc_length == 0
        {
            return Err(Error::config("CRC-aided list decoding requires a CRC"));
        }
        Ok(())
    }

    /// info + CRC bits entering the encoder proper.
    pub fn block_length(&self) -> usize {
        self.info_length + self.crc_length
    }

    /// Transmitted codeword length: ceil((info + crc) / rate).
    pub fn target_length(&self) -> usize {
        let k = self.block_length() as f64;
        (k / self.code_rate - 1e-9).ceil() as usize
    }
}

/// Result of encoding one transport block.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedBlock {
    pub info_bits: Vec<u8>,
    pub crc_bits: Vec<u8>,
    /// Rate-matched transmitted bits of length `cfg.target_length()`.
    pub codeword_bits: Vec<u8>,
    /// Filler positions within the encoder input block (LDPC only).
    pub filler_positions: Vec<usize>,
    /// Mother-codeword positions that were not transmitted.
    pub punctured_positions: Vec<usize>,
}

/// Decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub info_bits: Vec<u8>,
    pub crc_pass: bool,
    pub iterations_used: usize,
}

/// Encodes `info` (without CRC) according to `cfg`.
pub fn encode(info: &[u8], cfg: &CodeConfig) -> Result<CodedBlock> {
    cfg.validate()?;
    if info.len() != cfg.info_length {
        return Err(Error::contract(format!(
            "info length {} does not match configured {}",
            info.len(),
            cfg.info_length
        )));
    }
    let block = if cfg.crc_length > 0 {
        crc::Crc::new(cfg.crc_length)?.attach(info)
    } else {
        info.to_vec()
    };
    match cfg.scheme {
        Scheme::Convolutional => convolutional::encode(&block, cfg),
        Scheme::Turbo => turbo::encode(&block, cfg),
        Scheme::Ldpc => ldpc::encode(&block, cfg),
        Scheme::Polar => polar::encode(&block, cfg),
    }
    .map(|mut cb| {
        cb.info_bits = info.to_vec();
        cb.crc_bits = block[info.len()..].to_vec();
        cb
    })
}

/// Decodes LLRs (one per transmitted codeword bit) according to `cfg`.
pub fn decode(llrs: &[f64], cfg: &CodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    if llrs.len() != cfg.target_length() {
        return Err(Error::contract(format!(
            "LLR length {} does not match codeword length {}",
            llrs.len(),
            cfg.target_length()
        )));
    }
    let clipped: Vec<f64> = llrs.iter().map(|&l| l.clamp(-LLR_CLIP, LLR_CLIP)).collect();
    let mut res = match cfg.scheme {
        Scheme::Convolutional => convolutional::decode(&clipped, cfg),
        Scheme::Turbo => turbo::decode(&clipped, cfg),
        Scheme::Ldpc => ldpc::decode(&clipped, cfg),
        Scheme::Polar => polar::decode(&clipped, cfg),
    }?;
    if cfg.crc_length > 0 {
        let crc = crc::Crc::new(cfg.crc_length)?;
        res.crc_pass = crc.check(&res.info_bits);
        res.info_bits.truncate(cfg.info_length);
    } else {
        res.info_bits.truncate(cfg.info_length);
        res.crc_pass = true;
    }
    Ok(res)
}

/// Noiseless BPSK LLRs for a codeword, handy for roundtrip tests.
pub fn noiseless_llrs(codeword: &[u8], magnitude: f64) -> Vec<f64> {
    codeword
        .iter()
        .map(|&b| if b == 0 { magnitude } else { -magnitude })
        .collect()
}
