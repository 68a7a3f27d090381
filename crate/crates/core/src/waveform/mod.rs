//! Multicarrier waveforms: CP-OFDM, WOLA, UFMC, f-OFDM and FBMC-OQAM.
//!
//! All waveforms share the resource-grid abstraction: a grid of QAM symbols
//! over centered subcarrier indices (index `n_bins/2` is DC) and time slots.
//! `modulate` turns a grid into complex baseband samples; `demodulate`
//! recovers a raw grid whose entries still carry the propagation channel
//! (waveform-internal filtering is already compensated); `finalize` maps the
//! equalized raw grid back to QAM symbol estimates. For the OFDM family the
//! raw grid is the QAM grid; FBMC-OQAM uses two raw half-symbol slots per
//! QAM slot and takes real parts in `finalize`.

pub mod cpofdm;
pub mod fbmc;
pub mod filters;
pub mod fofdm;
pub mod ufmc;
pub mod wola;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subcarrier spacing, FFT size, cyclic prefix and frame occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub subcarrier_spacing_hz: f64,
    pub fft_size: usize,
    pub cp_samples: usize,
    pub symbols_per_frame: usize,
}

impl Numerology {
    /// Presets over a common 5.76 MHz sampling rate, one frame = 1 ms.
    pub fn from_scs_khz(scs_khz: u32) -> Result<Numerology> {
        let (fft_size, cp_samples, symbols_per_frame) = match scs_khz {
            15 => (384, 27, 14),
            30 => (192, 14, 27),
            60 => (96, 6, 56),
            120 => (48, 3, 112),
            _ => {
                return Err(Error::config(format!(
                    "no numerology preset for {scs_khz} kHz subcarrier spacing"
                )))
            }
        };
        Ok(Numerology {
            subcarrier_spacing_hz: scs_khz as f64 * 1e3,
            fft_size,
            cp_samples,
            symbols_per_frame,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.subcarrier_spacing_hz * self.fft_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 8 || self.fft_size % 2 != 0 {
            return Err(Error::config(format!(
                "fft_size must be even and >= 8, got {}",
                self.fft_size
            )));
        }
        if self.cp_samples >= self.fft_size {
            return Err(Error::config("cp_samples must be below fft_size"));
        }
        if self.symbols_per_frame == 0 {
            return Err(Error::config("symbols_per_frame must be >= 1"));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::config("subcarrier_spacing_hz must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveformKind {
    CpOfdm,
    Wola,
    Ufmc,
    Fofdm,
    FbmcOqam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    pub kind: WaveformKind,
    pub numerology: Numerology,
    /// WOLA raised-cosine ramp length per edge; default keeps exact
    /// reconstruction by fitting both ramps inside the cyclic prefix.
    #[serde(default)]
    pub wola_rolloff: Option<usize>,
    /// UFMC subband width in subcarriers.
    #[serde(default = "default_subband")]
    pub ufmc_subband_size: usize,
    /// UFMC subband filter length; default cp_samples + 1.
    #[serde(default)]
    pub ufmc_filter_length: Option<usize>,
    /// UFMC Dolph-Chebyshev stopband attenuation in dB.
    #[serde(default = "default_stopband")]
    pub ufmc_stopband_db: f64,
    /// f-OFDM filter length in samples; default spans ~7.14 us, forced odd.
    #[serde(default)]
    pub fofdm_filter_length: Option<usize>,
    /// f-OFDM passband width in subcarriers; default half the FFT grid. Set
    /// this to the allocation width for the intended stopband behavior.
    #[serde(default)]
    pub fofdm_passband_subcarriers: Option<usize>,
    /// f-OFDM passband margin beyond the allocation half-width, in
    /// subcarriers.
    #[serde(default = "default_tone_margin")]
    pub fofdm_tone_margin: f64,
    /// f-OFDM passband center as a (possibly fractional) subcarrier offset
    /// from DC; default 0. Set this to the allocation center so off-center
    /// subbands stay inside the filter's passband.
    #[serde(default)]
    pub fofdm_center_bin: Option<f64>,
    /// FBMC prototype overlap factor K.
    #[serde(default = "default_overlap")]
    pub fbmc_overlap: usize,
}

fn default_subband() -> usize {
    12
}
fn default_stopband() -> f64 {
    60.0
}
fn default_tone_margin() -> f64 {
    2.5
}
fn default_overlap() -> usize {
    4
}

impl WaveformConfig {
    pub fn new(kind: WaveformKind, numerology: Numerology) -> WaveformConfig {
        WaveformConfig {
            kind,
            numerology,
            wola_rolloff: None,
            ufmc_subband_size: default_subband(),
            ufmc_filter_length: None,
            ufmc_stopband_db: default_stopband(),
            fofdm_filter_length: None,
            fofdm_passband_subcarriers: None,
            fofdm_tone_margin: default_tone_margin(),
            fofdm_center_bin: None,
            fbmc_overlap: default_overlap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.numerology.validate()?;
        let n = self.numerology.fft_size;
        let cp = self.numerology.cp_samples;
        match self.kind {
            WaveformKind::Wola => {
                let w = self.wola_ramp();
                if w == 0 || 2 * w > cp {
                    return Err(Error::config(format!(
                        "WOLA ramp of {w} samples does not fit the {cp}-sample cyclic prefix"
                    )));
                }
            }
            WaveformKind::Ufmc => {
                if self.ufmc_subband_size == 0 || self.ufmc_subband_size > n {
                    return Err(Error::config("invalid UFMC subband size"));
                }
                let l = self.ufmc_len();
                if l < 2 || l > n {
                    return Err(Error::config(format!("UFMC filter length {l} out of range")));
                }
            }
            WaveformKind::Fofdm => {
                let l = self.fofdm_len();
                if l % 2 == 0 || l < 3 || l > 4 * n {
                    return Err(Error::config(format!(
                        "f-OFDM filter length {l} must be odd and within range"
                    )));
                }
            }
            WaveformKind::FbmcOqam => {
                if !matches!(self.fbmc_overlap, 2 | 3 | 4) {
                    return Err(Error::config("FBMC overlap factor must be 2, 3 or 4"));
                }
                if cp != 0 {
                    // CP is simply unused by FBMC; no error, symbols pack at N.
                }
            }
            WaveformKind::CpOfdm => {}
        }
        Ok(())
    }

    pub fn wola_ramp(&self) -> usize {
        let n = self.numerology.fft_size;
        let cp = self.numerology.cp_samples;
        self.wola_rolloff
            .unwrap_or_else(|| ((n + cp) / 28).min(cp / 2).max(1))
    }

    pub fn ufmc_len(&self) -> usize {
        self.ufmc_filter_length
            .unwrap_or(self.numerology.cp_samples + 1)
    }

    pub fn fofdm_len(&self) -> usize {
        self.fofdm_filter_length.unwrap_or_else(|| {
            let l = (self.numerology.sample_rate() * 7.14e-6).round() as usize;
            let l = l.max(9);
            if l % 2 == 0 {
                l + 1
            } else {
                l
            }
        })
    }

    /// Length of the orthogonalized FBMC prototype (the tightening keeps six
    /// extra symbol durations of tail on each side).
    pub fn fbmc_prototype_len(&self) -> usize {
        (self.fbmc_overlap + 12) * self.numerology.fft_size
    }

    /// Samples between consecutive QAM time slots.
    pub fn slot_stride(&self) -> usize {
        let n = self.numerology.fft_size;
        let cp = self.numerology.cp_samples;
        match self.kind {
            WaveformKind::CpOfdm | WaveformKind::Wola | WaveformKind::Fofdm => n + cp,
            WaveformKind::Ufmc => n + self.ufmc_len() - 1,
            WaveformKind::FbmcOqam => n,
        }
    }

    /// QAM slots that fit into a frame of `frame_samples` samples.
    pub fn qam_slots(&self, frame_samples: usize) -> usize {
        frame_samples / self.slot_stride()
    }

    /// Raw (analysis) slots for a number of QAM slots.
    pub fn raw_slots(&self, n_qam: usize) -> usize {
        match self.kind {
            WaveformKind::FbmcOqam => 2 * n_qam,
            _ => n_qam,
        }
    }

    /// Length of the modulated sample vector for `n_qam` slots.
    pub fn tx_len(&self, n_qam: usize) -> usize {
        let n = self.numerology.fft_size;
        match self.kind {
            WaveformKind::CpOfdm | WaveformKind::Ufmc => n_qam * self.slot_stride(),
            WaveformKind::Wola => n_qam * self.slot_stride() + 2 * self.wola_ramp(),
            WaveformKind::Fofdm => n_qam * self.slot_stride() + self.fofdm_len() - 1,
            WaveformKind::FbmcOqam => (2 * n_qam - 1) * (n / 2) + self.fbmc_prototype_len(),
        }
    }

    /// Sample index at the center of a raw slot's analysis window, used to
    /// sample time-varying channels.
    pub fn raw_slot_center(&self, raw_slot: usize) -> f64 {
        let n = self.numerology.fft_size as f64;
        let cp = self.numerology.cp_samples as f64;
        match self.kind {
            WaveformKind::CpOfdm | WaveformKind::Wola | WaveformKind::Fofdm => {
                raw_slot as f64 * (n + cp) + cp + n / 2.0
            }
            WaveformKind::Ufmc => raw_slot as f64 * self.slot_stride() as f64
                + self.slot_stride() as f64 / 2.0,
            WaveformKind::FbmcOqam => {
                let lg = (self.fbmc_overlap * self.numerology.fft_size) as f64;
                raw_slot as f64 * n / 2.0 + lg / 2.0
            }
        }
    }

    pub fn modulate(&self, grid: &ResourceGrid) -> Result<Vec<Complex64>> {
        self.validate()?;
        if grid.n_bins != self.numerology.fft_size {
            return Err(Error::contract(format!(
                "grid has {} bins but the FFT size is {}",
                grid.n_bins, self.numerology.fft_size
            )));
        }
        Ok(match self.kind {
            WaveformKind::CpOfdm => cpofdm::modulate(self, grid),
            WaveformKind::Wola => wola::modulate(self, grid),
            WaveformKind::Ufmc => ufmc::modulate(self, grid),
            WaveformKind::Fofdm => fofdm::modulate(self, grid),
            WaveformKind::FbmcOqam => fbmc::modulate(self, grid),
        })
    }

    /// Analyzes `samples` into a raw grid of `raw_slots(n_qam)` slots.
    /// Waveform filtering is equalized; the propagation channel is not.
    pub fn demodulate(&self, samples: &[Complex64], n_qam: usize) -> Result<ResourceGrid> {
        self.validate()?;
        if samples.len() < self.tx_len(n_qam) {
            return Err(Error::contract(format!(
                "{} samples are too few for {} slots ({} needed)",
                samples.len(),
                n_qam,
                self.tx_len(n_qam)
            )));
        }
        Ok(match self.kind {
            WaveformKind::CpOfdm => cpofdm::demodulate(self, samples, n_qam),
            WaveformKind::Wola => wola::demodulate(self, samples, n_qam),
            WaveformKind::Ufmc => ufmc::demodulate(self, samples, n_qam),
            WaveformKind::Fofdm => fofdm::demodulate(self, samples, n_qam),
            WaveformKind::FbmcOqam => fbmc::demodulate(self, samples, n_qam),
        })
    }

    /// Converts an (equalized) raw grid into QAM symbol estimates.
    pub fn finalize(&self, raw: ResourceGrid) -> ResourceGrid {
        match self.kind {
            WaveformKind::FbmcOqam => fbmc::finalize(raw),
            _ => raw,
        }
    }

    /// Noise variance at a finalized grid entry on centered subcarrier `k`,
    /// relative to the time-domain sample noise variance.
    pub fn noise_factor(&self, k: usize) -> f64 {
        match self.kind {
            WaveformKind::CpOfdm | WaveformKind::Wola => 1.0,
            WaveformKind::Ufmc => ufmc::noise_factor(self, k),
            WaveformKind::Fofdm => fofdm::noise_factor(self, k),
            WaveformKind::FbmcOqam => fbmc::noise_factor(self),
        }
    }
}

/// Complex symbols over centered subcarriers and time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub n_bins: usize,
    pub n_slots: usize,
    /// Row-major: `data[slot * n_bins + bin]`.
    pub data: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn new(n_bins: usize, n_slots: usize) -> ResourceGrid {
        ResourceGrid {
            n_bins,
            n_slots,
            data: vec![Complex64::new(0.0, 0.0); n_bins * n_slots],
        }
    }

    #[inline]
    pub fn at(&self, bin: usize, slot: usize) -> Complex64 {
        self.data[slot * self.n_bins + bin]
    }

    #[inline]
    pub fn at_mut(&mut self, bin: usize, slot: usize) -> &mut Complex64 {
        &mut self.data[slot * self.n_bins + bin]
    }

    /// Centered bins that carry energy in any slot.
    pub fn occupied_bins(&self) -> Vec<usize> {
        (0..self.n_bins)
            .filter(|&k| (0..self.n_slots).any(|s| self.at(k, s).norm_sqr() > 0.0))
            .collect()
    }
}

/// Maps a centered subcarrier index to its DFT bin.
#[inline]
pub(crate) fn bin_of(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

/// In-place FFT via a cached plan; unnormalized in both directions.
pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let plan = {
        let mut guard = plans.lock().unwrap();
        guard
            .entry((buf.len(), inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(buf.len())
                } else {
                    planner.plan_fft_forward(buf.len())
                }
            })
            .clone()
    };
    plan.process(buf);
}

/// Hann-windowed averaged periodogram, `nfft` bins in DFT order.
pub fn welch_psd(samples: &[Complex64], nfft: usize) -> Vec<f64> {
    let hop = nfft / 2;
    let window: Vec<f64> = (0..nfft)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / nfft as f64).cos()))
        .collect();
    let wnorm: f64 = window.iter().map(|w| w * w).sum();
    let mut psd = vec![0.0f64; nfft];
    let mut segments = 0usize;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    while start + nfft <= samples.len() {
        for i in 0..nfft {
            buf[i] = samples[start + i] * window[i];
        }
        fft_in_place(&mut buf, false);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr() / wnorm;
        }
        segments += 1;
        start += hop;
    }
    if segments > 0 {
        psd.iter_mut().for_each(|p| *p /= segments as f64);
    }
    psd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerology_presets_share_sample_rate() {
        for scs in [15u32, 30, 60, 120] {
            let n = Numerology::from_scs_khz(scs).unwrap();
            assert_eq!(n.sample_rate(), 5.76e6, "{scs} kHz");
            // One 1 ms frame fits the advertised symbol count.
            let used = n.symbols_per_frame * (n.fft_size + n.cp_samples);
            assert!(used <= 5760, "{scs} kHz occupies {used} of 5760 samples");
        }
        assert!(Numerology::from_scs_khz(45).is_err());
    }

    #[test]
    fn bin_mapping_round_trips() {
        let n = 64;
        // DC sits at centered index n/2 -> DFT bin 0.
        assert_eq!(bin_of(n / 2, n), 0);
        assert_eq!(bin_of(0, n), n / 2); // most negative frequency
        let mut seen: Vec<usize> = (0..n).map(|k| bin_of(k, n)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn fft_inverse_of_forward_is_identity_scaled() {
        use rand::Rng;
        let mut rng = crate::rng::SeedStream::root(61).child("fft").rng();
        let n = 96;
        let orig: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut buf = orig.clone();
        fft_in_place(&mut buf, false);
        fft_in_place(&mut buf, true);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a / n as f64 - b).norm() < 1e-12);
        }
    }
}
