//! Universal filtered multicarrier: subbands of adjacent subcarriers are
//! filtered with a Dolph-Chebyshev FIR, and the inter-symbol gap is the
//! filter tail (zero padding) instead of a cyclic prefix. The receiver folds
//! the tail back onto the symbol, which turns the linear convolution into a
//! circular one, so dividing by the filter's DFT restores the grid exactly.

use num_complex::Complex64;

use super::filters::dolph_chebyshev;
use super::{bin_of, fft_in_place, ResourceGrid, WaveformConfig};

/// Prototype lowpass taps, unit DC gain.
fn prototype(cfg: &WaveformConfig) -> Vec<f64> {
    let mut w = dolph_chebyshev(cfg.ufmc_len(), cfg.ufmc_stopband_db);
    let dc: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= dc);
    w
}

/// Width of subband `b` (the last one may be clipped by the grid edge).
fn subband_width(cfg: &WaveformConfig, b: usize) -> usize {
    let n = cfg.numerology.fft_size;
    let q = cfg.ufmc_subband_size;
    q.min(n - b * q)
}

/// Complex taps of the prototype modulated to the center of subband `b`.
fn subband_filter(cfg: &WaveformConfig, proto: &[f64], b: usize) -> Vec<Complex64> {
    let n = cfg.numerology.fft_size as f64;
    let q = cfg.ufmc_subband_size;
    let center = b as f64 * q as f64 + (subband_width(cfg, b) as f64 - 1.0) / 2.0;
    let f_off = center - n / 2.0;
    proto
        .iter()
        .enumerate()
        .map(|(m, &v)| {
            v * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f_off * m as f64 / n)
        })
        .collect()
}

/// DFT of the modulated filter at the DFT bin of centered subcarrier `k`.
fn filter_response(cfg: &WaveformConfig, proto: &[f64], k: usize) -> Complex64 {
    let n = cfg.numerology.fft_size;
    let q = cfg.ufmc_subband_size;
    let taps = subband_filter(cfg, proto, k / q);
    let b = bin_of(k, n) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, &t) in taps.iter().enumerate() {
        acc += t * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * b * m as f64 / n as f64);
    }
    acc
}

pub fn modulate(cfg: &WaveformConfig, grid: &ResourceGrid) -> Vec<Complex64> {
    let n = cfg.numerology.fft_size;
    let l = cfg.ufmc_len();
    let q = cfg.ufmc_subband_size;
    let stride = n + l - 1;
    let proto = prototype(cfg);
    let occupied = grid.occupied_bins();
    let mut subbands: Vec<usize> = occupied.iter().map(|&k| k / q).collect();
    subbands.dedup();
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.n_slots * stride];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for slot in 0..grid.n_slots {
        for &b in &subbands {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for k in b * q..b * q + subband_width(cfg, b) {
                let v = grid.at(k, slot);
                if v.norm_sqr() > 0.0 {
                    buf[bin_of(k, n)] = v;
                }
            }
            fft_in_place(&mut buf, true);
            let taps = subband_filter(cfg, &proto, b);
            let base = slot * stride;
            for (m, &t) in taps.iter().enumerate() {
                for (i, &x) in buf.iter().enumerate() {
                    out[base + i + m] += x * scale * t;
                }
            }
        }
    }
    out
}

pub fn demodulate(cfg: &WaveformConfig, samples: &[Complex64], n_qam: usize) -> ResourceGrid {
    let n = cfg.numerology.fft_size;
    let l = cfg.ufmc_len();
    let stride = n + l - 1;
    let proto = prototype(cfg);
    let responses: Vec<Complex64> = (0..n).map(|k| filter_response(cfg, &proto, k)).collect();
    let scale = 1.0 / (n as f64).sqrt();
    let mut grid = ResourceGrid::new(n, n_qam);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for slot in 0..n_qam {
        let base = slot * stride;
        buf.copy_from_slice(&samples[base..base + n]);
        for m in n..stride {
            buf[m - n] += samples[base + m];
        }
        fft_in_place(&mut buf, false);
        for k in 0..n {
            let r = responses[k];
            let v = if r.norm_sqr() > 1e-20 {
                buf[bin_of(k, n)] * scale / r
            } else {
                Complex64::new(0.0, 0.0)
            };
            *grid.at_mut(k, slot) = v;
        }
    }
    grid
}

/// Folding adds the tail noise onto the head; equalization then divides by
/// the subband response at the subcarrier.
pub fn noise_factor(cfg: &WaveformConfig, k: usize) -> f64 {
    let n = cfg.numerology.fft_size as f64;
    let l = cfg.ufmc_len() as f64;
    let proto = prototype(cfg);
    let fold = 1.0 + (l - 1.0) / n;
    fold / filter_response(cfg, &proto, k).norm_sqr().max(1e-20)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{welch_psd, Numerology, WaveformKind};
    use rand::Rng;

    fn random_grid(n: usize, slots: usize, alloc: std::ops::Range<usize>, seed: u64) -> ResourceGrid {
        let mut rng = crate::rng::SeedStream::root(seed).child("ufmc").rng();
        let mut grid = ResourceGrid::new(n, slots);
        for s in 0..slots {
            for k in alloc.clone() {
                *grid.at_mut(k, s) =
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        grid
    }

    #[test]
    fn perfect_reconstruction() {
        let cfg = WaveformConfig::new(WaveformKind::Ufmc, Numerology::from_scs_khz(15).unwrap());
        let n = cfg.numerology.fft_size;
        let slots = 4;
        let alloc = 96..96 + 120; // ten full subbands
        let grid = random_grid(n, slots, alloc.clone(), 65);
        let tx = cfg.modulate(&grid).unwrap();
        let rx = cfg.demodulate(&tx, slots).unwrap();
        let err = alloc
            .flat_map(|k| (0..slots).map(move |s| (k, s)))
            .map(|(k, s)| (grid.at(k, s) - rx.at(k, s)).norm())
            .fold(0.0f64, f64::max);
        assert!(err <= 1e-10, "max reconstruction error {err}");
    }

    #[test]
    fn out_of_band_emissions_below_cp_ofdm() {
        let num = Numerology::from_scs_khz(15).unwrap();
        let n = num.fft_size;
        let alloc = n / 2 - 72..n / 2 + 72;
        let grid = random_grid(n, 14, alloc, 66);
        let plain = WaveformConfig::new(WaveformKind::CpOfdm, num);
        let ufmc = WaveformConfig::new(WaveformKind::Ufmc, num);
        let nfft = 4 * n;
        let psd_plain = welch_psd(&plain.modulate(&grid).unwrap(), nfft);
        let psd_ufmc = welch_psd(&ufmc.modulate(&grid).unwrap(), nfft);
        let oob = |psd: &[f64]| -> f64 {
            (0..nfft)
                .filter(|&i| {
                    let f = (i as f64 / nfft as f64) * n as f64;
                    let f = if f >= n as f64 / 2.0 { f - n as f64 } else { f };
                    f.abs() > 72.0 + 12.0
                })
                .map(|i| psd[i])
                .sum()
        };
        let gain_db = 10.0 * (oob(&psd_plain) / oob(&psd_ufmc)).log10();
        assert!(gain_db > 10.0, "UFMC OOB gain only {gain_db:.1} dB");
    }

    #[test]
    fn noise_factor_reasonable_in_band() {
        let cfg = WaveformConfig::new(WaveformKind::Ufmc, Numerology::from_scs_khz(15).unwrap());
        // In the middle of a subband the filter gain is ~1, so the factor is
        // dominated by the fold (~1.07).
        let k = 96 + 6;
        let f = noise_factor(&cfg, k);
        assert!(f > 1.0 && f < 2.0, "noise factor {f}");
    }
}
