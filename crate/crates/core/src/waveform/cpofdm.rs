//! Plain CP-OFDM with unitary DFT scaling.

use num_complex::Complex64;

use super::{bin_of, fft_in_place, ResourceGrid, WaveformConfig};

/// Inverse DFT of one grid slot, scaled by 1/sqrt(N), in time order.
pub(super) fn synthesize_symbol(cfg: &WaveformConfig, grid: &ResourceGrid, slot: usize) -> Vec<Complex64> {
    let n = cfg.numerology.fft_size;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let v = grid.at(k, slot);
        if v.norm_sqr() > 0.0 {
            buf[bin_of(k, n)] = v;
        }
    }
    fft_in_place(&mut buf, true);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Forward DFT of `body` (N samples), scaled by 1/sqrt(N), written into the
/// grid at `slot` in centered order.
pub(super) fn analyze_symbol(cfg: &WaveformConfig, body: &[Complex64], grid: &mut ResourceGrid, slot: usize) {
    let n = cfg.numerology.fft_size;
    let mut buf = body.to_vec();
    fft_in_place(&mut buf, false);
    let scale = 1.0 / (n as f64).sqrt();
    for k in 0..n {
        *grid.at_mut(k, slot) = buf[bin_of(k, n)] * scale;
    }
}

pub fn modulate(cfg: &WaveformConfig, grid: &ResourceGrid) -> Vec<Complex64> {
    let n = cfg.numerology.fft_size;
    let cp = cfg.numerology.cp_samples;
    let stride = n + cp;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.n_slots * stride];
    for slot in 0..grid.n_slots {
        let body = synthesize_symbol(cfg, grid, slot);
        let base = slot * stride;
        out[base..base + cp].copy_from_slice(&body[n - cp..]);
        out[base + cp..base + stride].copy_from_slice(&body);
    }
    out
}

pub fn demodulate(cfg: &WaveformConfig, samples: &[Complex64], n_qam: usize) -> ResourceGrid {
    let n = cfg.numerology.fft_size;
    let cp = cfg.numerology.cp_samples;
    let stride = n + cp;
    let mut grid = ResourceGrid::new(n, n_qam);
    for slot in 0..n_qam {
        let start = slot * stride + cp;
        analyze_symbol(cfg, &samples[start..start + n], &mut grid, slot);
    }
    grid
}
