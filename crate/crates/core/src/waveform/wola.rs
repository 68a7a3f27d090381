//! Weighted overlap-and-add OFDM: each CP-OFDM symbol is cyclically extended
//! and shaped with raised-cosine edge ramps, and consecutive symbols overlap
//! by the ramp length. Both ramps fit inside the cyclic prefix, so an
//! appropriately placed receiver window reconstructs the grid exactly.

use num_complex::Complex64;

use super::cpofdm::{analyze_symbol, synthesize_symbol};
use super::filters::raised_cosine_ramp;
use super::{bin_of, ResourceGrid, WaveformConfig};

pub fn modulate(cfg: &WaveformConfig, grid: &ResourceGrid) -> Vec<Complex64> {
    let n = cfg.numerology.fft_size;
    let cp = cfg.numerology.cp_samples;
    let w = cfg.wola_ramp();
    let stride = n + cp;
    let ext_len = n + cp + 2 * w;
    let ramp = raised_cosine_ramp(w);
    let mut out = vec![Complex64::new(0.0, 0.0); grid.n_slots * stride + 2 * w];
    for slot in 0..grid.n_slots {
        let body = synthesize_symbol(cfg, grid, slot);
        let base = slot * stride;
        for m in 0..ext_len {
            // Cyclic extension: prefix of cp + w samples, suffix of w.
            let mut v = body[(m + n - ((cp + w) % n)) % n];
            if m < w {
                v *= ramp[m];
            } else if m >= ext_len - w {
                v *= ramp[ext_len - 1 - m];
            }
            out[base + m] += v;
        }
    }
    out
}

pub fn demodulate(cfg: &WaveformConfig, samples: &[Complex64], n_qam: usize) -> ResourceGrid {
    let n = cfg.numerology.fft_size;
    let cp = cfg.numerology.cp_samples;
    let w = cfg.wola_ramp();
    let stride = n + cp;
    let mut grid = ResourceGrid::new(n, n_qam);
    for slot in 0..n_qam {
        // The window sits past both the previous symbol's ramp-down and this
        // symbol's ramp-up; its content is the body rotated by w samples.
        let start = slot * stride + cp;
        analyze_symbol(cfg, &samples[start..start + n], &mut grid, slot);
        for k in 0..n {
            let b = bin_of(k, n) as f64;
            let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * b * w as f64 / n as f64);
            *grid.at_mut(k, slot) *= rot;
        }
    }
    grid
}
