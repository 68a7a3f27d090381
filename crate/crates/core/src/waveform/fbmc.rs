//! FBMC-OQAM: offset-QAM symbols on a half-symbol lattice, pulse-shaped with
//! a tight-frame-orthogonalized PHYDYAS prototype.
//!
//! Each QAM symbol is split into two real half-symbols (real part on the
//! even slot, imaginary part on the odd slot). The `j^(k+h)` phase pattern
//! puts neighboring lattice points in quadrature, so after matched filtering
//! the real part is interference-free; the orthogonalized prototype makes
//! this exact to numerical precision rather than approximate.

use num_complex::Complex64;

use super::filters::tight_prototype_cached;
use super::{bin_of, fft_in_place, ResourceGrid, WaveformConfig};

const J_POW: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

fn prototype(cfg: &WaveformConfig) -> std::sync::Arc<Vec<f64>> {
    tight_prototype_cached(cfg.numerology.fft_size, cfg.fbmc_overlap)
}

/// Phase-center exponential e^{-j 2 pi b c / N} for each DFT bin.
fn center_phases(n: usize, lg: usize) -> Vec<Complex64> {
    let c = (lg as f64 - 1.0) / 2.0;
    (0..n)
        .map(|b| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * b as f64 * c / n as f64))
        .collect()
}

pub fn modulate(cfg: &WaveformConfig, grid: &ResourceGrid) -> Vec<Complex64> {
    let n = cfg.numerology.fft_size;
    assert!(n % 4 == 0, "FBMC needs an FFT size divisible by 4");
    let g = prototype(cfg);
    let lg = g.len();
    let nh = 2 * grid.n_slots;
    let phases = center_phases(n, lg);
    let mut out = vec![Complex64::new(0.0, 0.0); (nh - 1) * (n / 2) + lg];
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for h in 0..nh {
        v.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        let mut any = false;
        for k in 0..n {
            let s = grid.at(k, h / 2);
            if s.norm_sqr() == 0.0 {
                continue;
            }
            let a = if h % 2 == 0 { s.re } else { s.im };
            if a == 0.0 {
                continue;
            }
            let b = bin_of(k, n);
            v[b] = a * J_POW[(b + h) % 4] * phases[b];
            any = true;
        }
        if !any {
            continue;
        }
        fft_in_place(&mut v, true);
        let base = h * (n / 2);
        for m in 0..lg {
            out[base + m] += v[m % n] * g[m];
        }
    }
    out
}

pub fn demodulate(cfg: &WaveformConfig, samples: &[Complex64], n_qam: usize) -> ResourceGrid {
    let n = cfg.numerology.fft_size;
    let g = prototype(cfg);
    let lg = g.len();
    let nh = 2 * n_qam;
    let phases = center_phases(n, lg);
    let mut raw = ResourceGrid::new(n, nh);
    let mut fold = vec![Complex64::new(0.0, 0.0); n];
    for h in 0..nh {
        let base = h * (n / 2);
        fold.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        for m in 0..lg {
            fold[m % n] += samples[base + m] * g[m];
        }
        fft_in_place(&mut fold, false);
        for k in 0..n {
            let b = bin_of(k, n);
            *raw.at_mut(k, h) = fold[b] * phases[b].conj() * J_POW[(b + h) % 4].conj();
        }
    }
    raw
}

/// Reassembles QAM estimates from the real parts of the half-symbol lattice.
pub fn finalize(raw: ResourceGrid) -> ResourceGrid {
    let n_qam = raw.n_slots / 2;
    let mut grid = ResourceGrid::new(raw.n_bins, n_qam);
    for s in 0..n_qam {
        for k in 0..raw.n_bins {
            *grid.at_mut(k, s) =
                Complex64::new(raw.at(k, 2 * s).re, raw.at(k, 2 * s + 1).re);
        }
    }
    grid
}

/// The matched-filter projection has unit norm, and the two real halves
/// recombine to the same SNR as a complex OFDM resource element.
pub fn noise_factor(_cfg: &WaveformConfig) -> f64 {
    1.0
}
