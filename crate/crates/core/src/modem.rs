//! Gray-mapped square QAM with unit average power, and max-log LLR demapping.
//!
//! Bit convention: bits are consumed MSB-first per symbol; even-indexed bits
//! select the in-phase axis, odd-indexed bits the quadrature axis. A bit value
//! of 0 maps towards positive amplitudes, so the all-zero label is the
//! top-right constellation point, e.g. `00 -> (1+1j)/sqrt(2)` for 4-QAM.
//! LLRs are positive when bit 0 is more likely.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// One of the supported square QAM alphabets.
#[derive(Debug, Clone, PartialEq)]
pub struct QamSpec {
    order: usize,
    bits_per_symbol: usize,
    bits_per_axis: usize,
    /// PAM amplitude for every possible axis bit label (index = bit label).
    axis_levels: Vec<f64>,
}

impl QamSpec {
    pub fn new(order: usize) -> Result<Self> {
        let bits_per_symbol = match order {
            4 => 2,
            16 => 4,
            64 => 6,
            256 => 8,
            _ => {
                return Err(Error::config(format!(
                    "unsupported QAM order {order} (use 4, 16, 64 or 256)"
                )))
            }
        };
        let bits_per_axis = bits_per_symbol / 2;
        let m = 1usize << bits_per_axis;
        // Unit average power normalization: E[I^2 + Q^2] = 1.
        let norm = (2.0 * (m * m - 1) as f64 / 3.0).sqrt();
        let mut axis_levels = vec![0.0; m];
        for (label, level) in axis_levels.iter_mut().enumerate() {
            *level = Self::pam_level(label, bits_per_axis) / norm;
        }
        Ok(QamSpec {
            order,
            bits_per_symbol,
            bits_per_axis,
            axis_levels,
        })
    }

    /// Gray PAM amplitude for one axis, before normalization.
    ///
    /// Bit 0 selects the sign, each further bit refines towards the inner or
    /// outer half of the remaining levels (the usual cellular Gray labeling).
    fn pam_level(label: usize, bits: usize) -> f64 {
        let bit = |i: usize| -> f64 {
            if label >> (bits - 1 - i) & 1 == 1 {
                -1.0
            } else {
                1.0
            }
        };
        // E.g. for 3 bits: b0*(4 - b1*(2 - b2)) with b = +-1, which is the
        // usual cellular labeling with levels {+-1, +-3, +-5, +-7}.
        let mut amp = bit(bits - 1);
        for i in (0..bits - 1).rev() {
            let half = 1 << (bits - 1 - i);
            amp = bit(i) * (half as f64 - amp);
        }
        amp
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// All constellation points indexed by their bit label.
    pub fn points(&self) -> Vec<Complex64> {
        (0..self.order)
            .map(|label| {
                let (i, q) = self.split_label(label);
                Complex64::new(self.axis_levels[i], self.axis_levels[q])
            })
            .collect()
    }

    fn split_label(&self, label: usize) -> (usize, usize) {
        let mut i = 0;
        let mut q = 0;
        for b in 0..self.bits_per_symbol {
            let bit = label >> (self.bits_per_symbol - 1 - b) & 1;
            if b % 2 == 0 {
                i = i << 1 | bit;
            } else {
                q = q << 1 | bit;
            }
        }
        (i, q)
    }

    pub fn map_symbol(&self, bits: &[u8]) -> Complex64 {
        debug_assert_eq!(bits.len(), self.bits_per_symbol);
        let mut label = 0usize;
        for &b in bits {
            label = label << 1 | usize::from(b & 1);
        }
        let (i, q) = self.split_label(label);
        Complex64::new(self.axis_levels[i], self.axis_levels[q])
    }
}

/// Maps a bit sequence onto Gray-labeled QAM symbols.
pub fn qam_map(bits: &[u8], spec: &QamSpec) -> Result<Vec<Complex64>> {
    let m = spec.bits_per_symbol();
    if bits.len() % m != 0 {
        return Err(Error::contract(format!(
            "bit count {} not divisible by {} bits per symbol",
            bits.len(),
            m
        )));
    }
    Ok(bits.chunks_exact(m).map(|c| spec.map_symbol(c)).collect())
}

/// Max-log LLRs for a slice of received symbols under one common noise variance.
pub fn llr_demap(symbols: &[Complex64], noise_variance: f64, spec: &QamSpec) -> Result<Vec<f64>> {
    if !(noise_variance > 0.0) {
        return Err(Error::contract(format!(
            "noise variance must be positive, got {noise_variance}"
        )));
    }
    let vars = vec![noise_variance; symbols.len()];
    llr_demap_per_symbol(symbols, &vars, spec)
}

/// Max-log LLRs with an individual noise variance per symbol.
///
/// The per-axis Gray labeling makes the two axes independent, so each bit LLR
/// reduces to a 1-D search over the PAM levels of its axis; this is exactly
/// equivalent to the exhaustive max-log search over all constellation points.
pub fn llr_demap_per_symbol(
    symbols: &[Complex64],
    noise_variance: &[f64],
    spec: &QamSpec,
) -> Result<Vec<f64>> {
    if symbols.len() != noise_variance.len() {
        return Err(Error::contract(
            "symbol and noise-variance slices differ in length".to_string(),
        ));
    }
    let mut llrs = Vec::with_capacity(symbols.len() * spec.bits_per_symbol);
    for (y, &var) in symbols.iter().zip(noise_variance) {
        if !(var > 0.0) {
            return Err(Error::contract(format!(
                "noise variance must be positive, got {var}"
            )));
        }
        for b in 0..spec.bits_per_symbol {
            let (axis_val, axis_bit) = if b % 2 == 0 {
                (y.re, b / 2)
            } else {
                (y.im, b / 2)
            };
            let mut d0 = f64::INFINITY;
            let mut d1 = f64::INFINITY;
            for (label, &level) in spec.axis_levels.iter().enumerate() {
                let d = (axis_val - level) * (axis_val - level);
                if label >> (spec.bits_per_axis - 1 - axis_bit) & 1 == 0 {
                    d0 = d0.min(d);
                } else {
                    d1 = d1.min(d);
                }
            }
            llrs.push((d1 - d0) / var);
        }
    }
    Ok(llrs)
}

/// Hard decisions from LLRs (positive LLR decodes to bit 0).
pub fn harden(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| u8::from(l < 0.0)).collect()
}
