//! Pulse shapes and window functions shared by the waveform modulators:
//! raised-cosine edge ramps, Dolph-Chebyshev subband filters, windowed-sinc
//! lowpass filters, and the PHYDYAS prototype together with its tight-frame
//! orthogonalization.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

/// Rising raised-cosine ramp of `len` samples, from ~0 to ~1; a ramp and its
/// mirror image sum to exactly 1 sample by sample.
pub fn raised_cosine_ramp(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (1.0 - (PI * (i as f64 + 0.5) / len as f64).cos()))
        .collect()
}

/// Chebyshev polynomial T_n evaluated anywhere on the real line.
fn chebyshev(n: usize, x: f64) -> f64 {
    if x.abs() <= 1.0 {
        ((n as f64) * x.acos()).cos()
    } else if x > 1.0 {
        ((n as f64) * x.acosh()).cosh()
    } else {
        let s = if n % 2 == 0 { 1.0 } else { -1.0 };
        s * ((n as f64) * (-x).acosh()).cosh()
    }
}

/// Dolph-Chebyshev window with equiripple sidelobes `attenuation_db` below
/// the main lobe, normalized to unit peak.
pub fn dolph_chebyshev(len: usize, attenuation_db: f64) -> Vec<f64> {
    assert!(len >= 2);
    let m = len;
    let order = m - 1;
    let r = 10f64.powf(attenuation_db / 20.0);
    let x0 = (r.acosh() / order as f64).cosh();
    // Frequency samples of the window, with the half-bin phase shift needed
    // for even lengths, then an inverse DFT evaluated directly.
    let mut w = vec![0.0f64; m];
    for (n, wn) in w.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..m {
            let wk = chebyshev(order, x0 * (PI * k as f64 / m as f64).cos());
            let phase = 2.0 * PI * k as f64 * (n as f64 - (m as f64 - 1.0) / 2.0) / m as f64;
            // Re of wk * e^{j phase} with the conjugate-symmetric expansion.
            acc += wk * phase.cos();
        }
        *wn = acc;
    }
    let peak = w.iter().cloned().fold(f64::MIN, f64::max);
    w.iter_mut().for_each(|v| *v /= peak);
    w
}

/// Linear-phase lowpass: sinc truncated to `len` taps (odd), Hann-windowed,
/// with cutoff `cutoff` in cycles per sample, normalized to unit DC gain.
pub fn sinc_hann_lowpass(len: usize, cutoff: f64) -> Vec<f64> {
    assert!(len % 2 == 1, "linear-phase filter length must be odd");
    let c = (len - 1) as f64 / 2.0;
    let sinc = |x: f64| {
        if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        }
    };
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - c;
            let hann = 0.5 * (1.0 - (2.0 * PI * n as f64 / (len as f64 - 1.0)).cos());
            2.0 * cutoff * sinc(2.0 * cutoff * t) * hann
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// PHYDYAS prototype filter of length `overlap * n_fft`, unit norm.
pub fn phydyas_prototype(n_fft: usize, overlap: usize) -> Vec<f64> {
    let h1 = 0.971_960;
    let h: Vec<f64> = match overlap {
        2 => vec![1.0, std::f64::consts::FRAC_1_SQRT_2],
        3 => vec![1.0, 0.911_438, 0.411_438],
        4 => vec![1.0, h1, std::f64::consts::FRAC_1_SQRT_2, (1.0 - h1 * h1).sqrt()],
        _ => panic!("unsupported overlap factor {overlap}"),
    };
    let l = overlap * n_fft;
    let mut g = vec![h[0]; l];
    for (m, gm) in g.iter_mut().enumerate() {
        for (k, &hk) in h.iter().enumerate().skip(1) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *gm += 2.0 * sign * hk * (2.0 * PI * k as f64 * (m as f64 + 0.5) / l as f64).cos();
        }
    }
    let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    g.iter_mut().for_each(|v| *v /= norm);
    g
}

/// Canonical tight-frame orthogonalization of a prototype on the half-symbol
/// Gabor lattice (time step `n_fft / 2`, `n_fft` frequency bins).
///
/// The cyclic frame operator block-diagonalizes over time residues modulo
/// `n_fft`; each block is symmetrized, inverted to the -1/2 power through its
/// eigendecomposition, and applied to the prototype. The result is extracted
/// deterministically around the original support with `keep` extra symbol
/// lengths of tail on each side, and renormalized. The returned filter makes
/// the staggered real-field analysis/synthesis exactly biorthogonal to within
/// numerical precision.
pub fn tight_prototype(n_fft: usize, overlap: usize, margin: usize, keep: usize) -> Vec<f64> {
    assert!(keep <= margin);
    let g = phydyas_prototype(n_fft, overlap);
    let p = overlap + 2 * margin;
    let l = p * n_fft;
    let mut gg = vec![0.0f64; l];
    gg[margin * n_fft..margin * n_fft + g.len()].copy_from_slice(&g);

    let mut gt = vec![0.0f64; l];
    let shifts: Vec<usize> = (0..2 * p).map(|i| i * (n_fft / 2)).collect();
    for r in 0..n_fft {
        let idx: Vec<usize> = (0..p).map(|q| r + q * n_fft).collect();
        // G[q][i] = gg[(idx[q] - shift_i) mod l]
        let mut gmat = DMatrix::<f64>::zeros(p, shifts.len());
        for (q, &iq) in idx.iter().enumerate() {
            for (i, &s) in shifts.iter().enumerate() {
                gmat[(q, i)] = gg[(iq + l - s) % l];
            }
        }
        let s = (&gmat * gmat.transpose()).scale(n_fft as f64);
        let eig = nalgebra::SymmetricEigen::new(s);
        let inv_sqrt: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&w| 1.0 / w.max(1e-30).sqrt())
            .collect();
        let v = &eig.eigenvectors;
        let coset: Vec<f64> = idx.iter().map(|&i| gg[i]).collect();
        for (q, &iq) in idx.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &inv) in inv_sqrt.iter().enumerate() {
                let mut proj = 0.0;
                for (t, &c) in coset.iter().enumerate() {
                    proj += v[(t, j)] * c;
                }
                acc += v[(q, j)] * inv * proj;
            }
            gt[iq] = acc;
        }
    }

    let start = (margin - keep) * n_fft;
    let out_len = (overlap + 2 * keep) * n_fft;
    let mut out = gt[start..start + out_len].to_vec();
    let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Cached tight prototype per (fft size, overlap).
pub fn tight_prototype_cached(n_fft: usize, overlap: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(g) = cache.lock().unwrap().get(&(n_fft, overlap)) {
        return g.clone();
    }
    let g = Arc::new(tight_prototype(n_fft, overlap, 12, 6));
    cache.lock().unwrap().insert((n_fft, overlap), g.clone());
    g
}
