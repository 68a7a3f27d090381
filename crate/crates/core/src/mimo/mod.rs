//! Spatial processing: layer mapping, codebook precoding, Alamouti transmit
//! diversity, and linear / tree-search / optimal detection.
//!
//! Codebooks follow the standard 2- and 4-antenna definitions (the 4-antenna
//! set is Householder-based); larger arrays fall back to DFT columns. All
//! entries have orthonormal columns so precoding conserves total power.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::QamSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MimoMode {
    #[default]
    Clsm,
    Olsm,
    TransmitDiversity,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    Zf,
    #[default]
    Mmse,
    Sphere,
    Ml,
}

// ---------------------------------------------------------------------------
// Codebooks
// ---------------------------------------------------------------------------

const J: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// 2-antenna codebook vectors/matrices, columns normalized to unit norm.
fn codebook_2tx(rank: usize) -> Vec<DMatrix<Complex64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match rank {
        1 => [
            [c(1.0, 0.0), c(1.0, 0.0)],
            [c(1.0, 0.0), c(-1.0, 0.0)],
            [c(1.0, 0.0), J],
            [c(1.0, 0.0), -J],
        ]
        .iter()
        .map(|v| DMatrix::from_fn(2, 1, |i, _| v[i] * s))
        .collect(),
        2 => {
            let id = DMatrix::from_fn(2, 2, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
            let w1 = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)])
                .scale(std::f64::consts::FRAC_1_SQRT_2);
            let w2 = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), J, -J])
                .scale(std::f64::consts::FRAC_1_SQRT_2);
            vec![id, w1, w2]
        }
        _ => Vec::new(),
    }
}

/// Householder generator vectors for the 4-antenna codebook.
fn householder_vectors() -> [[Complex64; 4]; 16] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        [c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)],
        [c(1.0, 0.0), -J, c(1.0, 0.0), J],
        [c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
        [c(1.0, 0.0), J, c(1.0, 0.0), -J],
        [c(1.0, 0.0), c(-s, -s), -J, c(s, -s)],
        [c(1.0, 0.0), c(s, -s), J, c(-s, -s)],
        [c(1.0, 0.0), c(s, s), -J, c(-s, s)],
        [c(1.0, 0.0), c(-s, s), J, c(s, s)],
        [c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)],
        [c(1.0, 0.0), -J, c(-1.0, 0.0), -J],
        [c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)],
        [c(1.0, 0.0), J, c(-1.0, 0.0), J],
        [c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
        [c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)],
        [c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)],
        [c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)],
    ]
}

/// Column selections (0-based) per codebook index and rank for 4 antennas.
fn column_sets(index: usize, rank: usize) -> Vec<usize> {
    const R2: [[usize; 2]; 16] = [
        [0, 3], [0, 1], [0, 1], [0, 1], [0, 3], [0, 3], [0, 2], [0, 2],
        [0, 1], [0, 3], [0, 2], [0, 2], [0, 1], [0, 2], [0, 2], [0, 1],
    ];
    const R3: [[usize; 3]; 16] = [
        [0, 1, 3], [0, 1, 2], [0, 1, 2], [0, 1, 2], [0, 1, 3], [0, 1, 3],
        [0, 2, 3], [0, 2, 3], [0, 1, 3], [0, 2, 3], [0, 1, 2], [0, 2, 3],
        [0, 1, 2], [0, 1, 2], [0, 1, 2], [0, 1, 2],
    ];
    const R4: [[usize; 4]; 16] = [
        [0, 1, 2, 3], [0, 1, 2, 3], [2, 1, 0, 3], [2, 1, 0, 3], [0, 1, 2, 3],
        [0, 1, 2, 3], [0, 2, 1, 3], [0, 2, 1, 3], [0, 1, 2, 3], [0, 1, 2, 3],
        [0, 2, 1, 3], [0, 2, 1, 3], [0, 1, 2, 3], [0, 2, 1, 3], [2, 1, 0, 3],
        [0, 1, 2, 3],
    ];
    match rank {
        1 => vec![0],
        2 => R2[index].to_vec(),
        3 => R3[index].to_vec(),
        4 => R4[index].to_vec(),
        _ => Vec::new(),
    }
}

fn codebook_4tx(rank: usize) -> Vec<DMatrix<Complex64>> {
    householder_vectors()
        .iter()
        .enumerate()
        .map(|(idx, u)| {
            let uvec = DVector::from_row_slice(u);
            let norm_sq: f64 = uvec.iter().map(|v| v.norm_sqr()).sum();
            let mut w = DMatrix::identity(4, 4);
            for i in 0..4 {
                for jcol in 0..4 {
                    w[(i, jcol)] -= uvec[i] * uvec[jcol].conj() * (2.0 / norm_sq);
                }
            }
            let cols = column_sets(idx, rank);
            DMatrix::from_fn(4, rank, |i, k| w[(i, cols[k])])
        })
        .collect()
}

/// DFT codebook for antenna counts beyond the standard tables: entry `p`
/// takes `rank` consecutive DFT columns starting at column `p`.
fn codebook_dft(n_tx: usize, rank: usize) -> Vec<DMatrix<Complex64>> {
    let scale = 1.0 / (n_tx as f64).sqrt();
    (0..n_tx)
        .map(|p| {
            DMatrix::from_fn(n_tx, rank, |i, k| {
                Complex64::from_polar(
                    scale,
                    2.0 * std::f64::consts::PI * (i * ((p + k) % n_tx)) as f64 / n_tx as f64,
                )
            })
        })
        .collect()
}

/// All precoders for an antenna count and rank, indexed by PMI.
pub fn codebook(n_tx: usize, rank: usize) -> Result<Vec<DMatrix<Complex64>>> {
    if rank == 0 || rank > n_tx {
        return Err(Error::config(format!("rank {rank} invalid for {n_tx} tx antennas")));
    }
    let entries = match n_tx {
        1 => vec![DMatrix::from_element(1, 1, c(1.0, 0.0))],
        2 => codebook_2tx(rank),
        4 => codebook_4tx(rank),
        _ => codebook_dft(n_tx, rank),
    };
    if entries.is_empty() {
        return Err(Error::config(format!("no codebook for {n_tx} tx, rank {rank}")));
    }
    Ok(entries)
}

/// Open-loop precoder for subcarrier/symbol counter `i`: codebook entry
/// cycling combined with large-delay diagonal phasing, so layers rotate
/// across the spatial channel without feedback.
pub fn olsm_precoder(n_tx: usize, rank: usize, i: usize) -> Result<DMatrix<Complex64>> {
    let cb = codebook(n_tx, rank)?;
    let w = &cb[i % cb.len()];
    let d = DMatrix::from_fn(rank, rank, |r_, c_| {
        if r_ == c_ {
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (r_ * i) as f64 / rank as f64)
        } else {
            c(0.0, 0.0)
        }
    });
    let u = DMatrix::from_fn(rank, rank, |r_, c_| {
        Complex64::from_polar(
            1.0 / (rank as f64).sqrt(),
            -2.0 * std::f64::consts::PI * (r_ * c_) as f64 / rank as f64,
        )
    });
    Ok(w * d * u)
}

// ---------------------------------------------------------------------------
// Layer mapping and precoding
// ---------------------------------------------------------------------------

/// Round-robin mapping of a symbol stream onto `rank` layers. The symbol
/// count must divide evenly.
pub fn map_layers(symbols: &[Complex64], rank: usize) -> Result<DMatrix<Complex64>> {
    if rank == 0 || symbols.len() % rank != 0 {
        return Err(Error::contract("symbol count must be a multiple of the rank"));
    }
    let cols = symbols.len() / rank;
    Ok(DMatrix::from_fn(rank, cols, |l, t| symbols[t * rank + l]))
}

/// Inverse of [`map_layers`].
pub fn demap_layers(layers: &DMatrix<Complex64>) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(layers.nrows() * layers.ncols());
    for t in 0..layers.ncols() {
        for l in 0..layers.nrows() {
            out.push(layers[(l, t)]);
        }
    }
    out
}

/// Applies precoder `w` (n_tx x rank) to a rank x time layer matrix.
pub fn precode(layers: &DMatrix<Complex64>, w: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    if w.ncols() != layers.nrows() {
        return Err(Error::contract(format!(
            "precoder expects {} layers, got {}",
            w.ncols(),
            layers.nrows()
        )));
    }
    Ok(w * layers)
}

// ---------------------------------------------------------------------------
// Alamouti transmit diversity
// ---------------------------------------------------------------------------

/// Space-frequency block coding over symbol pairs (s1, s2):
/// antenna 0 carries (s1, -s2*), antenna 1 carries (s2, s1*), scaled by
/// 1/sqrt(2) so total tx power matches the single-antenna case.
pub fn alamouti_encode(symbols: &[Complex64]) -> Result<[Vec<Complex64>; 2]> {
    if symbols.len() % 2 != 0 {
        return Err(Error::contract("Alamouti needs an even number of symbols"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut a0 = Vec::with_capacity(symbols.len());
    let mut a1 = Vec::with_capacity(symbols.len());
    for pair in symbols.chunks_exact(2) {
        a0.push(pair[0] * s);
        a0.push(-pair[1].conj() * s);
        a1.push(pair[1] * s);
        a1.push(pair[0].conj() * s);
    }
    Ok([a0, a1])
}

/// Combines the per-antenna receive streams for a quasi-static channel
/// `h` (n_rx x 2). Returns the normalized symbol estimates together with the
/// effective post-combining gain ||H||_F^2 / 2 (tx power split included),
/// which maps receiver noise variance to post-combining symbol SNR.
pub fn alamouti_combine(rx: &[Vec<Complex64>], h: &DMatrix<Complex64>) -> Result<(Vec<Complex64>, f64)> {
    if h.ncols() != 2 {
        return Err(Error::contract("Alamouti combining needs a 2-column channel"));
    }
    if rx.len() != h.nrows() {
        return Err(Error::contract("one rx stream per receive antenna required"));
    }
    let len = rx[0].len();
    if len % 2 != 0 || rx.iter().any(|r| r.len() != len) {
        return Err(Error::contract("rx streams must share an even length"));
    }
    let norm_sq: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    if norm_sq <= 0.0 {
        return Err(Error::contract("all-zero channel"));
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2 * norm_sq;
    let mut out = Vec::with_capacity(len);
    for t in (0..len).step_by(2) {
        let mut s1 = Complex64::new(0.0, 0.0);
        let mut s2 = Complex64::new(0.0, 0.0);
        for r in 0..h.nrows() {
            let (h1, h2) = (h[(r, 0)], h[(r, 1)]);
            let (y1, y2) = (rx[r][t], rx[r][t + 1]);
            s1 += h1.conj() * y1 + h2 * y2.conj();
            s2 += h2.conj() * y1 - h1 * y2.conj();
        }
        out.push(s1 / scale);
        out.push(s2 / scale);
    }
    Ok((out, norm_sq / 2.0))
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

/// Result of one vector detection: hard symbol decisions, bias-corrected soft
/// symbol estimates, and per-stream post-equalization SINR at unit symbol
/// energy.
#[derive(Clone, Debug)]
pub struct Detection {
    pub decisions: Vec<Complex64>,
    pub soft: Vec<Complex64>,
    pub sinr: Vec<f64>,
}

fn gram(h: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    h.adjoint() * h
}

fn nearest(point: Complex64, constellation: &[Complex64]) -> Complex64 {
    *constellation
        .iter()
        .min_by(|a, b| (point - **a).norm_sqr().total_cmp(&(point - **b).norm_sqr()))
        .unwrap()
}

fn linear_detect(
    y: &DVector<Complex64>,
    h: &DMatrix<Complex64>,
    noise_var: f64,
    constellation: &[Complex64],
    regularize: bool,
) -> Result<Detection> {
    let n_tx = h.ncols();
    let mut a = gram(h);
    if regularize {
        for k in 0..n_tx {
            a[(k, k)] += Complex64::new(noise_var, 0.0);
        }
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::contract("channel is rank deficient"))?;
    let w = &inv * h.adjoint();
    let est = &w * y;
    let wh = &w * h;
    let mut soft = Vec::with_capacity(n_tx);
    let mut sinr = Vec::with_capacity(n_tx);
    for k in 0..n_tx {
        let mu = wh[(k, k)];
        soft.push(est[k] / mu);
        if regularize {
            // MMSE: signal |mu|^2, residual interference plus filtered noise.
            let mut interf = 0.0;
            for j in 0..n_tx {
                if j != k {
                    interf += wh[(k, j)].norm_sqr();
                }
            }
            let wnorm: f64 = (0..w.ncols()).map(|j| w[(k, j)].norm_sqr()).sum();
            sinr.push(mu.norm_sqr() / (interf + noise_var * wnorm).max(1e-300));
        } else {
            // ZF: unbiased, noise enhancement (H^H H)^{-1} diagonal.
            sinr.push(1.0 / (noise_var * inv[(k, k)].re).max(1e-300));
        }
    }
    let decisions = soft.iter().map(|&s| nearest(s, constellation)).collect();
    Ok(Detection { decisions, soft, sinr })
}

/// Exhaustive maximum-likelihood search over the constellation product space.
fn ml_detect(y: &DVector<Complex64>, h: &DMatrix<Complex64>, constellation: &[Complex64]) -> Vec<Complex64> {
    let n_tx = h.ncols();
    let mut idx = vec![0usize; n_tx];
    let mut best = vec![constellation[0]; n_tx];
    let mut best_metric = f64::INFINITY;
    loop {
        let x: Vec<Complex64> = idx.iter().map(|&i| constellation[i]).collect();
        let mut metric = 0.0;
        for r in 0..h.nrows() {
            let mut acc = y[r];
            for t in 0..n_tx {
                acc -= h[(r, t)] * x[t];
            }
            metric += acc.norm_sqr();
        }
        if metric < best_metric {
            best_metric = metric;
            best = x;
        }
        // Odometer increment over the product space.
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < constellation.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n_tx {
                return best;
            }
        }
    }
}

/// Depth-first sphere decoder with best-first child ordering and an
/// initially infinite radius; returns the exact ML solution.
fn sphere_detect(y: &DVector<Complex64>, h: &DMatrix<Complex64>, constellation: &[Complex64]) -> Result<Vec<Complex64>> {
    let n_tx = h.ncols();
    let qr = h.clone().qr();
    let q = qr.q();
    let r = qr.r();
    for k in 0..n_tx {
        if r[(k, k)].norm() < 1e-12 {
            return Err(Error::contract("channel is rank deficient"));
        }
    }
    let z = q.adjoint() * y;

    struct Search<'a> {
        r: &'a DMatrix<Complex64>,
        z: &'a DVector<Complex64>,
        points: &'a [Complex64],
        best: Vec<Complex64>,
        radius: f64,
        x: Vec<Complex64>,
    }
    impl Search<'_> {
        fn descend(&mut self, layer: usize, partial: f64) {
            let n_tx = self.r.ncols();
            let mut acc = self.z[layer];
            for j in layer + 1..n_tx {
                acc -= self.r[(layer, j)] * self.x[j];
            }
            let center = acc / self.r[(layer, layer)];
            // Enumerate candidates nearest-first so the radius shrinks fast.
            let mut order: Vec<usize> = (0..self.points.len()).collect();
            order.sort_by(|&a, &b| {
                (self.points[a] - center)
                    .norm_sqr()
                    .total_cmp(&(self.points[b] - center).norm_sqr())
            });
            for i in order {
                let s = self.points[i];
                let d = partial + (acc - self.r[(layer, layer)] * s).norm_sqr();
                if d >= self.radius {
                    break; // all remaining candidates are farther
                }
                self.x[layer] = s;
                if layer == 0 {
                    self.radius = d;
                    self.best = self.x.clone();
                } else {
                    self.descend(layer - 1, d);
                }
            }
        }
    }

    let mut search = Search {
        r: &r,
        z: &z,
        points: constellation,
        best: vec![constellation[0]; n_tx],
        radius: f64::INFINITY,
        x: vec![constellation[0]; n_tx],
    };
    search.descend(n_tx - 1, 0.0);
    Ok(search.best)
}

/// Detects one received vector. For the tree-search and exhaustive detectors
/// the per-stream SINR (needed by link adaptation) is approximated by the
/// MMSE post-equalization SINR.
pub fn detect(
    y: &DVector<Complex64>,
    h: &DMatrix<Complex64>,
    noise_var: f64,
    spec: &QamSpec,
    detector: Detector,
) -> Result<Detection> {
    if y.len() != h.nrows() {
        return Err(Error::contract("rx vector length must match channel rows"));
    }
    let constellation = spec.points();
    match detector {
        Detector::Zf => linear_detect(y, h, noise_var, &constellation, false),
        Detector::Mmse => linear_detect(y, h, noise_var, &constellation, true),
        Detector::Sphere | Detector::Ml => {
            let decisions = if detector == Detector::Sphere {
                sphere_detect(y, h, &constellation)?
            } else {
                ml_detect(y, h, &constellation)
            };
            let mmse = linear_detect(y, h, noise_var.max(1e-12), &constellation, true)?;
            Ok(Detection { decisions, soft: mmse.soft, sinr: mmse.sinr })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                * std::f64::consts::FRAC_1_SQRT_2
        })
    }

    #[test]
    fn codebook_entries_have_orthonormal_columns() {
        for n_tx in [1usize, 2, 4, 8] {
            for rank in 1..=n_tx.min(4) {
                for (pmi, w) in codebook(n_tx, rank).unwrap().iter().enumerate() {
                    let g = w.adjoint() * w;
                    for i in 0..rank {
                        for j in 0..rank {
                            let want = if i == j { 1.0 } else { 0.0 };
                            assert!(
                                (g[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12,
                                "{n_tx}tx rank {rank} pmi {pmi}: gram {:?}",
                                g[(i, j)]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn precoding_conserves_power() {
        let mut rng = SeedStream::root(90).child("mimo").rng();
        for n_tx in [2usize, 4] {
            for rank in 1..=n_tx {
                for w in codebook(n_tx, rank).unwrap() {
                    let x = random_matrix(rank, 5, &mut rng);
                    let out = precode(&x, &w).unwrap();
                    let pin: f64 = x.iter().map(|v| v.norm_sqr()).sum();
                    let pout: f64 = out.iter().map(|v| v.norm_sqr()).sum();
                    assert_abs_diff_eq!(pout, pin, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_precoder_passes_through_and_rank1_splits_power() {
        let x = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.5, 0.5)]);
        let id = DMatrix::identity(2, 2);
        assert_eq!(precode(&x, &id).unwrap(), x);

        let w = &codebook(2, 1).unwrap()[0];
        let layer = DMatrix::from_element(1, 1, c(1.0, 0.0));
        let out = precode(&layer, w).unwrap();
        assert_abs_diff_eq!(out[(0, 0)].norm_sqr(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(1, 0)].norm_sqr(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn olsm_precoders_conserve_power() {
        let mut rng = SeedStream::root(91).child("olsm").rng();
        for i in 0..12 {
            let w = olsm_precoder(2, 2, i).unwrap();
            let x = random_matrix(2, 3, &mut rng);
            let out = precode(&x, &w).unwrap();
            let pin: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let pout: f64 = out.iter().map(|v| v.norm_sqr()).sum();
            assert_abs_diff_eq!(pout, pin, epsilon = 1e-12);
        }
    }

    #[test]
    fn layer_mapping_round_trips() {
        let mut rng = SeedStream::root(92).child("layers").rng();
        let syms: Vec<Complex64> = (0..12)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        for rank in [1usize, 2, 3, 4] {
            let layers = map_layers(&syms, rank).unwrap();
            assert_eq!(layers.nrows(), rank);
            assert_eq!(demap_layers(&layers), syms);
        }
        assert!(map_layers(&syms[..5], 2).is_err());
    }

    #[test]
    fn alamouti_identity_channel_recovers_exactly() {
        let syms = vec![c(1.0, 1.0), c(-1.0, 1.0), c(0.5, -0.25), c(-1.0, -1.0)];
        let tx = alamouti_encode(&syms).unwrap();
        let h = DMatrix::identity(2, 2);
        // Identity channel: rx antenna r sees tx antenna r.
        let rx = vec![tx[0].clone(), tx[1].clone()];
        let (est, gain) = alamouti_combine(&rx, &h).unwrap();
        for (a, b) in syms.iter().zip(&est) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_abs_diff_eq!(gain, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn alamouti_random_miso_channel_recovers() {
        let mut rng = SeedStream::root(93).child("alamouti").rng();
        let syms: Vec<Complex64> = (0..8)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let tx = alamouti_encode(&syms).unwrap();
        let h = random_matrix(1, 2, &mut rng);
        let rx: Vec<Vec<Complex64>> = vec![(0..syms.len())
            .map(|t| h[(0, 0)] * tx[0][t] + h[(0, 1)] * tx[1][t])
            .collect()];
        let (est, _) = alamouti_combine(&rx, &h).unwrap();
        for (a, b) in syms.iter().zip(&est) {
            assert!((a - b).norm() < 1e-10);
        }
        assert!(alamouti_encode(&syms[..3]).is_err());
    }

    #[test]
    fn alamouti_shows_diversity_gain_over_siso() {
        // 4-QAM over Rayleigh fading: with two tx antennas the error rate at
        // 14 dB must fall much faster than the single-antenna curve.
        let spec = QamSpec::new(4).unwrap();
        let points = spec.points();
        let mut rng = SeedStream::root(94).child("div").rng();
        let snr_db = 14.0;
        let noise = 10f64.powf(-snr_db / 10.0);
        let trials = 20_000;
        let mut errs_siso = 0usize;
        let mut errs_div = 0usize;
        for _ in 0..trials {
            let s = points[rng.gen_range(0..points.len())];
            let h = random_matrix(1, 2, &mut rng);
            let nvec = |rng: &mut rand_chacha::ChaCha12Rng| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                    * (noise / 2.0).sqrt()
            };
            // SISO on the first channel coefficient.
            let y = h[(0, 0)] * s + nvec(&mut rng);
            let est = y / h[(0, 0)];
            if (nearest(est, &points) - s).norm() > 1e-9 {
                errs_siso += 1;
            }
            // Alamouti pair carrying (s, s2).
            let s2 = points[rng.gen_range(0..points.len())];
            let tx = alamouti_encode(&[s, s2]).unwrap();
            let rx = vec![vec![
                h[(0, 0)] * tx[0][0] + h[(0, 1)] * tx[1][0] + nvec(&mut rng),
                h[(0, 0)] * tx[0][1] + h[(0, 1)] * tx[1][1] + nvec(&mut rng),
            ]];
            let (est, _) = alamouti_combine(&rx, &h).unwrap();
            if (nearest(est[0], &points) - s).norm() > 1e-9 {
                errs_div += 1;
            }
        }
        assert!(errs_siso > 200, "SISO reference too clean: {errs_siso}");
        assert!(
            (errs_div as f64) < errs_siso as f64 / 3.0,
            "diversity errors {errs_div} vs SISO {errs_siso}"
        );
    }

    #[test]
    fn all_detectors_agree_on_identity_channel() {
        let spec = QamSpec::new(16).unwrap();
        let points = spec.points();
        let mut rng = SeedStream::root(95).child("detect").rng();
        let h = DMatrix::identity(2, 2);
        for _ in 0..20 {
            let x = DVector::from_fn(2, |_, _| points[rng.gen_range(0..points.len())]);
            for det in [Detector::Zf, Detector::Mmse, Detector::Sphere, Detector::Ml] {
                let out = detect(&x, &h, 1e-4, &spec, det).unwrap();
                for k in 0..2 {
                    assert!((out.decisions[k] - x[k]).norm() < 1e-9, "{det:?}");
                }
            }
        }
    }

    #[test]
    fn sphere_equals_exhaustive_ml_on_random_instances() {
        let spec = QamSpec::new(4).unwrap();
        let points = spec.points();
        let mut rng = SeedStream::root(96).child("sphere").rng();
        for _ in 0..1000 {
            let h = random_matrix(2, 2, &mut rng);
            let x = DVector::from_fn(2, |_, _| points[rng.gen_range(0..points.len())]);
            let noise = DVector::from_fn(2, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * 0.4
            });
            let y = &h * &x + noise;
            let ml = ml_detect(&y, &h, &points);
            let sp = sphere_detect(&y, &h, &points).unwrap();
            assert_eq!(ml, sp);
        }
    }

    #[test]
    fn zf_is_unbiased_and_mmse_converges_to_zf() {
        let spec = QamSpec::new(64).unwrap();
        let points = spec.points();
        let mut rng = SeedStream::root(97).child("linear").rng();
        for _ in 0..10 {
            let h = random_matrix(3, 2, &mut rng);
            let x = DVector::from_fn(2, |_, _| points[rng.gen_range(0..points.len())]);
            let y = &h * &x;
            let zf = detect(&y, &h, 0.01, &spec, Detector::Zf).unwrap();
            for k in 0..2 {
                assert!((zf.soft[k] - x[k]).norm() < 1e-10, "ZF biased: {:?}", zf.soft[k]);
            }
            let mmse = detect(&y, &h, 1e-9, &spec, Detector::Mmse).unwrap();
            for k in 0..2 {
                assert!((mmse.soft[k] - zf.soft[k]).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn rank_deficient_zf_is_rejected() {
        let spec = QamSpec::new(4).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]);
        let y = DVector::from_element(2, c(1.0, 0.0));
        assert!(detect(&y, &h, 0.01, &spec, Detector::Zf).is_err());
        assert!(detect(&y, &h, 0.01, &spec, Detector::Sphere).is_err());
        // MMSE regularizes and stays usable.
        assert!(detect(&y, &h, 0.01, &spec, Detector::Mmse).is_ok());
    }

    #[test]
    fn mmse_sinr_tracks_channel_quality() {
        let spec = QamSpec::new(4).unwrap();
        let h_good = DMatrix::identity(2, 2);
        let h_bad = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.9, 0.0), c(0.9, 0.0), c(1.0, 0.0)]);
        let y = DVector::from_element(2, c(1.0, 0.0));
        let good = detect(&y, &h_good, 0.01, &spec, Detector::Mmse).unwrap();
        let bad = detect(&y, &h_bad, 0.01, &spec, Detector::Mmse).unwrap();
        assert!(good.sinr[0] > 10.0 * bad.sinr[0]);
    }
}
