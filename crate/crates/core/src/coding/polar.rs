//! Polar coding with Gaussian-approximation density-evolution construction
//! and LLR-based successive-cancellation (list) decoding, optionally
//! CRC-aided.
//!
//! The mother code length is the next power of two above the transmitted
//! length; the surplus is removed by quasi-uniform puncturing and the
//! construction accounts for the punctured positions as zero-LLR channels.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::coding::{CodeConfig, CodedBlock, DecodeResult, DecoderAlg};
use crate::error::{Error, Result};

const MAX_LOG_N: usize = 15;

/// Frozen/information pattern for one (N, M, K, design SNR) combination.
struct PolarPattern {
    n: usize,
    /// Punctured codeword positions (sorted): quasi-uniform puncturing, the
    /// `n - m` indices with the smallest bit-reversed values.
    punctured: Vec<usize>,
    /// true at punctured codeword positions.
    punctured_mask: Vec<bool>,
    /// Information positions (sorted), `k` of them.
    info_positions: Vec<usize>,
    frozen: Vec<bool>,
}

fn pattern_for(m: usize, k: usize, design_snr_db: f64) -> Result<Arc<PolarPattern>> {
    type Key = (usize, usize, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<PolarPattern>>>> = OnceLock::new();
    let key = (m, k, design_snr_db.to_bits());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().unwrap().get(&key) {
        return Ok(p.clone());
    }
    let p = Arc::new(build_pattern(m, k, design_snr_db)?);
    cache.lock().unwrap().insert(key, p.clone());
    Ok(p)
}

/// phi(m) = 1 - E[tanh(L/2)] for L ~ N(m, 2m), the standard Gaussian
/// approximation of density evolution (Chung et al. approximation).
fn phi(m: f64) -> f64 {
    if m < 1e-300 {
        1.0
    } else if m < 10.0 {
        (-0.4527 * m.powf(0.86) + 0.0218).exp()
    } else {
        (std::f64::consts::PI / m).sqrt() * (-m / 4.0).exp() * (1.0 - 10.0 / (7.0 * m))
    }
}

fn phi_inv(y: f64) -> f64 {
    if y >= 1.0 {
        return 0.0;
    }
    // phi is monotone decreasing; bisect on [0, 1e9].
    let (mut lo, mut hi) = (0.0f64, 1e9f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian-approximation density evolution over mean LLRs: the check
/// combination uses phi/phi_inv, the variable combination adds means,
/// matching the decoder's recursion order. Punctured channels start at 0.
fn evolve(m: &[f64]) -> Vec<f64> {
    if m.len() == 1 {
        return m.to_vec();
    }
    let h = m.len() / 2;
    let check: Vec<f64> = (0..h)
        .map(|i| phi_inv(1.0 - (1.0 - phi(m[i])) * (1.0 - phi(m[i + h]))))
        .collect();
    let var: Vec<f64> = (0..h).map(|i| m[i] + m[i + h]).collect();
    let mut out = evolve(&check);
    out.extend(evolve(&var));
    out
}

fn build_pattern(m: usize, k: usize, design_snr_db: f64) -> Result<PolarPattern> {
    if k > m {
        return Err(Error::config(format!(
            "polar block of {k} bits does not fit {m} coded bits"
        )));
    }
    let log_n = m.next_power_of_two().trailing_zeros() as usize;
    if log_n > MAX_LOG_N {
        return Err(Error::config(format!(
            "polar mother code 2^{log_n} exceeds the supported maximum"
        )));
    }
    let n = 1usize << log_n;
    // Quasi-uniform puncturing: drop the n - m codeword positions whose
    // bit-reversed index is smallest, which spreads the erasures uniformly.
    let bitrev = |i: usize| i.reverse_bits() >> (usize::BITS as usize - log_n.max(1));
    let mut punctured: Vec<usize> = if m < n {
        (0..n - m).map(bitrev).collect()
    } else {
        Vec::new()
    };
    punctured.sort_unstable();
    let mut punctured_mask = vec![false; n];
    for &p in &punctured {
        punctured_mask[p] = true;
    }
    // Mean channel LLR for BPSK at the design Es/N0: 4 * Es/N0.
    let m0 = 4.0 * 10f64.powf(design_snr_db / 10.0);
    let init: Vec<f64> = (0..n)
        .map(|i| if punctured_mask[i] { 0.0 } else { m0 })
        .collect();
    let reliability = evolve(&init);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        reliability[b]
            .partial_cmp(&reliability[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut info_positions: Vec<usize> = order[..k].to_vec();
    info_positions.sort_unstable();
    let mut frozen = vec![true; n];
    for &i in &info_positions {
        frozen[i] = false;
    }
    Ok(PolarPattern {
        n,
        punctured,
        punctured_mask,
        info_positions,
        frozen,
    })
}

/// In-place polar transform x = u F^{(x) log2 n} in natural bit order.
pub fn polar_transform(x: &mut [u8]) {
    let n = x.len();
    let mut len = 1;
    while len < n {
        for i in (0..n).step_by(2 * len) {
            for j in i..i + len {
                x[j] ^= x[j + len];
            }
        }
        len *= 2;
    }
}

pub fn encode(block: &[u8], cfg: &CodeConfig) -> Result<CodedBlock> {
    let m = cfg.target_length();
    let pattern = pattern_for(m, block.len(), cfg.polar_design_snr_db)?;
    let mut u = vec![0u8; pattern.n];
    for (&pos, &bit) in pattern.info_positions.iter().zip(block) {
        u[pos] = bit;
    }
    polar_transform(&mut u);
    let codeword_bits: Vec<u8> = (0..pattern.n)
        .filter(|&i| !pattern.punctured_mask[i])
        .map(|i| u[i])
        .collect();
    Ok(CodedBlock {
        info_bits: Vec::new(),
        crc_bits: Vec::new(),
        codeword_bits,
        filler_positions: Vec::new(),
        punctured_positions: pattern.punctured.clone(),
    })
}

/// f-combination: exact boxplus of two LLRs.
#[inline]
fn f_comb(a: f64, b: f64) -> f64 {
    let s = a.signum() * b.signum() * a.abs().min(b.abs());
    s + (-(a.abs() + b.abs())).exp().ln_1p() - (-(a.abs() - b.abs()).abs()).exp().ln_1p()
}

#[inline]
fn g_comb(a: f64, b: f64, u: u8) -> f64 {
    if u == 0 {
        b + a
    } else {
        b - a
    }
}

/// Penalty added to a path metric for deciding `bit` against LLR `l`.
#[inline]
fn metric_penalty(l: f64, bit: u8) -> f64 {
    let x = if bit == 0 { l } else { -l };
    (-x).exp().ln_1p()
}

/// One successive-cancellation path: LLR and partial-sum arrays per level.
#[derive(Clone)]
struct Path {
    /// p[lambda] has n >> lambda entries; p[0] holds the channel LLRs.
    p: Vec<Vec<f64>>,
    /// c[lambda][parity] mirror the partial sums.
    c: Vec<[Vec<u8>; 2]>,
    u: Vec<u8>,
    metric: f64,
}

impl Path {
    fn new(channel_llrs: &[f64], log_n: usize) -> Path {
        let n = channel_llrs.len();
        let p = (0..=log_n).map(|l| vec![0.0; n >> l]).collect::<Vec<_>>();
        let c = (0..=log_n)
            .map(|l| [vec![0u8; n >> l], vec![0u8; n >> l]])
            .collect::<Vec<_>>();
        let mut path = Path {
            p,
            c,
            u: Vec::with_capacity(n),
            metric: 0.0,
        };
        path.p[0].copy_from_slice(channel_llrs);
        path
    }

    fn calc_p(&mut self, lambda: usize, phi: usize, n: usize) {
        if lambda == 0 {
            return;
        }
        if phi % 2 == 0 {
            self.calc_p(lambda - 1, phi >> 1, n);
        }
        let half = n >> lambda;
        for beta in 0..half {
            let a = self.p[lambda - 1][beta];
            let b = self.p[lambda - 1][beta + half];
            self.p[lambda][beta] = if phi % 2 == 0 {
                f_comb(a, b)
            } else {
                g_comb(a, b, self.c[lambda][0][beta])
            };
        }
    }

    fn update_c(&mut self, lambda: usize, phi: usize, n: usize) {
        debug_assert!(phi % 2 == 1);
        let psi = phi >> 1;
        let half = n >> lambda;
        for beta in 0..half {
            self.c[lambda - 1][psi % 2][beta] = self.c[lambda][0][beta] ^ self.c[lambda][1][beta];
            self.c[lambda - 1][psi % 2][beta + half] = self.c[lambda][1][beta];
        }
        if psi % 2 == 1 {
            self.update_c(lambda - 1, psi, n);
        }
    }
}

fn scl_decode(channel_llrs: &[f64], pattern: &PolarPattern, list_size: usize) -> Vec<Path> {
    let n = pattern.n;
    let log_n = n.trailing_zeros() as usize;
    let mut paths = vec![Path::new(channel_llrs, log_n)];
    for phi in 0..n {
        for path in paths.iter_mut() {
            path.calc_p(log_n, phi, n);
        }
        if pattern.frozen[phi] {
            for path in paths.iter_mut() {
                let l = path.p[log_n][0];
                path.metric += metric_penalty(l, 0);
                path.u.push(0);
                path.c[log_n][phi % 2][0] = 0;
            }
        } else {
            // Split every path on both decisions, keep the best `list_size`.
            let mut candidates: Vec<(usize, u8, f64)> = Vec::with_capacity(2 * paths.len());
            for (i, path) in paths.iter().enumerate() {
                let l = path.p[log_n][0];
                candidates.push((i, 0, path.metric + metric_penalty(l, 0)));
                candidates.push((i, 1, path.metric + metric_penalty(l, 1)));
            }
            candidates.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
            candidates.truncate(list_size);
            let mut next = Vec::with_capacity(candidates.len());
            for &(i, bit, metric) in &candidates {
                let mut path = paths[i].clone();
                path.metric = metric;
                path.u.push(bit);
                path.c[log_n][phi % 2][0] = bit;
                next.push(path);
            }
            paths = next;
        }
        if phi % 2 == 1 {
            for path in paths.iter_mut() {
                path.update_c(log_n, phi, n);
            }
        }
    }
    paths.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap());
    paths
}

pub fn decode(llrs: &[f64], cfg: &CodeConfig) -> Result<DecodeResult> {
    let k = cfg.block_length();
    let pattern = pattern_for(cfg.target_length(), k, cfg.polar_design_snr_db)?;
    let mut channel = vec![0.0; pattern.n];
    let mut it = llrs.iter();
    for (i, c) in channel.iter_mut().enumerate() {
        if !pattern.punctured_mask[i] {
            *c = *it.next().unwrap_or(&0.0);
        }
    }
    let list_size = match cfg.decoder {
        DecoderAlg::Sc => 1,
        _ => cfg.iterations_or_list_size,
    };
    let paths = scl_decode(&channel, &pattern, list_size);
    let extract = |path: &Path| -> Vec<u8> {
        pattern.info_positions.iter().map(|&i| path.u[i]).collect()
    };
    let chosen = if cfg.decoder == DecoderAlg::CrcListSc {
        let crc = crate::coding::crc::Crc::new(cfg.crc_length)?;
        paths
            .iter()
            .find(|p| crc.check(&extract(p)))
            .unwrap_or(&paths[0])
    } else {
        &paths[0]
    };
    Ok(DecodeResult {
        info_bits: extract(chosen),
        crc_pass: false,
        iterations_used: list_size,
    })
}
