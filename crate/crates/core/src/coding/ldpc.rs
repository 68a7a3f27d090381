//! Quasi-cyclic LDPC coding on the 5G base graphs.
//!
//! The parity-check matrices come from `ldpc_toolbox`; this module adds base
//! graph selection, lifting-size choice, filler handling, puncturing of the
//! first two systematic blocks, rate matching, a structured encoder (dense
//! GF(2) solve of the 4Z x 4Z core, direct XOR for the identity extension)
//! and a layered LLR decoder with sum-product, normalized min-sum and
//! piecewise-linear min-sum check updates.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use clap::ValueEnum;
use ldpc_toolbox::codes::nr5g::{BaseGraph, LiftingSize};

use crate::coding::{CodeConfig, CodedBlock, DecodeResult, DecoderAlg, LLR_CLIP};
use crate::error::{Error, Result};

/// Scaling factor of the normalized min-sum check update.
pub const MIN_SUM_SCALE: f64 = 0.75;

/// Base-graph choice for a transport block of `a` bits at rate `r`.
pub fn select_base_graph(a: usize, r: f64) -> BaseGraph {
    if a <= 292 || (a <= 3824 && r <= 0.67) || r <= 0.25 {
        BaseGraph::BG2
    } else {
        BaseGraph::BG1
    }
}

/// Number of systematic base-graph columns used for lifting-size selection.
fn kb(bg: BaseGraph, a: usize) -> usize {
    match bg {
        BaseGraph::BG1 => 22,
        BaseGraph::BG2 => {
            if a > 640 {
                10
            } else if a > 560 {
                9
            } else if a > 192 {
                8
            } else {
                6
            }
        }
    }
}

fn lifting_for(z: usize) -> Option<LiftingSize> {
    LiftingSize::value_variants()
        .iter()
        .copied()
        .find(|&v| usize::from(v) == z)
}

/// Smallest standard lifting size with `kb * z >= a`.
fn select_lifting(kb: usize, a: usize) -> Result<LiftingSize> {
    let mut sizes: Vec<usize> = LiftingSize::value_variants()
        .iter()
        .map(|&v| usize::from(v))
        .collect();
    sizes.sort_unstable();
    sizes
        .into_iter()
        .find(|&z| kb * z >= a)
        .and_then(lifting_for)
        .ok_or_else(|| Error::config(format!("block of {a} bits exceeds the largest LDPC code")))
}

/// One lifted code: parity-check rows plus the precomputed core inverse.
struct LdpcCode {
    z: usize,
    /// Systematic length including fillers (22Z or 10Z).
    k_full: usize,
    /// Total variable nodes (68Z or 52Z).
    n_full: usize,
    /// Check rows as sorted variable indices.
    rows: Vec<Vec<usize>>,
    /// Inverse of the 4Z x 4Z core parity submatrix, u64-packed rows.
    core_inv: Vec<Vec<u64>>,
}

fn code_for(bg: BaseGraph, lift: LiftingSize) -> Arc<LdpcCode> {
    static CACHE: OnceLock<Mutex<HashMap<(bool, usize), Arc<LdpcCode>>>> = OnceLock::new();
    let key = (bg == BaseGraph::BG1, usize::from(lift));
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&key) {
        return c.clone();
    }
    let code = Arc::new(build_code(bg, lift));
    cache.lock().unwrap().insert(key, code.clone());
    code
}

fn build_code(bg: BaseGraph, lift: LiftingSize) -> LdpcCode {
    let z = usize::from(lift);
    let h = bg.h(lift);
    let (m, n) = (h.num_rows(), h.num_cols());
    let sys_cols = match bg {
        BaseGraph::BG1 => 22,
        BaseGraph::BG2 => 10,
    };
    let k_full = sys_cols * z;
    let mut rows: Vec<Vec<usize>> = (0..m)
        .map(|r| {
            let mut cols: Vec<usize> = h.iter_row(r).map(|node| usize::from(*node)).collect();
            cols.sort_unstable();
            cols
        })
        .collect();
    for row in rows.iter_mut() {
        row.dedup();
    }

    // Core: first 4Z checks close over the systematic part and the first 4Z
    // parity columns only; the remaining checks each own one identity parity.
    let words = (4 * z).div_ceil(64);
    let mut core = vec![vec![0u64; words]; 4 * z];
    for (r, row) in rows.iter().take(4 * z).enumerate() {
        for &c in row {
            if c >= k_full {
                let p = c - k_full;
                assert!(p < 4 * z, "core check touches an extension parity");
                core[r][p / 64] |= 1 << (p % 64);
            }
        }
    }
    let core_inv = invert_gf2(&core, 4 * z).expect("LDPC core parity submatrix is invertible");
    for (r, row) in rows.iter().enumerate().skip(4 * z) {
        let ext: Vec<usize> = row.iter().copied().filter(|&c| c >= k_full + 4 * z).collect();
        assert_eq!(ext, vec![k_full + r], "unexpected extension structure");
    }
    LdpcCode {
        z,
        k_full,
        n_full: n,
        rows,
        core_inv,
    }
}

/// Gauss-Jordan inversion of an n x n GF(2) matrix with u64-packed rows.
fn invert_gf2(mat: &[Vec<u64>], n: usize) -> Option<Vec<Vec<u64>>> {
    let words = n.div_ceil(64);
    let mut a: Vec<Vec<u64>> = mat.to_vec();
    let mut inv: Vec<Vec<u64>> = (0..n)
        .map(|i| {
            let mut row = vec![0u64; words];
            row[i / 64] |= 1 << (i % 64);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| a[r][col / 64] >> (col % 64) & 1 == 1)?;
        a.swap(col, pivot);
        inv.swap(col, pivot);
        for r in 0..n {
            if r != col && a[r][col / 64] >> (col % 64) & 1 == 1 {
                let (ar, ac) = if r < col {
                    let (lo, hi) = a.split_at_mut(col);
                    (&mut lo[r], &hi[0])
                } else {
                    let (lo, hi) = a.split_at_mut(r);
                    (&mut hi[0], &lo[col])
                };
                for w in 0..words {
                    ar[w] ^= ac[w];
                }
                let (ir, ic) = if r < col {
                    let (lo, hi) = inv.split_at_mut(col);
                    (&mut lo[r], &hi[0])
                } else {
                    let (lo, hi) = inv.split_at_mut(r);
                    (&mut hi[0], &lo[col])
                };
                for w in 0..words {
                    ir[w] ^= ic[w];
                }
            }
        }
    }
    Some(inv)
}

impl LdpcCode {
    /// Full codeword for a systematic part `s` (fillers already zeroed).
    fn encode_full(&self, s: &[u8]) -> Vec<u8> {
        debug_assert_eq!(s.len(), self.k_full);
        let z4 = 4 * self.z;
        let words = z4.div_ceil(64);
        // Right-hand side of the core system: XOR of systematic entries.
        let mut rhs = vec![0u64; words];
        for (r, row) in self.rows.iter().take(z4).enumerate() {
            let mut acc = 0u8;
            for &c in row {
                if c < self.k_full {
                    acc ^= s[c];
                }
            }
            if acc == 1 {
                rhs[r / 64] |= 1 << (r % 64);
            }
        }
        let mut c = vec![0u8; self.n_full];
        c[..self.k_full].copy_from_slice(s);
        for p in 0..z4 {
            let mut acc = 0u32;
            for w in 0..words {
                acc ^= (self.core_inv[p][w] & rhs[w]).count_ones();
            }
            c[self.k_full + p] = (acc & 1) as u8;
        }
        for (r, row) in self.rows.iter().enumerate().skip(z4) {
            let mut acc = 0u8;
            for &col in row {
                if col != self.k_full + r {
                    acc ^= c[col];
                }
            }
            c[self.k_full + r] = acc;
        }
        c
    }

    fn syndrome_ok(&self, c: &[u8]) -> bool {
        self.rows
            .iter()
            .all(|row| row.iter().fold(0u8, |acc, &v| acc ^ c[v]) == 0)
    }

    /// Mother-codeword indices transmitted for `e` coded bits: skip the
    /// first 2Z systematic bits, wrap around for repetition. Filler
    /// positions stay in the output — the fillers ride along as zeros and
    /// are discarded after decoding, which costs rate when the block is much
    /// smaller than the lifted systematic part but keeps the output length
    /// and code rate exactly on target.
    fn tx_map(&self, _a: usize, e: usize) -> Vec<usize> {
        let order: Vec<usize> = (2 * self.z..self.n_full).collect();
        (0..e).map(|i| order[i % order.len()]).collect()
    }
}

fn resolve(cfg: &CodeConfig) -> Result<(BaseGraph, Arc<LdpcCode>)> {
    let a = cfg.block_length();
    let bg = select_base_graph(a, cfg.code_rate);
    let lift = select_lifting(kb(bg, a), a)?;
    Ok((bg, code_for(bg, lift)))
}

pub fn encode(block: &[u8], cfg: &CodeConfig) -> Result<CodedBlock> {
    let a = block.len();
    let (_, code) = resolve(cfg)?;
    let mut s = vec![0u8; code.k_full];
    s[..a].copy_from_slice(block);
    let c = code.encode_full(&s);
    debug_assert!(code.syndrome_ok(&c));
    let tx_map = code.tx_map(a, cfg.target_length());
    let codeword_bits = tx_map.iter().map(|&i| c[i]).collect();
    Ok(CodedBlock {
        info_bits: Vec::new(),
        crc_bits: Vec::new(),
        codeword_bits,
        filler_positions: (a..code.k_full).collect(),
        punctured_positions: crate::coding::ratematch::punctured_positions(&tx_map, code.n_full),
    })
}

fn phi(x: f64) -> f64 {
    let x = x.clamp(1e-9, 40.0);
    ((x.exp() + 1.0) / (x.exp() - 1.0)).ln()
}

/// Pairwise check-node combination with the piecewise-linear correction
/// max(0, 0.6931 - 0.25 x) standing in for ln(1 + e^-x).
fn pwl_boxplus(a: f64, b: f64) -> f64 {
    let corr = |x: f64| (0.6931 - 0.25 * x).max(0.0);
    a.signum() * b.signum() * a.abs().min(b.abs()) + corr((a + b).abs()) - corr((a - b).abs())
}

pub fn decode(llrs: &[f64], cfg: &CodeConfig) -> Result<DecodeResult> {
    let a = cfg.block_length();
    let (_, code) = resolve(cfg)?;
    let tx_map = code.tx_map(a, cfg.target_length());
    let mut posterior = vec![0.0f64; code.n_full];
    for (&l, &i) in llrs.iter().zip(&tx_map) {
        posterior[i] += l;
    }
    for p in posterior.iter_mut().take(code.k_full).skip(a) {
        *p = 2.0 * LLR_CLIP;
    }

    let n_edges: usize = code.rows.iter().map(Vec::len).sum();
    let mut messages = vec![0.0f64; n_edges];
    let mut hard = vec![0u8; code.n_full];
    let mut iterations_used = 0;
    let mut scratch: Vec<f64> = Vec::new();
    let mut fwd: Vec<f64> = Vec::new();
    let mut bwd: Vec<f64> = Vec::new();

    for it in 1..=cfg.iterations_or_list_size {
        iterations_used = it;
        let mut edge = 0usize;
        for row in &code.rows {
            let d = row.len();
            scratch.clear();
            for (j, &v) in row.iter().enumerate() {
                scratch.push(posterior[v] - messages[edge + j]);
            }
            match cfg.decoder {
                DecoderAlg::MinSum => {
                    let mut sign = 1.0f64;
                    let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, 0usize);
                    for (j, &q) in scratch.iter().enumerate() {
                        if q < 0.0 {
                            sign = -sign;
                        }
                        let m = q.abs();
                        if m < min1 {
                            min2 = min1;
                            min1 = m;
                            arg = j;
                        } else if m < min2 {
                            min2 = m;
                        }
                    }
                    for (j, &q) in scratch.iter().enumerate() {
                        let mag = if j == arg { min2 } else { min1 };
                        let new = MIN_SUM_SCALE * sign * q.signum() * mag;
                        posterior[row[j]] += new - messages[edge + j];
                        messages[edge + j] = new;
                    }
                }
                DecoderAlg::SumProduct => {
                    let mut sign = 1.0f64;
                    let mut total = 0.0f64;
                    for &q in &scratch {
                        if q < 0.0 {
                            sign = -sign;
                        }
                        total += phi(q.abs());
                    }
                    for (j, &q) in scratch.iter().enumerate() {
                        let mag = phi((total - phi(q.abs())).max(1e-9));
                        let new = sign * q.signum() * mag;
                        posterior[row[j]] += new - messages[edge + j];
                        messages[edge + j] = new;
                    }
                }
                _ => {
                    // PWL min-sum: exclusive pairwise folds via prefix/suffix.
                    fwd.clear();
                    fwd.resize(d, 0.0);
                    bwd.clear();
                    bwd.resize(d, 0.0);
                    fwd[0] = scratch[0];
                    for j in 1..d {
                        fwd[j] = pwl_boxplus(fwd[j - 1], scratch[j]);
                    }
                    bwd[d - 1] = scratch[d - 1];
                    for j in (0..d - 1).rev() {
                        bwd[j] = pwl_boxplus(bwd[j + 1], scratch[j]);
                    }
                    for j in 0..d {
                        let new = if j == 0 {
                            bwd[1]
                        } else if j == d - 1 {
                            fwd[d - 2]
                        } else {
                            pwl_boxplus(fwd[j - 1], bwd[j + 1])
                        };
                        posterior[row[j]] += new - messages[edge + j];
                        messages[edge + j] = new;
                    }
                }
            }
            edge += d;
        }
        for (h, &p) in hard.iter_mut().zip(&posterior) {
            *h = u8::from(p < 0.0);
        }
        if code.syndrome_ok(&hard) {
            break;
        }
    }
    Ok(DecodeResult {
        info_bits: hard[..a].to_vec(),
        crc_pass: false,
        iterations_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{noiseless_llrs, Scheme};
    use rand::Rng;

    fn cfg(k: usize, rate: f64, decoder: DecoderAlg) -> CodeConfig {
        CodeConfig {
            scheme: Scheme::Ldpc,
            info_length: k,
            crc_length: 0,
            code_rate: rate,
            decoder,
            iterations_or_list_size: 20,
            polar_design_snr_db: 0.0,
        }
    }

    #[test]
    fn base_graph_selection_rules() {
        assert_eq!(select_base_graph(80, 1.0 / 6.0), BaseGraph::BG2);
        assert_eq!(select_base_graph(292, 0.9), BaseGraph::BG2);
        assert_eq!(select_base_graph(293, 0.9), BaseGraph::BG1);
        assert_eq!(select_base_graph(3824, 0.6), BaseGraph::BG2);
        assert_eq!(select_base_graph(3825, 0.6), BaseGraph::BG1);
        assert_eq!(select_base_graph(5000, 0.2), BaseGraph::BG2);
    }

    #[test]
    fn lifting_size_is_smallest_standard_value() {
        // 80 bits with kb = 6 needs z >= 13.3; the next standard size is 14.
        let z = usize::from(select_lifting(kb(BaseGraph::BG2, 80), 80).unwrap());
        assert_eq!(z, 14);
        let z = usize::from(select_lifting(22, 8448).unwrap());
        assert_eq!(z, 384);
        assert!(select_lifting(22, 8449).is_err());
    }

    #[test]
    fn encoded_words_satisfy_all_checks() {
        // The syndrome check is the independent oracle for the structured
        // encoder: H c = 0 over the full parity-check matrix.
        let mut rng = crate::rng::SeedStream::root(41).child("ldpc-enc").rng();
        for (a, rate) in [(80usize, 1.0 / 6.0), (300, 0.5), (640, 1.0 / 3.0), (1000, 0.8)] {
            let bg = select_base_graph(a, rate);
            let code = code_for(bg, select_lifting(kb(bg, a), a).unwrap());
            let mut s = vec![0u8; code.k_full];
            for b in s.iter_mut().take(a) {
                *b = rng.gen_range(0..=1);
            }
            let c = code.encode_full(&s);
            assert!(code.syndrome_ok(&c), "a={a} rate={rate}");
            // Flipping any single bit must break at least one check.
            let mut bad = c.clone();
            bad[a / 2] ^= 1;
            assert!(!code.syndrome_ok(&bad));
        }
    }

    #[test]
    fn noiseless_roundtrip_all_decoders() {
        let mut rng = crate::rng::SeedStream::root(42).child("ldpc-rt").rng();
        for decoder in [DecoderAlg::SumProduct, DecoderAlg::MinSum, DecoderAlg::PwlMinSum] {
            for (k, rate) in [(64usize, 1.0 / 6.0), (120, 0.5), (400, 2.0 / 3.0)] {
                let c = cfg(k, rate, decoder);
                let block: Vec<u8> = (0..k).map(|_| rng.gen_range(0..=1u8)).collect();
                let cb = encode(&block, &c).unwrap();
                assert_eq!(cb.codeword_bits.len(), c.target_length());
                let res = decode(&noiseless_llrs(&cb.codeword_bits, 10.0), &c).unwrap();
                assert_eq!(res.info_bits, block, "{decoder:?} k={k} rate={rate}");
            }
        }
    }

    #[test]
    fn corrects_noise_at_low_rate() {
        let mut rng = crate::rng::SeedStream::root(43).child("ldpc-noise").rng();
        let c = cfg(80, 1.0 / 6.0, DecoderAlg::SumProduct);
        let mut failures = 0;
        for _ in 0..20 {
            let block: Vec<u8> = (0..80).map(|_| rng.gen_range(0..=1u8)).collect();
            let cb = encode(&block, &c).unwrap();
            let sigma = 1.0;
            let llrs: Vec<f64> = cb
                .codeword_bits
                .iter()
                .map(|&b| {
                    let x = if b == 0 { 1.0 } else { -1.0 };
                    let n: f64 = rng.sample(rand_distr::StandardNormal);
                    2.0 * (x + sigma * n) / (sigma * sigma)
                })
                .collect();
            if decode(&llrs, &c).unwrap().info_bits != block {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} of 20 frames failed at 0 dB");
    }

    #[test]
    fn early_termination_on_clean_input() {
        let c = cfg(64, 1.0 / 3.0, DecoderAlg::SumProduct);
        let block = vec![1u8; 64];
        let cb = encode(&block, &c).unwrap();
        let res = decode(&noiseless_llrs(&cb.codeword_bits, 10.0), &c).unwrap();
        assert!(res.iterations_used <= 3);
    }

    #[test]
    fn repetition_beyond_mother_length() {
        // Rate low enough that the circular buffer wraps.
        let c = cfg(64, 0.05, DecoderAlg::MinSum);
        let block = vec![0u8; 64];
        let cb = encode(&block, &c).unwrap();
        assert_eq!(cb.codeword_bits.len(), 1280);
        let res = decode(&noiseless_llrs(&cb.codeword_bits, 5.0), &c).unwrap();
        assert_eq!(res.info_bits, block);
    }
}
