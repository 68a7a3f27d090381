//! Parallel-concatenated turbo code: two 8-state recursive systematic
//! encoders (feedback 13, feedforward 15 octal) joined by a quadratic
//! permutation polynomial (QPP) interleaver, with trellis termination and
//! iterative BCJR decoding.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::coding::bcjr::{bcjr, MaxStar, Trellis};
use crate::coding::ratematch::{accumulate_llrs, apply_tx_map, punctured_positions, rate13_tx_map};
use crate::coding::{CodeConfig, CodedBlock, DecodeResult};
use crate::error::Result;

pub const FEEDBACK: u32 = 0o13;
pub const FEEDFORWARD: u32 = 0o15;
const CONSTRAINT_LENGTH: usize = 4;
const TAIL: usize = CONSTRAINT_LENGTH - 1;

fn trellis() -> Trellis {
    Trellis::recursive_systematic(FEEDBACK, FEEDFORWARD, CONSTRAINT_LENGTH)
}

/// QPP interleaver pi(i) = (f1*i + f2*i^2) mod k.
///
/// The coefficients are found by search: f1 must be coprime with k for the
/// polynomial to be a bijection, f2 is scanned over multiples of k's prime
/// radical, and among valid pairs the one maximizing the cyclic spread
/// min(|pi(i)-pi(j)| + |i-j|) is kept. The search is deterministic, so both
/// ends of a link derive the same permutation from the block length alone.
pub fn qpp_interleaver(k: usize) -> Arc<Vec<usize>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<usize>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&k) {
        return v.clone();
    }
    let perm = Arc::new(qpp_search(k));
    cache.lock().unwrap().insert(k, perm.clone());
    perm
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn radical(mut k: usize) -> usize {
    let mut r = 1;
    let mut p = 2;
    while p * p <= k {
        if k % p == 0 {
            r *= p;
            while k % p == 0 {
                k /= p;
            }
        }
        p += 1;
    }
    if k > 1 {
        r *= k;
    }
    r
}

fn qpp_eval(k: usize, f1: usize, f2: usize) -> Vec<usize> {
    (0..k)
        .map(|i| (f1 * i % k + f2 % k * i % k * i % k) % k)
        .collect()
}

fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Cyclic spread restricted to nearby index pairs, which is where the minimum
/// of the full metric is attained for reasonable permutations.
fn spread(perm: &[usize], k: usize) -> usize {
    let cyc = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(k - d)
    };
    let window = ((2 * k) as f64).sqrt().ceil() as usize + 1;
    let mut best = usize::MAX;
    for i in 0..k {
        for off in 1..=window.min(k - 1) {
            let j = (i + off) % k;
            best = best.min(cyc(perm[i], perm[j]) + off.min(k - off));
        }
    }
    best
}

fn qpp_search(k: usize) -> Vec<usize> {
    let rad = radical(k);
    let mut best: Option<(usize, Vec<usize>)> = None;
    let f2_candidates: Vec<usize> = (1..)
        .map(|m| m * rad % k)
        .take(24)
        .filter(|&f2| f2 != 0)
        .collect();
    let f1_candidates: Vec<usize> = (1..k.min(200)).step_by(2).filter(|&f| gcd(f, k) == 1).collect();
    for &f2 in &f2_candidates {
        for &f1 in &f1_candidates {
            let perm = qpp_eval(k, f1, f2);
            if !is_bijection(&perm) {
                continue;
            }
            let s = spread(&perm, k);
            if best.as_ref().map_or(true, |(bs, _)| s > *bs) {
                best = Some((s, perm));
            }
        }
    }
    best.map(|(_, p)| p)
        .unwrap_or_else(|| (0..k).collect())
}

/// Runs one constituent encoder over `input`, then terminates it with three
/// register-draining bits. Returns (parity over input, tail inputs, tail
/// parities).
fn rsc_encode(tr: &Trellis, input: &[u8]) -> (Vec<u8>, [u8; TAIL], [u8; TAIL]) {
    let mut state = 0usize;
    let mut parity = Vec::with_capacity(input.len());
    for &b in input {
        let out = tr.output[state][b as usize];
        parity.push(out >> 1 & 1);
        state = tr.next[state][b as usize];
    }
    let mut tail_in = [0u8; TAIL];
    let mut tail_par = [0u8; TAIL];
    for t in 0..TAIL {
        let b = tr.terminating_input(state);
        let out = tr.output[state][b];
        tail_in[t] = b as u8;
        tail_par[t] = out >> 1 & 1;
        state = tr.next[state][b];
    }
    debug_assert_eq!(state, 0);
    (parity, tail_in, tail_par)
}

/// Mother codeword as three streams of length k+4 laid out `[d0 | d1 | d2]`,
/// with the twelve termination bits multiplexed into the last four positions
/// of each stream.
pub fn mother_encode(block: &[u8]) -> Vec<u8> {
    let tr = trellis();
    let k = block.len();
    let perm = qpp_interleaver(k);
    let interleaved: Vec<u8> = perm.iter().map(|&i| block[i]).collect();
    let (z, x_t, z_t) = rsc_encode(&tr, block);
    let (zp, xp_t, zp_t) = rsc_encode(&tr, &interleaved);
    let d = k + 4;
    let mut m = vec![0u8; 3 * d];
    m[..k].copy_from_slice(block);
    m[d..d + k].copy_from_slice(&z);
    m[2 * d..2 * d + k].copy_from_slice(&zp);
    // Termination multiplexing: columns are (x_k, z_k, x_{k+1}), ...
    let tails = [
        [x_t[0], z_t[0], x_t[1]],
        [z_t[1], x_t[2], z_t[2]],
        [xp_t[0], zp_t[0], xp_t[1]],
        [zp_t[1], xp_t[2], zp_t[2]],
    ];
    for (col, t) in tails.iter().enumerate() {
        m[k + col] = t[0];
        m[d + k + col] = t[1];
        m[2 * d + k + col] = t[2];
    }
    m
}

pub fn encode(block: &[u8], cfg: &CodeConfig) -> Result<CodedBlock> {
    let mother = mother_encode(block);
    let d = block.len() + 4;
    let tx_map = rate13_tx_map(d, cfg.target_length(), true, true);
    Ok(CodedBlock {
        info_bits: Vec::new(),
        crc_bits: Vec::new(),
        codeword_bits: apply_tx_map(&mother, &tx_map),
        filler_positions: Vec::new(),
        punctured_positions: punctured_positions(&tx_map, mother.len()),
    })
}

struct TailLlrs {
    input: [f64; TAIL],
    parity: [f64; TAIL],
}

/// Inverts the termination multiplexing of [`mother_encode`].
fn split_mother(mother: &[f64], k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, TailLlrs, TailLlrs) {
    let d = k + 4;
    let sys = mother[..k].to_vec();
    let par1 = mother[d..d + k].to_vec();
    let par2 = mother[2 * d..2 * d + k].to_vec();
    let cell = |col: usize, row: usize| mother[row * d + k + col];
    let tails1 = TailLlrs {
        input: [cell(0, 0), cell(0, 2), cell(1, 1)],
        parity: [cell(0, 1), cell(1, 0), cell(1, 2)],
    };
    let tails2 = TailLlrs {
        input: [cell(2, 0), cell(2, 2), cell(3, 1)],
        parity: [cell(2, 1), cell(3, 0), cell(3, 2)],
    };
    (sys, par1, par2, tails1, tails2)
}

fn constituent_pass(
    tr: &Trellis,
    sys: &[f64],
    parity: &[f64],
    tails: &TailLlrs,
    extrinsic_in: &[f64],
    maxstar: MaxStar,
) -> Vec<f64> {
    let k = sys.len();
    let mut branch = Vec::with_capacity(k + TAIL);
    let mut a_priori = Vec::with_capacity(k + TAIL);
    for t in 0..k {
        branch.push(vec![sys[t], parity[t]]);
        a_priori.push(extrinsic_in[t]);
    }
    for t in 0..TAIL {
        branch.push(vec![tails.input[t], tails.parity[t]]);
        a_priori.push(0.0);
    }
    bcjr(tr, &branch, &a_priori, true, maxstar)
}

pub fn decode(llrs: &[f64], cfg: &CodeConfig) -> Result<DecodeResult> {
    let k = cfg.block_length();
    let d = k + 4;
    let tx_map = rate13_tx_map(d, cfg.target_length(), true, true);
    let mother = accumulate_llrs(llrs, &tx_map, 3 * d);
    let (sys, par1, par2, tails1, tails2) = split_mother(&mother, k);
    let perm = qpp_interleaver(k);
    let sys_pi: Vec<f64> = perm.iter().map(|&i| sys[i]).collect();

    let tr = trellis();
    let maxstar = MaxStar::from_decoder(cfg.decoder);
    let crc = (cfg.crc_length > 0)
        .then(|| crate::coding::crc::Crc::new(cfg.crc_length))
        .transpose()?;

    let mut apriori1 = vec![0.0; k];
    let mut decided = vec![0u8; k];
    let mut iterations_used = 0;
    for it in 1..=cfg.iterations_or_list_size {
        iterations_used = it;
        let post1 = constituent_pass(&tr, &sys, &par1, &tails1, &apriori1, maxstar);
        let mut extr1 = vec![0.0; k];
        for t in 0..k {
            extr1[t] = post1[t] - sys[t] - apriori1[t];
        }
        let apriori2: Vec<f64> = perm.iter().map(|&i| extr1[i]).collect();
        let post2 = constituent_pass(&tr, &sys_pi, &par2, &tails2, &apriori2, maxstar);
        for (t, &i) in perm.iter().enumerate() {
            apriori1[i] = post2[t] - sys_pi[t] - apriori2[t];
            decided[i] = u8::from(post2[t] < 0.0);
        }
        if let Some(crc) = &crc {
            if crc.check(&decided) {
                break;
            }
        }
    }
    Ok(DecodeResult {
        info_bits: decided,
        crc_pass: false,
        iterations_used,
    })
}
