//! Zero-tailed rate-1/3 convolutional code, constraint length 7, generators
//! 133/171/165 (octal), decoded with the soft-output BCJR algorithm.

use crate::coding::bcjr::{bcjr, MaxStar, Trellis};
use crate::coding::ratematch::{accumulate_llrs, apply_tx_map, punctured_positions, rate13_tx_map};
use crate::coding::{CodeConfig, CodedBlock, DecodeResult};
use crate::error::Result;

pub const GENERATORS: [u32; 3] = [0o133, 0o171, 0o165];
pub const CONSTRAINT_LENGTH: usize = 7;
const TAIL: usize = CONSTRAINT_LENGTH - 1;

fn trellis() -> Trellis {
    Trellis::feedforward(&GENERATORS, CONSTRAINT_LENGTH)
}

/// Runs the shift register over `block` plus six zero tail bits; returns the
/// three output streams concatenated: `[d0 | d1 | d2]`.
pub fn mother_encode(block: &[u8]) -> Vec<u8> {
    let tr = trellis();
    let d = block.len() + TAIL;
    let mut mother = vec![0u8; 3 * d];
    let mut state = 0usize;
    for (t, bit) in block.iter().map(|&b| b as usize).chain(std::iter::repeat(0)).take(d).enumerate() {
        let out = tr.output[state][bit];
        for j in 0..3 {
            mother[j * d + t] = out >> j & 1;
        }
        state = tr.next[state][bit];
    }
    debug_assert_eq!(state, 0, "zero tail must terminate the register");
    mother
}

pub fn encode(block: &[u8], cfg: &CodeConfig) -> Result<CodedBlock> {
    let d = block.len() + TAIL;
    let mother = mother_encode(block);
    let tx_map = rate13_tx_map(d, cfg.target_length(), false, false);
    Ok(CodedBlock {
        info_bits: Vec::new(),
        crc_bits: Vec::new(),
        codeword_bits: apply_tx_map(&mother, &tx_map),
        filler_positions: Vec::new(),
        punctured_positions: punctured_positions(&tx_map, mother.len()),
    })
}

pub fn decode(llrs: &[f64], cfg: &CodeConfig) -> Result<DecodeResult> {
    let k = cfg.block_length();
    let d = k + TAIL;
    let tx_map = rate13_tx_map(d, cfg.target_length(), false, false);
    let mother = accumulate_llrs(llrs, &tx_map, 3 * d);
    let branch: Vec<Vec<f64>> = (0..d)
        .map(|t| vec![mother[t], mother[d + t], mother[2 * d + t]])
        .collect();
    // Tail input bits are known to be zero.
    let mut a_priori = vec![0.0; d];
    for p in a_priori.iter_mut().skip(k) {
        *p = 1e3;
    }
    let post = bcjr(
        &trellis(),
        &branch,
        &a_priori,
        true,
        MaxStar::from_decoder(cfg.decoder),
    );
    Ok(DecodeResult {
        info_bits: post[..k].iter().map(|&l| u8::from(l < 0.0)).collect(),
        crc_pass: false,
        iterations_used: 1,
    })
}
