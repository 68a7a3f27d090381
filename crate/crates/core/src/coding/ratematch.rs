//! Sub-block interleaving and circular-buffer rate matching.
//!
//! Rate matching is expressed as a transmit map: `tx_map[i]` is the index of
//! the mother-codeword bit sent in transmitted position `i`. Encoding selects
//! bits through the map; decoding accumulates LLRs through it, so repeated
//! bits combine and punctured bits stay at LLR 0 automatically.

/// 32-column inter-column permutation used by the sub-block interleaver.
pub const COLUMN_PERM: [usize; 32] = [
    0, 16, 8, 24, 4, 20, 12, 28, 2, 18, 10, 26, 6, 22, 14, 30, 1, 17, 9, 25, 5, 21, 13, 29, 3, 19,
    11, 27, 7, 23, 15, 31,
];

/// Sub-block interleaves the index sequence `0..len`: writes row-wise into a
/// 32-column matrix padded with dummies at the front, reads the columns in
/// permuted order. `None` marks a dummy position.
pub fn subblock_interleave(len: usize) -> Vec<Option<usize>> {
    let cols = 32;
    let rows = len.div_ceil(cols);
    let pad = rows * cols - len;
    let mut out = Vec::with_capacity(rows * cols);
    for &c in &COLUMN_PERM {
        for r in 0..rows {
            let pos = r * cols + c;
            out.push(if pos < pad { None } else { Some(pos - pad) });
        }
    }
    out
}

/// Variant for the second turbo parity stream: position `k` reads matrix cell
/// `(perm[k / rows] + cols * (k % rows) + 1) mod (rows * cols)`.
pub fn subblock_interleave_shifted(len: usize) -> Vec<Option<usize>> {
    let cols = 32;
    let rows = len.div_ceil(cols);
    let pad = rows * cols - len;
    let total = rows * cols;
    (0..total)
        .map(|k| {
            let pos = (COLUMN_PERM[k / rows] + cols * (k % rows) + 1) % total;
            if pos < pad {
                None
            } else {
                Some(pos - pad)
            }
        })
        .collect()
}

/// Reads `e` mother-bit indices from the circular buffer formed by the given
/// interleaved streams, skipping dummies and wrapping around. Each stream's
/// entries are offset by its base index in the mother codeword.
pub fn circular_buffer(streams: &[(Vec<Option<usize>>, usize)], e: usize) -> Vec<usize> {
    let buffer: Vec<usize> = streams
        .iter()
        .flat_map(|(v, base)| v.iter().filter_map(move |x| x.map(|i| i + base)))
        .collect();
    (0..e).map(|i| buffer[i % buffer.len()]).collect()
}

/// Builds the transmit map for a rate-1/3 mother code with streams `d0 d1 d2`
/// of common length `d`, laid out as `[d0 | d1 | d2]` in the mother codeword.
/// When `interlace_parities` is set the two parity streams are bit-interlaced
/// in the buffer (turbo style); otherwise they are concatenated.
pub fn rate13_tx_map(d: usize, e: usize, interlace_parities: bool, shifted_d2: bool) -> Vec<usize> {
    let v0 = subblock_interleave(d);
    let v1 = subblock_interleave(d);
    let v2 = if shifted_d2 {
        subblock_interleave_shifted(d)
    } else {
        subblock_interleave(d)
    };
    if interlace_parities {
        let mut v12 = Vec::with_capacity(v1.len() + v2.len());
        for (a, b) in v1.iter().zip(&v2) {
            v12.push(a.map(|i| i + d));
            v12.push(b.map(|i| i + 2 * d));
        }
        circular_buffer(&[(v0, 0), (v12, 0)], e)
    } else {
        circular_buffer(&[(v0, 0), (v1, d), (v2, 2 * d)], e)
    }
}

/// Selects transmitted bits out of a mother codeword.
pub fn apply_tx_map(mother: &[u8], tx_map: &[usize]) -> Vec<u8> {
    tx_map.iter().map(|&i| mother[i]).collect()
}

/// Accumulates received LLRs back onto the mother codeword; untransmitted
/// positions stay at 0 and repeated positions add up.
pub fn accumulate_llrs(llrs: &[f64], tx_map: &[usize], mother_len: usize) -> Vec<f64> {
    debug_assert_eq!(llrs.len(), tx_map.len());
    let mut out = vec![0.0; mother_len];
    for (&l, &i) in llrs.iter().zip(tx_map) {
        out[i] += l;
    }
    out
}

/// Mother positions never referenced by the map (i.e. punctured).
pub fn punctured_positions(tx_map: &[usize], mother_len: usize) -> Vec<usize> {
    let mut seen = vec![false; mother_len];
    for &i in tx_map {
        seen[i] = true;
    }
    seen.iter()
        .enumerate()
        .filter_map(|(i, &s)| (!s).then_some(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleave_is_a_permutation() {
        for len in [40usize, 64, 100, 512, 6144] {
            let v = subblock_interleave(len);
            let mut seen: Vec<usize> = v.iter().filter_map(|&x| x).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..len).collect::<Vec<_>>());
            let v = subblock_interleave_shifted(len);
            let mut seen: Vec<usize> = v.iter().filter_map(|&x| x).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..len).collect::<Vec<_>>());
        }
    }

    #[test]
    fn interleave_oracle_small() {
        // len = 4, rows = 1, pad = 28: matrix row is [d..d 0 1 2 3] with data
        // in columns 28..32. Reading permuted columns {0,16,8,24,...} yields
        // data only where the permuted column >= 28: columns 28, 30, 29, 31
        // appear at permutation positions 7, 15, 23, 31.
        let v = subblock_interleave(4);
        let data: Vec<(usize, usize)> = v
            .iter()
            .enumerate()
            .filter_map(|(k, &x)| x.map(|i| (k, i)))
            .collect();
        assert_eq!(data, vec![(7, 0), (15, 2), (23, 1), (31, 3)]);
    }

    #[test]
    fn circular_buffer_wraps_and_skips_dummies() {
        let v = subblock_interleave(4);
        let map = circular_buffer(&[(v, 10)], 9);
        assert_eq!(map, vec![10, 12, 11, 13, 10, 12, 11, 13, 10]);
    }

    #[test]
    fn tx_map_accumulate_inverts_apply_at_rate_one_third() {
        let d = 100;
        let map = rate13_tx_map(d, 3 * d, true, true);
        let mother: Vec<u8> = (0..3 * d).map(|i| (i % 2) as u8).collect();
        let sent = apply_tx_map(&mother, &map);
        let llrs: Vec<f64> = sent.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
        let acc = accumulate_llrs(&llrs, &map, 3 * d);
        // Exactly rate 1/3: every mother bit sent exactly once.
        for (i, &a) in acc.iter().enumerate() {
            assert_eq!(a, if mother[i] == 0 { 1.0 } else { -1.0 });
        }
        assert!(punctured_positions(&map, 3 * d).is_empty());
    }

    #[test]
    fn puncturing_hits_parity_first() {
        // At rates above 1/3 the circular buffer is read only partially; the
        // systematic stream sits at the front so parities get punctured first.
        let d = 96;
        let map = rate13_tx_map(d, 2 * d, true, true);
        let punct = punctured_positions(&map, 3 * d);
        assert_eq!(punct.len(), d);
        assert!(punct.iter().all(|&i| i >= d), "systematic bits punctured");
    }

    #[test]
    fn repetition_below_rate_one_third() {
        let d = 50;
        let map = rate13_tx_map(d, 3 * d + 30, false, false);
        let acc = accumulate_llrs(&vec![1.0; map.len()], &map, 3 * d);
        let repeated = acc.iter().filter(|&&a| a > 1.5).count();
        assert_eq!(repeated, 30);
        assert!(acc.iter().all(|&a| a >= 1.0));
    }
}
