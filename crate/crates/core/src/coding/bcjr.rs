//! Log-domain BCJR (MAP) decoding over a generic binary-input trellis, with
//! the exact, linear-approximated and max-only variants of the max* kernel.

use crate::coding::DecoderAlg;

/// max*(a, b) = ln(e^a + e^b) and its approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxStar {
    Exact,
    Linear,
    Max,
}

impl MaxStar {
    pub fn from_decoder(alg: DecoderAlg) -> Self {
        match alg {
            DecoderAlg::LogMap => MaxStar::Exact,
            DecoderAlg::LinearLogMap => MaxStar::Linear,
            _ => MaxStar::Max,
        }
    }

    #[inline]
    pub fn eval(self, a: f64, b: f64) -> f64 {
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            return m;
        }
        let d = (a - b).abs();
        match self {
            MaxStar::Exact => m + (-d).exp().ln_1p(),
            // Piecewise-linear fit of ln(1 + e^-d).
            MaxStar::Linear => m + (0.6931 - 0.25 * d).max(0.0),
            MaxStar::Max => m,
        }
    }
}

/// A rate-1/k binary-input trellis. `next[s][b]` is the successor of state
/// `s` on input `b`; `output[s][b]` packs the k coded bits, LSB first.
#[derive(Debug, Clone)]
pub struct Trellis {
    pub n_states: usize,
    pub n_outputs: usize,
    pub next: Vec<[usize; 2]>,
    pub output: Vec<[u8; 2]>,
}

impl Trellis {
    /// Builds a feedforward (nonrecursive) convolutional trellis from octal
    /// generators with constraint length `k`.
    pub fn feedforward(generators: &[u32], constraint_len: usize) -> Trellis {
        let mem = constraint_len - 1;
        let n_states = 1 << mem;
        let mut next = vec![[0usize; 2]; n_states];
        let mut output = vec![[0u8; 2]; n_states];
        for s in 0..n_states {
            for b in 0..2usize {
                // Shift register holds newest bit in the MSB position.
                let reg = (b << mem) | s;
                let mut out = 0u8;
                for (i, &g) in generators.iter().enumerate() {
                    let taps = (reg as u32 & g).count_ones() & 1;
                    out |= (taps as u8) << i;
                }
                next[s][b] = reg >> 1;
                output[s][b] = out;
            }
        }
        Trellis {
            n_states,
            n_outputs: generators.len(),
            next,
            output,
        }
    }

    /// Builds a recursive systematic trellis (one parity output) from octal
    /// feedback and feedforward polynomials.
    pub fn recursive_systematic(feedback: u32, feedforward: u32, constraint_len: usize) -> Trellis {
        let mem = constraint_len - 1;
        let n_states = 1 << mem;
        let mut next = vec![[0usize; 2]; n_states];
        let mut output = vec![[0u8; 2]; n_states];
        for s in 0..n_states {
            for b in 0..2usize {
                // Feedback taps exclude the input position (MSB of the poly).
                let fb = ((s as u32) & feedback) .count_ones() & 1;
                let d = (b as u32) ^ fb;
                let reg = ((d as usize) << mem) | s;
                let parity = ((reg as u32) & feedforward).count_ones() & 1;
                next[s][b] = reg >> 1;
                output[s][b] = (b as u8) | ((parity as u8) << 1);
            }
        }
        Trellis {
            n_states,
            n_outputs: 2,
            next,
            output,
        }
    }

    /// The input bit that drives state `s` to zero eventually (for recursive
    /// encoders, termination feeds the feedback value so the register drains).
    pub fn terminating_input(&self, s: usize) -> usize {
        // For an RSC trellis, input = feedback parity empties the register;
        // equivalently pick the input whose successor is the smaller state.
        if self.next[s][0] <= self.next[s][1] {
            0
        } else {
            1
        }
    }
}

/// Soft-in soft-out BCJR pass.
///
/// `branch_llrs[t][j]` is the channel LLR of output stream `j` at step `t`
/// (0.0 for punctured positions); `a_priori[t]` is the prior LLR on the input
/// bit. Returns the a-posteriori LLRs of the input bits. The trellis is
/// assumed to start in state 0 and, when `terminated`, to end in state 0.
pub fn bcjr(
    trellis: &Trellis,
    branch_llrs: &[Vec<f64>],
    a_priori: &[f64],
    terminated: bool,
    maxstar: MaxStar,
) -> Vec<f64> {
    let t_len = branch_llrs.len();
    let ns = trellis.n_states;
    let neg = f64::NEG_INFINITY;

    // gamma[t][s][b]
    let mut gamma = vec![[[0.0f64; 2]; 64]; 0];
    gamma.reserve(t_len);
    for t in 0..t_len {
        let mut g = [[0.0f64; 2]; 64];
        for s in 0..ns {
            for b in 0..2 {
                let out = trellis.output[s][b];
                let mut m = 0.0;
                for (j, &l) in branch_llrs[t].iter().enumerate() {
                    // +L/2 for bit 0, -L/2 for bit 1
                    let bit = out >> j & 1;
                    m += if bit == 0 { 0.5 * l } else { -0.5 * l };
                }
                let ap = a_priori.get(t).copied().unwrap_or(0.0);
                m += if b == 0 { 0.5 * ap } else { -0.5 * ap };
                g[s][b] = m;
            }
        }
        gamma.push(g);
    }

    let mut alpha = vec![vec![neg; ns]; t_len + 1];
    alpha[0][0] = 0.0;
    for t in 0..t_len {
        for s in 0..ns {
            let a = alpha[t][s];
            if a == neg {
                continue;
            }
            for b in 0..2 {
                let nsx = trellis.next[s][b];
                let v = a + gamma[t][s][b];
                alpha[t + 1][nsx] = maxstar.eval(alpha[t + 1][nsx], v);
            }
        }
    }

    let mut beta = vec![vec![neg; ns]; t_len + 1];
    if terminated {
        beta[t_len][0] = 0.0;
    } else {
        beta[t_len].iter_mut().for_each(|v| *v = 0.0);
    }
    for t in (0..t_len).rev() {
        for s in 0..ns {
            let mut acc = neg;
            for b in 0..2 {
                let v = beta[t + 1][trellis.next[s][b]] + gamma[t][s][b];
                acc = maxstar.eval(acc, v);
            }
            beta[t][s] = acc;
        }
    }

    let mut post = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut m0 = neg;
        let mut m1 = neg;
        for s in 0..ns {
            let a = alpha[t][s];
            if a == neg {
                continue;
            }
            let v0 = a + gamma[t][s][0] + beta[t + 1][trellis.next[s][0]];
            let v1 = a + gamma[t][s][1] + beta[t + 1][trellis.next[s][1]];
            m0 = maxstar.eval(m0, v0);
            m1 = maxstar.eval(m1, v1);
        }
        post.push(m0 - m1);
    }
    post
}
