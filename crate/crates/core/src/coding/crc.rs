//! Cyclic redundancy checks with the cellular generator polynomials.

use crate::error::{Error, Result};

/// Supported CRC lengths with their generator polynomials (MSB implied).
///
/// 8: x^8+x^7+x^4+x^3+x+1, 16: x^16+x^12+x^5+1, 24: the "A" 24-bit polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crc {
    pub length: usize,
    poly: u32,
}

impl Crc {
    pub fn new(length: usize) -> Result<Self> {
        let poly = match length {
            8 => 0x9B,
            16 => 0x1021,
            24 => 0x86_4CFB,
            _ => {
                return Err(Error::config(format!(
                    "unsupported CRC length {length} (use 8, 16 or 24)"
                )))
            }
        };
        Ok(Crc { length, poly })
    }

    /// Remainder of bit-by-bit polynomial division, zero-initialized.
    pub fn compute(&self, bits: &[u8]) -> Vec<u8> {
        let mut reg: u32 = 0;
        let top: u32 = 1 << (self.length - 1);
        let mask: u32 = if self.length == 32 {
            u32::MAX
        } else {
            (1 << self.length) - 1
        };
        for &b in bits {
            let fb = (reg & top != 0) ^ (b & 1 == 1);
            reg = (reg << 1) & mask;
            if fb {
                reg ^= self.poly;
            }
        }
        (0..self.length)
            .map(|i| ((reg >> (self.length - 1 - i)) & 1) as u8)
            .collect()
    }

    pub fn attach(&self, bits: &[u8]) -> Vec<u8> {
        let mut out = bits.to_vec();
        out.extend(self.compute(bits));
        out
    }

    /// True when the trailing `length` bits are a valid CRC of the rest.
    pub fn check(&self, bits_with_crc: &[u8]) -> bool {
        if bits_with_crc.len() < self.length {
            return false;
        }
        let (data, crc) = bits_with_crc.split_at(bits_with_crc.len() - self.length);
        self.compute(data) == crc
    }
}

/// Appends `crc_length` CRC bits to `bits`.
pub fn crc_attach(bits: &[u8], crc_length: usize) -> Result<Vec<u8>> {
    Ok(Crc::new(crc_length)?.attach(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent oracle: long division over GF(2) on an explicit bit vector.
    fn long_division(bits: &[u8], poly_bits: &[u8]) -> Vec<u8> {
        let crc_len = poly_bits.len() - 1;
        let mut v: Vec<u8> = bits.iter().copied().chain(std::iter::repeat(0).take(crc_len)).collect();
        for i in 0..bits.len() {
            if v[i] == 1 {
                for (j, &p) in poly_bits.iter().enumerate() {
                    v[i + j] ^= p;
                }
            }
        }
        v[bits.len()..].to_vec()
    }

    fn poly_bits(poly: u32, len: usize) -> Vec<u8> {
        let mut v = vec![1u8];
        for i in (0..len).rev() {
            v.push(((poly >> i) & 1) as u8);
        }
        v
    }

    #[test]
    fn spec_block_sizes() {
        let block = crc_attach(&vec![1u8; 48], 16).unwrap();
        assert_eq!(block.len(), 64);
        let crc = Crc::new(16).unwrap();
        assert!(crc.check(&block));
    }

    #[test]
    fn all_zero_input_gives_all_zero_crc() {
        for len in [8, 16, 24] {
            let out = crc_attach(&vec![0u8; 37], len).unwrap();
            assert!(out.iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn matches_long_division_oracle() {
        let mut rng = crate::rng::SeedStream::root(3).child("crc").rng();
        for (len, poly) in [(8usize, 0x9Bu32), (16, 0x1021), (24, 0x86_4CFB)] {
            let pb = poly_bits(poly, len);
            for _ in 0..50 {
                let bits: Vec<u8> = (0..48).map(|_| rng.gen_range(0..=1u8)).collect();
                let crc = Crc::new(len).unwrap().compute(&bits);
                assert_eq!(crc, long_division(&bits, &pb));
            }
        }
    }

    #[test]
    fn detects_single_bit_errors() {
        let crc = Crc::new(16).unwrap();
        let mut rng = crate::rng::SeedStream::root(4).child("crc-err").rng();
        let bits: Vec<u8> = (0..48).map(|_| rng.gen_range(0..=1u8)).collect();
        let block = crc.attach(&bits);
        for i in 0..block.len() {
            let mut bad = block.clone();
            bad[i] ^= 1;
            assert!(!crc.check(&bad));
        }
    }

    #[test]
    fn unsupported_length_is_config_error() {
        assert!(matches!(crc_attach(&[1, 0], 12), Err(crate::Error::Config(_))));
    }
}
