//! Multi-link plumbing: resolving the node/link graph of a scenario, summing
//! co-channel signals at each receiver, and power-domain superposition of a
//! near/far user pair with the matching composite demappers.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::modem::QamSpec;
use crate::scenario::Scenario;

/// Fixed (near, far) power splits selectable by `power_ratio_index`. The far
/// (cell-edge) user always gets the dominant share.
pub const MUST_RATIOS: [(f64, f64); 3] = [(0.2, 0.8), (0.1, 0.9), (0.05, 0.95)];

// ---------------------------------------------------------------------------
// Graph resolution
// ---------------------------------------------------------------------------

/// Index view of a scenario's node/link graph.
#[derive(Clone, Debug)]
pub struct Topology {
    pub node_index: HashMap<String, usize>,
    pub link_index: HashMap<String, usize>,
    /// Links arriving at each receiving node, by node index.
    pub links_at_rx: Vec<Vec<usize>>,
    /// For each link, the link index of its NOMA far companion (if any).
    pub far_companion: Vec<Option<usize>>,
    /// Links that are some other link's far companion; they ride on the near
    /// link's transmission instead of producing one of their own.
    pub is_far_companion: Vec<bool>,
}

impl Topology {
    pub fn build(scenario: &Scenario) -> Result<Topology> {
        let node_index: HashMap<String, usize> = scenario
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let link_index: HashMap<String, usize> = scenario
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let mut links_at_rx = vec![Vec::new(); scenario.nodes.len()];
        let mut far_companion = vec![None; scenario.links.len()];
        let mut is_far_companion = vec![false; scenario.links.len()];
        for (i, l) in scenario.links.iter().enumerate() {
            links_at_rx[node_index[&l.rx]].push(i);
            if let Some(noma) = &l.noma {
                let far = *link_index
                    .get(&noma.far_link)
                    .ok_or_else(|| Error::config(format!("unknown far link `{}`", noma.far_link)))?;
                far_companion[i] = Some(far);
                is_far_companion[far] = true;
            }
        }
        for (i, l) in scenario.links.iter().enumerate() {
            if is_far_companion[i] && l.noma.is_some() {
                return Err(Error::config(format!(
                    "link `{}` cannot be both a near and a far NOMA user",
                    l.id
                )));
            }
        }
        Ok(Topology {
            node_index,
            link_index,
            links_at_rx,
            far_companion,
            is_far_companion,
        })
    }
}

// ---------------------------------------------------------------------------
// Signal composition
// ---------------------------------------------------------------------------

/// Sums co-channel signals of possibly different lengths (frames align at
/// their start; shorter signals are zero-padded) and adds circularly
/// symmetric white Gaussian noise of per-sample variance `noise_var`.
pub fn compose(signals: &[&[Complex64]], noise_var: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    let len = signals.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for s in signals {
        for (o, &v) in out.iter_mut().zip(s.iter()) {
            *o += v;
        }
    }
    if noise_var > 0.0 {
        let s = (noise_var / 2.0).sqrt();
        for o in &mut out {
            *o += Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * s;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Power-domain superposition
// ---------------------------------------------------------------------------

/// Superposes the near and far users' unit-power symbols with amplitude
/// weights sqrt(alpha): total mean power stays 1.
pub fn must_superpose(
    near: &[Complex64],
    far: &[Complex64],
    alpha_near: f64,
    alpha_far: f64,
) -> Result<Vec<Complex64>> {
    if near.len() != far.len() {
        return Err(Error::contract("superposed streams must share a length"));
    }
    let (an, af) = (alpha_near.sqrt(), alpha_far.sqrt());
    Ok(near
        .iter()
        .zip(far)
        .map(|(&n, &f)| an * n + af * f)
        .collect())
}

/// Max-log LLRs for the near user's bits from equalized composite symbols
/// `z = sqrt(a_n) s_n + sqrt(a_f) s_f + v`, jointly enumerating both
/// constellations so the far signal is detected rather than absorbed as
/// noise.
pub fn composite_near_llrs(
    soft: &[Complex64],
    noise_vars: &[f64],
    near: &QamSpec,
    far: &QamSpec,
    alpha_near: f64,
    alpha_far: f64,
) -> Result<Vec<f64>> {
    if soft.len() != noise_vars.len() {
        return Err(Error::contract("symbol and noise-variance lengths differ"));
    }
    let (an, af) = (alpha_near.sqrt(), alpha_far.sqrt());
    let near_points = near.points();
    let far_points = far.points();
    let bits = near.bits_per_symbol();
    let mut llrs = Vec::with_capacity(soft.len() * bits);
    for (&z, &var) in soft.iter().zip(noise_vars) {
        if !(var > 0.0) {
            return Err(Error::contract("noise variance must be positive"));
        }
        let mut d0 = vec![f64::INFINITY; bits];
        let mut d1 = vec![f64::INFINITY; bits];
        for (label, &sn) in near_points.iter().enumerate() {
            // Only the nearest far candidate matters under max-log.
            let mut d = f64::INFINITY;
            for &sf in &far_points {
                d = d.min((z - an * sn - af * sf).norm_sqr());
            }
            for (b, (l0, l1)) in d0.iter_mut().zip(&mut d1).enumerate() {
                if label >> (bits - 1 - b) & 1 == 0 {
                    *l0 = l0.min(d);
                } else {
                    *l1 = l1.min(d);
                }
            }
        }
        for b in 0..bits {
            llrs.push((d1[b] - d0[b]) / var);
        }
    }
    Ok(llrs)
}

/// LLRs for the far user, which treats the near user's share as additional
/// noise: the composite symbol is rescaled to a unit far constellation and
/// the near power folded into the effective variance.
pub fn far_llrs(
    soft: &[Complex64],
    noise_vars: &[f64],
    far: &QamSpec,
    alpha_near: f64,
    alpha_far: f64,
) -> Result<Vec<f64>> {
    if !(alpha_far > 0.0) {
        return Err(Error::contract("far power share must be positive"));
    }
    let scale = 1.0 / alpha_far.sqrt();
    let scaled: Vec<Complex64> = soft.iter().map(|&z| z * scale).collect();
    let vars: Vec<f64> = noise_vars
        .iter()
        .map(|&v| (v + alpha_near) / alpha_far)
        .collect();
    crate::modem::llr_demap_per_symbol(&scaled, &vars, far)
}

/// Removes a decoded far-user contribution from the composite symbols
/// (successive interference cancellation at the near receiver).
pub fn cancel_far(soft: &mut [Complex64], far_symbols: &[Complex64], alpha_far: f64) {
    let af = alpha_far.sqrt();
    for (z, &sf) in soft.iter_mut().zip(far_symbols) {
        *z -= af * sf;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem;
    use crate::rng::SeedStream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn ratios_sum_to_one_and_favor_the_far_user() {
        for (near, far) in MUST_RATIOS {
            assert_abs_diff_eq!(near + far, 1.0, epsilon = 1e-12);
            assert!(far > near);
        }
    }

    #[test]
    fn superposition_preserves_mean_power() {
        let mut rng = SeedStream::root(5).child("must").rng();
        let spec = QamSpec::new(4).unwrap();
        let points = spec.points();
        let n = 4096;
        let near: Vec<Complex64> = (0..n).map(|_| points[rng.gen_range(0..4)]).collect();
        let far: Vec<Complex64> = (0..n).map(|_| points[rng.gen_range(0..4)]).collect();
        let sup = must_superpose(&near, &far, 0.2, 0.8).unwrap();
        let p: f64 = sup.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(p, 1.0, epsilon = 0.05);
    }

    #[test]
    fn noiseless_composite_roundtrip_for_both_users() {
        // Every (near, far) symbol pair must be recovered exactly from the
        // clean composite: the near user via the joint demapper, the far user
        // via its noise-absorbing demapper (the split is large enough that
        // near interference never flips a far decision).
        let near_spec = QamSpec::new(16).unwrap();
        let far_spec = QamSpec::new(4).unwrap();
        let (alpha_near, alpha_far) = MUST_RATIOS[1];
        let mut near_bits = Vec::new();
        let mut far_bits = Vec::new();
        for ln in 0..16usize {
            for lf in 0..4usize {
                for b in 0..4 {
                    near_bits.push((ln >> (3 - b) & 1) as u8);
                }
                for b in 0..2 {
                    far_bits.push((lf >> (1 - b) & 1) as u8);
                }
            }
        }
        let near = modem::qam_map(&near_bits, &near_spec).unwrap();
        let far = modem::qam_map(&far_bits, &far_spec).unwrap();
        let sup = must_superpose(&near, &far, alpha_near, alpha_far).unwrap();
        let vars = vec![1e-4; sup.len()];
        let ln = composite_near_llrs(&sup, &vars, &near_spec, &far_spec, alpha_near, alpha_far)
            .unwrap();
        assert_eq!(modem::harden(&ln), near_bits);
        let lf = far_llrs(&sup, &vars, &far_spec, alpha_near, alpha_far).unwrap();
        assert_eq!(modem::harden(&lf), far_bits);
    }

    #[test]
    fn sic_cancellation_leaves_the_near_signal() {
        let near_spec = QamSpec::new(64).unwrap();
        let far_spec = QamSpec::new(4).unwrap();
        let mut rng = SeedStream::root(9).child("sic").rng();
        let near: Vec<Complex64> = (0..256)
            .map(|_| near_spec.points()[rng.gen_range(0..64)])
            .collect();
        let far: Vec<Complex64> = (0..256)
            .map(|_| far_spec.points()[rng.gen_range(0..4)])
            .collect();
        let (alpha_near, alpha_far) = MUST_RATIOS[2];
        let mut sup = must_superpose(&near, &far, alpha_near, alpha_far).unwrap();
        cancel_far(&mut sup, &far, alpha_far);
        for (z, &n) in sup.iter().zip(&near) {
            assert_abs_diff_eq!((z - alpha_near.sqrt() * n).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_pads_and_adds_calibrated_noise() {
        let a = vec![Complex64::new(1.0, 0.0); 8];
        let b = vec![Complex64::new(0.0, 1.0); 4];
        let mut rng = SeedStream::root(1).child("compose").rng();
        let clean = compose(&[&a, &b], 0.0, &mut rng);
        assert_eq!(clean.len(), 8);
        assert_eq!(clean[0], Complex64::new(1.0, 1.0));
        assert_eq!(clean[6], Complex64::new(1.0, 0.0));

        let zeros = vec![Complex64::new(0.0, 0.0); 100_000];
        let noisy = compose(&[&zeros], 2.0, &mut rng);
        let p: f64 = noisy.iter().map(|s| s.norm_sqr()).sum::<f64>() / noisy.len() as f64;
        assert_abs_diff_eq!(p, 2.0, epsilon = 0.05);
    }
}
