//! Link adaptation: quantized CSI (CQI, PMI, RI) computed from the estimated
//! channel and delivered to the transmitter through a pure-delay FIFO.
//!
//! CQI selection maps the per-subcarrier post-equalization SINRs to one
//! effective AWGN SNR (MIESM by default) and picks the largest of 15
//! modulation-and-rate combinations whose reference AWGN BLER stays below the
//! target. The reference curves are produced by this simulator itself and
//! cached to disk, keyed by a hash of the code configuration.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coding::{self, CodeConfig};
use crate::error::{Error, Result};
use crate::mimo;
use crate::modem::{self, QamSpec};
use crate::rng::SeedStream;

// ---------------------------------------------------------------------------
// Reports and FIFO
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub cqi: u8,
    pub pmi: usize,
    pub ri: usize,
}

impl Default for FeedbackReport {
    /// Start-up value used until the first computed report arrives.
    fn default() -> Self {
        FeedbackReport { cqi: 1, pmi: 1, ri: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SinrAveraging {
    #[default]
    Miesm,
    Eesm,
    Arithmetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    #[serde(default = "default_delay")]
    pub delay_frames: usize,
    #[serde(default)]
    pub sinr_averaging: SinrAveraging,
    #[serde(default = "default_bler_target")]
    pub bler_target: f64,
}

fn default_delay() -> usize {
    1
}

fn default_bler_target() -> f64 {
    0.1
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            delay_frames: default_delay(),
            sinr_averaging: SinrAveraging::default(),
            bler_target: default_bler_target(),
        }
    }
}

/// Pure processing delay: a report computed at frame t reaches the
/// transmitter at frame t + delay. The first `delay` pops return the default
/// (1, 1, 1) report.
#[derive(Clone, Debug)]
pub struct FeedbackFifo {
    queue: VecDeque<FeedbackReport>,
    delay: usize,
}

impl FeedbackFifo {
    pub fn new(delay_frames: usize) -> Self {
        FeedbackFifo {
            queue: (0..delay_frames).map(|_| FeedbackReport::default()).collect(),
            delay: delay_frames,
        }
    }

    /// Pushes this frame's report and returns the one the transmitter sees.
    pub fn advance(&mut self, new_report: FeedbackReport) -> FeedbackReport {
        if self.delay == 0 {
            return new_report;
        }
        self.queue.push_back(new_report);
        self.queue.pop_front().expect("FIFO pre-filled to its delay")
    }
}

// ---------------------------------------------------------------------------
// CQI table
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CqiEntry {
    pub qam_order: usize,
    /// Code rate as rate * 1024, the usual tabular form.
    pub rate_x1024: u32,
}

impl CqiEntry {
    pub fn code_rate(&self) -> f64 {
        self.rate_x1024 as f64 / 1024.0
    }
}

/// The 15 modulation-and-rate combinations selectable via CQI 1..=15.
pub const CQI_TABLE: [CqiEntry; 15] = [
    CqiEntry { qam_order: 4, rate_x1024: 78 },
    CqiEntry { qam_order: 4, rate_x1024: 120 },
    CqiEntry { qam_order: 4, rate_x1024: 193 },
    CqiEntry { qam_order: 4, rate_x1024: 308 },
    CqiEntry { qam_order: 4, rate_x1024: 449 },
    CqiEntry { qam_order: 4, rate_x1024: 602 },
    CqiEntry { qam_order: 16, rate_x1024: 378 },
    CqiEntry { qam_order: 16, rate_x1024: 490 },
    CqiEntry { qam_order: 16, rate_x1024: 616 },
    CqiEntry { qam_order: 64, rate_x1024: 466 },
    CqiEntry { qam_order: 64, rate_x1024: 567 },
    CqiEntry { qam_order: 64, rate_x1024: 666 },
    CqiEntry { qam_order: 64, rate_x1024: 772 },
    CqiEntry { qam_order: 64, rate_x1024: 873 },
    CqiEntry { qam_order: 64, rate_x1024: 948 },
];

pub fn cqi_entry(cqi: u8) -> CqiEntry {
    CQI_TABLE[(cqi.clamp(1, 15) - 1) as usize]
}

// ---------------------------------------------------------------------------
// BICM mutual information and effective SNR
// ---------------------------------------------------------------------------

/// Gauss-Hermite nodes and weights for weight e^{-t^2}, via the eigenvalues
/// of the Jacobi matrix.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n - 1 {
        let b = ((k + 1) as f64 / 2.0).sqrt();
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], PI.sqrt() * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// One sampled BICM mutual-information curve over an SNR grid in dB.
#[derive(Clone, Debug)]
pub struct MiCurve {
    snr_db: Vec<f64>,
    mi: Vec<f64>,
    bits: f64,
}

impl MiCurve {
    /// Bits of mutual information at the given symbol SNR.
    pub fn mi(&self, snr_db: f64) -> f64 {
        interp(&self.snr_db, &self.mi, snr_db)
    }

    /// Inverse map: SNR in dB achieving the given mutual information.
    pub fn snr_db_for(&self, mi: f64) -> f64 {
        let mi = mi.clamp(self.mi[0], *self.mi.last().unwrap());
        interp(&self.mi, &self.snr_db, mi)
    }

    pub fn max_bits(&self) -> f64 {
        self.bits
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let i = xs.partition_point(|&v| v < x).max(1);
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]).max(1e-300);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// BICM mutual information of Gray-labeled QAM at one symbol SNR, by
/// Gauss-Hermite quadrature over the complex noise.
fn bicm_mi_at(points: &[Complex64], snr_linear: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let m = (points.len() as f64).log2().round() as usize;
    let sigma2 = 1.0 / snr_linear;
    let sigma = sigma2.sqrt();
    let mut loss = 0.0;
    let mut metric = vec![0.0f64; points.len()];
    for (label, &x) in points.iter().enumerate() {
        for (j, &tj) in nodes.iter().enumerate() {
            for (k, &tk) in nodes.iter().enumerate() {
                let w = weights[j] * weights[k] / PI;
                let y = x + Complex64::new(tj, tk) * sigma;
                let mut dmin = f64::INFINITY;
                for (i, &p) in points.iter().enumerate() {
                    metric[i] = (y - p).norm_sqr() / sigma2;
                    dmin = dmin.min(metric[i]);
                }
                let mut total = 0.0;
                for v in &metric {
                    total += (-(v - dmin)).exp();
                }
                for b in 0..m {
                    let my_bit = label >> (m - 1 - b) & 1;
                    let mut same = 0.0;
                    for (i, v) in metric.iter().enumerate() {
                        if i >> (m - 1 - b) & 1 == my_bit {
                            same += (-(v - dmin)).exp();
                        }
                    }
                    loss += w * (total / same).log2();
                }
            }
        }
    }
    m as f64 - loss / points.len() as f64
}

/// Cached mutual-information curve per QAM order.
pub fn mi_curve(qam_order: usize) -> Result<Arc<MiCurve>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<MiCurve>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&qam_order) {
        return Ok(c.clone());
    }
    let spec = QamSpec::new(qam_order)?;
    let points = spec.points();
    let (nodes, weights) = gauss_hermite(10);
    let mut snr_db = Vec::new();
    let mut mi = Vec::new();
    let mut s = -15.0;
    while s <= 35.0 + 1e-9 {
        snr_db.push(s);
        mi.push(bicm_mi_at(&points, 10f64.powf(s / 10.0), &nodes, &weights));
        s += 0.5;
    }
    // The quadrature is monotone up to tiny numerical wiggles; enforce
    // monotonicity so the inverse map is well defined.
    for i in 1..mi.len() {
        if mi[i] < mi[i - 1] {
            mi[i] = mi[i - 1];
        }
    }
    let curve = Arc::new(MiCurve { snr_db, mi, bits: spec.bits_per_symbol() as f64 });
    cache.lock().unwrap().insert(qam_order, curve.clone());
    Ok(curve)
}

/// EESM sensitivity parameter per modulation (calibration default).
fn eesm_beta(qam_order: usize) -> f64 {
    match qam_order {
        4 => 1.57,
        16 => 4.57,
        64 => 9.5,
        _ => 16.0,
    }
}

/// Compresses per-subcarrier SINRs (linear) into one effective AWGN SNR
/// (linear) for the given modulation.
pub fn effective_snr(sinrs: &[f64], qam_order: usize, averaging: SinrAveraging) -> Result<f64> {
    if sinrs.is_empty() {
        return Err(Error::contract("effective SNR needs at least one SINR"));
    }
    if sinrs.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::contract("SINRs must be positive"));
    }
    match averaging {
        SinrAveraging::Arithmetic => Ok(sinrs.iter().sum::<f64>() / sinrs.len() as f64),
        SinrAveraging::Eesm => {
            let beta = eesm_beta(qam_order);
            let mean: f64 =
                sinrs.iter().map(|&s| (-s / beta).exp()).sum::<f64>() / sinrs.len() as f64;
            Ok(-beta * mean.max(1e-300).ln())
        }
        SinrAveraging::Miesm => {
            let curve = mi_curve(qam_order)?;
            let mean_mi: f64 = sinrs
                .iter()
                .map(|&s| curve.mi(10.0 * s.log10()))
                .sum::<f64>()
                / sinrs.len() as f64;
            Ok(10f64.powf(curve.snr_db_for(mean_mi) / 10.0))
        }
    }
}

/// Picks the largest CQI whose reference AWGN BLER at the effective SNR
/// stays at or below the target; CQI 1 is the floor.
pub fn compute_cqi(
    sinrs: &[f64],
    cfg: &FeedbackConfig,
    bler_at: impl Fn(u8, f64) -> f64,
) -> Result<u8> {
    for cqi in (2..=15u8).rev() {
        let entry = cqi_entry(cqi);
        let eff = effective_snr(sinrs, entry.qam_order, cfg.sinr_averaging)?;
        if bler_at(cqi, 10.0 * eff.log10()) <= cfg.bler_target {
            return Ok(cqi);
        }
    }
    Ok(1)
}

// ---------------------------------------------------------------------------
// PMI / RI selection
// ---------------------------------------------------------------------------

/// Sum log-det mutual information of precoder `w` over all subcarrier
/// channel matrices, with total power split evenly across layers.
fn sum_capacity(h_list: &[DMatrix<Complex64>], w: &DMatrix<Complex64>, noise_var: f64) -> f64 {
    let rank = w.ncols();
    let mut total = 0.0;
    for h in h_list {
        let hw = h * w;
        let mut g = hw.adjoint() * &hw;
        g.scale_mut(1.0 / (rank as f64 * noise_var));
        for k in 0..rank {
            g[(k, k)] += Complex64::new(1.0, 0.0);
        }
        total += g.determinant().norm().max(1e-300).log2();
    }
    total
}

/// Exhaustive search over all ranks and codebook entries for the pair
/// maximizing the sum mutual information across the scheduled subcarriers.
pub fn compute_pmi_ri(
    h_list: &[DMatrix<Complex64>],
    noise_var: f64,
    max_rank: usize,
) -> Result<(usize, usize)> {
    if h_list.is_empty() {
        return Err(Error::contract("PMI/RI search needs at least one channel sample"));
    }
    if !(noise_var > 0.0) {
        return Err(Error::contract("noise variance must be positive"));
    }
    let n_tx = h_list[0].ncols();
    let n_rx = h_list[0].nrows();
    let max_rank = max_rank.min(n_tx).min(n_rx).max(1);
    let mut best = (0usize, 1usize);
    let mut best_metric = f64::NEG_INFINITY;
    for rank in 1..=max_rank {
        for (pmi, w) in mimo::codebook(n_tx, rank)?.iter().enumerate() {
            let metric = sum_capacity(h_list, w, noise_var);
            if metric > best_metric + 1e-12 {
                best_metric = metric;
                best = (pmi, rank);
            }
        }
    }
    Ok(best)
}

/// Perfect channel knowledge perturbed by additive complex-Gaussian
/// estimation error of the given per-entry variance.
pub fn perturb_channel(
    h: &DMatrix<Complex64>,
    error_variance: f64,
    rng: &mut impl Rng,
) -> DMatrix<Complex64> {
    if error_variance <= 0.0 {
        return h.clone();
    }
    let s = (error_variance / 2.0).sqrt();
    DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| {
        h[(i, j)] + Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * s
    })
}

// ---------------------------------------------------------------------------
// AWGN BLER reference curves
// ---------------------------------------------------------------------------

/// One reference curve: BLER over an SNR grid in dB, linearly interpolated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlerTable {
    pub snr_db: Vec<f64>,
    pub bler: Vec<f64>,
}

impl BlerTable {
    pub fn lookup(&self, snr_db: f64) -> f64 {
        interp(&self.snr_db, &self.bler, snr_db)
    }
}

#[derive(Serialize, Deserialize)]
struct BlerFile {
    version: u32,
    key: u64,
    table: BlerTable,
}

const BLER_FILE_VERSION: u32 = 1;

fn bler_key(code: &CodeConfig, qam_order: usize) -> u64 {
    let mut h = std::hash::DefaultHasher::new();
    format!("{code:?}/{qam_order}").hash(&mut h);
    h.finish()
}

fn default_cache_dir() -> PathBuf {
    std::env::temp_dir().join("linksim-bler-cache")
}

/// Simulates one AWGN point: fraction of blocks failing the decoder.
fn simulate_bler_point(code: &CodeConfig, spec: &QamSpec, snr_db: f64, seed: u64) -> Result<f64> {
    let noise_var = 10f64.powf(-snr_db / 10.0);
    let max_frames = 200usize;
    let enough_errors = 40usize;
    let mut errors = 0usize;
    let mut frames = 0usize;
    let bits_per_symbol = spec.bits_per_symbol();
    let stream = SeedStream::root(seed).child("bler");
    while frames < max_frames && errors < enough_errors {
        let mut rng = stream.child_idx("frame", frames as u64).rng();
        let info: Vec<u8> = (0..code.info_length).map(|_| rng.gen_range(0..2u8)).collect();
        let block = coding::encode(&info, code)?;
        let mut bits = block.codeword_bits.clone();
        while bits.len() % bits_per_symbol != 0 {
            bits.push(0);
        }
        let symbols = modem::qam_map(&bits, spec)?;
        let noisy: Vec<Complex64> = symbols
            .iter()
            .map(|&s| {
                s + Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                    * (noise_var / 2.0).sqrt()
            })
            .collect();
        let mut llrs = modem::llr_demap(&noisy, noise_var, spec)?;
        llrs.truncate(block.codeword_bits.len());
        let decoded = coding::decode(&llrs, code)?;
        let ok = decoded.crc_pass && decoded.info_bits == info;
        if !ok {
            errors += 1;
        }
        frames += 1;
    }
    Ok(errors as f64 / frames as f64)
}

/// Returns the AWGN BLER reference for a code/modulation pair, generating and
/// caching it (in memory and on disk) on first use. Regeneration is
/// triggered automatically when the configuration hash changes.
pub fn awgn_bler_reference(
    code: &CodeConfig,
    qam_order: usize,
    cache_dir: Option<&Path>,
) -> Result<Arc<BlerTable>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<BlerTable>>>> = OnceLock::new();
    let key = bler_key(code, qam_order);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }

    let dir = cache_dir.map(Path::to_path_buf).unwrap_or_else(default_cache_dir);
    let path = dir.join(format!("bler-{key:016x}.json"));
    if let Ok(raw) = std::fs::read_to_string(&path) {
        if let Ok(file) = serde_json::from_str::<BlerFile>(&raw) {
            if file.version == BLER_FILE_VERSION && file.key == key {
                let t = Arc::new(file.table);
                cache.lock().unwrap().insert(key, t.clone());
                return Ok(t);
            }
        }
    }

    let spec = QamSpec::new(qam_order)?;
    let mut snr_db = Vec::new();
    let mut bler = Vec::new();
    let mut s = -10.0f64;
    let mut clean_points = 0;
    while s <= 30.0 + 1e-9 {
        let b = simulate_bler_point(code, &spec, s, key ^ s.to_bits())?;
        snr_db.push(s);
        bler.push(b);
        if b < 5e-3 {
            clean_points += 1;
            if clean_points >= 2 {
                break;
            }
        } else {
            clean_points = 0;
        }
        s += 1.0;
    }
    // Enforce a non-increasing curve so threshold lookups are stable.
    for i in (0..bler.len() - 1).rev() {
        if bler[i] < bler[i + 1] {
            bler[i] = bler[i + 1];
        }
    }
    let table = Arc::new(BlerTable { snr_db, bler });
    if std::fs::create_dir_all(&dir).is_ok() {
        let file = BlerFile { version: BLER_FILE_VERSION, key, table: (*table).clone() };
        let _ = std::fs::write(&path, serde_json::to_string(&file).expect("serializable"));
    }
    cache.lock().unwrap().insert(key, table.clone());
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{DecoderAlg, Scheme};
    use approx::assert_abs_diff_eq;

    #[test]
    fn fifo_defaults_then_delayed_reports() {
        let mut fifo = FeedbackFifo::new(2);
        let r = |c: u8| FeedbackReport { cqi: c, pmi: 0, ri: 1 };
        assert_eq!(fifo.advance(r(5)), FeedbackReport::default());
        assert_eq!(fifo.advance(r(6)), FeedbackReport::default());
        assert_eq!(fifo.advance(r(7)), r(5));
        assert_eq!(fifo.advance(r(8)), r(6));

        let mut zero = FeedbackFifo::new(0);
        assert_eq!(zero.advance(r(9)), r(9));
    }

    #[test]
    fn default_report_is_all_ones() {
        let d = FeedbackReport::default();
        assert_eq!((d.cqi, d.pmi, d.ri), (1, 1, 1));
    }

    #[test]
    fn cqi_table_shape() {
        assert_eq!(CQI_TABLE.len(), 15);
        // Rates increase within each modulation and spectral efficiency
        // increases overall.
        let eff: Vec<f64> = CQI_TABLE
            .iter()
            .map(|e| (e.qam_order as f64).log2() * e.code_rate())
            .collect();
        assert!(eff.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(cqi_entry(12).rate_x1024, 666);
        assert_eq!(cqi_entry(12).qam_order, 64);
    }

    #[test]
    fn mi_curves_are_monotone_and_saturate() {
        for order in [4usize, 16, 64] {
            let c = mi_curve(order).unwrap();
            let bits = (order as f64).log2();
            assert!(c.mi(-15.0) < 0.3);
            assert!(c.mi(35.0) > bits - 0.05, "order {order}: {}", c.mi(35.0));
            let mut prev = -1.0;
            let mut s = -15.0;
            while s <= 35.0 {
                let v = c.mi(s);
                assert!(v >= prev - 1e-12 && v <= bits + 1e-9);
                prev = v;
                s += 0.7;
            }
            // Inverse consistency in the live region.
            for target in [0.5, bits * 0.5, bits * 0.9] {
                let snr = c.snr_db_for(target);
                assert_abs_diff_eq!(c.mi(snr), target, epsilon = 0.02);
            }
        }
    }

    #[test]
    fn qpsk_mi_matches_awgn_reference_point() {
        // BICM Gray QPSK equals two BPSK channels; at 0 dB symbol SNR the
        // per-bit MI is about 0.486, so roughly 0.97 bits per symbol.
        let c = mi_curve(4).unwrap();
        assert_abs_diff_eq!(c.mi(0.0), 0.97, epsilon = 0.03);
    }

    #[test]
    fn flat_sinr_effective_snr_is_identity() {
        for avg in [SinrAveraging::Miesm, SinrAveraging::Eesm, SinrAveraging::Arithmetic] {
            let sinr = 10f64.powf(0.8);
            let eff = effective_snr(&[sinr; 12], 16, avg).unwrap();
            assert!(
                (10.0 * (eff / sinr).log10()).abs() < 0.15,
                "{avg:?}: eff {eff} vs {sinr}"
            );
        }
    }

    #[test]
    fn effective_snr_stays_between_extremes_and_below_mean() {
        let sinrs = [0.1, 1.0, 10.0, 100.0];
        for avg in [SinrAveraging::Miesm, SinrAveraging::Eesm] {
            let eff = effective_snr(&sinrs, 64, avg).unwrap();
            assert!(eff > 0.1 && eff < 100.0);
            // Effective-SNR compression penalizes dispersion relative to the
            // arithmetic mean.
            assert!(eff < sinrs.iter().sum::<f64>() / 4.0);
        }
        assert!(effective_snr(&[], 4, SinrAveraging::Miesm).is_err());
        assert!(effective_snr(&[0.0], 4, SinrAveraging::Miesm).is_err());
    }

    #[test]
    fn cqi_saturates_at_both_ends_and_is_monotone() {
        let cfg = FeedbackConfig::default();
        // Synthetic reference: each CQI needs ~2 dB more than the last.
        let bler = |cqi: u8, snr_db: f64| -> f64 {
            let threshold = -4.0 + 2.0 * cqi as f64;
            if snr_db >= threshold {
                0.01
            } else {
                0.9
            }
        };
        let high = compute_cqi(&[1e6; 4], &cfg, bler).unwrap();
        assert_eq!(high, 15);
        let low = compute_cqi(&[1e-6; 4], &cfg, bler).unwrap();
        assert_eq!(low, 1);
        let mut prev = 1;
        for snr_db in [-6.0f64, -2.0, 2.0, 6.0, 10.0, 14.0, 18.0, 22.0, 26.0] {
            let s = 10f64.powf(snr_db / 10.0);
            let q = compute_cqi(&[s; 4], &cfg, bler).unwrap();
            assert!(q >= prev, "CQI fell from {prev} to {q} at {snr_db} dB");
            prev = q;
        }
        assert_eq!(prev, 15);
    }

    #[test]
    fn pmi_ri_matches_exhaustive_oracle() {
        let mut rng = SeedStream::root(120).child("pmiri").rng();
        for trial in 0..20 {
            let h_list: Vec<DMatrix<Complex64>> = (0..3)
                .map(|_| {
                    DMatrix::from_fn(2, 2, |_, _| {
                        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                    })
                })
                .collect();
            let noise = 0.5;
            let got = compute_pmi_ri(&h_list, noise, 2).unwrap();
            // Independent brute force over the same search space.
            let mut best = (0usize, 1usize);
            let mut best_val = f64::NEG_INFINITY;
            for rank in 1..=2usize {
                for (pmi, w) in mimo::codebook(2, rank).unwrap().iter().enumerate() {
                    let mut val = 0.0;
                    for h in &h_list {
                        let hw = h * w;
                        let g = hw.adjoint() * &hw;
                        let m = DMatrix::<Complex64>::identity(rank, rank)
                            + g.scale(1.0 / (rank as f64 * noise));
                        val += m.determinant().norm().log2();
                    }
                    if val > best_val + 1e-12 {
                        best_val = val;
                        best = (pmi, rank);
                    }
                }
            }
            assert_eq!(got, best, "trial {trial}");
        }
    }

    #[test]
    fn aligned_rank_one_channel_selects_matching_precoder() {
        // Line-of-sight channel aligned with codebook entry 2 of the 2-tx
        // rank-1 set: the matched beamformer must win with rank 1.
        let w = &mimo::codebook(2, 1).unwrap()[2];
        let h = DMatrix::from_fn(2, 2, |i, j| Complex64::new(2.0, 0.0) * w[(j, 0)].conj() * if i == 0 { 1.0 } else { 0.5 });
        let (pmi, ri) = compute_pmi_ri(&[h], 0.1, 2).unwrap();
        assert_eq!(ri, 1);
        assert_eq!(pmi, 2);
    }

    #[test]
    fn pmi_ri_invariant_under_common_scaling() {
        let mut rng = SeedStream::root(121).child("scale").rng();
        for _ in 0..10 {
            let noise = 0.05;
            // At rank 1 the objective is monotone in the beamforming gain,
            // so the argmax over PMI is invariant to common positive scaling
            // of the channel. (Higher ranks trade trace against determinant
            // and may legitimately switch entries with the operating SNR.)
            for n_tx in [2usize, 4] {
                let rank = 1;
                let h = DMatrix::from_fn(2, n_tx, |_, _| {
                    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                });
                let pick = |h: &DMatrix<Complex64>| -> usize {
                    let cb = mimo::codebook(n_tx, rank).unwrap();
                    (0..cb.len())
                        .max_by(|&a, &b| {
                            sum_capacity(std::slice::from_ref(h), &cb[a], noise)
                                .partial_cmp(&sum_capacity(std::slice::from_ref(h), &cb[b], noise))
                                .unwrap()
                        })
                        .unwrap()
                };
                let scaled = h.scale(3.7);
                assert_eq!(pick(&h.clone()), pick(&scaled));
            }
        }
    }

    #[test]
    fn bler_reference_is_generated_cached_and_monotone() {
        let code = CodeConfig {
            scheme: Scheme::Convolutional,
            info_length: 40,
            crc_length: 8,
            code_rate: 1.0 / 3.0,
            decoder: DecoderAlg::MaxLogMap,
            iterations_or_list_size: 1,
            polar_design_snr_db: 0.0,
        };
        let dir = std::env::temp_dir().join("linksim-test-bler");
        let _ = std::fs::remove_dir_all(&dir);
        let t = awgn_bler_reference(&code, 4, Some(&dir)).unwrap();
        assert!(t.bler.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(t.bler[0] > 0.5, "low-SNR BLER {}", t.bler[0]);
        assert!(*t.bler.last().unwrap() < 0.05);
        // Interpolated lookup between and beyond grid points.
        assert!(t.lookup(-20.0) >= t.lookup(40.0));
        // The on-disk copy round-trips to the same curve.
        let key = bler_key(&code, 4);
        let path = dir.join(format!("bler-{key:016x}.json"));
        let raw = std::fs::read_to_string(path).unwrap();
        let file: BlerFile = serde_json::from_str(&raw).unwrap();
        assert_eq!(file.table.bler.len(), t.bler.len());
        for (a, b) in file.table.bler.iter().zip(&t.bler) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn perturbation_hook_adds_requested_error_power() {
        let mut rng = SeedStream::root(122).child("est").rng();
        let h = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert_eq!(perturb_channel(&h, 0.0, &mut rng), h);
        let var = 0.25;
        let n = 2000;
        let mut acc = 0.0;
        for _ in 0..n {
            let p = perturb_channel(&h, var, &mut rng);
            acc += (&p - &h).iter().map(|v| v.norm_sqr()).sum::<f64>() / 4.0;
        }
        let mean = acc / n as f64;
        assert!((mean / var - 1.0).abs() < 0.1, "error power {mean}");
    }
}
