//! Small-scale fading emulation at sample granularity: tapped-delay-line
//! frequency selectivity, Jakes or uniform Doppler time selectivity, TWDP
//! fading for time-invariant channels, and Kronecker spatial correlation.
//!
//! A [`ChannelProcess`] owns the random draws (sinusoid banks, static gains)
//! for one link; [`ChannelProcess::realize`] evaluates it over a sample range
//! into a [`ChannelRealization`], so consecutive frames can either continue
//! the same process (time-correlated fading) or draw a fresh one.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

fn config(msg: impl Into<String>) -> Error {
    Error::config(msg)
}

fn contract(msg: impl Into<String>) -> Error {
    Error::contract(msg)
}

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Number of sinusoids in the sum-of-sinusoids Doppler generators.
pub const N_SINUSOIDS: usize = 32;

/// Maximum Doppler shift for a terminal moving at `velocity_mps` with carrier
/// `carrier_hz`.
pub fn max_doppler_hz(velocity_mps: f64, carrier_hz: f64) -> f64 {
    velocity_mps * carrier_hz / SPEED_OF_LIGHT
}

// ---------------------------------------------------------------------------
// Power delay profiles
// ---------------------------------------------------------------------------

/// Named tapped-delay-line profiles. The TDL variants are normalized profiles
/// that scale with an RMS delay spread; the rest carry absolute delays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdpModel {
    Flat,
    PedA,
    PedB,
    VehA,
    TdlA,
    TdlB,
    TdlC,
    Epa,
    Eva,
    Custom,
}

/// (delay seconds, linear power) pairs, normalized to unit total power.
#[derive(Clone, Debug)]
pub struct PowerDelayProfile {
    pub taps: Vec<(f64, f64)>,
}

/// TDL-A normalized delays and powers (dB).
const TDL_A: [(f64, f64); 23] = [
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
    (2.1718, -12.4),
    (2.4942, -15.2),
    (2.5119, -10.8),
    (3.0582, -11.3),
    (4.0810, -12.7),
    (4.4579, -16.2),
    (4.5695, -18.3),
    (4.7966, -18.9),
    (5.0066, -16.6),
    (5.3043, -19.9),
    (9.6586, -29.7),
];

const TDL_B: [(f64, f64); 23] = [
    (0.0000, 0.0),
    (0.1072, -2.2),
    (0.2155, -4.0),
    (0.2095, -3.2),
    (0.2870, -9.8),
    (0.2986, -1.2),
    (0.3752, -3.4),
    (0.5055, -5.2),
    (0.3681, -7.6),
    (0.3697, -3.0),
    (0.5700, -8.9),
    (0.5283, -9.0),
    (1.1021, -4.8),
    (1.2756, -5.7),
    (1.5474, -7.5),
    (1.7842, -1.9),
    (2.0169, -7.6),
    (2.8294, -12.2),
    (3.0219, -9.8),
    (3.6187, -11.4),
    (4.1067, -14.9),
    (4.2790, -9.2),
    (4.7834, -11.3),
];

const TDL_C: [(f64, f64); 24] = [
    (0.0000, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

/// Absolute-delay profiles: (delay ns, power dB).
const PED_A: [(f64, f64); 4] = [(0.0, 0.0), (110.0, -9.7), (190.0, -19.2), (410.0, -22.8)];
const PED_B: [(f64, f64); 6] = [
    (0.0, 0.0),
    (200.0, -0.9),
    (800.0, -4.9),
    (1200.0, -8.0),
    (2300.0, -7.8),
    (3700.0, -23.9),
];
const VEH_A: [(f64, f64); 6] = [
    (0.0, 0.0),
    (310.0, -1.0),
    (710.0, -9.0),
    (1090.0, -10.0),
    (1730.0, -15.0),
    (2510.0, -20.0),
];
const EPA: [(f64, f64); 7] = [
    (0.0, 0.0),
    (30.0, -1.0),
    (70.0, -2.0),
    (90.0, -3.0),
    (110.0, -8.0),
    (190.0, -17.2),
    (410.0, -20.8),
];
const EVA: [(f64, f64); 9] = [
    (0.0, 0.0),
    (30.0, -1.5),
    (150.0, -1.4),
    (310.0, -3.6),
    (370.0, -0.6),
    (710.0, -9.1),
    (1090.0, -7.0),
    (1730.0, -12.0),
    (2510.0, -16.9),
];

impl PowerDelayProfile {
    fn normalized(mut taps: Vec<(f64, f64)>) -> Self {
        taps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = taps.iter().map(|t| t.1).sum();
        for t in &mut taps {
            t.1 /= total;
        }
        Self { taps }
    }

    /// Builds a profile from a named model. TDL variants require an RMS delay
    /// spread; the fixed profiles reject one; `Custom` must use
    /// [`PowerDelayProfile::from_pairs`].
    pub fn from_model(model: PdpModel, rms_delay_spread_s: Option<f64>) -> Result<Self> {
        let scaled = |table: &[(f64, f64)]| -> Result<Self> {
            let tau = rms_delay_spread_s
                .ok_or_else(|| config(format!("{model:?} needs an RMS delay spread")))?;
            if tau <= 0.0 {
                return Err(config("RMS delay spread must be positive"));
            }
            Ok(Self::normalized(
                table
                    .iter()
                    .map(|&(d, p)| (d * tau, 10f64.powf(p / 10.0)))
                    .collect(),
            ))
        };
        let fixed = |table: &[(f64, f64)]| -> Result<Self> {
            if rms_delay_spread_s.is_some() {
                return Err(config(format!("{model:?} has fixed delays; drop the delay spread")));
            }
            Ok(Self::normalized(
                table
                    .iter()
                    .map(|&(d, p)| (d * 1e-9, 10f64.powf(p / 10.0)))
                    .collect(),
            ))
        };
        match model {
            PdpModel::Flat => Ok(Self { taps: vec![(0.0, 1.0)] }),
            PdpModel::TdlA => scaled(&TDL_A),
            PdpModel::TdlB => scaled(&TDL_B),
            PdpModel::TdlC => scaled(&TDL_C),
            PdpModel::PedA => fixed(&PED_A),
            PdpModel::PedB => fixed(&PED_B),
            PdpModel::VehA => fixed(&VEH_A),
            PdpModel::Epa => fixed(&EPA),
            PdpModel::Eva => fixed(&EVA),
            PdpModel::Custom => Err(config("custom profile needs explicit taps")),
        }
    }

    /// Custom profile from (delay ns, power dB) pairs.
    pub fn from_pairs(pairs_ns_db: &[(f64, f64)]) -> Result<Self> {
        if pairs_ns_db.is_empty() {
            return Err(config("custom profile needs at least one tap"));
        }
        if pairs_ns_db.iter().any(|p| p.0 < 0.0) {
            return Err(config("tap delays must be non-negative"));
        }
        Ok(Self::normalized(
            pairs_ns_db
                .iter()
                .map(|&(d, p)| (d * 1e-9, 10f64.powf(p / 10.0)))
                .collect(),
        ))
    }

    /// Quantizes delays to the sampling grid by rounding and merges taps that
    /// land on the same sample by power addition.
    pub fn quantize(&self, sampling_rate: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(delay, power) in &self.taps {
            let d = (delay * sampling_rate).round() as usize;
            match out.iter_mut().find(|t| t.0 == d) {
                Some(t) => t.1 += power,
                None => out.push((d, power)),
            }
        }
        out.sort_by_key(|t| t.0);
        out
    }
}

// ---------------------------------------------------------------------------
// Doppler and TWDP models
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DopplerSpectrum {
    Jakes,
    Uniform,
    #[default]
    None,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DopplerModel {
    pub spectrum: DopplerSpectrum,
    pub max_doppler_hz: f64,
    pub correlated_across_frames: bool,
}

impl DopplerModel {
    /// Block fading: one independent draw per frame.
    pub fn block_fading() -> Self {
        Self { spectrum: DopplerSpectrum::None, max_doppler_hz: 0.0, correlated_across_frames: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_doppler_hz >= 0.0) {
            return Err(config("max Doppler must be non-negative"));
        }
        Ok(())
    }
}

/// Two-wave-with-diffuse-power fading: two equal-phase-probability specular
/// waves plus a complex-Gaussian diffuse part. `k_factor` is the specular to
/// diffuse power ratio (may be infinite); `delta` the peak-to-average ratio
/// of the specular pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TwdpParams {
    pub k_factor: f64,
    pub delta: f64,
}

impl TwdpParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_factor < 0.0 || self.k_factor.is_nan() {
            return Err(config("TWDP K-factor must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(config("TWDP delta must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Specular amplitudes (V1, V2) and diffuse per-component variance sigma^2
    /// for unit mean power V1^2 + V2^2 + 2 sigma^2 = 1.
    fn components(&self) -> (f64, f64, f64) {
        let specular = if self.k_factor.is_infinite() {
            1.0
        } else {
            self.k_factor / (self.k_factor + 1.0)
        };
        let diffuse_var = (1.0 - specular) / 2.0;
        let root = (1.0 - self.delta * self.delta).max(0.0).sqrt();
        let v1 = (specular * (1.0 + root) / 2.0).sqrt();
        let v2 = (specular * (1.0 - root) / 2.0).sqrt();
        (v1, v2, diffuse_var)
    }

    fn sample(&self, rng: &mut impl Rng) -> Complex64 {
        let (v1, v2, var) = self.components();
        let p1 = rng.gen_range(-PI..PI);
        let p2 = rng.gen_range(-PI..PI);
        let mut v = Complex64::from_polar(v1, p1) + Complex64::from_polar(v2, p2);
        if var > 0.0 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v += Complex64::new(re, im) * var.sqrt();
        }
        v
    }
}

/// Envelope samples |specular pair + diffuse| with unit mean power.
pub fn twdp_envelope(params: &TwdpParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedStream::root(seed).child("twdp").rng();
    (0..n).map(|_| params.sample(&mut rng).norm()).collect()
}

// ---------------------------------------------------------------------------
// Spatial correlation
// ---------------------------------------------------------------------------

/// Exponential correlation matrix with unit diagonal: R[i][j] = rho^|i-j|.
pub fn exponential_correlation(n: usize, rho: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(rho.powi((i as i32 - j as i32).abs()), 0.0)
    })
}

/// Hermitian square root via Cholesky, falling back to the eigendecomposition
/// for semidefinite inputs. Rejects matrices that are not PSD with unit
/// diagonal.
fn matrix_sqrt(r: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(config("correlation matrix must be square"));
    }
    for i in 0..n {
        if (r[(i, i)] - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
            return Err(config("correlation matrix must have unit diagonal"));
        }
        for j in 0..n {
            if (r[(i, j)] - r[(j, i)].conj()).norm() > 1e-9 {
                return Err(config("correlation matrix must be Hermitian"));
            }
        }
    }
    // Hermitian square root via the eigendecomposition: unlike Cholesky this
    // detects indefinite inputs (a complex Cholesky would happily take square
    // roots of negative pivots) and handles the semidefinite boundary.
    let eig = nalgebra::SymmetricEigen::new(r.clone());
    let mut root = DMatrix::zeros(n, n);
    for (k, &w) in eig.eigenvalues.iter().enumerate() {
        if w < -1e-9 {
            return Err(config("correlation matrix is not positive semidefinite"));
        }
        let s = w.max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                root[(i, j)] += v[i] * v[j].conj() * s;
            }
        }
    }
    Ok(root)
}

// ---------------------------------------------------------------------------
// Channel process and realization
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ChannelSpec {
    pub pdp: PowerDelayProfile,
    pub doppler: DopplerModel,
    pub twdp: Option<TwdpParams>,
    pub corr: Option<(DMatrix<Complex64>, DMatrix<Complex64>)>,
    pub n_rx: usize,
    pub n_tx: usize,
    pub sampling_rate: f64,
    pub pathloss_db: f64,
}

/// One sum-of-sinusoids generator: (angular frequency rad/sample, phase).
#[derive(Clone, Debug)]
struct SinusoidBank {
    comps: Vec<(f64, f64)>,
}

impl SinusoidBank {
    /// Accumulates sqrt(1/M) * sum cos(w t + phi) over t = t0 .. t0 + n into
    /// `out`, via a per-component phasor recurrence.
    fn add_cosines(&self, t0: u64, out: &mut [f64]) {
        let scale = (1.0 / self.comps.len() as f64).sqrt();
        for &(w, phi) in &self.comps {
            let mut p = Complex64::from_polar(1.0, w * t0 as f64 + phi);
            let rot = Complex64::from_polar(1.0, w);
            for o in out.iter_mut() {
                *o += scale * p.re;
                p *= rot;
            }
        }
    }

    /// As above but with complex exponentials, for the uniform spectrum.
    fn add_phasors(&self, t0: u64, out: &mut [Complex64]) {
        let scale = (1.0 / self.comps.len() as f64).sqrt();
        for &(w, phi) in &self.comps {
            let mut p = Complex64::from_polar(scale, w * t0 as f64 + phi);
            let rot = Complex64::from_polar(1.0, w);
            for o in out.iter_mut() {
                *o += p;
                p *= rot;
            }
        }
    }
}

/// Per-(tap, rx, tx) fading generator.
#[derive(Clone, Debug)]
enum TapProcess {
    /// Sum-of-sinusoids with the classical U-shaped spectrum: independent
    /// banks for the in-phase and quadrature parts, arrival angles spread by
    /// a random rotation so each draw is a distinct realization.
    Jakes { i: SinusoidBank, q: SinusoidBank },
    /// Complex sinusoids with frequencies uniform on [-f_D, f_D].
    Uniform(SinusoidBank),
    /// Time-invariant gain (block fading or TWDP).
    Static(Complex64),
}

#[derive(Clone, Debug)]
pub struct ChannelProcess {
    delays: Vec<usize>,
    /// Per-tap amplitude sqrt(power * 10^(-PL/10)).
    amps: Vec<f64>,
    /// Tap-major, then rx, then tx.
    taps: Vec<TapProcess>,
    sqrt_rtx: Option<DMatrix<Complex64>>,
    sqrt_rrx: Option<DMatrix<Complex64>>,
    pub n_rx: usize,
    pub n_tx: usize,
    pub sampling_rate: f64,
    pub pathloss_db: f64,
}

impl ChannelProcess {
    pub fn new(spec: &ChannelSpec, seed: u64) -> Result<Self> {
        spec.doppler.validate()?;
        if let Some(t) = &spec.twdp {
            t.validate()?;
            if spec.doppler.spectrum != DopplerSpectrum::None {
                return Err(config("TWDP fading requires a time-invariant channel"));
            }
        }
        if spec.n_rx == 0 || spec.n_tx == 0 || spec.sampling_rate <= 0.0 {
            return Err(config("channel needs antennas and a positive sampling rate"));
        }
        let (sqrt_rtx, sqrt_rrx) = match &spec.corr {
            Some((rtx, rrx)) => {
                if rtx.nrows() != spec.n_tx || rrx.nrows() != spec.n_rx {
                    return Err(config("correlation matrix sizes must match antenna counts"));
                }
                (Some(matrix_sqrt(rtx)?), Some(matrix_sqrt(rrx)?))
            }
            None => (None, None),
        };

        let quantized = spec.pdp.quantize(spec.sampling_rate);
        let gain = 10f64.powf(-spec.pathloss_db / 10.0);
        let fd = 2.0 * PI * spec.doppler.max_doppler_hz / spec.sampling_rate;
        let stream = SeedStream::root(seed).child("channel");
        let mut taps = Vec::with_capacity(quantized.len() * spec.n_rx * spec.n_tx);
        for (ti, _) in quantized.iter().enumerate() {
            for r in 0..spec.n_rx {
                for t in 0..spec.n_tx {
                    let mut rng = stream
                        .child_idx("tap", ti as u64)
                        .child_idx("pair", (r * spec.n_tx + t) as u64)
                        .rng();
                    taps.push(match spec.doppler.spectrum {
                        DopplerSpectrum::Jakes => {
                            // Arrival angles alpha_m = (2 pi m - pi + theta) / 4M
                            // with a random rotation theta; the I branch rides
                            // cos(alpha), the Q branch sin(alpha), each with its
                            // own uniform phase.
                            let theta = rng.gen_range(-PI..PI);
                            let m = N_SINUSOIDS;
                            let mut i_comps = Vec::with_capacity(m);
                            let mut q_comps = Vec::with_capacity(m);
                            for k in 1..=m {
                                let alpha =
                                    (2.0 * PI * k as f64 - PI + theta) / (4.0 * m as f64);
                                i_comps.push((fd * alpha.cos(), rng.gen_range(-PI..PI)));
                                q_comps.push((fd * alpha.sin(), rng.gen_range(-PI..PI)));
                            }
                            TapProcess::Jakes {
                                i: SinusoidBank { comps: i_comps },
                                q: SinusoidBank { comps: q_comps },
                            }
                        }
                        DopplerSpectrum::Uniform => {
                            let comps = (0..N_SINUSOIDS)
                                .map(|_| (rng.gen_range(-fd..=fd), rng.gen_range(-PI..PI)))
                                .collect();
                            TapProcess::Uniform(SinusoidBank { comps })
                        }
                        DopplerSpectrum::None => {
                            let g = match &spec.twdp {
                                Some(p) => p.sample(&mut rng),
                                None => {
                                    let re: f64 = rng.sample(StandardNormal);
                                    let im: f64 = rng.sample(StandardNormal);
                                    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                                }
                            };
                            TapProcess::Static(g)
                        }
                    });
                }
            }
        }
        Ok(Self {
            delays: quantized.iter().map(|t| t.0).collect(),
            amps: quantized.iter().map(|t| (t.1 * gain).sqrt()).collect(),
            taps,
            sqrt_rtx,
            sqrt_rrx,
            n_rx: spec.n_rx,
            n_tx: spec.n_tx,
            sampling_rate: spec.sampling_rate,
            pathloss_db: spec.pathloss_db,
        })
    }

    /// Evaluates the fading processes over samples `t0 .. t0 + n_samples`.
    pub fn realize(&self, t0: u64, n_samples: usize) -> ChannelRealization {
        let (n_rx, n_tx) = (self.n_rx, self.n_tx);
        let pair = n_rx * n_tx;
        let mut gains = vec![Complex64::new(0.0, 0.0); self.delays.len() * n_samples * pair];
        let mut re = vec![0.0f64; n_samples];
        let mut im = vec![0.0f64; n_samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_samples];
        for (ti, &amp) in self.amps.iter().enumerate() {
            for p in 0..pair {
                let dst_base = ti * n_samples;
                match &self.taps[ti * pair + p] {
                    TapProcess::Jakes { i, q } => {
                        re.iter_mut().for_each(|v| *v = 0.0);
                        im.iter_mut().for_each(|v| *v = 0.0);
                        i.add_cosines(t0, &mut re);
                        q.add_cosines(t0, &mut im);
                        for n in 0..n_samples {
                            gains[(dst_base + n) * pair + p] =
                                amp * Complex64::new(re[n], im[n]);
                        }
                    }
                    TapProcess::Uniform(bank) => {
                        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                        bank.add_phasors(t0, &mut buf);
                        for n in 0..n_samples {
                            gains[(dst_base + n) * pair + p] = amp * buf[n];
                        }
                    }
                    TapProcess::Static(g) => {
                        for n in 0..n_samples {
                            gains[(dst_base + n) * pair + p] = amp * g;
                        }
                    }
                }
            }
        }
        // Kronecker coloring: H <- Rrx^{1/2} H Rtx^{H/2} per tap and sample.
        if let (Some(ltx), Some(lrx)) = (&self.sqrt_rtx, &self.sqrt_rrx) {
            let mut h = DMatrix::<Complex64>::zeros(n_rx, n_tx);
            for ti in 0..self.delays.len() {
                for n in 0..n_samples {
                    let base = (ti * n_samples + n) * pair;
                    for r in 0..n_rx {
                        for t in 0..n_tx {
                            h[(r, t)] = gains[base + r * n_tx + t];
                        }
                    }
                    let colored = lrx * &h * ltx.adjoint();
                    for r in 0..n_rx {
                        for t in 0..n_tx {
                            gains[base + r * n_tx + t] = colored[(r, t)];
                        }
                    }
                }
            }
        }
        ChannelRealization {
            delays: self.delays.clone(),
            gains,
            n_samples,
            n_rx,
            n_tx,
            sampling_rate: self.sampling_rate,
            pathloss_db: self.pathloss_db,
        }
    }
}

/// Sampled time-variant impulse response, indexed (tap, time, rx, tx).
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub delays: Vec<usize>,
    gains: Vec<Complex64>,
    pub n_samples: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub sampling_rate: f64,
    pub pathloss_db: f64,
}

impl ChannelRealization {
    #[inline]
    pub fn gain(&self, tap: usize, time: usize, rx: usize, tx: usize) -> Complex64 {
        let pair = self.n_rx * self.n_tx;
        self.gains[(tap * self.n_samples + time) * pair + rx * self.n_tx + tx]
    }

    pub fn n_taps(&self) -> usize {
        self.delays.len()
    }

    pub fn max_delay(&self) -> usize {
        self.delays.last().copied().unwrap_or(0)
    }

    /// Convolves one stream per tx antenna with the time-variant response:
    /// rx[r][n] = sum_taps sum_t gain(tap, n, r, t) * tx[t][n - delay(tap)].
    /// Output length is input length + maximum tap delay.
    pub fn apply(&self, tx: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        if tx.len() != self.n_tx {
            return Err(contract("one tx stream per transmit antenna required"));
        }
        let len = tx[0].len();
        if tx.iter().any(|s| s.len() != len) {
            return Err(contract("tx streams must share a length"));
        }
        if len > self.n_samples {
            return Err(contract("channel realization shorter than the signal"));
        }
        let out_len = len + self.max_delay();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); out_len]; self.n_rx];
        let pair = self.n_rx * self.n_tx;
        for (ti, &d) in self.delays.iter().enumerate() {
            for (t, stream) in tx.iter().enumerate() {
                for (r, dst) in out.iter_mut().enumerate() {
                    for (n, &x) in stream.iter().enumerate() {
                        // Gain sampled at the emission time of the sample.
                        let g = self.gains[(ti * self.n_samples + n) * pair + r * self.n_tx + t];
                        dst[n + d] += g * x;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Frequency response per DFT bin at one time instant: one n_rx x n_tx
    /// matrix per bin b with H[b] = sum_taps gain * e^{-j 2 pi b d / n_fft}.
    pub fn freq_response(&self, time: usize, n_fft: usize) -> Vec<DMatrix<Complex64>> {
        let time = time.min(self.n_samples - 1);
        let pair = self.n_rx * self.n_tx;
        let mut out = vec![DMatrix::zeros(self.n_rx, self.n_tx); n_fft];
        for (ti, &d) in self.delays.iter().enumerate() {
            let base = (ti * self.n_samples + time) * pair;
            for (b, h) in out.iter_mut().enumerate() {
                let ph = Complex64::from_polar(
                    1.0,
                    -2.0 * PI * (b as f64) * (d % n_fft) as f64 / n_fft as f64,
                );
                for r in 0..self.n_rx {
                    for t in 0..self.n_tx {
                        h[(r, t)] += self.gains[base + r * self.n_tx + t] * ph;
                    }
                }
            }
        }
        out
    }
}

/// One-shot generation: builds a process from the spec and evaluates samples
/// `0 .. n_samples`. Deterministic given the seed.
pub fn generate_realization(spec: &ChannelSpec, n_samples: usize, seed: u64) -> Result<ChannelRealization> {
    if n_samples == 0 {
        return Err(config("need at least one channel sample"));
    }
    Ok(ChannelProcess::new(spec, seed)?.realize(0, n_samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn siso_spec(pdp: PowerDelayProfile, doppler: DopplerModel, fs: f64) -> ChannelSpec {
        ChannelSpec {
            pdp,
            doppler,
            twdp: None,
            corr: None,
            n_rx: 1,
            n_tx: 1,
            sampling_rate: fs,
            pathloss_db: 0.0,
        }
    }

    #[test]
    fn profiles_are_unit_power_and_sorted() {
        for model in [
            PdpModel::PedA,
            PdpModel::PedB,
            PdpModel::VehA,
            PdpModel::Epa,
            PdpModel::Eva,
        ] {
            let pdp = PowerDelayProfile::from_model(model, None).unwrap();
            let total: f64 = pdp.taps.iter().map(|t| t.1).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(pdp.taps.windows(2).all(|w| w[0].0 <= w[1].0));
        }
        for model in [PdpModel::TdlA, PdpModel::TdlB, PdpModel::TdlC] {
            let pdp = PowerDelayProfile::from_model(model, Some(45e-9)).unwrap();
            let total: f64 = pdp.taps.iter().map(|t| t.1).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(PowerDelayProfile::from_model(model, None).is_err());
        }
        assert!(PowerDelayProfile::from_model(PdpModel::PedA, Some(45e-9)).is_err());
    }

    #[test]
    fn tdl_a_scales_with_delay_spread() {
        let a = PowerDelayProfile::from_model(PdpModel::TdlA, Some(45e-9)).unwrap();
        let b = PowerDelayProfile::from_model(PdpModel::TdlA, Some(250e-9)).unwrap();
        assert_eq!(a.taps.len(), 23);
        for (ta, tb) in a.taps.iter().zip(&b.taps) {
            assert_abs_diff_eq!(tb.0, ta.0 * 250.0 / 45.0, epsilon = 1e-18);
            assert_abs_diff_eq!(tb.1, ta.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn quantization_merges_coincident_taps() {
        // At 5.76 MHz one sample is ~174 ns: the 110 ns and 190 ns PedA taps
        // merge onto sample 1 and the 410 ns tap rounds to sample 2.
        let pdp = PowerDelayProfile::from_model(PdpModel::PedA, None).unwrap();
        let q = pdp.quantize(5.76e6);
        assert_eq!(q.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        let expect_mid = (10f64.powf(-0.97) + 10f64.powf(-1.92))
            / (1.0 + 10f64.powf(-0.97) + 10f64.powf(-1.92) + 10f64.powf(-2.28));
        assert_abs_diff_eq!(q[1].1, expect_mid, epsilon = 1e-12);
        let total: f64 = q.iter().map(|t| t.1).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn static_single_tap_has_pathloss_magnitude() {
        let mut spec = siso_spec(
            PowerDelayProfile::from_model(PdpModel::Flat, None).unwrap(),
            DopplerModel::block_fading(),
            5.76e6,
        );
        spec.twdp = Some(TwdpParams { k_factor: f64::INFINITY, delta: 0.0 });
        spec.pathloss_db = 20.0;
        let r = generate_realization(&spec, 16, 7).unwrap();
        for n in 0..16 {
            assert_abs_diff_eq!(r.gain(0, n, 0, 0).norm(), 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn seed_determinism_and_independence() {
        let spec = siso_spec(
            PowerDelayProfile::from_model(PdpModel::PedA, None).unwrap(),
            DopplerModel { spectrum: DopplerSpectrum::Jakes, max_doppler_hz: 50.0, correlated_across_frames: false },
            5.76e6,
        );
        let a = generate_realization(&spec, 64, 123).unwrap();
        let b = generate_realization(&spec, 64, 123).unwrap();
        let c = generate_realization(&spec, 64, 124).unwrap();
        for n in 0..64 {
            assert_eq!(a.gain(0, n, 0, 0), b.gain(0, n, 0, 0));
        }
        assert_ne!(a.gain(0, 0, 0, 0), c.gain(0, 0, 0, 0));
    }

    #[test]
    fn time_correlated_continuation_is_seamless() {
        let spec = siso_spec(
            PowerDelayProfile::from_model(PdpModel::Flat, None).unwrap(),
            DopplerModel { spectrum: DopplerSpectrum::Jakes, max_doppler_hz: 200.0, correlated_across_frames: true },
            5.76e6,
        );
        let proc = ChannelProcess::new(&spec, 9).unwrap();
        let whole = proc.realize(0, 128);
        let first = proc.realize(0, 64);
        let second = proc.realize(64, 64);
        for n in 0..64 {
            assert_abs_diff_eq!(
                (whole.gain(0, n, 0, 0) - first.gain(0, n, 0, 0)).norm(),
                0.0,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                (whole.gain(0, 64 + n, 0, 0) - second.gain(0, n, 0, 0)).norm(),
                0.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn ensemble_power_matches_pathloss_within_one_percent() {
        for spectrum in [DopplerSpectrum::Jakes, DopplerSpectrum::Uniform, DopplerSpectrum::None] {
            let mut spec = siso_spec(
                PowerDelayProfile::from_model(PdpModel::VehA, None).unwrap(),
                DopplerModel { spectrum, max_doppler_hz: 150.0, correlated_across_frames: false },
                5.76e6,
            );
            spec.pathloss_db = 10.0;
            let mut acc = 0.0;
            let reals = 1000usize;
            let n = 8usize;
            for s in 0..reals {
                let r = generate_realization(&spec, n, 1000 + s as u64).unwrap();
                for t in 0..n {
                    let p: f64 = (0..r.n_taps()).map(|ti| r.gain(ti, t, 0, 0).norm_sqr()).sum();
                    acc += p;
                }
            }
            let mean = acc / (reals * n) as f64;
            assert!(
                (mean / 0.1 - 1.0).abs() < 0.01,
                "{spectrum:?}: mean power {mean:.5} vs 0.1"
            );
        }
    }

    /// Bessel J0 via its power series (small x) and the standard asymptotic
    /// large-argument form.
    fn bessel_j0(x: f64) -> f64 {
        let x = x.abs();
        if x < 12.0 {
            let mut term = 1.0;
            let mut acc = 1.0;
            let q = x * x / 4.0;
            for k in 1..40 {
                term *= -q / (k * k) as f64;
                acc += term;
            }
            acc
        } else {
            (2.0 / (PI * x)).sqrt() * (x - PI / 4.0).cos()
        }
    }

    #[test]
    fn jakes_autocorrelation_matches_bessel_oracle() {
        // f_D = 100 Hz sampled at 10 kHz; lags up to 5 ms = 50 samples.
        let fs = 10e3;
        let spec = siso_spec(
            PowerDelayProfile::from_model(PdpModel::Flat, None).unwrap(),
            DopplerModel { spectrum: DopplerSpectrum::Jakes, max_doppler_hz: 100.0, correlated_across_frames: false },
            fs,
        );
        let n = 51usize;
        let reals = 1000usize;
        let mut corr = vec![Complex64::new(0.0, 0.0); n];
        for s in 0..reals {
            let r = generate_realization(&spec, n, 5000 + s as u64).unwrap();
            let h0 = r.gain(0, 0, 0, 0);
            for lag in 0..n {
                corr[lag] += r.gain(0, lag, 0, 0) * h0.conj();
            }
        }
        let mut sq = 0.0;
        for lag in 0..n {
            let emp = corr[lag].re / reals as f64;
            let oracle = bessel_j0(2.0 * PI * 100.0 * lag as f64 / fs);
            sq += (emp - oracle).powi(2);
        }
        let rms = (sq / n as f64).sqrt();
        assert!(rms < 0.05, "autocorrelation RMS deviation {rms:.4}");
    }

    fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn twdp_k_zero_is_rayleigh() {
        let params = TwdpParams { k_factor: 0.0, delta: 0.0 };
        let mut env = twdp_envelope(&params, 100_000, 31);
        // Rayleigh with unit mean power: F(x) = 1 - exp(-x^2).
        let d = ks_statistic(&mut env, |x| 1.0 - (-x * x).exp());
        let critical = 1.63 / (100_000f64).sqrt(); // 1% level
        assert!(d < critical, "KS statistic {d:.5} vs {critical:.5}");
    }

    #[test]
    fn twdp_degenerate_rows() {
        let env = twdp_envelope(&TwdpParams { k_factor: f64::INFINITY, delta: 0.0 }, 100, 32);
        for e in env {
            assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
        }
        // Large K with delta = 1: deeper fades than Rayleigh at small
        // envelope values (hyper-Rayleigh behavior).
        let n = 200_000;
        let hyper = twdp_envelope(&TwdpParams { k_factor: 50.0, delta: 1.0 }, n, 33);
        for threshold in [0.05f64, 0.1, 0.2] {
            let emp = hyper.iter().filter(|&&e| e < threshold).count() as f64 / n as f64;
            let rayleigh = 1.0 - (-threshold * threshold).exp();
            assert!(
                emp > rayleigh,
                "at {threshold}: P(fade) {emp:.5} not above Rayleigh {rayleigh:.5}"
            );
        }
    }

    #[test]
    fn apply_identity_and_convolution_oracle() {
        let mut spec = siso_spec(
            PowerDelayProfile::from_model(PdpModel::Flat, None).unwrap(),
            DopplerModel::block_fading(),
            5.76e6,
        );
        spec.twdp = Some(TwdpParams { k_factor: f64::INFINITY, delta: 0.0 });
        let r = generate_realization(&spec, 8, 1).unwrap();
        let mut impulse = vec![Complex64::new(0.0, 0.0); 8];
        impulse[0] = Complex64::new(1.0, 0.0);
        let out = r.apply(&[impulse]).unwrap();
        assert_abs_diff_eq!(out[0][0].norm(), 1.0, epsilon = 1e-12);
        for n in 1..out[0].len() {
            assert_abs_diff_eq!(out[0][n].norm(), 0.0, epsilon = 1e-12);
        }

        // Static two-tap channel vs a direct convolution oracle.
        let pdp = PowerDelayProfile::from_pairs(&[(0.0, 0.0), (400.0, -3.0)]).unwrap();
        let spec = siso_spec(pdp, DopplerModel::block_fading(), 5.76e6);
        let r = generate_realization(&spec, 64, 2).unwrap();
        let mut rng = SeedStream::root(77).child("sig").rng();
        let x: Vec<Complex64> = (0..64)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let out = r.apply(&[x.clone()]).unwrap();
        let g0 = r.gain(0, 0, 0, 0);
        let g1 = r.gain(1, 0, 0, 0);
        let d = r.delays[1];
        let mut rms = 0.0;
        for n in 0..out[0].len() {
            let mut oracle = Complex64::new(0.0, 0.0);
            if n < 64 {
                oracle += g0 * x[n];
            }
            if n >= d && n - d < 64 {
                oracle += g1 * x[n - d];
            }
            rms += (out[0][n] - oracle).norm_sqr();
        }
        assert!((rms / out[0].len() as f64).sqrt() < 1e-12);
    }

    #[test]
    fn apply_is_linear() {
        let spec = siso_spec(
            PowerDelayProfile::from_model(PdpModel::PedA, None).unwrap(),
            DopplerModel { spectrum: DopplerSpectrum::Jakes, max_doppler_hz: 300.0, correlated_across_frames: false },
            5.76e6,
        );
        let r = generate_realization(&spec, 32, 3).unwrap();
        let mut rng = SeedStream::root(78).child("sig").rng();
        let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<Complex64> {
            (0..32)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let (a, b) = (Complex64::new(0.3, -1.1), Complex64::new(-0.7, 0.2));
        let mixed: Vec<Complex64> = x.iter().zip(&y).map(|(&u, &v)| a * u + b * v).collect();
        let out_mixed = r.apply(&[mixed]).unwrap();
        let out_x = r.apply(&[x]).unwrap();
        let out_y = r.apply(&[y]).unwrap();
        for n in 0..out_mixed[0].len() {
            let lin = a * out_x[0][n] + b * out_y[0][n];
            assert!((out_mixed[0][n] - lin).norm() < 1e-12);
        }
    }

    #[test]
    fn kronecker_correlation_is_reproduced() {
        let rho = 0.7;
        let spec = ChannelSpec {
            pdp: PowerDelayProfile::from_model(PdpModel::Flat, None).unwrap(),
            doppler: DopplerModel::block_fading(),
            twdp: None,
            corr: Some((exponential_correlation(2, rho), exponential_correlation(2, 0.4))),
            n_rx: 2,
            n_tx: 2,
            sampling_rate: 5.76e6,
            pathloss_db: 0.0,
        };
        let reals = 10_000usize;
        let mut rtx = DMatrix::<Complex64>::zeros(2, 2);
        let mut rrx = DMatrix::<Complex64>::zeros(2, 2);
        for s in 0..reals {
            let r = generate_realization(&spec, 1, 40_000 + s as u64).unwrap();
            let h = DMatrix::from_fn(2, 2, |i, j| r.gain(0, 0, i, j));
            rtx += h.adjoint() * &h;
            rrx += &h * h.adjoint();
        }
        // E[H^H H] = n_rx * Rtx and E[H H^H] = n_tx * Rrx.
        for i in 0..2 {
            for j in 0..2 {
                let want_tx = exponential_correlation(2, rho)[(i, j)];
                let got_tx = rtx[(i, j)] / Complex64::new(2.0 * reals as f64, 0.0);
                assert!((got_tx - want_tx).norm() < 0.05, "Rtx[{i}{j}] {got_tx}");
                let want_rx = exponential_correlation(2, 0.4)[(i, j)];
                let got_rx = rrx[(i, j)] / Complex64::new(2.0 * reals as f64, 0.0);
                assert!((got_rx - want_rx).norm() < 0.05, "Rrx[{i}{j}] {got_rx}");
            }
        }
    }

    #[test]
    fn non_psd_correlation_rejected() {
        let mut bad = exponential_correlation(2, 0.5);
        bad[(0, 1)] = Complex64::new(2.0, 0.0);
        bad[(1, 0)] = Complex64::new(2.0, 0.0);
        let spec = ChannelSpec {
            pdp: PowerDelayProfile::from_model(PdpModel::Flat, None).unwrap(),
            doppler: DopplerModel::block_fading(),
            twdp: None,
            corr: Some((bad, exponential_correlation(2, 0.0))),
            n_rx: 2,
            n_tx: 2,
            sampling_rate: 5.76e6,
            pathloss_db: 0.0,
        };
        assert!(ChannelProcess::new(&spec, 1).is_err());
    }

    #[test]
    fn freq_response_matches_fft_of_taps() {
        let pdp = PowerDelayProfile::from_pairs(&[(0.0, 0.0), (694.4, -3.0)]).unwrap();
        let spec = siso_spec(pdp, DopplerModel::block_fading(), 5.76e6);
        let r = generate_realization(&spec, 4, 11).unwrap();
        let n_fft = 64;
        let h = r.freq_response(0, n_fft);
        for b in (0..n_fft).step_by(7) {
            let mut want = Complex64::new(0.0, 0.0);
            for ti in 0..r.n_taps() {
                want += r.gain(ti, 0, 0, 0)
                    * Complex64::from_polar(
                        1.0,
                        -2.0 * PI * b as f64 * r.delays[ti] as f64 / n_fft as f64,
                    );
            }
            assert!((h[b][(0, 0)] - want).norm() < 1e-12);
        }
    }
}
