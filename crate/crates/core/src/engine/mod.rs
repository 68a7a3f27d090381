//! Monte Carlo frame loop: builds the full transmission chain from a
//! scenario, runs it over a parameter sweep, and aggregates BER / FER /
//! throughput with 95% confidence intervals.
//!
//! Each sweep point is an independent unit of work (its own seed subtree and
//! per-link state), so points may run in parallel while frames within a point
//! stay serial — feedback FIFOs and correlated fading carry state from frame
//! to frame. Serial and parallel execution are bit-identical.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::channel::{ChannelProcess, ChannelRealization, ChannelSpec};
use crate::coding::{self, CodeConfig, Scheme};
use crate::error::{Error, Result};
use crate::feedback::{
    self, awgn_bler_reference, cqi_entry, FeedbackConfig, FeedbackFifo, FeedbackReport,
};
use crate::mimo::{self, Detector, MimoMode};
use crate::modem::{self, QamSpec};
use crate::rng::SeedStream;
use crate::scenario::{LinkConfig, LinkRole, NomaReceiver, Scenario, SweepParameter};
use crate::topology::{self, Topology, MUST_RATIOS};
use crate::waveform::{ResourceGrid, WaveformConfig, WaveformKind};

/// Nominal frame duration; the numerology presets tile it exactly.
pub const FRAME_DURATION_S: f64 = 1e-3;

fn db_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Largest transport-block segment (information bits) per coding scheme;
/// longer blocks are split into equal segments with individual CRCs.
fn max_segment_info(scheme: Scheme) -> usize {
    match scheme {
        Scheme::Ldpc => 8448,
        Scheme::Turbo | Scheme::Convolutional => 6144,
        Scheme::Polar => 1024,
    }
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// Mean with a 95% confidence interval.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Ci {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Ci {
    fn degenerate(v: f64) -> Ci {
        Ci { mean: v, low: v, high: v }
    }
}

/// Wald interval for a mean over raw samples.
fn wald_ci(samples: &[f64]) -> Ci {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return Ci::degenerate(0.0);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return Ci::degenerate(mean);
    }
    let var = samples.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    Ci { mean, low: mean - half, high: mean + half }
}

/// Binomial proportion: Wald when enough events were seen, Clopper-Pearson
/// otherwise (the Wald interval collapses at low counts).
fn proportion_ci(events: usize, trials: usize) -> Ci {
    if trials == 0 {
        return Ci::degenerate(0.0);
    }
    let n = trials as f64;
    let p = events as f64 / n;
    if events >= 10 && trials - events >= 10 {
        let half = 1.96 * (p * (1.0 - p) / n).sqrt();
        return Ci { mean: p, low: (p - half).max(0.0), high: (p + half).min(1.0) };
    }
    let x = events as f64;
    let low = if events == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).map(|b| b.inverse_cdf(0.025)).unwrap_or(0.0)
    };
    let high = if events == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).map(|b| b.inverse_cdf(0.975)).unwrap_or(1.0)
    };
    Ci { mean: p, low, high }
}

/// One frame of one link, for `--dump-frames`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub link_id: String,
    pub cqi: u8,
    pub pmi: usize,
    pub ri: usize,
    pub qam_order: usize,
    pub info_bits: usize,
    pub bit_errors: usize,
    pub frame_error: bool,
}

/// Per-link aggregate at one sweep point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkSummary {
    pub link_id: String,
    pub frames: usize,
    pub bits_total: usize,
    pub bit_errors: usize,
    pub frame_errors: usize,
    pub ber: Ci,
    pub fer: Ci,
    /// Delivered information bits per second.
    pub throughput_bps: Ci,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointResult {
    pub sweep_value: f64,
    pub links: Vec<LinkSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub parallel: bool,
    pub dump_frames: bool,
    /// Overrides `sweep.frames_per_point`.
    pub frames_override: Option<usize>,
    /// Overrides `sweep.master_seed`.
    pub seed_override: Option<u64>,
}

// ---------------------------------------------------------------------------
// Sweep application
// ---------------------------------------------------------------------------

fn targets_links(scenario: &Scenario) -> Vec<usize> {
    match &scenario.sweep.target_links {
        Some(ids) => scenario
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| ids.contains(&l.id))
            .map(|(i, _)| i)
            .collect(),
        None => (0..scenario.links.len()).collect(),
    }
}

/// Applies one sweep value to a copy of the scenario.
fn apply_sweep(scenario: &Scenario, value: f64) -> Scenario {
    let mut sc = scenario.clone();
    match sc.sweep.parameter {
        SweepParameter::PathlossDb => {
            for i in targets_links(scenario) {
                sc.links[i].pathloss_db = value;
            }
        }
        SweepParameter::VelocityKmh => {
            for i in targets_links(scenario) {
                sc.links[i].channel.velocity_kmh = Some(value);
                sc.links[i].channel.max_doppler_hz = None;
            }
        }
        SweepParameter::TxPowerDbm => {
            let ids = sc.sweep.target_nodes.clone();
            for n in &mut sc.nodes {
                if ids.as_ref().is_none_or(|ids| ids.contains(&n.id)) {
                    n.tx_power_dbm = value;
                }
            }
        }
    }
    sc
}

// ---------------------------------------------------------------------------
// Per-point link state
// ---------------------------------------------------------------------------

struct LinkState {
    cfg: LinkConfig,
    wf: WaveformConfig,
    /// Allocated bins on the centered grid.
    bins: Vec<usize>,
    n_sym: usize,
    n_tx: usize,
    n_rx: usize,
    /// Grid symbol amplitude putting the node's full power on the allocation.
    amp: f64,
    spec: ChannelSpec,
    /// Fading continued across frames; `None` redraws per frame.
    process: Option<ChannelProcess>,
    fifo: FeedbackFifo,
    feedback_cfg: FeedbackConfig,
}

/// Modulation, coding and spatial parameters of one frame's transmission.
struct TxPlan {
    qam: QamSpec,
    rank: usize,
    pmi: usize,
    segments: Vec<CodeConfig>,
    /// Coded (or raw, when uncoded) bits carried by the allocation.
    bits_available: usize,
    info_total: usize,
    report: FeedbackReport,
}

/// What one frame actually transmitted, kept for receiver-side comparison.
struct SentData {
    plan: TxPlan,
    info_bits: Vec<Vec<u8>>,
    symbols: Vec<Complex64>,
}

fn plan_segments(link: &LinkConfig, bits_available: usize, rate: f64) -> Result<Vec<CodeConfig>> {
    let coding = link.coding.as_ref().expect("coded link");
    let crc = coding.crc_length;
    if let Some(info) = coding.info_length {
        let cfg = link.code_config_at(info, rate);
        if cfg.target_length() > bits_available {
            return Err(Error::config(format!(
                "link `{}`: {} coded bits exceed the {}-bit allocation",
                link.id,
                cfg.target_length(),
                bits_available
            )));
        }
        return Ok(vec![cfg]);
    }
    let gross = (bits_available as f64 * rate).floor() as usize;
    if gross <= crc {
        return Err(Error::config(format!(
            "link `{}`: allocation too small for rate {rate} with a {crc}-bit CRC",
            link.id
        )));
    }
    let max_info = max_segment_info(coding.scheme);
    let mut n_seg = 1usize;
    loop {
        // Split the coded budget evenly; each segment pays its own CRC.
        let coded = bits_available / n_seg;
        let info = ((coded as f64 * rate).floor() as usize).saturating_sub(crc);
        if info == 0 {
            return Err(Error::config(format!(
                "link `{}`: cannot segment {bits_available} coded bits at rate {rate}",
                link.id
            )));
        }
        if info <= max_info {
            let mut segs = Vec::with_capacity(n_seg);
            for i in 0..n_seg {
                let coded_i = bits_available / n_seg + usize::from(i < bits_available % n_seg);
                let info_i = ((coded_i as f64 * rate).floor() as usize).saturating_sub(crc);
                segs.push(link.code_config_at(info_i.max(1), rate));
            }
            return Ok(segs);
        }
        n_seg += 1;
    }
}

impl LinkState {
    fn n_re(&self) -> usize {
        self.bins.len() * self.n_sym
    }

    /// Per-bin channel matrices over the allocation at one raw slot.
    fn alloc_channel(&self, real: &ChannelRealization, raw_slot: usize) -> Vec<DMatrix<Complex64>> {
        let n = self.wf.numerology.fft_size;
        let center = self.wf.raw_slot_center(raw_slot).round() as usize;
        let full = real.freq_response(center, n);
        self.bins
            .iter()
            .map(|&k| full[crate::waveform::bin_of(k, n)].clone())
            .collect()
    }

    fn precoder(&self, rank: usize, pmi: usize, re_index: usize) -> Result<DMatrix<Complex64>> {
        let mode = self.cfg.mimo.as_ref().map(|m| m.mode).unwrap_or_default();
        match mode {
            MimoMode::Olsm => mimo::olsm_precoder(self.n_tx, rank, re_index),
            MimoMode::Custom => Ok(DMatrix::from_fn(self.n_tx, rank, |i, j| {
                if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
            })),
            _ => {
                let cb = mimo::codebook(self.n_tx, rank)?;
                Ok(cb[pmi % cb.len()].clone())
            }
        }
    }

    fn detector(&self) -> Detector {
        self.cfg.mimo.as_ref().map(|m| m.detector).unwrap_or_default()
    }

    fn is_alamouti(&self) -> bool {
        self.cfg.mimo.as_ref().map(|m| m.mode) == Some(MimoMode::TransmitDiversity)
    }
}

// ---------------------------------------------------------------------------
// Point runner
// ---------------------------------------------------------------------------

struct PointRunner<'a> {
    scenario: Scenario,
    topo: Topology,
    states: Vec<LinkState>,
    noise_var: f64,
    frame_samples: usize,
    point_stream: SeedStream,
    cache_dir: Option<&'a std::path::Path>,
}

struct LinkTally {
    bits_total: usize,
    bit_errors: usize,
    frames: usize,
    frame_errors: usize,
    delivered_bits: Vec<f64>,
}

impl<'a> PointRunner<'a> {
    fn new(
        base: &Scenario,
        value: f64,
        point_idx: usize,
        master_seed: u64,
        cache_dir: Option<&'a std::path::Path>,
    ) -> Result<Self> {
        let scenario = apply_sweep(base, value);
        let topo = Topology::build(&scenario)?;
        let fs = scenario.links[0].waveform_config()?.numerology.sample_rate();
        let frame_samples = (fs * FRAME_DURATION_S).round() as usize;
        let noise_var = db_to_mw(scenario.global.noise_power_dbm_per_hz) * fs;
        let point_stream = SeedStream::root(master_seed).child_idx("point", point_idx as u64);

        let mut states = Vec::with_capacity(scenario.links.len());
        for link in &scenario.links {
            let wf = link.waveform_config()?;
            let tx_node = scenario.node(&link.tx).expect("validated");
            let rx_node = scenario.node(&link.rx).expect("validated");
            let (n_tx, n_rx) = (tx_node.n_antennas, rx_node.n_antennas);
            if wf.kind == WaveformKind::FbmcOqam && (n_tx > 1 || link.mimo.is_some()) {
                return Err(Error::config(format!(
                    "link `{}`: FBMC-OQAM supports single-antenna transmission only",
                    link.id
                )));
            }
            if link.feedback.is_some() && link.coding.is_none() {
                return Err(Error::config(format!(
                    "link `{}`: adaptive MCS requires a coding section",
                    link.id
                )));
            }
            let n_sym = wf
                .qam_slots(frame_samples)
                .min(link.allocation.n_symbols.unwrap_or(usize::MAX));
            if n_sym == 0 {
                return Err(Error::config(format!(
                    "link `{}`: no symbol fits the {frame_samples}-sample frame",
                    link.id
                )));
            }
            let bins: Vec<usize> = (link.allocation.first_subcarrier
                ..link.allocation.first_subcarrier + link.allocation.n_subcarriers)
                .collect();
            let n = wf.numerology.fft_size;
            let amp = (db_to_mw(tx_node.tx_power_dbm) * n as f64 / bins.len() as f64).sqrt();
            let spec = link.channel_spec(scenario.global.carrier_frequency_hz, n_tx, n_rx, fs)?;
            let process = if link.channel.correlated_across_frames {
                let seed = point_stream.child("channel").child(&link.id).rng().next_u64();
                Some(ChannelProcess::new(&spec, seed)?)
            } else {
                None
            };
            let feedback_cfg = link
                .feedback
                .as_ref()
                .map(|f| f.to_config())
                .unwrap_or_default();
            let fifo = FeedbackFifo::new(feedback_cfg.delay_frames);
            states.push(LinkState {
                cfg: link.clone(),
                wf,
                bins,
                n_sym,
                n_tx,
                n_rx,
                amp,
                spec,
                process,
                fifo,
                feedback_cfg,
            });
        }
        Ok(PointRunner { scenario, topo, states, noise_var, frame_samples, point_stream, cache_dir })
    }

    fn realize_channel(&self, li: usize, frame: usize, n_samples: usize) -> Result<ChannelRealization> {
        let state = &self.states[li];
        match &state.process {
            Some(p) => Ok(p.realize(frame as u64 * self.frame_samples as u64, n_samples)),
            None => {
                let seed = self
                    .point_stream
                    .child_idx("frame", frame as u64)
                    .child("channel")
                    .child(&state.cfg.id)
                    .rng()
                    .next_u64();
                Ok(ChannelProcess::new(&state.spec, seed)?.realize(0, n_samples))
            }
        }
    }

    /// Per-layer post-equalization SINRs over the allocation, used both for
    /// CSI reports and (1/sinr) as the demapper noise variance.
    fn layer_sinrs(
        &self,
        state: &LinkState,
        h_bins: &[DMatrix<Complex64>],
        rank: usize,
        pmi: usize,
    ) -> Result<Vec<f64>> {
        let mut sinrs = Vec::with_capacity(h_bins.len() * rank);
        let a_layer = state.amp / (rank as f64).sqrt();
        let spec = QamSpec::new(4)?;
        let y0 = DVector::zeros(state.n_rx);
        for (bi, h) in h_bins.iter().enumerate() {
            let nf = state.wf.noise_factor(state.bins[bi]);
            let var = self.noise_var * nf;
            if state.n_tx == 1 && state.n_rx == 1 && rank == 1 {
                let g = (h[(0, 0)] * state.amp).norm_sqr();
                sinrs.push((g / var).max(1e-12));
            } else if state.is_alamouti() {
                let norm_sq: f64 = h.iter().map(|v| v.norm_sqr()).sum();
                sinrs.push((state.amp * state.amp * norm_sq / 2.0 / var).max(1e-12));
            } else {
                let w = state.precoder(rank, pmi, bi)?;
                let h_eff = (h * &w).scale(a_layer);
                let det = mimo::detect(&y0, &h_eff, var, &spec, Detector::Mmse)?;
                for s in det.sinr {
                    sinrs.push(s.max(1e-12));
                }
            }
        }
        Ok(sinrs)
    }

    /// Computes this frame's CSI report from the realized channel.
    fn compute_report(
        &self,
        li: usize,
        real: &ChannelRealization,
    ) -> Result<FeedbackReport> {
        let state = &self.states[li];
        let mid = state.wf.raw_slots(state.n_sym) / 2;
        let h_bins = state.alloc_channel(real, mid);
        let fixed_rank = state.cfg.mimo.as_ref().and_then(|m| m.rank);
        let fixed_pmi = state.cfg.mimo.as_ref().and_then(|m| m.pmi);
        let (pmi, ri) = if state.cfg.mimo.is_some()
            && !state.is_alamouti()
            && (fixed_rank.is_none() || fixed_pmi.is_none())
        {
            let nf = state.wf.noise_factor(state.bins[state.bins.len() / 2]);
            let noise_norm = self.noise_var * nf / (state.amp * state.amp);
            let max_rank = fixed_rank.unwrap_or(state.n_tx.min(state.n_rx));
            let (pmi, ri) = feedback::compute_pmi_ri(&h_bins, noise_norm, max_rank)?;
            (fixed_pmi.unwrap_or(pmi), fixed_rank.unwrap_or(ri))
        } else {
            (fixed_pmi.unwrap_or(0), fixed_rank.unwrap_or(1))
        };

        let mut sinrs = self.layer_sinrs(state, &h_bins, ri, pmi)?;
        // Power-domain superposition reshapes both users' effective SINRs.
        if let Some(noma) = &state.cfg.noma {
            let (alpha_near, _) = MUST_RATIOS[noma.power_ratio_index];
            for s in &mut sinrs {
                *s = (*s * alpha_near).max(1e-12);
            }
        }
        if self.topo.is_far_companion[li] {
            let (alpha_near, alpha_far) = self.far_power_split(li);
            for s in &mut sinrs {
                *s = (alpha_far * *s / (alpha_near * *s + 1.0)).max(1e-12);
            }
        }

        let cqi = if state.cfg.feedback.is_some() {
            let rank_for_tbs = ri;
            let bler_at = |cqi: u8, snr_db: f64| -> f64 {
                let entry = cqi_entry(cqi);
                let Ok(spec) = QamSpec::new(entry.qam_order) else { return 1.0 };
                let bits = state.n_re() * rank_for_tbs * spec.bits_per_symbol();
                match plan_segments(&state.cfg, bits, entry.code_rate()) {
                    Ok(segs) => awgn_bler_reference(&segs[0], entry.qam_order, self.cache_dir)
                        .map(|t| t.lookup(snr_db))
                        .unwrap_or(1.0),
                    Err(_) => 1.0,
                }
            };
            let mut cqi = feedback::compute_cqi(&sinrs, &state.feedback_cfg, bler_at)?;
            let cap = state.cfg.feedback.as_ref().map(|f| f.max_qam_order).unwrap_or(64);
            while cqi > 1 && cqi_entry(cqi).qam_order > cap {
                cqi -= 1;
            }
            cqi
        } else {
            1
        };
        Ok(FeedbackReport { cqi, pmi, ri })
    }

    /// (near, far) power split seen by a far companion link.
    fn far_power_split(&self, far_li: usize) -> (f64, f64) {
        for (i, companion) in self.topo.far_companion.iter().enumerate() {
            if *companion == Some(far_li) {
                let idx = self.states[i].cfg.noma.as_ref().expect("near link").power_ratio_index;
                return MUST_RATIOS[idx];
            }
        }
        (0.0, 1.0)
    }

    /// Resolves the frame's modulation/coding/spatial parameters from the
    /// delayed report (adaptive links) or the static configuration. A far
    /// NOMA companion rides the near link's precoder, so its (rank, pmi)
    /// are imposed via `spatial`.
    fn plan_tx(
        &self,
        li: usize,
        report: FeedbackReport,
        spatial: Option<(usize, usize)>,
    ) -> Result<TxPlan> {
        let state = &self.states[li];
        let adaptive = state.cfg.feedback.is_some();
        let (qam_order, rate) = if adaptive {
            let entry = cqi_entry(report.cqi);
            (entry.qam_order, Some(entry.code_rate()))
        } else {
            (
                state.cfg.modulation.qam_order,
                state.cfg.coding.as_ref().and_then(|c| c.code_rate),
            )
        };
        let (rank, pmi) = match spatial {
            Some((rank, pmi)) => (rank, pmi),
            None => {
                let rank = if state.cfg.mimo.is_some() && !state.is_alamouti() {
                    state.cfg.mimo.as_ref().and_then(|m| m.rank).unwrap_or(report.ri)
                } else {
                    1
                };
                let pmi = state.cfg.mimo.as_ref().and_then(|m| m.pmi).unwrap_or(report.pmi);
                (rank, pmi)
            }
        };
        let qam = QamSpec::new(qam_order)?;
        let bits_available = state.n_re() * rank * qam.bits_per_symbol();
        let segments = match (&state.cfg.coding, rate) {
            (Some(_), Some(rate)) => plan_segments(&state.cfg, bits_available, rate)?,
            (Some(_), None) => {
                return Err(Error::config(format!(
                    "link `{}`: coded link without a rate",
                    state.cfg.id
                )))
            }
            (None, _) => Vec::new(),
        };
        let info_total = if segments.is_empty() {
            bits_available
        } else {
            segments.iter().map(|s| s.info_length).sum()
        };
        Ok(TxPlan { qam, rank, pmi, segments, bits_available, info_total, report })
    }

    /// Draws data, encodes and maps one frame's worth of symbols (unit mean
    /// power, not yet scaled or precoded).
    fn generate_symbols(&self, li: usize, plan: &TxPlan, frame: usize) -> Result<SentData> {
        let state = &self.states[li];
        let mut rng = self
            .point_stream
            .child_idx("frame", frame as u64)
            .child("data")
            .child(&state.cfg.id)
            .rng();
        let mut info_bits = Vec::new();
        let mut coded = Vec::with_capacity(plan.bits_available);
        if plan.segments.is_empty() {
            let bits: Vec<u8> = (0..plan.bits_available).map(|_| rng.gen_range(0..2u8)).collect();
            coded.extend_from_slice(&bits);
            info_bits.push(bits);
        } else {
            for seg in &plan.segments {
                let info: Vec<u8> = (0..seg.info_length).map(|_| rng.gen_range(0..2u8)).collect();
                let block = coding::encode(&info, seg)
                    .map_err(|e| e.in_frame(&state.cfg.id, "encode"))?;
                coded.extend_from_slice(&block.codeword_bits);
                info_bits.push(info);
            }
            coded.resize(plan.bits_available, 0);
        }
        let symbols = modem::qam_map(&coded, &plan.qam)
            .map_err(|e| e.in_frame(&state.cfg.id, "map"))?;
        Ok(SentData { plan: self.plan_placeholder(plan), info_bits, symbols })
    }

    // TxPlan is not Clone (QamSpec isn't); rebuild the cheap parts.
    fn plan_placeholder(&self, plan: &TxPlan) -> TxPlan {
        TxPlan {
            qam: QamSpec::new(plan.qam.order()).expect("valid order"),
            rank: plan.rank,
            pmi: plan.pmi,
            segments: plan.segments.clone(),
            bits_available: plan.bits_available,
            info_total: plan.info_total,
            report: plan.report,
        }
    }

    /// Precodes symbols onto per-antenna grids and modulates them. `symbols`
    /// holds `rank` consecutive entries per resource element.
    fn modulate_link(&self, li: usize, plan: &TxPlan, symbols: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
        let state = &self.states[li];
        let n = state.wf.numerology.fft_size;
        let mut grids: Vec<ResourceGrid> = (0..state.n_tx)
            .map(|_| ResourceGrid::new(n, state.n_sym))
            .collect();
        if state.is_alamouti() {
            // Space-time pairs along consecutive slots of each subcarrier.
            let scale = state.amp;
            for (bi, &k) in state.bins.iter().enumerate() {
                let seq: Vec<Complex64> = (0..state.n_sym)
                    .map(|s| symbols[s * state.bins.len() + bi])
                    .collect();
                let [a0, a1] = mimo::alamouti_encode(&seq)
                    .map_err(|e| e.in_frame(&state.cfg.id, "precode"))?;
                for s in 0..state.n_sym {
                    *grids[0].at_mut(k, s) = a0[s] * scale;
                    *grids[1].at_mut(k, s) = a1[s] * scale;
                }
            }
        } else {
            let rank = plan.rank;
            let a_layer = state.amp / (rank as f64).sqrt();
            for s in 0..state.n_sym {
                for (bi, &k) in state.bins.iter().enumerate() {
                    let re = s * state.bins.len() + bi;
                    let w = state.precoder(rank, plan.pmi, bi)?;
                    let x = DVector::from_fn(rank, |l, _| symbols[re * rank + l]);
                    let t = (w * x).scale(a_layer);
                    for (ant, grid) in grids.iter_mut().enumerate() {
                        *grid.at_mut(k, s) = t[ant];
                    }
                }
            }
        }
        grids
            .iter()
            .map(|g| {
                state
                    .wf
                    .modulate(g)
                    .map_err(|e| e.in_frame(&state.cfg.id, "modulate"))
            })
            .collect()
    }

    /// Demodulates and equalizes/detects the composed receive signal into
    /// soft symbol estimates (unit constellation) with per-symbol noise
    /// variances, ordered `rank` entries per resource element.
    fn detect_link(
        &self,
        li: usize,
        plan: &TxPlan,
        real: &ChannelRealization,
        composed: &[Vec<Complex64>],
    ) -> Result<(Vec<Complex64>, Vec<f64>)> {
        let state = &self.states[li];
        let raw_slots = state.wf.raw_slots(state.n_sym);
        let fbmc = state.wf.kind == WaveformKind::FbmcOqam;
        let mut raw_grids = Vec::with_capacity(state.n_rx);
        for r in 0..state.n_rx {
            raw_grids.push(
                state
                    .wf
                    .demodulate(&composed[r], state.n_sym)
                    .map_err(|e| e.in_frame(&state.cfg.id, "demodulate"))?,
            );
        }

        if state.n_tx == 1 && state.n_rx == 1 && !fbmc && plan.rank == 1 {
            // Fast SISO path: one-tap equalization per resource element.
            let mut soft = Vec::with_capacity(state.n_re());
            let mut vars = Vec::with_capacity(state.n_re());
            for s in 0..raw_slots {
                let h_bins = state.alloc_channel(real, s);
                for (bi, &k) in state.bins.iter().enumerate() {
                    let h = h_bins[bi][(0, 0)] * state.amp;
                    let nf = state.wf.noise_factor(k);
                    let y = raw_grids[0].at(k, s);
                    soft.push(y / h);
                    vars.push((self.noise_var * nf / h.norm_sqr()).max(1e-300));
                }
            }
            return Ok((soft, vars));
        }

        if fbmc {
            // Single-antenna only: equalize both half-symbol slots, then take
            // the real field. The noise factor already covers finalization.
            let mut eq = ResourceGrid::new(state.wf.numerology.fft_size, raw_slots);
            let mut var_acc = vec![0.0f64; state.n_re()];
            for s in 0..raw_slots {
                let h_bins = state.alloc_channel(real, s);
                for (bi, &k) in state.bins.iter().enumerate() {
                    let h = h_bins[bi][(0, 0)] * state.amp;
                    *eq.at_mut(k, s) = raw_grids[0].at(k, s) / h;
                    let nf = state.wf.noise_factor(k);
                    var_acc[(s / 2) * state.bins.len() + bi] +=
                        0.5 * (self.noise_var * nf / h.norm_sqr()).max(1e-300);
                }
            }
            let qam_grid = state.wf.finalize(eq);
            let mut soft = Vec::with_capacity(state.n_re());
            for s in 0..state.n_sym {
                for &k in &state.bins {
                    soft.push(qam_grid.at(k, s));
                }
            }
            return Ok((soft, var_acc));
        }

        if state.is_alamouti() {
            let mut soft = vec![Complex64::new(0.0, 0.0); state.n_re()];
            let mut vars = vec![0.0f64; state.n_re()];
            for (bi, &k) in state.bins.iter().enumerate() {
                let nf = state.wf.noise_factor(k);
                let rx: Vec<Vec<Complex64>> = (0..state.n_rx)
                    .map(|r| (0..state.n_sym).map(|s| raw_grids[r].at(k, s)).collect())
                    .collect();
                for pair in 0..state.n_sym / 2 {
                    let h = state.alloc_channel(real, 2 * pair)[bi].scale(state.amp);
                    let seg: Vec<Vec<Complex64>> = rx
                        .iter()
                        .map(|row| row[2 * pair..2 * pair + 2].to_vec())
                        .collect();
                    let (est, gain) = mimo::alamouti_combine(&seg, &h)
                        .map_err(|e| e.in_frame(&state.cfg.id, "detect"))?;
                    let var = (self.noise_var * nf / (gain * 2.0).max(1e-300)).max(1e-300);
                    for t in 0..2 {
                        soft[(2 * pair + t) * state.bins.len() + bi] = est[t];
                        vars[(2 * pair + t) * state.bins.len() + bi] = var;
                    }
                }
            }
            return Ok((soft, vars));
        }

        // General MIMO path.
        let rank = plan.rank;
        let a_layer = state.amp / (rank as f64).sqrt();
        let detector = state.detector();
        let mut soft = Vec::with_capacity(state.n_re() * rank);
        let mut vars = Vec::with_capacity(state.n_re() * rank);
        for s in 0..raw_slots {
            let h_bins = state.alloc_channel(real, s);
            for (bi, &k) in state.bins.iter().enumerate() {
                let nf = state.wf.noise_factor(k);
                let var = self.noise_var * nf;
                let w = state.precoder(rank, plan.pmi, bi)?;
                let h_eff = (&h_bins[bi] * &w).scale(a_layer);
                let y = DVector::from_fn(state.n_rx, |r, _| raw_grids[r].at(k, s));
                let det = mimo::detect(&y, &h_eff, var, &plan.qam, detector)
                    .map_err(|e| e.in_frame(&state.cfg.id, "detect"))?;
                match detector {
                    Detector::Sphere | Detector::Ml => {
                        // Hard ML decisions carried as saturated soft symbols.
                        for (l, &d) in det.decisions.iter().enumerate() {
                            soft.push(d);
                            vars.push((1.0 / det.sinr[l]).max(1e-300).min(1e-2));
                        }
                    }
                    _ => {
                        for (l, &z) in det.soft.iter().enumerate() {
                            soft.push(z);
                            vars.push((1.0 / det.sinr[l]).max(1e-300));
                        }
                    }
                }
            }
        }
        Ok((soft, vars))
    }

    /// Decodes the soft stream of one link and tallies errors.
    fn decode_and_score(
        &self,
        li: usize,
        sent: &SentData,
        llrs: &[f64],
    ) -> Result<(usize, usize, bool)> {
        let state = &self.states[li];
        let plan = &sent.plan;
        let mut bit_errors = 0usize;
        let mut frame_error = false;
        if plan.segments.is_empty() {
            let hard = modem::harden(&llrs[..plan.bits_available]);
            for (a, b) in hard.iter().zip(&sent.info_bits[0]) {
                if a != b {
                    bit_errors += 1;
                }
            }
            frame_error = bit_errors > 0;
            return Ok((plan.info_total, bit_errors, frame_error));
        }
        let mut offset = 0usize;
        for (seg, info) in plan.segments.iter().zip(&sent.info_bits) {
            let len = seg.target_length();
            let res = coding::decode(&llrs[offset..offset + len], seg)
                .map_err(|e| e.in_frame(&state.cfg.id, "decode"))?;
            offset += len;
            let mut seg_errors = 0usize;
            for (a, b) in res.info_bits.iter().zip(info) {
                if a != b {
                    seg_errors += 1;
                }
            }
            bit_errors += seg_errors;
            if !res.crc_pass || seg_errors > 0 {
                frame_error = true;
            }
        }
        Ok((plan.info_total, bit_errors, frame_error))
    }

    fn run_frame(
        &mut self,
        frame: usize,
        tallies: &mut [LinkTally],
        records: &mut Option<&mut Vec<FrameRecord>>,
    ) -> Result<()> {
        let n_links = self.states.len();
        let frame_stream = self.point_stream.child_idx("frame", frame as u64);

        // 1. Realize every link's channel for this frame.
        let mut reals: Vec<ChannelRealization> = Vec::with_capacity(n_links);
        for li in 0..n_links {
            let tx_li = self.transmitting_link(li);
            let len = self.states[tx_li].wf.tx_len(self.states[tx_li].n_sym);
            reals.push(self.realize_channel(li, frame, len)?);
        }

        // 2. CSI reports through each link's FIFO (delay 0 passes through).
        let mut reports: Vec<FeedbackReport> = Vec::with_capacity(n_links);
        for li in 0..n_links {
            let computed = self.compute_report(li, &reals[li])?;
            reports.push(self.states[li].fifo.advance(computed));
        }

        // 3. Transmit: plan, encode, superpose NOMA pairs, modulate, fade.
        let mut sent: Vec<Option<SentData>> = (0..n_links).map(|_| None).collect();
        let mut arrivals: HashMap<usize, Vec<Vec<Vec<Complex64>>>> = HashMap::new();
        for li in 0..n_links {
            if self.topo.is_far_companion[li] {
                continue; // rides on its near partner's transmission
            }
            let plan = self.plan_tx(li, reports[li], None)?;
            let data = self.generate_symbols(li, &plan, frame)?;
            let tx_symbols = if let Some(far_li) = self.topo.far_companion[li] {
                // The far companion shares the near link's layers and
                // precoder; only its modulation/coding are its own.
                let far_plan =
                    self.plan_tx(far_li, reports[far_li], Some((plan.rank, plan.pmi)))?;
                let far_data = self.generate_symbols(far_li, &far_plan, frame)?;
                let (alpha_near, alpha_far) =
                    MUST_RATIOS[self.states[li].cfg.noma.as_ref().expect("near").power_ratio_index];
                let sup =
                    topology::must_superpose(&data.symbols, &far_data.symbols, alpha_near, alpha_far)?;
                sent[far_li] = Some(far_data);
                sup
            } else {
                data.symbols.clone()
            };
            let tx = self.modulate_link(li, &plan, &tx_symbols)?;
            sent[li] = Some(data);

            // Propagate through this link's channel and, for a NOMA pair,
            // the far companion's channel toward its own receiver.
            let rx_node = self.topo.node_index[&self.states[li].cfg.rx];
            let faded = reals[li]
                .apply(&tx)
                .map_err(|e| e.in_frame(&self.states[li].cfg.id, "channel"))?;
            arrivals.entry(rx_node).or_default().push(faded);
            if let Some(far_li) = self.topo.far_companion[li] {
                let far_rx = self.topo.node_index[&self.states[far_li].cfg.rx];
                let faded = reals[far_li]
                    .apply(&tx)
                    .map_err(|e| e.in_frame(&self.states[far_li].cfg.id, "channel"))?;
                arrivals.entry(far_rx).or_default().push(faded);
            }
        }

        // 4. Compose per receiving node (sum over links and antennas, AWGN).
        let mut composed: HashMap<usize, Vec<Vec<Complex64>>> = HashMap::new();
        for (&node, contribs) in &arrivals {
            let n_rx = self.scenario.nodes[node].n_antennas;
            let mut rng = frame_stream
                .child("noise")
                .child(&self.scenario.nodes[node].id)
                .rng();
            let streams: Vec<Vec<Complex64>> = (0..n_rx)
                .map(|r| {
                    let per_ant: Vec<&[Complex64]> =
                        contribs.iter().map(|c| c[r].as_slice()).collect();
                    topology::compose(&per_ant, self.noise_var, &mut rng)
                })
                .collect();
            composed.insert(node, streams);
        }

        // 5. Receive, decode and score every desired link.
        for li in 0..n_links {
            if self.states[li].cfg.role != LinkRole::Desired {
                continue;
            }
            let Some(data) = &sent[li] else { continue };
            let rx_node = self.topo.node_index[&self.states[li].cfg.rx];
            let Some(streams) = composed.get(&rx_node) else { continue };
            let (mut soft, vars) = self.detect_link(li, &data.plan, &reals[li], streams)?;

            let llrs = if let Some(noma) = self.states[li].cfg.noma.clone() {
                let far_li = self.topo.far_companion[li].expect("validated");
                let (alpha_near, alpha_far) = MUST_RATIOS[noma.power_ratio_index];
                let far_plan = &sent[far_li].as_ref().expect("transmitted").plan;
                match noma.receiver {
                    NomaReceiver::MlComposite => {
                        let raw = topology::composite_near_llrs(
                            &soft, &vars, &data.plan.qam, &far_plan.qam, alpha_near, alpha_far,
                        )?;
                        raw
                    }
                    NomaReceiver::Sic => {
                        // Decode the far user's stream at the near receiver,
                        // remap the hard bits and cancel before demapping.
                        let far_llrs = topology::far_llrs(
                            &soft, &vars, &far_plan.qam, alpha_near, alpha_far,
                        )?;
                        let far_hard = modem::harden(&far_llrs);
                        let far_syms = modem::qam_map(&far_hard, &far_plan.qam)?;
                        topology::cancel_far(&mut soft, &far_syms, alpha_far);
                        let scale = 1.0 / alpha_near.sqrt();
                        let scaled: Vec<Complex64> =
                            soft.iter().map(|&z| z * scale).collect();
                        let v: Vec<f64> = vars.iter().map(|&x| x / alpha_near).collect();
                        modem::llr_demap_per_symbol(&scaled, &v, &data.plan.qam)?
                    }
                }
            } else if self.topo.is_far_companion[li] {
                let (alpha_near, alpha_far) = self.far_power_split(li);
                topology::far_llrs(&soft, &vars, &data.plan.qam, alpha_near, alpha_far)?
            } else {
                modem::llr_demap_per_symbol(&soft, &vars, &data.plan.qam)
                    .map_err(|e| e.in_frame(&self.states[li].cfg.id, "demap"))?
            };

            let (info_total, bit_errors, frame_error) = self.decode_and_score(li, data, &llrs)?;
            let tally = &mut tallies[li];
            tally.frames += 1;
            tally.bits_total += info_total;
            tally.bit_errors += bit_errors;
            tally.frame_errors += usize::from(frame_error);
            tally
                .delivered_bits
                .push(if frame_error { 0.0 } else { info_total as f64 });
            if let Some(records) = records {
                records.push(FrameRecord {
                    frame,
                    link_id: self.states[li].cfg.id.clone(),
                    cqi: data.plan.report.cqi,
                    pmi: data.plan.pmi,
                    ri: data.plan.rank,
                    qam_order: data.plan.qam.order(),
                    info_bits: info_total,
                    bit_errors,
                    frame_error,
                });
            }
        }
        Ok(())
    }

    /// The link whose transmitter actually emits the signal carrying `li`.
    fn transmitting_link(&self, li: usize) -> usize {
        if self.topo.is_far_companion[li] {
            for (i, c) in self.topo.far_companion.iter().enumerate() {
                if *c == Some(li) {
                    return i;
                }
            }
        }
        li
    }
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

/// Runs one sweep point. Deterministic given (scenario, point index, seed).
pub fn run_point(
    scenario: &Scenario,
    point_idx: usize,
    options: &RunOptions,
) -> Result<PointResult> {
    let value = scenario.sweep.values[point_idx];
    let master_seed = options.seed_override.unwrap_or(scenario.sweep.master_seed);
    let frames = options.frames_override.unwrap_or(scenario.sweep.frames_per_point);
    let mut runner = PointRunner::new(scenario, value, point_idx, master_seed, None)?;
    let n_links = runner.states.len();
    let mut tallies: Vec<LinkTally> = (0..n_links)
        .map(|_| LinkTally {
            bits_total: 0,
            bit_errors: 0,
            frames: 0,
            frame_errors: 0,
            delivered_bits: Vec::with_capacity(frames),
        })
        .collect();
    let mut records = if options.dump_frames { Some(Vec::new()) } else { None };
    for f in 0..frames {
        runner.run_frame(f, &mut tallies, &mut records.as_mut())?;
    }

    let mut links = Vec::new();
    for (li, tally) in tallies.iter().enumerate() {
        if runner.states[li].cfg.role != LinkRole::Desired || tally.frames == 0 {
            continue;
        }
        let throughput: Vec<f64> = tally
            .delivered_bits
            .iter()
            .map(|&b| b / FRAME_DURATION_S)
            .collect();
        links.push(LinkSummary {
            link_id: runner.states[li].cfg.id.clone(),
            frames: tally.frames,
            bits_total: tally.bits_total,
            bit_errors: tally.bit_errors,
            frame_errors: tally.frame_errors,
            ber: proportion_ci(tally.bit_errors, tally.bits_total),
            fer: proportion_ci(tally.frame_errors, tally.frames),
            throughput_bps: wald_ci(&throughput),
        });
    }
    Ok(PointResult {
        sweep_value: value,
        links,
        frames: records.unwrap_or_default(),
    })
}

/// Runs the whole sweep, optionally with one rayon task per point.
pub fn run_sweep(scenario: &Scenario, options: &RunOptions) -> Result<SweepResult> {
    scenario.validate()?;
    let indices: Vec<usize> = (0..scenario.sweep.values.len()).collect();
    let points: Result<Vec<PointResult>> = if options.parallel {
        indices
            .par_iter()
            .map(|&i| run_point(scenario, i, options))
            .collect()
    } else {
        indices.iter().map(|&i| run_point(scenario, i, options)).collect()
    };
    Ok(SweepResult { points: points? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awgn_scenario(qam: usize, pathlosses: &[f64]) -> Scenario {
        let text = format!(
            r#"
schema_version = 1

[global]
carrier_frequency_hz = 2.5e9

[[nodes]]
id = "bs"
role = "bs"
tx_power_dbm = 0.0

[[nodes]]
id = "ue"
role = "ue"

[[links]]
id = "dl"
tx = "bs"
rx = "ue"
pathloss_db = 100.0
waveform = {{ kind = "cp-ofdm", scs_khz = 15 }}
allocation = {{ first_subcarrier = 156, n_subcarriers = 72 }}
channel = {{ twdp_k_factor = inf, twdp_delta = 0.0 }}
modulation = {{ qam_order = {qam} }}

[sweep]
parameter = "pathloss_db"
values = [{values}]
frames_per_point = 4
master_seed = 7
"#,
            values = pathlosses
                .iter()
                .map(|v| format!("{v:.1}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        Scenario::from_toml_str(&text).unwrap()
    }

    /// Per-RE SNR in dB for the AWGN test scenario above.
    fn re_snr_db(tx_dbm: f64, pathloss_db: f64) -> f64 {
        let alloc_bw: f64 = 72.0 * 15e3;
        tx_dbm - pathloss_db - (-174.0 + 10.0 * alloc_bw.log10())
    }

    #[test]
    fn awgn_uncoded_ber_matches_qpsk_theory() {
        // Pick a pathloss giving ~6 dB per-RE (symbol) SNR; QPSK bit error
        // rate is then Q(sqrt(Es/N0)) since each bit carries half the symbol
        // energy.
        let target_snr_db = 6.0;
        let pl = re_snr_db(0.0, 0.0) - target_snr_db;
        let sc = awgn_scenario(4, &[pl]);
        let opt = RunOptions { frames_override: Some(30), ..Default::default() };
        let res = run_sweep(&sc, &opt).unwrap();
        let ber = res.points[0].links[0].ber.mean;
        let snr = 10f64.powf(target_snr_db / 10.0);
        let q = |x: f64| 0.5 * statrs::function::erf::erfc(x / 2f64.sqrt());
        let theory = q(snr.sqrt());
        assert!(
            (ber / theory).log2().abs() < 0.6,
            "BER {ber:.2e} vs theory {theory:.2e}"
        );
    }

    #[test]
    fn ber_degrades_with_pathloss() {
        let base = re_snr_db(0.0, 0.0);
        let sc = awgn_scenario(16, &[base - 8.0, base - 4.0, base - 0.0]);
        let opt = RunOptions { frames_override: Some(10), ..Default::default() };
        let res = run_sweep(&sc, &opt).unwrap();
        let bers: Vec<f64> = res.points.iter().map(|p| p.links[0].ber.mean).collect();
        assert!(bers[0] < bers[1] && bers[1] < bers[2], "{bers:?}");
    }

    #[test]
    fn serial_and_parallel_sweeps_are_bit_identical() {
        let base = re_snr_db(0.0, 0.0);
        let sc = awgn_scenario(16, &[base - 10.0, base - 6.0, base - 2.0]);
        let opt = RunOptions { frames_override: Some(5), dump_frames: true, ..Default::default() };
        let serial = run_sweep(&sc, &opt).unwrap();
        let par = run_sweep(&sc, &RunOptions { parallel: true, ..opt }).unwrap();
        assert_eq!(serial.points.len(), par.points.len());
        for (a, b) in serial.points.iter().zip(&par.points) {
            assert_eq!(a.links[0].bit_errors, b.links[0].bit_errors);
            assert_eq!(a.links[0].frame_errors, b.links[0].frame_errors);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert_eq!(fa.bit_errors, fb.bit_errors);
            }
        }
    }

    #[test]
    fn coded_link_delivers_error_free_at_high_snr() {
        let mut sc = awgn_scenario(4, &[40.0]); // ~78 dB per-RE SNR
        sc.links[0].coding = Some(crate::scenario::CodingSection {
            scheme: Scheme::Ldpc,
            decoder: crate::coding::DecoderAlg::PwlMinSum,
            crc_length: 16,
            code_rate: Some(0.5),
            info_length: None,
            iterations: 16,
            polar_design_snr_db: 0.0,
        });
        let opt = RunOptions { frames_override: Some(3), ..Default::default() };
        let res = run_sweep(&sc, &opt).unwrap();
        let l = &res.points[0].links[0];
        assert_eq!(l.frame_errors, 0, "{l:?}");
        assert_eq!(l.bit_errors, 0);
        // 72 sc * 14 symbols * 2 bits * rate 0.5 - 16 CRC bits.
        assert_eq!(l.bits_total, 3 * (72 * 14 * 2 / 2 - 16));
        approx::assert_abs_diff_eq!(
            l.throughput_bps.mean,
            (72.0 * 14.0 - 16.0) / 1e-3,
            epsilon = 1.0
        );
    }

    #[test]
    fn confidence_intervals_behave() {
        let ci = proportion_ci(0, 100);
        assert_eq!(ci.mean, 0.0);
        assert!(ci.low == 0.0 && ci.high > 0.0 && ci.high < 0.06);
        let ci = proportion_ci(50, 100);
        assert!((ci.mean - 0.5).abs() < 1e-12);
        assert!(ci.low > 0.38 && ci.high < 0.62);
        let w = wald_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert!((w.mean - 2.5).abs() < 1e-12 && w.low < 2.5 && w.high > 2.5);
    }
}
