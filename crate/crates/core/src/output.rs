//! Result serialization: per-point CSV tables, an optional per-frame dump,
//! and a JSON run manifest tying the outputs to the scenario and seed.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::engine::{RunOptions, SweepResult};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// FNV-1a over the canonical (re-serialized) scenario text, so two runs can
/// be compared without shipping the file itself.
pub fn scenario_hash(scenario: &Scenario) -> Result<String> {
    let text = scenario.to_toml_string()?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    crate_version: &'a str,
    scenario_hash: String,
    master_seed: u64,
    frames_per_point: usize,
    sweep_parameter: String,
    sweep_values: &'a [f64],
}

/// Writes `results.csv`, `manifest.json` and (when frames were recorded)
/// `frames.csv` into `dir`, creating it if needed.
pub fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    options: &RunOptions,
    result: &SweepResult,
) -> Result<()> {
    fs::create_dir_all(dir)?;

    let csv_path = dir.join("results.csv");
    let mut csv = fs::File::create(&csv_path)?;
    writeln!(
        csv,
        "sweep_value,link_id,frames,bits_total,bit_errors,frame_errors,\
         ber,ber_ci_low,ber_ci_high,fer,fer_ci_low,fer_ci_high,\
         throughput_bps,throughput_ci_low,throughput_ci_high"
    )?;
    for point in &result.points {
        for l in &point.links {
            writeln!(
                csv,
                "{},{},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:.3},{:.3},{:.3}",
                point.sweep_value,
                l.link_id,
                l.frames,
                l.bits_total,
                l.bit_errors,
                l.frame_errors,
                l.ber.mean,
                l.ber.low,
                l.ber.high,
                l.fer.mean,
                l.fer.low,
                l.fer.high,
                l.throughput_bps.mean,
                l.throughput_bps.low,
                l.throughput_bps.high,
            )?;
        }
    }

    if result.points.iter().any(|p| !p.frames.is_empty()) {
        let frames_path = dir.join("frames.csv");
        let mut f = fs::File::create(&frames_path)?;
        writeln!(
            f,
            "sweep_value,frame,link_id,cqi,pmi,ri,qam_order,info_bits,bit_errors,frame_error"
        )?;
        for point in &result.points {
            for r in &point.frames {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{},{},{}",
                    point.sweep_value,
                    r.frame,
                    r.link_id,
                    r.cqi,
                    r.pmi,
                    r.ri,
                    r.qam_order,
                    r.info_bits,
                    r.bit_errors,
                    u8::from(r.frame_error),
                )?;
            }
        }
    }

    let manifest = Manifest {
        schema_version: crate::scenario::SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION"),
        scenario_hash: scenario_hash(scenario)?,
        master_seed: options.seed_override.unwrap_or(scenario.sweep.master_seed),
        frames_per_point: options
            .frames_override
            .unwrap_or(scenario.sweep.frames_per_point),
        sweep_parameter: format!("{:?}", scenario.sweep.parameter),
        sweep_values: &scenario.sweep.values,
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("manifest serialization failed: {e}")))?;
    fs::write(&manifest_path, text)?;
    Ok(())
}
