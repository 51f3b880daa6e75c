//! `device` and `calibrate`.

use clap::Args;
use obpuf_core::apuf::{calibrate_noise, default_threshold, NoiseCalibration};
use obpuf_core::obfuscation::{design_pattern_set, ObPufDevice, ObPufParams, PatternSet};
use obpuf_core::rng::{mix, substream};
use serde::{Deserialize, Serialize};

use super::{apply_flags, load_config, params, resolve_seed, CmdResult, CommonArgs, Outcome};
use crate::formats::{write_json, DeviceRecord};
use crate::output::{write_table, Provenance, Table};
use crate::row;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub n_ins: usize,
    pub xors: usize,
    /// Target two-evaluation flip rate of a single APUF.
    pub flip_rate: f64,
    pub calibration_trials: usize,
    pub design_trials: usize,
    pub seed: Option<u64>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            k: 64,
            m: 3,
            p: 4,
            n_ins: 4,
            xors: 2,
            flip_rate: 0.05,
            calibration_trials: 100_000,
            design_trials: 50,
            seed: None,
        }
    }
}

impl DeviceConfig {
    pub fn params(&self) -> ObPufParams {
        ObPufParams { k: self.k, m: self.m, p: self.p, n_ins: self.n_ins, xors: self.xors }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct DeviceArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// Inserted bits per pattern.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of patterns.
    #[arg(long)]
    pub p: Option<usize>,
    /// APUFs in the PUF block.
    #[arg(long)]
    pub n_ins: Option<usize>,
    /// APUFs in the reconfiguration XOR block.
    #[arg(long)]
    pub xors: Option<usize>,
    #[arg(long)]
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub calibration_trials: Option<usize>,
    #[arg(long)]
    pub design_trials: Option<usize>,
}

/// Noise calibration plus pattern design, seeded from `seed`.
pub(crate) fn calibrate_and_design(
    p: &ObPufParams,
    flip_rate: f64,
    calibration_trials: usize,
    design_trials: usize,
    seed: u64,
) -> CmdResult<(NoiseCalibration, PatternSet)> {
    params(p.validate())?;
    if p.xors == 0 {
        return Err(super::usage("xors must be at least 1"));
    }
    let cal = params(calibrate_noise(p.k, flip_rate, calibration_trials, mix(&[seed, 1])))?;
    let set = design_pattern_set(p, mix(&[seed, 2]), design_trials)?;
    Ok((cal, set))
}

pub fn run_device(common: &CommonArgs, args: &DeviceArgs) -> CmdResult<Outcome> {
    let mut cfg: DeviceConfig = load_config(common.config.as_deref())?;
    apply_flags!(args, cfg; k, m, p, n_ins, xors, flip_rate, calibration_trials, design_trials);
    let seed = resolve_seed(common.seed, cfg.seed);
    cfg.seed = Some(seed);
    let pr = cfg.params();
    let (cal, set) = calibrate_and_design(&pr, cfg.flip_rate, cfg.calibration_trials, cfg.design_trials, seed)?;
    let dev = ObPufDevice::sample(&pr, set, cal.sigma, &mut substream(seed, 3))?;

    let device_path = common.out.join("device.json");
    write_json(&device_path, &DeviceRecord::from_device(&dev))?;
    let prov = Provenance::new("device", seed, &cfg);
    let mut t = Table::new(&["k", "m", "p", "n_ins", "xors", "noise_sigma", "flip_rate", "default_theta"]);
    t.push(row![pr.k, pr.m, pr.p, pr.n_ins, pr.xors, cal.sigma, cal.flip_rate, default_threshold(cal.sigma)]);
    let summary = write_table(&common.out, "device_summary", common.format, &prov, &t)?;
    Ok(Outcome {
        seed,
        files: vec![device_path, summary],
        summary: vec![format!("noise sigma {:.6} (measured flip rate {:.4})", cal.sigma, cal.flip_rate)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub k: usize,
    pub flip_rate: f64,
    pub trials: usize,
    pub seed: Option<u64>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self { k: 64, flip_rate: 0.05, trials: 100_000, seed: None }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

pub fn run_calibrate(common: &CommonArgs, args: &CalibrateArgs) -> CmdResult<Outcome> {
    let mut cfg: CalibrateConfig = load_config(common.config.as_deref())?;
    apply_flags!(args, cfg; k, flip_rate, trials);
    let seed = resolve_seed(common.seed, cfg.seed);
    cfg.seed = Some(seed);
    let cal = params(calibrate_noise(cfg.k, cfg.flip_rate, cfg.trials, seed))?;
    let prov = Provenance::new("calibrate", seed, &cfg);
    let mut t = Table::new(&["k", "target_flip_rate", "trials", "noise_sigma", "flip_rate", "default_theta"]);
    t.push(row![cfg.k, cfg.flip_rate, cfg.trials, cal.sigma, cal.flip_rate, default_threshold(cal.sigma)]);
    let path = write_table(&common.out, "calibration", common.format, &prov, &t)?;
    Ok(Outcome {
        seed,
        files: vec![path],
        summary: vec![format!("noise sigma {:.6} gives flip rate {:.4}", cal.sigma, cal.flip_rate)],
    })
}
