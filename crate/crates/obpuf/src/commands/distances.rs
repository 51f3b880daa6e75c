//! `distances`: Monte Carlo intra/inter distances and their histograms.

use clap::Args;
use obpuf_core::bits::BitString;
use obpuf_core::metrics::{
    empirical_distances, p_inter, p_intra_analytic, DistanceEstimates, EstimatorInputs, InterForm, RateEstimate,
};
use obpuf_core::obfuscation::{ObPufDevice, ObPufParams};
use obpuf_core::rng::{mix, substream};
use serde::{Deserialize, Serialize};

use super::device::calibrate_and_design;
use super::{apply_flags, load_config, params, resolve_seed, usage, CmdResult, CommonArgs, Outcome};
use crate::output::{write_table, Provenance, Table};
use crate::row;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistancesConfig {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub n_ins: usize,
    pub xors: usize,
    pub n_mismatch: usize,
    pub devices: usize,
    pub trials: usize,
    pub flip_rate: f64,
    pub calibration_trials: usize,
    pub design_trials: usize,
    /// Open sessions through the reconfiguration block rather than with the base values.
    pub reconfigure: bool,
    pub seed: Option<u64>,
}

impl Default for DistancesConfig {
    fn default() -> Self {
        Self {
            k: 64,
            m: 3,
            p: 4,
            n_ins: 4,
            xors: 1,
            n_mismatch: 0,
            devices: 20,
            trials: 100_000,
            flip_rate: 0.05,
            calibration_trials: 100_000,
            design_trials: 50,
            reconfigure: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct DistancesArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n_ins: Option<usize>,
    #[arg(long)]
    pub xors: Option<usize>,
    #[arg(long)]
    pub n_mismatch: Option<usize>,
    #[arg(long)]
    pub devices: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub calibration_trials: Option<usize>,
    #[arg(long)]
    pub design_trials: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reconfigure: Option<bool>,
}

/// Builds the device population and runs the estimator.
pub fn estimate(cfg: &DistancesConfig, seed: u64) -> CmdResult<DistanceEstimates> {
    let pr = ObPufParams { k: cfg.k, m: cfg.m, p: cfg.p, n_ins: cfg.n_ins, xors: cfg.xors };
    if cfg.devices < 2 || cfg.trials == 0 {
        return Err(usage("need at least two devices and one trial"));
    }
    params(EstimatorInputs::new(cfg.n_ins, cfg.p, cfg.n_mismatch).validate())?;
    let (cal, set) = calibrate_and_design(&pr, cfg.flip_rate, cfg.calibration_trials, cfg.design_trials, seed)?;
    let mut session_rng = substream(seed, 5);
    let mut devices = Vec::with_capacity(cfg.devices);
    for d in 0..cfg.devices {
        let mut dev = ObPufDevice::sample(&pr, set.clone(), cal.sigma, &mut substream(mix(&[seed, 3, d as u64]), 0))?;
        if cfg.reconfigure {
            let rc: Vec<BitString> =
                (0..cfg.p * cfg.m).map(|_| BitString::random(pr.partial_len(), &mut session_rng)).collect();
            dev.reconfigure_session(&rc, &mut session_rng, false)?;
        } else {
            dev.open_fixed_session();
        }
        devices.push(dev);
    }
    Ok(empirical_distances(&devices, cfg.trials, cfg.n_mismatch, &mut substream(seed, 6))?)
}

pub fn run(common: &CommonArgs, args: &DistancesArgs) -> CmdResult<Outcome> {
    let mut cfg: DistancesConfig = load_config(common.config.as_deref())?;
    apply_flags!(
        args, cfg;
        k, m, p, n_ins, xors, n_mismatch, devices, trials, flip_rate, calibration_trials, design_trials, reconfigure
    );
    let seed = resolve_seed(common.seed, cfg.seed);
    cfg.seed = Some(seed);
    let est = estimate(&cfg, seed)?;
    let prov = Provenance::new("distances", seed, &cfg);

    let inp = EstimatorInputs::new(cfg.n_ins, cfg.p, cfg.n_mismatch);
    let intra_a = p_intra_analytic(&inp);
    let (inter_p, inter_c) = (p_inter(&inp, InterForm::Printed), p_inter(&inp, InterForm::Corrected));
    let mut t = Table::new(&[
        "quantity",
        "hits",
        "trials",
        "rate",
        "ci_low",
        "ci_high",
        "analytic_printed",
        "analytic_corrected",
    ]);
    let mut put = |name: &str, r: &RateEstimate, printed: f64, corrected: f64| {
        t.push(row![name, r.hits, r.trials, r.rate, r.ci_low, r.ci_high, printed, corrected]);
    };
    put("intra", &est.intra, intra_a, intra_a);
    put("intra_protocol", &est.intra_protocol, intra_a, intra_a);
    put("inter", &est.inter, inter_p, inter_c);
    put("inter_protocol", &est.inter_protocol, inter_p, inter_c);
    let est_path = write_table(&common.out, "distances", common.format, &prov, &t)?;

    let mut h = Table::new(&["hd", "intra_count", "inter_count"]);
    for d in 0..=cfg.n_ins {
        h.push(row![d, est.intra_hd_histogram[d], est.inter_hd_histogram[d]]);
    }
    let hist_path = write_table(&common.out, "distance_histogram", common.format, &prov, &h)?;
    Ok(Outcome {
        seed,
        files: vec![est_path, hist_path],
        summary: vec![
            format!("intra {:.5} [{:.5}, {:.5}] vs analytic {intra_a:.5}", est.intra.rate, est.intra.ci_low, est.intra.ci_high),
            format!("inter {:.5} [{:.5}, {:.5}] vs analytic {inter_p:.5}", est.inter.rate, est.inter.ci_low, est.inter.ci_high),
        ],
    })
}
