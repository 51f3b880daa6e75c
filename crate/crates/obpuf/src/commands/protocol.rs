//! `protocol`: genuine and impostor authentication sessions.

use clap::{Args, ValueEnum};
use obpuf_core::apuf::default_threshold;
use obpuf_core::metrics::{min_crps_for_eer, EstimatorInputs, InterForm, RateEstimate};
use obpuf_core::obfuscation::{ObPufDevice, ObPufParams};
use obpuf_core::protocol::{
    enroll, run_session, AuthParams, EnrollOptions, Link, LocalLink, Prover, ServerModel,
    SessionTranscript,
};
use obpuf_core::rng::{mix, substream, StreamRng};
use serde::{Deserialize, Serialize};

use super::device::calibrate_and_design;
use super::{apply_flags, load_config, params, resolve_seed, usage, CmdResult, CommonArgs, Outcome};
use crate::formats::{write_json, write_transcripts, DeviceRecord};
use crate::output::{write_table, Provenance, Table};
use crate::row;
use crate::transport::{ProverServer, TcpLink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    /// In-process link through the wire codec.
    Inproc,
    /// Loopback TCP to a prover thread.
    Socket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EnrollKind {
    Ideal,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub n_ins: usize,
    pub xors: usize,
    pub flip_rate: f64,
    /// Rounds per session; derived from `eer_target` when absent.
    pub n: Option<usize>,
    /// Accept when at most this many rounds mismatch; derived when absent.
    pub n_th: Option<usize>,
    pub n_mismatch: usize,
    pub eer_target: f64,
    pub genuine: usize,
    pub impostors: usize,
    pub transport: TransportKind,
    pub enroll: EnrollKind,
    /// Reliability threshold on `|t_dif|`; five noise deviations when absent.
    pub theta: Option<f64>,
    pub calibration_trials: usize,
    pub design_trials: usize,
    pub seed: Option<u64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            k: 64,
            m: 3,
            p: 4,
            n_ins: 8,
            xors: 2,
            flip_rate: 0.05,
            n: None,
            n_th: None,
            n_mismatch: 0,
            eer_target: 1e-6,
            genuine: 1000,
            impostors: 1000,
            transport: TransportKind::Inproc,
            enroll: EnrollKind::Ideal,
            theta: None,
            calibration_trials: 100_000,
            design_trials: 50,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProtocolArgs {
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
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_th: Option<usize>,
    #[arg(long)]
    pub n_mismatch: Option<usize>,
    #[arg(long)]
    pub eer_target: Option<f64>,
    /// Genuine sessions.
    #[arg(long)]
    pub genuine: Option<usize>,
    /// Impostor devices, one session each.
    #[arg(long)]
    pub impostors: Option<usize>,
    #[arg(long, value_enum)]
    pub transport: Option<TransportKind>,
    #[arg(long, value_enum)]
    pub enroll: Option<EnrollKind>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub calibration_trials: Option<usize>,
    #[arg(long)]
    pub design_trials: Option<usize>,
}

/// Transcripts of both populations plus what produced them.
#[derive(Debug)]
pub struct ProtocolRun {
    pub auth: AuthParams,
    pub noise_sigma: f64,
    pub theta: f64,
    pub device: ObPufDevice,
    pub enrollment: ServerModel,
    pub genuine: Vec<SessionTranscript>,
    pub impostor: Vec<SessionTranscript>,
}

/// `n` and `n_th`, from the config or from the capability estimators.
pub fn auth_params(cfg: &ProtocolConfig) -> CmdResult<AuthParams> {
    let (n, n_th) = match (cfg.n, cfg.n_th) {
        (Some(n), Some(t)) => (n, t),
        (n, t) => {
            let inp = EstimatorInputs::new(cfg.n_ins, cfg.p, cfg.n_mismatch).with_p_intra_puf(cfg.flip_rate);
            params(inp.validate())?;
            let row = min_crps_for_eer(&inp, InterForm::Printed, cfg.eer_target)?;
            match n {
                // A caller-chosen n keeps the threshold from the estimator only if it fits.
                Some(n) => (n, t.unwrap_or(row.n_eer.min(n))),
                None => (row.n, t.unwrap_or(row.n_eer)),
            }
        }
    };
    let auth = AuthParams { n, n_th, n_mismatch: cfg.n_mismatch };
    params(auth.validate(cfg.n_ins))?;
    Ok(auth)
}

fn sessions_over<L: Link>(
    model: &mut ServerModel,
    link: &mut L,
    auth: &AuthParams,
    ids: std::ops::Range<u64>,
    rng: &mut StreamRng,
) -> CmdResult<Vec<SessionTranscript>> {
    ids.map(|id| run_session(model, link, auth, id, rng).map_err(|e| anyhow::anyhow!("{e}").into())).collect()
}

/// Runs `ids` sessions of `prover` against `model` over the chosen transport.
fn drive(
    transport: TransportKind,
    prover: Prover,
    model: &mut ServerModel,
    auth: &AuthParams,
    ids: std::ops::Range<u64>,
    rng: &mut StreamRng,
) -> CmdResult<Vec<SessionTranscript>> {
    match transport {
        TransportKind::Inproc => sessions_over(model, &mut LocalLink::new(prover), auth, ids, rng),
        TransportKind::Socket => {
            let server = ProverServer::spawn(prover)?;
            let mut link = TcpLink::connect(server.addr())?;
            let out = sessions_over(model, &mut link, auth, ids, rng);
            drop(link);
            server.join()?;
            out
        }
    }
}

pub fn simulate(cfg: &ProtocolConfig, seed: u64) -> CmdResult<ProtocolRun> {
    let pr = ObPufParams { k: cfg.k, m: cfg.m, p: cfg.p, n_ins: cfg.n_ins, xors: cfg.xors };
    params(pr.validate())?;
    if !(cfg.flip_rate > 0.0 && cfg.flip_rate < 0.5) {
        return Err(usage("flip_rate must lie in (0, 0.5)"));
    }
    let auth = auth_params(cfg)?;
    let (cal, set) = calibrate_and_design(&pr, cfg.flip_rate, cfg.calibration_trials, cfg.design_trials, seed)?;
    let theta = cfg.theta.unwrap_or_else(|| default_threshold(cal.sigma));
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(usage("theta must be finite and non-negative"));
    }
    let device = ObPufDevice::sample(&pr, set.clone(), cal.sigma, &mut substream(seed, 3))?;

    let mut server_rng = substream(seed, 4);
    let opts = match cfg.enroll {
        EnrollKind::Ideal => EnrollOptions::ideal(theta),
        EnrollKind::Learned => EnrollOptions::learned(theta),
    };
    let mut model = enroll(&device, 0, &opts, &mut server_rng)?;
    let enrollment = model.clone();

    let g = cfg.genuine as u64;
    let prover = Prover::new(device.clone(), substream(seed, 5), true);
    let genuine = drive(cfg.transport, prover, &mut model, &auth, 0..g, &mut server_rng)?;

    let mut impostor = Vec::with_capacity(cfg.impostors);
    for s in 0..cfg.impostors as u64 {
        let other = ObPufDevice::sample(&pr, set.clone(), cal.sigma, &mut substream(mix(&[seed, 6, s]), 0))?;
        let prover = Prover::new(other, substream(mix(&[seed, 7, s]), 0), true);
        impostor.extend(drive(cfg.transport, prover, &mut model, &auth, g + s..g + s + 1, &mut server_rng)?);
    }
    Ok(ProtocolRun { auth, noise_sigma: cal.sigma, theta, device, enrollment, genuine, impostor })
}

pub fn run(common: &CommonArgs, args: &ProtocolArgs) -> CmdResult<Outcome> {
    let mut cfg: ProtocolConfig = load_config(common.config.as_deref())?;
    apply_flags!(
        args, cfg;
        k, m, p, n_ins, xors, flip_rate, n_mismatch, eer_target, genuine, impostors, transport, enroll,
        calibration_trials, design_trials
    );
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if args.n_th.is_some() {
        cfg.n_th = args.n_th;
    }
    if args.theta.is_some() {
        cfg.theta = args.theta;
    }
    let seed = resolve_seed(common.seed, cfg.seed);
    cfg.seed = Some(seed);
    let run = simulate(&cfg, seed)?;
    let prov = Provenance::new("protocol", seed, &cfg);

    let out = &common.out;
    let genuine_path = out.join("genuine.jsonl");
    let impostor_path = out.join("impostor.jsonl");
    write_transcripts(&genuine_path, &run.genuine)?;
    write_transcripts(&impostor_path, &run.impostor)?;
    let enrollment_path = out.join("enrollment.json");
    write_json(&enrollment_path, &run.enrollment)?;
    let device_path = out.join("device.json");
    write_json(&device_path, &DeviceRecord::from_device(&run.device))?;

    let mut t = Table::new(&[
        "population",
        "sessions",
        "accepted",
        "rejected",
        "accept_rate",
        "ci_low",
        "ci_high",
        "mean_mismatches",
        "max_mismatches",
        "n",
        "n_th",
        "n_mismatch",
        "noise_sigma",
        "theta",
    ]);
    let mut lines = Vec::new();
    for (name, ts) in [("genuine", &run.genuine), ("impostor", &run.impostor)] {
        let accepted = ts.iter().filter(|t| t.decision.is_some_and(|d| d.accept)).count();
        let mism: Vec<usize> = ts.iter().map(SessionTranscript::mismatches).collect();
        let mean = if mism.is_empty() { 0.0 } else { mism.iter().sum::<usize>() as f64 / mism.len() as f64 };
        let rate = RateEstimate::new(accepted as u64, ts.len() as u64);
        t.push(row![
            name,
            ts.len(),
            accepted,
            ts.len() - accepted,
            rate.rate,
            rate.ci_low,
            rate.ci_high,
            mean,
            mism.iter().max().copied().unwrap_or(0),
            run.auth.n,
            run.auth.n_th,
            run.auth.n_mismatch,
            run.noise_sigma,
            run.theta
        ]);
        lines.push(format!("{name}: {accepted} of {} accepted", ts.len()));
    }
    let summary_path = write_table(out, "protocol_summary", common.format, &prov, &t)?;
    Ok(Outcome {
        seed,
        files: vec![genuine_path, impostor_path, enrollment_path, device_path, summary_path],
        summary: lines,
    })
}
