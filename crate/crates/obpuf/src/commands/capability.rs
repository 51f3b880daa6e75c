//! `capability`: minimum rounds per EER target and the comparison against
//! the published operating points.

use clap::{Args, ValueEnum};
use obpuf_core::metrics::{
    min_crps_for_eer, p_min, CapabilityRow, EstimatorInputs, InterForm, DEFAULT_P_INTRA_PUF, EER_TARGETS,
    REFERENCE_ROWS,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{apply_flags, load_config, params, usage, CmdResult, CommonArgs, Outcome};
use crate::output::{write_table, Provenance, Table};
use crate::row;

/// Tolerances used for the `within_tolerance` flag of the discrepancy table.
pub const N_REL_TOL: f64 = 0.02;
pub const N_EER_TOL: i64 = 2;
pub const LOG10_TOL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FormChoice {
    Printed,
    Corrected,
    Both,
}

impl FormChoice {
    fn forms(self) -> &'static [InterForm] {
        match self {
            FormChoice::Printed => &[InterForm::Printed],
            FormChoice::Corrected => &[InterForm::Corrected],
            FormChoice::Both => &[InterForm::Printed, InterForm::Corrected],
        }
    }
}

fn form_name(f: InterForm) -> &'static str {
    match f {
        InterForm::Printed => "printed",
        InterForm::Corrected => "corrected",
    }
}

/// `(n_ins, p, n_mismatch)`.
pub type RowSpec = (usize, usize, usize);

pub fn parse_row(s: &str) -> Result<RowSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected n_ins,p,n_mismatch".into());
    }
    let num = |x: &str| x.parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(parts[0])?, num(parts[1])?, num(parts[2])?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapabilityConfig {
    pub rows: Vec<RowSpec>,
    pub targets: Vec<f64>,
    pub form: FormChoice,
    pub p_intra_puf: f64,
}

impl Default for CapabilityConfig {
    fn default() -> Self {
        Self {
            rows: REFERENCE_ROWS.iter().map(|r| (r.n_ins, r.p, r.n_mismatch)).collect(),
            targets: EER_TARGETS.to_vec(),
            form: FormChoice::Printed,
            p_intra_puf: DEFAULT_P_INTRA_PUF,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CapabilityArgs {
    /// Configuration `n_ins,p,n_mismatch`; repeat for several rows.
    #[arg(long = "row", value_parser = parse_row)]
    pub rows: Vec<RowSpec>,
    /// EER target; repeat for several.
    #[arg(long = "target")]
    pub targets: Vec<f64>,
    /// Inter-distance estimator.
    #[arg(long, value_enum)]
    pub form: Option<FormChoice>,
    #[arg(long)]
    pub p_intra_puf: Option<f64>,
}

/// Every (row, target, form) combination; unreachable targets come back as errors.
pub fn capability_rows(cfg: &CapabilityConfig) -> Vec<(RowSpec, f64, InterForm, obpuf_core::Result<CapabilityRow>)> {
    let mut out = Vec::new();
    for &row in &cfg.rows {
        let inp = EstimatorInputs::new(row.0, row.1, row.2).with_p_intra_puf(cfg.p_intra_puf);
        for &target in &cfg.targets {
            for &form in cfg.form.forms() {
                out.push((row, target, form, min_crps_for_eer(&inp, form, target)));
            }
        }
    }
    out
}

/// One line of the discrepancy table.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub row: RowSpec,
    pub target: f64,
    pub form: InterForm,
    pub computed: Option<CapabilityRow>,
    pub ref_n: usize,
    pub ref_n_eer: usize,
    pub ref_log10_far: f64,
    pub ref_log10_frr: f64,
}

impl Discrepancy {
    pub fn n_rel_err(&self) -> Option<f64> {
        self.computed.map(|c| (c.n as f64 - self.ref_n as f64) / self.ref_n as f64)
    }

    /// Published thresholds count from one.
    pub fn n_eer_diff(&self) -> Option<i64> {
        self.computed.map(|c| (c.n_eer + 1) as i64 - self.ref_n_eer as i64)
    }

    pub fn far_diff(&self) -> Option<f64> {
        self.computed.map(|c| c.log10_far - self.ref_log10_far)
    }

    pub fn frr_diff(&self) -> Option<f64> {
        self.computed.map(|c| c.log10_frr - self.ref_log10_frr)
    }

    pub fn within_tolerance(&self) -> bool {
        match (self.n_rel_err(), self.n_eer_diff(), self.far_diff(), self.frr_diff()) {
            (Some(n), Some(e), Some(fa), Some(fr)) => {
                n.abs() <= N_REL_TOL && e.abs() <= N_EER_TOL && fa.abs() <= LOG10_TOL && fr.abs() <= LOG10_TOL
            }
            _ => false,
        }
    }
}

/// Both estimator forms against every published point.
pub fn discrepancies(p_intra_puf: f64) -> Vec<Discrepancy> {
    let mut out = Vec::new();
    for r in &REFERENCE_ROWS {
        let inp = r.inputs().with_p_intra_puf(p_intra_puf);
        for (target, pt) in EER_TARGETS.iter().zip(&r.points) {
            for form in [InterForm::Printed, InterForm::Corrected] {
                out.push(Discrepancy {
                    row: (r.n_ins, r.p, r.n_mismatch),
                    target: *target,
                    form,
                    computed: min_crps_for_eer(&inp, form, *target).ok(),
                    ref_n: pt.n,
                    ref_n_eer: pt.n_eer,
                    ref_log10_far: pt.log10_far,
                    ref_log10_frr: pt.log10_frr,
                });
            }
        }
    }
    out
}

pub fn run(common: &CommonArgs, args: &CapabilityArgs) -> CmdResult<Outcome> {
    let mut cfg: CapabilityConfig = load_config(common.config.as_deref())?;
    if !args.rows.is_empty() {
        cfg.rows = args.rows.clone();
    }
    if !args.targets.is_empty() {
        cfg.targets = args.targets.clone();
    }
    apply_flags!(args, cfg; form, p_intra_puf);
    for &(n_ins, p, nm) in &cfg.rows {
        params(EstimatorInputs::new(n_ins, p, nm).with_p_intra_puf(cfg.p_intra_puf).validate())?;
    }
    if let Some(t) = cfg.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(usage(format!("EER target {t} must lie in (0, 1)")));
    }
    // Deterministic; the seed only labels the provenance line.
    let seed = common.seed.unwrap_or(0);
    let prov = Provenance::new("capability", seed, &cfg);

    let mut t = Table::new(&[
        "n_ins",
        "p",
        "n_mismatch",
        "form",
        "target_eer",
        "p_inter",
        "p_intra",
        "p_min",
        "n",
        "n_eer",
        "n_th",
        "log10_far",
        "log10_frr",
        "status",
    ]);
    let mut unreachable = 0;
    for ((n_ins, p, nm), target, form, res) in capability_rows(&cfg) {
        let pm = p_min(&EstimatorInputs::new(n_ins, p, nm).with_p_intra_puf(cfg.p_intra_puf));
        match res {
            Ok(c) => t.push(row![
                n_ins,
                p,
                nm,
                form_name(form),
                target,
                c.p_inter,
                c.p_intra,
                pm,
                c.n,
                c.n_eer + 1,
                c.n_eer,
                c.log10_far,
                c.log10_frr,
                "ok"
            ]),
            Err(e) => {
                unreachable += 1;
                t.push(row![n_ins, p, nm, form_name(form), target, Value::Null, Value::Null, pm, Value::Null, Value::Null, Value::Null, Value::Null, Value::Null, e.to_string()])
            }
        }
    }
    let table_path = write_table(&common.out, "capability", common.format, &prov, &t)?;
    let mut files = vec![table_path];
    let mut summary = vec![format!("{} capability rows, {unreachable} unreachable", t.rows.len())];

    if cfg.p_intra_puf == DEFAULT_P_INTRA_PUF {
        let mut d = Table::new(&[
            "n_ins",
            "p",
            "n_mismatch",
            "target_eer",
            "form",
            "n",
            "ref_n",
            "n_rel_err",
            "n_eer",
            "ref_n_eer",
            "n_eer_diff",
            "log10_far",
            "ref_log10_far",
            "far_diff",
            "log10_frr",
            "ref_log10_frr",
            "frr_diff",
            "within_tolerance",
        ]);
        let rows = discrepancies(cfg.p_intra_puf);
        let within = rows.iter().filter(|r| r.within_tolerance()).count();
        for r in &rows {
            let c = r.computed;
            d.push(row![
                r.row.0,
                r.row.1,
                r.row.2,
                r.target,
                form_name(r.form),
                c.map(|c| c.n),
                r.ref_n,
                r.n_rel_err(),
                c.map(|c| c.n_eer + 1),
                r.ref_n_eer,
                r.n_eer_diff(),
                c.map(|c| c.log10_far),
                r.ref_log10_far,
                r.far_diff(),
                c.map(|c| c.log10_frr),
                r.ref_log10_frr,
                r.frr_diff(),
                r.within_tolerance()
            ]);
        }
        files.push(write_table(&common.out, "discrepancy", common.format, &prov, &d)?);
        summary.push(format!("{within} of {} published points reproduced within tolerance", rows.len()));
    }
    Ok(Outcome { seed, files, summary })
}
