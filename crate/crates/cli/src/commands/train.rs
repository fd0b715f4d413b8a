use super::{json, CmdError, Status};
use crate::settings::{emit, opt, streams, Settings};
use flowfield::trainer::{
    encode_params, heldout_probes, heldout_relative_l2, train, Activation, Head, MlpSpec, Objective, TrainConfig,
    TrainSource, VolumeCoverage,
};
use flowfield::{field_from_flow, RngStream};
use serde::Serialize;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// cfm-single, cfm-multisample or ifm-normalized-field.
    #[arg(long)]
    objective: Option<String>,
    /// Multi-sample size (default: the dataset size; 1 for cfm-single).
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    flow_kind: Option<String>,
    /// Dataset config file (default: 256 points of a 1-D two-component mixture at -2 and 2, sd 0.5).
    #[arg(long)]
    dataset_cfg: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Comma-separated hidden widths (default 32,32).
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `loss.csv`, `params.bin` and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file (also: activation, init_scale, vol_coverage, t_lo, t_hi, heldout).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    objective: String,
    flow_kind: String,
    n_samples: usize,
    n_data: usize,
    steps: usize,
    batch: usize,
    lr: f64,
    widths: Vec<usize>,
    seed: u64,
    initial_loss: f64,
    final_loss: f64,
    heldout_probes: usize,
    heldout_rel_l2: f64,
}

pub fn run(a: Args) -> Result<Status, CmdError> {
    let s = Settings::load(
        a.config.as_deref(),
        &[a.dataset_cfg.as_ref()],
        &[
            ("objective", a.objective.clone()),
            ("N", opt(&a.n)),
            ("kind", a.flow_kind.clone()),
            ("steps", opt(&a.steps)),
            ("lr", opt(&a.lr)),
            ("batch", opt(&a.batch)),
            ("hidden", a.hidden.clone()),
            ("seed", opt(&a.seed)),
        ],
    )?;
    let seed = s.get_or("seed", 0u64)?;
    let mut cfg = s.cfg.clone();
    if !cfg.contains("dataset") {
        for (k, v) in [("dataset", "gaussian-mixture"), ("means", "-2; 2"), ("stds", "0.5, 0.5")] {
            cfg.set(k, v);
        }
    }
    let s = Settings { cfg };
    let (kind, data) = s.target(seed, "gaussian-mixture", 256)?;
    let flow = s.flow("linear-flow-matching", kind.dim())?;
    let d = flow.dim();
    if d != kind.dim() {
        return Err(CmdError::usage(format!("flow dimension {d} does not match the dataset's {}", kind.dim())));
    }
    let n_data = data.len();
    let coupling = s.coupling(&flow, data, seed)?;

    let objective: Objective = s.get_or("objective", Objective::CfmMultisample)?;
    let mut tc = TrainConfig::new(objective, flow.horizon());
    let default_n = if objective == Objective::CfmSingle { 1 } else { coupling.support_len() };
    tc.n_samples = s.get_or("N", default_n)?;
    tc.steps = s.get_or("steps", 10_000usize)?;
    tc.lr = s.get_or("lr", 0.1f64)?;
    tc.batch = s.get_or("batch", 64usize)?;
    tc.vol_coverage = s.get_or("vol_coverage", VolumeCoverage::PathInduced)?;
    tc.t_clip = (
        s.get_or("t_lo", tc.t_clip.0 / flow.horizon())? * flow.horizon(),
        s.get_or("t_hi", tc.t_clip.1 / flow.horizon())? * flow.horizon(),
    );
    let head = Head::for_objective(objective);
    let out_w = if head == Head::NormalizedField { d + 1 } else { d };
    let mut widths = vec![d + 1];
    for w in s.list_or("hidden", &[32.0, 32.0])? {
        if w.fract() != 0.0 || w < 1.0 {
            return Err(CmdError::usage(format!("hidden width {w} is not a positive integer")));
        }
        widths.push(w as usize);
    }
    widths.push(out_w);
    let mut mlp = MlpSpec::new(widths, s.get_or("activation", Activation::Tanh)?, seed);
    mlp.init_scale = s.get_or("init_scale", 1.0f64)?;

    let field = field_from_flow(&flow);
    let source = match objective {
        Objective::IfmNormalizedField => TrainSource::Field(&field),
        _ => TrainSource::Flow(&flow),
    };
    let outcome = train(source, &coupling, &mlp, &tc, &RngStream::new(seed, streams::RUN))?;
    eprintln!("wall clock per step: {:.3} ms", 1e3 * outcome.seconds_per_step);

    let n_heldout = s.get_or("heldout", 1000usize)?;
    let probes = heldout_probes(
        &flow,
        &coupling,
        (tc.t_clip.0, flow.horizon() - tc.t_clip.1),
        n_heldout,
        &mut RngStream::new(seed, streams::PROBES),
    )?;
    let rel = heldout_relative_l2(&mlp, &outcome.params, head, &flow, &coupling, &probes)?;
    let report = Report {
        objective: s.cfg.get("objective").unwrap_or("cfm-multisample").to_string(),
        flow_kind: flow.kind().name().into(),
        n_samples: tc.n_samples,
        n_data,
        steps: tc.steps,
        batch: tc.batch,
        lr: tc.lr,
        widths: mlp.widths.clone(),
        seed,
        initial_loss: outcome.loss_trace[0],
        final_loss: *outcome.loss_trace.last().unwrap(),
        heldout_probes: n_heldout,
        heldout_rel_l2: rel,
    };
    let params = encode_params(&mlp, &outcome.params)?;
    match &a.out {
        Some(dir) => {
            emit(Some(&dir.join("loss.csv")), outcome.loss_csv().as_bytes())?;
            emit(Some(&dir.join("params.bin")), &params)?;
            emit(Some(&dir.join("report.json")), &json(&report))?;
        }
        None => {
            emit(None, outcome.loss_csv().as_bytes())?;
            eprint!("{}", String::from_utf8_lossy(&json(&report)));
        }
    }
    Ok(Status::Pass)
}
