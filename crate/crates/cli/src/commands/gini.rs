use super::{json, CmdError, Status};
use crate::settings::{emit, opt, streams, Settings};
use flowfield::superposition::{drop_anchor_degradation, gini_sweep, DropAnchorReport};
use flowfield::RngStream;
use serde::Serialize;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    flow_kind: Option<String>,
    /// Comma-separated batch sizes; N < 2 is skipped.
    #[arg(long = "N-list")]
    n_list: Option<String>,
    /// Anchored points per batch size.
    #[arg(long)]
    trials: Option<usize>,
    /// Time as a fraction of the horizon (default 0.3).
    #[arg(long)]
    t: Option<f64>,
    /// Dataset config file (default: 16384 standard-Gaussian points in D = 8).
    #[arg(long)]
    dataset_cfg: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `gini.csv` and `summary.json`; stdout/stderr when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct ArgmaxRow {
    n: usize,
    anchor_argmax_freq: f64,
}

#[derive(Serialize)]
struct Summary {
    flow_kind: String,
    t: f64,
    trials: usize,
    anchor_argmax: Vec<ArgmaxRow>,
    drop_anchor: DropAnchorReport,
}

pub fn run(a: Args) -> Result<Status, CmdError> {
    let s = Settings::load(
        a.config.as_deref(),
        &[a.dataset_cfg.as_ref()],
        &[
            ("kind", a.flow_kind.clone()),
            ("n_list", a.n_list.clone()),
            ("trials", opt(&a.trials)),
            ("t", opt(&a.t)),
            ("seed", opt(&a.seed)),
        ],
    )?;
    let seed = s.get_or("seed", 0u64)?;
    let mut cfg = s.cfg.clone();
    if !cfg.contains("D") {
        cfg.set("D", "8");
    }
    let s = crate::settings::Settings { cfg };
    let (kind, data) = s.target(seed, "standard-gaussian", 16384)?;
    let flow = s.flow("ve-diffusion", kind.dim())?;
    if flow.dim() != kind.dim() {
        return Err(CmdError::usage(format!("flow dimension {} does not match the dataset's {}", flow.dim(), kind.dim())));
    }
    let coupling = s.coupling(&flow, data, seed)?;
    let trials = s.get_or("trials", 1000usize)?;
    let t = s.get_or("t", 0.3f64)? * flow.horizon();
    let mut ns = Vec::new();
    for v in s.list_or("n_list", &[16.0, 256.0, 2048.0])? {
        if v.fract() != 0.0 || v < 0.0 {
            return Err(CmdError::usage(format!("batch size {v} is not a nonnegative integer")));
        }
        if v < 2.0 {
            eprintln!("warning: skipping N = {v}; the Gini coefficient needs N >= 2");
        } else {
            ns.push(v as usize);
        }
    }
    if ns.is_empty() {
        return Err(CmdError::usage("no batch size N >= 2 given"));
    }

    let rng = RngStream::new(seed, streams::RUN);
    let rows = gini_sweep(&flow, &coupling, &ns, trials, t, &rng)?;
    let n_drop = *ns.iter().max().unwrap();
    let drop = drop_anchor_degradation(&flow, &coupling, n_drop, trials, t, &RngStream::new(seed, streams::PROBES))?;

    let mut csv = String::from("N,mean_gini,stderr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.n, r.mean_gini, r.stderr));
    }
    let summary = Summary {
        flow_kind: flow.kind().name().into(),
        t,
        trials,
        anchor_argmax: rows.iter().map(|r| ArgmaxRow { n: r.n, anchor_argmax_freq: r.anchor_argmax_freq }).collect(),
        drop_anchor: drop,
    };
    match &a.out {
        Some(dir) => {
            emit(Some(&dir.join("gini.csv")), csv.as_bytes())?;
            emit(Some(&dir.join("summary.json")), &json(&summary))?;
        }
        None => {
            emit(None, csv.as_bytes())?;
            eprint!("{}", String::from_utf8_lossy(&json(&summary)));
        }
    }
    Ok(Status::Pass)
}
