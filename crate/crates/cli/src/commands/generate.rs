use super::{json, CmdError, Status};
use crate::settings::{emit, opt, streams, Settings};
use flowfield::datasets::make_dataset;
use flowfield::diagnostics::{energy_distance, permutation_null};
use flowfield::dynamics::{transport_samples, IntegratorConfig, Route, Scheme};
use flowfield::{field_from_flow, RngStream};
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    flow_kind: Option<String>,
    /// `flow` (weighted conditional velocities) or `field` (E_x / E_t of the superposed field).
    #[arg(long)]
    route: Option<String>,
    /// Dataset config file (keys: dataset, n_data, means, stds, covs, weights, noise, cells, size, point, D, n_source).
    #[arg(long)]
    dataset_cfg: Option<PathBuf>,
    #[arg(long)]
    n_particles: Option<usize>,
    /// Integration steps.
    #[arg(long)]
    steps: Option<usize>,
    /// `heun` or `euler`.
    #[arg(long)]
    scheme: Option<String>,
    /// Permutations for the energy-distance null.
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `terminals.csv` and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    flow_kind: String,
    route: String,
    n_particles: usize,
    n_data: usize,
    steps: usize,
    scheme: String,
    seed: u64,
    energy_distance: f64,
    null_threshold_q95: f64,
    n_perm: usize,
    /// `false` when the target is a point mass and the permutation null is identically zero.
    test_applicable: bool,
    pass: bool,
}

pub fn run(a: Args) -> Result<Status, CmdError> {
    let s = Settings::load(
        a.config.as_deref(),
        &[a.dataset_cfg.as_ref()],
        &[
            ("kind", a.flow_kind.clone()),
            ("route", a.route.clone()),
            ("n_particles", opt(&a.n_particles)),
            ("steps", opt(&a.steps)),
            ("scheme", a.scheme.clone()),
            ("n_perm", opt(&a.n_perm)),
            ("seed", opt(&a.seed)),
        ],
    )?;
    let seed = s.get_or("seed", 0u64)?;
    let (kind, data) = s.target(seed, "gaussian-mixture", 1000)?;
    let flow = s.flow("linear-flow-matching", kind.dim())?;
    if flow.dim() != kind.dim() {
        return Err(CmdError::usage(format!("flow dimension {} does not match the dataset's {}", flow.dim(), kind.dim())));
    }
    let n_data = data.len();
    let coupling = s.coupling(&flow, data, seed)?;
    let n_particles = s.get_or("n_particles", 1000usize)?;
    let n_perm = s.get_or("n_perm", 200usize)?;
    let route_name: String = s.get_or("route", "flow".to_string())?;
    let mut icfg = IntegratorConfig::new(flow.horizon());
    icfg.n_steps = s.get_or("steps", 50usize)?;
    icfg.scheme = s.get_or("scheme", Scheme::Heun)?;
    if n_particles < 2 {
        return Err(CmdError::usage("need at least 2 particles"));
    }

    let field = field_from_flow(&flow);
    let route = match route_name.as_str() {
        "flow" => Route::Flow(&flow),
        "field" => Route::Field(&field),
        other => return Err(CmdError::usage(format!("unknown route '{other}'; valid: flow, field"))),
    };
    let clock = Instant::now();
    let result = transport_samples(route, &coupling, n_particles, &icfg, &RngStream::new(seed, streams::RUN))?;
    eprintln!("transport: {:.2} s", clock.elapsed().as_secs_f64());
    let terminals = result.terminals();

    let fresh_a = make_dataset(&kind, n_particles, &mut RngStream::new(seed, streams::FRESH_A))?;
    let fresh_b = make_dataset(&kind, n_particles, &mut RngStream::new(seed, streams::FRESH_B))?;
    let observed = energy_distance(&terminals, &fresh_a)?;
    let null = permutation_null(&fresh_a, &fresh_b, n_perm, &mut RngStream::new(seed, streams::PERMUTATION))?;
    let q95 = null.quantile(0.95);
    let applicable = fresh_a.iter().chain(&fresh_b).any(|p| p != &fresh_a[0]);
    let pass = !applicable || observed <= q95;

    let report = Report {
        flow_kind: flow.kind().name().into(),
        route: route_name,
        n_particles,
        n_data,
        steps: icfg.n_steps,
        scheme: format!("{:?}", icfg.scheme).to_lowercase(),
        seed,
        energy_distance: observed,
        null_threshold_q95: q95,
        n_perm,
        test_applicable: applicable,
        pass,
    };
    let csv = result.terminal_csv();
    match &a.out {
        Some(dir) => {
            emit(Some(&dir.join("terminals.csv")), csv.as_bytes())?;
            emit(Some(&dir.join("report.json")), &json(&report))?;
        }
        None => {
            emit(None, csv.as_bytes())?;
            eprint!("{}", String::from_utf8_lossy(&json(&report)));
        }
    }
    if !applicable {
        eprintln!("warning: target is a point mass; energy-distance test skipped");
    }
    Ok(if pass {
        Status::Pass
    } else {
        Status::Fail(format!("energy distance {observed:e} exceeds the null 95% quantile {q95:e}"))
    })
}
