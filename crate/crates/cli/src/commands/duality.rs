use super::{json, CmdError, Status};
use crate::settings::{emit, opt, streams, Settings};
use flowfield::diagnostics::{duality_check, duality_report, random_probes, DualityReport};
use flowfield::{gaussian_draw, EndpointPair, FieldSpec, FlowKind, RngStream};
use serde::Serialize;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Flow kind; `ifm-canonical` runs the field-first direction.
    #[arg(long)]
    flow_kind: Option<String>,
    /// Data dimension D.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of random in-slab probes.
    #[arg(long)]
    probes: Option<usize>,
    /// Number of random endpoint pairs the probes are drawn along.
    #[arg(long)]
    pairs: Option<usize>,
    /// Largest accepted relative error (default 1e-10, or 1e-6 for ifm-canonical).
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file (keys: kind, D, T, s, d, ve_variant, probes, pairs, tolerance, seed).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct Output<'a> {
    flow_kind: &'a str,
    direction: &'a str,
    dim: usize,
    seed: u64,
    #[serde(flatten)]
    report: &'a DualityReport,
    max_rel_err: f64,
    tolerance: f64,
    pass: bool,
}

pub fn run(a: Args) -> Result<Status, CmdError> {
    let s = Settings::load(
        a.config.as_deref(),
        &[],
        &[
            ("kind", a.flow_kind.clone()),
            ("D", opt(&a.dim)),
            ("probes", opt(&a.probes)),
            ("pairs", opt(&a.pairs)),
            ("tolerance", opt(&a.tolerance)),
            ("seed", opt(&a.seed)),
        ],
    )?;
    let flow = s.flow("linear-flow-matching", 2)?;
    let seed = s.get_or("seed", 0u64)?;
    let n_probes = s.get_or("probes", 1000usize)?;
    let n_pairs = s.get_or("pairs", 8usize)?;
    let field_first = flow.kind() == FlowKind::IfmCanonical;
    let tolerance = s.get_or("tolerance", if field_first { 1e-6 } else { 1e-10 })?;
    if n_probes == 0 || n_pairs == 0 {
        return Err(CmdError::usage("probes and pairs must be positive"));
    }

    let mut rng = RngStream::new(seed, streams::PROBES);
    let d = flow.dim();
    let pairs: Vec<EndpointPair> = (0..n_pairs)
        .map(|_| {
            let x0 = gaussian_draw(&mut rng, d);
            let xt = flow.kind().is_two_sided().then(|| gaussian_draw(&mut rng, d));
            EndpointPair::new(x0, xt)
        })
        .collect::<Result<_, _>>()?;
    let probes = random_probes(&flow, &pairs, n_probes, &mut rng)?;
    let report = if field_first {
        let field = FieldSpec::ifm_canonical(d, flow.horizon())?;
        let flux = field.total_flux().expect("canonical field has a closed-form flux");
        duality_check(&field, flux, &flow, &pairs, &probes)?
    } else {
        duality_report(&flow, &pairs, &probes)?
    };
    let max = report.max_error();
    let pass = max < tolerance;
    let out = Output {
        flow_kind: flow.kind().name(),
        direction: if field_first { "field-to-flow" } else { "flow-to-field-to-flow" },
        dim: d,
        seed,
        report: &report,
        max_rel_err: max,
        tolerance,
        pass,
    };
    emit(a.out.as_deref(), &json(&out))?;
    Ok(if pass {
        Status::Pass
    } else {
        Status::Fail(format!("max relative error {max:e} exceeds {tolerance:e}"))
    })
}
