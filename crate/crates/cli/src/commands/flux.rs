use super::{CmdError, Status};
use crate::settings::{emit, opt, streams, Settings};
use flowfield::diagnostics::{slice_flux, FluxEstimate, Proposal};
use flowfield::fields::ScaledField;
use flowfield::superposition::GlobalField;
use flowfield::{field_from_flow, gaussian_draw, EndpointPair, FieldKind, FieldSpec, RngStream, VectorField};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// from-flow, pfgm-coulomb or ifm-canonical; efm-coulomb is refused.
    #[arg(long)]
    field_kind: Option<String>,
    /// Base flow kind for `from-flow` (default two-sided-interpolant).
    #[arg(long)]
    flow_kind: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated slice times (default 0.1,...,0.9 times T).
    #[arg(long)]
    t_values: Option<String>,
    /// Importance samples per slice.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Number of random pairs superposed.
    #[arg(long)]
    pairs: Option<usize>,
    /// `broad` (default) or `conditional` (exact for from-flow fields).
    #[arg(long)]
    proposal: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multiplies the field by a constant.
    #[arg(long, hide = true)]
    field_scale: Option<f64>,
}

pub fn run(a: Args) -> Result<Status, CmdError> {
    let s = Settings::load(
        a.config.as_deref(),
        &[],
        &[
            ("field_kind", a.field_kind.clone()),
            ("kind", a.flow_kind.clone()),
            ("D", opt(&a.dim)),
            ("t_values", a.t_values.clone()),
            ("mc_samples", opt(&a.mc_samples)),
            ("pairs", opt(&a.pairs)),
            ("proposal", a.proposal.clone()),
            ("seed", opt(&a.seed)),
            ("field_scale", opt(&a.field_scale)),
        ],
    )?;
    let kind: FieldKind = s.get_or("field_kind", FieldKind::FromFlow)?;
    let base = s.flow("two-sided-interpolant", 2)?;
    let (d, horizon) = (base.dim(), base.horizon());
    let spec = match kind {
        FieldKind::FromFlow => field_from_flow(&base),
        FieldKind::PfgmCoulomb => FieldSpec::pfgm_coulomb(d, horizon)?,
        FieldKind::IfmCanonicalRealization => FieldSpec::ifm_canonical(d, horizon)?,
        FieldKind::EfmCoulomb => {
            return Err(CmdError::usage(
                "efm-coulomb is not forward-only, so its slice flux is not conserved; \
                 slice flux needs a forward-only field",
            ))
        }
    };
    let seed = s.get_or("seed", 0u64)?;
    let n_mc = s.get_or("mc_samples", 20_000usize)?;
    let n_pairs = s.get_or("pairs", 4usize)?;
    let scale = s.get_or("field_scale", 1.0f64)?;
    let proposal_kind: String = s.get_or("proposal", "broad".to_string())?;
    let ts: Vec<f64> = s
        .list_or("t_values", &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])?
        .into_iter()
        .map(|u| u * horizon)
        .collect();
    if n_mc < 2 || n_pairs == 0 || ts.is_empty() {
        return Err(CmdError::usage("need mc_samples >= 2, pairs >= 1 and at least one t"));
    }
    if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && **t < horizon)) {
        return Err(CmdError::usage(format!("slice time {t} is outside (0, {horizon})")));
    }

    let dual = spec.dual_flow().expect("forward-only kinds have a dual flow");
    let mut rng = RngStream::new(seed, streams::PROBES);
    let pairs: Vec<EndpointPair> = (0..n_pairs)
        .map(|_| {
            let x0 = gaussian_draw(&mut rng, d);
            let xt = dual.kind().is_two_sided().then(|| gaussian_draw(&mut rng, d));
            EndpointPair::new(x0, xt)
        })
        .collect::<Result<_, _>>()?;
    let global = GlobalField::new(&spec, pairs.clone())?;
    let field = ScaledField::new(&global, scale)?;
    let run = RngStream::new(seed, streams::RUN);
    let mut rows: Vec<(f64, FluxEstimate)> = Vec::with_capacity(ts.len());
    for (k, &t) in ts.iter().enumerate() {
        let proposal = match proposal_kind.as_str() {
            "broad" => Proposal::broad(&spec, &pairs, t)?,
            "conditional" => Proposal::conditional_mixture(&dual, &pairs, t)?,
            other => return Err(CmdError::usage(format!("unknown proposal '{other}'; valid: broad, conditional"))),
        };
        rows.push((t, slice_flux(&field as &dyn VectorField, &proposal, n_mc, &run.derive(k as u64))?));
    }

    let mut csv = String::from("t,flux,stderr\n");
    for (t, e) in &rows {
        csv.push_str(&format!("{t},{},{}\n", e.estimate, e.stderr));
    }
    emit(a.out.as_deref(), csv.as_bytes())?;

    let mut problems = Vec::new();
    if kind == FieldKind::FromFlow {
        for (t, e) in &rows {
            if (e.estimate - scale).abs() > 3.0 * e.stderr {
                problems.push(format!("t = {t}: {} is not within 3 stderr of {scale}", e.estimate));
            }
        }
    }
    for (i, (ti, ei)) in rows.iter().enumerate() {
        for (tj, ej) in &rows[i + 1..] {
            let tol = 3.0 * (ei.stderr.powi(2) + ej.stderr.powi(2)).sqrt();
            if (ei.estimate - ej.estimate).abs() > tol {
                problems.push(format!("slices t = {ti} and t = {tj} disagree"));
            }
        }
    }
    Ok(if problems.is_empty() { Status::Pass } else { Status::Fail(problems.join("; ")) })
}
