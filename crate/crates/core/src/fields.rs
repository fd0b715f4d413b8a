//! Interaction fields on the extended space `(x, t)` and the two mappings between
//! fields and conditional flows.
//!
//! A flow `(v, p)` becomes the field `E = (v p, p)`. Conversely a field whose
//! t-component is positive yields `v = E_x / E_t` and `p = E_t / flux`.

use crate::error::{Error, Result};
use crate::flows::{FlowKind, FlowSpec};
use crate::point::{norm, EndpointPair, ExtendedPoint, Point};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Evaluation inside this distance of a Coulomb charge is refused.
pub const SINGULARITY_RADIUS: f64 = 1e-8;

/// A field value.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldValue {
    pub spatial: Point,
    pub temporal: f64,
}

impl FieldValue {
    pub fn norm(&self) -> f64 {
        (self.spatial.norm().powi(2) + self.temporal * self.temporal).sqrt()
    }
}

/// A field value stored as `exp(log_scale) * (spatial, temporal)`.
///
/// Pairwise fields built from densities underflow far from the path; keeping the
/// scale in log-space lets superpositions and ratios stay exact.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledFieldValue {
    pub log_scale: f64,
    pub spatial: Vec<f64>,
    pub temporal: f64,
}

impl ScaledFieldValue {
    pub fn zero(dim: usize) -> Self {
        ScaledFieldValue { log_scale: f64::NEG_INFINITY, spatial: vec![0.0; dim], temporal: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale == f64::NEG_INFINITY
            || (self.temporal == 0.0 && self.spatial.iter().all(|c| *c == 0.0))
    }

    pub fn to_value(&self) -> FieldValue {
        if self.log_scale == f64::NEG_INFINITY {
            return FieldValue { spatial: Point::zeros(self.spatial.len()), temporal: 0.0 };
        }
        let s = self.log_scale.exp();
        FieldValue {
            spatial: Point::raw(self.spatial.iter().map(|c| c * s).collect()),
            temporal: self.temporal * s,
        }
    }

    /// `E_x / E_t`; errors when the t-component is not positive.
    pub fn velocity(&self, at: &ExtendedPoint) -> Result<Point> {
        if !(self.temporal > 0.0) || self.log_scale == f64::NEG_INFINITY {
            return Err(Error::NotForwardOnly { witness: at.clone() });
        }
        Ok(Point::raw(self.spatial.iter().map(|c| c / self.temporal).collect()))
    }

    /// `log E_t`; errors when the t-component is not positive.
    pub fn log_temporal(&self, at: &ExtendedPoint) -> Result<f64> {
        if !(self.temporal > 0.0) || self.log_scale == f64::NEG_INFINITY {
            return Err(Error::NotForwardOnly { witness: at.clone() });
        }
        Ok(self.log_scale + self.temporal.ln())
    }

    /// Euclidean norm of the unscaled components.
    pub fn component_norm(&self) -> f64 {
        (norm(&self.spatial).powi(2) + self.temporal * self.temporal).sqrt()
    }
}

/// Anything that can be evaluated as a field on the extended space.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval_scaled(&self, p: &ExtendedPoint) -> Result<ScaledFieldValue>;

    fn eval(&self, p: &ExtendedPoint) -> Result<FieldValue> {
        Ok(self.eval_scaled(p)?.to_value())
    }
}

/// Wraps a closure returning plain field values.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&ExtendedPoint) -> Result<FieldValue> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&ExtendedPoint) -> Result<FieldValue> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_scaled(&self, p: &ExtendedPoint) -> Result<ScaledFieldValue> {
        let v = (self.f)(p)?;
        Ok(ScaledFieldValue { log_scale: 0.0, spatial: v.spatial.into_vec(), temporal: v.temporal })
    }
}

/// A field multiplied by a positive constant.
pub struct ScaledField<'a> {
    inner: &'a dyn VectorField,
    log_factor: f64,
}

impl<'a> ScaledField<'a> {
    pub fn new(inner: &'a dyn VectorField, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("field scale must be positive, got {factor}")));
        }
        Ok(ScaledField { inner, log_factor: factor.ln() })
    }
}

impl VectorField for ScaledField<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_scaled(&self, p: &ExtendedPoint) -> Result<ScaledFieldValue> {
        let mut v = self.inner.eval_scaled(p)?;
        v.log_scale += self.log_factor;
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    FromFlow,
    EfmCoulomb,
    PfgmCoulomb,
    IfmCanonicalRealization,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [
        FieldKind::FromFlow,
        FieldKind::EfmCoulomb,
        FieldKind::PfgmCoulomb,
        FieldKind::IfmCanonicalRealization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::FromFlow => "from-flow",
            FieldKind::EfmCoulomb => "efm-coulomb",
            FieldKind::PfgmCoulomb => "pfgm-coulomb",
            FieldKind::IfmCanonicalRealization => "ifm-canonical-realization",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FieldKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s {
                "efm" => Some(FieldKind::EfmCoulomb),
                "ifm-canonical" => Some(FieldKind::IfmCanonicalRealization),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<_> = FieldKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown field kind '{s}'; valid kinds: {}", names.join(", ")))
            })
    }
}

/// A pairwise interaction field family.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSpec {
    kind: FieldKind,
    base_flow: Option<FlowSpec>,
    horizon: f64,
    dim: usize,
}

/// The pairwise field `E = (v p, p)` of a conditional flow.
pub fn field_from_flow(flow: &FlowSpec) -> FieldSpec {
    FieldSpec {
        kind: FieldKind::FromFlow,
        base_flow: Some(flow.clone()),
        horizon: flow.horizon(),
        dim: flow.dim(),
    }
}

impl FieldSpec {
    fn bare(kind: FieldKind, dim: usize, horizon: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        Ok(FieldSpec { kind, base_flow: None, horizon, dim })
    }

    pub fn from_flow(flow: &FlowSpec) -> Self {
        field_from_flow(flow)
    }

    /// Positive charge at `(x0, 0)`, negative charge at `(xT, T)`.
    pub fn efm_coulomb(dim: usize, horizon: f64) -> Result<Self> {
        Self::bare(FieldKind::EfmCoulomb, dim, horizon)
    }

    /// Single positive charge at `(x0, 0)`; zero below the plate `t = 0`.
    pub fn pfgm_coulomb(dim: usize, horizon: f64) -> Result<Self> {
        Self::bare(FieldKind::PfgmCoulomb, dim, horizon)
    }

    /// Forward-only field whose lines follow the chord between the two particles.
    pub fn ifm_canonical(dim: usize, horizon: f64) -> Result<Self> {
        Self::bare(FieldKind::IfmCanonicalRealization, dim, horizon)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn base_flow(&self) -> Option<&FlowSpec> {
        self.base_flow.as_ref()
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The flow this field induces, when it is known in closed form.
    pub fn dual_flow(&self) -> Option<FlowSpec> {
        let mk = |k| FlowSpec::new(k, self.dim).and_then(|f| f.with_horizon(self.horizon)).ok();
        match self.kind {
            FieldKind::FromFlow => self.base_flow.clone(),
            FieldKind::PfgmCoulomb => mk(FlowKind::Pfgm),
            FieldKind::IfmCanonicalRealization => mk(FlowKind::IfmCanonical),
            FieldKind::EfmCoulomb => None,
        }
    }

    /// Total flux through the slab in closed form (`None` for the EFM field).
    pub fn total_flux(&self) -> Option<f64> {
        let d = self.dim as f64;
        match self.kind {
            FieldKind::FromFlow => Some(1.0),
            FieldKind::PfgmCoulomb => {
                let a = 0.5 * (d + 1.0);
                Some((a * PI.ln() - ln_gamma(a)).exp())
            }
            FieldKind::IfmCanonicalRealization => Some((2.0 * PI).powf(0.5 * d)),
            FieldKind::EfmCoulomb => None,
        }
    }

    fn needs_source(&self) -> bool {
        match self.kind {
            FieldKind::FromFlow => self.base_flow.as_ref().is_some_and(|f| f.kind().is_two_sided()),
            FieldKind::EfmCoulomb | FieldKind::IfmCanonicalRealization => true,
            FieldKind::PfgmCoulomb => false,
        }
    }

    fn check(&self, pair: &EndpointPair, p: &ExtendedPoint) -> Result<()> {
        pair.x0.check_dim(self.dim)?;
        p.x.check_dim(self.dim)?;
        if let Some(xt) = &pair.xt {
            xt.check_dim(self.dim)?;
        } else if self.needs_source() {
            return Err(Error::Config(format!("{} needs a source-side sample", self.kind)));
        }
        if !p.t.is_finite() {
            return Err(Error::Domain(format!("non-finite t = {}", p.t)));
        }
        Ok(())
    }

    pub fn eval_pair_field(&self, pair: &EndpointPair, p: &ExtendedPoint) -> Result<FieldValue> {
        Ok(self.eval_pair_scaled(pair, p)?.to_value())
    }

    pub fn eval_pair_scaled(&self, pair: &EndpointPair, p: &ExtendedPoint) -> Result<ScaledFieldValue> {
        self.check(pair, p)?;
        match self.kind {
            FieldKind::FromFlow => {
                let flow = self.base_flow.as_ref().expect("from-flow has a base flow");
                let ev = flow.evaluate(pair, &p.x, p.t)?;
                Ok(ScaledFieldValue {
                    log_scale: ev.log_density,
                    spatial: ev.velocity.into_vec(),
                    temporal: 1.0,
                })
            }
            FieldKind::PfgmCoulomb => {
                if p.t < 0.0 {
                    return Ok(ScaledFieldValue::zero(self.dim));
                }
                let (rel, rho) = coulomb_offset(&p.x, p.t, &pair.x0, 0.0)?;
                Ok(ScaledFieldValue {
                    log_scale: -(self.dim as f64 + 1.0) * rho.ln(),
                    spatial: rel,
                    temporal: p.t,
                })
            }
            FieldKind::EfmCoulomb => {
                let xt = pair.xt.as_ref().expect("checked");
                let k = self.dim as i32 + 1;
                let (a, ra) = coulomb_offset(&p.x, p.t, &pair.x0, 0.0)?;
                let (b, rb) = coulomb_offset(&p.x, p.t, xt, self.horizon)?;
                let (ca, cb) = (ra.powi(-k), rb.powi(-k));
                Ok(ScaledFieldValue {
                    log_scale: 0.0,
                    spatial: a.iter().zip(&b).map(|(u, w)| u * ca - w * cb).collect(),
                    temporal: p.t * ca - (p.t - self.horizon) * cb,
                })
            }
            FieldKind::IfmCanonicalRealization => self.canonical(pair, p),
        }
    }

    fn canonical(&self, pair: &EndpointPair, p: &ExtendedPoint) -> Result<ScaledFieldValue> {
        let tt = self.horizon;
        let t = p.t;
        if !(t > 0.0 && t < tt) {
            return Err(Error::Domain(format!("t = {t} outside the open slab (0, {tt})")));
        }
        let xt = pair.xt.as_ref().expect("checked");
        let u = t / tt;
        let (s, c) = crate::flows::sin_cos_pi(2.0 * u);
        let sigma = s.abs();
        if sigma == 0.0 {
            return Err(Error::DegeneratePath { t });
        }
        let chord: Vec<f64> = xt.coords().iter().zip(pair.x0.coords()).map(|(b, a)| b - a).collect();
        let len = (chord.iter().map(|v| v * v).sum::<f64>() + tt * tt).sqrt();
        let perp: Vec<f64> = p
            .x
            .coords()
            .iter()
            .zip(pair.x0.coords().iter().zip(xt.coords()))
            .map(|(x, (a, b))| x - a * (1.0 - u) - b * u)
            .collect();
        let r = norm(&perp);
        // tan(alpha): tilt of the line off the chord, corrected for the chord's slope.
        let tan_a = tt / len * (2.0 * PI / tt) * r * c / s;
        let cos_a = 1.0 / (1.0 + tan_a * tan_a).sqrt();
        let sin_a = tan_a * cos_a;
        let log_mag = -r * r / (2.0 * sigma * sigma) - self.dim as f64 * sigma.ln() + (len / tt).ln()
            - cos_a.ln();
        let spatial = perp
            .iter()
            .zip(&chord)
            .map(|(q, w)| {
                let e_perp = if r > 0.0 { q / r } else { 0.0 };
                sin_a * e_perp + cos_a * w / len
            })
            .collect();
        Ok(ScaledFieldValue { log_scale: log_mag, spatial, temporal: cos_a * tt / len })
    }

    /// Checks positivity of the t-component at every probe where the field is
    /// defined and nonzero. Probes outside the field's domain are skipped.
    pub fn is_forward_only(&self, pair: &EndpointPair, probes: &[ExtendedPoint]) -> ForwardOnlyCheck {
        let mut evaluated = 0;
        for p in probes {
            let Ok(v) = self.eval_pair_scaled(pair, p) else { continue };
            evaluated += 1;
            if !v.is_zero() && !(v.temporal > 0.0) {
                return ForwardOnlyCheck { forward_only: false, witness: Some(p.clone()), evaluated };
            }
        }
        ForwardOnlyCheck { forward_only: true, witness: None, evaluated }
    }
}

fn coulomb_offset(x: &Point, t: f64, c: &Point, tc: f64) -> Result<(Vec<f64>, f64)> {
    let rel: Vec<f64> = x.coords().iter().zip(c.coords()).map(|(a, b)| a - b).collect();
    let dt = t - tc;
    let rho = (rel.iter().map(|v| v * v).sum::<f64>() + dt * dt).sqrt();
    if rho < SINGULARITY_RADIUS {
        return Err(Error::Singularity(format!("distance {rho:e} to charge at t = {tc}")));
    }
    Ok((rel, rho))
}

/// Outcome of a forward-only check.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOnlyCheck {
    pub forward_only: bool,
    pub witness: Option<ExtendedPoint>,
    pub evaluated: usize,
}

/// Probe set used to vet a field before turning it into a flow: a reference
/// pair from the origin to `(T/2) e_1`, probed on a grid that extends half a
/// horizon beyond both plates.
pub fn reference_probes(dim: usize, horizon: f64) -> (EndpointPair, Vec<ExtendedPoint>) {
    let mut xt = vec![0.0; dim];
    xt[0] = 0.5 * horizon;
    let pair = EndpointPair { x0: Point::zeros(dim), xt: Some(Point::raw(xt)) };
    let mut probes = Vec::new();
    for i in 0..=40 {
        let t = horizon * (-0.5 + 2.0 * (i as f64 + 0.5) / 41.0);
        for j in -8..=8 {
            for k in [0.0, 0.37] {
                let mut x = vec![0.0; dim];
                x[0] = 0.25 * j as f64 * horizon;
                if dim > 1 {
                    x[1] = k * horizon;
                } else {
                    x[0] += k * 0.1 * horizon;
                }
                probes.push(ExtendedPoint::new(Point::raw(x), t));
            }
        }
    }
    (pair, probes)
}

/// A conditional flow read off a forward-only field.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedFlow {
    field: FieldSpec,
    log_flux: f64,
}

/// Builds `v = E_x / E_t`, `p = E_t / flux` after vetting the field on
/// [`reference_probes`].
pub fn flow_from_field(field: &FieldSpec, flux: f64) -> Result<DerivedFlow> {
    if !(flux > 0.0 && flux.is_finite()) {
        return Err(Error::Config(format!("flux must be positive, got {flux}")));
    }
    let (pair, probes) = reference_probes(field.dim(), field.horizon());
    let check = field.is_forward_only(&pair, &probes);
    if let Some(witness) = check.witness {
        return Err(Error::NotForwardOnly { witness });
    }
    Ok(DerivedFlow { field: field.clone(), log_flux: flux.ln() })
}

impl DerivedFlow {
    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    pub fn flux(&self) -> f64 {
        self.log_flux.exp()
    }

    pub fn cond_velocity(&self, pair: &EndpointPair, x: &Point, t: f64) -> Result<Point> {
        let p = ExtendedPoint::new(x.clone(), t);
        self.field.eval_pair_scaled(pair, &p)?.velocity(&p)
    }

    pub fn cond_log_density(&self, pair: &EndpointPair, x: &Point, t: f64) -> Result<f64> {
        let p = ExtendedPoint::new(x.clone(), t);
        Ok(self.field.eval_pair_scaled(pair, &p)?.log_temporal(&p)? - self.log_flux)
    }
}

/// A single pair's field as a [`VectorField`].
pub struct PairField<'a> {
    pub spec: &'a FieldSpec,
    pub pair: &'a EndpointPair,
}

impl VectorField for PairField<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }
    fn eval_scaled(&self, p: &ExtendedPoint) -> Result<ScaledFieldValue> {
        self.spec.eval_pair_scaled(self.pair, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceParameter {
    Tau,
    T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceDirection {
    Forward,
    Backward,
}

/// Field-line tracing settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceConfig {
    pub parameter: TraceParameter,
    pub n_steps: usize,
    /// Step in `tau` when tracing by the free parameter.
    pub d_tau: f64,
    pub horizon: f64,
    /// Lines stop this far inside the plates.
    pub t_eps: f64,
}

impl TraceConfig {
    pub fn new(parameter: TraceParameter, horizon: f64) -> Self {
        TraceConfig {
            parameter,
            n_steps: 1000,
            d_tau: 1e-3,
            horizon,
            t_eps: crate::flows::T_EPS_FRACTION * horizon,
        }
    }
}

/// A traced field line; `params[i]` is the trace parameter at `points[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldLineTrace {
    pub points: Vec<ExtendedPoint>,
    pub params: Vec<f64>,
    pub tau_start: f64,
    pub tau_end: f64,
    pub parameter: TraceParameter,
}

impl FieldLineTrace {
    /// CSV with columns `param,t,x_1..x_D`.
    pub fn to_csv(&self) -> String {
        let d = self.points.first().map_or(0, |p| p.x.dim());
        let mut out = String::from("param,t");
        for k in 1..=d {
            out.push_str(&format!(",x_{k}"));
        }
        out.push('\n');
        for (p, s) in self.points.iter().zip(&self.params) {
            out.push_str(&format!("{s},{}", p.t));
            for c in p.x.coords() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn tau_rhs(field: &dyn VectorField, y: &[f64], sign: f64) -> Result<Vec<f64>> {
    let d = y.len() - 1;
    let p = ExtendedPoint::new(Point::raw(y[..d].to_vec()), y[d]);
    let v = field.eval(&p)?;
    let mut out: Vec<f64> = v.spatial.into_vec().into_iter().map(|c| sign * c).collect();
    out.push(sign * v.temporal);
    Ok(out)
}

fn heun_tau(field: &dyn VectorField, y: &[f64], h: f64, sign: f64) -> Result<Vec<f64>> {
    let k1 = tau_rhs(field, y, sign)?;
    let pred: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + h * b).collect();
    let k2 = tau_rhs(field, &pred, sign)?;
    Ok(y.iter().zip(k1.iter().zip(&k2)).map(|(a, (b, c))| a + 0.5 * h * (b + c)).collect())
}

fn to_ext(y: &[f64]) -> ExtendedPoint {
    let d = y.len() - 1;
    ExtendedPoint::new(Point::raw(y[..d].to_vec()), y[d])
}

/// Follows a field line with fixed-step Heun until it reaches a plate.
pub fn trace_field_line(
    field: &dyn VectorField,
    start: &ExtendedPoint,
    direction: TraceDirection,
    cfg: &TraceConfig,
) -> Result<FieldLineTrace> {
    start.x.check_dim(field.dim())?;
    if cfg.n_steps == 0 {
        return Err(Error::Config("trace needs at least one step".into()));
    }
    let (lo, hi) = (cfg.t_eps, cfg.horizon - cfg.t_eps);
    if !(start.t >= lo && start.t <= hi) {
        return Err(Error::Domain(format!("start t = {} outside [{lo}, {hi}]", start.t)));
    }
    let t_end = match direction {
        TraceDirection::Forward => hi,
        TraceDirection::Backward => lo,
    };
    let mut points = vec![start.clone()];
    match cfg.parameter {
        TraceParameter::T => {
            let t0 = start.t;
            let n = cfg.n_steps;
            let mut params = vec![t0];
            let mut x = start.x.clone();
            let vel = |x: &Point, t: f64| -> Result<Point> {
                let p = ExtendedPoint::new(x.clone(), t);
                field.eval_scaled(&p)?.velocity(&p)
            };
            for i in 0..n {
                let ta = t0 + (t_end - t0) * i as f64 / n as f64;
                let tb = t0 + (t_end - t0) * (i + 1) as f64 / n as f64;
                let dt = tb - ta;
                let k1 = vel(&x, ta)?;
                let pred = x.axpy(dt, &k1);
                let k2 = vel(&pred, tb)?;
                x = x.axpy(0.5 * dt, &k1.add(&k2));
                points.push(ExtendedPoint::new(x.clone(), tb));
                params.push(tb);
            }
            Ok(FieldLineTrace { points, params, tau_start: t0, tau_end: t_end, parameter: cfg.parameter })
        }
        TraceParameter::Tau => {
            let sign = match direction {
                TraceDirection::Forward => 1.0,
                TraceDirection::Backward => -1.0,
            };
            let d = start.x.dim();
            let mut y: Vec<f64> = start.x.coords().to_vec();
            y.push(start.t);
            let mut tau = 0.0;
            let mut params = vec![tau];
            for _ in 0..cfg.n_steps {
                let next = heun_tau(field, &y, cfg.d_tau, sign)?;
                let crossed = (next[d] - t_end) * sign >= 0.0;
                if crossed {
                    // Shrink the last step so it lands on the stopping plane.
                    let frac = (t_end - y[d]) / (next[d] - y[d]);
                    let last = heun_tau(field, &y, cfg.d_tau * frac, sign)?;
                    tau += cfg.d_tau * frac;
                    points.push(to_ext(&last));
                    params.push(tau);
                    return Ok(FieldLineTrace {
                        points,
                        params,
                        tau_start: 0.0,
                        tau_end: tau,
                        parameter: cfg.parameter,
                    });
                }
                y = next;
                tau += cfg.d_tau;
                points.push(to_ext(&y));
                params.push(tau);
            }
            Err(Error::TruncatedTrace { partial: points })
        }
    }
}
