//! Small dense networks regressed onto conditional, multi-sample and
//! normalized-field targets with plain SGD.

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::fields::{field_from_flow, FieldSpec, VectorField};
use crate::flows::{FlowSpec, T_EPS_FRACTION};
use crate::point::{EndpointPair, ExtendedPoint, Point};
use crate::rng::RngStream;
use crate::superposition::{multisample_batch, weighted_velocity, GlobalField};
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a` and input `z`.
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'; valid: tanh, relu"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, init_seed: u64) -> Self {
        MlpSpec { widths, activation, init_seed, init_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!("bad layer widths {:?}", self.widths)));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Weights of layer `l` are row-major `widths[l+1] x widths[l]`, followed by its bias.
    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Gaussian weights with standard deviation `init_scale / sqrt(fan_in)`, zero biases.
    pub fn init_params(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = RngStream::new(self.init_seed, 0);
        let mut p = Vec::with_capacity(self.n_params());
        for w in self.widths.windows(2) {
            let sd = self.init_scale / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                p.push(sd * rng.normal());
            }
            p.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Ok(p)
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        self.validate()?;
        if params.len() != self.n_params() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.n_params(), params.len())));
        }
        if input.len() != self.input_width() {
            return Err(Error::Config(format!(
                "input width {} does not match network input {}",
                input.len(),
                self.input_width()
            )));
        }
        Ok(())
    }
}

/// Dense forward pass; the last layer is linear.
pub fn mlp_forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    spec.check(params, input)?;
    let (acts, _) = forward_all(spec, params, input);
    Ok(acts.into_iter().last().unwrap())
}

/// Returns per-layer outputs (including the input) and pre-activations.
fn forward_all(spec: &MlpSpec, params: &[f64], input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_layers = spec.widths.len() - 1;
    let mut acts = vec![input.to_vec()];
    let mut pre = Vec::with_capacity(n_layers);
    let mut off = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let h = &acts[l];
        let z: Vec<f64> = (0..n_out)
            .map(|j| b[j] + w[j * n_in..(j + 1) * n_in].iter().zip(h).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let a = if l + 1 == n_layers { z.clone() } else { z.iter().map(|&v| spec.activation.apply(v)).collect() };
        pre.push(z);
        acts.push(a);
    }
    (acts, pre)
}

/// Loss `0.5 * |f(input) - target|^2`; adds `scale * dloss/dparams` into `grad`.
pub fn mlp_loss_grad(
    spec: &MlpSpec,
    params: &[f64],
    input: &[f64],
    target: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    spec.check(params, input)?;
    if target.len() != spec.output_width() || grad.len() != params.len() {
        return Err(Error::Config("target or gradient buffer has the wrong width".into()));
    }
    let (acts, pre) = forward_all(spec, params, input);
    let n_layers = spec.widths.len() - 1;
    let out = &acts[n_layers];
    let mut delta: Vec<f64> = out.iter().zip(target).map(|(f, y)| f - y).collect();
    let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();

    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for w in spec.widths.windows(2) {
        offsets.push(off);
        off += w[0] * w[1] + w[1];
    }
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
        let off = offsets[l];
        let h = &acts[l];
        for j in 0..n_out {
            let dj = scale * delta[j];
            for (g, hi) in grad[off + j * n_in..off + (j + 1) * n_in].iter_mut().zip(h) {
                *g += dj * hi;
            }
            grad[off + n_in * n_out + j] += dj;
        }
        if l > 0 {
            let w = &params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (j, dj) in delta.iter().enumerate() {
                for (p, wji) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *p += wji * dj;
                }
            }
            for (i, p) in prev.iter_mut().enumerate() {
                *p *= spec.activation.grad(pre[l - 1][i], acts[l][i]);
            }
            delta = prev;
        }
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    CfmSingle,
    CfmMultisample,
    IfmNormalizedField,
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cfm-single" => Ok(Objective::CfmSingle),
            "cfm-multisample" => Ok(Objective::CfmMultisample),
            "ifm-normalized-field" => Ok(Objective::IfmNormalizedField),
            other => Err(Error::Config(format!(
                "unknown objective '{other}'; valid: cfm-single, cfm-multisample, ifm-normalized-field"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VolumeCoverage {
    /// `(pair, t, x_t)` from the conditional path.
    PathInduced,
    /// `x` from the normalized slice density `E_t(., t) / Phi_t` of the drawn pair.
    FieldInformed,
    /// `x ~ N(0, scale^2 I)`, independent of the pair.
    CustomGaussian { scale: f64 },
}

impl FromStr for VolumeCoverage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path-induced" => Ok(VolumeCoverage::PathInduced),
            "field-informed" => Ok(VolumeCoverage::FieldInformed),
            "custom-gaussian" => Ok(VolumeCoverage::CustomGaussian { scale: 1.0 }),
            other => Err(Error::Config(format!(
                "unknown volume coverage '{other}'; valid: path-induced, field-informed, custom-gaussian"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub n_samples: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub vol_coverage: VolumeCoverage,
    /// Time is drawn from `U[t_clip.0, T - t_clip.1]`, in absolute units.
    pub t_clip: (f64, f64),
}

impl TrainConfig {
    /// Batch 64, 1000 steps, lr 0.01, path-induced coverage, time clip
    /// `(0.05, 1e-4) * horizon`.
    pub fn new(objective: Objective, horizon: f64) -> Self {
        TrainConfig {
            objective,
            n_samples: 1,
            batch: 64,
            steps: 1000,
            lr: 1e-2,
            vol_coverage: VolumeCoverage::PathInduced,
            t_clip: (0.05 * horizon, T_EPS_FRACTION * horizon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective == Objective::CfmSingle && self.n_samples != 1 {
            return Err(Error::Config(format!("cfm-single requires N = 1, got {}", self.n_samples)));
        }
        if self.n_samples == 0 || self.batch == 0 || self.steps == 0 {
            return Err(Error::Config("N, batch and steps must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        let (lo, hi) = self.t_clip;
        if !(lo >= 0.0 && hi >= 0.0) {
            return Err(Error::Config("time clip must be nonnegative".into()));
        }
        if let VolumeCoverage::CustomGaussian { scale } = self.vol_coverage {
            if !(scale > 0.0) {
                return Err(Error::Config("custom-gaussian scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum TrainSource<'a> {
    Flow(&'a FlowSpec),
    Field(&'a FieldSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    /// Batch-mean loss at each step, before that step's update.
    pub loss_trace: Vec<f64>,
    pub seconds_per_step: f64,
}

impl TrainOutcome {
    /// CSV `step,loss`.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

struct Resolved {
    flow: Option<FlowSpec>,
    field: Option<FieldSpec>,
    /// Flow whose conditional path provides `x`.
    volume: Option<FlowSpec>,
    dim: usize,
    horizon: f64,
}

fn resolve(source: TrainSource<'_>, cfg: &TrainConfig) -> Result<Resolved> {
    let r = match source {
        TrainSource::Flow(f) => {
            let field = field_from_flow(f);
            let volume = match cfg.vol_coverage {
                VolumeCoverage::PathInduced => Some(f.clone()),
                VolumeCoverage::FieldInformed => {
                    let dual = field.dual_flow().expect("from-flow fields have a dual flow");
                    assert_eq!(&dual, f, "field-informed and path-induced coverage must coincide for from-flow fields");
                    Some(dual)
                }
                VolumeCoverage::CustomGaussian { .. } => None,
            };
            Resolved { flow: Some(f.clone()), field: Some(field), volume, dim: f.dim(), horizon: f.horizon() }
        }
        TrainSource::Field(e) => {
            let dual = e.dual_flow();
            let volume = match cfg.vol_coverage {
                VolumeCoverage::CustomGaussian { .. } => None,
                _ => Some(dual.clone().ok_or_else(|| {
                    Error::Config(format!(
                        "{} has no slice density to sample from; use custom-gaussian coverage",
                        e.kind()
                    ))
                })?),
            };
            Resolved { flow: dual, field: Some(e.clone()), volume, dim: e.dim(), horizon: e.horizon() }
        }
    };
    if cfg.objective != Objective::IfmNormalizedField && r.flow.is_none() {
        return Err(Error::Config("velocity objectives need a conditional flow".into()));
    }
    Ok(r)
}

/// Draws one `(input, target)` example.
fn draw_example(
    r: &Resolved,
    cfg: &TrainConfig,
    coupling: &Coupling,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = cfg.t_clip;
    let t = rng.uniform_range(lo, r.horizon - hi);
    let pair = coupling.sample_pair(rng);
    let x = match (&r.volume, cfg.vol_coverage) {
        (_, VolumeCoverage::CustomGaussian { scale }) => Point::raw(rng.normal_vec(r.dim)).scale(scale),
        (Some(vf), _) => vf.sample_xt(&pair, t, rng)?,
        (None, _) => unreachable!("resolve always sets a volume flow for path coverage"),
    };
    let anchor: Option<&EndpointPair> = match cfg.vol_coverage {
        VolumeCoverage::CustomGaussian { .. } => None,
        _ => Some(&pair),
    };
    let target = match cfg.objective {
        Objective::CfmSingle => r.flow.as_ref().unwrap().cond_velocity(&pair, &x, t)?.into_vec(),
        Objective::CfmMultisample => {
            let batch = multisample_batch(coupling, anchor, cfg.n_samples, rng)?;
            weighted_velocity(r.flow.as_ref().unwrap(), &batch, &x, t)?.velocity.into_vec()
        }
        Objective::IfmNormalizedField => {
            let batch = multisample_batch(coupling, anchor, cfg.n_samples, rng)?;
            let field = r.field.as_ref().unwrap();
            let e = GlobalField::new(field, batch)?.eval_scaled(&ExtendedPoint::new(x.clone(), t))?;
            let n = e.component_norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::DegenerateWeights);
            }
            let mut y: Vec<f64> = e.spatial.iter().map(|c| c / n).collect();
            y.push(e.temporal / n);
            y
        }
    };
    let mut input = x.into_vec();
    input.push(t);
    Ok((input, target))
}

/// Runs SGD on the batch-mean of `0.5 * |f(x, t) - target|^2`.
///
/// Step `k` draws its whole batch from `rng.derive(k)`.
pub fn train(
    source: TrainSource<'_>,
    coupling: &Coupling,
    mlp: &MlpSpec,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mlp.validate()?;
    let r = resolve(source, cfg)?;
    if cfg.t_clip.0 + cfg.t_clip.1 >= r.horizon {
        return Err(Error::Config(format!("time clip {:?} leaves no room in (0, {})", cfg.t_clip, r.horizon)));
    }
    if coupling.dim() != r.dim {
        return Err(Error::Dimension { expected: r.dim, got: coupling.dim() });
    }
    let out_w = match cfg.objective {
        Objective::IfmNormalizedField => r.dim + 1,
        _ => r.dim,
    };
    if mlp.input_width() != r.dim + 1 || mlp.output_width() != out_w {
        return Err(Error::Config(format!(
            "network widths {:?} need input {} and output {}",
            mlp.widths,
            r.dim + 1,
            out_w
        )));
    }
    let mut params = mlp.init_params()?;
    let mut grad = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(cfg.steps);
    let inv_b = 1.0 / cfg.batch as f64;
    let start = Instant::now();
    for step in 0..cfg.steps {
        let mut srng = rng.derive(step as u64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let (input, target) = draw_example(&r, cfg, coupling, &mut srng)
                .map_err(|e| Error::Evaluator { step, source: Box::new(e) })?;
            loss += mlp_loss_grad(mlp, &params, &input, &target, inv_b, &mut grad)?;
        }
        loss *= inv_b;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        trace.push(loss);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
        seconds_per_step: start.elapsed().as_secs_f64() / cfg.steps as f64,
    })
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    widths: Vec<usize>,
    activation: Activation,
    init_seed: u64,
    init_scale: f64,
    n_params: usize,
}

/// `u64` LE header length, JSON header, then the parameters as LE `f64`.
pub fn encode_params(spec: &MlpSpec, params: &[f64]) -> Result<Vec<u8>> {
    if params.len() != spec.n_params() {
        return Err(Error::Config("parameter count does not match the network".into()));
    }
    let header = serde_json::to_vec(&ParamsHeader {
        widths: spec.widths.clone(),
        activation: spec.activation,
        init_seed: spec.init_seed,
        init_scale: spec.init_scale,
        n_params: params.len(),
    })
    .map_err(|e| Error::Io(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + header.len() + 8 * params.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<(MlpSpec, Vec<f64>)> {
    let bad = |m: &str| Error::Io(format!("malformed parameter file: {m}"));
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated"))?.try_into().unwrap();
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let hdr = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let h: ParamsHeader = serde_json::from_slice(hdr).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[8 + hlen..];
    if body.len() != 8 * h.n_params {
        return Err(bad("parameter count does not match header"));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let spec = MlpSpec { widths: h.widths, activation: h.activation, init_seed: h.init_seed, init_scale: h.init_scale };
    if spec.n_params() != h.n_params {
        return Err(bad("widths do not match parameter count"));
    }
    Ok((spec, params))
}

/// Fresh `(x_t, t)` draws from the training distribution: `t` uniform on
/// `[t_lo, t_hi]`, `x_t` along a random pair.
pub fn heldout_probes(
    flow: &FlowSpec,
    coupling: &Coupling,
    t_range: (f64, f64),
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<(Point, f64)>> {
    let (lo, hi) = t_range;
    if !(lo > 0.0 && lo <= hi && hi < flow.horizon() + f64::EPSILON) {
        return Err(Error::Domain(format!("bad probe time range [{lo}, {hi}]")));
    }
    (0..n)
        .map(|_| {
            let t = rng.uniform_range(lo, hi);
            let pair = coupling.sample_pair(rng);
            Ok((flow.sample_xt(&pair, t, rng)?, t))
        })
        .collect()
}

/// How a network output is read as a velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Velocity,
    /// Output `(f_x, f_t)` approximates `E / |E|`; the velocity is `f_x / f_t`.
    NormalizedField,
}

impl Head {
    pub fn for_objective(objective: Objective) -> Self {
        match objective {
            Objective::IfmNormalizedField => Head::NormalizedField,
            _ => Head::Velocity,
        }
    }
}

/// `sqrt(sum |f - v|^2 / sum |v|^2)` with `v` the exact velocity over the full support.
pub fn heldout_relative_l2(
    spec: &MlpSpec,
    params: &[f64],
    head: Head,
    flow: &FlowSpec,
    coupling: &Coupling,
    probes: &[(Point, f64)],
) -> Result<f64> {
    let support = coupling.support();
    let (mut num, mut den) = (0.0, 0.0);
    for (x, t) in probes {
        let v = weighted_velocity(flow, &support, x, *t)?.velocity;
        let mut input = x.coords().to_vec();
        input.push(*t);
        let mut f = mlp_forward(spec, params, &input)?;
        if head == Head::NormalizedField {
            let ft = f.pop().expect("field head has D + 1 outputs");
            f.iter_mut().for_each(|c| *c /= ft);
        }
        num += f.iter().zip(v.coords()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        den += v.coords().iter().map(|c| c * c).sum::<f64>();
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateEstimate("exact velocity vanishes on all probes".into()));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowKind;

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(vec![3, 8, 2], Activation::Tanh, 0);
        let out = mlp_forward(&spec, &vec![0.0; spec.n_params()], &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        assert!(mlp_forward(&spec, &vec![0.0; spec.n_params()], &[0.3, -1.0]).is_err());
    }

    #[test]
    fn identity_like_small_inputs() {
        // D+1 -> D+1 -> D+1 with identity weights; tanh(u) = u + O(u^3).
        let spec = MlpSpec::new(vec![3, 3, 3], Activation::Tanh, 0);
        let mut p = vec![0.0; spec.n_params()];
        for layer_off in [0, 12] {
            for i in 0..3 {
                p[layer_off + i * 3 + i] = 1.0;
            }
        }
        let x = [1e-3, -5e-4, 2e-4];
        let y = mlp_forward(&spec, &p, &x).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn params_roundtrip() {
        let spec = MlpSpec::new(vec![2, 4, 1], Activation::Relu, 9);
        let p = spec.init_params().unwrap();
        let bytes = encode_params(&spec, &p).unwrap();
        let (s2, p2) = decode_params(&bytes).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(p2, p);
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn zero_lr_is_noop() {
        let flow = FlowSpec::new(FlowKind::LinearFlowMatching, 1).unwrap();
        let c = Coupling::one_sided(vec![Point::new(vec![0.5]).unwrap()]).unwrap();
        let spec = MlpSpec::new(vec![2, 8, 1], Activation::Tanh, 1);
        let mut cfg = TrainConfig::new(Objective::CfmSingle, 1.0);
        cfg.lr = 0.0;
        cfg.steps = 5;
        let out = train(TrainSource::Flow(&flow), &c, &spec, &cfg, &RngStream::new(0, 0)).unwrap();
        assert_eq!(out.params, spec.init_params().unwrap());
        assert!(out.loss_csv().starts_with("step,loss\n0,"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(Objective::CfmSingle, 1.0);
        cfg.n_samples = 4;
        assert!(cfg.validate().is_err());
        let flow = FlowSpec::new(FlowKind::LinearFlowMatching, 2).unwrap();
        let c = Coupling::one_sided(vec![Point::new(vec![0.5, 0.0]).unwrap()]).unwrap();
        let wrong_head = MlpSpec::new(vec![3, 8, 3], Activation::Tanh, 1);
        let cfg = TrainConfig::new(Objective::CfmSingle, 1.0);
        assert!(train(TrainSource::Flow(&flow), &c, &wrong_head, &cfg, &RngStream::new(0, 0)).is_err());
        let efm = FieldSpec::efm_coulomb(2, 1.0).unwrap();
        let cfg = TrainConfig::new(Objective::IfmNormalizedField, 1.0);
        let head = MlpSpec::new(vec![3, 8, 3], Activation::Tanh, 1);
        assert!(train(TrainSource::Field(&efm), &c, &head, &cfg, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn huge_lr_diverges() {
        let flow = FlowSpec::new(FlowKind::LinearFlowMatching, 1).unwrap();
        let c = Coupling::one_sided(vec![Point::new(vec![3.0]).unwrap()]).unwrap();
        let spec = MlpSpec::new(vec![2, 16, 1], Activation::Relu, 1);
        let mut cfg = TrainConfig::new(Objective::CfmSingle, 1.0);
        cfg.lr = 1e6;
        cfg.steps = 200;
        match train(TrainSource::Flow(&flow), &c, &spec, &cfg, &RngStream::new(0, 0)) {
            Err(Error::Diverged { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
