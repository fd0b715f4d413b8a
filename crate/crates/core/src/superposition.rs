//! Global objects over a coupling: the superposed field, the weighted
//! multi-sample velocity, and weight-concentration statistics.

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::fields::{FieldKind, FieldSpec, FieldValue, ScaledFieldValue, VectorField};
use crate::flows::FlowSpec;
use crate::point::{EndpointPair, ExtendedPoint, Point};
use crate::rng::RngStream;

/// Log-sum-exp accumulation of `exp(ls_i) * (spatial_i, temporal_i)`.
///
/// Both the flow route and the field route reduce through this one function,
/// in pair order, so their results agree bit for bit.
struct Accumulator {
    log_scales: Vec<f64>,
    spatial: Vec<f64>,
    temporal: Vec<f64>,
    dim: usize,
}

struct Reduced {
    max_log: f64,
    raw_weights: Vec<f64>,
    spatial: Vec<f64>,
    temporal: f64,
}

impl Accumulator {
    fn with_capacity(n: usize, dim: usize) -> Self {
        Accumulator {
            log_scales: Vec::with_capacity(n),
            spatial: Vec::with_capacity(n * dim),
            temporal: Vec::with_capacity(n),
            dim,
        }
    }

    fn push(&mut self, log_scale: f64, spatial: &[f64], temporal: f64) {
        self.log_scales.push(log_scale);
        self.spatial.extend_from_slice(spatial);
        self.temporal.push(temporal);
    }

    fn reduce(&self) -> Reduced {
        let m = self.log_scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut spatial = vec![0.0; self.dim];
        let mut temporal = 0.0;
        let mut raw = Vec::with_capacity(self.log_scales.len());
        if m == f64::NEG_INFINITY {
            raw.resize(self.log_scales.len(), 0.0);
            return Reduced { max_log: m, raw_weights: raw, spatial, temporal };
        }
        for (i, ls) in self.log_scales.iter().enumerate() {
            let w = (ls - m).exp();
            raw.push(w);
            for (acc, c) in spatial.iter_mut().zip(&self.spatial[i * self.dim..(i + 1) * self.dim]) {
                *acc += w * c;
            }
            temporal += w * self.temporal[i];
        }
        Reduced { max_log: m, raw_weights: raw, spatial, temporal }
    }
}

fn mean_value(r: &Reduced, n: usize) -> ScaledFieldValue {
    if r.max_log == f64::NEG_INFINITY {
        return ScaledFieldValue::zero(r.spatial.len());
    }
    ScaledFieldValue {
        log_scale: r.max_log - (n as f64).ln(),
        spatial: r.spatial.clone(),
        temporal: r.temporal,
    }
}

/// The superposed field of a fixed list of pairs (their empirical mean).
pub struct GlobalField<'a> {
    spec: &'a FieldSpec,
    pairs: Vec<EndpointPair>,
}

impl<'a> GlobalField<'a> {
    pub fn new(spec: &'a FieldSpec, pairs: Vec<EndpointPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("global field needs at least one pair".into()));
        }
        for p in &pairs {
            p.x0.check_dim(spec.dim())?;
            if let Some(xt) = &p.xt {
                xt.check_dim(spec.dim())?;
            }
        }
        Ok(GlobalField { spec, pairs })
    }

    /// Exact superposition over the coupling's full support.
    pub fn over_support(spec: &'a FieldSpec, coupling: &Coupling) -> Result<Self> {
        Self::new(spec, coupling.support())
    }

    pub fn pairs(&self) -> &[EndpointPair] {
        &self.pairs
    }

    pub fn spec(&self) -> &FieldSpec {
        self.spec
    }
}

impl VectorField for GlobalField<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval_scaled(&self, p: &ExtendedPoint) -> Result<ScaledFieldValue> {
        p.x.check_dim(self.spec.dim())?;
        let d = self.spec.dim();
        let mut acc = Accumulator::with_capacity(self.pairs.len(), d);
        if self.spec.kind() == FieldKind::FromFlow {
            let flow = self.spec.base_flow().expect("from-flow has a base flow");
            let slice = flow.at_time(p.t)?;
            let mut v = vec![0.0; d];
            for pair in &self.pairs {
                if flow.kind().is_two_sided() && pair.xt.is_none() {
                    return Err(Error::Config(format!("{} needs a source-side sample", flow.kind())));
                }
                let lp = slice.eval(pair, p.x.coords(), &mut v);
                acc.push(lp, &v, 1.0);
            }
        } else {
            for (i, pair) in self.pairs.iter().enumerate() {
                let v = self.spec.eval_pair_scaled(pair, p).map_err(|e| match e {
                    Error::Singularity(msg) => Error::Singularity(format!("pair {i}: {msg}")),
                    other => other,
                })?;
                acc.push(v.log_scale, &v.spatial, v.temporal);
            }
        }
        Ok(mean_value(&acc.reduce(), self.pairs.len()))
    }
}

/// Empirical mean of the pairwise field over `n` pairs drawn from the coupling,
/// or over the whole support (without touching `rng`) when `n` equals its size.
pub fn global_field(
    spec: &FieldSpec,
    coupling: &Coupling,
    p: &ExtendedPoint,
    n: usize,
    rng: &mut RngStream,
) -> Result<FieldValue> {
    if n == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let pairs = if n == coupling.support_len() {
        coupling.support()
    } else {
        (0..n).map(|_| coupling.sample_pair(rng)).collect()
    };
    GlobalField::new(spec, pairs)?.eval(p)
}

/// A self-normalized mixture of conditional velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedVelocityEstimate {
    pub velocity: Point,
    pub weights: Vec<f64>,
    pub log_weights_unnormalized: Vec<f64>,
    pub n_samples: usize,
}

impl WeightedVelocityEstimate {
    /// Index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// `sum_i p_i v_i / sum_i p_i` over the given pairs, with `p_i` the conditional
/// densities at `(x, t)`.
pub fn weighted_velocity(
    flow: &FlowSpec,
    pairs: &[EndpointPair],
    x: &Point,
    t: f64,
) -> Result<WeightedVelocityEstimate> {
    if pairs.is_empty() {
        return Err(Error::Config("need at least one pair".into()));
    }
    x.check_dim(flow.dim())?;
    let d = flow.dim();
    let slice = flow.at_time(t)?;
    let mut acc = Accumulator::with_capacity(pairs.len(), d);
    let mut v = vec![0.0; d];
    for pair in pairs {
        pair.x0.check_dim(d)?;
        match &pair.xt {
            Some(xt) => xt.check_dim(d)?,
            None if flow.kind().is_two_sided() => {
                return Err(Error::Config(format!("{} needs a source-side sample", flow.kind())))
            }
            None => {}
        }
        let lp = slice.eval(pair, x.coords(), &mut v);
        acc.push(lp, &v, 1.0);
    }
    let r = acc.reduce();
    if !r.max_log.is_finite() || !(r.temporal > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let total = r.temporal;
    Ok(WeightedVelocityEstimate {
        velocity: Point::raw(r.spatial.iter().map(|c| c / total).collect()),
        weights: r.raw_weights.iter().map(|w| w / total).collect(),
        log_weights_unnormalized: acc.log_scales,
        n_samples: pairs.len(),
    })
}

/// The batch used by the multi-sample estimator: the anchor first, then
/// `n - 1` draws; without an anchor and with `n` equal to the support size,
/// the full support in storage order.
pub fn multisample_batch(
    coupling: &Coupling,
    anchor: Option<&EndpointPair>,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<EndpointPair>> {
    if n == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    Ok(match anchor {
        Some(a) => {
            let mut batch = Vec::with_capacity(n);
            batch.push(a.clone());
            batch.extend(coupling.draw_batch(n - 1, rng));
            batch
        }
        None if n == coupling.support_len() => coupling.support(),
        None => coupling.draw_batch(n, rng),
    })
}

/// Multi-sample velocity estimate at `(x, t)`.
pub fn multisample_velocity(
    flow: &FlowSpec,
    coupling: &Coupling,
    x: &Point,
    t: f64,
    anchor: Option<&EndpointPair>,
    n: usize,
    rng: &mut RngStream,
) -> Result<WeightedVelocityEstimate> {
    let batch = multisample_batch(coupling, anchor, n, rng)?;
    weighted_velocity(flow, &batch, x, t)
}

/// Denoiser-style target `x_sigma - sigma * v` built on the multi-sample velocity.
pub fn multisample_x0_target(
    flow: &FlowSpec,
    coupling: &Coupling,
    x_sigma: &Point,
    sigma: f64,
    anchor: Option<&EndpointPair>,
    n: usize,
    rng: &mut RngStream,
) -> Result<Point> {
    let est = multisample_velocity(flow, coupling, x_sigma, sigma, anchor, n, rng)?;
    Ok(x_sigma.axpy(-sigma, &est.velocity))
}

/// Concentration score of a weight vector: 0 for a point mass, 1 for uniform.
///
/// Computed as `1 - G * N / (N - 1)` with `G` the classical Gini coefficient.
pub fn gini_paper(weights: &[f64]) -> Result<f64> {
    let n = weights.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 weights, got {n}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("weights sum to {total}, expected 1")));
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    // sum_{i,j} |w_i - w_j| = 2 sum_i (2i - n + 1) w_(i); rescaled Gini = that / (2 (n - 1)).
    let nf = n as f64;
    let s: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, w)| (2.0 * i as f64 - nf + 1.0) * w)
        .sum();
    let rescaled = s / (total * (nf - 1.0));
    Ok((1.0 - rescaled).clamp(0.0, 1.0))
}

/// Mean weight concentration at one batch size.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GiniRow {
    pub n: usize,
    pub mean_gini: f64,
    pub stderr: f64,
    /// Fraction of trials where the anchor carries the largest weight.
    pub anchor_argmax_freq: f64,
    /// Per-trial values, in trial order.
    #[serde(skip)]
    pub ginis: Vec<f64>,
}

/// For each `n`, `trials` anchored multi-sample batches at time `t`: trial `i`
/// draws its anchor, `x_t` and companions from `rng.derive(i)`.
///
/// The same anchors and `x_t` are reused across all `n`.
pub fn gini_sweep(
    flow: &FlowSpec,
    coupling: &Coupling,
    ns: &[usize],
    trials: usize,
    t: f64,
    rng: &RngStream,
) -> Result<Vec<GiniRow>> {
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if let Some(n) = ns.iter().find(|n| **n < 2) {
        return Err(Error::Domain(format!("Gini needs N >= 2, got {n}")));
    }
    let mut rows: Vec<GiniRow> = ns
        .iter()
        .map(|&n| GiniRow { n, mean_gini: 0.0, stderr: 0.0, anchor_argmax_freq: 0.0, ginis: Vec::with_capacity(trials) })
        .collect();
    let mut hits = vec![0usize; ns.len()];
    for trial in 0..trials {
        let mut r = rng.derive(trial as u64);
        let anchor = coupling.sample_pair(&mut r);
        let x = flow.sample_xt(&anchor, t, &mut r)?;
        for (k, &n) in ns.iter().enumerate() {
            let mut rk = r.derive(n as u64);
            let est = multisample_velocity(flow, coupling, &x, t, Some(&anchor), n, &mut rk)?;
            rows[k].ginis.push(gini_paper(&est.weights)?);
            if est.argmax() == 0 {
                hits[k] += 1;
            }
        }
    }
    for (row, h) in rows.iter_mut().zip(hits) {
        let m = row.ginis.len() as f64;
        row.mean_gini = row.ginis.iter().sum::<f64>() / m;
        let var = if m > 1.0 {
            row.ginis.iter().map(|g| (g - row.mean_gini).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        row.stderr = (var / m).sqrt();
        row.anchor_argmax_freq = h as f64 / m;
    }
    Ok(rows)
}

/// Relative L2 error of the multi-sample target against the exact velocity,
/// with and without the anchor in the batch.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DropAnchorReport {
    pub n: usize,
    pub with_anchor: f64,
    pub without_anchor: f64,
}

/// Batches of size `n` (anchor plus `n - 1` draws) versus the same `n - 1`
/// draws alone, over `trials` anchored points at time `t`.
pub fn drop_anchor_degradation(
    flow: &FlowSpec,
    coupling: &Coupling,
    n: usize,
    trials: usize,
    t: f64,
    rng: &RngStream,
) -> Result<DropAnchorReport> {
    if n < 2 || trials == 0 {
        return Err(Error::Config("need N >= 2 and at least one trial".into()));
    }
    let support = coupling.support();
    let (mut e_with, mut e_without, mut den) = (0.0, 0.0, 0.0);
    for trial in 0..trials {
        let mut r = rng.derive(trial as u64);
        let anchor = coupling.sample_pair(&mut r);
        let x = flow.sample_xt(&anchor, t, &mut r)?;
        let exact = weighted_velocity(flow, &support, &x, t)?.velocity;
        let batch = multisample_batch(coupling, Some(&anchor), n, &mut r)?;
        let with = weighted_velocity(flow, &batch, &x, t)?.velocity;
        let sq = |v: &Point| v.sub(&exact).coords().iter().map(|c| c * c).sum::<f64>();
        e_with += sq(&with);
        // Far from every companion the weights underflow; that is the failure being measured.
        e_without += match weighted_velocity(flow, &batch[1..], &x, t) {
            Ok(v) => sq(&v.velocity),
            Err(Error::DegenerateWeights) => exact.coords().iter().map(|c| c * c).sum::<f64>(),
            Err(e) => return Err(e),
        };
        den += exact.coords().iter().map(|c| c * c).sum::<f64>();
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateEstimate("exact velocity vanishes at every probe".into()));
    }
    Ok(DropAnchorReport { n, with_anchor: (e_with / den).sqrt(), without_anchor: (e_without / den).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::field_from_flow;
    use crate::flows::FlowKind;

    fn p1(v: f64) -> Point {
        Point::new(vec![v]).unwrap()
    }

    #[test]
    fn gini_endpoints_and_hand_value() {
        assert_eq!(gini_paper(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini_paper(&[0.0, 0.0, 1.0]).unwrap(), 0.0);
        for n in [2, 3, 7, 100, 2048] {
            let w = vec![1.0 / n as f64; n];
            assert_eq!(gini_paper(&w).unwrap(), 1.0);
        }
        assert!((gini_paper(&[0.75, 0.25]).unwrap() - 0.5).abs() < 1e-15);
        assert!(gini_paper(&[1.0]).is_err());
        assert!(gini_paper(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn one_sample_is_the_conditional_velocity() {
        let flow = FlowSpec::new(FlowKind::LinearFlowMatching, 1).unwrap();
        let c = Coupling::one_sided(vec![p1(-1.0), p1(1.0), p1(3.0)]).unwrap();
        let anchor = EndpointPair::one_sided(p1(3.0));
        let mut rng = RngStream::new(0, 0);
        let est = multisample_velocity(&flow, &c, &p1(0.4), 0.3, Some(&anchor), 1, &mut rng).unwrap();
        assert_eq!(est.weights, vec![1.0]);
        assert_eq!(est.velocity, flow.cond_velocity(&anchor, &p1(0.4), 0.3).unwrap());
    }

    #[test]
    fn symmetric_two_point() {
        let flow = FlowSpec::new(FlowKind::LinearFlowMatching, 1).unwrap();
        let c = Coupling::one_sided(vec![p1(-1.0), p1(1.0)]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let est = multisample_velocity(&flow, &c, &p1(0.0), 0.5, None, 2, &mut rng).unwrap();
        assert_eq!(est.weights, vec![0.5, 0.5]);
        assert_eq!(est.velocity, p1(0.0));
        let x0 = multisample_x0_target(&flow, &c, &p1(0.0), 0.5, None, 2, &mut rng).unwrap();
        assert_eq!(x0, p1(0.0));
    }

    #[test]
    fn edm_target_by_hand() {
        // Tabulated VE at sigma = t = 1: both paths are N(0, 1), so the
        // weights at x = 0.5 are equal and the target is
        // 0.5 - mean(0.5 - 0, 0.5 - 2) = 1.
        let flow = FlowSpec::new(FlowKind::VeDiffusion, 1).unwrap();
        let c = Coupling::one_sided(vec![p1(0.0), p1(2.0)]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let x = multisample_x0_target(&flow, &c, &p1(0.5), 1.0, None, 2, &mut rng).unwrap();
        let dens = |m: f64| (-(0.5 - m) * (0.5 - m) / 2.0).exp();
        let (w0, w1) = (dens(0.0), dens(0.0));
        let brute = 0.5 - (w0 * (0.5 - 0.0) + w1 * (0.5 - 2.0)) / (w0 + w1);
        assert_eq!(brute, 1.0);
        assert!((x[0] - brute).abs() < 1e-15);
    }

    #[test]
    fn global_field_small_cases() {
        let flow = FlowSpec::new(FlowKind::TwoSidedInterpolant, 1).unwrap();
        let f = field_from_flow(&flow);
        let a = EndpointPair::two_sided(p1(0.0), p1(1.0)).unwrap();
        let b = EndpointPair::two_sided(p1(2.0), p1(-1.0)).unwrap();
        let pt = ExtendedPoint::new(p1(0.6), 0.4);
        let va = f.eval_pair_field(&a, &pt).unwrap();
        let vb = f.eval_pair_field(&b, &pt).unwrap();
        let mut rng = RngStream::new(0, 0);
        let one = Coupling::explicit(vec![a.clone()]).unwrap();
        let g1 = global_field(&f, &one, &pt, 1, &mut rng).unwrap();
        assert!((g1.temporal - va.temporal).abs() < 1e-15 * va.temporal);
        let same = Coupling::explicit(vec![a.clone(), a.clone()]).unwrap();
        let g2 = global_field(&f, &same, &pt, 2, &mut rng).unwrap();
        assert!((g2.temporal - va.temporal).abs() < 1e-15 * va.temporal);
        let two = Coupling::explicit(vec![a, b]).unwrap();
        let g = global_field(&f, &two, &pt, 2, &mut rng).unwrap();
        let et = 0.5 * (va.temporal + vb.temporal);
        let ex = 0.5 * (va.spatial[0] + vb.spatial[0]);
        assert!((g.temporal - et).abs() < 1e-14 * et);
        assert!((g.spatial[0] - ex).abs() < 1e-14 * ex.abs());
    }

    #[test]
    fn far_probe_weights_still_normalize() {
        let flow = FlowSpec::new(FlowKind::TwoSidedInterpolant, 2).unwrap().with_scale(0.01).unwrap();
        let pts: Vec<_> = (0..5)
            .map(|i| {
                EndpointPair::two_sided(
                    Point::new(vec![i as f64, 0.0]).unwrap(),
                    Point::new(vec![0.0, i as f64]).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let x = Point::new(vec![40.0, -30.0]).unwrap();
        let est = weighted_velocity(&flow, &pts, &x, 0.001).unwrap();
        let s: f64 = est.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(est.velocity.is_finite());
    }
}
