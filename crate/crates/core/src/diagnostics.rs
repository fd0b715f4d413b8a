//! Numerical checks: finite-difference divergence, slice and closed-surface
//! flux, energy distance, and flow/field roundtrip reports.

use crate::error::{Error, Result};
use crate::fields::{flow_from_field, field_from_flow, FieldSpec, PairField, VectorField};
use crate::flows::FlowSpec;
use crate::point::{norm, sq_dist, EndpointPair, ExtendedPoint, Point};
use crate::rng::RngStream;
use crate::superposition::{weighted_velocity, GlobalField};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

fn offset(p: &ExtendedPoint, k: usize, h: f64) -> ExtendedPoint {
    let d = p.x.dim();
    if k == d {
        ExtendedPoint::new(p.x.clone(), p.t + h)
    } else {
        let mut x = p.x.clone().into_vec();
        x[k] += h;
        ExtendedPoint::new(Point::raw(x), p.t)
    }
}

fn component(v: &crate::fields::ScaledFieldValue, k: usize) -> f64 {
    if k == v.spatial.len() {
        v.temporal
    } else {
        v.spatial[k]
    }
}

/// Central-difference divergence over all `D + 1` coordinates.
pub fn divergence_fd(field: &dyn VectorField, p: &ExtendedPoint, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    p.x.check_dim(field.dim())?;
    let mut div = 0.0;
    for k in 0..=field.dim() {
        let a = field.eval(&offset(p, k, h))?;
        let b = field.eval(&offset(p, k, -h))?;
        let (ca, cb) = if k == field.dim() {
            (a.temporal, b.temporal)
        } else {
            (a.spatial[k], b.spatial[k])
        };
        div += (ca - cb) / (2.0 * h);
    }
    Ok(div)
}

/// Divergence divided by the field magnitude at `p`, computed relative to the
/// centre's scale so it stays meaningful where the field underflows.
pub fn relative_divergence(field: &dyn VectorField, p: &ExtendedPoint, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let centre = field.eval_scaled(p)?;
    let mag = centre.component_norm();
    if centre.is_zero() || mag == 0.0 {
        return Err(Error::Domain("field vanishes at the probe".into()));
    }
    let mut div = 0.0;
    for k in 0..=field.dim() {
        let a = field.eval_scaled(&offset(p, k, h))?;
        let b = field.eval_scaled(&offset(p, k, -h))?;
        let ca = (a.log_scale - centre.log_scale).exp() * component(&a, k);
        let cb = (b.log_scale - centre.log_scale).exp() * component(&b, k);
        div += (ca - cb) / (2.0 * h);
    }
    Ok(div / mag)
}

#[derive(Clone, Debug, PartialEq)]
enum ProposalKind {
    Mixture(FlowSpec),
    Gaussian,
    Cauchy,
}

/// Importance distribution on a slice `t = const`: an equal-weight mixture of
/// one component per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    kind: ProposalKind,
    pairs: Vec<EndpointPair>,
    centres: Vec<Point>,
    scale: f64,
    t: f64,
}

impl Proposal {
    /// Mixture of the conditional slice densities of `flow`.
    pub fn conditional_mixture(flow: &FlowSpec, pairs: &[EndpointPair], t: f64) -> Result<Self> {
        Self::build(ProposalKind::Mixture(flow.clone()), pairs, vec![], 0.0, t)
    }

    /// Isotropic Gaussians of the given scale at `centres`.
    pub fn gaussian(centres: Vec<Point>, scale: f64, t: f64) -> Result<Self> {
        Self::build(ProposalKind::Gaussian, &[], centres, scale, t)
    }

    /// Multivariate Cauchy components of the given scale at `centres`.
    pub fn cauchy(centres: Vec<Point>, scale: f64, t: f64) -> Result<Self> {
        Self::build(ProposalKind::Cauchy, &[], centres, scale, t)
    }

    /// A proposal wider than the field's slice profile: Gaussians of 1.5 times
    /// the path scale for Gaussian paths, Cauchy components of scale `1.5 t`
    /// for the heavy-tailed Poisson paths. Centres follow the path mean.
    pub fn broad(field: &FieldSpec, pairs: &[EndpointPair], t: f64) -> Result<Self> {
        let flow = field.dual_flow().ok_or_else(|| {
            Error::Config(format!("no slice profile known for {}", field.kind()))
        })?;
        let centres = pairs
            .iter()
            .map(|p| flow.interpolant_mean(p, t))
            .collect::<Result<Vec<_>>>()?;
        if flow.kind().is_poisson() {
            Self::cauchy(centres, 1.5 * t, t)
        } else {
            Self::gaussian(centres, 1.5 * flow.noise_schedule(t)?, t)
        }
    }

    fn build(kind: ProposalKind, pairs: &[EndpointPair], centres: Vec<Point>, scale: f64, t: f64) -> Result<Self> {
        let n = if matches!(kind, ProposalKind::Mixture(_)) { pairs.len() } else { centres.len() };
        if n == 0 {
            return Err(Error::Config("proposal needs at least one component".into()));
        }
        if !matches!(kind, ProposalKind::Mixture(_)) && !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::DegenerateEstimate(format!("proposal scale {scale} is not positive")));
        }
        Ok(Proposal { kind, pairs: pairs.to_vec(), centres, scale, t })
    }

    fn len(&self) -> usize {
        match self.kind {
            ProposalKind::Mixture(_) => self.pairs.len(),
            _ => self.centres.len(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<Point> {
        let i = rng.index(self.len());
        match &self.kind {
            ProposalKind::Mixture(flow) => flow.sample_xt(&self.pairs[i], self.t, rng),
            ProposalKind::Gaussian => {
                let d = self.centres[i].dim();
                Ok(self.centres[i].axpy(self.scale, &Point::raw(rng.normal_vec(d))))
            }
            ProposalKind::Cauchy => {
                let d = self.centres[i].dim();
                let z = rng.normal_vec(d);
                let w = rng.normal().abs().max(f64::MIN_POSITIVE);
                Ok(self.centres[i].axpy(self.scale / w, &Point::raw(z)))
            }
        }
    }

    pub fn log_pdf(&self, x: &Point) -> Result<f64> {
        let logs: Vec<f64> = match &self.kind {
            ProposalKind::Mixture(flow) => self
                .pairs
                .iter()
                .map(|p| flow.cond_log_density(p, x, self.t))
                .collect::<Result<_>>()?,
            ProposalKind::Gaussian => {
                let d = x.dim() as f64;
                let s2 = self.scale * self.scale;
                let c = -0.5 * d * (2.0 * PI * s2).ln();
                self.centres.iter().map(|m| c - sq_dist(x.coords(), m.coords()) / (2.0 * s2)).collect()
            }
            ProposalKind::Cauchy => {
                let d = x.dim() as f64;
                let a = 0.5 * (d + 1.0);
                let c = ln_gamma(a) - 0.5 * (d + 1.0) * PI.ln() - d * self.scale.ln();
                let s2 = self.scale * self.scale;
                self.centres
                    .iter()
                    .map(|m| c - a * (1.0 + sq_dist(x.coords(), m.coords()) / s2).ln())
                    .collect()
            }
        };
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Ok(m);
        }
        let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        Ok(m + s.ln() - (logs.len() as f64).ln())
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FluxEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

const CHUNK: usize = 1024;

/// Importance-sampling estimate of `integral E_t(x, t) dx` over the slice at
/// `proposal`'s time. Chunk `c` of 1024 draws uses `rng.derive(c)`.
pub fn slice_flux(field: &dyn VectorField, proposal: &Proposal, n_mc: usize, rng: &RngStream) -> Result<FluxEstimate> {
    if n_mc < 2 {
        return Err(Error::Config("need at least two Monte-Carlo samples".into()));
    }
    let t = proposal.t;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut nonzero = 0usize;
    for c in 0..n_mc.div_ceil(CHUNK) {
        let mut r = rng.derive(c as u64);
        for _ in 0..CHUNK.min(n_mc - c * CHUNK) {
            let x = proposal.sample(&mut r)?;
            let lq = proposal.log_pdf(&x)?;
            let v = field.eval_scaled(&ExtendedPoint::new(x, t))?;
            let w = if v.is_zero() || v.temporal == 0.0 {
                0.0
            } else {
                (v.log_scale - lq).exp() * v.temporal
            };
            if !w.is_finite() {
                return Err(Error::DegenerateEstimate(
                    "importance weight overflowed; proposal lacks mass where the field lives".into(),
                ));
            }
            if w != 0.0 {
                nonzero += 1;
            }
            sum += w;
            sum_sq += w * w;
        }
    }
    if nonzero == 0 {
        return Err(Error::DegenerateEstimate("every importance weight is zero".into()));
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(FluxEstimate { estimate: mean, stderr: (var / n).sqrt() })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite rule on `[a, b]` over panels with the given sorted edges.
fn composite(edges: &[f64], n: usize) -> Vec<(f64, f64)> {
    let (gx, gw) = gauss_legendre(n);
    let mut out = Vec::with_capacity((edges.len() - 1) * n);
    for e in edges.windows(2) {
        let (mid, half) = (0.5 * (e[0] + e[1]), 0.5 * (e[1] - e[0]));
        for (x, w) in gx.iter().zip(&gw) {
            out.push((mid + half * x, half * w));
        }
    }
    out
}

/// Panel edges on `[0, len]`: uniform panels plus geometric refinement towards 0.
fn graded_edges(len: f64) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=64).map(|i| len * i as f64 / 64.0).collect();
    e.extend((1..=40).map(|j| len * 0.5f64.powi(j)));
    e.sort_by(f64::total_cmp);
    e.dedup();
    e
}

/// Outward flux through the closed cylinder `B_R(centre) x [t_lo, t_hi]`,
/// for `D <= 2`. With `skip_bottom` the face at `t_lo` is taken as zero.
pub fn cylinder_flux(
    field: &dyn VectorField,
    centre: &Point,
    radius: f64,
    t_lo: f64,
    t_hi: f64,
    n_quad: usize,
    skip_bottom: bool,
) -> Result<f64> {
    let d = field.dim();
    centre.check_dim(d)?;
    if d > 2 {
        return Err(Error::Config(format!("closed-surface quadrature supports D <= 2, got {d}")));
    }
    if !(radius > 0.0 && t_hi > t_lo && n_quad > 0) {
        return Err(Error::Geometry("need positive radius, height and node count".into()));
    }
    let radial = composite(&graded_edges(radius), n_quad);
    let height = t_hi - t_lo;
    // Refine towards both caps.
    let mut te: Vec<f64> = graded_edges(0.5 * height);
    let upper: Vec<f64> = te.iter().map(|s| height - s).collect();
    te.extend(upper);
    te.sort_by(f64::total_cmp);
    te.dedup();
    let times: Vec<(f64, f64)> = composite(&te, n_quad).into_iter().map(|(s, w)| (t_lo + s, w)).collect();
    let n_ang = 32 * n_quad;
    let c = centre.coords();
    let at = |x: Vec<f64>, t: f64| field.eval(&ExtendedPoint::new(Point::raw(x), t));

    let cap = |t: f64| -> Result<f64> {
        let mut s = 0.0;
        if d == 1 {
            for &(r, w) in &radial {
                s += w * (at(vec![c[0] + r], t)?.temporal + at(vec![c[0] - r], t)?.temporal);
            }
        } else {
            for &(r, w) in &radial {
                let mut ring = 0.0;
                for j in 0..n_ang {
                    let th = 2.0 * PI * j as f64 / n_ang as f64;
                    ring += at(vec![c[0] + r * th.cos(), c[1] + r * th.sin()], t)?.temporal;
                }
                s += w * r * ring * 2.0 * PI / n_ang as f64;
            }
        }
        Ok(s)
    };
    let mut total = cap(t_hi)?;
    if !skip_bottom {
        total -= cap(t_lo)?;
    }
    for &(t, w) in &times {
        let side = if d == 1 {
            at(vec![c[0] + radius], t)?.spatial[0] - at(vec![c[0] - radius], t)?.spatial[0]
        } else {
            let mut ring = 0.0;
            for j in 0..n_ang {
                let th = 2.0 * PI * j as f64 / n_ang as f64;
                let (sn, cs) = th.sin_cos();
                let v = at(vec![c[0] + radius * cs, c[1] + radius * sn], t)?;
                ring += v.spatial[0] * cs + v.spatial[1] * sn;
            }
            ring * radius * 2.0 * PI / n_ang as f64
        };
        total += w * side;
    }
    Ok(total)
}

/// Flux of a pairwise field out of the pillbox `B_R(x0) x [-eps, eps]`. The
/// bottom face contributes nothing since forward-only fields vanish for `t < 0`.
pub fn pillbox_flux(spec: &FieldSpec, pair: &EndpointPair, radius: f64, half_height: f64, n_quad: usize) -> Result<f64> {
    if let Some(xt) = &pair.xt {
        let gap = norm(&xt.sub(&pair.x0).into_vec());
        if gap <= radius && spec.horizon() <= half_height {
            return Err(Error::Geometry("pillbox encloses both particles".into()));
        }
    }
    if half_height >= spec.horizon() {
        return Err(Error::Geometry("pillbox reaches past the opposite plate".into()));
    }
    let field = PairField { spec, pair };
    cylinder_flux(&field, &pair.x0, radius, 0.0, half_height, n_quad, true)
}

/// Squared energy distance (V-statistic).
pub fn energy_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("energy distance needs non-empty samples".into()));
    }
    let d = a[0].dim();
    for p in a.iter().chain(b) {
        p.check_dim(d).map_err(|_| Error::Domain("samples have unequal dimensions".into()))?;
    }
    let mean_dist = |u: &[Point], v: &[Point]| -> f64 {
        let mut s = 0.0;
        for p in u {
            for q in v {
                s += sq_dist(p.coords(), q.coords()).sqrt();
            }
        }
        s / (u.len() * v.len()) as f64
    };
    Ok((2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)).max(0.0))
}

/// Permutation null of the energy distance between `a` and `b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationNull {
    pub observed: f64,
    pub null: Vec<f64>,
}

impl PermutationNull {
    /// Empirical quantile of the null (linear interpolation).
    pub fn quantile(&self, q: f64) -> f64 {
        let mut s = self.null.clone();
        s.sort_by(f64::total_cmp);
        let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < s.len() {
            s[i] * (1.0 - f) + s[i + 1] * f
        } else {
            s[i]
        }
    }

    pub fn p_value(&self) -> f64 {
        let k = self.null.iter().filter(|v| **v >= self.observed).count();
        (k + 1) as f64 / (self.null.len() + 1) as f64
    }
}

/// Energy distances under random relabelling of the pooled sample.
pub fn permutation_null(a: &[Point], b: &[Point], n_perm: usize, rng: &mut RngStream) -> Result<PermutationNull> {
    let observed = energy_distance(a, b)?;
    let pooled: Vec<&Point> = a.iter().chain(b).collect();
    let n = pooled.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(pooled[i].coords(), pooled[j].coords()).sqrt();
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let total: f64 = dist.iter().sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut null = Vec::with_capacity(n_perm);
    let mut labels: Vec<usize> = (0..n).collect();
    for _ in 0..n_perm {
        for i in (1..n).rev() {
            let j = rng.index(i + 1);
            labels.swap(i, j);
        }
        let (ga, gb) = labels.split_at(a.len());
        let within = |g: &[usize]| -> f64 {
            let mut s = 0.0;
            for &i in g {
                let row = &dist[i * n..(i + 1) * n];
                for &j in g {
                    s += row[j];
                }
            }
            s
        };
        let (saa, sbb) = (within(ga), within(gb));
        let sab = 0.5 * (total - saa - sbb);
        null.push((2.0 * sab / (na * nb) - saa / (na * na) - sbb / (nb * nb)).max(0.0));
    }
    Ok(PermutationNull { observed, null })
}

/// Error summary over probes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub max: f64,
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
}

impl ErrorSummary {
    pub fn of(errs: &[f64]) -> Self {
        if errs.is_empty() {
            return ErrorSummary { max: 0.0, mean: 0.0, q50: 0.0, q90: 0.0, q99: 0.0 };
        }
        let mut s = errs.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        ErrorSummary {
            max: *s.last().unwrap(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            q50: q(0.5),
            q90: q(0.9),
            q99: q(0.99),
        }
    }
}

/// A roundtrip probe.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub pair: EndpointPair,
    pub x: Point,
    pub t: f64,
}

/// Probes with pairs drawn from `pairs`, `t ~ U[0.05 T, 0.95 T]` and `x` from the pair's path.
pub fn random_probes(flow: &FlowSpec, pairs: &[EndpointPair], n: usize, rng: &mut RngStream) -> Result<Vec<Probe>> {
    let tt = flow.horizon();
    (0..n)
        .map(|_| {
            let pair = pairs[rng.index(pairs.len())].clone();
            let t = rng.uniform_range(0.05 * tt, 0.95 * tt);
            let x = flow.sample_xt(&pair, t, rng)?;
            Ok(Probe { pair, x, t })
        })
        .collect()
}

/// Per-probe relative errors of the flow/field roundtrip.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    pub n_probes: usize,
    pub velocity_roundtrip: ErrorSummary,
    pub density_roundtrip: ErrorSummary,
    pub global_velocity: ErrorSummary,
    #[serde(skip)]
    pub per_probe: Vec<[f64; 3]>,
}

impl DualityReport {
    pub fn max_error(&self) -> f64 {
        self.velocity_roundtrip.max.max(self.density_roundtrip.max).max(self.global_velocity.max)
    }
}

fn rel_vec(a: &Point, b: &Point) -> f64 {
    let diff = norm(&a.sub(b).into_vec());
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Compares the flow read off `field` (with total flux `flux`) against
/// `reference` at every probe, and the superposed field over `pairs` against
/// the reference's weighted velocity.
pub fn duality_check(
    field: &FieldSpec,
    flux: f64,
    reference: &FlowSpec,
    pairs: &[EndpointPair],
    probes: &[Probe],
) -> Result<DualityReport> {
    let derived = flow_from_field(field, flux)?;
    let global = GlobalField::new(field, pairs.to_vec())?;
    let mut per_probe = Vec::with_capacity(probes.len());
    for pr in probes {
        let v_ref = reference.cond_velocity(&pr.pair, &pr.x, pr.t)?;
        let v_der = derived.cond_velocity(&pr.pair, &pr.x, pr.t)?;
        let l_ref = reference.cond_log_density(&pr.pair, &pr.x, pr.t)?;
        let l_der = derived.cond_log_density(&pr.pair, &pr.x, pr.t)?;
        let e = ExtendedPoint::new(pr.x.clone(), pr.t);
        let v_glob = global.eval_scaled(&e)?.velocity(&e)?;
        let v_ms = weighted_velocity(reference, pairs, &pr.x, pr.t)?.velocity;
        per_probe.push([rel_vec(&v_der, &v_ref), (l_der - l_ref).exp_m1().abs(), rel_vec(&v_glob, &v_ms)]);
    }
    let col = |i: usize| per_probe.iter().map(|r| r[i]).collect::<Vec<_>>();
    Ok(DualityReport {
        n_probes: probes.len(),
        velocity_roundtrip: ErrorSummary::of(&col(0)),
        density_roundtrip: ErrorSummary::of(&col(1)),
        global_velocity: ErrorSummary::of(&col(2)),
        per_probe,
    })
}

/// Flow -> field -> flow roundtrip of `flow` (unit flux).
pub fn duality_report(flow: &FlowSpec, pairs: &[EndpointPair], probes: &[Probe]) -> Result<DualityReport> {
    duality_check(&field_from_flow(flow), 1.0, flow, pairs, probes)
}
