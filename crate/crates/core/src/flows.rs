//! Conditional flows: a conditional velocity paired with the density path it transports.
//!
//! Gaussian kinds follow `x_t = I_t + s_t * eps` and have velocity
//! `dI/dt + (ds/dt / s_t) (x - I_t)`. The Poisson kinds use the heavy-tailed
//! radial law `p_t(x) ~ t^d / (|x - x0|^2 + t^2)^((D+d)/2)` with velocity `(x - x0) / t`.

use crate::error::{Error, Result};
use crate::point::{sq_dist, EndpointPair, Point};
use crate::rng::RngStream;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Default endpoint clamp as a fraction of the horizon.
pub const T_EPS_FRACTION: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowKind {
    TwoSidedInterpolant,
    OneSidedInterpolant,
    LinearFlowMatching,
    VeDiffusion,
    Pfgm,
    PfgmPlusPlus,
    IfmCanonical,
}

impl FlowKind {
    pub const ALL: [FlowKind; 7] = [
        FlowKind::TwoSidedInterpolant,
        FlowKind::OneSidedInterpolant,
        FlowKind::LinearFlowMatching,
        FlowKind::VeDiffusion,
        FlowKind::Pfgm,
        FlowKind::PfgmPlusPlus,
        FlowKind::IfmCanonical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlowKind::TwoSidedInterpolant => "two-sided-interpolant",
            FlowKind::OneSidedInterpolant => "one-sided-interpolant",
            FlowKind::LinearFlowMatching => "linear-flow-matching",
            FlowKind::VeDiffusion => "ve-diffusion",
            FlowKind::Pfgm => "pfgm",
            FlowKind::PfgmPlusPlus => "pfgm-plus-plus",
            FlowKind::IfmCanonical => "ifm-canonical",
        }
    }

    /// Whether the path needs a source-side sample `xT`.
    pub fn is_two_sided(self) -> bool {
        matches!(self, FlowKind::TwoSidedInterpolant | FlowKind::IfmCanonical)
    }

    pub fn is_poisson(self) -> bool {
        matches!(self, FlowKind::Pfgm | FlowKind::PfgmPlusPlus)
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k = match s {
            "two-sided-interpolant" | "two-sided-linear" | "two-sided" => FlowKind::TwoSidedInterpolant,
            "one-sided-interpolant" | "one-sided" => FlowKind::OneSidedInterpolant,
            "linear-flow-matching" | "linear-fm" | "lfm" => FlowKind::LinearFlowMatching,
            "ve-diffusion" | "ve" => FlowKind::VeDiffusion,
            "pfgm" => FlowKind::Pfgm,
            "pfgm-plus-plus" | "pfgm++" => FlowKind::PfgmPlusPlus,
            "ifm-canonical" | "ifm-canonical-realization" => FlowKind::IfmCanonical,
            other => {
                let names: Vec<_> = FlowKind::ALL.iter().map(|k| k.name()).collect();
                return Err(Error::Config(format!(
                    "unknown flow kind '{other}'; valid kinds: {}",
                    names.join(", ")
                )));
            }
        };
        Ok(k)
    }
}

/// Which variance-exploding path to use.
///
/// `Tabulated` is the textbook row: mean `(1 - t) x0`, `sigma_t = t`, velocity `x - x0`.
/// That pairing does not satisfy the continuity equation. `MeanX0` keeps
/// `sigma_t = t` but centers the path at `x0` with velocity `(x - x0) / t`, which does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VeVariant {
    #[default]
    Tabulated,
    MeanX0,
}

impl FromStr for VeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabulated" => Ok(VeVariant::Tabulated),
            "mean-x0" => Ok(VeVariant::MeanX0),
            other => Err(Error::Config(format!(
                "unknown ve variant '{other}'; valid: tabulated, mean-x0"
            ))),
        }
    }
}

impl VeVariant {
    pub fn name(self) -> &'static str {
        match self {
            VeVariant::Tabulated => "tabulated",
            VeVariant::MeanX0 => "mean-x0",
        }
    }
}

/// Velocity and log-density of a conditional path at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalEvaluation {
    pub velocity: Point,
    pub log_density: f64,
}

/// A conditional flow family.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    kind: FlowKind,
    horizon: f64,
    scale: f64,
    aug_dim: u32,
    dim: usize,
    ve_variant: VeVariant,
}

impl FlowSpec {
    /// Defaults: `T = 1`, `s = 1`, `d = 1`, tabulated VE row.
    pub fn new(kind: FlowKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        Ok(FlowSpec {
            kind,
            horizon: 1.0,
            scale: 1.0,
            aug_dim: 1,
            dim,
            ve_variant: VeVariant::Tabulated,
        })
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("noise scale must be nonnegative, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn with_aug_dim(mut self, d: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("augmentation dimension must be at least 1".into()));
        }
        self.aug_dim = d;
        Ok(self)
    }

    pub fn with_ve_variant(mut self, v: VeVariant) -> Self {
        self.ve_variant = v;
        self
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn ve_variant(&self) -> VeVariant {
        self.ve_variant
    }

    /// Augmentation dimension actually in effect (`pfgm` always uses 1).
    pub fn aug_dim(&self) -> u32 {
        match self.kind {
            FlowKind::Pfgm => 1,
            _ => self.aug_dim,
        }
    }

    /// Clamps `t` into `[eps, T - eps]` with `eps = 1e-4 T`.
    pub fn clamp_time(&self, t: f64) -> f64 {
        let eps = T_EPS_FRACTION * self.horizon;
        t.clamp(eps, self.horizon - eps)
    }

    fn check_pair(&self, pair: &EndpointPair) -> Result<()> {
        pair.x0.check_dim(self.dim)?;
        if self.kind.is_two_sided() {
            match &pair.xt {
                Some(xt) => xt.check_dim(self.dim)?,
                None => {
                    return Err(Error::Config(format!(
                        "{} needs a source-side sample in every pair",
                        self.kind
                    )))
                }
            }
        }
        Ok(())
    }

    fn check_closed(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// Open interval check used by velocity and density.
    fn check_open(&self, t: f64) -> Result<()> {
        self.check_closed(t)?;
        // One-sided paths keep a positive noise scale at the horizon.
        let upper_ok = !self.kind.is_two_sided() || t < self.horizon;
        if t == 0.0 || !upper_ok {
            return Err(Error::EndpointSingularity { t });
        }
        Ok(())
    }

    fn mean_coeffs(&self, t: f64) -> (f64, f64) {
        // I_t = a * x0 + b * xT
        let u = t / self.horizon;
        match self.kind {
            FlowKind::TwoSidedInterpolant | FlowKind::IfmCanonical => (1.0 - u, u),
            FlowKind::OneSidedInterpolant | FlowKind::LinearFlowMatching => (1.0 - u, 0.0),
            FlowKind::VeDiffusion => match self.ve_variant {
                VeVariant::Tabulated => (1.0 - u, 0.0),
                VeVariant::MeanX0 => (1.0, 0.0),
            },
            FlowKind::Pfgm | FlowKind::PfgmPlusPlus => (1.0, 0.0),
        }
    }

    fn combine(&self, pair: &EndpointPair, a: f64, b: f64) -> Point {
        match (&pair.xt, b != 0.0) {
            (Some(xt), true) => Point::raw(
                pair.x0
                    .coords()
                    .iter()
                    .zip(xt.coords())
                    .map(|(p, q)| a * p + b * q)
                    .collect(),
            ),
            _ => pair.x0.scale(a),
        }
    }

    /// Mean path `I_t` (or `J_t` for one-sided kinds; the center `x0` for Poisson kinds).
    pub fn interpolant_mean(&self, pair: &EndpointPair, t: f64) -> Result<Point> {
        self.check_pair(pair)?;
        self.check_closed(t)?;
        if t == 0.0 {
            return Ok(pair.x0.clone());
        }
        if t == self.horizon && self.kind.is_two_sided() {
            return Ok(pair.xt.clone().expect("checked"));
        }
        let (a, b) = self.mean_coeffs(t);
        Ok(self.combine(pair, a, b))
    }

    /// Time derivative of the mean path.
    pub fn mean_derivative(&self, pair: &EndpointPair, t: f64) -> Result<Point> {
        self.check_pair(pair)?;
        self.check_closed(t)?;
        let inv = 1.0 / self.horizon;
        let (a, b) = match self.kind {
            FlowKind::TwoSidedInterpolant | FlowKind::IfmCanonical => (-inv, inv),
            FlowKind::OneSidedInterpolant | FlowKind::LinearFlowMatching => (-inv, 0.0),
            FlowKind::VeDiffusion => match self.ve_variant {
                VeVariant::Tabulated => (-inv, 0.0),
                VeVariant::MeanX0 => (0.0, 0.0),
            },
            FlowKind::Pfgm | FlowKind::PfgmPlusPlus => (0.0, 0.0),
        };
        Ok(self.combine(pair, a, b))
    }

    /// Noise scale `s_t` (the radial scale `t` for Poisson kinds).
    pub fn noise_schedule(&self, t: f64) -> Result<f64> {
        self.check_closed(t)?;
        let u = t / self.horizon;
        Ok(match self.kind {
            FlowKind::TwoSidedInterpolant => self.scale * (2.0 * u * (1.0 - u)).max(0.0).sqrt(),
            FlowKind::OneSidedInterpolant => (0.5 * PI * u).sin(),
            FlowKind::LinearFlowMatching => u,
            FlowKind::VeDiffusion | FlowKind::Pfgm | FlowKind::PfgmPlusPlus => t,
            FlowKind::IfmCanonical => sin_cos_pi(2.0 * u).0.abs(),
        })
    }

    /// `(ds/dt) / s_t` for Gaussian kinds.
    fn schedule_log_derivative(&self, t: f64) -> f64 {
        let tt = self.horizon;
        let u = t / tt;
        match self.kind {
            FlowKind::TwoSidedInterpolant => (1.0 - 2.0 * u) / (2.0 * u * (1.0 - u) * tt),
            FlowKind::OneSidedInterpolant => {
                let a = 0.5 * PI * u;
                0.5 * PI / tt * a.cos() / a.sin()
            }
            FlowKind::IfmCanonical => {
                let (s, c) = sin_cos_pi(2.0 * u);
                2.0 * PI / tt * c / s
            }
            _ => 1.0 / t,
        }
    }

    fn positive_sigma(&self, t: f64) -> Result<f64> {
        let s = self.noise_schedule(t)?;
        if s <= 0.0 {
            return Err(Error::DegeneratePath { t });
        }
        Ok(s)
    }

    pub fn cond_velocity(&self, pair: &EndpointPair, x: &Point, t: f64) -> Result<Point> {
        Ok(self.evaluate(pair, x, t)?.velocity)
    }

    pub fn cond_log_density(&self, pair: &EndpointPair, x: &Point, t: f64) -> Result<f64> {
        self.check_pair(pair)?;
        x.check_dim(self.dim)?;
        Ok(self.at_time(t)?.log_density(pair, x.coords()))
    }

    pub fn evaluate(&self, pair: &EndpointPair, x: &Point, t: f64) -> Result<ConditionalEvaluation> {
        self.check_pair(pair)?;
        x.check_dim(self.dim)?;
        let slice = self.at_time(t)?;
        let mut v = vec![0.0; self.dim];
        let log_density = slice.eval(pair, x.coords(), &mut v);
        Ok(ConditionalEvaluation { velocity: Point::raw(v), log_density })
    }

    /// Precomputes every time-dependent constant so that per-pair evaluation
    /// is allocation-free. All evaluation paths go through this.
    pub fn at_time(&self, t: f64) -> Result<TimeSlice> {
        self.check_open(t)?;
        let d = self.dim as f64;
        let (a, b) = self.mean_coeffs(t);
        let inv = 1.0 / self.horizon;
        let (da, db) = match self.kind {
            FlowKind::TwoSidedInterpolant | FlowKind::IfmCanonical => (-inv, inv),
            _ => (-inv, 0.0),
        };
        let velocity = match (self.kind, self.ve_variant) {
            (FlowKind::VeDiffusion, VeVariant::Tabulated) => VelocityForm::Difference,
            (FlowKind::VeDiffusion, VeVariant::MeanX0)
            | (FlowKind::LinearFlowMatching, _)
            | (FlowKind::Pfgm, _)
            | (FlowKind::PfgmPlusPlus, _) => VelocityForm::OverT,
            _ => VelocityForm::Affine { da, db, kappa: self.schedule_log_derivative(t) },
        };
        let density = if self.kind.is_poisson() {
            let aug = self.aug_dim() as f64;
            let pa = 0.5 * (d + aug);
            DensityForm::Poisson {
                log_norm: ln_gamma(pa) - 0.5 * d * PI.ln() - ln_gamma(0.5 * aug) + aug * t.ln(),
                exponent: pa,
            }
        } else {
            let sigma = self.positive_sigma(t)?;
            DensityForm::Gaussian {
                log_norm: -0.5 * d * (2.0 * PI * sigma * sigma).ln(),
                two_var: 2.0 * sigma * sigma,
            }
        };
        Ok(TimeSlice { t, a, b, velocity, density })
    }

    /// Draws `x_t ~ p_t(. | pair)`.
    pub fn sample_xt(&self, pair: &EndpointPair, t: f64, rng: &mut RngStream) -> Result<Point> {
        self.check_pair(pair)?;
        self.check_closed(t)?;
        if t == 0.0 {
            return Ok(pair.x0.clone());
        }
        if self.kind.is_poisson() {
            let half_d = 0.5 * self.dim as f64;
            let half_aug = 0.5 * self.aug_dim() as f64;
            let b = loop {
                let b = rng.beta(half_d, half_aug);
                if b < 1.0 {
                    break b;
                }
            };
            let r = t * (b / (1.0 - b)).sqrt();
            let dir = rng.unit_vector(self.dim);
            return Ok(pair.x0.axpy(r, &Point::raw(dir)));
        }
        let mean = self.interpolant_mean(pair, t)?;
        let sigma = self.noise_schedule(t)?;
        let eps = Point::raw(rng.normal_vec(self.dim));
        Ok(mean.axpy(sigma, &eps))
    }

    /// Central-difference estimate of `dp/dt + div(v p)` at `(x, t)`.
    pub fn continuity_residual(&self, pair: &EndpointPair, x: &Point, t: f64, h: f64) -> Result<f64> {
        mixed_continuity_residual(self, self, pair, x, t, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum VelocityForm {
    /// `da x0 + db xT + kappa (x - I_t)`
    Affine { da: f64, db: f64, kappa: f64 },
    /// `(x - x0) / t`
    OverT,
    /// `x - x0`
    Difference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum DensityForm {
    Gaussian { log_norm: f64, two_var: f64 },
    Poisson { log_norm: f64, exponent: f64 },
}

/// A flow frozen at one time. Pair and point dimensions are the caller's
/// responsibility; [`FlowSpec`] methods check them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSlice {
    t: f64,
    a: f64,
    b: f64,
    velocity: VelocityForm,
    density: DensityForm,
}

impl TimeSlice {
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    fn mean_k(&self, pair: &EndpointPair, k: usize) -> f64 {
        match &pair.xt {
            Some(xt) if self.b != 0.0 => self.a * pair.x0[k] + self.b * xt[k],
            _ => self.a * pair.x0[k],
        }
    }

    /// Log-density of the conditional path at `x`.
    #[inline]
    pub fn log_density(&self, pair: &EndpointPair, x: &[f64]) -> f64 {
        match self.density {
            DensityForm::Gaussian { log_norm, two_var } => {
                let mut r2 = 0.0;
                for (k, xk) in x.iter().enumerate() {
                    let dk = xk - self.mean_k(pair, k);
                    r2 += dk * dk;
                }
                log_norm - r2 / two_var
            }
            DensityForm::Poisson { log_norm, exponent } => {
                let r2 = sq_dist(x, pair.x0.coords());
                log_norm - exponent * (r2 + self.t * self.t).ln()
            }
        }
    }

    /// Writes the conditional velocity into `v` and returns the log-density.
    #[inline]
    pub fn eval(&self, pair: &EndpointPair, x: &[f64], v: &mut [f64]) -> f64 {
        for (k, (vk, xk)) in v.iter_mut().zip(x).enumerate() {
            *vk = match self.velocity {
                VelocityForm::Affine { da, db, kappa } => {
                    let dm = match &pair.xt {
                        Some(xt) if db != 0.0 => da * pair.x0[k] + db * xt[k],
                        _ => da * pair.x0[k],
                    };
                    dm + kappa * (xk - self.mean_k(pair, k))
                }
                VelocityForm::OverT => (xk - pair.x0[k]) / self.t,
                VelocityForm::Difference => xk - pair.x0[k],
            };
        }
        self.log_density(pair, x)
    }
}

/// `(sin(pi x), cos(pi x))` with exact zeros at integer and half-integer `x`.
pub(crate) fn sin_cos_pi(x: f64) -> (f64, f64) {
    let r = x.rem_euclid(2.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 0.5 {
        (1.0, 0.0)
    } else if r == 1.0 {
        (0.0, -1.0)
    } else if r == 1.5 {
        (-1.0, 0.0)
    } else {
        (PI * x).sin_cos()
    }
}

/// Continuity residual with the velocity taken from `velocity` and the density from `density`.
pub fn mixed_continuity_residual(
    velocity: &FlowSpec,
    density: &FlowSpec,
    pair: &EndpointPair,
    x: &Point,
    t: f64,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let tt = density.horizon();
    if t - h <= 0.0 || t + h >= tt {
        return Err(Error::Domain(format!(
            "stencil [{}, {}] leaves (0, {tt})",
            t - h,
            t + h
        )));
    }
    let p = |y: &Point, s: f64| density.cond_log_density(pair, y, s).map(f64::exp);
    let mut res = (p(x, t + h)? - p(x, t - h)?) / (2.0 * h);
    let mut y = x.clone().into_vec();
    for k in 0..x.dim() {
        let mut flux = [0.0; 2];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            y[k] = x[k] + sign * h;
            let yp = Point::raw(y.clone());
            flux[slot] = velocity.cond_velocity(pair, &yp, t)?[k] * p(&yp, t)?;
        }
        y[k] = x[k];
        res += (flux[0] - flux[1]) / (2.0 * h);
    }
    Ok(res)
}
