//! Fixed-step integration of the generative ODE and particle transport.

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::fields::{FieldSpec, VectorField};
use crate::flows::{FlowSpec, T_EPS_FRACTION};
use crate::point::{ExtendedPoint, Point};
use crate::rng::RngStream;
use crate::superposition::{weighted_velocity, GlobalField};
use rayon::prelude::*;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Heun,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            other => Err(Error::Config(format!("unknown scheme '{other}'; valid: euler, heun"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// From the source plate `t = T` down to the data at `t = 0`.
    SourceToTarget,
    TargetToSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub n_steps: usize,
    pub direction: Direction,
    /// Distance kept from `t = 0` and from `t = T`.
    pub t_clip: (f64, f64),
    pub horizon: f64,
    /// Apply Heun's corrector on the last step too. Off by default: the last
    /// step ends next to the data plate, where the exact empirical velocity is
    /// nearly singular and the corrector slope throws particles off the data.
    pub correct_last_step: bool,
}

impl IntegratorConfig {
    /// Heun, 50 steps, source to target, clip `(1e-4, 1e-4) * T`, Euler last step.
    pub fn new(horizon: f64) -> Self {
        IntegratorConfig {
            scheme: Scheme::Heun,
            n_steps: 50,
            direction: Direction::SourceToTarget,
            t_clip: (T_EPS_FRACTION * horizon, T_EPS_FRACTION * horizon),
            horizon,
            correct_last_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        let (lo, hi) = self.t_clip;
        if !(lo > 0.0 && hi > 0.0 && lo + hi < self.horizon) {
            return Err(Error::Config(format!(
                "t_clip ({lo}, {hi}) must be positive and sum below T = {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// `(t_start, t_end)` of the integration.
    pub fn endpoints(&self) -> (f64, f64) {
        let lo = self.t_clip.0;
        let hi = self.horizon - self.t_clip.1;
        match self.direction {
            Direction::SourceToTarget => (hi, lo),
            Direction::TargetToSource => (lo, hi),
        }
    }

    fn node(&self, k: usize) -> f64 {
        let (a, b) = self.endpoints();
        if k == self.n_steps {
            return b;
        }
        a + (b - a) * (k as f64 / self.n_steps as f64)
    }
}

/// Integrates `dx/dt = v(x, t)` over the clipped interval; returns every node.
pub fn integrate_trajectory<F>(velocity: F, start: &Point, cfg: &IntegratorConfig) -> Result<Vec<(f64, Point)>>
where
    F: Fn(&Point, f64) -> Result<Point>,
{
    cfg.validate()?;
    if !start.is_finite() {
        return Err(Error::Domain("start point is not finite".into()));
    }
    let wrap = |step: usize| move |e: Error| Error::Evaluator { step, source: Box::new(e) };
    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    let mut x = start.clone();
    out.push((cfg.node(0), x.clone()));
    for k in 0..cfg.n_steps {
        let (ta, tb) = (cfg.node(k), cfg.node(k + 1));
        let h = tb - ta;
        let k1 = velocity(&x, ta).map_err(wrap(k))?;
        let last = k + 1 == cfg.n_steps && !cfg.correct_last_step;
        x = match cfg.scheme {
            Scheme::Euler => x.axpy(h, &k1),
            Scheme::Heun if last => x.axpy(h, &k1),
            Scheme::Heun => {
                let pred = x.axpy(h, &k1);
                let k2 = velocity(&pred, tb).map_err(wrap(k))?;
                x.axpy(0.5 * h, &k1.add(&k2))
            }
        };
        out.push((tb, x.clone()));
    }
    Ok(out)
}

/// Where the transport velocity comes from.
#[derive(Clone, Copy, Debug)]
pub enum Route<'a> {
    /// Exact weighted velocity over the coupling's support.
    Flow(&'a FlowSpec),
    /// Component ratio `E_x / E_t` of the superposed field.
    Field(&'a FieldSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportResult {
    pub starts: Vec<Point>,
    pub trajectories: Vec<Vec<(f64, Point)>>,
}

impl TransportResult {
    pub fn terminals(&self) -> Vec<Point> {
        self.trajectories.iter().map(|tr| tr.last().expect("non-empty").1.clone()).collect()
    }

    /// CSV `particle_id,x_1..x_D` of terminal points.
    pub fn terminal_csv(&self) -> String {
        points_csv(&self.terminals())
    }

    /// CSV `particle_id,t,x_1..x_D` with every integration node.
    pub fn trajectory_csv(&self) -> String {
        let d = self.starts.first().map_or(0, |p| p.dim());
        let mut s = String::from("particle_id,t");
        for k in 1..=d {
            s.push_str(&format!(",x_{k}"));
        }
        s.push('\n');
        for (i, tr) in self.trajectories.iter().enumerate() {
            for (t, x) in tr {
                s.push_str(&format!("{i},{t}"));
                for c in x.coords() {
                    s.push_str(&format!(",{c}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// CSV `particle_id,x_1..x_D`.
pub fn points_csv(points: &[Point]) -> String {
    let d = points.first().map_or(0, |p| p.dim());
    let mut s = String::from("particle_id");
    for k in 1..=d {
        s.push_str(&format!(",x_{k}"));
    }
    s.push('\n');
    for (i, x) in points.iter().enumerate() {
        s.push_str(&i.to_string());
        for c in x.coords() {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

/// Draws `n_particles` starts from the marginal at the first integration time
/// and integrates each one. Particle `i` uses the stream `rng.derive(i)`.
pub fn transport_samples(
    route: Route<'_>,
    coupling: &Coupling,
    n_particles: usize,
    cfg: &IntegratorConfig,
    rng: &RngStream,
) -> Result<TransportResult> {
    cfg.validate()?;
    let sampler = match route {
        Route::Flow(f) => f.clone(),
        Route::Field(f) => f.dual_flow().ok_or_else(|| {
            Error::Config(format!("{} has no closed-form path to draw starting points from", f.kind()))
        })?,
    };
    let (t_start, _) = cfg.endpoints();
    let starts: Vec<Point> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64);
            let pair = coupling.sample_pair(&mut r);
            sampler.sample_xt(&pair, t_start, &mut r)
        })
        .collect::<Result<_>>()?;
    let support = coupling.support();
    let trajectories = match route {
        Route::Flow(flow) => starts
            .par_iter()
            .map(|x0| {
                integrate_trajectory(|x, t| Ok(weighted_velocity(flow, &support, x, t)?.velocity), x0, cfg)
            })
            .collect::<Result<Vec<_>>>()?,
        Route::Field(spec) => {
            let global = GlobalField::new(spec, support)?;
            starts
                .par_iter()
                .map(|x0| {
                    integrate_trajectory(
                        |x, t| {
                            let p = ExtendedPoint::new(x.clone(), t);
                            global.eval_scaled(&p)?.velocity(&p)
                        },
                        x0,
                        cfg,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(TransportResult { starts, trajectories })
}
