//! Toy target and source distributions.

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::point::Point;
use crate::rng::RngStream;
use std::f64::consts::PI;

/// Gaussian mixture with full covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    means: Vec<Point>,
    /// Lower Cholesky factors, row-major `D x D`.
    chol: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Config("covariance is not positive definite".into()));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

impl MixtureParams {
    /// `covs` are row-major `D x D` symmetric positive-definite matrices.
    pub fn new(means: Vec<Point>, covs: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 || covs.len() != k || weights.len() != k {
            return Err(Error::Config(format!(
                "mixture needs matching non-empty means ({k}), covariances ({}) and weights ({})",
                covs.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
        }
        let d = means[0].dim();
        let mut chol = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covs) {
            m.check_dim(d)?;
            if c.len() != d * d {
                return Err(Error::Config(format!("covariance needs {} entries, got {}", d * d, c.len())));
            }
            for i in 0..d {
                for j in 0..d {
                    if (c[i * d + j] - c[j * d + i]).abs() > 1e-12 {
                        return Err(Error::Config("covariance is not symmetric".into()));
                    }
                }
            }
            chol.push(cholesky(c, d)?);
        }
        Ok(MixtureParams { means, chol, weights })
    }

    /// Components with covariance `std^2 I`.
    pub fn isotropic(means: Vec<Point>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = means.first().map_or(1, |m| m.dim());
        let covs = stds
            .iter()
            .map(|s| {
                let mut c = vec![0.0; d * d];
                for i in 0..d {
                    c[i * d + i] = s * s;
                }
                c
            })
            .collect();
        Self::new(means, covs, weights)
    }

    pub fn dim(&self) -> usize {
        self.means[0].dim()
    }

    pub fn means(&self) -> &[Point] {
        &self.means
    }

    /// Draws `(component, point)` pairs.
    pub fn sample_labeled(&self, n: usize, rng: &mut RngStream) -> Vec<(usize, Point)> {
        let d = self.dim();
        (0..n)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut k = self.weights.len() - 1;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let z = rng.normal_vec(d);
                let l = &self.chol[k];
                let x = (0..d)
                    .map(|i| self.means[k][i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>())
                    .collect();
                (k, Point::raw(x))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    GaussianMixture(MixtureParams),
    /// Two interleaved half circles in 2-D with Gaussian jitter.
    TwoMoons { noise: f64 },
    /// Uniform on the dark cells of a `cells x cells` board of side `size`, centred at 0.
    Checkerboard { cells: usize, size: f64 },
    SinglePoint(Point),
    StandardGaussian { dim: usize },
}

impl DatasetKind {
    /// Reads `dataset` plus its kind-specific keys:
    /// `means`, `stds` or `covs`, `weights` (mixture); `noise` (moons);
    /// `cells`, `size` (checkerboard); `point` (single point); `D` (Gaussian).
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let name = cfg.get("dataset").unwrap_or("gaussian-mixture");
        match name {
            "gaussian-mixture" => {
                let means = cfg.points("means")?.unwrap_or_else(|| {
                    vec![Point::raw(vec![-2.0, 0.0]), Point::raw(vec![2.0, 0.0])]
                });
                let k = means.len();
                let weights = cfg.list("weights")?.unwrap_or(vec![1.0 / k as f64; k]);
                let params = if let Some(covs) = cfg.get("covs") {
                    let covs = covs
                        .split(';')
                        .map(|c| crate::config::parse_list("covs", c))
                        .collect::<Result<Vec<_>>>()?;
                    MixtureParams::new(means, covs, weights)?
                } else {
                    let stds = cfg.list("stds")?.unwrap_or(vec![0.5; k]);
                    MixtureParams::isotropic(means, stds, weights)?
                };
                Ok(DatasetKind::GaussianMixture(params))
            }
            "two-moons" => Ok(DatasetKind::TwoMoons { noise: cfg.parse_or("noise", 0.05)? }),
            "checkerboard" => Ok(DatasetKind::Checkerboard {
                cells: cfg.parse_or("cells", 4usize)?,
                size: cfg.parse_or("size", 4.0)?,
            }),
            "single-point" => {
                let p = cfg.list("point")?.ok_or_else(|| Error::Config("single-point needs 'point'".into()))?;
                Ok(DatasetKind::SinglePoint(Point::new(p)?))
            }
            "standard-gaussian" => Ok(DatasetKind::StandardGaussian { dim: cfg.parse_or("D", 2usize)? }),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}'; valid: gaussian-mixture, two-moons, checkerboard, single-point, standard-gaussian"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::GaussianMixture(m) => m.dim(),
            DatasetKind::TwoMoons { .. } | DatasetKind::Checkerboard { .. } => 2,
            DatasetKind::SinglePoint(p) => p.dim(),
            DatasetKind::StandardGaussian { dim } => *dim,
        }
    }
}

pub fn make_dataset(kind: &DatasetKind, n: usize, rng: &mut RngStream) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    Ok(match kind {
        DatasetKind::GaussianMixture(m) => m.sample_labeled(n, rng).into_iter().map(|(_, p)| p).collect(),
        DatasetKind::TwoMoons { noise } => (0..n)
            .map(|i| {
                let th = PI * rng.uniform();
                let (x, y) = if i % 2 == 0 { (th.cos(), th.sin()) } else { (1.0 - th.cos(), 0.5 - th.sin()) };
                Point::raw(vec![x + noise * rng.normal(), y + noise * rng.normal()])
            })
            .collect(),
        DatasetKind::Checkerboard { cells, size } => {
            if *cells == 0 || !(*size > 0.0) {
                return Err(Error::Config("checkerboard needs positive cells and size".into()));
            }
            let c = *cells;
            let dark: Vec<(usize, usize)> =
                (0..c).flat_map(|i| (0..c).map(move |j| (i, j))).filter(|(i, j)| (i + j) % 2 == 0).collect();
            let w = size / c as f64;
            (0..n)
                .map(|_| {
                    let (i, j) = dark[rng.index(dark.len())];
                    Point::raw(vec![
                        -0.5 * size + w * (i as f64 + rng.uniform()),
                        -0.5 * size + w * (j as f64 + rng.uniform()),
                    ])
                })
                .collect()
        }
        DatasetKind::SinglePoint(p) => vec![p.clone(); n],
        DatasetKind::StandardGaussian { dim } => (0..n).map(|_| Point::raw(rng.normal_vec(*dim))).collect(),
    })
}

/// CSV with header `x_1..x_D`.
pub fn dataset_csv(points: &[Point]) -> String {
    let d = points.first().map_or(0, |p| p.dim());
    let header: Vec<String> = (1..=d).map(|k| format!("x_{k}")).collect();
    let mut s = header.join(",");
    s.push('\n');
    for p in points {
        let row: Vec<String> = p.coords().iter().map(|c| c.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_dataset_csv(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty dataset file".into()))?;
    let d = header.split(',').count();
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let p = crate::config::parse_list("dataset row", l)?;
            if p.len() != d {
                return Err(Error::Dimension { expected: d, got: p.len() });
            }
            Point::new(p)
        })
        .collect()
}
