//! Finite couplings between target-side and source-side samples.

use crate::error::{Error, Result};
use crate::point::{EndpointPair, Point};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingMode {
    IndependentProduct,
    ExplicitPairs,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Pairs(Vec<EndpointPair>),
    Product { x0s: Vec<Point>, xts: Vec<Point> },
}

/// An empirical joint distribution over endpoint pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    storage: Storage,
    dim: usize,
}

fn common_dim<'a>(mut pts: impl Iterator<Item = &'a Point>) -> Result<usize> {
    let first = pts
        .next()
        .ok_or_else(|| Error::Config("coupling must be non-empty".into()))?;
    let d = first.dim();
    for p in pts {
        p.check_dim(d)?;
    }
    Ok(d)
}

impl Coupling {
    /// Stores the given pairs; sampling picks one uniformly.
    pub fn explicit(pairs: Vec<EndpointPair>) -> Result<Self> {
        let dim = common_dim(pairs.iter().map(|p| &p.x0))?;
        let sided = pairs[0].xt.is_some();
        for p in &pairs {
            if p.xt.is_some() != sided {
                return Err(Error::Config(
                    "coupling mixes one-sided and two-sided pairs".into(),
                ));
            }
            if let Some(xt) = &p.xt {
                xt.check_dim(dim)?;
            }
        }
        Ok(Coupling { storage: Storage::Pairs(pairs), dim })
    }

    /// One-sided coupling over target samples only.
    pub fn one_sided(x0s: Vec<Point>) -> Result<Self> {
        Self::explicit(x0s.into_iter().map(EndpointPair::one_sided).collect())
    }

    /// Independent product of two sample lists.
    pub fn independent(x0s: Vec<Point>, xts: Vec<Point>) -> Result<Self> {
        let dim = common_dim(x0s.iter())?;
        let dt = common_dim(xts.iter())?;
        if dt != dim {
            return Err(Error::Dimension { expected: dim, got: dt });
        }
        Ok(Coupling { storage: Storage::Product { x0s, xts }, dim })
    }

    pub fn mode(&self) -> CouplingMode {
        match self.storage {
            Storage::Pairs(_) => CouplingMode::ExplicitPairs,
            Storage::Product { .. } => CouplingMode::IndependentProduct,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_one_sided(&self) -> bool {
        matches!(&self.storage, Storage::Pairs(p) if p[0].xt.is_none())
    }

    /// Number of distinct pairs in the support.
    pub fn support_len(&self) -> usize {
        match &self.storage {
            Storage::Pairs(p) => p.len(),
            Storage::Product { x0s, xts } => x0s.len() * xts.len(),
        }
    }

    /// Enumerates the full support, each pair carrying equal mass.
    pub fn support(&self) -> Vec<EndpointPair> {
        match &self.storage {
            Storage::Pairs(p) => p.clone(),
            Storage::Product { x0s, xts } => x0s
                .iter()
                .flat_map(|a| {
                    xts.iter().map(move |b| EndpointPair {
                        x0: a.clone(),
                        xt: Some(b.clone()),
                    })
                })
                .collect(),
        }
    }

    /// Target-side samples (the x0 marginal).
    pub fn targets(&self) -> Vec<Point> {
        match &self.storage {
            Storage::Pairs(p) => p.iter().map(|q| q.x0.clone()).collect(),
            Storage::Product { x0s, .. } => x0s.clone(),
        }
    }

    pub fn sample_pair(&self, rng: &mut RngStream) -> EndpointPair {
        match &self.storage {
            Storage::Pairs(p) => p[rng.index(p.len())].clone(),
            Storage::Product { x0s, xts } => {
                let a = rng.index(x0s.len());
                let b = rng.index(xts.len());
                EndpointPair { x0: x0s[a].clone(), xt: Some(xts[b].clone()) }
            }
        }
    }

    /// `k` pairs for a multi-sample batch: without replacement while `k` fits in
    /// the support of an explicit coupling, otherwise independent draws.
    /// Draws nothing from `rng` when `k == 0`.
    pub fn draw_batch(&self, k: usize, rng: &mut RngStream) -> Vec<EndpointPair> {
        match &self.storage {
            Storage::Pairs(p) if k <= p.len() => rng
                .sample_without_replacement(p.len(), k)
                .into_iter()
                .map(|i| p[i].clone())
                .collect(),
            _ => (0..k).map(|_| self.sample_pair(rng)).collect(),
        }
    }
}
