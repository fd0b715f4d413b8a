//! Points in data space and in the extended space-time.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A point in the D-dimensional data space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    /// Builds a point, rejecting empty or non-finite coordinates.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Config("point must have at least one coordinate".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate {c}")));
        }
        Ok(Point(coords))
    }

    /// Wraps coordinates that are known to be valid (results of arithmetic on points).
    pub(crate) fn raw(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::Dimension { expected, got: self.dim() });
        }
        Ok(())
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> Point {
        Point(self.0.iter().map(|a| a * c).collect())
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect())
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A point `(x, t)` of the extended space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint {
    pub x: Point,
    pub t: f64,
}

impl ExtendedPoint {
    pub fn new(x: Point, t: f64) -> Self {
        ExtendedPoint { x, t }
    }
}

/// A conditioning pair. `xt` is `None` for one-sided paths that start from a fixed law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointPair {
    pub x0: Point,
    pub xt: Option<Point>,
}

impl EndpointPair {
    pub fn new(x0: Point, xt: Option<Point>) -> Result<Self> {
        if let Some(xt) = &xt {
            xt.check_dim(x0.dim())?;
        }
        Ok(EndpointPair { x0, xt })
    }

    pub fn one_sided(x0: Point) -> Self {
        EndpointPair { x0, xt: None }
    }

    pub fn two_sided(x0: Point, xt: Point) -> Result<Self> {
        Self::new(x0, Some(xt))
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
