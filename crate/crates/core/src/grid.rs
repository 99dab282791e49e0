//! Discretization of the support ball and the spherical measurement surface.
//!
//! The support ball is sampled on a uniform cubic lattice whose nodes sit at
//! half-integer multiples of the spacing, so no node lands on the origin or on
//! a symmetry plane. The measurement surface is sampled with Fibonacci points.
//! All discrete norms are weighted sums that converge to the continuum
//! `L^p` norms under refinement.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::C64;

/// A point in three-dimensional space.
pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("lattice spacing {h} leaves no node inside the ball of radius {a}")]
    EmptyGrid { a: f64, h: f64 },
    #[error("at least one source and one detector are required (got {n_src} and {n_det})")]
    EmptyBoundary { n_src: usize, n_det: usize },
    #[error("norm order p = {0} is outside [2, inf]")]
    NormOrder(f64),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

pub(crate) fn norm3(x: &Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub(crate) fn dist3(x: &Point, y: &Point) -> f64 {
    let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    norm3(&d)
}

/// Voxel discretization of the closed ball `B_a` centered at the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub centers: Vec<Point>,
    pub weights: Vec<f64>,
    pub spacing: f64,
    pub radius: f64,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Sum of quadrature weights, the discrete volume of the ball.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of the node closest to the origin (first one on ties).
    pub fn center_node(&self) -> usize {
        let mut best = 0;
        let mut best_r = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let r = norm3(c);
            if r < best_r {
                best_r = r;
                best = i;
            }
        }
        best
    }
}

/// Builds the offset cubic lattice of spacing `h` restricted to `|x| <= a`.
///
/// Nodes are emitted with the x index varying slowest and z fastest.
pub fn build_ball_grid(a: f64, h: f64) -> Result<Grid, GridError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(GridError::InvalidGeometry(format!(
            "ball radius must be positive, got {a}"
        )));
    }
    if !(h > 0.0 && h <= 2.0 * a) {
        return Err(GridError::InvalidGeometry(format!(
            "spacing must satisfy 0 < h <= 2a, got h = {h} for a = {a}"
        )));
    }
    let n = (a / h).ceil() as i64;
    let coord = |i: i64| (i as f64 + 0.5) * h;
    let mut centers = Vec::new();
    for ix in -n - 1..=n {
        for iy in -n - 1..=n {
            for iz in -n - 1..=n {
                let p = [coord(ix), coord(iy), coord(iz)];
                if norm3(&p) <= a {
                    centers.push(p);
                }
            }
        }
    }
    if centers.is_empty() {
        return Err(GridError::EmptyGrid { a, h });
    }
    let weights = vec![h * h * h; centers.len()];
    Ok(Grid {
        centers,
        weights,
        spacing: h,
        radius: a,
    })
}

/// Source and detector points on a sphere of radius `omega_radius`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryArray {
    pub sources: Vec<Point>,
    pub detectors: Vec<Point>,
    pub source_weight: f64,
    pub detector_weight: f64,
    pub omega_radius: f64,
}

impl BoundaryArray {
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn num_detectors(&self) -> usize {
        self.detectors.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.sources.len() * self.detectors.len()
    }

    /// Surface area of the measurement sphere.
    pub fn area(&self) -> f64 {
        4.0 * PI * self.omega_radius * self.omega_radius
    }

    /// Quadrature weights on source x detector pairs, flattened with the
    /// source index varying fastest (column-major order of a
    /// sources x detectors matrix).
    pub fn pair_weights(&self) -> Vec<f64> {
        let w = self.source_weight * self.detector_weight;
        vec![w; self.num_pairs()]
    }

    /// Smallest distance between any boundary point and any grid node.
    pub fn distance_to(&self, grid: &Grid) -> f64 {
        self.sources
            .iter()
            .chain(self.detectors.iter())
            .flat_map(|b| grid.centers.iter().map(move |c| dist3(b, c)))
            .fold(f64::INFINITY, f64::min)
    }
}

fn fibonacci_sphere(radius: f64, n: usize) -> Vec<Point> {
    let golden_angle = PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden_angle * i as f64;
            [
                radius * rho * theta.cos(),
                radius * rho * theta.sin(),
                radius * z,
            ]
        })
        .collect()
}

/// Places `n_src` sources and `n_det` detectors on the sphere of radius `radius`
/// with the Fibonacci rule. Each family carries the equal surface weight
/// `4 pi R^2 / n`.
pub fn build_sphere_boundary(
    radius: f64,
    n_src: usize,
    n_det: usize,
) -> Result<BoundaryArray, GridError> {
    if n_src == 0 || n_det == 0 {
        return Err(GridError::EmptyBoundary { n_src, n_det });
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(GridError::InvalidGeometry(format!(
            "boundary radius must be positive, got {radius}"
        )));
    }
    let area = 4.0 * PI * radius * radius;
    Ok(BoundaryArray {
        sources: fibonacci_sphere(radius, n_src),
        detectors: fibonacci_sphere(radius, n_det),
        source_weight: area / n_src as f64,
        detector_weight: area / n_det as f64,
        omega_radius: radius,
    })
}

/// Weighted discrete `L^p` norm for `p` in `[2, inf]`.
///
/// `p = f64::INFINITY` gives the maximum modulus and ignores the weights.
pub fn lp_norm(values: &[C64], weights: &[f64], p: f64) -> Result<f64, GridError> {
    if !(p >= 2.0) {
        return Err(GridError::NormOrder(p));
    }
    if values.len() != weights.len() {
        return Err(GridError::LengthMismatch {
            what: "weights",
            got: weights.len(),
            expected: values.len(),
        });
    }
    let max = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if p.is_infinite() || max == 0.0 {
        return Ok(max);
    }
    // scaled by the max modulus so large p cannot overflow
    let sum: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v.norm() / max).powf(p))
        .sum();
    Ok(max * sum.powf(1.0 / p))
}

/// Perturbation of the absorption, one complex value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionField {
    pub values: DVector<C64>,
}

impl AbsorptionField {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: DVector::zeros(n),
        }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self {
            values: DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0))),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self {
            values: DVector::from_element(n, C64::new(c, 0.0)),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self, grid: &Grid, p: f64) -> Result<f64, GridError> {
        self.check_grid(grid)?;
        lp_norm(self.values.as_slice(), &grid.weights, p)
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<(), GridError> {
        if self.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                what: "absorption field",
                got: self.len(),
                expected: grid.len(),
            });
        }
        Ok(())
    }

    /// True when every real part is at least -1 and every imaginary part vanishes.
    pub fn is_physical_diffuse(&self) -> bool {
        self.values.iter().all(|v| v.re >= -1.0 && v.im == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: &self.values * C64::new(c, 0.0),
        }
    }
}

/// Scattering data on source x detector pairs, stored as a
/// `num_sources x num_detectors` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringData {
    pub values: DMatrix<C64>,
}

impl ScatteringData {
    pub fn zeros(n_src: usize, n_det: usize) -> Self {
        Self {
            values: DMatrix::zeros(n_src, n_det),
        }
    }

    /// Flattened pairs, source index fastest.
    pub fn as_slice(&self) -> &[C64] {
        self.values.as_slice()
    }

    pub fn from_flat(n_src: usize, n_det: usize, flat: &[C64]) -> Self {
        Self {
            values: DMatrix::from_column_slice(n_src, n_det, flat),
        }
    }

    pub fn norm(&self, boundary: &BoundaryArray, p: f64) -> Result<f64, GridError> {
        let (s, d) = self.values.shape();
        if s != boundary.num_sources() || d != boundary.num_detectors() {
            return Err(GridError::LengthMismatch {
                what: "scattering data",
                got: s * d,
                expected: boundary.num_pairs(),
            });
        }
        lp_norm(self.as_slice(), &boundary.pair_weights(), p)
    }
}
