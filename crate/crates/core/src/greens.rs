//! Free-space Green's kernels and the dense discrete operators built from them.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::grid::{dist3, norm3, BoundaryArray, Grid};
use crate::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GreensError {
    #[error("wave number must be positive and finite, got {0}")]
    WaveNumber(f64),
    #[error("kernel evaluated at r = {0}; coincident points need the self-cell integral")]
    Singular(f64),
    #[error("voxel weight must be positive, got {0}")]
    VoxelWeight(f64),
    #[error("boundary point at radius {radius} lies inside the support ball of radius {a}")]
    BoundaryInsideBall { radius: f64, a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveKind {
    /// Diffusion equation, kernel `e^{-kr} / 4 pi r`.
    Diffuse,
    /// Helmholtz equation with outgoing radiation, kernel `e^{ikr} / 4 pi r`.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveMode {
    pub kind: WaveKind,
    pub k: f64,
}

impl WaveMode {
    pub fn new(kind: WaveKind, k: f64) -> Result<Self, GreensError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(GreensError::WaveNumber(k));
        }
        Ok(Self { kind, k })
    }

    pub fn diffuse(k: f64) -> Result<Self, GreensError> {
        Self::new(WaveKind::Diffuse, k)
    }

    pub fn scalar(k: f64) -> Result<Self, GreensError> {
        Self::new(WaveKind::Scalar, k)
    }

    /// Sign `s` in `u = u_i - s k^2 G(eta u)`.
    ///
    /// The diffusion equation carries `-k^2 G`, the wave equation `+k^2 G`.
    pub fn scattering_sign(&self) -> f64 {
        match self.kind {
            WaveKind::Diffuse => 1.0,
            WaveKind::Scalar => -1.0,
        }
    }

    /// Prefactor of the order-`m` term of `phi = u_i - u` expanded in powers
    /// of `eta`: `-(-s)^m k^{2m}`.
    ///
    /// Diffuse gives `(-1)^{m+1} k^{2m}`, scalar gives `-k^{2m}`. Every
    /// multilinear operator in the crate takes its sign from here.
    pub fn series_coefficient(&self, m: usize) -> f64 {
        let s = self.scattering_sign();
        let alt = if m.is_multiple_of(2) { 1.0 } else { -s };
        -alt * self.k.powi(2 * m as i32)
    }
}

/// Fundamental solution at distance `r > 0`.
pub fn g0(mode: WaveMode, r: f64) -> Result<C64, GreensError> {
    if !(r > 0.0) {
        return Err(GreensError::Singular(r));
    }
    Ok(g0_unchecked(mode, r))
}

#[inline]
pub(crate) fn g0_unchecked(mode: WaveMode, r: f64) -> C64 {
    let scale = 1.0 / (4.0 * PI * r);
    match mode.kind {
        WaveKind::Diffuse => C64::new((-mode.k * r).exp() * scale, 0.0),
        WaveKind::Scalar => C64::from_polar(scale, mode.k * r),
    }
}

/// Radius of the ball with volume `w`.
pub fn equivalent_radius(w: f64) -> f64 {
    (3.0 * w / (4.0 * PI)).cbrt()
}

/// Integral of the kernel over the ball of volume `w` centered on the
/// singular point.
pub fn self_cell_integral(mode: WaveMode, w: f64) -> Result<C64, GreensError> {
    if !(w > 0.0) {
        return Err(GreensError::VoxelWeight(w));
    }
    let rc = equivalent_radius(w);
    let k = mode.k;
    let x = k * rc;
    Ok(match mode.kind {
        // int_0^rc r e^{-kr} dr
        WaveKind::Diffuse => {
            let v = if x < 1e-4 {
                rc * rc * (0.5 - x / 3.0 + x * x / 8.0)
            } else {
                (1.0 - (1.0 + x) * (-x).exp()) / (k * k)
            };
            C64::new(v, 0.0)
        }
        // int_0^rc r e^{ikr} dr
        WaveKind::Scalar => {
            if x < 1e-4 {
                let i = C64::new(0.0, 1.0);
                rc * rc * (0.5 + i * x / 3.0 - x * x / 8.0)
            } else {
                let e = C64::from_polar(1.0, x);
                (e * C64::new(1.0, -x) - 1.0) / (k * k)
            }
        }
    })
}

/// Integral of `|G0|^2` over the ball of volume `w` centered on the singular
/// point.
pub fn self_cell_square_integral(mode: WaveMode, w: f64) -> Result<f64, GreensError> {
    if !(w > 0.0) {
        return Err(GreensError::VoxelWeight(w));
    }
    let rc = equivalent_radius(w);
    Ok(match mode.kind {
        WaveKind::Diffuse => {
            let x = 2.0 * mode.k * rc;
            // (1 - e^{-x}) / (8 pi k), written via exp_m1 for small x
            -(-x).exp_m1() / (8.0 * PI * mode.k)
        }
        WaveKind::Scalar => rc / (4.0 * PI),
    })
}

/// Assembled dense kernels for one discretization.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    /// Volume-volume kernel with the column weight folded in; the diagonal is
    /// the self-cell integral.
    pub g_vv: DMatrix<C64>,
    /// Source-volume kernel, `num_sources x num_nodes`, no weights.
    pub g_sv: DMatrix<C64>,
    /// Volume-detector kernel, `num_nodes x num_detectors`, no weights.
    pub g_vd: DMatrix<C64>,
    pub mode: WaveMode,
    pub grid: Grid,
    pub boundary: BoundaryArray,
}

impl OperatorSet {
    pub fn num_nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn num_sources(&self) -> usize {
        self.boundary.num_sources()
    }

    pub fn num_detectors(&self) -> usize {
        self.boundary.num_detectors()
    }
}

pub fn assemble(
    mode: WaveMode,
    grid: &Grid,
    boundary: &BoundaryArray,
) -> Result<OperatorSet, GreensError> {
    for p in boundary.sources.iter().chain(&boundary.detectors) {
        let r = norm3(p);
        if r <= grid.radius {
            return Err(GreensError::BoundaryInsideBall {
                radius: r,
                a: grid.radius,
            });
        }
    }
    let n = grid.len();
    let mut g_vv = DMatrix::zeros(n, n);
    for j in 0..n {
        let wj = grid.weights[j];
        for i in 0..n {
            g_vv[(i, j)] = if i == j {
                self_cell_integral(mode, wj)?
            } else {
                g0_unchecked(mode, dist3(&grid.centers[i], &grid.centers[j])) * wj
            };
        }
    }
    let g_sv = DMatrix::from_fn(boundary.num_sources(), n, |s, j| {
        g0_unchecked(mode, dist3(&boundary.sources[s], &grid.centers[j]))
    });
    let g_vd = DMatrix::from_fn(n, boundary.num_detectors(), |j, d| {
        g0_unchecked(mode, dist3(&grid.centers[j], &boundary.detectors[d]))
    });
    Ok(OperatorSet {
        g_vv,
        g_sv,
        g_vd,
        mode,
        grid: grid.clone(),
        boundary: boundary.clone(),
    })
}
