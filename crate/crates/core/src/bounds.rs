//! Convergence, stability and error constants for the forward and inverse
//! series.
//!
//! `mu_p` bounds the volume-volume kernel, `nu_p` the boundary-volume kernel,
//! and together they give `||K_j||_p <= nu_p mu_p^{j-1}`. The forward series
//! converges for `||eta||_p < 1/mu_p`; the inverse series radius is
//! `1/(mu_p + nu_p)`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::grid::{build_ball_grid, dist3, GridError};
use crate::greens::{
    g0_unchecked, self_cell_integral, self_cell_square_integral, GreensError, OperatorSet,
    WaveKind, WaveMode,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundsError {
    #[error("norm order p = {0} is outside [2, inf]")]
    NormOrder(f64),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("{theorem}: hypothesis {condition} fails (value {value})")]
    Hypothesis {
        theorem: &'static str,
        condition: &'static str,
        value: f64,
    },
    #[error("invalid optical parameters: {0}")]
    Optical(String),
    #[error("partition index out of range: j = {j}, m = {m}")]
    Partition { j: usize, m: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Greens(#[from] GreensError),
}

/// The two norm endpoints for which constants are computed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Endpoint {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl Endpoint {
    pub const BOTH: [Endpoint; 2] = [Endpoint::Two, Endpoint::Inf];

    pub fn p(self) -> f64 {
        match self {
            Endpoint::Two => 2.0,
            Endpoint::Inf => f64::INFINITY,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Endpoint::Two => "2",
            Endpoint::Inf => "inf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometry {
    pub a: f64,
    pub omega_radius: f64,
    /// `omega_radius - a`, the distance between the boundary and the ball.
    pub dist: f64,
}

impl Geometry {
    pub fn new(a: f64, omega_radius: f64) -> Result<Self, BoundsError> {
        if !(a > 0.0) || !(omega_radius > a) {
            return Err(BoundsError::Geometry(format!(
                "need 0 < a < omega_radius, got a = {a}, omega_radius = {omega_radius}"
            )));
        }
        Ok(Self {
            a,
            omega_radius,
            dist: omega_radius - a,
        })
    }

    pub fn ball_volume(&self) -> f64 {
        4.0 * PI * self.a.powi(3) / 3.0
    }

    pub fn boundary_area(&self) -> f64 {
        4.0 * PI * self.omega_radius.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// `mu` from the discrete kernel, `nu` from the closed-form upper bound.
    Numeric,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantSet {
    pub mu_inf: f64,
    pub mu_2: f64,
    pub nu_inf: f64,
    pub nu_2: f64,
    pub mode: WaveMode,
    pub geometry: Geometry,
    pub provenance: Provenance,
}

impl ConstantSet {
    pub fn closed_form(mode: WaveMode, geometry: Geometry) -> Self {
        Self {
            mu_inf: mu_closed_form(mode, geometry.a, Endpoint::Inf),
            mu_2: mu_closed_form(mode, geometry.a, Endpoint::Two),
            nu_inf: nu_bound_geometry(mode, &geometry, Endpoint::Inf),
            nu_2: nu_bound_geometry(mode, &geometry, Endpoint::Two),
            mode,
            geometry,
            provenance: Provenance::ClosedForm,
        }
    }

    /// `mu` measured on the assembled kernel, `nu` from the closed-form bound.
    pub fn numeric(ops: &OperatorSet) -> Result<Self, BoundsError> {
        let geometry = Geometry::new(ops.grid.radius, ops.boundary.omega_radius)?;
        Ok(Self {
            mu_inf: mu_numeric(ops, Endpoint::Inf),
            mu_2: mu_numeric(ops, Endpoint::Two),
            nu_inf: nu_bound_geometry(ops.mode, &geometry, Endpoint::Inf),
            nu_2: nu_bound_geometry(ops.mode, &geometry, Endpoint::Two),
            mode: ops.mode,
            geometry,
            provenance: Provenance::Numeric,
        })
    }

    pub fn mu(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::Two => self.mu_2,
            Endpoint::Inf => self.mu_inf,
        }
    }

    pub fn nu(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::Two => self.nu_2,
            Endpoint::Inf => self.nu_inf,
        }
    }

    /// Interpolated `(mu_p, nu_p)` for any `p` in `[2, inf]`.
    pub fn at(&self, p: f64) -> Result<(f64, f64), BoundsError> {
        interpolate(self.mu_2, self.mu_inf, self.nu_2, self.nu_inf, p)
    }
}

fn kernel_row(
    mode: WaveMode,
    centers: &[crate::grid::Point],
    weights: &[f64],
    i: usize,
    e: Endpoint,
) -> Result<f64, GreensError> {
    let x = &centers[i];
    let k2 = mode.k * mode.k;
    match e {
        Endpoint::Inf => {
            let mut sum = 0.0;
            for (j, y) in centers.iter().enumerate() {
                sum += if j == i {
                    self_cell_integral(mode, weights[i])?.norm()
                } else {
                    g0_unchecked(mode, dist3(x, y)).norm() * weights[j]
                };
            }
            Ok(k2 * sum)
        }
        Endpoint::Two => {
            let mut sum = 0.0;
            for (j, y) in centers.iter().enumerate() {
                sum += if j == i {
                    self_cell_square_integral(mode, weights[i])?
                } else {
                    g0_unchecked(mode, dist3(x, y)).norm_sqr() * weights[j]
                };
            }
            Ok(k2 * sum.sqrt())
        }
    }
}

/// `sup_x k^2 ||G(x, .)||_{L^p'(B_a)}` taken over grid nodes of the assembled
/// kernel (`L^1` for `Inf`, `L^2` for `Two`).
pub fn mu_numeric(ops: &OperatorSet, e: Endpoint) -> f64 {
    let k2 = ops.mode.k * ops.mode.k;
    let w = &ops.grid.weights;
    let n = ops.num_nodes();
    (0..n)
        .map(|i| match e {
            Endpoint::Inf => k2 * ops.g_vv.row(i).iter().map(|v| v.norm()).sum::<f64>(),
            Endpoint::Two => {
                let mut sum = 0.0;
                for j in 0..n {
                    sum += if i == j {
                        // weights are validated positive when the grid is built
                        self_cell_square_integral(ops.mode, w[i]).unwrap_or(0.0)
                    } else {
                        ops.g_vv[(i, j)].norm_sqr() / w[j]
                    };
                }
                k2 * sum.sqrt()
            }
        })
        .fold(0.0, f64::max)
}

/// Same quantity as [`mu_numeric`] for the lattice grid `build_ball_grid(a, h)`,
/// evaluated without storing the kernel.
///
/// Row values are invariant under the 48 sign and axis permutations that map
/// the lattice onto itself, so only rows with `0 < x <= y <= z` are summed.
pub fn mu_numeric_lattice(mode: WaveMode, a: f64, h: f64, e: Endpoint) -> Result<f64, BoundsError> {
    let grid = build_ball_grid(a, h)?;
    let mut best = 0.0f64;
    for (i, c) in grid.centers.iter().enumerate() {
        if c[0] > 0.0 && c[0] <= c[1] && c[1] <= c[2] {
            best = best.max(kernel_row(mode, &grid.centers, &grid.weights, i, e)?);
        }
    }
    Ok(best)
}

/// Closed-form `mu` for the free-space kernel on a ball of radius `a`.
pub fn mu_closed_form(mode: WaveMode, a: f64, e: Endpoint) -> f64 {
    let k = mode.k;
    let ka = k * a;
    match (mode.kind, e) {
        (WaveKind::Diffuse, Endpoint::Inf) => 1.0 - (1.0 + ka) * (-ka).exp(),
        (WaveKind::Diffuse, Endpoint::Two) => {
            k * k * (-ka / 2.0).exp() * (ka.sinh() / (4.0 * PI * k)).sqrt()
        }
        (WaveKind::Scalar, Endpoint::Inf) => 0.5 * ka * ka,
        (WaveKind::Scalar, Endpoint::Two) => k * k * (a / (4.0 * PI)).sqrt(),
    }
}

fn nu_bound_geometry(mode: WaveMode, g: &Geometry, e: Endpoint) -> f64 {
    let k = mode.k;
    let decay = match mode.kind {
        WaveKind::Diffuse => (-2.0 * k * g.dist).exp(),
        WaveKind::Scalar => 1.0,
    };
    let sup_g2 = decay / (4.0 * PI * g.dist).powi(2);
    match e {
        Endpoint::Inf => k * k * g.ball_volume() * sup_g2,
        Endpoint::Two => k * k * g.boundary_area() * g.ball_volume().sqrt() * sup_g2,
    }
}

/// Closed-form upper bound on `nu` for concentric balls.
pub fn nu_bound(mode: WaveMode, a: f64, omega_radius: f64, e: Endpoint) -> Result<f64, BoundsError> {
    let g = Geometry::new(a, omega_radius)?;
    Ok(nu_bound_geometry(mode, &g, e))
}

/// Riesz-Thorin interpolation of the endpoint constants to `p` in `[2, inf]`.
pub fn interpolate(
    mu2: f64,
    mu_inf: f64,
    nu2: f64,
    nu_inf: f64,
    p: f64,
) -> Result<(f64, f64), BoundsError> {
    if !(p >= 2.0) {
        return Err(BoundsError::NormOrder(p));
    }
    let t = 2.0 / p;
    let mix = |a: f64, b: f64| a.powf(t) * b.powf(1.0 - t);
    Ok((mix(mu2, mu_inf), mix(nu2, nu_inf)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Radii {
    /// `1/mu_p`, forward series.
    pub forward: f64,
    /// `1/(mu_p + nu_p)`, inverse series. Since `nu_p` is an upper bound this
    /// is a certified lower bound on the true radius.
    pub inverse: f64,
}

pub fn radii(constants: &ConstantSet, p: f64) -> Result<Radii, BoundsError> {
    let (mu, nu) = constants.at(p)?;
    Ok(Radii {
        forward: 1.0 / mu,
        inverse: 1.0 / (mu + nu),
    })
}

/// Number of ordered partitions of `j` into `m` positive parts, `C(j-1, m-1)`.
pub fn partition_count(j: usize, m: usize) -> Result<u64, BoundsError> {
    if m < 1 || m > j {
        return Err(BoundsError::Partition { j, m });
    }
    let (n, r) = ((j - 1) as u64, (m - 1) as u64);
    let r = r.min(n - r);
    let mut c: u64 = 1;
    for i in 0..r {
        c = c * (n - i) / (i + 1);
    }
    Ok(c)
}

/// Number of diagrams at order `j`: `2^{j-1} - 1`.
pub fn diagram_count(j: usize) -> Result<u64, BoundsError> {
    if !(1..=64).contains(&j) {
        return Err(BoundsError::Partition { j, m: 0 });
    }
    Ok((1u64 << (j - 1)) - 1)
}

/// Dilogarithm by its power series, valid for `|z| <= 1`.
pub fn dilog(z: f64) -> f64 {
    assert!(z.abs() <= 1.0, "dilog series needs |z| <= 1, got {z}");
    if z == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut zn = z;
    let mut n = 1.0f64;
    loop {
        let term = zn / (n * n);
        sum += term;
        // remaining tail is below |z|^{n+1} / (n+1)^2 / (1 - |z|) or, for
        // |z| = 1, alternating/monotone below 1/n
        if term.abs() < 1e-16 || n > 2e7 {
            break;
        }
        zn *= z;
        n += 1.0;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConstant {
    /// `(mu_p + nu_p) ||K1^+||_p`.
    pub q: f64,
    /// `exp(1/(1-q))`.
    pub simple: f64,
    /// `exp(Li2(-q)/ln q + ln(q)/2)`, the Euler-Maclaurin refinement.
    pub dilog: f64,
}

/// Constant `C` bounding `||K_j^+||_p <= C ((mu_p+nu_p) ||K1^+||_p)^j`.
pub fn lemma_c(mu_p: f64, nu_p: f64, kinv_norm: f64) -> Result<LemmaConstant, BoundsError> {
    let q = (mu_p + nu_p) * kinv_norm;
    if !(q < 1.0) || q < 0.0 {
        return Err(BoundsError::Hypothesis {
            theorem: "lemma C",
            condition: "(mu_p + nu_p) ||K1^+||_p < 1 (outside convergence region)",
            value: q,
        });
    }
    let ln_q = q.ln();
    Ok(LemmaConstant {
        q,
        simple: (1.0 / (1.0 - q)).exp(),
        dilog: (dilog(-q) / ln_q + 0.5 * ln_q).exp(),
    })
}

/// Constants of the inverse-series theorems at one norm order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremBounds {
    pub mu: f64,
    pub nu: f64,
    pub kinv_norm: f64,
    pub forward_radius: f64,
    pub inverse_radius: f64,
}

impl TheoremBounds {
    pub fn new(mu: f64, nu: f64, kinv_norm: f64) -> Self {
        Self {
            mu,
            nu,
            kinv_norm,
            forward_radius: 1.0 / mu,
            inverse_radius: 1.0 / (mu + nu),
        }
    }

    fn s(&self) -> f64 {
        self.mu + self.nu
    }

    pub fn lemma(&self, theorem: &'static str) -> Result<LemmaConstant, BoundsError> {
        lemma_c(self.mu, self.nu, self.kinv_norm).map_err(|e| match e {
            BoundsError::Hypothesis { value, .. } => BoundsError::Hypothesis {
                theorem,
                condition: "||K1^+||_p < 1/(mu_p + nu_p)",
                value: value / self.s(),
            },
            other => other,
        })
    }

    fn require(
        theorem: &'static str,
        condition: &'static str,
        value: f64,
        limit: f64,
    ) -> Result<(), BoundsError> {
        if value < limit {
            Ok(())
        } else {
            Err(BoundsError::Hypothesis {
                theorem,
                condition,
                value,
            })
        }
    }

    /// Tail bound `C x^{N+1} / (1 - x)` with `x = (mu+nu) ||K1^+|| ||phi||`.
    pub fn remainder_bound(
        &self,
        phi_norm: f64,
        kinv_phi_norm: f64,
        n: usize,
    ) -> Result<f64, BoundsError> {
        const T: &str = "convergence theorem";
        let c = self.lemma(T)?;
        Self::require(T, "||K1^+ phi||_p < 1/(mu_p + nu_p)", kinv_phi_norm, self.inverse_radius)?;
        let x = c.q * phi_norm;
        Self::require(T, "(mu_p + nu_p) ||K1^+||_p ||phi||_p < 1", x, 1.0)?;
        Ok(c.simple * x.powi(n as i32 + 1) / (1.0 - x))
    }

    /// Lipschitz constant `||K1^+|| C / (1 - (mu+nu) ||K1^+|| M)^2`.
    pub fn stability_constant(&self, m: f64) -> Result<f64, BoundsError> {
        const T: &str = "stability theorem";
        let c = self.lemma(T)?;
        Self::require(T, "M ||K1^+||_p < 1/(mu_p + nu_p)", m * self.kinv_norm, self.inverse_radius)?;
        Ok(self.kinv_norm * c.simple / (1.0 - c.q * m).powi(2))
    }

    /// Constant multiplying `||(I - K1^+ K1) eta||` in the error theorem,
    /// `C s/(1-q) [1/(1-rho)^2 - q/(1-rho q)^2]` with `s = mu+nu`,
    /// `rho = s M`.
    pub fn residual_constant(&self, m_cal: f64) -> Result<f64, BoundsError> {
        const T: &str = "error theorem";
        let c = self.lemma(T)?;
        let s = self.s();
        let rho = s * m_cal;
        Self::require(T, "max(||eta||, ||K1^+ K1 eta||) < 1/(mu_p + nu_p)", m_cal, self.inverse_radius)?;
        let q = c.q;
        Ok(c.simple * s / (1.0 - q) * (1.0 / (1.0 - rho).powi(2) - q / (1.0 - rho * q).powi(2)))
    }

    /// `C_res ||(I - P) eta|| + C x^N / (1 - x)`.
    pub fn error_bound(
        &self,
        phi_norm: f64,
        kinv_phi_norm: f64,
        m_cal: f64,
        linear_residual: f64,
        n: usize,
    ) -> Result<f64, BoundsError> {
        const T: &str = "error theorem";
        let c = self.lemma(T)?;
        Self::require(T, "||K1^+ phi||_p < 1/(mu_p + nu_p)", kinv_phi_norm, self.inverse_radius)?;
        let x = c.q * phi_norm;
        Self::require(T, "(mu_p + nu_p) ||K1^+||_p ||phi||_p < 1", x, 1.0)?;
        let c_res = self.residual_constant(m_cal)?;
        Ok(c_res * linear_residual + c.simple * x.powi(n as i32) / (1.0 - x))
    }
}

/// Inputs to [`theorem_rhs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TheoremInput {
    Remainder {
        bounds: TheoremBounds,
        phi_norm: f64,
        kinv_phi_norm: f64,
        n: usize,
    },
    Stability {
        bounds: TheoremBounds,
        m: f64,
        delta_phi_norm: f64,
    },
    Error {
        bounds: TheoremBounds,
        phi_norm: f64,
        kinv_phi_norm: f64,
        m_cal: f64,
        linear_residual: f64,
        n: usize,
    },
}

/// Right-hand side of the convergence, stability or error theorem.
pub fn theorem_rhs(input: TheoremInput) -> Result<f64, BoundsError> {
    match input {
        TheoremInput::Remainder {
            bounds,
            phi_norm,
            kinv_phi_norm,
            n,
        } => bounds.remainder_bound(phi_norm, kinv_phi_norm, n),
        TheoremInput::Stability {
            bounds,
            m,
            delta_phi_norm,
        } => Ok(bounds.stability_constant(m)? * delta_phi_norm),
        TheoremInput::Error {
            bounds,
            phi_norm,
            kinv_phi_norm,
            m_cal,
            linear_residual,
            n,
        } => bounds.error_bound(phi_norm, kinv_phi_norm, m_cal, linear_residual, n),
    }
}

/// Diffuse wave number `sqrt(3 mu_a mu_s')` from the background absorption and
/// reduced scattering coefficients.
pub fn k_from_optical(mu_a: f64, mu_s_prime: f64) -> Result<f64, BoundsError> {
    if !(mu_a > 0.0 && mu_s_prime > 0.0) || !(mu_a * mu_s_prime).is_finite() {
        return Err(BoundsError::Optical(format!(
            "mu_a = {mu_a} and mu_s' = {mu_s_prime} must both be positive"
        )));
    }
    Ok((3.0 * mu_a * mu_s_prime).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::assemble;
    use crate::grid::build_sphere_boundary;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    fn diffuse(k: f64) -> WaveMode {
        WaveMode::diffuse(k).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let v = mu_closed_form(diffuse(1.0), 1.0, Endpoint::Inf);
        assert!((v - (1.0 - 2.0 / E)).abs() < 1e-15);
        assert!((v - 0.264241).abs() < 1e-6);
        let v = mu_closed_form(diffuse(1.0), 1.0, Endpoint::Two);
        assert!((v - (-0.5f64).exp() * (1f64.sinh() / (4.0 * PI)).sqrt()).abs() < 1e-15);
        assert!((v - 0.18547).abs() < 2e-5);
        let s = WaveMode::scalar(2.0).unwrap();
        assert_eq!(mu_closed_form(s, 1.0, Endpoint::Inf), 2.0);
    }

    #[test]
    fn diffuse_mu_two_matches_radial_integral() {
        // k^2/(4 pi) (int_B e^{-2kr}/r^2 dx)^{1/2} by midpoint rule in r
        for ka in [0.5, 1.0, 3.0] {
            let k = ka;
            let n = 200_000;
            let dr = 1.0 / n as f64;
            let integral: f64 = (0..n)
                .map(|i| {
                    let r = (i as f64 + 0.5) * dr;
                    4.0 * PI * (-2.0 * k * r).exp() * dr
                })
                .sum();
            let expect = k * k / (4.0 * PI) * integral.sqrt();
            let got = mu_closed_form(diffuse(k), 1.0, Endpoint::Two);
            assert!((got - expect).abs() / expect < 1e-8);
        }
    }

    #[test]
    fn nu_examples() {
        let v = nu_bound(diffuse(1.0), 1.0, 2.0, Endpoint::Inf).unwrap();
        assert!((v - (-2.0f64).exp() / (12.0 * PI)).abs() < 1e-15);
        assert!((v - 0.003590).abs() < 1e-6);
        let s = nu_bound(WaveMode::scalar(1.0).unwrap(), 1.0, 2.0, Endpoint::Inf).unwrap();
        assert!((s - 1.0 / (12.0 * PI)).abs() < 1e-15);
        assert!((s - 0.02653).abs() < 1e-5);
        assert!(nu_bound(diffuse(40.0), 1.0, 2.0, Endpoint::Inf).unwrap() < 1e-30);
        assert!(nu_bound(diffuse(1.0), 1.0, 1.0, Endpoint::Inf).is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let (m, n) = interpolate(0.18547, 0.264241, 0.01, 0.003, 2.0).unwrap();
        assert_eq!((m, n), (0.18547, 0.01));
        let (m, n) = interpolate(0.18547, 0.264241, 0.01, 0.003, f64::INFINITY).unwrap();
        assert_eq!((m, n), (0.264241, 0.003));
        let (m, _) = interpolate(0.18547, 0.264241, 0.01, 0.003, 4.0).unwrap();
        assert!((m - (0.18547f64 * 0.264241).sqrt()).abs() < 1e-15);
        assert!((m - 0.22140).abs() < 3e-5);
        assert!(matches!(
            interpolate(1.0, 1.0, 1.0, 1.0, 1.0),
            Err(BoundsError::NormOrder(_))
        ));
    }

    #[test]
    fn radii_examples() {
        let g = Geometry::new(1.0, 2.0).unwrap();
        let c = ConstantSet::closed_form(diffuse(1.0), g);
        let r = radii(&c, f64::INFINITY).unwrap();
        assert!((r.inverse - 1.0 / (0.264241 + 0.003590)).abs() < 1e-3);
        assert!((r.inverse - 3.734).abs() < 1e-3);

        let c = ConstantSet::closed_form(diffuse(30.0), g);
        let r = radii(&c, f64::INFINITY).unwrap();
        assert!(r.inverse > 0.9 && r.inverse <= 1.1);

        let c = ConstantSet::closed_form(WaveMode::scalar(200.0).unwrap(), Geometry::new(1.0, 2.0).unwrap());
        let r = radii(&c, f64::INFINITY).unwrap();
        let scaled = r.inverse * 200.0 * 200.0 / 2.0;
        // nu_inf/mu_inf -> 1/(6 pi) for dist = a
        assert!((scaled - 1.0 / (1.0 + 1.0 / (6.0 * PI))).abs() < 1e-12);
    }

    #[test]
    fn partitions() {
        // enumerate compositions of 4 into 2 parts: 1+3, 2+2, 3+1
        let brute = (1..4).filter(|a| 4 - a >= 1).count() as u64;
        assert_eq!(partition_count(4, 2).unwrap(), brute);
        assert_eq!(partition_count(4, 2).unwrap(), 3);
        for j in 1..10 {
            assert_eq!(partition_count(j, 1).unwrap(), 1);
            assert_eq!(partition_count(j, j).unwrap(), 1);
            let total: u64 = (1..j).map(|m| partition_count(j, m).unwrap()).sum();
            assert_eq!(total, diagram_count(j).unwrap());
        }
        assert_eq!(diagram_count(3).unwrap(), 3);
        assert!(partition_count(3, 4).is_err());
        assert!(partition_count(3, 0).is_err());
    }

    #[test]
    fn dilog_reference_values() {
        // Li2(-1) = -pi^2/12, Li2(1/2) = pi^2/12 - ln(2)^2/2
        assert!((dilog(-1.0) + PI * PI / 12.0).abs() < 1e-7);
        let half = PI * PI / 12.0 - 2f64.ln().powi(2) / 2.0;
        assert!((dilog(0.5) - half).abs() < 1e-14);
        assert!((dilog(-0.9) + 0.752_163_179_217_262).abs() < 1e-9);
    }

    #[test]
    fn lemma_constant() {
        let c = lemma_c(0.25, 0.25, 1.0).unwrap();
        assert!((c.simple - E * E).abs() < 1e-12);
        assert!((c.simple - 7.389).abs() < 1e-3);

        let c = lemma_c(1e-9, 0.0, 1.0).unwrap();
        assert!((c.simple - E).abs() < 1e-6);
        assert!(c.dilog.is_finite());

        for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let c = lemma_c(q, 0.0, 1.0).unwrap();
            assert!(c.dilog <= c.simple, "q = {q}");
        }
        assert!(matches!(lemma_c(0.5, 0.5, 1.0), Err(BoundsError::Hypothesis { .. })));
    }

    #[test]
    fn theorem_rhs_examples() {
        let b = TheoremBounds::new(0.25, 0.25, 1.0);
        let v = theorem_rhs(TheoremInput::Remainder {
            bounds: b,
            phi_norm: 1.0,
            kinv_phi_norm: 0.1,
            n: 3,
        })
        .unwrap();
        assert!((v - 2.0 * E * E * 0.5f64.powi(4)).abs() < 1e-12);
        assert!((v - 0.9236).abs() < 1e-4);

        let zero = theorem_rhs(TheoremInput::Remainder {
            bounds: b,
            phi_norm: 0.0,
            kinv_phi_norm: 0.0,
            n: 4,
        })
        .unwrap();
        assert_eq!(zero, 0.0);

        let st = theorem_rhs(TheoremInput::Stability {
            bounds: b,
            m: 0.3,
            delta_phi_norm: 0.0,
        })
        .unwrap();
        assert_eq!(st, 0.0);

        let err = theorem_rhs(TheoremInput::Stability {
            bounds: TheoremBounds::new(0.5, 0.5, 2.0),
            m: 0.1,
            delta_phi_norm: 1.0,
        });
        match err {
            Err(BoundsError::Hypothesis { theorem, condition, .. }) => {
                assert_eq!(theorem, "stability theorem");
                assert!(condition.contains("||K1^+||_p"));
            }
            other => panic!("unexpected {other:?}"),
        }

        // error theorem: zero residual leaves only the tail term
        let e = theorem_rhs(TheoremInput::Error {
            bounds: b,
            phi_norm: 1.0,
            kinv_phi_norm: 0.1,
            m_cal: 0.2,
            linear_residual: 0.0,
            n: 3,
        })
        .unwrap();
        assert!((e - E * E * 0.5f64.powi(3) / 0.5).abs() < 1e-12);
    }

    #[test]
    fn residual_constant_matches_series() {
        let b = TheoremBounds::new(0.2, 0.05, 2.0);
        let m_cal: f64 = 1.5;
        let s: f64 = 0.25;
        let q = s * 2.0;
        let c = (1.0f64 / (1.0 - q)).exp();
        let series: f64 = (1..400)
            .map(|j| {
                let j = j as f64;
                j * m_cal.powf(j - 1.0) * s.powf(j) * (1.0 - q.powf(j)) / (1.0 - q)
            })
            .sum();
        let got = b.residual_constant(m_cal).unwrap();
        assert!((got - c * series).abs() / got < 1e-12);
    }

    #[test]
    fn optical_conversion() {
        assert!((k_from_optical(1.0 / 3.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((k_from_optical(0.02, 1.0).unwrap() - 0.06f64.sqrt()).abs() < 1e-15);
        assert!((k_from_optical(0.02, 1.0).unwrap() - 0.2449).abs() < 1e-4);
        assert!(k_from_optical(0.0, 1.0).is_err());
    }

    #[test]
    fn numeric_mu_agrees_with_lattice_shortcut() {
        let h = 0.25;
        let g = build_ball_grid(1.0, h).unwrap();
        let b = build_sphere_boundary(2.0, 2, 2).unwrap();
        for mode in [diffuse(1.7), WaveMode::scalar(1.2).unwrap()] {
            let ops = assemble(mode, &g, &b).unwrap();
            for e in Endpoint::BOTH {
                let full = mu_numeric(&ops, e);
                let short = mu_numeric_lattice(mode, 1.0, h, e).unwrap();
                assert!((full - short).abs() <= 1e-12 * full, "{e:?}: {full} vs {short}");
            }
        }
    }

    #[test]
    fn numeric_mu_matches_closed_form_at_fine_spacing() {
        let m = diffuse(1.0);
        let v = mu_numeric_lattice(m, 1.0, 0.05, Endpoint::Inf).unwrap();
        assert!((v - 0.264241).abs() / 0.264241 < 0.02, "{v}");
        let s = WaveMode::scalar(1.0).unwrap();
        let v = mu_numeric_lattice(s, 1.0, 0.05, Endpoint::Inf).unwrap();
        assert!((v - 0.5).abs() / 0.5 < 0.02, "{v}");
    }

    #[test]
    fn numeric_mu_vanishes_with_k() {
        let vals: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&k| mu_numeric_lattice(diffuse(k), 1.0, 0.25, Endpoint::Inf).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals[2] < 1e-5);
    }

    #[test]
    fn numeric_mu_refinement_rate() {
        let m = diffuse(1.0);
        let exact = mu_closed_form(m, 1.0, Endpoint::Inf);
        let hs = [0.25, 0.125, 0.0625];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| (mu_numeric_lattice(m, 1.0, h, Endpoint::Inf).unwrap() - exact).abs())
            .collect();
        // least-squares slope of log(err) against log(h)
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let xm = xs.iter().sum::<f64>() / 3.0;
        let ym = ys.iter().sum::<f64>() / 3.0;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
            / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
        assert!(slope >= 0.8, "slope {slope}, errs {errs:?}");
    }

    proptest! {
        #[test]
        fn interpolation_is_log_affine(
            mu2 in 0.01..5.0f64, mui in 0.01..5.0f64, p in 2.0..200.0f64,
        ) {
            let (m, _) = interpolate(mu2, mui, 1.0, 1.0, p).unwrap();
            let t = 2.0 / p;
            let expect = t * mu2.ln() + (1.0 - t) * mui.ln();
            prop_assert!((m.ln() - expect).abs() < 1e-12);
        }

        #[test]
        fn radii_decrease_in_each_constant(
            mu in 0.01..5.0f64, nu in 0.0..1.0f64, d in 0.001..1.0f64,
        ) {
            let base = TheoremBounds::new(mu, nu, 1.0);
            let more_mu = TheoremBounds::new(mu + d, nu, 1.0);
            let more_nu = TheoremBounds::new(mu, nu + d, 1.0);
            prop_assert!(more_mu.inverse_radius < base.inverse_radius);
            prop_assert!(more_mu.forward_radius < base.forward_radius);
            prop_assert!(more_nu.inverse_radius < base.inverse_radius);
        }
    }
}
