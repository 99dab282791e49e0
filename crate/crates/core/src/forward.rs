//! Forward problem: direct solve of the discrete integral equation, the
//! multilinear Born operators `K_j`, and the summed Born series.
//!
//! Tensor arguments only appear as ordered lists of volume fields. `K_j`
//! applied to `f_1 (x) ... (x) f_j` is evaluated as the kernel chain
//!
//! ```text
//! c_j * G_sv W diag(f_1) G~ diag(f_2) G~ ... G~ diag(f_j) G_vd
//! ```
//!
//! with `G~` the weight-folded volume kernel and `c_j` from
//! [`WaveMode::series_coefficient`].

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bounds::{self, BoundsError, ConstantSet, Endpoint};
use crate::greens::OperatorSet;
use crate::grid::{AbsorptionField, GridError, ScatteringData};
use crate::linalg::condition_estimate_1;
use crate::C64;

/// Systems with a larger 1-norm condition estimate are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForwardError {
    #[error("integral equation is singular")]
    Singular,
    #[error("integral equation is ill-conditioned (condition estimate {0:.3e})")]
    IllConditioned(f64),
    #[error("at least one factor is required")]
    NoFactors,
    #[error("series order must be at least 1")]
    ZeroOrder,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// Incident field of one source sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidentField {
    pub source_index: usize,
    pub values: Vec<C64>,
}

impl IncidentField {
    pub fn new(ops: &OperatorSet, source_index: usize) -> Self {
        Self {
            source_index,
            values: ops.g_sv.row(source_index).iter().copied().collect(),
        }
    }
}

fn scale_rows(m: &mut DMatrix<C64>, f: &AbsorptionField) {
    for (mut row, &v) in m.row_iter_mut().zip(f.values.iter()) {
        row *= v;
    }
}

/// `G_sv W`, the source kernel with the volume weight folded into columns.
fn weighted_sources(ops: &OperatorSet) -> DMatrix<C64> {
    let mut b = ops.g_sv.clone();
    for (mut col, &w) in b.column_iter_mut().zip(ops.grid.weights.iter()) {
        col *= C64::new(w, 0.0);
    }
    b
}

/// Direct solve of `(I + s k^2 G~ diag(eta)) u = u_i` for every source,
/// returning `phi = u_i - u` at the detectors.
pub fn solve_direct(ops: &OperatorSet, eta: &AbsorptionField) -> Result<ScatteringData, ForwardError> {
    eta.check_grid(&ops.grid)?;
    let n = ops.num_nodes();
    let s_k2 = ops.mode.scattering_sign() * ops.mode.k * ops.mode.k;
    let mut a = ops.g_vv.clone();
    for (mut col, &e) in a.column_iter_mut().zip(eta.values.iter()) {
        col *= e * s_k2;
    }
    for i in 0..n {
        a[(i, i)] += C64::new(1.0, 0.0);
    }
    match condition_estimate_1(&a) {
        None => return Err(ForwardError::Singular),
        Some(c) if !(c <= MAX_CONDITION) => return Err(ForwardError::IllConditioned(c)),
        Some(_) => {}
    }
    let incident = ops.g_sv.transpose();
    let u = a.lu().solve(&incident).ok_or(ForwardError::Singular)?;
    // phi(s, d) = s k^2 sum_j u_j(s) eta_j w_j G(y_j, x_d)
    let mut scaled = ops.g_vd.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= eta.values[j] * ops.grid.weights[j] * s_k2;
    }
    Ok(ScatteringData {
        values: u.transpose() * scaled,
    })
}

/// `K_m` applied to the elementary tensor `factors[0] (x) ... (x) factors[m-1]`.
pub fn apply_k(ops: &OperatorSet, factors: &[&AbsorptionField]) -> Result<ScatteringData, ForwardError> {
    let (last, rest) = factors.split_last().ok_or(ForwardError::NoFactors)?;
    for f in factors {
        f.check_grid(&ops.grid)?;
    }
    let mut chain = ops.g_vd.clone();
    scale_rows(&mut chain, last);
    for f in rest.iter().rev() {
        chain = &ops.g_vv * chain;
        scale_rows(&mut chain, f);
    }
    let coef = ops.mode.series_coefficient(factors.len());
    Ok(ScatteringData {
        values: weighted_sources(ops) * chain * C64::new(coef, 0.0),
    })
}

/// Born series remainder bound `(nu/mu) (mu ||eta||)^{N+1} / (1 - mu ||eta||)`
/// at one norm endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderBound {
    pub p: Endpoint,
    pub mu: f64,
    pub nu: f64,
    pub eta_norm: f64,
    /// `mu ||eta||`; the bound applies only when this is below 1.
    pub contraction: f64,
    /// Bound after each order `N = 1..`, `None` when not applicable.
    pub per_order: Option<Vec<f64>>,
}

impl RemainderBound {
    pub fn new(p: Endpoint, mu: f64, nu: f64, eta_norm: f64, orders: usize) -> Self {
        let x = mu * eta_norm;
        let per_order = (x < 1.0).then(|| {
            (1..=orders)
                .map(|n| {
                    if x == 0.0 {
                        0.0
                    } else {
                        nu / mu * x.powi(n as i32 + 1) / (1.0 - x)
                    }
                })
                .collect()
        });
        Self {
            p,
            mu,
            nu,
            eta_norm,
            contraction: x,
            per_order,
        }
    }

    pub fn is_applicable(&self) -> bool {
        self.per_order.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct BornTermSeries {
    /// `terms[j]` is `K_{j+1}` applied to `j+1` copies of `eta`.
    pub terms: Vec<ScatteringData>,
    pub partial_sums: Vec<ScatteringData>,
    pub remainder: Vec<RemainderBound>,
}

fn remainder_bounds(
    ops: &OperatorSet,
    eta: &AbsorptionField,
    orders: usize,
) -> Result<Vec<RemainderBound>, ForwardError> {
    let constants = ConstantSet::numeric(ops)?;
    Endpoint::BOTH
        .iter()
        .map(|&e| {
            let norm = eta.norm(&ops.grid, e.p())?;
            Ok(RemainderBound::new(e, constants.mu(e), constants.nu(e), norm, orders))
        })
        .collect()
}

/// Sums the first `n` Born terms. Each new term reuses the previous kernel
/// chain, so the cost is one volume product per order.
pub fn born_sum(ops: &OperatorSet, eta: &AbsorptionField, n: usize) -> Result<BornTermSeries, ForwardError> {
    if n == 0 {
        return Err(ForwardError::ZeroOrder);
    }
    eta.check_grid(&ops.grid)?;
    let sources = weighted_sources(ops);
    let mut chain = ops.g_vd.clone();
    scale_rows(&mut chain, eta);
    let mut terms = Vec::with_capacity(n);
    let mut partial_sums: Vec<ScatteringData> = Vec::with_capacity(n);
    for m in 1..=n {
        if m > 1 {
            chain = &ops.g_vv * chain;
            scale_rows(&mut chain, eta);
        }
        let coef = ops.mode.series_coefficient(m);
        let term = ScatteringData {
            values: &sources * &chain * C64::new(coef, 0.0),
        };
        let sum = match partial_sums.last() {
            Some(prev) => ScatteringData {
                values: &prev.values + &term.values,
            },
            None => term.clone(),
        };
        terms.push(term);
        partial_sums.push(sum);
    }
    Ok(BornTermSeries {
        terms,
        partial_sums,
        remainder: remainder_bounds(ops, eta, n)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub order: usize,
    pub empirical: f64,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualCertificate {
    pub p: Endpoint,
    pub contraction: f64,
    pub applicable: bool,
    pub rows: Vec<CertificateRow>,
}

impl ResidualCertificate {
    /// True when every available bound dominates the measured remainder.
    pub fn holds(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.bound.is_none_or(|b| r.empirical <= b))
    }
}

/// Compares `||phi_direct - S_N||_p` against the remainder bound for
/// `N = 1..=n`, `p` in `{2, inf}`.
pub fn residual_certificate(
    ops: &OperatorSet,
    eta: &AbsorptionField,
    n: usize,
) -> Result<Vec<ResidualCertificate>, ForwardError> {
    let direct = solve_direct(ops, eta)?;
    let series = born_sum(ops, eta, n)?;
    certificate_from(ops, &direct, &series)
}

pub(crate) fn certificate_from(
    ops: &OperatorSet,
    direct: &ScatteringData,
    series: &BornTermSeries,
) -> Result<Vec<ResidualCertificate>, ForwardError> {
    series
        .remainder
        .iter()
        .map(|rb| {
            let rows = series
                .partial_sums
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let diff = ScatteringData {
                        values: &direct.values - &s.values,
                    };
                    Ok(CertificateRow {
                        order: i + 1,
                        empirical: diff.norm(&ops.boundary, rb.p.p())?,
                        bound: rb.per_order.as_ref().map(|v| v[i]),
                    })
                })
                .collect::<Result<Vec<_>, GridError>>()?;
            Ok(ResidualCertificate {
                p: rb.p,
                contraction: rb.contraction,
                applicable: rb.is_applicable(),
                rows,
            })
        })
        .collect()
}

/// Amplitude `c` for which `mu_inf ||c f||_inf = target`, with `mu_inf` measured
/// on the assembled kernel.
pub fn amplitude_for_contraction(
    ops: &OperatorSet,
    shape: &AbsorptionField,
    target: f64,
) -> Result<f64, ForwardError> {
    let mu = bounds::mu_numeric(ops, Endpoint::Inf);
    let norm = shape.norm(&ops.grid, f64::INFINITY)?;
    Ok(target / (mu * norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::{assemble, g0, self_cell_integral, WaveKind, WaveMode};
    use crate::grid::{build_ball_grid, build_sphere_boundary, dist3, BoundaryArray, Grid};
    use proptest::prelude::*;

    fn small_ops(kind: WaveKind, h: f64, n_src: usize, n_det: usize) -> OperatorSet {
        let g = build_ball_grid(1.0, h).unwrap();
        let b = build_sphere_boundary(2.0, n_src, n_det).unwrap();
        assemble(WaveMode::new(kind, 1.0).unwrap(), &g, &b).unwrap()
    }

    fn single_voxel(kind: WaveKind) -> OperatorSet {
        let grid = Grid {
            centers: vec![[0.1, -0.2, 0.15]],
            weights: vec![0.05],
            spacing: 0.05f64.cbrt(),
            radius: 1.0,
        };
        let b = build_sphere_boundary(2.0, 1, 1).unwrap();
        assemble(WaveMode::new(kind, 1.3).unwrap(), &grid, &b).unwrap()
    }

    fn max_rel(a: &ScatteringData, b: &ScatteringData) -> f64 {
        let scale = b.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        (&a.values - &b.values).iter().map(|v| v.norm()).fold(0.0, f64::max) / scale
    }

    fn random_field(n: usize, seed: u64) -> AbsorptionField {
        // small LCG, enough for deterministic test fields
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        AbsorptionField {
            values: nalgebra::DVector::from_fn(n, |_, _| C64::new(next(), next())),
        }
    }

    #[test]
    fn zero_perturbation_gives_zero_data() {
        let ops = small_ops(WaveKind::Diffuse, 0.5, 3, 4);
        let zero = AbsorptionField::zeros(ops.num_nodes());
        let phi = solve_direct(&ops, &zero).unwrap();
        assert!(phi.values.iter().all(|v| *v == C64::new(0.0, 0.0)));
        let series = born_sum(&ops, &zero, 4).unwrap();
        assert!(series.terms.iter().all(|t| t.values.iter().all(|v| v.norm() == 0.0)));
        let cert = residual_certificate(&ops, &zero, 3).unwrap();
        for c in cert {
            assert!(c.rows.iter().all(|r| r.empirical == 0.0 && r.bound == Some(0.0)));
        }
    }

    #[test]
    fn single_voxel_direct_solve_closed_form() {
        for kind in [WaveKind::Diffuse, WaveKind::Scalar] {
            let ops = single_voxel(kind);
            let eta_v = 0.7;
            let eta = AbsorptionField::constant(1, eta_v);
            let phi = solve_direct(&ops, &eta).unwrap();
            let mode = ops.mode;
            let k2 = mode.k * mode.k;
            let s = mode.scattering_sign();
            let y = ops.grid.centers[0];
            let gs = g0(mode, dist3(&ops.boundary.sources[0], &y)).unwrap();
            let gd = g0(mode, dist3(&y, &ops.boundary.detectors[0])).unwrap();
            let cell = self_cell_integral(mode, 0.05).unwrap();
            let expect = gs * gd * (s * k2 * eta_v * 0.05) / (1.0 + cell * (s * k2 * eta_v));
            assert!((phi.values[(0, 0)] - expect).norm() < 1e-14 * expect.norm(), "{kind:?}");

            let k1 = apply_k(&ops, &[&eta]).unwrap();
            let expect1 = gs * gd * (mode.series_coefficient(1) * eta_v * 0.05);
            assert!((k1.values[(0, 0)] - expect1).norm() < 1e-14 * expect1.norm());
            if kind == WaveKind::Diffuse {
                // K1 eta = k^2 G(x_s, y) c w G(y, x_d)
                assert!((expect1 - gs * gd * (k2 * eta_v * 0.05)).norm() < 1e-16);
            }
        }
    }

    #[test]
    fn second_order_matches_brute_force_double_sum() {
        for kind in [WaveKind::Diffuse, WaveKind::Scalar] {
            let ops = small_ops(kind, 0.5, 3, 2);
            let v = ops.num_nodes();
            assert!(v <= 50);
            let f1 = random_field(v, 1);
            let f2 = random_field(v, 2);
            let got = apply_k(&ops, &[&f1, &f2]).unwrap();
            let mode = ops.mode;
            let w = &ops.grid.weights;
            let c = &ops.grid.centers;
            let mut expect = DMatrix::<C64>::zeros(3, 2);
            for s in 0..3 {
                for d in 0..2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for i in 0..v {
                        for j in 0..v {
                            let gij = if i == j {
                                self_cell_integral(mode, w[i]).unwrap() / w[i]
                            } else {
                                g0(mode, dist3(&c[i], &c[j])).unwrap()
                            };
                            acc += g0(mode, dist3(&ops.boundary.sources[s], &c[i])).unwrap()
                                * f1.values[i]
                                * gij
                                * f2.values[j]
                                * g0(mode, dist3(&c[j], &ops.boundary.detectors[d])).unwrap()
                                * (w[i] * w[j]);
                        }
                    }
                    expect[(s, d)] = acc * mode.series_coefficient(2);
                }
            }
            let rel = max_rel(&got, &ScatteringData { values: expect });
            assert!(rel <= 1e-12, "{kind:?}: {rel}");
        }
    }

    #[test]
    fn swapping_sources_and_detectors_transposes_data() {
        let g = build_ball_grid(1.0, 0.5).unwrap();
        let b = build_sphere_boundary(2.0, 3, 5).unwrap();
        let swapped = BoundaryArray {
            sources: b.detectors.clone(),
            detectors: b.sources.clone(),
            source_weight: b.detector_weight,
            detector_weight: b.source_weight,
            omega_radius: 2.0,
        };
        for kind in [WaveKind::Diffuse, WaveKind::Scalar] {
            let mode = WaveMode::new(kind, 1.0).unwrap();
            let a = assemble(mode, &g, &b).unwrap();
            let s = assemble(mode, &g, &swapped).unwrap();
            let f = AbsorptionField::from_real(
                &(0..g.len()).map(|i| 0.1 + 0.01 * i as f64).collect::<Vec<_>>(),
            );
            let x = apply_k(&a, &[&f, &f]).unwrap();
            let y = apply_k(&s, &[&f, &f]).unwrap();
            assert!(max_rel(&x, &ScatteringData { values: y.values.transpose() }) < 1e-13);
            let x = solve_direct(&a, &f).unwrap();
            let y = solve_direct(&s, &f).unwrap();
            assert!(max_rel(&x, &ScatteringData { values: y.values.transpose() }) < 1e-12);
        }
    }

    #[test]
    fn diffuse_data_is_real() {
        let ops = small_ops(WaveKind::Diffuse, 0.5, 4, 4);
        let f = AbsorptionField::constant(ops.num_nodes(), 0.4);
        let phi = solve_direct(&ops, &f).unwrap();
        assert!(phi.values.iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn direct_solve_matches_long_born_series() {
        let ops = small_ops(WaveKind::Diffuse, 0.4, 5, 5);
        let shape = AbsorptionField::constant(ops.num_nodes(), 1.0);
        let c = amplitude_for_contraction(&ops, &shape, 0.3).unwrap();
        let eta = shape.scaled(c);
        let direct = solve_direct(&ops, &eta).unwrap();
        let series = born_sum(&ops, &eta, 30).unwrap();
        let rel = max_rel(series.partial_sums.last().unwrap(), &direct);
        assert!(rel <= 1e-8, "{rel}");
    }

    #[test]
    fn born_terms_match_apply_k_and_partial_sums_add_up() {
        let ops = small_ops(WaveKind::Scalar, 0.5, 3, 3);
        let eta = random_field(ops.num_nodes(), 9).scaled(0.2);
        let series = born_sum(&ops, &eta, 4).unwrap();
        for (j, term) in series.terms.iter().enumerate() {
            let factors: Vec<&AbsorptionField> = vec![&eta; j + 1];
            let direct = apply_k(&ops, &factors).unwrap();
            assert!(max_rel(term, &direct) < 1e-13);
        }
        let mut acc = DMatrix::<C64>::zeros(3, 3);
        for (t, s) in series.terms.iter().zip(&series.partial_sums) {
            acc += &t.values;
            assert_eq!(acc, s.values);
        }
    }

    #[test]
    fn terms_decay_geometrically() {
        let ops = small_ops(WaveKind::Diffuse, 0.4, 4, 4);
        let shape = AbsorptionField::constant(ops.num_nodes(), 1.0);
        let c = amplitude_for_contraction(&ops, &shape, 0.5).unwrap();
        let eta = shape.scaled(c);
        let series = born_sum(&ops, &eta, 8).unwrap();
        let norms: Vec<f64> = series
            .terms
            .iter()
            .map(|t| t.norm(&ops.boundary, f64::INFINITY).unwrap())
            .collect();
        for j in 2..norms.len() - 1 {
            assert!(norms[j + 1] / norms[j] <= 0.5 * 1.2, "j = {j}: {norms:?}");
        }
    }

    #[test]
    fn certificate_holds_and_shrinks() {
        let ops = small_ops(WaveKind::Diffuse, 0.4, 6, 6);
        let shape = random_field(ops.num_nodes(), 4);
        let shape = AbsorptionField::from_real(&shape.values.iter().map(|v| v.re.abs()).collect::<Vec<_>>());
        let c = amplitude_for_contraction(&ops, &shape, 0.4).unwrap();
        let eta = shape.scaled(c);
        let certs = residual_certificate(&ops, &eta, 5).unwrap();
        assert_eq!(certs.len(), 2);
        for cert in &certs {
            assert!(cert.applicable);
            assert!(cert.holds(), "{cert:?}");
            let bounds: Vec<f64> = cert.rows.iter().map(|r| r.bound.unwrap()).collect();
            assert!(bounds.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn large_perturbation_marks_bound_not_applicable() {
        let ops = small_ops(WaveKind::Diffuse, 0.5, 3, 3);
        let shape = AbsorptionField::constant(ops.num_nodes(), 1.0);
        let c = amplitude_for_contraction(&ops, &shape, 1.5).unwrap();
        let eta = shape.scaled(c);
        let series = born_sum(&ops, &eta, 3).unwrap();
        let inf = series.remainder.iter().find(|r| r.p == Endpoint::Inf).unwrap();
        assert!(!inf.is_applicable());
        assert!(solve_direct(&ops, &eta).is_ok());
    }

    #[test]
    fn singular_system_is_reported() {
        let ops = single_voxel(WaveKind::Diffuse);
        // 1 + k^2 eta selfcell = 0
        let cell = self_cell_integral(ops.mode, 0.05).unwrap().re;
        let eta = AbsorptionField::constant(1, -1.0 / (ops.mode.k * ops.mode.k * cell));
        assert!(matches!(
            solve_direct(&ops, &eta),
            Err(ForwardError::Singular) | Err(ForwardError::IllConditioned(_))
        ));
    }

    #[test]
    fn factor_errors() {
        let ops = small_ops(WaveKind::Diffuse, 0.5, 2, 2);
        assert!(matches!(apply_k(&ops, &[]), Err(ForwardError::NoFactors)));
        let wrong = AbsorptionField::zeros(3);
        assert!(matches!(apply_k(&ops, &[&wrong]), Err(ForwardError::Grid(_))));
        assert!(matches!(born_sum(&ops, &wrong, 0), Err(ForwardError::ZeroOrder)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn apply_k_is_multilinear(seed in 0u64..10_000, c_re in -3.0..3.0f64, c_im in -3.0..3.0f64) {
            let ops = small_ops(WaveKind::Scalar, 0.5, 2, 3);
            let n = ops.num_nodes();
            let f1 = random_field(n, seed);
            let g1 = random_field(n, seed + 1);
            let f2 = random_field(n, seed + 2);
            let c = C64::new(c_re, c_im);
            let cf1 = AbsorptionField { values: &f1.values * c };
            let sum = AbsorptionField { values: &f1.values + &g1.values };
            let base = apply_k(&ops, &[&f1, &f2]).unwrap();
            let scaled = apply_k(&ops, &[&cf1, &f2]).unwrap();
            let scale = base.values.norm() * (1.0 + c.norm());
            prop_assert!((&scaled.values - &base.values * c).norm() <= 1e-13 * scale);
            let other = apply_k(&ops, &[&g1, &f2]).unwrap();
            let added = apply_k(&ops, &[&sum, &f2]).unwrap();
            let scale = base.values.norm() + other.values.norm();
            prop_assert!((&added.values - &base.values - &other.values).norm() <= 1e-13 * scale);
            // second slot
            let sum2 = AbsorptionField { values: &f2.values + &g1.values };
            let a = apply_k(&ops, &[&f1, &sum2]).unwrap();
            let b = apply_k(&ops, &[&f1, &g1]).unwrap();
            prop_assert!((&a.values - &base.values - &b.values).norm() <= 1e-13 * (a.values.norm() + b.values.norm()));
        }
    }
}
