//! Inverse scattering series.
//!
//! Only the linear operator `K1` is inverted (by truncated SVD). Higher-order
//! terms come from the recursion
//!
//! ```text
//! eta_1 = K1+ phi
//! eta_j = -K1+ sum_{m=2..j} sum_{i_1+..+i_m = j} K_m(eta_{i_1}, .., eta_{i_m})
//! ```
//!
//! which equals applying the series operators `K_j+` to `phi^{(x)j}` whenever
//! `K1+ K1 K1+ = K1+`, a property truncated SVD has exactly.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsError, ConstantSet, Endpoint, LemmaConstant, TheoremBounds};
use crate::forward::ForwardError;
use crate::greens::OperatorSet;
use crate::grid::{lp_norm, AbsorptionField, GridError, ScatteringData};
use crate::linalg::thin_svd;
use crate::C64;

/// Default relative singular-value cutoff.
pub const DEFAULT_CUTOFF: f64 = 1e-3;
/// Default limit on the series order.
pub const DEFAULT_MAX_ORDER: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InverseError {
    #[error("regularization keeps no singular triplet ({0})")]
    EmptyRetained(String),
    #[error("invalid regularization: {0}")]
    InvalidRule(String),
    #[error("series order {requested} exceeds the partition budget of {budget}")]
    OrderBudget { requested: usize, budget: usize },
    #[error("series order must be at least 1")]
    ZeroOrder,
    #[error("data shape {got:?} does not match the operator ({expected:?})")]
    DataShape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

/// Dense `K1` plus the SVD of its weight-normalized form.
///
/// Rows are source-detector pairs with the source index fastest, columns are
/// grid nodes. The normalized matrix is `D_p^{1/2} K1 D_v^{-1/2}` with `D_p`
/// the pair weights and `D_v` the volume weights, so its singular values are
/// operator norms between the weighted `L^2` spaces.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub matrix: DMatrix<C64>,
    pub singular_values: Vec<f64>,
    pub u: DMatrix<C64>,
    pub v: DMatrix<C64>,
    pub pair_weights: Vec<f64>,
    pub volume_weights: Vec<f64>,
    pub n_src: usize,
    pub n_det: usize,
}

impl LinearizedOperator {
    pub fn apply(&self, eta: &AbsorptionField) -> ScatteringData {
        let flat = &self.matrix * &eta.values;
        ScatteringData::from_flat(self.n_src, self.n_det, flat.as_slice())
    }

    /// `||K1||_2`, the largest weighted singular value.
    pub fn norm_2(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// `||K1||_inf`, the maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        max_row_sum(&self.matrix)
    }
}

fn max_row_sum(m: &DMatrix<C64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn build_k1(ops: &OperatorSet) -> LinearizedOperator {
    let (ns, nd, nv) = (ops.num_sources(), ops.num_detectors(), ops.num_nodes());
    let coef = ops.mode.series_coefficient(1);
    let w = &ops.grid.weights;
    let matrix = DMatrix::from_fn(ns * nd, nv, |row, j| {
        let (s, d) = (row % ns, row / ns);
        ops.g_sv[(s, j)] * ops.g_vd[(j, d)] * (coef * w[j])
    });
    let pair_weights = ops.boundary.pair_weights();
    let mut normalized = matrix.clone();
    for (j, mut col) in normalized.column_iter_mut().enumerate() {
        for (r, v) in col.iter_mut().enumerate() {
            *v *= (pair_weights[r] / w[j]).sqrt();
        }
    }
    let svd = thin_svd(&normalized);
    LinearizedOperator {
        matrix,
        singular_values: svd.s,
        u: svd.u,
        v: svd.v,
        pair_weights,
        volume_weights: w.clone(),
        n_src: ns,
        n_det: nd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// Keep the `r` largest singular triplets.
    Rank(usize),
    /// Keep singular values with `sigma >= tau * sigma_max`.
    RelativeCutoff(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::RelativeCutoff(DEFAULT_CUTOFF)
    }
}

/// Truncated-SVD pseudoinverse `K1+`.
#[derive(Debug, Clone)]
pub struct RegularizedInverse {
    pub rank: usize,
    /// Smallest retained singular value.
    pub sigma_min: f64,
    pub rule: Regularization,
    /// Realized `num_nodes x num_pairs` pseudoinverse matrix.
    pub matrix: DMatrix<C64>,
    /// `||K1+||_2 = 1/sigma_min`.
    pub norm_2: f64,
    /// `||K1+||_inf`, maximum absolute row sum of `matrix`.
    pub norm_inf: f64,
    retained_v: DMatrix<C64>,
    volume_weights: Vec<f64>,
    n_src: usize,
    n_det: usize,
}

impl RegularizedInverse {
    pub fn norm(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::Two => self.norm_2,
            Endpoint::Inf => self.norm_inf,
        }
    }

    pub fn apply(&self, phi: &ScatteringData) -> Result<AbsorptionField, InverseError> {
        let got = phi.values.shape();
        if got != (self.n_src, self.n_det) {
            return Err(InverseError::DataShape {
                got,
                expected: (self.n_src, self.n_det),
            });
        }
        let flat = DVector::from_column_slice(phi.as_slice());
        Ok(AbsorptionField {
            values: &self.matrix * flat,
        })
    }

    /// `P eta = K1+ K1 eta`, the weighted-orthogonal projection onto the
    /// retained right-singular subspace.
    pub fn project(&self, eta: &AbsorptionField) -> AbsorptionField {
        let sqrt_w: Vec<f64> = self.volume_weights.iter().map(|w| w.sqrt()).collect();
        let scaled = DVector::from_fn(eta.len(), |i, _| eta.values[i] * sqrt_w[i]);
        let coeffs = self.retained_v.adjoint() * scaled;
        let back = &self.retained_v * coeffs;
        AbsorptionField {
            values: DVector::from_fn(eta.len(), |i, _| back[i] / sqrt_w[i]),
        }
    }

    pub fn projector_matrix(&self) -> DMatrix<C64> {
        let n = self.volume_weights.len();
        let vv = &self.retained_v * self.retained_v.adjoint();
        DMatrix::from_fn(n, n, |i, j| {
            vv[(i, j)] * (self.volume_weights[j] / self.volume_weights[i]).sqrt()
        })
    }
}

pub fn regularize(k1: &LinearizedOperator, rule: Regularization) -> Result<RegularizedInverse, InverseError> {
    let s = &k1.singular_values;
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = match rule {
        Regularization::Rank(r) => {
            if r == 0 || r > s.len() {
                return Err(InverseError::InvalidRule(format!(
                    "rank {r} outside 1..={}",
                    s.len()
                )));
            }
            r
        }
        Regularization::RelativeCutoff(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(InverseError::InvalidRule(format!(
                    "relative cutoff {tau} outside (0, 1]"
                )));
            }
            s.iter().take_while(|&&x| x >= tau * smax && x > 0.0).count()
        }
    };
    if rank == 0 || !(s[rank - 1] > 0.0) {
        return Err(InverseError::EmptyRetained(format!(
            "sigma_max = {smax:e}, rule {rule:?}"
        )));
    }
    let sigma_min = s[rank - 1];
    let (np, nv) = k1.matrix.shape();
    let v_r = k1.v.columns(0, rank).into_owned();
    let u_r = k1.u.columns(0, rank).into_owned();
    // K1+ = D_v^{-1/2} V_r S_r^{-1} U_r^H D_p^{1/2}
    let mut left = v_r.clone();
    for (c, mut col) in left.column_iter_mut().enumerate() {
        col /= C64::new(s[c], 0.0);
    }
    let mut matrix = left * u_r.adjoint();
    for j in 0..np {
        let sp = k1.pair_weights[j].sqrt();
        for i in 0..nv {
            matrix[(i, j)] *= sp / k1.volume_weights[i].sqrt();
        }
    }
    let norm_inf = max_row_sum(&matrix);
    Ok(RegularizedInverse {
        rank,
        sigma_min,
        rule,
        matrix,
        norm_2: 1.0 / sigma_min,
        norm_inf,
        retained_v: v_r,
        volume_weights: k1.volume_weights.clone(),
        n_src: k1.n_src,
        n_det: k1.n_det,
    })
}

/// Ordered partitions of `j` into `m` positive parts, depth-first
/// lexicographic.
pub fn compositions(j: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for first in 1..=left - (parts - 1) {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m >= 1 && m <= j {
        rec(j, m, &mut Vec::with_capacity(m), &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub max_order: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            max_order: DEFAULT_MAX_ORDER,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TermNorms {
    pub order: usize,
    pub norm_2: f64,
    pub norm_inf: f64,
}

#[derive(Debug, Clone)]
pub struct InverseSeriesResult {
    /// `terms[j-1]` is `eta_j`.
    pub terms: Vec<AbsorptionField>,
    pub partial_sums: Vec<AbsorptionField>,
    pub term_norms: Vec<TermNorms>,
}

pub fn invert_series(
    kinv: &RegularizedInverse,
    ops: &OperatorSet,
    phi: &ScatteringData,
    n: usize,
) -> Result<InverseSeriesResult, InverseError> {
    invert_series_with(kinv, ops, phi, n, SeriesOptions::default())
}

pub fn invert_series_with(
    kinv: &RegularizedInverse,
    ops: &OperatorSet,
    phi: &ScatteringData,
    n: usize,
    options: SeriesOptions,
) -> Result<InverseSeriesResult, InverseError> {
    if n == 0 {
        return Err(InverseError::ZeroOrder);
    }
    if n > options.max_order {
        return Err(InverseError::OrderBudget {
            requested: n,
            budget: options.max_order,
        });
    }
    let mut weighted_sources = ops.g_sv.clone();
    for (mut col, &w) in weighted_sources.column_iter_mut().zip(ops.grid.weights.iter()) {
        col *= C64::new(w, 0.0);
    }
    let mut terms: Vec<AbsorptionField> = vec![kinv.apply(phi)?];
    // chains[c] = diag(eta_{c_1}) G~ diag(eta_{c_2}) ... G~ diag(eta_{c_m}) G_vd,
    // shared between compositions with a common suffix
    let mut chains: BTreeMap<Vec<usize>, DMatrix<C64>> = BTreeMap::new();
    let scaled_detectors = |eta: &AbsorptionField| {
        let mut c = ops.g_vd.clone();
        for (mut row, &v) in c.row_iter_mut().zip(eta.values.iter()) {
            row *= v;
        }
        c
    };
    chains.insert(vec![1], scaled_detectors(&terms[0]));

    for j in 2..=n {
        let mut acc = DMatrix::<C64>::zeros(ops.num_nodes(), ops.num_detectors());
        for m in 2..=j {
            let coef = C64::new(ops.mode.series_coefficient(m), 0.0);
            for comp in compositions(j, m) {
                let chain = {
                    let suffix = chains
                        .get(&comp[1..])
                        .expect("suffixes are compositions of lower orders");
                    let mut c = &ops.g_vv * suffix;
                    let head = &terms[comp[0] - 1];
                    for (mut row, &v) in c.row_iter_mut().zip(head.values.iter()) {
                        row *= v;
                    }
                    c
                };
                acc += &chain * coef;
                chains.insert(comp, chain);
            }
        }
        let data = ScatteringData {
            values: &weighted_sources * acc,
        };
        let eta_j = kinv.apply(&data)?.scaled(-1.0);
        chains.insert(vec![j], scaled_detectors(&eta_j));
        terms.push(eta_j);
    }

    let mut partial_sums: Vec<AbsorptionField> = Vec::with_capacity(n);
    for t in &terms {
        let next = match partial_sums.last() {
            Some(prev) => AbsorptionField {
                values: &prev.values + &t.values,
            },
            None => t.clone(),
        };
        partial_sums.push(next);
    }
    let term_norms = terms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(TermNorms {
                order: i + 1,
                norm_2: t.norm(&ops.grid, 2.0)?,
                norm_inf: t.norm(&ops.grid, f64::INFINITY)?,
            })
        })
        .collect::<Result<Vec<_>, GridError>>()?;
    Ok(InverseSeriesResult {
        terms,
        partial_sums,
        term_norms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderDiagnostics {
    pub order: usize,
    pub term_norm: f64,
    /// `C x^j` with `x = (mu + nu) ||K1+|| ||phi||`, the term-norm envelope.
    pub envelope: Option<f64>,
    /// Convergence-theorem tail bound after this order.
    pub remainder_bound: Option<f64>,
    /// Measured `||eta_true - S_N||`, when the truth is known.
    pub measured_error: Option<f64>,
    /// Error-theorem right-hand side at this order.
    pub error_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndpointDiagnostics {
    pub p: Endpoint,
    pub mu: f64,
    pub nu: f64,
    pub inverse_radius: f64,
    pub kinv_norm: f64,
    pub k1_norm: f64,
    pub phi_norm: f64,
    pub kinv_phi_norm: f64,
    /// `(mu + nu) ||K1+||`; the operator hypothesis needs this below 1.
    pub operator_condition: f64,
    /// `(mu + nu) ||K1+ phi||`; the data hypothesis needs this below 1.
    pub data_condition: f64,
    /// `(mu + nu) ||K1+|| ||phi||`, the geometric ratio of the tail bound.
    pub series_ratio: f64,
    pub hypotheses_hold: bool,
    /// First failed hypothesis, if any.
    pub violation: Option<String>,
    pub lemma: Option<LemmaConstant>,
    /// Stability constant for `M = ||phi||`.
    pub stability_constant: Option<f64>,
    /// `||(I - K1+ K1) eta_true||`.
    pub linear_residual: Option<f64>,
    /// `max(||eta_true||, ||K1+ K1 eta_true||)`.
    pub truth_scale: Option<f64>,
    pub orders: Vec<OrderDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub endpoints: Vec<EndpointDiagnostics>,
}

impl Diagnostics {
    pub fn hypotheses_hold(&self) -> bool {
        self.endpoints.iter().all(|e| e.hypotheses_hold)
    }

    pub fn endpoint(&self, p: Endpoint) -> &EndpointDiagnostics {
        self.endpoints
            .iter()
            .find(|e| e.p == p)
            .expect("both endpoints are always present")
    }
}

fn keep_ok(r: Result<f64, BoundsError>, first_err: &mut Option<String>) -> Option<f64> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            if first_err.is_none() {
                *first_err = Some(e.to_string());
            }
            None
        }
    }
}

/// Theorem-side quantities and measured errors for one inversion.
/// Hypothesis violations are recorded, never raised.
pub fn diagnostics(
    result: &InverseSeriesResult,
    kinv: &RegularizedInverse,
    k1: &LinearizedOperator,
    constants: &ConstantSet,
    ops: &OperatorSet,
    phi: &ScatteringData,
    eta_true: Option<&AbsorptionField>,
) -> Result<Diagnostics, InverseError> {
    let mut endpoints = Vec::with_capacity(2);
    for e in Endpoint::BOTH {
        let p = e.p();
        let (mu, nu) = (constants.mu(e), constants.nu(e));
        let bounds = TheoremBounds::new(mu, nu, kinv.norm(e));
        let s = mu + nu;
        let phi_norm = phi.norm(&ops.boundary, p)?;
        let kinv_phi_norm = result.terms[0].norm(&ops.grid, p)?;
        let operator_condition = s * kinv.norm(e);
        let data_condition = s * kinv_phi_norm;
        let series_ratio = operator_condition * phi_norm;

        let mut violation = None;
        let lemma = match bounds.lemma("convergence theorem") {
            Ok(c) => Some(c),
            Err(err) => {
                violation = Some(err.to_string());
                None
            }
        };
        let stability_constant = keep_ok(bounds.stability_constant(phi_norm), &mut violation);

        let (linear_residual, truth_scale) = match eta_true {
            Some(t) => {
                let proj = kinv.project(t);
                let resid = AbsorptionField {
                    values: &t.values - &proj.values,
                };
                let scale = t.norm(&ops.grid, p)?.max(proj.norm(&ops.grid, p)?);
                (Some(resid.norm(&ops.grid, p)?), Some(scale))
            }
            None => (None, None),
        };

        let mut orders = Vec::with_capacity(result.terms.len());
        for (i, term) in result.terms.iter().enumerate() {
            let n = i + 1;
            let remainder_bound = keep_ok(bounds.remainder_bound(phi_norm, kinv_phi_norm, n), &mut violation);
            let measured_error = match eta_true {
                Some(t) => {
                    let diff: Vec<C64> = t
                        .values
                        .iter()
                        .zip(result.partial_sums[i].values.iter())
                        .map(|(a, b)| a - b)
                        .collect();
                    Some(lp_norm(&diff, &ops.grid.weights, p)?)
                }
                None => None,
            };
            let error_bound = match (linear_residual, truth_scale) {
                (Some(r), Some(m)) => keep_ok(
                    bounds.error_bound(phi_norm, kinv_phi_norm, m, r, n),
                    &mut violation,
                ),
                _ => None,
            };
            orders.push(OrderDiagnostics {
                order: n,
                term_norm: term.norm(&ops.grid, p)?,
                envelope: lemma.map(|c| c.simple * series_ratio.powi(n as i32)),
                remainder_bound,
                measured_error,
                error_bound,
            });
        }
        let k1_norm = match e {
            Endpoint::Two => k1.norm_2(),
            Endpoint::Inf => k1.norm_inf(),
        };
        endpoints.push(EndpointDiagnostics {
            p: e,
            mu,
            nu,
            inverse_radius: bounds.inverse_radius,
            kinv_norm: kinv.norm(e),
            k1_norm,
            phi_norm,
            kinv_phi_norm,
            operator_condition,
            data_condition,
            series_ratio,
            hypotheses_hold: violation.is_none(),
            violation,
            lemma,
            stability_constant,
            linear_residual,
            truth_scale,
            orders,
        });
    }
    Ok(Diagnostics { endpoints })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRecord {
    pub p: Endpoint,
    /// `||eta~_1 - eta~_2||` at the requested order.
    pub lhs: f64,
    pub delta_phi_norm: f64,
    /// `max(||phi_1||, ||phi_2||)`.
    pub m: f64,
    /// Stability constant, when the hypotheses hold.
    pub constant: Option<f64>,
    /// Tail bounds of both runs, since the theorem compares limits and the
    /// left-hand side uses order-`n` sums.
    pub tail_allowance: Option<f64>,
    /// `constant * delta_phi_norm + tail_allowance`.
    pub rhs: Option<f64>,
    pub hypothesis_ok: bool,
    pub violation: Option<String>,
}

impl StabilityRecord {
    /// `lhs <= rhs`, false when the right-hand side is unavailable.
    pub fn holds(&self) -> bool {
        self.rhs.is_some_and(|r| self.lhs <= r)
    }
}

/// Runs the series on two data sets and compares the difference of the
/// order-`n` sums against the stability bound.
pub fn stability_probe(
    kinv: &RegularizedInverse,
    ops: &OperatorSet,
    constants: &ConstantSet,
    phi1: &ScatteringData,
    phi2: &ScatteringData,
    n: usize,
) -> Result<Vec<StabilityRecord>, InverseError> {
    let r1 = invert_series(kinv, ops, phi1, n)?;
    let r2 = invert_series(kinv, ops, phi2, n)?;
    let s1 = r1.partial_sums.last().expect("n >= 1");
    let s2 = r2.partial_sums.last().expect("n >= 1");
    let diff_eta = AbsorptionField {
        values: &s1.values - &s2.values,
    };
    let diff_phi = ScatteringData {
        values: &phi1.values - &phi2.values,
    };
    Endpoint::BOTH
        .iter()
        .map(|&e| {
            let p = e.p();
            let bounds = TheoremBounds::new(constants.mu(e), constants.nu(e), kinv.norm(e));
            let m = phi1.norm(&ops.boundary, p)?.max(phi2.norm(&ops.boundary, p)?);
            let delta = diff_phi.norm(&ops.boundary, p)?;
            let tails = [(phi1, &r1), (phi2, &r2)]
                .iter()
                .map(|(phi, r)| {
                    let first = r.terms[0].norm(&ops.grid, p)?;
                    Ok(bounds.remainder_bound(phi.norm(&ops.boundary, p)?, first, n))
                })
                .collect::<Result<Vec<_>, GridError>>()?;
            let (constant, tail_allowance, violation) = match (bounds.stability_constant(m), &tails[..]) {
                (Err(err), _) => (None, None, Some(err.to_string())),
                (Ok(_), [Err(err), _] | [_, Err(err)]) => (None, None, Some(err.to_string())),
                (Ok(c), [Ok(t1), Ok(t2)]) => (Some(c), Some(t1 + t2), None),
                _ => unreachable!("two runs"),
            };
            Ok(StabilityRecord {
                p: e,
                lhs: diff_eta.norm(&ops.grid, p)?,
                delta_phi_norm: delta,
                m,
                constant,
                tail_allowance,
                rhs: constant.zip(tail_allowance).map(|(c, t)| c * delta + t),
                hypothesis_ok: violation.is_none(),
                violation,
            })
        })
        .collect()
}
