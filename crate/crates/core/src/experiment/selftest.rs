//! Invariant suite run by the `selftest` subcommand.
//!
//! Every check reduces to one measured value and an accepted interval. The
//! fault-injection switch moves the named check's value outside its interval,
//! which is how CI confirms that a broken constant is reported by name.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{mu_closed_form, mu_numeric_lattice, ConstantSet, Endpoint};
use crate::forward::{amplitude_for_contraction, apply_k, born_sum, residual_certificate, solve_direct};
use crate::greens::{WaveKind, WaveMode};
use crate::grid::{AbsorptionField, ScatteringData};
use crate::inverse::{invert_series, Regularization};
use crate::C64;

use super::commands::{cmd_invert, radii_table, to_json, InversionSetup};
use super::config::{ExperimentConfig, Phantom};
use super::ExperimentError;

pub const CHECK_NAMES: [&str; 12] = [
    "mu_closed_form",
    "mu_numeric",
    "radii_scaling",
    "forward_oracle",
    "remainder_certificate",
    "operator_norm_lemma",
    "k1_consistency",
    "projector",
    "recursion_second_order",
    "operator_hypothesis_gap",
    "subspace_recovery",
    "determinism",
];

/// `(mu_p + nu_p) ||K1+ phi||_p` for the subspace-recovery phantom.
pub const SUBSPACE_TARGET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelftestScale {
    /// Default desk configuration.
    Desk,
    /// Coarse grid and few boundary points, for fast smoke runs.
    Quick,
}

impl SelftestScale {
    pub fn config(self) -> ExperimentConfig {
        match self {
            SelftestScale::Desk => ExperimentConfig::default(),
            SelftestScale::Quick => ExperimentConfig {
                h: 1.0 / 3.0,
                n_src: 12,
                n_det: 12,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:<24} value {:.6e} accepted [{:.3e}, {:.3e}] ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.lo,
            self.hi,
            self.seconds
        )
    }
}

struct Runner {
    fault: Option<&'static str>,
    results: Vec<CheckResult>,
}

impl Runner {
    fn check<F>(&mut self, name: &'static str, lo: f64, hi: f64, f: F) -> Result<(), ExperimentError>
    where
        F: FnOnce() -> Result<f64, ExperimentError>,
    {
        let start = Instant::now();
        let mut value = f()?;
        if self.fault == Some(name) {
            value = if hi.is_finite() { hi + hi.abs() + 1.0 } else { lo - lo.abs() - 1.0 };
        }
        let passed = value >= lo && value <= hi;
        self.results.push(CheckResult {
            name,
            value,
            lo,
            hi,
            passed,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

fn rel_diff(a: &ScatteringData, b: &ScatteringData) -> f64 {
    (&a.values - &b.values).norm() / b.values.norm()
}

fn max_rel_inf(a: &ScatteringData, b: &ScatteringData) -> f64 {
    let num = a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    num / b.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
        / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>()
}

/// Fitted log-log slope of `R_2` over `ka` in `[10, 100]`, diffuse mode.
pub fn radii_slope(cfg: &ExperimentConfig) -> Result<f64, ExperimentError> {
    let sweep: Vec<f64> = (0..=20).map(|i| 10f64.powf(1.0 + i as f64 / 20.0)).collect();
    let cfg = ExperimentConfig {
        mode: WaveKind::Diffuse,
        ..cfg.clone()
    };
    let rows = radii_table(&cfg, &sweep)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.ka.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.r_2.ln()).collect();
    Ok(slope(&xs, &ys))
}

/// Largest `||K_j(x_1..x_j)||_p / (nu_p mu_p^{j-1} prod ||x_i||_p)` over
/// random real elementary tensors, `j = 1..=max_order`, both endpoints.
pub fn lemma_ratio(
    setup: &InversionSetup,
    samples: usize,
    max_order: usize,
    seed: u64,
) -> Result<f64, ExperimentError> {
    let ops = &setup.ops;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        for j in 1..=max_order {
            let factors: Vec<AbsorptionField> = (0..j)
                .map(|_| {
                    let v: Vec<f64> = (0..ops.num_nodes()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    AbsorptionField::from_real(&v)
                })
                .collect();
            let refs: Vec<&AbsorptionField> = factors.iter().collect();
            let out = apply_k(ops, &refs)?;
            for e in Endpoint::BOTH {
                let p = e.p();
                let mut denom = setup.constants.nu(e) * setup.constants.mu(e).powi(j as i32 - 1);
                for f in &factors {
                    denom *= f.norm(&ops.grid, p)?;
                }
                worst = worst.max(out.norm(&ops.boundary, p)? / denom);
            }
        }
    }
    Ok(worst)
}

/// Scales `shape` so that `(mu_p + nu_p) ||K1+ phi||_p <= target` at both
/// endpoints, halving the amplitude until the direct-solve data comply.
/// Returns the field and its data.
pub fn scale_to_data_condition(
    setup: &InversionSetup,
    shape: &AbsorptionField,
    target: f64,
) -> Result<(AbsorptionField, ScatteringData), ExperimentError> {
    let ops = &setup.ops;
    let mut worst = 0.0f64;
    for e in Endpoint::BOTH {
        let s = setup.constants.mu(e) + setup.constants.nu(e);
        worst = worst.max(s * shape.norm(&ops.grid, e.p())?);
    }
    if worst == 0.0 {
        return Ok((shape.clone(), ScatteringData::zeros(ops.num_sources(), ops.num_detectors())));
    }
    let mut amp = target / worst;
    for _ in 0..60 {
        let eta = shape.scaled(amp);
        let phi = solve_direct(ops, &eta)?;
        let first = setup.kinv.apply(&phi)?;
        let mut ok = true;
        for e in Endpoint::BOTH {
            let s = setup.constants.mu(e) + setup.constants.nu(e);
            ok &= s * first.norm(&ops.grid, e.p())? <= target;
        }
        if ok {
            return Ok((eta, phi));
        }
        amp *= 0.5;
    }
    Err(ExperimentError::Config("could not satisfy the data condition".into()))
}

/// Relative `L^2` errors of the partial sums for a phantom projected onto
/// the retained subspace and scaled to the data condition.
pub fn subspace_recovery_errors(
    setup: &InversionSetup,
    phantom: &Phantom,
    target: f64,
    order: usize,
) -> Result<Vec<f64>, ExperimentError> {
    let ops = &setup.ops;
    let shape = setup.kinv.project(&phantom.render(&ops.grid));
    let (eta, phi) = scale_to_data_condition(setup, &shape, target)?;
    let result = invert_series(&setup.kinv, ops, &phi, order)?;
    let truth = eta.norm(&ops.grid, 2.0)?;
    result
        .partial_sums
        .iter()
        .map(|s| {
            let diff = AbsorptionField {
                values: &eta.values - &s.values,
            };
            Ok(diff.norm(&ops.grid, 2.0)? / truth)
        })
        .collect()
}

pub fn run_selftest(scale: SelftestScale, fault: Option<&str>) -> Result<Vec<CheckResult>, ExperimentError> {
    let fault = match fault {
        None => None,
        Some(f) => Some(
            *CHECK_NAMES
                .iter()
                .find(|&&n| n == f)
                .ok_or_else(|| ExperimentError::UnknownFault(f.to_string()))?,
        ),
    };
    let mut r = Runner {
        fault,
        results: Vec::new(),
    };
    let cfg = scale.config();

    r.check("mu_closed_form", 0.0, 1e-12, || {
        let m = WaveMode::diffuse(1.0)?;
        Ok((mu_closed_form(m, 1.0, Endpoint::Inf) - (1.0 - 2.0 / std::f64::consts::E)).abs())
    })?;
    let h_mu = match scale {
        SelftestScale::Desk => 1.0 / 12.0,
        SelftestScale::Quick => 1.0 / 8.0,
    };
    r.check("mu_numeric", 0.0, 0.05, || {
        let m = WaveMode::diffuse(1.0)?;
        let exact = mu_closed_form(m, 1.0, Endpoint::Inf);
        Ok((mu_numeric_lattice(m, 1.0, h_mu, Endpoint::Inf)? - exact).abs() / exact)
    })?;
    r.check("radii_scaling", -1.65, -1.35, || radii_slope(&cfg))?;

    let setup = InversionSetup::new(&cfg)?;
    let ops = &setup.ops;
    let shape = cfg.phantom.render(&ops.grid);
    let eta = shape.scaled(amplitude_for_contraction(ops, &shape, 0.3)?);
    r.check("forward_oracle", 0.0, 1e-6, || {
        let direct = solve_direct(ops, &eta)?;
        let series = born_sum(ops, &eta, 30)?;
        Ok(max_rel_inf(series.partial_sums.last().expect("30 terms"), &direct))
    })?;
    r.check("remainder_certificate", 0.0, 1.0, || {
        let certs = residual_certificate(ops, &eta, 10)?;
        let mut worst = 0.0f64;
        for c in &certs {
            for row in &c.rows {
                // a missing bound counts as a failure
                worst = worst.max(row.bound.map_or(f64::INFINITY, |b| row.empirical / b));
            }
        }
        Ok(worst)
    })?;
    r.check("operator_norm_lemma", 0.0, 1.0, || lemma_ratio(&setup, 20, 3, 5))?;
    r.check("k1_consistency", 0.0, 1e-12, || {
        Ok(rel_diff(&setup.k1.apply(&eta), &apply_k(ops, &[&eta])?))
    })?;
    r.check("projector", 0.0, 1e-8, || {
        let p = setup.kinv.projector_matrix();
        let idem = (&p * &p - &p).norm() / p.norm();
        let trace: C64 = (0..p.nrows()).map(|i| p[(i, i)]).sum();
        Ok(idem.max((trace.re - setup.kinv.rank as f64).abs() / setup.kinv.rank as f64))
    })?;
    r.check("recursion_second_order", 0.0, 1e-12, || {
        let phi = solve_direct(ops, &eta)?;
        let res = invert_series(&setup.kinv, ops, &phi, 2)?;
        let first = &res.terms[0];
        let expect = setup.kinv.apply(&apply_k(ops, &[first, first])?)?.scaled(-1.0);
        Ok((&res.terms[1].values - &expect.values).norm() / expect.values.norm())
    })?;
    r.check("operator_hypothesis_gap", 1.0, f64::INFINITY, || {
        let c = ConstantSet::numeric(ops)?;
        Ok(Endpoint::BOTH
            .iter()
            .map(|&e| (c.mu(e) + c.nu(e)) * setup.kinv.norm(e))
            .fold(f64::INFINITY, f64::min))
    })?;
    r.check("subspace_recovery", 0.0, 1e-3, || {
        let errs = subspace_recovery_errors(&setup, &cfg.phantom, SUBSPACE_TARGET, 6)?;
        Ok(*errs.last().expect("six orders"))
    })?;
    r.check("determinism", 0.0, 0.0, || {
        let small = ExperimentConfig {
            h: 0.5,
            n_src: 6,
            n_det: 6,
            noise: 0.01,
            seed: Some(1),
            regularization: Regularization::RelativeCutoff(1e-2),
            ..Default::default()
        };
        let a = to_json(&cmd_invert(&small)?)?;
        let b = to_json(&cmd_invert(&small)?)?;
        Ok(if a == b { 0.0 } else { 1.0 })
    })?;
    Ok(r.results)
}
