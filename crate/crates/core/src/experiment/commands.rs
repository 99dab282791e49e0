//! The `radii`, `forward` and `invert` experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{radii, ConstantSet, Endpoint, Geometry, Radii};
use crate::forward::{amplitude_for_contraction, born_sum, certificate_from, solve_direct, ResidualCertificate};
use crate::greens::{assemble, OperatorSet, WaveKind, WaveMode};
use crate::grid::{build_ball_grid, build_sphere_boundary, lp_norm, AbsorptionField, ScatteringData};
use crate::inverse::{build_k1, diagnostics, invert_series, regularize, Diagnostics, LinearizedOperator, RegularizedInverse};
use crate::C64;

use super::config::ExperimentConfig;
use super::ExperimentError;

/// One row of the radii table. Field order is the CSV column order.
#[derive(Debug, Clone, Serialize)]
pub struct RadiiRow {
    pub ka: f64,
    pub mu_inf: f64,
    pub mu_2: f64,
    pub nu_inf: f64,
    pub nu_2: f64,
    pub forward_radius_inf: f64,
    pub forward_radius_2: f64,
    #[serde(rename = "R_inf")]
    pub r_inf: f64,
    #[serde(rename = "R_2")]
    pub r_2: f64,
    pub mode: WaveKind,
}

/// 31 log-spaced values from 0.1 to 100.
pub fn default_ka_sweep() -> Vec<f64> {
    (0..31).map(|i| 10f64.powf(-1.0 + i as f64 / 10.0)).collect()
}

/// Closed-form constants and radii for each `ka`, with `a` and
/// `omega_radius` from the config and `k = ka / a`.
pub fn radii_table(cfg: &ExperimentConfig, ka_sweep: &[f64]) -> Result<Vec<RadiiRow>, ExperimentError> {
    let geometry = Geometry::new(cfg.a, cfg.omega_radius)?;
    ka_sweep
        .iter()
        .map(|&ka| {
            let mode = WaveMode::new(cfg.mode, ka / cfg.a)?;
            let c = ConstantSet::closed_form(mode, geometry);
            let r_inf = radii(&c, f64::INFINITY)?;
            let r_2 = radii(&c, 2.0)?;
            Ok(RadiiRow {
                ka,
                mu_inf: c.mu_inf,
                mu_2: c.mu_2,
                nu_inf: c.nu_inf,
                nu_2: c.nu_2,
                forward_radius_inf: r_inf.forward,
                forward_radius_2: r_2.forward,
                r_inf: r_inf.inverse,
                r_2: r_2.inverse,
                mode: cfg.mode,
            })
        })
        .collect()
}

pub fn radii_csv(rows: &[RadiiRow]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExperimentError::Output(e.to_string()))
}

pub fn cmd_radii(cfg: &ExperimentConfig, ka_sweep: &[f64]) -> Result<String, ExperimentError> {
    cfg.validate()?;
    if ka_sweep.is_empty() {
        return Err(ExperimentError::Config("empty ka sweep".into()));
    }
    radii_csv(&radii_table(cfg, ka_sweep)?)
}

pub fn build_operators(cfg: &ExperimentConfig) -> Result<OperatorSet, ExperimentError> {
    cfg.validate()?;
    let grid = build_ball_grid(cfg.a, cfg.h)?;
    let boundary = build_sphere_boundary(cfg.omega_radius, cfg.n_src, cfg.n_det)?;
    Ok(assemble(cfg.wave_mode()?, &grid, &boundary)?)
}

/// Renders the phantom, projects it if asked, then applies the contraction
/// scaling. Returns the field and the scale factor applied.
pub fn prepare_phantom(
    cfg: &ExperimentConfig,
    ops: &OperatorSet,
    kinv: Option<&RegularizedInverse>,
) -> Result<(AbsorptionField, f64), ExperimentError> {
    let mut eta = cfg.phantom.render(&ops.grid);
    if cfg.phantom.project_to_subspace {
        let kinv = kinv.ok_or_else(|| {
            ExperimentError::Config("subspace projection needs the regularized inverse".into())
        })?;
        eta = kinv.project(&eta);
    }
    let scale = match cfg.phantom.contraction {
        Some(target) if eta.values.iter().any(|v| v.norm() > 0.0) => {
            amplitude_for_contraction(ops, &eta, target)?
        }
        _ => 1.0,
    };
    Ok((eta.scaled(scale), scale))
}

fn flat_complex(values: &[C64]) -> Vec<[f64; 2]> {
    values.iter().map(|v| [v.re, v.im]).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ForwardReport {
    pub config: ExperimentConfig,
    pub num_nodes: usize,
    pub num_sources: usize,
    pub num_detectors: usize,
    pub constants: ConstantSet,
    pub radii_at_p: Radii,
    pub phantom_scale: f64,
    pub eta_norm_2: f64,
    pub eta_norm_inf: f64,
    pub data_norm_2: f64,
    pub data_norm_inf: f64,
    pub certificates: Vec<ResidualCertificate>,
    pub certificate_applicable: bool,
    pub certificate_holds: bool,
    /// Direct-solve data, column-major `(source, detector)`, as `[re, im]`.
    pub data: Vec<[f64; 2]>,
}

impl ForwardReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.certificate_applicable
    }
}

pub fn cmd_forward(cfg: &ExperimentConfig) -> Result<ForwardReport, ExperimentError> {
    let ops = build_operators(cfg)?;
    let kinv = if cfg.phantom.project_to_subspace {
        Some(regularize(&build_k1(&ops), cfg.regularization)?)
    } else {
        None
    };
    let (eta, phantom_scale) = prepare_phantom(cfg, &ops, kinv.as_ref())?;
    let direct = solve_direct(&ops, &eta)?;
    let series = born_sum(&ops, &eta, cfg.order)?;
    let certificates = certificate_from(&ops, &direct, &series)?;
    let constants = ConstantSet::numeric(&ops)?;
    Ok(ForwardReport {
        config: cfg.clone(),
        num_nodes: ops.num_nodes(),
        num_sources: ops.num_sources(),
        num_detectors: ops.num_detectors(),
        constants,
        radii_at_p: radii(&constants, cfg.p.0)?,
        phantom_scale,
        eta_norm_2: eta.norm(&ops.grid, 2.0)?,
        eta_norm_inf: eta.norm(&ops.grid, f64::INFINITY)?,
        data_norm_2: direct.norm(&ops.boundary, 2.0)?,
        data_norm_inf: direct.norm(&ops.boundary, f64::INFINITY)?,
        certificate_applicable: certificates.iter().all(|c| c.applicable),
        certificate_holds: certificates.iter().all(|c| c.holds()),
        certificates,
        data: flat_complex(direct.as_slice()),
    })
}

/// `phi + noise |phi| u` entrywise, `u` uniform on `[-1, 1]` (real part only
/// for diffuse data, both parts for scalar data), drawn in column-major order.
pub fn add_noise(phi: &ScatteringData, kind: WaveKind, noise: f64, seed: u64) -> ScatteringData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = phi.clone();
    for v in out.values.iter_mut() {
        let scale = noise * v.norm();
        let u = match kind {
            WaveKind::Diffuse => C64::new(rng.random_range(-1.0..=1.0), 0.0),
            WaveKind::Scalar => C64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)),
        };
        *v += u * scale;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRow {
    pub order: usize,
    pub error_p: f64,
    pub error_2: f64,
    pub error_inf: f64,
    pub relative_error_2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvertReport {
    pub config: ExperimentConfig,
    pub num_nodes: usize,
    pub num_sources: usize,
    pub num_detectors: usize,
    pub constants: ConstantSet,
    pub radii_at_p: Radii,
    pub phantom_scale: f64,
    pub rank: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub kinv_norm_2: f64,
    pub kinv_norm_inf: f64,
    pub noise_norm_2: f64,
    pub errors: Vec<ErrorRow>,
    pub diagnostics: Diagnostics,
    /// Final partial sum, as `[re, im]` per node.
    pub reconstruction: Vec<[f64; 2]>,
}

impl InvertReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.diagnostics.hypotheses_hold()
    }
}

/// Everything the inversion needs, built once.
pub struct InversionSetup {
    pub ops: OperatorSet,
    pub k1: LinearizedOperator,
    pub kinv: RegularizedInverse,
    pub constants: ConstantSet,
}

impl InversionSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let ops = build_operators(cfg)?;
        let k1 = build_k1(&ops);
        let kinv = regularize(&k1, cfg.regularization)?;
        let constants = ConstantSet::numeric(&ops)?;
        Ok(Self {
            ops,
            k1,
            kinv,
            constants,
        })
    }
}

pub fn cmd_invert(cfg: &ExperimentConfig) -> Result<InvertReport, ExperimentError> {
    let setup = InversionSetup::new(cfg)?;
    invert_with(cfg, &setup)
}

pub fn invert_with(cfg: &ExperimentConfig, setup: &InversionSetup) -> Result<InvertReport, ExperimentError> {
    let InversionSetup {
        ops,
        k1,
        kinv,
        constants,
    } = setup;
    let (eta_true, phantom_scale) = prepare_phantom(cfg, ops, Some(kinv))?;
    let clean = solve_direct(ops, &eta_true)?;
    let phi = match cfg.seed {
        Some(seed) if cfg.noise > 0.0 => add_noise(&clean, cfg.mode, cfg.noise, seed),
        _ => clean.clone(),
    };
    let noise_norm_2 = ScatteringData {
        values: &phi.values - &clean.values,
    }
    .norm(&ops.boundary, 2.0)?;
    let result = invert_series(kinv, ops, &phi, cfg.order)?;
    let diag = diagnostics(&result, kinv, k1, constants, ops, &phi, Some(&eta_true))?;

    let w = &ops.grid.weights;
    let truth_2 = eta_true.norm(&ops.grid, 2.0)?;
    let errors = result
        .partial_sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let diff: Vec<C64> = eta_true.values.iter().zip(s.values.iter()).map(|(a, b)| a - b).collect();
            let e2 = lp_norm(&diff, w, 2.0)?;
            Ok(ErrorRow {
                order: i + 1,
                error_p: lp_norm(&diff, w, cfg.p.0)?,
                error_2: e2,
                error_inf: lp_norm(&diff, w, f64::INFINITY)?,
                relative_error_2: if truth_2 > 0.0 { e2 / truth_2 } else { e2 },
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let last = result.partial_sums.last().expect("order >= 1");
    Ok(InvertReport {
        config: cfg.clone(),
        num_nodes: ops.num_nodes(),
        num_sources: ops.num_sources(),
        num_detectors: ops.num_detectors(),
        constants: *constants,
        radii_at_p: radii(constants, cfg.p.0)?,
        phantom_scale,
        rank: kinv.rank,
        sigma_max: k1.norm_2(),
        sigma_min: kinv.sigma_min,
        kinv_norm_2: kinv.norm(Endpoint::Two),
        kinv_norm_inf: kinv.norm(Endpoint::Inf),
        noise_norm_2,
        errors,
        diagnostics: diag,
        reconstruction: flat_complex(last.values.as_slice()),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, ExperimentError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::Phantom;
    use crate::inverse::Regularization;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            h: 0.5,
            n_src: 6,
            n_det: 6,
            order: 3,
            regularization: Regularization::RelativeCutoff(1e-2),
            ..Default::default()
        }
    }

    #[test]
    fn radii_csv_header_and_rows() {
        let csv = cmd_radii(&ExperimentConfig::default(), &[1.0, 10.0]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "ka,mu_inf,mu_2,nu_inf,nu_2,forward_radius_inf,forward_radius_2,R_inf,R_2,mode"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 10);
        assert_eq!(first[9], "diffuse");
        let r_inf: f64 = first[7].parse().unwrap();
        assert!((r_inf - 3.734).abs() < 1e-3);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn zero_phantom_gives_zero_data() {
        let cfg = ExperimentConfig {
            phantom: Phantom {
                blobs: vec![],
                ..Default::default()
            },
            ..small()
        };
        let r = cmd_forward(&cfg).unwrap();
        assert!(r.data.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
        assert!(r.certificate_holds);
    }

    #[test]
    fn noncompliant_phantom_still_solves() {
        let cfg = ExperimentConfig {
            phantom: Phantom {
                contraction: Some(1.5),
                ..Default::default()
            },
            ..small()
        };
        let r = cmd_forward(&cfg).unwrap();
        let inf = r.certificates.iter().find(|c| c.p == Endpoint::Inf).unwrap();
        assert!(!inf.applicable);
        assert!((inf.contraction - 1.5).abs() < 1e-12);
        assert!(!r.hypotheses_hold());
        assert!(r.data_norm_inf > 0.0);
    }

    #[test]
    fn noise_is_seeded_and_relative() {
        let phi = ScatteringData::from_flat(2, 2, &[C64::new(1.0, 0.0), C64::new(-2.0, 0.0), C64::new(0.0, 0.0), C64::new(4.0, 0.0)]);
        let a = add_noise(&phi, WaveKind::Diffuse, 0.1, 3);
        let b = add_noise(&phi, WaveKind::Diffuse, 0.1, 3);
        let c = add_noise(&phi, WaveKind::Diffuse, 0.1, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (x, y) in a.values.iter().zip(phi.values.iter()) {
            assert!((x - y).norm() <= 0.1 * y.norm() + 1e-15);
            assert_eq!(x.im, 0.0);
        }
        assert_eq!(a.values[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn invert_report_is_deterministic() {
        let cfg = ExperimentConfig {
            noise: 0.01,
            seed: Some(11),
            ..small()
        };
        let a = to_json(&cmd_invert(&cfg).unwrap()).unwrap();
        let b = to_json(&cmd_invert(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"diagnostics\""));
    }
}
