//! Experiment configuration and phantom rendering.

use std::fmt;
use std::path::PathBuf;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::greens::{WaveKind, WaveMode};
use crate::grid::{dist3, AbsorptionField, Grid, Point};
use crate::inverse::{Regularization, DEFAULT_CUTOFF};

use super::ExperimentError;

/// Norm order in `[2, inf]`. Serialized as a number, or as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOrder(pub f64);

impl NormOrder {
    pub const INF: NormOrder = NormOrder(f64::INFINITY);
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "Inf" => Ok(NormOrder::INF),
            other => other
                .parse::<f64>()
                .map(NormOrder)
                .map_err(|e| format!("bad norm order {other:?}: {e}")),
        }
    }
}

impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = NormOrder;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<NormOrder, E> {
                Ok(NormOrder(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<NormOrder, E> {
                Ok(NormOrder(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<NormOrder, E> {
                Ok(NormOrder(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<NormOrder, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Indicator blob `amplitude * 1{|x - center| <= radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: Point,
    pub radius: f64,
    pub amplitude: f64,
}

impl std::str::FromStr for Blob {
    type Err = String;

    /// `x,y,z,radius,amplitude`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad blob {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        if v.len() != 5 {
            return Err(format!("blob needs x,y,z,radius,amplitude, got {s:?}"));
        }
        Ok(Blob {
            center: [v[0], v[1], v[2]],
            radius: v[3],
            amplitude: v[4],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phantom {
    pub blobs: Vec<Blob>,
    /// Rescale so that `mu_inf ||eta||_inf` equals this value, with `mu_inf`
    /// measured on the assembled kernel.
    pub contraction: Option<f64>,
    /// Replace the rendered field by its projection onto the retained
    /// singular subspace before scaling.
    pub project_to_subspace: bool,
}

impl Default for Phantom {
    fn default() -> Self {
        Self {
            blobs: vec![
                Blob {
                    center: [0.3, 0.0, 0.1],
                    radius: 0.35,
                    amplitude: 1.0,
                },
                Blob {
                    center: [-0.35, 0.2, -0.2],
                    radius: 0.25,
                    amplitude: 0.5,
                },
            ],
            contraction: Some(0.3),
            project_to_subspace: false,
        }
    }
}

impl Phantom {
    pub fn render(&self, grid: &Grid) -> AbsorptionField {
        let values: Vec<f64> = grid
            .centers
            .iter()
            .map(|x| {
                self.blobs
                    .iter()
                    .filter(|b| dist3(x, &b.center) <= b.radius)
                    .map(|b| b.amplitude)
                    .sum()
            })
            .collect();
        AbsorptionField::from_real(&values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: WaveKind,
    pub k: f64,
    pub a: f64,
    pub omega_radius: f64,
    pub h: f64,
    pub n_src: usize,
    pub n_det: usize,
    pub p: NormOrder,
    pub regularization: Regularization,
    pub order: usize,
    pub phantom: Phantom,
    pub noise: f64,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: WaveKind::Diffuse,
            k: 1.0,
            a: 1.0,
            omega_radius: 2.0,
            h: 1.0 / 6.0,
            n_src: 48,
            n_det: 48,
            p: NormOrder(2.0),
            regularization: Regularization::RelativeCutoff(DEFAULT_CUTOFF),
            order: 6,
            phantom: Phantom::default(),
            noise: 0.0,
            seed: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn wave_mode(&self) -> Result<WaveMode, ExperimentError> {
        Ok(WaveMode::new(self.mode, self.k)?)
    }

    /// Checks that do not need the grid; geometric constraints are enforced
    /// again by the builders.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.wave_mode()?;
        if !(self.a > 0.0) || !(self.omega_radius > self.a) {
            return bad(format!(
                "need 0 < a < omega_radius, got a = {}, omega_radius = {}",
                self.a, self.omega_radius
            ));
        }
        if !(self.p.0 >= 2.0) {
            return bad(format!("norm order p = {} is outside [2, inf]", self.p));
        }
        if self.order == 0 {
            return bad("series order must be at least 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise amplitude {} must be finite and nonnegative", self.noise));
        }
        if self.noise > 0.0 && self.seed.is_none() {
            return bad("a seed is required when noise > 0".into());
        }
        for b in &self.phantom.blobs {
            if !(b.radius > 0.0) || !b.amplitude.is_finite() {
                return bad(format!("invalid blob {b:?}"));
            }
        }
        if let Some(c) = self.phantom.contraction {
            if !(c >= 0.0 && c.is_finite()) {
                return bad(format!("phantom contraction {c} must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}
