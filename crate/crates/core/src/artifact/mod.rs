//! MR acquisition artifact simulators.
//!
//! Every operator maps a clean image to a corrupted one deterministically
//! given its seed. Each module exposes a sampling entry point (`apply_*`)
//! and a deterministic core that takes the sampled values explicitly, which
//! is what the exact-value tests drive.

pub mod bias;
pub mod ghosting;
pub mod motion;
pub mod rician;
pub mod spike;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use bias::{apply_bias_field, BiasPolynomial};
pub use ghosting::{apply_ghosting, GhostAxis};
pub use motion::{apply_rigid_motion, RigidTransform};
pub use rician::apply_rician;
pub use spike::apply_spike;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Spike,
    Rician,
    BiasField,
    Ghosting,
    RigidMotion,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Spike,
        ArtifactKind::Rician,
        ArtifactKind::BiasField,
        ArtifactKind::Ghosting,
        ArtifactKind::RigidMotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Spike => "spike",
            ArtifactKind::Rician => "rician",
            ArtifactKind::BiasField => "bias_field",
            ArtifactKind::Ghosting => "ghosting",
            ArtifactKind::RigidMotion => "rigid_motion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown artifact kind {s:?}")))
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_max_spikes() -> usize {
    3
}
fn default_order() -> usize {
    3
}
fn default_num_ghosts() -> usize {
    7
}
fn default_movements() -> usize {
    2
}

/// Kind-specific parameters. Serialized with an inline `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArtifactParams {
    Spike {
        /// Spike magnitude as a multiple of the spectrum maximum.
        intensity: f64,
        #[serde(default = "default_max_spikes")]
        max_spikes: usize,
    },
    Rician {
        snr: f64,
    },
    BiasField {
        #[serde(default = "default_order")]
        order: usize,
        max_coeff: f64,
    },
    Ghosting {
        #[serde(default = "default_num_ghosts")]
        num_ghosts: usize,
        strength: f64,
        #[serde(default)]
        axis: GhostAxis,
    },
    RigidMotion {
        translation_mm: f64,
        rotation_deg: f64,
        #[serde(default = "default_movements")]
        num_movements: usize,
    },
}

impl ArtifactParams {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            ArtifactParams::Spike { .. } => ArtifactKind::Spike,
            ArtifactParams::Rician { .. } => ArtifactKind::Rician,
            ArtifactParams::BiasField { .. } => ArtifactKind::BiasField,
            ArtifactParams::Ghosting { .. } => ArtifactKind::Ghosting,
            ArtifactParams::RigidMotion { .. } => ArtifactKind::RigidMotion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        match *self {
            ArtifactParams::Spike {
                intensity,
                max_spikes,
            } => {
                if !(intensity > 0.0) {
                    return bad(format!("spike intensity must be > 0, got {intensity}"));
                }
                if max_spikes < 1 {
                    return bad("max_spikes must be >= 1".into());
                }
            }
            ArtifactParams::Rician { snr } => {
                if !(snr > 0.0) {
                    return bad(format!("snr must be > 0, got {snr}"));
                }
            }
            ArtifactParams::BiasField { order, max_coeff } => {
                if order < 1 {
                    return bad("bias field order must be >= 1".into());
                }
                if !(max_coeff >= 0.0) {
                    return bad(format!("max_coeff must be >= 0, got {max_coeff}"));
                }
            }
            ArtifactParams::Ghosting {
                num_ghosts,
                strength,
                ..
            } => {
                if num_ghosts < 2 {
                    return bad(format!("num_ghosts must be >= 2, got {num_ghosts}"));
                }
                if !(strength >= 0.0) {
                    return bad(format!("ghost strength must be >= 0, got {strength}"));
                }
            }
            ArtifactParams::RigidMotion {
                translation_mm,
                rotation_deg,
                num_movements,
            } => {
                if !(translation_mm >= 0.0) || !(rotation_deg >= 0.0) {
                    return bad("motion ranges must be >= 0".into());
                }
                if num_movements < 1 {
                    return bad("num_movements must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Scalar used to label this setting in reports.
    pub fn level_value(&self) -> f64 {
        match *self {
            ArtifactParams::Spike { intensity, .. } => intensity,
            ArtifactParams::Rician { snr } => snr,
            ArtifactParams::BiasField { max_coeff, .. } => max_coeff,
            ArtifactParams::Ghosting { strength, .. } => strength,
            ArtifactParams::RigidMotion { translation_mm, .. } => translation_mm / 2.0,
        }
    }

    /// Applies the operator with a stream seeded from `seed`.
    pub fn apply(&self, x: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
        let mut rng = Rng::new(seed);
        match *self {
            ArtifactParams::Spike {
                intensity,
                max_spikes,
            } => apply_spike(x, intensity, max_spikes, &mut rng),
            ArtifactParams::Rician { snr } => apply_rician(x, snr, &mut rng),
            ArtifactParams::BiasField { order, max_coeff } => {
                apply_bias_field(x, order, max_coeff, &mut rng)
            }
            ArtifactParams::Ghosting {
                num_ghosts,
                strength,
                axis,
            } => apply_ghosting(x, num_ghosts, strength, axis, &mut rng),
            ArtifactParams::RigidMotion {
                translation_mm,
                rotation_deg,
                num_movements,
            } => apply_rigid_motion(x, translation_mm, rotation_deg, num_movements, &mut rng),
        }
    }
}

/// One corruption: parameters plus the seed that drives its sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    #[serde(flatten)]
    pub params: ArtifactParams,
    #[serde(default)]
    pub seed: u64,
}

impl ArtifactSpec {
    pub fn new(params: ArtifactParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, seed })
    }

    pub fn kind(&self) -> ArtifactKind {
        self.params.kind()
    }

    pub fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.params.validate()?;
        self.params.apply(x, self.seed)
    }

    /// Seed used for the `index`-th image of a dataset corrupted by this spec.
    pub fn item_seed(&self, index: u64) -> u64 {
        Rng::new(self.seed).child_seed(index)
    }

    /// Applies this spec to the `index`-th image of a dataset.
    pub fn apply_indexed(&self, x: &Tensor<f64>, index: u64) -> Result<Tensor<f64>> {
        self.params.validate()?;
        self.params.apply(x, self.item_seed(index))
    }
}

/// Applies `specs` in order. An empty list is the identity.
pub fn compose(specs: &[ArtifactSpec], x: &Tensor<f64>) -> Result<Tensor<f64>> {
    specs.iter().try_fold(x.clone(), |acc, s| s.apply(&acc))
}

/// [`compose`] for the `index`-th item of a dataset.
pub fn compose_indexed(specs: &[ArtifactSpec], x: &Tensor<f64>, index: u64) -> Result<Tensor<f64>> {
    specs
        .iter()
        .try_fold(x.clone(), |acc, s| s.apply_indexed(&acc, index))
}

/// Ordered severity levels for one artifact kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGrid {
    pub kind: ArtifactKind,
    pub levels: Vec<ArtifactParams>,
}

const STRENGTHS: [f64; 5] = [0.5, 0.7, 1.0, 1.5, 2.0];

impl IntensityGrid {
    /// The five standard levels for `kind`, mildest first.
    ///
    /// Spike, bias and ghosting sweep 0.5, 0.7, 1.0, 1.5, 2.0; Rician sweeps
    /// SNR 50, 20, 10, 5, 4; motion level ℓ pairs `2ℓ` mm with `5ℓ`°.
    pub fn standard(kind: ArtifactKind) -> Self {
        let levels = match kind {
            ArtifactKind::Spike => STRENGTHS
                .iter()
                .map(|&d| ArtifactParams::Spike {
                    intensity: d,
                    max_spikes: default_max_spikes(),
                })
                .collect(),
            ArtifactKind::Rician => [50.0, 20.0, 10.0, 5.0, 4.0]
                .iter()
                .map(|&snr| ArtifactParams::Rician { snr })
                .collect(),
            ArtifactKind::BiasField => STRENGTHS
                .iter()
                .map(|&c| ArtifactParams::BiasField {
                    order: 3,
                    max_coeff: c,
                })
                .collect(),
            ArtifactKind::Ghosting => STRENGTHS
                .iter()
                .map(|&d| ArtifactParams::Ghosting {
                    num_ghosts: 7,
                    strength: d,
                    axis: GhostAxis::Random,
                })
                .collect(),
            ArtifactKind::RigidMotion => (1..=5)
                .map(|l| ArtifactParams::RigidMotion {
                    translation_mm: 2.0 * l as f64,
                    rotation_deg: 5.0 * l as f64,
                    num_movements: default_movements(),
                })
                .collect(),
        };
        Self { kind, levels }
    }

    pub fn highest(&self) -> &ArtifactParams {
        self.levels.last().expect("grid has levels")
    }

    /// Position of `level_value` in this grid, if present.
    pub fn find(&self, level_value: f64) -> Option<usize> {
        self.levels
            .iter()
            .position(|p| (p.level_value() - level_value).abs() < 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(&[24, 24], |_| rng.next_f64())
    }

    #[test]
    fn spec_json_is_flat() {
        let spec = ArtifactSpec::new(ArtifactParams::Rician { snr: 10.0 }, 7).unwrap();
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"kind": "rician", "snr": 10.0, "seed": 7})
        );
        let back: ArtifactSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);

        let g: ArtifactSpec =
            serde_json::from_str(r#"{"kind":"ghosting","strength":1.0,"seed":3}"#).unwrap();
        assert_eq!(
            g.params,
            ArtifactParams::Ghosting {
                num_ghosts: 7,
                strength: 1.0,
                axis: GhostAxis::Random
            }
        );
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ArtifactSpec::new(ArtifactParams::Rician { snr: 0.0 }, 0).is_err());
        assert!(ArtifactSpec::new(
            ArtifactParams::Spike {
                intensity: -1.0,
                max_spikes: 3
            },
            0
        )
        .is_err());
        assert!(ArtifactSpec::new(
            ArtifactParams::Ghosting {
                num_ghosts: 1,
                strength: 1.0,
                axis: GhostAxis::Rows
            },
            0
        )
        .is_err());
    }

    #[test]
    fn compose_empty_is_identity() {
        let x = image(1);
        assert_eq!(compose(&[], &x).unwrap(), x);
    }

    #[test]
    fn compose_matches_sequential_and_is_order_sensitive() {
        let x = image(2);
        let r = ArtifactSpec::new(ArtifactParams::Rician { snr: 10.0 }, 11).unwrap();
        let g = ArtifactSpec::new(
            ArtifactParams::Ghosting {
                num_ghosts: 7,
                strength: 1.0,
                axis: GhostAxis::Random,
            },
            12,
        )
        .unwrap();
        let manual = g.apply(&r.apply(&x).unwrap()).unwrap();
        assert_eq!(compose(&[r.clone(), g.clone()], &x).unwrap(), manual);
        let swapped = compose(&[g, r], &x).unwrap();
        assert!(swapped.max_abs_diff(&manual) > 1e-6);
    }

    #[test]
    fn standard_grids_have_five_levels() {
        for kind in ArtifactKind::ALL {
            let g = IntensityGrid::standard(kind);
            assert_eq!(g.levels.len(), 5);
            assert!(g
                .levels
                .iter()
                .all(|p| p.kind() == kind && p.validate().is_ok()));
        }
        let motion = IntensityGrid::standard(ArtifactKind::RigidMotion);
        assert_eq!(
            motion.levels[4],
            ArtifactParams::RigidMotion {
                translation_mm: 10.0,
                rotation_deg: 25.0,
                num_movements: 2
            }
        );
    }

    #[test]
    fn outputs_are_nonnegative_and_same_shape() {
        let x = image(3);
        for kind in ArtifactKind::ALL {
            for (i, p) in IntensityGrid::standard(kind).levels.iter().enumerate() {
                let y = p.apply(&x, i as u64).unwrap();
                assert_eq!(y.dims(), x.dims());
                assert!(y.min() >= 0.0, "{kind} level {i}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = image(4);
        for kind in ArtifactKind::ALL {
            let p = IntensityGrid::standard(kind).levels[2].clone();
            let a = p.apply(&x, 99).unwrap();
            let b = p.apply(&x, 99).unwrap();
            assert_eq!(a.data(), b.data(), "{kind}");
        }
    }
}
