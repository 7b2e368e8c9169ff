//! Single-file JSON run configuration shared by all CLI commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldBackendConfig;
use crate::renderer::SamplingConfig;
use crate::synthgen::SynthConfig;
use crate::train::{InitConfig, TrainConfig};
use crate::trajectory::TrajectoryKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset directory (required by train; written by synth).
    pub dataset: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_trajectory")]
    pub trajectory: TrajectoryKind,
    pub field: FieldBackendConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub init: InitConfig,
    /// Train against the dataset's float (PFM) images when available,
    /// bypassing 8-bit quantization.
    #[serde(default)]
    pub use_float_images: bool,
    /// Present when this config also describes a synthetic capture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

fn default_threads() -> usize {
    1
}

fn default_trajectory() -> TrajectoryKind {
    TrajectoryKind::CubicDep
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.train.validate()?;
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        if let FieldBackendConfig::Voxel {
            resolution,
            bbox_min,
            bbox_max,
            c2f_levels,
            ..
        } = &self.field
        {
            crate::field::VoxelConfig {
                resolution: *resolution,
                bbox_min: *bbox_min,
                bbox_max: *bbox_max,
                c2f_levels: *c2f_levels,
            }
            .validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{AnalyticMotion, ProceduralScene};

    fn sample_config() -> RunConfig {
        RunConfig {
            dataset: PathBuf::from("data/run1"),
            output: PathBuf::from("out/run1"),
            seed: 42,
            threads: 2,
            trajectory: TrajectoryKind::CubicDep,
            field: FieldBackendConfig::Voxel {
                resolution: [49, 49, 49],
                bbox_min: [-1.5, -1.5, 1.0],
                bbox_max: [1.5, 1.5, 6.0],
                sigma_init: 0.02,
                c2f_levels: 2,
            },
            sampling: SamplingConfig {
                near: 1.0,
                far: 7.0,
                n_samples: 64,
                stratified: true,
                rng_seed: 42,
                background: [0.0, 0.0, 0.0],
            },
            train: TrainConfig::default(),
            init: InitConfig::NoisyGroundTruth {
                rot_noise_deg: 1.0,
                trans_noise_frac: 0.01,
                seed: 9,
            },
            use_float_images: false,
            synth: Some(SynthConfig {
                scene: ProceduralScene::ColorCube {
                    center: [0.0, 0.0, 3.0],
                    half_extent: 1.0,
                    density: 30.0,
                },
                motion: AnalyticMotion::Static {
                    pose: crate::lie::Pose::identity(),
                },
                frames: 4,
                t0: 0.0,
                frame_interval: 0.1,
                line_readout: 1e-4,
                width: 64,
                height: 48,
                fov_x_deg: 50.0,
                sampling: SamplingConfig {
                    near: 1.0,
                    far: 7.0,
                    n_samples: 96,
                    stratified: false,
                    rng_seed: 0,
                    background: [0.0, 0.0, 0.0],
                },
                float_images: false,
            }),
        }
    }

    #[test]
    fn config_file_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let cfg = sample_config();
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
        // and a second write is byte-identical
        let path2 = dir.path().join("run2.json");
        back.save(&path2).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn validation_catches_bad_timing() {
        let mut cfg = sample_config();
        if let Some(s) = cfg.synth.as_mut() {
            s.line_readout = 1.0; // readout * height far exceeds the interval
        }
        let err = cfg.validate().unwrap_err();
        assert!(err.is_config(), "got {err:?}");
    }
}
