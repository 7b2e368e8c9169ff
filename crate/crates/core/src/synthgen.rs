//! Ground-truth data generation: procedural scenes with exact analytic
//! (color, density) queries, smooth analytic camera motions, and a physical
//! row-by-row rolling-shutter capture simulation. Every acceptance experiment
//! trains against data produced here, so the answers are known exactly.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{row_time, Intrinsics, RsTiming};
use crate::error::{Error, Result};
use crate::field::{FieldQuery, FieldSample};
use crate::io::dataset::{write_dataset, DatasetMeta};
use crate::lie::{exp_se3, Pose, Rotation, Twist};
use crate::renderer::{render_gs_image, render_rows, SamplingConfig};
use crate::trajectory::{TrajectoryKind, TrajectoryModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    /// Gaussian spatial standard deviation.
    pub radius: f64,
    /// Peak density.
    pub amplitude: f64,
    pub color: [f64; 3],
}

/// Scenes with exact closed-form field queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProceduralScene {
    /// Opaque axis-aligned cube; color ramps with position across the cube.
    ColorCube {
        center: [f64; 3],
        half_extent: f64,
        density: f64,
    },
    /// Fronto-parallel textured wall at z = depth: a smooth checkerboard in
    /// (x, y) whose tile edges sit exactly on multiples of `cell`.
    PlaneGrid {
        depth: f64,
        cell: f64,
        /// Width of the linear color transition across tile edges, world units.
        edge_width: f64,
        density: f64,
        color_a: [f64; 3],
        color_b: [f64; 3],
    },
    /// Gaussian density blobs with fixed colors.
    BlobField { blobs: Vec<Blob> },
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl ProceduralScene {
    /// Axis-aligned bounds enclosing everything with non-negligible density.
    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            ProceduralScene::ColorCube {
                center,
                half_extent,
                ..
            } => {
                let c = v3(center);
                let h = Vector3::repeat(*half_extent);
                (c - h, c + h)
            }
            ProceduralScene::PlaneGrid { depth, cell, .. } => (
                Vector3::new(-6.0 * cell, -6.0 * cell, *depth),
                Vector3::new(6.0 * cell, 6.0 * cell, depth + 1.0),
            ),
            ProceduralScene::BlobField { blobs } => {
                let mut min = Vector3::repeat(f64::INFINITY);
                let mut max = Vector3::repeat(f64::NEG_INFINITY);
                for b in blobs {
                    let c = v3(&b.center);
                    let r = Vector3::repeat(3.0 * b.radius);
                    min = min.inf(&(c - r));
                    max = max.sup(&(c + r));
                }
                (min, max)
            }
        }
    }

    /// Bounding-box diagonal; the unit for relative pose noise.
    pub fn extent(&self) -> f64 {
        let (min, max) = self.bbox();
        (max - min).norm()
    }

    /// Smooth square wave in [0,1] with period 2*cell, edges at multiples of
    /// `cell` and a linear transition of width `edge_width` around each edge.
    fn smooth_square(x: f64, cell: f64, edge_width: f64) -> f64 {
        let s = (std::f64::consts::PI * x / cell).sin();
        let ramp = s * cell / (std::f64::consts::PI * edge_width.max(1e-9));
        0.5 * (1.0 + ramp.clamp(-1.0, 1.0))
    }
}

impl FieldQuery for ProceduralScene {
    fn query(&self, p: &Vector3<f64>, _d: &Vector3<f64>) -> FieldSample {
        match self {
            ProceduralScene::ColorCube {
                center,
                half_extent,
                density,
            } => {
                let c = v3(center);
                let rel = p - c;
                if rel.amax() <= *half_extent {
                    FieldSample {
                        color: (rel / (2.0 * half_extent)).add_scalar(0.5),
                        sigma: *density,
                    }
                } else {
                    FieldSample::EMPTY
                }
            }
            ProceduralScene::PlaneGrid {
                depth,
                cell,
                edge_width,
                density,
                color_a,
                color_b,
            } => {
                if p.z < *depth {
                    return FieldSample::EMPTY;
                }
                let a = Self::smooth_square(p.x, *cell, *edge_width);
                let b = Self::smooth_square(p.y, *cell, *edge_width);
                let parity = a + b - 2.0 * a * b; // smooth xor
                FieldSample {
                    color: v3(color_a) + (v3(color_b) - v3(color_a)) * parity,
                    sigma: *density,
                }
            }
            ProceduralScene::BlobField { blobs } => {
                let mut sigma = 0.0;
                let mut color = Vector3::zeros();
                for b in blobs {
                    let d2 = (p - v3(&b.center)).norm_squared();
                    let w = b.amplitude * (-d2 / (2.0 * b.radius * b.radius)).exp();
                    sigma += w;
                    color += w * v3(&b.color);
                }
                if sigma > 1e-12 {
                    color /= sigma;
                }
                FieldSample { color, sigma }
            }
        }
    }
}

/// Smooth analytic camera motions with exact poses at any time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticMotion {
    Static { pose: Pose },
    /// Constant body twist: pose(t) = base * exp(t * rate).
    Screw { base: Pose, rate: Twist },
    /// Sinusoidal shake around a base pose, world-frame offsets:
    /// translation amp*sin(2 pi freq t + phase) per axis, likewise a rotation
    /// vector applied on the left.
    Sinusoid {
        base: Pose,
        trans_amp: [f64; 3],
        trans_freq: [f64; 3],
        trans_phase: [f64; 3],
        rot_amp_deg: [f64; 3],
        rot_freq: [f64; 3],
        rot_phase: [f64; 3],
    },
}

impl AnalyticMotion {
    pub fn pose(&self, t: f64) -> Pose {
        match self {
            AnalyticMotion::Static { pose } => *pose,
            AnalyticMotion::Screw { base, rate } => base.compose(&exp_se3(&rate.scaled(t))),
            AnalyticMotion::Sinusoid {
                base,
                trans_amp,
                trans_freq,
                trans_phase,
                rot_amp_deg,
                rot_freq,
                rot_phase,
            } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut offset = Vector3::zeros();
                let mut rotvec = Vector3::zeros();
                for a in 0..3 {
                    offset[a] = trans_amp[a] * (two_pi * trans_freq[a] * t + trans_phase[a]).sin();
                    rotvec[a] = rot_amp_deg[a].to_radians()
                        * (two_pi * rot_freq[a] * t + rot_phase[a]).sin();
                }
                Pose::new(
                    Rotation::exp(&rotvec).compose(&base.rotation),
                    base.translation + offset,
                )
            }
        }
    }
}

/// Sample ground-truth control knots for a trajectory model of the given
/// kind. For the cumulative cubic spline the knot with index i is sampled at
/// t0 + (i-1)*dt: on constant-twist motions the resulting spline reproduces
/// the motion exactly (the cumulative basis shifts the support by one knot).
pub fn gt_knots(
    kind: TrajectoryKind,
    motion: &AnalyticMotion,
    timing: &RsTiming,
    height: usize,
) -> Result<TrajectoryModel> {
    let frames = timing.frames();
    match kind {
        TrajectoryKind::CubicDep => {
            let dt = timing.frame_interval()?;
            let t0 = timing.frame_starts[0];
            let knots: Vec<Pose> = (0..frames + 3)
                .map(|i| motion.pose(t0 + (i as f64 - 1.0) * dt))
                .collect();
            TrajectoryModel::cubic_dep(knots, t0, dt)
        }
        TrajectoryKind::LinearDep => {
            let dt = timing.frame_interval()?;
            let t0 = timing.frame_starts[0];
            let knots: Vec<Pose> = (0..frames + 1)
                .map(|i| motion.pose(t0 + i as f64 * dt))
                .collect();
            TrajectoryModel::linear_dep(knots, t0, dt)
        }
        TrajectoryKind::CubicNodep | TrajectoryKind::LinearNodep => {
            let span = height as f64 * timing.line_readout;
            if span <= 0.0 {
                return Err(Error::config(
                    "trajectory",
                    "nodep layouts need a positive readout span",
                ));
            }
            let kpf = kind.knots_per_frame();
            let mut knots = Vec::with_capacity(kpf * frames);
            for &start in &timing.frame_starts {
                for i in 0..kpf {
                    let offset = if kind.is_cubic() {
                        (i as f64 - 1.0) * span
                    } else {
                        i as f64 * span
                    };
                    knots.push(motion.pose(start + offset));
                }
            }
            TrajectoryModel::nodep(kind, knots, timing.frame_starts.clone(), span)
        }
    }
}

/// Left-multiply every knot by a random small twist: rotation angle up to
/// `rot_noise_deg` degrees, translation up to `trans_noise_frac * extent`.
pub fn perturb_trajectory(
    knots: &[Pose],
    rot_noise_deg: f64,
    trans_noise_frac: f64,
    extent: f64,
    seed: u64,
) -> Vec<Pose> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha12Rng| loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    };
    knots
        .iter()
        .map(|knot| {
            let omega = unit(&mut rng) * rng.gen_range(0.0..=rot_noise_deg.to_radians().max(0.0));
            let v = unit(&mut rng) * rng.gen_range(0.0..=(trans_noise_frac * extent).max(0.0));
            exp_se3(&Twist::new(omega, v)).compose(knot)
        })
        .collect()
}

/// Full synthetic-capture description, serializable as the `synth` section of
/// a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: ProceduralScene,
    pub motion: AnalyticMotion,
    pub frames: usize,
    pub t0: f64,
    pub frame_interval: f64,
    pub line_readout: f64,
    pub width: usize,
    pub height: usize,
    pub fov_x_deg: f64,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub float_images: bool,
}

impl SynthConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.fov_x_deg)
    }

    pub fn timing(&self) -> RsTiming {
        RsTiming::uniform(self.t0, self.frame_interval, self.frames, self.line_readout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::config("synth.frames", "need at least one frame"));
        }
        if self.frame_interval <= 0.0 {
            return Err(Error::config("synth.frame_interval", "must be > 0"));
        }
        self.intrinsics().validate()?;
        self.timing().validate(self.height)?;
        self.sampling.validate()?;
        Ok(())
    }

    pub fn dataset_meta(&self) -> DatasetMeta {
        let (bbox_min, bbox_max) = self.scene.bbox();
        DatasetMeta {
            intrinsics: self.intrinsics(),
            timing: self.timing(),
            background: self.sampling.background,
            near: self.sampling.near,
            far: self.sampling.far,
            scene_extent: self.scene.extent(),
            bbox_min: bbox_min.into(),
            bbox_max: bbox_max.into(),
            float_images: self.float_images,
        }
    }
}

/// Render the physical rolling-shutter capture: every image row at its exact
/// ground-truth row pose, plus the pixel-aligned global-shutter reference at
/// the frame-start pose. Writes the dataset directory and returns the meta.
pub fn generate_dataset(
    cfg: &SynthConfig,
    dir: &std::path::Path,
    threads: usize,
) -> Result<DatasetMeta> {
    cfg.validate()?;
    let intr = cfg.intrinsics();
    let timing = cfg.timing();
    let meta = cfg.dataset_meta();

    let mut rs_images = Vec::with_capacity(cfg.frames);
    let mut gs_images = Vec::with_capacity(cfg.frames);
    let mut gt_rows = Vec::with_capacity(cfg.frames * cfg.height);
    let mut gt_frames = Vec::with_capacity(cfg.frames);

    for frame in 0..cfg.frames {
        let mut row_poses = Vec::with_capacity(cfg.height);
        for row in 0..cfg.height {
            let t = row_time(&timing, frame, row, cfg.height)?;
            let pose = cfg.motion.pose(t);
            gt_rows.push((t, pose));
            row_poses.push(pose);
        }
        let start = timing.frame_starts[frame];
        let frame_pose = cfg.motion.pose(start);
        gt_frames.push((start, frame_pose));

        let rs = render_rows(&cfg.scene, &intr, &cfg.sampling, row_poses, threads);
        let gs = render_gs_image(&cfg.scene, &frame_pose, &intr, &cfg.sampling, threads);
        // quantize before keeping in memory so the on-disk and in-memory
        // datasets agree bit for bit
        rs_images.push(rs.quantized());
        gs_images.push(gs.quantized());
    }

    write_dataset(dir, &meta, &rs_images, &gs_images, &gt_rows, &gt_frames)?;
    Ok(meta)
}


/// Ready-made scene and capture presets used by the example configs and the
/// verification experiments.
pub mod presets {
    use super::*;

    /// A room of colored density blobs at varying depths; enough parallax
    /// structure to constrain photometric pose optimization.
    pub fn blob_room() -> ProceduralScene {
        ProceduralScene::BlobField {
            blobs: vec![
                Blob { center: [0.0, 0.0, 4.0], radius: 0.34, amplitude: 18.0, color: [0.92, 0.25, 0.20] },
                Blob { center: [-1.1, 0.5, 3.4], radius: 0.27, amplitude: 16.0, color: [0.20, 0.75, 0.95] },
                Blob { center: [1.0, -0.6, 4.5], radius: 0.30, amplitude: 14.0, color: [0.25, 0.90, 0.35] },
                Blob { center: [0.7, 0.8, 3.6], radius: 0.22, amplitude: 20.0, color: [0.95, 0.85, 0.25] },
                Blob { center: [-0.8, -0.9, 4.2], radius: 0.26, amplitude: 15.0, color: [0.80, 0.35, 0.90] },
                Blob { center: [-0.1, 1.1, 4.6], radius: 0.30, amplitude: 12.0, color: [0.95, 0.55, 0.15] },
                Blob { center: [0.2, -1.1, 3.3], radius: 0.21, amplitude: 18.0, color: [0.35, 0.45, 0.95] },
                Blob { center: [1.3, 0.2, 3.9], radius: 0.24, amplitude: 16.0, color: [0.55, 0.95, 0.80] },
                Blob { center: [-1.3, -0.2, 4.7], radius: 0.28, amplitude: 13.0, color: [0.90, 0.90, 0.85] },
                Blob { center: [0.4, 0.1, 5.0], radius: 0.38, amplitude: 10.0, color: [0.45, 0.25, 0.70] },
                Blob { center: [-0.5, 0.4, 3.1], radius: 0.18, amplitude: 22.0, color: [0.98, 0.45, 0.55] },
                Blob { center: [0.9, 1.0, 4.9], radius: 0.33, amplitude: 11.0, color: [0.30, 0.60, 0.30] },
            ],
        }
    }

    /// Smooth handheld-style shake: multi-axis sinusoids in translation and
    /// rotation, non-constant velocity everywhere.
    pub fn handheld_shake() -> AnalyticMotion {
        AnalyticMotion::Sinusoid {
            base: Pose::identity(),
            trans_amp: [0.35, 0.25, 0.15],
            trans_freq: [0.8, 1.3, 1.0],
            trans_phase: [0.0, 1.3, 2.1],
            rot_amp_deg: [2.5, 3.5, 1.5],
            rot_freq: [1.0, 0.7, 1.3],
            rot_phase: [0.7, 0.2, 1.9],
        }
    }

    /// Full capture description for the blob room under handheld shake.
    /// `readout_frac` sets which fraction of the frame interval the full-frame
    /// readout spans.
    pub fn blob_room_capture(
        frames: usize,
        width: usize,
        height: usize,
        readout_frac: f64,
    ) -> SynthConfig {
        let frame_interval = 0.1;
        SynthConfig {
            scene: blob_room(),
            motion: handheld_shake(),
            frames,
            t0: 0.0,
            frame_interval,
            line_readout: readout_frac * frame_interval / height as f64,
            width,
            height,
            fov_x_deg: 50.0,
            sampling: SamplingConfig {
                near: 2.0,
                far: 6.5,
                n_samples: 192,
                stratified: false,
                rng_seed: 0,
                background: [0.0, 0.0, 0.0],
            },
            float_images: false,
        }
    }

    /// Voxel backend matched to the blob room bounds: 48 cells per axis with
    /// a 3-level coarse-to-fine ladder (6 -> 12 -> 24 -> 48 cells).
    pub fn blob_room_field() -> crate::field::FieldBackendConfig {
        crate::field::FieldBackendConfig::Voxel {
            resolution: [49, 49, 49],
            bbox_min: [-2.1, -2.1, 2.2],
            bbox_max: [2.1, 2.1, 5.9],
            sigma_init: 0.02,
            c2f_levels: 3,
        }
    }

    /// Training-time sampling for the blob room.
    pub fn blob_room_sampling(seed: u64) -> SamplingConfig {
        SamplingConfig {
            near: 2.0,
            far: 6.5,
            n_samples: 64,
            stratified: true,
            rng_seed: seed,
            background: [0.0, 0.0, 0.0],
        }
    }
}

/// Edge-localization helpers shared between unit tests and the acceptance
/// suite.
pub mod test_support {
    use crate::renderer::FloatImage;

    fn gray_row(img: &FloatImage, y: usize) -> Vec<f64> {
        (0..img.width)
            .map(|x| {
                let c = img.get(x, y);
                (c.x + c.y + c.z) / 3.0
            })
            .collect()
    }

    /// Subpixel positions where the grayscale crosses 0.5 along a row.
    pub fn edge_positions(row: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for x in 0..row.len() - 1 {
            let (a, b) = (row[x] - 0.5, row[x + 1] - 0.5);
            if a == 0.0 {
                out.push(x as f64 + 0.5); // pixel center itself
            } else if a * b < 0.0 {
                // linear interpolation between pixel centers x+0.5 and x+1.5
                out.push(x as f64 + 0.5 + a / (a - b));
            }
        }
        out
    }

    /// For every row with trackable edges, the difference between the
    /// measured RS edge displacement and the predicted `row * shear_per_row`,
    /// matching each predicted edge with the nearest RS edge.
    pub fn edge_shear_errors(
        gs: &FloatImage,
        rs: &FloatImage,
        shear_per_row: f64,
    ) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for y in 0..gs.height {
            let gs_edges = edge_positions(&gray_row(gs, y));
            let rs_edges = edge_positions(&gray_row(rs, y));
            if gs_edges.is_empty() || rs_edges.is_empty() {
                continue;
            }
            let predicted_shift = -(y as f64) * shear_per_row;
            for ge in &gs_edges {
                let predicted = ge + predicted_shift;
                // skip predictions that leave the image or sit near the border
                if predicted < 2.0 || predicted > gs.width as f64 - 3.0 {
                    continue;
                }
                let nearest = rs_edges
                    .iter()
                    .min_by(|a, b| {
                        (*a - predicted)
                            .abs()
                            .partial_cmp(&(*b - predicted).abs())
                            .unwrap()
                    })
                    .unwrap();
                out.push((y, nearest - predicted));
            }
        }
        out
    }
}
