//! Emission-absorption volume rendering along camera rays, forward and
//! backward, plus rolling-shutter image assembly: every image row is rendered
//! at the pose interpolated for that row's capture time.
//!
//! Sample depths are frozen during the backward pass, so pose gradients are
//! taken with the sample positions sliding rigidly along the perturbed ray.

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{pixel_ray, row_time, Intrinsics, Ray, RsTiming};
use crate::error::{Error, Result};
use crate::field::{FieldQuery, TrainableField};
use crate::lie::Pose;
use crate::trajectory::TrajectoryModel;

/// Distance credited to the final sample so an opaque last sample still
/// absorbs the ray.
pub const FINAL_DELTA: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    /// One uniform draw per bin when set; bin midpoints otherwise.
    pub stratified: bool,
    pub rng_seed: u64,
    pub background: [f64; 3],
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::config("sampling", "need 0 < near < far"));
        }
        if self.n_samples < 2 {
            return Err(Error::config("sampling.n_samples", "need at least 2 samples"));
        }
        Ok(())
    }

    pub fn background_color(&self) -> Vector3<f64> {
        Vector3::new(self.background[0], self.background[1], self.background[2])
    }
}

/// Per-ray sampling record: depths, segment lengths, field outputs,
/// transmittances (length N+1) and compositing weights.
#[derive(Clone, Debug)]
pub struct RaySamples {
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    pub transmittances: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RaySamples {
    pub fn final_transmittance(&self) -> f64 {
        *self.transmittances.last().unwrap()
    }
}

/// Mixes the config seed with a per-ray key so each ray owns an independent,
/// reproducible RNG stream regardless of evaluation order.
pub fn ray_stream_seed(base: u64, key: u64) -> u64 {
    // splitmix64 over the combined value
    let mut z = base ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key for an image pixel; deliberately frame-independent so zero-readout
/// rolling-shutter renders are bitwise identical to global-shutter ones.
pub fn pixel_key(x: usize, y: usize) -> u64 {
    (y as u64) << 32 | x as u64
}

/// N depths in [near, far]: stratified draws one uniform sample per equal
/// bin from the ray's own seeded stream; deterministic mode uses midpoints.
pub fn sample_depths(cfg: &SamplingConfig, ray_key: u64) -> Vec<f64> {
    let n = cfg.n_samples;
    let bin = (cfg.far - cfg.near) / n as f64;
    if cfg.stratified {
        let mut rng = ChaCha12Rng::seed_from_u64(ray_stream_seed(cfg.rng_seed, ray_key));
        (0..n)
            .map(|i| cfg.near + (i as f64 + rng.gen_range(0.0..1.0)) * bin)
            .collect()
    } else {
        (0..n).map(|i| cfg.near + (i as f64 + 0.5) * bin).collect()
    }
}

/// Pure compositing core over explicit per-sample values (Eqs. of the
/// emission-absorption model): color = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i
/// plus the background weighted by the final transmittance.
pub fn composite(
    depths: &[f64],
    sigmas: &[f64],
    colors: &[Vector3<f64>],
    background: &Vector3<f64>,
) -> (Vector3<f64>, RaySamples) {
    let n = depths.len();
    debug_assert!(n > 0 && sigmas.len() == n && colors.len() == n);
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n - 1 {
        deltas.push(depths[i + 1] - depths[i]);
    }
    deltas.push(FINAL_DELTA);

    let mut transmittances = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n);
    let mut color = Vector3::zeros();
    let mut t = 1.0f64;
    for i in 0..n {
        transmittances.push(t);
        let absorb = (-sigmas[i] * deltas[i]).exp();
        let w = t * (1.0 - absorb);
        weights.push(w);
        color += w * colors[i];
        t *= absorb;
    }
    transmittances.push(t);
    color += t * background;

    (
        color,
        RaySamples {
            depths: depths.to_vec(),
            deltas,
            sigmas: sigmas.to_vec(),
            colors: colors.to_vec(),
            transmittances,
            weights,
        },
    )
}

/// Forward rendering of one ray at fixed depths.
pub fn render_ray_at_depths(
    field: &dyn FieldQuery,
    ray: &Ray,
    depths: &[f64],
    background: &Vector3<f64>,
) -> (Vector3<f64>, RaySamples) {
    let mut sigmas = Vec::with_capacity(depths.len());
    let mut colors = Vec::with_capacity(depths.len());
    for &depth in depths {
        let x = ray.origin + ray.direction * depth;
        let s = field.query(&x, &ray.direction);
        sigmas.push(s.sigma);
        colors.push(s.color);
    }
    composite(depths, &sigmas, &colors, background)
}

/// Forward rendering of one ray; depths drawn according to the config.
pub fn render_ray(
    field: &dyn FieldQuery,
    ray: &Ray,
    cfg: &SamplingConfig,
) -> (Vector3<f64>, RaySamples) {
    let depths = sample_depths(cfg, pixel_key(ray.pixel.0, ray.pixel.1));
    render_ray_at_depths(field, ray, &depths, &cfg.background_color())
}

/// Backward pass for one ray over the samples recorded by the forward pass.
/// Accumulates field-parameter gradients into `grad` and returns the gradient
/// of the loss w.r.t. a left perturbation (omega, v) of the camera pose that
/// generated the ray.
pub fn render_ray_backward(
    field: &dyn TrainableField,
    ray: &Ray,
    samples: &RaySamples,
    background: &Vector3<f64>,
    upstream: &Vector3<f64>,
    grad: &mut [f64],
) -> Vector6<f64> {
    let n = samples.depths.len();

    // suffix_i = sum_{j>i} w_j c_j + T_final * bg, so that
    // d(color)/d(sigma_i) = delta_i (T_{i+1} c_i - suffix_i)
    let mut suffix = samples.final_transmittance() * background;
    let mut d_origin = Vector3::zeros();
    let mut d_direction_arg = Vector3::zeros(); // through the field's view-direction input
    let mut d_dir_from_points = Vector3::zeros();
    for i in (0..n).rev() {
        let up_color = upstream * samples.weights[i];
        let d_sigma_color = samples.transmittances[i + 1] * samples.colors[i] - suffix;
        let up_sigma = samples.deltas[i] * upstream.dot(&d_sigma_color);

        let x = ray.origin + ray.direction * samples.depths[i];
        let input_grads = field.query_backward(&x, &ray.direction, &up_color, up_sigma, grad);

        d_origin += input_grads.d_position;
        d_dir_from_points += input_grads.d_position * samples.depths[i];
        d_direction_arg += input_grads.d_direction;

        suffix += samples.weights[i] * samples.colors[i];
    }

    // left perturbation (omega, v): dX_i = omega x X_i + v and dd = omega x d,
    // with X_i = o + lambda_i d, gives
    //   dL/domega = o x (sum_i g_i) + d x (sum_i lambda_i g_i + g_dir)
    //   dL/dv     = sum_i g_i
    let d_dir_total = d_dir_from_points + d_direction_arg;
    let omega_grad = ray.origin.cross(&d_origin) + ray.direction.cross(&d_dir_total);

    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&omega_grad);
    out.fixed_rows_mut::<3>(3).copy_from(&d_origin);
    out
}

/// Row-major RGB image with f64 channels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    /// Length width * height * 3.
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> FloatImage {
        FloatImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = (y * self.width + x) * 3;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: &Vector3<f64>) {
        let i = (y * self.width + x) * 3;
        self.data[i] = c.x;
        self.data[i + 1] = c.y;
        self.data[i + 2] = c.z;
    }

    /// 8-bit quantization, round-to-nearest after clamping.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> FloatImage {
        FloatImage {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Quantize in place to the 8-bit lattice (what a PNG roundtrip yields).
    pub fn quantized(&self) -> FloatImage {
        FloatImage::from_u8(self.width, self.height, &self.to_u8())
    }
}

/// Render rows [row0, row0+n) of an image, each at its own pose, into the
/// destination row slices.
fn render_row_block(
    field: &dyn FieldQuery,
    intr: &Intrinsics,
    cfg: &SamplingConfig,
    rows: &mut [(usize, Pose, &mut [f64])],
) {
    let bg = cfg.background_color();
    for (y, pose, out) in rows.iter_mut() {
        for x in 0..intr.width {
            let ray = pixel_ray(intr, pose, (x, *y));
            let depths = sample_depths(cfg, pixel_key(x, *y));
            let (color, _) = render_ray_at_depths(field, &ray, &depths, &bg);
            out[x * 3] = color.x;
            out[x * 3 + 1] = color.y;
            out[x * 3 + 2] = color.z;
        }
    }
}

/// Render a full image given one pose per row. `threads` <= 1 runs strictly
/// sequentially; higher values shard rows across scoped threads (results are
/// identical either way: every pixel is an independent computation).
pub fn render_rows(
    field: &dyn FieldQuery,
    intr: &Intrinsics,
    cfg: &SamplingConfig,
    poses: Vec<Pose>,
    threads: usize,
) -> FloatImage {
    debug_assert_eq!(poses.len(), intr.height);
    let mut image = FloatImage::new(intr.width, intr.height);
    let row_len = intr.width * 3;
    let mut tagged: Vec<(usize, Pose, &mut [f64])> = image
        .data
        .chunks_mut(row_len)
        .enumerate()
        .map(|(y, chunk)| (y, poses[y], chunk))
        .collect();

    let workers = threads.max(1).min(intr.height);
    if workers == 1 {
        render_row_block(field, intr, cfg, &mut tagged);
    } else {
        let chunk = intr.height.div_ceil(workers);
        std::thread::scope(|scope| {
            for shard in tagged.chunks_mut(chunk) {
                scope.spawn(|| render_row_block(field, intr, cfg, shard));
            }
        });
    }
    image
}

/// Global-shutter render: a single pose for every row.
pub fn render_gs_image(
    field: &dyn FieldQuery,
    pose: &Pose,
    intr: &Intrinsics,
    cfg: &SamplingConfig,
    threads: usize,
) -> FloatImage {
    render_rows(field, intr, cfg, vec![*pose; intr.height], threads)
}

/// Rolling-shutter render: row i uses the trajectory pose at that row's
/// capture time. Rows are independent.
pub fn render_rs_image(
    field: &dyn FieldQuery,
    traj: &TrajectoryModel,
    intr: &Intrinsics,
    timing: &RsTiming,
    frame: usize,
    cfg: &SamplingConfig,
    threads: usize,
) -> Result<FloatImage> {
    let mut poses = Vec::with_capacity(intr.height);
    for y in 0..intr.height {
        let t = row_time(timing, frame, y, intr.height)?;
        poses.push(traj.query_pose(t)?);
    }
    Ok(render_rows(field, intr, cfg, poses, threads))
}
