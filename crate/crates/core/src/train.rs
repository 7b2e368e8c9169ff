//! Joint optimization of field parameters and trajectory knots against the
//! rolling-shutter photometric loss. Each step samples a batch of pixels over
//! all frames/rows/columns, renders each pixel at the pose of its row's
//! capture time, and applies two Adam updates: one on the field parameters
//! and one on per-knot left-perturbation coordinates (so knots stay on the
//! manifold without a global chart).
//!
//! Parallel execution shards the pixel batch over scoped threads with
//! per-shard gradient buffers reduced in shard order, so results are
//! reproducible for a fixed (seed, threads) pair; threads = 1 is the
//! reference single-threaded mode.

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::camera::pixel_ray;
use crate::error::{Error, Result};
use crate::field::TrainableField;
use crate::io::dataset::Dataset;
use crate::io::TrainLogRecord;
use crate::lie::Twist;
use crate::renderer::{
    pixel_key, render_ray_at_depths, render_ray_backward, ray_stream_seed, sample_depths,
    SamplingConfig,
};
use crate::trajectory::TrajectoryModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub pixels_per_step: usize,
    pub lr_field_init: f64,
    pub lr_field_final: f64,
    pub lr_pose_init: f64,
    pub lr_pose_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coarse-to-fine window (start step, end step) for the encoding ramp.
    pub c2f_start: usize,
    pub c2f_end: usize,
    pub seed: u64,
    pub threads: usize,
    /// Baseline mode: treat every row as captured at the frame start.
    #[serde(default)]
    pub ignore_rolling_shutter: bool,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        // desk-scale shrink of the reference protocol (7200 px / 200K steps /
        // window 20K..100K); the full-scale values remain selectable
        TrainConfig {
            steps: 20_000,
            pixels_per_step: 1024,
            lr_field_init: 5e-4,
            lr_field_final: 5e-5,
            lr_pose_init: 1e-3,
            lr_pose_final: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            c2f_start: 2_000,
            c2f_end: 10_000,
            seed: 0,
            threads: 1,
            ignore_rolling_shutter: false,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pixels_per_step == 0 {
            return Err(Error::config("train.pixels_per_step", "must be > 0"));
        }
        for (name, v) in [
            ("train.lr_field_init", self.lr_field_init),
            ("train.lr_field_final", self.lr_field_final),
            ("train.lr_pose_init", self.lr_pose_init),
            ("train.lr_pose_final", self.lr_pose_final),
        ] {
            if v < 0.0 {
                return Err(Error::config(name, "learning rates must be >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta", "betas must be in [0, 1)"));
        }
        if self.c2f_start >= self.c2f_end {
            return Err(Error::config("train.c2f", "need start_step < end_step"));
        }
        if self.steps > 0 && self.c2f_end > self.steps {
            return Err(Error::config(
                "train.c2f",
                "end_step must not exceed the step count",
            ));
        }
        Ok(())
    }
}

/// How the trajectory knots are initialized before optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitConfig {
    /// Ground-truth frame poses from the dataset, each knot perturbed by a
    /// random twist (stand-in for an external pose initializer).
    NoisyGroundTruth {
        rot_noise_deg: f64,
        trans_noise_frac: f64,
        seed: u64,
    },
    /// Every knot at the identity.
    Identity,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::NoisyGroundTruth {
            rot_noise_deg: 1.0,
            trans_noise_frac: 0.01,
            seed: 1,
        }
    }
}

/// Build the initial trajectory for a dataset according to the configured
/// scheme. Ground-truth initialization derives knots from the per-frame poses
/// recorded with the dataset (the stand-in for an external pose initializer),
/// then perturbs every knot; identity initialization ignores the poses.
///
/// Knot placement per kind:
/// - cubic dep: the cumulative basis makes knot i dominant near
///   t0 + (i-1)*dt, so frame poses map to knots shifted by one index, with
///   constant-velocity extrapolation filling one leading and two trailing
///   virtual knots;
/// - linear dep: knots at frame starts plus one trailing virtual knot;
/// - nodep kinds: each frame's group interpolated along the frame-to-frame
///   relative motion across that frame's readout span.
pub fn init_trajectory(
    kind: crate::trajectory::TrajectoryKind,
    dataset: &Dataset,
    init: &InitConfig,
) -> Result<crate::trajectory::TrajectoryModel> {
    use crate::lie::{exp_se3, log_se3, Pose};
    use crate::trajectory::{pad_virtual_knots, TrajectoryKind, TrajectoryModel};

    let timing = &dataset.meta.timing;
    let height = dataset.meta.intrinsics.height;
    let frames = timing.frames();
    let poses: Vec<Pose> = dataset.gt_frames.iter().map(|(_, p)| *p).collect();
    if poses.len() != frames {
        return Err(Error::config(
            "dataset.traj_gt_frames",
            format!("expected {frames} frame poses, got {}", poses.len()),
        ));
    }
    let span = height as f64 * timing.line_readout;

    let gt_knots: Vec<Pose> = match kind {
        TrajectoryKind::CubicDep => {
            let mut knots = Vec::with_capacity(frames + 3);
            if frames == 1 {
                knots.extend(std::iter::repeat(poses[0]).take(4));
            } else {
                // backward extrapolation for the leading knot
                let back_step = poses[1].inverse().compose(&poses[0]);
                knots.push(poses[0].compose(&back_step));
                knots.extend_from_slice(&poses);
                knots = pad_virtual_knots(&knots, 2);
            }
            knots
        }
        TrajectoryKind::LinearDep => {
            if frames == 1 {
                vec![poses[0]; 2]
            } else {
                pad_virtual_knots(&poses, 1)
            }
        }
        TrajectoryKind::CubicNodep | TrajectoryKind::LinearNodep => {
            let dt = if frames > 1 {
                timing.frame_interval()?
            } else {
                span.max(1e-9)
            };
            let kpf = kind.knots_per_frame();
            let mut knots = Vec::with_capacity(kpf * frames);
            for m in 0..frames {
                // per-frame velocity from the neighboring frame interval
                let rel = if m + 1 < frames {
                    log_se3(&poses[m].inverse().compose(&poses[m + 1]))?
                } else if frames > 1 {
                    log_se3(&poses[m - 1].inverse().compose(&poses[m]))?
                } else {
                    crate::lie::Twist::zero()
                };
                for i in 0..kpf {
                    let offset = if kind.is_cubic() {
                        i as f64 - 1.0
                    } else {
                        i as f64
                    };
                    let frac = offset * span / dt;
                    knots.push(poses[m].compose(&exp_se3(&rel.scaled(frac))));
                }
            }
            knots
        }
    };

    let knots = match init {
        InitConfig::Identity => vec![Pose::identity(); gt_knots.len()],
        InitConfig::NoisyGroundTruth {
            rot_noise_deg,
            trans_noise_frac,
            seed,
        } => crate::synthgen::perturb_trajectory(
            &gt_knots,
            *rot_noise_deg,
            *trans_noise_frac,
            dataset.meta.scene_extent,
            *seed,
        ),
    };

    let dt = if frames > 1 {
        timing.frame_interval()?
    } else {
        span.max(1.0)
    };
    match kind {
        TrajectoryKind::CubicDep => TrajectoryModel::cubic_dep(knots, timing.frame_starts[0], dt),
        TrajectoryKind::LinearDep => {
            TrajectoryModel::linear_dep(knots, timing.frame_starts[0], dt)
        }
        kind => TrajectoryModel::nodep(kind, knots, timing.frame_starts.clone(), span),
    }
}

/// Adam moment buffers; betas and epsilon ride along so the update needs only
/// a learning rate.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<()> {
    if params.len() != state.len() {
        return Err(Error::ShapeMismatch {
            what: "adam parameters",
            got: params.len(),
            expected: state.len(),
        });
    }
    if grads.len() != state.len() {
        return Err(Error::ShapeMismatch {
            what: "adam gradients",
            got: grads.len(),
            expected: state.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    adam_kernel(
        &mut state.m,
        &mut state.v,
        params,
        grads,
        state.beta1,
        state.beta2,
        state.eps,
        bc1,
        bc2,
        lr,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn adam_kernel(
    m: &mut [f64],
    v: &mut [f64],
    params: &mut [f64],
    grads: &[f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
) {
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Sum per-shard gradient buffers (in shard order, so the arithmetic matches
/// the serial reduction) and apply the Adam update, partitioned over worker
/// threads by parameter range. Each range sees the same per-coordinate math
/// as `adam_step`, so results are independent of the partitioning.
fn fused_reduce_adam(
    state: &mut AdamState,
    params: &mut [f64],
    shard_grads: &[Vec<f64>],
    scratch: &mut [f64],
    lr: f64,
    threads: usize,
) {
    debug_assert_eq!(params.len(), state.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let n = params.len();
    let workers = threads.max(1).min(n.max(1));
    let chunk = n.div_ceil(workers);
    let (beta1, beta2, eps) = (state.beta1, state.beta2, state.eps);

    if workers == 1 {
        for i in 0..n {
            let mut g = 0.0;
            for shard in shard_grads {
                g += shard[i];
            }
            scratch[i] = g;
        }
        adam_kernel(
            &mut state.m,
            &mut state.v,
            params,
            &scratch[..n],
            beta1,
            beta2,
            eps,
            bc1,
            bc2,
            lr,
        );
        return;
    }

    std::thread::scope(|scope| {
        let m_chunks = state.m.chunks_mut(chunk);
        let v_chunks = state.v.chunks_mut(chunk);
        let p_chunks = params.chunks_mut(chunk);
        let s_chunks = scratch.chunks_mut(chunk);
        for (((idx, m), (v, p)), s) in m_chunks
            .enumerate()
            .zip(v_chunks.zip(p_chunks))
            .zip(s_chunks)
        {
            let start = idx * chunk;
            scope.spawn(move || {
                let len = m.len();
                for i in 0..len {
                    let mut g = 0.0;
                    for shard in shard_grads {
                        g += shard[start + i];
                    }
                    s[i] = g;
                }
                adam_kernel(m, v, p, &s[..len], beta1, beta2, eps, bc1, bc2, lr);
            });
        }
    });
}

/// Exponential decay from lr_init to lr_final across the run.
pub fn lr_schedule(step: usize, total_steps: usize, lr_init: f64, lr_final: f64) -> f64 {
    if lr_init <= 0.0 {
        return 0.0;
    }
    if total_steps == 0 {
        return lr_init;
    }
    let frac = (step as f64 / total_steps as f64).clamp(0.0, 1.0);
    lr_init * (lr_final / lr_init).powf(frac)
}

/// Coarse-to-fine progress: 0 before the window, L after it, linear inside.
pub fn c2f_alpha(step: usize, window: (usize, usize), l: f64) -> f64 {
    let (start, end) = window;
    if step <= start {
        0.0
    } else if step >= end {
        l
    } else {
        l * (step - start) as f64 / (end - start) as f64
    }
}

/// Mean squared error over the batch (pixels x channels) and the per-pixel
/// upstream gradients d(loss)/d(rendered).
pub fn photometric_loss(
    rendered: &[Vector3<f64>],
    observed: &[Vector3<f64>],
) -> (f64, Vec<Vector3<f64>>) {
    assert_eq!(rendered.len(), observed.len());
    let n = rendered.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(rendered.len());
    for (r, o) in rendered.iter().zip(observed) {
        let diff = r - o;
        loss += diff.norm_squared();
        grads.push(diff * (2.0 / (3.0 * n)));
    }
    (loss / (3.0 * n), grads)
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub log: Vec<TrainLogRecord>,
}

struct PixelJob {
    frame: usize,
    x: usize,
    y: usize,
    time: f64,
    depth_seed: u64,
}

/// Process one shard of the pixel batch, accumulating into the caller's
/// (pre-zeroed) gradient buffers. Returns the shard's squared-error sum.
fn run_shard(
    field: &dyn TrainableField,
    traj: &TrajectoryModel,
    dataset: &Dataset,
    sampling: &SamplingConfig,
    jobs: &[PixelJob],
    batch_size: usize,
    field_grad: &mut [f64],
    knot_grad: &mut [f64],
) -> Result<f64> {
    let bg = sampling.background_color();
    let intr = &dataset.meta.intrinsics;
    let mut loss_sum = 0.0;
    let upstream_scale = 2.0 / (3.0 * batch_size as f64);

    for job in jobs {
        let (pose, jacobians) = traj.query_pose_with_jacobians(job.time)?;
        let ray = pixel_ray(intr, &pose, (job.x, job.y));
        let depths = sample_depths(
            &SamplingConfig {
                rng_seed: job.depth_seed,
                ..*sampling
            },
            pixel_key(job.x, job.y),
        );
        let (rendered, samples) = render_ray_at_depths(field, &ray, &depths, &bg);
        let observed = dataset.rs[job.frame].get(job.x, job.y);
        let diff = rendered - observed;
        loss_sum += diff.norm_squared();

        let upstream = diff * upstream_scale;
        let pose_grad: Vector6<f64> =
            render_ray_backward(field, &ray, &samples, &bg, &upstream, field_grad);
        for kj in &jacobians {
            let contribution = kj.jacobian.transpose() * pose_grad;
            let base = kj.knot * 6;
            for c in 0..6 {
                knot_grad[base + c] += contribution[c];
            }
        }
    }
    Ok(loss_sum)
}

/// Run the joint optimization. The trajectory must support every row time of
/// the dataset (after `ignore_rolling_shutter` remapping, when set).
pub fn train(
    dataset: &Dataset,
    field: &mut dyn TrainableField,
    traj: &mut TrajectoryModel,
    cfg: &TrainConfig,
    sampling: &SamplingConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    sampling.validate()?;
    let intr = dataset.meta.intrinsics;
    let frames = dataset.frames();
    if frames == 0 {
        return Err(Error::config("dataset", "dataset has no frames"));
    }
    let timing = &dataset.meta.timing;

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut field_adam = AdamState::new(field.param_count(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut pose_adam = AdamState::new(traj.knot_count() * 6, cfg.beta1, cfg.beta2, cfg.eps);
    let mut loss_history = Vec::with_capacity(cfg.steps);
    let mut log = Vec::new();
    let alpha_max = field.c2f_max_alpha();

    // persistent per-worker buffers, re-zeroed inside the workers each step
    let workers = cfg.threads.max(1).min(cfg.pixels_per_step.max(1));
    let mut shard_field_grads: Vec<Vec<f64>> =
        vec![vec![0.0; field.param_count()]; workers];
    let mut shard_knot_grads: Vec<Vec<f64>> = vec![vec![0.0; traj.knot_count() * 6]; workers];
    let mut field_scratch = vec![0.0; field.param_count()];
    let mut jobs: Vec<PixelJob> = Vec::with_capacity(cfg.pixels_per_step);

    for step in 0..cfg.steps {
        let alpha = c2f_alpha(step, (cfg.c2f_start, cfg.c2f_end), alpha_max);
        field.set_c2f_alpha(alpha);
        if field.param_count() != field_adam.len() {
            // the backend grew (coarse-to-fine ladder): fresh moments and
            // buffers at the new size
            field_adam = AdamState::new(field.param_count(), cfg.beta1, cfg.beta2, cfg.eps);
            shard_field_grads = vec![vec![0.0; field.param_count()]; workers];
            field_scratch = vec![0.0; field.param_count()];
        }

        // draw the whole batch up front from the master stream so the pixel
        // sequence does not depend on the thread count
        jobs.clear();
        for i in 0..cfg.pixels_per_step {
            let frame = rng.gen_range(0..frames);
            let x = rng.gen_range(0..intr.width);
            let y = rng.gen_range(0..intr.height);
            let row = if cfg.ignore_rolling_shutter { 0 } else { y };
            let time = timing.frame_starts[frame] + row as f64 * timing.line_readout;
            jobs.push(PixelJob {
                frame,
                x,
                y,
                time,
                depth_seed: ray_stream_seed(cfg.seed, (step as u64) << 24 | i as u64),
            });
        }

        let chunk = jobs.len().div_ceil(workers);
        let loss_sums: Vec<Result<f64>> = if workers == 1 {
            shard_field_grads[0].fill(0.0);
            shard_knot_grads[0].fill(0.0);
            vec![run_shard(
                field,
                traj,
                dataset,
                sampling,
                &jobs,
                cfg.pixels_per_step,
                &mut shard_field_grads[0],
                &mut shard_knot_grads[0],
            )]
        } else {
            let field_ref: &dyn TrainableField = field;
            let traj_ref: &TrajectoryModel = traj;
            let job_slices = jobs.chunks(chunk);
            std::thread::scope(|scope| {
                let handles: Vec<_> = job_slices
                    .zip(shard_field_grads.iter_mut())
                    .zip(shard_knot_grads.iter_mut())
                    .map(|((shard, fg), kg)| {
                        scope.spawn(move || {
                            fg.fill(0.0);
                            kg.fill(0.0);
                            run_shard(
                                field_ref,
                                traj_ref,
                                dataset,
                                sampling,
                                shard,
                                cfg.pixels_per_step,
                                fg,
                                kg,
                            )
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            })
        };

        let used_shards = loss_sums.len();
        let mut loss_sum = 0.0;
        for result in loss_sums {
            loss_sum += result?;
        }
        let loss = loss_sum / (3.0 * cfg.pixels_per_step as f64);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        loss_history.push(loss);

        let lr_field = lr_schedule(step, cfg.steps, cfg.lr_field_init, cfg.lr_field_final);
        let lr_pose = lr_schedule(step, cfg.steps, cfg.lr_pose_init, cfg.lr_pose_final);

        fused_reduce_adam(
            &mut field_adam,
            field.params_mut(),
            &shard_field_grads[..used_shards],
            &mut field_scratch,
            lr_field,
            workers,
        );

        // the pose update lives in the left chart at the current knots:
        // Adam produces a step from zero, applied as knot <- exp(step) * knot
        let mut knot_grad = vec![0.0; traj.knot_count() * 6];
        for shard in &shard_knot_grads[..used_shards] {
            for (a, b) in knot_grad.iter_mut().zip(shard) {
                *a += b;
            }
        }
        let mut pose_delta = vec![0.0; knot_grad.len()];
        adam_step(&mut pose_adam, &mut pose_delta, &knot_grad, lr_pose)?;
        let updates: Vec<Twist> = pose_delta
            .chunks_exact(6)
            .map(|c| {
                Twist::new(
                    Vector3::new(c[0], c[1], c[2]),
                    Vector3::new(c[3], c[4], c[5]),
                )
            })
            .collect();
        traj.apply_left_updates(&updates);

        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log.push(TrainLogRecord {
                step,
                loss,
                lr_field,
                lr_pose,
                alpha,
            });
        }
    }

    Ok(TrainReport { loss_history, log })
}
