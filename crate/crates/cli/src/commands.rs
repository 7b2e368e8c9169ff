//! The four pipeline commands. Each takes a validated configuration, runs the
//! corresponding core machinery, and writes its outputs under the configured
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use rsfield_core::camera::row_time;
use rsfield_core::error::{Error, Result};
use rsfield_core::io::dataset::{list_images, Dataset};
use rsfield_core::io::{
    load_checkpoint, read_png, save_checkpoint, write_png, write_train_log, write_tum, Checkpoint,
    RunConfig,
};
use rsfield_core::metrics::{ate, psnr, rpe_rot, ssim, Alignment};
use rsfield_core::renderer::render_gs_image;
use rsfield_core::synthgen::generate_dataset;
use rsfield_core::train::{init_trajectory, train};
use rsfield_core::io::tum::read_tum;

/// Generate a synthetic dataset into the config's dataset directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let synth = cfg.synth.as_ref().ok_or_else(|| {
        Error::config("synth", "config has no synth section; nothing to generate")
    })?;
    let meta = generate_dataset(synth, &cfg.dataset, cfg.threads)?;
    println!(
        "wrote {} frames of {}x{} (readout {:.1} us/row) to {}",
        synth.frames,
        meta.intrinsics.width,
        meta.intrinsics.height,
        meta.timing.line_readout * 1e6,
        cfg.dataset.display()
    );
    Ok(cfg.dataset.clone())
}

/// Joint optimization: writes checkpoint.ckpt, traj_est.txt (frame starts),
/// traj_est_rows.txt (every row time), and train_log.jsonl.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.dataset, cfg.use_float_images)?;
    let mut field = cfg.field.build(cfg.seed)?;
    let mut traj = init_trajectory(cfg.trajectory, &dataset, &cfg.init)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    train_cfg.threads = cfg.threads;

    let report = train(
        &dataset,
        field.as_trainable_mut(),
        &mut traj,
        &train_cfg,
        &cfg.sampling,
    )?;

    fs::create_dir_all(&cfg.output)?;
    let ckpt = Checkpoint {
        field,
        trajectory: traj,
        intrinsics: dataset.meta.intrinsics,
        timing: dataset.meta.timing.clone(),
        sampling: cfg.sampling,
    };
    save_checkpoint(&cfg.output.join("checkpoint.ckpt"), &ckpt)?;

    let timing = &ckpt.timing;
    let frame_samples: Result<Vec<(f64, _)>> = timing
        .frame_starts
        .iter()
        .map(|&t| Ok((t, ckpt.trajectory.query_pose(t)?)))
        .collect();
    write_tum(&cfg.output.join("traj_est.txt"), &frame_samples?)?;

    let height = ckpt.intrinsics.height;
    let mut row_samples = Vec::with_capacity(timing.frames() * height);
    for frame in 0..timing.frames() {
        for row in 0..height {
            let t = row_time(timing, frame, row, height)?;
            row_samples.push((t, ckpt.trajectory.query_pose(t)?));
        }
    }
    write_tum(&cfg.output.join("traj_est_rows.txt"), &row_samples)?;
    write_train_log(&cfg.output.join("train_log.jsonl"), &report.log)?;

    if let Some(last) = report.loss_history.last() {
        println!(
            "trained {} steps, final loss {:.3e}; outputs in {}",
            report.loss_history.len(),
            last,
            cfg.output.display()
        );
    } else {
        println!("0 steps requested; wrote initialization to {}", cfg.output.display());
    }
    Ok(cfg.output.clone())
}

#[derive(Clone, Debug)]
pub struct RenderArgs {
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    /// Explicit query times (seconds).
    pub times: Vec<f64>,
    /// Expand to uniform times across the trajectory window at this rate.
    pub fps: Option<f64>,
    /// Render at the dataset's frame-start times with dataset-aligned names.
    pub at_frames: bool,
    pub threads: usize,
}

/// Render global-shutter images at arbitrary trajectory times.
pub fn cmd_render(args: &RenderArgs) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (win_start, win_end) = ckpt.trajectory.valid_window();

    let mut jobs: Vec<(String, f64)> = Vec::new();
    if args.at_frames {
        for (i, &t) in ckpt.timing.frame_starts.iter().enumerate() {
            jobs.push((format!("frame_{i:04}.png"), t));
        }
    }
    if let Some(fps) = args.fps {
        if fps <= 0.0 {
            return Err(Error::config("render.fps", "must be > 0"));
        }
        let dt = 1.0 / fps;
        let mut t = win_start;
        let mut i = 0usize;
        while t <= win_end + 1e-12 {
            jobs.push((format!("render_{i:05}.png"), t.min(win_end)));
            i += 1;
            t = win_start + i as f64 * dt;
        }
    }
    for (i, &t) in args.times.iter().enumerate() {
        jobs.push((format!("time_{i:04}.png"), t));
    }

    if jobs.is_empty() {
        println!("no query times given; nothing to render");
        return Ok(Vec::new());
    }
    fs::create_dir_all(&args.output)?;

    let mut written = Vec::new();
    let mut manifest = Vec::new();
    for (name, t) in &jobs {
        let pose = ckpt.trajectory.query_pose(*t).map_err(|e| match e {
            Error::TimeOutOfRange { t, .. } => Error::TimeOutOfRange {
                t,
                start: win_start,
                end: win_end,
            },
            other => other,
        })?;
        let img = render_gs_image(
            ckpt.field.as_trainable(),
            &pose,
            &ckpt.intrinsics,
            &ckpt.sampling,
            args.threads,
        );
        let path = args.output.join(name);
        write_png(&path, &img)?;
        manifest.push(serde_json::json!({ "file": name, "time": t }));
        written.push(path);
    }
    fs::write(
        args.output.join("render_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!("rendered {} images to {}", written.len(), args.output.display());
    Ok(written)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub estimate: PathBuf,
    pub reference: PathBuf,
    pub output: Option<PathBuf>,
    pub alignment: Alignment,
    pub rpe_delta: usize,
}

/// Images directly in `dir`, falling back to its gs/ subdirectory (dataset
/// layout).
fn eval_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let top = list_images(dir)?;
    if !top.is_empty() {
        return Ok(top);
    }
    let gs = dir.join("gs");
    if gs.is_dir() {
        return list_images(&gs);
    }
    Ok(Vec::new())
}

/// The trajectory file carried by an estimate or reference directory.
fn eval_trajectory(dir: &Path) -> Option<PathBuf> {
    for name in ["traj_est.txt", "traj_gt_frames.txt"] {
        let p = dir.join(name);
        if p.is_file() {
            return Some(p);
        }
    }
    None
}

fn json_f64(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::json!(v.to_string())
    }
}

/// Pair images by filename and trajectories by timestamp; print a table and
/// emit a JSON report.
pub fn cmd_eval(args: &EvalArgs) -> Result<serde_json::Value> {
    let est_images = eval_images(&args.estimate)?;
    let ref_images: std::collections::BTreeMap<String, PathBuf> =
        eval_images(&args.reference)?.into_iter().collect();

    let mut per_image = Vec::new();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut image_count = 0usize;
    for (name, est_path) in &est_images {
        let Some(ref_path) = ref_images.get(name) else {
            continue;
        };
        let a = read_png(est_path)?;
        let b = read_png(ref_path)?;
        let p = psnr(&a, &b).map_err(|e| annotate_file(e, name))?;
        let s = ssim(&a, &b).map_err(|e| annotate_file(e, name))?;
        per_image.push(serde_json::json!({
            "file": name,
            "psnr_db": json_f64(p),
            "ssim": s,
        }));
        // infinite PSNR (identical images) is kept out of the mean only if
        // every pair is identical; otherwise it would swamp the average
        psnr_sum += p;
        ssim_sum += s;
        image_count += 1;
        println!("{name}: PSNR {p:.2} dB, SSIM {s:.4}");
    }

    let mut report = serde_json::json!({
        "images": per_image,
        "image_count": image_count,
    });
    if image_count > 0 {
        let mean_psnr = psnr_sum / image_count as f64;
        let mean_ssim = ssim_sum / image_count as f64;
        println!("mean over {image_count} images: PSNR {mean_psnr:.2} dB, SSIM {mean_ssim:.4}");
        report["mean_psnr_db"] = json_f64(mean_psnr);
        report["mean_ssim"] = serde_json::json!(mean_ssim);
    }

    if let (Some(est_traj), Some(ref_traj)) = (
        eval_trajectory(&args.estimate),
        eval_trajectory(&args.reference),
    ) {
        let est = read_tum(&est_traj)?;
        let reference = read_tum(&ref_traj)?;
        let ate_result = ate(&est, &reference, args.alignment)?;
        let (rpe_mean, rpe_std) = rpe_rot(&est, &reference, args.rpe_delta)?;
        println!(
            "ATE ({:?}): rmse {:.6} m (mean {:.6}, std {:.6}, {} samples, {} dropped{})",
            args.alignment,
            ate_result.rmse,
            ate_result.mean,
            ate_result.std,
            ate_result.matched,
            ate_result.dropped,
            if ate_result.degenerate {
                ", degenerate geometry: translation-only alignment"
            } else {
                ""
            }
        );
        println!("RPE rot (delta {}): {:.6} +/- {:.6} deg/frame", args.rpe_delta, rpe_mean, rpe_std);
        report["ate"] = serde_json::json!({
            "alignment": format!("{:?}", args.alignment).to_lowercase(),
            "rmse_m": ate_result.rmse,
            "mean_m": ate_result.mean,
            "std_m": ate_result.std,
            "matched": ate_result.matched,
            "dropped": ate_result.dropped,
            "degenerate": ate_result.degenerate,
        });
        report["rpe_rot"] = serde_json::json!({
            "delta_frames": args.rpe_delta,
            "mean_deg": rpe_mean,
            "std_deg": rpe_std,
        });
    }

    if let Some(out) = &args.output {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

fn annotate_file(err: Error, name: &str) -> Error {
    match err {
        Error::DimensionMismatch {
            a_w,
            a_h,
            b_w,
            b_h,
            ..
        } => Error::DimensionMismatch {
            a_w,
            a_h,
            b_w,
            b_h,
            context: format!(" ({name})"),
        },
        other => other,
    }
}
