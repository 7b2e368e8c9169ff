//! Timing and convergence probe for the end-to-end recovery experiment.
//! Run with: cargo run --release -p rsfield-core --example recovery_probe

use std::time::Instant;

use rsfield_core::io::dataset::Dataset;
use rsfield_core::metrics::{ate, psnr, Alignment};
use rsfield_core::renderer::render_gs_image;
use rsfield_core::synthgen::{generate_dataset, presets};
use rsfield_core::train::{init_trajectory, train, InitConfig, TrainConfig};
use rsfield_core::trajectory::TrajectoryKind;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let threads: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let ignore_rs: bool = args.get(3).map(|s| s == "control").unwrap_or(false);

    let dir = std::env::temp_dir().join("rsfield_probe");
    let synth = presets::blob_room_capture(15, 64, 48, 0.6);

    let t0 = Instant::now();
    generate_dataset(&synth, &dir, threads).unwrap();
    println!("dataset generated in {:.1?}", t0.elapsed());

    let dataset = Dataset::load(&dir, false).unwrap();
    let rot_noise: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let trans_noise: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let init = InitConfig::NoisyGroundTruth {
        rot_noise_deg: rot_noise,
        trans_noise_frac: trans_noise,
        seed: 1,
    };
    let mut traj = init_trajectory(TrajectoryKind::CubicDep, &dataset, &init).unwrap();

    // pose_only mode: freeze a ground-truth-fitted field and optimize knots only
    let pose_only = args.get(3).map(|s| s == "pose_only").unwrap_or(false);
    let mut field = if pose_only {
        use rsfield_core::field::{AnyField, FieldQuery, VoxelConfig, VoxelGrid};
        let scene = presets::blob_room();
        AnyField::Voxel(
            VoxelGrid::from_fn(
                VoxelConfig {
                    resolution: [49, 49, 49],
                    bbox_min: [-2.1, -2.1, 2.2],
                    bbox_max: [2.1, 2.1, 5.9],
                    c2f_levels: 0,
                },
                |p| {
                    let s = scene.query(p, &nalgebra::Vector3::new(0.0, 0.0, 1.0));
                    (s.color, s.sigma)
                },
            )
            .unwrap(),
        )
    } else {
        presets::blob_room_field().build(0).unwrap()
    };

    // initial trajectory error
    let frame_samples: Vec<(f64, _)> = dataset
        .meta
        .timing
        .frame_starts
        .iter()
        .map(|&t| (t, traj.query_pose(t).unwrap()))
        .collect();
    let init_ate = ate(&frame_samples, &dataset.gt_frames, Alignment::Sim3).unwrap();
    println!("init ATE rmse {:.5}", init_ate.rmse);

    let lr_field: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5e-2);
    let lr_pose: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let pixels: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let cfg = TrainConfig {
        steps,
        pixels_per_step: pixels,
        lr_field_init: if pose_only { 0.0 } else { lr_field },
        lr_field_final: if pose_only { 0.0 } else { lr_field / 10.0 },
        lr_pose_init: lr_pose,
        lr_pose_final: lr_pose / 100.0,
        c2f_start: 1,
        c2f_end: (steps / 2).max(2),
        threads,
        seed: 7,
        ignore_rolling_shutter: ignore_rs,
        ..TrainConfig::default()
    };
    let sampling = presets::blob_room_sampling(7);

    let t1 = Instant::now();
    let report = train(
        &dataset,
        field.as_trainable_mut(),
        &mut traj,
        &cfg,
        &sampling,
    )
    .unwrap();
    let dt = t1.elapsed();
    println!(
        "trained {} steps in {:.1?} ({:.2} ms/step), loss {:.3e} -> {:.3e}",
        steps,
        dt,
        dt.as_secs_f64() * 1000.0 / steps as f64,
        report.loss_history[0],
        report.loss_history.last().unwrap()
    );

    let frame_samples: Vec<(f64, _)> = dataset
        .meta
        .timing
        .frame_starts
        .iter()
        .map(|&t| (t, traj.query_pose(t).unwrap()))
        .collect();
    let final_ate = ate(&frame_samples, &dataset.gt_frames, Alignment::Sim3).unwrap();
    println!(
        "final ATE rmse {:.5} ({:.1}% of init)",
        final_ate.rmse,
        100.0 * final_ate.rmse / init_ate.rmse
    );

    let t2 = Instant::now();
    let mut eval_sampling = synth.sampling;
    eval_sampling.stratified = false;
    let mut psnr_sum = 0.0;
    for (i, &start) in dataset.meta.timing.frame_starts.iter().enumerate() {
        let pose = traj.query_pose(start).unwrap();
        let img = render_gs_image(
            field.as_trainable(),
            &pose,
            &dataset.meta.intrinsics,
            &eval_sampling,
            threads,
        )
        .quantized();
        let p = psnr(&img, &dataset.gs[i]).unwrap();
        psnr_sum += p;
    }
    println!(
        "mean GS PSNR {:.2} dB (render {:.1?})",
        psnr_sum / dataset.frames() as f64,
        t2.elapsed()
    );
}
