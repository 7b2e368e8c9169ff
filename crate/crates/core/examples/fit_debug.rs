//! Compare a direct analytic render against the voxel fit of the same scene.

use nalgebra::Vector3;
use rsfield_core::field::{FieldQuery, VoxelConfig, VoxelGrid};
use rsfield_core::io::write_png;
use rsfield_core::lie::Pose;
use rsfield_core::metrics::psnr;
use rsfield_core::renderer::{render_gs_image, SamplingConfig};
use rsfield_core::synthgen::presets;

fn main() {
    let scene = presets::blob_room();
    let intr = rsfield_core::camera::Intrinsics::from_fov(64, 48, 50.0);
    let sampling = SamplingConfig {
        near: 2.0,
        far: 6.5,
        n_samples: 192,
        stratified: false,
        rng_seed: 0,
        background: [0.0; 3],
    };
    let pose = Pose::identity();

    let analytic = render_gs_image(&scene, &pose, &intr, &sampling, 4);

    for res in [49usize, 97, 193] {
        let grid = VoxelGrid::from_fn(
            VoxelConfig {
                resolution: [res; 3],
                bbox_min: [-2.1, -2.1, 2.2],
                bbox_max: [2.1, 2.1, 5.9],
                c2f_levels: 0,
            },
            |p| {
                let s = scene.query(p, &Vector3::new(0.0, 0.0, 1.0));
                (s.color, s.sigma)
            },
        )
        .unwrap();
        let fitted = render_gs_image(&grid, &pose, &intr, &sampling, 4);
        println!(
            "res {res}: PSNR(analytic, fit) = {:.2} dB",
            psnr(&analytic, &fitted).unwrap()
        );
        if res == 49 {
            write_png(std::path::Path::new("/tmp/fit49.png"), &fitted).unwrap();
        }
    }
    write_png(std::path::Path::new("/tmp/analytic.png"), &analytic).unwrap();

    // spot-check field values along the central ray
    let d = Vector3::new(0.0, 0.0, 1.0);
    let grid = VoxelGrid::from_fn(
        VoxelConfig {
            resolution: [49; 3],
            bbox_min: [-2.1, -2.1, 2.2],
            bbox_max: [2.1, 2.1, 5.9],
            c2f_levels: 0,
        },
        |p| {
            let s = scene.query(p, &Vector3::new(0.0, 0.0, 1.0));
            (s.color, s.sigma)
        },
    )
    .unwrap();
    for i in 0..12 {
        let z = 3.2 + 0.15 * i as f64;
        let p = Vector3::new(0.0, 0.0, z);
        let a = scene.query(&p, &d);
        let g = grid.query(&p, &d);
        println!(
            "z={z:.2}: sigma {:.3} vs {:.3}, color ({:.2},{:.2},{:.2}) vs ({:.2},{:.2},{:.2})",
            a.sigma, g.sigma, a.color.x, a.color.y, a.color.z, g.color.x, g.color.y, g.color.z
        );
    }
}
