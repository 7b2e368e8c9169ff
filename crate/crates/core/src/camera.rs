//! Pinhole rolling-shutter camera: intrinsics, per-pixel ray generation, and
//! the per-row timestamp model. Readout runs top to bottom; exposure per row
//! is treated as instantaneous.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Pose;

/// Pinhole intrinsics. Rays are cast through pixel centers (x + 0.5, y + 0.5).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::config("intrinsics", "focal lengths must be > 0"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("intrinsics", "image size must be nonzero"));
        }
        Ok(())
    }

    /// A symmetric camera with the principal point at the image center and a
    /// given horizontal field of view (degrees).
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Intrinsics {
        let fx = width as f64 / (2.0 * (fov_x_deg.to_radians() / 2.0).tan());
        Intrinsics {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// Row-timing model: row r of frame f is captured at
/// frame_starts[f] + r * line_readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsTiming {
    /// Seconds between consecutive row captures (t_read).
    pub line_readout: f64,
    /// First-row capture time of each frame, strictly increasing.
    pub frame_starts: Vec<f64>,
}

impl RsTiming {
    /// Uniform frame spacing starting at t0.
    pub fn uniform(t0: f64, frame_interval: f64, frames: usize, line_readout: f64) -> RsTiming {
        RsTiming {
            line_readout,
            frame_starts: (0..frames)
                .map(|i| t0 + i as f64 * frame_interval)
                .collect(),
        }
    }

    pub fn frames(&self) -> usize {
        self.frame_starts.len()
    }

    /// Uniform frame interval; rejects non-uniform spacing.
    pub fn frame_interval(&self) -> Result<f64> {
        if self.frame_starts.len() < 2 {
            return Err(Error::config(
                "timing.frame_starts",
                "need at least 2 frames to derive an interval",
            ));
        }
        let dt = self.frame_starts[1] - self.frame_starts[0];
        for w in self.frame_starts.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::config(
                    "timing.frame_starts",
                    "frame timing must be uniform",
                ));
            }
        }
        Ok(dt)
    }

    /// Checks invariants against an image height: line_readout >= 0, strictly
    /// increasing frame starts, full readout fits inside the frame interval.
    pub fn validate(&self, height: usize) -> Result<()> {
        if self.line_readout < 0.0 {
            return Err(Error::config("timing.line_readout", "must be >= 0"));
        }
        if self.frame_starts.is_empty() {
            return Err(Error::config("timing.frame_starts", "must be nonempty"));
        }
        for w in self.frame_starts.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::config(
                    "timing.frame_starts",
                    "frame starts must be strictly increasing",
                ));
            }
            if height as f64 * self.line_readout > w[1] - w[0] + 1e-12 {
                return Err(Error::config(
                    "timing.line_readout",
                    format!(
                        "full-frame readout {} exceeds the frame interval {}",
                        height as f64 * self.line_readout,
                        w[1] - w[0]
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Capture time of one row. Errors when the frame or row index is out of range.
pub fn row_time(timing: &RsTiming, frame: usize, row: usize, height: usize) -> Result<f64> {
    if frame >= timing.frame_starts.len() {
        return Err(Error::IndexOutOfRange {
            what: "frame",
            index: frame,
            limit: timing.frame_starts.len(),
        });
    }
    if row >= height {
        return Err(Error::IndexOutOfRange {
            what: "row",
            index: row,
            limit: height,
        });
    }
    Ok(timing.frame_starts[frame] + row as f64 * timing.line_readout)
}

/// A world-space camera ray through one pixel.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
    pub pixel: (usize, usize),
}

/// Ray through the center of pixel (x, y) for a camera at `pose`
/// (camera-to-world): direction = normalize(R * K^-1 (x+0.5, y+0.5, 1)).
pub fn pixel_ray(intr: &Intrinsics, pose: &Pose, pixel: (usize, usize)) -> Ray {
    let (x, y) = pixel;
    debug_assert!(x < intr.width && y < intr.height);
    let dir_cam = Vector3::new(
        (x as f64 + 0.5 - intr.cx) / intr.fx,
        (y as f64 + 0.5 - intr.cy) / intr.fy,
        1.0,
    );
    let direction = pose.rotation.rotate(&dir_cam).normalize();
    Ray {
        origin: pose.translation,
        direction,
        pixel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Rotation;

    fn test_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
        }
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        // half-integer principal point so a pixel center lands exactly on it
        let intr = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.5,
            cy: 12.5,
            width: 64,
            height: 48,
        };
        let ray = pixel_ray(&intr, &Pose::identity(), (16, 12));
        assert!((ray.direction - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(ray.origin.norm() < 1e-12);
    }

    #[test]
    fn unit_offset_ray() {
        // pixel center at (cx + fx, cy): K^-1 gives (1, 0, 1), normalized
        let intr = Intrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 16.5,
            cy: 11.5,
            width: 64,
            height: 48,
        };
        let ray = pixel_ray(&intr, &Pose::identity(), (26, 11));
        let want = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert!((ray.direction - want).norm() < 1e-12);
    }

    #[test]
    fn translation_moves_origin_not_direction() {
        let intr = test_intrinsics();
        let ident = pixel_ray(&intr, &Pose::identity(), (10, 40));
        let t = Vector3::new(3.0, -1.0, 2.0);
        let moved = pixel_ray(&intr, &Pose::from_translation(t), (10, 40));
        assert!((moved.origin - t).norm() < 1e-12);
        assert!((moved.direction - ident.direction).norm() < 1e-12);
    }

    #[test]
    fn all_rays_forward_and_unit_norm() {
        let intr = test_intrinsics();
        let pose = Pose::identity();
        for y in 0..intr.height {
            for x in 0..intr.width {
                let ray = pixel_ray(&intr, &pose, (x, y));
                assert!(ray.direction.z > 0.0);
                assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotated_pose_rotates_rays() {
        let intr = test_intrinsics();
        let rot = Rotation::exp(&Vector3::new(0.0, 0.3, 0.0));
        let pose = Pose::from_rotation(rot);
        let ident = pixel_ray(&intr, &Pose::identity(), (31, 23));
        let turned = pixel_ray(&intr, &pose, (31, 23));
        assert!((turned.direction - rot.rotate(&ident.direction)).norm() < 1e-12);
    }

    #[test]
    fn row_time_model() {
        let timing = RsTiming::uniform(2.0, 0.1, 3, 100e-6);
        assert_eq!(row_time(&timing, 0, 0, 480).unwrap(), 2.0);
        // 10 rows at 100 us = 1 ms
        assert!((row_time(&timing, 0, 10, 480).unwrap() - 2.001).abs() < 1e-12);
        assert!((row_time(&timing, 2, 5, 480).unwrap() - (2.2 + 5.0 * 100e-6)).abs() < 1e-12);
        assert!(matches!(
            row_time(&timing, 3, 0, 480),
            Err(Error::IndexOutOfRange { what: "frame", .. })
        ));
        assert!(matches!(
            row_time(&timing, 0, 480, 480),
            Err(Error::IndexOutOfRange { what: "row", .. })
        ));
    }

    #[test]
    fn row_time_monotone_and_degenerate() {
        let rs = RsTiming::uniform(0.0, 0.1, 2, 1e-4);
        let mut prev = -1.0;
        for r in 0..100 {
            let t = row_time(&rs, 0, r, 100).unwrap();
            assert!(t > prev);
            prev = t;
        }
        let gs = RsTiming::uniform(0.0, 0.1, 2, 0.0);
        for r in 0..100 {
            assert_eq!(row_time(&gs, 0, r, 100).unwrap(), 0.0);
        }
    }

    #[test]
    fn timing_validation() {
        let ok = RsTiming::uniform(0.0, 0.1, 4, 1e-3);
        assert!(ok.validate(48).is_ok());
        // 480 rows * 1 ms = 0.48 s > 0.1 s interval
        assert!(ok.validate(480).is_err());
        let bad = RsTiming {
            line_readout: 1e-4,
            frame_starts: vec![0.0, 0.1, 0.1],
        };
        assert!(bad.validate(48).is_err());
    }
}
