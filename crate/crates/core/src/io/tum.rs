//! TUM trajectory text format: one sample per line,
//! `timestamp tx ty tz qx qy qz qw`, space separated.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::lie::{Pose, Rotation};

pub fn format_tum_line(t: f64, pose: &Pose) -> String {
    let tr = pose.translation;
    let q = pose.rotation.quaternion_xyzw();
    format!(
        "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        t, tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]
    )
}

pub fn write_tum(path: &Path, samples: &[(f64, Pose)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (t, pose) in samples {
        writeln!(w, "{}", format_tum_line(*t, pose))?;
    }
    Ok(())
}

pub fn read_tum(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::Format(format!(
                    "{}:{}: bad trajectory line: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        out.push((
            fields[0],
            Pose::new(
                Rotation::from_quaternion_xyzw(fields[4], fields[5], fields[6], fields[7]),
                Vector3::new(fields[1], fields[2], fields[3]),
            ),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_se3, Twist};

    #[test]
    fn roundtrip_preserves_poses() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<(f64, Pose)> = (0..10)
            .map(|i| {
                let xi = Twist::new(
                    Vector3::new(0.01 * i as f64, 0.2, -0.1),
                    Vector3::new(i as f64, 0.5, -2.0),
                );
                (i as f64 * 0.1, exp_se3(&xi))
            })
            .collect();
        let path = dir.path().join("traj.txt");
        write_tum(&path, &samples).unwrap();
        let back = read_tum(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for ((t0, p0), (t1, p1)) in samples.iter().zip(&back) {
            assert!((t0 - t1).abs() < 1e-9);
            assert!((p0.translation - p1.translation).norm() < 1e-8);
            assert!((p0.rotation.matrix() - p1.rotation.matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "0.0 1.0 2.0\n").unwrap();
        assert!(matches!(read_tum(&path), Err(Error::Format(_))));
    }

    #[test]
    fn skips_comments_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(
            &path,
            "# header\n\n0.0 0 0 0 0 0 0 1\n",
        )
        .unwrap();
        let samples = read_tum(&path).unwrap();
        assert_eq!(samples.len(), 1);
    }
}
