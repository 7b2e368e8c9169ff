//! Self-describing checkpoint: a JSON header line with the model shapes,
//! followed by the raw little-endian f64 payload (field parameters, then
//! knot poses as tx ty tz qx qy qz qw). The payload roundtrips bit-exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, RsTiming};
use crate::error::{Error, Result};
use crate::field::{AnyField, MlpConfig, MlpField, VoxelConfig, VoxelGrid};
use crate::lie::{Pose, Rotation};
use crate::renderer::SamplingConfig;
use crate::trajectory::{TrajectoryKind, TrajectoryModel};

const MAGIC: &str = "rsfield-checkpoint-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum FieldMeta {
    Voxel { config: VoxelConfig },
    Mlp { config: MlpConfig, alpha: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub kind: TrajectoryKind,
    pub t0: f64,
    pub dt: f64,
    pub knot_count: usize,
    pub frame_starts: Option<Vec<f64>>,
    pub span: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    field: FieldMeta,
    trajectory: TrajectoryMeta,
    intrinsics: Intrinsics,
    timing: RsTiming,
    sampling: SamplingConfig,
    param_count: usize,
}

/// Everything needed to render from a trained model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub field: AnyField,
    pub trajectory: TrajectoryModel,
    pub intrinsics: Intrinsics,
    pub timing: RsTiming,
    pub sampling: SamplingConfig,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let field_meta = match &ckpt.field {
        AnyField::Voxel(g) => FieldMeta::Voxel {
            config: g.config().clone(),
        },
        AnyField::Mlp(m) => FieldMeta::Mlp {
            config: m.config().clone(),
            alpha: m.alpha(),
        },
    };
    let traj = &ckpt.trajectory;
    let (frame_starts, span) = match traj.nodep_layout() {
        Some(layout) => (Some(layout.frame_starts.clone()), Some(layout.span)),
        None => (None, None),
    };
    let header = Header {
        format: MAGIC.to_string(),
        field: field_meta,
        trajectory: TrajectoryMeta {
            kind: traj.kind(),
            t0: traj.t0(),
            dt: traj.dt(),
            knot_count: traj.knot_count(),
            frame_starts,
            span,
        },
        intrinsics: ckpt.intrinsics,
        timing: ckpt.timing.clone(),
        sampling: ckpt.sampling,
        param_count: ckpt.field.as_trainable().param_count(),
    };

    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in ckpt.field.as_trainable().params() {
        w.write_all(&v.to_le_bytes())?;
    }
    for knot in traj.knots() {
        let t = knot.translation;
        let q = knot.rotation.quaternion_xyzw();
        for v in [t.x, t.y, t.z, q[0], q[1], q[2], q[3]] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(|_| {
            Error::Format(format!("{}: truncated checkpoint header", path.display()))
        })?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format != MAGIC {
        return Err(Error::Format(format!(
            "{}: unknown checkpoint format {:?}",
            path.display(),
            header.format
        )));
    }

    let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!("{}: truncated checkpoint payload", path.display()))
        })?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let params = read_f64s(header.param_count)?;
    let knot_values = read_f64s(header.trajectory.knot_count * 7)?;
    let knots: Vec<Pose> = knot_values
        .chunks_exact(7)
        .map(|c| {
            Pose::new(
                Rotation::from_quaternion_xyzw(c[3], c[4], c[5], c[6]),
                Vector3::new(c[0], c[1], c[2]),
            )
        })
        .collect();

    let field = match header.field {
        FieldMeta::Voxel { config } => AnyField::Voxel(VoxelGrid::from_params(config, params)?),
        FieldMeta::Mlp { config, alpha } => {
            AnyField::Mlp(MlpField::from_params(config, params, alpha)?)
        }
    };
    let tm = &header.trajectory;
    let trajectory = match (tm.kind, &tm.frame_starts) {
        (TrajectoryKind::CubicDep, _) => TrajectoryModel::cubic_dep(knots, tm.t0, tm.dt)?,
        (TrajectoryKind::LinearDep, _) => TrajectoryModel::linear_dep(knots, tm.t0, tm.dt)?,
        (kind, Some(starts)) => TrajectoryModel::nodep(
            kind,
            knots,
            starts.clone(),
            tm.span.unwrap_or(tm.dt),
        )?,
        (kind, None) => {
            return Err(Error::Format(format!(
                "{}: {kind:?} checkpoint missing frame starts",
                path.display()
            )))
        }
    };
    Ok(Checkpoint {
        field,
        trajectory,
        intrinsics: header.intrinsics,
        timing: header.timing,
        sampling: header.sampling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TrainableField;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sample_checkpoint(seed: u64) -> Checkpoint {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut grid = VoxelGrid::new(
            VoxelConfig {
                resolution: [3, 4, 5],
                bbox_min: [-1.0, -1.0, 0.0],
                bbox_max: [1.0, 1.0, 2.0],
                c2f_levels: 0,
            },
            0.1,
        )
        .unwrap();
        for p in grid.params_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        let knots: Vec<Pose> = (0..6)
            .map(|i| {
                Pose::new(
                    Rotation::exp(&Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    )),
                    Vector3::new(i as f64, rng.gen_range(-1.0..1.0), 0.0),
                )
            })
            .collect();
        Checkpoint {
            field: AnyField::Voxel(grid),
            trajectory: TrajectoryModel::cubic_dep(knots, 0.25, 0.1).unwrap(),
            intrinsics: Intrinsics::from_fov(64, 48, 50.0),
            timing: RsTiming::uniform(0.25, 0.1, 3, 1e-4),
            sampling: SamplingConfig {
                near: 1.0,
                far: 6.0,
                n_samples: 32,
                stratified: true,
                rng_seed: 5,
                background: [0.0, 0.0, 0.0],
            },
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint(1);
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();

        assert_eq!(
            ckpt.field.as_trainable().params(),
            back.field.as_trainable().params()
        );
        assert_eq!(ckpt.trajectory.knot_count(), back.trajectory.knot_count());
        for (a, b) in ckpt.trajectory.knots().iter().zip(back.trajectory.knots()) {
            assert_eq!(a.translation, b.translation);
            assert_eq!(a.rotation.quaternion_xyzw(), b.rotation.quaternion_xyzw());
        }
        assert_eq!(ckpt.intrinsics, back.intrinsics);
        assert_eq!(ckpt.timing, back.timing);
        assert_eq!(ckpt.sampling, back.sampling);

        // save again: byte-identical files
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_unknown_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"{\"format\":\"nope\"}\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
