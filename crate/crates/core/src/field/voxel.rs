//! Dense trilinear voxel grid backend. Each grid node stores 3 color logits
//! and one density pre-activation; queries interpolate the raw values, then
//! apply sigmoid (color) and softplus (density). Fully analytic gradients.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{
    logit, sigmoid, softplus, softplus_inverse, FieldQuery, FieldSample, InputGradients,
    TrainableField,
};
use crate::error::{Error, Result};

pub const CHANNELS: usize = 4; // r, g, b logits + density pre-activation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelConfig {
    pub resolution: [usize; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Coarse-to-fine ladder depth: training starts at a grid with
    /// (resolution - 1) / 2^levels cells per axis and doubles toward the full
    /// resolution as the schedule progresses. 0 disables the ladder.
    #[serde(default)]
    pub c2f_levels: usize,
}

impl VoxelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&n| n < 2) {
            return Err(Error::config("field.resolution", "each axis needs >= 2 nodes"));
        }
        for a in 0..3 {
            if !(self.bbox_max[a] > self.bbox_min[a]) {
                return Err(Error::config("field.bbox", "bounding box must be nondegenerate"));
            }
            let cells = self.resolution[a] - 1;
            if self.c2f_levels > 0 && cells % (1 << self.c2f_levels) != 0 {
                return Err(Error::config(
                    "field.c2f_levels",
                    format!(
                        "cell count {cells} on axis {a} is not divisible by 2^{}",
                        self.c2f_levels
                    ),
                ));
            }
        }
        Ok(())
    }

    fn resolution_at_level(&self, level: usize) -> [usize; 3] {
        let shift = self.c2f_levels - level.min(self.c2f_levels);
        [
            ((self.resolution[0] - 1) >> shift) + 1,
            ((self.resolution[1] - 1) >> shift) + 1,
            ((self.resolution[2] - 1) >> shift) + 1,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct VoxelGrid {
    config: VoxelConfig,
    /// Resolution currently in effect (the ladder grows it to config.resolution).
    resolution: [usize; 3],
    level: usize,
    /// Node-major parameters: ((ix * Ny + iy) * Nz + iz) * 4 + channel.
    params: Vec<f64>,
}

impl VoxelGrid {
    /// Empty-space initialization: mid-gray color, density ~ `sigma_init`.
    /// With a coarse-to-fine ladder the grid starts at the coarsest level.
    pub fn new(config: VoxelConfig, sigma_init: f64) -> Result<VoxelGrid> {
        config.validate()?;
        let resolution = config.resolution_at_level(0);
        let n = resolution.iter().product::<usize>() * CHANNELS;
        let mut params = vec![0.0; n];
        let pre = softplus_inverse(sigma_init.max(1e-6));
        for node in 0..n / CHANNELS {
            params[node * CHANNELS + 3] = pre;
        }
        Ok(VoxelGrid {
            config,
            resolution,
            level: 0,
            params,
        })
    }

    /// Build a full-resolution grid whose node values reproduce `f`
    /// (color, sigma) exactly at the node centers, by inverting the
    /// activations.
    pub fn from_fn(
        config: VoxelConfig,
        f: impl Fn(&Vector3<f64>) -> (Vector3<f64>, f64),
    ) -> Result<VoxelGrid> {
        config.validate()?;
        let [nx, ny, nz] = config.resolution;
        let mut params = vec![0.0; nx * ny * nz * CHANNELS];
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    let p = Vector3::new(
                        config.bbox_min[0]
                            + (config.bbox_max[0] - config.bbox_min[0]) * ix as f64
                                / (nx - 1) as f64,
                        config.bbox_min[1]
                            + (config.bbox_max[1] - config.bbox_min[1]) * iy as f64
                                / (ny - 1) as f64,
                        config.bbox_min[2]
                            + (config.bbox_max[2] - config.bbox_min[2]) * iz as f64
                                / (nz - 1) as f64,
                    );
                    let (color, sigma) = f(&p);
                    let base = ((ix * ny + iy) * nz + iz) * CHANNELS;
                    for c in 0..3 {
                        params[base + c] = logit(color[c]);
                    }
                    // keep the pre-activation floor mild: a deeply negative
                    // node drags interpolated densities to zero across the
                    // whole neighboring cell
                    params[base + 3] = softplus_inverse(sigma.max(1e-3));
                }
            }
        }
        Ok(VoxelGrid {
            resolution: config.resolution,
            level: config.c2f_levels,
            config,
            params,
        })
    }

    /// Rebuild from a stored parameter vector; the ladder level is inferred
    /// from the parameter count.
    pub fn from_params(config: VoxelConfig, params: Vec<f64>) -> Result<VoxelGrid> {
        config.validate()?;
        for level in (0..=config.c2f_levels).rev() {
            let resolution = config.resolution_at_level(level);
            if params.len() == resolution.iter().product::<usize>() * CHANNELS {
                return Ok(VoxelGrid {
                    config,
                    resolution,
                    level,
                    params,
                });
            }
        }
        Err(Error::ShapeMismatch {
            what: "voxel parameters",
            got: params.len(),
            expected: config.resolution.iter().product::<usize>() * CHANNELS,
        })
    }

    pub fn config(&self) -> &VoxelConfig {
        &self.config
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    /// Double the cell count on every axis, trilinearly interpolating the raw
    /// parameters (exact at the coarse nodes).
    fn upsample_once(&mut self) {
        let old = self.resolution;
        let new = [
            (old[0] - 1) * 2 + 1,
            (old[1] - 1) * 2 + 1,
            (old[2] - 1) * 2 + 1,
        ];
        let mut params = vec![0.0; new.iter().product::<usize>() * CHANNELS];
        let old_base =
            |ix: usize, iy: usize, iz: usize| ((ix * old[1] + iy) * old[2] + iz) * CHANNELS;
        for ix in 0..new[0] {
            for iy in 0..new[1] {
                for iz in 0..new[2] {
                    let base = ((ix * new[1] + iy) * new[2] + iz) * CHANNELS;
                    let (x0, xf) = (ix / 2, (ix % 2) as f64 * 0.5);
                    let (y0, yf) = (iy / 2, (iy % 2) as f64 * 0.5);
                    let (z0, zf) = (iz / 2, (iz % 2) as f64 * 0.5);
                    for corner in 0..8usize {
                        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                        let w = (if dx == 1 { xf } else { 1.0 - xf })
                            * (if dy == 1 { yf } else { 1.0 - yf })
                            * (if dz == 1 { zf } else { 1.0 - zf });
                        if w == 0.0 {
                            continue;
                        }
                        let src = old_base(
                            (x0 + dx).min(old[0] - 1),
                            (y0 + dy).min(old[1] - 1),
                            (z0 + dz).min(old[2] - 1),
                        );
                        for c in 0..CHANNELS {
                            params[base + c] += w * self.params[src + c];
                        }
                    }
                }
            }
        }
        self.resolution = new;
        self.level += 1;
        self.params = params;
    }

    /// Cell lookup shared by forward and backward passes. Returns the lower
    /// corner indices, fractional offsets and inverse cell sizes, or None
    /// when the point lies outside the bounding box.
    fn locate(&self, p: &Vector3<f64>) -> Option<([usize; 3], [f64; 3], [f64; 3])> {
        let [nx, ny, nz] = self.resolution;
        let n = [nx, ny, nz];
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut inv_cell = [0.0; 3];
        for a in 0..3 {
            let extent = self.config.bbox_max[a] - self.config.bbox_min[a];
            let cell = extent / (n[a] - 1) as f64;
            inv_cell[a] = 1.0 / cell;
            let g = (p[a] - self.config.bbox_min[a]) * inv_cell[a];
            if !(0.0..=(n[a] - 1) as f64).contains(&g) {
                return None;
            }
            let i = (g.floor() as usize).min(n[a] - 2);
            idx[a] = i;
            frac[a] = g - i as f64;
        }
        Some((idx, frac, inv_cell))
    }

    #[inline]
    fn node_base(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [_, ny, nz] = self.resolution;
        ((ix * ny + iy) * nz + iz) * CHANNELS
    }

    /// Interpolated raw values (3 logits + density pre-activation).
    fn raw_at(&self, idx: [usize; 3], frac: [f64; 3]) -> [f64; 4] {
        let mut raw = [0.0; 4];
        for corner in 0..8usize {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            let base = self.node_base(idx[0] + dx, idx[1] + dy, idx[2] + dz);
            for c in 0..4 {
                raw[c] += w * self.params[base + c];
            }
        }
        raw
    }
}

impl FieldQuery for VoxelGrid {
    fn query(&self, position: &Vector3<f64>, _direction: &Vector3<f64>) -> FieldSample {
        match self.locate(position) {
            None => FieldSample::EMPTY,
            Some((idx, frac, _)) => {
                let raw = self.raw_at(idx, frac);
                FieldSample {
                    color: Vector3::new(sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])),
                    sigma: softplus(raw[3]),
                }
            }
        }
    }
}

impl TrainableField for VoxelGrid {
    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn query_backward(
        &self,
        position: &Vector3<f64>,
        _direction: &Vector3<f64>,
        upstream_color: &Vector3<f64>,
        upstream_sigma: f64,
        grad: &mut [f64],
    ) -> InputGradients {
        debug_assert_eq!(grad.len(), self.params.len());
        let Some((idx, frac, inv_cell)) = self.locate(position) else {
            return InputGradients::zero();
        };
        let raw = self.raw_at(idx, frac);

        // upstream through the activations
        let mut up_raw = [0.0; 4];
        for c in 0..3 {
            let s = sigmoid(raw[c]);
            up_raw[c] = upstream_color[c] * s * (1.0 - s);
        }
        up_raw[3] = upstream_sigma * sigmoid(raw[3]); // softplus' = sigmoid

        let mut d_position = Vector3::zeros();
        for corner in 0..8usize {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let fx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let fy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let fz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            let sx = if dx == 1 { 1.0 } else { -1.0 };
            let sy = if dy == 1 { 1.0 } else { -1.0 };
            let sz = if dz == 1 { 1.0 } else { -1.0 };
            let w = fx * fy * fz;
            let base = self.node_base(idx[0] + dx, idx[1] + dy, idx[2] + dz);

            let mut up_dot_node = 0.0;
            for c in 0..4 {
                grad[base + c] += w * up_raw[c];
                up_dot_node += up_raw[c] * self.params[base + c];
            }
            // dw/dp per axis: sign * product of the other two factors / cell
            d_position.x += sx * fy * fz * inv_cell[0] * up_dot_node;
            d_position.y += fx * sy * fz * inv_cell[1] * up_dot_node;
            d_position.z += fx * fy * sz * inv_cell[2] * up_dot_node;
        }

        InputGradients {
            d_position,
            d_direction: Vector3::zeros(),
        }
    }

    /// Coarse-to-fine: integer progress selects the ladder level; crossing a
    /// level boundary upsamples the grid in place (parameter count grows).
    fn set_c2f_alpha(&mut self, alpha: f64) {
        let target = (alpha.max(0.0).floor() as usize).min(self.config.c2f_levels);
        while self.level < target {
            self.upsample_once();
        }
    }

    fn c2f_max_alpha(&self) -> f64 {
        self.config.c2f_levels as f64
    }
}
