//! Trainable radiance fields: (position, direction) -> (color, density) with
//! parameter gradients. Two backends: a dense trilinear voxel grid and a small
//! MLP with Fourier positional encoding plus a coarse-to-fine band schedule.

pub mod encoding;
pub mod mlp;
pub mod voxel;

pub use encoding::{band_window, encoded_len, positional_encoding};
pub use mlp::{MlpConfig, MlpField};
pub use voxel::{VoxelConfig, VoxelGrid};

use nalgebra::Vector3;

/// One field evaluation: emitted color in [0,1]^3 and nonnegative density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub color: Vector3<f64>,
    pub sigma: f64,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample {
        color: Vector3::new(0.0, 0.0, 0.0),
        sigma: 0.0,
    };
}

/// Gradients of the loss w.r.t. the query inputs, returned by the backward
/// pass so the renderer can chain them into pose perturbations.
#[derive(Clone, Copy, Debug)]
pub struct InputGradients {
    pub d_position: Vector3<f64>,
    pub d_direction: Vector3<f64>,
}

impl InputGradients {
    pub fn zero() -> Self {
        InputGradients {
            d_position: Vector3::zeros(),
            d_direction: Vector3::zeros(),
        }
    }
}

/// Read-only query contract. Analytic scenes implement only this.
pub trait FieldQuery: Sync {
    fn query(&self, position: &Vector3<f64>, direction: &Vector3<f64>) -> FieldSample;
}

/// A field with optimizable parameters. The backward pass accumulates
/// parameter gradients into a caller-provided buffer (callers control
/// threading and reduction order, so a single-threaded run is bitwise
/// reproducible) and returns input gradients for pose backprop.
pub trait TrainableField: FieldQuery {
    fn param_count(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Chain upstream dL/d(color) and dL/d(sigma) back to parameters and
    /// inputs at one query point. `grad` must have `param_count()` entries.
    fn query_backward(
        &self,
        position: &Vector3<f64>,
        direction: &Vector3<f64>,
        upstream_color: &Vector3<f64>,
        upstream_sigma: f64,
        grad: &mut [f64],
    ) -> InputGradients;

    /// Coarse-to-fine progress for the positional encoding, in [0, L_x].
    /// Backends without an encoding ignore it.
    fn set_c2f_alpha(&mut self, _alpha: f64) {}

    fn c2f_max_alpha(&self) -> f64 {
        0.0
    }
}

/// User-facing backend selection, serializable in run configs.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum FieldBackendConfig {
    Voxel {
        resolution: [usize; 3],
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        #[serde(default = "default_sigma_init")]
        sigma_init: f64,
        #[serde(default)]
        c2f_levels: usize,
    },
    Mlp {
        #[serde(flatten)]
        config: MlpConfig,
    },
}

fn default_sigma_init() -> f64 {
    0.02
}

impl FieldBackendConfig {
    pub fn build(&self, seed: u64) -> crate::error::Result<AnyField> {
        match self {
            FieldBackendConfig::Voxel {
                resolution,
                bbox_min,
                bbox_max,
                sigma_init,
                c2f_levels,
            } => Ok(AnyField::Voxel(VoxelGrid::new(
                VoxelConfig {
                    resolution: *resolution,
                    bbox_min: *bbox_min,
                    bbox_max: *bbox_max,
                    c2f_levels: *c2f_levels,
                },
                *sigma_init,
            )?)),
            FieldBackendConfig::Mlp { config } => {
                Ok(AnyField::Mlp(MlpField::new(config.clone(), seed)?))
            }
        }
    }
}

/// Runtime-selected backend, one level of dispatch above the traits.
#[derive(Clone, Debug)]
pub enum AnyField {
    Voxel(VoxelGrid),
    Mlp(MlpField),
}

impl AnyField {
    pub fn as_trainable(&self) -> &dyn TrainableField {
        match self {
            AnyField::Voxel(g) => g,
            AnyField::Mlp(m) => m,
        }
    }

    pub fn as_trainable_mut(&mut self) -> &mut dyn TrainableField {
        match self {
            AnyField::Voxel(g) => g,
            AnyField::Mlp(m) => m,
        }
    }
}

impl FieldQuery for AnyField {
    fn query(&self, position: &Vector3<f64>, direction: &Vector3<f64>) -> FieldSample {
        self.as_trainable().query(position, direction)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // max(x, 0) + ln(1 + exp(-|x|)), stable at both tails
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus, clamped so the pre-activation stays finite.
pub(crate) fn softplus_inverse(y: f64) -> f64 {
    let y = y.max(1e-12);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// Central finite-difference check of `query_backward` for one field:
    /// parameter gradients, then input gradients, against a scalar probe
    /// loss L = up_color . color + up_sigma * sigma.
    pub fn check_gradients<F: TrainableField + Clone>(
        field: &F,
        position: &Vector3<f64>,
        direction: &Vector3<f64>,
        upstream_color: &Vector3<f64>,
        upstream_sigma: f64,
        param_subset: &[usize],
        step: f64,
        tol: f64,
    ) {
        let probe = |f: &F, x: &Vector3<f64>, d: &Vector3<f64>| -> f64 {
            let s = f.query(x, d);
            upstream_color.dot(&s.color) + upstream_sigma * s.sigma
        };

        let mut grad = vec![0.0; field.param_count()];
        let input_grads =
            field.query_backward(position, direction, upstream_color, upstream_sigma, &mut grad);

        for &pi in param_subset {
            let mut plus = field.clone();
            plus.params_mut()[pi] += step;
            let mut minus = field.clone();
            minus.params_mut()[pi] -= step;
            let fd = (probe(&plus, position, direction) - probe(&minus, position, direction))
                / (2.0 * step);
            let scale = fd.abs().max(grad[pi].abs()).max(1e-6);
            assert!(
                (grad[pi] - fd).abs() / scale < tol,
                "param {pi}: analytic {} vs fd {}",
                grad[pi],
                fd
            );
        }

        for axis in 0..3 {
            let mut dx = Vector3::zeros();
            dx[axis] = step;
            let fd = (probe(field, &(position + dx), direction)
                - probe(field, &(position - dx), direction))
                / (2.0 * step);
            let scale = fd.abs().max(input_grads.d_position[axis].abs()).max(1e-6);
            assert!(
                (input_grads.d_position[axis] - fd).abs() / scale < tol,
                "position axis {axis}: analytic {} vs fd {}",
                input_grads.d_position[axis],
                fd
            );

            let fd_dir = (probe(field, position, &(direction + dx))
                - probe(field, position, &(direction - dx)))
                / (2.0 * step);
            let scale = fd_dir.abs().max(input_grads.d_direction[axis].abs()).max(1e-6);
            assert!(
                (input_grads.d_direction[axis] - fd_dir).abs() / scale < tol,
                "direction axis {axis}: analytic {} vs fd {}",
                input_grads.d_direction[axis],
                fd_dir
            );
        }
    }
}
