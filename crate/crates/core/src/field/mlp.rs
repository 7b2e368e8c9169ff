//! Small fully connected radiance field with Fourier positional encoding.
//!
//! Trunk of four tanh layers with the encoded position skipped into layer 3;
//! density comes straight off the trunk (softplus), color from a head that
//! additionally sees the encoded view direction (sigmoid). The encoding obeys
//! the coarse-to-fine window, with the direction progress scaled
//! proportionally to its lower order.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encoded_len, positional_encoding_with_deriv};
use super::{sigmoid, softplus, FieldQuery, FieldSample, InputGradients, TrainableField};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Positional-encoding order for positions.
    pub l_x: usize,
    /// Positional-encoding order for directions.
    pub l_d: usize,
    pub hidden: usize,
    pub color_hidden: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            l_x: 10,
            l_d: 4,
            hidden: 64,
            color_hidden: 32,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: usize, // offset of the row-major weight block
    b: usize, // offset of the bias block
    rows: usize,
    cols: usize,
}

impl Layer {
    fn len(rows: usize, cols: usize) -> usize {
        rows * cols + rows
    }
}

#[derive(Clone, Debug)]
pub struct MlpField {
    config: MlpConfig,
    params: Vec<f64>,
    layers: [Layer; 7], // trunk 0..4, sigma head, color hidden, color out
    alpha: f64,
}

fn matvec(params: &[f64], layer: &Layer, input: &[f64], out: &mut [f64]) {
    debug_assert_eq!(input.len(), layer.cols);
    debug_assert_eq!(out.len(), layer.rows);
    for r in 0..layer.rows {
        let row = &params[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
        let mut acc = params[layer.b + r];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        out[r] = acc;
    }
}

/// Accumulate weight/bias gradients and the downstream input gradient for a
/// linear layer given d(loss)/d(pre-activation).
fn matvec_backward(
    params: &[f64],
    grad: &mut [f64],
    layer: &Layer,
    input: &[f64],
    d_pre: &[f64],
    d_input: &mut [f64],
) {
    debug_assert_eq!(d_input.len(), layer.cols);
    for r in 0..layer.rows {
        let g = d_pre[r];
        grad[layer.b + r] += g;
        let row_w = &params[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
        let row_g = &mut grad[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
        for c in 0..layer.cols {
            row_g[c] += g * input[c];
            d_input[c] += g * row_w[c];
        }
    }
}

struct Activations {
    enc_x: Vec<f64>,
    enc_x_deriv: Vec<f64>,
    enc_d: Vec<f64>,
    enc_d_deriv: Vec<f64>,
    h: [Vec<f64>; 4],
    in2: Vec<f64>, // [h1, enc_x]
    pre_sigma: f64,
    hc: Vec<f64>,
    inc: Vec<f64>, // [h3, enc_d]
    pre_color: [f64; 3],
}

impl MlpField {
    pub fn new(config: MlpConfig, seed: u64) -> Result<MlpField> {
        if config.hidden == 0 || config.color_hidden == 0 {
            return Err(Error::config("field.mlp", "hidden widths must be nonzero"));
        }
        let ex = encoded_len(3, config.l_x);
        let ed = encoded_len(3, config.l_d);
        let h = config.hidden;
        let ch = config.color_hidden;

        let dims: [(usize, usize); 7] = [
            (h, ex),
            (h, h),
            (h, h + ex),
            (h, h),
            (1, h),
            (ch, h + ed),
            (3, ch),
        ];
        let mut layers = [Layer {
            w: 0,
            b: 0,
            rows: 0,
            cols: 0,
        }; 7];
        let mut offset = 0;
        for (i, &(rows, cols)) in dims.iter().enumerate() {
            layers[i] = Layer {
                w: offset,
                b: offset + rows * cols,
                rows,
                cols,
            };
            offset += Layer::len(rows, cols);
        }

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0; offset];
        for layer in &layers {
            let bound = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut params[layer.w..layer.w + layer.rows * layer.cols] {
                *w = rng.gen_range(-bound..bound);
            }
            // biases start at zero
        }
        // bias the density head slightly negative so space starts near-empty
        let sigma_layer = layers[4];
        params[sigma_layer.b] = -1.0;

        Ok(MlpField {
            alpha: config.l_x as f64,
            config,
            params,
            layers,
        })
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>, alpha: f64) -> Result<MlpField> {
        let mut field = MlpField::new(config, 0)?;
        if params.len() != field.params.len() {
            return Err(Error::ShapeMismatch {
                what: "mlp parameters",
                got: params.len(),
                expected: field.params.len(),
            });
        }
        field.params = params;
        field.alpha = alpha;
        Ok(field)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn direction_alpha(&self) -> f64 {
        if self.config.l_x == 0 {
            self.config.l_d as f64
        } else {
            self.alpha * self.config.l_d as f64 / self.config.l_x as f64
        }
    }

    fn forward(&self, position: &Vector3<f64>, direction: &Vector3<f64>) -> Activations {
        let h = self.config.hidden;
        let mut act = Activations {
            enc_x: Vec::new(),
            enc_x_deriv: Vec::new(),
            enc_d: Vec::new(),
            enc_d_deriv: Vec::new(),
            h: [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]],
            in2: Vec::new(),
            pre_sigma: 0.0,
            hc: vec![0.0; self.config.color_hidden],
            inc: Vec::new(),
            pre_color: [0.0; 3],
        };
        positional_encoding_with_deriv(
            position.as_slice(),
            self.config.l_x,
            self.alpha,
            &mut act.enc_x,
            &mut act.enc_x_deriv,
        );
        positional_encoding_with_deriv(
            direction.as_slice(),
            self.config.l_d,
            self.direction_alpha(),
            &mut act.enc_d,
            &mut act.enc_d_deriv,
        );

        let mut pre = vec![0.0; h];
        matvec(&self.params, &self.layers[0], &act.enc_x, &mut pre);
        for (o, p) in act.h[0].iter_mut().zip(&pre) {
            *o = p.tanh();
        }
        matvec(&self.params, &self.layers[1], &act.h[0].clone(), &mut pre);
        for (o, p) in act.h[1].iter_mut().zip(&pre) {
            *o = p.tanh();
        }
        act.in2 = act.h[1].iter().chain(act.enc_x.iter()).copied().collect();
        matvec(&self.params, &self.layers[2], &act.in2, &mut pre);
        for (o, p) in act.h[2].iter_mut().zip(&pre) {
            *o = p.tanh();
        }
        matvec(&self.params, &self.layers[3], &act.h[2].clone(), &mut pre);
        for (o, p) in act.h[3].iter_mut().zip(&pre) {
            *o = p.tanh();
        }

        let mut pre_sigma = [0.0];
        matvec(&self.params, &self.layers[4], &act.h[3], &mut pre_sigma);
        act.pre_sigma = pre_sigma[0];

        act.inc = act.h[3].iter().chain(act.enc_d.iter()).copied().collect();
        let mut pre_c = vec![0.0; self.config.color_hidden];
        matvec(&self.params, &self.layers[5], &act.inc, &mut pre_c);
        for (o, p) in act.hc.iter_mut().zip(&pre_c) {
            *o = p.tanh();
        }
        let mut pre_color = [0.0; 3];
        matvec(&self.params, &self.layers[6], &act.hc, &mut pre_color);
        act.pre_color = pre_color;
        act
    }
}

impl FieldQuery for MlpField {
    fn query(&self, position: &Vector3<f64>, direction: &Vector3<f64>) -> FieldSample {
        let act = self.forward(position, direction);
        FieldSample {
            color: Vector3::new(
                sigmoid(act.pre_color[0]),
                sigmoid(act.pre_color[1]),
                sigmoid(act.pre_color[2]),
            ),
            sigma: softplus(act.pre_sigma),
        }
    }
}

impl TrainableField for MlpField {
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
        direction: &Vector3<f64>,
        upstream_color: &Vector3<f64>,
        upstream_sigma: f64,
        grad: &mut [f64],
    ) -> InputGradients {
        debug_assert_eq!(grad.len(), self.params.len());
        let act = self.forward(position, direction);
        let h = self.config.hidden;
        let ex = act.enc_x.len();

        // color output layer
        let d_pre_color: Vec<f64> = (0..3)
            .map(|c| {
                let s = sigmoid(act.pre_color[c]);
                upstream_color[c] * s * (1.0 - s)
            })
            .collect();
        let mut d_hc = vec![0.0; self.config.color_hidden];
        matvec_backward(&self.params, grad, &self.layers[6], &act.hc, &d_pre_color, &mut d_hc);

        // color hidden layer (tanh)
        let d_pre_hc: Vec<f64> = d_hc
            .iter()
            .zip(&act.hc)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut d_inc = vec![0.0; act.inc.len()];
        matvec_backward(&self.params, grad, &self.layers[5], &act.inc, &d_pre_hc, &mut d_inc);

        // density head
        let d_pre_sigma = [upstream_sigma * sigmoid(act.pre_sigma)];
        let mut d_h3 = vec![0.0; h];
        matvec_backward(&self.params, grad, &self.layers[4], &act.h[3], &d_pre_sigma, &mut d_h3);
        for (a, b) in d_h3.iter_mut().zip(&d_inc[..h]) {
            *a += b;
        }

        // trunk, last to first
        let d_pre3: Vec<f64> = d_h3
            .iter()
            .zip(&act.h[3])
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut d_h2 = vec![0.0; h];
        matvec_backward(&self.params, grad, &self.layers[3], &act.h[2], &d_pre3, &mut d_h2);

        let d_pre2: Vec<f64> = d_h2
            .iter()
            .zip(&act.h[2])
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut d_in2 = vec![0.0; act.in2.len()];
        matvec_backward(&self.params, grad, &self.layers[2], &act.in2, &d_pre2, &mut d_in2);
        let mut d_h1 = d_in2[..h].to_vec();
        let mut d_enc_x = d_in2[h..].to_vec();
        debug_assert_eq!(d_enc_x.len(), ex);

        let d_pre1: Vec<f64> = d_h1
            .iter()
            .zip(&act.h[1])
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut d_h0 = vec![0.0; h];
        matvec_backward(&self.params, grad, &self.layers[1], &act.h[0], &d_pre1, &mut d_h0);

        let d_pre0: Vec<f64> = d_h0
            .iter()
            .zip(&act.h[0])
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut d_enc_x_main = vec![0.0; ex];
        matvec_backward(&self.params, grad, &self.layers[0], &act.enc_x, &d_pre0, &mut d_enc_x_main);
        for (a, b) in d_enc_x.iter_mut().zip(&d_enc_x_main) {
            *a += b;
        }
        d_h1.clear();

        // through the encodings: each encoded output touches one coordinate
        let block_x = 1 + 2 * self.config.l_x;
        let mut d_position = Vector3::zeros();
        for c in 0..3 {
            let mut acc = 0.0;
            for j in 0..block_x {
                let i = c * block_x + j;
                acc += d_enc_x[i] * act.enc_x_deriv[i];
            }
            d_position[c] = acc;
        }
        let block_d = 1 + 2 * self.config.l_d;
        let d_enc_d = &d_inc[h..];
        let mut d_direction = Vector3::zeros();
        for c in 0..3 {
            let mut acc = 0.0;
            for j in 0..block_d {
                let i = c * block_d + j;
                acc += d_enc_d[i] * act.enc_d_deriv[i];
            }
            d_direction[c] = acc;
        }

        InputGradients {
            d_position,
            d_direction,
        }
    }

    fn set_c2f_alpha(&mut self, alpha: f64) {
        self.alpha = alpha.clamp(0.0, self.config.l_x as f64);
    }

    fn c2f_max_alpha(&self) -> f64 {
        self.config.l_x as f64
    }
}
