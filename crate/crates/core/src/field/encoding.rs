//! Fourier positional encoding with the coarse-to-fine band window.
//!
//! Each input coordinate p expands to (p, sin(2^k pi p), cos(2^k pi p)) for
//! k = 0..L-1. Band k is scaled by a window w_k(alpha) that ramps smoothly
//! from 0 to 1 as the progress alpha sweeps past k, so low frequencies come
//! online first during joint pose/field optimization.

/// Window for band k at progress alpha:
/// 0 below k, raised-cosine ramp across [k, k+1), 1 above.
pub fn band_window(k: usize, alpha: f64) -> f64 {
    let x = alpha - k as f64;
    if x < 0.0 {
        0.0
    } else if x < 1.0 {
        0.5 * (1.0 - (x * std::f64::consts::PI).cos())
    } else {
        1.0
    }
}

/// Encoded length for `dims` input coordinates at order `l`.
pub fn encoded_len(dims: usize, l: usize) -> usize {
    dims * (1 + 2 * l)
}

/// Encode `input` at order `l` and progress `alpha` into `out`
/// (cleared first). Layout per coordinate: raw, then (sin, cos) per band.
pub fn positional_encoding(input: &[f64], l: usize, alpha: f64, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(encoded_len(input.len(), l));
    for &p in input {
        out.push(p);
        for k in 0..l {
            let w = band_window(k, alpha);
            let arg = (1u64 << k) as f64 * std::f64::consts::PI * p;
            out.push(w * arg.sin());
            out.push(w * arg.cos());
        }
    }
}

/// Encoding plus the derivative of each output w.r.t. its own input
/// coordinate (every output depends on exactly one coordinate).
pub fn positional_encoding_with_deriv(
    input: &[f64],
    l: usize,
    alpha: f64,
    out: &mut Vec<f64>,
    deriv: &mut Vec<f64>,
) {
    out.clear();
    deriv.clear();
    for &p in input {
        out.push(p);
        deriv.push(1.0);
        for k in 0..l {
            let w = band_window(k, alpha);
            let freq = (1u64 << k) as f64 * std::f64::consts::PI;
            let arg = freq * p;
            out.push(w * arg.sin());
            deriv.push(w * freq * arg.cos());
            out.push(w * arg.cos());
            deriv.push(-w * freq * arg.sin());
        }
    }
}
