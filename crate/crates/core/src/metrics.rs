//! Image and trajectory evaluation: PSNR, single-scale SSIM, absolute
//! trajectory error with closed-form (optionally scaled) alignment, and
//! relative pose error for rotations.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Pose;
use crate::renderer::FloatImage;

/// Peak signal-to-noise ratio in dB for images with values in [0, 1].
/// Identical images report +infinity.
pub fn psnr(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    check_dims(a, b, "")?;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

fn check_dims(a: &FloatImage, b: &FloatImage, context: &str) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
            context: context.to_string(),
        });
    }
    Ok(())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn to_gray(img: &FloatImage) -> Vec<f64> {
    img.data
        .chunks(3)
        .map(|px| (px[0] + px[1] + px[2]) / 3.0)
        .collect()
}

/// Separable Gaussian filter, evaluated only where the window fits; output is
/// (width - 10) x (height - 10).
fn filter_valid(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let half = SSIM_WINDOW / 2;
    // horizontal pass
    let out_w = width - 2 * half;
    let mut tmp = vec![0.0; out_w * height];
    for y in 0..height {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * src[y * width + x + i];
            }
            tmp[y * out_w + x] = acc;
        }
    }
    // vertical pass
    let out_h = height - 2 * half;
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

/// Single-scale SSIM on the channel-mean grayscale: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over windows
/// that fit entirely inside the image.
pub fn ssim(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    check_dims(a, b, "")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Format(format!(
            "image {}x{} smaller than the {}x{} SSIM window",
            a.width, a.height, SSIM_WINDOW, SSIM_WINDOW
        )));
    }
    let (w, h) = (a.width, a.height);
    let ga = to_gray(a);
    let gb = to_gray(b);
    let mul: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();
    let sqa: Vec<f64> = ga.iter().map(|x| x * x).collect();
    let sqb: Vec<f64> = gb.iter().map(|x| x * x).collect();

    let mu_a = filter_valid(&ga, w, h);
    let mu_b = filter_valid(&gb, w, h);
    let e_ab = filter_valid(&mul, w, h);
    let e_aa = filter_valid(&sqa, w, h);
    let e_bb = filter_valid(&sqb, w, h);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(sum / mu_a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Se3,
    Sim3,
}

/// Closed-form least-squares alignment of `src` onto `dst`
/// (optionally with scale). Returns (scale, rotation, translation).
/// Near-collinear point sets fall back to translation-only alignment and
/// flag the degeneracy.
pub fn umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<(f64, Matrix3<f64>, Vector3<f64>, bool)> {
    if src.len() < 3 || src.len() != dst.len() {
        return Err(Error::TooFewSamples {
            got: src.len().min(dst.len()),
            need: 3,
        });
    }
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let cs = s - mu_s;
        let cd = d - mu_d;
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = svd.singular_values;

    // rank < 2 leaves the rotation about the common line unconstrained
    let degenerate = d[1] <= 1e-9 * d[0].max(1e-300);
    if degenerate {
        let scale = 1.0;
        return Ok((scale, Matrix3::identity(), mu_d - mu_s, true));
    }

    let mut s_fix = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s_fix[(2, 2)] = -1.0;
    }
    let rotation = u * s_fix * v_t;
    let scale = if with_scale {
        (d[0] + d[1] + d[2] * s_fix[(2, 2)]) / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok((scale, rotation, translation, false))
}

#[derive(Clone, Debug, Serialize)]
pub struct AteResult {
    pub rmse: f64,
    pub mean: f64,
    pub std: f64,
    pub per_sample: Vec<f64>,
    pub matched: usize,
    pub dropped: usize,
    /// Set when the geometry was too degenerate for a rotation estimate and
    /// translation-only alignment was used.
    pub degenerate: bool,
}

/// Nearest-neighbor timestamp association within `tol`; unmatched samples are
/// dropped (counted). Both inputs must be sorted by time.
fn associate(
    est: &[(f64, Pose)],
    reference: &[(f64, Pose)],
    tol: f64,
) -> (Vec<(usize, usize)>, usize) {
    let mut pairs = Vec::new();
    let mut dropped = 0;
    let mut j = 0usize;
    for (i, (t, _)) in est.iter().enumerate() {
        while j + 1 < reference.len()
            && (reference[j + 1].0 - t).abs() <= (reference[j].0 - t).abs()
        {
            j += 1;
        }
        if reference.is_empty() || (reference[j].0 - t).abs() > tol {
            dropped += 1;
        } else {
            pairs.push((i, j));
        }
    }
    (pairs, dropped)
}

fn association_tolerance(reference: &[(f64, Pose)]) -> f64 {
    if reference.len() < 2 {
        return f64::INFINITY;
    }
    let mut gaps: Vec<f64> = reference.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    gaps[gaps.len() / 2] / 2.0
}

/// Absolute trajectory error: align estimated positions onto the reference
/// (Umeyama; Sim3 solves the monocular scale too), then report per-sample
/// Euclidean errors.
pub fn ate(
    est: &[(f64, Pose)],
    reference: &[(f64, Pose)],
    alignment: Alignment,
) -> Result<AteResult> {
    let tol = association_tolerance(reference);
    let (pairs, dropped) = associate(est, reference, tol);
    if pairs.len() < 3 {
        return Err(Error::TooFewSamples {
            got: pairs.len(),
            need: 3,
        });
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est[i].1.translation).collect();
    let dst: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|&(_, j)| reference[j].1.translation)
        .collect();
    let (scale, rot, trans, degenerate) =
        umeyama(&src, &dst, matches!(alignment, Alignment::Sim3))?;

    let per_sample: Vec<f64> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (rot * s * scale + trans - d).norm())
        .collect();
    let n = per_sample.len() as f64;
    let mean = per_sample.iter().sum::<f64>() / n;
    let rmse = (per_sample.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let var = per_sample.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(AteResult {
        rmse,
        mean,
        std: var.sqrt(),
        per_sample,
        matched: pairs.len(),
        dropped,
        degenerate,
    })
}

/// Relative pose error for rotation, degrees per `delta` frames: the angle of
/// (R_ref_i^T R_ref_{i+d})^T (R_est_i^T R_est_{i+d}), mean and std over i.
/// Composed on quaternions with an atan2 angle so near-zero errors are not
/// drowned by the acos precision floor.
pub fn rpe_rot(
    est: &[(f64, Pose)],
    reference: &[(f64, Pose)],
    delta: usize,
) -> Result<(f64, f64)> {
    let tol = association_tolerance(reference);
    let (pairs, _) = associate(est, reference, tol);
    if pairs.len() < delta + 1 {
        return Err(Error::TooFewSamples {
            got: pairs.len(),
            need: delta + 1,
        });
    }
    let mut angles = Vec::new();
    for w in 0..pairs.len() - delta {
        let (i0, j0) = pairs[w];
        let (i1, j1) = pairs[w + delta];
        let rel_est = est[i0].1.rotation.inverse().compose(&est[i1].1.rotation);
        let rel_ref = reference[j0]
            .1
            .rotation
            .inverse()
            .compose(&reference[j1].1.rotation);
        angles.push(rel_ref.inverse().compose(&rel_est).angle().to_degrees());
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_se3, Rotation, Twist};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ramp_image(w: usize, h: usize, offset: f64) -> FloatImage {
        let mut img = FloatImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = ((x + y) as f64 / (w + h) as f64 + offset).clamp(0.0, 1.0);
                img.set(x, y, &Vector3::new(v, 1.0 - v, v * v));
            }
        }
        img
    }

    fn random_traj(rng: &mut StdRng, n: usize) -> Vec<(f64, Pose)> {
        let mut out = Vec::new();
        let mut pose = Pose::identity();
        for i in 0..n {
            let step = Twist::new(
                Vector3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                ),
                Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
            );
            pose = pose.compose(&exp_se3(&step));
            out.push((i as f64 * 0.1, pose));
        }
        out
    }

    #[test]
    fn psnr_identity_and_hand_values() {
        let a = ramp_image(32, 24, 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        // uniform difference of 0.1 -> MSE 0.01 -> 20 dB
        let mut flat_a = FloatImage::new(16, 16);
        let mut flat_b = FloatImage::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                flat_a.set(x, y, &Vector3::new(0.5, 0.5, 0.5));
                flat_b.set(x, y, &Vector3::new(0.6, 0.6, 0.6));
            }
        }
        assert!((psnr(&flat_a, &flat_b).unwrap() - 20.0).abs() < 1e-9);

        // black vs white -> MSE 1 -> 0 dB
        let black = FloatImage::new(8, 8);
        let mut white = FloatImage::new(8, 8);
        for v in white.data.iter_mut() {
            *v = 1.0;
        }
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = FloatImage::new(8, 8);
        let b = FloatImage::new(9, 8);
        assert!(matches!(
            psnr(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psnr_symmetry() {
        let a = ramp_image(20, 16, 0.0);
        let b = ramp_image(20, 16, 0.07);
        assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_negative_and_continuity() {
        let a = ramp_image(32, 24, 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        // a pure luminance gradient against its negative: structure is
        // perfectly anti-correlated, so the score goes negative
        let mut grad = FloatImage::new(32, 24);
        for y in 0..24 {
            for x in 0..32 {
                let v = 0.5 + 0.4 * ((x as f64 / 31.0) - 0.5) + 0.2 * ((y as f64 / 23.0) - 0.5);
                grad.set(x, y, &Vector3::new(v, v, v));
            }
        }
        let mut inv = grad.clone();
        for v in inv.data.iter_mut() {
            *v = 1.0 - *v;
        }
        assert!(ssim(&grad, &inv).unwrap() < 0.0);

        // constant images converging: score -> 1 continuously
        let mut c1 = FloatImage::new(16, 16);
        for v in c1.data.iter_mut() {
            *v = 0.3;
        }
        let mut prev = 0.0;
        for &delta in &[1e-1, 1e-2, 1e-3, 1e-4] {
            let mut c2 = c1.clone();
            for v in c2.data.iter_mut() {
                *v += delta;
            }
            let s = ssim(&c1, &c2).unwrap();
            assert!(s > prev);
            prev = s;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn ssim_symmetry() {
        let a = ramp_image(24, 20, 0.0);
        let b = ramp_image(24, 20, 0.05);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ate_zero_for_identical() {
        let mut rng = StdRng::seed_from_u64(31);
        let traj = random_traj(&mut rng, 20);
        let r = ate(&traj, &traj, Alignment::Se3).unwrap();
        assert!(r.rmse < 1e-12);
        assert_eq!(r.matched, 20);
        assert_eq!(r.dropped, 0);
    }

    #[test]
    fn ate_invariant_under_rigid_transform() {
        let mut rng = StdRng::seed_from_u64(32);
        let traj = random_traj(&mut rng, 25);
        let g = exp_se3(&Twist::new(
            Vector3::new(0.4, -0.2, 0.7),
            Vector3::new(5.0, -3.0, 2.0),
        ));
        let moved: Vec<(f64, Pose)> = traj.iter().map(|(t, p)| (*t, g.compose(p))).collect();
        let r = ate(&moved, &traj, Alignment::Se3).unwrap();
        assert!(r.rmse < 1e-9, "rmse {}", r.rmse);
    }

    #[test]
    fn ate_scale_ambiguity() {
        let mut rng = StdRng::seed_from_u64(33);
        let traj = random_traj(&mut rng, 25);
        let scaled: Vec<(f64, Pose)> = traj
            .iter()
            .map(|(t, p)| (*t, Pose::new(p.rotation, p.translation * 2.0)))
            .collect();
        let sim3 = ate(&scaled, &traj, Alignment::Sim3).unwrap();
        assert!(sim3.rmse < 1e-9);
        let se3 = ate(&scaled, &traj, Alignment::Se3).unwrap();
        assert!(se3.rmse > 1e-3);
    }

    #[test]
    fn ate_too_few_and_degenerate() {
        let two: Vec<(f64, Pose)> = (0..2)
            .map(|i| {
                (
                    i as f64,
                    Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                )
            })
            .collect();
        assert!(matches!(
            ate(&two, &two, Alignment::Se3),
            Err(Error::TooFewSamples { .. })
        ));

        // collinear points: rotation rank-deficient, translation-only fallback
        let line: Vec<(f64, Pose)> = (0..10)
            .map(|i| {
                (
                    i as f64,
                    Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                )
            })
            .collect();
        let shifted: Vec<(f64, Pose)> = line
            .iter()
            .map(|(t, p)| {
                (
                    *t,
                    Pose::from_translation(p.translation + Vector3::new(0.0, 1.0, 0.0)),
                )
            })
            .collect();
        let r = ate(&shifted, &line, Alignment::Se3).unwrap();
        assert!(r.degenerate);
        assert!(r.rmse < 1e-9);
    }

    #[test]
    fn rpe_rot_zero_and_offset_invariance() {
        let mut rng = StdRng::seed_from_u64(34);
        let traj = random_traj(&mut rng, 20);
        let (mean, _) = rpe_rot(&traj, &traj, 1).unwrap();
        assert!(mean < 1e-9);

        let g = Pose::from_rotation(Rotation::exp(&Vector3::new(0.3, 0.5, -0.2)));
        let offset: Vec<(f64, Pose)> = traj.iter().map(|(t, p)| (*t, g.compose(p))).collect();
        let (mean, _) = rpe_rot(&offset, &traj, 1).unwrap();
        assert!(mean < 1e-9, "mean {mean}");
    }

    #[test]
    fn rpe_rot_detects_constant_drift() {
        // estimate accumulates an extra 1 degree of yaw per frame
        let n = 30;
        let reference: Vec<(f64, Pose)> = (0..n)
            .map(|i| {
                (
                    i as f64 * 0.1,
                    Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                )
            })
            .collect();
        let est: Vec<(f64, Pose)> = (0..n)
            .map(|i| {
                let yaw = (i as f64).to_radians();
                (
                    i as f64 * 0.1,
                    Pose::new(
                        Rotation::exp(&Vector3::new(0.0, 0.0, yaw)),
                        Vector3::new(i as f64, 0.0, 0.0),
                    ),
                )
            })
            .collect();
        let (mean, std) = rpe_rot(&est, &reference, 1).unwrap();
        assert!((mean - 1.0).abs() < 1e-9);
        assert!(std < 1e-9);
    }

    #[test]
    fn association_drops_unmatched() {
        let reference: Vec<(f64, Pose)> = (0..10).map(|i| (i as f64, Pose::identity())).collect();
        let mut est = reference.clone();
        est.push((99.0, Pose::identity())); // far outside any tolerance
        let tol = association_tolerance(&reference);
        let (pairs, dropped) = associate(&est, &reference, tol);
        assert_eq!(pairs.len(), 10);
        assert_eq!(dropped, 1);
    }
}
