//! Continuous-time camera trajectories.
//!
//! The main model is a cumulative cubic B-spline on SE(3): four consecutive
//! control knots on a uniform time grid determine the pose at any query time,
//! composed as `T_k * prod_j exp(Btilde(u)_{j+1} * Omega_{k+j})` with
//! `Omega_i = log(T_i^{-1} T_{i+1})`. Three ablation variants are exposed:
//! linear interpolation between knots, and per-frame independent ("nodep")
//! groups of 4 (cubic) or 2 (linear) knots spanning one frame's readout window.
//!
//! All variants report analytic Jacobians of the queried pose with respect to
//! left perturbations of the influencing knots, so the optimizer can chain
//! photometric gradients back onto the knot parameters.

use nalgebra::{Matrix6, Vector4};

use crate::error::{Error, Result};
use crate::lie::{
    adjoint, exp_se3, log_se3, se3_left_jacobian, se3_left_jacobian_inv, Pose, Twist,
};

/// Interpolation scheme and knot layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    CubicDep,
    LinearDep,
    CubicNodep,
    LinearNodep,
}

impl TrajectoryKind {
    pub fn is_cubic(&self) -> bool {
        matches!(self, TrajectoryKind::CubicDep | TrajectoryKind::CubicNodep)
    }

    pub fn is_nodep(&self) -> bool {
        matches!(self, TrajectoryKind::CubicNodep | TrajectoryKind::LinearNodep)
    }

    /// Knots per frame for the nodep layouts.
    pub fn knots_per_frame(&self) -> usize {
        if self.is_cubic() {
            4
        } else {
            2
        }
    }
}

/// Per-frame layout for the nodep variants: each frame owns its own knot group
/// spanning exactly that frame's row-readout window.
#[derive(Clone, Debug)]
pub struct NodepLayout {
    pub frame_starts: Vec<f64>,
    /// Readout span of one frame (rows * line_readout).
    pub span: f64,
}

/// Ordered control knots plus timing metadata.
#[derive(Clone, Debug)]
pub struct TrajectoryModel {
    kind: TrajectoryKind,
    knots: Vec<Pose>,
    t0: f64,
    dt: f64,
    nodep: Option<NodepLayout>,
}

/// Jacobian of the queried pose w.r.t. a left perturbation of one knot.
#[derive(Clone, Debug)]
pub struct KnotJacobian {
    pub knot: usize,
    pub jacobian: Matrix6<f64>,
}

/// Segment lookup for the cubic spline: k = floor((t - t0)/dt), u the
/// fractional remainder. Valid window is [t0, t0 + (n_knots - 3) * dt]; the
/// exact right endpoint is accepted by clamping to the final segment at u = 1.
pub fn segment_index(t: f64, t0: f64, dt: f64, n_knots: usize) -> Result<(usize, f64)> {
    debug_assert!(dt > 0.0 && n_knots >= 4);
    let n_segments = n_knots - 3;
    let end = t0 + n_segments as f64 * dt;
    let s = (t - t0) / dt;
    if !(t >= t0 && t <= end) {
        return Err(Error::TimeOutOfRange { t, start: t0, end });
    }
    let mut k = s.floor() as isize;
    if k < 0 {
        k = 0;
    }
    let mut k = k as usize;
    let mut u = s - k as f64;
    if k >= n_segments {
        // only reachable at the exact right endpoint
        k = n_segments - 1;
        u = 1.0;
    }
    Ok((k, u))
}

/// Cumulative basis Btilde(u) = C (1, u, u^2, u^3)^T with
/// C = (1/6) [[6,0,0,0],[5,3,-3,1],[1,3,3,-2],[0,0,0,1]].
pub fn cumulative_basis(u: f64) -> Vector4<f64> {
    let u2 = u * u;
    let u3 = u2 * u;
    Vector4::new(
        1.0,
        (5.0 + 3.0 * u - 3.0 * u2 + u3) / 6.0,
        (1.0 + 3.0 * u + 3.0 * u2 - 2.0 * u3) / 6.0,
        u3 / 6.0,
    )
}

/// Append `count` knots by constant-velocity extrapolation:
/// T_{n+i} = T_n (T_{n-1}^{-1} T_n)^i. Virtual knots are ordinary optimizable
/// knots; they exist so the last frames' row times keep spline support.
pub fn pad_virtual_knots(knots: &[Pose], count: usize) -> Vec<Pose> {
    assert!(knots.len() >= 2, "need at least 2 knots to extrapolate");
    let mut out = knots.to_vec();
    let last = knots[knots.len() - 1];
    let step = knots[knots.len() - 2].inverse().compose(&last);
    let mut cur = last;
    for _ in 0..count {
        cur = cur.compose(&step);
        out.push(cur);
    }
    out
}

impl TrajectoryModel {
    pub fn cubic_dep(knots: Vec<Pose>, t0: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::config("trajectory.dt", "knot spacing must be > 0"));
        }
        if knots.len() < 4 {
            return Err(Error::config(
                "trajectory.knots",
                format!("cubic spline needs >= 4 knots, got {}", knots.len()),
            ));
        }
        Ok(TrajectoryModel {
            kind: TrajectoryKind::CubicDep,
            knots,
            t0,
            dt,
            nodep: None,
        })
    }

    pub fn linear_dep(knots: Vec<Pose>, t0: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::config("trajectory.dt", "knot spacing must be > 0"));
        }
        if knots.len() < 2 {
            return Err(Error::config(
                "trajectory.knots",
                format!("linear interpolation needs >= 2 knots, got {}", knots.len()),
            ));
        }
        Ok(TrajectoryModel {
            kind: TrajectoryKind::LinearDep,
            knots,
            t0,
            dt,
            nodep: None,
        })
    }

    /// Nodep constructor: `knots` grouped per frame (4 per frame cubic,
    /// 2 per frame linear), each group spanning [start, start + span].
    pub fn nodep(
        kind: TrajectoryKind,
        knots: Vec<Pose>,
        frame_starts: Vec<f64>,
        span: f64,
    ) -> Result<Self> {
        if !kind.is_nodep() {
            return Err(Error::config("trajectory.kind", "expected a nodep kind"));
        }
        if span <= 0.0 {
            return Err(Error::config("trajectory.span", "readout span must be > 0"));
        }
        let kpf = kind.knots_per_frame();
        if frame_starts.is_empty() || knots.len() != kpf * frame_starts.len() {
            return Err(Error::config(
                "trajectory.knots",
                format!(
                    "nodep expects {} knots per frame ({} frames, got {} knots)",
                    kpf,
                    frame_starts.len(),
                    knots.len()
                ),
            ));
        }
        if frame_starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "trajectory.frame_starts",
                "frame starts must be strictly increasing",
            ));
        }
        let t0 = frame_starts[0];
        Ok(TrajectoryModel {
            kind,
            knots,
            t0,
            dt: span,
            nodep: Some(NodepLayout { frame_starts, span }),
        })
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn knots(&self) -> &[Pose] {
        &self.knots
    }

    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodep_layout(&self) -> Option<&NodepLayout> {
        self.nodep.as_ref()
    }

    pub fn set_knot(&mut self, i: usize, pose: Pose) {
        self.knots[i] = pose;
    }

    /// Left-update every knot: knot_i <- exp(update_i) * knot_i.
    pub fn apply_left_updates(&mut self, updates: &[Twist]) {
        assert_eq!(updates.len(), self.knots.len());
        for (knot, upd) in self.knots.iter_mut().zip(updates) {
            *knot = exp_se3(upd).compose(knot);
        }
    }

    /// Supported query window [start, end] (closed right endpoint).
    pub fn valid_window(&self) -> (f64, f64) {
        match (&self.nodep, self.kind) {
            (Some(layout), _) => (
                layout.frame_starts[0],
                layout.frame_starts[layout.frame_starts.len() - 1] + layout.span,
            ),
            (None, TrajectoryKind::CubicDep) => (
                self.t0,
                self.t0 + (self.knots.len() - 3) as f64 * self.dt,
            ),
            (None, _) => (
                self.t0,
                self.t0 + (self.knots.len() - 1) as f64 * self.dt,
            ),
        }
    }

    /// Locate the knot group and local interpolation parameter for a query.
    /// Returns (base knot index, u, basis size).
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if let Some(layout) = &self.nodep {
            let starts = &layout.frame_starts;
            // frame = last start <= t
            let frame = match starts.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
                Ok(i) => i,
                Err(0) => {
                    let (start, end) = self.valid_window();
                    return Err(Error::TimeOutOfRange { t, start, end });
                }
                Err(i) => i - 1,
            };
            let u = (t - starts[frame]) / layout.span;
            if !(0.0..=1.0).contains(&u) {
                let (start, end) = self.valid_window();
                return Err(Error::TimeOutOfRange { t, start, end });
            }
            Ok((frame * self.kind.knots_per_frame(), u))
        } else if self.kind.is_cubic() {
            segment_index(t, self.t0, self.dt, self.knots.len())
        } else {
            // linear segments: k in [0, n-2], right endpoint closed
            let n = self.knots.len();
            let end = self.t0 + (n - 1) as f64 * self.dt;
            let s = (t - self.t0) / self.dt;
            if !(t >= self.t0 && t <= end) {
                return Err(Error::TimeOutOfRange {
                    t,
                    start: self.t0,
                    end,
                });
            }
            let mut k = (s.floor() as isize).max(0) as usize;
            let mut u = s - k as f64;
            if k >= n - 1 {
                k = n - 2;
                u = 1.0;
            }
            Ok((k, u))
        }
    }

    /// Pose at time `t`.
    pub fn query_pose(&self, t: f64) -> Result<Pose> {
        let (base, u) = self.locate(t)?;
        if self.kind.is_cubic() {
            let basis = cumulative_basis(u);
            let mut pose = self.knots[base];
            for j in 0..3 {
                let omega = log_se3(
                    &self.knots[base + j]
                        .inverse()
                        .compose(&self.knots[base + j + 1]),
                )?;
                pose = pose.compose(&exp_se3(&omega.scaled(basis[j + 1])));
            }
            Ok(pose)
        } else {
            let omega = log_se3(&self.knots[base].inverse().compose(&self.knots[base + 1]))?;
            Ok(self.knots[base].compose(&exp_se3(&omega.scaled(u))))
        }
    }

    /// Pose at time `t` plus the 6x6 Jacobians w.r.t. left perturbations of
    /// each influencing knot. Chain rule on the cumulative product:
    /// a perturbation of knot i enters each factor exp(B_j Omega_j) through
    /// Omega_j = log(T^{-1} T'), giving
    /// M_j = Ad(P_{j-1}) J_l(B_j Omega_j) B_j J_l^{-1}(Omega_j) Ad(T_{left}^{-1}),
    /// which contributes +M_j to the right knot and -M_j to the left knot of
    /// segment j; the base knot additionally contributes the identity.
    pub fn query_pose_with_jacobians(&self, t: f64) -> Result<(Pose, Vec<KnotJacobian>)> {
        let (base, u) = self.locate(t)?;
        let (weights, span): (Vec<f64>, usize) = if self.kind.is_cubic() {
            let basis = cumulative_basis(u);
            (vec![basis[1], basis[2], basis[3]], 3)
        } else {
            (vec![u], 1)
        };

        let mut jacobians: Vec<Matrix6<f64>> = vec![Matrix6::zeros(); span + 1];
        jacobians[0] = Matrix6::identity();

        let mut prefix = self.knots[base];
        for j in 0..span {
            let left = &self.knots[base + j];
            let omega = log_se3(&left.inverse().compose(&self.knots[base + j + 1]))?;
            let b = weights[j];
            let scaled = omega.scaled(b);
            let m = adjoint(&prefix)
                * se3_left_jacobian(&scaled)
                * b
                * se3_left_jacobian_inv(&omega)
                * adjoint(&left.inverse());
            jacobians[j] -= m;
            jacobians[j + 1] += m;
            prefix = prefix.compose(&exp_se3(&scaled));
        }

        let out = jacobians
            .into_iter()
            .enumerate()
            .map(|(j, jacobian)| KnotJacobian {
                knot: base + j,
                jacobian,
            })
            .collect();
        Ok((prefix, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{left_delta, Rotation};
    use nalgebra::{Matrix4 as NaMatrix4, Vector3, Vector6};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut StdRng, angle: f64, trans: f64) -> Pose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        Pose::new(
            Rotation::exp(&(axis * rng.gen_range(-angle..angle))),
            Vector3::new(
                rng.gen_range(-trans..trans),
                rng.gen_range(-trans..trans),
                rng.gen_range(-trans..trans),
            ),
        )
    }

    fn smooth_knots(rng: &mut StdRng, n: usize) -> Vec<Pose> {
        // a random walk of modest relative motions, like real frame-to-frame deltas
        let mut knots = vec![random_pose(rng, 0.5, 1.0)];
        for _ in 1..n {
            let step = Twist::new(
                Vector3::new(
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                ),
                Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ),
            );
            let prev = *knots.last().unwrap();
            knots.push(prev.compose(&exp_se3(&step)));
        }
        knots
    }

    // Oracle: the basis is literally C * (1, u, u^2, u^3)^T.
    fn basis_oracle(u: f64) -> Vector4<f64> {
        let c = NaMatrix4::new(
            6.0, 0.0, 0.0, 0.0, //
            5.0, 3.0, -3.0, 1.0, //
            1.0, 3.0, 3.0, -2.0, //
            0.0, 0.0, 0.0, 1.0,
        ) / 6.0;
        c * Vector4::new(1.0, u, u * u, u * u * u)
    }

    #[test]
    fn cumulative_basis_matches_matrix_oracle() {
        for &u in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            let got = cumulative_basis(u);
            let want = basis_oracle(u);
            assert!((got - want).norm() < 1e-15, "u = {u}");
        }
        // frozen endpoint values from the oracle
        assert!((cumulative_basis(0.0) - Vector4::new(1.0, 5.0 / 6.0, 1.0 / 6.0, 0.0)).norm() < 1e-15);
        assert!((cumulative_basis(1.0) - Vector4::new(1.0, 1.0, 5.0 / 6.0, 1.0 / 6.0)).norm() < 1e-15);
        // oracle value at u = 1/2: (1, 47/48, 1/2, 1/48)
        assert!(
            (cumulative_basis(0.5) - Vector4::new(1.0, 47.0 / 48.0, 0.5, 1.0 / 48.0)).norm()
                < 1e-15
        );
    }

    #[test]
    fn basis_first_entry_is_one_and_entries_in_unit_range() {
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            let b = cumulative_basis(u);
            assert_eq!(b[0], 1.0);
            for j in 1..4 {
                assert!((-1e-12..=1.0 + 1e-12).contains(&b[j]));
            }
        }
    }

    #[test]
    fn segment_index_examples() {
        let (k, u) = segment_index(0.0, 0.0, 0.1, 8).unwrap();
        assert_eq!(k, 0);
        assert!(u.abs() < 1e-12);

        let (k, u) = segment_index(0.25, 0.0, 0.1, 8).unwrap();
        assert_eq!(k, 2);
        assert!((u - 0.5).abs() < 1e-12);

        assert!(matches!(
            segment_index(-0.01, 0.0, 0.1, 8),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn segment_index_right_endpoint_clamps() {
        // 8 knots -> 5 segments, window [0, 0.5]
        let (k, u) = segment_index(0.5, 0.0, 0.1, 8).unwrap();
        assert_eq!(k, 4);
        assert!((u - 1.0).abs() < 1e-12);
        assert!(segment_index(0.5 + 1e-9, 0.0, 0.1, 8).is_err());
    }

    #[test]
    fn constant_knots_give_constant_pose() {
        let mut rng = StdRng::seed_from_u64(3);
        let p = random_pose(&mut rng, 1.0, 2.0);
        let traj = TrajectoryModel::cubic_dep(vec![p; 6], 0.0, 0.5).unwrap();
        for i in 0..=10 {
            let t = 1.5 * i as f64 / 10.0;
            let q = traj.query_pose(t).unwrap();
            assert!((q.translation - p.translation).norm() < 1e-12);
            assert!((q.rotation.matrix() - p.rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_knots_hand_expansion() {
        // knots (0,0,0),(1,0,0),(2,0,0),(3,0,0): commuting translations, so
        // T(u=0) = T0 * exp(5/6 O0) * exp(1/6 O1) = translation(5/6 + 1/6) = (1,0,0)
        let knots: Vec<Pose> = (0..4)
            .map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)))
            .collect();
        let traj = TrajectoryModel::cubic_dep(knots, 0.0, 1.0).unwrap();
        let p = traj.query_pose(0.0).unwrap();
        assert!((p.translation - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn linear_midpoint() {
        let knots = vec![
            Pose::identity(),
            Pose::from_translation(Vector3::new(2.0, 0.0, 0.0)),
        ];
        let traj = TrajectoryModel::linear_dep(knots, 0.0, 1.0).unwrap();
        let p = traj.query_pose(0.5).unwrap();
        assert!((p.translation - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn screw_motion_is_reproduced_exactly() {
        // knots on a one-parameter subgroup: T_i = exp(i xi). The cumulative
        // spline then evaluates to exp((k + u + 1) xi); check against that.
        let xi = Twist::new(Vector3::new(0.02, -0.05, 0.04), Vector3::new(0.1, 0.2, -0.15));
        let knots: Vec<Pose> = (0..8).map(|i| exp_se3(&xi.scaled(i as f64))).collect();
        let traj = TrajectoryModel::cubic_dep(knots, 0.0, 1.0).unwrap();
        for i in 0..=20 {
            let t = 5.0 * i as f64 / 20.0;
            let got = traj.query_pose(t).unwrap();
            let want = exp_se3(&xi.scaled(t + 1.0));
            assert!((got.translation - want.translation).norm() < 1e-9);
            assert!((got.rotation.matrix() - want.rotation.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn segment_boundaries_are_consistent() {
        let mut rng = StdRng::seed_from_u64(5);
        let knots = smooth_knots(&mut rng, 8);
        let traj = TrajectoryModel::cubic_dep(knots, 0.0, 0.25).unwrap();
        // pose approached from segment k at u->1 equals segment k+1 at u=0
        for k in 0..4usize {
            let t = 0.25 * (k + 1) as f64;
            let lo = traj.query_pose(t - 1e-13).unwrap();
            let hi = traj.query_pose(t).unwrap();
            assert!((lo.translation - hi.translation).norm() < 1e-9);
            assert!((lo.rotation.matrix() - hi.rotation.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn c1_continuity_at_segment_boundaries() {
        // one-sided secants straddle the boundary with centers 2h apart, so a
        // smooth acceleration contributes O(h * acc); keep motions gentle so
        // any true velocity jump would dominate that term.
        let mut rng = StdRng::seed_from_u64(6);
        let mut knots = vec![Pose::identity()];
        for _ in 1..9 {
            let step = Twist::new(
                Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ),
                Vector3::new(
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.08..0.08),
                    rng.gen_range(-0.08..0.08),
                ),
            );
            let prev = *knots.last().unwrap();
            knots.push(prev.compose(&exp_se3(&step)));
        }
        let dt = 1.0;
        let traj = TrajectoryModel::cubic_dep(knots, 0.0, dt).unwrap();
        let h = 1e-5 * dt;
        for k in 1..5usize {
            let t = dt * k as f64;
            let vel = |a: f64, b: f64| -> Vector6<f64> {
                let pa = traj.query_pose(a).unwrap();
                let pb = traj.query_pose(b).unwrap();
                left_delta(&pb, &pa).unwrap().to_vector() / (b - a)
            };
            let left = vel(t - 2.0 * h, t);
            let right = vel(t, t + 2.0 * h);
            assert!(
                (left - right).norm() < 1e-5 * left.norm().max(1.0),
                "velocity jump at boundary {k}: {} vs {}",
                left,
                right
            );
        }
    }

    #[test]
    fn left_invariance_under_global_transform() {
        let mut rng = StdRng::seed_from_u64(8);
        let knots = smooth_knots(&mut rng, 7);
        let g = random_pose(&mut rng, 1.2, 3.0);
        let traj = TrajectoryModel::cubic_dep(knots.clone(), 0.0, 0.5).unwrap();
        let moved = TrajectoryModel::cubic_dep(
            knots.iter().map(|k| g.compose(k)).collect(),
            0.0,
            0.5,
        )
        .unwrap();
        for i in 0..=16 {
            let t = 2.0 * i as f64 / 16.0;
            let a = g.compose(&traj.query_pose(t).unwrap());
            let b = moved.query_pose(t).unwrap();
            assert!((a.translation - b.translation).norm() < 1e-12);
            assert!((a.rotation.matrix() - b.rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn pad_constant_velocity_translations() {
        let knots = vec![
            Pose::identity(),
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
        ];
        let padded = pad_virtual_knots(&knots, 3);
        assert_eq!(padded.len(), 5);
        for (i, p) in padded.iter().enumerate() {
            assert!((p.translation - Vector3::new(i as f64, 0.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn pad_equal_knots_stay_equal() {
        let mut rng = StdRng::seed_from_u64(9);
        let p = random_pose(&mut rng, 1.0, 1.0);
        let padded = pad_virtual_knots(&[p, p], 3);
        for q in &padded {
            assert!((q.translation - p.translation).norm() < 1e-12);
            assert!((q.rotation.matrix() - p.rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn pad_repeats_relative_rotation() {
        let deg = 10.0f64.to_radians();
        let knots = vec![
            Pose::identity(),
            Pose::from_rotation(Rotation::exp(&Vector3::new(0.0, 0.0, deg))),
        ];
        let padded = pad_virtual_knots(&knots, 3);
        for (i, p) in padded.iter().enumerate() {
            let want = Rotation::exp(&Vector3::new(0.0, 0.0, deg * i as f64));
            assert!((p.rotation.matrix() - want.matrix()).norm() < 1e-12, "knot {i}");
        }
    }

    /// Finite-difference oracle for the knot Jacobians: perturb knot `i` by
    /// exp(+-h e_c) on the left and measure the output pose's left delta.
    fn fd_knot_jacobian(traj: &TrajectoryModel, t: f64, knot: usize) -> Matrix6<f64> {
        let h = 1e-5;
        let mut j = Matrix6::zeros();
        for c in 0..6 {
            let mut dir = Vector6::zeros();
            dir[c] = 1.0;
            let eps = Twist::from_vector(&(dir * h));

            let mut plus = traj.clone();
            plus.set_knot(knot, exp_se3(&eps).compose(&traj.knots()[knot]));
            let mut minus = traj.clone();
            minus.set_knot(knot, exp_se3(&eps.scaled(-1.0)).compose(&traj.knots()[knot]));

            let pp = plus.query_pose(t).unwrap();
            let pm = minus.query_pose(t).unwrap();
            let delta = left_delta(&pp, &pm).unwrap().to_vector() / (2.0 * h);
            j.set_column(c, &delta);
        }
        j
    }

    #[test]
    fn knot_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(10);
        for trial in 0..30 {
            let knots = smooth_knots(&mut rng, 7);
            let traj = if trial % 2 == 0 {
                TrajectoryModel::cubic_dep(knots, 0.0, 0.5).unwrap()
            } else {
                TrajectoryModel::linear_dep(knots, 0.0, 0.5).unwrap()
            };
            let (start, end) = traj.valid_window();
            let t = rng.gen_range(start..end);
            let (_, jacs) = traj.query_pose_with_jacobians(t).unwrap();
            for kj in &jacs {
                let fd = fd_knot_jacobian(&traj, t, kj.knot);
                let scale = fd.norm().max(1e-6);
                assert!(
                    (kj.jacobian - fd).norm() / scale < 1e-4,
                    "trial {trial} knot {} rel err {}",
                    kj.knot,
                    (kj.jacobian - fd).norm() / scale
                );
            }
        }
    }

    #[test]
    fn jacobians_sum_to_identity_for_constant_trajectory() {
        let mut rng = StdRng::seed_from_u64(12);
        let p = random_pose(&mut rng, 0.8, 1.5);
        let traj = TrajectoryModel::cubic_dep(vec![p; 6], 0.0, 1.0).unwrap();
        let (_, jacs) = traj.query_pose_with_jacobians(1.3).unwrap();
        let sum: Matrix6<f64> = jacs.iter().map(|kj| kj.jacobian).sum();
        assert!((sum - Matrix6::identity()).norm() < 1e-10);
    }

    #[test]
    fn linear_jacobian_at_segment_start() {
        // at u=0 the pose is exactly T_k: full sensitivity to T_k, none to T_{k+1}
        let knots = vec![
            Pose::identity(),
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
        ];
        let traj = TrajectoryModel::linear_dep(knots, 0.0, 1.0).unwrap();
        let (_, jacs) = traj.query_pose_with_jacobians(0.0).unwrap();
        assert!((jacs[0].jacobian - Matrix6::identity()).norm() < 1e-12);
        assert!(jacs[1].jacobian.norm() < 1e-12);
    }

    #[test]
    fn nodep_layouts_query_and_differentiate() {
        let mut rng = StdRng::seed_from_u64(14);
        let frame_starts = vec![0.0, 0.1, 0.2];
        let span = 0.06;
        for kind in [TrajectoryKind::CubicNodep, TrajectoryKind::LinearNodep] {
            let kpf = kind.knots_per_frame();
            let knots = smooth_knots(&mut rng, kpf * frame_starts.len());
            let traj =
                TrajectoryModel::nodep(kind, knots, frame_starts.clone(), span).unwrap();
            // inside readout windows: fine; in the blanking gap: out of range
            assert!(traj.query_pose(0.13).is_ok());
            assert!(matches!(
                traj.query_pose(0.08),
                Err(Error::TimeOutOfRange { .. })
            ));
            let t = 0.1 + 0.7 * span;
            let (_, jacs) = traj.query_pose_with_jacobians(t).unwrap();
            assert_eq!(jacs.len(), kpf);
            assert_eq!(jacs[0].knot, kpf); // second frame's group
            for kj in &jacs {
                let fd = fd_knot_jacobian(&traj, t, kj.knot);
                assert!((kj.jacobian - fd).norm() / fd.norm().max(1e-6) < 1e-4);
            }
        }
    }
}
