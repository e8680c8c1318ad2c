//! Flipper geometry and the joint-space to task-space force map.
//!
//! The flipper is a rigid rectangular plate hanging at the end of an arm of
//! length `l`. The sweeping joint (`alpha`) rotates the arm about a vertical
//! axis; the adduction joint (`beta`) tilts it downward, so the tip sits at
//! `hip_height - l sin(beta)` above the undisturbed mud surface regardless of
//! `alpha`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard on `cos²α·cosβ` (that is, `l²·det M`, dimensionless).
pub const SINGULARITY_EPS: f64 = 1e-9;

/// Floor on `|cos β|` inside the tilted-plate projection.
const COS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipperGeometry {
    /// Arm length from the sweeping axis to the plate, m.
    pub arm_length: f64,
    /// Plate width, m.
    pub width: f64,
    /// Plate length along the arm's downward direction, m.
    pub height: f64,
    /// Plate thickness, m.
    pub thickness: f64,
    /// Height of the joint axes above the mud surface, m.
    pub hip_height: f64,
}

impl Default for FlipperGeometry {
    fn default() -> Self {
        Self { arm_length: 0.115, width: 0.025, height: 0.07, thickness: 0.005, hip_height: 0.01 }
    }
}

impl FlipperGeometry {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("arm_length", self.arm_length),
            ("width", self.width),
            ("height", self.height),
            ("thickness", self.thickness),
        ];
        for (name, v) in dims {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("geometry.{name} must be > 0, got {v}")));
            }
        }
        if !(self.hip_height.is_finite() && self.hip_height >= 0.0) {
            return Err(Error::config("geometry.hip_height must be >= 0"));
        }
        if self.hip_height >= self.arm_length {
            return Err(Error::config("geometry.hip_height must be below arm_length"));
        }
        Ok(())
    }

    /// Tip height above the mud reference plane for a pose.
    pub fn tip_height(&self, pose: JointPose) -> f64 {
        self.hip_height - self.arm_length * pose.beta.sin()
    }

    /// Tip depth below the reference plane (negative when above).
    pub fn tip_depth(&self, pose: JointPose) -> f64 {
        -self.tip_height(pose)
    }

    /// Adduction angle placing the tip at `depth` below the reference plane.
    pub fn beta_for_depth(&self, depth: f64) -> Result<f64> {
        let s = (depth + self.hip_height) / self.arm_length;
        // keep a margin from the beta = 90° singularity
        if !s.is_finite() || s.abs() > 0.98 {
            return Err(Error::WorkspaceExceeded { depth });
        }
        Ok(s.asin())
    }

    /// Radius of the horizontal circle the tip follows during a sweep.
    pub fn sweep_radius(&self, beta: f64) -> f64 {
        self.arm_length * beta.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointPose {
    pub alpha: f64,
    pub beta: f64,
}

impl JointPose {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointTorques {
    pub tau1: f64,
    pub tau2: f64,
}

/// Task-space force on one flipper. `fy` is `None` when it was not sensed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceVector {
    pub fx: f64,
    pub fy: Option<f64>,
    pub fz: f64,
}

impl ForceVector {
    pub fn planar(fx: f64, fz: f64) -> Self {
        Self { fx, fy: None, fz }
    }
}

/// `[fx; fz] = M · [tau1; tau2]`.
pub fn force_map_matrix(pose: JointPose, geom: &FlipperGeometry) -> Matrix2<f64> {
    let l = geom.arm_length;
    let (sa, ca) = pose.alpha.sin_cos();
    let (sb, cb) = pose.beta.sin_cos();
    Matrix2::new(ca / l, 0.0, -sb * sa / l, cb * ca / l)
}

pub fn torques_to_forces(tau: JointTorques, pose: JointPose, geom: &FlipperGeometry) -> ForceVector {
    let f = force_map_matrix(pose, geom) * Vector2::new(tau.tau1, tau.tau2);
    ForceVector::planar(f[0], f[1])
}

/// Inverse of [`torques_to_forces`] on the (fx, fz) subspace.
pub fn forces_to_torques(f: ForceVector, pose: JointPose, geom: &FlipperGeometry) -> Result<JointTorques> {
    let (sa, ca) = pose.alpha.sin_cos();
    let (sb, cb) = pose.beta.sin_cos();
    if (ca * ca * cb).abs() < SINGULARITY_EPS || !ca.is_finite() || !cb.is_finite() {
        return Err(Error::SingularPose { alpha: pose.alpha, beta: pose.beta });
    }
    let l = geom.arm_length;
    // lower-triangular solve
    let tau1 = f.fx * l / ca;
    let tau2 = (f.fz * l + sb * sa * tau1) / (cb * ca);
    Ok(JointTorques { tau1, tau2 })
}

/// The part of the plate below the mud surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmergedGeometry {
    /// Insertion depth of the tip, m.
    pub depth: f64,
    /// Projected area perpendicular to vertical motion at full depth, m².
    pub vertical_area: f64,
    width: f64,
    thickness: f64,
    plate_height: f64,
    cos_beta: f64,
    sin_beta: f64,
}

impl SubmergedGeometry {
    /// Projected vertical area of a plate whose tip is `z` deep.
    pub fn area_at(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        let wetted = (z / self.cos_beta).min(self.plate_height);
        self.width * (self.thickness * self.cos_beta + wetted * self.sin_beta)
    }

    /// Projected width at depth `z'` below the surface, for shear integrals.
    pub fn width_at(&self, z: f64) -> f64 {
        if z >= 0.0 && z <= self.depth && self.depth > 0.0 {
            self.width
        } else {
            0.0
        }
    }

    /// `∫₀^depth A(z) dz`, closed form.
    pub fn area_integral(&self) -> f64 {
        let z = self.depth;
        if z <= 0.0 {
            return 0.0;
        }
        let c = self.cos_beta;
        let hc = self.plate_height * c;
        let tilted =
            if z <= hc { z * z / (2.0 * c) } else { self.plate_height * hc / 2.0 + self.plate_height * (z - hc) };
        self.width * (self.thickness * c * z + self.sin_beta * tilted)
    }

    /// `∫₀^depth width(z)·z dz`, closed form.
    pub fn shear_integral(&self) -> f64 {
        let z = self.depth.max(0.0);
        self.width * z * z / 2.0
    }
}

pub fn submerged_geometry(pose: JointPose, geom: &FlipperGeometry, tip_depth: f64) -> SubmergedGeometry {
    let depth = tip_depth.max(0.0);
    let mut sub = SubmergedGeometry {
        depth,
        vertical_area: 0.0,
        width: geom.width,
        thickness: geom.thickness,
        plate_height: geom.height,
        cos_beta: pose.beta.cos().abs().max(COS_FLOOR),
        sin_beta: pose.beta.sin().abs(),
    };
    sub.vertical_area = sub.area_at(depth);
    sub
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: f64 = 0.115;

    fn geom() -> FlipperGeometry {
        FlipperGeometry::default()
    }

    #[test]
    fn identity_pose_is_diagonal() {
        let m = force_map_matrix(JointPose::new(0.0, 0.0), &geom());
        assert!((m[(0, 0)] - 1.0 / L).abs() < 1e-12);
        assert!((m[(1, 1)] - 1.0 / L).abs() < 1e-12);
        assert_eq!(m[(0, 1)], 0.0);
        assert!(m[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn thirty_degree_sweep() {
        let a = 30f64.to_radians();
        let f = torques_to_forces(JointTorques { tau1: 0.1, tau2: 0.2 }, JointPose::new(a, 0.0), &geom());
        assert!((f.fx - a.cos() * 0.1 / L).abs() < 1e-12);
        assert!((f.fz - a.cos() * 0.2 / L).abs() < 1e-12);
    }

    #[test]
    fn thirty_twenty_case() {
        // hand value: (-sin20·sin30·0.1 + cos20·cos30·0.2)/0.115
        let f = torques_to_forces(
            JointTorques { tau1: 0.1, tau2: 0.2 },
            JointPose::new(30f64.to_radians(), 20f64.to_radians()),
            &geom(),
        );
        assert!((f.fz - 1.266_595_905_248_6).abs() < 1e-9, "{}", f.fz);
        assert!(f.fy.is_none());
    }

    #[test]
    fn zero_and_unit_cases() {
        let g = geom();
        let p = JointPose::default();
        let f = torques_to_forces(JointTorques::default(), p, &g);
        assert_eq!((f.fx, f.fz), (0.0, 0.0));
        let f = torques_to_forces(JointTorques { tau1: 0.0, tau2: 0.115 }, p, &g);
        assert!((f.fz - 1.0).abs() < 1e-12);
        let t = forces_to_torques(ForceVector::planar(0.0, 1.0), p, &g).unwrap();
        assert!((t.tau2 - 0.115).abs() < 1e-12);
        let t = forces_to_torques(ForceVector::planar(0.0, 0.0), p, &g).unwrap();
        assert_eq!((t.tau1, t.tau2), (0.0, 0.0));
    }

    #[test]
    fn near_ninety_sweep_is_singular() {
        let p = JointPose::new(89.999f64.to_radians(), 0.0);
        let err = forces_to_torques(ForceVector::planar(1.0, 1.0), p, &geom()).unwrap_err();
        assert!(matches!(err, Error::SingularPose { .. }));
    }

    #[test]
    fn submerged_plate_closed_forms() {
        let g = geom();
        let p = JointPose::default();
        let s = submerged_geometry(p, &g, 0.03);
        assert!((s.vertical_area - 1.25e-4).abs() < 1e-15);
        assert!((s.shear_integral() - 1.125e-5).abs() < 1e-15);
        assert_eq!(s.width_at(0.01), 0.025);
        assert_eq!(s.width_at(0.031), 0.0);
        let s0 = submerged_geometry(p, &g, 0.0);
        assert_eq!(s0.shear_integral(), 0.0);
        assert_eq!(s0.area_integral(), 0.0);
        assert_eq!(s0.width_at(0.0), 0.0);
    }

    #[test]
    fn tilted_area_integral_matches_fine_sum() {
        let g = geom();
        for beta_deg in [10.0f64, 35.0, 60.0] {
            let p = JointPose::new(0.0, beta_deg.to_radians());
            for depth in [0.01, 0.04, 0.07] {
                let s = submerged_geometry(p, &g, depth);
                let n = 200_000;
                let dz = depth / n as f64;
                let sum: f64 = (0..n).map(|i| s.area_at((i as f64 + 0.5) * dz) * dz).sum();
                assert!((sum - s.area_integral()).abs() < 1e-9 * sum.max(1e-9) + 1e-14);
            }
        }
    }

    #[test]
    fn inverse_kinematics_round_trip() {
        let g = geom();
        for d in [-0.01, 0.0, 0.03, 0.05, 0.07] {
            let beta = g.beta_for_depth(d).unwrap();
            assert!((g.tip_depth(JointPose::new(0.3, beta)) - d).abs() < 1e-12);
        }
        assert!(g.beta_for_depth(0.2).is_err());
    }
}
