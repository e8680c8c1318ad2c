//! Ground-truth terradynamics for a plate moving through yield-stress mud.
//!
//! Forces follow the resistive-force form: penetration and extraction scale
//! with the depth integral of the projected vertical area, shear with the
//! depth-weighted width integral. The shear channel includes a yield cap so
//! that a flipper whose body stops resisting anchors in solidified mud.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{submerged_geometry, FlipperGeometry, JointPose};

/// Largest quadrature step for depth integrals, m.
pub const MAX_QUADRATURE_STEP: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MudCoefficients {
    /// Penetration resistance, N/m³.
    pub kp: f64,
    /// Shear strength, N/m³.
    pub ks: f64,
    /// Extraction resistance, N/m³.
    pub ke: f64,
}

impl MudCoefficients {
    pub fn new(kp: f64, ks: f64, ke: f64) -> Self {
        Self { kp, ks, ke }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ks", self.ks)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("mud coefficient {name} must be > 0, got {v}")));
            }
        }
        // Non-sticky mud (no suction at all) is legitimate.
        if !(self.ke.is_finite() && self.ke >= 0.0) {
            return Err(Error::config(format!("mud coefficient ke must be >= 0, got {}", self.ke)));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.kp * s, self.ks * s, self.ke * s)
    }

    fn lerp(a: &Self, b: &Self, f: f64) -> Self {
        Self::new(a.kp + (b.kp - a.kp) * f, a.ks + (b.ks - a.ks) * f, a.ke + (b.ke - a.ke) * f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CatalogEntry {
    /// Water mass fraction.
    pub w: f64,
    pub coeffs: MudCoefficients,
}

/// Water content to coefficient map, piecewise linear between knots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MudCatalog {
    entries: Vec<CatalogEntry>,
}

impl MudCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("mud catalog is empty"));
        }
        for e in &entries {
            if !(e.w > 0.40 && e.w < 0.60) {
                return Err(Error::config(format!("catalog w={} outside (0.40, 0.60)", e.w)));
            }
            e.coeffs.validate()?;
        }
        for pair in entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.w <= a.w {
                return Err(Error::config("catalog water contents must be strictly increasing"));
            }
            if b.coeffs.kp > a.coeffs.kp || b.coeffs.ks > a.coeffs.ks || b.coeffs.ke > a.coeffs.ke {
                return Err(Error::config(format!(
                    "catalog coefficients must not increase with water content (w={} -> {})",
                    a.w, b.w
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn span(&self) -> (f64, f64) {
        (self.entries[0].w, self.entries[self.entries.len() - 1].w)
    }

    /// Multiply every coefficient by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.entries.iter().map(|e| CatalogEntry { w: e.w, coeffs: e.coeffs.scaled(s) }).collect())
    }
}

impl Default for MudCatalog {
    /// Five mixtures of a 3:1 clay-to-sand mud. Only the wettest knot lets a
    /// 3 cm flipper pair slip under 2.6 N of body load; only the driest traps
    /// a 5 cm flipper on extraction.
    fn default() -> Self {
        let knot = |w, kp, ks, ke| CatalogEntry { w, coeffs: MudCoefficients::new(kp, ks, ke) };
        Self::new(vec![
            knot(0.476, 2.6e5, 3.2e5, 4.25e5),
            knot(0.486, 2.1e5, 2.4e5, 3.3e5),
            knot(0.495, 1.7e5, 1.8e5, 2.5e5),
            knot(0.503, 1.4e5, 1.333e5, 1.9e5),
            knot(0.512, 1.15e5, 8.32e4, 1.4e5),
        ])
        .expect("default catalog is valid")
    }
}

pub fn catalog_lookup(catalog: &MudCatalog, w: f64) -> Result<MudCoefficients> {
    let (min, max) = catalog.span();
    if !(w >= min && w <= max) {
        return Err(Error::OutOfRange { w, min, max });
    }
    let entries = catalog.entries();
    let hi = entries.partition_point(|e| e.w < w);
    if entries[hi].w == w {
        return Ok(entries[hi].coeffs);
    }
    let (a, b) = (&entries[hi - 1], &entries[hi]);
    Ok(MudCoefficients::lerp(&a.coeffs, &b.coeffs, (w - a.w) / (b.w - a.w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MudSegment {
    pub id: String,
    pub x_start: f64,
    pub x_end: f64,
    pub w: f64,
    pub coeffs: MudCoefficients,
}

/// Per-flipper shear history within one stance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShearState {
    /// Distance the plate has slid through the mud since contact, m.
    pub shear_displacement: f64,
    pub solidified: bool,
}

/// Shape parameters of the oracle's force laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MudModel {
    /// Slip distance over which shear rises to `1 - 1/e` of its cap, m.
    pub rise_displacement: f64,
    /// Fraction of upward travel over which suction ramps to its peak.
    pub extraction_ramp: f64,
}

impl Default for MudModel {
    fn default() -> Self {
        Self { rise_displacement: 0.01, extraction_ramp: 0.15 }
    }
}

/// Composite midpoint rule with step at most [`MAX_QUADRATURE_STEP`].
///
/// Midpoints keep the step discontinuity of the area at the surface from
/// biasing shallow integrals.
pub fn integrate_depth(depth: f64, f: impl Fn(f64) -> f64) -> f64 {
    if depth <= 0.0 {
        return 0.0;
    }
    let n = (depth / MAX_QUADRATURE_STEP).ceil().max(1.0) as usize;
    let dz = depth / n as f64;
    dz * (0..n).map(|i| f((i as f64 + 0.5) * dz)).sum::<f64>()
}

/// Normalized suction profile over upward travel fraction `u` in [0, 1].
pub fn extraction_shape(u: f64, ramp: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    if u <= ramp {
        if ramp > 0.0 {
            u / ramp
        } else {
            1.0
        }
    } else if ramp < 1.0 {
        (1.0 - u) / (1.0 - ramp)
    } else {
        0.0
    }
}

impl MudModel {
    /// Vertical resistance to insertion, upward positive.
    pub fn penetration_force(&self, depth: f64, pose: JointPose, geom: &FlipperGeometry, kp: f64) -> f64 {
        let sub = submerged_geometry(pose, geom, depth);
        kp * integrate_depth(sub.depth, |z| sub.area_at(z))
    }

    /// Yield cap `ks · ∫ width(z)·z dz`.
    pub fn yield_force(&self, depth: f64, geom: &FlipperGeometry, ks: f64) -> f64 {
        let sub = submerged_geometry(JointPose::default(), geom, depth);
        ks * integrate_depth(sub.depth, |z| sub.width_at(z) * z)
    }

    /// Fore-aft shear on the plate. `demand` is the reaction the body needs
    /// from this flipper to move; `f64::INFINITY` for a locked mount.
    pub fn shear_force(&self, state: &mut ShearState, depth: f64, geom: &FlipperGeometry, ks: f64, demand: f64) -> f64 {
        let cap = self.yield_force(depth, geom, ks);
        if cap <= 0.0 {
            state.solidified = false;
            return 0.0;
        }
        let raw = cap * (1.0 - (-state.shear_displacement / self.rise_displacement).exp());
        if state.solidified {
            if demand <= cap {
                return demand;
            }
            state.solidified = false;
            return raw;
        }
        if demand < raw {
            state.solidified = true;
            demand
        } else {
            raw
        }
    }

    /// Peak suction for a pull starting at depth `z_i`.
    pub fn extraction_peak(&self, z_i: f64, pose: JointPose, geom: &FlipperGeometry, ke: f64) -> f64 {
        let sub = submerged_geometry(pose, geom, z_i);
        ke * integrate_depth(sub.depth, |z| sub.area_at(z))
    }

    /// Suction during pull-out, non-positive. `pose` is the pose at `z_i`.
    pub fn extraction_force(
        &self,
        current_depth: f64,
        z_i: f64,
        pose: JointPose,
        geom: &FlipperGeometry,
        ke: f64,
    ) -> f64 {
        if z_i <= 0.0 || current_depth <= 0.0 {
            return 0.0;
        }
        let u = ((z_i - current_depth) / z_i).clamp(0.0, 1.0);
        -self.extraction_peak(z_i, pose, geom, ke) * extraction_shape(u, self.extraction_ramp)
    }
}
