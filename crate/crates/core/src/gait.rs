//! Four-phase crunching gait and insertion-depth adaptation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{submerged_geometry, FlipperGeometry, JointPose};
use crate::mud::MudCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Insertion,
    Stance,
    Extraction,
    Swing,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Insertion, Phase::Stance, Phase::Extraction, Phase::Swing];

    pub fn next(self) -> Phase {
        match self {
            Phase::Insertion => Phase::Stance,
            Phase::Stance => Phase::Extraction,
            Phase::Extraction => Phase::Swing,
            Phase::Swing => Phase::Insertion,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Insertion => "insertion",
            Phase::Stance => "stance",
            Phase::Extraction => "extraction",
            Phase::Swing => "swing",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitParams {
    /// Commanded insertion depth z_c, m.
    pub depth: f64,
    pub v_insert: f64,
    pub v_stance: f64,
    pub v_extract: f64,
    pub v_swing: f64,
    /// Stance sweep limits for alpha, rad.
    pub sweep: [f64; 2],
    /// Hold time after each phase, s.
    pub pause: f64,
}

impl Default for GaitParams {
    /// Locomotion settings: slow insertion for sensing, fast everything else.
    fn default() -> Self {
        Self {
            depth: 0.04,
            v_insert: 0.1,
            v_stance: 0.5,
            v_extract: 0.5,
            v_swing: 0.5,
            sweep: [-30f64.to_radians(), 30f64.to_radians()],
            pause: 0.0,
        }
    }
}

impl GaitParams {
    /// Bench sensing settings: 0.1 m/s throughout, 3 s pauses, 3 cm depth.
    pub fn sensing() -> Self {
        Self { depth: 0.03, v_insert: 0.1, v_stance: 0.1, v_extract: 0.1, v_swing: 0.1, pause: 3.0, ..Self::default() }
    }

    pub fn with_depth(mut self, depth: f64) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self, geom: &FlipperGeometry) -> Result<()> {
        for (name, v) in [
            ("v_insert", self.v_insert),
            ("v_stance", self.v_stance),
            ("v_extract", self.v_extract),
            ("v_swing", self.v_swing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("gait.{name} must be > 0")));
            }
        }
        if !(self.depth > 0.0 && self.depth <= geom.height) {
            return Err(Error::config(format!("gait.depth must be in (0, {}], got {}", geom.height, self.depth)));
        }
        if !(self.sweep[0] < self.sweep[1]) || self.sweep.iter().any(|a| a.abs() >= std::f64::consts::FRAC_PI_2) {
            return Err(Error::config("gait.sweep must be an increasing pair inside (-90°, 90°)"));
        }
        if !(self.pause >= 0.0 && self.pause.is_finite()) {
            return Err(Error::config("gait.pause must be >= 0"));
        }
        Ok(())
    }
}

/// What the controller asks of the flipper at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitCommand {
    pub phase: Phase,
    pub pose: JointPose,
    /// Tip velocity (fore-aft, vertical-up), m/s.
    pub tip_velocity: (f64, f64),
    /// Commanded tip depth below the surface, m.
    pub tip_depth: f64,
    /// True while holding between phases.
    pub holding: bool,
}

/// Timing of one gait cycle at a fixed commanded depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePlan {
    params: GaitParams,
    geom: FlipperGeometry,
    stance_beta: f64,
    durations: [f64; 4],
}

impl CyclePlan {
    pub fn new(params: &GaitParams, geom: &FlipperGeometry) -> Result<Self> {
        params.validate(geom)?;
        let stance_beta = geom.beta_for_depth(params.depth)?;
        let travel = params.depth + geom.hip_height;
        let sweep = params.sweep[1] - params.sweep[0];
        let durations = [
            travel / params.v_insert,
            geom.sweep_radius(stance_beta) * sweep / params.v_stance,
            travel / params.v_extract,
            geom.arm_length * sweep / params.v_swing,
        ];
        Ok(Self { params: *params, geom: *geom, stance_beta, durations })
    }

    pub fn params(&self) -> &GaitParams {
        &self.params
    }

    pub fn phase_duration(&self, phase: Phase) -> f64 {
        self.durations[phase as usize]
    }

    /// Moving time plus the hold after the phase.
    pub fn slot(&self, phase: Phase) -> f64 {
        self.phase_duration(phase) + self.params.pause
    }

    pub fn duration(&self) -> f64 {
        Phase::ALL.iter().map(|&p| self.slot(p)).sum()
    }

    pub fn stance_beta(&self) -> f64 {
        self.stance_beta
    }

    /// Fore-aft arc length of the stance sweep.
    pub fn stance_arc(&self) -> f64 {
        self.geom.sweep_radius(self.stance_beta) * (self.params.sweep[1] - self.params.sweep[0])
    }

    /// Start time of `phase` within the cycle.
    pub fn phase_start(&self, phase: Phase) -> f64 {
        Phase::ALL.iter().take_while(|&&p| p != phase).map(|&p| self.slot(p)).sum()
    }

    /// Command at time `clock` into the cycle; wraps past the cycle end.
    pub fn command_at(&self, clock: f64) -> GaitCommand {
        let total = self.duration();
        let mut t = clock.rem_euclid(total);
        let mut phase = Phase::Insertion;
        for p in Phase::ALL {
            let slot = self.slot(p);
            if t < slot || p == Phase::Swing {
                phase = p;
                break;
            }
            t -= slot;
        }
        self.command_in_phase(phase, t)
    }

    /// Command `t` seconds after `phase` began.
    pub fn command_in_phase(&self, phase: Phase, t: f64) -> GaitCommand {
        let p = &self.params;
        let g = &self.geom;
        let moving = self.phase_duration(phase);
        let holding = t >= moving;
        let t = t.clamp(0.0, moving);
        let [a0, a1] = p.sweep;
        let rest_depth = -g.hip_height;
        let (alpha, depth, vel) = match phase {
            Phase::Insertion => (a0, rest_depth + p.v_insert * t, (0.0, -p.v_insert)),
            Phase::Stance => {
                let r = g.sweep_radius(self.stance_beta);
                let rate = p.v_stance / r;
                let a = a0 + rate * t;
                (a, p.depth, (r * a.cos() * rate, 0.0))
            }
            Phase::Extraction => (a1, p.depth - p.v_extract * t, (0.0, p.v_extract)),
            Phase::Swing => {
                let rate = p.v_swing / g.arm_length;
                let a = a1 - rate * t;
                (a, rest_depth, (-g.arm_length * a.cos() * rate, 0.0))
            }
        };
        // inverse kinematics for the depth hold; the plan already validated the range
        let beta = g.beta_for_depth(depth).unwrap_or(self.stance_beta);
        GaitCommand {
            phase,
            pose: JointPose::new(alpha, beta),
            tip_velocity: if holding { (0.0, 0.0) } else { vel },
            tip_depth: depth,
            holding,
        }
    }
}

pub fn phase_step(clock: f64, params: &GaitParams, geom: &FlipperGeometry) -> Result<GaitCommand> {
    Ok(CyclePlan::new(params, geom)?.command_at(clock))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSpec {
    pub body_mass: f64,
    /// Maximal flipper lifting force f_m, N. Defaults to torque limit / arm length.
    pub max_lift: Option<f64>,
    /// Constant body drag f_r, N.
    pub drag: f64,
    /// When set, drag is this factor times k_s (m³) instead of the constant.
    pub drag_per_shear: Option<f64>,
    /// Inertial force f_a, N.
    pub accel_force: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self { body_mass: 1.5, max_lift: None, drag: 2.5, drag_per_shear: None, accel_force: 0.1 }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.drag >= 0.0 && self.accel_force >= 0.0 && self.body_mass > 0.0) {
            return Err(Error::config("robot drag and accel_force must be >= 0, body_mass > 0"));
        }
        if let Some(f) = self.max_lift {
            if !(f > 0.0) {
                return Err(Error::config("robot.max_lift must be > 0"));
            }
        }
        if let Some(c) = self.drag_per_shear {
            if !(c >= 0.0) {
                return Err(Error::config("robot.drag_per_shear must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn max_lift_force(&self, torque_limit: f64, geom: &FlipperGeometry) -> f64 {
        self.max_lift.unwrap_or(torque_limit / geom.arm_length)
    }

    /// Body drag f_r for mud of shear strength `ks`.
    pub fn body_drag(&self, ks: f64) -> f64 {
        match self.drag_per_shear {
            Some(c) => c * ks,
            None => self.drag,
        }
    }

    /// Fore-aft reaction the two flippers must supply together to move the body.
    pub fn required_thrust(&self, ks: f64) -> f64 {
        self.body_drag(ks) + self.accel_force
    }

    /// Lift available at the end-of-sweep extraction pose for tip depth `depth`.
    ///
    /// With no sweep torque the force map gives `fz = cosα·cosβ·τ2 / l`, so
    /// the torque-limited lift `f_m` shrinks by `cosα·cosβ` away from α=β=0.
    pub fn extraction_capacity(&self, f_m: f64, depth: f64, geom: &FlipperGeometry, params: &GaitParams) -> f64 {
        let beta = geom.beta_for_depth(depth).unwrap_or(std::f64::consts::FRAC_PI_2);
        f_m * params.sweep[1].cos() * beta.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptParams {
    /// Safety factor applied to both failure constraints.
    pub margin: f64,
    /// Shallowest depth the controller will command, m.
    pub min_depth: f64,
    /// Depth for the first stride, before any estimate exists, m.
    pub bootstrap_depth: f64,
}

impl Default for AdaptParams {
    fn default() -> Self {
        Self { margin: 1.2, min_depth: 0.01, bootstrap_depth: 0.04 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Binding {
    Slip,
    Extraction,
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthDecision {
    pub z: f64,
    pub feasible: bool,
    pub binding: Binding,
}

/// Penetration-area integral with the plate posed to reach `depth`.
pub fn depth_area_integral(depth: f64, geom: &FlipperGeometry) -> f64 {
    let beta = geom.beta_for_depth(depth).unwrap_or(0.0);
    submerged_geometry(JointPose::new(0.0, beta), geom, depth).area_integral()
}

/// Does depth `z` satisfy the slip constraint (with margin) for `coeffs`?
pub fn slip_margin_holds(
    z: f64,
    coeffs: &MudCoefficients,
    spec: &RobotSpec,
    geom: &FlipperGeometry,
    margin: f64,
) -> bool {
    let two_fx = 2.0 * coeffs.ks * geom.width * z * z / 2.0;
    two_fx >= margin * spec.required_thrust(coeffs.ks) * (1.0 - 1e-12)
}

/// Does depth `z` satisfy the extraction constraint (with margin) for `coeffs`?
pub fn extraction_margin_holds(
    z: f64,
    coeffs: &MudCoefficients,
    f_m: f64,
    spec: &RobotSpec,
    geom: &FlipperGeometry,
    params: &GaitParams,
    margin: f64,
) -> bool {
    coeffs.ke * depth_area_integral(z, geom) * margin <= spec.extraction_capacity(f_m, z, geom, params) * (1.0 + 1e-12)
}

/// Shallowest slip-safe depth, capped by the deepest extraction-safe one.
pub fn adapt_depth(
    estimates: &MudCoefficients,
    spec: &RobotSpec,
    f_m: f64,
    geom: &FlipperGeometry,
    params: &GaitParams,
    adapt: &AdaptParams,
) -> DepthDecision {
    let m = adapt.margin;
    let (lo, hi) = (adapt.min_depth, geom.height);
    let z_slip = (m * spec.required_thrust(estimates.ks) / (estimates.ks * geom.width)).sqrt();

    let excess =
        |z: f64| estimates.ke * depth_area_integral(z, geom) - spec.extraction_capacity(f_m, z, geom, params) / m;
    let z_extract = if excess(hi) <= 0.0 {
        hi
    } else if excess(lo) > 0.0 {
        lo
    } else {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if excess(mid) <= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };

    if z_slip <= z_extract {
        if z_slip < lo {
            DepthDecision { z: lo, feasible: true, binding: Binding::Clamp }
        } else {
            DepthDecision { z: z_slip, feasible: true, binding: Binding::Slip }
        }
    } else if z_extract >= hi {
        // slip-safe depth lies beyond the plate
        DepthDecision { z: hi, feasible: false, binding: Binding::Clamp }
    } else {
        DepthDecision { z: z_extract.max(lo), feasible: false, binding: Binding::Extraction }
    }
}

/// Coefficient estimates from one stride, as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StrideObservation {
    pub kp: Option<f64>,
    /// Uncompensated shear estimate.
    pub ks: Option<f64>,
    /// The body advanced during stance, so `ks` only bounds the true value from below.
    pub advancing: bool,
    pub ke: Option<f64>,
    /// Floor on k_e from a stalled pull-out.
    pub ke_floor: Option<f64>,
}

/// Running belief about the mud underfoot, updated once per stride.
#[derive(Debug, Clone, Default)]
pub struct AdaptiveController {
    pub params: AdaptParams,
    kp: Option<f64>,
    ks: Option<f64>,
    ke: Option<f64>,
}

impl AdaptiveController {
    pub fn new(params: AdaptParams) -> Self {
        Self { params, ..Default::default() }
    }

    pub fn observe(&mut self, obs: &StrideObservation) {
        if obs.kp.is_some() {
            self.kp = obs.kp;
        }
        if obs.ke.is_some() {
            self.ke = obs.ke;
        }
        if let Some(floor) = obs.ke_floor {
            self.ke = Some(self.ke.map_or(floor, |k| k.max(floor)));
        }
        if let Some(ks) = obs.ks {
            // anchored mud only shows the load it carried, a floor on k_s
            self.ks = match (obs.advancing, self.ks) {
                (true, Some(prev)) => Some(prev.max(ks)),
                _ => Some(ks),
            };
        }
    }

    pub fn belief(&self) -> Option<MudCoefficients> {
        match (self.ks, self.ke) {
            (Some(ks), Some(ke)) if ks > 0.0 && ke > 0.0 => Some(MudCoefficients::new(self.kp.unwrap_or(0.0), ks, ke)),
            _ => None,
        }
    }

    pub fn decide(
        &self,
        spec: &RobotSpec,
        f_m: f64,
        geom: &FlipperGeometry,
        params: &GaitParams,
    ) -> Option<DepthDecision> {
        self.belief().map(|b| adapt_depth(&b, spec, f_m, geom, params, &self.params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> FlipperGeometry {
        FlipperGeometry::default()
    }

    #[test]
    fn phase_cycle_order() {
        assert_eq!(Phase::Swing.next(), Phase::Insertion);
        let mut p = Phase::Insertion;
        for _ in 0..4 {
            p = p.next();
        }
        assert_eq!(p, Phase::Insertion);
    }

    #[test]
    fn stance_midpoint_holds_depth() {
        let params = GaitParams::default().with_depth(0.05);
        let plan = CyclePlan::new(&params, &g()).unwrap();
        let mid = plan.phase_start(Phase::Stance) + plan.phase_duration(Phase::Stance) / 2.0;
        let c = plan.command_at(mid);
        assert_eq!(c.phase, Phase::Stance);
        assert!(c.pose.alpha.abs() < 1e-9);
        assert!((g().tip_depth(c.pose) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn stance_duration_matches_integrated_arc() {
        let params = GaitParams::default().with_depth(0.03);
        let plan = CyclePlan::new(&params, &g()).unwrap();
        let beta = plan.stance_beta();
        let expected = 0.115 * 60f64.to_radians() * beta.cos() / 0.5;
        assert!((plan.phase_duration(Phase::Stance) - expected).abs() < 1e-12);

        // integrate tip speed along the commanded trajectory
        let n = 20_000;
        let dt = plan.phase_duration(Phase::Stance) / n as f64;
        let mut arc = 0.0;
        let mut prev = plan.command_in_phase(Phase::Stance, 0.0).pose;
        for i in 1..=n {
            let cur = plan.command_in_phase(Phase::Stance, i as f64 * dt).pose;
            arc += g().sweep_radius(cur.beta) * (cur.alpha - prev.alpha).abs();
            prev = cur;
        }
        assert!((arc / 0.5 - expected).abs() < 1e-9);
    }

    #[test]
    fn pauses_extend_the_cycle() {
        let p0 = GaitParams::sensing();
        let mut p3 = p0;
        p0.validate(&g()).unwrap();
        let plan = CyclePlan::new(&p0, &g()).unwrap();
        p3.pause = 0.0;
        let bare = CyclePlan::new(&p3, &g()).unwrap();
        assert!((plan.duration() - bare.duration() - 4.0 * 3.0).abs() < 1e-12);
        let hold = plan.command_in_phase(Phase::Insertion, plan.phase_duration(Phase::Insertion) + 1.0);
        assert!(hold.holding);
        assert_eq!(hold.tip_velocity, (0.0, 0.0));
    }

    #[test]
    fn unreachable_depth_is_rejected() {
        let geom = FlipperGeometry { height: 0.2, ..g() };
        let err = CyclePlan::new(&GaitParams::default().with_depth(0.12), &geom).unwrap_err();
        assert!(matches!(err, Error::WorkspaceExceeded { .. }));
    }

    fn adapt(c: MudCoefficients) -> DepthDecision {
        let spec = RobotSpec::default();
        adapt_depth(&c, &spec, 1.2 / 0.115, &g(), &GaitParams::default(), &AdaptParams::default())
    }

    #[test]
    fn limits_of_adaptation() {
        let d = adapt(MudCoefficients::new(1e5, 1e12, 1e5));
        assert_eq!(d.z, 0.01);
        assert_eq!(d.binding, Binding::Clamp);
        assert!(d.feasible);

        let d = adapt(MudCoefficients::new(1e5, 1.5e5, 1e-6));
        let z_slip = (1.2 * 2.6 / (1.5e5 * 0.025f64)).sqrt();
        assert!((d.z - z_slip).abs() < 1e-12);
        assert_eq!(d.binding, Binding::Slip);
    }

    #[test]
    fn soft_mud_goes_deeper_than_stiff() {
        let cat = crate::mud::MudCatalog::default();
        let stiff = adapt(cat.entries()[0].coeffs);
        let soft = adapt(cat.entries()[4].coeffs);
        assert!(soft.z > stiff.z);
        assert!(soft.z > 0.035 && stiff.z < 0.035, "soft {} stiff {}", soft.z, stiff.z);
    }

    #[test]
    fn feasible_decisions_satisfy_both_constraints() {
        let spec = RobotSpec::default();
        let f_m = 1.2 / 0.115;
        let params = GaitParams::default();
        for c in crate::mud::MudCatalog::default().entries() {
            let d = adapt(c.coeffs);
            if d.feasible {
                assert!(slip_margin_holds(d.z, &c.coeffs, &spec, &g(), 1.2));
                assert!(extraction_margin_holds(d.z, &c.coeffs, f_m, &spec, &g(), &params, 1.2));
            }
        }
    }

    #[test]
    fn controller_keeps_floor_while_anchored() {
        let mut c = AdaptiveController::new(AdaptParams::default());
        c.observe(&StrideObservation { kp: Some(1.0), ks: Some(2e5), advancing: true, ke: Some(1e5), ke_floor: None });
        c.observe(&StrideObservation { kp: Some(1.0), ks: Some(1e5), advancing: true, ke: Some(1e5), ke_floor: None });
        assert_eq!(c.belief().unwrap().ks, 2e5);
        c.observe(&StrideObservation { kp: Some(1.0), ks: Some(5e4), advancing: false, ke: Some(1e5), ke_floor: None });
        assert_eq!(c.belief().unwrap().ks, 5e4);
    }
}
