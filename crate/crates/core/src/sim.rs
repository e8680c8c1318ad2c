//! Closed-loop trials on a rail-mounted body crossing mud segments.
//!
//! Body dynamics are quasi-static: during stance the body either moves with
//! an anchored flipper pair or holds still while the flippers slip.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actuator::{motor_rng, saturated_current, sense_torque, torque_to_current, MotorSpec, SampleRecord};
use crate::error::{Error, Result};
use crate::estimator::{estimate_step, EstimatorConfig, StepEstimates, StepLog};
use crate::gait::{
    AdaptParams, AdaptiveController, CyclePlan, DepthDecision, GaitParams, Phase, RobotSpec, StrideObservation,
};
use crate::kinematics::{
    forces_to_torques, submerged_geometry, torques_to_forces, FlipperGeometry, ForceVector, JointPose,
};
use crate::mud::{MudCoefficients, MudModel, MudSegment, ShearState};

#[derive(Debug, Clone, PartialEq)]
pub struct Trackway {
    segments: Vec<MudSegment>,
}

impl Trackway {
    pub fn new(segments: Vec<MudSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::config("trackway needs at least one segment"));
        }
        if segments[0].x_start != 0.0 {
            return Err(Error::config("trackway must start at x = 0"));
        }
        for s in &segments {
            if !(s.x_end > s.x_start) {
                return Err(Error::config(format!("segment {} has non-positive length", s.id)));
            }
            s.coeffs.validate()?;
        }
        for pair in segments.windows(2) {
            if (pair[1].x_start - pair[0].x_end).abs() > 1e-12 {
                return Err(Error::config(format!("segments {} and {} are not contiguous", pair[0].id, pair[1].id)));
            }
        }
        Ok(Self { segments })
    }

    /// One segment of mud `coeffs` spanning `[0, length]`.
    pub fn uniform(id: &str, w: f64, coeffs: MudCoefficients, length: f64) -> Result<Self> {
        Self::new(vec![MudSegment { id: id.to_string(), x_start: 0.0, x_end: length, w, coeffs }])
    }

    pub fn segments(&self) -> &[MudSegment] {
        &self.segments
    }

    pub fn length(&self) -> f64 {
        self.segments[self.segments.len() - 1].x_end
    }

    pub fn segment_index_at(&self, x: f64) -> usize {
        self.segments.iter().rposition(|s| s.x_start <= x).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GaitMode {
    Fixed { depth: f64 },
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mount {
    /// Body rides the rail and moves only when the flippers anchor.
    #[default]
    Rail,
    /// Body clamped in place; every stance shears the mud to yield.
    Locked,
}

/// What happens when suction exceeds the available lift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Re-descent per retry as a fraction of the original pull depth.
    pub redescend_fraction: f64,
    /// Time spent straining at the torque limit before giving up on a pull, s.
    pub stall_timeout: f64,
    /// Suction retained by remolded mud on each re-pull.
    pub remold_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, redescend_fraction: 0.2, stall_timeout: 0.3, remold_factor: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub geometry: FlipperGeometry,
    pub motor: MotorSpec,
    pub robot: RobotSpec,
    pub mud_model: MudModel,
    pub estimator: EstimatorConfig,
    pub gait: GaitParams,
    pub adapt: AdaptParams,
    pub retry: RetryPolicy,
    pub mode: GaitMode,
    pub mount: Mount,
    pub max_strides: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            geometry: FlipperGeometry::default(),
            motor: MotorSpec::default(),
            robot: RobotSpec::default(),
            mud_model: MudModel::default(),
            estimator: EstimatorConfig::default(),
            gait: GaitParams::default(),
            adapt: AdaptParams::default(),
            retry: RetryPolicy::default(),
            mode: GaitMode::Adaptive,
            mount: Mount::Rail,
            max_strides: 200,
        }
    }
}

impl TrialConfig {
    /// Clamped body, bench sensing gait, fixed depth.
    pub fn static_mount(depth: f64) -> Self {
        Self {
            gait: GaitParams::sensing().with_depth(depth),
            mode: GaitMode::Fixed { depth },
            mount: Mount::Locked,
            max_strides: 1,
            ..Self::default()
        }
    }

    pub fn fixed(depth: f64) -> Self {
        Self { mode: GaitMode::Fixed { depth }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.motor.validate()?;
        self.robot.validate()?;
        self.estimator.validate()?;
        self.gait.validate(&self.geometry)?;
        if let GaitMode::Fixed { depth } = self.mode {
            self.gait.with_depth(depth).validate(&self.geometry)?;
        }
        let a = &self.adapt;
        if !(a.margin >= 1.0) || !(a.min_depth > 0.0 && a.min_depth < self.geometry.height) {
            return Err(Error::config("adapt.margin must be >= 1 and adapt.min_depth in (0, height)"));
        }
        if !(a.bootstrap_depth > 0.0 && a.bootstrap_depth <= self.geometry.height) {
            return Err(Error::config("adapt.bootstrap_depth must be in (0, height]"));
        }
        let r = &self.retry;
        if !(r.redescend_fraction > 0.0 && r.redescend_fraction <= 1.0)
            || !(r.stall_timeout >= 0.0)
            || !(r.remold_factor > 0.0 && r.remold_factor <= 1.0)
        {
            return Err(Error::config(
                "retry.redescend_fraction and remold_factor must be in (0, 1], stall_timeout >= 0",
            ));
        }
        if self.max_strides == 0 {
            return Err(Error::config("max_strides must be >= 1"));
        }
        Ok(())
    }

    pub fn max_lift(&self) -> f64 {
        self.robot.max_lift_force(self.motor.torque_limit, &self.geometry)
    }
}

/// One row of the per-sample log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub phase: Phase,
    pub flipper: u8,
    pub alpha: f64,
    pub beta: f64,
    pub current1: f64,
    pub current2: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Forces recovered from sensed torques.
    pub fx: f64,
    pub fz: f64,
    /// True tip depth below the mud surface.
    pub depth: f64,
    pub body_x: f64,
    pub body_v: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FailureKind {
    Slip,
    Extraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FailureEvent {
    pub kind: FailureKind,
    pub stride: usize,
    pub segment: usize,
}

/// Mean over flippers of the coefficient estimates of one stride.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StrideEstimates {
    pub kp: Option<f64>,
    pub ks: Option<f64>,
    pub ks_compensated: Option<f64>,
    pub ke: Option<f64>,
    pub advancing: bool,
}

impl StrideEstimates {
    /// Compensated shear estimate when the body advanced, raw otherwise.
    pub fn ks_best(&self) -> Option<f64> {
        self.ks_compensated.or(self.ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrideRecord {
    pub index: usize,
    pub segment: usize,
    /// Oracle coefficients of the mud underfoot.
    pub truth: MudCoefficients,
    pub z_cmd: f64,
    /// Controller output that chose `z_cmd`; `None` for fixed or bootstrap strides.
    pub decision: Option<DepthDecision>,
    pub estimates: StrideEstimates,
    pub x_start: f64,
    pub t_start: f64,
    pub stride_len: f64,
    pub duration: f64,
    /// Commanded stance arc length.
    pub arc: f64,
    /// The mud never held during stance.
    pub yielded_throughout: bool,
    /// Body clamped, so zero advance is by construction rather than a slip.
    pub body_locked: bool,
    pub retries: u32,
    pub stuck: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentStats {
    pub id: String,
    pub strides: usize,
    pub distance: f64,
    pub time: f64,
    /// Mean forward speed, m/s; `None` if no stride started here.
    pub velocity: Option<f64>,
    pub slips: usize,
    pub extraction_failures: usize,
    pub stuck: usize,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub strides: Vec<StrideRecord>,
    pub rows: Vec<LogRow>,
    pub segments: Vec<SegmentStats>,
    pub final_x: f64,
    pub duration: f64,
}

impl TrialResult {
    pub fn failures(&self) -> Vec<FailureEvent> {
        detect_failures(&self.strides)
    }

    pub fn stuck_count(&self) -> usize {
        self.strides.iter().filter(|s| s.stuck).count()
    }
}

pub fn detect_failures(strides: &[StrideRecord]) -> Vec<FailureEvent> {
    let mut out = Vec::new();
    for s in strides {
        if !s.body_locked && s.yielded_throughout && s.stride_len < 0.1 * s.arc {
            out.push(FailureEvent { kind: FailureKind::Slip, stride: s.index, segment: s.segment });
        }
        if s.retries > 0 {
            out.push(FailureEvent { kind: FailureKind::Extraction, stride: s.index, segment: s.segment });
        }
    }
    out
}

/// Lower bound on k_e from a stalled pull: the sensed suction never exceeds
/// the true profile, whose peak is `k_e·G(z_i)`.
pub fn extraction_lower_bound(step: &StepLog, geom: &FlipperGeometry, surface: f64) -> Option<f64> {
    let idx = step.phase_indices(Phase::Extraction);
    let mut first = *idx.first()?;
    if first > 0 && step.tip_height[first - 1] < step.tip_height[first] {
        first -= 1;
    }
    let zi = surface - step.tip_height[first];
    let s = &step.samples[first];
    let g = submerged_geometry(JointPose::new(s.alpha, s.beta), geom, zi).area_integral();
    let peak = idx.iter().map(|&i| -step.fz[i]).fold(0.0, f64::max);
    (g > 0.0 && peak > 0.0).then(|| peak / g)
}

struct Sim<'a> {
    cfg: &'a TrialConfig,
    dt: f64,
    t: f64,
    x: f64,
    rngs: Vec<ChaCha8Rng>,
    rows: Vec<LogRow>,
    steps: [Vec<SampleRecord>; 2],
    body: Vec<(f64, f64)>,
    segment: usize,
}

impl<'a> Sim<'a> {
    fn emit(&mut self, phase: Phase, pose: JointPose, depth: f64, force: (f64, f64), body_v: f64) {
        let cfg = self.cfg;
        let geom = &cfg.geometry;
        let tau = forces_to_torques(ForceVector::planar(force.0, force.1), pose, geom).unwrap_or_default();
        for flipper in 0..2u8 {
            let mut current = [0.0; 2];
            for (j, &tj) in [tau.tau1, tau.tau2].iter().enumerate() {
                let rng = &mut self.rngs[2 * flipper as usize + j];
                current[j] =
                    torque_to_current(tj, &cfg.motor, rng).unwrap_or_else(|_| saturated_current(tj, &cfg.motor, rng));
            }
            let sensed = [sense_torque(current[0], &cfg.motor), sense_torque(current[1], &cfg.motor)];
            let f = torques_to_forces(crate::kinematics::JointTorques { tau1: sensed[0], tau2: sensed[1] }, pose, geom);
            self.steps[flipper as usize].push(SampleRecord {
                t: self.t,
                alpha: pose.alpha,
                beta: pose.beta,
                current1: current[0],
                current2: current[1],
                tau1_sense: sensed[0],
                tau2_sense: sensed[1],
                phase,
            });
            self.rows.push(LogRow {
                t: self.t,
                phase,
                flipper,
                alpha: pose.alpha,
                beta: pose.beta,
                current1: current[0],
                current2: current[1],
                tau1: sensed[0],
                tau2: sensed[1],
                fx: f.fx,
                fz: f.fz,
                depth,
                body_x: self.x,
                body_v,
                segment: self.segment,
            });
        }
        self.body.push((self.x, body_v));
        self.t += self.dt;
    }

    fn pose_at_depth(&self, alpha: f64, depth: f64) -> JointPose {
        let beta = self.cfg.geometry.beta_for_depth(depth).unwrap_or(0.0);
        JointPose::new(alpha, beta)
    }

    /// Move the tip vertically from `from` to `to` at `speed`, starting `carry`
    /// seconds in. Returns the carry into whatever follows.
    fn vertical(
        &mut self,
        alpha: f64,
        from: f64,
        to: f64,
        speed: f64,
        carry: f64,
        force: impl Fn(f64, JointPose) -> f64,
    ) -> f64 {
        let dur = (to - from).abs() / speed;
        let dir = (to - from).signum();
        let mut tau = carry;
        while tau < dur {
            let depth = from + dir * speed * tau;
            let pose = self.pose_at_depth(alpha, depth);
            let fz = force(depth, pose);
            self.emit(Phase::Extraction, pose, depth, (0.0, fz), 0.0);
            tau += self.dt;
        }
        tau - dur
    }

    fn hold(&mut self, phase: Phase, alpha: f64, depth: f64, force: (f64, f64), duration: f64, carry: f64) -> f64 {
        let pose = self.pose_at_depth(alpha, depth);
        let mut tau = carry;
        while tau < duration {
            self.emit(phase, pose, depth, force, 0.0);
            tau += self.dt;
        }
        tau - duration
    }
}

struct ExtractionOutcome {
    retries: u32,
    stuck: bool,
    carry: f64,
}

fn run_extraction(sim: &mut Sim, coeffs: &MudCoefficients, z0: f64, carry: f64) -> ExtractionOutcome {
    let cfg = sim.cfg;
    let geom = cfg.geometry;
    let model = cfg.mud_model;
    let alpha = cfg.gait.sweep[1];
    let v = cfg.gait.v_extract;
    let top = -geom.hip_height;
    let f_m = cfg.max_lift();
    let retry = cfg.retry;

    let mut start = z0;
    let mut ke = coeffs.ke;
    let mut retries = 0;
    let mut stuck = false;
    let mut tau = carry;
    loop {
        let start_pose = sim.pose_at_depth(alpha, start);
        let dur = (start - top) / v;
        let mut stalled_at = None;
        while tau < dur {
            let depth = start - v * tau;
            let pose = sim.pose_at_depth(alpha, depth);
            let fe = model.extraction_force(depth, start, start_pose, &geom, ke);
            let capacity = f_m * pose.alpha.cos() * pose.beta.cos();
            if -fe > capacity {
                stalled_at = Some((depth, fe));
                break;
            }
            sim.emit(Phase::Extraction, pose, depth, (0.0, fe), 0.0);
            tau += sim.dt;
        }
        let Some((depth, fe)) = stalled_at else {
            return ExtractionOutcome { retries, stuck, carry: tau - dur };
        };
        // strain at the torque limit, then either retry or give up
        tau = sim.hold(Phase::Extraction, alpha, depth, (0.0, fe), retry.stall_timeout, 0.0);
        retries += 1;
        if retries > retry.max_retries {
            stuck = true;
            ke = 0.0;
            start = depth;
            continue;
        }
        let target = (depth + retry.redescend_fraction * z0).min(z0);
        let kp = coeffs.kp;
        tau = sim.vertical(alpha, depth, target, v, tau, |d, p| model.penetration_force(d, p, &geom, kp));
        start = target;
        ke *= retry.remold_factor;
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize_estimates(est: &[StepEstimates; 2]) -> StrideEstimates {
    StrideEstimates {
        kp: mean(est.iter().map(|e| e.kp_value())),
        ks: mean(est.iter().map(|e| e.ks_value())),
        ks_compensated: mean(est.iter().map(|e| e.ks_compensated.map(|c| c.value))),
        ke: mean(est.iter().map(|e| e.ke_value())),
        advancing: est.iter().any(|e| e.advancing),
    }
}

pub fn run_trial(track: &Trackway, cfg: &TrialConfig, seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let geom = cfg.geometry;
    let model = cfg.mud_model;
    let locked = cfg.mount == Mount::Locked;
    let f_m = cfg.max_lift();
    let mut sim = Sim {
        cfg,
        dt: cfg.motor.dt(),
        t: 0.0,
        x: 0.0,
        rngs: (0..4).map(|i| motor_rng(seed, i)).collect(),
        rows: Vec::new(),
        steps: [Vec::new(), Vec::new()],
        body: Vec::new(),
        segment: 0,
    };
    let mut controller = AdaptiveController::new(cfg.adapt);
    let mut strides = Vec::new();
    let mut carry = 0.0;

    for index in 0..cfg.max_strides {
        if !locked && sim.x >= track.length() {
            break;
        }
        let seg_idx = track.segment_index_at(sim.x);
        sim.segment = seg_idx;
        let truth = track.segments()[seg_idx].coeffs;
        let (z, decision) = match cfg.mode {
            GaitMode::Fixed { depth } => (depth, None),
            GaitMode::Adaptive => match controller.decide(&cfg.robot, f_m, &geom, &cfg.gait) {
                Some(d) => (d.z, Some(d)),
                None => (cfg.adapt.bootstrap_depth, None),
            },
        };
        let params = cfg.gait.with_depth(z);
        let plan = CyclePlan::new(&params, &geom)?;
        let (x_start, t_start) = (sim.x, sim.t);
        sim.steps = [Vec::new(), Vec::new()];
        sim.body.clear();

        // insertion, including the hold at depth
        let slot = plan.slot(Phase::Insertion);
        let mut tau = carry;
        while tau < slot {
            let cmd = plan.command_in_phase(Phase::Insertion, tau);
            let fz = model.penetration_force(cmd.tip_depth, cmd.pose, &geom, truth.kp);
            sim.emit(Phase::Insertion, cmd.pose, cmd.tip_depth, (0.0, fz), 0.0);
            tau += sim.dt;
        }
        carry = tau - slot;

        // stance: anchor and push the body, or slip through yielding mud
        let demand = if locked { f64::INFINITY } else { cfg.robot.required_thrust(truth.ks) / 2.0 };
        let radius = geom.sweep_radius(plan.stance_beta());
        let mut shear = ShearState::default();
        let mut yielded = true;
        let mut prev_alpha = params.sweep[0];
        let slot = plan.slot(Phase::Stance);
        let mut tau = carry;
        while tau < slot {
            let cmd = plan.command_in_phase(Phase::Stance, tau);
            let step = radius * (cmd.pose.alpha - prev_alpha).abs();
            prev_alpha = cmd.pose.alpha;
            let fx = model.shear_force(&mut shear, cmd.tip_depth, &geom, truth.ks, demand);
            let mut v = 0.0;
            if shear.solidified && !locked {
                yielded = false;
                sim.x += step;
                v = step / sim.dt;
            } else {
                if shear.solidified {
                    yielded = false;
                }
                shear.shear_displacement += step;
            }
            sim.emit(Phase::Stance, cmd.pose, cmd.tip_depth, (fx, 0.0), v);
            tau += sim.dt;
        }
        carry = tau - slot;

        let out = run_extraction(&mut sim, &truth, z, carry);
        carry = sim.hold(Phase::Extraction, params.sweep[1], -geom.hip_height, (0.0, 0.0), params.pause, out.carry);

        // estimates are computed during swing from the cycle so far
        let logs: [StepLog; 2] = std::array::from_fn(|f| {
            let log = StepLog::new(sim.steps[f].clone(), &geom);
            if locked {
                log
            } else {
                log.with_body(sim.body.clone())
            }
        });
        let est: [StepEstimates; 2] =
            std::array::from_fn(|f| estimate_step(&logs[f], &geom, cfg.robot.drag, &cfg.estimator));
        let estimates = summarize_estimates(&est);

        let slot = plan.slot(Phase::Swing);
        let mut tau = carry;
        while tau < slot {
            let cmd = plan.command_in_phase(Phase::Swing, tau);
            sim.emit(Phase::Swing, cmd.pose, cmd.tip_depth, (0.0, 0.0), 0.0);
            tau += sim.dt;
        }
        carry = tau - slot;

        if cfg.mode == GaitMode::Adaptive {
            let ke_bound =
                if out.retries > 0 {
                    mean((0..2).map(|f| {
                        est[f].surface.as_ref().ok().and_then(|&s| extraction_lower_bound(&logs[f], &geom, s))
                    }))
                } else {
                    None
                };
            controller.observe(&StrideObservation {
                kp: estimates.kp,
                ks: estimates.ks,
                advancing: estimates.advancing,
                ke: if out.retries > 0 { None } else { estimates.ke },
                ke_floor: ke_bound,
            });
        }

        strides.push(StrideRecord {
            index,
            segment: seg_idx,
            truth,
            z_cmd: z,
            decision,
            estimates,
            x_start,
            t_start,
            stride_len: sim.x - x_start,
            duration: sim.t - t_start,
            arc: plan.stance_arc(),
            yielded_throughout: yielded,
            body_locked: locked,
            retries: out.retries,
            stuck: out.stuck,
        });
    }

    let segments = segment_stats(track, &strides);
    Ok(TrialResult { final_x: sim.x, duration: sim.t, rows: sim.rows, strides, segments })
}

pub fn segment_stats(track: &Trackway, strides: &[StrideRecord]) -> Vec<SegmentStats> {
    let failures = detect_failures(strides);
    track
        .segments()
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let mine: Vec<&StrideRecord> = strides.iter().filter(|s| s.segment == i).collect();
            let distance: f64 = mine.iter().map(|s| s.stride_len).sum();
            let time: f64 = mine.iter().map(|s| s.duration).sum();
            let count = |k: FailureKind| failures.iter().filter(|f| f.segment == i && f.kind == k).count();
            SegmentStats {
                id: seg.id.clone(),
                strides: mine.len(),
                distance,
                time,
                velocity: (time > 0.0).then(|| distance / time),
                slips: count(FailureKind::Slip),
                extraction_failures: count(FailureKind::Extraction),
                stuck: mine.iter().filter(|s| s.stuck).count(),
            }
        })
        .collect()
}
