//! Mud coefficients from proprioception alone.
//!
//! Everything here reads joint angles and sensed torques from
//! [`SampleRecord`]s, plus the body track when locomoting. All three force
//! models are linear in their coefficient, so each fit is a closed-form
//! scalar least squares.

use serde::{Deserialize, Serialize};

use crate::actuator::SampleRecord;
use crate::error::{Error, Result};
use crate::gait::Phase;
use crate::kinematics::{submerged_geometry, torques_to_forces, FlipperGeometry, JointPose, JointTorques};
use crate::mud::extraction_shape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Vertical force marking first contact, N.
    pub contact_threshold: f64,
    /// Steady window: |dfx/dt| must stay below this fraction of its peak.
    pub eta: f64,
    /// Moving-average width applied before differencing, samples.
    pub filter_width: usize,
    /// Smallest steady window accepted before falling back, samples.
    pub min_window: usize,
    /// Body speed counted as advancing, m/s.
    pub advance_speed: f64,
    /// Consecutive samples above `advance_speed` needed to call it advancing.
    pub advance_samples: usize,
    /// Extraction window keeps samples with |fz| at least this fraction of the peak.
    pub peak_fraction: f64,
    /// Smallest extraction peak treated as real suction, N.
    pub min_peak: f64,
    /// Travel fraction over which suction ramps up; must match the terrain model.
    pub extraction_ramp: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            contact_threshold: 0.5,
            eta: 0.05,
            filter_width: 9,
            min_window: 20,
            advance_speed: 0.005,
            advance_samples: 10,
            peak_fraction: 0.5,
            min_peak: 0.5,
            extraction_ramp: 0.15,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_threshold >= 0.0) || !(self.min_peak >= 0.0) {
            return Err(Error::config("estimator thresholds must be >= 0"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) || !(self.peak_fraction > 0.0 && self.peak_fraction < 1.0) {
            return Err(Error::config("estimator.eta and peak_fraction must be in (0, 1)"));
        }
        if self.filter_width == 0 || self.min_window == 0 {
            return Err(Error::config("estimator.filter_width and min_window must be >= 1"));
        }
        if !(self.extraction_ramp > 0.0 && self.extraction_ramp < 1.0) {
            return Err(Error::config("estimator.extraction_ramp must be in (0, 1)"));
        }
        Ok(())
    }
}

/// One gait cycle of one flipper with forces derived from sensed torques.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub samples: Vec<SampleRecord>,
    pub fx: Vec<f64>,
    pub fz: Vec<f64>,
    pub tip_height: Vec<f64>,
    /// Body position and speed per sample; `None` for a fixed mount.
    pub body: Option<Vec<(f64, f64)>>,
}

impl StepLog {
    pub fn new(samples: Vec<SampleRecord>, geom: &FlipperGeometry) -> Self {
        let mut fx = Vec::with_capacity(samples.len());
        let mut fz = Vec::with_capacity(samples.len());
        let mut tip_height = Vec::with_capacity(samples.len());
        for s in &samples {
            let pose = JointPose::new(s.alpha, s.beta);
            let f = torques_to_forces(JointTorques { tau1: s.tau1_sense, tau2: s.tau2_sense }, pose, geom);
            fx.push(f.fx);
            fz.push(f.fz);
            tip_height.push(geom.tip_height(pose));
        }
        Self { samples, fx, fz, tip_height, body: None }
    }

    pub fn with_body(mut self, body: Vec<(f64, f64)>) -> Self {
        assert_eq!(body.len(), self.samples.len(), "body track must align with samples");
        self.body = Some(body);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples labelled `phase`, in order.
    pub fn phase_indices(&self, phase: Phase) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].phase == phase).collect()
    }

    fn pose(&self, i: usize) -> JointPose {
        JointPose::new(self.samples[i].alpha, self.samples[i].beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientEstimate {
    pub value: f64,
    pub residual_rmse: f64,
    pub window: [f64; 2],
    pub compensated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub index: usize,
    pub t_contact: f64,
    /// Tip height at the threshold crossing, m.
    pub surface_height: f64,
}

pub fn detect_surface(step: &StepLog, threshold: f64) -> Result<ContactEvent> {
    let insertion = step.phase_indices(Phase::Insertion);
    if insertion.is_empty() {
        return Err(Error::MissingPhase(Phase::Insertion));
    }
    let hit = insertion.into_iter().find(|&i| {
        let f = step.fz[i];
        if threshold > 0.0 {
            f >= threshold
        } else {
            f > 0.0
        }
    });
    match hit {
        Some(i) => Ok(ContactEvent { index: i, t_contact: step.samples[i].t, surface_height: step.tip_height[i] }),
        None => Err(Error::NoContact { threshold }),
    }
}

/// Integrated vertical area for a tip `depth` below the surface.
fn area_integral(pose: JointPose, geom: &FlipperGeometry, depth: f64) -> f64 {
    submerged_geometry(pose, geom, depth).area_integral()
}

/// Least-squares slope through the origin and its RMS residual.
fn fit_through_origin(model: &[f64], data: &[f64]) -> Option<(f64, f64)> {
    let mm: f64 = model.iter().map(|m| m * m).sum();
    if !(mm > f64::MIN_POSITIVE) {
        return None;
    }
    let md: f64 = model.iter().zip(data).map(|(m, d)| m * d).sum();
    let k = md / mm;
    let sq: f64 = model.iter().zip(data).map(|(m, d)| (d - k * m).powi(2)).sum();
    Some((k, (sq / model.len() as f64).sqrt()))
}

fn insertion_fit(step: &StepLog, geom: &FlipperGeometry, idx: &[usize], surface: f64) -> Option<(f64, f64)> {
    let model: Vec<f64> =
        idx.iter().map(|&i| area_integral(step.pose(i), geom, surface - step.tip_height[i])).collect();
    let data: Vec<f64> = idx.iter().map(|&i| step.fz[i]).collect();
    fit_through_origin(&model, &data)
}

/// Surface height that best explains the insertion force.
///
/// The threshold crossing sits below the true surface by however deep the
/// plate must go to build `threshold` newtons. Refine it by choosing the
/// height whose penetration fit leaves the smallest residual, searched over
/// the whole insertion stroke.
pub fn locate_surface(step: &StepLog, geom: &FlipperGeometry, contact: &ContactEvent) -> Result<f64> {
    let idx = step.phase_indices(Phase::Insertion);
    let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        (lo.min(step.tip_height[i]), hi.max(step.tip_height[i]))
    });
    if !(hi > lo) {
        return Ok(contact.surface_height);
    }
    let cost = |s: f64| {
        insertion_fit(step, geom, &idx, s).map_or(f64::INFINITY, |(k, r)| if k > 0.0 { r } else { f64::INFINITY })
    };

    const GRID: usize = 400;
    let h = (hi - lo) / GRID as f64;
    let mut best = (0, f64::INFINITY);
    for j in 0..=GRID {
        let c = cost(lo + j as f64 * h);
        if c < best.1 {
            best = (j, c);
        }
    }
    if !best.1.is_finite() {
        return Ok(contact.surface_height);
    }
    // golden-section refinement inside the neighbouring grid cells
    let mut a = lo + (best.0 as f64 - 1.0).max(0.0) * h;
    let mut b = lo + (best.0 as f64 + 1.0).min(GRID as f64) * h;
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = cost(d);
        }
    }
    let s = 0.5 * (a + b);
    Ok(if cost(s) <= best.1 { s } else { lo + best.0 as f64 * h })
}

pub fn estimate_kp(step: &StepLog, geom: &FlipperGeometry, surface: f64) -> Result<CoefficientEstimate> {
    let idx = step.phase_indices(Phase::Insertion);
    let submerged = idx.iter().filter(|&&i| step.tip_height[i] < surface).count();
    if submerged < 10 {
        return Err(Error::DegenerateWindow("fewer than 10 submerged insertion samples"));
    }
    let (k, rmse) =
        insertion_fit(step, geom, &idx, surface).ok_or(Error::DegenerateWindow("no submerged insertion travel"))?;
    let window = [step.samples[idx[0]].t, step.samples[*idx.last().unwrap()].t];
    Ok(CoefficientEstimate { value: k, residual_rmse: rmse, window, compensated: false })
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(x.len());
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Steady-state suffix of stance, as indices into the step `[start, end)`.
pub fn steady_window(step: &StepLog, cfg: &EstimatorConfig) -> Result<(usize, usize)> {
    let idx = step.phase_indices(Phase::Stance);
    if idx.is_empty() {
        return Err(Error::MissingPhase(Phase::Stance));
    }
    let (first, end) = (idx[0], idx[idx.len() - 1] + 1);
    let n = end - first;
    let fallback = (first + n / 2, end);
    if n < cfg.min_window || n < 3 {
        return Ok(fallback);
    }
    let fx = moving_average(&step.fx[first..end], cfg.filter_width);
    let t: Vec<f64> = step.samples[first..end].iter().map(|s| s.t).collect();
    let mut deriv = vec![0.0; n];
    for i in 1..n - 1 {
        deriv[i] = ((fx[i + 1] - fx[i - 1]) / (t[i + 1] - t[i - 1])).abs();
    }
    deriv[0] = deriv[1];
    deriv[n - 1] = deriv[n - 2];
    let peak = deriv.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok((first, end));
    }
    let limit = cfg.eta * peak;
    let start = deriv.iter().rposition(|&d| d >= limit).map_or(0, |i| i + 1);
    if n - start < cfg.min_window {
        return Ok(fallback);
    }
    Ok((first + start, end))
}

/// True when the body moved forward for long enough during stance.
pub fn is_advancing(step: &StepLog, cfg: &EstimatorConfig) -> bool {
    let Some(body) = &step.body else { return false };
    let mut run = 0;
    for i in step.phase_indices(Phase::Stance) {
        if body[i].1 > cfg.advance_speed {
            run += 1;
            if run >= cfg.advance_samples {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Shear strength from the steady part of stance.
///
/// When the body advanced, the mud held and the flipper only felt its share
/// of the load, so the body drag is added back before fitting.
pub fn estimate_ks(
    step: &StepLog,
    geom: &FlipperGeometry,
    surface: f64,
    body_drag: f64,
    advancing: bool,
    cfg: &EstimatorConfig,
) -> Result<CoefficientEstimate> {
    let (a, b) = steady_window(step, cfg)?;
    let model: Vec<f64> = (a..b)
        .map(|i| {
            let z = (surface - step.tip_height[i]).max(0.0);
            submerged_geometry(step.pose(i), geom, z).shear_integral()
        })
        .collect();
    let data: Vec<f64> =
        (a..b).map(|i| if advancing { (2.0 * step.fx[i] + body_drag) / 2.0 } else { step.fx[i] }).collect();
    let (k, rmse) = fit_through_origin(&model, &data).ok_or(Error::DegenerateWindow("stance plate above surface"))?;
    Ok(CoefficientEstimate {
        value: k,
        residual_rmse: rmse,
        window: [step.samples[a].t, step.samples[b - 1].t],
        compensated: advancing,
    })
}

/// Extraction resistance from the final pull-out of the step.
pub fn estimate_ke(
    step: &StepLog,
    geom: &FlipperGeometry,
    surface: f64,
    cfg: &EstimatorConfig,
) -> Result<CoefficientEstimate> {
    let idx = step.phase_indices(Phase::Extraction);
    if idx.is_empty() {
        return Err(Error::MissingPhase(Phase::Extraction));
    }
    let peak_all = idx.iter().map(|&i| step.fz[i].abs()).fold(0.0, f64::max);
    if peak_all < cfg.min_peak {
        return Err(Error::NoPeak { threshold: cfg.min_peak });
    }
    // retries re-descend; fit only the pull from the last depth maximum
    let depth = |i: usize| surface - step.tip_height[i];
    let mut start = 0;
    for j in 1..idx.len() {
        if depth(idx[j]) > depth(idx[j - 1]) {
            start = j;
        }
    }
    let pull = &idx[start..];
    // the first pull sample is already part-way up; the one before it sits at the start depth
    let anchor = match pull[0].checked_sub(1) {
        Some(prev) if depth(prev) > depth(pull[0]) => prev,
        _ => pull[0],
    };
    let zi = depth(anchor);
    if zi <= 0.0 {
        return Err(Error::DegenerateWindow("extraction starts above the surface"));
    }
    let g = area_integral(step.pose(anchor), geom, zi);

    let suction: Vec<f64> = pull.iter().map(|&i| (-step.fz[i]).max(0.0)).collect();
    let smooth = moving_average(&suction, cfg.filter_width);
    let peak = smooth.iter().cloned().fold(0.0, f64::max);
    if peak < cfg.min_peak {
        return Err(Error::NoPeak { threshold: cfg.min_peak });
    }
    let keep = |v: &f64| *v >= cfg.peak_fraction * peak;
    let a = smooth.iter().position(keep).unwrap();
    let b = smooth.iter().rposition(keep).unwrap() + 1;

    let model: Vec<f64> = pull[a..b]
        .iter()
        .map(|&i| g * extraction_shape(((zi - depth(i)) / zi).clamp(0.0, 1.0), cfg.extraction_ramp))
        .collect();
    let (k, rmse) =
        fit_through_origin(&model, &suction[a..b]).ok_or(Error::DegenerateWindow("empty extraction window"))?;
    Ok(CoefficientEstimate {
        value: k,
        residual_rmse: rmse,
        window: [step.samples[pull[a]].t, step.samples[pull[b - 1]].t],
        compensated: false,
    })
}

/// Everything one step yields. Errors are kept per coefficient so a missed
/// contact or a clean pull-out does not hide the others.
#[derive(Debug)]
pub struct StepEstimates {
    pub surface: Result<f64>,
    pub kp: Result<CoefficientEstimate>,
    /// Raw fit of the measured shear.
    pub ks: Result<CoefficientEstimate>,
    /// Drag-compensated fit, present when the body advanced.
    pub ks_compensated: Option<CoefficientEstimate>,
    pub advancing: bool,
    pub ke: Result<CoefficientEstimate>,
}

impl StepEstimates {
    fn ok(r: &Result<CoefficientEstimate>) -> Option<f64> {
        r.as_ref().ok().map(|e| e.value)
    }

    pub fn kp_value(&self) -> Option<f64> {
        Self::ok(&self.kp)
    }

    pub fn ks_value(&self) -> Option<f64> {
        Self::ok(&self.ks)
    }

    pub fn ke_value(&self) -> Option<f64> {
        Self::ok(&self.ke)
    }

    /// Best shear estimate: compensated when available.
    pub fn ks_best(&self) -> Option<f64> {
        self.ks_compensated.map(|e| e.value).or_else(|| self.ks_value())
    }
}

pub fn estimate_step(step: &StepLog, geom: &FlipperGeometry, body_drag: f64, cfg: &EstimatorConfig) -> StepEstimates {
    let surface = detect_surface(step, cfg.contact_threshold).and_then(|c| locate_surface(step, geom, &c));
    let advancing = is_advancing(step, cfg);
    let with_surface = |f: &dyn Fn(f64) -> Result<CoefficientEstimate>| match &surface {
        Ok(s) => f(*s),
        Err(_) => Err(Error::NoContact { threshold: cfg.contact_threshold }),
    };
    let kp = with_surface(&|s| estimate_kp(step, geom, s));
    let ks = with_surface(&|s| estimate_ks(step, geom, s, body_drag, false, cfg));
    let ks_compensated =
        if advancing { with_surface(&|s| estimate_ks(step, geom, s, body_drag, true, cfg)).ok() } else { None };
    let ke = with_surface(&|s| estimate_ke(step, geom, s, cfg));
    StepEstimates { surface, kp, ks, ks_compensated, advancing, ke }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A log whose forces are prescribed directly, at alpha = beta = 0.
    fn synthetic(phases: &[(Phase, usize)], dt: f64, f: impl Fn(usize, Phase) -> (f64, f64)) -> StepLog {
        let g = FlipperGeometry::default();
        let mut samples = Vec::new();
        let mut k = 0;
        for &(phase, n) in phases {
            for _ in 0..n {
                let (fx, fz) = f(k, phase);
                samples.push(SampleRecord {
                    t: k as f64 * dt,
                    alpha: 0.0,
                    beta: 0.0,
                    current1: 0.0,
                    current2: 0.0,
                    tau1_sense: fx * g.arm_length,
                    tau2_sense: fz * g.arm_length,
                    phase,
                });
                k += 1;
            }
        }
        StepLog::new(samples, &g)
    }

    #[test]
    fn no_force_means_no_contact() {
        let s = synthetic(&[(Phase::Insertion, 50)], 0.01, |_, _| (0.0, 0.0));
        assert!(matches!(detect_surface(&s, 0.5), Err(Error::NoContact { .. })));
        assert!(matches!(detect_surface(&s, 0.0), Err(Error::NoContact { .. })));
    }

    #[test]
    fn ramp_crossing() {
        // fz = 2 (t - 0.1013) crosses 0.5 N at t* = 0.3513, i.e. sample 133.49
        let dt = 1.0 / 380.0;
        let s = synthetic(&[(Phase::Insertion, 400)], dt, |k, _| (0.0, 2.0 * (k as f64 * dt - 0.1013)));
        let c = detect_surface(&s, 0.5).unwrap();
        assert_eq!(c.index, 134);
        assert!((c.t_contact - 134.0 * dt).abs() < 1e-12);

        let z = detect_surface(&s, 0.0).unwrap();
        let first_pos = (0..400).find(|&k| 2.0 * (k as f64 * dt - 0.1013) > 0.0).unwrap();
        assert_eq!(z.index, first_pos);
    }

    #[test]
    fn missing_insertion_phase() {
        let s = synthetic(&[(Phase::Stance, 5)], 0.01, |_, _| (0.0, 1.0));
        assert!(matches!(detect_surface(&s, 0.5), Err(Error::MissingPhase(Phase::Insertion))));
    }

    #[test]
    fn constant_shear_uses_whole_stance() {
        let s = synthetic(&[(Phase::Insertion, 10), (Phase::Stance, 200)], 0.01, |_, p| {
            (if p == Phase::Stance { 1.0 } else { 0.0 }, 0.0)
        });
        assert_eq!(steady_window(&s, &EstimatorConfig::default()).unwrap(), (10, 210));
    }

    #[test]
    fn rise_is_excluded() {
        // saturating exponential with a time constant of 5 samples out of 300
        let tau = 0.05;
        let s = synthetic(&[(Phase::Stance, 300)], 0.01, |k, _| (1.0 - (-(k as f64 * 0.01) / tau).exp(), 0.0));
        let (a, b) = steady_window(&s, &EstimatorConfig::default()).unwrap();
        assert_eq!(b, 300);
        // fx must have reached 95% of its plateau by the window start
        assert!(1.0 - (-(a as f64 * 0.01) / tau).exp() > 0.95, "window starts at {a}");
        assert!(a < 150);
    }

    #[test]
    fn short_stance_falls_back_to_second_half() {
        let s = synthetic(&[(Phase::Insertion, 3), (Phase::Stance, 12)], 0.01, |k, _| (k as f64, 0.0));
        assert_eq!(steady_window(&s, &EstimatorConfig::default()).unwrap(), (9, 15));
    }

    #[test]
    fn advancing_needs_a_sustained_run() {
        let base = synthetic(&[(Phase::Stance, 40)], 0.01, |_, _| (1.0, 0.0));
        let cfg = EstimatorConfig::default();
        let flicker: Vec<_> = (0..40).map(|i| (0.0, if i % 5 == 0 { 0.0 } else { 0.1 })).collect();
        assert!(!is_advancing(&base.clone().with_body(flicker), &cfg));
        let steady: Vec<_> = (0..40).map(|i| (0.0, if i > 20 { 0.1 } else { 0.0 })).collect();
        assert!(is_advancing(&base.clone().with_body(steady), &cfg));
        assert!(!is_advancing(&base, &cfg));
    }

    #[test]
    fn compensation_adds_half_the_drag() {
        let g = FlipperGeometry::default();
        // plate 3 cm into the mud: surface 2 cm above the joint-level tip
        let surface = 0.03 + g.tip_height(JointPose::default());
        let s = synthetic(&[(Phase::Stance, 100)], 0.01, |_, _| (1.3, 0.0));
        let cfg = EstimatorConfig::default();
        let raw = estimate_ks(&s, &g, surface, 2.5, false, &cfg).unwrap();
        let comp = estimate_ks(&s, &g, surface, 2.5, true, &cfg).unwrap();
        let shear = 0.025 * 0.03 * 0.03 / 2.0;
        assert!((raw.value - 1.3 / shear).abs() < 1e-6 * raw.value);
        assert!((comp.value - 2.55 / shear).abs() < 1e-6 * comp.value);
        assert!(comp.compensated && !raw.compensated);
        assert!(raw.residual_rmse < 1e-9);
    }

    #[test]
    fn weak_pull_has_no_peak() {
        let g = FlipperGeometry::default();
        let s = synthetic(&[(Phase::Extraction, 50)], 0.01, |_, _| (0.0, -0.1));
        assert!(matches!(estimate_ke(&s, &g, 0.0, &EstimatorConfig::default()), Err(Error::NoPeak { .. })));
    }
}
