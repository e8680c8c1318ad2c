//! Scenario orchestration and on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::actuator::{run_calibration, CalibrationReport};
use crate::config::{ExperimentConfig, Scenario, SweepCell};
use crate::error::{Error, Result};
use crate::par;
use crate::plot::{chart, Series, Style};
use crate::sim::{run_trial, FailureKind, GaitMode, Mount, Trackway, TrialConfig, TrialResult};

pub const SAMPLES_HEADER: [&str; 15] = [
    "t", "phase", "flipper", "alpha", "beta", "I1", "I2", "tau1", "tau2", "fx", "fz", "depth", "body_x", "body_v",
    "segment",
];

pub const STRIDES_HEADER: [&str; 9] =
    ["stride", "segment", "kp_hat", "ks_hat", "ks_compensated", "ke_hat", "z_cmd", "stride_len", "failures"];

pub const CALIBRATION_HEADER: [&str; 4] = ["mass", "tau_ext", "tau_mean", "tau_std"];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub plots: Option<bool>,
}

/// Headline numbers of one run, in display units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub entries: Vec<(String, String)>,
}

impl RunSummary {
    fn new(scenario: Scenario) -> Self {
        Self { scenario: scenario.label().to_string(), entries: Vec::new() }
    }

    fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = format!("scenario: {}\n", self.scenario);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k:<width$}  {v}");
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_samples_csv(path: &Path, result: &TrialResult, track: &Trackway) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SAMPLES_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.t.to_string(),
            r.phase.label().to_string(),
            r.flipper.to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.current1.to_string(),
            r.current2.to_string(),
            r.tau1.to_string(),
            r.tau2.to_string(),
            r.fx.to_string(),
            r.fz.to_string(),
            r.depth.to_string(),
            r.body_x.to_string(),
            r.body_v.to_string(),
            track.segments()[r.segment].id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_strides_csv(path: &Path, result: &TrialResult, track: &Trackway) -> Result<()> {
    let failures = result.failures();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STRIDES_HEADER)?;
    for s in &result.strides {
        let kinds: Vec<&str> = failures
            .iter()
            .filter(|f| f.stride == s.index)
            .map(|f| match f.kind {
                FailureKind::Slip => "slip",
                FailureKind::Extraction => "extraction",
            })
            .collect();
        let mut label = kinds.join(";");
        if s.stuck {
            label.push_str(";stuck");
        }
        w.write_record([
            s.index.to_string(),
            track.segments()[s.segment].id.clone(),
            opt(s.estimates.kp),
            opt(s.estimates.ks),
            opt(s.estimates.ks_compensated),
            opt(s.estimates.ke),
            s.z_cmd.to_string(),
            s.stride_len.to_string(),
            label,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_calibration_csv(path: &Path, report: &CalibrationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CALIBRATION_HEADER)?;
    for s in &report.per_weight {
        w.write_record([s.mass.to_string(), s.tau_ext.to_string(), s.mean.to_string(), s.std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn trial_plots(dir: &Path, result: &TrialResult) -> Result<()> {
    let first: Vec<_> = result
        .rows
        .iter()
        .filter(|r| r.flipper == 0)
        .take_while(|r| result.strides.len() < 2 || r.t < result.strides[1].t_start)
        .collect();
    let traces = chart(
        "Flipper forces, first stride",
        "t (s)",
        "force (N)",
        &[
            Series { label: "fz", color: "#1f77b4", points: first.iter().map(|r| (r.t, r.fz)).collect() },
            Series { label: "fx", color: "#d62728", points: first.iter().map(|r| (r.t, r.fx)).collect() },
        ],
        Style::Line,
    );
    fs::write(dir.join("traces.svg"), traces)?;

    let pick = |f: fn(&crate::sim::StrideRecord) -> Option<(f64, f64)>| -> Vec<(f64, f64)> {
        result.strides.iter().filter_map(f).collect()
    };
    let scatter = chart(
        "Estimate vs oracle",
        "oracle (N/m^3)",
        "estimate (N/m^3)",
        &[
            Series { label: "kp", color: "#1f77b4", points: pick(|s| s.estimates.kp.map(|e| (s.truth.kp, e))) },
            Series { label: "ks", color: "#d62728", points: pick(|s| s.estimates.ks_best().map(|e| (s.truth.ks, e))) },
            Series { label: "ke", color: "#2ca02c", points: pick(|s| s.estimates.ke.map(|e| (s.truth.ke, e))) },
        ],
        Style::Scatter,
    );
    fs::write(dir.join("estimates.svg"), scatter)?;
    Ok(())
}

fn mean_ratio(result: &TrialResult, seg: usize, f: impl Fn(&crate::sim::StrideRecord) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = result.strides.iter().filter(|s| s.segment == seg).filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize_trial(summary: &mut RunSummary, result: &TrialResult, track: &Trackway) {
    summary.push("strides", result.strides.len().to_string());
    summary.push("final_x_cm", format!("{:.2}", result.final_x * 100.0));
    summary.push("duration_s", format!("{:.3}", result.duration));
    for (i, seg) in result.segments.iter().enumerate() {
        let id = &seg.id;
        let truth = track.segments()[i].coeffs;
        summary.push(format!("{id}.w"), format!("{:.3}", track.segments()[i].w));
        summary.push(format!("{id}.strides"), seg.strides.to_string());
        summary.push(
            format!("{id}.velocity_cm_s"),
            seg.velocity.map_or("n/a".to_string(), |v| format!("{:.2}", v * 100.0)),
        );
        summary.push(format!("{id}.slip_failures"), seg.slips.to_string());
        summary.push(format!("{id}.extraction_failures"), seg.extraction_failures.to_string());
        summary.push(format!("{id}.stuck"), seg.stuck.to_string());
        let ratio = |name: &str, r: Option<f64>| {
            (format!("{id}.{name}_over_truth"), r.map_or("n/a".into(), |x| format!("{x:.3}")))
        };
        let (k, v) = ratio("kp", mean_ratio(result, i, |s| s.estimates.kp.map(|e| e / truth.kp)));
        summary.push(k, v);
        let (k, v) = ratio("ks", mean_ratio(result, i, |s| s.estimates.ks.map(|e| e / truth.ks)));
        summary.push(k, v);
        let (k, v) =
            ratio("ks_compensated", mean_ratio(result, i, |s| s.estimates.ks_compensated.map(|e| e / truth.ks)));
        summary.push(k, v);
        let (k, v) = ratio("ke", mean_ratio(result, i, |s| s.estimates.ke.map(|e| e / truth.ke)));
        summary.push(k, v);
    }
}

/// Trial settings a scenario actually runs with.
fn scenario_trial(cfg: &ExperimentConfig) -> TrialConfig {
    let mut t = cfg.trial;
    match cfg.scenario {
        Scenario::SingleFlipper => {
            t.mount = Mount::Locked;
            if t.mode == GaitMode::Adaptive {
                t.mode = GaitMode::Fixed { depth: t.gait.depth };
            }
        }
        Scenario::Adapt => t.mode = GaitMode::Adaptive,
        _ => {}
    }
    t
}

fn scenario_trackway(cfg: &ExperimentConfig) -> Result<Trackway> {
    let track = cfg.trackway()?;
    if cfg.scenario == Scenario::SingleFlipper {
        // a clamped body never leaves the first segment
        let s = &track.segments()[0];
        return Trackway::uniform(&s.id, s.w, s.coeffs, s.x_end - s.x_start);
    }
    Ok(track)
}

fn write_trial(dir: &Path, result: &TrialResult, track: &Trackway, summary: &RunSummary, plots: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_samples_csv(&dir.join("samples.csv"), result, track)?;
    write_strides_csv(&dir.join("strides.csv"), result, track)?;
    fs::write(dir.join("summary.txt"), summary.render())?;
    if plots {
        trial_plots(dir, result)?;
    }
    Ok(())
}

fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.scenario == Scenario::Sweep {
        let rows = sweep(cfg, opts)?;
        let mut summary = RunSummary::new(Scenario::Sweep);
        summary.push("cells", rows.len().to_string());
        summary.push("failed_cells", rows.iter().filter(|r| r.status != "ok").count().to_string());
        return Ok(summary);
    }
    let seed = opts.seed.unwrap_or(cfg.seed);
    let dir = output_dir(cfg, opts);
    let plots = opts.plots.unwrap_or(cfg.plots);
    fs::create_dir_all(&dir)?;
    let mut summary = RunSummary::new(cfg.scenario);
    summary.push("seed", seed.to_string());

    if cfg.scenario == Scenario::Calibrate {
        let c = &cfg.calibration;
        let arm = c.moment_arm.unwrap_or(cfg.trial.geometry.arm_length);
        let report = run_calibration(&c.weights, arm, &cfg.trial.motor, c.trials, seed)?;
        for w in &report.per_weight {
            summary.push(
                format!("weight_{}g", (w.mass * 1000.0).round()),
                format!("tau_ext {:.5} N*m, mean {:.5}, std {:.5}", w.tau_ext, w.mean, w.std),
            );
        }
        summary.push("rmse_N_m", format!("{:.5}", report.rmse));
        write_calibration_csv(&dir.join("calibration.csv"), &report)?;
        fs::write(dir.join("summary.txt"), summary.render())?;
        if plots {
            let pts = report.per_weight.iter().map(|w| (w.tau_ext, w.mean)).collect();
            let svg = chart(
                "Sensed vs applied torque",
                "applied (N*m)",
                "sensed (N*m)",
                &[Series { label: "mean of trials", color: "#1f77b4", points: pts }],
                Style::Scatter,
            );
            fs::write(dir.join("calibration.svg"), svg)?;
        }
        return Ok(summary);
    }

    let track = scenario_trackway(cfg)?;
    let trial = scenario_trial(cfg);
    let result = run_trial(&track, &trial, seed)?;
    summarize_trial(&mut summary, &result, &track);
    write_trial(&dir, &result, &track, &summary, plots)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub status: String,
    pub final_x: Option<f64>,
    pub strides: Option<usize>,
    pub slips: Option<usize>,
    pub extraction_failures: Option<usize>,
    pub stuck: Option<usize>,
    /// Per-segment mean velocity, m/s.
    pub velocities: Vec<Option<f64>>,
}

fn mode_label(m: GaitMode) -> (String, String) {
    match m {
        GaitMode::Fixed { depth } => ("fixed".into(), depth.to_string()),
        GaitMode::Adaptive => ("adaptive".into(), String::new()),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: &SweepCell,
    seed: u64,
    dir: &Path,
    plots: bool,
) -> Result<(TrialResult, Trackway)> {
    let mut c = cfg.clone();
    c.scenario = Scenario::TrackwayMap;
    c.catalog.scale *= cell.scale;
    c.trial.mode = cell.mode;
    c.trial.motor.noise_rel = cell.noise;
    c.validate()?;
    let track = c.trackway()?;
    let result = run_trial(&track, &c.trial, seed)?;
    let mut summary = RunSummary::new(Scenario::TrackwayMap);
    summary.push("seed", seed.to_string());
    summarize_trial(&mut summary, &result, &track);
    write_trial(dir, &result, &track, &summary, plots)?;
    Ok((result, track))
}

/// Run every grid cell into its own directory and write `sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let dir = output_dir(cfg, opts);
    let plots = opts.plots.unwrap_or(cfg.plots);
    fs::create_dir_all(&dir)?;
    let segment_ids: Vec<String> = cfg.trackway()?.segments().iter().map(|s| s.id.clone()).collect();
    let cells = cfg.sweep.cells();

    let rows = par::map(&cells, |cell| {
        let cell_dir = dir.join(format!("cell_{:03}", cell.index));
        match run_cell(cfg, cell, seed, &cell_dir, plots) {
            Ok((r, _)) => SweepRow {
                cell: *cell,
                status: "ok".into(),
                final_x: Some(r.final_x),
                strides: Some(r.strides.len()),
                slips: Some(r.segments.iter().map(|s| s.slips).sum()),
                extraction_failures: Some(r.segments.iter().map(|s| s.extraction_failures).sum()),
                stuck: Some(r.stuck_count()),
                velocities: r.segments.iter().map(|s| s.velocity).collect(),
            },
            Err(e) => SweepRow {
                cell: *cell,
                status: format!("error: {e}"),
                final_x: None,
                strides: None,
                slips: None,
                extraction_failures: None,
                stuck: None,
                velocities: vec![None; segment_ids.len()],
            },
        }
    });

    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    let mut header: Vec<String> = [
        "cell",
        "mode",
        "depth",
        "catalog_scale",
        "noise_rel",
        "status",
        "final_x",
        "strides",
        "slip_failures",
        "extraction_failures",
        "stuck",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(segment_ids.iter().map(|id| format!("v_{id}")));
    w.write_record(&header)?;
    for r in &rows {
        let (mode, depth) = mode_label(r.cell.mode);
        let count = |c: Option<usize>| c.map(|x| x.to_string()).unwrap_or_default();
        let mut rec = vec![
            r.cell.index.to_string(),
            mode,
            depth,
            r.cell.scale.to_string(),
            r.cell.noise.to_string(),
            r.status.clone(),
            opt(r.final_x),
            count(r.strides),
            count(r.slips),
            count(r.extraction_failures),
            count(r.stuck),
        ];
        rec.extend(r.velocities.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Exit status for an error: 1 for bad configuration, 2 for runtime failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::OutOfRange { .. } | Error::WorkspaceExceeded { .. } => 1,
        _ => 2,
    }
}
