//! Monte-Carlo trials of the full detect, track and switch loop against a
//! synthetic ground truth.
//!
//! Every trial renders one traverse of the vehicle over the segment. What
//! varies between trials is drawn from an [`Lcg`] seeded with
//! `scenario.seed + trial_index`, in this order:
//!
//! 1. the start phase: the first frame is captured at a uniform time in
//!    `[0, frame_interval)` after the leading edge enters the segment;
//! 2. one uniform per frame; the `round(blur_fraction * n)` frames with the
//!    smallest draws are blurred (so for a fixed seed, the blurred set at a
//!    lower fraction is contained in the set at a higher one);
//! 3. one 64-bit noise seed per frame.
//!
//! A trial succeeds when every lamp the vehicle reached was switched on no
//! later than `max_offset` and, with `require_reset`, every lamp the whole
//! vehicle has cleared by `lag_margin` was switched off again after the
//! vehicle passed it. Offsets are measured from the vehicle's center, at the
//! moment the command reaches the actuator (frame time plus processing
//! latency).

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::controller::{
    control_step, switch_on_offset, Action, ControlError, ControllerConfig, LampBank, LampEvent,
    LAMP_COUNT,
};
use crate::detection::{DetectionError, Detector};
use crate::imaging::{apply_blur, apply_noise, render_background, render_scene, Frame, SceneConfig, SceneError};
use crate::kinematics::{calibrate, update_track, Calibration, KinematicsError, TrackState};
use crate::rng::Lcg;

/// Camera height of the original rig, carried for reference.
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.075;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("scenario needs at least one trial")]
    NoTrials,
    #[error("reference speed must be > 0, got {0}")]
    NonPositiveReference(f64),
    #[error("sweep list `{0}` is empty")]
    EmptySweep(&'static str),
    #[error("zip pairing needs equally long lists, got {speeds} speeds and {blurs} blur levels")]
    PairingMismatch { speeds: usize, blurs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessRule {
    /// Largest acceptable switch-on offset in meters.
    pub max_offset: f64,
    pub require_reset: bool,
}

impl Default for SuccessRule {
    fn default() -> Self {
        Self {
            max_offset: 0.0,
            require_reset: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scene: SceneConfig,
    pub calibration: Calibration,
    pub controller: ControllerConfig,
    pub detector: Detector,
    pub lamp_positions: [f64; LAMP_COUNT],
    pub trials: usize,
    pub seed: u64,
    pub success_rule: SuccessRule,
}

impl Scenario {
    /// Scenario with calibration taken from the scene geometry (the segment
    /// spans the frame width) and default controller, detector and lamps.
    pub fn from_scene(scene: SceneConfig) -> Result<Self, HarnessError> {
        scene.validate()?;
        let calibration = calibrate(
            scene.segment_length,
            scene.resolution as f64,
            scene.frame_rate,
            scene.segment_length,
            DEFAULT_CAMERA_HEIGHT,
        )?;
        Ok(Self {
            lamp_positions: crate::controller::default_positions(scene.segment_length),
            scene,
            calibration,
            controller: ControllerConfig::default(),
            detector: Detector::default(),
            trials: 100,
            seed: 1,
            success_rule: SuccessRule::default(),
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scene.validate()?;
        self.controller.validate()?;
        LampBank::new(self.lamp_positions)?;
        if self.trials == 0 {
            return Err(HarnessError::NoTrials);
        }
        Ok(())
    }

    pub fn with_speed_and_blur(&self, speed: f64, blur_fraction: f64) -> Self {
        let mut s = self.clone();
        s.scene.true_speed = speed;
        s.scene.blur_fraction = blur_fraction;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureReason {
    NoDetection,
    NoSpeed,
    LateSwitch,
    MissingReset,
}

impl FailureReason {
    pub const ALL: [FailureReason; 4] = [
        FailureReason::NoDetection,
        FailureReason::NoSpeed,
        FailureReason::LateSwitch,
        FailureReason::MissingReset,
    ];
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::NoDetection => "NoDetection",
            FailureReason::NoSpeed => "NoSpeed",
            FailureReason::LateSwitch => "LateSwitch",
            FailureReason::MissingReset => "MissingReset",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub trial_index: usize,
    pub v_true: f64,
    pub v_arls: Option<f64>,
    pub delta_v_pct: Option<f64>,
    pub blur_pct: f64,
    /// Switch-on offset of every lamp that was triggered.
    pub offsets: [Option<f64>; LAMP_COUNT],
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub frames: usize,
    pub detections: usize,
    pub events: Vec<LampEvent>,
    pub final_register: u8,
}

/// `|v_arls - v_s| / v_s * 100`.
pub fn delta_v_pct(v_s: f64, v_arls: f64) -> Result<f64, HarnessError> {
    if v_s.is_nan() || v_s <= 0.0 {
        return Err(HarnessError::NonPositiveReference(v_s));
    }
    Ok((v_arls - v_s).abs() / v_s * 100.0)
}

/// For each `(v_s, v_arls)` pair: does `v_arls` lie within `band_pct`
/// percent of `v_s`?
pub fn correlation_band_check(pairs: &[(f64, f64)], band_pct: f64) -> Vec<bool> {
    pairs
        .iter()
        .map(|&(v_s, v_arls)| (v_arls - v_s).abs() <= band_pct / 100.0 * v_s)
        .collect()
}

/// Frames of a static scene when there is no traverse time to go by.
fn static_frame_count(scene: &SceneConfig) -> usize {
    scene.frame_rate.round().max(1.0) as usize
}

/// Indices of the `count` smallest draws, ties broken by index.
fn blurred_frames(draws: &[f64], count: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..draws.len()).collect();
    order.sort_by(|&a, &b| draws[a].total_cmp(&draws[b]).then(a.cmp(&b)));
    let mut blurred = vec![false; draws.len()];
    for &i in order.iter().take(count) {
        blurred[i] = true;
    }
    blurred
}

/// The seeded part of one traverse: capture times, which frames are
/// blurred, and the noise seed of each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversePlan {
    pub phase: f64,
    pub times: Vec<f64>,
    pub blurred: Vec<bool>,
    pub noise_seeds: Vec<u64>,
}

impl TraversePlan {
    /// `random_phase = false` captures the first frame at `t = 0` (the phase
    /// draw is still consumed). `frames` overrides the traverse length.
    pub fn new(scene: &SceneConfig, seed: u64, random_phase: bool, frames: Option<usize>) -> Self {
        let dt = scene.frame_interval();
        let mut rng = Lcg::new(seed);
        let drawn = rng.unit() * dt;
        let phase = if random_phase { drawn } else { 0.0 };
        let count = frames.unwrap_or_else(|| match scene.traverse_time() {
            Some(t_end) => ((t_end - phase) / dt + 1e-9).floor() as usize + 1,
            None => static_frame_count(scene),
        });
        let t_end = scene.traverse_time().unwrap_or(f64::INFINITY);
        // the last capture may land a rounding error past the traverse end
        let times = (0..count)
            .map(|k| {
                let t = phase + k as f64 * dt;
                if t > t_end && t - t_end < 1e-9 {
                    t_end
                } else {
                    t
                }
            })
            .collect();
        let draws: Vec<f64> = (0..count).map(|_| rng.unit()).collect();
        let blur_count = (scene.blur_fraction * count as f64).round() as usize;
        let blurred = blurred_frames(&draws, blur_count);
        let noise_seeds = (0..count).map(|_| rng.next_u64()).collect();
        Self {
            phase,
            times,
            blurred,
            noise_seeds,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Frame `k` as the camera delivers it: rendered, blurred if selected,
    /// then noisy.
    pub fn frame(&self, scene: &SceneConfig, k: usize) -> Result<Frame, SceneError> {
        let mut frame = render_scene(scene, self.times[k])?.with_index(k as u64);
        if self.blurred[k] {
            frame = apply_blur(&frame, scene.blur_radius);
        }
        Ok(apply_noise(&frame, scene.noise_amplitude, self.noise_seeds[k]))
    }
}

pub fn run_trial(scenario: &Scenario, trial_index: usize) -> Result<TrialReport, HarnessError> {
    scenario.validate()?;
    let scene = &scenario.scene;
    let cal = &scenario.calibration;
    let plan = TraversePlan::new(
        scene,
        scenario.seed.wrapping_add(trial_index as u64),
        true,
        None,
    );
    let frames = plan.len();

    let reference = render_background(scene)?;
    let mut track = TrackState::new();
    let mut bank = LampBank::new(scenario.lamp_positions)?;
    let mut detections = 0;
    let time_of = |k: u64| plan.phase + k as f64 * scene.frame_interval();
    let t_last = plan.times[frames - 1];

    for k in 0..frames {
        let frame = plan.frame(scene, k)?;
        let detection = scenario.detector.detect(&frame, &reference)?;
        detections += usize::from(detection.is_detected());
        track = update_track(&track, &detection, cal)?;
        control_step(&mut bank, &track, &scenario.controller, k as u64);
    }

    // true center of the vehicle when a command issued at frame k lands
    let latency = scenario.controller.processing_latency;
    let center_at = |k: u64| scene.vehicle_center(time_of(k) + latency);

    let mut offsets = [None; LAMP_COUNT];
    for (lamp, slot) in offsets.iter_mut().enumerate() {
        *slot = switch_on_offset(&bank, lamp, center_at).ok();
    }

    let v_true = scene.true_speed;
    let v_arls = track.v_mean;
    let delta = match v_arls {
        Some(v) if v_true > 0.0 => Some(delta_v_pct(v_true, v)?),
        _ => None,
    };

    let lead_final = scene.leading_edge(t_last);
    let rear_final = lead_final - scene.vehicle_length;
    let positions = &scenario.lamp_positions;
    let in_path: Vec<usize> = (0..LAMP_COUNT).filter(|&i| positions[i] <= lead_final).collect();
    let rule = &scenario.success_rule;

    let failure_reason = if in_path.is_empty() {
        None
    } else if detections == 0 {
        Some(FailureReason::NoDetection)
    } else if v_arls.is_none() {
        Some(FailureReason::NoSpeed)
    } else if in_path
        .iter()
        .any(|&i| offsets[i].is_none_or(|o| o > rule.max_offset + 1e-12))
    {
        Some(FailureReason::LateSwitch)
    } else if rule.require_reset
        && in_path
            .iter()
            .filter(|&&i| rear_final > positions[i] + scenario.controller.lag_margin)
            .any(|&i| {
                let last = bank.events().iter().rev().find(|e| e.lamp == i);
                !matches!(last, Some(e) if e.action == Action::Reset
                    && center_at(e.frame_index) >= positions[i])
            })
    {
        Some(FailureReason::MissingReset)
    } else {
        None
    };

    Ok(TrialReport {
        trial_index,
        v_true,
        v_arls,
        delta_v_pct: delta,
        blur_pct: scene.blur_fraction * 100.0,
        offsets,
        success: failure_reason.is_none(),
        failure_reason,
        frames,
        detections,
        final_register: bank.port_register(),
        events: bank.events().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetClass {
    /// Within one frame of travel of the lamp.
    Near,
    Early,
    Late,
    /// No lamp was switched on in any trial.
    Unknown,
}

impl fmt::Display for OffsetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffsetClass::Near => "~0",
            OffsetClass::Early => "<0",
            OffsetClass::Late => ">0",
            OffsetClass::Unknown => "na",
        })
    }
}

/// Majority class of the offsets; ties resolve towards `Near`, then `Early`.
pub fn classify_offsets(offsets: impl IntoIterator<Item = f64>, tolerance: f64) -> OffsetClass {
    let mut counts = [0usize; 3];
    for o in offsets {
        let slot = if o.abs() <= tolerance {
            0
        } else if o < 0.0 {
            1
        } else {
            2
        };
        counts[slot] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return OffsetClass::Unknown;
    }
    match counts.iter().position(|&c| c == best) {
        Some(0) => OffsetClass::Near,
        Some(1) => OffsetClass::Early,
        _ => OffsetClass::Late,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub v_true: f64,
    pub blur_pct: f64,
    pub trials: usize,
    pub successes: usize,
    pub performance_pct: f64,
    /// Mean speed estimate over successful trials, or over all trials that
    /// produced an estimate when none succeeded.
    pub mean_v_arls: Option<f64>,
    /// Mean per-trial speed error over the same trials as `mean_v_arls`.
    pub mean_delta_v_pct: Option<f64>,
    pub offset_class: OffsetClass,
    pub failures: [(FailureReason, usize); 4],
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Reduces trial reports (in trial order) to one summary row.
pub fn summarize(scenario: &Scenario, reports: &[TrialReport]) -> BatchSummary {
    let successes = reports.iter().filter(|r| r.success).count();
    let pool: Vec<&TrialReport> = if successes > 0 {
        reports.iter().filter(|r| r.success).collect()
    } else {
        reports.iter().filter(|r| r.v_arls.is_some()).collect()
    };
    let tolerance = scenario.scene.true_speed * scenario.calibration.frame_interval;
    let failures = FailureReason::ALL.map(|reason| {
        let n = reports
            .iter()
            .filter(|r| r.failure_reason == Some(reason))
            .count();
        (reason, n)
    });
    BatchSummary {
        v_true: scenario.scene.true_speed,
        blur_pct: scenario.scene.blur_fraction * 100.0,
        trials: reports.len(),
        successes,
        performance_pct: 100.0 * successes as f64 / reports.len().max(1) as f64,
        mean_v_arls: mean(pool.iter().filter_map(|r| r.v_arls)),
        mean_delta_v_pct: mean(pool.iter().filter_map(|r| r.delta_v_pct)),
        offset_class: classify_offsets(
            reports.iter().flat_map(|r| r.offsets.iter().flatten().copied()),
            tolerance,
        ),
        failures,
    }
}

/// Runs every trial (in parallel on the current rayon pool) and returns the
/// reports in trial order.
pub fn run_trials(scenario: &Scenario) -> Result<Vec<TrialReport>, HarnessError> {
    scenario.validate()?;
    (0..scenario.trials)
        .into_par_iter()
        .map(|i| run_trial(scenario, i))
        .collect()
}

pub fn run_batch(scenario: &Scenario) -> Result<BatchSummary, HarnessError> {
    let reports = run_trials(scenario)?;
    Ok(summarize(scenario, &reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// Every speed with every blur level.
    #[default]
    Cross,
    /// The i-th speed with the i-th blur level.
    Zip,
}

pub fn sweep_cells(speeds: &[f64], blur_levels: &[f64], pairing: Pairing) -> Result<Vec<(f64, f64)>, HarnessError> {
    if speeds.is_empty() {
        return Err(HarnessError::EmptySweep("speeds"));
    }
    if blur_levels.is_empty() {
        return Err(HarnessError::EmptySweep("blur_levels"));
    }
    Ok(match pairing {
        Pairing::Cross => speeds
            .iter()
            .flat_map(|&v| blur_levels.iter().map(move |&b| (v, b)))
            .collect(),
        Pairing::Zip => {
            if speeds.len() != blur_levels.len() {
                return Err(HarnessError::PairingMismatch {
                    speeds: speeds.len(),
                    blurs: blur_levels.len(),
                });
            }
            speeds.iter().copied().zip(blur_levels.iter().copied()).collect()
        }
    })
}

pub fn sweep(base: &Scenario, speeds: &[f64], blur_levels: &[f64], pairing: Pairing) -> Result<Vec<BatchSummary>, HarnessError> {
    sweep_cells(speeds, blur_levels, pairing)?
        .into_iter()
        .map(|(v, b)| run_batch(&base.with_speed_and_blur(v, b)))
        .collect()
}

pub const REPORT_HEADER: &str = "v_true,v_arls,delta_v_pct,blur_pct,offset_class,performance_pct";

pub fn report_row(s: &BatchSummary) -> String {
    let opt = |v: Option<f64>, prec: usize| v.map_or(String::new(), |x| format!("{x:.prec$}"));
    format!(
        "{:.3},{},{},{:.2},{},{:.2}",
        s.v_true,
        opt(s.mean_v_arls, 3),
        opt(s.mean_delta_v_pct, 2),
        s.blur_pct,
        s.offset_class,
        s.performance_pct
    )
}

/// Report CSV with the fixed header and one row per summary.
pub fn report_csv(summaries: &[BatchSummary]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&report_row(s));
        out.push('\n');
    }
    out
}
