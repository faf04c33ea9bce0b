//! Run configuration: flat `key = value` files with `#` comments.
//!
//! Every key has a default (see [`RunConfig::default`]); a config file only
//! lists what it changes, and command-line overrides are applied on top
//! through the same [`RunConfig::set`] path.

use std::fmt::Write as _;

use thiserror::Error;

use crate::controller::{default_positions, ControllerConfig, LAMP_COUNT};
use crate::detection::{Detector, DEFAULT_MIN_AREA, DEFAULT_THRESHOLD};
use crate::harness::{HarnessError, Scenario, SuccessRule, DEFAULT_CAMERA_HEIGHT};
use crate::imaging::{SceneConfig, SceneError};
use crate::kinematics::{calibrate, Calibration};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot use `{value}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub camera_height: f64,
    pub threshold: u8,
    pub min_area: usize,
    pub controller: ControllerConfig,
    /// `None` means evenly spaced over the segment.
    pub lamp_positions: Option<[f64; LAMP_COUNT]>,
    pub trials: usize,
    pub seed: u64,
    pub success_rule: SuccessRule,
    /// Frame count for `render`; defaults to one full traverse.
    pub frames: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            camera_height: DEFAULT_CAMERA_HEIGHT,
            threshold: DEFAULT_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            controller: ControllerConfig::default(),
            lamp_positions: None,
            trials: 100,
            seed: 1,
            success_rule: SuccessRule::default(),
            frames: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_positions(key: &str, value: &str) -> Result<[f64; LAMP_COUNT], ConfigError> {
    let parsed = value
        .split(',')
        .map(|v| parse_value::<f64>(key, v.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    parsed.try_into().map_err(|v: Vec<f64>| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: format!("expected {LAMP_COUNT} positions, got {}", v.len()),
    })
}

impl RunConfig {
    pub const KEYS: [&'static str; 25] = [
        "segment_length",
        "resolution",
        "frame_height",
        "vehicle_length",
        "vehicle_width",
        "vehicle_intensity",
        "background_intensity",
        "true_speed",
        "blur_fraction",
        "blur_radius",
        "noise_amplitude",
        "frame_rate",
        "camera_height",
        "threshold",
        "min_area",
        "lead_time",
        "lag_margin",
        "processing_latency",
        "v_fallback",
        "lamp_positions",
        "trials",
        "seed",
        "max_offset",
        "require_reset",
        "frames",
    ];

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let s = &mut self.scene;
        let c = &mut self.controller;
        match key {
            "segment_length" => s.segment_length = parse_value(key, value)?,
            "resolution" => s.resolution = parse_value(key, value)?,
            "frame_height" => s.frame_height = parse_value(key, value)?,
            "vehicle_length" => s.vehicle_length = parse_value(key, value)?,
            "vehicle_width" => s.vehicle_width = parse_value(key, value)?,
            "vehicle_intensity" => s.vehicle_intensity = parse_value(key, value)?,
            "background_intensity" => s.background_intensity = parse_value(key, value)?,
            "true_speed" => s.true_speed = parse_value(key, value)?,
            "blur_fraction" => s.blur_fraction = parse_value(key, value)?,
            "blur_radius" => s.blur_radius = parse_value(key, value)?,
            "noise_amplitude" => s.noise_amplitude = parse_value(key, value)?,
            "frame_rate" => s.frame_rate = parse_value(key, value)?,
            "camera_height" => self.camera_height = parse_value(key, value)?,
            "threshold" => self.threshold = parse_value(key, value)?,
            "min_area" => self.min_area = parse_value(key, value)?,
            "lead_time" => c.lead_time = parse_value(key, value)?,
            "lag_margin" => c.lag_margin = parse_value(key, value)?,
            "processing_latency" => c.processing_latency = parse_value(key, value)?,
            "v_fallback" => c.v_fallback = parse_value(key, value)?,
            "lamp_positions" => self.lamp_positions = Some(parse_positions(key, value)?),
            "trials" => self.trials = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "max_offset" => self.success_rule.max_offset = parse_value(key, value)?,
            "require_reset" => self.success_rule.require_reset = parse_value(key, value)?,
            "frames" => self.frames = Some(parse_value(key, value)?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_string(),
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn lamp_positions(&self) -> [f64; LAMP_COUNT] {
        self.lamp_positions
            .unwrap_or_else(|| default_positions(self.scene.segment_length))
    }

    pub fn detector(&self) -> Detector {
        Detector {
            threshold: self.threshold,
            min_area: self.min_area,
            reject_clipped: true,
        }
    }

    /// The segment spans the full frame width, so `c = segment_length / resolution`.
    pub fn calibration(&self) -> Result<Calibration, ConfigError> {
        calibrate(
            self.scene.segment_length,
            self.scene.resolution as f64,
            self.scene.frame_rate,
            self.scene.segment_length,
            self.camera_height,
        )
        .map_err(|e| match e {
            crate::kinematics::KinematicsError::NonPositive { field, .. } => ConfigError::Invalid {
                key: match field {
                    "reference_length_m" => "segment_length",
                    "reference_length_px" => "resolution",
                    other => other,
                }
                .to_string(),
                reason: e.to_string(),
            },
            other => ConfigError::Invalid {
                key: "calibration".into(),
                reason: other.to_string(),
            },
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario().map(|_| ())
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        self.scene.validate().map_err(|e| match e {
            SceneError::Invalid { field, reason } => ConfigError::Invalid {
                key: field.to_string(),
                reason,
            },
            other => ConfigError::Invalid {
                key: "scene".into(),
                reason: other.to_string(),
            },
        })?;
        let scenario = Scenario {
            scene: self.scene.clone(),
            calibration: self.calibration()?,
            controller: self.controller,
            detector: self.detector(),
            lamp_positions: self.lamp_positions(),
            trials: self.trials,
            seed: self.seed,
            success_rule: self.success_rule,
        };
        scenario.validate().map_err(|e| {
            let key = match &e {
                HarnessError::Control(crate::controller::ControlError::Config { field, .. }) => field,
                HarnessError::Control(_) => "lamp_positions",
                HarnessError::NoTrials => "trials",
                _ => "scenario",
            };
            ConfigError::Invalid {
                key: key.to_string(),
                reason: e.to_string(),
            }
        })?;
        Ok(scenario)
    }

    /// Renders the effective configuration in the file format.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let c = &self.controller;
        let positions = self
            .lamp_positions()
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("segment_length", s.segment_length.to_string());
        kv("resolution", s.resolution.to_string());
        kv("frame_height", s.frame_height.to_string());
        kv("vehicle_length", s.vehicle_length.to_string());
        kv("vehicle_width", s.vehicle_width.to_string());
        kv("vehicle_intensity", s.vehicle_intensity.to_string());
        kv("background_intensity", s.background_intensity.to_string());
        kv("true_speed", s.true_speed.to_string());
        kv("blur_fraction", s.blur_fraction.to_string());
        kv("blur_radius", s.blur_radius.to_string());
        kv("noise_amplitude", s.noise_amplitude.to_string());
        kv("frame_rate", s.frame_rate.to_string());
        kv("camera_height", self.camera_height.to_string());
        kv("threshold", self.threshold.to_string());
        kv("min_area", self.min_area.to_string());
        kv("lead_time", c.lead_time.to_string());
        kv("lag_margin", c.lag_margin.to_string());
        kv("processing_latency", c.processing_latency.to_string());
        kv("v_fallback", c.v_fallback.to_string());
        kv("lamp_positions", positions);
        kv("trials", self.trials.to_string());
        kv("seed", self.seed.to_string());
        kv("max_offset", self.success_rule.max_offset.to_string());
        kv("require_reset", self.success_rule.require_reset.to_string());
        if let Some(f) = self.frames {
            kv("frames", f.to_string());
        }
        out
    }
}
