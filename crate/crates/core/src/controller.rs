//! Lamp switching logic and the emulated actuator bank.
//!
//! Each lamp sits behind a set/reset latch: a trigger pulse turns it on, a
//! reset pulse turns it off, and repeated pulses of the same kind change
//! nothing. The eight latches map onto one 8-bit output register (lamp 0 is
//! the least significant bit), the width of a parallel port data bus.

use std::fmt;

use thiserror::Error;

use crate::kinematics::{predict, TrackState};

pub const LAMP_COUNT: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("lamp index {0} out of range (0..{LAMP_COUNT})")]
    LampIndex(usize),
    #[error("lamp positions must be finite, non-negative and strictly increasing: {0:?}")]
    Positions([f64; LAMP_COUNT]),
    #[error("controller parameter `{field}` must be >= 0, got {value}")]
    Config { field: &'static str, value: f64 },
    #[error("lamp {0} was never triggered")]
    NeverTriggered(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LampState {
    Off,
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Trigger,
    Reset,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Trigger => "trigger",
            Action::Reset => "reset",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LampEvent {
    pub frame_index: u64,
    pub lamp: usize,
    pub action: Action,
    /// Register value after the pulse was applied.
    pub register: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LampBank {
    lamps: [LampState; LAMP_COUNT],
    positions: [f64; LAMP_COUNT],
    events: Vec<LampEvent>,
}

/// Eight lamps evenly spaced over the segment, the first one an eighth of
/// the way in and the last one at the far end.
pub fn default_positions(segment_length: f64) -> [f64; LAMP_COUNT] {
    std::array::from_fn(|i| segment_length * (i + 1) as f64 / LAMP_COUNT as f64)
}

impl LampBank {
    /// All lamps start Off. Positions beyond the segment end are allowed and
    /// model unused outputs.
    pub fn new(positions: [f64; LAMP_COUNT]) -> Result<Self, ControlError> {
        let valid = positions.iter().all(|p| p.is_finite() && *p >= 0.0)
            && positions.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(ControlError::Positions(positions));
        }
        Ok(Self {
            lamps: [LampState::Off; LAMP_COUNT],
            positions,
            events: Vec::new(),
        })
    }

    pub fn positions(&self) -> &[f64; LAMP_COUNT] {
        &self.positions
    }

    pub fn state(&self, lamp: usize) -> LampState {
        self.lamps[lamp]
    }

    pub fn events(&self) -> &[LampEvent] {
        &self.events
    }

    fn pulse(&mut self, lamp: usize, frame_index: u64, action: Action) -> Result<(), ControlError> {
        if lamp >= LAMP_COUNT {
            return Err(ControlError::LampIndex(lamp));
        }
        self.lamps[lamp] = match action {
            Action::Trigger => LampState::On,
            Action::Reset => LampState::Off,
        };
        self.events.push(LampEvent {
            frame_index,
            lamp,
            action,
            register: self.port_register(),
        });
        Ok(())
    }

    pub fn trigger(&mut self, lamp: usize, frame_index: u64) -> Result<(), ControlError> {
        self.pulse(lamp, frame_index, Action::Trigger)
    }

    pub fn reset(&mut self, lamp: usize, frame_index: u64) -> Result<(), ControlError> {
        self.pulse(lamp, frame_index, Action::Reset)
    }

    /// Bit `i` is set iff lamp `i` is On.
    pub fn port_register(&self) -> u8 {
        self.lamps
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == LampState::On)
            .fold(0u8, |reg, (i, _)| reg | (1 << i))
    }

    /// First trigger of `lamp`, if any.
    pub fn first_trigger(&self, lamp: usize) -> Option<&LampEvent> {
        self.events
            .iter()
            .find(|e| e.lamp == lamp && e.action == Action::Trigger)
    }

    /// Event log as CSV: `frame_index,lamp_index,action,register_hex`.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("frame_index,lamp_index,action,register_hex\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},0x{:02X}\n",
                e.frame_index, e.lamp, e.action, e.register
            ));
        }
        out
    }
}

/// Register obtained by applying `events` to an all-Off bank.
pub fn replay(events: &[LampEvent]) -> u8 {
    events.iter().fold(0u8, |reg, e| match e.action {
        Action::Trigger => reg | (1 << e.lamp),
        Action::Reset => reg & !(1 << e.lamp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Seconds of warning: a lamp turns on once the vehicle is predicted to
    /// reach it within this horizon.
    pub lead_time: f64,
    /// Meters past a lamp before it is switched off again.
    pub lag_margin: f64,
    /// Delay between frame capture and the actuator receiving its command.
    pub processing_latency: f64,
    /// Assumed speed before the track has a speed estimate (m/s).
    pub v_fallback: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            lead_time: 0.12,
            lag_margin: 0.05,
            processing_latency: 0.0,
            v_fallback: 2.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (field, value) in [
            ("lead_time", self.lead_time),
            ("lag_margin", self.lag_margin),
            ("processing_latency", self.processing_latency),
            ("v_fallback", self.v_fallback),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ControlError::Config { field, value });
            }
        }
        Ok(())
    }
}

/// One control decision for frame `frame_index`.
///
/// With a speed estimate, lamp `i` is triggered when
/// `predict(r, v_mean, lead_time + processing_latency) >= pos[i]` and the
/// vehicle is not yet `lag_margin` past it. Without one, the horizon is
/// `lead_time * v_fallback`. A lamp the vehicle is more than `lag_margin`
/// past is reset. Frames without a detection change nothing.
pub fn control_step(bank: &mut LampBank, track: &TrackState, config: &ControllerConfig, frame_index: u64) {
    if !track.detected_at(frame_index) {
        return;
    }
    let Some(r) = track.r else {
        return;
    };
    let reach = match track.v_mean {
        Some(v) => predict(r, v, config.lead_time + config.processing_latency),
        None => predict(r, config.v_fallback, config.lead_time),
    };
    for i in 0..LAMP_COUNT {
        let pos = bank.positions[i];
        let passed = r > pos + config.lag_margin;
        match bank.lamps[i] {
            LampState::Off if !passed && reach >= pos => {
                bank.pulse(i, frame_index, Action::Trigger).expect("index in range");
            }
            LampState::On if passed => {
                bank.pulse(i, frame_index, Action::Reset).expect("index in range");
            }
            _ => {}
        }
    }
}

/// `r_MO - r_RL` at the moment `lamp` was first switched on. `trajectory`
/// maps the frame index of a command to the vehicle's true road position
/// when that command took effect.
pub fn switch_on_offset(bank: &LampBank, lamp: usize, trajectory: impl Fn(u64) -> f64) -> Result<f64, ControlError> {
    if lamp >= LAMP_COUNT {
        return Err(ControlError::LampIndex(lamp));
    }
    let event = bank
        .first_trigger(lamp)
        .ok_or(ControlError::NeverTriggered(lamp))?;
    Ok(trajectory(event.frame_index) - bank.positions[lamp])
}
