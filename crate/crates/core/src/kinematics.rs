//! Pixel-to-world calibration, displacement, speed and linear prediction.

use thiserror::Error;

use crate::detection::Detection;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("calibration input `{field}` must be > 0, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("frame {frame_index} has no detection")]
    NoDetection { frame_index: u64 },
    #[error("frame index {got} does not follow {previous}")]
    NonIncreasingIndex { previous: u64, got: u64 },
    #[error("speed needs at least one frame of separation")]
    ZeroFrameGap,
}

/// Scale factor and timing of the camera over the test segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// meters per pixel
    pub c: f64,
    pub frame_rate: f64,
    /// seconds between frames
    pub frame_interval: f64,
    pub segment_length: f64,
    /// Informational only; `c` already encodes the viewing geometry.
    pub camera_height: f64,
}

/// Derives `c` from a reference length of known size in meters spanning a
/// measured number of pixels.
pub fn calibrate(
    reference_length_m: f64,
    reference_length_px: f64,
    frame_rate: f64,
    segment_length: f64,
    camera_height: f64,
) -> Result<Calibration, KinematicsError> {
    for (field, value) in [
        ("reference_length_m", reference_length_m),
        ("reference_length_px", reference_length_px),
        ("frame_rate", frame_rate),
        ("segment_length", segment_length),
        ("camera_height", camera_height),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(KinematicsError::NonPositive { field, value });
        }
    }
    Ok(Calibration {
        c: reference_length_m / reference_length_px,
        frame_rate,
        frame_interval: 1.0 / frame_rate,
        segment_length,
        camera_height,
    })
}

pub fn pixels_to_meters(cal: &Calibration, px_x: f64, px_y: f64) -> (f64, f64) {
    (cal.c * px_x, cal.c * px_y)
}

/// Straight-line distance in meters between two detections' centroids.
pub fn displacement(d1: &Detection, d2: &Detection, cal: &Calibration) -> Result<f64, KinematicsError> {
    let (x1, y1) = d1.centroid().ok_or(KinematicsError::NoDetection {
        frame_index: d1.frame_index,
    })?;
    let (x2, y2) = d2.centroid().ok_or(KinematicsError::NoDetection {
        frame_index: d2.frame_index,
    })?;
    if d2.frame_index <= d1.frame_index {
        return Err(KinematicsError::NonIncreasingIndex {
            previous: d1.frame_index,
            got: d2.frame_index,
        });
    }
    Ok(cal.c * (x2 - x1).hypot(y2 - y1))
}

/// Speed over `n_frames` frame intervals.
pub fn speed(delta_r: f64, n_frames: u64, cal: &Calibration) -> Result<f64, KinematicsError> {
    if n_frames < 1 {
        return Err(KinematicsError::ZeroFrameGap);
    }
    Ok(delta_r / (n_frames as f64 * cal.frame_interval))
}

/// Position after travelling at constant speed `v` for `dt_prime` seconds.
pub fn predict(r: f64, v: f64, dt_prime: f64) -> f64 {
    r + v * dt_prime
}

/// Running state of the single tracked object.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackState {
    /// Last frame that contained the object.
    pub previous: Option<Detection>,
    /// Last frame index consumed, detected or not.
    pub last_index: Option<u64>,
    /// Road position in meters, measured from the segment entry along the
    /// motion axis.
    pub r: Option<f64>,
    /// Latest speed sample.
    pub v: Option<f64>,
    pub v_history: Vec<f64>,
    pub v_mean: Option<f64>,
}

impl TrackState {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when the frame `frame_index` contained the object.
    pub fn detected_at(&self, frame_index: u64) -> bool {
        self.previous.is_some_and(|d| d.frame_index == frame_index)
    }

    pub fn has_speed(&self) -> bool {
        self.v_mean.is_some()
    }
}

/// Consumes the next frame's detection. Frames without the object leave the
/// estimate alone, so the next speed sample spans the whole gap.
pub fn update_track(state: &TrackState, d: &Detection, cal: &Calibration) -> Result<TrackState, KinematicsError> {
    if let Some(last) = state.last_index {
        if d.frame_index <= last {
            return Err(KinematicsError::NonIncreasingIndex {
                previous: last,
                got: d.frame_index,
            });
        }
    }
    let mut next = state.clone();
    next.last_index = Some(d.frame_index);
    let Some((x, _)) = d.centroid() else {
        return Ok(next);
    };
    if let Some(prev) = &state.previous {
        let delta_r = displacement(prev, d, cal)?;
        let v = speed(delta_r, d.frame_index - prev.frame_index, cal)?;
        next.v = Some(v);
        next.v_history.push(v);
        next.v_mean = Some(next.v_history.iter().sum::<f64>() / next.v_history.len() as f64);
    }
    next.r = Some(pixels_to_meters(cal, x, 0.0).0.max(0.0));
    next.previous = Some(*d);
    Ok(next)
}
