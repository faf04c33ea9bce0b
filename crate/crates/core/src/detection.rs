//! Moving-object detection by background subtraction.
//!
//! A captured frame is compared pixel by pixel against a reference
//! background. Every pixel whose absolute difference exceeds the threshold
//! becomes a 1 in the foreground mask; the object is the center of mass of
//! those cells. All foreground cells belong to a single object; there is no
//! connected-component labeling.
//!
//! Coordinates are 0-based pixel indices.

use thiserror::Error;

use crate::imaging::Frame;

pub const DEFAULT_THRESHOLD: u8 = 10;
pub const DEFAULT_MIN_AREA: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectionError {
    #[error("frame {current_index} is {current_w}x{current_h} but the reference is {reference_w}x{reference_h}")]
    DimensionMismatch {
        current_index: u64,
        current_w: usize,
        current_h: usize,
        reference_w: usize,
        reference_h: usize,
    },
}

/// Maps zero to 0 and any other value to 1.
pub fn ceila(x: f64) -> u8 {
    u8::from(x != 0.0)
}

/// Binary grid marking moving-object pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    cells: Vec<u8>,
    frame_index: u64,
}

impl ForegroundMask {
    /// Builds a mask from explicit cells. Any nonzero input cell is stored as 1.
    pub fn from_cells(width: usize, height: usize, cells: &[u8], frame_index: u64) -> Option<Self> {
        (width > 0 && height > 0 && cells.len() == width * height).then(|| Self {
            width,
            height,
            cells: cells.iter().map(|&c| u8::from(c != 0)).collect(),
            frame_index,
        })
    }

    pub fn empty(width: usize, height: usize, frame_index: u64) -> Self {
        Self {
            width,
            height,
            cells: vec![0; width * height],
            frame_index,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.cells[y * self.width + x] = u8::from(on);
    }

    /// Debug rendering: 1-cells become 255, 0-cells stay 0.
    pub fn to_frame(&self) -> Frame {
        let pixels = self.cells.iter().map(|&c| c * 255).collect();
        Frame::new(self.width, self.height, pixels, self.frame_index)
            .expect("mask dimensions are positive")
    }
}

/// Thresholded background subtraction. A cell is set iff
/// `|current - reference| > threshold`; `threshold = 0` fires on any change.
pub fn subtract(current: &Frame, reference: &Frame, threshold: u8) -> Result<ForegroundMask, DetectionError> {
    if !current.same_dimensions(reference) {
        return Err(DetectionError::DimensionMismatch {
            current_index: current.index(),
            current_w: current.width(),
            current_h: current.height(),
            reference_w: reference.width(),
            reference_h: reference.height(),
        });
    }
    let cells = current
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&c, &r)| {
            let d = c.abs_diff(r);
            let d = if d > threshold { d } else { 0 };
            ceila(f64::from(d))
        })
        .collect();
    Ok(ForegroundMask {
        width: current.width(),
        height: current.height(),
        cells,
        frame_index: current.index(),
    })
}

/// Inclusive bounding box of the foreground cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub min_x: usize,
    pub max_x: usize,
    pub min_y: usize,
    pub max_y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub area: usize,
    pub bounds: Bounds,
    /// The blob touches the edge of the frame, so part of the object may be
    /// out of view and the centroid is not its center.
    pub clipped: bool,
}

/// Result of looking for the moving object in one frame. `blob` is `None`
/// when nothing was found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame_index: u64,
    pub blob: Option<Blob>,
}

impl Detection {
    pub fn none(frame_index: u64) -> Self {
        Self {
            frame_index,
            blob: None,
        }
    }

    /// Unclipped detection at a point, mainly for building tracks by hand.
    pub fn at(frame_index: u64, x: f64, y: f64, area: usize) -> Self {
        let (bx, by) = (x.max(0.0) as usize, y.max(0.0) as usize);
        Self {
            frame_index,
            blob: Some(Blob {
                centroid_x: x,
                centroid_y: y,
                area,
                bounds: Bounds {
                    min_x: bx,
                    max_x: bx,
                    min_y: by,
                    max_y: by,
                },
                clipped: false,
            }),
        }
    }

    pub fn is_detected(&self) -> bool {
        self.blob.is_some()
    }

    pub fn area(&self) -> usize {
        self.blob.map_or(0, |b| b.area)
    }

    pub fn centroid(&self) -> Option<(f64, f64)> {
        self.blob.map(|b| (b.centroid_x, b.centroid_y))
    }
}

/// Center of mass of the mask's 1-cells, computed in one raster scan that
/// accumulates coordinate sums, the cell count and the extent.
pub fn centroid(mask: &ForegroundMask) -> Detection {
    let mut sum_x = 0u64;
    let mut sum_y = 0u64;
    let mut area = 0usize;
    let mut bounds = Bounds {
        min_x: usize::MAX,
        max_x: 0,
        min_y: usize::MAX,
        max_y: 0,
    };
    for (y, row) in mask.cells.chunks_exact(mask.width).enumerate() {
        for (x, _) in row.iter().enumerate().filter(|(_, &c)| c == 1) {
            sum_x += x as u64;
            sum_y += y as u64;
            area += 1;
            bounds.min_x = bounds.min_x.min(x);
            bounds.max_x = bounds.max_x.max(x);
            bounds.min_y = bounds.min_y.min(y);
            bounds.max_y = bounds.max_y.max(y);
        }
    }
    if area == 0 {
        return Detection::none(mask.frame_index);
    }
    let clipped = bounds.min_x == 0
        || bounds.min_y == 0
        || bounds.max_x + 1 == mask.width
        || bounds.max_y + 1 == mask.height;
    Detection {
        frame_index: mask.frame_index,
        blob: Some(Blob {
            centroid_x: sum_x as f64 / area as f64,
            centroid_y: sum_y as f64 / area as f64,
            area,
            bounds,
            clipped,
        }),
    }
}

/// Subtraction followed by centroid extraction, with blobs smaller than
/// `min_area` treated as noise.
pub fn detect(current: &Frame, reference: &Frame, threshold: u8, min_area: usize) -> Result<Detection, DetectionError> {
    Detector {
        threshold,
        min_area,
        reject_clipped: false,
    }
    .detect(current, reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detector {
    pub threshold: u8,
    pub min_area: usize,
    /// Drop blobs that touch the frame edge. Used by the tracking pipeline:
    /// a vehicle entering or leaving the view, or one smeared to the edge by
    /// heavy blur, has a centroid that does not follow the vehicle.
    pub reject_clipped: bool,
}

impl Default for Detector {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            reject_clipped: true,
        }
    }
}

impl Detector {
    pub fn detect(&self, current: &Frame, reference: &Frame) -> Result<Detection, DetectionError> {
        let mut detection = centroid(&subtract(current, reference, self.threshold)?);
        if let Some(blob) = detection.blob {
            if blob.area < self.min_area || (self.reject_clipped && blob.clipped) {
                detection.blob = None;
            }
        }
        Ok(detection)
    }
}
