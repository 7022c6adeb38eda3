//! Pixel-space primitives: boxes, raster images, binary masks, region
//! isolation and containment tests.
//!
//! All coordinates are integer pixels. Boxes are half-open: a box
//! `(x_min, y_min, x_max, y_max)` covers columns `x_min..x_max` and rows
//! `y_min..y_max`.

mod isolate;
mod raster;

pub use isolate::{apply_mask, crop, isolate_region, AttendedImage, IsolationMode};
pub use raster::{BinaryMask, RasterImage, Rgb};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: need 0 <= x_min < x_max and 0 <= y_min < y_max")]
    InvalidBox(i64, i64, i64, i64),
    #[error("box {bbox} exceeds image bounds {width}x{height}")]
    BoxOutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    MaskShape {
        mask_w: u32,
        mask_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("segment-mask isolation requires a mask")]
    MissingMask,
    #[error("{0} isolation does not take a mask")]
    SpuriousMask(IsolationMode),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("image codec: {0}")]
    Codec(String),
}

/// Axis-aligned integer box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl BBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self, GeometryError> {
        let ok = 0 <= x_min
            && x_min < x_max
            && 0 <= y_min
            && y_min < y_max
            && x_max <= u32::MAX as i64
            && y_max <= u32::MAX as i64;
        if !ok {
            return Err(GeometryError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min: x_min as u32,
            y_min: y_min as u32,
            x_max: x_max as u32,
            y_max: y_max as u32,
        })
    }

    /// Box from fractional corners, rounding half away from zero.
    pub fn from_f64(coords: [f64; 4]) -> Result<Self, GeometryError> {
        if coords.iter().any(|c| !c.is_finite() || c.abs() > 1e15) {
            return Err(GeometryError::InvalidBox(-1, -1, -1, -1));
        }
        let [a, b, c, d] = coords.map(|c| c.round() as i64);
        Self::new(a, b, c, d)
    }

    /// Whole-frame box for an image of the given size.
    pub fn full(width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(0, 0, width as i64, height as i64)
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }
    pub fn y_min(&self) -> u32 {
        self.y_min
    }
    pub fn x_max(&self) -> u32 {
        self.x_max
    }
    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// True when the box lies inside a `width` x `height` frame.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    pub fn check_fits(&self, width: u32, height: u32) -> Result<(), GeometryError> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(GeometryError::BoxOutOfBounds {
                bbox: *self,
                width,
                height,
            })
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        (x0 < x1 && y0 < y1).then_some(BBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        })
    }

    /// Shift by a signed offset. Fails if the result leaves the first quadrant.
    pub fn translate(&self, dx: i64, dy: i64) -> Result<BBox, GeometryError> {
        BBox::new(
            self.x_min as i64 + dx,
            self.y_min as i64 + dy,
            self.x_max as i64 + dx,
            self.y_max as i64 + dy,
        )
    }

    /// True when the pixel `(x, y)` lies inside the box.
    pub fn covers(&self, x: u32, y: u32) -> bool {
        self.x_min <= x && x < self.x_max && self.y_min <= y && y < self.y_max
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

impl std::str::FromStr for BBox {
    type Err = GeometryError;

    /// Parses `"x_min,y_min,x_max,y_max"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<i64> = s
            .split(',')
            .map(|p| p.trim().parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|_| GeometryError::InvalidBox(-1, -1, -1, -1))?;
        match parts.as_slice() {
            [a, b, c, d] => BBox::new(*a, *b, *c, *d),
            _ => Err(GeometryError::InvalidBox(-1, -1, -1, -1)),
        }
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [a, b, c, d] = <[i64; 4]>::deserialize(deserializer)?;
        BBox::new(a, b, c, d).map_err(serde::de::Error::custom)
    }
}

/// Intersection area over the detection's own area, in `[0, 1]`.
pub fn ioa(det: &BBox, region: &BBox) -> f64 {
    match det.intersection(region) {
        Some(inter) => inter.area() as f64 / det.area() as f64,
        None => 0.0,
    }
}

/// Rule deciding whether a detection counts as inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentPolicy {
    /// Detection center lies in the region (half-open on the far edges).
    #[default]
    CenterIn,
    FullyInside,
    /// Intersection-over-detection-area at least the threshold.
    IoaAtLeast(f64),
}

impl ContainmentPolicy {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::IoaAtLeast(t) if !(*t > 0.0 && *t <= 1.0) => {
                Err(format!("IoA threshold {t} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

pub fn contains(region: &BBox, det: &BBox, policy: ContainmentPolicy) -> bool {
    match policy {
        ContainmentPolicy::CenterIn => {
            // compare doubled coordinates so half-pixel centers stay exact
            let cx2 = det.x_min as u64 + det.x_max as u64;
            let cy2 = det.y_min as u64 + det.y_max as u64;
            2 * region.x_min as u64 <= cx2
                && cx2 < 2 * region.x_max as u64
                && 2 * region.y_min as u64 <= cy2
                && cy2 < 2 * region.y_max as u64
        }
        ContainmentPolicy::FullyInside => {
            region.x_min <= det.x_min
                && det.x_max <= region.x_max
                && region.y_min <= det.y_min
                && det.y_max <= region.y_max
        }
        ContainmentPolicy::IoaAtLeast(theta) => ioa(det, region) >= theta,
    }
}
