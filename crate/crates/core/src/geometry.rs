//! Bounding boxes and the coordinate math used to isolate table regions.
//!
//! Coordinates live in abstract length units; converting between the unit
//! systems of two tools is a pure rescale, and padding adds fixed margins
//! in the target system before clamping to the page.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal padding applied around table regions, in target units.
pub const DEFAULT_PAD_H: f64 = 20.0;
/// Vertical padding applied around table regions, in target units.
pub const DEFAULT_PAD_V: f64 = 100.0;

/// Axis-aligned rectangle. Corners are kept normalized: `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Float> BBox<T> {
    /// Builds a bbox, swapping corners if they arrive inverted.
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Self {
        let (x0, x1) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
        let (y0, y1) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
        BBox { x0, y0, x1, y1 }
    }

    /// Re-applies corner normalization (used after deserializing raw records).
    pub fn normalized(&self) -> Self {
        BBox::new(self.x0, self.y0, self.x1, self.y1)
    }

    pub fn is_normalized(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }

    /// Clamps every coordinate into `bounds`, component-wise.
    pub fn clamp_to(&self, bounds: &BBox<T>) -> Self {
        let cx = |v: T| v.max(bounds.x0).min(bounds.x1);
        let cy = |v: T| v.max(bounds.y0).min(bounds.y1);
        BBox {
            x0: cx(self.x0),
            y0: cy(self.y0),
            x1: cx(self.x1),
            y1: cy(self.y1),
        }
    }

    pub fn contains(&self, other: &BBox<T>) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// Default portrait page bounds, in target units.
pub fn default_page_bounds<T: Float>() -> BBox<T> {
    BBox::new(
        T::zero(),
        T::zero(),
        T::from(612.0).unwrap(),
        T::from(792.0).unwrap(),
    )
}

/// Rescales a bbox from a source unit system to a target one: each
/// coordinate `c` maps to `c * target / source`.
pub fn transform_coords<T: Float>(bbox: &BBox<T>, source_units: T, target_units: T) -> Result<BBox<T>> {
    if source_units <= T::zero() || target_units <= T::zero() {
        return Err(Error::InvalidArgument(format!(
            "unit scales must be positive (source={:?}, target={:?})",
            source_units.to_f64(),
            target_units.to_f64()
        )));
    }
    let s = target_units / source_units;
    Ok(BBox {
        x0: bbox.x0 * s,
        y0: bbox.y0 * s,
        x1: bbox.x1 * s,
        y1: bbox.y1 * s,
    })
}

/// Expands a bbox by fixed horizontal/vertical margins, then clamps the
/// result to the page bounds so overflow is absorbed at the edges.
pub fn pad_region<T: Float>(bbox: &BBox<T>, page_bounds: &BBox<T>, pad_h: T, pad_v: T) -> BBox<T> {
    BBox {
        x0: bbox.x0 - pad_h,
        y0: bbox.y0 - pad_v,
        x1: bbox.x1 + pad_h,
        y1: bbox.y1 + pad_v,
    }
    .clamp_to(page_bounds)
}
