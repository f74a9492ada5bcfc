//! Pixel-space boxes.
//!
//! Coordinates are continuous reals in the image frame (origin top-left,
//! +x right, +y down). Rounding only ever happens at the text boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// Seed used whenever a caller does not provide one.
pub const DEFAULT_SEED: u64 = 0x6772_3364;

/// Axis-aligned pixel rectangle `[x1, x2] x [y1, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        check_finite("2D box", &[x1, y1, x2, y2])?;
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox(format!(
                "2D box corners out of order: [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Whether `(u, v)` lies inside the closed rectangle.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x1 && u <= self.x2 && v >= self.y1 && v <= self.y2
    }

    /// Shifts the box by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two pixel boxes.
///
/// Fails with [`Error::DegenerateGeometry`] when both boxes have zero area,
/// since the union is then empty.
pub fn iou2d(a: &Box2D, b: &Box2D) -> Result<f64> {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(Error::DegenerateGeometry("both 2D boxes have zero area"));
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Intersects `b` with `[0, w] x [0, h]`.
pub fn clamp_to_image(b: &Box2D, w: f64, h: f64) -> Result<Box2D> {
    if b.x1 >= w || b.y1 >= h || b.x2 <= 0.0 || b.y2 <= 0.0 {
        return Err(Error::EmptyAfterClamp);
    }
    Box2D::new(b.x1.max(0.0), b.y1.max(0.0), b.x2.min(w), b.y2.min(h))
}

/// Location and size noise applied to conditioning regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    /// Maximum center shift as a fraction of the box width/height.
    pub center_frac: f64,
    /// Maximum relative change of width/height.
    pub size_frac: f64,
    pub seed: u64,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self {
            center_frac: 0.1,
            size_frac: 0.1,
            seed: DEFAULT_SEED,
        }
    }
}

impl JitterParams {
    pub fn new(center_frac: f64, size_frac: f64, seed: u64) -> Result<Self> {
        let p = Self {
            center_frac,
            size_frac,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// No noise at all; jitter becomes the identity on in-image boxes.
    pub fn none(seed: u64) -> Self {
        Self {
            center_frac: 0.0,
            size_frac: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f.is_finite() && (0.0..1.0).contains(&f);
        if ok(self.center_frac) && ok(self.size_frac) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "jitter fractions must lie in [0, 1): center {} size {}",
                self.center_frac, self.size_frac
            )))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.center_frac == 0.0 && self.size_frac == 0.0
    }
}

/// Jitters `b` with a generator seeded from `p.seed`, then clamps to the image.
pub fn jitter(b: &Box2D, p: &JitterParams, image_w: f64, image_h: f64) -> Box2D {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    jitter_with_rng(b, p, image_w, image_h, &mut rng)
}

/// Same as [`jitter`] but draws from a caller-owned generator, so a sequence
/// of boxes can share one seeded stream. `p.seed` is ignored.
///
/// Draw order is center x, center y, scale x, scale y; each is uniform in
/// `[-1, 1)` times the configured fraction.
pub fn jitter_with_rng<R: Rng + ?Sized>(b: &Box2D, p: &JitterParams, image_w: f64, image_h: f64, rng: &mut R) -> Box2D {
    let mut unit = || 2.0 * rng.random::<f64>() - 1.0;
    let dx = unit() * p.center_frac * b.width();
    let dy = unit() * p.center_frac * b.height();
    let sx = unit() * p.size_frac;
    let sy = unit() * p.size_frac;

    // Expressed as edge offsets so zero noise reproduces the input bit for bit.
    let grow_x = 0.5 * sx * b.width();
    let grow_y = 0.5 * sy * b.height();
    let (x1, x2) = clamp_axis(b.x1 + dx - grow_x, b.x2 + dx + grow_x, image_w);
    let (y1, y2) = clamp_axis(b.y1 + dy - grow_y, b.y2 + dy + grow_y, image_h);
    Box2D { x1, y1, x2, y2 }
}

/// Clamps an interval to `[0, extent]`. An interval that ends up empty
/// collapses to a one-pixel span at the boundary it crossed.
fn clamp_axis(lo: f64, hi: f64, extent: f64) -> (f64, f64) {
    let lo_c = lo.clamp(0.0, extent);
    let hi_c = hi.clamp(0.0, extent);
    if hi_c > lo_c || hi == lo {
        return (lo_c, hi_c.max(lo_c));
    }
    let one = extent.min(1.0);
    if lo >= extent {
        (extent - one, extent)
    } else {
        (0.0, one)
    }
}
