//! Camera model, pixel/sensor/world conversions, the double-lamp position
//! solver and the error metrics used to score it.
//!
//! Units are fixed per coordinate system and every conversion is explicit:
//!
//! * pixel coordinates are dimensionless, `(0, 0)` is the centre of the
//!   top-left pixel, `u` grows to the right and `v` grows downwards;
//! * sensor-plane ("image") coordinates are in meters with the origin at the
//!   principal point;
//! * world coordinates are in centimeters.
//!
//! The camera looks straight up at a ceiling plane and its image axes are
//! parallel to the world axes. A lamp at world offset `+x` from the camera
//! images at `-i` on the sensor (pinhole inversion).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Sensor-plane point in meters, origin at the principal point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// World point in centimeters. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn planar_distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 3]> for WorldPoint {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<WorldPoint> for [f64; 3] {
    fn from(p: WorldPoint) -> Self {
        [p.x, p.y, p.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in meters.
    pub focal_length: f64,
    /// Pixel pitch along `u`, meters per pixel.
    pub pixel_pitch_x: f64,
    /// Pixel pitch along `v`, meters per pixel.
    pub pixel_pitch_y: f64,
    pub principal_point: PixelPoint,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        focal_length: f64,
        pixel_pitch_x: f64,
        pixel_pitch_y: f64,
        principal_point: PixelPoint,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let intr = Self {
            focal_length,
            pixel_pitch_x,
            pixel_pitch_y,
            principal_point,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// MV-U300 industrial camera: 2048x1536, 3.2 µm square pixels, with a
    /// 4 mm lens and the principal point at the sensor centre.
    pub fn mv_u300() -> Self {
        Self {
            focal_length: 0.004,
            pixel_pitch_x: 3.2e-6,
            pixel_pitch_y: 3.2e-6,
            principal_point: PixelPoint::new(1023.5, 767.5),
            width: 2048,
            height: 1536,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length.is_finite() && self.focal_length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        if !(self.pixel_pitch_x > 0.0 && self.pixel_pitch_y > 0.0)
            || !self.pixel_pitch_x.is_finite()
            || !self.pixel_pitch_y.is_finite()
        {
            return Err(Error::InvalidParameter("pixel pitch must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("resolution must be non-zero".into()));
        }
        let pp = self.principal_point;
        if !(pp.u >= 0.0 && pp.u < self.width as f64 && pp.v >= 0.0 && pp.v < self.height as f64) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside the {}x{} frame",
                pp.u, pp.v, self.width, self.height
            )));
        }
        Ok(())
    }
}

pub fn pixel_to_image(p: PixelPoint, intr: &CameraIntrinsics) -> ImagePoint {
    ImagePoint {
        x: (p.u - intr.principal_point.u) * intr.pixel_pitch_x,
        y: (p.v - intr.principal_point.v) * intr.pixel_pitch_y,
    }
}

pub fn image_to_pixel(p: ImagePoint, intr: &CameraIntrinsics) -> PixelPoint {
    PixelPoint {
        u: p.x / intr.pixel_pitch_x + intr.principal_point.u,
        v: p.y / intr.pixel_pitch_y + intr.principal_point.v,
    }
}

/// Projects a world point above the camera onto the sensor plane.
pub fn project_to_image(
    point: WorldPoint,
    camera: WorldPoint,
    intr: &CameraIntrinsics,
) -> Result<ImagePoint> {
    let h = point.z - camera.z;
    if !(h > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "point at z = {} is not above the camera at z = {}",
            point.z, camera.z
        )));
    }
    let f = intr.focal_length;
    Ok(ImagePoint {
        x: -f * (point.x - camera.x) / h,
        y: -f * (point.y - camera.y) / h,
    })
}

/// Back-projects a pixel onto the horizontal plane at `plane_z`, seen from a
/// camera at a known position.
pub fn pixel_to_plane(
    p: PixelPoint,
    intr: &CameraIntrinsics,
    camera: WorldPoint,
    plane_z: f64,
) -> (f64, f64) {
    let img = pixel_to_image(p, intr);
    let h = plane_z - camera.z;
    (
        camera.x - h * img.x / intr.focal_length,
        camera.y - h * img.y / intr.focal_length,
    )
}

/// Camera-to-ceiling distance in cm from the lamp separation `d12` (cm) and
/// its image `p12` (m) on a sensor with focal length `f` (m).
pub fn estimate_height(f: f64, d12: f64, p12: f64) -> Result<f64> {
    if !(p12 > 0.0) {
        return Err(Error::DegenerateGeometry("lamps coincide in the image"));
    }
    if !(f > 0.0) || !(d12 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "focal length and lamp separation must be positive (f = {f}, d12 = {d12})"
        )));
    }
    Ok(f * d12 / p12)
}

/// Planar terminal position (cm) from two lamps' sensor coordinates.
///
/// The camera sits at the lamp-pair midpoint shifted by the similar-triangle
/// offset `H * mean(i) / f`.
pub fn locate_terminal(
    img_a: ImagePoint,
    img_b: ImagePoint,
    lamp_a: WorldPoint,
    lamp_b: WorldPoint,
    h: f64,
    f: f64,
) -> Result<(f64, f64)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidHeight(h));
    }
    if !(f > 0.0) {
        return Err(Error::InvalidParameter(format!("focal length must be positive, got {f}")));
    }
    if img_a.distance(&img_b) <= f64::EPSILON && lamp_a.planar_distance(&lamp_b) > 0.0 {
        return Err(Error::DegenerateGeometry(
            "distinct lamps cannot image at the same sensor point",
        ));
    }
    let mid_i = 0.5 * (img_a.x + img_b.x);
    let mid_j = 0.5 * (img_a.y + img_b.y);
    let x = 0.5 * (lamp_a.x + lamp_b.x) + h * mid_i / f;
    let y = 0.5 * (lamp_a.y + lamp_b.y) + h * mid_j / f;
    Ok((x, y))
}

/// Planar tracking error in cm.
pub fn tracking_error(p: (f64, f64), actual: (f64, f64)) -> f64 {
    (p.0 - actual.0).hypot(p.1 - actual.1)
}

/// Three-dimensional positioning error in cm.
pub fn positioning_error_3d(p: WorldPoint, actual: WorldPoint) -> f64 {
    let dx = p.x - actual.x;
    let dy = p.y - actual.y;
    let dz = p.z - actual.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Step-function empirical CDF over a finite sample.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample {bad}")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `F(x) = #{s <= x} / N`.
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&s| s <= x);
        count as f64 / self.sorted.len() as f64
    }

    /// Smallest sample `x` with `F(x) >= q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidQuantile(q));
        }
        let n = self.sorted.len();
        // k / n >= q, guarding against q * n landing a hair above an integer.
        let k = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
        Ok(self.sorted[k.min(n) - 1])
    }

    /// `(x, F(x))` at each distinct sample value, ascending; last row has F = 1.
    pub fn table(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match rows.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => rows.push((x, f)),
            }
        }
        rows
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().expect("non-empty by construction")
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(samples)
}

pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidQuantile(q));
    }
    EmpiricalCdf::new(samples)?.quantile(q)
}
