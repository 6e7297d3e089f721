//! Synthetic rolling-shutter scene generator.
//!
//! A camera rides a piecewise-linear trajectory below a ceiling of circular
//! lamps. Each modulated lamp is drawn as a disc whose rows alternate between
//! an on and an off level with a fixed period in rows, which is what a
//! rolling-shutter sensor records for a lamp blinking faster than the frame
//! rate. The stripe phase drifts from frame to frame. Every rendered frame
//! comes with exact ground truth: camera position, unoccluded lamp centroids
//! and the visible fraction of each lamp disc.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{image_to_pixel, project_to_image, CameraIntrinsics, PixelPoint, WorldPoint};

/// Fastest translational speed of the robot base, cm/s.
pub const MAX_SPEED_CM_S: f64 = 22.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    Striped { period_rows: u32 },
    Unmodulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LampSpec {
    pub id: u32,
    pub position: WorldPoint,
    /// Disc radius, cm.
    pub radius: f64,
    pub modulation: Modulation,
    pub on_intensity: u8,
    pub off_intensity: u8,
}

impl LampSpec {
    pub fn striped(id: u32, position: WorldPoint, radius: f64, period_rows: u32) -> Self {
        Self {
            id,
            position,
            radius,
            modulation: Modulation::Striped { period_rows },
            on_intensity: 236,
            off_intensity: 164,
        }
    }

    pub fn unmodulated(id: u32, position: WorldPoint, radius: f64) -> Self {
        Self {
            id,
            position,
            radius,
            modulation: Modulation::Unmodulated,
            on_intensity: 236,
            off_intensity: 236,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.position.is_finite() {
            return Err(Error::InvalidScene(format!("lamp {}: radius must be positive", self.id)));
        }
        if let Modulation::Striped { period_rows } = self.modulation {
            if period_rows < 4 {
                return Err(Error::InvalidScene(format!(
                    "lamp {}: stripe period {period_rows} rows is below 4",
                    self.id
                )));
            }
            if self.on_intensity <= self.off_intensity {
                return Err(Error::InvalidScene(format!(
                    "lamp {}: on intensity must exceed off intensity",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<WorldPoint>,
    /// cm/s along the polyline.
    pub speed: f64,
    /// Seconds spent parked at the last waypoint after the path ends.
    pub hold: f64,
}

impl Trajectory {
    pub fn new(waypoints: Vec<WorldPoint>, speed: f64) -> Result<Self> {
        let traj = Self { waypoints, speed, hold: 0.0 };
        traj.validate()?;
        Ok(traj)
    }

    /// A camera parked at `at` for `duration` seconds.
    pub fn stationary(at: WorldPoint, duration: f64) -> Self {
        Self { waypoints: vec![at], speed: 1.0, hold: duration }
    }

    pub fn with_hold(mut self, hold: f64) -> Self {
        self.hold = hold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidScene("trajectory needs at least one waypoint".into()));
        }
        if self.waypoints.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidScene("trajectory waypoints must be finite".into()));
        }
        if !(self.speed > 0.0 && self.speed <= MAX_SPEED_CM_S) {
            return Err(Error::InvalidScene(format!(
                "speed {} cm/s outside (0, {MAX_SPEED_CM_S}]",
                self.speed
            )));
        }
        if !(self.hold >= 0.0) || !self.hold.is_finite() {
            return Err(Error::InvalidScene("hold time must be non-negative".into()));
        }
        Ok(())
    }

    pub fn path_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| distance3(w[0], w[1])).sum()
    }

    pub fn duration(&self) -> f64 {
        self.path_length() / self.speed + self.hold
    }

    /// Arc-length parameterized position at time `t`.
    pub fn position(&self, t: f64) -> Result<WorldPoint> {
        let total = self.duration();
        if !(t >= 0.0 && t <= total + 1e-9) {
            return Err(Error::OutOfRange { t, max: total });
        }
        let mut remaining = t * self.speed;
        for w in self.waypoints.windows(2) {
            let seg = distance3(w[0], w[1]);
            if remaining <= seg && seg > 0.0 {
                let a = remaining / seg;
                return Ok(WorldPoint::new(
                    w[0].x + a * (w[1].x - w[0].x),
                    w[0].y + a * (w[1].y - w[0].y),
                    w[0].z + a * (w[1].z - w[0].z),
                ));
            }
            remaining -= seg;
        }
        Ok(*self.waypoints.last().expect("validated non-empty"))
    }
}

pub fn trajectory_position(traj: &Trajectory, t: f64) -> Result<WorldPoint> {
    traj.position(t)
}

fn distance3(a: WorldPoint, b: WorldPoint) -> f64 {
    let (dx, dy, dz) = (b.x - a.x, b.y - a.y, b.z - a.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Side of the lamp disc from which an occluder slides in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionSide {
    Left,
    Right,
    Top,
    Bottom,
}

impl OcclusionSide {
    pub const ALL: [OcclusionSide; 4] = [Self::Left, Self::Right, Self::Top, Self::Bottom];
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionEvent {
    pub lamp_id: u32,
    pub start_frame: u64,
    /// Inclusive.
    pub end_frame: u64,
    /// Fraction of the disc area to cover.
    pub target_fraction: f64,
    pub side: OcclusionSide,
}

impl OcclusionEvent {
    pub fn active(&self, frame: u64) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    pub lamps: Vec<LampSpec>,
    pub trajectory: Trajectory,
    pub occlusions: Vec<OcclusionEvent>,
    /// Per-pixel Gaussian noise, intensity levels.
    pub noise_sigma: f64,
    pub fps: f64,
    pub seed: u64,
    pub dark_level: u8,
    /// Sensor row readout rate; drives the stripe phase drift between frames.
    pub row_rate_hz: f64,
    /// Per-frame jitter of the rendered camera position, cm. Ground truth
    /// keeps the nominal trajectory position.
    pub vibration_sigma_cm: f64,
}

/// LED1 and LED2 of the reference platform, plus LED3 and an unmodulated
/// ceiling fixture standing in for a pair of fluorescent tubes.
pub fn reference_lamps() -> Vec<LampSpec> {
    vec![
        LampSpec::striped(1, WorldPoint::new(100.0, 45.0, 190.0), 7.5, 16),
        LampSpec::striped(2, WorldPoint::new(100.0, 145.0, 190.0), 7.5, 24),
        LampSpec::striped(3, WorldPoint::new(0.0, 145.0, 190.0), 7.5, 32),
        LampSpec::unmodulated(0, WorldPoint::new(60.0, 95.0, 190.0), 6.0),
    ]
}

impl SceneConfig {
    /// Reference platform with the camera 150 cm below the lamps, driving an
    /// L-shaped route at 10 cm/s.
    pub fn reference() -> Self {
        let z = 40.0;
        Self {
            intrinsics: CameraIntrinsics::mv_u300(),
            lamps: reference_lamps(),
            trajectory: Trajectory {
                waypoints: vec![
                    WorldPoint::new(60.0, 85.0, z),
                    WorldPoint::new(140.0, 85.0, z),
                    WorldPoint::new(140.0, 105.0, z),
                ],
                speed: 10.0,
                hold: 0.0,
            },
            occlusions: Vec::new(),
            noise_sigma: 2.0,
            fps: 46.0,
            seed: 0x5eed,
            dark_level: 20,
            row_rate_hz: 68_000.0,
            vibration_sigma_cm: 0.0,
        }
    }

    pub fn lamp(&self, id: u32) -> Option<&LampSpec> {
        self.lamps.iter().find(|l| l.id == id)
    }

    pub fn duration(&self) -> f64 {
        self.trajectory.duration()
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration() * self.fps + 1e-9).floor() as u64
    }

    pub fn frame_time(&self, index: u64) -> f64 {
        index as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.trajectory.validate()?;
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::InvalidScene("fps must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidScene("noise sigma must be non-negative".into()));
        }
        if !(self.vibration_sigma_cm >= 0.0) || !self.vibration_sigma_cm.is_finite() {
            return Err(Error::InvalidScene("vibration sigma must be non-negative".into()));
        }
        if !(self.row_rate_hz > 0.0) || !self.row_rate_hz.is_finite() {
            return Err(Error::InvalidScene("row rate must be positive".into()));
        }
        for (i, lamp) in self.lamps.iter().enumerate() {
            lamp.validate()?;
            if self.lamps[..i].iter().any(|l| l.id == lamp.id) {
                return Err(Error::InvalidScene(format!("duplicate lamp id {}", lamp.id)));
            }
        }
        for ev in &self.occlusions {
            if self.lamp(ev.lamp_id).is_none() {
                return Err(Error::InvalidScene(format!(
                    "occlusion references unknown lamp {}",
                    ev.lamp_id
                )));
            }
            if ev.start_frame > ev.end_frame {
                return Err(Error::InvalidScene("occlusion frame range is reversed".into()));
            }
            if !(0.2..=0.95).contains(&ev.target_fraction) {
                return Err(Error::InvalidScene(format!(
                    "occlusion fraction {} outside [0.2, 0.95]",
                    ev.target_fraction
                )));
            }
        }
        // Lamps must stay above the camera and their discs must never touch.
        let n = self.frame_count().max(1);
        for k in 0..n {
            let cam = self.trajectory.position(self.frame_time(k).min(self.duration()))?;
            let mut discs = Vec::with_capacity(self.lamps.len());
            for lamp in &self.lamps {
                let (c, r) = lamp_disc(lamp, cam, &self.intrinsics)?;
                discs.push((lamp.id, c, r));
            }
            for (i, a) in discs.iter().enumerate() {
                for b in &discs[i + 1..] {
                    if a.1.distance(&b.1) <= a.2 + b.2 + 1.0 {
                        return Err(Error::InvalidScene(format!(
                            "lamps {} and {} overlap in frame {k}",
                            a.0, b.0
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rendered camera position for frame `index`, including vibration.
    fn rendered_camera(&self, nominal: WorldPoint, index: u64) -> WorldPoint {
        if self.vibration_sigma_cm <= 0.0 {
            return nominal;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(index);
        let n = Normal::new(0.0, self.vibration_sigma_cm).expect("validated sigma");
        WorldPoint::new(
            nominal.x + n.sample(&mut rng),
            nominal.y + n.sample(&mut rng),
            nominal.z + n.sample(&mut rng),
        )
    }

    pub fn render_frame(&self, t: f64) -> Result<(Frame, GroundTruth)> {
        let max = self.duration();
        if !(t >= 0.0 && t <= max + 1e-9) {
            return Err(Error::OutOfRange { t, max });
        }
        let index = (t * self.fps).round() as u64;
        self.render_at(t, index)
    }

    pub fn render_index(&self, index: u64) -> Result<(Frame, GroundTruth)> {
        self.render_at(self.frame_time(index), index)
    }

    fn render_at(&self, t: f64, index: u64) -> Result<(Frame, GroundTruth)> {
        let intr = &self.intrinsics;
        let (w, h) = (intr.width as usize, intr.height as usize);
        let nominal = self.trajectory.position(t.min(self.duration()))?;
        let camera = self.rendered_camera(nominal, index);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let noise = (self.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, self.noise_sigma).expect("validated sigma"));
        let dark = self.dark_level as f64;
        let mut pixels = vec![self.dark_level; w * h];
        if let Some(n) = &noise {
            for p in pixels.iter_mut() {
                *p = quantize(dark + n.sample(&mut rng));
            }
        }

        let mut truths = Vec::with_capacity(self.lamps.len());
        for lamp in &self.lamps {
            let (centroid, radius_px) = lamp_disc(lamp, camera, intr)?;
            let ry = radius_px * intr.pixel_pitch_x / intr.pixel_pitch_y;
            let disc = Disc { cu: centroid.u, cv: centroid.v, rx: radius_px, ry };
            let masks: Vec<PixelRect> = self
                .occlusions
                .iter()
                .filter(|ev| ev.lamp_id == lamp.id && ev.active(index))
                .map(|ev| disc.occluder(ev.side, ev.target_fraction))
                .collect();

            let phase = match lamp.modulation {
                Modulation::Striped { period_rows } => {
                    let p = period_rows as f64;
                    Some((p, (t * self.row_rate_hz).rem_euclid(p)))
                }
                Modulation::Unmodulated => None,
            };

            let mut total = 0u64;
            let mut visible = 0u64;
            disc.for_each_pixel(|col, row| {
                total += 1;
                if masks.iter().any(|m| m.contains(col, row)) {
                    return;
                }
                visible += 1;
                if col < 0 || row < 0 || col >= w as i64 || row >= h as i64 {
                    return;
                }
                let level = match phase {
                    Some((period, offset)) => {
                        let half = period / 2.0;
                        if ((row as f64 + offset) / half).floor() as i64 % 2 == 0 {
                            lamp.on_intensity
                        } else {
                            lamp.off_intensity
                        }
                    }
                    None => lamp.on_intensity,
                };
                let value = match &noise {
                    Some(n) => quantize(level as f64 + n.sample(&mut rng)),
                    None => level,
                };
                pixels[row as usize * w + col as usize] = value;
            });

            let in_view = disc.intersects_frame(w, h);
            truths.push(LampTruth {
                id: lamp.id,
                centroid,
                radius_px,
                visible_area_fraction: if total == 0 { 0.0 } else { visible as f64 / total as f64 },
                in_view,
            });
        }

        let frame = Frame { width: w as u32, height: h as u32, pixels, timestamp: t, index };
        let truth = GroundTruth { frame_index: index, timestamp: t, terminal_position: nominal, lamps: truths };
        Ok((frame, truth))
    }
}

pub fn render_frame(scene: &SceneConfig, t: f64) -> Result<(Frame, GroundTruth)> {
    scene.render_frame(t)
}

fn quantize(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

fn lamp_disc(lamp: &LampSpec, camera: WorldPoint, intr: &CameraIntrinsics) -> Result<(PixelPoint, f64)> {
    let img = project_to_image(lamp.position, camera, intr)?;
    let h = lamp.position.z - camera.z;
    let radius_px = intr.focal_length * lamp.radius / (h * intr.pixel_pitch_x);
    Ok((image_to_pixel(img, intr), radius_px))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedLamp {
    pub centroid: PixelPoint,
    pub radius_px: f64,
}

/// Pinhole projection of a lamp disc. `None` when the disc lies entirely
/// outside the frame.
pub fn project_lamp(
    lamp: &LampSpec,
    camera: WorldPoint,
    intr: &CameraIntrinsics,
) -> Result<Option<ProjectedLamp>> {
    let (centroid, radius_px) = lamp_disc(lamp, camera, intr)?;
    let ry = radius_px * intr.pixel_pitch_x / intr.pixel_pitch_y;
    let disc = Disc { cu: centroid.u, cv: centroid.v, rx: radius_px, ry };
    Ok(disc
        .intersects_frame(intr.width as usize, intr.height as usize)
        .then_some(ProjectedLamp { centroid, radius_px }))
}

/// Inclusive integer pixel rectangle; may extend past the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PixelRect {
    min_col: i64,
    max_col: i64,
    min_row: i64,
    max_row: i64,
}

impl PixelRect {
    fn contains(&self, col: i64, row: i64) -> bool {
        col >= self.min_col && col <= self.max_col && row >= self.min_row && row <= self.max_row
    }
}

/// Elliptical lamp footprint in pixel space. Pixel `(c, r)` belongs to the
/// disc when its centre lies inside the ellipse.
#[derive(Debug, Clone, Copy)]
struct Disc {
    cu: f64,
    cv: f64,
    rx: f64,
    ry: f64,
}

impl Disc {
    fn row_span(&self) -> (i64, i64) {
        ((self.cv - self.ry).ceil() as i64, (self.cv + self.ry).floor() as i64)
    }

    fn col_span(&self) -> (i64, i64) {
        ((self.cu - self.rx).ceil() as i64, (self.cu + self.rx).floor() as i64)
    }

    fn for_each_pixel(&self, mut f: impl FnMut(i64, i64)) {
        let (r0, r1) = self.row_span();
        for row in r0..=r1 {
            let dv = (row as f64 - self.cv) / self.ry;
            let s = 1.0 - dv * dv;
            if s < 0.0 {
                continue;
            }
            let half = self.rx * s.sqrt();
            let c0 = (self.cu - half).ceil() as i64;
            let c1 = (self.cu + half).floor() as i64;
            for col in c0..=c1 {
                f(col, row);
            }
        }
    }

    fn intersects_frame(&self, w: usize, h: usize) -> bool {
        let (c0, c1) = self.col_span();
        let (r0, r1) = self.row_span();
        c1 >= 0 && r1 >= 0 && c0 < w as i64 && r0 < h as i64
    }

    /// Rectangle covering whole columns (or rows) of the disc from `side`,
    /// sized so the covered pixel count is as close as possible to
    /// `fraction` of the disc.
    fn occluder(&self, side: OcclusionSide, fraction: f64) -> PixelRect {
        let (c0, c1) = self.col_span();
        let (r0, r1) = self.row_span();
        let horizontal = matches!(side, OcclusionSide::Left | OcclusionSide::Right);
        let (lo, hi) = if horizontal { (c0, c1) } else { (r0, r1) };
        let len = (hi - lo + 1).max(0) as usize;
        let mut counts = vec![0u64; len];
        let mut total = 0u64;
        self.for_each_pixel(|col, row| {
            let k = if horizontal { col - lo } else { row - lo };
            counts[k as usize] += 1;
            total += 1;
        });
        let order: Box<dyn Iterator<Item = usize>> = match side {
            OcclusionSide::Left | OcclusionSide::Top => Box::new(0..len),
            OcclusionSide::Right | OcclusionSide::Bottom => Box::new((0..len).rev()),
        };
        let target = fraction * total as f64;
        let mut covered = 0u64;
        let mut taken = 0usize;
        for k in order {
            let next = covered + counts[k];
            if (next as f64 - target).abs() > (covered as f64 - target).abs() {
                break;
            }
            covered = next;
            taken += 1;
        }
        let (a, b) = match side {
            OcclusionSide::Left | OcclusionSide::Top => (lo, lo + taken as i64 - 1),
            OcclusionSide::Right | OcclusionSide::Bottom => (hi - taken as i64 + 1, hi),
        };
        if horizontal {
            PixelRect { min_col: a, max_col: b, min_row: r0, max_row: r1 }
        } else {
            PixelRect { min_col: c0, max_col: c1, min_row: a, max_row: b }
        }
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub timestamp: f64,
    pub index: u64,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "{} pixels do not fill a {width}x{height} frame",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels, timestamp: 0.0, index: 0 })
    }

    pub fn filled(width: u32, height: u32, level: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![level; width as usize * height as usize],
            timestamp: 0.0,
            index: 0,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width as usize + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        let w = self.width as usize;
        &self.pixels[row * w..(row + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LampTruth {
    pub id: u32,
    /// Centroid of the unoccluded disc.
    pub centroid: PixelPoint,
    pub radius_px: f64,
    pub visible_area_fraction: f64,
    pub in_view: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_index: u64,
    pub timestamp: f64,
    pub terminal_position: WorldPoint,
    pub lamps: Vec<LampTruth>,
}

impl GroundTruth {
    pub fn lamp(&self, id: u32) -> Option<&LampTruth> {
        self.lamps.iter().find(|l| l.id == id)
    }
}

/// Frames at `1 / fps` spacing over the whole trajectory.
pub struct Sequence<'a> {
    scene: &'a SceneConfig,
    next: u64,
    count: u64,
}

impl Iterator for Sequence<'_> {
    type Item = (Frame, GroundTruth);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let k = self.next;
        self.next += 1;
        // Validated up front, so rendering cannot fail here.
        Some(self.scene.render_index(k).expect("scene validated"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.count - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Sequence<'_> {}

pub fn generate_sequence(scene: &SceneConfig) -> Result<Sequence<'_>> {
    scene.validate()?;
    Ok(Sequence { scene, next: 0, count: scene.frame_count() })
}
