//! Continuously adaptive mean shift over an intensity-histogram model.
//!
//! A lamp's appearance is summarized by an Epanechnikov-weighted histogram of
//! grayscale intensities taken when the lamp is acquired. Each frame, the
//! model is backprojected over a region around the start hint, mean shift
//! climbs to the local mode of the backprojection, and the window side is
//! re-derived from the zeroth moment. The Bhattacharyya coefficient between
//! the model and the histogram at the converged position measures how much
//! of the lamp is actually there.

use serde::{Deserialize, Serialize};

use crate::detector::Blob;
use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::scene_sim::Frame;

pub const MIN_HALF_EXTENT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamshiftParams {
    pub bins: usize,
    pub max_iterations: u32,
    pub epsilon_px: f64,
    /// Backprojection region size relative to the search window.
    pub search_margin: f64,
}

impl Default for CamshiftParams {
    fn default() -> Self {
        Self { bins: 32, max_iterations: 20, epsilon_px: 0.5, search_margin: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHistogram {
    weights: Vec<f64>,
}

impl IntensityHistogram {
    /// Normalizes `weights` to sum to one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() > 256 {
            return Err(Error::InvalidParameter(format!("{} histogram bins", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("histogram weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("histogram has no mass".into()));
        }
        Ok(Self { weights: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn uniform(bins: usize) -> Self {
        Self { weights: vec![1.0 / bins as f64; bins] }
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn bin_of(&self, level: u8) -> usize {
        level as usize * self.weights.len() / 256
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Per-intensity backprojection weight. Bins under 1/255 of the peak are
    /// zeroed, as an 8-bit backprojection would.
    fn level_table(&self) -> [f64; 256] {
        let floor = self.max_weight() / 255.0;
        let mut table = [0.0; 256];
        for (level, w) in table.iter_mut().enumerate() {
            let v = self.weights[self.bin_of(level as u8)];
            *w = if v < floor { 0.0 } else { v };
        }
        table
    }
}

/// Inclusive pixel rectangle already clipped to the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRegion {
    pub min_u: usize,
    pub min_v: usize,
    pub max_u: usize,
    pub max_v: usize,
}

impl PixelRegion {
    pub fn width(&self) -> usize {
        self.max_u - self.min_u + 1
    }

    pub fn height(&self) -> usize {
        self.max_v - self.min_v + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub center: PixelPoint,
    pub half_width: f64,
    pub half_height: f64,
}

impl SearchWindow {
    pub fn new(center: PixelPoint, half_width: f64, half_height: f64) -> Self {
        Self {
            center,
            half_width: half_width.max(MIN_HALF_EXTENT),
            half_height: half_height.max(MIN_HALF_EXTENT),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.center, self.half_width * factor, self.half_height * factor)
    }

    /// Pixels whose centres fall inside the window, clipped to the frame.
    pub fn clip(&self, width: u32, height: u32) -> Option<PixelRegion> {
        let c = self.center;
        if !c.is_finite() {
            return None;
        }
        let u0 = (c.u - self.half_width).ceil().max(0.0);
        let v0 = (c.v - self.half_height).ceil().max(0.0);
        let u1 = (c.u + self.half_width).floor().min(width as f64 - 1.0);
        let v1 = (c.v + self.half_height).floor().min(height as f64 - 1.0);
        (u0 <= u1 && v0 <= v1).then_some(PixelRegion {
            min_u: u0 as usize,
            min_v: v0 as usize,
            max_u: u1 as usize,
            max_v: v1 as usize,
        })
    }
}

/// Epanechnikov-weighted intensity histogram of a window; the kernel radius
/// is the window's half extents.
pub fn build_histogram(frame: &Frame, window: &SearchWindow, bins: usize) -> Result<IntensityHistogram> {
    if bins == 0 || bins > 256 {
        return Err(Error::InvalidParameter(format!("{bins} histogram bins")));
    }
    let region = window.clip(frame.width, frame.height).ok_or(Error::OutOfFrame)?;
    let mut weights = vec![0.0; bins];
    let (cu, cv) = (window.center.u, window.center.v);
    for v in region.min_v..=region.max_v {
        let dv = (v as f64 - cv) / window.half_height;
        let row = frame.row(v);
        for u in region.min_u..=region.max_u {
            let du = (u as f64 - cu) / window.half_width;
            let k = 1.0 - (du * du + dv * dv);
            if k > 0.0 {
                weights[row[u] as usize * bins / 256] += k;
            }
        }
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::OutOfFrame);
    }
    IntensityHistogram::from_weights(weights)
}

/// Backprojection weights over a clipped region.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub region: PixelRegion,
    data: Vec<f64>,
}

impl WeightMap {
    pub fn new(region: PixelRegion, data: Vec<f64>) -> Result<Self> {
        if data.len() != region.area() {
            return Err(Error::InvalidParameter("weight map size mismatch".into()));
        }
        Ok(Self { region, data })
    }

    /// Weight at a frame pixel; zero outside the region.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        let r = &self.region;
        if u < r.min_u || u > r.max_u || v < r.min_v || v > r.max_v {
            return 0.0;
        }
        self.data[(v - r.min_v) * r.width() + (u - r.min_u)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Zeroth and first moments `(m00, m10, m01)` of the weights whose pixel
    /// centres fall in the window.
    pub fn moments(&self, window: &SearchWindow) -> (f64, f64, f64) {
        let r = &self.region;
        let c = window.center;
        let u0 = (c.u - window.half_width).ceil().max(r.min_u as f64);
        let v0 = (c.v - window.half_height).ceil().max(r.min_v as f64);
        let u1 = (c.u + window.half_width).floor().min(r.max_u as f64);
        let v1 = (c.v + window.half_height).floor().min(r.max_v as f64);
        if !(u0 <= u1 && v0 <= v1) {
            return (0.0, 0.0, 0.0);
        }
        let (u0, v0, u1, v1) = (u0 as usize, v0 as usize, u1 as usize, v1 as usize);
        let w = r.width();
        let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
        for v in v0..=v1 {
            let row = &self.data[(v - r.min_v) * w..(v - r.min_v + 1) * w];
            let mut row_sum = 0.0;
            for u in u0..=u1 {
                let x = row[u - r.min_u];
                row_sum += x;
                m10 += x * u as f64;
            }
            m00 += row_sum;
            m01 += row_sum * v as f64;
        }
        (m00, m10, m01)
    }
}

pub fn backproject(frame: &Frame, region: PixelRegion, hist: &IntensityHistogram) -> WeightMap {
    let table = hist.level_table();
    let mut data = Vec::with_capacity(region.area());
    for v in region.min_v..=region.max_v {
        let row = &frame.row(v)[region.min_u..=region.max_u];
        data.extend(row.iter().map(|&p| table[p as usize]));
    }
    WeightMap { region, data }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShift {
    pub mode: PixelPoint,
    pub iterations: u32,
}

/// Moves the window to the weighted centroid of its contents until the step
/// is shorter than `epsilon_px` or `max_iterations` steps have run.
pub fn mean_shift(
    weights: &WeightMap,
    start: PixelPoint,
    half_width: f64,
    half_height: f64,
    max_iterations: u32,
    epsilon_px: f64,
) -> Result<MeanShift> {
    let mut window = SearchWindow::new(start, half_width, half_height);
    let mut iterations = 0;
    while iterations < max_iterations.max(1) {
        let (m00, m10, m01) = weights.moments(&window);
        if !(m00 > 0.0) {
            return Err(Error::LostTarget);
        }
        let next = PixelPoint::new(m10 / m00, m01 / m00);
        let shift = next.distance(&window.center);
        window.center = next;
        iterations += 1;
        if shift < epsilon_px {
            break;
        }
    }
    Ok(MeanShift { mode: window.center, iterations })
}

/// Square window with side `2 * sqrt(m00 / max_weight)`, half extents clamped
/// to `[4, frame_extent / 2]`.
pub fn adapt_window(area_factor: f64, max_weight: f64, frame_width: u32, frame_height: u32) -> (f64, f64) {
    let side = if max_weight > 0.0 && area_factor > 0.0 {
        2.0 * (area_factor / max_weight).sqrt()
    } else {
        0.0
    };
    let upper = 0.5 * frame_width.min(frame_height) as f64;
    let half = (side / 2.0).min(upper).max(MIN_HALF_EXTENT);
    (half, half)
}

pub fn bhattacharyya(p: &IntensityHistogram, q: &IntensityHistogram) -> Result<f64> {
    if p.bins() != q.bins() {
        return Err(Error::IncompatibleHistogram(p.bins(), q.bins()));
    }
    let rho: f64 = p.weights.iter().zip(&q.weights).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(rho.clamp(0.0, 1.0))
}

/// Per-lamp tracker memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    /// Model histogram, frozen at acquisition.
    pub reference: IntensityHistogram,
    /// Kernel extents the model was built with; candidate histograms reuse them.
    pub reference_half: (f64, f64),
    pub window: SearchWindow,
    /// Area factor at acquisition.
    pub initial_area: f64,
    pub last_similarity: f64,
}

impl TrackState {
    pub fn new(frame: &Frame, window: SearchWindow, params: &CamshiftParams) -> Result<Self> {
        let reference = build_histogram(frame, &window, params.bins)?;
        let region = window.clip(frame.width, frame.height).ok_or(Error::OutOfFrame)?;
        let weights = backproject(frame, region, &reference);
        let (initial_area, _, _) = weights.moments(&window);
        if !(initial_area > 0.0) {
            return Err(Error::LostTarget);
        }
        let (hw, hh) = adapt_window(initial_area, reference.max_weight(), frame.width, frame.height);
        Ok(Self {
            reference,
            reference_half: (window.half_width, window.half_height),
            window: SearchWindow::new(window.center, hw, hh),
            initial_area,
            last_similarity: 1.0,
        })
    }

    /// Model from an acquired blob: the ellipse inscribed in its bounding box,
    /// centred on the intensity centroid.
    pub fn from_blob(frame: &Frame, blob: &Blob, params: &CamshiftParams) -> Result<Self> {
        let bb = blob.bbox;
        let window = SearchWindow::new(
            blob.intensity_centroid,
            0.5 * (bb.width() as f64 - 1.0),
            0.5 * (bb.height() as f64 - 1.0),
        );
        Self::new(frame, window, params)
    }

    pub fn area_ratio(&self, area_factor: f64) -> f64 {
        area_factor / self.initial_area
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    pub centroid: PixelPoint,
    pub window: SearchWindow,
    pub area_factor: f64,
    pub iterations: u32,
    pub similarity: f64,
}

/// One Cam-shift step from `start_hint`. Updates the state's window and
/// similarity on success; leaves the state untouched on loss.
pub fn track_step(
    frame: &Frame,
    state: &mut TrackState,
    start_hint: PixelPoint,
    params: &CamshiftParams,
) -> Result<TrackResult> {
    let search = SearchWindow::new(start_hint, state.window.half_width, state.window.half_height)
        .scaled(params.search_margin);
    let region = search.clip(frame.width, frame.height).ok_or(Error::LostTarget)?;
    let weights = backproject(frame, region, &state.reference);
    let ms = mean_shift(
        &weights,
        start_hint,
        state.window.half_width,
        state.window.half_height,
        params.max_iterations,
        params.epsilon_px,
    )?;
    let converged = SearchWindow { center: ms.mode, ..state.window };
    let (area_factor, _, _) = weights.moments(&converged);
    let (hw, hh) = adapt_window(area_factor, state.reference.max_weight(), frame.width, frame.height);
    let candidate = build_histogram(
        frame,
        &SearchWindow::new(ms.mode, state.reference_half.0, state.reference_half.1),
        state.reference.bins(),
    )?;
    let similarity = bhattacharyya(&state.reference, &candidate)?;

    state.window = SearchWindow::new(ms.mode, hw, hh);
    state.last_similarity = similarity;
    Ok(TrackResult {
        centroid: ms.mode,
        window: state.window,
        area_factor,
        iterations: ms.iterations,
        similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::detect_blobs;
    use crate::geometry::{CameraIntrinsics, WorldPoint};
    use crate::scene_sim::{LampSpec, SceneConfig, Trajectory};
    use proptest::prelude::*;

    fn lamp_scene(camera: WorldPoint) -> SceneConfig {
        let intr = CameraIntrinsics::new(0.004, 3.2e-6, 3.2e-6, PixelPoint::new(199.5, 149.5), 400, 300).unwrap();
        SceneConfig {
            intrinsics: intr,
            lamps: vec![LampSpec::striped(1, WorldPoint::new(100.0, 45.0, 190.0), 7.5, 16)],
            trajectory: Trajectory::stationary(camera, 2.0),
            occlusions: vec![],
            noise_sigma: 0.0,
            fps: 46.0,
            seed: 4,
            dark_level: 20,
            row_rate_hz: 68_000.0,
            vibration_sigma_cm: 0.0,
        }
    }

    fn acquired(scene: &SceneConfig) -> (TrackState, PixelPoint) {
        let (frame, truth) = scene.render_index(0).unwrap();
        let blob = &detect_blobs(&frame, 128, 50)[0];
        (TrackState::from_blob(&frame, blob, &CamshiftParams::default()).unwrap(), truth.lamps[0].centroid)
    }

    fn full_region(frame: &Frame) -> PixelRegion {
        PixelRegion { min_u: 0, min_v: 0, max_u: frame.width as usize - 1, max_v: frame.height as usize - 1 }
    }

    #[test]
    fn uniform_window_gives_delta_histogram() {
        let frame = Frame::filled(32, 32, 77);
        let h = build_histogram(&frame, &SearchWindow::new(PixelPoint::new(16.0, 16.0), 8.0, 8.0), 32).unwrap();
        let b = h.bin_of(77);
        assert_eq!(h.weights()[b], 1.0);
        assert_eq!(h.weights().iter().filter(|&&w| w > 0.0).count(), 1);
    }

    #[test]
    fn histogram_invariant_to_sub_bin_offset() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        // every pixel on a bin's lower edge, so adding < 8 levels stays in-bin
        let pixels: Vec<u8> = (0..32 * 32).map(|_| rng.random_range(0..31u8) * 8).collect();
        let frame = Frame::new(32, 32, pixels).unwrap();
        let win = SearchWindow::new(PixelPoint::new(15.5, 16.0), 10.0, 7.0);
        let base = build_histogram(&frame, &win, 32).unwrap();
        for c in 1..8u8 {
            let shifted = Frame::new(32, 32, frame.pixels.iter().map(|p| p + c).collect()).unwrap();
            assert_eq!(build_histogram(&shifted, &win, 32).unwrap(), base);
        }
    }

    #[test]
    fn histogram_outside_frame_errors() {
        let frame = Frame::filled(32, 32, 77);
        let win = SearchWindow::new(PixelPoint::new(100.0, 100.0), 8.0, 8.0);
        assert!(matches!(build_histogram(&frame, &win, 32), Err(Error::OutOfFrame)));
    }

    #[test]
    fn lamp_histogram_peaks_at_stripe_levels() {
        let scene = lamp_scene(WorldPoint::new(100.0, 45.0, 40.0));
        let (state, _) = acquired(&scene);
        let h = &state.reference;
        let mut order: Vec<usize> = (0..h.bins()).collect();
        order.sort_by(|&a, &b| h.weights()[b].total_cmp(&h.weights()[a]));
        let mut top2 = vec![order[0], order[1]];
        top2.sort();
        assert_eq!(top2, vec![h.bin_of(164), h.bin_of(236)]);
    }

    #[test]
    fn backprojection_of_delta_and_uniform() {
        let pixels: Vec<u8> = (0..16 * 16).map(|i| (i % 256) as u8).collect();
        let frame = Frame::new(16, 16, pixels).unwrap();
        let mut w = vec![0.0; 32];
        w[5] = 1.0;
        let delta = IntensityHistogram::from_weights(w).unwrap();
        let map = backproject(&frame, full_region(&frame), &delta);
        for v in 0..16 {
            for u in 0..16 {
                let expect = if delta.bin_of(frame.get(u, v)) == 5 { 1.0 } else { 0.0 };
                assert_eq!(map.get(u, v), expect);
            }
        }
        let map = backproject(&frame, full_region(&frame), &IntensityHistogram::uniform(32));
        assert!(map.data().iter().all(|&x| x == 1.0 / 32.0));
    }

    #[test]
    fn lamp_backprojection_contrast() {
        let scene = lamp_scene(WorldPoint::new(100.0, 45.0, 40.0));
        let mut noisy = scene.clone();
        noisy.noise_sigma = 2.0;
        let (state, truth) = acquired(&noisy);
        let (frame, _) = noisy.render_index(1).unwrap();
        let map = backproject(&frame, full_region(&frame), &state.reference);
        let r = 62.5;
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0, 0.0, 0);
        for v in 0..frame.height as usize {
            for u in 0..frame.width as usize {
                let d = PixelPoint::new(u as f64, v as f64).distance(&truth);
                if d < r - 1.0 {
                    inside += map.get(u, v);
                    ni += 1;
                } else if d > r + 1.0 {
                    outside += map.get(u, v);
                    no += 1;
                }
            }
        }
        let (mi, mo) = (inside / ni as f64, outside / no as f64);
        assert!(mi > 5.0 * mo, "inside {mi} outside {mo}");
    }

    fn map_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> WeightMap {
        let data = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).map(|(u, v)| f(u, v)).collect();
        WeightMap::new(PixelRegion { min_u: 0, min_v: 0, max_u: w - 1, max_v: h - 1 }, data).unwrap()
    }

    #[test]
    fn mean_shift_on_constant_weights_stays_put() {
        let map = map_from_fn(64, 64, |_, _| 0.3);
        let ms = mean_shift(&map, PixelPoint::new(30.0, 30.0), 8.0, 8.0, 20, 0.5).unwrap();
        assert_eq!(ms.iterations, 1);
        assert!(ms.mode.distance(&PixelPoint::new(30.0, 30.0)) < 1e-9);
    }

    #[test]
    fn mean_shift_finds_single_pixel() {
        let map = map_from_fn(64, 64, |u, v| if (u, v) == (35, 27) { 1.0 } else { 0.0 });
        let ms = mean_shift(&map, PixelPoint::new(30.0, 30.0), 8.0, 8.0, 20, 0.5).unwrap();
        assert_eq!(ms.mode, PixelPoint::new(35.0, 27.0));
    }

    #[test]
    fn mean_shift_zero_window_is_lost() {
        let map = map_from_fn(64, 64, |u, _| if u > 50 { 1.0 } else { 0.0 });
        assert!(matches!(
            mean_shift(&map, PixelPoint::new(10.0, 10.0), 8.0, 8.0, 20, 0.5),
            Err(Error::LostTarget)
        ));
    }

    #[test]
    fn converged_mode_is_fixed_point() {
        let map = map_from_fn(80, 80, |u, v| {
            let (du, dv) = (u as f64 - 41.3, v as f64 - 37.8);
            (-(du * du + dv * dv) / 50.0).exp()
        });
        let ms = mean_shift(&map, PixelPoint::new(30.0, 45.0), 12.0, 12.0, 50, 0.5).unwrap();
        let again = mean_shift(&map, ms.mode, 12.0, 12.0, 1, 0.5).unwrap();
        assert!(again.mode.distance(&ms.mode) < 0.5);
    }

    #[test]
    fn adapt_window_law() {
        assert_eq!(adapt_window(0.0, 0.5, 640, 480), (4.0, 4.0));
        let (a, _) = adapt_window(400.0, 1.0, 640, 480);
        let (b, _) = adapt_window(1600.0, 1.0, 640, 480);
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert_eq!(adapt_window(1e9, 1.0, 640, 480), (240.0, 240.0));
    }

    #[test]
    fn bhattacharyya_examples() {
        let p = IntensityHistogram::from_weights(vec![0.2, 0.3, 0.5, 0.0]).unwrap();
        assert!((bhattacharyya(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        let a = IntensityHistogram::from_weights(vec![1.0, 0.0]).unwrap();
        let b = IntensityHistogram::from_weights(vec![0.0, 1.0]).unwrap();
        assert_eq!(bhattacharyya(&a, &b).unwrap(), 0.0);
        for k in [2usize, 8, 32] {
            let mut d = vec![0.0; k];
            d[0] = 1.0;
            let rho = bhattacharyya(&IntensityHistogram::uniform(k), &IntensityHistogram::from_weights(d).unwrap()).unwrap();
            assert!((rho - 1.0 / (k as f64).sqrt()).abs() < 1e-12);
        }
        assert!(matches!(
            bhattacharyya(&IntensityHistogram::uniform(8), &IntensityHistogram::uniform(16)),
            Err(Error::IncompatibleHistogram(8, 16))
        ));
    }

    #[test]
    fn static_lamp_converges_immediately() {
        let scene = lamp_scene(WorldPoint::new(101.0, 44.0, 40.0));
        let (mut state, truth) = acquired(&scene);
        let params = CamshiftParams::default();
        for k in 1..20 {
            let (frame, _) = scene.render_index(k).unwrap();
            let r = track_step(&frame, &mut state, truth, &params).unwrap();
            assert!(r.iterations <= 2, "frame {k}: {} iterations", r.iterations);
            assert!(r.centroid.distance(&truth) < 0.5, "frame {k}: {:?} vs {truth:?}", r.centroid);
            assert!(r.similarity > 0.9);
            assert!((state.area_ratio(r.area_factor) - 1.0).abs() < 0.25);
        }
    }

    #[test]
    fn offset_hint_still_converges() {
        let scene = lamp_scene(WorldPoint::new(100.0, 45.0, 40.0));
        let (mut state, truth) = acquired(&scene);
        let params = CamshiftParams::default();
        let (frame, _) = scene.render_index(5).unwrap();
        for (du, dv) in [(15.0, 0.0), (0.0, -15.0), (10.6, 10.6), (-12.0, 9.0)] {
            let mut s = state.clone();
            let hint = PixelPoint::new(truth.u + du, truth.v + dv);
            let r = track_step(&frame, &mut s, hint, &params).unwrap();
            assert!(r.centroid.distance(&truth) < 1.0, "hint offset ({du},{dv}) -> {:?}", r.centroid);
        }
        let r = track_step(&frame, &mut state, truth, &params).unwrap();
        assert!(r.centroid.distance(&truth) < 0.5);
    }

    #[test]
    fn blank_hint_is_lost() {
        let scene = lamp_scene(WorldPoint::new(100.0, 45.0, 40.0));
        let (mut state, _) = acquired(&scene);
        let (frame, _) = scene.render_index(1).unwrap();
        let before = state.clone();
        let r = track_step(&frame, &mut state, PixelPoint::new(20.0, 20.0), &CamshiftParams::default());
        assert!(matches!(r, Err(Error::LostTarget)));
        assert_eq!(state, before);
    }

    #[test]
    fn window_grows_as_camera_rises() {
        // H from 190 cm down to 100 cm
        let intr = CameraIntrinsics::new(0.004, 3.2e-6, 3.2e-6, PixelPoint::new(299.5, 299.5), 600, 600).unwrap();
        let scene = SceneConfig {
            intrinsics: intr,
            lamps: vec![LampSpec::striped(1, WorldPoint::new(100.0, 45.0, 190.0), 7.5, 16)],
            trajectory: Trajectory::new(
                vec![WorldPoint::new(100.0, 45.0, 0.0), WorldPoint::new(100.0, 45.0, 90.0)],
                20.0,
            )
            .unwrap(),
            occlusions: vec![],
            noise_sigma: 0.0,
            fps: 46.0,
            seed: 4,
            dark_level: 20,
            row_rate_hz: 68_000.0,
            vibration_sigma_cm: 0.0,
        };
        let (mut state, mut prev) = acquired(&scene);
        let params = CamshiftParams::default();
        let mut side = state.window.half_width;
        for k in (1..scene.frame_count()).step_by(10) {
            let (frame, _) = scene.render_index(k).unwrap();
            let r = track_step(&frame, &mut state, prev, &params).unwrap();
            assert!(r.window.half_width >= side, "frame {k}: {} < {side}", r.window.half_width);
            side = r.window.half_width;
            prev = r.centroid;
        }
        assert!(side > 1.7 * 62.5 * 0.9 * 1.5);
    }

    proptest! {
        #[test]
        fn bhattacharyya_symmetric_and_bounded(
            a in prop::collection::vec(0.0f64..1.0, 16),
            b in prop::collection::vec(0.0f64..1.0, 16),
        ) {
            prop_assume!(a.iter().sum::<f64>() > 1e-6 && b.iter().sum::<f64>() > 1e-6);
            let p = IntensityHistogram::from_weights(a).unwrap();
            let q = IntensityHistogram::from_weights(b).unwrap();
            let pq = bhattacharyya(&p, &q).unwrap();
            prop_assert_eq!(pq, bhattacharyya(&q, &p).unwrap());
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!((bhattacharyya(&p, &p).unwrap() - 1.0).abs() < 1e-9);
            let dist: f64 = p.weights().iter().zip(q.weights()).map(|(x, y)| (x - y).abs()).sum();
            if dist > 1e-3 {
                prop_assert!(pq < 1.0 - 1e-9);
            }
        }

        #[test]
        fn histogram_is_normalized(seed in 0u64..1000, cu in 0.0f64..40.0, cv in 0.0f64..40.0, hw in 4.0f64..20.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let frame = Frame::new(40, 40, (0..1600).map(|_| rng.random()).collect()).unwrap();
            let h = build_histogram(&frame, &SearchWindow::new(PixelPoint::new(cu, cv), hw, hw * 0.7), 32).unwrap();
            prop_assert!((h.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(h.weights().iter().all(|&w| w >= 0.0));
        }
    }
}
