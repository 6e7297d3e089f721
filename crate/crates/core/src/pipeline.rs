//! Frame-by-frame positioning loop.
//!
//! Both lamps are found by full-frame detection once. After that each frame
//! runs UKF predict, one Cam-shift step per lamp started from the predicted
//! centroid, a reliability-weighted UKF update, and double-lamp positioning
//! from the posterior centroids. A lamp whose area factor stays under the
//! loss threshold for too long is dropped and re-detected on its own while
//! the filter keeps predicting it through the shared velocity.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camshift::{track_step, CamshiftParams, TrackState};
use crate::detector::{acquire, Blob, DetectorParams, LampIdTable};
use crate::error::{Error, Result};
use crate::geometry::{estimate_height, locate_terminal, pixel_to_image, CameraIntrinsics, PixelPoint, WorldPoint};
use crate::scene_sim::{Frame, Modulation, SceneConfig};
use crate::ukf::{initialize, predict, reliability_scale, update, JointState, UkfParams};

/// Where each Cam-shift step starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartHint {
    #[default]
    Predicted,
    PreviousCentroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LampRef {
    pub id: u32,
    pub position: WorldPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub lamps: [LampRef; 2],
    pub id_table: LampIdTable,
    pub detector: DetectorParams,
    pub camshift: CamshiftParams,
    pub ukf: UkfParams,
    pub loss_area_ratio_threshold: f64,
    pub loss_frame_count: u32,
    /// Frames a single lost lamp may fail re-detection before both lamps
    /// are re-acquired from scratch.
    pub reacquire_patience: u32,
    pub start_hint: StartHint,
}

impl PipelineConfig {
    /// Tracks `wanted` in `scene`; every striped lamp of the scene goes into
    /// the id table so that neighbours are recognized rather than confused.
    pub fn from_scene(scene: &SceneConfig, wanted: [u32; 2]) -> Result<Self> {
        let mut lamps = [LampRef { id: 0, position: WorldPoint::default() }; 2];
        for (slot, id) in lamps.iter_mut().zip(wanted) {
            let spec = scene
                .lamp(id)
                .ok_or_else(|| Error::InvalidParameter(format!("lamp {id} is not in the scene")))?;
            *slot = LampRef { id, position: spec.position };
        }
        let entries: Vec<_> = scene
            .lamps
            .iter()
            .filter_map(|l| match l.modulation {
                Modulation::Striped { period_rows } => Some((period_rows, l.id)),
                Modulation::Unmodulated => None,
            })
            .collect();
        let config = Self {
            intrinsics: scene.intrinsics,
            lamps,
            id_table: LampIdTable::from_periods(entries)?,
            detector: DetectorParams::default(),
            camshift: CamshiftParams::default(),
            ukf: UkfParams::default(),
            loss_area_ratio_threshold: 0.2,
            loss_frame_count: 5,
            reacquire_patience: 10,
            start_hint: StartHint::Predicted,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn lamp_separation(&self) -> f64 {
        self.lamps[0].position.planar_distance(&self.lamps[1].position)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.id_table.validate()?;
        self.ukf.validate()?;
        let [a, b] = self.lamps;
        if a.id == b.id {
            return Err(Error::InvalidParameter("the two tracked lamps must differ".into()));
        }
        for l in &self.lamps {
            if !self.id_table.entries.iter().any(|e| e.1 == l.id) {
                return Err(Error::InvalidParameter(format!("lamp {} has no id table entry", l.id)));
            }
        }
        if (a.position.z - b.position.z).abs() > 1e-6 {
            return Err(Error::InvalidParameter("tracked lamps must share one ceiling height".into()));
        }
        if !(self.lamp_separation() > 0.0) {
            return Err(Error::InvalidParameter("tracked lamps coincide".into()));
        }
        let theta = self.loss_area_ratio_threshold;
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!("loss threshold {theta} outside (0, 1)")));
        }
        if self.loss_frame_count < 1 {
            return Err(Error::InvalidParameter("loss frame count must be at least 1".into()));
        }
        let c = &self.camshift;
        if c.bins == 0 || c.bins > 256 || c.max_iterations == 0 || !(c.epsilon_px > 0.0) || !(c.search_margin >= 1.0) {
            return Err(Error::InvalidParameter("invalid Cam-shift parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Tracking,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerSlot {
    pub id: u32,
    pub track: Option<TrackState>,
    pub low_area_frames: u32,
    pub status: SlotStatus,
    /// Blob size when last acquired.
    pub acquired_pixels: usize,
}

impl TrackerSlot {
    pub fn new(id: u32) -> Self {
        Self { id, track: None, low_area_frames: 0, status: SlotStatus::Lost, acquired_pixels: 0 }
    }
}

/// Counts consecutive frames whose area ratio is under `threshold` and marks
/// the slot lost once the count exceeds `frame_count`. A lost-target result
/// should be passed as ratio 0.
pub fn update_loss_state(slot: &mut TrackerSlot, area_ratio: f64, threshold: f64, frame_count: u32) -> SlotStatus {
    if area_ratio < threshold || area_ratio.is_nan() {
        slot.low_area_frames += 1;
    } else {
        slot.low_area_frames = 0;
    }
    if slot.low_area_frames > frame_count {
        slot.status = SlotStatus::Lost;
    }
    slot.status
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixStatus {
    Fix,
    Acquiring,
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LampObservation {
    pub id: u32,
    /// Posterior centroid.
    pub u: f64,
    pub v: f64,
    pub rho: f64,
    /// Mean-shift iterations this frame; 0 when the lamp was detected rather
    /// than tracked.
    pub iters: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub frame: u64,
    pub t: f64,
    pub status: FixStatus,
    pub x_cm: Option<f64>,
    pub y_cm: Option<f64>,
    #[serde(rename = "H_cm")]
    pub h_cm: Option<f64>,
    /// Position fields repeat the last good fix.
    pub stale: bool,
    pub lamps: Vec<LampObservation>,
    pub proc_ms: f64,
}

impl PositionFix {
    fn empty(frame: &Frame, status: FixStatus) -> Self {
        Self {
            frame: frame.index,
            t: frame.timestamp,
            status,
            x_cm: None,
            y_cm: None,
            h_cm: None,
            stale: false,
            lamps: Vec::new(),
            proc_ms: 0.0,
        }
    }

    /// Terminal position, with z taken as ceiling height minus `H`.
    pub fn position(&self, ceiling_z: f64) -> Option<WorldPoint> {
        Some(WorldPoint::new(self.x_cm?, self.y_cm?, ceiling_z - self.h_cm?))
    }

    pub fn lamp(&self, id: u32) -> Option<&LampObservation> {
        self.lamps.iter().find(|l| l.id == id)
    }

    /// Copy with the timing field zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self { proc_ms: 0.0, ..self.clone() }
    }
}

/// `(x, y, H)` from two pixel centroids.
pub fn position_from_centroids(
    config: &PipelineConfig,
    c1: PixelPoint,
    c2: PixelPoint,
) -> Result<(f64, f64, f64)> {
    let f = config.intrinsics.focal_length;
    let i1 = pixel_to_image(c1, &config.intrinsics);
    let i2 = pixel_to_image(c2, &config.intrinsics);
    let h = estimate_height(f, config.lamp_separation(), i1.distance(&i2))?;
    let (x, y) = locate_terminal(i1, i2, config.lamps[0].position, config.lamps[1].position, h, f)?;
    Ok((x, y, h))
}

pub struct Pipeline {
    config: PipelineConfig,
    slots: [TrackerSlot; 2],
    filter: Option<JointState>,
    last_position: Option<(f64, f64, f64)>,
    reacquire_failures: u32,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let slots = [TrackerSlot::new(config.lamps[0].id), TrackerSlot::new(config.lamps[1].id)];
        Ok(Self { config, slots, filter: None, last_position: None, reacquire_failures: 0 })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn slots(&self) -> &[TrackerSlot; 2] {
        &self.slots
    }

    pub fn filter(&self) -> Option<&JointState> {
        self.filter.as_ref()
    }

    /// Processes one frame; `proc_ms` is the wall time spent in here.
    pub fn process_frame(&mut self, frame: &Frame) -> PositionFix {
        let start = Instant::now();
        let mut fix = match self.filter.take() {
            None => self.acquire_both(frame),
            Some(state) => self.track(frame, state),
        };
        fix.proc_ms = start.elapsed().as_secs_f64() * 1e3;
        fix
    }

    pub fn run<'a>(&mut self, frames: impl IntoIterator<Item = &'a Frame>) -> Vec<PositionFix> {
        frames.into_iter().map(|f| self.process_frame(f)).collect()
    }

    fn acquire_both(&mut self, frame: &Frame) -> PositionFix {
        let ids = [self.slots[0].id, self.slots[1].id];
        let blobs = match acquire(frame, &self.config.id_table, &ids, &self.config.detector) {
            Ok(b) => b,
            Err(_) => return self.not_fixed(frame, FixStatus::Acquiring),
        };
        let mut tracks = Vec::with_capacity(2);
        for id in ids {
            match TrackState::from_blob(frame, &blobs[&id], &self.config.camshift) {
                Ok(t) => tracks.push((t, &blobs[&id])),
                Err(_) => return self.not_fixed(frame, FixStatus::Acquiring),
            }
        }
        let centroids = [tracks[0].1.intensity_centroid, tracks[1].1.intensity_centroid];
        for (slot, (track, blob)) in self.slots.iter_mut().zip(tracks) {
            *slot = TrackerSlot {
                id: slot.id,
                track: Some(track),
                low_area_frames: 0,
                status: SlotStatus::Tracking,
                acquired_pixels: blob.pixel_count,
            };
        }
        let u = &self.config.ukf;
        let state = initialize(centroids[0], centroids[1], u.p0_pos, u.p0_vel);
        self.reacquire_failures = 0;
        let obs = [(1.0, 0), (1.0, 0)];
        self.finish(frame, state, obs, false)
    }

    fn track(&mut self, frame: &Frame, state: JointState) -> PositionFix {
        let cfg = &self.config;
        let predicted = match predict(&state, &cfg.ukf.noise.process, &cfg.ukf.ut) {
            Ok(p) => p,
            Err(_) => return self.reset(frame),
        };

        let mut measurements = [None, None];
        let mut scales = [cfg.ukf.noise.s_max; 2];
        let mut obs = [(0.0, 0u32); 2];
        let mut tripped = false;
        let mut reacquired: [Option<(Blob, TrackState)>; 2] = [None, None];

        for k in 0..2 {
            let slot = &mut self.slots[k];
            if slot.status == SlotStatus::Lost {
                reacquired[k] = reacquire_one(frame, cfg, slot);
                continue;
            }
            let Some(track) = slot.track.as_mut() else {
                slot.status = SlotStatus::Lost;
                continue;
            };
            let hint = match cfg.start_hint {
                StartHint::Predicted => predicted.lamp(k),
                StartHint::PreviousCentroid => track.window.center,
            };
            let (ratio, result) = match track_step(frame, track, hint, &cfg.camshift) {
                Ok(r) => (track.area_ratio(r.area_factor), Some(r)),
                Err(_) => (0.0, None),
            };
            let status = update_loss_state(slot, ratio, cfg.loss_area_ratio_threshold, cfg.loss_frame_count);
            if status == SlotStatus::Lost {
                tripped = true;
            }
            if let Some(r) = result {
                obs[k] = (r.similarity, r.iterations);
                // low-area windows are mostly background; keep them out of the fit
                if ratio >= cfg.loss_area_ratio_threshold && status == SlotStatus::Tracking {
                    measurements[k] = Some(r.centroid);
                    scales[k] = reliability_scale(r.similarity, &cfg.ukf.noise).unwrap_or(cfg.ukf.noise.s_max);
                }
            }
        }

        let mut posterior = match update(&predicted, measurements, scales, &cfg.ukf.noise.measurement, &cfg.ukf.ut) {
            Ok((s, _)) => s,
            Err(_) => return self.reset(frame),
        };

        let p0_pos = cfg.ukf.p0_pos;
        for (k, found) in reacquired.into_iter().enumerate() {
            if let Some((blob, track)) = found {
                posterior.reset_lamp(k, blob.intensity_centroid, p0_pos);
                self.slots[k] = TrackerSlot {
                    id: self.slots[k].id,
                    track: Some(track),
                    low_area_frames: 0,
                    status: SlotStatus::Tracking,
                    acquired_pixels: blob.pixel_count,
                };
                obs[k] = (1.0, 0);
            }
        }

        let any_lost = self.slots.iter().any(|s| s.status == SlotStatus::Lost);
        if any_lost && !tripped {
            self.reacquire_failures += 1;
            if self.reacquire_failures > self.config.reacquire_patience {
                return self.reset(frame);
            }
        } else if !any_lost {
            self.reacquire_failures = 0;
        }
        self.finish(frame, posterior, obs, any_lost)
    }

    fn finish(&mut self, frame: &Frame, state: JointState, obs: [(f64, u32); 2], degraded: bool) -> PositionFix {
        let lamps = (0..2)
            .map(|k| {
                let c = state.lamp(k);
                LampObservation { id: self.slots[k].id, u: c.u, v: c.v, rho: obs[k].0, iters: obs[k].1 }
            })
            .collect();
        let position = if degraded {
            None
        } else {
            position_from_centroids(&self.config, state.lamp(0), state.lamp(1)).ok()
        };
        self.filter = Some(state);
        let mut fix = match position {
            Some(p) => {
                self.last_position = Some(p);
                let mut f = PositionFix::empty(frame, FixStatus::Fix);
                (f.x_cm, f.y_cm, f.h_cm) = (Some(p.0), Some(p.1), Some(p.2));
                f
            }
            None => self.not_fixed(frame, FixStatus::Degraded),
        };
        fix.lamps = lamps;
        fix
    }

    fn not_fixed(&self, frame: &Frame, status: FixStatus) -> PositionFix {
        let mut fix = PositionFix::empty(frame, status);
        if let Some((x, y, h)) = self.last_position {
            (fix.x_cm, fix.y_cm, fix.h_cm) = (Some(x), Some(y), Some(h));
            fix.stale = true;
        }
        fix
    }

    fn reset(&mut self, frame: &Frame) -> PositionFix {
        self.filter = None;
        for slot in &mut self.slots {
            *slot = TrackerSlot::new(slot.id);
        }
        self.reacquire_failures = 0;
        self.not_fixed(frame, FixStatus::Degraded)
    }
}

/// Full-frame search for one lost lamp. The blob must have regained at least
/// the loss-threshold share of its size at acquisition, so a sliver left
/// by an occluder is not taken as the whole lamp.
fn reacquire_one(frame: &Frame, cfg: &PipelineConfig, slot: &TrackerSlot) -> Option<(Blob, TrackState)> {
    let blobs = acquire(frame, &cfg.id_table, &[slot.id], &cfg.detector).ok()?;
    let blob = blobs.into_values().next()?;
    if (blob.pixel_count as f64) < cfg.loss_area_ratio_threshold * slot.acquired_pixels as f64 {
        return None;
    }
    let track = TrackState::from_blob(frame, &blob, &cfg.camshift).ok()?;
    Some((blob, track))
}
