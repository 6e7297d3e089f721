//! JSON configuration shared by the simulator, the tracker and the benches.
//!
//! Lengths are in cm unless a key says otherwise. Unknown keys are rejected,
//! and every error names the offending key path, e.g. `lamps[0].position`.

use serde::{Deserialize, Serialize};

use crate::camshift::CamshiftParams;
use crate::detector::{DetectorParams, LampIdTable};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, WorldPoint};
use crate::io::MAX_PGM_PIXELS;
use crate::pipeline::{LampRef, PipelineConfig, StartHint};
use crate::scene_sim::{LampSpec, Modulation, OcclusionEvent, OcclusionSide, SceneConfig, Trajectory};
use crate::ukf::{NoiseModel, UkfParams, UtParams};
use nalgebra::{Matrix2, Matrix6, Vector2, Vector6};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub focal_length_mm: f64,
    pub pixel_pitch_um: [f64; 2],
    pub principal_point: [f64; 2],
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LampSection {
    pub id: u32,
    pub position: [f64; 3],
    pub radius_cm: f64,
    /// Stripe period; absent for an unmodulated source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_rows: Option<u32>,
    #[serde(default = "default_on")]
    pub on_intensity: u8,
    #[serde(default = "default_off")]
    pub off_intensity: u8,
}

fn default_on() -> u8 {
    236
}

fn default_off() -> u8 {
    164
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub waypoints: Vec<[f64; 3]>,
    pub speed_cm_s: f64,
    #[serde(default)]
    pub hold_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSection {
    pub lamp_id: u32,
    pub start_frame: u64,
    pub end_frame: u64,
    pub fraction: f64,
    pub side: OcclusionSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    /// The two lamps used for positioning; defaults to the first two striped
    /// lamps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lamps: Option<[u32; 2]>,
    pub loss_area_ratio_threshold: f64,
    pub loss_frame_count: u32,
    pub reacquire_patience: u32,
    pub start_hint: StartHint,
    pub id_tolerance_rows: f64,
    pub detector: DetectorParams,
    pub camshift: CamshiftParams,
    pub ut: UtParams,
    pub process_noise_diag: [f64; 6],
    pub measurement_noise_diag: [f64; 2],
    pub s_min: f64,
    pub s_max: f64,
    pub eps_rho: f64,
    pub p0_pos: f64,
    pub p0_vel: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let u = UkfParams::default();
        Self {
            lamps: None,
            loss_area_ratio_threshold: 0.2,
            loss_frame_count: 5,
            reacquire_patience: 10,
            start_hint: StartHint::Predicted,
            id_tolerance_rows: 2.0,
            detector: DetectorParams::default(),
            camshift: CamshiftParams::default(),
            ut: u.ut,
            process_noise_diag: [0.25, 0.25, 0.25, 0.25, 1.0, 1.0],
            measurement_noise_diag: [1.0, 1.0],
            s_min: u.noise.s_min,
            s_max: u.noise.s_max,
            eps_rho: u.noise.eps_rho,
            p0_pos: u.p0_pos,
            p0_vel: u.p0_vel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub camera: CameraSection,
    pub lamps: Vec<LampSection>,
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub occlusions: Vec<OcclusionSection>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dark")]
    pub dark_level: u8,
    #[serde(default = "default_row_rate")]
    pub row_rate_hz: f64,
    #[serde(default)]
    pub vibration_sigma_cm: f64,
    #[serde(default)]
    pub tracker: TrackerSection,
}

fn default_noise() -> f64 {
    2.0
}

fn default_fps() -> f64 {
    46.0
}

fn default_dark() -> u8 {
    20
}

fn default_row_rate() -> f64 {
    68_000.0
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            Error::Config { path: key_path(&path, &message), message }
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Config {
                path: "schema_version".into(),
                message: format!("unsupported schema version {}, expected {SCHEMA_VERSION}", file.schema_version),
            });
        }
        file.scene()?;
        file.pipeline()?;
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_scene(scene: &SceneConfig) -> Self {
        let i = &scene.intrinsics;
        Self {
            schema_version: SCHEMA_VERSION,
            camera: CameraSection {
                focal_length_mm: i.focal_length * 1e3,
                pixel_pitch_um: [i.pixel_pitch_x * 1e6, i.pixel_pitch_y * 1e6],
                principal_point: [i.principal_point.u, i.principal_point.v],
                width: i.width,
                height: i.height,
            },
            lamps: scene
                .lamps
                .iter()
                .map(|l| LampSection {
                    id: l.id,
                    position: l.position.into(),
                    radius_cm: l.radius,
                    period_rows: match l.modulation {
                        Modulation::Striped { period_rows } => Some(period_rows),
                        Modulation::Unmodulated => None,
                    },
                    on_intensity: l.on_intensity,
                    off_intensity: l.off_intensity,
                })
                .collect(),
            trajectory: TrajectorySection {
                waypoints: scene.trajectory.waypoints.iter().map(|&w| w.into()).collect(),
                speed_cm_s: scene.trajectory.speed,
                hold_s: scene.trajectory.hold,
            },
            occlusions: scene
                .occlusions
                .iter()
                .map(|o| OcclusionSection {
                    lamp_id: o.lamp_id,
                    start_frame: o.start_frame,
                    end_frame: o.end_frame,
                    fraction: o.target_fraction,
                    side: o.side,
                })
                .collect(),
            noise_sigma: scene.noise_sigma,
            fps: scene.fps,
            seed: scene.seed,
            dark_level: scene.dark_level,
            row_rate_hz: scene.row_rate_hz,
            vibration_sigma_cm: scene.vibration_sigma_cm,
            tracker: TrackerSection::default(),
        }
    }

    pub fn scene(&self) -> Result<SceneConfig> {
        let c = &self.camera;
        if c.width as usize * c.height as usize > MAX_PGM_PIXELS {
            return Err(cfg_err("camera", format!("{}x{} frame too large", c.width, c.height)));
        }
        let intrinsics = CameraIntrinsics::new(
            c.focal_length_mm / 1e3,
            c.pixel_pitch_um[0] / 1e6,
            c.pixel_pitch_um[1] / 1e6,
            PixelPoint::new(c.principal_point[0], c.principal_point[1]),
            c.width,
            c.height,
        )
        .map_err(|e| cfg_err("camera", e))?;
        let lamps = self
            .lamps
            .iter()
            .map(|l| LampSpec {
                id: l.id,
                position: WorldPoint::from(l.position),
                radius: l.radius_cm,
                modulation: match l.period_rows {
                    Some(period_rows) => Modulation::Striped { period_rows },
                    None => Modulation::Unmodulated,
                },
                on_intensity: l.on_intensity,
                off_intensity: if l.period_rows.is_some() { l.off_intensity } else { l.on_intensity },
            })
            .collect();
        let t = &self.trajectory;
        let trajectory = Trajectory {
            waypoints: t.waypoints.iter().map(|&w| WorldPoint::from(w)).collect(),
            speed: t.speed_cm_s,
            hold: t.hold_s,
        };
        let scene = SceneConfig {
            intrinsics,
            lamps,
            trajectory,
            occlusions: self
                .occlusions
                .iter()
                .map(|o| OcclusionEvent {
                    lamp_id: o.lamp_id,
                    start_frame: o.start_frame,
                    end_frame: o.end_frame,
                    target_fraction: o.fraction,
                    side: o.side,
                })
                .collect(),
            noise_sigma: self.noise_sigma,
            fps: self.fps,
            seed: self.seed,
            dark_level: self.dark_level,
            row_rate_hz: self.row_rate_hz,
            vibration_sigma_cm: self.vibration_sigma_cm,
        };
        scene.validate().map_err(|e| cfg_err("", e))?;
        Ok(scene)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let scene = self.scene()?;
        let t = &self.tracker;
        let striped: Vec<&LampSpec> = scene
            .lamps
            .iter()
            .filter(|l| matches!(l.modulation, Modulation::Striped { .. }))
            .collect();
        let wanted = match t.lamps {
            Some(ids) => ids,
            None if striped.len() >= 2 => [striped[0].id, striped[1].id],
            None => return Err(cfg_err("lamps", "at least two striped lamps are needed for positioning")),
        };
        let mut lamps = [LampRef { id: 0, position: WorldPoint::default() }; 2];
        for (k, id) in wanted.into_iter().enumerate() {
            let spec = scene
                .lamp(id)
                .ok_or_else(|| cfg_err(&format!("tracker.lamps[{k}]"), format!("no lamp with id {id}")))?;
            lamps[k] = LampRef { id, position: spec.position };
        }
        let entries = striped
            .iter()
            .map(|l| match l.modulation {
                Modulation::Striped { period_rows } => (period_rows, l.id),
                Modulation::Unmodulated => unreachable!(),
            })
            .collect();
        let id_table = LampIdTable::new(entries, t.id_tolerance_rows).map_err(|e| cfg_err("tracker.id_tolerance_rows", e))?;
        let ukf = UkfParams {
            ut: t.ut,
            noise: NoiseModel {
                process: Matrix6::from_diagonal(&Vector6::from_row_slice(&t.process_noise_diag)),
                measurement: Matrix2::from_diagonal(&Vector2::from_row_slice(&t.measurement_noise_diag)),
                s_min: t.s_min,
                s_max: t.s_max,
                eps_rho: t.eps_rho,
            },
            p0_pos: t.p0_pos,
            p0_vel: t.p0_vel,
        };
        let config = PipelineConfig {
            intrinsics: scene.intrinsics,
            lamps,
            id_table,
            detector: t.detector,
            camshift: t.camshift,
            ukf,
            loss_area_ratio_threshold: t.loss_area_ratio_threshold,
            loss_frame_count: t.loss_frame_count,
            reacquire_patience: t.reacquire_patience,
            start_hint: t.start_hint,
        };
        config.validate().map_err(|e| cfg_err("tracker", e))?;
        Ok(config)
    }
}

fn cfg_err(path: &str, e: impl ToString) -> Error {
    Error::Config { path: path.to_string(), message: e.to_string() }
}

/// Location of the offending key. A missing field is reported against its
/// parent object, so the field name is appended.
fn key_path(path: &str, message: &str) -> String {
    let field = message.strip_prefix("missing field `").and_then(|rest| rest.split('`').next());
    let base = if path == "." { "" } else { path };
    match field {
        Some(f) if base.is_empty() => f.to_string(),
        Some(f) => format!("{base}.{f}"),
        None => base.to_string(),
    }
}
