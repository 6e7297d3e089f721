//! Experiment runners and reports.
//!
//! Every comparison is paired: each simulator frame is rendered once and fed
//! to both the tracking pipeline and the full-frame detection baseline, and
//! only the time spent inside each method's per-frame call is recorded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::detector::acquire;
use crate::error::{Error, Result};
use crate::geometry::{percentile, pixel_to_plane, positioning_error_3d, tracking_error, EmpiricalCdf, PixelPoint};
use crate::pipeline::{position_from_centroids, FixStatus, LampObservation, Pipeline, PipelineConfig, PositionFix};
use crate::scene_sim::{Frame, GroundTruth, OcclusionEvent, OcclusionSide, SceneConfig};

pub const PIPELINE: &str = "pipeline";
pub const BASELINE: &str = "baseline";

/// Detects and identifies both lamps from scratch on every frame.
pub struct FullFrameBaseline {
    config: PipelineConfig,
    last_position: Option<(f64, f64, f64)>,
}

impl FullFrameBaseline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, last_position: None })
    }

    pub fn process_frame(&mut self, frame: &Frame) -> PositionFix {
        let start = Instant::now();
        let mut fix = self.locate(frame);
        fix.proc_ms = start.elapsed().as_secs_f64() * 1e3;
        fix
    }

    fn locate(&mut self, frame: &Frame) -> PositionFix {
        let cfg = &self.config;
        let ids = cfg.lamps.map(|l| l.id);
        let mut fix = PositionFix {
            frame: frame.index,
            t: frame.timestamp,
            status: FixStatus::Acquiring,
            x_cm: None,
            y_cm: None,
            h_cm: None,
            stale: false,
            lamps: Vec::new(),
            proc_ms: 0.0,
        };
        let found = acquire(frame, &cfg.id_table, &ids, &cfg.detector)
            .ok()
            .map(|b| ids.map(|id| b[&id].intensity_centroid))
            .and_then(|c| position_from_centroids(cfg, c[0], c[1]).ok().map(|p| (c, p)));
        match found {
            Some((c, p)) => {
                fix.status = FixStatus::Fix;
                (fix.x_cm, fix.y_cm, fix.h_cm) = (Some(p.0), Some(p.1), Some(p.2));
                fix.lamps = (0..2)
                    .map(|k| LampObservation { id: ids[k], u: c[k].u, v: c[k].v, rho: 1.0, iters: 0 })
                    .collect();
                self.last_position = Some(p);
            }
            None => {
                if let Some(p) = self.last_position {
                    (fix.x_cm, fix.y_cm, fix.h_cm) = (Some(p.0), Some(p.1), Some(p.2));
                    fix.stale = true;
                }
            }
        }
        fix
    }
}

pub fn baseline_full_frame<'a>(
    config: &PipelineConfig,
    frames: impl IntoIterator<Item = &'a Frame>,
) -> Result<Vec<PositionFix>> {
    let mut b = FullFrameBaseline::new(config.clone())?;
    Ok(frames.into_iter().map(|f| b.process_frame(f)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TrackingCm,
    PositioningCm,
    OffsetPx,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::TrackingCm, Metric::PositioningCm, Metric::OffsetPx];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::TrackingCm => "tracking_cm",
            Metric::PositioningCm => "positioning_cm",
            Metric::OffsetPx => "offset_px",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFrame {
    pub status: FixStatus,
    /// World-plane error per tracked lamp, cm; `None` for lamps not sampled
    /// this frame.
    pub tracking_cm: [Option<f64>; 2],
    pub positioning_cm: Option<f64>,
    /// Centroid offset per tracked lamp, px.
    pub offset_px: [Option<f64>; 2],
    pub iterations: Option<f64>,
    pub proc_ms: f64,
}

impl MethodFrame {
    /// Samples this frame contributes to `m`.
    pub fn metric(&self, m: Metric) -> Vec<f64> {
        match m {
            Metric::TrackingCm => self.tracking_cm.iter().flatten().copied().collect(),
            Metric::PositioningCm => self.positioning_cm.into_iter().collect(),
            Metric::OffsetPx => self.offset_px.iter().flatten().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: u64,
    pub t: f64,
    /// In the order of the report's `methods`.
    pub methods: Vec<MethodFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub metric: Metric,
    pub count: usize,
    pub mean: f64,
    pub p90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub method: String,
    pub frames: usize,
    pub mean_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub metadata: BTreeMap<String, serde_json::Value>,
    /// Set when the scenario could not be run.
    pub warning: Option<String>,
    pub methods: Vec<String>,
    pub rows: Vec<FrameRow>,
    pub summaries: Vec<MetricSummary>,
    pub timing: Vec<TimingSummary>,
}

impl ScenarioReport {
    pub fn skipped(name: &str, metadata: BTreeMap<String, serde_json::Value>, warning: String) -> Self {
        Self {
            name: name.to_string(),
            metadata,
            warning: Some(warning),
            methods: Vec::new(),
            rows: Vec::new(),
            summaries: Vec::new(),
            timing: Vec::new(),
        }
    }

    fn method_index(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    pub fn samples(&self, method: &str, metric: Metric) -> Vec<f64> {
        let Some(i) = self.method_index(method) else { return Vec::new() };
        self.rows.iter().flat_map(|r| r.methods[i].metric(metric)).collect()
    }

    pub fn frames(&self, method: &str) -> Vec<&MethodFrame> {
        let Some(i) = self.method_index(method) else { return Vec::new() };
        self.rows.iter().map(|r| &r.methods[i]).collect()
    }

    pub fn summary(&self, method: &str, metric: Metric) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.method == method && s.metric == metric)
    }

    pub fn timing(&self, method: &str) -> Option<&TimingSummary> {
        self.timing.iter().find(|t| t.method == method)
    }

    fn summarize(&mut self) {
        self.summaries.clear();
        self.timing.clear();
        for method in self.methods.clone() {
            for metric in Metric::ALL {
                if let Some(s) = summarize(&method, metric, &self.samples(&method, metric)) {
                    self.summaries.push(s);
                }
            }
            let ms: Vec<f64> = self.frames(&method).iter().map(|f| f.proc_ms).collect();
            if let Ok(cdf) = EmpiricalCdf::new(&ms) {
                self.timing.push(TimingSummary {
                    method: method.clone(),
                    frames: ms.len(),
                    mean_ms: cdf.mean(),
                    p90_ms: cdf.quantile(0.9).expect("valid quantile"),
                    max_ms: cdf.max(),
                });
            }
        }
    }
}

fn summarize(method: &str, metric: Metric, samples: &[f64]) -> Option<MetricSummary> {
    let cdf = EmpiricalCdf::new(samples).ok()?;
    Some(MetricSummary {
        method: method.to_string(),
        metric,
        count: cdf.len(),
        mean: cdf.mean(),
        p90: cdf.quantile(0.9).expect("valid quantile"),
        max: cdf.max(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub scenarios: Vec<ScenarioReport>,
    /// Statistics pooled over every scenario.
    pub aggregate: Vec<MetricSummary>,
}

impl ExperimentReport {
    pub fn new(name: &str, scenarios: Vec<ScenarioReport>) -> Self {
        let mut aggregate = Vec::new();
        for method in [PIPELINE, BASELINE] {
            for metric in Metric::ALL {
                let pooled = pooled_samples(&scenarios, method, metric);
                aggregate.extend(summarize(method, metric, &pooled));
            }
        }
        Self { name: name.to_string(), scenarios, aggregate }
    }

    pub fn scenario(&self, name: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

fn pooled_samples(scenarios: &[ScenarioReport], method: &str, metric: Metric) -> Vec<f64> {
    scenarios.iter().flat_map(|s| s.samples(method, metric)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Frame limit; the whole trajectory when `None`.
    pub frames: Option<u64>,
    pub with_baseline: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { frames: None, with_baseline: true }
    }
}

/// Per-frame errors of one fix. `sampled` lists the lamps whose tracking
/// error counts in this frame.
fn score(fix: &PositionFix, truth: &GroundTruth, scene: &SceneConfig, ids: [u32; 2], sampled: &[u32]) -> MethodFrame {
    let mut out = MethodFrame {
        status: fix.status,
        tracking_cm: [None; 2],
        positioning_cm: None,
        offset_px: [None; 2],
        iterations: None,
        proc_ms: fix.proc_ms,
    };
    let ceiling_z = scene.lamps.iter().find(|l| fix.lamp(l.id).is_some()).map(|l| l.position.z);
    if fix.status != FixStatus::Fix {
        return out;
    }
    if let Some(p) = ceiling_z.and_then(|z| fix.position(z)) {
        out.positioning_cm = Some(positioning_error_3d(p, truth.terminal_position));
    }
    for (k, id) in ids.into_iter().enumerate() {
        if !sampled.contains(&id) {
            continue;
        }
        let (Some(obs), Some(lt), Some(spec)) = (fix.lamp(id), truth.lamp(id), scene.lamp(id)) else {
            continue;
        };
        let c = PixelPoint::new(obs.u, obs.v);
        let on_plane = pixel_to_plane(c, &scene.intrinsics, truth.terminal_position, spec.position.z);
        out.tracking_cm[k] = Some(tracking_error(on_plane, (spec.position.x, spec.position.y)));
        out.offset_px[k] = Some(c.distance(&lt.centroid));
    }
    let iters: Vec<u32> = fix.lamps.iter().map(|l| l.iters).filter(|&i| i > 0).collect();
    if !iters.is_empty() {
        out.iterations = Some(iters.iter().sum::<u32>() as f64 / iters.len() as f64);
    }
    out
}

/// Runs the pipeline, and optionally the baseline, over the same rendered
/// frames.
pub fn run_paired(
    name: &str,
    scene: &SceneConfig,
    config: &PipelineConfig,
    options: RunOptions,
    sampled: &dyn Fn(&GroundTruth) -> Vec<u32>,
) -> Result<ScenarioReport> {
    scene.validate()?;
    let mut pipeline = Pipeline::new(config.clone())?;
    let mut baseline = if options.with_baseline { Some(FullFrameBaseline::new(config.clone())?) } else { None };
    let ids = config.lamps.map(|l| l.id);
    let count = options.frames.map_or(scene.frame_count(), |n| n.min(scene.frame_count()));
    let mut methods = vec![PIPELINE.to_string()];
    if baseline.is_some() {
        methods.push(BASELINE.to_string());
    }
    let mut rows = Vec::with_capacity(count as usize);
    for k in 0..count {
        let (frame, truth) = scene.render_index(k)?;
        let lamps = sampled(&truth);
        let mut per_method = vec![score(&pipeline.process_frame(&frame), &truth, scene, ids, &lamps)];
        if let Some(b) = baseline.as_mut() {
            per_method.push(score(&b.process_frame(&frame), &truth, scene, ids, &lamps));
        }
        rows.push(FrameRow { frame: k, t: truth.timestamp, methods: per_method });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("frames".into(), json!(count));
    metadata.insert("noise_sigma".into(), json!(scene.noise_sigma));
    metadata.insert("seed".into(), json!(scene.seed));
    metadata.insert("lamps".into(), json!(config.lamps.map(|l| l.id)));
    let mut report = ScenarioReport {
        name: name.to_string(),
        metadata,
        warning: None,
        methods,
        rows,
        summaries: Vec::new(),
        timing: Vec::new(),
    };
    report.summarize();
    Ok(report)
}

/// Scores recorded pipeline fixes against recorded ground truth, matching
/// records by frame index. Every fix needs a truth record.
pub fn score_fixes(
    name: &str,
    scene: &SceneConfig,
    ids: [u32; 2],
    fixes: &[PositionFix],
    truths: &[GroundTruth],
) -> Result<ScenarioReport> {
    let by_frame: BTreeMap<u64, &GroundTruth> = truths.iter().map(|t| (t.frame_index, t)).collect();
    let mut rows = Vec::with_capacity(fixes.len());
    for fix in fixes {
        let truth = by_frame
            .get(&fix.frame)
            .ok_or_else(|| Error::InvalidParameter(format!("no ground truth for frame {}", fix.frame)))?;
        rows.push(FrameRow { frame: fix.frame, t: fix.t, methods: vec![score(fix, truth, scene, ids, &ids)] });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("frames".into(), json!(rows.len()));
    metadata.insert("lamps".into(), json!(ids));
    let mut report = ScenarioReport {
        name: name.to_string(),
        metadata,
        warning: None,
        methods: vec![PIPELINE.to_string()],
        rows,
        summaries: Vec::new(),
        timing: Vec::new(),
    };
    report.summarize();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionSweep {
    pub fractions: Vec<f64>,
    /// Adds a scenario occluding both lamps at the largest fraction.
    pub both_lamps: bool,
    pub frames: u64,
    /// Unoccluded frames before the first burst.
    pub warmup_frames: u64,
    /// Frames per occlusion burst; each burst draws a side and a fraction.
    pub burst_frames: u64,
    /// Uniform spread of each burst's fraction around the nominal one.
    pub fraction_jitter: f64,
}

impl Default for OcclusionSweep {
    fn default() -> Self {
        Self {
            fractions: vec![0.3, 0.7],
            both_lamps: false,
            frames: 100,
            warmup_frames: 10,
            burst_frames: 10,
            fraction_jitter: 0.05,
        }
    }
}

impl OcclusionSweep {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.fractions.iter().find(|f| !(0.2..=0.9).contains(*f)) {
            return Err(Error::InvalidParameter(format!("occlusion fraction {f} outside [0.2, 0.9]")));
        }
        if self.burst_frames == 0 || self.frames <= self.warmup_frames {
            return Err(Error::InvalidParameter("occlusion sweep needs frames after warm-up and non-empty bursts".into()));
        }
        if !(0.0..0.2).contains(&self.fraction_jitter) {
            return Err(Error::InvalidParameter("fraction jitter must be in [0, 0.2)".into()));
        }
        Ok(())
    }

    fn events(&self, lamps: &[u32], fraction: f64, seed: u64) -> Vec<OcclusionEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fraction.to_bits() ^ lamps.len() as u64);
        let mut events = Vec::new();
        let mut start = self.warmup_frames;
        while start < self.frames {
            let end = (start + self.burst_frames - 1).min(self.frames - 1);
            for &lamp_id in lamps {
                let side = OcclusionSide::ALL[rng.random_range(0..4)];
                let f = fraction + rng.random_range(-1.0..=1.0) * self.fraction_jitter;
                events.push(OcclusionEvent {
                    lamp_id,
                    start_frame: start,
                    end_frame: end,
                    target_fraction: f.clamp(0.0, 0.95),
                    side,
                });
            }
            start = end + 1;
        }
        events
    }
}

pub fn occlusion_scenario_name(lamps: usize, fraction: f64) -> String {
    match (lamps, fraction) {
        (_, f) if f <= 0.0 => "control".to_string(),
        (1, f) => format!("single_{:02}", (f * 100.0).round() as u32),
        (_, f) => format!("both_{:02}", (f * 100.0).round() as u32),
    }
}

/// Control run plus one run per fraction with the first tracked lamp
/// occluded in bursts, and optionally one with both lamps occluded.
/// Tracking error is sampled on the occluded lamps from the first burst on.
pub fn run_occlusion_sweep(
    base: &SceneConfig,
    config: &PipelineConfig,
    sweep: &OcclusionSweep,
    with_baseline: bool,
) -> Result<ExperimentReport> {
    sweep.validate()?;
    let ids = config.lamps.map(|l| l.id);
    let mut plan: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    for &f in &sweep.fractions {
        plan.push((vec![ids[0]], f));
    }
    if sweep.both_lamps {
        let top = sweep.fractions.iter().copied().fold(0.0, f64::max);
        if top > 0.0 {
            plan.push((ids.to_vec(), top));
        }
    }
    let options = RunOptions { frames: Some(sweep.frames), with_baseline };
    let mut scenarios = Vec::new();
    for (occluded, fraction) in plan {
        let name = occlusion_scenario_name(occluded.len(), fraction);
        let mut scene = base.clone();
        scene.occlusions = if occluded.is_empty() { Vec::new() } else { sweep.events(&occluded, fraction, base.seed) };
        let warmup = sweep.warmup_frames;
        let sampled_ids = if occluded.is_empty() { ids.to_vec() } else { occluded.clone() };
        let sampler = move |t: &GroundTruth| if t.frame_index >= warmup { sampled_ids.clone() } else { Vec::new() };
        let mut metadata = BTreeMap::new();
        metadata.insert("occlusion_fraction".into(), json!(fraction));
        metadata.insert("occluded_lamps".into(), json!(occluded));
        let mut report = match run_paired(&name, &scene, config, options, &sampler) {
            Ok(r) => r,
            Err(e) => {
                scenarios.push(ScenarioReport::skipped(&name, metadata, format!("failed: {e}")));
                continue;
            }
        };
        report.metadata.extend(metadata);
        let lost = report.frames(PIPELINE).iter().filter(|f| f.status != FixStatus::Fix).count();
        report.metadata.insert("pipeline_frames_without_fix".into(), json!(lost));
        scenarios.push(report);
    }
    Ok(ExperimentReport::new("occlusion", scenarios))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeightSweep {
    /// Camera heights above the floor, cm.
    pub heights: Vec<f64>,
    pub frames: u64,
}

impl Default for HeightSweep {
    fn default() -> Self {
        Self { heights: vec![50.0, 55.0, 60.0, 65.0, 70.0], frames: 100 }
    }
}

impl HeightSweep {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.heights.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidParameter(format!("height {h} must be positive")));
        }
        Ok(())
    }
}

/// One scenario per camera height: the base trajectory flown at that height.
/// Heights that push a tracked lamp out of view produce a skipped scenario
/// carrying a warning.
pub fn run_height_sweep(
    base: &SceneConfig,
    config: &PipelineConfig,
    sweep: &HeightSweep,
    with_baseline: bool,
) -> Result<ExperimentReport> {
    sweep.validate()?;
    let ids = config.lamps.map(|l| l.id);
    let options = RunOptions { frames: Some(sweep.frames), with_baseline };
    let mut scenarios = Vec::new();
    for &h in &sweep.heights {
        let name = format!("height_{:03}", h.round() as i64);
        let mut scene = base.clone();
        for w in &mut scene.trajectory.waypoints {
            w.z = h;
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("camera_z_cm".into(), json!(h));
        match height_problem(&scene, &ids, sweep.frames) {
            Ok(None) => {}
            Ok(Some(w)) | Err(w) => {
                scenarios.push(ScenarioReport::skipped(&name, metadata, w));
                continue;
            }
        }
        let sampler = move |_: &GroundTruth| ids.to_vec();
        match run_paired(&name, &scene, config, options, &sampler) {
            Ok(mut report) => {
                report.metadata.extend(metadata);
                scenarios.push(report);
            }
            Err(e) => scenarios.push(ScenarioReport::skipped(&name, metadata, format!("failed: {e}"))),
        }
    }
    Ok(ExperimentReport::new("height", scenarios))
}

/// Why a height cannot be run, if it cannot.
fn height_problem(scene: &SceneConfig, ids: &[u32], frames: u64) -> std::result::Result<Option<String>, String> {
    scene.validate().map_err(|e| e.to_string())?;
    let count = frames.min(scene.frame_count());
    for k in 0..count {
        let t = scene.frame_time(k);
        let camera = scene.trajectory.position(t).map_err(|e| e.to_string())?;
        for &id in ids {
            let lamp = scene.lamp(id).expect("validated config");
            let proj = crate::scene_sim::project_lamp(lamp, camera, &scene.intrinsics).map_err(|e| e.to_string())?;
            let inside = proj.is_some_and(|p| {
                let i = &scene.intrinsics;
                let r = p.radius_px;
                p.centroid.u - r >= 0.0
                    && p.centroid.v - r >= 0.0
                    && p.centroid.u + r <= i.width as f64 - 1.0
                    && p.centroid.v + r <= i.height as f64 - 1.0
            });
            if !inside {
                return Ok(Some(format!("lamp {id} leaves the frame at frame {k} (camera z {} cm)", camera.z)));
            }
        }
    }
    Ok(None)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn status_name(s: FixStatus) -> &'static str {
    match s {
        FixStatus::Fix => "Fix",
        FixStatus::Acquiring => "Acquiring",
        FixStatus::Degraded => "Degraded",
    }
}

fn cdf_csv(samples: &[f64]) -> String {
    let mut out = String::from("x,F\n");
    if let Ok(cdf) = EmpiricalCdf::new(samples) {
        for (x, f) in cdf.table() {
            writeln!(out, "{x:.6},{f:.6}").unwrap();
        }
    }
    out
}

/// Writes `summary.json`, `errors.csv`, `cdf_<method>_<metric>.csv` and
/// `timing.csv` for one scenario.
pub fn emit_report(report: &ScenarioReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&json!({
        "name": report.name,
        "metadata": report.metadata,
        "warning": report.warning,
        "methods": report.methods,
        "summaries": report.summaries,
        "timing": report.timing,
    }))? + "\n")?;

    let ids: Vec<u64> = report.metadata["lamps"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_u64()).collect())
        .unwrap_or_default();
    let mut errors = String::from("frame,t");
    for m in &report.methods {
        write!(errors, ",{m}_status,{m}_positioning_cm").unwrap();
        for id in &ids {
            write!(errors, ",{m}_tracking_cm_lamp{id},{m}_offset_px_lamp{id}").unwrap();
        }
    }
    errors.push('\n');
    let mut timing = String::from("frame,method,proc_ms\n");
    for row in &report.rows {
        write!(errors, "{},{:.6}", row.frame, row.t).unwrap();
        for (name, mf) in report.methods.iter().zip(&row.methods) {
            write!(errors, ",{},{}", status_name(mf.status), fmt_opt(mf.positioning_cm)).unwrap();
            for k in 0..ids.len().min(2) {
                write!(errors, ",{},{}", fmt_opt(mf.tracking_cm[k]), fmt_opt(mf.offset_px[k])).unwrap();
            }
            writeln!(timing, "{},{name},{:.6}", row.frame, mf.proc_ms).unwrap();
        }
        errors.push('\n');
    }
    fs::write(out_dir.join("errors.csv"), errors)?;
    fs::write(out_dir.join("timing.csv"), timing)?;

    for method in &report.methods {
        for metric in Metric::ALL {
            let samples = report.samples(method, metric);
            if !samples.is_empty() {
                fs::write(out_dir.join(format!("cdf_{method}_{}.csv", metric.name())), cdf_csv(&samples))?;
            }
        }
    }
    Ok(())
}

/// One row per scenario and method.
pub fn comparison_table(report: &ExperimentReport) -> String {
    let mut out = String::from("scenario,method,status,frames,fixes,mean_proc_ms,p90_tracking_cm,p90_positioning_cm,mean_iterations\n");
    for s in &report.scenarios {
        if let Some(w) = &s.warning {
            writeln!(out, "{},,skipped: {},0,0,,,,", s.name, w.replace(',', ";")).unwrap();
            continue;
        }
        for method in &s.methods {
            let frames = s.frames(method);
            let fixes = frames.iter().filter(|f| f.status == FixStatus::Fix).count();
            let iters: Vec<f64> = frames.iter().filter_map(|f| f.iterations).collect();
            let mean_iters = (!iters.is_empty()).then(|| iters.iter().sum::<f64>() / iters.len() as f64);
            writeln!(
                out,
                "{},{method},ok,{},{fixes},{},{},{},{}",
                s.name,
                frames.len(),
                fmt_opt(s.timing(method).map(|t| t.mean_ms)),
                fmt_opt(s.summary(method, Metric::TrackingCm).map(|m| m.p90)),
                fmt_opt(s.summary(method, Metric::PositioningCm).map(|m| m.p90)),
                fmt_opt(mean_iters),
            )
            .unwrap();
        }
    }
    out
}

/// Writes each scenario into its own subdirectory, the comparison table, and
/// CDFs pooled over all scenarios.
pub fn emit_experiment(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    for s in &report.scenarios {
        emit_report(s, &out_dir.join(&s.name))?;
    }
    fs::write(out_dir.join("comparison.csv"), comparison_table(report))?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&json!({
        "name": report.name,
        "scenarios": report.scenarios.iter().map(|s| &s.name).collect::<Vec<_>>(),
        "aggregate": report.aggregate,
    }))? + "\n")?;
    for method in [PIPELINE, BASELINE] {
        for metric in Metric::ALL {
            let pooled = pooled_samples(&report.scenarios, method, metric);
            if !pooled.is_empty() {
                fs::write(out_dir.join(format!("cdf_{method}_{}.csv", metric.name())), cdf_csv(&pooled))?;
            }
        }
    }
    Ok(())
}

/// p90 of a sample set, or `None` when empty.
pub fn p90(samples: &[f64]) -> Option<f64> {
    percentile(samples, 0.9).ok()
}
