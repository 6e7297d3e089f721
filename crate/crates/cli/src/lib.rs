//! Subcommands behind the `vlp` binary. Each `cmd_*` function does the work
//! of one subcommand and returns a summary for the binary to print.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use vlp_core::bench::{
    comparison_table, emit_experiment, emit_report, run_height_sweep, run_occlusion_sweep, run_paired, score_fixes,
    ExperimentReport, HeightSweep, Metric, OcclusionSweep, RunOptions, ScenarioReport, PIPELINE,
};
use vlp_core::config::ConfigFile;
use vlp_core::io::{frame_file_name, list_frames, read_jsonl, read_pgm, write_jsonl, write_pgm};
use vlp_core::pipeline::{FixStatus, Pipeline, PositionFix};
use vlp_core::scene_sim::GroundTruth;

pub const RESOLVED_CONFIG: &str = "config.json";
pub const GROUND_TRUTH: &str = "groundtruth.jsonl";
pub const FIXES: &str = "fixes.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    /// A failure tied to one input or output file.
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: vlp_core::Error },
    #[error(transparent)]
    Core(#[from] vlp_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} scenarios failed")]
    ScenarioFailures { failed: usize, total: usize },
}

impl CliError {
    fn file(path: &Path, source: impl Into<vlp_core::Error>) -> Self {
        Self::File { path: path.to_path_buf(), source: source.into() }
    }

    fn core(&self) -> Option<&vlp_core::Error> {
        match self {
            Self::File { source, .. } | Self::Core(source) => Some(source),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        use vlp_core::Error as E;
        match (self, self.core()) {
            (Self::Usage(_), _) => "usage",
            (Self::ScenarioFailures { .. }, _) => "scenario",
            (_, Some(E::Config { .. } | E::Json(_))) => "config",
            (_, Some(E::Pgm(_))) => "frame",
            (_, Some(E::Io(_))) => "io",
            _ => "runtime",
        }
    }

    /// The error as one line of JSON.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let Self::File { path, .. } = self {
            v["file"] = json!(path.display().to_string());
        }
        if let Some(vlp_core::Error::Config { path, .. }) = self.core() {
            v["key"] = json!(path);
        }
        v.to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Loads and validates a config file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ConfigFile> {
    let mut config = ConfigFile::load(path).map_err(|e| CliError::file(path, e))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub frames: u64,
    pub out: PathBuf,
}

/// Renders every frame of the configured scene into `out` as PGM files, with
/// the ground truth and the resolved config alongside.
pub fn cmd_simulate(config: &ConfigFile, out: &Path, progress: &dyn Fn(&str)) -> Result<SimulateSummary> {
    let scene = config.scene()?;
    fs::create_dir_all(out).map_err(|e| CliError::file(out, e))?;
    let resolved = out.join(RESOLVED_CONFIG);
    fs::write(&resolved, config.to_json_pretty() + "\n").map_err(|e| CliError::file(&resolved, e))?;
    let truth_path = out.join(GROUND_TRUTH);
    let mut truth_file = BufWriter::new(File::create(&truth_path).map_err(|e| CliError::file(&truth_path, e))?);
    let count = scene.frame_count();
    for k in 0..count {
        let (frame, truth) = scene.render_index(k)?;
        let path = out.join(frame_file_name(k));
        write_pgm(&path, &frame).map_err(|e| CliError::file(&path, e))?;
        write_jsonl(&mut truth_file, [&truth]).map_err(|e| CliError::file(&truth_path, e))?;
        if (k + 1) % 50 == 0 {
            progress(&format!("rendered {}/{count} frames", k + 1));
        }
    }
    truth_file.flush().map_err(|e| CliError::file(&truth_path, e))?;
    Ok(SimulateSummary { frames: count, out: out.to_path_buf() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSummary {
    pub frames: usize,
    pub fix: usize,
    pub acquiring: usize,
    pub degraded: usize,
    pub mean_proc_ms: f64,
    pub fixes: PathBuf,
}

/// Config for a frames directory: the explicit path, else the copy that
/// `simulate` left in the directory.
pub fn resolve_track_config(frames_dir: &Path, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let p = frames_dir.join(RESOLVED_CONFIG);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!("no --config given and no {RESOLVED_CONFIG} in {}", frames_dir.display())))
    }
}

/// Runs the tracker over `frame_NNNNNN.pgm` files in index order and writes
/// one fix per frame to `out/fixes.jsonl`. Fixes written before a bad frame
/// stay on disk.
pub fn cmd_track(frames_dir: &Path, config: &ConfigFile, out: &Path) -> Result<TrackSummary> {
    let pipeline_config = config.pipeline()?;
    let frames = list_frames(frames_dir).map_err(|e| CliError::file(frames_dir, e))?;
    if frames.is_empty() {
        return Err(CliError::Usage(format!("no frame_NNNNNN.pgm files in {}", frames_dir.display())));
    }
    fs::create_dir_all(out).map_err(|e| CliError::file(out, e))?;
    let fixes_path = out.join(FIXES);
    let mut fixes_file = BufWriter::new(File::create(&fixes_path).map_err(|e| CliError::file(&fixes_path, e))?);
    let (width, height) = (config.camera.width, config.camera.height);
    let mut pipeline = Pipeline::new(pipeline_config)?;
    let mut counts = [0usize; 3];
    let mut total_ms = 0.0;
    for (index, path) in &frames {
        let frame = match read_pgm(path, *index, config.fps) {
            Ok(f) if (f.width, f.height) == (width, height) => f,
            Ok(f) => {
                let msg = format!("frame is {}x{}, camera is {width}x{height}", f.width, f.height);
                return Err(CliError::file(path, vlp_core::Error::Pgm(msg)));
            }
            Err(e) => return Err(CliError::file(path, e)),
        };
        let fix = pipeline.process_frame(&frame);
        counts[match fix.status {
            FixStatus::Fix => 0,
            FixStatus::Acquiring => 1,
            FixStatus::Degraded => 2,
        }] += 1;
        total_ms += fix.proc_ms;
        write_jsonl(&mut fixes_file, [&fix]).map_err(|e| CliError::file(&fixes_path, e))?;
    }
    fixes_file.flush().map_err(|e| CliError::file(&fixes_path, e))?;
    Ok(TrackSummary {
        frames: frames.len(),
        fix: counts[0],
        acquiring: counts[1],
        degraded: counts[2],
        mean_proc_ms: total_ms / frames.len() as f64,
        fixes: fixes_path,
    })
}

/// What `bench` runs. Absent sections are not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub schema_version: u32,
    /// Also run the full-frame baseline on every scenario.
    #[serde(default = "yes")]
    pub baseline: bool,
    #[serde(default)]
    pub reference: Option<ReferenceRun>,
    #[serde(default)]
    pub occlusion: Option<OcclusionSweep>,
    #[serde(default)]
    pub height: Option<HeightSweep>,
}

fn yes() -> bool {
    true
}

/// The configured scene as is, over its first `frames` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRun {
    #[serde(default)]
    pub frames: Option<u64>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            schema_version: 1,
            baseline: true,
            reference: Some(ReferenceRun { frames: Some(200) }),
            occlusion: Some(OcclusionSweep::default()),
            height: Some(HeightSweep::default()),
        }
    }
}

impl BenchSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| CliError::file(path, e))?;
        spec.validate().map_err(|e| CliError::file(path, e))?;
        Ok(spec)
    }

    pub fn validate(&self) -> vlp_core::Result<()> {
        if self.schema_version != 1 {
            return Err(vlp_core::Error::Config {
                path: "schema_version".into(),
                message: format!("unsupported schema version {}, expected 1", self.schema_version),
            });
        }
        if let Some(o) = &self.occlusion {
            o.validate()?;
        }
        if let Some(h) = &self.height {
            h.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub scenarios: usize,
    pub skipped: usize,
    pub comparison: PathBuf,
}

/// Runs the requested experiments. Each lands in `out/<experiment>/` with one
/// subdirectory per scenario; `out/comparison.csv` covers all of them. A
/// scenario that fails is recorded in the table and the rest still run.
pub fn cmd_bench(config: &ConfigFile, spec: &BenchSpec, out: &Path, progress: &dyn Fn(&str)) -> Result<BenchSummary> {
    spec.validate()?;
    let scene = config.scene()?;
    let pipeline = config.pipeline()?;
    let mut experiments = Vec::new();
    if let Some(r) = &spec.reference {
        progress("reference run");
        let options = RunOptions { frames: r.frames, with_baseline: spec.baseline };
        let ids = pipeline.lamps.map(|l| l.id).to_vec();
        let scenario = run_paired("reference", &scene, &pipeline, options, &move |_: &GroundTruth| ids.clone())
            .unwrap_or_else(|e| ScenarioReport::skipped("reference", Default::default(), format!("failed: {e}")));
        experiments.push(ExperimentReport::new("reference", vec![scenario]));
    }
    if let Some(o) = &spec.occlusion {
        progress("occlusion sweep");
        experiments.push(run_occlusion_sweep(&scene, &pipeline, o, spec.baseline)?);
    }
    if let Some(h) = &spec.height {
        progress("height sweep");
        experiments.push(run_height_sweep(&scene, &pipeline, h, spec.baseline)?);
    }
    fs::create_dir_all(out).map_err(|e| CliError::file(out, e))?;
    let mut all = Vec::new();
    for e in &experiments {
        let dir = out.join(&e.name);
        emit_experiment(e, &dir).map_err(|err| CliError::file(&dir, err))?;
        for s in &e.scenarios {
            let mut s = s.clone();
            s.name = format!("{}/{}", e.name, s.name);
            all.push(s);
        }
    }
    let comparison = out.join("comparison.csv");
    fs::write(&comparison, comparison_table(&ExperimentReport::new("bench", all.clone())))
        .map_err(|e| CliError::file(&comparison, e))?;
    let failed = all.iter().filter(|s| s.warning.as_deref().is_some_and(|w| w.starts_with("failed"))).count();
    if failed > 0 {
        return Err(CliError::ScenarioFailures { failed, total: all.len() });
    }
    Ok(BenchSummary {
        scenarios: all.len(),
        skipped: all.iter().filter(|s| s.warning.is_some()).count(),
        comparison,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub frames: usize,
    pub p90_tracking_cm: Option<f64>,
    pub p90_positioning_cm: Option<f64>,
    pub mean_proc_ms: Option<f64>,
    pub out: PathBuf,
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::file(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| CliError::file(path, e))
}

/// Scores `fixes.jsonl` in `run_dir` against its `groundtruth.jsonl` and
/// writes the report files to `out`.
pub fn cmd_report(run_dir: &Path, config: &ConfigFile, out: &Path) -> Result<ReportSummary> {
    let scene = config.scene()?;
    let ids = config.pipeline()?.lamps.map(|l| l.id);
    let truths: Vec<GroundTruth> = read_records(&run_dir.join(GROUND_TRUTH))?;
    let fixes: Vec<PositionFix> = read_records(&run_dir.join(FIXES))?;
    let report = score_fixes("track", &scene, ids, &fixes, &truths)?;
    emit_report(&report, out).map_err(|e| CliError::file(out, e))?;
    Ok(ReportSummary {
        frames: fixes.len(),
        p90_tracking_cm: report.summary(PIPELINE, Metric::TrackingCm).map(|s| s.p90),
        p90_positioning_cm: report.summary(PIPELINE, Metric::PositioningCm).map(|s| s.p90),
        mean_proc_ms: report.timing(PIPELINE).map(|t| t.mean_ms),
        out: out.to_path_buf(),
    })
}
