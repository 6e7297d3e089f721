use std::fs;

use vlp_core::config::ConfigFile;
use vlp_core::geometry::positioning_error_3d;
use vlp_core::io::{frame_file_name, list_frames, read_jsonl, read_pgm, write_jsonl, write_pgm};
use vlp_core::pipeline::{FixStatus, Pipeline, PipelineConfig, PositionFix};
use vlp_core::scene_sim::{Frame, GroundTruth, SceneConfig};

fn short_config() -> ConfigFile {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/short.json");
    ConfigFile::load(std::path::Path::new(path)).unwrap()
}

#[test]
fn noisy_run_positions_within_a_centimetre() {
    let scene = SceneConfig::reference();
    let mut pipeline = Pipeline::new(PipelineConfig::from_scene(&scene, [1, 2]).unwrap()).unwrap();
    for k in 0..60 {
        let (frame, truth) = scene.render_index(k).unwrap();
        let fix = pipeline.process_frame(&frame);
        assert_eq!(fix.status, FixStatus::Fix, "frame {k}");
        let err = positioning_error_3d(fix.position(190.0).unwrap(), truth.terminal_position);
        assert!(err < 1.0, "frame {k}: {err} cm");
    }
}

#[test]
fn frames_on_disk_track_like_frames_in_memory() {
    let file = short_config();
    let scene = file.scene().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut rendered: Vec<Frame> = Vec::new();
    let mut truths: Vec<GroundTruth> = Vec::new();
    for k in 0..20 {
        let (frame, truth) = scene.render_index(k).unwrap();
        write_pgm(&dir.path().join(frame_file_name(k)), &frame).unwrap();
        rendered.push(frame);
        truths.push(truth);
    }
    let loaded: Vec<Frame> = list_frames(dir.path())
        .unwrap()
        .into_iter()
        .map(|(k, p)| read_pgm(&p, k, scene.fps).unwrap())
        .collect();
    assert_eq!(loaded.len(), 20);
    for (a, b) in loaded.iter().zip(&rendered) {
        assert_eq!((a.index, a.pixels.as_slice()), (b.index, b.pixels.as_slice()));
        assert!((a.timestamp - b.timestamp).abs() < 1e-12);
    }

    let config = file.pipeline().unwrap();
    let strip = |v: Vec<PositionFix>| v.iter().map(PositionFix::without_timing).collect::<Vec<_>>();
    let from_disk = strip(Pipeline::new(config.clone()).unwrap().run(&loaded));
    let in_memory = strip(Pipeline::new(config).unwrap().run(&rendered));
    assert_eq!(from_disk, in_memory);

    let path = dir.path().join("fixes.jsonl");
    write_jsonl(fs::File::create(&path).unwrap(), &from_disk).unwrap();
    let back: Vec<PositionFix> = read_jsonl(fs::read(&path).unwrap().as_slice()).unwrap();
    assert_eq!(back, from_disk);
}

#[test]
fn config_file_roundtrips_through_disk() {
    let file = short_config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, file.to_json_pretty()).unwrap();
    let again = ConfigFile::load(&path).unwrap();
    assert_eq!(again, file);
    assert_eq!(again.scene().unwrap().frame_count(), 92);
}
