#![no_main]

use libfuzzer_sys::fuzz_target;
use vlp_core::detector::{decode_led_id, detect_blobs, stripe_period, DetectorParams, LampIdTable};
use vlp_core::scene_sim::Frame;

// First byte picks the frame width; the rest is the raster, row-major.
fuzz_target!(|data: &[u8]| {
    let Some((&w, raster)) = data.split_first() else { return };
    let width = (w as usize % 64) + 1;
    let height = raster.len() / width;
    if height == 0 {
        return;
    }
    let frame = Frame::new(width as u32, height as u32, raster[..width * height].to_vec()).unwrap();
    let table = LampIdTable::from_periods([(16, 1), (24, 2), (32, 3)]).unwrap();
    let params = DetectorParams { min_blob_pixels: 4, ..DetectorParams::default() };
    for blob in detect_blobs(&frame, params.threshold, params.min_blob_pixels) {
        let _ = decode_led_id(&frame, &blob, &table, &params);
    }
    let profile: Vec<f64> = raster.iter().map(|&b| b as f64).collect();
    if let Some(p) = stripe_period(&profile, 0.0) {
        assert!(p.is_finite() && p > 0.0);
    }
});
