#![no_main]

use libfuzzer_sys::fuzz_target;
use vlp_core::io::read_jsonl;
use vlp_core::scene_sim::GroundTruth;

fuzz_target!(|data: &[u8]| {
    let _ = read_jsonl::<GroundTruth>(data);
});
