#![no_main]

use libfuzzer_sys::fuzz_target;
use vlp_core::io::{read_jsonl, write_jsonl};
use vlp_core::pipeline::PositionFix;

fuzz_target!(|data: &[u8]| {
    if let Ok(fixes) = read_jsonl::<PositionFix>(data) {
        let mut out = Vec::new();
        write_jsonl(&mut out, &fixes).expect("fixes serialize");
        let back: Vec<PositionFix> = read_jsonl(out.as_slice()).expect("written fixes parse");
        assert_eq!(back.len(), fixes.len());
    }
});
