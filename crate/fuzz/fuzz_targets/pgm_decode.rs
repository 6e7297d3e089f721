#![no_main]

use libfuzzer_sys::fuzz_target;
use vlp_core::io::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = decode_pgm(data) {
        // anything accepted must survive a re-encode
        let again = decode_pgm(&encode_pgm(&frame)).expect("re-encoded frame decodes");
        assert_eq!(again.pixels, frame.pixels);
    }
});
