#![no_main]

use libfuzzer_sys::fuzz_target;
use vlp_core::config::ConfigFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = ConfigFile::parse(text) {
        let scene = file.scene().expect("parsed config yields a scene");
        file.pipeline().expect("parsed config yields a pipeline");
        // render only small frames so a run stays fast
        if scene.intrinsics.width as u64 * scene.intrinsics.height as u64 <= 1 << 16 && scene.frame_count() > 0 {
            let _ = scene.render_index(0);
        }
    }
});
