//! Text cloud parser: arbitrary bytes must either fail cleanly or produce a
//! cloud whose canonical rendering parses back to the identical cloud.

#![no_main]

use cdslice::geometry::formats::{parse_cloud_text, render_cloud_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cloud) = parse_cloud_text(text, "fuzz") {
        let rendered = render_cloud_text(&cloud);
        let again = parse_cloud_text(&rendered, "fuzz").expect("canonical text re-parses");
        assert_eq!(again, cloud, "text round trip must be lossless");
    }
});
