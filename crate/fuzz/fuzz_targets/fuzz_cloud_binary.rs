//! Binary cloud decoder: arbitrary bytes must either fail cleanly or decode
//! to a cloud that re-encodes to exactly the input. The format is canonical
//! (one byte stream per cloud), so accepted input IS the canonical encoding.

#![no_main]

use cdslice::geometry::formats::{decode_cloud_binary, encode_cloud_binary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = decode_cloud_binary(data, "fuzz") {
        assert_eq!(
            encode_cloud_binary(&cloud),
            data,
            "accepted binary clouds must re-encode byte-identically"
        );
    }
});
