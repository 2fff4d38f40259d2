//! Slice-cache decoder: arbitrary bytes must either fail cleanly or decode
//! to an internally consistent tensor that re-encodes to exactly the input
//! (the mask-padding rule makes the encoding canonical).

#![no_main]

use cdslice::geometry::formats::{decode_slice_cache, encode_slice_cache};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensor) = decode_slice_cache(data) {
        tensor.validate().expect("decoded tensors are internally consistent");
        assert_eq!(
            encode_slice_cache(&tensor),
            data,
            "accepted cache files must re-encode byte-identically"
        );
    }
});
