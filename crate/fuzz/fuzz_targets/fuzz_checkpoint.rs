//! Checkpoint decoder: arbitrary bytes must either fail cleanly or decode to
//! parameters whose encoding is a fixpoint (the embedded config JSON admits
//! cosmetic variation, so the input itself need not be canonical).

#![no_main]

use cdslice::model::checkpoint::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_checkpoint(data) {
        let encoded = encode_checkpoint(&params);
        let again = decode_checkpoint(&encoded).expect("canonical checkpoints re-decode");
        assert_eq!(
            encode_checkpoint(&again),
            encoded,
            "re-encoding must reach a fixpoint after one decode"
        );
    }
});
