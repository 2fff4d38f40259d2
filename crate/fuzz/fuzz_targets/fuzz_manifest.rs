//! Manifest parser: arbitrary text must either fail cleanly or produce a
//! table whose rows satisfy every documented guarantee — unique ids, finite
//! labels, and a three-way split that partitions the rows.

#![no_main]

use std::collections::HashSet;
use std::path::Path;

use cdslice::dataio::{parse_manifest, Split};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(manifest) = parse_manifest(text, Path::new("fuzz_base")) {
        let mut ids = HashSet::new();
        for row in manifest.rows() {
            assert!(!row.id.is_empty(), "ids are non-empty");
            assert!(!row.path.is_empty(), "paths are non-empty");
            assert!(row.cd.is_finite(), "labels are finite");
            assert!(ids.insert(row.id.clone()), "ids are unique");
        }
        let partitioned = [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .map(|s| manifest.split_rows(s).count())
            .sum::<usize>();
        assert_eq!(partitioned, manifest.rows().len(), "splits partition the rows");
    }
});
