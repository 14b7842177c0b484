//! Manifest JSONL parsing and binding against a small feature block.

#![no_main]

use libfuzzer_sys::fuzz_target;
use oal_core::ingest::{bind_samples, parse_manifest, render_manifest, FeatureMatrix};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(records) = parse_manifest(text) else {
        return;
    };
    // Rendering what was parsed must parse back to the same records.
    assert_eq!(parse_manifest(&render_manifest(&records)).ok().as_ref(), Some(&records));
    let features = FeatureMatrix::new(2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let _ = bind_samples(records, &features);
});
