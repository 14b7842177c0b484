//! Feature-file decoding. Anything that decodes must re-encode to the same bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use oal_core::ingest::{decode_features, decode_features_prefix, encode_features};

fuzz_target!(|data: &[u8]| {
    if let Ok(matrix) = decode_features(data) {
        assert_eq!(encode_features(&matrix), data);
    }
    if let Ok((matrix, used)) = decode_features_prefix(data) {
        assert!(used <= data.len());
        assert_eq!(matrix.data().len(), matrix.dim() * matrix.rows());
    }
});
