//! Checkpoint parsing: a JSON header line followed by one feature block per tensor.

#![no_main]

use libfuzzer_sys::fuzz_target;
use oal_core::network::{read_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok((params, seed)) = read_checkpoint(data) {
        let mut out = Vec::new();
        write_checkpoint(&params, seed, &mut out).unwrap();
        let (again, seed_again) = read_checkpoint(&out).unwrap();
        assert_eq!(seed, seed_again);
        let bits = |p: &oal_core::network::ClassifierParams| -> Vec<u64> {
            p.tensors.iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&again), bits(&params));
    }
});
