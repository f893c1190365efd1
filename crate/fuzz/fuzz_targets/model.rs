#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| hybrid_icd_fuzz::fuzz_model(data));
