//! Checkpoint decoder: must reject corrupt files with an error, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Write;

fuzz_target!(|data: &[u8]| {
    let mut file = tempfile::NamedTempFile::new().expect("temp file");
    file.write_all(data).expect("write fuzz input");
    let _ = pcql::algorithms::load_checkpoint(file.path());
});
