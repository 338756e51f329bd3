//! Evaluation report decoder: must return Ok or Err, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Write;

fuzz_target!(|data: &[u8]| {
    let mut file = tempfile::NamedTempFile::new().expect("temp file");
    file.write_all(data).expect("write fuzz input");
    let _ = pcql::eval::read_report_json(file.path());
});
