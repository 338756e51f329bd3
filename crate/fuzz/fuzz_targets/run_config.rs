//! Run-configuration file parser: must return Ok or Err, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pcql::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::parse(text) {
            // a successfully parsed config must survive a dump/parse round trip
            let dumped = config.dump();
            RunConfig::parse(&dumped).expect("dumped config must re-parse");
        }
    }
});
