#![no_main]

use ehl_core::config::parse_config;
use ehl_core::Error;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    match parse_config(text) {
        Ok(cfg) => {
            // A valid config must yield a usable time axis.
            let times = cfg.output_times();
            assert!(times.windows(2).all(|w| w[1] > w[0]));
        }
        Err(Error::Config { line, .. }) => assert!(line >= 1 && line <= text.lines().count().max(1)),
        Err(other) => panic!("parse_config returned a non-config error: {other}"),
    }
});
