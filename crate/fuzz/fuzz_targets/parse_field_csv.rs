#![no_main]

use ehl_core::snapshot::read_field_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(field) = read_field_csv(text) {
        // Whatever parses must write back and parse to the same field.
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let again = read_field_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, field);
    }
});
