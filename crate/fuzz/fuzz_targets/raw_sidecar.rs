#![no_main]

use libfuzzer_sys::fuzz_target;
use phunet::data::raw;

// Input: sidecar JSON, a newline, then the payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == b'\n').unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let payload = data.get(split + 1..).unwrap_or_default();
    if let Ok(side) = raw::decode_sidecar(text) {
        if let Ok(v) = raw::decode(&side, payload) {
            assert_eq!(raw::encode(&v), payload);
        }
    }
});
