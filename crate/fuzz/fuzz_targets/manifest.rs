#![no_main]

use libfuzzer_sys::fuzz_target;
use phunet::data::dataset::DatasetManifest;
use phunet_cli::RunManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = DatasetManifest::from_json(text) {
        let again = DatasetManifest::from_json(&m.to_json().expect("serializes")).expect("reparses");
        assert_eq!(again, m);
    }
    let _ = serde_json::from_str::<RunManifest>(text);
});
